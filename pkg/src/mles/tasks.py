"""Task specifications: description text, code template, entry point, action space.

The two built-in control tasks load their description and code-template text
from versioned resources; the stub task exists so the engine can run end to
end without any environment backend installed.
"""

from __future__ import annotations

from dataclasses import dataclass
from importlib import resources

from mles.model import count_entry_point_defs


@dataclass(frozen=True)
class ActionSpace:
    kind: str  # "discrete" | "continuous"
    size: int  # action count (discrete) or dimension (continuous)
    low: tuple[float, ...] = ()
    high: tuple[float, ...] = ()


@dataclass(frozen=True)
class TaskSpec:
    task_name: str
    task_description: str
    code_template: str
    entry_point: str
    action_space: ActionSpace
    train_instances: tuple[str, ...]
    ibe_image_kind: str  # which image-valued evidence this task produces
    failure_score: float

    def __post_init__(self) -> None:
        if count_entry_point_defs(self.code_template, self.entry_point) != 1:
            raise ValueError(
                f"code template must define {self.entry_point!r} exactly once"
            )


def _resource(task: str, name: str) -> str:
    return (
        resources.files("mles")
        .joinpath("templates", "tasks", task, name)
        .read_text(encoding="utf-8")
    )


def _lunar_lander() -> TaskSpec:
    return TaskSpec(
        task_name="lunar_lander",
        task_description=_resource("lunar_lander", "description.txt").strip(),
        code_template=_resource("lunar_lander", "code_template.py"),
        entry_point="choose_action",
        action_space=ActionSpace(kind="discrete", size=4),
        # Five representative training instances, fixed once for all runs.
        train_instances=("1001", "1002", "1003", "1004", "1005"),
        ibe_image_kind="frame_stack_image",
        failure_score=-1.0,
    )


def _car_racing() -> TaskSpec:
    return TaskSpec(
        task_name="car_racing",
        task_description=_resource("car_racing", "description.txt").strip(),
        code_template=_resource("car_racing", "code_template.py"),
        entry_point="choose_action",
        action_space=ActionSpace(
            kind="continuous", size=3, low=(-1.0, 0.0, 0.0), high=(1.0, 1.0, 1.0)
        ),
        # Four representative training tracks, fixed once for all runs.
        train_instances=("2001", "2002", "2003", "2004"),
        ibe_image_kind="trajectory_map_image",
        failure_score=0.0,
    )


def _stub_task() -> TaskSpec:
    # Lander-shaped metrics so NWS aggregation applies end to end.
    return TaskSpec(
        task_name="stub",
        task_description="Design a heuristic scoring function for the stub benchmark.",
        code_template=_resource("lunar_lander", "code_template.py"),
        entry_point="choose_action",
        action_space=ActionSpace(kind="discrete", size=4),
        train_instances=("s1", "s2", "s3", "s4", "s5"),
        ibe_image_kind="frame_stack_image",
        failure_score=-1.0,
    )


_BUILTIN = {
    "lunar_lander": _lunar_lander,
    "car_racing": _car_racing,
    "stub": _stub_task,
}


def get_task(name: str) -> TaskSpec:
    try:
        return _BUILTIN[name]()
    except KeyError:
        raise KeyError(f"unknown task {name!r}; known: {sorted(_BUILTIN)}") from None
