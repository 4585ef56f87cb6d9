"""Evolutionary operator registry, prompt rendering, and response parsing.

Each operator owns a prompt template stored as a resource file. Rendering
instantiates the template verbatim (fixed text preserved character for
character), splices task and parent material into the placeholders, and
attaches behavioral-evidence images immediately after the text that
introduces them. Parsing extracts the marker-delimited sections the
templates demand: thought in ``{...}``, analysis in ``[...]``, execution
description in ``'...'``, code in a fenced block.
"""

from __future__ import annotations

import re
from dataclasses import dataclass
from importlib import resources

from mles.artifacts import ArtifactStore
from mles.errors import (
    ArityMismatch,
    MissingCode,
    MissingIBE,
    MissingSection,
    MissingThought,
)
from mles.model import IBEArtifactRef, PolicyIndividual
from mles.tasks import TaskSpec

IBE_NONE = "none"
IBE_IMAGE = "image"
IBE_TEXT = "text"


@dataclass(frozen=True)
class Operator:
    """Identity and prompt behavior of one evolutionary operator."""

    name: str
    arity: int | None  # None: takes the configured number of parents (m)
    uses_ibe: str
    instructs_analysis: bool
    two_stage: bool
    template: str  # resource basename under templates/

    def effective_arity(self, m: int) -> int:
        return m if self.arity is None else self.arity

    @property
    def wants_sections(self) -> bool:
        """Whether responses must carry description and analysis sections."""
        return self.instructs_analysis


REGISTRY: dict[str, Operator] = {
    op.name: op
    for op in (
        Operator("E1", None, IBE_NONE, False, False, "e1"),
        Operator("E2", None, IBE_NONE, False, False, "e2"),
        Operator("M1", 1, IBE_NONE, False, False, "m1"),
        Operator("M1_M", 1, IBE_IMAGE, True, False, "m1_m"),
        Operator("M1_M_NOINSTR", 1, IBE_IMAGE, False, False, "m1_m_noinstr"),
        Operator("M1_T", 1, IBE_TEXT, True, False, "m1_m"),
        Operator("M1_M_TWOSTAGE", 1, IBE_IMAGE, True, True, "m1_m"),
        Operator("M2_M", 1, IBE_IMAGE, True, False, "m2_m"),
    )
}

DEFAULT_OPERATORS = ("E1", "E2", "M1_M", "M2_M")


def get_operator(name: str) -> Operator:
    try:
        return REGISTRY[name]
    except KeyError:
        raise KeyError(f"unknown operator {name!r}; known: {sorted(REGISTRY)}") from None


# prompt bundles ---------------------------------------------------------------

@dataclass(frozen=True)
class TextSegment:
    text: str


@dataclass(frozen=True)
class ImageSegment:
    ref: IBEArtifactRef


Segment = TextSegment | ImageSegment


@dataclass(frozen=True)
class PromptBundle:
    segments: tuple[Segment, ...]
    operator: Operator

    def __post_init__(self) -> None:
        if not self.segments:
            raise ValueError("bundle has no segments")
        if not isinstance(self.segments[0], TextSegment):
            raise ValueError("first segment must be the task-role preamble text")
        if self.has_images and self.operator.uses_ibe != IBE_IMAGE:
            raise ValueError(
                f"operator {self.operator.name} does not carry image evidence"
            )

    @property
    def has_images(self) -> bool:
        return any(isinstance(s, ImageSegment) for s in self.segments)

    @property
    def image_refs(self) -> tuple[IBEArtifactRef, ...]:
        return tuple(s.ref for s in self.segments if isinstance(s, ImageSegment))

    @property
    def text(self) -> str:
        """Concatenated text with a stable placeholder where images sit."""
        parts = []
        for seg in self.segments:
            if isinstance(seg, TextSegment):
                parts.append(seg.text)
            else:
                parts.append(f"<image {seg.ref.content_ref}>")
        return "".join(parts)


def load_template(name: str) -> str:
    return (
        resources.files("mles")
        .joinpath("templates", f"{name}.txt")
        .read_text(encoding="utf-8")
    )


def _render_parent_block(index: int, parent: PolicyIndividual) -> str:
    block = load_template("parent_block")
    return (
        block.replace("{{index}}", str(index))
        .replace("{{thought}}", parent.thought)
        .replace("{{code}}", parent.code)
    )


def render_prompt(
    op: Operator,
    task: TaskSpec,
    parents: list[PolicyIndividual],
    ibe_selection: list[IBEArtifactRef],
    *,
    m: int | None = None,
    store: ArtifactStore | None = None,
    ibe_descriptions: list[str] | None = None,
) -> PromptBundle:
    """Instantiate the operator's template into a multimodal prompt bundle.

    Args:
        op: operator whose template to render.
        task: supplies description, code template, entry point.
        parents: exactly ``op.effective_arity(m)`` individuals.
        ibe_selection: evidence refs; required iff the operator uses IBE.
        m: configured parent count for multi-parent operators.
        store: artifact store, required to inline text-trace evidence.
        ibe_descriptions: stage-one text standing in for images (two-stage
            operators only); when given, images are not attached.
    """
    expected = op.effective_arity(m if m is not None else len(parents))
    if len(parents) != expected:
        raise ArityMismatch(f"{op.name} needs {expected} parents, got {len(parents)}")
    if op.uses_ibe != IBE_NONE and not ibe_selection:
        raise MissingIBE(f"{op.name} requires behavioral evidence")
    if op.uses_ibe == IBE_NONE and ibe_selection:
        raise ValueError(f"{op.name} does not take behavioral evidence")

    text = load_template(op.template)
    text = text.replace("{{task_description}}", task.task_description)
    text = text.replace("{{parent_count}}", str(len(parents)))
    text = text.replace("{{code_template}}", task.code_template)
    if "{{parents}}" in text:
        blocks = "".join(
            _render_parent_block(i + 1, p) for i, p in enumerate(parents)
        )
        text = text.replace("{{parents}}", blocks)
    if "{{thought}}" in text:
        text = text.replace("{{thought}}", parents[0].thought)
        text = text.replace("{{code}}", parents[0].code)

    segments: list[Segment] = []
    if "{{ibe}}" in text:
        before, after = text.split("{{ibe}}", 1)
        if op.two_stage and ibe_descriptions is not None:
            inline = "\n".join(ibe_descriptions)
            segments.append(TextSegment(before + inline + after))
        elif op.uses_ibe == IBE_TEXT:
            if store is None:
                raise ValueError("text-trace evidence requires the artifact store")
            traces = [store.load_text(ref.content_ref) for ref in ibe_selection]
            inline = "\n".join(traces)
            segments.append(TextSegment(before + inline + after))
        else:
            segments.append(TextSegment(before))
            for ref in ibe_selection:
                if not ref.is_image:
                    raise ValueError(f"{op.name} expects image evidence, got {ref.kind}")
                segments.append(ImageSegment(ref))
            segments.append(TextSegment(after))
    else:
        segments.append(TextSegment(text))
    return PromptBundle(segments=tuple(segments), operator=op)


def render_describe_prompt(task: TaskSpec, image_ref: IBEArtifactRef, op: Operator) -> PromptBundle:
    """Stage-one prompt asking the model to describe one evidence image."""
    text = load_template("describe").replace("{{task_description}}", task.task_description)
    before, after = text.split("{{ibe}}", 1)
    return PromptBundle(
        segments=(TextSegment(before), ImageSegment(image_ref), TextSegment(after)),
        operator=op,
    )


def stage_one_describe(
    gateway,
    op: Operator,
    task: TaskSpec,
    image_refs: list[IBEArtifactRef],
    budget,
) -> list[str]:
    """First stage of a two-stage operator: describe each evidence image.

    Issues one dedicated LLM call per image (each consumes one query from
    the budget) and returns the description texts, which ``render_prompt``
    then embeds in place of the images for the text-only second stage.
    """
    if not image_refs:
        raise MissingIBE("two-stage operator invoked without evidence images")
    descriptions = []
    for ref in image_refs:
        bundle = render_describe_prompt(task, ref, op)
        result = gateway.generate(bundle, 1, budget)[0]
        if isinstance(result, Exception):
            raise result
        descriptions.append(result)
    return descriptions


# response parsing -------------------------------------------------------------

@dataclass(frozen=True)
class ParsedCandidate:
    thought: str
    code: str
    raw: str
    description: str | None = None
    analysis: str | None = None


_TICKS = "```"


def _fence_spans(raw: str) -> list[tuple[int, int]]:
    """Character spans of fenced code regions (unclosed fence runs to EOF).

    Fences may open mid-line; an opening fence pairs with the next one.
    """
    positions = [m.start() for m in re.finditer(re.escape(_TICKS), raw)]
    spans = []
    for i in range(0, len(positions), 2):
        start = positions[i]
        end = positions[i + 1] + len(_TICKS) if i + 1 < len(positions) else len(raw)
        spans.append((start, end))
    return spans


def _outside(pos: int, spans: list[tuple[int, int]]) -> bool:
    return all(not (a <= pos < b) for a, b in spans)


def _balanced_span(raw: str, open_ch: str, close_ch: str, spans: list[tuple[int, int]]) -> str | None:
    depth = 0
    start = -1
    for i, ch in enumerate(raw):
        if not _outside(i, spans):
            continue
        if ch == open_ch:
            if depth == 0:
                start = i
            depth += 1
        elif ch == close_ch and depth > 0:
            depth -= 1
            if depth == 0:
                return raw[start + 1 : i]
    return None


def _quoted_span(raw: str, spans: list[tuple[int, int]]) -> str | None:
    start = -1
    for i, ch in enumerate(raw):
        if ch != "'" or not _outside(i, spans):
            continue
        if start < 0:
            start = i
        else:
            return raw[start + 1 : i]
    return None


def _fenced_blocks(raw: str) -> list[str]:
    blocks = []
    for a, b in _fence_spans(raw):
        inner_start = a + len(_TICKS)
        inner_end = b
        if b - len(_TICKS) >= inner_start and raw[b - len(_TICKS) : b] == _TICKS:
            inner_end = b - len(_TICKS)
        body = raw[inner_start:inner_end]
        # drop a language tag sitting on the opening line
        first_nl = body.find("\n")
        head = body if first_nl < 0 else body[:first_nl]
        if first_nl >= 0 and re.fullmatch(r"[A-Za-z0-9_+-]*[ \t]*", head):
            body = body[first_nl + 1 :]
        blocks.append(body.strip("\n"))
    return blocks


def extract_code_region(text: str, entry_point: str) -> str | None:
    """Longest contiguous code region starting at the entry-point def line.

    The region extends from the definition line through every following line
    that is blank, indented, or a top-level continuation a Python module
    would accept around a function (imports, decorators, comments).
    """
    lines = text.split("\n")
    pattern = re.compile(r"^[ \t]*def[ \t]+" + re.escape(entry_point) + r"[ \t]*\(")
    start = None
    for i, line in enumerate(lines):
        if pattern.match(line):
            start = i
            break
    if start is None:
        return None
    # include leading import/decorator lines directly above the def
    lead = start
    while lead > 0 and re.match(r"^(import\s|from\s|@)", lines[lead - 1].strip() or "#"):
        if not lines[lead - 1].strip():
            break
        lead -= 1
    end = start + 1
    last_code = start
    while end < len(lines):
        line = lines[end]
        if not line.strip():
            end += 1
            continue
        if line[0] in (" ", "\t"):
            last_code = end
            end += 1
            continue
        if re.match(r"^(import\s|from\s|@|#|def\s|return\b)", line):
            last_code = end
            end += 1
            continue
        break
    return "\n".join(lines[lead : last_code + 1]).strip("\n")


def parse_response(op: Operator, raw: str, *, entry_point: str) -> ParsedCandidate:
    """Extract the operator's required sections from a raw LLM response.

    Extraction is order-insensitive with respect to surrounding prose;
    marker scans skip fenced code regions so braces or brackets inside code
    never masquerade as sections.

    Raises:
        MissingThought: no braced span outside code fences.
        MissingCode: no code fence and no entry-point definition.
        MissingSection: a demanded description/analysis section is absent.
    """
    if not raw or not raw.strip():
        raise MissingCode("empty response")
    spans = _fence_spans(raw)

    thought = _balanced_span(raw, "{", "}", spans)
    if thought is None or not thought.strip():
        raise MissingThought("no braced thought span in response")
    thought = thought.strip()

    code = None
    blocks = _fenced_blocks(raw)
    if blocks:
        named = [b for b in blocks if re.search(r"\bdef[ \t]+" + re.escape(entry_point) + r"[ \t]*\(", b)]
        code = named[0] if named else blocks[0]
    else:
        code = extract_code_region(raw, entry_point)
    if code is None or not code.strip():
        raise MissingCode(f"no code fence and no {entry_point!r} definition in response")

    description = None
    analysis = None
    if op.wants_sections:
        description = _quoted_span(raw, spans)
        if description is None or not description.strip():
            raise MissingSection("description")
        description = description.strip()
        analysis = _balanced_span(raw, "[", "]", spans)
        if analysis is None or not analysis.strip():
            raise MissingSection("analysis")
        analysis = analysis.strip()

    return ParsedCandidate(
        thought=thought, code=code, raw=raw, description=description, analysis=analysis
    )
