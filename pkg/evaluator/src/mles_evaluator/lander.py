"""Discrete-action lunar-landing environment (built-in backend).

A desk-scale port of the classic Box2D landing task: identical constants,
terrain generation, engine impulse model, sprung-leg suspension, observation
encoding, and reward shaping, over the solver in :mod:`physics2d`. The Gym
suite is not installable in this sandbox, so this module stands in behind
the same numbers; the protocol handshake reports it as the backend.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from mles_evaluator.physics2d import (
    Body,
    ContactPoint,
    HeightField,
    RevoluteJoint,
    World,
    polygon_properties,
)

FPS = 50
SCALE = 30.0
MAIN_ENGINE_POWER = 13.0
SIDE_ENGINE_POWER = 0.6
INITIAL_RANDOM = 1000.0
LANDER_POLY = [(-14, 17), (-17, 0), (-17, -10), (17, -10), (17, 0), (14, 17)]
LEG_AWAY = 20
LEG_DOWN = 18
LEG_W = 2
LEG_H = 8
LEG_SPRING_TORQUE = 40.0
SIDE_ENGINE_HEIGHT = 14.0
SIDE_ENGINE_AWAY = 12.0
VIEWPORT_W = 600
VIEWPORT_H = 400
CHUNKS = 11

W = VIEWPORT_W / SCALE
H = VIEWPORT_H / SCALE

HULL_DENSITY = 5.0
LEG_DENSITY = 1.0
HULL_FRICTION = 0.1
LEG_FRICTION = 0.2


def _hull_body(x: float, y: float) -> Body:
    verts = [(vx / SCALE, vy / SCALE) for vx, vy in LANDER_POLY]
    _, centroid, mass, inertia = polygon_properties(verts, HULL_DENSITY)
    return Body(mass=mass, inertia=inertia, position=[x, y], local_com=centroid)


def _leg_body(x: float, y: float, i: int) -> Body:
    half_w, half_h = LEG_W / SCALE, LEG_H / SCALE
    area = (2 * half_w) * (2 * half_h)
    mass = area * LEG_DENSITY
    inertia = mass * ((2 * half_w) ** 2 + (2 * half_h) ** 2) / 12.0
    return Body(
        mass=mass,
        inertia=inertia,
        position=[x - i * LEG_AWAY / SCALE, y],
        angle=i * 0.05,
    )


@dataclass
class LanderStepInfo:
    m_power: float
    s_power: float
    leg_contact: tuple[bool, bool]
    awake: bool
    game_over: bool


@dataclass
class LunarLander:
    """reset(seed) / step(action) with the published reward rules."""

    rng: np.random.Generator = field(default_factory=np.random.default_rng)
    world: World | None = None
    terrain: HeightField | None = None
    helipad_y: float = H / 4
    helipad_x1: float = 0.0
    helipad_x2: float = 0.0
    prev_shaping: float | None = None
    game_over: bool = False
    steps: int = 0
    main_engine_frames: int = 0
    side_engine_frames: int = 0

    ACTIONS = 4

    def reset(self, seed: int) -> list[float]:
        self.rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence(seed)))
        height = self.rng.uniform(0, H / 2, size=(CHUNKS + 1,))
        chunk_x = [W / (CHUNKS - 1) * i for i in range(CHUNKS)]
        self.helipad_x1 = chunk_x[CHUNKS // 2 - 1]
        self.helipad_x2 = chunk_x[CHUNKS // 2 + 1]
        self.helipad_y = H / 4
        for k in range(CHUNKS // 2 - 2, CHUNKS // 2 + 3):
            height[k] = self.helipad_y
        smooth_y = [
            0.33 * (height[i - 1] + height[i + 0] + height[i + 1]) for i in range(CHUNKS)
        ]
        self.terrain = HeightField(chunk_x, smooth_y)

        hull = _hull_body(W / 2, H)
        legs = {i: _leg_body(W / 2, H, i) for i in (-1, +1)}
        joints = []
        for i in (-1, +1):
            if i == -1:
                lower, upper = +0.9 - 0.5, +0.9
            else:
                lower, upper = -0.9, -0.9 + 0.5
            joints.append(
                RevoluteJoint(
                    body_a=hull,
                    body_b=legs[i],
                    anchor_a=(0.0, 0.0),
                    anchor_b=(i * LEG_AWAY / SCALE, LEG_DOWN / SCALE),
                    reference=i * 0.05,
                    lower=lower,
                    upper=upper,
                    motor_speed=+0.3 * i,
                    max_motor_torque=LEG_SPRING_TORQUE,
                )
            )
        contacts = [
            ContactPoint(body=hull, local=(vx / SCALE, vy / SCALE),
                         friction=HULL_FRICTION, tag="hull")
            for vx, vy in LANDER_POLY
        ]
        half_w, half_h = LEG_W / SCALE, LEG_H / SCALE
        for i, name in ((-1, "leg_right"), (+1, "leg_left")):
            for sx, sy in ((-1, -1), (1, -1), (1, 1), (-1, 1)):
                contacts.append(
                    ContactPoint(
                        body=legs[i],
                        local=(sx * half_w, sy * half_h),
                        friction=LEG_FRICTION,
                        tag=name,
                    )
                )
        self._hull = hull
        self._legs = legs
        self.world = World([hull, legs[-1], legs[+1]], joints, contacts, self.terrain)
        self.game_over = False
        self.prev_shaping = None
        self.steps = 0
        self.main_engine_frames = 0
        self.side_engine_frames = 0

        hull.apply_force_to_center(
            (
                self.rng.uniform(-INITIAL_RANDOM, INITIAL_RANDOM),
                self.rng.uniform(-INITIAL_RANDOM, INITIAL_RANDOM),
            )
        )
        state, _, _, _ = self.step(0, _bootstrap=True)
        return state

    @property
    def body(self) -> Body:
        return self._hull

    def _observation(self, leg_contact: tuple[bool, bool]) -> list[float]:
        hull = self._hull
        pos_x, pos_y = hull.position
        vel_x, vel_y = hull.velocity
        return [
            (pos_x - W / 2) / (W / 2),
            (pos_y - (self.helipad_y + LEG_DOWN / SCALE)) / (H / 2),
            vel_x * (W / 2) / FPS,
            vel_y * (H / 2) / FPS,
            hull.angle,
            20.0 * hull.angular_velocity / FPS,
            1.0 if leg_contact[0] else 0.0,
            1.0 if leg_contact[1] else 0.0,
        ]

    def step(self, action: int, _bootstrap: bool = False):
        """Returns (state, reward, terminated, info)."""
        if action not in (0, 1, 2, 3):
            raise ValueError(f"invalid discrete action {action!r}")
        hull = self._hull
        angle = hull.angle
        tip = (math.sin(angle), math.cos(angle))
        side = (-tip[1], tip[0])
        dispersion = [self.rng.uniform(-1.0, +1.0) / SCALE for _ in range(2)]

        m_power = 0.0
        if action == 2 and not _bootstrap:
            m_power = 1.0
            ox = tip[0] * (4 / SCALE + 2 * dispersion[0]) + side[0] * dispersion[1]
            oy = -tip[1] * (4 / SCALE + 2 * dispersion[0]) - side[1] * dispersion[1]
            impulse_pos = (hull.position[0] + ox, hull.position[1] + oy)
            hull.apply_impulse(
                (-ox * MAIN_ENGINE_POWER * m_power, -oy * MAIN_ENGINE_POWER * m_power),
                impulse_pos,
            )
            self.world.wake()
            self.main_engine_frames += 1

        s_power = 0.0
        if action in (1, 3) and not _bootstrap:
            direction = action - 2
            s_power = 1.0
            ox = tip[0] * dispersion[0] + side[0] * (
                3 * dispersion[1] + direction * SIDE_ENGINE_AWAY / SCALE
            )
            oy = -tip[1] * dispersion[0] - side[1] * (
                3 * dispersion[1] + direction * SIDE_ENGINE_AWAY / SCALE
            )
            impulse_pos = (
                hull.position[0] + ox - tip[0] * 17 / SCALE,
                hull.position[1] + oy + tip[1] * SIDE_ENGINE_HEIGHT / SCALE,
            )
            hull.apply_impulse(
                (-ox * SIDE_ENGINE_POWER * s_power, -oy * SIDE_ENGINE_POWER * s_power),
                impulse_pos,
            )
            self.world.wake()
            self.side_engine_frames += 1

        self.world.step(1.0 / FPS)
        self.steps += 1

        left = right = False
        for cp in self.world.contacts:
            if not cp.touching:
                continue
            if cp.tag == "hull":
                self.game_over = True
            elif cp.tag == "leg_left":
                left = True
            elif cp.tag == "leg_right":
                right = True

        # observation order matches the docstring: first leg then second leg
        state = self._observation((right, left))
        reward = 0.0
        shaping = (
            -100 * math.sqrt(state[0] ** 2 + state[1] ** 2)
            - 100 * math.sqrt(state[2] ** 2 + state[3] ** 2)
            - 100 * abs(state[4])
            + 10 * state[6]
            + 10 * state[7]
        )
        if self.prev_shaping is not None:
            reward = shaping - self.prev_shaping
        self.prev_shaping = shaping
        reward -= m_power * 0.30
        reward -= s_power * 0.03

        terminated = False
        if self.game_over or abs(state[0]) >= 1.0:
            terminated = True
            reward = -100.0
        if self.world.asleep:
            terminated = True
            reward = +100.0
        if _bootstrap:
            reward = 0.0
            terminated = False
            self.steps = 0
        info = LanderStepInfo(
            m_power=m_power,
            s_power=s_power,
            leg_contact=(right, left),
            awake=not self.world.asleep,
            game_over=self.game_over,
        )
        return state, reward, terminated, info

    def body_polys(self) -> list[list[tuple[float, float]]]:
        """World-space polygons (hull, then legs) for rendering."""
        hull_poly = [
            self._hull.world_point((vx / SCALE, vy / SCALE)) for vx, vy in LANDER_POLY
        ]
        half_w, half_h = LEG_W / SCALE, LEG_H / SCALE
        legs = [
            [
                self._legs[i].world_point((sx * half_w, sy * half_h))
                for sx, sy in ((-1, -1), (1, -1), (1, 1), (-1, 1))
            ]
            for i in (-1, +1)
        ]
        return [hull_poly] + legs

    def terrain_points(self) -> list[tuple[float, float]]:
        return list(zip(self.terrain.xs, self.terrain.ys))
