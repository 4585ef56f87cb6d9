"""Top-down car dynamics (built-in backend).

Port of the reference racing car's force model: per-wheel engine/brake
wheel-speed integration, slip forces capped by a road/grass friction limit,
and front-wheel steering driven at a rate-limited joint speed. The four
wheels ride as force points on a single rigid hull (their masses are folded
into the hull's inertia), which preserves the original's handling scale
while avoiding a full multi-body solve per step.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

from mles_evaluator.physics2d import polygon_properties

SIZE = 0.02
ENGINE_POWER = 100000000 * SIZE * SIZE
WHEEL_MOMENT_OF_INERTIA = 4000 * SIZE * SIZE
FRICTION_LIMIT = 1000000 * SIZE * SIZE
WHEEL_R = 27
WHEEL_W = 14
WHEELPOS = [(-55, +80), (+55, +80), (-55, -82), (+55, -82)]
HULL_POLY1 = [(-60, +130), (+60, +130), (+60, +110), (-60, +110)]
HULL_POLY2 = [(-15, +120), (+15, +120), (+20, +20), (-20, 20)]
HULL_POLY3 = [
    (+25, +20), (+50, -10), (+50, -40), (+20, -90),
    (-20, -90), (-50, -40), (-50, -10), (-25, +20),
]
HULL_POLY4 = [(-50, -120), (+50, -120), (+50, -90), (-50, -90)]
STEER_LIMIT = 0.4
SLIP_COEF = 205000 * SIZE * SIZE
BRAKE_FORCE = 15  # wheel radians per second

HULL_COLOR = (204, 0, 0)
WHEEL_COLOR = (0, 0, 0)


def _mass_properties():
    mass = 0.0
    inertia = 0.0
    mx = my = 0.0
    for poly in (HULL_POLY1, HULL_POLY2, HULL_POLY3, HULL_POLY4):
        verts = [(x * SIZE, y * SIZE) for x, y in poly]
        _, (cx, cy), m, i_com = polygon_properties(verts, density=1.0)
        mass += m
        mx += cx * m
        my += cy * m
        inertia += i_com + m * (cx * cx + cy * cy)
    # wheels as point masses at their mounts (reference wheel density 0.1)
    wheel_area = (2 * WHEEL_W * SIZE) * (2 * WHEEL_R * SIZE)
    wheel_mass = wheel_area * 0.1
    for wx, wy in WHEELPOS:
        px, py = wx * SIZE, wy * SIZE
        mass += wheel_mass
        mx += px * wheel_mass
        my += py * wheel_mass
        inertia += wheel_mass * (px * px + py * py)
    com = (mx / mass, my / mass)
    inertia_com = inertia - mass * (com[0] ** 2 + com[1] ** 2)
    return mass, inertia_com, com


MASS, INERTIA, COM = _mass_properties()


@dataclass
class Wheel:
    local: tuple[float, float]  # mount point, hull frame
    front: bool
    gas: float = 0.0
    brake: float = 0.0
    steer_target: float = 0.0
    steer_angle: float = 0.0
    omega: float = 0.0
    phase: float = 0.0
    on_grass: bool = True
    wheel_rad: float = WHEEL_R * SIZE


@dataclass
class Car:
    x: float
    y: float
    angle: float
    vx: float = 0.0
    vy: float = 0.0
    omega: float = 0.0
    wheels: list[Wheel] = field(default_factory=list)
    fuel_spent: float = 0.0

    def __post_init__(self) -> None:
        if not self.wheels:
            self.wheels = [
                Wheel(local=(wx * SIZE, wy * SIZE), front=(wy > 0))
                for wx, wy in WHEELPOS
            ]

    # control -----------------------------------------------------------------
    def gas(self, value: float) -> None:
        value = min(1.0, max(0.0, value))
        for w in self.wheels[2:4]:
            diff = value - w.gas
            if diff > 0.1:
                diff = 0.1
            w.gas += diff

    def brake(self, value: float) -> None:
        for w in self.wheels:
            w.brake = value

    def steer(self, value: float) -> None:
        value = min(STEER_LIMIT, max(-STEER_LIMIT, value))
        for w in self.wheels[:2]:
            w.steer_target = value

    # kinematics ----------------------------------------------------------------
    def _rot(self) -> tuple[float, float]:
        return math.cos(self.angle), math.sin(self.angle)

    def world_point(self, local: tuple[float, float]) -> tuple[float, float]:
        c, s = self._rot()
        return (
            self.x + c * local[0] - s * local[1],
            self.y + s * local[0] + c * local[1],
        )

    def com_world(self) -> tuple[float, float]:
        return self.world_point(COM)

    def velocity_at(self, world: tuple[float, float]) -> tuple[float, float]:
        cx, cy = self.com_world()
        rx, ry = world[0] - cx, world[1] - cy
        return (self.vx - self.omega * ry, self.vy + self.omega * rx)

    @property
    def speed(self) -> float:
        return math.hypot(self.vx, self.vy)

    def step(self, dt: float, grass_check) -> None:
        """Advance one frame; grass_check(x, y) -> True when off the road."""
        c, s = self._rot()
        total_fx = total_fy = total_torque = 0.0
        comx, comy = self.com_world()

        for w in self.wheels:
            # rate-limited steering toward the commanded angle
            if w.front:
                diff = w.steer_target - w.steer_angle
                direction = math.copysign(1.0, diff) if diff else 0.0
                rate = min(50.0 * abs(diff), 3.0)
                max_step = rate * dt
                w.steer_angle += direction * min(abs(diff), max_step)

            wp = self.world_point(w.local)
            w.on_grass = grass_check(wp[0], wp[1])
            friction_limit = FRICTION_LIMIT * (0.6 if w.on_grass else 1.0)

            wheel_heading = self.angle + w.steer_angle
            fc, fs = math.cos(wheel_heading), math.sin(wheel_heading)
            forw = (-fs, fc)  # wheel-local +y axis in world frame
            side = (fc, fs)
            v = self.velocity_at(wp)
            vf = forw[0] * v[0] + forw[1] * v[1]
            vs = side[0] * v[0] + side[1] * v[1]

            w.omega += dt * ENGINE_POWER * w.gas / WHEEL_MOMENT_OF_INERTIA / (abs(w.omega) + 5.0)
            self.fuel_spent += dt * ENGINE_POWER * w.gas

            if w.brake >= 0.9:
                w.omega = 0.0
            elif w.brake > 0:
                direction = -math.copysign(1.0, w.omega) if w.omega else 0.0
                val = BRAKE_FORCE * w.brake
                if abs(val) > abs(w.omega):
                    val = abs(w.omega)
                w.omega += direction * val
            w.phase += w.omega * dt

            vr = w.omega * w.wheel_rad
            f_force = (-vf + vr) * SLIP_COEF
            p_force = -vs * SLIP_COEF
            force = math.sqrt(f_force * f_force + p_force * p_force)
            if force > friction_limit:
                f_force *= friction_limit / force
                p_force *= friction_limit / force
            w.omega -= dt * f_force * w.wheel_rad / WHEEL_MOMENT_OF_INERTIA

            fx = p_force * side[0] + f_force * forw[0]
            fy = p_force * side[1] + f_force * forw[1]
            total_fx += fx
            total_fy += fy
            rx, ry = wp[0] - comx, wp[1] - comy
            total_torque += rx * fy - ry * fx

        self.vx += total_fx / MASS * dt
        self.vy += total_fy / MASS * dt
        self.omega += total_torque / INERTIA * dt
        comx += self.vx * dt
        comy += self.vy * dt
        self.angle += self.omega * dt
        c, s = self._rot()
        self.x = comx - (c * COM[0] - s * COM[1])
        self.y = comy - (s * COM[0] + c * COM[1])

    # rendering helpers ----------------------------------------------------------
    def hull_polys_world(self) -> list[list[tuple[float, float]]]:
        out = []
        for poly in (HULL_POLY1, HULL_POLY2, HULL_POLY3, HULL_POLY4):
            out.append([self.world_point((x * SIZE, y * SIZE)) for x, y in poly])
        return out

    def wheel_polys_world(self) -> list[list[tuple[float, float]]]:
        out = []
        for w in self.wheels:
            heading = w.steer_angle if w.front else 0.0
            hc, hs = math.cos(heading), math.sin(heading)
            corners = []
            for sx, sy in ((-1, -1), (1, -1), (1, 1), (-1, 1)):
                lx, ly = sx * WHEEL_W * SIZE, sy * WHEEL_R * SIZE
                rx = hc * lx - hs * ly + w.local[0]
                ry = hs * lx + hc * ly + w.local[1]
                corners.append(self.world_point((rx, ry)))
            out.append(corners)
        return out
