"""Minimal 2D rigid-body physics for the lander backend.

A hull body and two sprung legs, coupled by revolute joints with motors and
hard angle limits, against a static piecewise-linear height field. The
solver is velocity-level sequential impulses with accumulated clamping,
Coulomb friction, zero restitution, Baumgarte position bias, and Box2D's
sleep rule (the landing-bonus signal). Constants follow Box2D defaults.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

GRAVITY = -10.0
VELOCITY_ITERATIONS = 300  # stiff hull/leg mass ratio needs depth; loop exits early
CONVERGENCE_EPS = 1e-10
BAUMGARTE = 0.2
LINEAR_SLOP = 0.005
ANGULAR_SLOP = 2.0 / 180.0 * math.pi
SLEEP_TIME = 0.5
LINEAR_SLEEP_TOL = 0.01
ANGULAR_SLEEP_TOL = 2.0 / 180.0 * math.pi
MAX_BIAS_VELOCITY = 4.0


def polygon_properties(vertices: list[tuple[float, float]], density: float):
    """Area, centroid, mass, and inertia about the centroid of a polygon."""
    area2 = 0.0
    cx = cy = 0.0
    inertia = 0.0
    n = len(vertices)
    for i in range(n):
        x0, y0 = vertices[i]
        x1, y1 = vertices[(i + 1) % n]
        cross = x0 * y1 - x1 * y0
        area2 += cross
        cx += (x0 + x1) * cross
        cy += (y0 + y1) * cross
        inertia += cross * (x0 * x0 + x0 * x1 + x1 * x1 + y0 * y0 + y0 * y1 + y1 * y1)
    area = area2 / 2.0
    cx /= 6.0 * area
    cy /= 6.0 * area
    mass = density * abs(area)
    inertia_origin = density * abs(inertia) / 12.0
    inertia_com = inertia_origin - mass * (cx * cx + cy * cy)
    return abs(area), (cx, cy), mass, inertia_com


@dataclass
class Body:
    """Rigid body; ``position`` is the body origin, velocities live at the COM."""

    mass: float
    inertia: float
    position: list[float]
    angle: float = 0.0
    local_com: tuple[float, float] = (0.0, 0.0)
    velocity: list[float] = field(default_factory=lambda: [0.0, 0.0])
    angular_velocity: float = 0.0
    pending_force: list[float] = field(default_factory=lambda: [0.0, 0.0])

    @property
    def inv_mass(self) -> float:
        return 1.0 / self.mass

    @property
    def inv_inertia(self) -> float:
        return 1.0 / self.inertia

    def rot(self) -> tuple[float, float]:
        return math.cos(self.angle), math.sin(self.angle)

    def world_point(self, local: tuple[float, float]) -> tuple[float, float]:
        c, s = self.rot()
        x, y = local
        return (self.position[0] + c * x - s * y, self.position[1] + s * x + c * y)

    def com_world(self) -> tuple[float, float]:
        return self.world_point(self.local_com)

    def velocity_at(self, world: tuple[float, float]) -> tuple[float, float]:
        cx, cy = self.com_world()
        rx, ry = world[0] - cx, world[1] - cy
        return (
            self.velocity[0] - self.angular_velocity * ry,
            self.velocity[1] + self.angular_velocity * rx,
        )

    def apply_impulse(self, impulse: tuple[float, float], world: tuple[float, float]) -> None:
        cx, cy = self.com_world()
        self.velocity[0] += impulse[0] * self.inv_mass
        self.velocity[1] += impulse[1] * self.inv_mass
        rx, ry = world[0] - cx, world[1] - cy
        self.angular_velocity += (rx * impulse[1] - ry * impulse[0]) * self.inv_inertia

    def apply_angular_impulse(self, impulse: float) -> None:
        self.angular_velocity += impulse * self.inv_inertia

    def apply_force_to_center(self, force: tuple[float, float]) -> None:
        self.pending_force[0] += force[0]
        self.pending_force[1] += force[1]

    def integrate(self, dt: float) -> None:
        comx, comy = self.com_world()
        comx += self.velocity[0] * dt
        comy += self.velocity[1] * dt
        self.angle += self.angular_velocity * dt
        c, s = self.rot()
        lx, ly = self.local_com
        self.position[0] = comx - (c * lx - s * ly)
        self.position[1] = comy - (s * lx + c * ly)


@dataclass
class RevoluteJoint:
    """Point coincidence constraint plus an angular motor and hard limits."""

    body_a: Body
    body_b: Body
    anchor_a: tuple[float, float]
    anchor_b: tuple[float, float]
    reference: float = 0.0
    lower: float = 0.0
    upper: float = 0.0
    motor_speed: float = 0.0
    max_motor_torque: float = 0.0
    _motor_impulse: float = 0.0
    _limit_impulse: float = 0.0
    _point_impulse: tuple[float, float] = (0.0, 0.0)

    @property
    def angle(self) -> float:
        return self.body_b.angle - self.body_a.angle - self.reference

    def prepare(self, dt: float):
        """Warm start: re-apply last step's impulses so iteration refines them."""
        self._dt = dt
        a, b = self.body_a, self.body_b
        theta = self.angle
        at_limit = theta <= self.lower + ANGULAR_SLOP or theta >= self.upper - ANGULAR_SLOP
        if not at_limit:
            self._limit_impulse = 0.0
        angular = self._motor_impulse + self._limit_impulse
        if angular:
            a.apply_angular_impulse(-angular)
            b.apply_angular_impulse(angular)
        px, py = self._point_impulse
        if px or py:
            pa = a.world_point(self.anchor_a)
            pb = b.world_point(self.anchor_b)
            a.apply_impulse((-px, -py), pa)
            b.apply_impulse((px, py), pb)

    def solve(self) -> float:
        a, b = self.body_a, self.body_b
        inv_ang_mass = a.inv_inertia + b.inv_inertia
        applied = 0.0

        # motor: drive relative angular velocity, torque-capped
        rel_omega = b.angular_velocity - a.angular_velocity
        lam = -(rel_omega - self.motor_speed) / inv_ang_mass
        cap = self.max_motor_torque * self._dt
        total = max(-cap, min(cap, self._motor_impulse + lam))
        lam = total - self._motor_impulse
        self._motor_impulse = total
        a.apply_angular_impulse(-lam)
        b.apply_angular_impulse(lam)
        applied = max(applied, abs(lam))

        # hard limits (one-sided impulses with position bias)
        theta = self.angle
        if theta <= self.lower + ANGULAR_SLOP:
            c_err = theta - self.lower
            rel_omega = b.angular_velocity - a.angular_velocity
            bias = BAUMGARTE / self._dt * min(0.0, c_err + ANGULAR_SLOP)
            lam = -(rel_omega + bias) / inv_ang_mass
            total = max(0.0, self._limit_impulse + lam)
            lam = total - self._limit_impulse
            self._limit_impulse = total
            a.apply_angular_impulse(-lam)
            b.apply_angular_impulse(lam)
            applied = max(applied, abs(lam))
        elif theta >= self.upper - ANGULAR_SLOP:
            c_err = theta - self.upper
            rel_omega = b.angular_velocity - a.angular_velocity
            bias = BAUMGARTE / self._dt * max(0.0, c_err - ANGULAR_SLOP)
            lam = -(rel_omega + bias) / inv_ang_mass
            total = min(0.0, self._limit_impulse + lam)
            lam = total - self._limit_impulse
            self._limit_impulse = total
            a.apply_angular_impulse(-lam)
            b.apply_angular_impulse(lam)
            applied = max(applied, abs(lam))
        else:
            self._limit_impulse = 0.0

        # point coincidence, solved as a 2x2 block
        pa = a.world_point(self.anchor_a)
        pb = b.world_point(self.anchor_b)
        ca = a.com_world()
        cb = b.com_world()
        rax, ray = pa[0] - ca[0], pa[1] - ca[1]
        rbx, rby = pb[0] - cb[0], pb[1] - cb[1]
        va = a.velocity_at(pa)
        vb = b.velocity_at(pb)
        bias_scale = BAUMGARTE / self._dt
        bx = min(MAX_BIAS_VELOCITY, max(-MAX_BIAS_VELOCITY, bias_scale * (pb[0] - pa[0])))
        by = min(MAX_BIAS_VELOCITY, max(-MAX_BIAS_VELOCITY, bias_scale * (pb[1] - pa[1])))
        cdx = vb[0] - va[0] + bx
        cdy = vb[1] - va[1] + by
        k11 = a.inv_mass + b.inv_mass + a.inv_inertia * ray * ray + b.inv_inertia * rby * rby
        k12 = -a.inv_inertia * rax * ray - b.inv_inertia * rbx * rby
        k22 = a.inv_mass + b.inv_mass + a.inv_inertia * rax * rax + b.inv_inertia * rbx * rbx
        det = k11 * k22 - k12 * k12
        if abs(det) < 1e-12:
            return applied
        ix = -(k22 * cdx - k12 * cdy) / det
        iy = -(k11 * cdy - k12 * cdx) / det
        a.apply_impulse((-ix, -iy), pa)
        b.apply_impulse((ix, iy), pb)
        self._point_impulse = (self._point_impulse[0] + ix, self._point_impulse[1] + iy)
        return max(applied, abs(ix), abs(iy))


@dataclass
class ContactPoint:
    """A body-local probe point that can collide with the terrain."""

    body: Body
    local: tuple[float, float]
    friction: float
    tag: str
    touching: bool = False
    normal_impulse: float = 0.0
    tangent_impulse: float = 0.0


class HeightField:
    """Static terrain: piecewise-linear surface y(x), solid below."""

    def __init__(self, xs: list[float], ys: list[float]):
        if len(xs) != len(ys) or len(xs) < 2:
            raise ValueError("need matching x/y lists with at least two points")
        self.xs = list(xs)
        self.ys = list(ys)

    def _segment(self, x: float) -> int:
        xs = self.xs
        if x <= xs[0]:
            return 0
        if x >= xs[-1]:
            return len(xs) - 2
        lo, hi = 0, len(xs) - 1
        while hi - lo > 1:
            mid = (lo + hi) // 2
            if xs[mid] <= x:
                lo = mid
            else:
                hi = mid
        return lo

    def height_at(self, x: float) -> float:
        i = self._segment(x)
        x0, x1 = self.xs[i], self.xs[i + 1]
        t = (x - x0) / (x1 - x0)
        t = min(1.0, max(0.0, t))
        return self.ys[i] + t * (self.ys[i + 1] - self.ys[i])

    def normal_at(self, x: float) -> tuple[float, float]:
        i = self._segment(x)
        dx = self.xs[i + 1] - self.xs[i]
        dy = self.ys[i + 1] - self.ys[i]
        length = math.hypot(dx, dy)
        return (-dy / length, dx / length)


class World:
    """Bodies, joints, and terrain contacts, stepped at a fixed dt."""

    def __init__(self, bodies: list[Body], joints: list[RevoluteJoint],
                 contacts: list[ContactPoint], terrain: HeightField):
        self.bodies = bodies
        self.joints = joints
        self.contacts = contacts
        self.terrain = terrain
        self.sleep_timer = 0.0
        self.asleep = False

    def wake(self) -> None:
        self.asleep = False
        self.sleep_timer = 0.0

    def step(self, dt: float) -> None:
        if self.asleep:
            for body in self.bodies:
                body.pending_force = [0.0, 0.0]
            return
        for body in self.bodies:
            body.velocity[0] += body.pending_force[0] * body.inv_mass * dt
            body.velocity[1] += (GRAVITY + body.pending_force[1] * body.inv_mass) * dt
            body.pending_force = [0.0, 0.0]

        active = []
        for cp in self.contacts:
            wp = cp.body.world_point(cp.local)
            depth = self.terrain.height_at(wp[0]) - wp[1]
            cp.touching = depth > -LINEAR_SLOP
            if not cp.touching:
                cp.normal_impulse = 0.0
                cp.tangent_impulse = 0.0
                continue
            normal = self.terrain.normal_at(wp[0])
            bias = min(
                MAX_BIAS_VELOCITY,
                BAUMGARTE / dt * max(0.0, depth - LINEAR_SLOP),
            )
            if cp.normal_impulse or cp.tangent_impulse:
                # warm start from the previous step's converged impulse
                tangent = (-normal[1], normal[0])
                cp.body.apply_impulse(
                    (
                        normal[0] * cp.normal_impulse + tangent[0] * cp.tangent_impulse,
                        normal[1] * cp.normal_impulse + tangent[1] * cp.tangent_impulse,
                    ),
                    wp,
                )
            active.append((cp, wp, normal, bias))

        for joint in self.joints:
            joint.prepare(dt)

        for _ in range(VELOCITY_ITERATIONS):
            applied = 0.0
            for joint in self.joints:
                applied = max(applied, joint.solve())
            for cp, wp, normal, bias in active:
                body = cp.body
                com = body.com_world()
                rx, ry = wp[0] - com[0], wp[1] - com[1]
                rel = body.velocity_at(wp)
                vn = rel[0] * normal[0] + rel[1] * normal[1]
                rn = rx * normal[1] - ry * normal[0]
                k_normal = body.inv_mass + rn * rn * body.inv_inertia
                lam = -(vn - bias) / k_normal
                total = max(0.0, cp.normal_impulse + lam)
                lam = total - cp.normal_impulse
                cp.normal_impulse = total
                body.apply_impulse((normal[0] * lam, normal[1] * lam), wp)

                tangent = (-normal[1], normal[0])
                rel = body.velocity_at(wp)
                vt = rel[0] * tangent[0] + rel[1] * tangent[1]
                rt = rx * tangent[1] - ry * tangent[0]
                k_tangent = body.inv_mass + rt * rt * body.inv_inertia
                lam_t = -vt / k_tangent
                cap = cp.friction * cp.normal_impulse
                total_t = min(cap, max(-cap, cp.tangent_impulse + lam_t))
                lam_t = total_t - cp.tangent_impulse
                cp.tangent_impulse = total_t
                body.apply_impulse((tangent[0] * lam_t, tangent[1] * lam_t), wp)
                applied = max(applied, abs(lam), abs(lam_t))
            if applied < CONVERGENCE_EPS:
                break

        for body in self.bodies:
            body.integrate(dt)

        quiet = all(
            math.hypot(*b.velocity) < LINEAR_SLEEP_TOL
            and abs(b.angular_velocity) < ANGULAR_SLEEP_TOL
            for b in self.bodies
        )
        if quiet and any(cp.touching for cp in self.contacts):
            self.sleep_timer += dt
            if self.sleep_timer >= SLEEP_TIME:
                self.asleep = True
                for body in self.bodies:
                    body.velocity = [0.0, 0.0]
                    body.angular_velocity = 0.0
        else:
            self.sleep_timer = 0.0
