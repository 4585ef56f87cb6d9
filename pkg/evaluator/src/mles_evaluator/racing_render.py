"""Renderers for the racing task.

``render_observation`` reproduces the policy-facing 96x96 top-down view:
camera glued to the car, rotated so the velocity vector points up, the
reference zoom schedule (zoomed out during the first second), the exact
road/grass/curb/car colors, and the black indicator strip along the bottom.
``render_trajectory_map`` draws the whole-track behavioral-evidence image:
track outline, driven trajectory, and the camera's visual-field rectangles
at fixed step intervals (denser rectangles mean a slower car).
"""

from __future__ import annotations

import math

import numpy as np
from PIL import Image, ImageDraw

from mles_evaluator.racing_car import Car
from mles_evaluator.racing_track import (
    BG_COLOR,
    GRASS_COLOR,
    PLAYFIELD,
    Track,
)

STATE_W = 96
STATE_H = 96
WINDOW_W = 1000
WINDOW_H = 800
SCALE = 6.0
ZOOM = 2.7
GRASS_DIM = PLAYFIELD / 20.0

_SX = STATE_W / WINDOW_W
_SY = STATE_H / WINDOW_H
_INDICATOR_H = 5 * (WINDOW_H / 40.0) * _SY  # bottom strip rows in the observation


def _camera(car: Car, t: float) -> tuple[float, float, float, float]:
    zoom = 0.1 * SCALE * max(1 - t, 0) + ZOOM * SCALE * min(t, 1)
    angle = -car.angle
    if car.speed > 0.5:
        angle = math.atan2(car.vx, car.vy)
    return zoom, math.cos(angle), math.sin(angle), angle


def _view_transform(car: Car, zoom: float, cos_a: float, sin_a: float):
    px, py = car.x, car.y

    def world_to_obs(p: tuple[float, float]) -> tuple[float, float]:
        dx, dy = p[0] - px, p[1] - py
        rx = cos_a * dx - sin_a * dy
        ry = sin_a * dx + cos_a * dy
        qx = rx * zoom + WINDOW_W / 2
        qy = WINDOW_H - (ry * zoom + WINDOW_H / 4)
        return (qx * _SX, qy * _SY)

    return world_to_obs

def render_observation(track: Track, car: Car, t: float) -> np.ndarray:
    """The 96x96x3 RGB observation for the current car pose."""
    zoom, cos_a, sin_a, _ = _camera(car, t)
    to_obs = _view_transform(car, zoom, cos_a, sin_a)
    img = Image.new("RGB", (STATE_W, STATE_H), BG_COLOR)
    draw = ImageDraw.Draw(img)

    view_radius = (WINDOW_W / 2 + WINDOW_H) / zoom + 3.0

    # brighter grass squares on the standard checker layout (playfield only)
    gx0 = max(-10, int((car.x - view_radius) // (2 * GRASS_DIM)))
    gx1 = min(9, int((car.x + view_radius) // (2 * GRASS_DIM)) + 1)
    gy0 = max(-10, int((car.y - view_radius) // (2 * GRASS_DIM)))
    gy1 = min(9, int((car.y + view_radius) // (2 * GRASS_DIM)) + 1)
    for gx in range(gx0, gx1 + 1):
        for gy in range(gy0, gy1 + 1):
            x0, y0 = 2 * GRASS_DIM * gx, 2 * GRASS_DIM * gy
            quad = [
                (x0, y0),
                (x0 + GRASS_DIM, y0),
                (x0 + GRASS_DIM, y0 + GRASS_DIM),
                (x0, y0 + GRASS_DIM),
            ]
            draw.polygon([to_obs(p) for p in quad], fill=GRASS_COLOR)

    def near(quad) -> bool:
        cx = sum(p[0] for p in quad) / len(quad)
        cy = sum(p[1] for p in quad) / len(quad)
        return (cx - car.x) ** 2 + (cy - car.y) ** 2 <= view_radius * view_radius

    for tile in track.tiles:
        if near(tile.quad):
            draw.polygon([to_obs(p) for p in tile.quad], fill=tile.color)
    for quad, color in zip(track.borders, track.border_colors):
        if near(quad):
            draw.polygon([to_obs(p) for p in quad], fill=color)

    from mles_evaluator.racing_car import HULL_COLOR, WHEEL_COLOR

    for poly in car.wheel_polys_world():
        draw.polygon([to_obs(p) for p in poly], fill=WHEEL_COLOR)
    for poly in car.hull_polys_world():
        draw.polygon([to_obs(p) for p in poly], fill=HULL_COLOR)

    # indicator strip: black band with a white true-speed bar
    strip_top = STATE_H - _INDICATOR_H
    draw.rectangle([0, strip_top, STATE_W, STATE_H], fill=(0, 0, 0))
    bar = min(1.0, 0.02 * car.speed) * (_INDICATOR_H - 2)
    if bar > 0:
        draw.rectangle([6, STATE_H - 1 - bar, 8, STATE_H - 1], fill=(255, 255, 255))

    return np.asarray(img, dtype=np.uint8).copy()


def view_field_corners(x: float, y: float, heading: float, zoom: float) -> list[tuple[float, float]]:
    """World-space corners of the camera's visual field at a trajectory point.

    ``heading`` is the direction of travel in world coordinates; the camera
    shows more road ahead of the car than behind it.
    """
    half_w = (WINDOW_W / 2) / zoom
    ahead_len = (WINDOW_H * 3 / 4) / zoom
    behind_len = (WINDOW_H / 4) / zoom
    ahead = (math.cos(heading), math.sin(heading))
    right = (math.sin(heading), -math.cos(heading))
    corners_cam = [
        (-half_w, -behind_len),
        (half_w, -behind_len),
        (half_w, ahead_len),
        (-half_w, ahead_len),
    ]
    return [
        (x + right[0] * cx + ahead[0] * cy, y + right[1] * cx + ahead[1] * cy)
        for cx, cy in corners_cam
    ]


MAP_SIZE = 600


def render_trajectory_map(
    track: Track,
    trajectory: list[tuple[float, float, float, float]],  # (x, y, heading, speed)
    field_interval: int = 20,
) -> Image.Image:
    """Whole-track map with the driven trajectory and visual-field boxes."""
    img = Image.new("RGB", (MAP_SIZE, MAP_SIZE), (245, 245, 245))
    draw = ImageDraw.Draw(img)
    xs = [p[0] for tile in track.tiles for p in tile.quad]
    ys = [p[1] for tile in track.tiles for p in tile.quad]
    span = max(max(xs) - min(xs), max(ys) - min(ys)) * 1.15 + 1e-9
    cx, cy = (max(xs) + min(xs)) / 2, (max(ys) + min(ys)) / 2
    scale = MAP_SIZE / span

    def to_map(p: tuple[float, float]) -> tuple[float, float]:
        return (
            (p[0] - cx) * scale + MAP_SIZE / 2,
            MAP_SIZE / 2 - (p[1] - cy) * scale,
        )

    for tile in track.tiles:
        draw.polygon([to_map(p) for p in tile.quad], fill=(150, 150, 150))
    if trajectory:
        start = to_map((trajectory[0][0], trajectory[0][1]))
        draw.ellipse([start[0] - 4, start[1] - 4, start[0] + 4, start[1] + 4], fill=(0, 140, 0))
        points = [to_map((p[0], p[1])) for p in trajectory]
        if len(points) >= 2:
            draw.line(points, fill=(200, 30, 30), width=2)
        zoom = ZOOM * SCALE
        indices = list(range(0, len(trajectory), max(1, field_interval)))
        if indices and indices[-1] != len(trajectory) - 1:
            indices.append(len(trajectory) - 1)
        for i in indices:
            x, y, heading, _speed = trajectory[i]
            corners = view_field_corners(x, y, math.cos(heading), math.sin(heading), zoom)
            draw.polygon([to_map(p) for p in corners], outline=(40, 60, 200))
    return img
