"""Procedural closed-loop race track generation (built-in backend).

Port of the classic top-down racing task's track builder: twelve noisy
radial checkpoints, a constant-step path walker with a capped turn rate,
loop-closure search, glue check, and quad tiles with red/white borders on
hard turns. Geometry and colors match the reference so image-conditioned
policies see the same scene statistics.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

CHECKPOINTS = 12
SCALE = 6.0
TRACK_RAD = 900 / SCALE
PLAYFIELD = 2000 / SCALE
TRACK_DETAIL_STEP = 21 / SCALE
TRACK_TURN_RATE = 0.31
TRACK_WIDTH = 40 / SCALE
BORDER = 8 / SCALE
BORDER_MIN_COUNT = 4

ROAD_COLOR = (102, 102, 102)
BG_COLOR = (102, 204, 102)
GRASS_COLOR = (102, 230, 102)


@dataclass(frozen=True)
class TrackTile:
    index: int
    quad: tuple[tuple[float, float], ...]
    color: tuple[int, int, int]
    road_friction: float = 1.0


@dataclass(frozen=True)
class Track:
    # (alpha, beta, x, y) per node, as produced by the path walker
    nodes: tuple[tuple[float, float, float, float], ...]
    tiles: tuple[TrackTile, ...]
    borders: tuple[tuple[tuple[float, float], ...], ...]
    border_colors: tuple[tuple[int, int, int], ...]

    @property
    def start_pose(self) -> tuple[float, float, float]:
        beta, x, y = self.nodes[0][1], self.nodes[0][2], self.nodes[0][3]
        return beta, x, y

    def __len__(self) -> int:
        return len(self.tiles)


def generate_track(rng: np.random.Generator, max_attempts: int = 50) -> Track:
    for _ in range(max_attempts):
        track = _try_generate(rng)
        if track is not None:
            return track
    raise RuntimeError("track generation failed repeatedly")


def _try_generate(rng: np.random.Generator) -> Track | None:
    checkpoints = []
    for c in range(CHECKPOINTS):
        noise = rng.uniform(0, 2 * math.pi * 1 / CHECKPOINTS)
        alpha = 2 * math.pi * c / CHECKPOINTS + noise
        rad = rng.uniform(TRACK_RAD / 3, TRACK_RAD)
        if c == 0:
            alpha = 0
            rad = 1.5 * TRACK_RAD
        if c == CHECKPOINTS - 1:
            alpha = 2 * math.pi * c / CHECKPOINTS
            start_alpha = 2 * math.pi * (-0.5) / CHECKPOINTS
            rad = 1.5 * TRACK_RAD
        checkpoints.append((alpha, rad * math.cos(alpha), rad * math.sin(alpha)))

    # walk from checkpoint to checkpoint at a fixed step and capped turn rate
    x, y, beta = 1.5 * TRACK_RAD, 0.0, 0.0
    dest_i = 0
    laps = 0
    track: list[tuple[float, float, float, float]] = []
    no_freeze = 2500
    visited_other_side = False
    while True:
        alpha = math.atan2(y, x)
        if visited_other_side and alpha > 0:
            laps += 1
            visited_other_side = False
        if alpha < 0:
            visited_other_side = True
            alpha += 2 * math.pi

        while True:  # find destination checkpoint
            failed = True
            while True:
                dest_alpha, dest_x, dest_y = checkpoints[dest_i % len(checkpoints)]
                if alpha <= dest_alpha:
                    failed = False
                    break
                dest_i += 1
                if dest_i % len(checkpoints) == 0:
                    break
            if not failed:
                break
            alpha -= 2 * math.pi
            continue

        r1x, r1y = math.cos(beta), math.sin(beta)
        p1x, p1y = -r1y, r1x
        dest_dx = dest_x - x
        dest_dy = dest_y - y
        proj = r1x * dest_dx + r1y * dest_dy
        while beta - alpha > 1.5 * math.pi:
            beta -= 2 * math.pi
        while beta - alpha < -1.5 * math.pi:
            beta += 2 * math.pi
        prev_beta = beta
        proj *= SCALE
        if proj > 0.3:
            beta -= min(TRACK_TURN_RATE, abs(0.001 * proj))
        if proj < -0.3:
            beta += min(TRACK_TURN_RATE, abs(0.001 * proj))
        x += p1x * TRACK_DETAIL_STEP
        y += p1y * TRACK_DETAIL_STEP
        track.append((alpha, prev_beta * 0.5 + beta * 0.5, x, y))
        if laps > 4:
            break
        no_freeze -= 1
        if no_freeze == 0:
            break

    # close the loop between the two passes over the start angle
    i1, i2 = -1, -1
    i = len(track)
    while True:
        i -= 1
        if i == 0:
            return None
        pass_through_start = track[i][0] > start_alpha and track[i - 1][0] <= start_alpha
        if pass_through_start and i2 == -1:
            i2 = i
        elif pass_through_start and i1 == -1:
            i1 = i
            break
    if i1 == -1 or i2 == -1:
        return None
    track = track[i1 : i2 - 1]
    if len(track) < 2:
        return None

    first_beta = track[0][1]
    first_perp_x = math.cos(first_beta)
    first_perp_y = math.sin(first_beta)
    well_glued_together = math.sqrt(
        (first_perp_x * (track[0][2] - track[-1][2])) ** 2
        + (first_perp_y * (track[0][3] - track[-1][3])) ** 2
    )
    if well_glued_together > TRACK_DETAIL_STEP:
        return None

    # red-white borders on sustained hard turns
    border = [False] * len(track)
    for i in range(len(track)):
        good = True
        oneside = 0
        for neg in range(BORDER_MIN_COUNT):
            beta1 = track[i - neg - 0][1]
            beta2 = track[i - neg - 1][1]
            good &= abs(beta1 - beta2) > TRACK_TURN_RATE * 0.2
            oneside += int(np.sign(beta1 - beta2))
        good &= abs(oneside) == BORDER_MIN_COUNT
        border[i] = good
    for i in range(len(track)):
        for neg in range(BORDER_MIN_COUNT):
            border[i - neg] |= border[i]

    tiles = []
    border_polys = []
    border_colors = []
    for i in range(len(track)):
        alpha1, beta1, x1, y1 = track[i]
        alpha2, beta2, x2, y2 = track[i - 1]
        road1_l = (x1 - TRACK_WIDTH * math.cos(beta1), y1 - TRACK_WIDTH * math.sin(beta1))
        road1_r = (x1 + TRACK_WIDTH * math.cos(beta1), y1 + TRACK_WIDTH * math.sin(beta1))
        road2_l = (x2 - TRACK_WIDTH * math.cos(beta2), y2 - TRACK_WIDTH * math.sin(beta2))
        road2_r = (x2 + TRACK_WIDTH * math.cos(beta2), y2 + TRACK_WIDTH * math.sin(beta2))
        c = int(0.01 * (i % 3) * 255)
        color = (ROAD_COLOR[0] + c, ROAD_COLOR[1] + c, ROAD_COLOR[2] + c)
        tiles.append(
            TrackTile(index=i, quad=(road1_l, road1_r, road2_r, road2_l), color=color)
        )
        if border[i]:
            side = int(np.sign(beta2 - beta1)) or 1
            b1_l = (
                x1 + side * TRACK_WIDTH * math.cos(beta1),
                y1 + side * TRACK_WIDTH * math.sin(beta1),
            )
            b1_r = (
                x1 + side * (TRACK_WIDTH + BORDER) * math.cos(beta1),
                y1 + side * (TRACK_WIDTH + BORDER) * math.sin(beta1),
            )
            b2_l = (
                x2 + side * TRACK_WIDTH * math.cos(beta2),
                y2 + side * TRACK_WIDTH * math.sin(beta2),
            )
            b2_r = (
                x2 + side * (TRACK_WIDTH + BORDER) * math.cos(beta2),
                y2 + side * (TRACK_WIDTH + BORDER) * math.sin(beta2),
            )
            border_polys.append((b1_l, b1_r, b2_r, b2_l))
            border_colors.append((255, 255, 255) if i % 2 == 0 else (255, 0, 0))

    return Track(
        nodes=tuple(track),
        tiles=tuple(tiles),
        borders=tuple(border_polys),
        border_colors=tuple(border_colors),
    )


class TileIndex:
    """Uniform-grid spatial index over tile quads for point queries."""

    def __init__(self, tiles: tuple[TrackTile, ...], cell: float = 10.0):
        self.cell = cell
        self.grid: dict[tuple[int, int], list[TrackTile]] = {}
        for tile in tiles:
            xs = [p[0] for p in tile.quad]
            ys = [p[1] for p in tile.quad]
            x0, x1 = int(min(xs) // cell), int(max(xs) // cell)
            y0, y1 = int(min(ys) // cell), int(max(ys) // cell)
            for gx in range(x0, x1 + 1):
                for gy in range(y0, y1 + 1):
                    self.grid.setdefault((gx, gy), []).append(tile)

    def tiles_at(self, x: float, y: float) -> list[TrackTile]:
        key = (int(x // self.cell), int(y // self.cell))
        found = []
        for tile in self.grid.get(key, ()):  # candidates, then exact test
            if _point_in_quad(x, y, tile.quad):
                found.append(tile)
        return found


def _point_in_quad(x: float, y: float, quad: tuple[tuple[float, float], ...]) -> bool:
    sign = 0
    n = len(quad)
    for i in range(n):
        x0, y0 = quad[i]
        x1, y1 = quad[(i + 1) % n]
        cross = (x1 - x0) * (y - y0) - (y1 - y0) * (x - x0)
        if cross != 0:
            s = 1 if cross > 0 else -1
            if sign == 0:
                sign = s
            elif s != sign:
                return False
    return True
