"""Continuous-control racing environment over the built-in track and car.

Reward and termination follow the published rules: -0.1 per frame,
+1000/N per newly visited track tile, episode over when every tile is
visited or the car leaves the playfield (with a -100 penalty). The
observation is the rendered 96x96 top-down view the policies consume.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from mles_evaluator.racing_car import Car
from mles_evaluator.racing_render import render_observation
from mles_evaluator.racing_track import PLAYFIELD, TileIndex, Track, generate_track

FPS = 50


@dataclass
class RacingStepInfo:
    tiles_visited: int
    tiles_total: int
    on_playfield: bool
    finished: bool


@dataclass
class CarRacing:
    rng: np.random.Generator = field(default_factory=np.random.default_rng)
    track: Track | None = None
    tile_index: TileIndex | None = None
    car: Car | None = None
    visited: set[int] = field(default_factory=set)
    steps: int = 0
    t: float = 0.0

    def reset(self, seed: int) -> np.ndarray:
        self.rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence(seed)))
        self.track = generate_track(self.rng)
        self.tile_index = TileIndex(self.track.tiles)
        beta, x, y = self.track.start_pose
        self.car = Car(x=x, y=y, angle=beta)
        self.visited = set()
        self.steps = 0
        self.t = 0.0
        self._mark_tiles()  # starting tile counts as visited on first contact
        return self.observation()

    def _grass_check(self, x: float, y: float) -> bool:
        return not self.tile_index.tiles_at(x, y)

    def _mark_tiles(self) -> int:
        new_tiles = 0
        for w in self.car.wheels:
            wp = self.car.world_point(w.local)
            for tile in self.tile_index.tiles_at(wp[0], wp[1]):
                if tile.index not in self.visited:
                    self.visited.add(tile.index)
                    new_tiles += 1
        return new_tiles

    def observation(self) -> np.ndarray:
        return render_observation(self.track, self.car, self.t)

    @property
    def completion(self) -> float:
        return len(self.visited) / len(self.track) * 100.0

    def step(self, action) -> tuple[np.ndarray, float, bool, RacingStepInfo]:
        steer, gas, brake = float(action[0]), float(action[1]), float(action[2])
        self.car.steer(-steer)
        self.car.gas(gas)
        self.car.brake(brake)
        self.car.step(1.0 / FPS, self._grass_check)
        self.steps += 1
        self.t += 1.0 / FPS

        reward = -0.1
        reward += 1000.0 / len(self.track) * self._mark_tiles()

        finished = len(self.visited) == len(self.track)
        on_field = abs(self.car.x) <= PLAYFIELD and abs(self.car.y) <= PLAYFIELD
        terminated = finished
        if not on_field:
            terminated = True
            reward = -100.0
        info = RacingStepInfo(
            tiles_visited=len(self.visited),
            tiles_total=len(self.track),
            on_playfield=on_field,
            finished=finished,
        )
        return self.observation(), reward, terminated, info
