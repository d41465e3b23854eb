"""Random waypoint mobility with a strictly positive minimum speed."""
from __future__ import annotations

import numpy as np


class RandomWaypoint:
    """Vectorized random waypoint over a rectangle.

    Each node walks straight to a uniformly drawn waypoint at a speed drawn
    from ``[speed_min, speed_max]``, pauses for up to ``pause_max`` seconds,
    then draws the next leg.  Keeping ``speed_min > 0`` avoids nodes that
    crawl forever and drag the long-run average speed toward zero.
    """

    def __init__(self, n, width, height, speed_min, speed_max, pause_max, rng: np.random.Generator):
        self.width, self.height = float(width), float(height)
        self.speed_min, self.speed_max, self.pause_max = speed_min, speed_max, pause_max
        self.rng = rng
        self.pos = np.column_stack([rng.uniform(0, width, n), rng.uniform(0, height, n)])
        self.target = np.empty_like(self.pos)
        self.speed = np.empty(n)
        self.pause = np.zeros(n)
        self._new_leg(np.arange(n))

    def _new_leg(self, idx):
        k = len(idx)
        if k == 0:
            return
        self.target[idx, 0] = self.rng.uniform(0, self.width, k)
        self.target[idx, 1] = self.rng.uniform(0, self.height, k)
        self.speed[idx] = self.rng.uniform(self.speed_min, self.speed_max, k)

    def step(self, dt: float):
        """Advance every node by ``dt`` seconds."""
        budget = np.full(len(self.pos), float(dt))
        # nodes can finish a leg, pause and start another within one step
        for _ in range(8):
            used = np.minimum(self.pause, budget)
            self.pause -= used
            budget -= used
            moving = (budget > 1e-12) & (self.pause <= 0)
            if not moving.any():
                break
            d = self.target - self.pos
            dist = np.hypot(d[:, 0], d[:, 1])
            reach = self.speed * budget
            arrive = moving & (reach >= dist)
            go = moving & ~arrive
            if go.any():
                f = (reach[go] / dist[go])[:, None]
                self.pos[go] += d[go] * f
                budget[go] = 0
            if arrive.any():
                self.pos[arrive] = self.target[arrive]
                t_used = np.where(self.speed[arrive] > 0, dist[arrive] / self.speed[arrive], 0)
                budget[arrive] -= t_used
                idx = np.flatnonzero(arrive)
                self.pause[idx] = self.rng.uniform(0, self.pause_max, len(idx)) if self.pause_max > 0 else 0
                self._new_leg(idx)
        np.clip(self.pos[:, 0], 0, self.width, out=self.pos[:, 0])
        np.clip(self.pos[:, 1], 0, self.height, out=self.pos[:, 1])
