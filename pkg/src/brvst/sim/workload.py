"""Poisson publication/subscription workload."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Dict, List, Tuple

import numpy as np

from ..events import SchemaRegistry

Ranges = Dict[int, Tuple[float, float]]


@dataclass(frozen=True)
class WorkItem:
    time: float
    kind: str        # "sub" or "pub"
    ident: int
    node: int
    ranges: Ranges
    end: float = float("inf")   # subscription expiry
    size: int = 0                # publication payload bytes

    def line(self) -> str:
        attrs = " ".join(f"{a}={lo!r}..{hi!r}" for a, (lo, hi) in sorted(self.ranges.items()))
        tail = f" end={self.end!r}" if self.kind == "sub" else f" size={self.size}"
        return f"{self.time!r} {self.kind} {self.ident} {self.node} {attrs}{tail}"


def _arrivals(rng: np.random.Generator, per_minute: float, duration: float) -> np.ndarray:
    if per_minute <= 0:
        return np.empty(0)
    rate = per_minute / 60.0
    n = rng.poisson(rate * duration)
    return np.sort(rng.uniform(0, duration, n))


def _ranges(rng, registry: SchemaRegistry, cfg, point: bool) -> Ranges:
    ids = registry.ids
    k = int(rng.integers(cfg.attrs_min, cfg.attrs_max + 1))
    out = {}
    for a in sorted(rng.choice(ids, size=k, replace=False).tolist()):
        lim = registry[a].limit
        if point:
            v = float(rng.uniform(lim.min, lim.max))
            out[a] = (v, v)
        else:
            x, y = rng.uniform(lim.min, lim.max, 2).tolist()
            out[a] = (min(x, y), max(x, y))
    return out


def generate_workload(rng: np.random.Generator, cfg, registry: SchemaRegistry) -> List[WorkItem]:
    """All subscriptions and publications of one run, time ordered.

    Arrival times come from two homogeneous Poisson processes; issuing nodes,
    attribute counts and attribute ids are uniform, and ranges are two uniform
    draws within the attribute's domain, swapped into order.  Subscriptions
    live for an exponential time with mean ``cfg.sub_lifetime``.
    """
    sub_t = _arrivals(rng, cfg.sub_rate, cfg.duration)
    pub_t = _arrivals(rng, cfg.pub_rate, cfg.duration)
    items = []
    for i, t in enumerate(sub_t.tolist(), 1):
        node = int(rng.integers(cfg.nodes))
        ranges = _ranges(rng, registry, cfg, False)
        life = float(rng.exponential(cfg.sub_lifetime)) if cfg.sub_lifetime > 0 else float("inf")
        items.append(WorkItem(t, "sub", i, node, ranges, end=t + life))
    for i, t in enumerate(pub_t.tolist(), 1):
        node = int(rng.integers(cfg.nodes))
        ranges = _ranges(rng, registry, cfg, cfg.pub_points)
        items.append(WorkItem(t, "pub", i, node, ranges, size=cfg.payload_size))
    items.sort(key=lambda w: (w.time, w.kind, w.ident))
    return items
