"""Virtual grid/zone layout and the hop-count routing cost model."""
from __future__ import annotations

import math
from dataclasses import dataclass
from functools import cached_property
from typing import Dict, List, Tuple


class GeometryError(ValueError):
    pass


def grid_of(pos, grid_side: float, width: float = math.inf, height: float = math.inf) -> Tuple[int, int]:
    x, y = pos
    if not (0 <= x <= width and 0 <= y <= height):
        raise GeometryError(f"position {pos} outside the {width}x{height} area")
    gx, gy = int(x // grid_side), int(y // grid_side)
    # the far edges belong to the last grid
    if x == width:
        gx = max(gx - 1, 0)
    if y == height:
        gy = max(gy - 1, 0)
    return gx, gy


def zone_of(grid: Tuple[int, int], zone_grids: int) -> Tuple[int, int]:
    gx, gy = grid
    return gx // zone_grids, gy // zone_grids


@dataclass(frozen=True)
class Topology:
    """Row-major numbering of ``cols x rows`` grids grouped into ``k x k`` zones."""

    cols: int
    rows: int
    k: int
    grid_side: float = 1.0

    def __post_init__(self):
        if self.cols < 1 or self.rows < 1 or self.k < 1:
            raise GeometryError("topology needs at least one grid and k >= 1")

    @classmethod
    def for_area(cls, width: float, height: float, grid_side: float, k: int) -> "Topology":
        cols, rows = width / grid_side, height / grid_side
        if abs(cols - round(cols)) > 1e-9 or abs(rows - round(rows)) > 1e-9:
            raise GeometryError(f"{width}x{height} area is not a whole number of {grid_side} m grids")
        return cls(int(round(cols)), int(round(rows)), k, grid_side)

    @property
    def zone_cols(self) -> int:
        return -(-self.cols // self.k)

    @property
    def zone_rows(self) -> int:
        return -(-self.rows // self.k)

    @property
    def n_grids(self) -> int:
        return self.cols * self.rows

    @property
    def n_zones(self) -> int:
        return self.zone_cols * self.zone_rows

    def grid_id(self, gx: int, gy: int) -> int:
        return gy * self.cols + gx

    def grid_xy(self, gid: int) -> Tuple[int, int]:
        return gid % self.cols, gid // self.cols

    def zone_id(self, zx: int, zy: int) -> int:
        return zy * self.zone_cols + zx

    def zone_xy(self, zid: int) -> Tuple[int, int]:
        return zid % self.zone_cols, zid // self.zone_cols

    def zone_of_grid(self, gid: int) -> int:
        return self.zone_id(*zone_of(self.grid_xy(gid), self.k))

    @cached_property
    def zone_grids(self) -> Dict[int, List[int]]:
        out: Dict[int, List[int]] = {z: [] for z in range(self.n_zones)}
        for g in range(self.n_grids):
            out[self.zone_of_grid(g)].append(g)
        return out

    def zone_hops(self, a: int, b: int) -> int:
        ax, ay = self.zone_xy(a)
        bx, by = self.zone_xy(b)
        return max(abs(ax - bx), abs(ay - by))

    def neighbors(self, zid: int) -> List[int]:
        """The (up to) 8 adjacent zones."""
        return [z for z in range(self.n_zones) if self.zone_hops(zid, z) == 1]

    def zones_within(self, zid: int, radius: int) -> List[int]:
        return [z for z in range(self.n_zones) if 0 < self.zone_hops(zid, z) <= radius]

    def grid_center(self, gid: int) -> Tuple[float, float]:
        gx, gy = self.grid_xy(gid)
        s = self.grid_side
        return (gx + 0.5) * s, (gy + 0.5) * s

    def zone_center(self, zid: int) -> Tuple[float, float]:
        """Center of the zone's grids (zones on the far edge may be partial)."""
        grids = self.zone_grids[zid]
        xs = [self.grid_center(g)[0] for g in grids]
        ys = [self.grid_center(g)[1] for g in grids]
        return (min(xs) + max(xs)) / 2, (min(ys) + max(ys)) / 2


def hop_count(src, dst, tx_range: float) -> int:
    d = math.hypot(src[0] - dst[0], src[1] - dst[1])
    return max(1, math.ceil(d / tx_range - 1e-9))


def route_cost(src, dst, msg_bytes: int, tx_range: float, per_hop_latency: float, header_bytes: int):
    """Latency and bytes on air for one unicast over ``ceil(distance / range)`` hops (at least one)."""
    hops = hop_count(src, dst, tx_range)
    return hops * per_hop_latency, hops * (header_bytes + msg_bytes)
