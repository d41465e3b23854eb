"""Simulation configuration: flat ``key=value`` files with a stable hash."""
from __future__ import annotations

import dataclasses
import hashlib
from dataclasses import dataclass
from pathlib import Path
from typing import Optional

from ..arv import ArvConfig, ArvError
from ..overlay import ProtocolConfig


class SimConfigError(ValueError):
    pass


@dataclass(frozen=True)
class SimConfig:
    # geometry
    width: float = 1000.0
    height: float = 1000.0
    grid_side: float = 250.0
    zone_grids: int = 2            # zone side, in grids
    # nodes and radio
    nodes: int = 400
    tx_range: float = 80.0
    speed_min: float = 1.0
    speed_max: float = 9.0
    pause_max: float = 5.0
    tick: float = 1.0
    # workload (events per minute)
    pub_rate: float = 200.0
    sub_rate: float = 200.0
    sub_lifetime: float = 120.0    # mean, exponential
    attrs_min: int = 1
    attrs_max: int = 3
    schema_size: int = 15
    payload_size: int = 256
    pub_points: bool = False       # publications carry point values instead of ranges
    # ARVs
    alpha: float = 0.9
    max_level: int = 16
    force_level: Optional[int] = None
    # cost model
    per_hop_latency: float = 0.002
    header_bytes: int = 32
    proc_base: float = 0.0005      # seconds per handled message
    proc_per_filter: float = 0.00005  # seconds per stored filter scanned
    # protocol
    t_announce: float = 60.0
    cache_ttl: float = 120.0
    cache_capacity: int = 1024
    zrsv_timeout: float = 300.0
    dedup_margin: float = 30.0
    active_search_radius: int = 0
    # run
    seed: int = 1
    duration: float = 600.0
    storage_interval: float = 10.0
    settle: float = 1.0            # grace period before an undelivered match counts as missed

    def __post_init__(self):
        try:
            self.arv_config()
        except ArvError as e:
            raise SimConfigError(str(e)) from None
        for name in ("width", "height", "grid_side", "tx_range", "tick", "duration", "storage_interval"):
            if not getattr(self, name) > 0:
                raise SimConfigError(f"{name} must be positive")
        for name in ("pub_rate", "sub_rate", "sub_lifetime", "per_hop_latency", "proc_base",
                     "proc_per_filter", "pause_max", "settle", "cache_ttl", "t_announce"):
            if getattr(self, name) < 0:
                raise SimConfigError(f"{name} must be >= 0")
        for name in ("width", "height"):
            n = getattr(self, name) / self.grid_side
            if abs(n - round(n)) > 1e-9:
                raise SimConfigError(f"{name} {getattr(self, name)} is not a whole number of {self.grid_side} m grids")
        if self.zone_grids < 1 or self.nodes < 1:
            raise SimConfigError("zone_grids and nodes must be >= 1")
        if not 0 < self.speed_min <= self.speed_max:
            raise SimConfigError("need 0 < speed_min <= speed_max")
        if not 1 <= self.attrs_min <= self.attrs_max <= self.schema_size:
            raise SimConfigError("need 1 <= attrs_min <= attrs_max <= schema_size")
        if self.cache_capacity < 1:
            raise SimConfigError("cache_capacity must be >= 1")

    def arv_config(self) -> ArvConfig:
        return ArvConfig(self.alpha, self.max_level, self.force_level)

    def protocol(self) -> ProtocolConfig:
        return ProtocolConfig(self.t_announce, self.cache_ttl, self.cache_capacity,
                              self.zrsv_timeout, self.dedup_margin, self.active_search_radius)

    def replace(self, **kw) -> "SimConfig":
        return dataclasses.replace(self, **kw)

    def dumps(self) -> str:
        lines = []
        for f in dataclasses.fields(self):
            v = getattr(self, f.name)
            if v is None:
                v = "none"
            elif isinstance(v, bool):
                v = str(v).lower()
            lines.append(f"{f.name}={v}")
        return "\n".join(lines) + "\n"

    def hash(self) -> str:
        return hashlib.sha256(self.dumps().encode()).hexdigest()[:16]


_FIELDS = {f.name: f for f in dataclasses.fields(SimConfig)}


def coerce(name: str, raw: str):
    """Parse ``raw`` as the type of config field ``name``."""
    f = _FIELDS.get(name)
    if f is None:
        raise SimConfigError(f"unknown config key {name!r}")
    default = f.default
    raw = raw.strip()
    try:
        if name == "force_level":
            return None if raw.lower() in ("", "none") else int(raw)
        if isinstance(default, bool):
            if raw.lower() in ("1", "true", "yes", "on"):
                return True
            if raw.lower() in ("0", "false", "no", "off"):
                return False
            raise ValueError(raw)
        if isinstance(default, int):
            return int(raw)
        return float(raw)
    except ValueError:
        raise SimConfigError(f"bad value for {name}: {raw!r}") from None


def loads(text: str, base: SimConfig = SimConfig()) -> SimConfig:
    kw = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, val = line.partition("=")
        if not sep:
            raise SimConfigError(f"line {lineno}: expected key=value, got {line!r}")
        kw[key.strip()] = coerce(key.strip(), val)
    return base.replace(**kw)


def load(path, base: SimConfig = SimConfig()) -> SimConfig:
    try:
        text = Path(path).read_text()
    except OSError as e:
        raise SimConfigError(f"cannot read config {path}: {e.strerror}") from None
    return loads(text, base)
