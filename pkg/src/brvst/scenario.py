"""Scripted protocol scenarios: timed pub/sub events over static managers.

File format, one directive per line (``#`` comments)::

    config grids=4x2 k=2 latency=0.001 cache_ttl=120 alpha=0.8
    <t> sub   <sub_id> <node> <grid> <attr>=<lo>..<hi> ...
    <t> unsub <sub_id> <grid>
    <t> pub   <pub_id> <node> <grid> <attr>=<lo>..<hi> ... [size=<bytes>]
    <t> expire

``grids=CxR`` lays out C x R grids; ``k`` grids per zone side.  Every message
takes ``latency`` seconds regardless of distance, which keeps hand-written
timelines easy to reason about.  ``config`` keys other than the topology and
latency go to ``ProtocolConfig`` (``cache_ttl``, ``t_announce``, ...), the ARV
config (``alpha``, ``max_level``, ``force_level``) or the schema (``schema``).
"""
from __future__ import annotations

import dataclasses
import heapq
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Tuple

from .arv import ArvConfig
from .events import SchemaRegistry, default_registry, Publication, Subscription
from .overlay import GridManager, ProtocolConfig, Send, ZoneManager, handle_gm
from .sim.geometry import Topology
from .wire import Kind, UnsubMsg, pub_message, sub_message, traffic_size


class ScenarioError(ValueError):
    pass


@dataclass
class Step:
    time: float
    action: str
    item: object = None  # Subscription, Publication or sub_id
    grid: Optional[int] = None


@dataclass
class Scenario:
    topology: Topology
    protocol: ProtocolConfig
    registry: SchemaRegistry
    latency: float = 0.001
    steps: List[Step] = field(default_factory=list)


@dataclass
class ScenarioResult:
    deliveries: List[Tuple[float, int, int, int]]   # (time, pub_id, sub_id, node)
    messages: List[Tuple[float, Tuple[str, int], Kind, int]]  # (send time, dst, kind, bytes)
    gms: Dict[int, GridManager]
    zms: Dict[int, ZoneManager]

    def count(self, kind: Kind) -> int:
        return sum(1 for m in self.messages if m[2] == kind)

    def delivered_pairs(self):
        return [(d[1], d[2]) for d in self.deliveries]


_PROTO_FIELDS = {f.name: f.type for f in dataclasses.fields(ProtocolConfig)}


def _parse_ranges(tokens, lineno):
    ranges, size = {}, 0
    for tok in tokens:
        try:
            key, val = tok.split("=", 1)
            if key == "size":
                size = int(val)
                continue
            lo, _, hi = val.partition("..")
            ranges[int(key)] = (float(lo), float(hi or lo))
        except ValueError:
            raise ScenarioError(f"line {lineno}: bad attribute token {tok!r}") from None
    return ranges, size


def parse_scenario(text: str) -> Scenario:
    cols, rows, k, latency = 2, 1, 2, 0.001
    proto, arv_kw, schema = {}, {}, 15
    steps = []
    lines = [(i, raw.split("#", 1)[0].strip()) for i, raw in enumerate(text.splitlines(), 1)]
    body = []
    for lineno, line in lines:
        if not line:
            continue
        parts = line.split()
        if parts[0] != "config":
            body.append((lineno, parts))
            continue
        for tok in parts[1:]:
            key, _, val = tok.partition("=")
            if key == "grids":
                cols, rows = (int(x) for x in val.split("x"))
            elif key == "k":
                k = int(val)
            elif key == "latency":
                latency = float(val)
            elif key == "schema":
                schema = int(val)
            elif key in ("alpha",):
                arv_kw[key] = float(val)
            elif key in ("max_level", "force_level"):
                arv_kw[key] = int(val)
            elif key in _PROTO_FIELDS:
                proto[key] = int(val) if key in ("cache_capacity", "active_search_radius") else float(val)
            else:
                raise ScenarioError(f"line {lineno}: unknown config key {key!r}")
    registry = default_registry(schema, ArvConfig(**arv_kw))
    for lineno, parts in body:
        try:
            t, action = float(parts[0]), parts[1]
            if action == "sub":
                ranges, _ = _parse_ranges(parts[5:], lineno)
                item = registry.subscription(int(parts[2]), int(parts[3]), ranges)
                steps.append(Step(t, action, item, int(parts[4])))
            elif action == "pub":
                ranges, size = _parse_ranges(parts[5:], lineno)
                item = registry.publication(int(parts[2]), int(parts[3]), ranges, size)
                steps.append(Step(t, action, item, int(parts[4])))
            elif action == "unsub":
                steps.append(Step(t, action, int(parts[2]), int(parts[3])))
            elif action == "expire":
                steps.append(Step(t, action))
            else:
                raise ScenarioError(f"line {lineno}: unknown action {action!r}")
        except (IndexError, ValueError) as e:
            if isinstance(e, ScenarioError):
                raise
            raise ScenarioError(f"line {lineno}: {e}") from None
    return Scenario(Topology(cols, rows, k), ProtocolConfig(**proto), registry, latency, steps)


def build_managers(topo: Topology, cfg: ProtocolConfig):
    gms = {g: GridManager(g, topo.zone_of_grid(g), cfg) for g in range(topo.n_grids)}
    zones = list(range(topo.n_zones))
    zms = {
        z: ZoneManager(z, topo.zone_grids[z], topo.neighbors(z), zones, cfg,
                       search_zones=topo.zones_within(z, cfg.active_search_radius))
        for z in zones
    }
    return gms, zms


def run_scenario(sc: Scenario) -> ScenarioResult:
    gms, zms = build_managers(sc.topology, sc.protocol)
    queue: list = []
    seq = 0

    def push(t, kind, payload):
        nonlocal seq
        seq += 1
        heapq.heappush(queue, (t, seq, kind, payload))

    for st in sc.steps:
        push(st.time, "step", st)

    deliveries, messages = [], []

    def send_all(t, sends: List[Send]):
        for s in sends:
            messages.append((t, s.dst, s.msg.kind, traffic_size(s.msg)))
            push(t + sc.latency, "msg", s)

    while queue:
        t, _, kind, payload = heapq.heappop(queue)
        if kind == "step":
            st: Step = payload
            if st.action == "sub":
                send_all(t, [Send(("gm", st.grid), sub_message(st.item))])
            elif st.action == "pub":
                send_all(t, [Send(("gm", st.grid), pub_message(st.item))])
            elif st.action == "unsub":
                send_all(t, [Send(("gm", st.grid), UnsubMsg(st.item, 0))])
            elif st.action == "expire":
                for z in zms.values():
                    z.zrsv_expire(t)
            continue
        s: Send = payload
        role, ident = s.dst
        if role == "node":
            deliveries.append((t, s.msg.pub_id, s.sub_id, ident))
        elif role == "gm":
            send_all(t, handle_gm(gms[ident], s.msg, t))
        else:
            send_all(t, zms[ident].handle(s.msg, t))
    return ScenarioResult(deliveries, messages, gms, zms)
