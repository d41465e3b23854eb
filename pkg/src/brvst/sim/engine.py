"""Discrete-event simulator: mobile nodes driving the grid/zone managers.

Cost model: a message from position a to position b takes
``ceil(|ab| / tx_range)`` hops (at least one); each hop costs
``per_hop_latency`` seconds and ``header_bytes + message bytes`` of traffic.
A multicast is charged as independent unicasts, which over-counts traffic
compared to a real geographic multicast tree.  Every manager is a FIFO
server: a message waits for the manager to finish its previous work, then
takes ``proc_base + proc_per_filter * comparisons`` seconds, where
``comparisons`` counts the filter tests the handler actually performed.  Channels are
FIFO per (sender, receiver) pair.

Managers are hosted by the member node nearest the grid (or zone) center,
lowest id on ties, re-evaluated whenever the membership of that grid changes.
A host change ships the manager's serialized state to the new host.  A grid
with no members is served by its zone manager's host (or, if the whole zone
is empty, from the zone center).

Subscriptions follow their subscriber: a node that changes grid withdraws its
live subscriptions from the old grid manager and re-registers them with the
new one.
"""
from __future__ import annotations

import heapq
import math
from collections import deque
from typing import Dict, List, Optional, Tuple

import numpy as np

from ..events import Subscription, arvs_match, default_registry
from ..overlay import ProtocolError, Send, handle_gm
from ..scenario import build_managers
from ..wire import UnsubMsg, pub_message, sub_message, traffic_size, wire_size
from .config import SimConfig
from .geometry import Topology, hop_count
from .ledger import MetricsLedger, Record, run_oracle
from .mobility import RandomWaypoint
from .workload import WorkItem, generate_workload

NODE_ID_BYTES = 20   # own, grid, zone, GM host and ZM host ids
_FLAT_SUB_HEAD = 10  # sub_id + owner + child count, as in the forest encoding


class SimInvariantError(RuntimeError):
    pass


class World:
    def __init__(self, cfg: SimConfig):
        self.cfg = cfg
        self.topo = Topology.for_area(cfg.width, cfg.height, cfg.grid_side, cfg.zone_grids)
        self.registry = default_registry(cfg.schema_size, cfg.arv_config())
        wl_seed, mob_seed = np.random.SeedSequence(cfg.seed).spawn(2)
        self.workload = generate_workload(np.random.default_rng(wl_seed), cfg, self.registry)
        self.mob = RandomWaypoint(cfg.nodes, cfg.width, cfg.height, cfg.speed_min, cfg.speed_max,
                                  cfg.pause_max, np.random.default_rng(mob_seed))
        self.gms, self.zms = build_managers(self.topo, cfg.protocol())
        self.ledger = MetricsLedger(cfg.hash(), cfg.seed)
        self.queue: list = []
        self._seq = 0
        self.busy: Dict[Tuple[str, int], float] = {}
        self.channel: Dict[tuple, float] = {}
        self.inbox: Dict[Tuple[str, int], deque] = {}
        self.gm_host: Dict[int, Optional[int]] = {g: None for g in self.gms}
        self.zm_host: Dict[int, Optional[int]] = {z: None for z in self.zms}
        self.node_grid = np.full(cfg.nodes, -1)
        self.node_subs: Dict[int, Dict[int, Subscription]] = {n: {} for n in range(cfg.nodes)}
        self.sub_grid: Dict[int, int] = {}
        self.delivered: set = set()
        centers = np.array([self.topo.grid_center(g) for g in range(self.topo.n_grids)])
        self._grid_centers = centers
        self._zone_centers = np.array([self.topo.zone_center(z) for z in range(self.topo.n_zones)])
        self._grid_zone = np.array([self.topo.zone_of_grid(g) for g in range(self.topo.n_grids)])

    # -- event queue -------------------------------------------------------------

    def push(self, t: float, kind: str, payload=None):
        self._seq += 1
        heapq.heappush(self.queue, (t, self._seq, kind, payload))

    # -- geometry -----------------------------------------------------------------

    def grids_now(self) -> np.ndarray:
        pos = self.mob.pos
        side = self.cfg.grid_side
        gx = np.minimum((pos[:, 0] // side).astype(int), self.topo.cols - 1)
        gy = np.minimum((pos[:, 1] // side).astype(int), self.topo.rows - 1)
        return gy * self.topo.cols + gx

    def host_of(self, addr) -> Optional[int]:
        role, ident = addr
        if role == "node":
            return ident
        if role == "gm":
            h = self.gm_host[ident]
            return h if h is not None else self.zm_host[self.topo.zone_of_grid(ident)]
        return self.zm_host[ident]

    def position(self, addr):
        h = self.host_of(addr)
        if h is not None:
            return self.mob.pos[h]
        role, ident = addr
        zone = ident if role == "zm" else self._grid_zone[ident]
        return self._zone_centers[zone]

    # -- elections ------------------------------------------------------------------

    def _nearest(self, members: np.ndarray, center) -> Optional[int]:
        if len(members) == 0:
            return None
        d = np.hypot(*(self.mob.pos[members] - center).T)
        return int(members[np.argmin(d)])  # members are ascending, so ties go to the lowest id

    def elect(self, now: float, grids):
        grids = sorted(set(grids))
        zones = sorted({int(self._grid_zone[g]) for g in grids})
        for z in zones:
            members = np.flatnonzero(np.isin(self.node_grid, self.topo.zone_grids[z]))
            new = self._nearest(members, self._zone_centers[z])
            old = self.zm_host[z]
            if new != old:
                self._handoff(now, ("zm", z), old, new, self.zms[z].storage_size())
                self.zm_host[z] = new
        for g in grids:
            members = np.flatnonzero(self.node_grid == g)
            new = self._nearest(members, self._grid_centers[g])
            old = self.gm_host[g]
            if new != old:
                if new is None:
                    self.ledger.rerouted += 1
                self._handoff(now, ("gm", g), old, new, len(self.gms[g].forest.encode()))
                self.gm_host[g] = new

    def _handoff(self, now, addr, old, new, size):
        if old is None or new is None or size <= 0:
            return
        hops = hop_count(self.mob.pos[old], self.mob.pos[new], self.cfg.tx_range)
        nbytes = hops * (self.cfg.header_bytes + size)
        self.ledger.handoffs += 1
        self.ledger.handoff_bytes += nbytes
        self.ledger.traffic["HANDOFF"] += nbytes
        self.ledger.messages["HANDOFF"] += 1
        done = now + hops * self.cfg.per_hop_latency
        self.busy[addr] = max(self.busy.get(addr, 0.0), done)

    # -- messaging ----------------------------------------------------------------

    def send(self, now: float, src, s: Send):
        cfg = self.cfg
        size = traffic_size(s.msg)
        hops = hop_count(self.position(src), self.position(s.dst), cfg.tx_range)
        kind = s.msg.kind.name
        self.ledger.traffic[kind] += hops * (cfg.header_bytes + size)
        self.ledger.messages[kind] += 1
        arrive = now + hops * cfg.per_hop_latency
        key = (src, s.dst)
        arrive = max(arrive, self.channel.get(key, 0.0))
        self.channel[key] = arrive
        self.push(arrive, "arrive", s)

    def _manager(self, addr):
        role, ident = addr
        return self.gms[ident] if role == "gm" else self.zms[ident]

    def arrive(self, now: float, s: Send):
        if s.dst[0] == "node":
            self._deliver(now, s.dst[1], s)
            return
        q = self.inbox.setdefault(s.dst, deque())
        q.append(s)
        if len(q) == 1:
            self.push(max(now, self.busy.get(s.dst, 0.0)), "process", s.dst)

    def process(self, now: float, addr):
        """Serve the head of ``addr``'s inbox; the next message waits until this one is done."""
        s = self.inbox[addr][0]
        busy = self.busy.get(addr, 0.0)
        if busy > now:  # a handoff landed while this was queued
            self.push(busy, "process", addr)
            return
        m = self._manager(addr)
        before = m.work
        try:
            if addr[0] == "gm":
                out = handle_gm(m, s.msg, now)
            else:
                out = m.handle(s.msg, now)
        except ProtocolError as e:
            raise SimInvariantError(f"t={now:.3f}: {e}") from None
        done = now + self.cfg.proc_base + self.cfg.proc_per_filter * (m.work - before)
        self.busy[addr] = done
        for o in out:
            self.send(done, addr, o)
        q = self.inbox[addr]
        q.popleft()
        if q:
            self.push(done, "process", addr)

    def _deliver(self, now: float, node: int, s: Send):
        pair = (s.msg.pub_id, s.sub_id)
        if pair in self.delivered:
            self.ledger.duplicates += 1
            return
        sub = self._subs_by_id.get(s.sub_id)
        if sub is None or not arvs_match(s.msg.arvs, sub.arvs):
            raise SimInvariantError(f"delivery of pub {pair[0]} to sub {pair[1]} without an ARV match")
        self.delivered.add(pair)
        self.ledger.deliveries.append((now, pair[0], pair[1]))

    # -- workload -------------------------------------------------------------------

    def _node_addr(self, n):
        return ("node", n)

    def subscribe(self, now: float, w: WorkItem):
        sub = self.registry.subscription(w.ident, w.node, w.ranges)
        self._subs_by_id[w.ident] = sub
        self.ledger.saturated += sum(a.arv.saturated for a in sub.attrs.values())
        g = int(self.node_grid[w.node])
        self.node_subs[w.node][w.ident] = sub
        self.sub_grid[w.ident] = g
        self.send(now, self._node_addr(w.node), Send(("gm", g), sub_message(sub)))
        if w.end < self.cfg.duration:
            self.push(w.end, "expire_sub", w.ident)

    def unsubscribe(self, now: float, sub_id: int):
        g = self.sub_grid.pop(sub_id, None)
        if g is None:
            return
        sub = self._subs_by_id[sub_id]
        del self.node_subs[sub.subscriber][sub_id]
        self.send(now, self._node_addr(sub.subscriber), Send(("gm", g), UnsubMsg(sub_id, sub.subscriber)))

    def publish(self, now: float, w: WorkItem):
        pub = self.registry.publication(w.ident, w.node, w.ranges, w.size)
        self.ledger.saturated += sum(a.arv.saturated for a in pub.attrs.values())
        g = int(self.node_grid[w.node])
        self.send(now, self._node_addr(w.node), Send(("gm", g), pub_message(pub)))

    # -- mobility -------------------------------------------------------------------

    def tick(self, now: float, dt: float):
        if dt > 0:
            self.mob.step(dt)
        new = self.grids_now()
        moved = np.flatnonzero(new != self.node_grid)
        if len(moved) == 0:
            return
        old = self.node_grid.copy()
        self.node_grid = new
        self.elect(now, (set(old[moved].tolist()) | set(new[moved].tolist())) - {-1})
        for n in moved.tolist():
            g = int(new[n])
            for sid, sub in sorted(self.node_subs[n].items()):
                prev = self.sub_grid[sid]
                if prev == g:
                    continue
                self.send(now, ("node", n), Send(("gm", prev), UnsubMsg(sid, n)))
                self.sub_grid[sid] = g
                self.send(now, ("node", n), Send(("gm", g), sub_message(sub)))

    def check_membership(self):
        expected = self.grids_now()
        if not np.array_equal(expected, self.node_grid):
            raise SimInvariantError("node grid membership out of date after a tick")

    # -- accounting -------------------------------------------------------------------

    def sample(self, now: float):
        cfg = self.cfg
        n = cfg.nodes
        store = np.zeros(n)
        broker = np.zeros(n, dtype=bool)
        for g, m in self.gms.items():
            h = self.host_of(("gm", g))
            if h is not None:
                store[h] += m.storage_size()
                broker[h] = True
        for z, m in self.zms.items():
            m.purge(now)
            m.zrsv_expire(now)
            h = self.zm_host[z]
            if h is not None:
                store[h] += m.storage_size()
                broker[h] = True
        naive = 0
        for node, subs in self.node_subs.items():
            own = NODE_ID_BYTES
            for sub in subs.values():
                sz = wire_size(sub_message(sub))
                own += sz
                naive += 2 * (_FLAT_SUB_HEAD + sz - 9)
            store[node] += own
        filt = sum(m.filter_size() for m in self.gms.values()) + sum(m.filter_size() for m in self.zms.values())
        nb = int(broker.sum())
        led = self.ledger
        led.samples.append({
            "t": float(now),
            "active_subs": len(self.sub_grid),
            "brokers": nb,
            "broker_storage": float(store[broker].mean()) if nb else 0.0,
            "nonbroker_storage": float(store[~broker].mean()) if nb < n else 0.0,
            "node_storage": float(store.mean()),
            "filter_bytes": int(filt),
            "naive_filter_bytes": int(naive),
            "control_bytes": led.control_bytes,
            "data_bytes": led.data_bytes,
            "deliveries": len(led.deliveries),
            "handoffs": led.handoffs,
        })

    # -- main loop ------------------------------------------------------------------------

    def run(self) -> MetricsLedger:
        cfg = self.cfg
        self._subs_by_id: Dict[int, Subscription] = {}
        self.tick(0.0, 0.0)
        for w in self.workload:
            self.push(w.time, "work", w)
        n_ticks = int(math.floor(cfg.duration / cfg.tick + 1e-9))
        for i in range(1, n_ticks + 1):
            self.push(i * cfg.tick, "tick")
        n_samples = int(math.floor(cfg.duration / cfg.storage_interval + 1e-9))
        for i in range(1, n_samples + 1):
            self.push(i * cfg.storage_interval, "sample")
        last_tick = 0.0
        while self.queue:
            now, _, kind, payload = heapq.heappop(self.queue)
            if kind == "arrive":
                self.arrive(now, payload)
            elif kind == "process":
                self.process(now, payload)
            elif kind == "work":
                if payload.kind == "sub":
                    self.subscribe(now, payload)
                else:
                    self.publish(now, payload)
            elif kind == "expire_sub":
                self.unsubscribe(now, payload)
            elif kind == "tick":
                self.tick(now, now - last_tick)
                last_tick = now
                self.check_membership()
            elif kind == "sample":
                self.sample(now)
        self._finish()
        return self.ledger

    def _finish(self):
        cfg = self.cfg
        led = self.ledger
        for w in self.workload:
            rec = Record(w.ident, w.node, w.time, min(w.end, cfg.duration) if w.kind == "sub" else w.time,
                         dict(w.ranges))
            (led.subs if w.kind == "sub" else led.pubs).append(rec)
        led.oracle = run_oracle(led.pubs, led.subs, self.delivered, max(self.registry.ids) + 1,
                                cfg.cache_ttl, cfg.settle, cfg.duration)
        if led.oracle.unsound:
            raise SimInvariantError(f"{led.oracle.unsound} deliveries without an ARV match")


def run(cfg: SimConfig) -> MetricsLedger:
    """Run one simulation and return its ledger (oracle verdict included)."""
    return World(cfg).run()
