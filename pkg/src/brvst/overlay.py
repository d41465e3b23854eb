"""Grid Manager and Zone Manager state machines.

Managers never talk to each other directly.  Every handler takes one inbound
message plus the current time and returns a list of ``Send`` records; the
caller (the simulator or the scenario runner) routes them, charges their cost
and feeds them to the destination's handler later.

Addresses are tuples: ``("gm", grid_id)``, ``("zm", zone_id)`` and
``("node", node_id)``.  A ``Send`` to a node with ``sub_id`` set is a final
delivery of publication data to that subscription.
"""
from __future__ import annotations

import hashlib
from dataclasses import dataclass, field
from typing import Dict, Iterable, List, Optional, Set, Tuple

from .events import arvs_match
from .forest import SummaryForest
from .wire import (
    NO_EXPIRY, DataDeliver, GrsvUpdate, PubAnnounce, PubMsg, SubMsg, UnsubMsg, ZrsvUpdate,
    encode_attrs, entries_size, wire_size,
)


class ProtocolError(RuntimeError):
    pass


@dataclass(frozen=True)
class ProtocolConfig:
    t_announce: float = 60.0       # re-announce period for an unchanged publisher signature
    cache_ttl: float = 120.0
    cache_capacity: int = 1024
    zrsv_timeout: float = 300.0    # learned (non-neighbor) peers dropped after this long without a match
    dedup_margin: float = 30.0     # how long past the TTL a GM remembers what it already delivered
    active_search_radius: int = 0  # zone hops; 0 disables subscriber-side active search


@dataclass(frozen=True)
class Send:
    dst: Tuple[str, int]
    msg: object
    sub_id: Optional[int] = None


def gm(grid_id):
    return ("gm", grid_id)


def zm(zone_id):
    return ("zm", zone_id)


def node(node_id):
    return ("node", node_id)


def _entry_matches(arvs, entries) -> bool:
    return any(arvs_match(arvs, e) for e in entries)


def _relabel(data: DataDeliver, zone_id=None, grid_id=None) -> DataDeliver:
    return DataDeliver(data.pub_id, data.publisher,
                       data.zone_id if zone_id is None else zone_id,
                       data.grid_id if grid_id is None else grid_id,
                       data.payload_size, data.arvs, data.expires_ms)


# --- grid manager ---------------------------------------------------------------


@dataclass
class _Seen:
    data: DataDeliver
    serve_until: float
    remember_until: float
    delivered: Set[int] = field(default_factory=set)


class GridManager:
    """Per-grid broker: subscription forest, local matching, GRSV reporting.

    It also remembers publication data that passed through it for the cache
    TTL.  A new subscription that leaves the GRSV unchanged never reaches the
    zone manager, so this is what lets it still pick up earlier publications;
    the same record suppresses duplicate deliveries when the zone manager
    re-sends cached data.
    """

    def __init__(self, grid_id: int, zone_id: int, cfg: ProtocolConfig = ProtocolConfig(), host=None):
        self.grid_id = grid_id
        self.zone_id = zone_id
        self.cfg = cfg
        self.host = host
        self.forest = SummaryForest(grid_id)
        self.last_grsv = self.forest.representative_set()
        self.seen: Dict[int, _Seen] = {}
        self.work = 0  # filter comparisons performed, for processing-cost models

    # subscriptions ---------------------------------------------------------

    def _report(self) -> List[Send]:
        grsv = self.forest.representative_set()
        if grsv.version == self.last_grsv.version:
            return []
        self.last_grsv = grsv
        return [Send(zm(self.zone_id), grsv)]

    def handle_subscribe(self, msg: SubMsg, now: float) -> List[Send]:
        self.work += len(self.forest.trees)
        self.forest.add_subscription(msg)
        out = self._report()
        self._purge(now)
        self.work += len(self.seen)
        for rec in self.seen.values():
            if now <= rec.serve_until and msg.sub_id not in rec.delivered and arvs_match(rec.data.arvs, msg.arvs):
                rec.delivered.add(msg.sub_id)
                out.append(Send(node(msg.node_id), rec.data, msg.sub_id))
        return out

    def handle_unsubscribe(self, sub_id: int, now: float) -> List[Send]:
        if sub_id not in self.forest:
            raise ProtocolError(f"grid {self.grid_id}: unknown subscription {sub_id}")
        self.work += len(self.forest.trees)
        self.forest.remove_subscription(sub_id)
        return self._report()

    # publications ------------------------------------------------------------

    def _deliver(self, data: DataDeliver, now: float) -> List[Send]:
        self._purge(now)
        rec = self.seen.get(data.pub_id)
        if rec is None:
            until = min(data.expires, now + self.cfg.cache_ttl)
            rec = self.seen[data.pub_id] = _Seen(data, until, until + self.cfg.dedup_margin)
        out = []
        f = self.forest
        before = f.filter_tests + f.candidate_tests
        hits = f.match_publication(data.arvs)
        self.work += f.filter_tests + f.candidate_tests - before
        for s in hits:
            if s.sub_id not in rec.delivered:
                rec.delivered.add(s.sub_id)
                out.append(Send(node(s.node_id), data, s.sub_id))
        return out

    def handle_publish(self, msg: PubMsg, now: float) -> List[Send]:
        """Match locally, then always pass the data and its ARVs up to the ZM."""
        expires = min(int(round((now + self.cfg.cache_ttl) * 1000)), NO_EXPIRY - 1)
        data = DataDeliver(msg.pub_id, msg.node_id, self.zone_id, self.grid_id, msg.payload_size,
                           msg.arvs, expires)
        out = self._deliver(data, now)
        out.append(Send(zm(self.zone_id), data))
        return out

    def handle_data(self, data: DataDeliver, now: float) -> List[Send]:
        """Data forwarded down by the zone manager."""
        return self._deliver(data, now)

    def _purge(self, now: float):
        stale = [k for k, r in self.seen.items() if r.remember_until < now]
        for k in stale:
            del self.seen[k]

    def storage_size(self) -> int:
        """Bytes of protocol state: the forest plus remembered data (ARVs + payload)."""
        size = self.forest.storage_size()
        for rec in self.seen.values():
            size += wire_size(rec.data) + rec.data.payload_size + 4 * len(rec.delivered)
        return size

    def filter_size(self) -> int:
        return self.forest.storage_size()


# --- publication cache -----------------------------------------------------------


@dataclass
class CacheEntry:
    data: DataDeliver
    src_zone: int
    src_grid: int
    expiry: float
    hits: int = 0
    order: int = 0
    # grids / zones already holding this data; they serve later interest themselves
    sent: Set[Tuple[str, int]] = field(default_factory=set)


class PubCache:
    """Bounded publication cache; evicts the entry with the fewest matching hits (oldest on ties)."""

    def __init__(self, capacity: int = 1024, ttl: float = 120.0):
        if capacity < 1:
            raise ValueError("cache capacity must be >= 1")
        self.capacity = capacity
        self.ttl = ttl
        self.entries: Dict[int, CacheEntry] = {}
        self._order = 0
        self.evictions = 0

    def __len__(self):
        return len(self.entries)

    def __contains__(self, pub_id):
        return pub_id in self.entries

    def purge(self, now: float):
        for k in [k for k, e in self.entries.items() if e.expiry < now]:
            del self.entries[k]

    def insert(self, data: DataDeliver, now: float, sent: Iterable[Tuple[str, int]] = ()) -> Optional[int]:
        """Cache ``data``; returns the pub_id evicted to make room, if any."""
        self.purge(now)
        if data.pub_id in self.entries:
            self.entries[data.pub_id].sent.update(sent)
            return None
        expiry = min(data.expires, now + self.ttl)
        if expiry < now:
            return None
        evicted = None
        if len(self.entries) >= self.capacity:
            victim = min(self.entries.values(), key=lambda e: (e.hits, e.order))
            evicted = victim.data.pub_id
            del self.entries[evicted]
            self.evictions += 1
        self._order += 1
        self.entries[data.pub_id] = CacheEntry(data, data.zone_id, data.grid_id, expiry, 0,
                                               self._order, set(sent))
        return evicted

    def live(self, now: float) -> List[CacheEntry]:
        self.purge(now)
        return sorted(self.entries.values(), key=lambda e: e.order)

    def storage_size(self) -> int:
        # record: ARVs + source zone/grid ids + expiry + hit count
        return sum(wire_size(e.data) + e.data.payload_size + 16 for e in self.entries.values())


# --- zone manager ------------------------------------------------------------------


@dataclass
class Peer:
    zrsv: ZrsvUpdate
    last_match: float
    neighbor: bool


def announce_signature(publisher: int, arvs) -> Tuple[int, str]:
    return publisher, hashlib.sha1(encode_attrs(arvs)).hexdigest()


class ZoneManager:
    """Per-zone broker: SOF and ZRSV upkeep, inter-zone routing, caching.

    ``neighbors`` are the geographically adjacent zones whose ZRSVs are always
    kept; ``all_zones`` is the announcement fan-out; ``search_zones`` are the
    zones within the active-search radius (empty when the option is off).
    """

    def __init__(self, zone_id: int, grids: Iterable[int], neighbors: Iterable[int],
                 all_zones: Iterable[int], cfg: ProtocolConfig = ProtocolConfig(),
                 search_zones: Iterable[int] = (), host=None):
        self.zone_id = zone_id
        self.grids = set(grids)
        self.neighbors = set(neighbors) - {zone_id}
        self.all_zones = sorted(set(all_zones) - {zone_id})
        self.search_zones = set(search_zones) - {zone_id}
        self.cfg = cfg
        self.host = host
        self.sof: Dict[int, GrsvUpdate] = {}
        self._zversion = 0
        self.own_zrsv = ZrsvUpdate(zone_id, 0, ())
        self.peer_zrsvs: Dict[int, Peer] = {}
        self.pub_cache = PubCache(cfg.cache_capacity, cfg.cache_ttl)
        self.announce_log: Dict[Tuple[int, str], float] = {}
        self.publisher_zones: Dict[int, float] = {}
        self._pushed: Dict[int, int] = {}
        self.forest = SummaryForest(zone_id)
        self.work = 0  # filter comparisons performed, for processing-cost models

    def _matches(self, arvs, entries) -> bool:
        self.work += len(entries)
        return _entry_matches(arvs, entries)

    # ZRSV upkeep ---------------------------------------------------------------

    def compute_zrsv(self) -> Tuple[dict, ...]:
        """Aggregate every SOF entry through a fresh summary forest."""
        forest = SummaryForest(self.zone_id)
        items = [(g, e) for g in sorted(self.sof) for e in self.sof[g].entries]
        self.work += len(items)
        forest.extend(SubMsg(k, g, dict(e)) for k, (g, e) in enumerate(items, 1))
        self.forest = forest
        return forest.entries()

    def relevant_zones(self) -> List[int]:
        zones = set(self.neighbors) | set(self.peer_zrsvs) | set(self.publisher_zones)
        if self.cfg.active_search_radius > 0:
            zones |= self.search_zones
        zones.discard(self.zone_id)
        return sorted(zones)

    def _refresh_zrsv(self) -> List[Send]:
        entries = self.compute_zrsv()
        if entries == self.own_zrsv.entries:
            return []
        self._zversion += 1
        self.own_zrsv = ZrsvUpdate(self.zone_id, self._zversion, entries)
        return [Send(zm(z), self.own_zrsv) for z in self.relevant_zones()]

    def handle_grsv_update(self, msg: GrsvUpdate, now: float) -> List[Send]:
        g = msg.grid_id
        if g not in self.grids:
            raise ProtocolError(f"zone {self.zone_id}: grid {g} is not a member")
        old = self.sof.get(g)
        if old is not None and msg.version <= old.version:
            return []
        old_entries = old.entries if old is not None else ()
        if msg.entries:
            self.sof[g] = msg
        else:
            self.sof.pop(g, None)
        out = self._refresh_zrsv()
        fresh = [e for e in msg.entries if e not in old_entries]
        if fresh:
            for ce in self.pub_cache.live(now):
                if gm(g) in ce.sent:
                    continue
                if self._matches(ce.data.arvs, fresh):
                    ce.hits += 1
                    ce.sent.add(gm(g))
                    out.append(Send(gm(g), ce.data))
        return out

    # publications ----------------------------------------------------------------

    def _to_grids(self, data: DataDeliver, skip: Optional[int] = None) -> List[Send]:
        return [Send(gm(g), data) for g in sorted(self.sof)
                if g != skip and self._matches(data.arvs, self.sof[g].entries)]

    def handle_publish(self, data: DataDeliver, now: float) -> List[Send]:
        """Data from one of this zone's grid managers."""
        out = self._to_grids(data, skip=data.grid_id)
        remote = _relabel(data, zone_id=self.zone_id)
        for z in sorted(self.peer_zrsvs):
            peer = self.peer_zrsvs[z]
            if self._matches(data.arvs, peer.zrsv.entries):
                peer.last_match = now
                out.append(Send(zm(z), remote))
        self.pub_cache.insert(remote, now, [gm(data.grid_id)] + [x.dst for x in out])
        sig = announce_signature(data.publisher, data.arvs)
        last = self.announce_log.get(sig)
        if last is None or now - last >= self.cfg.t_announce:
            self.announce_log[sig] = now
            ann = PubAnnounce(data.pub_id, data.publisher, self.zone_id, dict(data.arvs))
            out.extend(Send(zm(z), ann) for z in self.all_zones)
        return out

    def handle_remote_publish(self, data: DataDeliver, now: float) -> List[Send]:
        """Data multicast here by another zone's manager."""
        src = data.zone_id
        self.publisher_zones[src] = now
        if data.pub_id in self.pub_cache:
            # already forwarded; later interest is served from the cache
            return []
        out = self._to_grids(data)
        self.pub_cache.insert(data, now, [x.dst for x in out])
        if not out and self._pushed.get(src) != self.own_zrsv.version:
            # unwanted traffic: let the sender see our current interests
            self._pushed[src] = self.own_zrsv.version
            out.append(Send(zm(src), self.own_zrsv))
        return out

    def handle_announce(self, msg: PubAnnounce, now: float) -> List[Send]:
        if self.own_zrsv.entries and self._matches(msg.arvs, self.own_zrsv.entries):
            self.publisher_zones[msg.zone_id] = now
            self._pushed[msg.zone_id] = self.own_zrsv.version
            return [Send(zm(msg.zone_id), self.own_zrsv)]
        return []

    def handle_zrsv_update(self, msg: ZrsvUpdate, now: float) -> List[Send]:
        z = msg.zone_id
        if z == self.zone_id:
            return []
        peer = self.peer_zrsvs.get(z)
        if peer is not None and msg.version < peer.zrsv.version:
            return []
        old_entries = peer.zrsv.entries if peer is not None else ()
        neighbor = z in self.neighbors
        if not msg.entries and not neighbor:
            self.peer_zrsvs.pop(z, None)
            return []
        last = now if peer is None else max(peer.last_match, now)
        self.peer_zrsvs[z] = Peer(msg, last, neighbor)
        fresh = [e for e in msg.entries if e not in old_entries]
        out = []
        if fresh:
            for ce in self.pub_cache.live(now):
                # only data published in this zone is served to other zones
                if ce.src_zone != self.zone_id or zm(z) in ce.sent:
                    continue
                if self._matches(ce.data.arvs, fresh):
                    ce.hits += 1
                    ce.sent.add(zm(z))
                    self.peer_zrsvs[z].last_match = now
                    out.append(Send(zm(z), ce.data))
        return out

    def handle(self, msg, now: float) -> List[Send]:
        """Dispatch one inbound message by type."""
        if isinstance(msg, GrsvUpdate):
            return self.handle_grsv_update(msg, now)
        if isinstance(msg, ZrsvUpdate):
            return self.handle_zrsv_update(msg, now)
        if isinstance(msg, PubAnnounce):
            return self.handle_announce(msg, now)
        if isinstance(msg, DataDeliver):
            if msg.zone_id == self.zone_id and msg.grid_id in self.grids:
                return self.handle_publish(msg, now)
            return self.handle_remote_publish(msg, now)
        raise ProtocolError(f"zone manager cannot handle {type(msg).__name__}")

    def zrsv_expire(self, now: float) -> List[int]:
        timeout = self.cfg.zrsv_timeout
        gone = sorted(z for z, p in self.peer_zrsvs.items()
                      if not p.neighbor and p.last_match + timeout < now)
        for z in gone:
            del self.peer_zrsvs[z]
        for z in [z for z, t in self.publisher_zones.items() if t + timeout < now]:
            del self.publisher_zones[z]
        return gone

    # accounting --------------------------------------------------------------------

    def filter_size(self) -> int:
        """Bytes of subscription-filter state: SOF, own ZRSV and peer ZRSVs."""
        size = sum(8 + entries_size(g.entries) for g in self.sof.values())
        size += 8 + entries_size(self.own_zrsv.entries)
        size += sum(16 + entries_size(p.zrsv.entries) for p in self.peer_zrsvs.values())
        return size

    def storage_size(self) -> int:
        return self.filter_size() + self.pub_cache.storage_size() + 12 * len(self.announce_log)

    def purge(self, now: float):
        self.pub_cache.purge(now)
        horizon = now - self.cfg.t_announce
        for k in [k for k, t in self.announce_log.items() if t < horizon]:
            del self.announce_log[k]


def handle_gm(manager: GridManager, msg, now: float) -> List[Send]:
    """Dispatch one inbound message to a grid manager."""
    if isinstance(msg, SubMsg):
        return manager.handle_subscribe(msg, now)
    if isinstance(msg, PubMsg):
        return manager.handle_publish(msg, now)
    if isinstance(msg, DataDeliver):
        return manager.handle_data(msg, now)
    if isinstance(msg, UnsubMsg):
        return manager.handle_unsubscribe(msg.sub_id, now)
    raise ProtocolError(f"grid manager cannot handle {type(msg).__name__}")
