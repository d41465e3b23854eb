"""Run metrics, the exact-match oracle and the on-disk ledger formats.

CSV ledger (``LEDGER_VERSION``): a ``#`` header line carrying the config hash
and seed, a column line, then one row per storage sample::

    t, active_subs, brokers, broker_storage, nonbroker_storage, node_storage,
    filter_bytes, naive_filter_bytes, control_bytes, data_bytes, deliveries, handoffs

Storage columns are per-node means in bytes; traffic and delivery columns are
cumulative.  The JSON summary holds run totals and the oracle verdict; a trace
(JSON) holds the full workload and every first delivery so that the oracle can
be re-run offline.
"""
from __future__ import annotations

import csv
import io
import json
from collections import Counter
from dataclasses import dataclass, field
from typing import Dict, Iterable, List, Optional, Tuple

import numpy as np

from ..arv import arv_match
from ..events import SchemaRegistry, default_registry

LEDGER_VERSION = 1
TRACE_FORMAT = "brvst-trace/1"

CSV_COLUMNS = [
    "t", "active_subs", "brokers", "broker_storage", "nonbroker_storage", "node_storage",
    "filter_bytes", "naive_filter_bytes", "control_bytes", "data_bytes", "deliveries", "handoffs",
]

CONTROL_KINDS = ("SUB", "UNSUB", "GRSV_UPDATE", "ZRSV_UPDATE", "PUB_ANNOUNCE", "HANDOFF")


class TraceError(ValueError):
    pass


@dataclass
class Record:
    """One subscription or publication as the oracle sees it."""

    ident: int
    node: int
    time: float
    end: float
    ranges: Dict[int, Tuple[float, float]]


@dataclass
class OracleReport:
    deliveries: int = 0
    true_pos: int = 0
    false_pos: int = 0
    false_neg: int = 0
    expected: int = 0
    unsound: int = 0   # deliveries whose ARVs do not match (must stay 0)

    @property
    def fp_rate(self) -> float:
        return self.false_pos / self.deliveries if self.deliveries else 0.0

    @property
    def fn_rate(self) -> float:
        return self.false_neg / self.expected if self.expected else 0.0

    def as_dict(self) -> dict:
        return {
            "deliveries": self.deliveries, "true_pos": self.true_pos, "false_pos": self.false_pos,
            "false_neg": self.false_neg, "expected": self.expected, "unsound": self.unsound,
            "fp_rate": self.fp_rate, "fn_rate": self.fn_rate,
        }


def _bounds(records: List[Record], n_attrs: int, absent_lo: float, absent_hi: float):
    lo = np.full((len(records), n_attrs), absent_lo)
    hi = np.full((len(records), n_attrs), absent_hi)
    for i, r in enumerate(records):
        for a, (x, y) in r.ranges.items():
            lo[i, a], hi[i, a] = x, y
    return lo, hi


def exact_pairs(pubs: List[Record], subs: List[Record], n_attrs: int) -> Dict[int, np.ndarray]:
    """pub_id -> indices into ``subs`` whose real intervals contain the publication's."""
    if not subs:
        return {p.ident: np.empty(0, dtype=int) for p in pubs}
    # a missing subscription attribute constrains nothing; a missing publication
    # attribute fails every subscription that names it
    s_lo, s_hi = _bounds(subs, n_attrs, -np.inf, np.inf)
    p_lo, p_hi = _bounds(pubs, n_attrs, -np.inf, np.inf)
    out = {}
    for i, p in enumerate(pubs):
        ok = np.all((s_lo <= p_lo[i]) & (p_hi[i] <= s_hi), axis=1)
        out[p.ident] = np.flatnonzero(ok)
    return out


def _contains(s: Record, p: Record) -> bool:
    for a, (lo, hi) in s.ranges.items():
        r = p.ranges.get(a)
        if r is None or not (lo <= r[0] and r[1] <= hi):
            return False
    return True


def run_oracle(pubs: List[Record], subs: List[Record], delivered: Iterable[Tuple[int, int]],
               n_attrs: int, ttl: float, settle: float, horizon: float,
               registry: Optional[SchemaRegistry] = None) -> OracleReport:
    """Classify every delivery and find every missed match by brute force.

    A match counts as missed when the two were alive together for at least
    ``settle`` seconds inside the publication's cache lifetime (and before
    ``horizon``) yet no delivery happened.  With a registry, each delivery is
    also re-checked on the ARVs.
    """
    pub_by = {p.ident: p for p in pubs}
    sub_by = {s.ident: s for s in subs}
    rep = OracleReport()
    delivered = set(delivered)
    for pid, sid in sorted(delivered):
        p, s = pub_by[pid], sub_by[sid]
        rep.deliveries += 1
        if _contains(s, p):
            rep.true_pos += 1
        else:
            rep.false_pos += 1
        if registry is not None and not _arv_ok(registry, p, s):
            rep.unsound += 1
    if not pubs or not subs:
        return rep
    ts = np.array([s.time for s in subs])
    te = np.array([s.end for s in subs])
    sid_arr = np.array([s.ident for s in subs])
    for pid, idx in exact_pairs(pubs, subs, n_attrs).items():
        if len(idx) == 0:
            continue
        tp = pub_by[pid].time
        start = np.maximum(ts[idx], tp) + settle
        stop = np.minimum(np.minimum(te[idx], tp + ttl), horizon)
        for sid in sid_arr[idx[start <= stop]].tolist():
            rep.expected += 1
            if (pid, sid) not in delivered:
                rep.false_neg += 1
    return rep


def _arvs(registry: SchemaRegistry, r: Record):
    return {a: registry.instance(a, lo, hi).arv for a, (lo, hi) in r.ranges.items()}


def _arv_ok(registry, p: Record, s: Record) -> bool:
    pa, sa = _arvs(registry, p), _arvs(registry, s)
    return all(a in pa and arv_match(pa[a], v) for a, v in sa.items())


def attribute_disagreement(pubs: List[Record], subs: List[Record], registry: SchemaRegistry) -> Dict[int, dict]:
    """Per attribute: over (p, s) pairs that both carry it, how often the ARV test
    and real containment disagree."""
    out = {}
    cache = {}

    def arv(r, a, kind):
        key = (kind, r.ident, a)
        if key not in cache:
            cache[key] = registry.instance(a, *r.ranges[a]).arv
        return cache[key]

    for a in registry.ids:
        ps = [p for p in pubs if a in p.ranges]
        ss = [s for s in subs if a in s.ranges]
        pairs = extra = missing = 0
        for s in ss:
            slo, shi = s.ranges[a]
            sv = arv(s, a, "s")
            for p in ps:
                plo, phi = p.ranges[a]
                real = slo <= plo and phi <= shi
                bits = arv_match(arv(p, a, "p"), sv)
                pairs += 1
                extra += bits and not real
                missing += real and not bits
        out[a] = {"pairs": pairs, "arv_only": extra, "exact_only": missing,
                  "disagreement": (extra + missing) / pairs if pairs else 0.0}
    return out


def pair_latencies(pubs: List[Record], subs: List[Record], deliveries: Iterable[Tuple[float, int, int]]):
    """Per-message network matching delay.

    For each delivered pair the clock starts when both sides exist, i.e. at the
    later of the two issue times; a message's value is its earliest such pair.
    Returns (pub delays, sub delays).
    """
    pt = {p.ident: p.time for p in pubs}
    st = {s.ident: s.time for s in subs}
    best_p: Dict[int, float] = {}
    best_s: Dict[int, float] = {}
    for t, pid, sid in deliveries:
        lat = t - max(pt[pid], st[sid])
        if lat < best_p.get(pid, float("inf")):
            best_p[pid] = lat
        if lat < best_s.get(sid, float("inf")):
            best_s[sid] = lat
    return [best_p[k] for k in sorted(best_p)], [best_s[k] for k in sorted(best_s)]


def match_latencies(pubs: List[Record], subs: List[Record], deliveries: Iterable[Tuple[float, int, int]]):
    """Per-message matching latency: issue time to first delivery.

    A request may be matched by a counterpart issued later, so this includes
    the wait for one to appear and shrinks as the counterpart rate grows.
    Messages that never match are left out.  Returns (pub latencies, sub
    latencies).
    """
    pt = {p.ident: p.time for p in pubs}
    st = {s.ident: s.time for s in subs}
    first_p: Dict[int, float] = {}
    first_s: Dict[int, float] = {}
    for t, pid, sid in deliveries:
        if t < first_p.get(pid, float("inf")):
            first_p[pid] = t
        if t < first_s.get(sid, float("inf")):
            first_s[sid] = t
    return ([first_p[k] - pt[k] for k in sorted(first_p)],
            [first_s[k] - st[k] for k in sorted(first_s)])


@dataclass
class MetricsLedger:
    config_hash: str
    seed: int
    pubs: List[Record] = field(default_factory=list)
    subs: List[Record] = field(default_factory=list)
    deliveries: List[Tuple[float, int, int]] = field(default_factory=list)  # first per pair
    duplicates: int = 0
    traffic: Counter = field(default_factory=Counter)   # kind -> bytes
    messages: Counter = field(default_factory=Counter)  # kind -> count
    samples: List[dict] = field(default_factory=list)
    handoffs: int = 0
    handoff_bytes: int = 0
    saturated: int = 0
    rerouted: int = 0
    oracle: Optional[OracleReport] = None
    extra: dict = field(default_factory=dict)

    # derived ---------------------------------------------------------------

    @property
    def control_bytes(self) -> int:
        return sum(v for k, v in self.traffic.items() if k in CONTROL_KINDS)

    @property
    def data_bytes(self) -> int:
        return sum(v for k, v in self.traffic.items() if k not in CONTROL_KINDS)

    @property
    def total_bytes(self) -> int:
        return sum(self.traffic.values())

    def latencies(self):
        return match_latencies(self.pubs, self.subs, self.deliveries)

    def summary(self) -> dict:
        pl, sl = self.latencies()
        both = pl + sl
        pd, sd = pair_latencies(self.pubs, self.subs, self.deliveries)
        n_match = len(self.deliveries)

        def mean(xs):
            return float(np.mean(xs)) if len(xs) else 0.0

        def col(name):
            return mean([r[name] for r in self.samples])

        out = {
            "ledger_version": LEDGER_VERSION,
            "config_hash": self.config_hash,
            "seed": self.seed,
            "publications": len(self.pubs),
            "subscriptions": len(self.subs),
            "deliveries": n_match,
            "duplicate_deliveries": self.duplicates,
            "pub_latency_mean": mean(pl),
            "sub_latency_mean": mean(sl),
            "latency_mean": mean(both),
            "pub_pair_latency_mean": mean(pd),
            "sub_pair_latency_mean": mean(sd),
            "pair_latency_mean": mean(pd + sd),
            "pubs_matched": len(pl),
            "subs_matched": len(sl),
            "control_bytes": self.control_bytes,
            "data_bytes": self.data_bytes,
            "total_bytes": self.total_bytes,
            "traffic_per_match": self.total_bytes / n_match if n_match else 0.0,
            "traffic_by_kind": dict(sorted(self.traffic.items())),
            "messages_by_kind": dict(sorted(self.messages.items())),
            "broker_storage_mean": col("broker_storage"),
            "nonbroker_storage_mean": col("nonbroker_storage"),
            "node_storage_mean": col("node_storage"),
            "filter_bytes_mean": col("filter_bytes"),
            "naive_filter_bytes_mean": col("naive_filter_bytes"),
            "handoffs": self.handoffs,
            "handoff_bytes": self.handoff_bytes,
            "saturated_arvs": self.saturated,
            "rerouted": self.rerouted,
        }
        if self.oracle is not None:
            out["oracle"] = self.oracle.as_dict()
        out.update(self.extra)
        return out

    # output ----------------------------------------------------------------

    def header(self) -> str:
        return f"# brvst-ledger v{LEDGER_VERSION} config_hash={self.config_hash} seed={self.seed}"

    def to_csv(self) -> str:
        buf = io.StringIO()
        buf.write(self.header() + "\n")
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(CSV_COLUMNS)
        for row in self.samples:
            w.writerow([_fmt(row[c]) for c in CSV_COLUMNS])
        return buf.getvalue()

    def to_json(self) -> str:
        return json.dumps(self.summary(), indent=2, sort_keys=True) + "\n"

    def to_trace(self, config_text: str) -> str:
        def rec(r: Record):
            return [r.ident, r.node, r.time, r.end if np.isfinite(r.end) else None,
                    {str(a): list(v) for a, v in sorted(r.ranges.items())}]

        doc = {
            "format": TRACE_FORMAT,
            "config_hash": self.config_hash,
            "seed": self.seed,
            "config": config_text,
            "subs": [rec(s) for s in self.subs],
            "pubs": [rec(p) for p in self.pubs],
            "deliveries": [list(d) for d in self.deliveries],
        }
        if self.oracle is not None:
            doc["oracle"] = self.oracle.as_dict()
        return json.dumps(doc, sort_keys=True) + "\n"


def _fmt(x) -> str:
    if isinstance(x, float):
        return f"{x:.6f}"
    return str(x)


@dataclass
class Trace:
    config_text: str
    config_hash: str
    seed: int
    subs: List[Record]
    pubs: List[Record]
    deliveries: List[Tuple[float, int, int]]
    oracle: Optional[dict] = None


def load_trace(text: str) -> Trace:
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as e:
        raise TraceError(f"trace is not valid JSON: {e}") from None
    if not isinstance(doc, dict) or doc.get("format") != TRACE_FORMAT:
        raise TraceError(f"not a {TRACE_FORMAT} document")

    def rec(row):
        ident, node, t, end, ranges = row
        return Record(int(ident), int(node), float(t), float("inf") if end is None else float(end),
                      {int(a): (float(v[0]), float(v[1])) for a, v in ranges.items()})

    try:
        subs = [rec(r) for r in doc["subs"]]
        pubs = [rec(r) for r in doc["pubs"]]
        deliveries = [(float(t), int(p), int(s)) for t, p, s in doc["deliveries"]]
        trace = Trace(str(doc["config"]), str(doc["config_hash"]), int(doc["seed"]),
                      subs, pubs, deliveries, doc.get("oracle"))
    except (KeyError, TypeError, ValueError) as e:
        raise TraceError(f"malformed trace: {e!r}") from None
    sub_ids = {s.ident for s in subs}
    pub_ids = {p.ident for p in pubs}
    for _, p, s in deliveries:
        if p not in pub_ids or s not in sub_ids:
            raise TraceError(f"delivery ({p}, {s}) refers to an unknown message")
    return trace


def audit_registry(schema_size: int, arv_cfg) -> SchemaRegistry:
    return default_registry(schema_size, arv_cfg)
