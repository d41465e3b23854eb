"""Experiment recipes: ARV accuracy, forest differential, aggregation, sweeps."""
from __future__ import annotations

import random
from dataclasses import dataclass
from typing import Callable, Dict, List, Optional, Sequence

import numpy as np

from .arv import ArvConfig, coverage
from .events import SchemaRegistry, default_registry, exact_match, match_event
from .forest import SummaryForest
from .overlay import GridManager, ProtocolConfig, ZoneManager
from .sim.baseline import NaiveZone
from .wire import sub_message


# --- ARV accuracy -----------------------------------------------------------------


@dataclass
class AccuracyReport:
    alpha: float
    pairs: int
    true_pos: int
    false_pos: int
    false_neg: int
    true_neg: int

    @property
    def fp_rate(self) -> float:
        """Share of ARV matches that are not real matches."""
        m = self.true_pos + self.false_pos
        return self.false_pos / m if m else 0.0

    @property
    def fn_rate(self) -> float:
        """Share of real matches the ARVs miss."""
        m = self.true_pos + self.false_neg
        return self.false_neg / m if m else 0.0


def _draw_ranges(rng: random.Random, registry: SchemaRegistry, attrs, point=False):
    out = {}
    for a in attrs:
        lim = registry[a].limit
        if point:
            v = rng.uniform(lim.min, lim.max)
            out[a] = (v, v)
        else:
            x, y = rng.uniform(lim.min, lim.max), rng.uniform(lim.min, lim.max)
            out[a] = (min(x, y), max(x, y))
    return out


def _attr_set(rng: random.Random, ids, lo=1, hi=3):
    return sorted(rng.sample(ids, rng.randint(lo, hi)))


def sample_pairs(rng: random.Random, registry: SchemaRegistry, n: int, attrs_max: int = 3,
                 pub_points: bool = False):
    """``n`` (publication, subscription) range pairs drawn like the simulator's workload.

    Both attribute sets are uniform 1..attrs_max subsets of the schema; pairs
    where the publication lacks one of the subscription's attributes are
    redrawn, since they can never match under either test.
    """
    ids = registry.ids
    out = []
    while len(out) < n:
        s_attrs = _attr_set(rng, ids, 1, attrs_max)
        p_attrs = _attr_set(rng, ids, 1, attrs_max)
        if not set(s_attrs) <= set(p_attrs):
            continue
        out.append((_draw_ranges(rng, registry, p_attrs, pub_points), _draw_ranges(rng, registry, s_attrs)))
    return out


def arv_accuracy(cfg: ArvConfig, pairs, registry: Optional[SchemaRegistry] = None) -> AccuracyReport:
    """Confusion counts of the ARV test against real containment over ``pairs``."""
    reg = (registry or default_registry()).with_config(cfg)
    tp = fp = fn = tn = 0
    for i, (pr, sr) in enumerate(pairs):
        p = reg.publication(i, 0, pr)
        s = reg.subscription(i, 0, sr)
        bits = match_event(p, s)
        real = exact_match(p, s)
        if bits and real:
            tp += 1
        elif bits:
            fp += 1
        elif real:
            fn += 1
        else:
            tn += 1
    return AccuracyReport(cfg.alpha, len(pairs), tp, fp, fn, tn)


def fp_sweep(alphas: Sequence[float], n: int = 100_000, seed: int = 7, max_level: int = 16) -> List[AccuracyReport]:
    """Event-level FP rate per alpha, on the same pairs for every alpha."""
    reg = default_registry()
    pairs = sample_pairs(random.Random(seed), reg, n)
    return [arv_accuracy(ArvConfig(alpha=a, max_level=max_level), pairs, reg) for a in alphas]


# --- forest differential -----------------------------------------------------------


@dataclass
class DifferentialReport:
    operations: int
    matches_checked: int
    discrepancies: int
    first_discrepancy: Optional[str] = None


def forest_differential(n_ops: int = 10_000, seed: int = 11, alpha: float = 0.9,
                        registry: Optional[SchemaRegistry] = None, check_every: int = 0) -> DifferentialReport:
    """Random interleaved add/remove/match against a flat brute-force store."""
    rng = random.Random(seed)
    reg = (registry or default_registry()).with_config(ArvConfig(alpha=alpha))
    ids = reg.ids
    forest = SummaryForest()
    flat: Dict[int, object] = {}
    next_sub = next_pub = 0
    checked = bad = 0
    first = None
    for op in range(n_ops):
        r = rng.random()
        if r < 0.4 or not flat:
            next_sub += 1
            s = reg.subscription(next_sub, rng.randrange(400), _draw_ranges(rng, reg, _attr_set(rng, ids)))
            forest.add_subscription(s)
            flat[s.sub_id] = s
        elif r < 0.65:
            sid = rng.choice(sorted(flat))
            forest.remove_subscription(sid)
            del flat[sid]
        else:
            next_pub += 1
            p = reg.publication(next_pub, 0, _draw_ranges(rng, reg, _attr_set(rng, ids)))
            got = {s.sub_id for s in forest.match_publication(p)}
            want = {sid for sid, s in flat.items() if match_event(p, s)}
            checked += 1
            if got != want:
                bad += 1
                if first is None:
                    first = f"op {op}: pub {p.pub_id} forest-only {sorted(got - want)} flat-only {sorted(want - got)}"
        if check_every and op % check_every == 0:
            forest.check_invariants()
    return DifferentialReport(n_ops, checked, bad, first)


# --- aggregation stability -----------------------------------------------------------


@dataclass
class AggregationReport:
    changes: int
    grsv_updates: int
    covered_fraction: float
    brvst_bytes: float
    naive_bytes: float

    @property
    def update_fraction(self) -> float:
        return self.grsv_updates / self.changes if self.changes else 0.0

    @property
    def storage_ratio(self) -> float:
        return self.brvst_bytes / self.naive_bytes if self.naive_bytes else 0.0


def _inside(rng: random.Random, registry, summary):
    """Ranges drawn inside the coverage of each summary ARV."""
    out = {}
    for a, v in summary.items():
        lim = registry[a].limit
        iv = rng.choice(coverage(v, lim))
        x, y = rng.uniform(iv.lo, iv.hi), rng.uniform(iv.lo, iv.hi)
        out[a] = (min(x, y), max(x, y))
    return out


def aggregation_experiment(n_subs: int = 2000, covered: float = 0.8, grids: int = 4, seed: int = 5,
                           churn: float = 0.0, alpha: float = 0.9) -> AggregationReport:
    """Feed one zone a workload where a ``covered`` share of new subscriptions
    falls inside an existing root summary of its grid.

    Counts how many subscription changes make a grid manager emit a GRSV
    update, and compares broker filter storage (every GM plus the ZM) with a
    flat store that keeps each subscription at both levels.  ``churn`` is the
    probability that a step removes a random live subscription instead.
    """
    rng = random.Random(seed)
    reg = default_registry().with_config(ArvConfig(alpha=alpha))
    ids = reg.ids
    cfg = ProtocolConfig()
    gms = [GridManager(g, 0, cfg) for g in range(grids)]
    zmgr = ZoneManager(0, range(grids), (), (), cfg)
    naive = NaiveZone(range(grids))
    live: Dict[int, int] = {}
    changes = updates = inside = adds = 0
    brvst_samples, naive_samples = [], []
    sid = 0
    for step in range(n_subs):
        if live and rng.random() < churn:
            victim = rng.choice(sorted(live))
            g = live.pop(victim)
            out = gms[g].handle_unsubscribe(victim, step)
            naive.remove(g, victim)
        else:
            g = rng.randrange(grids)
            trees = gms[g].forest.trees
            sid += 1
            if trees and rng.random() < covered:
                tree = rng.choice(trees)
                ranges = _inside(rng, reg, tree.summary)
                extra = [a for a in _attr_set(rng, ids, 0, 1) if a not in ranges]
                ranges.update(_draw_ranges(rng, reg, extra))
                inside += 1
            else:
                ranges = _draw_ranges(rng, reg, _attr_set(rng, ids))
            s = reg.subscription(sid, sid, ranges)
            out = gms[g].handle_subscribe(sub_message(s), step)
            naive.add(g, s)
            live[sid] = g
            adds += 1
        changes += 1
        for o in out:
            if o.dst[0] == "zm":
                updates += 1
                zmgr.handle(o.msg, step)
        brvst_samples.append(sum(m.filter_size() for m in gms) + zmgr.filter_size())
        naive_samples.append(naive.broker_storage())
    return AggregationReport(changes, updates, inside / adds if adds else 0.0,
                             float(np.mean(brvst_samples)), float(np.mean(naive_samples)))


# --- trend detectors -------------------------------------------------------------------


def inversions(values: Sequence[float], tol: float = 0.0) -> int:
    """Number of adjacent steps that go up by more than ``tol``."""
    return sum(1 for a, b in zip(values, values[1:]) if b > a + tol)


def non_increasing(values: Sequence[float], max_inversions: int = 0, tol: float = 0.0) -> bool:
    return inversions(values, tol) <= max_inversions


def strictly_decreasing(values: Sequence[float]) -> bool:
    return all(b < a for a, b in zip(values, values[1:]))


def interior_minimum(values: Sequence[float]) -> bool:
    """The smallest value sits strictly between the two ends."""
    if len(values) < 3:
        return False
    i = int(np.argmin(values))
    return 0 < i < len(values) - 1


TREND_CHECKS: Dict[str, Callable[[Sequence[float]], bool]] = {
    "non_increasing": lambda v: non_increasing(v, 0),
    "non_increasing_1": lambda v: non_increasing(v, 1),
    "strictly_decreasing": strictly_decreasing,
    "interior_minimum": interior_minimum,
}
