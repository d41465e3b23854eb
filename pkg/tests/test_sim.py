import json
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import stats

from brvst.events import default_registry
from brvst.sim.config import SimConfig, SimConfigError, load, loads
from brvst.sim.engine import World, run
from brvst.sim.geometry import GeometryError, Topology, grid_of, hop_count, route_cost, zone_of
from brvst.sim.ledger import (
    Record, TraceError, load_trace, match_latencies, pair_latencies, run_oracle,
)
from brvst.sim.mobility import RandomWaypoint
from brvst.sim.workload import generate_workload


# --- geometry -----------------------------------------------------------------------


@pytest.mark.parametrize("pos,grid,zone", [((0, 0), (0, 0), (0, 0)), ((260, 10), (1, 0), (0, 0)),
                                           ((999, 999), (3, 3), (1, 1)), ((500, 250), (2, 1), (1, 0))])
def test_grid_and_zone(pos, grid, zone):
    g = grid_of(pos, 250, 1000, 1000)
    assert g == grid and zone_of(g, 2) == zone


def test_far_edge_belongs_to_last_grid():
    assert grid_of((1000, 1000), 250, 1000, 1000) == (3, 3)


def test_outside_area():
    with pytest.raises(GeometryError):
        grid_of((-1, 5), 250, 1000, 1000)


def test_route_cost():
    assert hop_count((0, 0), (200, 0), 80) == 3
    assert hop_count((0, 0), (160, 0), 80) == 2
    assert hop_count((5, 5), (5, 5), 80) == 1
    lat, nbytes = route_cost((0, 0), (200, 0), 100, 80, 0.002, 32)
    assert nbytes == 396 and math.isclose(lat, 0.006)


def test_topology_numbering():
    t = Topology.for_area(1000, 1000, 250, 2)
    assert (t.n_grids, t.n_zones) == (16, 4)
    assert t.zone_grids[0] == [0, 1, 4, 5]
    assert t.zone_of_grid(15) == 3
    assert t.neighbors(0) == [1, 2, 3]
    assert t.grid_center(5) == (375, 375) and t.zone_center(0) == (250, 250)


def test_partial_zones():
    t = Topology(5, 3, 2)
    assert (t.zone_cols, t.zone_rows, t.n_zones) == (3, 2, 6)
    assert sum(len(v) for v in t.zone_grids.values()) == 15
    with pytest.raises(GeometryError):
        Topology.for_area(1000, 900, 250, 2)


# --- workload --------------------------------------------------------------------------


def workload(seed=1, **kw):
    cfg = SimConfig(**kw)
    return generate_workload(np.random.default_rng(seed), cfg, default_registry(cfg.schema_size))


def test_poisson_count_within_three_sigma():
    items = workload(sub_rate=200, pub_rate=0, duration=600)
    assert abs(len(items) - 2000) <= 3 * math.sqrt(2000)


def test_arrivals_are_uniform_in_time():
    t = np.array([w.time for w in workload(pub_rate=200, sub_rate=200, duration=600)])
    counts, _ = np.histogram(t, bins=20, range=(0, 600))
    assert stats.chisquare(counts).pvalue > 0.001


def test_workload_shape():
    items = workload(attrs_min=2, attrs_max=3, pub_points=True)
    reg = default_registry()
    assert [w.time for w in items] == sorted(w.time for w in items)
    for w in items:
        assert 2 <= len(w.ranges) <= 3
        for a, (lo, hi) in w.ranges.items():
            lim = reg[a].limit
            assert lim.min <= lo <= hi <= lim.max
            if w.kind == "pub":
                assert lo == hi and w.size == 256
            else:
                assert w.end > w.time


def test_workload_is_deterministic():
    assert [w.line() for w in workload(3)] == [w.line() for w in workload(3)]
    assert [w.line() for w in workload(3)] != [w.line() for w in workload(4)]


def test_zero_rate():
    assert workload(pub_rate=0, sub_rate=0) == []


# --- mobility ----------------------------------------------------------------------------


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 10 ** 6), st.floats(0.1, 30))
def test_mobility_stays_inside(seed, dt):
    m = RandomWaypoint(50, 300, 200, 1, 9, 5, np.random.default_rng(seed))
    for _ in range(10):
        before = m.pos.copy()
        m.step(dt)
        assert (m.pos >= 0).all() and (m.pos[:, 0] <= 300).all() and (m.pos[:, 1] <= 200).all()
        assert (np.hypot(*(m.pos - before).T) <= 9 * dt + 1e-9).all()


def test_mobility_moves():
    m = RandomWaypoint(20, 1000, 1000, 1, 9, 0, np.random.default_rng(0))
    before = m.pos.copy()
    m.step(1)
    assert (np.hypot(*(m.pos - before).T) >= 1 - 1e-9).all()


# --- configuration ------------------------------------------------------------------------


def test_config_round_trip(tmp_path):
    cfg = SimConfig(grid_side=125, force_level=6, pub_points=True)
    assert loads(cfg.dumps()) == cfg
    p = tmp_path / "c.cfg"
    p.write_text("# comment\nnodes = 50\nalpha=0.8  # trailing\n")
    got = load(p)
    assert got.nodes == 50 and got.alpha == 0.8
    assert got.hash() != SimConfig().hash() and got.hash() == load(p).hash()


@pytest.mark.parametrize("text", ["bogus=1", "nodes", "nodes=abc", "alpha=1.5", "grid_side=300",
                                  "speed_min=0", "attrs_max=20", "pub_points=maybe", "duration=0"])
def test_config_errors(text):
    with pytest.raises(SimConfigError):
        loads(text)


def test_missing_config_file(tmp_path):
    with pytest.raises(SimConfigError):
        load(tmp_path / "nope.cfg")


# --- oracle and latency ----------------------------------------------------------------------


def rec(i, t, ranges, end=math.inf):
    return Record(i, 0, t, end, ranges)


def test_oracle_classifies():
    subs = [rec(1, 0, {0: (0, 50)}), rec(2, 0, {0: (0, 10), 1: (0, 5)}), rec(3, 100, {0: (0, 50)}, end=200)]
    pubs = [rec(1, 10, {0: (20, 30)}), rec(2, 20, {0: (5, 6), 1: (1, 2)})]
    r = run_oracle(pubs, subs, {(1, 1), (1, 2), (2, 2)}, 2, ttl=120, settle=1, horizon=1000)
    assert (r.deliveries, r.true_pos, r.false_pos) == (3, 2, 1)
    # missed: (2,1) and (1,3) (sub 3 appears at 100, inside pub 1's lifetime); (2,3) also in window
    assert r.expected == 5 and r.false_neg == 3
    short = run_oracle(pubs, subs, set(), 2, ttl=50, settle=1, horizon=1000)
    assert short.expected == 3


def test_latency_definitions():
    pubs = [rec(1, 10, {}), rec(2, 40, {})]
    subs = [rec(1, 0, {}), rec(2, 30, {})]
    deliveries = [(10.5, 1, 1), (30.2, 1, 2), (40.1, 2, 1), (40.3, 2, 2)]
    pl, sl = match_latencies(pubs, subs, deliveries)
    assert np.allclose(pl, [0.5, 0.1]) and np.allclose(sl, [10.5, 0.2])
    pd, sd = pair_latencies(pubs, subs, deliveries)
    assert np.allclose(pd, [0.2, 0.1]) and np.allclose(sd, [0.1, 0.2])


# --- engine -----------------------------------------------------------------------------------


SMALL = SimConfig(nodes=80, duration=60, pub_rate=120, sub_rate=120)


@pytest.fixture(scope="module")
def small_run():
    return run(SMALL)


def test_no_publications_no_deliveries():
    led = run(SMALL.replace(pub_rate=0))
    assert led.deliveries == [] and led.oracle.deliveries == 0
    assert led.summary()["latency_mean"] == 0.0


def test_deliveries_are_classified(small_run):
    o = small_run.oracle
    assert o.deliveries == len(small_run.deliveries) == o.true_pos + o.false_pos
    assert o.unsound == 0 and o.deliveries > 0
    assert o.fn_rate < 0.05


def test_summary_fields(small_run):
    s = small_run.summary()
    assert s["publications"] == len(small_run.pubs) and s["deliveries"] == len(small_run.deliveries)
    assert s["latency_mean"] >= s["pair_latency_mean"] > 0
    assert s["total_bytes"] == s["control_bytes"] + s["data_bytes"]
    assert len(small_run.samples) == 6


def test_same_seed_same_bytes(small_run):
    again = run(SMALL)
    assert again.to_csv() == small_run.to_csv()
    assert again.to_json() == small_run.to_json()
    assert run(SMALL.replace(seed=2)).to_csv() != small_run.to_csv()


def test_csv_layout(small_run):
    lines = small_run.to_csv().splitlines()
    assert lines[0] == f"# brvst-ledger v1 config_hash={SMALL.hash()} seed=1"
    assert lines[1].startswith("t,active_subs,brokers")
    assert len(lines) == 2 + 6


def test_every_grid_has_a_host_when_occupied():
    w = World(SimConfig(nodes=60, duration=5))
    w.run()
    grids = w.grids_now()
    for g in set(grids.tolist()):
        h = w.gm_host[g]
        assert h is not None and grids[h] == g


# --- traces -----------------------------------------------------------------------------------


def test_trace_round_trip(small_run):
    text = small_run.to_trace(SMALL.dumps())
    tr = load_trace(text)
    assert tr.config_hash == SMALL.hash() and tr.seed == 1
    assert len(tr.subs) == len(small_run.subs) and len(tr.deliveries) == len(small_run.deliveries)
    assert loads(tr.config_text) == SMALL


@pytest.mark.parametrize("text", ["", "{", "[]", '{"format": "other"}',
                                  '{"format": "brvst-trace/1", "subs": []}'])
def test_trace_errors(text):
    with pytest.raises(TraceError):
        load_trace(text)


def test_trace_with_dangling_delivery(small_run):
    doc = json.loads(small_run.to_trace(SMALL.dumps()))
    doc["deliveries"].append([1.0, 10 ** 6, 1])
    with pytest.raises(TraceError):
        load_trace(json.dumps(doc))
