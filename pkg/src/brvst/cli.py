"""Command-line harness: ``brvst run|sweep|audit|fixtures|experiment|scenario``.

Exit codes: 0 success, 1 a sweep point failed, 2 bad input (config, sweep
spec, trace, scenario), 3 a simulation invariant was violated.
"""
from __future__ import annotations

import argparse
import csv
import json
import sys
from dataclasses import dataclass
from pathlib import Path
from typing import List, Optional

import numpy as np

from . import experiments as ex
from .events import format_fixture
from .scenario import ScenarioError, parse_scenario, run_scenario
from .sim import config as simconfig
from .sim.config import SimConfig, SimConfigError
from .sim.engine import SimInvariantError, World, run
from .sim.ledger import TraceError, attribute_disagreement, audit_registry, load_trace, run_oracle

EXIT_OK, EXIT_POINT_FAILED, EXIT_INPUT, EXIT_INVARIANT = 0, 1, 2, 3

SWEEP_METRICS = [
    "latency_mean", "pub_latency_mean", "sub_latency_mean",
    "pair_latency_mean", "pub_pair_latency_mean", "sub_pair_latency_mean",
    "traffic_per_match", "node_storage_mean", "broker_storage_mean",
    "filter_bytes_mean", "naive_filter_bytes_mean", "deliveries", "fp_rate", "fn_rate",
]


class UsageError(Exception):
    """Bad user input; reported on stderr with exit code 2."""


def _metrics(summary: dict) -> dict:
    row = {k: summary[k] for k in SWEEP_METRICS if k in summary}
    oracle = summary.get("oracle") or {}
    row["fp_rate"] = oracle.get("fp_rate", 0.0)
    row["fn_rate"] = oracle.get("fn_rate", 0.0)
    return row


def _config(path: Optional[str], overrides: List[str]) -> SimConfig:
    cfg = simconfig.load(path) if path else SimConfig()
    if overrides:
        cfg = simconfig.loads("\n".join(overrides), cfg)
    return cfg


def _outdir(path: Optional[str], default: str) -> Path:
    out = Path(path or default)
    out.mkdir(parents=True, exist_ok=True)
    return out


# --- run ---------------------------------------------------------------------------


def write_run(led, cfg: SimConfig, out: Path, trace: bool) -> List[Path]:
    files = [out / "ledger.csv", out / "summary.json"]
    files[0].write_text(led.to_csv())
    files[1].write_text(led.to_json())
    if trace:
        files.append(out / "trace.json")
        files[2].write_text(led.to_trace(cfg.dumps()))
    return files


def cmd_run(args) -> int:
    cfg = _config(args.config, args.set)
    if args.seed is not None:
        cfg = cfg.replace(seed=args.seed)
    led = run(cfg)
    for f in write_run(led, cfg, _outdir(args.out, "out"), args.trace):
        print(f)
    s = led.summary()
    print(f"config_hash={cfg.hash()} seed={cfg.seed} deliveries={s['deliveries']} "
          f"fp_rate={s['oracle']['fp_rate']:.4f} fn_rate={s['oracle']['fn_rate']:.4f}")
    return EXIT_OK


# --- sweep -------------------------------------------------------------------------


@dataclass
class SweepSpec:
    base: SimConfig
    param: str
    values: list
    reps: int = 1
    out: Optional[str] = None
    seed: int = 1


def parse_sweep(text: str, root: Path = Path(".")) -> SweepSpec:
    """``key=value`` lines: ``param``, ``values`` (comma list), optional ``base``
    (config path, relative to the spec file), ``reps``, ``out``, ``seed``.  Any
    other key overrides the base config."""
    kv, overrides = {}, []
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, val = line.partition("=")
        if not sep:
            raise UsageError(f"sweep line {lineno}: expected key=value")
        key, val = key.strip(), val.strip()
        if key in ("base", "param", "values", "reps", "out", "seed"):
            kv[key] = val
        else:
            overrides.append(f"{key}={val}")
    if "param" not in kv:
        raise UsageError("sweep spec needs 'param'")
    base = simconfig.load(root / kv["base"]) if kv.get("base") else SimConfig()
    if overrides:
        base = simconfig.loads("\n".join(overrides), base)
    param = kv["param"]
    values = [v.strip() for v in kv.get("values", "").split(",") if v.strip()]
    if not values:
        raise UsageError("sweep spec has an empty value list")
    try:
        parsed = [simconfig.coerce(param, v) for v in values]
        reps, seed = int(kv.get("reps", 1)), int(kv.get("seed", 1))
    except ValueError as e:
        raise UsageError(str(e)) from None
    if reps < 1:
        raise UsageError("reps must be >= 1")
    return SweepSpec(base, param, parsed, reps, kv.get("out"), seed)


def trend_report(means: dict) -> dict:
    return {m: {name: bool(check(col)) for name, check in ex.TREND_CHECKS.items()}
            for m, col in means.items()}


def run_sweep(spec: SweepSpec, out: Path, log=print):
    """Run every (value, rep) point, writing rows as they finish.  Returns
    (per-value aggregate rows, trend report, failures)."""
    rows, failures = [], []
    points = out / "points.csv"
    cols = ["value", "rep", "seed"] + SWEEP_METRICS
    with points.open("w", newline="") as fh:
        w = csv.DictWriter(fh, cols, lineterminator="\n")
        fh.write(f"# brvst-sweep param={spec.param} base_hash={spec.base.hash()} seed={spec.seed}\n")
        w.writeheader()
        for v in spec.values:
            for rep in range(spec.reps):
                seed = spec.seed + rep
                try:
                    cfg = spec.base.replace(**{spec.param: v, "seed": seed})
                    m = _metrics(run(cfg).summary())
                except (SimConfigError, SimInvariantError) as e:
                    failures.append((v, rep, str(e)))
                    log(f"point {spec.param}={v} rep={rep} failed: {e}")
                    continue
                row = {"value": v, "rep": rep, "seed": seed, **m}
                rows.append(row)
                w.writerow(row)
                fh.flush()
    agg = []
    for v in spec.values:
        got = [r for r in rows if r["value"] == v]
        if not got:
            continue
        a = {"value": v, "n": len(got)}
        for m in SWEEP_METRICS:
            xs = np.array([r[m] for r in got], dtype=float)
            a[m + "_mean"] = float(xs.mean())
            a[m + "_std"] = float(xs.std())
        agg.append(a)
    with (out / "summary.csv").open("w", newline="") as fh:
        fh.write(f"# brvst-sweep param={spec.param} base_hash={spec.base.hash()} seed={spec.seed}\n")
        if agg:
            w = csv.DictWriter(fh, list(agg[0]), lineterminator="\n")
            w.writeheader()
            w.writerows(agg)
    trends = {}
    if len(agg) == len(spec.values):
        trends = trend_report({m: [a[m + "_mean"] for a in agg] for m in SWEEP_METRICS})
    (out / "trends.json").write_text(json.dumps(trends, indent=1, sort_keys=True) + "\n")
    return agg, trends, failures


def cmd_sweep(args) -> int:
    path = Path(args.spec)
    try:
        text = path.read_text()
    except OSError as e:
        raise UsageError(f"cannot read sweep spec {path}: {e.strerror}") from None
    spec = parse_sweep(text, path.parent)
    if args.seed is not None:
        spec.seed = args.seed
    out = _outdir(args.out or spec.out, "sweep-out")
    agg, trends, failures = run_sweep(spec, out)
    for a in agg:
        print(f"{spec.param}={a['value']} n={a['n']} latency={a['latency_mean_mean']:.3f} "
              f"pair_latency={a['pair_latency_mean_mean']:.4f} traffic_per_match={a['traffic_per_match_mean']:.0f} "
              f"fp_rate={a['fp_rate_mean']:.4f}")
    print(f"wrote {out}")
    return EXIT_POINT_FAILED if failures else EXIT_OK


# --- audit -------------------------------------------------------------------------


def audit_text(text: str, detail: bool = True) -> dict:
    """Recompute the oracle verdict for a trace.  An empty document is an
    empty trace."""
    if not text.strip():
        return {"deliveries": 0, "true_pos": 0, "false_pos": 0, "false_neg": 0, "expected": 0,
                "unsound": 0, "fp_rate": 0.0, "fn_rate": 0.0, "attributes": {}, "agrees_with_run": True}
    tr = load_trace(text)
    try:
        cfg = simconfig.loads(tr.config_text)
    except SimConfigError as e:
        raise TraceError(f"trace config: {e}") from None
    reg = audit_registry(cfg.schema_size, cfg.arv_config())
    rep = run_oracle(tr.pubs, tr.subs, [(p, s) for _, p, s in tr.deliveries], max(reg.ids) + 1,
                     cfg.cache_ttl, cfg.settle, cfg.duration, registry=reg)
    out = rep.as_dict()
    if detail:
        out["attributes"] = {str(a): v for a, v in attribute_disagreement(tr.pubs, tr.subs, reg).items()}
    if tr.oracle is not None:
        keys = ("deliveries", "true_pos", "false_pos", "false_neg", "expected")
        out["agrees_with_run"] = all(tr.oracle.get(k) == out[k] for k in keys)
    return out


def cmd_audit(args) -> int:
    try:
        text = Path(args.trace_path).read_text()
    except OSError as e:
        raise UsageError(f"cannot read trace {args.trace_path}: {e.strerror}") from None
    rep = audit_text(text, detail=not args.brief)
    doc = json.dumps(rep, indent=1, sort_keys=True) + "\n"
    if args.out:
        Path(args.out).write_text(doc)
    print(f"fp_rate={rep['fp_rate']:.4f} fn_rate={rep['fn_rate']:.4f} deliveries={rep['deliveries']} "
          f"missed={rep['false_neg']} unsound={rep['unsound']}")
    if not args.out:
        sys.stdout.write(doc)
    return EXIT_INVARIANT if rep["unsound"] else EXIT_OK


# --- fixtures ------------------------------------------------------------------------


def cmd_fixtures(args) -> int:
    """Write the run's workload (timed lines) and its events as a fixture file."""
    cfg = _config(args.config, args.set)
    if args.seed is not None:
        cfg = cfg.replace(seed=args.seed)
    world = World(cfg)
    items = world.workload[: args.limit] if args.limit else world.workload
    out = _outdir(args.out, "fixtures")
    head = f"# brvst-workload config_hash={cfg.hash()} seed={cfg.seed}\n"
    (out / "workload.txt").write_text(head + "".join(w.line() + "\n" for w in items))
    reg = world.registry
    events = [reg.subscription(w.ident, w.node, w.ranges) if w.kind == "sub"
              else reg.publication(w.ident, w.node, w.ranges, w.size) for w in items]
    (out / "events.txt").write_text(head + format_fixture(events))
    print(out / "workload.txt")
    print(out / "events.txt")
    return EXIT_OK


# --- experiments -----------------------------------------------------------------------


def cmd_experiment(args) -> int:
    seed = 7 if args.seed is None else args.seed
    if args.name == "fp":
        alphas = [float(a) for a in args.alphas.split(",")]
        reps = ex.fp_sweep(alphas, n=args.n or 100_000, seed=seed)
        print("alpha,pairs,fp_rate,fn_rate,bound")
        for r in reps:
            print(f"{r.alpha},{r.pairs},{r.fp_rate:.6f},{r.fn_rate:.6f},{1.5 * (1 - r.alpha):.6f}")
    elif args.name == "equal-level":
        import random
        from .arv import ArvConfig
        from .events import default_registry
        pairs = ex.sample_pairs(random.Random(seed), default_registry(), args.n or 100_000)
        r = ex.arv_accuracy(ArvConfig(force_level=args.level), pairs)
        print(f"level={args.level} pairs={r.pairs} fn={r.false_neg} fn_rate={r.fn_rate:.6f} fp_rate={r.fp_rate:.6f}")
    elif args.name == "differential":
        r = ex.forest_differential(args.n or 10_000, seed=seed)
        print(f"operations={r.operations} matches={r.matches_checked} discrepancies={r.discrepancies}")
        if r.first_discrepancy:
            print(r.first_discrepancy)
            return EXIT_INVARIANT
    elif args.name == "aggregation":
        r = ex.aggregation_experiment(args.n or 2000, seed=seed)
        print(f"changes={r.changes} grsv_updates={r.grsv_updates} update_fraction={r.update_fraction:.4f} "
              f"covered={r.covered_fraction:.3f} storage_ratio={r.storage_ratio:.4f}")
    return EXIT_OK


# --- scenario ----------------------------------------------------------------------------


def cmd_scenario(args) -> int:
    try:
        text = Path(args.path).read_text()
    except OSError as e:
        raise UsageError(f"cannot read scenario {args.path}: {e.strerror}") from None
    res = run_scenario(parse_scenario(text))
    for t, pub, sub, node in res.deliveries:
        print(f"{t:.3f} deliver pub={pub} sub={sub} node={node}")
    print(f"deliveries={len(res.deliveries)} messages={len(res.messages)}")
    return EXIT_OK


# --- entry ---------------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="brvst", description="Range-vector pub/sub overlay simulator.")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, config=True):
        sp.add_argument("--seed", type=int, default=None)
        sp.add_argument("--out", default=None)
        if config:
            sp.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                            help="override one config key (repeatable)")

    r = sub.add_parser("run", help="run one simulation")
    r.add_argument("config", nargs="?", default=None)
    r.add_argument("--trace", action="store_true", help="also write trace.json for audit")
    common(r)
    r.set_defaults(func=cmd_run)

    s = sub.add_parser("sweep", help="sweep one config parameter")
    s.add_argument("spec")
    common(s, config=False)
    s.set_defaults(func=cmd_sweep)

    a = sub.add_parser("audit", help="re-run the exact-match oracle on a trace")
    a.add_argument("trace_path")
    a.add_argument("--out", default=None)
    a.add_argument("--brief", action="store_true", help="skip per-attribute disagreement")
    a.set_defaults(func=cmd_audit)

    f = sub.add_parser("fixtures", help="write a run's workload as fixture files")
    f.add_argument("config", nargs="?", default=None)
    f.add_argument("--limit", type=int, default=0)
    common(f)
    f.set_defaults(func=cmd_fixtures)

    e = sub.add_parser("experiment", help="run an ARV or forest experiment")
    e.add_argument("name", choices=["fp", "equal-level", "differential", "aggregation"])
    e.add_argument("--n", type=int, default=0)
    e.add_argument("--alphas", default="0.7,0.8,0.9,0.95")
    e.add_argument("--level", type=int, default=8)
    e.add_argument("--seed", type=int, default=None)
    e.set_defaults(func=cmd_experiment)

    c = sub.add_parser("scenario", help="run a scripted scenario file")
    c.add_argument("path")
    c.set_defaults(func=cmd_scenario)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (UsageError, SimConfigError, TraceError, ScenarioError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_INPUT
    except SimInvariantError as e:
        print(f"invariant violated: {e}", file=sys.stderr)
        return EXIT_INVARIANT


if __name__ == "__main__":
    sys.exit(main())
