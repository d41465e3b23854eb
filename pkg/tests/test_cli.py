import json
import subprocess
import sys

import pytest

from brvst.cli import audit_text, main, parse_sweep, UsageError

SMALL = "nodes=60\nduration=30\npub_rate=120\nsub_rate=120\n"


@pytest.fixture
def cfg_file(tmp_path):
    p = tmp_path / "small.cfg"
    p.write_text(SMALL)
    return p


@pytest.fixture
def run_dir(tmp_path, cfg_file):
    out = tmp_path / "run"
    assert main(["run", str(cfg_file), "--out", str(out), "--trace"]) == 0
    return out


def test_run_writes_outputs(run_dir):
    assert {p.name for p in run_dir.iterdir()} == {"ledger.csv", "summary.json", "trace.json"}
    s = json.loads((run_dir / "summary.json").read_text())
    assert s["oracle"]["unsound"] == 0 and s["deliveries"] == s["oracle"]["deliveries"]


def test_run_is_reproducible(tmp_path, cfg_file, run_dir):
    out = tmp_path / "again"
    main(["run", str(cfg_file), "--out", str(out)])
    assert (out / "ledger.csv").read_bytes() == (run_dir / "ledger.csv").read_bytes()
    main(["run", str(cfg_file), "--out", str(out), "--seed", "9"])
    assert (out / "ledger.csv").read_bytes() != (run_dir / "ledger.csv").read_bytes()


def test_run_overrides(tmp_path, cfg_file):
    out = tmp_path / "o"
    assert main(["run", str(cfg_file), "--out", str(out), "--set", "pub_rate=0"]) == 0
    assert json.loads((out / "summary.json").read_text())["publications"] == 0


def test_missing_config_exits_2(tmp_path, capsys):
    assert main(["run", str(tmp_path / "missing.cfg"), "--out", str(tmp_path)]) == 2
    assert "missing.cfg" in capsys.readouterr().err


def test_bad_override_exits_2(tmp_path):
    assert main(["run", "--set", "alpha=7", "--out", str(tmp_path)]) == 2


def test_audit_agrees_with_run(run_dir, tmp_path, capsys):
    out = tmp_path / "audit.json"
    assert main(["audit", str(run_dir / "trace.json"), "--out", str(out)]) == 0
    rep = json.loads(out.read_text())
    run_oracle = json.loads((run_dir / "summary.json").read_text())["oracle"]
    assert rep["agrees_with_run"]
    for k in ("deliveries", "true_pos", "false_pos", "false_neg", "expected"):
        assert rep[k] == run_oracle[k]
    assert set(rep["attributes"]) == {str(i) for i in range(15)}


def test_audit_of_empty_trace(tmp_path, capsys):
    p = tmp_path / "empty.json"
    p.write_text("")
    assert main(["audit", str(p), "--brief"]) == 0
    assert "deliveries=0" in capsys.readouterr().out
    rep = audit_text("")
    assert rep["fp_rate"] == rep["fn_rate"] == 0.0 and rep["deliveries"] == 0


def test_audit_of_corrupt_trace(tmp_path, capsys):
    p = tmp_path / "bad.json"
    p.write_text('{"format": "brvst-trace/1", "subs": [')
    assert main(["audit", str(p)]) == 2
    assert "error" in capsys.readouterr().err


def test_audit_flags_unsound_delivery(run_dir, tmp_path):
    doc = json.loads((run_dir / "trace.json").read_text())
    # pair a publication with a subscription on an attribute it lacks
    pub = doc["pubs"][0]
    sub = next(s for s in doc["subs"] if set(s[4]) - set(pub[4]))
    doc["deliveries"].append([1.0, pub[0], sub[0]])
    p = tmp_path / "t.json"
    p.write_text(json.dumps(doc))
    assert main(["audit", str(p), "--brief"]) == 3


def test_sweep(tmp_path, cfg_file):
    spec = tmp_path / "s.sweep"
    spec.write_text(f"base={cfg_file.name}\nparam=pub_rate\nvalues=60,240\nreps=2\nduration=20\n")
    out = tmp_path / "sw"
    assert main(["sweep", str(spec), "--out", str(out)]) == 0
    lines = (out / "points.csv").read_text().splitlines()
    assert lines[0].startswith("# brvst-sweep param=pub_rate") and len(lines) == 2 + 4
    trends = json.loads((out / "trends.json").read_text())
    assert set(trends["latency_mean"]) >= {"non_increasing", "interior_minimum"}


def test_sweep_with_empty_values_exits_2(tmp_path):
    spec = tmp_path / "s.sweep"
    spec.write_text("param=pub_rate\nvalues=\n")
    assert main(["sweep", str(spec), "--out", str(tmp_path)]) == 2


@pytest.mark.parametrize("text", ["values=1,2", "param=bogus\nvalues=1", "param=nodes\nvalues=x",
                                  "param=nodes\nvalues=1\nreps=0", "param nodes"])
def test_sweep_spec_errors(text):
    with pytest.raises(UsageError):
        parse_sweep(text)


def test_fixtures(tmp_path, cfg_file):
    out = tmp_path / "fx"
    assert main(["fixtures", str(cfg_file), "--out", str(out), "--limit", "5"]) == 0
    wl = (out / "workload.txt").read_text().splitlines()
    ev = (out / "events.txt").read_text().splitlines()
    assert len(wl) == len(ev) == 6 and wl[0].startswith("# brvst-workload")


def test_experiments(capsys):
    assert main(["experiment", "fp", "--n", "2000", "--alphas", "0.8,0.9"]) == 0
    out = capsys.readouterr().out.splitlines()
    assert out[0] == "alpha,pairs,fp_rate,fn_rate,bound" and len(out) == 3
    assert main(["experiment", "equal-level", "--n", "2000", "--level", "6"]) == 0
    assert "fn=0 " in capsys.readouterr().out
    assert main(["experiment", "differential", "--n", "500"]) == 0
    assert "discrepancies=0" in capsys.readouterr().out
    assert main(["experiment", "aggregation", "--n", "300"]) == 0
    assert "update_fraction=" in capsys.readouterr().out


def test_scenario(tmp_path, capsys):
    p = tmp_path / "x.scn"
    p.write_text("config grids=2x1 k=2 cache_ttl=120\n0 pub 1 1 0 0=10..20\n10 sub 1 2 1 0=0..50\n")
    assert main(["scenario", str(p)]) == 0
    assert "deliveries=1 " in capsys.readouterr().out
    p.write_text("0 fly\n")
    assert main(["scenario", str(p)]) == 2


def test_console_script(tmp_path):
    r = subprocess.run([sys.executable, "-m", "brvst.cli", "run", str(tmp_path / "nope")],
                       capture_output=True, text=True)
    assert r.returncode == 2 and r.stderr
