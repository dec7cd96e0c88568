import json
from importlib import resources

import pytest

from qftlab import cli
from qftlab.scaling_limit import Record

BUNDLED = resources.files("qftlab") / "configs" / "free_field.json"

SMALL = {
    "d": 2, "mass": 1.0, "seed": 7, "k_list": [1, 2], "mode": "exact",
    "corpus": [{"id": "unit", "terms": [{"amplitude": 1.0, "center": [0.0, 0.0], "width": 1.0}]}],
}


def write(tmp_path, cfg, name="cfg.json"):
    p = tmp_path / name
    p.write_text(json.dumps(cfg))
    return p


def test_bundled_config_runs_and_is_deterministic(tmp_path):
    assert cli.main(["scaling-limit", "--config", str(BUNDLED), "--out", str(tmp_path / "a")]) == 0
    assert cli.main(["scaling-limit", "--config", str(BUNDLED), "--out", str(tmp_path / "b"),
                     "--threads", "2"]) == 0
    a = (tmp_path / "a" / "report.jsonl").read_bytes()
    assert a == (tmp_path / "b" / "report.jsonl").read_bytes()
    rows = cli.read_report(tmp_path / "a" / "report.jsonl")
    assert {r["k"] for r in rows if r["k"] is not None} == {1.0, 2.0, 4.0}
    assert all(r["tag"] in ("deterministic", "mc") for r in rows)
    assert all((r["tag"] == "mc") == (r["stderr"] is not None) for r in rows)


def test_negative_mass_is_config_error(tmp_path, capsys):
    cfg = dict(SMALL, mass=-1.0)
    assert cli.run("charfunc", write(tmp_path, cfg), tmp_path / "out") == 2
    assert "mass" in capsys.readouterr().err


def test_unknown_key_is_config_error(tmp_path, capsys):
    cfg = dict(SMALL, massive=True)
    assert cli.run("charfunc", write(tmp_path, cfg), tmp_path / "out") == 2
    assert "massive" in capsys.readouterr().err


@pytest.mark.parametrize("bad", [
    {"k_list": [2, 1]},
    {"cutoff": {"factor": 2}},
    {"corpus": [{"id": "x", "terms": [{"amplitude": 1.0, "center": [0.0], "width": 1.0}]}]},
])
def test_other_config_errors(tmp_path, bad):
    assert cli.run("charfunc", write(tmp_path, dict(SMALL, **bad)), tmp_path / "out") == 2


def test_missing_config_file(tmp_path):
    assert cli.run("charfunc", tmp_path / "nope.json", tmp_path / "out") == 2


def test_defaults_filled():
    cfg = cli.validate_config(dict(SMALL))
    assert cfg["cutoff"] == {"factor": 8, "min": 16}
    assert cfg["tolerances"]["identity"] == 0.02
    assert cfg["n_samples"] == 10000


def test_round_trip_bit_exact(tmp_path):
    vals = [0.1, 1 / 3, 2.0**-1074, 1.7976931348623157e308, -0.0, 123456789.123456789]
    recs = [Record("x", 1.0, f"v{i}", v, -v, None if i % 2 else abs(v), i % 2 == 0)
            for i, v in enumerate(vals)]
    cli.emit_report(recs, tmp_path)
    back = cli.read_report(tmp_path / "report.jsonl")
    assert len(back) == len(recs)
    for r, b in zip(recs, back):
        assert b["re"] == r.re and b["im"] == r.im
        assert b["tag"] == r.tag


def test_empty_report_headers_only(tmp_path):
    cli.emit_report([], tmp_path)
    assert (tmp_path / "report.jsonl").read_text() == ""
    assert (tmp_path / "summary.csv").read_text().splitlines() == [
        "suite,records,passed,failed,status,max_abs_value"]


def test_failing_suite_exit_one(tmp_path):
    cfg = dict(SMALL, mollifier={"k_list": [1, 2, 4], "L": 16})
    # k * width is not decreasing from k = 1, where the kernel covers the sphere
    assert cli.run("mollifier-info", write(tmp_path, cfg), tmp_path / "out") == 1
    rows = cli.read_report(tmp_path / "out" / "report.jsonl")
    assert [r["pass"] for r in rows if r["suite"] == "mollifier_trace"] == [True] * 3


def test_health_abort_exit_three(tmp_path):
    cfg = dict(SMALL, tolerances={"residual_cap": 1e-12})
    assert cli.run("charfunc", write(tmp_path, cfg), tmp_path / "out") == 3


@pytest.mark.parametrize("command", ["charfunc", "invariance", "rp-check"])
def test_commands_exact(tmp_path, command):
    cfg = dict(SMALL, translation=[0.5, 0.0], rotation_angle=0.4,
               rp_bumps=[{"amplitude": 1.0, "center": [1.3, 0.0], "width": 0.2}])
    assert cli.run(command, write(tmp_path, cfg), tmp_path / "out") == 0
    assert cli.read_report(tmp_path / "out" / "report.jsonl")


def test_sample_and_wick(tmp_path):
    cfg = dict(SMALL, k_list=[1], sample={"n": 150}, wick={"L": 8, "n": 4000},
               interaction={"kind": "regularized", "F": {"name": "power", "exponent": 4}})
    assert cli.run("sample", write(tmp_path, cfg), tmp_path / "out") == 0
    assert (tmp_path / "out" / "ensemble_k1.txt").exists()
    assert cli.run("wick-check", write(tmp_path, cfg), tmp_path / "w") == 0
    suites = [r["suite"] for r in cli.read_report(tmp_path / "w" / "report.jsonl")]
    assert suites.count("wick_algebra") == 5
