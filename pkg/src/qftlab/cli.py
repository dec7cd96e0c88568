"""Command line runner: ``qftlab <command> --config cfg.json --out dir``.

Exit status: 0 all checks pass, 1 some check failed, 2 invalid
configuration, 3 numerical-health abort (ESS floor, truncation cap,
non-PSD covariance).
"""
from __future__ import annotations

import argparse
import csv
import json
import math
import sys
import warnings
from pathlib import Path

import jsonschema
import numpy as np

from . import sphere_harmonics as sh
from . import interaction as it
from .conformal import TruncationError
from .covariance import (
    NotPSDError, ReflectionTheta, SphereBump, free_covariance, rp_gram_check,
)
from .mollifier import build_mollifier, mollifier_diagnostics
from .plane import PlaneTestFunction
from .sampler import (
    EnsembleHealthError, GaussianSampler, build_weighted_ensemble, export_ensemble,
    gaussian_char_exact,
)
from .scaling_limit import (
    Record, ScalingExperiment, commutator_norm, convergence_report, invariance_errors,
    rp_limit_check,
)

COMMANDS = ("sample", "charfunc", "scaling-limit", "rp-check", "invariance", "wick-check",
            "mollifier-info")

_TERM = {
    "type": "object",
    "additionalProperties": False,
    "required": ["center", "width"],
    "properties": {
        "amplitude": {"type": "number", "default": 1.0},
        "center": {"type": "array", "items": {"type": "number"}, "minItems": 1, "maxItems": 2},
        "width": {"oneOf": [
            {"type": "number", "exclusiveMinimum": 0},
            {"type": "array", "items": {"type": "number", "exclusiveMinimum": 0}},
        ]},
    },
}
_FUNCTION = {
    "type": "object",
    "additionalProperties": False,
    "required": ["id", "terms"],
    "properties": {
        "id": {"type": "string"},
        "terms": {"type": "array", "items": _TERM},
        "imaginary": {"type": "array", "items": _TERM},
    },
}
_SCALAR_F = {
    "type": "object",
    "additionalProperties": False,
    "required": ["name"],
    "properties": {
        "name": {"enum": list(it.FUNCTION_NAMES)},
        "eps": {"type": "number"},
        "freq": {"type": "number"},
        "coef": {"type": "number"},
        "exponent": {"type": "integer", "minimum": 1},
    },
}
SCHEMA = {
    "type": "object",
    "additionalProperties": False,
    "required": ["d", "mass", "k_list", "corpus"],
    "properties": {
        "d": {"enum": [1, 2]},
        "mass": {"type": "number", "exclusiveMinimum": 0},
        "seed": {"type": "integer", "minimum": 0, "default": 0},
        "k_list": {"type": "array", "items": {"type": "number", "minimum": 1}, "minItems": 1},
        "cutoff": {
            "type": "object", "additionalProperties": False,
            "properties": {
                "factor": {"type": "number", "minimum": 4, "default": 8},
                "min": {"type": "integer", "minimum": 1, "default": 16},
            },
        },
        "mode": {"enum": ["exact", "mc"], "default": "exact"},
        "n_samples": {"type": "integer", "minimum": 100, "default": 10000},
        "mollifier_exponent": {"type": "number", "exclusiveMinimum": 2, "default": 4},
        "interaction": {"oneOf": [
            {"type": "null"},
            {
                "type": "object", "additionalProperties": False, "required": ["kind"],
                "properties": {
                    "kind": {"enum": list(it.KINDS)},
                    "F": _SCALAR_F,
                    "bound": {"type": "number", "exclusiveMinimum": 0},
                    "poly": {"type": "array", "items": {"type": "number"}},
                    "weight": {"type": "number"},
                },
            },
        ]},
        "corpus": {"type": "array", "items": _FUNCTION},
        "translation": {"type": "array", "items": {"type": "number"}, "minItems": 1, "maxItems": 2},
        "rotation_angle": {"type": "number", "default": 0.0},
        "rp_bumps": {"type": "array", "items": _TERM},
        "tolerances": {
            "type": "object", "additionalProperties": False,
            "properties": {
                "identity": {"type": "number", "exclusiveMinimum": 0, "default": 0.02},
                "cauchy": {"type": "number", "exclusiveMinimum": 0, "default": 0.02},
                "rp": {"type": "number", "exclusiveMinimum": 0, "default": 1e-8},
                "residual_cap": {"type": "number", "exclusiveMinimum": 0, "default": 0.05},
            },
        },
        "sample": {
            "type": "object", "additionalProperties": False,
            "properties": {"n": {"type": "integer", "minimum": 100, "default": 200}},
        },
        "wick": {
            "type": "object", "additionalProperties": False,
            "properties": {
                "L": {"type": "integer", "minimum": 0, "default": 16},
                "k": {"type": "number", "minimum": 1, "default": 1},
                "n": {"type": "integer", "minimum": 100, "default": 10000},
            },
        },
        "mollifier": {
            "type": "object", "additionalProperties": False,
            "properties": {
                "k_list": {"type": "array", "items": {"type": "number", "minimum": 1}},
                "L": {"type": "integer", "minimum": 0, "default": 16},
            },
        },
    },
}


class ConfigError(ValueError):
    pass


def _with_defaults(schema: dict, value):
    if not isinstance(value, dict) or "properties" not in schema:
        return value
    out = dict(value)
    for key, sub in schema["properties"].items():
        if key not in out and "default" in sub:
            out[key] = sub["default"]
        if key in out and isinstance(out[key], dict):
            out[key] = _with_defaults(sub, out[key])
    return out


def validate_config(raw) -> dict:
    """Strict schema check; returns the config with documented defaults filled in."""
    validator = jsonschema.Draft7Validator(SCHEMA)
    errors = sorted(validator.iter_errors(raw), key=lambda e: list(e.path))
    if errors:
        e = errors[0]
        where = "/".join(str(p) for p in e.path) or "<root>"
        raise ConfigError(f"config error at {where}: {e.message}")
    cfg = _with_defaults(SCHEMA, raw)
    for sec in ("cutoff", "tolerances", "sample", "wick", "mollifier"):
        cfg[sec] = _with_defaults(SCHEMA["properties"][sec], cfg.get(sec, {}))
    ks = cfg["k_list"]
    if any(b <= a for a, b in zip(ks, ks[1:])):
        raise ConfigError("config error at k_list: must be strictly increasing")
    d = cfg["d"]
    for path, terms in _all_terms(cfg):
        for t in terms:
            if len(t["center"]) != d:
                raise ConfigError(f"config error at {path}: center must have {d} entries")
    return cfg


def _all_terms(cfg):
    for i, f in enumerate(cfg["corpus"]):
        yield f"corpus/{i}/terms", f["terms"]
        if "imaginary" in f:
            yield f"corpus/{i}/imaginary", f["imaginary"]
    if "rp_bumps" in cfg:
        yield "rp_bumps", cfg["rp_bumps"]


def load_config(path) -> dict:
    try:
        with open(path, encoding="utf-8") as fh:
            raw = json.load(fh)
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config {path} is not valid JSON: {exc}") from exc
    return validate_config(raw)


def plane_function(d: int, terms) -> PlaneTestFunction:
    return PlaneTestFunction.from_terms(
        d, [(t.get("amplitude", 1.0), t["center"], t["width"]) for t in terms]
    )


def interaction_spec(cfg: dict) -> it.InteractionSpec | None:
    spec = cfg.get("interaction")
    if spec is None:
        return None
    try:
        F = None
        if "F" in spec:
            params = {k: v for k, v in spec["F"].items() if k != "name"}
            F = it.make_function(spec["F"]["name"], **params)
        return it.InteractionSpec(spec["kind"], F, bound=spec.get("bound"),
                                  poly=tuple(spec.get("poly", ())), weight=spec.get("weight"))
    except it.InteractionError as exc:
        raise ConfigError(f"config error at interaction: {exc}") from exc


def build_experiment(cfg: dict, seed: int | None = None, threads: int | None = None) -> ScalingExperiment:
    d = cfg["d"]
    corpus = [(f["id"], plane_function(d, f["terms"])) for f in cfg["corpus"]]
    return ScalingExperiment(
        d=d, mass=cfg["mass"], k_list=list(cfg["k_list"]), corpus=corpus,
        interaction=interaction_spec(cfg), n_samples=cfg["n_samples"],
        seed=cfg["seed"] if seed is None else seed,
        L_factor=cfg["cutoff"]["factor"], L_min=cfg["cutoff"]["min"],
        mollifier_exponent=cfg["mollifier_exponent"], mode=cfg["mode"],
        residual_cap=cfg["tolerances"]["residual_cap"], threads=threads,
    )


# ---------------------------------------------------------------------------
# output


def format_value(v) -> str:
    if v is None:
        return "null"
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        v = float(v)
        if not math.isfinite(v):
            return json.dumps(str(v))
        return format(v, ".17g")
    return json.dumps(str(v))


RECORD_KEYS = ("suite", "k", "f_id", "re", "im", "stderr", "pass", "tag")


def record_line(rec: Record) -> str:
    vals = {
        "suite": rec.suite, "k": None if rec.k is None else float(rec.k), "f_id": rec.f_id,
        "re": float(rec.re), "im": float(rec.im),
        "stderr": None if rec.stderr is None else float(rec.stderr),
        "pass": None if rec.passed is None else bool(rec.passed), "tag": rec.tag,
    }
    return "{" + ", ".join(f"{json.dumps(k)}: {format_value(vals[k])}" for k in RECORD_KEYS) + "}"


def summarize(records) -> list[dict]:
    rows: dict[str, dict] = {}
    for r in records:
        row = rows.setdefault(r.suite, {"suite": r.suite, "records": 0, "passed": 0,
                                         "failed": 0, "max_abs_value": 0.0})
        row["records"] += 1
        if r.passed is True:
            row["passed"] += 1
        elif r.passed is False:
            row["failed"] += 1
        row["max_abs_value"] = max(row["max_abs_value"], math.hypot(r.re, r.im))
    for row in rows.values():
        row["status"] = "FAIL" if row["failed"] else "PASS"
    return list(rows.values())


def emit_report(records, out_dir) -> tuple[Path, Path]:
    """Write report.jsonl and summary.csv into ``out_dir``."""
    out = Path(out_dir)
    try:
        out.mkdir(parents=True, exist_ok=True)
        report = out / "report.jsonl"
        with open(report, "w", encoding="utf-8", newline="\n") as fh:
            for rec in records:
                fh.write(record_line(rec) + "\n")
        summary = out / "summary.csv"
        with open(summary, "w", encoding="utf-8", newline="") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(["suite", "records", "passed", "failed", "status", "max_abs_value"])
            for row in summarize(records):
                writer.writerow([row["suite"], row["records"], row["passed"], row["failed"],
                                 row["status"], format_value(row["max_abs_value"])])
    except OSError as exc:
        raise OSError(f"cannot write report into {out}: {exc}") from exc
    return report, summary


def read_report(path) -> list[dict]:
    with open(path, encoding="utf-8") as fh:
        return [json.loads(line) for line in fh if line.strip()]


# ---------------------------------------------------------------------------
# commands


def _rotation(d: int, angle: float):
    if d == 1 or angle == 0.0:
        return None
    c, s = math.cos(angle), math.sin(angle)
    return np.array([[c, -s], [s, c]])


def _decreasing(xs) -> bool:
    return all(b < a for a, b in zip(xs, xs[1:]))


def cmd_sample(cfg, exp: ScalingExperiment, out: Path) -> list[Record]:
    recs = []
    n = cfg["sample"]["n"]
    for k in exp.k_list:
        ctx = exp.context(k)
        ens = build_weighted_ensemble(ctx.sampler, ctx.model, k, n)
        export_ensemble(ens, out / f"ensemble_k{format_value(float(k))}.txt")
        recs.append(Record("ess", k, None, ens.ess, 0.0, None, ens.ess >= 10.0))
    return recs


def cmd_charfunc(cfg, exp: ScalingExperiment, out: Path) -> list[Record]:
    recs = []
    d = exp.d
    for k in exp.k_list:
        ctx = exp.context(k)
        for fdef in cfg["corpus"]:
            u = ctx.lift(plane_function(d, fdef["terms"]))
            v = ctx.lift(plane_function(d, fdef["imaginary"])) if "imaginary" in fdef else None
            if exp.gaussian:
                exact = gaussian_char_exact(ctx.C, u, v)
                recs.append(Record("char_exact", k, fdef["id"], exact.real, exact.imag, None, None))
            if exp.use_exact:
                continue
            est, se, _ = ctx.evaluate([u], None if v is None else [v])
            ok = None
            if exp.gaussian:
                ok = bool(abs(est[0] - exact) <= 3.0 * se[0])
            recs.append(Record("char_mc", k, fdef["id"], est[0].real, est[0].imag, float(se[0]), ok))
    return recs


def cmd_scaling_limit(cfg, exp: ScalingExperiment, out: Path) -> list[Record]:
    T = cfg.get("translation")
    R = _rotation(exp.d, cfg["rotation_angle"])
    bumps = [plane_function(exp.d, [t]) for t in cfg.get("rp_bumps", [])]
    rep = convergence_report(exp, T=T, R=R, rp_bumps=bumps,
                             cauchy_tol=cfg["tolerances"]["cauchy"],
                             identity_tol=cfg["tolerances"]["identity"])
    return rep.records


def cmd_rp_check(cfg, exp: ScalingExperiment, out: Path) -> list[Record]:
    recs = []
    tol = cfg["tolerances"]["rp"]
    if exp.d == 2:
        # sphere-side free field with bumps in the x_0 > 0 hemisphere
        L = exp.L_min
        C = free_covariance(exp.mass, 2, L)
        theta = ReflectionTheta(2)
        centers = [(0.9, 0.3, 0.3), (0.8, -0.4, 0.2), (0.95, 0.0, -0.3), (0.85, 0.2, -0.45)]
        bumps = [SphereBump(c, 0.12) for c in centers]
        res = rp_gram_check(lambda h: gaussian_char_exact(C, h), bumps, theta, tol=tol, L=L)
        recs.append(Record("rp_sphere_free", None, None, res.min_eigenvalue, 0.0, None, res.passed))
    bumps = [plane_function(exp.d, [t]) for t in cfg.get("rp_bumps", [])]
    if bumps:
        for k in exp.k_list:
            r = rp_limit_check(exp, k, bumps, tol)
            recs.append(Record("rp_min_eigenvalue", k, None, r.result.min_eigenvalue, 0.0,
                               None if exp.use_exact else r.stderr, r.result.passed))
    return recs


def cmd_invariance(cfg, exp: ScalingExperiment, out: Path) -> list[Record]:
    T = cfg.get("translation", [0.5] + [0.0] * (exp.d - 1))
    R = _rotation(exp.d, cfg["rotation_angle"])
    recs = []
    for fid, f in exp.corpus:
        errs_a, comms = [], []
        for k in exp.k_list:
            inv = invariance_errors(exp, k, f, T, R)
            det = exp.use_exact
            comm = commutator_norm(exp, k, f, T)
            errs_a.append(inv.translation_a)
            comms.append(comm)
            recs.append(Record("translation_err_a", k, fid, inv.translation_a, 0.0,
                               None if det else inv.stderr_a, None))
            recs.append(Record("translation_err_b", k, fid, inv.translation_b, 0.0,
                               None if det else inv.stderr_b, None))
            recs.append(Record("rotation_err", k, fid, inv.rotation, 0.0,
                               None if det else inv.stderr_rotation,
                               inv.rotation <= 1e-6 + 3.0 * inv.stderr_rotation))
            recs.append(Record("commutator_norm", k, fid, comm, 0.0, None, None))
        last = exp.k_list[-1]
        if exp.use_exact:
            ok = _decreasing(errs_a)
            recs.append(Record("translation_err_a_decreasing", last, fid, float(ok), 0.0, None, ok))
        ok = _decreasing(comms)
        recs.append(Record("commutator_decreasing", last, fid, float(ok), 0.0, None, ok))
    return recs


def cmd_wick_check(cfg, exp: ScalingExperiment, out: Path) -> list[Record]:
    from .sampler import block_ratio, gaussian_ensemble, jackknife_stderr

    w = cfg["wick"]
    d, L, k = exp.d, w["L"], w["k"]
    recs = []
    f = np.linspace(-2.0, 2.0, 9)
    c = 0.7
    expected = {0: np.ones_like(f), 1: f, 2: f**2 - c, 3: f**3 - 3 * c * f,
                4: f**4 - 6 * c * f**2 + 3 * c**2}
    for n, ref in expected.items():
        err = float(np.max(np.abs(it.wick_power(f, n, c) - ref)))
        recs.append(Record("wick_algebra", None, f"n={n}", err, 0.0, None, err <= 1e-12))
    C = free_covariance(exp.mass, d, L)
    A = build_mollifier(k, d, L, exp.mollifier_exponent)
    ck = it.c_k_diagonal(C, A)
    sampler = GaussianSampler(C, exp.seed)
    ens = gaussian_ensemble(sampler, w["n"], k)
    grid = sh.grid_for_cutoff(d, L)
    nodes = grid.nodes[[0, grid.nodes.shape[0] // 3]]
    B = sh.basis_matrix(d, L, nodes) * A.diagonal
    vals = ens.coeffs @ B.T  # (n, 2) samples of A_k phi at two nodes
    w2 = it.wick_power(vals, 2, ck)
    X = np.column_stack([w2[:, 0], w2[:, 0] * w2[:, 1]])
    est, reps = block_ratio(ens.weights, X)
    se = jackknife_stderr(reps)
    recs.append(Record("wick_centering", k, "node0", est[0], 0.0, se[0], abs(est[0]) <= 3 * se[0]))
    cxy = float(it.c_k_kernel(C, A, nodes[0], nodes[1]))
    target = 2.0 * cxy**2
    recs.append(Record("wick_covariance", k, "node0-node1", est[1] - target, 0.0, se[1],
                       abs(est[1] - target) <= 3 * se[1]))
    return recs


def cmd_mollifier_info(cfg, exp: ScalingExperiment, out: Path) -> list[Record]:
    m = cfg["mollifier"]
    ks = m.get("k_list") or exp.k_list
    recs = []
    widths = []
    for k in ks:
        A = build_mollifier(k, exp.d, m["L"], exp.mollifier_exponent)
        diag = mollifier_diagnostics(A, sh.grid_for_cutoff(exp.d, m["L"]))
        ok = abs(diag.trace - sh.VOLUME[exp.d] * diag.diagonal) <= 1e-10 * max(1.0, diag.trace)
        recs.append(Record("mollifier_trace", k, None, diag.trace, 0.0, None, ok))
        recs.append(Record("mollifier_diagonal", k, None, diag.diagonal, 0.0, None, None))
        recs.append(Record("mollifier_k_width", k, None, k * diag.effective_width, 0.0, None, None))
        widths.append(k * diag.effective_width)
    ok = _decreasing(widths)
    recs.append(Record("mollifier_k_width_decreasing", ks[-1], None, float(ok), 0.0, None, ok))
    return recs


HANDLERS = {
    "sample": cmd_sample,
    "charfunc": cmd_charfunc,
    "scaling-limit": cmd_scaling_limit,
    "rp-check": cmd_rp_check,
    "invariance": cmd_invariance,
    "wick-check": cmd_wick_check,
    "mollifier-info": cmd_mollifier_info,
}


def run(command: str, config_path, out_dir, seed: int | None = None,
        threads: int | None = None) -> int:
    if command not in HANDLERS:
        print(f"unknown command {command!r}", file=sys.stderr)
        return 2
    try:
        cfg = load_config(config_path)
        exp = build_experiment(cfg, seed, threads)
    except (ConfigError, ValueError) as exc:
        print(str(exc), file=sys.stderr)
        return 2
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    try:
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", RuntimeWarning)
            records = HANDLERS[command](cfg, exp, out)
    except (EnsembleHealthError, TruncationError, NotPSDError) as exc:
        print(f"numerical health abort: {exc}", file=sys.stderr)
        return 3
    emit_report(records, out)
    return 0 if all(r.passed is not False for r in records) else 1


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(prog="qftlab", description=__doc__.splitlines()[0])
    parser.add_argument("command", choices=COMMANDS)
    parser.add_argument("--config", required=True)
    parser.add_argument("--out", required=True)
    parser.add_argument("--seed", type=int, default=None)
    parser.add_argument("--threads", type=int, default=None)
    args = parser.parse_args(argv)
    return run(args.command, args.config, args.out, args.seed, args.threads)


if __name__ == "__main__":
    sys.exit(main())
