"""Scaled characteristic functionals S^k(f) = S_{mu_k}(U_alpha U_beta_k f) and their diagnostics.

For each k the sphere measure is mu_C with C the scaled covariance, optionally
reweighted by an interaction density on mollified fields.  Gaussian runs use
the closed form exp(-<C u, u>/2) (no sampling noise); interacting runs share
one ensemble per k across all functionals (common random numbers), so
differences of estimates carry small jackknife errors.
"""
from __future__ import annotations

import math
import threading
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from scipy import linalg

from . import sphere_harmonics as sh
from . import plane
from .conformal import ConformalPipeline, apply_isometry, lift_to_sphere, rotation_g_k
from .covariance import (
    DenseOperator, ReflectionTheta, RPResult, SupportError, scaled_covariance,
)
from .interaction import DensityModel, InteractionSpec, build_density
from .mollifier import build_mollifier, effective_width
from .plane import PlaneTestFunction
from .sampler import (
    CharFuncEstimate, DensityMoments, GaussianSampler, WeightedEnsemble, block_ratio,
    build_weighted_ensemble, fourth_cumulant, gaussian_char_exact,
    jackknife_stderr, worker_count,
)


@dataclass
class ScalingExperiment:
    d: int
    mass: float
    k_list: list
    corpus: list  # [(identifier, PlaneTestFunction), ...]
    interaction: InteractionSpec | None = None
    n_samples: int = 10_000
    seed: int = 0
    L_factor: float = 8.0
    L_min: int = 16
    mollifier_exponent: float = 4.0
    mode: str = "exact"
    residual_cap: float = 0.05
    oversample: int = 2
    threads: int | None = None
    _contexts: dict = field(default_factory=dict, repr=False)
    _lock: threading.Lock = field(default_factory=threading.Lock, repr=False)

    def __post_init__(self):
        ks = list(self.k_list)
        if not ks or any(b <= a for a, b in zip(ks, ks[1:])):
            raise ValueError("k_list must be strictly increasing")
        if self.L_factor < 4:
            raise ValueError("cutoff factor c in L(k) >= c k must be at least 4")
        if self.mass <= 0:
            raise ValueError("mass must be positive")
        if self.mode not in ("exact", "mc"):
            raise ValueError("mode must be 'exact' or 'mc'")

    @property
    def gaussian(self) -> bool:
        return self.interaction is None

    @property
    def use_exact(self) -> bool:
        return self.gaussian and self.mode == "exact"

    def cutoff(self, k: float) -> int:
        return max(self.L_min, int(math.ceil(self.L_factor * k)))

    def context(self, k: float) -> "KContext":
        with self._lock:
            ctx = self._contexts.get(k)
            if ctx is None:
                ctx = KContext(self, float(k))
                self._contexts[k] = ctx
            return ctx


class KContext:
    """Per-k state: covariance, projection pipeline, ensemble (lazy)."""

    def __init__(self, exp: ScalingExperiment, k: float):
        self.exp = exp
        self.k = k
        self.L = exp.cutoff(k)
        self.pipe = ConformalPipeline.build(k, exp.d, self.L, exp.oversample, exp.residual_cap)
        self.C: DenseOperator = scaled_covariance(k, exp.mass, exp.d, self.L)
        self._ensemble: WeightedEnsemble | None = None
        self._model: DensityModel | None = None
        self._moments: DensityMoments | None = None
        self._norm: float | None = None
        self._lock = threading.Lock()

    # -- building blocks -----------------------------------------------------
    @property
    def sampler(self) -> GaussianSampler:
        return GaussianSampler(self.C, self.exp.seed)

    @property
    def mollifier(self):
        return build_mollifier(self.k, self.exp.d, self.L, self.exp.mollifier_exponent)

    @property
    def model(self) -> DensityModel | None:
        if self.exp.interaction is None:
            return None
        if self._model is None:
            self._model = build_density(self.exp.interaction, self.k, self.mollifier, self.C,
                                        oversample=self.exp.oversample)
        return self._model

    @property
    def ensemble(self) -> WeightedEnsemble:
        with self._lock:
            if self._ensemble is None:
                self._ensemble = build_weighted_ensemble(self.sampler, self.model, self.k,
                                                         self.exp.n_samples)
            return self._ensemble

    def moments(self) -> DensityMoments:
        if self._moments is None:
            if self.model is None:
                self._moments = DensityMoments(1.0, 1.0, 0.0, 0.0, 0)
            else:
                lw = self.ensemble.log_weights
                rho = np.exp(lw)
                n = rho.shape[0]
                self._moments = DensityMoments(
                    float(rho.mean()), float(np.mean(rho**2)),
                    float(rho.std(ddof=1) / np.sqrt(n)), float((rho**2).std(ddof=1) / np.sqrt(n)), n,
                )
        return self._moments

    def density_ratio(self) -> float:
        """K_1 = sqrt(E rho^2) / E rho >= 1 (Cauchy-Schwarz constant)."""
        m = self.moments()
        return max(1.0, math.sqrt(m.mean_sq) / m.mean)

    def cov_norm(self) -> float:
        if self._norm is None:
            self._norm = self.C.norm()
        return self._norm

    def lift(self, f: PlaneTestFunction) -> sh.SphereField:
        return lift_to_sphere(f, self.pipe)[0]

    def translate_on_sphere(self, u: sh.SphereField, T) -> sh.SphereField:
        """T*_{S,k} u = u o g_k(T)."""
        g = rotation_g_k(np.broadcast_to(np.asarray(T, float), (self.exp.d,)), self.k)
        return apply_isometry(u, g.T, self.pipe.grid)

    # -- functional evaluation ---------------------------------------------
    def evaluate(self, us, vs=None):
        """S at u + i v for each pair; returns (values, stderrs, replicates or None)."""
        vs = [None] * len(us) if vs is None else vs
        if self.exp.use_exact:
            vals = np.array([gaussian_char_exact(self.C, u, v) for u, v in zip(us, vs)])
            return vals, np.zeros(len(us)), None
        ens = self.ensemble
        ens.check_health()
        P = ens.pairings(us)
        Z = np.exp(1j * P)
        if any(v is not None for v in vs):
            zero = np.zeros(ens.coeffs.shape[1])
            Z = Z * np.exp(-ens.pairings([zero if v is None else v for v in vs]))
        est, reps = block_ratio(ens.weights, Z)
        return est, jackknife_stderr(reps), reps

    def estimate(self, u, v=None) -> CharFuncEstimate:
        exact = gaussian_char_exact(self.C, u, v) if self.exp.gaussian else None
        if self.exp.use_exact:
            return CharFuncEstimate(exact, 0.0, 0, math.inf, exact)
        if not np.any(u.coeffs) and (v is None or not np.any(v.coeffs)):
            return CharFuncEstimate(1.0 + 0.0j, 0.0, self.exp.n_samples, self.ensemble.ess, exact)
        est, se, _ = self.evaluate([u], None if v is None else [v])
        return CharFuncEstimate(complex(est[0]), float(se[0]), self.ensemble.n, self.ensemble.ess, exact)


def _diff_stats(est, reps, i: int, j: int) -> tuple[float, float]:
    """|S_i - S_j| and its jackknife stderr from shared replicates."""
    val = float(abs(est[i] - est[j]))
    if reps is None:
        return val, 0.0
    return val, float(jackknife_stderr(np.abs(reps[:, i] - reps[:, j])[:, None])[0])


# ---------------------------------------------------------------------------
# operations


def scaled_char_functional(exp: ScalingExperiment, k: float, f: PlaneTestFunction,
                           imaginary_part: PlaneTestFunction | None = None) -> CharFuncEstimate:
    ctx = exp.context(k)
    u = ctx.lift(f)
    v = None if imaginary_part is None else ctx.lift(imaginary_part)
    return ctx.estimate(u, v)


def free_field_identity_residual(k: float, f: PlaneTestFunction, m: float, d: int, L: int,
                                 C: DenseOperator | None = None, oversample: int = 2) -> float:
    """| ||C^{1/2} U f|| - ||(Delta_E + m^2)^{-1/2} f|| | / ||(Delta_E + m^2)^{-1/2} f||."""
    if f.n_terms == 0 or not np.any(f.amplitudes):
        return 0.0
    C = scaled_covariance(k, m, d, L) if C is None else C
    pipe = ConformalPipeline.build(k, d, L, oversample, residual_cap=1.0)
    u, _ = lift_to_sphere(f, pipe)
    lhs = math.sqrt(max(C.quad_form(u), 0.0))
    rhs = math.sqrt(plane.resolvent_form(f, mass=m))
    return abs(lhs - rhs) / rhs


@dataclass(frozen=True)
class InvarianceErrors:
    translation_a: float
    translation_b: float
    rotation: float
    stderr_a: float = 0.0
    stderr_b: float = 0.0
    stderr_rotation: float = 0.0


def invariance_errors(exp: ScalingExperiment, k: float, f: PlaneTestFunction, T,
                      R=None) -> InvarianceErrors:
    ctx = exp.context(k)
    T = np.broadcast_to(np.asarray(T, float), (exp.d,))
    R = np.eye(exp.d) if R is None else np.asarray(R, float)
    u = ctx.lift(f)
    uT = ctx.translate_on_sphere(u, T) if np.any(T) else u
    v = ctx.lift(f.pulled_back_by_translation(T)) if np.any(T) else u
    uR = ctx.lift(f.rotated(R)) if not np.array_equal(R, np.eye(exp.d)) else u
    est, _, reps = ctx.evaluate([uT, v, u, uR])
    a, sa = _diff_stats(est, reps, 0, 1)
    b, sb = _diff_stats(est, reps, 0, 2)
    r, sr = _diff_stats(est, reps, 3, 2)
    return InvarianceErrors(a, b, r, sa, sb, sr)


def commutator_norm(exp: ScalingExperiment, k: float, f: PlaneTestFunction, T) -> float:
    """|| T*_{S,k} U f - U T*_E f ||_{L^2(S^d)}."""
    T = np.broadcast_to(np.asarray(T, float), (exp.d,))
    if not np.any(T):
        return 0.0
    ctx = exp.context(k)
    u = ctx.lift(f)
    return (ctx.translate_on_sphere(u, T) - ctx.lift(f.pulled_back_by_translation(T))).norm()


def difference_bound(K1: float, K3_sq: float, dist: float) -> float:
    """K1 sqrt(2 (1 - exp(-K3^2 dist^2 / 2))): Cauchy-Schwarz bound on |S(f) - S(g)|."""
    return K1 * math.sqrt(max(0.0, 2.0 * -math.expm1(-0.5 * K3_sq * dist * dist)))


@dataclass(frozen=True)
class EquicontinuityResult:
    empirical: float
    stderr: float
    bound: float
    K1: float
    K3: float

    @property
    def passed(self) -> bool:
        return self.empirical <= self.bound + 3.0 * self.stderr


def equicontinuity_modulus(exp: ScalingExperiment, k: float, f: PlaneTestFunction,
                           g: PlaneTestFunction) -> EquicontinuityResult:
    ctx = exp.context(k)
    est, _, reps = ctx.evaluate([ctx.lift(f), ctx.lift(g)])
    emp, se = _diff_stats(est, reps, 0, 1)
    K1 = ctx.density_ratio()
    K3_sq = ctx.cov_norm()
    dist = math.sqrt(max(plane.l2_norm_sq(f - g), 0.0))
    return EquicontinuityResult(emp, se, difference_bound(K1, K3_sq, dist), K1, math.sqrt(K3_sq))


def translation_bound(exp: ScalingExperiment, k: float, f: PlaneTestFunction, T) -> tuple[float, float]:
    """(translation_err_a, K1 sqrt(2(1 - exp(-||C|| comm^2 / 2)))) for the same k, f, T."""
    ctx = exp.context(k)
    err = invariance_errors(exp, k, f, T).translation_a
    comm = commutator_norm(exp, k, f, T)
    return err, difference_bound(ctx.density_ratio(), ctx.cov_norm(), comm)


def rp_margin(exp: ScalingExperiment, k: float) -> float:
    """Extra time clearance beyond 6 widths: mollifier effective width / k."""
    if exp.interaction is None:
        return 0.0
    A = build_mollifier(k, exp.d, exp.cutoff(k), exp.mollifier_exponent)
    return effective_width(A) / k


@dataclass
class RPLimitResult:
    k: float
    result: RPResult
    stderr: float


def rp_limit_check(exp: ScalingExperiment, k: float, bumps, tol: float = 1e-8) -> RPLimitResult:
    """Gram matrix S^k(f_i - Theta f_j) for plane bumps in t > 0."""
    margin = rp_margin(exp, k)
    for f in bumps:
        if f.min_time_margin() < margin:
            raise SupportError(
                f"bump time margin {f.min_time_margin():.3g} below required {margin:.3g} at k={k}"
            )
    ctx = exp.context(k)
    theta = ReflectionTheta(exp.d)
    pos = [ctx.lift(f) for f in bumps]
    neg = [ctx.lift(theta.plane(f)) for f in bumps]
    n = len(bumps)
    hs = [pos[i] - neg[j] for i in range(n) for j in range(n)]
    est, _, reps = ctx.evaluate(hs)

    def min_eig(vals):
        M = np.asarray(vals).reshape(n, n)
        M = 0.5 * (M + M.conj().T)
        return float(linalg.eigvalsh(M)[0]), M

    lo, M = min_eig(est)
    scale = float(np.max(np.abs(linalg.eigvalsh(M))))
    stderr = 0.0
    if reps is not None:
        rep_lo = np.array([min_eig(r)[0] for r in reps])
        stderr = float(jackknife_stderr(rep_lo[:, None])[0])
    threshold = tol * scale + 3.0 * stderr
    return RPLimitResult(k, RPResult(M, lo, threshold, bool(lo >= -threshold)), stderr)


@dataclass
class AnalyticityResult:
    k: float
    K1: float
    K2: float
    values: np.ndarray
    stderrs: np.ndarray
    bounds: np.ndarray

    @property
    def ratios(self) -> np.ndarray:
        return np.abs(self.values) / self.bounds

    @property
    def violations(self) -> int:
        return int(np.sum(np.abs(self.values) - 3.0 * self.stderrs > self.bounds))

    @property
    def max_ratio(self) -> float:
        return float(np.max(self.ratios)) if self.values.size else 0.0


def analyticity_bound_check(exp: ScalingExperiment, k: float, corpus, safety: float = 1.5) -> AnalyticityResult:
    """|S^{k}(f1 + i f2)| <= K1 exp(K2 ||f||^2), K2 = safety * ||C|| / 2."""
    ctx = exp.context(k)
    us = [ctx.lift(f1) for f1, _ in corpus]
    vs = [ctx.lift(f2) for _, f2 in corpus]
    est, se, _ = ctx.evaluate(us, vs)
    K1 = ctx.density_ratio()
    K2 = safety * 0.5 * ctx.cov_norm()
    norms = np.array([plane.l2_norm_sq(f1) + plane.l2_norm_sq(f2) for f1, f2 in corpus])
    return AnalyticityResult(k, K1, K2, np.asarray(est), np.asarray(se), K1 * np.exp(K2 * norms))


# ---------------------------------------------------------------------------
# report


@dataclass
class Record:
    suite: str
    k: float | None
    f_id: str | None
    re: float
    im: float = 0.0
    stderr: float | None = None
    passed: bool | None = None

    @property
    def tag(self) -> str:
        return "deterministic" if self.stderr is None else "mc"


@dataclass
class ConvergenceReport:
    records: list = field(default_factory=list)
    values: dict = field(default_factory=dict)  # (k, f_id) -> CharFuncEstimate
    cauchy: dict = field(default_factory=dict)  # (k, 2k, f_id) -> (diff, stderr)
    passed: bool = True

    def add(self, rec: Record) -> None:
        self.records.append(rec)
        if rec.passed is False:
            self.passed = False


def _stderr_or_none(est: CharFuncEstimate):
    return None if est.deterministic else est.stderr


def cauchy_pass(diffs, stderrs, tol: float) -> bool:
    """Differences decrease at the last pair or are within 3 sigma (or tol) of 0."""
    if not diffs:
        return True
    last, s_last = diffs[-1], stderrs[-1]
    if last <= max(3.0 * s_last, tol):
        return True
    return len(diffs) > 1 and last < diffs[-2]


def convergence_report(exp: ScalingExperiment, T=None, R=None, rp_bumps=None,
                       cauchy_tol: float = 2e-2, identity_tol: float = 2e-2) -> ConvergenceReport:
    """Per-k functionals, Cauchy differences and the diagnostic suites."""
    rep = ConvergenceReport()
    T = np.zeros(exp.d) if T is None else np.broadcast_to(np.asarray(T, float), (exp.d,))

    def per_k(k):
        ctx = exp.context(k)
        out = []
        vals = {}
        for fid, f in exp.corpus:
            est = ctx.estimate(ctx.lift(f))
            vals[fid] = est
            out.append(Record("char_functional", k, fid, est.value.real, est.value.imag,
                              _stderr_or_none(est), None))
            if exp.gaussian:
                res = free_field_identity_residual(k, f, exp.mass, exp.d, ctx.L, ctx.C, exp.oversample)
                out.append(Record("free_field_identity", k, fid, res, 0.0, None, res <= identity_tol))
            if np.any(T) or R is not None:
                inv = invariance_errors(exp, k, f, T, R)
                det = exp.use_exact
                out.append(Record("translation_err_a", k, fid, inv.translation_a, 0.0,
                                  None if det else inv.stderr_a, None))
                out.append(Record("translation_err_b", k, fid, inv.translation_b, 0.0,
                                  None if det else inv.stderr_b, None))
                out.append(Record("rotation_err", k, fid, inv.rotation, 0.0,
                                  None if det else inv.stderr_rotation,
                                  inv.rotation <= 1e-6 + 3.0 * inv.stderr_rotation))
        if rp_bumps:
            rp = rp_limit_check(exp, k, rp_bumps)
            out.append(Record("rp_min_eigenvalue", k, None, rp.result.min_eigenvalue, 0.0,
                              None if exp.use_exact else rp.stderr, rp.result.passed))
        if not exp.use_exact and exp.corpus:
            fid, f = exp.corpus[0]
            k4, s4 = fourth_cumulant(ctx.ensemble, ctx.lift(f))
            out.append(Record("fourth_cumulant", k, fid, k4, 0.0, s4, None))
        return k, out, vals

    workers = worker_count(exp.threads)
    for k in exp.k_list:  # heavy builds stay sequential so BLAS gets the cores
        exp.context(k)
    if workers > 1:
        with ThreadPoolExecutor(workers) as pool:
            results = list(pool.map(per_k, exp.k_list))
    else:
        results = [per_k(k) for k in exp.k_list]
    for k, recs, vals in results:
        for fid, est in vals.items():
            rep.values[(k, fid)] = est
        for r in recs:
            rep.add(r)

    for fid, _ in exp.corpus:
        diffs, errs = [], []
        for k1, k2 in zip(exp.k_list, exp.k_list[1:]):
            a, b = rep.values[(k1, fid)], rep.values[(k2, fid)]
            dv = abs(b.value - a.value)
            se = math.hypot(a.stderr, b.stderr)
            rep.cauchy[(k1, k2, fid)] = (dv, se)
            diffs.append(dv)
            errs.append(se)
            rep.add(Record("cauchy_difference", k2, fid, dv, 0.0,
                           None if exp.use_exact else se, None))
        ok = cauchy_pass(diffs, errs, cauchy_tol if exp.use_exact else 0.0)
        rep.add(Record("cauchy_pass", exp.k_list[-1], fid, float(ok), 0.0, None, ok))
    return rep
