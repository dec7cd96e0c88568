"""Gaussian sampling, importance-weighted ensembles and Monte Carlo estimators.

Sample ``i`` draws its normals from a Philox stream keyed by ``(seed, stream)``
with the sample index in the high counter word, so any subset of samples can
be produced in any order (or in parallel) with bit-identical results.

Ratio estimators E[w X] / E[w] get jackknife error bars over 20 contiguous
blocks.
"""
from __future__ import annotations

import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np
from scipy import linalg

from . import sphere_harmonics as sh
from . import plane
from .covariance import DenseOperator, SpectralOperator, operator_sqrt
from .interaction import DensityModel

N_BLOCKS = 20
ESS_FLOOR = 10.0
_MASK64 = (1 << 64) - 1


class EnsembleHealthError(RuntimeError):
    """Effective sample size below the floor or non-finite weights."""


def worker_count(threads: int | None = None) -> int:
    if threads is not None:
        return max(1, int(threads))
    try:
        return max(1, int(os.environ.get("QFTLAB_THREADS", "1")))
    except ValueError:
        return 1


def sample_rng(seed: int, index: int, stream: int = 0) -> np.random.Generator:
    bits = np.random.Philox(key=[seed & _MASK64, stream & _MASK64], counter=[0, 0, 0, index])
    return np.random.Generator(bits)


def standard_normals(seed: int, start: int, count: int, dim: int, stream: int = 0) -> np.ndarray:
    out = np.empty((count, dim))
    for j in range(count):
        out[j] = sample_rng(seed, start + j, stream).standard_normal(dim)
    return out


# ---------------------------------------------------------------------------
# Gaussian sampler


@dataclass(frozen=True, eq=False)
class GaussianSampler:
    """Draws phi = S xi with S S^T = C.

    ``factor="sqrt"`` uses the symmetric square root; ``"cholesky"`` (the
    default when C carries a precision factor) solves L^T phi = xi with
    Q = L L^T = C^{-1}, which avoids an eigen-decomposition.
    """

    covariance: SpectralOperator | DenseOperator
    seed: int
    stream: int = 0
    factor: str = "auto"

    def __post_init__(self):
        C = self.covariance
        mode = self.factor
        if mode == "auto":
            mode = "cholesky" if isinstance(C, DenseOperator) and C._chol is not None else "sqrt"
        if mode == "cholesky":
            if not (isinstance(C, DenseOperator) and C._chol is not None):
                raise ValueError("cholesky factor needs a covariance built from a precision matrix")
            c, lower = C._chol
            upper = np.triu(c.T) if lower else np.triu(c)
            object.__setattr__(self, "_upper", upper)
        elif mode == "sqrt":
            object.__setattr__(self, "_sqrt", operator_sqrt(C))
        else:
            raise ValueError(f"unknown factor mode {mode!r}")
        object.__setattr__(self, "_mode", mode)

    @property
    def d(self) -> int:
        return self.covariance.d

    @property
    def L(self) -> int:
        return self.covariance.L

    @property
    def dim(self) -> int:
        return sh.n_coeffs(self.d, self.L)

    def transform(self, xi: np.ndarray) -> np.ndarray:
        """Rows of standard normals -> rows of field coefficients."""
        if self._mode == "cholesky":
            return linalg.solve_triangular(self._upper, xi.T, lower=False).T
        S = self._sqrt
        if isinstance(S, SpectralOperator):
            return xi * np.sqrt(np.clip(self.covariance.diagonal, 0.0, None))
        return xi @ S.matrix

    def coefficients(self, n: int, start: int = 0, threads: int | None = None,
                     chunk: int = 512) -> np.ndarray:
        """(n, dim) coefficient array for samples start..start+n-1."""
        starts = list(range(start, start + n, chunk))

        def job(s):
            cnt = min(chunk, start + n - s)
            return self.transform(standard_normals(self.seed, s, cnt, self.dim, self.stream))

        workers = worker_count(threads)
        if workers == 1 or len(starts) == 1:
            parts = [job(s) for s in starts]
        else:
            with ThreadPoolExecutor(workers) as pool:
                parts = list(pool.map(job, starts))
        return np.vstack(parts) if parts else np.zeros((0, self.dim))


def sample_gaussian(sampler: GaussianSampler, n: int, start: int = 0) -> list[sh.SphereField]:
    coeffs = sampler.coefficients(n, start)
    return [sh.SphereField(sampler.d, sampler.L, c) for c in coeffs]


def pair_field(phi: sh.SphereField, f: sh.SphereField) -> float:
    """phi(f) in the orthonormal basis."""
    return sh.inner_product(phi, f)


# ---------------------------------------------------------------------------
# weighted ensembles


@dataclass(frozen=True, eq=False)
class WeightedEnsemble:
    d: int
    L: int
    coeffs: np.ndarray
    log_weights: np.ndarray
    k: float
    seed: int
    spec: object = None

    def __post_init__(self):
        if self.coeffs.shape[0] != self.log_weights.shape[0]:
            raise ValueError("coefficient rows and weights differ in length")
        if not np.all(np.isfinite(self.log_weights)):
            raise EnsembleHealthError("non-finite log weights")

    @property
    def n(self) -> int:
        return self.coeffs.shape[0]

    @property
    def fields(self) -> list[sh.SphereField]:
        return [sh.SphereField(self.d, self.L, c) for c in self.coeffs]

    @property
    def weights(self) -> np.ndarray:
        """Weights shifted by the max log-weight (largest weight = 1)."""
        lw = self.log_weights
        return np.exp(lw - lw.max()) if lw.size else lw

    @property
    def ess(self) -> float:
        w = self.weights
        return float(np.sum(w) ** 2 / np.sum(w * w)) if w.size else 0.0

    def check_health(self, floor: float = ESS_FLOOR) -> None:
        if self.ess < floor:
            raise EnsembleHealthError(
                f"effective sample size {self.ess:.3g} below {floor:g} (n={self.n}, k={self.k}); "
                "the density is too peaked for this sample size"
            )

    def pairings(self, fs) -> np.ndarray:
        """(n, m) matrix of phi_i(f_j)."""
        F = np.column_stack([_coeffs(f) for f in fs]) if len(fs) else np.zeros((self.coeffs.shape[1], 0))
        return self.coeffs @ F


def _coeffs(f) -> np.ndarray:
    return f.coeffs if isinstance(f, sh.SphereField) else np.asarray(f, dtype=float)


def gaussian_ensemble(sampler: GaussianSampler, n: int, k: float = 1.0) -> WeightedEnsemble:
    return WeightedEnsemble(sampler.d, sampler.L, sampler.coefficients(n), np.zeros(n), k, sampler.seed)


def build_weighted_ensemble(sampler: GaussianSampler, model: DensityModel | None, k: float,
                            n: int, ess_floor: float = ESS_FLOOR) -> WeightedEnsemble:
    """Fields from mu_C with log-weights log rho_k; aborts when ESS < floor."""
    if n < 100:
        raise ValueError("weighted ensembles need n >= 100")
    coeffs = sampler.coefficients(n)
    if model is None:
        logw = np.zeros(n)
    else:
        logw = np.concatenate([model.log_density(coeffs[i:i + 512]) for i in range(0, n, 512)])
    ens = WeightedEnsemble(sampler.d, sampler.L, coeffs, logw, k, sampler.seed,
                           None if model is None else model.spec)
    ens.check_health(ess_floor)
    return ens


# ---------------------------------------------------------------------------
# estimators


@dataclass(frozen=True)
class CharFuncEstimate:
    value: complex
    stderr: float
    n_samples: int
    ess: float
    exact: complex | None = None

    @property
    def deterministic(self) -> bool:
        return self.n_samples == 0


def block_ratio(w: np.ndarray, X: np.ndarray, blocks: int = N_BLOCKS):
    """sum w X / sum w and its leave-one-block-out replicates.

    ``X`` has shape (n, m); returns (estimates (m,), replicates (B, m)).
    """
    n = w.shape[0]
    B = min(blocks, n)
    edges = np.linspace(0, n, B + 1).astype(int)
    num_b = np.stack([w[a:b] @ X[a:b] for a, b in zip(edges[:-1], edges[1:])])
    den_b = np.array([np.sum(w[a:b]) for a, b in zip(edges[:-1], edges[1:])])
    num, den = num_b.sum(axis=0), den_b.sum()
    reps = (num[None, :] - num_b) / (den - den_b)[:, None]
    return num / den, reps


def jackknife_stderr(reps: np.ndarray) -> np.ndarray:
    """Jackknife standard error from leave-one-block-out replicates (axis 0)."""
    B = reps.shape[0]
    if B < 2:
        return np.zeros(reps.shape[1:])
    dev = reps - reps.mean(axis=0)
    return np.sqrt((B - 1) / B * np.sum(np.abs(dev) ** 2, axis=0))


def char_values(ens: WeightedEnsemble, fs, imag_parts=None):
    """Estimates and jackknife replicates of E_w[exp(i phi(f) - phi(f2))] for many f."""
    ens.check_health()
    P = ens.pairings(fs)
    Z = np.exp(1j * P)
    if imag_parts is not None:
        Q = ens.pairings([np.zeros(ens.coeffs.shape[1]) if g is None else g for g in imag_parts])
        Z = Z * np.exp(-Q)
    return block_ratio(ens.weights, Z)


def char_functional(source, f, imaginary_part=None, n: int = 10_000,
                    exact: complex | None = None) -> CharFuncEstimate:
    """Monte Carlo S(f1 + i f2) from a weighted ensemble or a Gaussian sampler."""
    ens = gaussian_ensemble(source, n) if isinstance(source, GaussianSampler) else source
    if not np.any(_coeffs(f)) and (imaginary_part is None or not np.any(_coeffs(imaginary_part))):
        return CharFuncEstimate(1.0 + 0.0j, 0.0, ens.n, ens.ess, exact)
    est, reps = char_values(ens, [f], None if imaginary_part is None else [imaginary_part])
    return CharFuncEstimate(complex(est[0]), float(jackknife_stderr(reps)[0]), ens.n, ens.ess, exact)


def gaussian_char_exact(C, f, imaginary_part=None) -> complex:
    """exp(-1/2 <C h, h>) with the bilinear pairing for h = f1 + i f2."""
    q = C.quad_form(f)
    if imaginary_part is not None:
        q = q - C.quad_form(imaginary_part) + 2j * C.quad_form(f, imaginary_part)
    return complex(np.exp(-0.5 * q))


def gaudiff_exact(C, f, g) -> float:
    """E|e^{i phi(f)} - e^{i phi(g)}|^2 = 2 (1 - exp(-||C^{1/2}(f - g)||^2 / 2))."""
    h = _coeffs(f) - _coeffs(g)
    return float(2.0 * (1.0 - np.exp(-0.5 * C.quad_form(h))))


def gaudiff_mc(ens: WeightedEnsemble, f, g) -> tuple[float, float]:
    P = ens.pairings([f, g])
    X = np.abs(np.exp(1j * P[:, 0]) - np.exp(1j * P[:, 1]))[:, None] ** 2
    est, reps = block_ratio(ens.weights, X)
    return float(est[0]), float(jackknife_stderr(reps)[0])


def domination_constant(K1: float, K2: float) -> float:
    """Constant in |E_k Psi| <= K (E_C |Psi|^2)^{1/2} given E rho >= K1, E rho^2 <= K2.

    Cauchy-Schwarz gives sqrt(K2) / K1; K2 / K1 is the other common reading.
    The larger of the two is returned.
    """
    return max(K2, math.sqrt(K2)) / K1


def exp_algebra_l2_sq(C, amps, fs) -> float:
    """E_C |sum_j a_j exp(i phi(f_j))|^2 in closed form."""
    a = np.asarray(amps, dtype=complex)
    F = [_coeffs(f) for f in fs]
    G = np.array([[np.exp(-0.5 * C.quad_form(fi - fj)) for fj in F] for fi in F])
    return float(np.real(a @ G @ a.conj()))


def l1_l2_domination(ens: WeightedEnsemble, C, amps, fs, K1: float, K2: float):
    """(|E_w Psi|, stderr, bound) for Psi = sum_j a_j exp(i phi(f_j))."""
    P = ens.pairings(fs)
    psi = np.exp(1j * P) @ np.asarray(amps, dtype=complex)
    est, reps = block_ratio(ens.weights, psi[:, None])
    se = float(jackknife_stderr(np.abs(reps))[0])
    bound = domination_constant(K1, K2) * math.sqrt(max(exp_algebra_l2_sq(C, amps, fs), 0.0))
    return float(abs(est[0])), se, bound


@dataclass(frozen=True)
class DensityMoments:
    mean: float
    mean_sq: float
    stderr_mean: float
    stderr_sq: float
    n: int
    passed: bool | None = None


def density_moments(sampler: GaussianSampler, model: DensityModel | None, n: int,
                    K1: float | None = None, K2: float | None = None) -> DensityMoments:
    """E[rho] and E[rho^2] under mu_C, unshifted, with plain standard errors."""
    if n < 1000:
        raise ValueError("density moments need n >= 1000")
    if model is None:
        return DensityMoments(1.0, 1.0, 0.0, 0.0, n, _moment_flags(1.0, 1.0, K1, K2))
    coeffs = sampler.coefficients(n)
    logw = np.concatenate([model.log_density(coeffs[i:i + 512]) for i in range(0, n, 512)])
    rho = np.exp(logw)
    if not np.all(np.isfinite(rho)):
        raise EnsembleHealthError("density overflow while estimating moments")
    m1, m2 = float(np.mean(rho)), float(np.mean(rho**2))
    s1 = float(np.std(rho, ddof=1) / np.sqrt(n))
    s2 = float(np.std(rho**2, ddof=1) / np.sqrt(n))
    return DensityMoments(m1, m2, s1, s2, n, _moment_flags(m1, m2, K1, K2))


def _moment_flags(m1, m2, K1, K2):
    if K1 is None and K2 is None:
        return None
    ok = True
    if K1 is not None:
        ok &= m1 >= K1
    if K2 is not None:
        ok &= m2 <= K2
    return bool(ok)


def second_moment(ens: WeightedEnsemble, f) -> tuple[float, float]:
    """Weighted E[phi(f)^2] with jackknife stderr."""
    if not np.any(_coeffs(f)):
        return 0.0, 0.0
    ens.check_health()
    P = ens.pairings([f])
    est, reps = block_ratio(ens.weights, P**2)
    return float(est[0]), float(jackknife_stderr(reps)[0])


def fourth_cumulant(ens: WeightedEnsemble, f) -> tuple[float, float]:
    """Weighted kappa_4 = E X^4 - 3 (E X^2)^2 of X = phi(f) (mean zero by symmetry)."""
    P = ens.pairings([f])[:, 0]
    X = np.column_stack([P**2, P**4])
    est, reps = block_ratio(ens.weights, X)
    k4 = est[1] - 3.0 * est[0] ** 2
    k4_reps = reps[:, 1] - 3.0 * reps[:, 0] ** 2
    return float(k4), float(jackknife_stderr(k4_reps[:, None])[0])


@dataclass(frozen=True)
class ScanPoint:
    t: float
    value: float
    stderr: float

    @property
    def ratio(self) -> float:
        return self.value / self.t


def small_t_scan(ens: WeightedEnsemble, h_width: float, t_list, lift) -> list[ScanPoint]:
    """C(f_t, f_t) for f_t = (smoothed indicator of (0, t)) x h, estimated on the ensemble.

    ``lift`` carries a plane function to a sphere field at the ensemble's
    scale (for example ``lambda f: lift_to_sphere(f, pipe)[0]``).
    """
    out = []
    for t in t_list:
        f_t = plane.smoothed_interval_function(t, h_width)
        v, s = second_moment(ens, lift(f_t))
        out.append(ScanPoint(float(t), v, s))
    return out


def small_t_scan_exact(h_width: float, t_list, mass: float = 1.0, route: str = "fourier") -> list[ScanPoint]:
    """Free-field C(f_t, f_t) on the plane; ``route`` is "fourier" or "mixture"."""
    out = []
    for t in t_list:
        if route == "fourier":
            v = plane.smoothed_interval_form(t, h_width, mass)
        elif route == "mixture":
            v = plane.resolvent_form(plane.smoothed_interval_function(t, h_width), mass=mass)
        else:
            raise ValueError(f"unknown route {route!r}")
        out.append(ScanPoint(float(t), float(v), 0.0))
    return out


# ---------------------------------------------------------------------------
# text export


def _fmt(x: float) -> str:
    return format(float(x), ".17g")


def export_ensemble(ens: WeightedEnsemble, path) -> None:
    """Header ``# d L seed k``, then one line of coefficients per field.

    The log-weight of each field is written as the first column.
    """
    with open(path, "w", encoding="ascii") as fh:
        fh.write(f"# d={ens.d} L={ens.L} seed={ens.seed} k={_fmt(ens.k)} n={ens.n}\n")
        fh.write("# columns: log_weight, coefficients...\n")
        for lw, row in zip(ens.log_weights, ens.coeffs):
            fh.write(" ".join([_fmt(lw)] + [_fmt(v) for v in row]) + "\n")


def load_ensemble(path) -> WeightedEnsemble:
    with open(path, encoding="ascii") as fh:
        header = fh.readline()
        meta = dict(tok.split("=") for tok in header[1:].split())
        fh.readline()
        data = np.loadtxt(fh, ndmin=2)
    d, L = int(meta["d"]), int(meta["L"])
    if data.size == 0:
        data = np.zeros((0, sh.n_coeffs(d, L) + 1))
    return WeightedEnsemble(d, L, data[:, 1:], data[:, 0], float(meta["k"]), int(meta["seed"]))
