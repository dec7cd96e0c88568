"""Covariance operators on S^d, the time reflection, and reflection-positivity checks.

The scaled covariance C_{S,k} = U_alpha U_{beta_k} (Delta_E + m^2)^{-1} (...)^{-1}
has the sphere-side resolvent form

    C_{S,k} = k^2 Lambda (Delta_S^c + k^2 m^2 Lambda^2)^{-1} Lambda,

and, since Lambda^{-1} = 1 - x_d is a degree-one polynomial, the equivalent
precision form

    C_{S,k}^{-1} = m^2 + k^{-2} (1 - x_d) Delta_S^c (1 - x_d).

The precision form is assembled exactly on the band-limited subspace (no pole
singularity); the resolvent form uses quadrature Gram matrices of Lambda and
Lambda^2 on a pole-free grid and is kept as an independent route.
"""
from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
from scipy import linalg
from scipy.sparse import linalg as splinalg

from . import sphere_harmonics as sh
from .conformal import ConformalPipeline, lift_to_sphere, rotation_g_k
from .plane import PlaneTestFunction, free_covariance_form


class CovarianceError(ValueError):
    pass


class NotPSDError(CovarianceError):
    def __init__(self, message: str, min_eigenvalue: float):
        super().__init__(message)
        self.min_eigenvalue = min_eigenvalue


# ---------------------------------------------------------------------------
# operator types


@dataclass(frozen=True, eq=False)
class SpectralOperator:
    """Degree-diagonal operator: one multiplier per degree l <= L."""

    d: int
    L: int
    multipliers: np.ndarray
    psd: bool = True

    def __post_init__(self):
        mult = np.asarray(self.multipliers, dtype=float)
        if mult.shape != (self.L + 1,):
            raise CovarianceError("need one multiplier per degree 0..L")
        if not np.all(np.isfinite(mult)):
            raise CovarianceError("multipliers must be finite")
        if self.psd and np.any(mult < 0):
            raise CovarianceError("covariance multipliers must be nonnegative")
        object.__setattr__(self, "multipliers", mult)

    @property
    def diagonal(self) -> np.ndarray:
        return sh.expand_degree_multipliers(self.d, self.L, self.multipliers)

    @property
    def matrix(self) -> np.ndarray:
        return np.diag(self.diagonal)

    def apply(self, phi: sh.SphereField) -> sh.SphereField:
        return sh.SphereField(phi.d, phi.L, self.diagonal * phi.coeffs)

    def quad_form(self, u, v=None) -> float:
        u = _coeffs(u)
        v = u if v is None else _coeffs(v)
        return float(np.dot(u * self.diagonal, v))

    def norm(self) -> float:
        return float(np.max(np.abs(self.multipliers)))


@dataclass(frozen=True, eq=False)
class DenseOperator:
    """Symmetric operator stored as a full matrix in the harmonic basis.

    When built from a precision matrix, its Cholesky factor is kept for
    solves and for sampling.
    """

    d: int
    L: int
    matrix: np.ndarray
    psd: bool = True
    precision: np.ndarray | None = None
    _chol: tuple | None = field(default=None, repr=False)

    def __post_init__(self):
        A = np.asarray(self.matrix, dtype=float)
        n = sh.n_coeffs(self.d, self.L)
        if A.shape != (n, n):
            raise CovarianceError(f"matrix must be {n}x{n}")
        scale = max(np.max(np.abs(A)), 1e-300)
        if np.max(np.abs(A - A.T)) > 1e-10 * scale:
            raise CovarianceError("operator matrix is not symmetric")
        object.__setattr__(self, "matrix", 0.5 * (A + A.T))

    @classmethod
    def from_precision(cls, d: int, L: int, Q: np.ndarray) -> "DenseOperator":
        Q = 0.5 * (Q + Q.T)
        try:
            chol = linalg.cho_factor(Q, lower=True)
        except linalg.LinAlgError as exc:
            lo = float(linalg.eigvalsh(Q, subset_by_index=[0, 0])[0])
            raise NotPSDError(f"precision matrix not positive definite: {exc}", lo) from exc
        C = linalg.cho_solve(chol, np.eye(Q.shape[0]))
        return cls(d, L, C, True, Q, chol)

    def apply(self, phi: sh.SphereField) -> sh.SphereField:
        return sh.SphereField(phi.d, phi.L, self.matrix @ phi.coeffs)

    def quad_form(self, u, v=None) -> float:
        u = _coeffs(u)
        v = u if v is None else _coeffs(v)
        if self._chol is not None:
            return float(np.dot(u, linalg.cho_solve(self._chol, v)))
        return float(u @ self.matrix @ v)

    def extreme_eigenvalues(self) -> tuple[float, float]:
        """(smallest, largest) eigenvalue."""
        if self._chol is not None:
            # eigenvalues of C are reciprocals of those of the precision
            q_hi = splinalg.eigsh(self.precision, k=1, which="LA", return_eigenvectors=False)[0]
            q_lo = linalg.eigvalsh(self.precision, subset_by_index=[0, 0])[0]
            return float(1.0 / q_hi), float(1.0 / q_lo)
        w = linalg.eigvalsh(self.matrix)
        return float(w[0]), float(w[-1])

    def norm(self) -> float:
        lo, hi = self.extreme_eigenvalues()
        return max(abs(lo), abs(hi))

    def compress(self, basis: np.ndarray) -> np.ndarray:
        """Matrix of the operator on span(columns of ``basis``), orthonormalized."""
        q, _ = np.linalg.qr(basis)
        return q.T @ self.matrix @ q


def _coeffs(u) -> np.ndarray:
    return u.coeffs if isinstance(u, sh.SphereField) else np.asarray(u, dtype=float)


# ---------------------------------------------------------------------------
# constructors


def free_covariance(m: float, d: int, L: int) -> SpectralOperator:
    """(m^2 + Delta_S)^{-1}: multiplier 1 / (m^2 + l(l+d-1))."""
    if m <= 0:
        raise CovarianceError("mass must be positive")
    return SpectralOperator(d, L, 1.0 / (m * m + sh.laplacian_eigenvalues(d, L)))


def conformal_laplacian(d: int, L: int) -> SpectralOperator:
    """Delta_S + d(d-2)/4 (negative at l=0 when d=1)."""
    return SpectralOperator(d, L, sh.laplacian_eigenvalues(d, L) + d * (d - 2) / 4.0, psd=False)


def scaled_precision(k: float, m: float, d: int, L: int) -> np.ndarray:
    """Galerkin matrix of m^2 + k^{-2} (1 - x_d) Delta^c (1 - x_d) on degree <= L.

    Multiplication by 1 - x_d maps degree <= L into degree <= L+1 exactly,
    so the matrix is the exact restriction of the continuum quadratic form.
    """
    n = sh.n_coeffs(d, L)
    X = sh.axis_multiplication(d, L).toarray()
    G = -X
    G[np.arange(n), np.arange(n)] += 1.0
    lap = sh.expand_degree_multipliers(d, L + 1, conformal_laplacian(d, L + 1).multipliers)
    return m * m * np.eye(n) + (G.T * lap) @ G / (k * k)


def scaled_covariance_resolvent(k: float, m: float, d: int, L: int,
                                grid: sh.SphereGrid) -> DenseOperator:
    """k^2 Lambda (Delta^c + k^2 m^2 Lambda^2)^{-1} Lambda with quadrature Gram matrices."""
    grid.check_cutoff(L)
    lam = 1.0 / (1.0 - grid.nodes[:, -1])
    basis = sh.basis_matrix(d, L, grid.nodes)
    gram1 = basis.T @ ((grid.weights * lam)[:, None] * basis)
    gram2 = basis.T @ ((grid.weights * lam * lam)[:, None] * basis)
    lap = np.diag(conformal_laplacian(d, L).diagonal)
    C = k * k * gram1 @ np.linalg.solve(lap + (k * m) ** 2 * gram2, gram1)
    return DenseOperator(d, L, 0.5 * (C + C.T))


def default_probes(d: int) -> list[PlaneTestFunction]:
    """Plane bumps used to validate C_{S,k} against the Euclidean oracle."""
    if d == 1:
        return [PlaneTestFunction.bump(1), PlaneTestFunction.bump(1, 0.7, [0.8], 0.6)]
    return [PlaneTestFunction.bump(2), PlaneTestFunction.bump(2, 0.7, [0.8, -0.4], 0.6)]


def validate_scaled_covariance(C: DenseOperator, k: float, m: float,
                               probes: Sequence[PlaneTestFunction] | None = None,
                               oversample: int = 2) -> float:
    """Largest relative gap between <C u, u> and the plane form over probe pairs.

    Uses the conjugation definition: for u = U_alpha U_beta_k f,
    <C_{S,k} u, v> = <(Delta_E + m^2)^{-1} f, g> on L^2(R^d).
    """
    from .plane import resolvent_form

    probes = default_probes(C.d) if probes is None else list(probes)
    pipe = ConformalPipeline.build(k, C.d, C.L, oversample, residual_cap=np.inf)
    lifts = [lift_to_sphere(f, pipe)[0] for f in probes]
    worst = 0.0
    for i, f in enumerate(probes):
        for j in range(i, len(probes)):
            sphere = C.quad_form(lifts[i], lifts[j])
            plane = resolvent_form(f, probes[j], m)
            scale = np.sqrt(free_covariance_form(f, m) * free_covariance_form(probes[j], m))
            worst = max(worst, abs(sphere - plane) / scale)
    return worst


def scaled_covariance(k: float, m: float, d: int, L: int, grid: sh.SphereGrid | None = None,
                      route: str = "precision", validate_tol: float | None = None,
                      probes: Sequence[PlaneTestFunction] | None = None) -> DenseOperator:
    """The truncated scaled covariance tilde C_{S,k} on degree <= L.

    ``route="precision"`` (default) inverts the exact Galerkin precision;
    ``route="resolvent"`` assembles the resolvent form on ``grid``.  With
    ``validate_tol`` the result is checked against the conjugation definition
    on probe bumps and a :class:`CovarianceError` is raised on disagreement.
    """
    if k <= 0 or m <= 0:
        raise CovarianceError("k and m must be positive")
    if route == "precision":
        C = DenseOperator.from_precision(d, L, scaled_precision(k, m, d, L))
    elif route == "resolvent":
        grid = sh.grid_for_cutoff(d, L, 2) if grid is None else grid
        if not grid.pole_excluded:
            raise CovarianceError("resolvent assembly needs a pole-free grid")
        C = scaled_covariance_resolvent(k, m, d, L, grid)
        lo = float(linalg.eigvalsh(C.matrix, subset_by_index=[0, 0])[0])
        if lo < -1e-8 * np.max(np.abs(C.matrix)):
            raise NotPSDError(f"resolvent assembly not PSD (min eig {lo:.3g})", lo)
    else:
        raise CovarianceError(f"unknown route {route!r}")
    if validate_tol is not None:
        gap = validate_scaled_covariance(C, k, m, probes)
        if gap > validate_tol:
            raise CovarianceError(
                f"scaled covariance disagrees with the plane oracle: {gap:.3g} > {validate_tol:.3g}"
            )
    return C


def operator_sqrt(A, tol: float = 1e-8):
    """Symmetric PSD square root (spectral for degree-diagonal operators)."""
    if isinstance(A, SpectralOperator):
        if np.any(A.multipliers < -tol * max(A.norm(), 1e-300)):
            raise NotPSDError("negative multiplier", float(A.multipliers.min()))
        return SpectralOperator(A.d, A.L, np.sqrt(np.clip(A.multipliers, 0.0, None)))
    M = A.matrix if isinstance(A, DenseOperator) else np.asarray(A, dtype=float)
    w, V = linalg.eigh(0.5 * (M + M.T))
    scale = max(np.max(np.abs(w)), 1e-300)
    if w[0] < -tol * scale:
        raise NotPSDError(f"negative eigenvalue {w[0]:.3g}", float(w[0]))
    S = (V * np.sqrt(np.clip(w, 0.0, None))) @ V.T
    S = 0.5 * (S + S.T)
    if isinstance(A, DenseOperator):
        return DenseOperator(A.d, A.L, S)
    return S


# ---------------------------------------------------------------------------
# reflection


@dataclass(frozen=True)
class ReflectionTheta:
    """Time reflection: t -> -t on R^d, x_0 -> -x_0 on S^d.

    The stereographic projection maps x_0 > 0 onto t > 0, so the two actions
    are intertwined by U_alpha U_beta_k.
    """

    d: int

    def plane(self, f: PlaneTestFunction) -> PlaneTestFunction:
        return f.time_reflected()

    def sphere(self, phi: sh.SphereField) -> sh.SphereField:
        return sh.SphereField(phi.d, phi.L, sh.reflection_signs(phi.d, phi.L) * phi.coeffs)

    def points(self, x) -> np.ndarray:
        x = np.array(x, dtype=float)
        x[..., 0] = -x[..., 0]
        return x

    def __call__(self, f):
        if isinstance(f, PlaneTestFunction):
            return self.plane(f)
        if isinstance(f, sh.SphereField):
            return self.sphere(f)
        if isinstance(f, SphereBump):
            return f.reflected()
        raise TypeError(f"cannot reflect {type(f).__name__}")

    def matrix(self, L: int) -> np.ndarray:
        return np.diag(sh.reflection_signs(self.d, L))


@dataclass(frozen=True)
class SphereBump:
    """Geodesic Gaussian bump ``a * exp(-gamma^2 / (2 s^2))`` on S^d."""

    center: tuple
    width: float
    amplitude: float = 1.0

    @property
    def d(self) -> int:
        return len(self.center) - 1

    def unit_center(self) -> np.ndarray:
        c = np.asarray(self.center, dtype=float)
        return c / np.linalg.norm(c)

    def __call__(self, points) -> np.ndarray:
        gamma = np.arccos(np.clip(np.asarray(points) @ self.unit_center(), -1.0, 1.0))
        return self.amplitude * np.exp(-0.5 * (gamma / self.width) ** 2)

    def field(self, L: int, grid: sh.SphereGrid | None = None) -> sh.SphereField:
        grid = sh.grid_for_cutoff(self.d, L, 2) if grid is None else grid
        return sh.project_function(self, grid, L)

    def reflected(self) -> "SphereBump":
        c = self.unit_center()
        c[0] = -c[0]
        return SphereBump(tuple(c), self.width, self.amplitude)

    def equator_margin(self) -> float:
        """Geodesic distance from the center to {x_0 = 0}, minus 6 widths."""
        return float(np.arcsin(np.clip(self.unit_center()[0], -1, 1)) - 6.0 * self.width)


# ---------------------------------------------------------------------------
# reflection positivity


@dataclass
class RPResult:
    matrix: np.ndarray
    min_eigenvalue: float
    tolerance: float
    passed: bool


class SupportError(CovarianceError):
    pass


def negative_half_mass(phi: sh.SphereField, grid: sh.SphereGrid | None = None) -> float:
    """Fraction of ||phi||^2 carried by x_0 <= 0 (quadrature estimate)."""
    grid = sh.grid_for_cutoff(phi.d, phi.L, 2) if grid is None else grid
    vals = sh.synthesize(phi, grid)
    total = grid.integrate(vals**2)
    if total == 0.0:
        return 0.0
    mask = grid.nodes[:, 0] <= 0.0
    return float(np.dot(grid.weights[mask], vals[mask] ** 2) / total)


def check_positive_support(f, tol: float = 1e-8) -> None:
    """Effective support in the positive half (6 widths clear of the mirror)."""
    if isinstance(f, PlaneTestFunction):
        if f.min_time_margin() < 0.0:
            raise SupportError("plane bump closer than 6 widths to t = 0")
    elif isinstance(f, SphereBump):
        if f.equator_margin() < 0.0:
            raise SupportError("sphere bump closer than 6 widths to the equator")
    elif isinstance(f, sh.SphereField):
        frac = negative_half_mass(f)
        if frac > tol:
            raise SupportError(f"field carries {frac:.2g} of its mass in x_0 <= 0")
    else:
        raise TypeError(f"unsupported test function {type(f).__name__}")


def rp_gram_check(S: Callable, fs: Sequence, theta: ReflectionTheta,
                  tol: float = 1e-8, check_support: bool = True,
                  abs_tol: float = 0.0, L: int | None = None) -> RPResult:
    """Hermitian matrix S(f_i - Theta f_j) and its smallest eigenvalue.

    ``fs`` holds plane bumps, sphere fields, or :class:`SphereBump` objects
    (projected to degree <= ``L`` after the support check).  PASS iff
    ``min_eig >= -(tol * ||M|| + abs_tol)``; ``abs_tol`` carries statistical
    error bars for Monte Carlo functionals.
    """
    if check_support:
        for f in fs:
            check_positive_support(f)
    if any(isinstance(f, SphereBump) for f in fs):
        if L is None:
            raise CovarianceError("sphere bumps need a cutoff L")
        fs = [f.field(L) if isinstance(f, SphereBump) else f for f in fs]
    n = len(fs)
    M = np.empty((n, n), dtype=complex)
    refl = [theta(f) for f in fs]
    for i in range(n):
        for j in range(n):
            M[i, j] = S(fs[i] - refl[j])
    M = 0.5 * (M + M.conj().T)
    w = linalg.eigvalsh(M)
    scale = float(np.max(np.abs(w))) if n else 0.0
    threshold = tol * scale + abs_tol
    return RPResult(M, float(w[0]), threshold, bool(w[0] >= -threshold))


def rp_operator_check(A, fs: Sequence, theta: ReflectionTheta, tol: float = 1e-8,
                      check_support: bool = True):
    """Pairings <A f, Theta f> for f in the positive half.

    Returns ``(values, commutator_norm, passed)``.  ``A`` is a Spectral or
    Dense operator; the commutator ||A Theta - Theta A|| is checked first.
    """
    if check_support:
        for f in fs:
            check_positive_support(f)
    fields = [f.field(A.L) if isinstance(f, SphereBump) else f for f in fs]
    R = theta.matrix(A.L)
    M = A.matrix
    comm = float(np.max(np.abs(M @ R - R @ M)))
    if comm > tol * max(np.max(np.abs(M)), 1e-300):
        raise CovarianceError(f"operator does not commute with Theta (||[A,Theta]|| = {comm:.3g})")
    values = [A.quad_form(phi, theta(phi)) for phi in fields]
    scale = max([abs(A.quad_form(phi)) for phi in fields] + [1e-300])
    passed = all(v >= -tol * scale for v in values)
    return values, comm, passed


# ---------------------------------------------------------------------------
# rotation action and conjugation drift


def rotation_matrix(d: int, L: int, R, grid: sh.SphereGrid | None = None,
                    chunk: int = 2048) -> np.ndarray:
    """Matrix of phi -> phi(R^{-1} .) on degree <= L (block-diagonal by degree)."""
    grid = sh.grid_for_cutoff(d, L) if grid is None else grid
    R = np.asarray(R, dtype=float)
    n = sh.n_coeffs(d, L)
    out = np.zeros((n, n))
    deg = sh.degrees(d, L)
    blocks = [np.flatnonzero(deg == l) for l in range(L + 1)]
    for i in range(0, grid.nodes.shape[0], chunk):
        pts = grid.nodes[i:i + chunk]
        w = grid.weights[i:i + chunk]
        b0 = sh.basis_matrix(d, L, pts)
        b1 = sh.basis_matrix(d, L, pts @ R)
        for idx in blocks:
            out[np.ix_(idx, idx)] += b0[:, idx].T @ (w[:, None] * b1[:, idx])
    return out


def conjugation_drift(k: float, T, m: float, d: int, L: int,
                      grid: sh.SphereGrid | None = None,
                      C: DenseOperator | None = None) -> float:
    """|| R C R^{-1} - C || (operator norm) for the basis action R of g_k(T)."""
    T = np.atleast_1d(np.asarray(T, dtype=float))
    if not np.any(T):
        return 0.0
    C = scaled_covariance(k, m, d, L) if C is None else C
    g = rotation_g_k(T, k)
    Rm = rotation_matrix(d, L, g, grid)
    diff = Rm @ C.matrix @ Rm.T - C.matrix
    diff = 0.5 * (diff + diff.T)
    if diff.shape[0] <= 400:
        return float(np.max(np.abs(linalg.eigvalsh(diff))))
    ev = splinalg.eigsh(diff, k=1, which="LM", return_eigenvectors=False, tol=1e-12)
    return float(abs(ev[0]))


def probe_subspace_bounds(C: DenseOperator, max_degree: int = 4) -> tuple[float, float]:
    """Extreme eigenvalues of C compressed to harmonics of degree <= max_degree."""
    n = sh.n_coeffs(C.d, min(max_degree, C.L))
    w = linalg.eigvalsh(C.matrix[:n, :n])
    return float(w[0]), float(w[-1])


def warn_if_not_psd(A: np.ndarray, label: str) -> float:
    lo = float(linalg.eigvalsh(0.5 * (A + A.T), subset_by_index=[0, 0])[0])
    if lo < -1e-8 * max(np.max(np.abs(A)), 1e-300):
        warnings.warn(f"{label}: smallest eigenvalue {lo:.3g}", RuntimeWarning, stacklevel=2)
    return lo
