"""Interaction densities rho_k on mollified fields.

Three kinds share the weighted form log rho_k(phi) = int_S g(x) G(A_k phi(x)) dx:

* ``bounded``      G = F with |F| <= B, default weight g = +1;
* ``regularized``  G = F_k (F clipped at level k), weight g = -lambda_k;
* ``wick``         G = sum_n p_n :(.)^n:_{C_k}, weight g = -1.
"""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from . import sphere_harmonics as sh
from .covariance import SpectralOperator
from .mollifier import MollifierFamily

KINDS = ("bounded", "regularized", "wick")
MAX_WICK_ORDER = 12


class InteractionError(ValueError):
    pass


# ---------------------------------------------------------------------------
# scalar functions F


@dataclass(frozen=True)
class ScalarFunction:
    """Named, serializable scalar function handle."""

    name: str
    params: tuple = ()

    def __call__(self, x):
        x = np.asarray(x, dtype=float)
        p = dict(self.params)
        if self.name == "cos":
            return p.get("eps", 1.0) * np.cos(p.get("freq", 1.0) * x)
        if self.name == "power":
            return p.get("coef", 1.0) * x ** int(p.get("exponent", 4))
        if self.name == "tanh":
            return p.get("eps", 1.0) * np.tanh(x)
        if self.name == "const":
            return np.full_like(x, p.get("eps", 1.0))
        if self.name == "zero":
            return np.zeros_like(x)
        raise InteractionError(f"unknown scalar function {self.name!r}")

    @property
    def sup(self) -> float | None:
        """Closed-form sup |F| when F is bounded, else None."""
        p = dict(self.params)
        if self.name in ("cos", "tanh", "const"):
            return abs(p.get("eps", 1.0))
        if self.name == "zero":
            return 0.0
        return None

    def at_zero(self) -> float:
        return float(self(0.0))

    def to_dict(self) -> dict:
        return {"name": self.name, **dict(self.params)}


FUNCTION_NAMES = ("cos", "power", "tanh", "const", "zero")


def make_function(name: str, **params) -> ScalarFunction:
    if name not in FUNCTION_NAMES:
        raise InteractionError(f"unknown scalar function {name!r}; choose from {FUNCTION_NAMES}")
    return ScalarFunction(name, tuple(sorted((k, float(v)) for k, v in params.items())))


# ---------------------------------------------------------------------------
# specs


@dataclass(frozen=True)
class InteractionSpec:
    kind: str
    F: ScalarFunction | None = None
    bound: float | None = None
    poly: tuple = ()
    weight: float | None = None
    for_rp: bool = False

    def __post_init__(self):
        if self.kind not in KINDS:
            raise InteractionError(f"interaction kind must be one of {KINDS}")
        if self.kind in ("bounded", "regularized") and self.F is None:
            raise InteractionError(f"{self.kind} interaction needs a function F")
        if self.kind == "bounded":
            B = self.F.sup if self.bound is None else float(self.bound)
            if B is None:
                raise InteractionError("bounded interaction needs a declared sup bound")
            probe = np.linspace(-50.0, 50.0, 20001)
            if np.max(np.abs(self.F(probe))) > B * (1 + 1e-12):
                raise InteractionError(f"|F| exceeds the declared bound {B} on the probe grid")
            object.__setattr__(self, "bound", float(B))
        if self.kind == "wick":
            p = tuple(float(c) for c in self.poly)
            while p and p[-1] == 0.0:
                p = p[:-1]
            deg = len(p) - 1
            if deg < 0 or deg % 2 or deg > 8 or p[-1] <= 0:
                raise InteractionError(
                    "Wick polynomial must have even degree <= 8 and a positive leading coefficient"
                )
            object.__setattr__(self, "poly", p)
        if self.F is not None and self.F.at_zero() != 0.0:
            msg = f"F(0) = {self.F.at_zero():g} != 0; the density is not reflection positive in general"
            if self.for_rp:
                raise InteractionError(msg)
            warnings.warn(msg, RuntimeWarning, stacklevel=2)

    @property
    def default_weight(self) -> float:
        return 1.0 if self.kind == "bounded" else -1.0

    def to_dict(self) -> dict:
        out = {"kind": self.kind}
        if self.F is not None:
            out["F"] = self.F.to_dict()
        if self.kind == "wick":
            out["poly"] = list(self.poly)
        if self.weight is not None:
            out["weight"] = self.weight
        return out


def bounded(F: ScalarFunction, bound: float | None = None, weight: float | None = None) -> InteractionSpec:
    return InteractionSpec("bounded", F, bound=bound, weight=weight)


def regularized(F: ScalarFunction) -> InteractionSpec:
    return InteractionSpec("regularized", F)


def wick(poly) -> InteractionSpec:
    return InteractionSpec("wick", poly=tuple(poly))


# ---------------------------------------------------------------------------
# regularization of unbounded F


def truncate_F(F: Callable, k: float) -> Callable:
    """F_k = F on V_k = {|F| <= k}, and k elsewhere."""
    if k < 1:
        raise InteractionError("truncation level k must be >= 1")

    def F_k(x):
        v = np.asarray(F(x), dtype=float)
        return np.where(np.abs(v) <= k, v, float(k))

    return F_k


def _bisect_level(F: Callable, a: float, b: float, level: float, iters: int = 200) -> float:
    """x in [a, b] with |F(x)| = level, given |F(a)| <= level < |F(b)|."""
    for _ in range(iters):
        mid = 0.5 * (a + b)
        if mid in (a, b):
            break
        if abs(float(F(mid))) <= level:
            a = mid
        else:
            b = mid
    return a


def sup_on_level_set(F: Callable, k: float, x_max: float | None = None,
                     n: int = 4001, max_range: float = 1e8) -> float:
    """sup{|F(x)| : |F(x)| <= k} on an adaptive probe grid.

    The range doubles until |F| exceeds k somewhere (bracketing the level) or
    ``max_range`` is reached; crossings are then refined by bisection, so for
    continuous unbounded F the result equals k to round-off.
    """
    R = 1.0 if x_max is None else float(x_max)
    while True:
        x = np.linspace(-R, R, n)
        v = np.abs(np.asarray(F(x), dtype=float))
        over = v > k
        if over.any() or R >= max_range:
            break
        R *= 2.0
    inside = ~over
    best = float(v[inside].max()) if inside.any() else 0.0
    # refine each inside -> outside transition
    edges = np.flatnonzero(inside[:-1] != inside[1:])
    for i in edges:
        a, b = (x[i], x[i + 1]) if inside[i] else (x[i + 1], x[i])
        best = max(best, abs(float(F(_bisect_level(F, a, b, k)))))
    return best


def coupling_lambda(F: Callable, k: float, **kw) -> float:
    """lambda_k = 1 / sup_{V_k} |F|."""
    if k < 1:
        raise InteractionError("k must be >= 1")
    s = sup_on_level_set(F, k, **kw)
    if s <= 0.0:
        raise InteractionError("F vanishes on V_k; the coupling is undefined")
    return 1.0 / s


# ---------------------------------------------------------------------------
# Wick ordering


def wick_coefficients(n: int) -> list[tuple[int, int]]:
    """[(coefficient, j), ...] of (-1)^j n!/((n-2j)! j! 2^j) c^j f^(n-2j)."""
    out = []
    for j in range(n // 2 + 1):
        coef = math.factorial(n) // (math.factorial(n - 2 * j) * math.factorial(j) * 2**j)
        out.append(((-1) ** j * coef, j))
    return out


def wick_power(values, n: int, c):
    """:f^n:_c node-wise; ``c`` is the covariance diagonal (scalar or per node)."""
    if n < 0 or n > MAX_WICK_ORDER:
        raise InteractionError(f"Wick order must be in 0..{MAX_WICK_ORDER}")
    c_arr = np.asarray(c, dtype=float)
    if np.any(c_arr < 0):
        raise InteractionError("covariance diagonal must be nonnegative")
    f = np.asarray(values, dtype=float)
    out = np.zeros(np.broadcast(f, c_arr).shape)
    for coef, j in wick_coefficients(n):
        out = out + coef * c_arr**j * f ** (n - 2 * j)
    return out


def wick_polynomial(values, poly, c):
    f = np.asarray(values, dtype=float)
    out = np.zeros(np.broadcast(f, np.asarray(c)).shape)
    for n, p in enumerate(poly):
        if p != 0.0:
            out = out + p * wick_power(f, n, c)
    return out


def c_k_diagonal(C: SpectralOperator, A: MollifierFamily) -> float:
    """C_k(x, x) for C_k = A_k C A_k, constant by rotation invariance."""
    if (C.d, C.L) != (A.d, A.L):
        raise InteractionError("covariance and mollifier must share d and L")
    return float(sh.legendre_series(C.d, A.multipliers**2 * C.multipliers, 1.0))


def c_k_pointwise(C, A: MollifierFamily, points) -> np.ndarray:
    """C_k(x, x) at given points by explicit basis evaluation (any operator)."""
    B = sh.basis_matrix(A.d, A.L, points) * A.diagonal
    if isinstance(C, SpectralOperator):
        return np.einsum("pi,pi->p", B * C.diagonal, B)
    return np.einsum("pi,ij,pj->p", B, C.matrix, B)


def c_k_kernel(C: SpectralOperator, A: MollifierFamily, x, y) -> np.ndarray:
    """C_k(x, y) via the zonal kernel series."""
    cos_g = np.sum(np.asarray(x) * np.asarray(y), axis=-1)
    return sh.legendre_series(C.d, A.multipliers**2 * C.multipliers, cos_g)


# ---------------------------------------------------------------------------
# log densities


@dataclass(frozen=True)
class LogDensityValue:
    value: float
    k: float
    spec: InteractionSpec

    def __post_init__(self):
        if not np.isfinite(self.value):
            raise InteractionError(f"non-finite log density at k={self.k}")


@dataclass(frozen=True, eq=False)
class DensityModel:
    """Everything needed to evaluate log rho_k on batches of coefficient vectors."""

    spec: InteractionSpec
    k: float
    mollifier: MollifierFamily
    grid: sh.SphereGrid
    c_diag: np.ndarray | float = 0.0
    lam: float = 1.0
    weight_values: np.ndarray | None = field(default=None, repr=False)

    @property
    def weight(self) -> float:
        if self.spec.weight is not None:
            return self.spec.weight
        if self.spec.kind == "regularized":
            return -self.lam
        return self.spec.default_weight

    def integrand(self, values: np.ndarray) -> np.ndarray:
        s = self.spec
        if s.kind == "bounded":
            return s.F(values)
        if s.kind == "regularized":
            return truncate_F(s.F, self.k)(values)
        return wick_polynomial(values, s.poly, self.c_diag)

    def log_density(self, coeffs: np.ndarray) -> np.ndarray:
        """log rho_k for coefficient arrays of shape (..., n_coeffs)."""
        coeffs = np.asarray(coeffs, dtype=float)
        values = self.grid.synthesis(coeffs * self.mollifier.diagonal, self.mollifier.L)
        g = self.integrand(values)
        w = self.grid.weights if self.weight_values is None else self.grid.weights * self.weight_values
        out = self.weight * (g @ w)
        return out

    def bound(self) -> float | None:
        """sup |log rho| for bounded kinds, from the sup bound of F."""
        if self.spec.kind == "bounded":
            return abs(self.weight) * self.spec.bound * sh.VOLUME[self.mollifier.d]
        if self.spec.kind == "regularized":
            return abs(self.weight) * self.k * sh.VOLUME[self.mollifier.d]
        return None


def build_density(spec: InteractionSpec, k: float, A: MollifierFamily, C=None,
                  grid: sh.SphereGrid | None = None, oversample: int = 2) -> DensityModel:
    """Assemble a density model; ``C`` is needed for the Wick diagonal."""
    grid = sh.grid_for_cutoff(A.d, A.L, oversample) if grid is None else grid
    c_diag: np.ndarray | float = 0.0
    lam = 1.0
    if spec.kind == "wick":
        if C is None:
            raise InteractionError("Wick densities need the covariance C")
        if isinstance(C, SpectralOperator):
            c_diag = c_k_diagonal(C, A)
        else:
            c_diag = c_k_pointwise(C, A, grid.nodes)
    elif spec.kind == "regularized":
        lam = coupling_lambda(spec.F, k)
    return DensityModel(spec, float(k), A, grid, c_diag, lam)


def log_density(spec: InteractionSpec, phi: sh.SphereField, k: float, A: MollifierFamily,
                grid: sh.SphereGrid | None = None, C=None) -> LogDensityValue:
    model = build_density(spec, k, A, C, grid)
    return LogDensityValue(float(model.log_density(phi.coeffs)), float(k), spec)
