"""Rotation-invariant smoothing by heat-kernel multipliers.

A_k multiplies degree l by exp(-t_k l(l+d-1)) with t_k = k^{-p} (p = 4 by
default), so its kernel has width ~ k^{-p/2} and k * width -> 0 for p > 2.
Being degree-diagonal, A_k commutes exactly with every isometry of S^d.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import special

from . import sphere_harmonics as sh


@dataclass(frozen=True, eq=False)
class MollifierFamily:
    d: int
    L: int
    k: float
    t: float
    multipliers: np.ndarray

    @property
    def diagonal(self) -> np.ndarray:
        return sh.expand_degree_multipliers(self.d, self.L, self.multipliers)

    def kernel(self, cos_gamma) -> np.ndarray:
        """A_k(x, y) as a function of cos(angle between x and y)."""
        return sh.legendre_series(self.d, self.multipliers, cos_gamma)


def build_mollifier(k: float, d: int, L: int, exponent: float = 4.0) -> MollifierFamily:
    if k < 1:
        raise ValueError("mollifier index k must be >= 1")
    t = float(k) ** (-exponent)
    a = np.exp(-t * sh.laplacian_eigenvalues(d, L))
    return MollifierFamily(d, L, float(k), t, a)


def mollify(A: MollifierFamily, phi: sh.SphereField) -> sh.SphereField:
    if (A.d, A.L) != (phi.d, phi.L):
        raise sh.HarmonicsError(
            f"mollifier (d={A.d}, L={A.L}) does not match field (d={phi.d}, L={phi.L})"
        )
    return sh.SphereField(phi.d, phi.L, A.diagonal * phi.coeffs)


def mollify_coeffs(A: MollifierFamily, coeffs: np.ndarray) -> np.ndarray:
    """Batch version on raw coefficient arrays ``(..., n_coeffs)``."""
    return np.asarray(coeffs) * A.diagonal


@dataclass
class MollifierDiagnostics:
    trace: float
    diagonal: float
    diagonal_spread: float
    effective_width: float


def trace(A: MollifierFamily) -> float:
    mult = np.array([sh.multiplicity(A.d, l) for l in range(A.L + 1)])
    return float(np.dot(A.multipliers, mult))


def diagonal_value(A: MollifierFamily) -> float:
    """A_k(x, x), constant on the sphere by the addition theorem."""
    return float(A.kernel(1.0))


def kernel_cutoff(d: int, t: float, floor: float = 1e-18) -> int:
    """Degree beyond which exp(-t l(l+d-1)) < floor."""
    target = -np.log(floor) / t
    return int(np.ceil(0.5 * (-(d - 1) + np.sqrt((d - 1) ** 2 + 4 * target))))


def effective_width(A: MollifierFamily, mass_tol: float = 1e-6, n: int | None = None) -> float:
    """Smallest geodesic radius r with kernel |mass| outside r below mass_tol of total.

    Uses the untruncated heat kernel (degrees extended until the multipliers
    are negligible) so that cutoff ringing does not inflate the width.
    """
    L = max(A.L, kernel_cutoff(A.d, A.t))
    if L > A.L:
        A = MollifierFamily(A.d, L, A.k, A.t, np.exp(-A.t * sh.laplacian_eigenvalues(A.d, L)))
    n = max(4000, 40 * L) if n is None else n
    x, w = special.roots_legendre(n)
    gamma = 0.5 * np.pi * (x + 1.0)
    w = 0.5 * np.pi * w
    density = np.abs(A.kernel(np.cos(gamma)))
    measure = 2.0 * np.pi * np.sin(gamma) if A.d == 2 else np.full_like(gamma, 2.0)
    mass = density * measure * w
    tail = np.cumsum(mass[::-1])[::-1]  # tail[i] = mass at gamma >= gamma_i
    total = tail[0]
    outside = np.append(tail[1:], 0.0) / total
    idx = int(np.argmax(outside < mass_tol))
    return float(gamma[idx])


def mollifier_diagnostics(A: MollifierFamily, grid: sh.SphereGrid | None = None,
                          mass_tol: float = 1e-6) -> MollifierDiagnostics:
    """Trace, kernel diagonal (checked at grid nodes), and effective width."""
    diag = diagonal_value(A)
    spread = 0.0
    if grid is not None:
        nodes = grid.nodes[:: max(1, grid.nodes.shape[0] // 7)]
        B = sh.basis_matrix(A.d, A.L, nodes)
        vals = (B**2) @ A.diagonal
        spread = float(np.max(np.abs(vals - diag)))
    return MollifierDiagnostics(trace(A), diag, spread, effective_width(A, mass_tol))
