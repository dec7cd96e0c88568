"""Stereographic transfer between R^d and S^d, scaling, and near-translations.

The projection is taken from the north pole ``(0, ..., 0, 1)``:

    alpha_i(x) = x_i / (1 - x_d),      Lambda_alpha(x) = 1 / (1 - x_d),
    alpha^{-1}(y) = (2y, |y|^2 - 1) / (|y|^2 + 1),
    Lambda_{alpha^{-1}}(y) = 2 / (|y|^2 + 1).

A plane function f is carried to the sphere by U_alpha U_{beta_k}:

    (U_alpha U_{beta_k} f)(x) = Lambda_alpha(x)^{d/2} k^{d/2} f(k alpha(x)),

which is unitary from L^2(R^d) to L^2(S^d).
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import sphere_harmonics as sh
from .plane import PlaneTestFunction, l2_norm_sq


class ConformalError(ValueError):
    pass


class TruncationError(ConformalError):
    """The lifted field lost too much L^2 mass to the degree cutoff."""


def stereo_project(x):
    """alpha(x) and Lambda_alpha(x) for points off the north pole."""
    x = np.asarray(x, dtype=float)
    denom = 1.0 - x[..., -1]
    if np.any(denom <= 0.0):
        raise ConformalError("stereographic projection undefined at the north pole")
    y = x[..., :-1] / denom[..., None]
    return y, 1.0 / denom


def stereo_inverse(y):
    """alpha^{-1}(y) and the conformal factor 2 / (|y|^2 + 1)."""
    y = np.asarray(y, dtype=float)
    r2 = np.sum(y * y, axis=-1)
    x = np.concatenate([2.0 * y, (r2 - 1.0)[..., None]], axis=-1) / (r2 + 1.0)[..., None]
    return x, 2.0 / (r2 + 1.0)


def embed_rotation(R) -> np.ndarray:
    """O(d) acting on the first d coordinates of R^{d+1} (fixes the pole axis)."""
    R = np.atleast_2d(np.asarray(R, dtype=float))
    d = R.shape[0]
    out = np.eye(d + 1)
    out[:d, :d] = R
    return out


def rotation_generator(d: int, j: int) -> np.ndarray:
    """L_j: infinitesimal rotation in the (e_j, e_d) plane, e_j toward e_d."""
    A = np.zeros((d + 1, d + 1))
    A[j, d] = -1.0
    A[d, j] = 1.0
    return A


def rotation_g_k(T, k: float) -> np.ndarray:
    """g_k(T) = exp(2/k sum_j t_j L_j) via eigen-decomposition."""
    if k <= 0:
        raise ConformalError("scale k must be positive")
    T = np.atleast_1d(np.asarray(T, dtype=float))
    d = T.shape[0]
    A = (2.0 / k) * sum(t * rotation_generator(d, j) for j, t in enumerate(T))
    # A antisymmetric => -iA Hermitian, exp(A) = V exp(i lam) V^H
    lam, V = np.linalg.eigh(-1j * A)
    R = (V * np.exp(1j * lam)) @ V.conj().T
    return R.real


def check_rotation(R, tol: float = 1e-12) -> None:
    R = np.asarray(R)
    if np.max(np.abs(R.T @ R - np.eye(R.shape[0]))) > tol:
        raise ConformalError("matrix is not orthogonal")
    if abs(np.linalg.det(R) - 1.0) > tol:
        raise ConformalError("rotation must have determinant +1")


def translation_composite(x, T, k: float):
    """k alpha(g_k(T) alpha^{-1}(x / k)): a conformal near-translation of R^d."""
    x = np.asarray(x, dtype=float)
    scalar_d1 = x.ndim == 0
    if scalar_d1:
        x = x.reshape(1)
    T = np.broadcast_to(np.asarray(T, dtype=float), (x.shape[-1],))
    g = rotation_g_k(T, k)
    sphere, _ = stereo_inverse(x / k)
    y, _ = stereo_project(sphere @ g.T)
    out = k * y
    return float(out[0]) if scalar_d1 else out


def translation_composite_d1(x: float, T: float, k: float) -> float:
    """Closed-form d=1 composite, expanded by hand from the two projection maps."""
    r = (x / k) ** 2
    c, s = np.cos(2.0 * T / k), np.sin(2.0 * T / k)
    x0 = 2.0 * x / k / (r + 1.0)
    x1 = (r - 1.0) / (r + 1.0)
    num = 2.0 * x / (r + 1.0) * c - x1 * k * s
    den = 1.0 - x0 * s - x1 * c
    return float(num / den)


@dataclass(frozen=True, eq=False)
class ConformalPipeline:
    """Scale k, cutoff L and a pole-free projection grid for U_alpha U_{beta_k}."""

    k: float
    d: int
    L: int
    grid: sh.SphereGrid
    residual_cap: float = 0.05

    def __post_init__(self):
        if self.k <= 0:
            raise ConformalError("scale k must be positive")
        if not self.grid.pole_excluded:
            raise ConformalError("projection grid must exclude the north pole")
        if self.grid.d != self.d:
            raise ConformalError("grid dimension mismatch")
        self.grid.check_cutoff(self.L)

    @classmethod
    def build(cls, k: float, d: int, L: int, oversample: int = 2,
              residual_cap: float = 0.05) -> "ConformalPipeline":
        return cls(k, d, L, sh.grid_for_cutoff(d, L, oversample), residual_cap)


def lifted_values(f: PlaneTestFunction, k: float, points) -> np.ndarray:
    """Pointwise (U_alpha U_{beta_k} f)(x)."""
    y, lam = stereo_project(points)
    return lam ** (f.d / 2.0) * f.scaled(k)(y)


def lift_to_sphere(f: PlaneTestFunction, pipe: ConformalPipeline,
                   tolerance: float | None = None):
    """Band-limited U_alpha U_{beta_k} f and its relative truncation residual.

    The residual ``| ||u||^2 - ||f||^2 | / ||f||^2`` measures how much L^2
    mass the cutoff lost.  Raises :class:`TruncationError` above the hard cap
    (or ``tolerance`` when given).
    """
    if f.d != pipe.d:
        raise ConformalError("test function and pipeline dimensions differ")
    norm2 = l2_norm_sq(f)
    if f.n_terms == 0 or norm2 == 0.0:
        return sh.SphereField.zeros(pipe.d, pipe.L), 0.0
    values = lifted_values(f, pipe.k, pipe.grid.nodes)
    u = sh.analyze(values, pipe.grid, pipe.L)
    residual = abs(u.norm() ** 2 - norm2) / norm2
    cap = pipe.residual_cap if tolerance is None else tolerance
    if residual > cap:
        raise TruncationError(
            f"lift truncation residual {residual:.3g} exceeds {cap:.3g} "
            f"(k={pipe.k}, L={pipe.L}); raise the cutoff"
        )
    return u, residual


def apply_isometry(phi: sh.SphereField, R, grid: sh.SphereGrid | None = None,
                   L: int | None = None) -> sh.SphereField:
    """x -> phi(R^{-1} x), resampled through a quadrature grid.

    Works for any element of O(d+1); rotations preserve degree, so the only
    error is quadrature round-off.
    """
    L = phi.L if L is None else L
    if grid is None:
        grid = sh.grid_for_cutoff(phi.d, max(L, phi.L))
    R = np.asarray(R, dtype=float)
    values = sh.evaluate(phi, grid.nodes @ R)  # rows are R^T x
    return sh.analyze(values, grid, L)


def pullback_by_rotation(phi: sh.SphereField, g, grid=None) -> sh.SphereField:
    """(T^* phi)(y) = phi(g y), i.e. apply_isometry with g^{-1}."""
    return apply_isometry(phi, np.asarray(g).T, grid)
