"""Gaussian-bump test functions on R^d and their closed-form Euclidean oracles.

Every quantity here is computed on the plane, independently of the sphere:
L^2 norms and Laplacian forms in closed form, and quadratic forms of the
resolvent ``pref * (Delta_E + M^2)^{-1}`` through the Schwinger representation

    1/(p^2 + M^2) = int_0^inf exp(-u (p^2 + M^2)) du,

which turns the Fourier integral of a Gaussian pair into a 1-D integral.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import integrate, special


@dataclass(frozen=True, eq=False)
class PlaneTestFunction:
    """Finite sum of Gaussian bumps ``a * exp(-sum_i (y_i - c_i)^2 / (2 s_i^2))``.

    ``widths`` holds one positive width per term and axis; isotropic bumps
    simply repeat the same width.
    """

    d: int
    amplitudes: np.ndarray
    centers: np.ndarray
    widths: np.ndarray

    def __post_init__(self):
        a = np.atleast_1d(np.asarray(self.amplitudes, dtype=float))
        c = np.asarray(self.centers, dtype=float).reshape(a.shape[0], self.d)
        s = np.asarray(self.widths, dtype=float)
        if s.ndim <= 1:
            s = np.repeat(np.atleast_1d(s).reshape(-1, 1), self.d, axis=1)
        s = s.reshape(a.shape[0], self.d)
        if np.any(s <= 0.0):
            raise ValueError("bump widths must be positive")
        object.__setattr__(self, "amplitudes", a)
        object.__setattr__(self, "centers", c)
        object.__setattr__(self, "widths", s)

    @classmethod
    def bump(cls, d: int, amplitude: float = 1.0, center=None, width: float = 1.0):
        center = np.zeros(d) if center is None else center
        return cls(d, [amplitude], [center], [width])

    @classmethod
    def zero(cls, d: int) -> "PlaneTestFunction":
        return cls(d, np.zeros(0), np.zeros((0, d)), np.ones((0, d)))

    @classmethod
    def from_terms(cls, d: int, terms) -> "PlaneTestFunction":
        """Build from ``[(amplitude, center, width), ...]``."""
        if not terms:
            return cls.zero(d)
        amps = [float(t[0]) for t in terms]
        centers = [np.broadcast_to(np.asarray(t[1], float), (d,)) for t in terms]
        widths = [np.broadcast_to(np.asarray(t[2], float), (d,)) for t in terms]
        return cls(d, amps, centers, widths)

    @property
    def n_terms(self) -> int:
        return self.amplitudes.shape[0]

    @property
    def is_isotropic(self) -> bool:
        return bool(np.all(self.widths == self.widths[:, :1]))

    def __call__(self, y) -> np.ndarray:
        y = np.asarray(y, dtype=float)
        flat = y.reshape(-1, self.d)
        out = np.zeros(flat.shape[0])
        for a, c, s in zip(self.amplitudes, self.centers, self.widths):
            out += a * np.exp(-0.5 * np.sum(((flat - c) / s) ** 2, axis=1))
        return out.reshape(y.shape[:-1])

    # -- algebra -----------------------------------------------------------
    def _concat(self, other: "PlaneTestFunction", sign: float) -> "PlaneTestFunction":
        if other.d != self.d:
            raise ValueError("dimension mismatch")
        return PlaneTestFunction(
            self.d,
            np.concatenate([self.amplitudes, sign * other.amplitudes]),
            np.vstack([self.centers, other.centers]),
            np.vstack([self.widths, other.widths]),
        )

    def __add__(self, other):
        return self._concat(other, 1.0)

    def __sub__(self, other):
        return self._concat(other, -1.0)

    def __mul__(self, a: float):
        return PlaneTestFunction(self.d, a * self.amplitudes, self.centers, self.widths)

    __rmul__ = __mul__

    def scaled(self, k: float) -> "PlaneTestFunction":
        """U_{beta_k} f = k^{d/2} f(k y): centers/k, widths/k, amplitude k^{d/2}."""
        return PlaneTestFunction(
            self.d, k ** (self.d / 2.0) * self.amplitudes,
            self.centers / k, self.widths / k,
        )

    def shifted(self, v) -> "PlaneTestFunction":
        """y -> f(y - v)."""
        return PlaneTestFunction(self.d, self.amplitudes, self.centers + np.asarray(v, float), self.widths)

    def pulled_back_by_translation(self, T) -> "PlaneTestFunction":
        """T_E^* f = f(. + T)."""
        return self.shifted(-np.asarray(T, dtype=float))

    def rotated(self, R) -> "PlaneTestFunction":
        """f o R^{-1} for R in O(d)."""
        R = np.asarray(R, dtype=float)
        if not self.is_isotropic and not np.allclose(np.abs(R), np.eye(self.d)):
            raise ValueError("general rotations need isotropic bump widths")
        widths = self.widths if self.is_isotropic else np.abs(self.widths @ R.T)
        return PlaneTestFunction(self.d, self.amplitudes, self.centers @ R.T, widths)

    def time_reflected(self) -> "PlaneTestFunction":
        """Theta f for Theta: (t, x_1, ...) -> (-t, x_1, ...)."""
        c = self.centers.copy()
        c[:, 0] = -c[:, 0]
        return PlaneTestFunction(self.d, self.amplitudes, c, self.widths)

    def min_time_margin(self) -> float:
        """Smallest (t_center - 6 s_t) over terms; > 0 means effectively in t > 0."""
        if self.n_terms == 0:
            return np.inf
        return float(np.min(self.centers[:, 0] - 6.0 * self.widths[:, 0]))


# ---------------------------------------------------------------------------
# closed-form oracles


def _pair_iter(f: PlaneTestFunction, g: PlaneTestFunction):
    for a, c1, s1 in zip(f.amplitudes, f.centers, f.widths):
        for b, c2, s2 in zip(g.amplitudes, g.centers, g.widths):
            yield a * b, c1 - c2, s1, s2


def l2_inner(f: PlaneTestFunction, g: PlaneTestFunction) -> float:
    total = 0.0
    for ab, delta, s1, s2 in _pair_iter(f, g):
        var = s1**2 + s2**2
        total += ab * np.prod(np.sqrt(2.0 * np.pi * s1**2 * s2**2 / var) * np.exp(-0.5 * delta**2 / var))
    return float(total)


def l2_norm_sq(f: PlaneTestFunction) -> float:
    return l2_inner(f, f)


def dirichlet_form(f: PlaneTestFunction, g: PlaneTestFunction) -> float:
    """<Delta_E f, g> = <grad f, grad g> (nonnegative Laplacian convention)."""
    total = 0.0
    for ab, delta, s1, s2 in _pair_iter(f, g):
        b = 0.5 * (s1**2 + s2**2)
        axis = np.sqrt(np.pi / b) * np.exp(-(delta**2) / (4.0 * b))
        second = axis * (1.0 / (2.0 * b) - delta**2 / (4.0 * b**2))
        s = 0.0
        for i in range(f.d):
            s += second[i] * np.prod(np.delete(axis, i))
        total += ab * np.prod(s1 * s2) * s
    return float(total)


def resolvent_form(f: PlaneTestFunction, g: PlaneTestFunction | None = None,
                   mass: float = 1.0, prefactor: float = 1.0) -> float:
    """prefactor * <(Delta_E + mass^2)^{-1} f, g> on L^2(R^d)."""
    if mass <= 0:
        raise ValueError("mass must be positive")
    g = f if g is None else g
    m2 = mass * mass
    total = 0.0
    for ab, delta, s1, s2 in _pair_iter(f, g):
        half_var = 0.5 * (s1**2 + s2**2)
        dd = delta**2

        def integrand(v):
            # u = exp(v) spreads the scales of the Gaussian and the mass decay
            u = np.exp(v)
            b = half_var + u
            return u * np.exp(-u * m2) * np.prod(np.sqrt(np.pi / b) * np.exp(-dd / (4.0 * b)))

        lo = np.log(half_var.min()) - 80.0
        hi = np.log(60.0 / m2)
        val, _ = integrate.quad(integrand, lo, hi, epsabs=0.0, epsrel=1e-12, limit=400)
        total += ab * np.prod(s1 * s2) * val
    return float(prefactor * total)


def free_covariance_form(f: PlaneTestFunction, mass: float = 1.0) -> float:
    """||(Delta_E + m^2)^{-1/2} f||^2."""
    return resolvent_form(f, None, mass)


def fourier_grid_form(f: PlaneTestFunction, mass: float = 1.0, prefactor: float = 1.0,
                      n: int = 512, pmax: float | None = None) -> float:
    """Brute-force tensor quadrature of int |f^(p)|^2 / (p^2 + M^2) dp/(2pi)^d.

    Slow and only moderately accurate; serves as an independent check of
    :func:`resolvent_form`.
    """
    if pmax is None:
        pmax = 12.0 / float(np.min(f.widths))
    p1 = np.linspace(-pmax, pmax, n)
    dp = p1[1] - p1[0]
    mesh = np.stack(np.meshgrid(*([p1] * f.d), indexing="ij"), axis=-1)
    fhat = np.zeros(mesh.shape[:-1], dtype=complex)
    for a, c, s in zip(f.amplitudes, f.centers, f.widths):
        fhat += a * (2 * np.pi) ** (f.d / 2) * np.prod(s) * np.exp(
            -0.5 * np.sum((mesh * s) ** 2, axis=-1) - 1j * mesh @ c
        )
    p2 = np.sum(mesh**2, axis=-1)
    val = np.sum(np.abs(fhat) ** 2 / (p2 + mass**2)) * dp**f.d / (2 * np.pi) ** f.d
    return float(prefactor * val)


def smoothed_interval_form(t: float, h_width: float, mass: float = 1.0,
                           ramp: float | None = None) -> float:
    """<(Delta_E + m^2)^{-1} f_t, f_t> for f_t = (chi_(0,t) * G_ramp) (x) h, d = 2.

    ``G_ramp`` is a unit-mass Gaussian of width ``ramp`` (default t/10) and
    ``h`` the unit-amplitude bump of width ``h_width``.  Computed from the
    exact Fourier transform of the smoothed indicator; the transverse integral
    is closed form via erfcx.
    """
    ramp = t / 10.0 if ramp is None else ramp
    s = h_width

    def integrand(p0):
        a = np.sqrt(p0 * p0 + mass * mass)
        if p0 == 0.0:
            chi2 = t * t
        else:
            chi2 = 4.0 * np.sin(0.5 * p0 * t) ** 2 / (p0 * p0)
        chi2 *= np.exp(-(ramp * p0) ** 2)
        # int |h^(p1)|^2 / (p1^2 + a^2) dp1 with |h^|^2 = 2 pi s^2 exp(-s^2 p1^2)
        transverse = 2.0 * np.pi * s * s * (np.pi / a) * special.erfcx(a * s)
        return chi2 * transverse

    period = 2.0 * np.pi / t
    pmax = 12.0 / ramp
    edges = np.arange(0.0, pmax + period, period)
    total = 0.0
    for lo, hi in zip(edges[:-1], edges[1:]):
        v, _ = integrate.quad(integrand, lo, hi, epsabs=0.0, epsrel=1e-11)
        total += v
    return float(2.0 * total / (2.0 * np.pi) ** 2)


def smoothed_interval_function(t: float, h_width: float, ramp: float | None = None,
                               spacing: float = 0.25) -> PlaneTestFunction:
    """Gaussian-mixture representation of ``(chi_(0,t) * G_ramp) (x) h`` in d = 2.

    The time profile is a Riemann sum of ramp-width Gaussians on a grid of
    step ``spacing * ramp`` across (0, t); the error is exponentially small in
    1/spacing away from the interval ends.
    """
    ramp = t / 10.0 if ramp is None else ramp
    n = max(2, int(np.ceil(t / (spacing * ramp))))
    tau = (np.arange(n) + 0.5) * (t / n)
    amp = (t / n) / (np.sqrt(2.0 * np.pi) * ramp)
    centers = np.column_stack([tau, np.zeros(n)])
    widths = np.column_stack([np.full(n, ramp), np.full(n, h_width)])
    return PlaneTestFunction(2, np.full(n, amp), centers, widths)
