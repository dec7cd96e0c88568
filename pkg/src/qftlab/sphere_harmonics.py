"""Real spherical-harmonic calculus on S^1 and S^2.

Points on S^d live in R^{d+1}; the last coordinate is the pole axis and the
north pole (0, ..., 0, 1) is the projection point of the stereographic map.

Coefficient layout
------------------
d = 1: index 0 is the constant mode, then ``(cos l phi, sin l phi)`` pairs at
indices ``2l-1, 2l``; ``phi`` is the angle measured from the north pole, so
``x = (sin phi, cos phi)``.

d = 2: index ``l*l + l + m`` for ``-l <= m <= l``; ``m > 0`` carries
``cos(m lon)``, ``m < 0`` carries ``sin(|m| lon)``, colatitude is measured
from the north pole and ``x = (sin th cos lon, sin th sin lon, cos th)``.

All harmonics are orthonormal in L^2(S^d) with the round measure.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy import sparse

VOLUME = {1: 2.0 * np.pi, 2: 4.0 * np.pi}


class HarmonicsError(ValueError):
    """Raised on dimension/cutoff mismatches and unsupported grids."""


def _check_dim(d: int) -> None:
    if d not in (1, 2):
        raise HarmonicsError(f"unsupported sphere dimension d={d}; only 1 and 2")


def n_coeffs(d: int, L: int) -> int:
    _check_dim(d)
    if L < 0:
        raise HarmonicsError("cutoff must be nonnegative")
    return 2 * L + 1 if d == 1 else (L + 1) ** 2


def degrees(d: int, L: int) -> np.ndarray:
    """Degree ``l`` of every coefficient slot."""
    _check_dim(d)
    if d == 1:
        idx = np.arange(2 * L + 1)
        return (idx + 1) // 2
    return np.concatenate([np.full(2 * l + 1, l) for l in range(L + 1)])


def orders(d: int, L: int) -> np.ndarray:
    """Order label of every slot: ``m`` for d=2; +l (cos) / -l (sin) for d=1."""
    _check_dim(d)
    if d == 1:
        idx = np.arange(2 * L + 1)
        l = (idx + 1) // 2
        return np.where(idx % 2 == 1, l, -l)
    return np.concatenate([np.arange(-l, l + 1) for l in range(L + 1)])


def multiplicity(d: int, l: int) -> int:
    if d == 1:
        return 1 if l == 0 else 2
    return 2 * l + 1


def laplacian_eigenvalues(d: int, L: int) -> np.ndarray:
    """l(l + d - 1) per degree, the spectrum of the nonnegative Laplacian."""
    l = np.arange(L + 1)
    return l * (l + d - 1.0)


def expand_degree_multipliers(d: int, L: int, per_degree) -> np.ndarray:
    """Broadcast a per-degree array to the coefficient layout."""
    per_degree = np.asarray(per_degree)
    if per_degree.shape[0] < L + 1:
        raise HarmonicsError("need one multiplier per degree 0..L")
    return per_degree[degrees(d, L)]


# ---------------------------------------------------------------------------
# basis evaluation


def _normalized_legendre(L: int, cos_t: np.ndarray) -> np.ndarray:
    """lam[l, m, :] with Y_lm = lam * (1, sqrt2 cos m lon, sqrt2 sin m lon).

    Stable three-term recursion in l at fixed m; no Condon-Shortley phase.
    """
    cos_t = np.asarray(cos_t, dtype=float)
    sin_t = np.sqrt(np.clip(1.0 - cos_t**2, 0.0, None))
    lam = np.zeros((L + 1, L + 1) + cos_t.shape)
    lam[0, 0] = 1.0 / np.sqrt(4.0 * np.pi)
    for m in range(1, L + 1):
        lam[m, m] = np.sqrt((2.0 * m + 1.0) / (2.0 * m)) * sin_t * lam[m - 1, m - 1]
    for m in range(L):
        lam[m + 1, m] = np.sqrt(2.0 * m + 3.0) * cos_t * lam[m, m]
        for l in range(m + 2, L + 1):
            a = np.sqrt((4.0 * l * l - 1.0) / (l * l - m * m))
            b = np.sqrt(((l - 1.0) ** 2 - m * m) / (4.0 * (l - 1.0) ** 2 - 1.0))
            lam[l, m] = a * (cos_t * lam[l - 1, m] - b * lam[l - 2, m])
    return lam


def basis_matrix(d: int, L: int, points) -> np.ndarray:
    """Evaluate every basis function at ``points`` (shape ``(N, d+1)``).

    Returns an ``(N, n_coeffs)`` array.  Points are normalized onto the sphere.
    """
    _check_dim(d)
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    if pts.shape[1] != d + 1:
        raise HarmonicsError(f"points must have {d + 1} coordinates")
    pts = pts / np.linalg.norm(pts, axis=1, keepdims=True)
    if d == 1:
        phi = np.arctan2(pts[:, 0], pts[:, 1])
        out = np.empty((pts.shape[0], 2 * L + 1))
        out[:, 0] = 1.0 / np.sqrt(2.0 * np.pi)
        for l in range(1, L + 1):
            out[:, 2 * l - 1] = np.cos(l * phi) / np.sqrt(np.pi)
            out[:, 2 * l] = np.sin(l * phi) / np.sqrt(np.pi)
        return out
    cos_t = np.clip(pts[:, 2], -1.0, 1.0)
    lon = np.arctan2(pts[:, 1], pts[:, 0])
    lam = _normalized_legendre(L, cos_t)
    out = np.empty((pts.shape[0], (L + 1) ** 2))
    sq2 = np.sqrt(2.0)
    for l in range(L + 1):
        base = l * l + l
        out[:, base] = lam[l, 0]
        for m in range(1, l + 1):
            out[:, base + m] = sq2 * lam[l, m] * np.cos(m * lon)
            out[:, base - m] = sq2 * lam[l, m] * np.sin(m * lon)
    return out


def legendre_series(d: int, per_degree, cos_gamma) -> np.ndarray:
    """Zonal kernel K(gamma) = sum_l c_l sum_m Y_lm(x) Y_lm(y), cos gamma = x.y.

    Uses the addition theorem: (2l+1)/(4 pi) P_l for d=2 and
    (1/2pi)(1 + 2 sum cos(l gamma)) for d=1.
    """
    _check_dim(d)
    c = np.asarray(per_degree, dtype=float)
    z = np.clip(np.asarray(cos_gamma, dtype=float), -1.0, 1.0)
    if d == 1:
        gamma = np.arccos(z)
        l = np.arange(1, c.shape[0])
        total = c[0] + 2.0 * np.cos(np.multiply.outer(gamma, l)) @ c[1:]
        return total / (2.0 * np.pi)
    p_prev = np.ones_like(z)
    total = c[0] * p_prev / (4.0 * np.pi)
    if c.shape[0] == 1:
        return total
    p_cur = z.copy()
    total = total + c[1] * 3.0 * p_cur / (4.0 * np.pi)
    for l in range(1, c.shape[0] - 1):
        p_next = ((2 * l + 1) * z * p_cur - l * p_prev) / (l + 1)
        p_prev, p_cur = p_cur, p_next
        total = total + c[l + 1] * (2 * l + 3) * p_cur / (4.0 * np.pi)
    return total


# ---------------------------------------------------------------------------
# grids


@dataclass(frozen=True, eq=False)
class SphereGrid:
    """Product quadrature grid on S^d that never contains the north pole.

    For d=2 the nodes are ordered colatitude-major: ``i_lat * n_lon + j_lon``;
    transforms run separably (longitude sums, then Legendre per order).
    """

    d: int
    n: int
    nodes: np.ndarray
    weights: np.ndarray
    pole_excluded: bool = True
    cos_lat: np.ndarray | None = None
    lat_weights: np.ndarray | None = None
    n_lon: int = 0
    _cache: dict = field(default_factory=dict, repr=False, compare=False)

    @property
    def max_degree(self) -> int:
        """Largest cutoff L for which degree-2L integrands are exact."""
        return (self.n - 1) // 2 if self.d == 1 else self.n - 1

    def check_cutoff(self, L: int) -> None:
        if L > self.max_degree:
            need = 2 * L + 1 if self.d == 1 else L + 1
            raise HarmonicsError(
                f"grid resolution n={self.n} supports cutoff <= {self.max_degree}; "
                f"L={L} needs n >= {need}"
            )

    def basis(self, L: int) -> np.ndarray:
        """Dense ``(nodes, coeffs)`` basis matrix (cached; memory-heavy for d=2)."""
        key = ("dense", L)
        if key not in self._cache:
            self._cache[key] = basis_matrix(self.d, L, self.nodes)
        return self._cache[key]

    def _tables(self, L: int):
        key = ("sep", L)
        if key not in self._cache:
            lam = _normalized_legendre(L, self.cos_lat)
            m = np.arange(L + 1)
            lon = 2.0 * np.pi * np.arange(self.n_lon) / self.n_lon
            scale = np.where(m > 0, np.sqrt(2.0), 1.0)
            cos_t = np.cos(np.outer(lon, m)) * scale
            sin_t = np.sin(np.outer(lon, m)) * scale
            ll, mm = np.meshgrid(np.arange(L + 1), m, indexing="ij")
            valid = mm <= ll
            idx_cos = np.where(valid, ll * ll + ll + mm, 0)
            idx_sin = np.where(valid & (mm > 0), ll * ll + ll - mm, 0)
            self._cache[key] = (lam, cos_t, sin_t, valid, valid & (mm > 0), idx_cos, idx_sin)
        return self._cache[key]

    def synthesis(self, coeffs: np.ndarray, L: int) -> np.ndarray:
        """Node values for coefficient arrays of shape ``(..., n_coeffs)``."""
        self.check_cutoff(L)
        coeffs = np.asarray(coeffs, dtype=float)
        if self.d == 1:
            return coeffs @ self.basis(L).T
        lam, cos_t, sin_t, vc, vs, ic, isn = self._tables(L)
        A = np.where(vc, coeffs[..., ic], 0.0)
        B = np.where(vs, coeffs[..., isn], 0.0)
        Fa = np.einsum("...lm,lmt->...tm", A, lam)
        Fb = np.einsum("...lm,lmt->...tm", B, lam)
        vals = Fa @ cos_t.T + Fb @ sin_t.T
        return vals.reshape(coeffs.shape[:-1] + (-1,))

    def analysis(self, values: np.ndarray, L: int) -> np.ndarray:
        """Quadrature projection of node values ``(..., n_nodes)`` onto degree <= L."""
        self.check_cutoff(L)
        values = np.asarray(values, dtype=float)
        if self.d == 1:
            return (values * self.weights) @ self.basis(L)
        lam, cos_t, sin_t, vc, vs, ic, isn = self._tables(L)
        v = values.reshape(values.shape[:-1] + (self.cos_lat.shape[0], self.n_lon))
        dlon = 2.0 * np.pi / self.n_lon
        ga = (v @ cos_t) * (dlon * self.lat_weights)[:, None]
        gb = (v @ sin_t) * (dlon * self.lat_weights)[:, None]
        A = np.einsum("...tm,lmt->...lm", ga, lam)
        B = np.einsum("...tm,lmt->...lm", gb, lam)
        out = np.zeros(values.shape[:-1] + (n_coeffs(2, L),))
        out[..., ic[vc]] = A[..., vc]
        out[..., isn[vs]] = B[..., vs]
        return out

    def integrate(self, values) -> float:
        return float(np.dot(self.weights, values))


def build_grid(d: int, n: int) -> SphereGrid:
    """Uniform circle grid (d=1) or Gauss-Legendre x uniform longitude (d=2).

    The d=2 grid uses ``n`` colatitude nodes and ``2n`` longitudes, exact for
    band-limited integrands of degree <= 2n - 1.  The d=1 grid uses ``n``
    half-shifted angles, exact for trigonometric degree <= n - 1.  Neither
    contains the north pole.
    """
    _check_dim(d)
    if n < 4:
        raise HarmonicsError("grid resolution must be >= 4")
    if d == 1:
        phi = 2.0 * np.pi * (np.arange(n) + 0.5) / n
        nodes = np.column_stack([np.sin(phi), np.cos(phi)])
        weights = np.full(n, 2.0 * np.pi / n)
        return SphereGrid(d, n, nodes, weights)
    z, wz = np.polynomial.legendre.leggauss(n)
    n_lon = 2 * n
    lon = 2.0 * np.pi * np.arange(n_lon) / n_lon
    zz, ll = np.meshgrid(z, lon, indexing="ij")
    st = np.sqrt(1.0 - zz**2)
    nodes = np.column_stack(
        [(st * np.cos(ll)).ravel(), (st * np.sin(ll)).ravel(), zz.ravel()]
    )
    weights = np.repeat(wz, n_lon) * (2.0 * np.pi / n_lon)
    return SphereGrid(d, n, nodes, weights, True, z, wz, n_lon)


def grid_for_cutoff(d: int, L: int, oversample: int = 1) -> SphereGrid:
    """Smallest grid exact for degree-2L integrands, times ``oversample``."""
    n = (2 * L + 1) if d == 1 else (L + 1)
    return build_grid(d, max(4, n * oversample))


# ---------------------------------------------------------------------------
# fields


@dataclass(frozen=True, eq=False)
class SphereField:
    """Band-limited real field: coefficients in the orthonormal real basis."""

    d: int
    L: int
    coeffs: np.ndarray

    def __post_init__(self):
        c = np.asarray(self.coeffs, dtype=float)
        if c.shape != (n_coeffs(self.d, self.L),):
            raise HarmonicsError(
                f"expected {n_coeffs(self.d, self.L)} coefficients for d={self.d}, "
                f"L={self.L}, got shape {c.shape}"
            )
        object.__setattr__(self, "coeffs", c)

    @classmethod
    def zeros(cls, d: int, L: int) -> "SphereField":
        return cls(d, L, np.zeros(n_coeffs(d, L)))

    @classmethod
    def unit(cls, d: int, L: int, index: int) -> "SphereField":
        c = np.zeros(n_coeffs(d, L))
        c[index] = 1.0
        return cls(d, L, c)

    def norm(self) -> float:
        return float(np.linalg.norm(self.coeffs))

    def truncate(self, L: int) -> "SphereField":
        """Restrict to degree <= L, or zero-pad to a larger cutoff."""
        n = n_coeffs(self.d, L)
        c = np.zeros(n)
        m = min(n, self.coeffs.shape[0])
        c[:m] = self.coeffs[:m]
        return SphereField(self.d, L, c)

    def __add__(self, other: "SphereField") -> "SphereField":
        _check_compatible(self, other)
        return SphereField(self.d, self.L, self.coeffs + other.coeffs)

    def __sub__(self, other: "SphereField") -> "SphereField":
        _check_compatible(self, other)
        return SphereField(self.d, self.L, self.coeffs - other.coeffs)

    def __mul__(self, a: float) -> "SphereField":
        return SphereField(self.d, self.L, a * self.coeffs)

    __rmul__ = __mul__

    def __neg__(self) -> "SphereField":
        return SphereField(self.d, self.L, -self.coeffs)


def _check_compatible(f: SphereField, g: SphereField) -> None:
    if f.d != g.d or f.L != g.L:
        raise HarmonicsError(
            f"field mismatch: (d={f.d}, L={f.L}) vs (d={g.d}, L={g.L})"
        )


def synthesize(phi: SphereField, grid: SphereGrid) -> np.ndarray:
    """Field values at the grid nodes."""
    if grid.d != phi.d:
        raise HarmonicsError("grid and field dimensions differ")
    return grid.synthesis(phi.coeffs, phi.L)


def evaluate(phi: SphereField, points, chunk: int = 2048) -> np.ndarray:
    """Field values at arbitrary points of S^d (basis built in chunks)."""
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    out = np.empty(pts.shape[0])
    for i in range(0, pts.shape[0], chunk):
        out[i:i + chunk] = basis_matrix(phi.d, phi.L, pts[i:i + chunk]) @ phi.coeffs
    return out


def analyze(samples, grid: SphereGrid, L: int) -> SphereField:
    """Quadrature projection of node samples onto degree <= L."""
    return SphereField(grid.d, L, grid.analysis(samples, L))


def project_function(func, grid: SphereGrid, L: int) -> SphereField:
    """Analyze a callable ``func(points) -> values`` sampled on the grid."""
    return analyze(func(grid.nodes), grid, L)


def inner_product(f: SphereField, g: SphereField) -> float:
    _check_compatible(f, g)
    return float(np.dot(f.coeffs, g.coeffs))


def apply_degree_multipliers(phi: SphereField, per_degree) -> SphereField:
    mult = expand_degree_multipliers(phi.d, phi.L, per_degree)
    return SphereField(phi.d, phi.L, mult * phi.coeffs)


# ---------------------------------------------------------------------------
# exact structural operators in the coefficient basis


def reflection_signs(d: int, L: int) -> np.ndarray:
    """Diagonal of x_0 -> -x_0 in the coefficient basis (entries +-1)."""
    m = orders(d, L)
    if d == 1:
        # cos(l phi) is even in x_0 = sin(phi), sin(l phi) odd
        return np.where(m >= 0, 1.0, -1.0)
    mm = np.abs(m)
    parity = np.where(mm % 2 == 0, 1.0, -1.0)
    return np.where(m >= 0, parity, -parity)


def axis_multiplication(d: int, L: int) -> sparse.csr_matrix:
    """Multiplication by the pole coordinate x_d, degree <= L into degree <= L+1.

    Shape ``(n_coeffs(d, L+1), n_coeffs(d, L))``; exact (no quadrature).
    """
    _check_dim(d)
    rows, cols, vals = [], [], []
    if d == 1:
        s = 1.0 / np.sqrt(2.0)
        # constant mode <-> cos(phi)
        rows += [1]
        cols += [0]
        vals += [s]
        for l in range(1, L + 1):
            for off in (0, 1):  # cos, sin
                src = 2 * l - 1 + off
                rows.append(2 * (l + 1) - 1 + off)
                cols.append(src)
                vals.append(0.5)
                if l == 1 and off == 0:
                    rows.append(0)
                    cols.append(src)
                    vals.append(s)
                elif l > 1:
                    rows.append(2 * (l - 1) - 1 + off)
                    cols.append(src)
                    vals.append(0.5)
    else:
        def a(l, m):
            return np.sqrt(((l + 1.0) ** 2 - m * m) / ((2.0 * l + 1.0) * (2.0 * l + 3.0)))

        for l in range(L + 1):
            for m in range(-l, l + 1):
                src = l * l + l + m
                rows.append((l + 1) ** 2 + (l + 1) + m)
                cols.append(src)
                vals.append(a(l, abs(m)))
                if l >= 1 and abs(m) <= l - 1:
                    rows.append((l - 1) ** 2 + (l - 1) + m)
                    cols.append(src)
                    vals.append(a(l - 1, abs(m)))
    shape = (n_coeffs(d, L + 1), n_coeffs(d, L))
    return sparse.csr_matrix((vals, (rows, cols)), shape=shape)


def random_rotation(d: int, rng: np.random.Generator) -> np.ndarray:
    """Haar-random element of SO(d+1)."""
    q, r = np.linalg.qr(rng.standard_normal((d + 1, d + 1)))
    q = q * np.sign(np.diag(r))
    if np.linalg.det(q) < 0:
        q[:, 0] = -q[:, 0]
    return q
