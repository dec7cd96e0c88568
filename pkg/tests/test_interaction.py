import warnings

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from qftlab import conformal as cf
from qftlab import covariance as cv
from qftlab import sphere_harmonics as sh
from qftlab import interaction as it
from qftlab import mollifier as mo
from qftlab import sampler as sp

X4 = it.make_function("power", exponent=4)


def test_truncate_examples():
    F16 = it.truncate_F(X4, 16)
    assert F16(1.0) == 1.0 and F16(3.0) == 16.0
    F = it.make_function("cos", eps=0.3)
    x = np.linspace(-5, 5, 101)
    assert np.array_equal(it.truncate_F(F, 2)(x), F(x))


def test_coupling_examples():
    for k in (1, 2, 4, 8, 16):
        assert np.isclose(it.coupling_lambda(X4, k), 1.0 / k, rtol=1e-12)
    F = it.make_function("cos", eps=0.4)
    assert np.isclose(it.coupling_lambda(F, 2), 1 / 0.4)
    with pytest.raises(it.InteractionError):
        it.coupling_lambda(it.make_function("zero"), 1)


@settings(max_examples=20, deadline=None)
@given(st.floats(1.0, 50.0), st.floats(1.0, 3.0), st.integers(2, 6))
def test_coupling_nonincreasing(k, factor, exponent):
    F = it.make_function("power", exponent=exponent)
    assert it.coupling_lambda(F, k * factor) <= it.coupling_lambda(F, k) * (1 + 1e-12)


def test_wick_power_examples():
    f = np.array([-1.5, 0.0, 0.3, 2.0])
    c = 0.7
    assert np.array_equal(it.wick_power(f, 0, c), np.ones(4))
    assert np.array_equal(it.wick_power(f, 1, c), f)
    assert np.allclose(it.wick_power(f, 2, c), f**2 - c, atol=0)
    assert np.allclose(it.wick_power(f, 4, c), f**4 - 6 * c * f**2 + 3 * c**2, rtol=1e-15)
    assert it.wick_coefficients(4) == [(1, 0), (-6, 1), (3, 2)]
    with pytest.raises(it.InteractionError):
        it.wick_power(f, 13, c)


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 10), st.floats(-3, 3), st.floats(0.0, 2.0))
def test_wick_power_is_scaled_hermite(n, x, c):
    from numpy.polynomial import hermite_e

    if c == 0.0:
        ref = x**n
    else:
        s = np.sqrt(c)
        ref = s**n * hermite_e.hermeval(x / s, [0] * n + [1])
    assert np.isclose(it.wick_power(np.array([x]), n, c)[0], ref, rtol=1e-9, atol=1e-9 * (1 + abs(ref)))


def test_c_k_diagonal_examples():
    C0, A0 = cv.free_covariance(1.0, 2, 0), mo.build_mollifier(1, 2, 0)
    assert np.isclose(it.c_k_diagonal(C0, A0), 1 / (4 * np.pi), rtol=1e-15)
    C, A = cv.free_covariance(1.0, 2, 16), mo.build_mollifier(1, 2, 16)
    grid = sh.grid_for_cutoff(2, 16)
    nodes = grid.nodes[[0, 100, 400]]
    pw = it.c_k_pointwise(C, A, nodes)
    assert np.max(np.abs(pw - it.c_k_diagonal(C, A))) <= 1e-10
    # d = 1 formula
    C1, A1 = cv.free_covariance(1.0, 1, 6), mo.build_mollifier(1, 1, 6)
    ref = (C1.multipliers[0] + 2 * np.sum(A1.multipliers[1:] ** 2 * C1.multipliers[1:])) / (2 * np.pi)
    assert np.isclose(it.c_k_diagonal(C1, A1), ref, rtol=1e-14)


def test_c_k_diagonal_brute_force_kernel():
    """Kernel diagonal by assembling A C A as a dense matrix and evaluating x^T K x."""
    C, A = cv.free_covariance(1.0, 2, 16), mo.build_mollifier(1, 2, 16)
    K = np.diag(A.diagonal) @ C.matrix @ np.diag(A.diagonal)
    x = np.array([[0.48, 0.6, 0.64]])
    B = sh.basis_matrix(2, 16, x)[0]
    assert np.isclose(B @ K @ B, it.c_k_diagonal(C, A), rtol=1e-12)


def test_spec_validation():
    with pytest.raises(it.InteractionError):
        it.InteractionSpec("bounded", X4)  # no sup bound
    with pytest.raises(it.InteractionError):
        it.wick([0, 0, 0, 1])  # odd degree
    with pytest.raises(it.InteractionError):
        it.wick([0, 0, -1])  # negative leading coefficient
    with pytest.raises(it.InteractionError):
        it.InteractionSpec("bounded", it.make_function("cos", eps=0.1), for_rp=True)
    with pytest.warns(RuntimeWarning):
        it.bounded(it.make_function("cos", eps=0.1))


@pytest.fixture(scope="module")
def setup2d():
    L = 12
    return cv.free_covariance(1.0, 2, L), mo.build_mollifier(1, 2, L), L


def test_log_density_examples(setup2d, rng):
    C, A, L = setup2d
    phi = sh.SphereField(2, L, rng.standard_normal(sh.n_coeffs(2, L)))
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        const = it.bounded(it.make_function("const", eps=0.3))
        cosF = it.bounded(it.make_function("cos", eps=0.1))
    assert np.isclose(it.log_density(const, phi, 1, A).value, 0.3 * 4 * np.pi, rtol=1e-13)
    zero = sh.SphereField.zeros(2, L)
    tanh = it.bounded(it.make_function("tanh", eps=0.5))
    assert it.log_density(tanh, zero, 1, A).value == 0.0
    assert it.log_density(it.regularized(X4), zero, 1, A).value == 0.0
    c = it.c_k_diagonal(C, A)
    wick = it.log_density(it.wick([0, 0, 0, 0, 1]), zero, 1, A, C=C).value
    assert np.isclose(wick, -12 * np.pi * c**2, rtol=1e-12)
    for _ in range(5):
        psi = sh.SphereField(2, L, 3 * rng.standard_normal(sh.n_coeffs(2, L)))
        assert abs(it.log_density(cosF, psi, 1, A).value) <= 0.1 * 4 * np.pi


def test_log_density_rotation_invariant(setup2d, rng):
    C, A, L = setup2d
    specs = [it.bounded(it.make_function("tanh", eps=0.5)), it.regularized(X4), it.wick([0, 0, 1.0, 0, 0.5])]
    for _ in range(3):
        phi = sh.SphereField(2, L, 0.5 * rng.standard_normal(sh.n_coeffs(2, L)))
        R = sh.random_rotation(2, rng)
        rphi = cf.apply_isometry(phi, R)
        for s in specs:
            model = it.build_density(s, 2, A, C, oversample=3)
            a, b = model.log_density(phi.coeffs), model.log_density(rphi.coeffs)
            assert abs(a - b) <= 1e-8 * max(1.0, abs(a))


def test_non_finite_rejected():
    with pytest.raises(it.InteractionError):
        it.LogDensityValue(float("nan"), 1, it.wick([0, 0, 1]))


def test_wick_mc_identities():
    L, n = 16, 10_000
    C, A = cv.free_covariance(1.0, 2, L), mo.build_mollifier(1, 2, L)
    ens = sp.gaussian_ensemble(sp.GaussianSampler(C, 99), n)
    x = np.array([0.0, 0.6, 0.8])
    y = np.array([0.6, 0.0, 0.8])
    B = sh.basis_matrix(2, L, np.vstack([x, y])) * A.diagonal
    vals = ens.coeffs @ B.T
    c = it.c_k_diagonal(C, A)
    w2 = it.wick_power(vals, 2, c)
    est, reps = sp.block_ratio(ens.weights, np.column_stack([w2[:, 0], w2[:, 0] * w2[:, 1]]))
    se = sp.jackknife_stderr(reps)
    assert abs(est[0]) <= 3 * se[0]
    target = 2 * float(it.c_k_kernel(C, A, x, y)) ** 2
    assert abs(est[1] - target) <= 3 * se[1]
