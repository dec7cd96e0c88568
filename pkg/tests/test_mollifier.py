import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from qftlab import conformal as cf
from qftlab import sphere_harmonics as sh
from qftlab import mollifier as mo


def test_multiplier_examples():
    assert mo.build_mollifier(1, 2, 4).multipliers[0] == 1.0
    assert np.isclose(mo.build_mollifier(1, 2, 4).multipliers[1], np.exp(-2.0))
    assert np.isclose(mo.build_mollifier(2, 2, 4).multipliers[1], np.exp(-2.0 / 16.0))
    assert np.isclose(mo.build_mollifier(2, 2, 4).t, 1 / 16)
    with pytest.raises(ValueError):
        mo.build_mollifier(0.5, 2, 4)


@settings(max_examples=20, deadline=None)
@given(st.integers(1, 2), st.floats(1.0, 16.0), st.integers(0, 30))
def test_multiplier_invariants(d, k, L):
    a = mo.build_mollifier(k, d, L).multipliers
    assert a[0] == 1.0
    assert np.all(a > 0) and np.all(a <= 1.0)
    assert np.all(np.diff(a) <= 0)


def test_mollify_constant_and_contraction(rng):
    A = mo.build_mollifier(2, 2, 8)
    const = sh.SphereField.unit(2, 8, 0)
    assert np.array_equal(mo.mollify(A, const).coeffs, const.coeffs)
    phi = sh.SphereField(2, 8, rng.standard_normal(81))
    assert mo.mollify(A, phi).norm() <= phi.norm()
    with pytest.raises(sh.HarmonicsError):
        mo.mollify(A, sh.SphereField.zeros(2, 7))


def test_strong_convergence_exact_rate(rng):
    phi = sh.SphereField(2, 1, rng.standard_normal(4))
    res = [(mo.mollify(mo.build_mollifier(k, 2, 1), phi) - phi).norm() / phi.norm() for k in (1, 2, 4, 8)]
    assert all(b < a for a, b in zip(res, res[1:]))
    assert res[-1] <= 1.0 - np.exp(-2.0 / 8**4) + 1e-15
    assert res[-1] < 1e-3


def test_self_adjoint(rng):
    A = mo.build_mollifier(3, 1, 10)
    f = sh.SphereField(1, 10, rng.standard_normal(21))
    g = sh.SphereField(1, 10, rng.standard_normal(21))
    assert np.isclose(sh.inner_product(mo.mollify(A, f), g), sh.inner_product(f, mo.mollify(A, g)), rtol=1e-14)


@pytest.mark.parametrize("d", [1, 2])
def test_commutes_with_rotations(d, rng):
    L = 8
    A = mo.build_mollifier(1.5, d, L)
    phi = sh.SphereField(d, L, rng.standard_normal(sh.n_coeffs(d, L)))
    for _ in range(3):
        R = sh.random_rotation(d, rng)
        a = mo.mollify(A, cf.apply_isometry(phi, R))
        b = cf.apply_isometry(mo.mollify(A, phi), R)
        assert np.max(np.abs(a.coeffs - b.coeffs)) <= 1e-10


def test_trace_examples():
    A = mo.build_mollifier(1, 2, 2)
    assert np.isclose(mo.trace(A), 1 + 3 * np.exp(-2) + 5 * np.exp(-6), rtol=1e-14)
    for d in (1, 2):
        A = mo.build_mollifier(2, d, 12)
        diag = mo.mollifier_diagnostics(A, sh.grid_for_cutoff(d, 12))
        assert abs(diag.trace - sh.VOLUME[d] * diag.diagonal) <= 1e-10
        assert diag.diagonal_spread <= 1e-10


def test_effective_width_shrinks_for_k_at_least_two():
    kw = [k * mo.effective_width(mo.build_mollifier(k, 2, 16)) for k in (2, 4, 8)]
    assert kw[0] > kw[1] > kw[2]


def test_effective_width_saturates_at_k_one():
    # t_1 = 1 spreads the kernel over the whole sphere
    w = mo.effective_width(mo.build_mollifier(1, 2, 16))
    assert w > 3.1


def test_kernel_cutoff():
    assert mo.kernel_cutoff(2, 1.0) == 6
    t = 8.0**-4
    L = mo.kernel_cutoff(2, t)
    assert np.exp(-t * L * (L + 1)) < 1e-18 <= np.exp(-t * (L - 1) * L)
