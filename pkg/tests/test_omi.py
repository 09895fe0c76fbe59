import math
from fractions import Fraction

import numpy as np
import pytest
import sympy as sp
from hypothesis import given, settings, strategies as st

from stacked_mi.omi import (
    MAX_K,
    companion_matrix,
    estimate_from_moments,
    m1_forward,
    m1_inverse,
    m2_forward,
    m2_inverse,
    mu_sigma,
)


def mgf_moments(r, k):
    """Moments of sum_j r_j chi2_1 from the series of prod (1 - 2 r_j s)^(-1/2)."""
    s = sp.symbols("s")
    mgf = sp.Integer(1)
    for v in r:
        mgf *= (1 - 2 * sp.Rational(v) * s) ** sp.Rational(-1, 2)
    ser = sp.series(mgf, s, 0, k + 1).removeO()
    return [float(ser.coeff(s, t) * sp.factorial(t)) for t in range(1, k + 1)]


def test_forward_known_values():
    np.testing.assert_allclose(m1_forward([0.5, 0.2]), [0.7, 0.29])
    np.testing.assert_allclose(m2_forward([0.7, 0.29]), [0.7, 1.07])


@pytest.mark.parametrize("r", [(Fraction(1, 2), Fraction(1, 5)), (Fraction(9, 10), Fraction(1, 2), Fraction(1, 10)),
                               (Fraction(3, 4),), (Fraction(1, 3), Fraction(1, 3), Fraction(2, 3), Fraction(1, 7))])
def test_forward_matches_mgf(r):
    k = len(r)
    expected = mgf_moments(r, k)
    got = m2_forward(m1_forward([float(v) for v in r]))
    np.testing.assert_allclose(got, expected, rtol=1e-12)


def test_companion_matrix_example():
    A = companion_matrix([0.7, 0.29])
    np.testing.assert_allclose(A, [[0, 1], [-0.1, 0.7]])
    np.testing.assert_allclose(m1_inverse([0.7, 0.29]), [0.5, 0.2])


def test_round_trip_low_k():
    rng = np.random.default_rng(11)
    for k in range(1, 5):
        for _ in range(300):
            r = rng.uniform(0, 1, k)
            back = m1_inverse(m2_inverse(m2_forward(m1_forward(r))))
            assert np.max(np.abs(back - np.sort(r)[::-1])) < 1e-8


@settings(max_examples=60, deadline=None)
@given(st.lists(st.floats(0.0, 2.0), min_size=1, max_size=6))
def test_m2_inverse_is_left_inverse(R):
    R = np.asarray(R)
    np.testing.assert_allclose(m2_inverse(m2_forward(R)), R, rtol=1e-9, atol=1e-9)


def test_k_limit():
    with pytest.raises(ValueError):
        m1_inverse(np.ones(MAX_K + 1))


def test_mu_sigma_requires_m3():
    with pytest.raises(ValueError, match="m >= 3"):
        mu_sigma(1.0, 3.0, 2, 1)


def test_plugin_variance_exact_on_population_moments():
    # with t = (R1, 2 R2 + R1^2): R2/k - R1^2/k^2 is the variance of r
    r = np.array([0.6, 0.2])
    t = m2_forward(m1_forward(r))
    mu, _, s_check = mu_sigma(t[0], t[1], 10, 2)
    assert mu == pytest.approx(0.4)
    assert s_check == pytest.approx(np.var(r))


def test_estimate_flags():
    est = estimate_from_moments(m2_forward(m1_forward([0.5, 0.2])), 10, 2)
    np.testing.assert_allclose(est.r_hat, [0.5, 0.2], atol=1e-12)
    assert not est.complex_eigenvalues and est.has_sigma2
    # t2 < t1^2 + ... forces a complex pair
    noisy = estimate_from_moments([1.0, 1.05], 10, 2)
    assert noisy.complex_eigenvalues and noisy.warnings
    big = estimate_from_moments(m2_forward(m1_forward([12.0, 0.1])), 10, 2)
    assert any("exceed" in w for w in big.warnings)
    small_m = estimate_from_moments([0.7, 1.07], 2, 2)
    assert not small_m.has_sigma2
    with pytest.raises(ValueError):
        small_m.require_sigma2()
    assert small_m.to_dict()["sigma2_hat"] is None


def test_sigma2_clamped_but_raw_kept():
    est = estimate_from_moments([1.0, 1.5], 5, 2)
    assert est.sigma2_hat_raw < 0
    assert est.sigma2_hat == 0.0
