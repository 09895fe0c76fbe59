import math

import numpy as np
import pytest
from scipy import stats

from stacked_mi.omi import estimate_from_moments
from stacked_mi.reference import (
    BETA_CAP,
    ReferenceSpec,
    confidence_mask,
    d_hat_statistic,
    f_two_moment_params,
    mi_test,
    pvalue_T1,
    pvalue_T2,
    pvalue_T3,
    pvalue_from_samples,
    pvalue_function,
    reference_pvalue,
    sample_T4,
    sample_T4_gamma,
    t2_denominator_df,
    t3_constants,
)
from stacked_mi.stacking import FunctionDevice


def test_d_hat_arithmetic():
    assert d_hat_statistic(4.2, 0.5, 2, 10) == pytest.approx(4.2 / 3.1)
    assert d_hat_statistic(6.0, 0.0, 3, 5) == 2.0
    assert d_hat_statistic(6.0, -0.4, 3, 5) == 2.0
    assert d_hat_statistic(0.0, 0.7, 3, 5) == 0.0


def test_T4_zero_odds_is_chi2_over_k():
    draws = sample_T4([0, 0, 0, 0], 10, 20_000, 1)
    assert draws.mean() == pytest.approx(1.0, abs=0.03)
    ks = stats.kstest(draws, lambda x: stats.chi2.cdf(4 * x, 4))
    assert ks.pvalue > 0.001


def test_T4_quantile_self_oracle():
    r = [0.9, 0.9, 0, 0]
    small = np.quantile(sample_T4(r, 20, 50_000, 2), 0.95)
    big = np.quantile(sample_T4(r, 20, 1_000_000, 3), 0.95)
    assert small == pytest.approx(big, abs=0.03)


def test_T4_gamma_cases():
    zero = sample_T4_gamma(0.0, 0.3, 3, 10, 20_000, 1)
    ks = stats.kstest(zero, lambda x: stats.chi2.cdf(3 * x, 3))
    assert ks.pvalue > 0.001
    # degenerate variance: identical to T4 with every odds equal to mu
    a = sample_T4_gamma(0.5, 0.0, 2, 10, 5_000, 4)
    b = sample_T4_gamma(0.5, 1e-14, 2, 10, 5_000, 4)
    np.testing.assert_array_equal(a, b)
    small = sample_T4_gamma(0.5, 0.05, 2, 10, 50_000, 5).mean()
    big = sample_T4_gamma(0.5, 0.05, 2, 10, 1_000_000, 6).mean()
    assert small == pytest.approx(big, abs=0.02)
    with pytest.raises(ValueError):
        sample_T4_gamma(0.5, 0.05, 2, 2, 10, 1)


def test_pvalue_T1():
    assert pvalue_T1(0.0, 3) == 1.0
    assert pvalue_T1(1.959964**2, 1) == pytest.approx(0.05, abs=1e-6)
    ps = [pvalue_T1(d, 2) for d in (0.1, 1.0, 3.0)]
    assert ps[0] > ps[1] > ps[2]


def test_T2_denominator_df():
    k, m, mu = 4, 10, 0.5
    K = 36
    expected = 4 + 32 * (1 + (34 / 36) / (1.1 * 0.5)) ** 2
    assert t2_denominator_df(mu, k, m) == pytest.approx(expected)
    assert t2_denominator_df(1e9, k, m) == pytest.approx(K, rel=1e-6)
    # small K branch: k=1, m=3 -> K=2
    assert t2_denominator_df(1.0, 1, 3) == pytest.approx(2 * (1 + 0.75) ** 2 * 1)
    assert math.isinf(t2_denominator_df(0.0, k, m))
    assert pvalue_T2(1.3, 0.0, k, m) == pvalue_T1(1.3, k)
    assert pvalue_T2(0.0, 0.5, k, m) == 1.0


def test_T3():
    assert t3_constants(1.0, 1.0)[1] == pytest.approx(math.sqrt(1 + math.sqrt(0.5)))
    assert pvalue_T3(2.0, 0.7, 0.0, 3) == pytest.approx(pvalue_T1(2.0, 3))
    assert pvalue_T3(0.0, 1.0, 0.0, 3) == 1.0
    c0, _ = t3_constants(1.0, 1.0)
    assert pvalue_T3(c0, 1.0, 1.0, 3) == 1.0
    # the shifted law has support below zero, so D = 0 is not a sure acceptance
    assert pvalue_T3(0.0, 1.0, 1.0, 3) < 1.0


def test_f_two_moment():
    assert f_two_moment_params(0.7, 0.0, 3, 10)[0] == 3.0
    assert f_two_moment_params(0.0, 0.0, 3, 10) == (3.0, BETA_CAP)
    c = 1.1
    z1 = c * math.sqrt(0.05) / (1 + c * 0.5)
    z2 = c * 0.5 / (1 + c * 0.5)
    b1, b2 = f_two_moment_params(0.5, 0.05, 2, 10)
    assert b1 == pytest.approx(2 / (1 + z1**2))
    assert b2 == pytest.approx(18 / (z1**2 + z2**2))


def test_pvalue_from_samples():
    reps = np.array([1.0, 2.0, 3.0, 4.0])
    assert pvalue_from_samples(2.0, reps) == 0.75
    assert pvalue_from_samples(-math.inf, reps) == 1.0
    assert pvalue_from_samples(5.0, reps) == 0.0
    assert pvalue_from_samples(5.0, reps, add_one=True) == 0.2
    with pytest.raises(ValueError):
        pvalue_from_samples(1.0, np.array([]))


def test_pvalue_monotone_in_D_for_fixed_replicates():
    omi = estimate_from_moments([0.8, 1.5], 10, 2)
    spec = ReferenceSpec("T4", 2000, 9)
    reps = sample_T4(omi.r_hat, 10, 2000, 9)
    ps = [reference_pvalue(d, omi, spec, reps) for d in np.linspace(0, 5, 30)]
    assert all(a >= b for a, b in zip(ps, ps[1:]))
    assert all(0 <= p <= 1 for p in ps)


def test_spec_validation():
    with pytest.raises(ValueError):
        ReferenceSpec("T9")
    with pytest.raises(ValueError):
        ReferenceSpec("T4", N=0)


@pytest.mark.parametrize("method", ["T1", "T2", "T3", "T4", "T4_gamma", "F_two_moment"])
def test_constant_device(method, small_imps):
    dev = FunctionDevice(lambda d: 0.0, k=2)
    res = mi_test(dev, small_imps, 2, ReferenceSpec(method, 500, 1))
    assert res.D_hat == 0.0 and res.p_value == 1.0


def test_determinism_and_threads(regression_imps):
    from stacked_mi.devices import LinRegDevice

    dev = LinRegDevice("linreg_lrt", "y", ("x1", "x2", "x3"))
    a = mi_test(dev, regression_imps, 3, ReferenceSpec("T4", 30_000, 5, threads=1))
    b = mi_test(dev, regression_imps, 3, ReferenceSpec("T4", 30_000, 5, threads=3))
    assert a.to_dict() == b.to_dict()
    doc = a.to_dict()
    assert set(doc) == {"method", "k", "m", "N", "seed", "D_hat", "p_value", "r_hat", "mu_hat", "sigma2_hat",
                        "warnings"}


def test_sigma2_methods_need_m3():
    from conftest import make_imps

    imps = make_imps(m=2)
    dev = FunctionDevice(lambda d: float(d.values[:, 0].sum() ** 2 / d.n), k=1)
    for method in ("T3", "T4_gamma", "F_two_moment"):
        with pytest.raises(ValueError, match="m >= 3"):
            mi_test(dev, imps, 1, ReferenceSpec(method, 100, 1))
    assert 0 <= mi_test(dev, imps, 1, ReferenceSpec("T4", 100, 1)).p_value <= 1


def test_pvalue_function(small_imps):
    def factory(theta):
        if theta > 1.5:
            raise ValueError("bad grid point")
        return FunctionDevice(lambda d, t=theta: float(((d.values[:, 0].mean() - t) ** 2) * d.n), k=1)

    spec = ReferenceSpec("T4", 1000, 3)
    pts = pvalue_function(factory, small_imps, 1, spec, [0.0, 0.5, 2.0])
    single = mi_test(factory(0.0), small_imps, 1, spec)
    assert pts[0].p_value == single.p_value
    assert pts[2].error and math.isnan(pts[2].p_value)
    assert confidence_mask(pts, 0.05) == [pts[0].p_value >= 0.05, pts[1].p_value >= 0.05, False]
