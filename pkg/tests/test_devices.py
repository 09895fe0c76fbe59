import math
import sys

import numpy as np
import pytest
from scipy.optimize import minimize

from stacked_mi.devices import (
    BernoulliTwoGroupDevice,
    ContingencyDevice,
    DeviceSpec,
    ExternalDevice,
    ExternalExitError,
    ExternalParseError,
    ExternalTimeoutError,
    LinRegDevice,
    MvnCovDevice,
    bernoulli_two_group_lrt,
    cell_counts,
    contingency_ci_lrt,
    linreg_statistics,
    mvn_cov_lrt,
)
from stacked_mi.sim.meng_rubin import OBSERVED, table_dataset
from stacked_mi.stacking import Dataset


def rss_oracle(y, X):
    """Uncentred least squares with an explicit intercept column."""
    n = len(y)
    D = np.column_stack([np.ones(n), X])
    coef = np.linalg.pinv(D) @ y
    rss1 = np.sum((y - D @ coef) ** 2)
    rss0 = np.sum((y - y.mean()) ** 2)
    return {"wald": (rss0 - rss1) / (rss1 / n), "lrt": n * math.log(rss0 / rss1), "rs": (rss0 - rss1) / (rss0 / n)}


def test_linreg_hand_dataset():
    y = np.array([1.0, 2.0, 3.0, 3.5])
    x = np.array([1.0, 2.0, 3.0, 4.0])
    got = linreg_statistics(y, x)
    want = rss_oracle(y, x[:, None])
    for key in got:
        assert got[key] == pytest.approx(want[key], rel=1e-12)
    with pytest.raises(ValueError):
        linreg_statistics(x.copy(), x)  # perfect fit


def test_linreg_random_oracle_and_ordering():
    rng = np.random.default_rng(0)
    X = rng.normal(size=(50, 3))
    y = X @ [0.2, 0.0, -0.3] + rng.normal(size=50)
    got = linreg_statistics(y, X)
    want = rss_oracle(y, X)
    for key in got:
        assert got[key] == pytest.approx(want[key], rel=1e-10)
    assert got["wald"] >= got["lrt"] >= got["rs"] >= 0


def test_linreg_constant_response_and_rank():
    X = np.random.default_rng(1).normal(size=(10, 2))
    assert linreg_statistics(np.full(10, 3.0), X) == {"wald": 0.0, "lrt": 0.0, "rs": 0.0}
    with pytest.raises(np.linalg.LinAlgError):
        linreg_statistics(np.arange(10.0), np.column_stack([X[:, 0], 2 * X[:, 0]]))
    with pytest.raises(ValueError):
        linreg_statistics(np.arange(3.0), np.ones((3, 2)))


def test_row_permutation_invariance():
    rng = np.random.default_rng(2)
    data = Dataset(np.column_stack([rng.normal(size=40), rng.normal(size=(40, 2))]), ("y", "a", "b"))
    perm = rng.permutation(40)
    shuffled = Dataset(data.values[perm], data.column_names)
    for dev in (LinRegDevice("linreg_wald", "y", ("a", "b")), LinRegDevice("linreg_lrt", "y", ("a", "b")),
                LinRegDevice("linreg_rs", "y", ("a", "b")), MvnCovDevice(np.eye(3))):
        assert dev.evaluate(data) == pytest.approx(dev.evaluate(shuffled), rel=1e-12)
    table = table_dataset(OBSERVED)
    rev = Dataset(table.values[::-1], table.column_names)
    assert ContingencyDevice().evaluate(table) == pytest.approx(ContingencyDevice().evaluate(rev), rel=1e-12)


def test_mvn_cov():
    rng = np.random.default_rng(3)
    X = rng.normal(size=(30, 2))
    Xc = X - X.mean(axis=0)
    S = Xc.T @ Xc / 30
    assert mvn_cov_lrt(X, S) == pytest.approx(0.0, abs=1e-9)
    # p = 1, Sigma0 = 1, Sigma_hat = 2
    z = np.array([-1.0, 1.0]) * math.sqrt(2)
    assert mvn_cov_lrt(z[:, None], [[1.0]]) == pytest.approx(2 * (2 - math.log(2) - 1))
    for _ in range(20):
        A = rng.normal(size=(3, 3))
        assert mvn_cov_lrt(rng.normal(size=(20, 3)), A @ A.T + 0.1 * np.eye(3)) >= 0
    with pytest.raises(np.linalg.LinAlgError):
        mvn_cov_lrt(X, [[1.0, 2.0], [2.0, 1.0]])
    assert MvnCovDevice(np.eye(3)).k == 6


def _ci_loglik_oracle(O):
    """Maximise the conditional-independence log-likelihood numerically."""
    def nll(theta):
        total = 0.0
        for c in range(2):
            pa = 1 / (1 + math.exp(-theta[2 * c]))
            pb = 1 / (1 + math.exp(-theta[2 * c + 1]))
            for a in range(2):
                for b in range(2):
                    p = (pa if a == 0 else 1 - pa) * (pb if b == 0 else 1 - pb)
                    total -= O[a, b, c] * math.log(p)
        return total

    best = minimize(nll, np.zeros(4), method="BFGS", options={"gtol": 1e-10})
    sat = 0.0
    for c in range(2):
        nc = O[:, :, c].sum()
        for a in range(2):
            for b in range(2):
                if O[a, b, c] > 0:
                    sat += O[a, b, c] * math.log(O[a, b, c] / nc)
    return 2 * (sat + best.fun)


def test_contingency():
    pa = np.array([0.3, 0.7])
    pb = np.array([0.6, 0.4])
    product = np.stack([np.outer(pa, pb) * 100, np.outer(pa, pb) * 50], axis=2)
    assert contingency_ci_lrt(product) == pytest.approx(0.0, abs=1e-10)
    got = contingency_ci_lrt(OBSERVED)
    assert got > 0
    assert got == pytest.approx(_ci_loglik_oracle(OBSERVED), rel=1e-6)
    swapped = OBSERVED[:, ::-1, :]
    assert contingency_ci_lrt(swapped) == pytest.approx(got, rel=1e-12)
    empty = OBSERVED.copy()
    empty[:, :, 0] = 0
    with pytest.raises(ValueError):
        contingency_ci_lrt(empty)


def test_contingency_counts_from_rows():
    table = table_dataset(OBSERVED)
    np.testing.assert_array_equal(cell_counts(table, ("clinic", "care", "survival"), "count"), OBSERVED)
    rows = []
    for a in range(2):
        for b in range(2):
            for c in range(2):
                rows += [(a, b, c)] * int(OBSERVED[a, b, c])
    unit = Dataset(np.array(rows, dtype=float), ("clinic", "care", "survival"))
    assert ContingencyDevice().evaluate(unit) == pytest.approx(ContingencyDevice().evaluate(table))


def test_bernoulli():
    x = np.array([0, 0, 0, 1, 1, 1, 1])
    y = np.array([1, 0, 0, 1, 1, 1, 0])
    assert bernoulli_two_group_lrt(x, y, (1 / 3, 3 / 4)) == pytest.approx(0.0, abs=1e-12)
    # direct binomial log-likelihood oracle
    def ll(t0, t1):
        return math.log(t0) + 2 * math.log(1 - t0) + 3 * math.log(t1) + math.log(1 - t1)

    assert bernoulli_two_group_lrt(x, y, (0.5, 0.5)) == pytest.approx(2 * (ll(1 / 3, 3 / 4) - ll(0.5, 0.5)))
    assert bernoulli_two_group_lrt(x, np.ones(7), (0.5, 0.5)) > 0
    with pytest.raises(ValueError):
        bernoulli_two_group_lrt(x, y, (0.0, 0.5))
    with pytest.raises(ValueError):
        bernoulli_two_group_lrt(np.ones(7), y, (0.5, 0.5))


def _py(code):
    return (sys.executable, "-c", code)


def test_external_device():
    data = Dataset(np.ones((3, 2)), ("a", "b"))
    assert ExternalDevice(_py("print(3.14)"), 1).evaluate(data) == 3.14
    with pytest.raises(ExternalExitError, match="boom"):
        ExternalDevice(_py("import sys; sys.stderr.write('boom'); sys.exit(1)"), 1).evaluate(data)
    with pytest.raises(ExternalParseError):
        ExternalDevice(_py("print('not a number')"), 1).evaluate(data)
    with pytest.raises(ExternalTimeoutError):
        ExternalDevice(_py("import time; time.sleep(5)"), 1, timeout=0.5).evaluate(data)


def test_external_round_trip_matches_in_process():
    rng = np.random.default_rng(4)
    data = Dataset(np.column_stack([rng.normal(size=25), rng.normal(size=(25, 2))]), ("y", "a", "b"))
    code = ("import sys; from stacked_mi.io import read_dataset; from stacked_mi.devices import LinRegDevice; "
            "print(repr(LinRegDevice('linreg_lrt', 'y', ('a', 'b')).evaluate(read_dataset(sys.stdin))))")
    ext = ExternalDevice(_py(code), 2).evaluate(data)
    assert ext == LinRegDevice("linreg_lrt", "y", ("a", "b")).evaluate(data)


def test_device_spec_factory():
    dev = DeviceSpec("linreg_lrt").build(("y", "x1", "x2"))
    assert dev.k == 2 and dev.covariates == ("x1", "x2")
    assert DeviceSpec("mvn_cov_lrt", {"sigma0": [[1, 0], [0, 1]]}).build().k == 3
    assert DeviceSpec("contingency_ci_lrt").build().k == 2
    assert DeviceSpec("bernoulli_two_group_lrt", {"theta0": [0.2, 0.4]}).build().theta0 == (0.2, 0.4)
    assert DeviceSpec("external", {"command": "echo 1", "k": 3}).build().command == ("echo", "1")
    with pytest.raises(ValueError):
        DeviceSpec("nope")
    with pytest.raises(ValueError):
        DeviceSpec("linreg_lrt").build()
    with pytest.raises(ValueError):
        DeviceSpec("bernoulli_two_group_lrt").build()
