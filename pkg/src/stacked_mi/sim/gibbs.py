"""Regression data with monotone missing covariates, and a Gibbs imputer.

Imputation model: ``x_1 ~ N(phi_1, v_1)`` and ``x_j | x_1..x_{j-1} ~
N(phi_j' (1, x_1..x_{j-1}), v_j)`` with prior proportional to
``1 / (v_1 ... v_p)``. The response is not part of the model.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from stacked_mi.rng import default_seed
from stacked_mi.stacking import Dataset, ImputationSet

DEFAULT_BURN = 200
DEFAULT_THIN = 10


def expit(t):
    return 1.0 / (1.0 + np.exp(-t))


@dataclass(frozen=True)
class RegressionSimConfig:
    n: int = 300
    p: int = 5
    m: int = 10
    beta0: float = 1.0
    beta: tuple[float, ...] | None = None  # None means zero (null hypothesis)
    sigma2: float = 1.0
    gamma: tuple[float, float] = (0.0, 1.0)
    n_burn: int = DEFAULT_BURN
    n_thin: int = DEFAULT_THIN
    reps: int = 500
    seed: int = field(default_factory=default_seed)

    def __post_init__(self):
        if self.n < 1 or self.p < 1 or self.m < 2 or self.reps < 1:
            raise ValueError("n, p, reps must be positive and m >= 2")
        if self.beta is not None and len(self.beta) != self.p:
            raise ValueError("beta must have p entries")
        if self.n_burn < 0 or self.n_thin < 1:
            raise ValueError("need n_burn >= 0 and n_thin >= 1")

    @property
    def beta_vec(self) -> np.ndarray:
        return np.zeros(self.p) if self.beta is None else np.asarray(self.beta, dtype=float)

    @property
    def x_cov(self) -> np.ndarray:
        idx = np.arange(self.p)
        return 2.0 ** (-np.abs(idx[:, None] - idx[None, :]))

    @property
    def column_names(self) -> tuple[str, ...]:
        return ("y",) + tuple(f"x{j + 1}" for j in range(self.p))


def generate_regression_data(cfg: RegressionSimConfig, rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray]:
    """Complete ``(n, 1 + p)`` data ``[y, x]`` and its observed mask for ``x``."""
    x = rng.multivariate_normal(np.ones(cfg.p), cfg.x_cov, size=cfg.n, method="cholesky")
    y = cfg.beta0 + x @ cfg.beta_vec + math.sqrt(cfg.sigma2) * rng.standard_normal(cfg.n)
    observed = np.ones((cfg.n, cfg.p), dtype=bool)
    g0, g1 = cfg.gamma
    for j in range(1, cfg.p):
        keep = rng.random(cfg.n) < expit(g0 + g1 * x[:, j - 1])
        observed[:, j] = observed[:, j - 1] & keep
    return np.column_stack([y, x]), observed


def missing_fractions(observed: np.ndarray) -> np.ndarray:
    return 1.0 - observed.mean(axis=0)


def mcar_missing_fractions(gamma0: float, p: int) -> np.ndarray:
    """Expected per-column missing fractions when the keep probability is constant."""
    q = float(expit(gamma0))
    return 1.0 - q ** np.arange(p)


def _check_monotone(observed: np.ndarray) -> None:
    if not np.all(observed[:, 0]):
        raise ValueError("the leading covariate must be fully observed")
    if np.any(observed[:, 1:] & ~observed[:, :-1]):
        raise ValueError("missingness pattern is not monotone")


def _draw_regression(rng: np.random.Generator, D: np.ndarray, w: np.ndarray) -> tuple[np.ndarray, float]:
    # posterior under prior 1/v: v ~ SSR / chi2(n - d), phi ~ N(phi_hat, v (D'D)^-1)
    n, d = D.shape
    if n <= d:
        raise ValueError(f"{n} rows cannot identify a regression with {d} coefficients")
    Q, R = np.linalg.qr(D)
    phi_hat = np.linalg.solve(R, Q.T @ w)
    ssr = float(np.sum((w - D @ phi_hat) ** 2))
    v = ssr / rng.chisquare(n - d)
    phi = phi_hat + math.sqrt(v) * np.linalg.solve(R, rng.standard_normal(d))
    return phi, v


def gibbs_imputer(x: np.ndarray, observed: np.ndarray, m: int, rng: np.random.Generator,
                  n_burn: int = DEFAULT_BURN, n_thin: int = DEFAULT_THIN) -> list[np.ndarray]:
    """Return ``m`` completed copies of ``x`` (data augmentation Gibbs sampler)."""
    x = np.array(x, dtype=float)
    observed = np.asarray(observed, dtype=bool)
    if x.shape != observed.shape:
        raise ValueError("x and mask shapes differ")
    _check_monotone(observed)
    n, p = x.shape
    if observed.all():
        return [x.copy() for _ in range(m)]
    for j in range(p):
        if observed[:, j].sum() <= j + 1:
            raise ValueError(f"column {j + 1} has too few observed values for its regression")

    missing = ~observed
    # start from column means of the observed values
    for j in range(1, p):
        x[missing[:, j], j] = x[observed[:, j], j].mean()
    ones = np.ones((n, 1))

    def sweep() -> None:
        params = []
        for j in range(p):
            D = np.hstack([ones, x[:, :j]])
            params.append(_draw_regression(rng, D, x[:, j]))
        for j in range(1, p):
            rows = missing[:, j]
            if rows.any():
                phi, v = params[j]
                D = np.hstack([ones[rows], x[rows, :j]])
                x[rows, j] = D @ phi + math.sqrt(v) * rng.standard_normal(int(rows.sum()))

    for _ in range(n_burn):
        sweep()
    out = []
    for _ in range(m):
        for _ in range(n_thin):
            sweep()
        out.append(x.copy())
    return out


def impute_regression(data: np.ndarray, observed: np.ndarray, cfg: RegressionSimConfig,
                      rng: np.random.Generator) -> ImputationSet:
    xs = gibbs_imputer(data[:, 1:], observed, cfg.m, rng, cfg.n_burn, cfg.n_thin)
    y = data[:, :1]
    return ImputationSet([Dataset(np.hstack([y, xi]), cfg.column_names) for xi in xs])
