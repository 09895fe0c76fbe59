"""Test of equal odds of missing information (EOMI).

Under equal odds the scaled ratio ``Q = sqrt(m) sigma2_hat / mu_hat**2`` has
a pivotal limit law that depends only on ``(k, m)``; it is simulated here.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterable

import numpy as np

from stacked_mi.omi import OmiEstimate
from stacked_mi.reference import DEFAULT_N, pvalue_from_samples
from stacked_mi.rng import blocked


def _check(k: int, m: int) -> None:
    if m < 3:
        raise ValueError("m >= 3 required for sigma2_hat")
    if k < 2:
        raise ValueError("the EOMI test needs k >= 2")


def q_statistic(mu_hat: float, sigma2_hat_raw: float, m: int) -> float:
    if m < 3:
        raise ValueError("m >= 3 required for sigma2_hat")
    if mu_hat == 0:
        return 0.0
    return math.sqrt(m) * sigma2_hat_raw / mu_hat**2


def _q0_block(k: int, m: int):
    a = (k * (m - 1) + 2) * m / (2.0 * (m - 2))
    b = (m - 1) * (k + 2) / (2.0 * (m - 2))
    root_m = math.sqrt(m)

    def fill(rng: np.random.Generator, size: int) -> np.ndarray:
        Z = rng.standard_normal((size, k, m))
        Z -= Z.mean(axis=2, keepdims=True)
        M = np.einsum("skm,skm->sm", Z, Z)
        s1 = M.sum(axis=1)
        s2 = np.einsum("sm,sm->s", M, M)
        with np.errstate(divide="ignore", invalid="ignore"):
            ratio = np.where(s1 > 0, s2 / (s1 * s1), 1.0 / m)
        return root_m * (a * ratio - b)

    return fill


def sample_Q0(k: int, m: int, N: int, seed: int, threads: int | None = 1) -> np.ndarray:
    _check(k, m)
    return blocked(N, seed, f"Q0/{k}/{m}", _q0_block(k, m), threads)


def q0_quantile(k: int, m: int, N: int, seed: int, level: float = 0.95, threads: int | None = 1) -> float:
    return float(np.quantile(sample_Q0(k, m, N, seed, threads), level))


def q0_quantile_table(ms: Iterable[int], ks: Iterable[int], N: int, seed: int, level: float = 0.95,
                      threads: int | None = 1) -> dict[tuple[int, int], float]:
    """``{(m, k): quantile}``; each cell has its own stream so cells are independent."""
    ks = list(ks)
    return {(m, k): q0_quantile(k, m, N, seed, level, threads) for m in ms for k in ks}


@dataclass(frozen=True)
class EomiResult:
    Q_hat: float
    p_value: float
    critical_value_95: float
    k: int
    m: int
    N: int
    seed: int

    @property
    def reject_5pct(self) -> bool:
        return self.Q_hat > self.critical_value_95

    def to_dict(self) -> dict:
        return {
            "Q_hat": self.Q_hat,
            "p_value": self.p_value,
            "critical_value_95": self.critical_value_95,
            "k": self.k,
            "m": self.m,
            "N": self.N,
            "seed": self.seed,
        }


def eomi_test(mu_hat: float, sigma2_hat_raw: float, k: int, m: int, N: int = DEFAULT_N, seed: int = 0,
              threads: int | None = 1, null_draws: np.ndarray | None = None) -> EomiResult:
    """``null_draws`` lets repeated tests at one ``(k, m)`` share a simulated null."""
    _check(k, m)
    Q = q_statistic(mu_hat, sigma2_hat_raw, m)
    draws = sample_Q0(k, m, N, seed, threads) if null_draws is None else np.asarray(null_draws)
    return EomiResult(
        Q_hat=Q,
        p_value=pvalue_from_samples(Q, draws),
        critical_value_95=float(np.quantile(draws, 0.95)),
        k=k,
        m=m,
        N=int(draws.size),
        seed=seed,
    )


def eomi_from_omi(omi: OmiEstimate, N: int = DEFAULT_N, seed: int = 0, threads: int | None = 1) -> EomiResult:
    if not omi.has_sigma2:
        raise ValueError("m >= 3 required for sigma2_hat")
    return eomi_test(omi.mu_hat, omi.sigma2_hat_raw, omi.k, omi.m, N, seed, threads)
