"""Draws from the joint large-sample law of the stacked statistics.

For every index multiset ``S``::

    d^S = sum_j {delta_j + (1 + r_j)^(1/2) W_j + r_j^(1/2) Zbar_j(S)}^2

where ``Zbar_j(S)`` averages ``Z_j1..Z_jm`` over ``S`` with multiplicity and
``W``, ``Z`` are shared by all ``S`` within one draw.
"""

from __future__ import annotations

from collections import Counter
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from stacked_mi.rng import blocked, default_seed
from stacked_mi.stacking import Multiset, SelectionRule, SmiStatistics, canonical, pair_statistics, sample_moments


@dataclass(frozen=True)
class SimConfig:
    r: tuple[float, ...]
    m: int
    delta: tuple[float, ...] | None = None
    reps: int = 1
    seed: int = field(default_factory=default_seed)

    def __post_init__(self):
        r = tuple(float(v) for v in self.r)
        if not r or any(v < 0 for v in r):
            raise ValueError("r must be a non-empty vector of nonnegative odds")
        delta = tuple(0.0 for _ in r) if self.delta is None else tuple(float(v) for v in self.delta)
        if len(delta) != len(r):
            raise ValueError("delta and r lengths differ")
        if self.m < 2 or self.reps < 1:
            raise ValueError("need m >= 2 and reps >= 1")
        object.__setattr__(self, "r", r)
        object.__setattr__(self, "delta", delta)

    @property
    def k(self) -> int:
        return len(self.r)


def _weights(sets: Sequence[Multiset], m: int) -> np.ndarray:
    C = np.zeros((len(sets), m))
    for i, s in enumerate(sets):
        for l, c in Counter(s).items():
            C[i, l - 1] = c / len(s)
    return C


def _d_from_draws(W: np.ndarray, Z: np.ndarray, r: np.ndarray, delta: np.ndarray, C: np.ndarray) -> np.ndarray:
    # W: (n, k); Z: (n, k, m); returns (n, nsets)
    zbar = Z @ C.T
    base = delta + np.sqrt(1.0 + r) * W
    inner = base[:, :, None] + np.sqrt(r)[None, :, None] * zbar
    return np.einsum("nks,nks->ns", inner, inner)


def asymptotic_dS_draw(config: SimConfig, needed_S: Sequence[Sequence[int]],
                       rng: np.random.Generator) -> dict[Multiset, float]:
    """One joint draw of ``d^S`` for every requested multiset."""
    sets = [canonical(s, config.m) for s in needed_S]
    r, delta = np.asarray(config.r), np.asarray(config.delta)
    W = rng.standard_normal((1, config.k))
    Z = rng.standard_normal((1, config.k, config.m))
    d = _d_from_draws(W, Z, r, delta, _weights(sets, config.m))[0]
    return dict(zip(sets, d.tolist()))


def asymptotic_d_batch(config: SimConfig, needed_S: Sequence[Sequence[int]], stream: str = "asymptotic",
                       threads: int | None = 1) -> dict[Multiset, np.ndarray]:
    """``config.reps`` independent joint draws; each value is an array of length ``reps``."""
    sets = [canonical(s, config.m) for s in needed_S]
    r, delta = np.asarray(config.r), np.asarray(config.delta)
    C = _weights(sets, config.m)
    k, m = config.k, config.m

    def fill(rng: np.random.Generator, size: int) -> np.ndarray:
        W = rng.standard_normal((size, k))
        Z = rng.standard_normal((size, k, m))
        return _d_from_draws(W, Z, r, delta, C)

    d = blocked(config.reps, config.seed, stream, fill, threads)
    return {s: d[:, i] for i, s in enumerate(sets)}


@dataclass(frozen=True)
class BatchStatistics:
    """Vectorised counterpart of :class:`SmiStatistics` over many draws."""

    T: np.ndarray  # (pairs, reps)
    t_hat: np.ndarray  # (max(k, 2), reps)
    d_full: np.ndarray  # (reps,)
    rule: SelectionRule
    k: int

    @property
    def reps(self) -> int:
        return self.d_full.size

    def single(self, i: int) -> SmiStatistics:
        return SmiStatistics({}, self.T[:, i], self.t_hat[:, i], float(self.d_full[i]), self.rule, self.k)

    def mu_sigma(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Vectorised ``(mu_hat, sigma2_hat_raw, sigma2_check_raw)``."""
        k, m = self.k, self.rule.m
        t1, t2 = self.t_hat[0], self.t_hat[1]
        mu = t1 / k
        s_check = t2 / (2 * k) - (2 + k) * t1**2 / (2 * k**2)
        if m < 3:
            return mu, np.full_like(mu, np.nan), s_check
        s_hat = ((k * (m - 1) + 2) * t2 - (m - 1) * (k + 2) * t1**2) / (2 * k**2 * (m - 2))
        return mu, s_hat, s_check


def simulate_statistics(config: SimConfig, rule: SelectionRule, stream: str = "asymptotic",
                        threads: int | None = 1) -> BatchStatistics:
    if rule.m != config.m:
        raise ValueError("rule and config disagree on m")
    d = asymptotic_d_batch(config, rule.required_sets(), stream, threads)
    T = pair_statistics(rule, d)
    return BatchStatistics(
        T=T,
        t_hat=sample_moments(T, max(config.k, 2)),
        d_full=d[tuple(range(1, config.m + 1))],
        rule=rule,
        k=config.k,
    )
