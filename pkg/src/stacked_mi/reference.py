"""The MI test statistic and its reference null distributions."""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Callable, Sequence

import numpy as np
from scipy import stats

from stacked_mi.omi import OmiEstimate, estimate_omi
from stacked_mi.rng import blocked, default_seed
from stacked_mi.stacking import (
    ImputationSet,
    SmiStatistics,
    StackEvaluator,
    TestDevice,
    moment_estimates,
    selection_rule,
)

METHODS = ("T1", "T2", "T3", "T4", "T4_gamma", "F_two_moment")
MONTE_CARLO = ("T4", "T4_gamma")
NEEDS_SIGMA2 = ("T3", "T4_gamma", "F_two_moment")
DEFAULT_N = 10_000
GAMMA_DEGENERATE = 1e-12
BETA_CAP = 1e6


@dataclass(frozen=True)
class ReferenceSpec:
    """Which reference law to use and how to draw from it.

    ``add_one`` switches the Monte Carlo p-value to ``(hits + 1) / (N + 1)``.
    """

    method: str = "T4"
    N: int = DEFAULT_N
    seed: int = field(default_factory=default_seed)
    rule: str = "jack"
    threads: int | None = 1
    add_one: bool = False

    def __post_init__(self):
        if self.method not in METHODS:
            raise ValueError(f"unknown reference method {self.method!r}; expected one of {METHODS}")
        if self.N < 1:
            raise ValueError("N must be >= 1")

    @property
    def needs_sigma2(self) -> bool:
        return self.method in NEEDS_SIGMA2


@dataclass(frozen=True)
class MiTestResult:
    D_hat: float
    p_value: float
    spec: ReferenceSpec
    omi: OmiEstimate
    d_full: float
    T_values: np.ndarray
    warnings: tuple[str, ...] = ()

    def to_dict(self) -> dict:
        sigma2 = self.omi.sigma2_hat
        return {
            "method": self.spec.method,
            "k": self.omi.k,
            "m": self.omi.m,
            "N": self.spec.N,
            "seed": self.spec.seed,
            "D_hat": self.D_hat,
            "p_value": self.p_value,
            "r_hat": self.omi.r_hat.tolist(),
            "mu_hat": self.omi.mu_hat,
            "sigma2_hat": None if math.isnan(sigma2) else sigma2,
            "warnings": list(self.warnings),
        }


def d_hat_statistic(d_full: float, mu_hat: float, k: int, m: int) -> float:
    if k < 1 or m < 2:
        raise ValueError("need k >= 1 and m >= 2")
    return d_full / (k * (1.0 + (1.0 + 1.0 / m) * max(0.0, mu_hat)))


def _ratio(scale: np.ndarray, G: np.ndarray, H: np.ndarray, m: int) -> np.ndarray:
    # scale holds the per-component odds; shape broadcastable to G
    a = (1.0 + 1.0 / m) * scale
    k = G.shape[-1]
    return np.sum((1.0 + a) * G, axis=-1) / k / (1.0 + np.sum(a * H, axis=-1) / k)


def sample_T4(r_hat: Sequence[float], m: int, N: int, seed: int, threads: int | None = 1) -> np.ndarray:
    r = np.asarray(r_hat, dtype=float)
    if r.ndim != 1 or r.size < 1:
        raise ValueError("r_hat must be a non-empty vector")
    if np.any(r < 0):
        raise ValueError("r_hat must be nonnegative")
    if m < 2:
        raise ValueError("m >= 2 required")
    k = r.size

    def fill(rng: np.random.Generator, size: int) -> np.ndarray:
        G = rng.chisquare(1, (size, k))
        H = rng.chisquare(m - 1, (size, k)) / (m - 1)
        return _ratio(r, G, H, m)

    return blocked(N, seed, "T4", fill, threads)


def sample_T4_gamma(mu_hat: float, sigma2_hat: float, k: int, m: int, N: int, seed: int,
                    threads: int | None = 1) -> np.ndarray:
    if m < 3:
        raise ValueError("m >= 3 required for sigma2_hat")
    mu, s2 = max(0.0, mu_hat), max(0.0, sigma2_hat)
    degenerate = s2 < GAMMA_DEGENERATE or mu == 0.0

    def fill(rng: np.random.Generator, size: int) -> np.ndarray:
        if degenerate:
            xi = np.full((size, k), mu)
        else:
            xi = rng.gamma(mu * mu / s2, s2 / mu, (size, k))
        G = rng.chisquare(1, (size, k))
        H = rng.chisquare(m - 1, (size, k)) / (m - 1)
        return _ratio(xi, G, H, m)

    return blocked(N, seed, "T4_gamma", fill, threads)


def pvalue_T1(D_hat: float, k: int) -> float:
    return float(stats.chi2.sf(k * D_hat, k))


def t2_denominator_df(mu_hat: float, k: int, m: int) -> float:
    """Second F degree of freedom; infinite when no information is missing."""
    if m < 2:
        raise ValueError("m >= 2 required")
    if mu_hat <= 0:
        return math.inf
    inv = 1.0 / ((1.0 + 1.0 / m) * mu_hat)
    K = k * (m - 1)
    if K > 4:
        return 4.0 + (K - 4) * (1.0 + (1.0 - 2.0 / K) * inv) ** 2
    return (m - 1) * (1.0 + inv) ** 2 * (k + 1) / 2.0


def pvalue_T2(D_hat: float, mu_hat: float, k: int, m: int) -> float:
    q = t2_denominator_df(mu_hat, k, m)
    if math.isinf(q):
        return pvalue_T1(D_hat, k)
    return float(stats.f.sf(D_hat, k, q))


def t3_constants(mu_hat: float, sigma2_hat: float) -> tuple[float, float]:
    """``(c0, c1)`` of the shifted chi-square matched to the limit law."""
    c1 = math.sqrt(1.0 + math.sqrt(max(0.0, sigma2_hat) / (1.0 + mu_hat**2)))
    return 1.0 - c1, c1


def pvalue_T3(D_hat: float, mu_hat: float, sigma2_hat: float, k: int) -> float:
    c0, c1 = t3_constants(mu_hat, sigma2_hat)
    if D_hat <= c0:
        return 1.0
    return float(stats.chi2.sf(k * (D_hat - c0) / c1, k))


def f_two_moment_params(mu: float, sigma2: float, k: int, m: int) -> tuple[float, float]:
    if m < 2:
        raise ValueError("m >= 2 required")
    c = 1.0 + 1.0 / m
    mu = max(0.0, mu)
    z1 = c * math.sqrt(max(0.0, sigma2)) / (1.0 + c * mu)
    z2 = c * mu / (1.0 + c * mu)
    beta1 = k / (1.0 + z1**2)
    denom = z1**2 + z2**2
    beta2 = BETA_CAP if denom == 0 else min(BETA_CAP, k * (m - 1) / denom)
    return beta1, beta2


def pvalue_F_two_moment(D_hat: float, mu: float, sigma2: float, k: int, m: int) -> float:
    b1, b2 = f_two_moment_params(mu, sigma2, k, m)
    return float(stats.f.sf(D_hat, b1, b2))


def pvalue_from_samples(D_hat: float, replicates: np.ndarray, add_one: bool = False) -> float:
    reps = np.asarray(replicates)
    if reps.size == 0:
        raise ValueError("empty replicate set")
    hits = int(np.count_nonzero(reps >= D_hat))
    if add_one:
        return (hits + 1) / (reps.size + 1)
    return hits / reps.size


def reference_replicates(omi: OmiEstimate, spec: ReferenceSpec) -> np.ndarray:
    if spec.method == "T4":
        return sample_T4(omi.r_hat, omi.m, spec.N, spec.seed, spec.threads)
    if spec.method == "T4_gamma":
        return sample_T4_gamma(omi.mu_hat, omi.require_sigma2(), omi.k, omi.m, spec.N, spec.seed, spec.threads)
    raise ValueError(f"{spec.method} has no Monte Carlo sampler")


def reference_pvalue(D_hat: float, omi: OmiEstimate, spec: ReferenceSpec,
                     replicates: np.ndarray | None = None) -> float:
    """p-value of ``D_hat`` under ``spec``; ``replicates`` may be precomputed."""
    k, m, method = omi.k, omi.m, spec.method
    if method in MONTE_CARLO:
        reps = reference_replicates(omi, spec) if replicates is None else replicates
        return pvalue_from_samples(D_hat, reps, spec.add_one)
    if method == "T1":
        return pvalue_T1(D_hat, k)
    if method == "T2":
        return pvalue_T2(D_hat, omi.mu_hat, k, m)
    if method == "T3":
        return pvalue_T3(D_hat, omi.mu_hat, omi.require_sigma2(), k)
    return pvalue_F_two_moment(D_hat, omi.mu_hat, omi.require_sigma2(), k, m)


def _check_sigma2(spec: ReferenceSpec, m: int) -> None:
    if spec.needs_sigma2 and m < 3:
        raise ValueError("m >= 3 required for sigma2_hat")


def mi_test_from_stats(stats_: SmiStatistics, spec: ReferenceSpec,
                       replicates: np.ndarray | None = None) -> MiTestResult:
    """Finish the test from precomputed stacked statistics (no device calls)."""
    m, k = stats_.rule.m, stats_.k
    _check_sigma2(spec, m)
    omi = estimate_omi(stats_)
    D = d_hat_statistic(stats_.d_full, omi.mu_hat, k, m)
    p = reference_pvalue(D, omi, spec, replicates)
    return MiTestResult(
        D_hat=D,
        p_value=p,
        spec=spec,
        omi=omi,
        d_full=stats_.d_full,
        T_values=stats_.T,
        warnings=omi.warnings,
    )


def mi_test(device: TestDevice, imps: ImputationSet, k: int, spec: ReferenceSpec | None = None,
            evaluator: StackEvaluator | None = None) -> MiTestResult:
    spec = spec or ReferenceSpec()
    _check_sigma2(spec, imps.m)
    rule = selection_rule(spec.rule, imps.m)
    st = moment_estimates(device, imps, rule, k, threads=spec.threads, evaluator=evaluator)
    return mi_test_from_stats(st, spec)


@dataclass(frozen=True)
class GridPoint:
    theta: tuple[float, ...]
    p_value: float
    D_hat: float
    error: str | None = None


def pvalue_function(dev_factory: Callable[..., TestDevice], imps: ImputationSet, k: int,
                    spec: ReferenceSpec, grid: Sequence) -> list[GridPoint]:
    """Independent MI tests over ``grid``; a failing point is reported, not raised.

    Every point uses the same seed, so T4 points with equal ``r_hat`` share
    replicates and the region boundary is not jittered by resampling.
    """
    _check_sigma2(spec, imps.m)
    out = []
    for theta in grid:
        key = tuple(float(v) for v in np.atleast_1d(theta))
        try:
            res = mi_test(dev_factory(theta), imps, k, spec)
        except (ValueError, ArithmeticError, np.linalg.LinAlgError, RuntimeError) as exc:
            out.append(GridPoint(key, math.nan, math.nan, str(exc)))
            continue
        out.append(GridPoint(key, res.p_value, res.D_hat))
    return out


def confidence_mask(points: Sequence[GridPoint], alpha: float) -> list[bool]:
    """Membership of each grid point in ``{theta : p(theta) >= alpha}``."""
    return [not math.isnan(pt.p_value) and pt.p_value >= alpha for pt in points]


def with_method(spec: ReferenceSpec, method: str) -> ReferenceSpec:
    return replace(spec, method=method)
