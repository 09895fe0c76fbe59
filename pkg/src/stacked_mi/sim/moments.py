"""Closed-form moments of the jackknife SMI statistics and Monte Carlo checks."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from stacked_mi.rng import blocked

MIXED_MOMENTS = ("T1^4", "T1^3T2", "T1^2T2^2", "T1^2T2T3", "T1T2T3T4")
_COLUMNS = {
    "T1^4": (0, 0, 0, 0),
    "T1^3T2": (0, 0, 0, 1),
    "T1^2T2^2": (0, 0, 1, 1),
    "T1^2T2T3": (0, 0, 1, 2),
    "T1T2T3T4": (0, 1, 2, 3),
}


def power_sums(r, upto: int = 4) -> np.ndarray:
    r = np.asarray(r, dtype=float)
    return np.array([np.sum(r**t) for t in range(1, upto + 1)])


def _basis(r) -> np.ndarray:
    R1, R2, R3, R4 = power_sums(r)
    return np.array([R4, R3 * R1, R2**2, R1**2 * R2, R1**4])


def mixed_moment_coefficients(m: int, printed: bool = False) -> dict[str, np.ndarray]:
    """Coefficients on ``(R4, R3 R1, R2^2, R1^2 R2, R1^4)``.

    ``printed=True`` returns the forms as originally published; two of them
    carry typos in the R4 coefficient (see the test-suite quadrature check).
    """
    if m < 5:
        raise ValueError("four distinct jackknife indices need m >= 5")
    a = m - 1
    out = {
        "T1^4": [48, 32, 12, 12, 1],
        "T1^3T2": [48 / a**2, 8 * (a**2 + 3) / a**2, 12 / a**2, 6 * (a**2 + 1) / a**2, 1],
        "T1^2T2^2": [16 * (2 * a**2 + 1) / a**4, 32 / a**2, 4 * (a**4 + 2) / a**4, 4 * (a**2 + 2) / a**2, 1],
        "T1^2T2T3": [16 * (1 - 2 * a) / a**4, 16 * (a - 1) / a**3, 4 * (a**2 + 2) / a**4,
                     2 * (a**2 + 5) / a**2, 1],
        "T1T2T3T4": [48 / a**4, -32 / a**3, 12 / a**4, 12 / a**2, 1],
    }
    if printed:
        out["T1^2T2^2"][0] = 16 * (a**2 + 1) / a**4
        out["T1T2T3T4"][0] = (48 * a**5 - 48 * a**4 + 72 * a**2 + 144 * a + 72) / (a**8 * (a - 1))
    return {name: np.asarray(c, dtype=float) for name, c in out.items()}


def mixed_moments(r, m: int, printed: bool = False) -> dict[str, float]:
    b = _basis(r)
    return {name: float(c @ b) for name, c in mixed_moment_coefficients(m, printed).items()}


def sample_jackknife_T(r, m: int, reps: int, seed: int, threads: int | None = 1) -> np.ndarray:
    """``(reps, m)`` draws of ``T_l = m/(m-1) sum_j r_j (Z_jl - Zbar_j)^2``."""
    r = np.asarray(r, dtype=float)
    k = r.size

    def fill(rng: np.random.Generator, size: int) -> np.ndarray:
        Z = rng.standard_normal((size, k, m))
        Z -= Z.mean(axis=2, keepdims=True)
        return m / (m - 1) * np.einsum("k,nkm->nm", r, Z * Z)

    return blocked(reps, seed, "jackknife-T", fill, threads)


@dataclass(frozen=True)
class MomentCheck:
    name: str
    estimate: float
    se: float
    closed_form: float

    @property
    def z(self) -> float:
        return (self.estimate - self.closed_form) / self.se if self.se > 0 else math.inf

    def within(self, n_se: float) -> bool:
        return abs(self.estimate - self.closed_form) <= n_se * self.se


def moment_oracle_check(r, m: int, reps: int, seed: int, printed: bool = False,
                        threads: int | None = 1) -> list[MomentCheck]:
    T = sample_jackknife_T(r, m, reps, seed, threads)
    closed = mixed_moments(r, m, printed)
    out = []
    for name in MIXED_MOMENTS:
        prod = np.prod(T[:, list(_COLUMNS[name])], axis=1)
        out.append(MomentCheck(name, float(prod.mean()), float(prod.std(ddof=1) / math.sqrt(reps)), closed[name]))
    return out


def var_sigma_limit(R, k: int, m: int) -> float:
    """Large-n variance of the bias-corrected ``sigma2_hat`` given power sums ``R1..R4``."""
    R1, R2, R3, R4 = (float(v) for v in R[:4])
    if m < 3:
        raise ValueError("m >= 3 required for sigma2_hat")
    a = m - 1
    lead = 18 * (m - 3) * (k + 2) ** 2 / (k**4 * a**5 * m * (m - 2) ** 2) * R4
    v = np.array([
        2 * (a**2 * (3 * m - 7) * k**2 - 4 * a * k - 4),
        -8 * a**2 * (m - 2) * k,
        (m - 2) * (a**2 * k**2 + 4 * a * k + 4 * m),
        4 * a**2 * (m - 2),
    ])
    basis = np.array([R4, R3 * R1, R2**2, R1**2 * R2])
    return float(lead + 2 / (k**4 * a**3 * (m - 2)) * (v @ basis))


def var_sigma_leading(R, k: int, m: int) -> float:
    R1, R2, R3, R4 = (float(v) for v in R[:4])
    return 2 * (6 * k**2 * R4 - 8 * k * R3 * R1 + k**2 * R2**2 + 4 * R1**2 * R2) / (k**4 * m)


def sigma_check_bias(R2: float, k: int, m: int) -> float:
    """Large-n bias of the plug-in variance estimate."""
    return -(k + 2) * R2 / (k**2 * (m - 1))
