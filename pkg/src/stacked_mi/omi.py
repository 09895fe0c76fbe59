"""Estimation of the odds of missing information (OMI).

The chain is ``r -> R -> t``: ``R`` holds the power sums of the odds and
``t`` the moments of the weighted chi-square mixture ``sum_j r_j U_j``.
Both maps are inverted in closed form, the second through the
eigenvalues of a companion matrix built with Newton's identities.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

MAX_K = 64
COMPLEX_TOL = 1e-6
LARGE_R = 10.0


def m1_forward(r) -> np.ndarray:
    """Power sums ``R_tau = sum_j r_j**tau`` for ``tau = 1..k``."""
    r = np.asarray(r, dtype=float)
    k = r.size
    if k < 1:
        raise ValueError("need k >= 1")
    return np.array([np.sum(r**tau) for tau in range(1, k + 1)])


def m2_forward(R) -> np.ndarray:
    """Moments of ``sum_j r_j U_j`` (``U_j`` iid chi-square(1)) from power sums."""
    R = np.asarray(R, dtype=float)
    k = R.size
    if k < 1:
        raise ValueError("need k >= 1")
    t = np.empty(k + 1)
    t[0] = 1.0
    for tau in range(1, k + 1):
        acc = 0.0
        for j in range(1, tau + 1):
            coef = math.factorial(tau - 1) / math.factorial(tau - j) * 2.0 ** (j - 1)
            acc += coef * R[j - 1] * t[tau - j]
        t[tau] = acc
    return t[1:]


def m2_inverse(t) -> np.ndarray:
    t = np.asarray(t, dtype=float)
    k = t.size
    if k < 1:
        raise ValueError("need k >= 1")
    tt = np.concatenate([[1.0], t])
    R = np.empty(k)
    for tau in range(1, k + 1):
        acc = tt[tau] / (math.factorial(tau - 1) * 2.0 ** (tau - 1))
        for j in range(1, tau):
            acc -= tt[tau - j] * R[j - 1] / (math.factorial(tau - j) * 2.0 ** (tau - j))
        R[tau - 1] = acc
    return R


def companion_matrix(R) -> np.ndarray:
    """Companion matrix whose eigenvalues have power sums ``R``."""
    R = np.asarray(R, dtype=float)
    k = R.size
    a = np.zeros(k + 1)  # 1-based: a[1..k]
    a[k] = R[0]
    for j in range(2, k + 1):
        acc = R[j - 1]
        for i in range(1, j):
            acc -= R[i - 1] * a[k - j + i + 1]
        a[k - j + 1] = acc / j
    A = np.zeros((k, k))
    A[:-1, 1:] = np.eye(k - 1)
    A[-1, :] = a[1:]
    return A


def _eigvals(R) -> np.ndarray:
    R = np.asarray(R, dtype=float)
    if R.size > MAX_K:
        raise ValueError(f"k={R.size} exceeds the supported maximum {MAX_K}")
    if not np.all(np.isfinite(R)):
        raise ValueError("non-finite power sums")
    if R.size == 1:
        return R.astype(complex)
    lam = np.linalg.eigvals(companion_matrix(R))
    if not np.all(np.isfinite(lam)):
        raise np.linalg.LinAlgError("eigenvalue computation produced non-finite values")
    return lam


def m1_inverse(R) -> np.ndarray:
    """Eigenvalue moduli of the companion matrix, sorted descending."""
    return np.sort(np.abs(_eigvals(R)))[::-1]


def mu_hat(t1: float, k: int) -> float:
    return t1 / k


def mu_sigma(t1: float, t2: float, m: int, k: int) -> tuple[float, float, float]:
    """Return ``(mu_hat, sigma2_hat_raw, sigma2_check_raw)``.

    ``sigma2_hat`` is the bias-corrected variance estimate and needs
    ``m >= 3``; ``sigma2_check`` is the plug-in (biased) one.
    """
    if k < 1:
        raise ValueError("k must be >= 1")
    if m < 3:
        raise ValueError("m >= 3 required for sigma2_hat")
    mu = t1 / k
    s_hat = ((k * (m - 1) + 2) * t2 - (m - 1) * (k + 2) * t1**2) / (2 * k**2 * (m - 2))
    s_check = t2 / (2 * k) - (2 + k) * t1**2 / (2 * k**2)
    return mu, s_hat, s_check


@dataclass(frozen=True)
class OmiEstimate:
    r_hat: np.ndarray
    R_hat: np.ndarray
    mu_hat: float
    sigma2_hat_raw: float
    sigma2_hat: float
    sigma2_check_raw: float
    m: int
    k: int
    complex_eigenvalues: bool = False
    warnings: tuple[str, ...] = field(default=())

    @property
    def has_sigma2(self) -> bool:
        return not math.isnan(self.sigma2_hat_raw)

    def require_sigma2(self) -> float:
        if not self.has_sigma2:
            raise ValueError("m >= 3 required for sigma2_hat")
        return self.sigma2_hat

    def to_dict(self) -> dict:
        def num(x):
            return None if isinstance(x, float) and math.isnan(x) else x

        return {
            "m": self.m,
            "k": self.k,
            "r_hat": self.r_hat.tolist(),
            "R_hat": self.R_hat.tolist(),
            "mu_hat": self.mu_hat,
            "sigma2_hat": num(self.sigma2_hat),
            "sigma2_hat_raw": num(self.sigma2_hat_raw),
            "sigma2_check_raw": num(self.sigma2_check_raw),
            "complex_eigenvalues": self.complex_eigenvalues,
            "warnings": list(self.warnings),
        }


def estimate_from_moments(t_hat, m: int, k: int) -> OmiEstimate:
    """Run the two-stage inversion on moment estimates ``t_hat`` (length >= k)."""
    t_hat = np.asarray(t_hat, dtype=float)
    if t_hat.size < k:
        raise ValueError(f"need {k} moment estimates, got {t_hat.size}")
    notes = []
    R_hat = m2_inverse(t_hat[:k])
    lam = _eigvals(R_hat)
    rotated = bool(np.any(np.abs(lam.imag) > COMPLEX_TOL * (1 + np.abs(lam.real))))
    if rotated:
        notes.append("complex eigenvalues in the inversion; moment estimates are noisy")
    r_hat = np.sort(np.abs(lam))[::-1]
    if np.any(r_hat > LARGE_R):
        notes.append(f"estimated odds of missing information exceed {LARGE_R:g}")

    t1 = float(t_hat[0])
    if m >= 3 and t_hat.size >= 2:
        mu, s_hat, s_check = mu_sigma(t1, float(t_hat[1]), m, k)
    else:
        mu, s_hat, s_check = mu_hat(t1, k), math.nan, math.nan
        notes.append("m < 3: sigma2_hat unavailable")
    return OmiEstimate(
        r_hat=r_hat,
        R_hat=R_hat,
        mu_hat=mu,
        sigma2_hat_raw=s_hat,
        sigma2_hat=max(0.0, s_hat) if not math.isnan(s_hat) else math.nan,
        sigma2_check_raw=s_check,
        m=m,
        k=k,
        complex_eigenvalues=rotated,
        warnings=tuple(notes),
    )


def estimate_omi(stats, m: int | None = None, k: int | None = None) -> OmiEstimate:
    """OMI estimates from :class:`~stacked_mi.stacking.SmiStatistics`."""
    m = stats.rule.m if m is None else m
    k = stats.k if k is None else k
    return estimate_from_moments(stats.t_hat, m, k)
