"""Built-in complete-data testing devices and an external-command device."""

from __future__ import annotations

import math
import shlex
import subprocess
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from stacked_mi.io import format_dataset
from stacked_mi.stacking import Dataset, DeviceError

LINREG_KINDS = ("linreg_wald", "linreg_lrt", "linreg_rs")
KINDS = LINREG_KINDS + ("mvn_cov_lrt", "contingency_ci_lrt", "bernoulli_two_group_lrt", "external")


# -- linear regression ---------------------------------------------------------

def linreg_statistics(y: np.ndarray, X: np.ndarray) -> dict[str, float]:
    """Wald, LR and score statistics for ``H0: beta = 0`` with an implicit intercept."""
    y = np.asarray(y, dtype=float)
    X = np.asarray(X, dtype=float)
    if X.ndim == 1:
        X = X[:, None]
    n, p = X.shape
    if n <= p + 1:
        raise ValueError(f"need n > p + 1 rows, got n={n}, p={p}")
    yc = y - y.mean()
    Xc = X - X.mean(axis=0)
    if np.linalg.matrix_rank(Xc) < p:
        raise np.linalg.LinAlgError("design matrix is rank deficient")
    beta, *_ = np.linalg.lstsq(Xc, yc, rcond=None)
    quad = float(yc @ Xc @ beta)
    s0 = float(yc @ yc) / n
    s1 = float(np.sum((yc - Xc @ beta) ** 2)) / n
    scale = max(s0, np.finfo(float).tiny)
    if s0 == 0 or quad <= 1e-14 * n * scale:
        return {"wald": 0.0, "lrt": 0.0, "rs": 0.0}
    if s1 <= 1e-15 * s0:
        raise ValueError("residual variance is zero (perfect fit)")
    return {"wald": quad / s1, "lrt": n * math.log(s0 / s1), "rs": quad / s0}


@dataclass(frozen=True)
class LinRegDevice:
    kind: str
    response: str
    covariates: tuple[str, ...]

    def __post_init__(self):
        if self.kind not in LINREG_KINDS:
            raise ValueError(f"unknown linear regression device {self.kind!r}")
        if not self.covariates:
            raise ValueError("linear regression devices need at least one covariate")
        if self.response in self.covariates:
            raise ValueError("response listed among covariates")

    @property
    def k(self) -> int:
        return len(self.covariates)

    def evaluate(self, data: Dataset) -> float:
        y = data.column(self.response)
        X = np.column_stack([data.column(c) for c in self.covariates])
        return linreg_statistics(y, X)[self.kind.split("_")[1]]


# -- multivariate normal covariance -------------------------------------------

def mvn_cov_lrt(X: np.ndarray, sigma0: np.ndarray) -> float:
    X = np.asarray(X, dtype=float)
    sigma0 = np.atleast_2d(np.asarray(sigma0, dtype=float))
    n, p = X.shape
    if sigma0.shape != (p, p):
        raise ValueError(f"Sigma0 has shape {sigma0.shape}, data has p={p}")
    if n <= p:
        raise ValueError(f"need n > p rows, got n={n}, p={p}")
    Xc = X - X.mean(axis=0)
    S = Xc.T @ Xc / n
    try:
        L0 = np.linalg.cholesky(sigma0)
        np.linalg.cholesky(S)
    except np.linalg.LinAlgError:
        raise np.linalg.LinAlgError("Sigma0 or the sample covariance is not positive definite") from None
    # Sigma0^{-1} S is similar to L0^{-1} S L0^{-T}
    W = np.linalg.solve(L0, np.linalg.solve(L0, S).T)
    sign, logdet = np.linalg.slogdet(W)
    if sign <= 0:
        raise np.linalg.LinAlgError("non-positive determinant")
    return max(0.0, float(n * (np.trace(W) - logdet - p)))


@dataclass(frozen=True)
class MvnCovDevice:
    sigma0: np.ndarray
    columns: tuple[str, ...] | None = None

    @property
    def k(self) -> int:
        p = np.atleast_2d(self.sigma0).shape[0]
        return p * (p + 1) // 2

    def evaluate(self, data: Dataset) -> float:
        X = data.values if self.columns is None else np.column_stack([data.column(c) for c in self.columns])
        return mvn_cov_lrt(X, self.sigma0)


# -- 2x2x2 contingency table --------------------------------------------------

def cell_counts(data: Dataset, factors: Sequence[str], count: str | None) -> np.ndarray:
    """Aggregate rows into a 2x2x2 count array indexed by the 0/1 factor levels."""
    codes = np.column_stack([data.column(f) for f in factors])
    if not np.all((codes == 0) | (codes == 1)):
        raise ValueError(f"factors {list(factors)} must be coded 0/1")
    weights = data.column(count) if count is not None and count in data.column_names else np.ones(data.n)
    if np.any(weights < 0):
        raise ValueError("negative cell count")
    flat = codes.astype(int) @ np.array([4, 2, 1])
    return np.bincount(flat, weights=weights, minlength=8).reshape(2, 2, 2)


def contingency_ci_lrt(table: np.ndarray) -> float:
    """G statistic for ``A independent of B given C`` on a count array indexed ``[a, b, c]``."""
    O = np.asarray(table, dtype=float)
    if O.shape != (2, 2, 2):
        raise ValueError("expected a 2x2x2 table")
    strata = O.sum(axis=(0, 1))
    if np.any(strata <= 0):
        raise ValueError("empty stratum: expected counts undefined")
    E = O.sum(axis=1, keepdims=True) * O.sum(axis=0, keepdims=True) / strata
    pos = O > 0
    return max(0.0, float(2.0 * np.sum(O[pos] * np.log(O[pos] / E[pos]))))


@dataclass(frozen=True)
class ContingencyDevice:
    """Tests ``first`` independent of ``second`` within levels of ``stratum``."""

    first: str = "clinic"
    second: str = "care"
    stratum: str = "survival"
    count: str | None = "count"
    k: int = 2

    def evaluate(self, data: Dataset) -> float:
        return contingency_ci_lrt(cell_counts(data, (self.first, self.second, self.stratum), self.count))


# -- Bernoulli two-group -------------------------------------------------------

def _bern_loglik(s: float, n: float, theta: float) -> float:
    out = 0.0
    if s > 0:
        out += s * math.log(theta)
    if n - s > 0:
        out += (n - s) * math.log1p(-theta)
    return out


def bernoulli_two_group_lrt(x: np.ndarray, y: np.ndarray, theta0: Sequence[float]) -> float:
    x, y = np.asarray(x, dtype=float), np.asarray(y, dtype=float)
    t0, t1 = (float(v) for v in theta0)
    if not (0 < t0 < 1 and 0 < t1 < 1):
        raise ValueError("theta0 components must lie in (0, 1)")
    if not (np.all((x == 0) | (x == 1)) and np.all((y == 0) | (y == 1))):
        raise ValueError("x and y must be coded 0/1")
    stat = 0.0
    for g, theta in ((0, t0), (1, t1)):
        sel = x == g
        n = float(sel.sum())
        if n == 0:
            raise ValueError(f"group x={g} is empty")
        s = float(y[sel].sum())
        stat += _bern_loglik(s, n, s / n) - _bern_loglik(s, n, theta)
    return max(0.0, 2.0 * stat)


@dataclass(frozen=True)
class BernoulliTwoGroupDevice:
    theta0: tuple[float, float]
    x: str = "x"
    y: str = "y"
    k: int = 2

    def evaluate(self, data: Dataset) -> float:
        return bernoulli_two_group_lrt(data.column(self.x), data.column(self.y), self.theta0)


# -- external command ----------------------------------------------------------

class ExternalExitError(DeviceError):
    pass


class ExternalParseError(DeviceError):
    pass


class ExternalTimeoutError(DeviceError):
    pass


@dataclass(frozen=True)
class ExternalDevice:
    """Child process reading CSV on stdin and printing one number on stdout."""

    command: tuple[str, ...]
    k: int
    timeout: float = 60.0

    @classmethod
    def from_string(cls, command: str, k: int, timeout: float = 60.0) -> "ExternalDevice":
        return cls(tuple(shlex.split(command)), k, timeout)

    def evaluate(self, data: Dataset) -> float:
        try:
            proc = subprocess.run(
                list(self.command),
                input=format_dataset(data),
                capture_output=True,
                text=True,
                timeout=self.timeout,
            )
        except subprocess.TimeoutExpired:
            raise ExternalTimeoutError(f"external device timed out after {self.timeout:g}s") from None
        except OSError as exc:
            raise ExternalExitError(f"cannot run external device: {exc}") from None
        if proc.returncode != 0:
            raise ExternalExitError(
                f"external device exited with status {proc.returncode}: {proc.stderr.strip()}"
            )
        text = proc.stdout.strip()
        try:
            return float(text)
        except ValueError:
            raise ExternalParseError(f"external device printed {text!r}, expected one number") from None


# -- factory -------------------------------------------------------------------

@dataclass(frozen=True)
class DeviceSpec:
    kind: str
    params: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown device {self.kind!r}; expected one of {KINDS}")

    def build(self, column_names: Sequence[str] | None = None):
        """Instantiate the device; ``column_names`` fills in default covariates."""
        p = self.params
        if self.kind in LINREG_KINDS:
            response = p.get("response", "y")
            covs = p.get("covariates")
            if covs is None:
                if column_names is None:
                    raise ValueError("covariates unknown: pass column names or params['covariates']")
                covs = [c for c in column_names if c != response]
            return LinRegDevice(self.kind, response, tuple(covs))
        if self.kind == "mvn_cov_lrt":
            if "sigma0" not in p:
                raise ValueError("mvn_cov_lrt needs params['sigma0']")
            cols = p.get("columns")
            return MvnCovDevice(np.atleast_2d(np.asarray(p["sigma0"], dtype=float)),
                                tuple(cols) if cols else None)
        if self.kind == "contingency_ci_lrt":
            keys = ("first", "second", "stratum", "count")
            return ContingencyDevice(**{key: p[key] for key in keys if key in p})
        if self.kind == "bernoulli_two_group_lrt":
            if "theta0" not in p:
                raise ValueError("bernoulli_two_group_lrt needs params['theta0']")
            theta0 = tuple(float(v) for v in p["theta0"])
            if len(theta0) != 2:
                raise ValueError("theta0 must have two components")
            return BernoulliTwoGroupDevice(theta0, p.get("x", "x"), p.get("y", "y"))
        if "command" not in p or "k" not in p:
            raise ValueError("external device needs params['command'] and params['k']")
        cmd = p["command"]
        cmd = tuple(shlex.split(cmd)) if isinstance(cmd, str) else tuple(cmd)
        return ExternalDevice(cmd, int(p["k"]), float(p.get("timeout", 60.0)))
