"""Simulation studies. Each returns a list of flat row dicts; see :func:`write_experiment`."""

from __future__ import annotations

import csv
import json
import math
from dataclasses import asdict, is_dataclass
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from stacked_mi.devices import LinRegDevice
from stacked_mi.eomi import q_statistic, sample_Q0
from stacked_mi.omi import estimate_from_moments
from stacked_mi.reference import (
    ReferenceSpec,
    d_hat_statistic,
    pvalue_F_two_moment,
    pvalue_T1,
    pvalue_T2,
    pvalue_T3,
    pvalue_from_samples,
    mi_test,
    sample_T4,
    sample_T4_gamma,
)
from stacked_mi.rng import substream
from stacked_mi.sim.asymptotic import SimConfig, simulate_statistics
from stacked_mi.sim.gibbs import RegressionSimConfig, generate_regression_data, impute_regression
from stacked_mi.sim.meng_rubin import meng_rubin_demo
from stacked_mi.stacking import StackEvaluator, selection_rule

ALPHA_GRID = (0.01, 0.02, 0.03, 0.04, 0.05)
SIZE_METHODS = ("T1", "T2", "T3", "T4", "T4_gamma")


def spread_r(r_max: float, k: int, r_min: float = 0.1) -> np.ndarray:
    """``k`` odds evenly spaced on ``[r_min, r_max]``."""
    if k == 1:
        return np.array([r_max])
    return np.linspace(r_min, r_max, k)


def _derived_seed(seed: int, *parts: int) -> int:
    return int(np.random.SeedSequence([seed, *parts]).generate_state(1, dtype=np.uint64)[0] >> 1)


# -- OMI estimation error ----------------------------------------------------

def experiment_omi_mse(r_max_grid: Sequence[float] = (0.1, 0.3, 0.5, 0.7, 0.9), ks: Sequence[int] = (2, 4, 6),
                       ms: Sequence[int] = (10, 20, 30), reps: int = 2000, seed: int = 0, rule: str = "jack",
                       threads: int | None = 1) -> list[dict]:
    rows = []
    for hyp, delta in (("H0", 0.0), ("H1", 1.0)):
        for k in ks:
            for m in ms:
                for r_max in r_max_grid:
                    r = spread_r(r_max, k)
                    cfg = SimConfig(tuple(r), m, tuple([delta] * k), reps, seed)
                    b = simulate_statistics(cfg, selection_rule(rule, m), f"omi-mse/{hyp}/{k}/{m}/{r_max}", threads)
                    truth = np.sort(r)[::-1]
                    err = np.empty(reps)
                    for i in range(reps):
                        est = estimate_from_moments(b.t_hat[:, i], m, k)
                        err[i] = np.sum((est.r_hat - truth) ** 2)
                    rows.append({"hypothesis": hyp, "k": k, "m": m, "r_max": r_max, "reps": reps,
                                 "sum_mse": float(err.mean()), "se": float(err.std(ddof=1) / math.sqrt(reps))})
    return rows


# -- bias of the variance estimates -----------------------------------------------

def experiment_sigma_bias(ms: Sequence[int] = (5, 10), r_max_grid: Sequence[float] = (0.1, 0.3, 0.5, 0.7, 0.9),
                          k: int = 4, reps: int = 2000, seed: int = 0, threads: int | None = 1) -> list[dict]:
    rows = []
    for m in ms:
        for r_max in r_max_grid:
            r = spread_r(r_max, k)
            target = float(np.var(r))
            cfg = SimConfig(tuple(r), m, None, reps, seed)
            b = simulate_statistics(cfg, selection_rule("jack", m), f"sigma-bias/{k}/{m}/{r_max}", threads)
            _, s_hat, s_check = b.mu_sigma()
            rows.append({
                "m": m, "k": k, "r_max": r_max, "reps": reps, "sigma2_r": target,
                "bias100_check": 100 * float(s_check.mean() - target),
                "bias100_hat": 100 * float(s_hat.mean() - target),
                "se100_check": 100 * float(s_check.std(ddof=1) / math.sqrt(reps)),
                "se100_hat": 100 * float(s_hat.std(ddof=1) / math.sqrt(reps)),
            })
    return rows


# -- size of the reference distributions ----------------------------------------

def size_pvalues(r: Sequence[float], m: int, tests: int, N: int, seed: int,
                 methods: Sequence[str] = SIZE_METHODS, rule: str = "jack",
                 threads: int | None = 1) -> dict[str, np.ndarray]:
    """Null p-values of every method over ``tests`` simulated MI tests."""
    k = len(r)
    cfg = SimConfig(tuple(r), m, None, tests, seed)
    b = simulate_statistics(cfg, selection_rule(rule, m), f"size/{k}/{m}", threads)
    mu, s_hat, _ = b.mu_sigma()
    out = {name: np.empty(tests) for name in methods}
    for i in range(tests):
        D = d_hat_statistic(float(b.d_full[i]), float(mu[i]), k, m)
        s2 = max(0.0, float(s_hat[i])) if m >= 3 else math.nan
        rep_seed = _derived_seed(seed, i)
        for name in methods:
            if name == "T1":
                p = pvalue_T1(D, k)
            elif name == "T2":
                p = pvalue_T2(D, float(mu[i]), k, m)
            elif name == "T3":
                p = pvalue_T3(D, float(mu[i]), s2, k)
            elif name == "F_two_moment":
                p = pvalue_F_two_moment(D, float(mu[i]), s2, k, m)
            elif name == "T4":
                est = estimate_from_moments(b.t_hat[:, i], m, k)
                p = pvalue_from_samples(D, sample_T4(est.r_hat, m, N, rep_seed))
            elif name == "T4_gamma":
                p = pvalue_from_samples(D, sample_T4_gamma(float(mu[i]), s2, k, m, N, rep_seed))
            else:
                raise ValueError(f"unknown method {name!r}")
            out[name][i] = p
    return out


def empirical_size(pvalues: np.ndarray, alpha: float) -> float:
    return float(np.mean(pvalues <= alpha))


def experiment_size_accuracy(r_max_grid: Sequence[float] = (0.3, 0.6, 0.9), ms: Sequence[int] = (10, 20),
                             tests: int = 10_000, N: int = 10_000, seed: int = 0,
                             alphas: Sequence[float] = ALPHA_GRID, methods: Sequence[str] = SIZE_METHODS,
                             threads: int | None = 1) -> list[dict]:
    rows = []
    for m in ms:
        for r_max in r_max_grid:
            r = (0.0, 0.0, r_max, r_max)
            pv = size_pvalues(r, m, tests, N, _derived_seed(seed, m, int(r_max * 1000)), methods, threads=threads)
            for name in methods:
                for a in alphas:
                    size = empirical_size(pv[name], a)
                    rows.append({"m": m, "r_max": r_max, "method": name, "alpha0": a, "alpha": size,
                                 "rel_error": abs(size - a) / a, "tests": tests, "N": N})
    return rows


# -- EOMI power -------------------------------------------------------------

def eomi_r(C: float, k: int) -> np.ndarray:
    """Unequal odds with mean one and coefficient of variation ``C sqrt(k - 1)``."""
    return np.array([1.0 - C] * (k - 1) + [1.0 + (k - 1) * C])


def eomi_rejection_rate(C: float, k: int, m: int, trials: int, seed: int, null_N: int = 100_000,
                        alpha: float = 0.05, threads: int | None = 1) -> float:
    cfg = SimConfig(tuple(eomi_r(C, k)), m, None, trials, seed)
    b = simulate_statistics(cfg, selection_rule("jack", m), f"eomi/{C}/{k}/{m}", threads)
    mu, s_hat, _ = b.mu_sigma()
    crit = float(np.quantile(sample_Q0(k, m, null_N, seed, threads), 1 - alpha))
    Q = np.array([q_statistic(float(a), float(s), m) for a, s in zip(mu, s_hat)])
    return float(np.mean(Q > crit))


def experiment_eomi_power(C_grid: Sequence[float] = (0.0, 0.1, 0.2, 0.3, 0.4, 0.5), ks: Sequence[int] = (5, 10),
                          ms: Sequence[int] = (5, 10, 20, 30), trials: int = 10_000, seed: int = 0,
                          null_N: int = 100_000, threads: int | None = 1) -> list[dict]:
    if any(not 0 <= C <= 1 for C in C_grid):
        raise ValueError("C must lie in [0, 1]")
    rows = []
    for k in ks:
        for m in ms:
            for C in C_grid:
                rate = eomi_rejection_rate(C, k, m, trials, seed, null_N, threads=threads)
                rows.append({"k": k, "m": m, "C": C, "c_r": C * math.sqrt(k - 1), "rejection_rate": rate,
                             "trials": trials})
    return rows


# -- finite-n regression ------------------------------------------------------

REG_DEVICES = ("linreg_wald", "linreg_lrt", "linreg_rs")
REG_METHODS = ("T1", "T2", "T3", "T4")


def regression_pvalues(cfg: RegressionSimConfig, devices: Sequence[str] = REG_DEVICES,
                       methods: Sequence[str] = REG_METHODS, N: int = 10_000, rule: str = "jack",
                       threads: int | None = 1) -> tuple[dict[tuple[str, str], np.ndarray], np.ndarray]:
    """p-values per (device, method) and per-rep missing fractions."""
    covs = cfg.column_names[1:]
    out = {(d, meth): np.empty(cfg.reps) for d in devices for meth in methods}
    fractions = np.empty((cfg.reps, cfg.p))
    for i in range(cfg.reps):
        rng = substream(cfg.seed, "regression", i)
        data, observed = generate_regression_data(cfg, rng)
        fractions[i] = 1.0 - observed.mean(axis=0)
        imps = impute_regression(data, observed, cfg, rng)
        for d in devices:
            device = LinRegDevice(d, "y", covs)
            ev = StackEvaluator(device, imps)
            for meth in methods:
                spec = ReferenceSpec(method=meth, N=N, seed=_derived_seed(cfg.seed, i), rule=rule, threads=threads)
                out[(d, meth)][i] = mi_test(device, imps, cfg.p, spec, evaluator=ev).p_value
    return out, fractions


def experiment_regression_finite_n(cfg: RegressionSimConfig, N: int = 10_000, alphas: Sequence[float] = ALPHA_GRID,
                                   threads: int | None = 1) -> list[dict]:
    pv, fractions = regression_pvalues(cfg, N=N, threads=threads)
    miss = fractions.mean(axis=0)
    rows = []
    for (dev, meth), p in pv.items():
        for a in alphas:
            size = empirical_size(p, a)
            rows.append({"device": dev, "method": meth, "alpha0": a, "alpha": size,
                         "rel_error": abs(size - a) / a, "n": cfg.n, "m": cfg.m, "reps": cfg.reps,
                         "gamma0": cfg.gamma[0], "gamma1": cfg.gamma[1],
                         "missing_fractions": " ".join(f"{v:.4f}" for v in miss)})
    return rows


# -- contingency-table demo --------------------------------------------------

def experiment_meng_rubin(ms: Sequence[int] = (5, 10, 20, 40, 80, 160, 320, 640), reps: int = 256,
                          seed: int = 0, null_N: int = 10_000) -> list[dict]:
    return [asdict(row) for row in meng_rubin_demo(ms, reps, seed, null_N)]


# -- output --------------------------------------------------------------------

def _jsonable(obj):
    if is_dataclass(obj):
        return asdict(obj)
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, (np.floating, np.integer)):
        return obj.item()
    if isinstance(obj, tuple):
        return list(obj)
    return obj


def write_experiment(rows: Iterable[dict], csv_path: str | Path, config: dict) -> Path:
    """Write rows as CSV plus ``<name>.manifest.json`` holding the config and seed."""
    rows = list(rows)
    csv_path = Path(csv_path)
    csv_path.parent.mkdir(parents=True, exist_ok=True)
    fields = list(rows[0]) if rows else []
    with open(csv_path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=fields, lineterminator="\n")
        writer.writeheader()
        for row in rows:
            writer.writerow({key: (format(v, ".17g") if isinstance(v, float) else v) for key, v in row.items()})
    manifest = csv_path.with_suffix(".manifest.json")
    manifest.write_text(json.dumps({key: _jsonable(v) for key, v in config.items()}, indent=2, sort_keys=True) + "\n")
    return manifest
