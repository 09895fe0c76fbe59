"""Clinic / parental care / survival table with missing clinic labels.

Arrays are indexed ``[clinic, care, survival]`` with clinic A=0, B=1;
care less=0, more=1; survival died=0, survived=1.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from stacked_mi.devices import ContingencyDevice
from stacked_mi.eomi import eomi_test, sample_Q0
from stacked_mi.omi import estimate_omi
from stacked_mi.rng import substream
from stacked_mi.stacking import Dataset, ImputationSet, moment_estimates, selection_rule

OBSERVED = np.array([
    [[3, 176], [4, 293]],   # clinic A: less care, more care
    [[17, 197], [2, 23]],   # clinic B
], dtype=float)
MISSING_CLINIC = np.array([[10, 150], [5, 90]], dtype=float)  # [care, survival]

COLUMNS = ("clinic", "care", "survival", "count")
K = 2


def table_dataset(table: np.ndarray) -> Dataset:
    rows = [(a, b, c, table[a, b, c]) for a in range(2) for b in range(2) for c in range(2)]
    return Dataset(np.array(rows, dtype=float), COLUMNS)


def impute_tables(m: int, rng: np.random.Generator) -> list[np.ndarray]:
    """Beta(1, 1) posterior for P(clinic A | care, survival), then binomial labels."""
    out = []
    for _ in range(m):
        p_a = rng.beta(1.0 + OBSERVED[0], 1.0 + OBSERVED[1])
        to_a = rng.binomial(MISSING_CLINIC.astype(int), p_a)
        out.append(OBSERVED + np.stack([to_a, MISSING_CLINIC - to_a]))
    return out


@dataclass(frozen=True)
class MengRubinRow:
    m: int
    rep: int
    r1: float
    r2: float
    eomi_p: float


def meng_rubin_run(m: int, rep: int, seed: int, q0_draws: np.ndarray | None = None) -> MengRubinRow:
    rng = substream(seed, f"meng-rubin/{m}", rep)
    imps = ImputationSet([table_dataset(t) for t in impute_tables(m, rng)])
    st = moment_estimates(ContingencyDevice(), imps, selection_rule("jack", m), K)
    omi = estimate_omi(st)
    p = np.nan
    if m >= 3 and q0_draws is not None:
        p = eomi_test(omi.mu_hat, omi.sigma2_hat_raw, K, m, null_draws=q0_draws).p_value
    return MengRubinRow(m, rep, float(omi.r_hat[0]), float(omi.r_hat[1]), float(p))


def meng_rubin_demo(ms, reps: int, seed: int, null_N: int = 10_000) -> list[MengRubinRow]:
    rows = []
    for m in ms:
        q0 = sample_Q0(K, m, null_N, seed) if m >= 3 else None
        rows.extend(meng_rubin_run(m, rep, seed, q0) for rep in range(reps))
    return rows
