"""Stacking of imputed datasets and stacked multiple-imputation statistics.

Index multisets are plain tuples of 1-based imputation indices. They are
canonicalised (sorted, multiplicity kept) before being used as cache keys.
"""

from __future__ import annotations

import threading
from collections import Counter
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from itertools import combinations
from typing import Callable, Iterable, Mapping, Protocol, Sequence, runtime_checkable

import numpy as np

from stacked_mi.rng import resolve_threads

Multiset = tuple[int, ...]
Pair = tuple[Multiset, Multiset]

RULE_KINDS = ("jack", "full", "pair")


class DeviceError(RuntimeError):
    """A testing device failed on a stacked dataset."""

    def __init__(self, message: str, multiset: Multiset | None = None):
        super().__init__(message)
        self.multiset = multiset


@dataclass(frozen=True)
class Dataset:
    values: np.ndarray
    column_names: tuple[str, ...]

    def __post_init__(self):
        values = np.asarray(self.values, dtype=float)
        if values.ndim != 2 or values.shape[0] < 1 or values.shape[1] < 1:
            raise ValueError(f"dataset must be a non-empty 2-D matrix, got shape {values.shape}")
        if not np.all(np.isfinite(values)):
            raise ValueError("dataset contains non-finite entries")
        names = tuple(str(c) for c in self.column_names)
        if len(names) != values.shape[1]:
            raise ValueError(f"{len(names)} column names for {values.shape[1]} columns")
        values.setflags(write=False)
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "column_names", names)

    @property
    def n(self) -> int:
        return self.values.shape[0]

    @property
    def p(self) -> int:
        return self.values.shape[1]

    def column(self, name: str) -> np.ndarray:
        try:
            return self.values[:, self.column_names.index(name)]
        except ValueError:
            raise KeyError(f"no column {name!r}; have {list(self.column_names)}") from None


class ImputationSet:
    """The ``m`` completed datasets, held as one ``(m, n, p)`` array."""

    def __init__(self, datasets: Sequence[Dataset]):
        datasets = list(datasets)
        if len(datasets) < 2:
            raise ValueError("an imputation set needs m >= 2 datasets")
        first = datasets[0]
        for i, ds in enumerate(datasets[1:], start=2):
            if ds.values.shape != first.values.shape:
                raise ValueError(f"imputation {i} has shape {ds.values.shape}, expected {first.values.shape}")
            if ds.column_names != first.column_names:
                raise ValueError(f"imputation {i} has different column names")
        self.datasets = tuple(datasets)
        self.column_names = first.column_names
        self._cube = np.stack([ds.values for ds in datasets])
        self._cube.setflags(write=False)

    @classmethod
    def from_array(cls, cube: np.ndarray, column_names: Sequence[str] | None = None) -> "ImputationSet":
        cube = np.asarray(cube, dtype=float)
        if cube.ndim != 3:
            raise ValueError("expected an (m, n, p) array")
        names = column_names or [f"x{j + 1}" for j in range(cube.shape[2])]
        return cls([Dataset(c, names) for c in cube])

    @property
    def m(self) -> int:
        return len(self.datasets)

    @property
    def n(self) -> int:
        return self._cube.shape[1]

    @property
    def p(self) -> int:
        return self._cube.shape[2]

    def __len__(self) -> int:
        return self.m

    def __getitem__(self, index: int) -> Dataset:
        # 1-based, matching the multiset convention
        return self.datasets[index - 1]


@runtime_checkable
class TestDevice(Protocol):
    """Complete-data testing device: dataset -> nonnegative statistic."""

    k: int

    def evaluate(self, data: Dataset) -> float: ...


@dataclass(frozen=True)
class FunctionDevice:
    """Wrap a plain ``Dataset -> float`` callable as a device."""

    func: Callable[[Dataset], float]
    k: int

    def evaluate(self, data: Dataset) -> float:
        return float(self.func(data))


def canonical(indices: Iterable[int], m: int | None = None) -> Multiset:
    ms = tuple(sorted(int(i) for i in indices))
    if not ms:
        raise ValueError("index multiset must be non-empty")
    if m is not None and (ms[0] < 1 or ms[-1] > m):
        raise IndexError(f"index multiset {ms} out of range 1..{m}")
    return ms


def multiset_sum(a: Multiset, b: Multiset) -> Multiset:
    return tuple(sorted(a + b))


def overlap(a: Multiset, b: Multiset) -> int:
    """Multiset intersection size."""
    return sum((Counter(a) & Counter(b)).values())


def stack(imps: ImputationSet, indices: Iterable[int]) -> Dataset:
    """Row-stack ``X^l`` for each ``l`` in the multiset, in ascending order."""
    ms = canonical(indices, imps.m)
    rows = imps._cube[np.asarray(ms) - 1].reshape(-1, imps.p)
    return Dataset(rows, imps.column_names)


@dataclass(frozen=True)
class SelectionRule:
    kind: str
    m: int
    pairs: tuple[Pair, ...]

    def __post_init__(self):
        for s1, s2 in self.pairs:
            if s1 == s2:
                raise ValueError(f"pair with identical sets {s1}")
            canonical(s1, self.m)
            canonical(s2, self.m)

    def __len__(self) -> int:
        return len(self.pairs)

    def required_sets(self) -> list[Multiset]:
        """Every multiset whose statistic the rule needs, full stack included."""
        seen: dict[Multiset, None] = {}
        for s1, s2 in self.pairs:
            for s in (s1, s2, multiset_sum(s1, s2)):
                seen.setdefault(s, None)
        seen.setdefault(tuple(range(1, self.m + 1)), None)
        return list(seen)


def selection_rule(kind: str, m: int) -> SelectionRule:
    if m < 2:
        raise ValueError("selection rules need m >= 2")
    full = tuple(range(1, m + 1))
    if kind == "jack":
        pairs = tuple(((l,), tuple(j for j in full if j != l)) for l in full)
    elif kind == "full":
        pairs = tuple(((l,), full) for l in full)
    elif kind == "pair":
        pairs = tuple(((a,), (b,)) for a, b in combinations(full, 2))
    else:
        raise ValueError(f"unknown selection rule {kind!r}; expected one of {RULE_KINDS}")
    return SelectionRule(kind, m, pairs)


def smi_contrast(s1: Multiset, s2: Multiset, d1, d2, d12):
    """SMI contrast of stacked statistics; ``d*`` may be floats or arrays."""
    n1, n2 = len(s1), len(s2)
    denom = n1 + n2 - 2 * overlap(s1, s2)
    if denom == 0:
        raise ValueError("S1 and S2 must differ")
    coef = (n1 + n2) / denom
    return coef * (n1 * d1 + n2 * d2 - (n1 + n2) * d12)


def pair_statistics(rule: SelectionRule, d_by_set: Mapping[Multiset, object]) -> np.ndarray:
    """SMI statistic per pair of ``rule``, stacked along axis 0."""
    out = []
    for s1, s2 in rule.pairs:
        d12 = d_by_set[multiset_sum(s1, s2)]
        out.append(smi_contrast(s1, s2, d_by_set[s1], d_by_set[s2], d12))
    return np.asarray(out, dtype=float)


def sample_moments(T: np.ndarray, k: int) -> np.ndarray:
    """Sample moments ``mean(T**tau)`` for ``tau = 1..k`` along axis 0."""
    if k < 1:
        raise ValueError("k must be >= 1")
    return np.stack([np.mean(T**tau, axis=0) for tau in range(1, k + 1)])


@dataclass(frozen=True)
class SmiStatistics:
    d_by_set: dict[Multiset, float]
    T: np.ndarray
    t_hat: np.ndarray
    d_full: float
    rule: SelectionRule
    k: int

    @property
    def T_by_pair(self) -> dict[Pair, float]:
        return dict(zip(self.rule.pairs, self.T.tolist()))

    @classmethod
    def from_d_values(cls, d_by_set: Mapping[Multiset, float], rule: SelectionRule, k: int) -> "SmiStatistics":
        d = {canonical(s): float(v) for s, v in d_by_set.items()}
        T = pair_statistics(rule, d)
        # at least two moments: the variance summary needs t_hat[1] even when k == 1
        return cls(
            d_by_set=d,
            T=T,
            t_hat=sample_moments(T, max(k, 2)),
            d_full=d[tuple(range(1, rule.m + 1))],
            rule=rule,
            k=k,
        )


class StackEvaluator:
    """Evaluates ``d_hat^S = device(X^S) / |S|`` with a per-instance memo."""

    def __init__(self, device: TestDevice, imps: ImputationSet, threads: int | None = 1, cache: bool = True):
        self.device = device
        self.imps = imps
        self.threads = threads
        self.use_cache = cache
        self._cache: dict[Multiset, float] = {}
        self._lock = threading.Lock()
        self.calls = 0

    def _evaluate(self, ms: Multiset) -> float:
        data = stack(self.imps, ms)
        try:
            value = float(self.device.evaluate(data))
        except DeviceError as exc:
            raise DeviceError(f"device failed on S={ms}: {exc}", ms) from exc
        except (ArithmeticError, ValueError, np.linalg.LinAlgError) as exc:
            raise DeviceError(f"device failed on S={ms}: {exc}", ms) from exc
        if not np.isfinite(value):
            raise DeviceError(f"device returned non-finite value {value} on S={ms}", ms)
        with self._lock:
            self.calls += 1
        return value / len(ms)

    def d_hat(self, indices: Iterable[int]) -> float:
        ms = canonical(indices, self.imps.m)
        if not self.use_cache:
            return self._evaluate(ms)
        with self._lock:
            if ms in self._cache:
                return self._cache[ms]
        value = self._evaluate(ms)
        with self._lock:
            self._cache.setdefault(ms, value)
            return self._cache[ms]

    def d_many(self, sets: Sequence[Multiset]) -> dict[Multiset, float]:
        workers = min(resolve_threads(self.threads), max(len(sets), 1))
        if workers == 1:
            values = [self.d_hat(s) for s in sets]
        else:
            with ThreadPoolExecutor(max_workers=workers) as pool:
                values = list(pool.map(self.d_hat, sets))
        return {canonical(s): v for s, v in zip(sets, values)}


def device_stat(device: TestDevice, imps: ImputationSet, indices: Iterable[int]) -> float:
    return StackEvaluator(device, imps).d_hat(indices)


def smi_statistic(device: TestDevice, imps: ImputationSet, s1: Iterable[int], s2: Iterable[int],
                  evaluator: StackEvaluator | None = None) -> float:
    ev = evaluator or StackEvaluator(device, imps)
    a, b = canonical(s1, imps.m), canonical(s2, imps.m)
    if a == b:
        raise ValueError("S1 and S2 must differ")
    return float(smi_contrast(a, b, ev.d_hat(a), ev.d_hat(b), ev.d_hat(multiset_sum(a, b))))


def moment_estimates(device: TestDevice, imps: ImputationSet, rule: SelectionRule, k: int,
                     threads: int | None = 1, evaluator: StackEvaluator | None = None) -> SmiStatistics:
    if k < 1:
        raise ValueError("k must be >= 1")
    if rule.m != imps.m:
        raise ValueError(f"rule built for m={rule.m}, imputation set has m={imps.m}")
    ev = evaluator or StackEvaluator(device, imps, threads=threads)
    d = ev.d_many(rule.required_sets())
    return SmiStatistics.from_d_values(d, rule, k)
