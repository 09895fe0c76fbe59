"""Seeded, splittable random streams.

Monte Carlo work is cut into fixed-size blocks. Block ``b`` of a draw
tagged ``stream`` always uses the Philox generator keyed by
``(seed, stream, b)``, so the output does not depend on how blocks are
scheduled across threads.
"""

from __future__ import annotations

import os
import zlib
from concurrent.futures import ThreadPoolExecutor
from typing import Callable

import numpy as np

BLOCK_SIZE = 8192
DEFAULT_SEED = 20220101
SEED_ENV_VAR = "STACKED_MI_SEED"


def default_seed() -> int:
    value = os.environ.get(SEED_ENV_VAR)
    return int(value) if value else DEFAULT_SEED


def _tag(stream: str | int) -> int:
    if isinstance(stream, int):
        return stream
    return zlib.crc32(stream.encode())


def substream(seed: int, stream: str | int, index: int = 0) -> np.random.Generator:
    """Independent generator for ``(seed, stream, index)``."""
    ss = np.random.SeedSequence([int(seed) & 0xFFFFFFFFFFFFFFFF, _tag(stream), int(index)])
    return np.random.Generator(np.random.Philox(ss))


def resolve_threads(threads: int | None) -> int:
    if threads is None or threads <= 0:
        return os.cpu_count() or 1
    return threads


def blocked(
    n: int,
    seed: int,
    stream: str | int,
    fill: Callable[[np.random.Generator, int], np.ndarray],
    threads: int | None = 1,
    block_size: int = BLOCK_SIZE,
) -> np.ndarray:
    """Concatenate ``fill(rng_b, size_b)`` over the blocks covering ``n`` draws.

    ``fill`` must return an array whose leading axis has length ``size_b``.
    """
    if n < 1:
        raise ValueError("need at least one draw")
    sizes = [block_size] * (n // block_size)
    if n % block_size:
        sizes.append(n % block_size)

    def run(b: int) -> np.ndarray:
        return fill(substream(seed, stream, b), sizes[b])

    workers = min(resolve_threads(threads), len(sizes))
    if workers == 1:
        parts = [run(b) for b in range(len(sizes))]
    else:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            parts = list(pool.map(run, range(len(sizes))))
    return np.concatenate(parts, axis=0)
