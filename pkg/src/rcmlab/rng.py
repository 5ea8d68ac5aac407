"""Counter-based randomness and replica streams.

Environment values are a pure function of ``(seed, canonical edge index)``
through a SplitMix64 hash, so sampling needs no shared state. Monte Carlo
replicas draw from Philox streams keyed on ``(master_seed, *keys)``; work is
cut into fixed-size chunks so results never depend on the thread count.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from typing import Callable, Sequence, TypeVar

import numpy as np

T = TypeVar("T")

_GOLDEN = np.uint64(0x9E3779B97F4A7C15)
_M1 = np.uint64(0xBF58476D1CE4E5B9)
_M2 = np.uint64(0x94D049BB133111EB)
_MASK64 = (1 << 64) - 1

# replicas per RNG stream; fixed so that output is independent of --threads
CHUNK = 4096


def splitmix64(x: np.ndarray) -> np.ndarray:
    z = np.asarray(x, dtype=np.uint64) + _GOLDEN
    z = (z ^ (z >> np.uint64(30))) * _M1
    z = (z ^ (z >> np.uint64(27))) * _M2
    return z ^ (z >> np.uint64(31))


def counter_uniform(seed: int, counters: np.ndarray) -> np.ndarray:
    """Uniforms in (0, 1] keyed on ``(seed, counter)``."""
    key = splitmix64(np.array([seed & _MASK64], dtype=np.uint64))[0]
    with np.errstate(over="ignore"):
        z = splitmix64(splitmix64(np.asarray(counters, dtype=np.uint64) ^ key))
    return ((z >> np.uint64(11)).astype(np.float64) + 1.0) * 2.0**-53


def stream(master_seed: int, *keys: int) -> np.random.Generator:
    """Independent generator for replica ``keys`` under ``master_seed``."""
    entropy = [int(master_seed) & _MASK64, *(int(k) & _MASK64 for k in keys)]
    return np.random.Generator(np.random.Philox(np.random.SeedSequence(entropy)))


def chunk_sizes(total: int, chunk: int = CHUNK) -> list[int]:
    full, rest = divmod(int(total), chunk)
    return [chunk] * full + ([rest] if rest else [])


def map_chunks(fn: Callable[[int, int], T], total: int, threads: int = 1,
               chunk: int = CHUNK) -> list[T]:
    """Apply ``fn(chunk_index, size)`` over fixed chunks, results in chunk order."""
    sizes = chunk_sizes(total, chunk)
    if threads <= 1 or len(sizes) <= 1:
        return [fn(i, s) for i, s in enumerate(sizes)]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(fn, range(len(sizes)), sizes))


def spawn_seeds(master_seed: int, count: int, *keys: int) -> Sequence[int]:
    """Derive ``count`` 64-bit seeds (e.g. for a batch of environments)."""
    g = stream(master_seed, *keys)
    return [int(s) for s in g.integers(0, 2**63 - 1, size=count, dtype=np.int64)]
