"""Seeded Monte Carlo plumbing shared by the stochastic modules."""

from __future__ import annotations

import hashlib
from concurrent.futures import ThreadPoolExecutor
from typing import Callable, Sequence, TypeVar

import numpy as np

T = TypeVar("T")

_THREADS = 1


def set_threads(n: int) -> None:
    global _THREADS
    _THREADS = max(1, int(n))


def as_generator(rng) -> np.random.Generator:
    if isinstance(rng, np.random.Generator):
        return rng
    return np.random.default_rng(rng)


def task_seed(master_seed: int, kind: str, index: int = 0) -> np.random.SeedSequence:
    """Counter-based seed: a function of (master seed, task kind, index) only."""
    digest = hashlib.sha256(kind.encode()).digest()
    kind_code = int.from_bytes(digest[:8], "little")
    return np.random.SeedSequence([int(master_seed), kind_code, int(index)])


def map_draws(fn: Callable[[np.random.Generator], T], n: int, rng) -> list[T]:
    """Apply ``fn`` to ``n`` independent child generators of ``rng``.

    Children are spawned up front, so results do not depend on worker count.
    """
    children = as_generator(rng).spawn(n)
    if _THREADS == 1 or n < 2:
        return [fn(c) for c in children]
    with ThreadPoolExecutor(max_workers=_THREADS) as pool:
        return list(pool.map(fn, children))


def mean_se(values: Sequence[float]) -> tuple[float, float]:
    arr = np.asarray(values, dtype=float)
    if arr.size < 2 or np.all(arr == arr[0]):
        return float(arr[0]), 0.0
    return float(arr.mean()), float(arr.std(ddof=1) / np.sqrt(arr.size))
