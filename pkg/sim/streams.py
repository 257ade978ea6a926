"""Per-replicate random streams and the replicate pool."""

from __future__ import annotations

import logging
from concurrent.futures import ProcessPoolExecutor
from typing import Any, Callable, Sequence

import numpy as np

from model.errors import DomainError

logger = logging.getLogger(__name__)

# sub-stream keys inside one replicate
WEIGHTS = 0
BALLS = 1


def replicate_seed(seed: int, replicate: int, *sub: int) -> np.random.SeedSequence:
    """SeedSequence(entropy=seed, spawn_key=(replicate, *sub))."""
    if replicate < 0 or any(k < 0 for k in sub):
        raise DomainError("replicate and sub-stream indices must be nonnegative")
    return np.random.SeedSequence(entropy=int(seed), spawn_key=(int(replicate), *map(int, sub)))


def replicate_rng(seed: int, replicate: int, *sub: int) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(replicate_seed(seed, replicate, *sub)))


def derive_seed(seed: int, *key: int) -> int:
    """A 63-bit master seed for a sub-experiment (one point of a sweep)."""
    state = np.random.SeedSequence(entropy=int(seed), spawn_key=tuple(int(k) for k in key)).generate_state(2)
    return (int(state[0]) << 32 | int(state[1])) >> 1


def _run_chunk(fn: Callable, seed: int, start: int, stop: int, args: tuple) -> list:
    return [fn(seed, i, *args) for i in range(start, stop)]


def chunk_bounds(replicates: int, chunks: int) -> list[tuple[int, int]]:
    chunks = max(1, min(chunks, replicates))
    edges = np.linspace(0, replicates, chunks + 1).astype(int)
    return [(int(a), int(b)) for a, b in zip(edges[:-1], edges[1:]) if b > a]


def map_replicates(fn: Callable[..., Any], replicates: int, seed: int, threads: int = 1,
                   args: Sequence = ()) -> list:
    """
    [fn(seed, i, *args) for i in range(replicates)], in replicate order.
    fn derives its own streams from (seed, i), so results do not depend on threads.
    With threads > 1, fn and args must be picklable (module-level functions).
    """
    if replicates < 0:
        raise DomainError(f"replicate count must be >= 0, got {replicates}")
    if replicates == 0:
        return []
    args = tuple(args)
    if threads <= 1 or replicates == 1:
        return _run_chunk(fn, seed, 0, replicates, args)
    bounds = chunk_bounds(replicates, 4 * threads)
    logger.debug("running %d replicates in %d chunks on %d workers", replicates, len(bounds), threads)
    out: list = []
    with ProcessPoolExecutor(max_workers=threads) as pool:
        futures = [pool.submit(_run_chunk, fn, seed, a, b, args) for a, b in bounds]
        for fut in futures:
            out.extend(fut.result())
    return out
