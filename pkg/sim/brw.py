"""Perturbed random walk T_i = S_{i-1} + eta_i and the branching random walk it spawns."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np

from config import BRW_BUDGET, PATH_POINT_CAP, TIE_TOLERANCE
from model.errors import BudgetExceeded, DomainError, PathExplosion
from model.grid import GridFunction
from model.laws import StepLaw, compute_moments
from sim.streams import map_replicates, replicate_rng

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class PrwRealization:
    horizon: float
    S: np.ndarray
    T: np.ndarray
    walk_tail: float

    @property
    def count(self) -> int:
        return int(self.T.size)

    def count_at(self, s: float) -> int:
        """N(s) for s <= horizon on the same path."""
        if s > self.horizon + TIE_TOLERANCE:
            raise DomainError(f"path stored up to {self.horizon:g}, asked for {s:g}")
        return int(np.count_nonzero(self.T <= s + TIE_TOLERANCE))


def sample_prw(law: StepLaw, t: float, rng: np.random.Generator) -> PrwRealization:
    """Points T_i <= t; generation stops at the first index with S_{i-1} > t."""
    if not t >= 0:
        raise DomainError(f"horizon must be >= 0, got {t!r}")
    mu = compute_moments(law).mu
    limit = t + TIE_TOLERANCE
    batch = int(1.25 * t / mu) + 16
    S_parts, T_parts = [], []
    s, total = 0.0, 0
    while True:
        xi, eta = law.sample(rng, batch)
        xi, eta = np.atleast_1d(xi).astype(float), np.atleast_1d(eta).astype(float)
        after = s + np.cumsum(xi)
        before = np.concatenate(([s], after[:-1]))
        alive = before <= limit
        stop = int(np.argmin(alive)) if not alive.all() else batch
        T = before[:stop] + eta[:stop]
        hit = T <= limit
        S_parts.append(before[:stop][hit])
        T_parts.append(T[hit])
        total += stop
        if total > PATH_POINT_CAP:
            raise PathExplosion(f"more than {PATH_POINT_CAP} steps below t={t:g}")
        if stop < batch:
            tail = float(before[stop])
            break
        s = float(after[-1])
    return PrwRealization(float(t), np.concatenate(S_parts), np.concatenate(T_parts), tail)


def _offspring(law: StepLaw, positions: np.ndarray, t: float, rng: np.random.Generator):
    """
    Children of every individual at the given positions, each running its own
    perturbed walk: returns (parent index, child position) for children <= t.
    """
    limit = t + TIE_TOLERANCE
    idx = np.flatnonzero(positions <= limit)
    walk = positions[idx].astype(float)
    parents, children = [], []
    while idx.size:
        xi, eta = law.sample(rng, idx.size)
        child = walk + np.atleast_1d(eta)
        hit = child <= limit
        parents.append(idx[hit])
        children.append(child[hit])
        walk = walk + np.atleast_1d(xi)
        alive = walk <= limit
        idx, walk = idx[alive], walk[alive]
    if not parents:
        return np.empty(0, dtype=np.int64), np.empty(0)
    return np.concatenate(parents), np.concatenate(children)


@dataclass(frozen=True)
class BrwSample:
    """
    N_j(t) with the breakdown over first-generation points:
    breakdown[r] = N^{(r)}_{j-1}(t - T_r), so value = breakdown.sum().
    """

    j: int
    t: float
    value: int
    first_generation: np.ndarray
    breakdown: np.ndarray
    positions: np.ndarray | None = field(default=None, repr=False)

    def count_at(self, s: float) -> int:
        if self.positions is None:
            raise DomainError("positions were not kept for this sample")
        if s > self.t + TIE_TOLERANCE:
            raise DomainError(f"sample stored up to {self.t:g}, asked for {s:g}")
        return int(np.count_nonzero(self.positions <= s + TIE_TOLERANCE))


def simulate_brw(law: StepLaw, j: int, t: float, rng: np.random.Generator,
                 budget: int = BRW_BUDGET, keep_positions: bool = False) -> BrwSample:
    if j < 1:
        raise DomainError(f"level must be >= 1, got {j}")
    prw = sample_prw(law, t, rng)
    first = prw.T
    positions = first
    roots = np.arange(first.size)
    total = first.size
    for _ in range(2, j + 1):
        parents, positions = _offspring(law, positions, t, rng)
        roots = roots[parents]
        total += positions.size
        if total > budget:
            raise BudgetExceeded(f"branching walk passed {budget} individuals (j={j}, t={t:g})")
    breakdown = np.bincount(roots, minlength=first.size).astype(np.int64)
    return BrwSample(j, float(t), int(positions.size), first, breakdown,
                     positions.copy() if keep_positions else None)


def _normalization(j: int, k: int, t: float, mu: float) -> float:
    """floor(j)^{1/2} (k-1)! m^k / t^{k-1/2}."""
    return math.exp(0.5 * math.log(math.floor(j)) + math.lgamma(k) + k * math.log(mu) - (k - 0.5) * math.log(t))


def conditional_mean(first_generation: np.ndarray, t: float, prev: GridFunction) -> float:
    """sum_r V_{k-1}(t - T_r) over first-generation points T_r <= t."""
    if not first_generation.size:
        return 0.0
    return float(np.sum(prev(np.maximum(t - first_generation, 0.0))))


def theorem31_statistic(law: StepLaw, j: int, t: float, u: float, rng: np.random.Generator,
                        levels, budget: int = BRW_BUDGET) -> float:
    """
    floor(j)^{1/2} (k-1)! (N_k(t) - sum_r V_{k-1}(t - T_r)) / (m^{-k} t^{k-1/2}), k = floor(j u).
    """
    k = int(math.floor(j * u))
    if k < 1:
        raise DomainError(f"level floor(j*u) = {k} must be >= 1")
    if k >= len(levels):
        raise DomainError(f"level {k} not built")
    levels[k - 1].require(t)
    sample = simulate_brw(law, k, t, rng, budget)
    mu = compute_moments(law).mu
    diff = sample.value - conditional_mean(sample.first_generation, t, levels[k - 1])
    return _normalization(j, k, t, mu) * diff


def _variance_terms(seed: int, replicate: int, law: StepLaw, j: int, t: float,
                    prev: GridFunction, budget: int) -> tuple[int, float, float]:
    sample = simulate_brw(law, j, t, replicate_rng(seed, replicate), budget)
    T = sample.first_generation
    base = prev(np.maximum(t - T, 0.0)) if T.size else np.empty(0)
    a = sample.breakdown - base
    return sample.value, float(np.sum(base)), float(np.sum(a * a))


@dataclass(frozen=True)
class VarianceCheck:
    """
    lhs: Monte Carlo D_j(t); rhs: grid (D_{j-1} * V)(t) plus Monte Carlo I_j(t).
    z is the standardized mean of the per-replicate lhs - rhs.
    """

    j: int
    t: float
    replicates: int
    lhs: float
    rhs: float
    convolution_mc: float
    convolution_grid: float
    I_mc: float
    D_exact: float
    z: float

    def to_dict(self) -> dict:
        return dict(self.__dict__)


def variance_recursion_check(law: StepLaw, j: int, t: float, seed: int, grids, replicates: int,
                             profile, threads: int = 1, budget: int = BRW_BUDGET) -> VarianceCheck:
    """
    Per replicate d = (N_j - V_j)^2 - (C - V_j)^2 - (D_{j-1} * V)(t),
    C = sum_r V_{j-1}(t - T_r); the recursion says E d = 0.
    profile is a VarianceProfile covering level j and supplies the convolution term.
    """
    if j < 2:
        raise DomainError(f"the recursion needs j >= 2, got {j}")
    if replicates < 2:
        raise DomainError("need at least two replicates")
    if profile is None or profile.j_max < j:
        raise DomainError(f"a variance profile covering level {j} is required")
    cur, prev = grids.level(j), grids.level(j - 1)
    cur.require(t)
    mean = cur(t)
    conv_grid = profile.y2_second_moment(j, t, grids)
    rows = map_replicates(_variance_terms, replicates, seed, threads, (law, j, t, prev, budget))
    arr = np.array(rows, dtype=float)
    N, C, sq = arr[:, 0], arr[:, 1], arr[:, 2]
    left = (N - mean) ** 2
    right_i = (C - mean) ** 2
    d = left - right_i - conv_grid
    sd = float(np.std(d, ddof=1))
    gap = float(np.mean(d))
    if sd > 0.0:
        z = gap / (sd / math.sqrt(replicates))
    else:
        # degenerate laws: every replicate agrees, compare against grid noise only
        z = 0.0 if abs(gap) <= 1e-6 * (1.0 + mean * mean) else math.copysign(math.inf, gap)
    result = VarianceCheck(j, float(t), replicates, float(left.mean()), float(conv_grid + right_i.mean()),
                           float(sq.mean()), conv_grid, float(right_i.mean()), profile.D_at(j, t), float(z))
    logger.info("variance recursion j=%d t=%g: lhs=%.6g rhs=%.6g z=%.3f", j, t, result.lhs, result.rhs, z)
    return result
