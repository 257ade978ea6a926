"""
Nested balls-in-boxes cascade driven by stick-breaking weights.

A box at depth d with log position x = -log P holds b balls. Its children are
produced stick by stick: child r sits at x + xi_1 + ... + xi_{r-1} + eta_r and,
given that a ball missed children 1..r-1, receives it with probability 1 - W_r.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np

from config import MAX_ROUNDS_PER_BOX, TIE_TOLERANCE
from model.errors import CascadeStall, DomainError
from model.grid import GridFunction
from model.laws import StepLaw, WeightLaw, compute_moments
from sim.streams import BALLS, WEIGHTS, map_replicates, replicate_rng

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class SchemeConfig:
    n: int
    j_max: int
    law: WeightLaw
    seed: int = 0

    def __post_init__(self):
        if int(self.n) != self.n or self.n < 1:
            raise DomainError(f"ball count must be a positive integer, got {self.n!r}")
        if int(self.j_max) != self.j_max or self.j_max < 1:
            raise DomainError(f"j_max must be a positive integer, got {self.j_max!r}")
        object.__setattr__(self, "n", int(self.n))
        object.__setattr__(self, "j_max", int(self.j_max))


@dataclass(frozen=True)
class OccupancyProfile:
    n: int
    counts: tuple[int, ...]
    height: int | None

    @property
    def j_max(self) -> int:
        return len(self.counts)

    @property
    def exceeds_j_max(self) -> bool:
        return self.height is None

    def K(self, j: int) -> int:
        if not 1 <= j <= self.j_max:
            raise DomainError(f"level {j} outside 1..{self.j_max}")
        return self.counts[j - 1]


@dataclass(frozen=True)
class RhoProfile:
    """rho_j(t) = number of depth-j boxes with weight >= 1/t; first_level holds their positions at depth 1."""

    t: float
    counts: tuple[int, ...]
    first_level: np.ndarray = field(default_factory=lambda: np.empty(0))

    @property
    def log_t(self) -> float:
        return math.log(self.t)

    def rho(self, j: int) -> int:
        if not 1 <= j <= len(self.counts):
            raise DomainError(f"level {j} outside 1..{len(self.counts)}")
        return self.counts[j - 1]


@dataclass(frozen=True)
class CascadeResult:
    profile: OccupancyProfile | None
    rho: RhoProfile | None
    first_level: np.ndarray = field(default_factory=lambda: np.empty(0))
    level_balls: tuple[int, ...] = ()
    boxes: int = 0


def _batch_size(balls: int, span: float, mu: float) -> int:
    expected = max(math.log(balls + 1.0), span, 0.0) / mu
    return int(min(4096, max(8, 1.25 * expected + 4)))


def _split(balls: int, x: float, limit: float | None, law: WeightLaw, mu: float,
           w_rng: np.random.Generator, b_rng: np.random.Generator | None):
    """
    Sticks of one box at position x, drawn until its balls are placed and, when a
    limit is given, until the residual position x + xi_1 + ... + xi_r exceeds it.
    Returns (W, ball counts, child positions) per stick.
    Each batch places the remaining balls with one multinomial draw over
    p_r = W_1...W_{r-1}(1 - W_r) plus the leftover mass; the conditional binomials
    inside it are Binomial(remaining, 1 - W_r).
    """
    ws, ks, ps = [], [], []
    rem, resid, used = balls, x, 0
    while rem > 0 or (limit is not None and resid <= limit):
        if used >= MAX_ROUNDS_PER_BOX:
            raise CascadeStall(f"box with {balls} balls still open after {used} sticks")
        span = (limit - resid) if limit is not None else 0.0
        size = _batch_size(rem, span, mu)
        w = np.atleast_1d(law.sample(w_rng, size)).astype(float)
        xi = -np.log(w)
        eta = -np.log1p(-w)
        after = resid + np.cumsum(xi)
        before = np.concatenate(([resid], after[:-1]))
        if rem > 0:
            survive = np.exp(resid - before)
            pvals = np.append(survive * (1.0 - w), math.exp(resid - after[-1]))
            counts = b_rng.multinomial(rem, pvals)
            k, rem_after = counts[:-1], int(counts[-1])
        else:
            k, rem_after = np.zeros(size, dtype=np.int64), 0
        rem_before = rem - np.concatenate(([0], np.cumsum(k)[:-1]))
        need = rem_before > 0
        if limit is not None:
            need |= before <= limit
        keep = size if need.all() else int(np.argmin(need))
        ws.append(w[:keep])
        ks.append(k[:keep])
        ps.append(before[:keep] + eta[:keep])
        rem, resid, used = rem_after, float(after[-1]), used + size
        if keep < size:
            break
    if not ws:
        return np.empty(0), np.empty(0, dtype=np.int64), np.empty(0)
    return np.concatenate(ws), np.concatenate(ks).astype(np.int64), np.concatenate(ps)


def _mu(law: WeightLaw) -> float:
    return compute_moments(StepLaw.derived(law)).mu


def allocate_box(m: int, law: WeightLaw, rng: np.random.Generator) -> list[tuple[int, int, float]]:
    """(child index, ball count, W_r) for every child receiving at least one of m balls."""
    if m < 1:
        raise DomainError(f"a box needs at least one ball, got {m}")
    w, k, _ = _split(int(m), 0.0, None, law, _mu(law), rng, rng)
    return [(int(r) + 1, int(k[r]), float(w[r])) for r in np.flatnonzero(k)]


def _cascade(n: int, law: WeightLaw, j_max: int, w_rng, b_rng, log_t: float | None,
             track_balls: bool) -> CascadeResult:
    """
    Depth-first cascade with an explicit stack.
    - track_balls: K_n(j); a box holding one ball adds one occupied box at every
      deeper level and is not expanded for balls
    - log_t: rho_j(e^log_t); boxes with position <= log_t are expanded regardless of balls
    """
    mu = _mu(law)
    limit = None if log_t is None else log_t + TIE_TOLERANCE
    multi = np.zeros(j_max + 1, dtype=np.int64)
    multi_balls = np.zeros(j_max + 1, dtype=np.int64)
    single_new = np.zeros(j_max + 2, dtype=np.int64)
    rho = np.zeros(j_max + 1, dtype=np.int64)
    first_level = np.empty(0)
    boxes = 0

    root_balls = n if track_balls else 0
    if track_balls and n == 1:
        single_new[1] += 1
        root_balls = 0
    stack = [(0, 0.0, root_balls)] if (root_balls > 0 or limit is not None) else []
    while stack:
        depth, x, b = stack.pop()
        box_limit = limit if (limit is not None and x <= limit) else None
        if b == 0 and box_limit is None:
            continue
        _, k, pos = _split(b, x, box_limit, law, mu, w_rng, b_rng)
        boxes += 1
        d = depth + 1
        if depth == 0 and limit is not None:
            first_level = pos[pos <= limit].copy()
        if track_balls:
            single_new[d] += int(np.count_nonzero(k == 1))
            heavy = k >= 2
            multi[d] += int(np.count_nonzero(heavy))
            multi_balls[d] += int(k[heavy].sum())
        if box_limit is not None:
            rho[d] += int(np.count_nonzero(pos <= limit))
        if d >= j_max:
            continue
        expand = k >= 2
        if limit is not None:
            expand |= pos <= limit
        for r in np.flatnonzero(expand)[::-1]:
            stack.append((d, float(pos[r]), int(k[r]) if k[r] >= 2 else 0))

    profile = None
    level_balls: tuple[int, ...] = ()
    if track_balls:
        singles = np.cumsum(single_new)[: j_max + 1]
        K = (multi + singles)[1:]
        level_balls = tuple(int(v) for v in (multi_balls + singles)[1:])
        height = None
        if n >= 2:
            hit = np.flatnonzero(K == n)
            height = int(hit[0]) + 1 if hit.size else None
        profile = OccupancyProfile(n, tuple(int(v) for v in K), height)
    rho_profile = None
    if log_t is not None:
        rho_profile = RhoProfile(math.exp(log_t), tuple(int(v) for v in rho[1:]), first_level)
    return CascadeResult(profile, rho_profile, first_level, level_balls, boxes)


def _streams(cfg: SchemeConfig, replicate: int):
    return replicate_rng(cfg.seed, replicate, WEIGHTS), replicate_rng(cfg.seed, replicate, BALLS)


def simulate_occupancy(cfg: SchemeConfig, replicate: int = 0) -> OccupancyProfile:
    w_rng, b_rng = _streams(cfg, replicate)
    return _cascade(cfg.n, cfg.law, cfg.j_max, w_rng, b_rng, None, True).profile


def count_rho(cfg: SchemeConfig, t: float, replicate: int = 0) -> RhoProfile:
    """Exact rho_j(t), j <= j_max, from the weights stream alone."""
    if not t >= 1:
        raise DomainError(f"threshold must be >= 1, got {t!r}")
    w_rng, _ = _streams(cfg, replicate)
    return _cascade(cfg.n, cfg.law, cfg.j_max, w_rng, None, math.log(t), False).rho


def simulate_coupled(cfg: SchemeConfig, t: float | None = None, replicate: int = 0) -> CascadeResult:
    """K_n(j) and rho_j(t) (default t = n) from one realized tree."""
    t = float(cfg.n) if t is None else float(t)
    if not t >= 1:
        raise DomainError(f"threshold must be >= 1, got {t!r}")
    w_rng, b_rng = _streams(cfg, replicate)
    return _cascade(cfg.n, cfg.law, cfg.j_max, w_rng, b_rng, math.log(t), True)


@dataclass(frozen=True)
class Decomposition:
    K: int
    rho: int
    conditional_mean: float
    centering: float

    @property
    def Y1(self) -> float:
        return float(self.K - self.rho)

    @property
    def Y2(self) -> float:
        return self.rho - self.conditional_mean

    @property
    def Y3(self) -> float:
        return self.conditional_mean - self.centering

    def as_tuple(self) -> tuple[float, float, float]:
        return self.Y1, self.Y2, self.Y3


def decompose_result(result: CascadeResult, j: int, levels: tuple[GridFunction, ...] | list) -> Decomposition:
    """
    K_n(j) - V_j(log n) = Y1 + Y2 + Y3 with
    Y1 = K_n(j) - rho_j(n), Y2 = rho_j(n) - sum_r V_{j-1}(log n - T_r), Y3 = that sum - V_j(log n).
    """
    if result.profile is None or result.rho is None:
        raise DomainError("decomposition needs a coupled cascade")
    log_n = result.rho.log_t
    prev, cur = levels[j - 1], levels[j]
    cur.require(log_n)
    T = result.first_level
    conditional_mean = float(np.sum(prev(np.maximum(log_n - T, 0.0)))) if T.size else 0.0
    return Decomposition(result.profile.K(j), result.rho.rho(j), conditional_mean, float(cur(log_n)))


def decompose_Y(cfg: SchemeConfig, j: int, levels, replicate: int = 0) -> tuple[float, float, float]:
    if not 1 <= j <= cfg.j_max:
        raise DomainError(f"level {j} outside 1..{cfg.j_max}")
    levels[j].require(math.log(cfg.n))
    return decompose_result(simulate_coupled(cfg, replicate=replicate), j, levels).as_tuple()


def pair_collision_probability(law: WeightLaw) -> float:
    """P(two balls share a first-level box) = E(1 - W)^2 / (1 - E W^2)."""
    return law.mean_complement_power(2.0) / (1.0 - law.mean_power(2.0))


def _height_one(seed: int, replicate: int, n: int, j_max: int, law: WeightLaw) -> int | None:
    return simulate_occupancy(SchemeConfig(n, j_max, law, seed), replicate).height


@dataclass(frozen=True)
class HeightSample:
    n: int
    j_max: int
    heights: tuple[int | None, ...]

    @property
    def reached(self) -> np.ndarray:
        return np.array([h for h in self.heights if h is not None], dtype=float)

    def summary(self) -> dict:
        h = self.reached
        out = {"n": self.n, "j_max": self.j_max, "replicates": len(self.heights),
               "exceeded": len(self.heights) - int(h.size)}
        if h.size:
            out["mean_height"] = float(h.mean())
            if self.n >= 2:
                out["mean_height_over_log_n"] = float(h.mean() / math.log(self.n))
        return out


def sample_heights(law: WeightLaw, n: int, replicates: int, seed: int, j_max: int = 10_000,
                   threads: int = 1) -> HeightSample:
    heights = map_replicates(_height_one, replicates, seed, threads, (n, j_max, law))
    logger.info("heights for n=%d: %d replicates", n, replicates)
    return HeightSample(n, j_max, tuple(heights))
