from __future__ import annotations

import logging
import math
from dataclasses import dataclass

import numpy as np
from scipy import signal

from config import (
    COMMENSURABLE_TOL,
    OVERFLOW_LIMIT,
    SERIES_MASS_CUTOFF,
    SERIES_MAX_TERMS,
)
from model.errors import BudgetExceeded, DomainError, NonCommensurableGrid, OverflowRisk
from model.grid import GridFunction
from model.laws import MomentSet, StepLaw, compute_moments

logger = logging.getLogger(__name__)


def grid_size(h: float, t_max: float) -> int:
    if not (h > 0 and t_max > 0):
        raise DomainError(f"grid needs h > 0 and t_max > 0, got h={h!r}, t_max={t_max!r}")
    return int(round(t_max / h)) + 1


def _convolve(a: np.ndarray, b: np.ndarray, n: int) -> np.ndarray:
    """First n coefficients of the discrete convolution a * b."""
    out = np.zeros(n)
    a, b = a[:n], b[:n]
    nz_a, nz_b = np.flatnonzero(a), np.flatnonzero(b)
    if not nz_a.size or not nz_b.size:
        return out
    full = signal.convolve(a[: nz_a[-1] + 1], b[: nz_b[-1] + 1], method="auto")
    m = min(n, len(full))
    out[:m] = full[:m]
    return out


def stieltjes_sum(f: np.ndarray, K: GridFunction, f_atomic: bool = False) -> np.ndarray:
    """
    Values of t -> ∫_[0,t] f(t - y) dK(y) at the grid nodes.
    - K or f atomic: exact node sum, f(t_k - t_i) * dK_i
    - both spread: cell masses of K see f at the cell midpoint, (f_{k-i} + f_{k-i+1}) / 2
    The atom of K at 0 always sees f(t_k).
    """
    f = np.asarray(f, dtype=float)
    n = K.size
    dk = K.increments()
    if K.atomic or f_atomic:
        return _convolve(f, dk, n)
    out = f * dk[0]
    mid = 0.5 * (f[:-1] + f[1:])
    out[1:] += _convolve(mid, dk[1:], n - 1)
    return out


def convolve_stieltjes(F: GridFunction, K: GridFunction, name: str = "") -> GridFunction:
    F.check_compatible(K)
    vals = stieltjes_sum(F.values, K, F.atomic)
    # FFT round-off can leave tiny negative steps
    vals = np.maximum.accumulate(np.maximum(vals, 0.0))
    return GridFunction(F.step, vals, atomic=F.atomic and K.atomic, name=name, method="stieltjes")


def _lattice_indices(values: np.ndarray, h: float) -> np.ndarray:
    ratio = values / h
    idx = np.rint(ratio)
    bad = np.abs(ratio - idx) > COMMENSURABLE_TOL * np.maximum(1.0, ratio)
    if np.any(bad):
        raise NonCommensurableGrid(
            f"lattice point {values[bad][0]:g} is not a multiple of the grid step h={h:g}"
        )
    return idx.astype(np.int64)


def distribution_grid(cdf, atoms, h: float, t_max: float, name: str = "") -> GridFunction:
    """Distribution function on the grid; lattice laws put their atoms on nodes."""
    size = grid_size(h, t_max)
    if atoms is not None:
        values, probs = atoms
        idx = _lattice_indices(np.asarray(values, dtype=float), h)
        keep = idx < size
        mass = np.bincount(idx[keep], weights=probs[keep], minlength=size)
        return GridFunction(h, np.minimum(np.cumsum(mass), 1.0), atomic=True, name=name, method="atoms")
    nodes = h * np.arange(size)
    return GridFunction(h, np.asarray(cdf(nodes), dtype=float), atomic=False, name=name, method="cdf")


def build_xi_distribution(law: StepLaw, h: float, t_max: float) -> GridFunction:
    return distribution_grid(law.xi_cdf, law.xi_atoms(), h, t_max, name="F")


def build_G(law: StepLaw, h: float, t_max: float) -> GridFunction:
    return distribution_grid(law.eta_cdf, law.eta_atoms(), h, t_max, name="G")


def build_U(law: StepLaw, h: float, t_max: float, method: str = "auto") -> GridFunction:
    """
    Renewal function U(t) = sum_{i>=0} P{S_i <= t}.
    - "closed": 1 + rate * t, only for exponential xi
    - "series": sum of convolution powers of the xi distribution until the next
      term puts less than SERIES_MASS_CUTOFF mass on [0, t_max]
    - "auto": closed form when available
    """
    rate = law.xi_exponential_rate
    size = grid_size(h, t_max)
    if method == "closed" or (method == "auto" and rate is not None):
        if rate is None:
            raise DomainError(f"no closed-form renewal function for {law.label}")
        nodes = h * np.arange(size)
        return GridFunction(h, 1.0 + rate * nodes, atomic=False, name="U", method="closed-form")
    if method not in ("auto", "series"):
        raise DomainError(f"unknown renewal method {method!r}")

    F = build_xi_distribution(law, h, t_max)
    term = GridFunction.constant(1.0, h, size)
    total = term.values.copy()
    for i in range(1, SERIES_MAX_TERMS + 1):
        term = convolve_stieltjes(term, F)
        total += term.values
        if term.values[-1] < SERIES_MASS_CUTOFF:
            logger.debug("U series for %s stopped after %d terms", law.label, i)
            break
    else:
        raise BudgetExceeded(f"renewal series did not settle within {SERIES_MAX_TERMS} terms")
    return GridFunction(h, total, atomic=F.atomic, name="U", method=f"series({i})")


def build_V(U: GridFunction, G: GridFunction) -> GridFunction:
    """V(t) = ∫_[0,t] U(t - y) dG(y), the mean of N(t)."""
    return convolve_stieltjes(U, G, name="V")


def guard_overflow(t_max: float, j: int) -> None:
    if t_max > 0 and j * math.log(t_max) - math.lgamma(j + 1) > math.log(OVERFLOW_LIMIT):
        raise OverflowRisk(f"t_max^j/j! exceeds {OVERFLOW_LIMIT:g} for j={j}, t_max={t_max:g}")


def build_Vj(V: GridFunction, j: int) -> GridFunction:
    if j < 1:
        raise DomainError(f"level must be >= 1, got {j}")
    guard_overflow(V.t_max, j)
    out = V
    for k in range(2, j + 1):
        out = convolve_stieltjes(out, V, name=f"V{k}")
    return out


def build_levels(V: GridFunction, j_max: int) -> tuple[GridFunction, ...]:
    """(V_0, V_1, ..., V_jmax) with the convention V_0 = 1 on [0, inf)."""
    guard_overflow(V.t_max, j_max)
    levels = [GridFunction.constant(1.0, V.step, V.size, name="V0"), V]
    for k in range(2, j_max + 1):
        levels.append(convolve_stieltjes(levels[-1], V, name=f"V{k}"))
    return tuple(levels)


@dataclass(frozen=True)
class RenewalGrids:
    law: StepLaw
    moments: MomentSet
    F: GridFunction
    U: GridFunction
    G: GridFunction
    levels: tuple[GridFunction, ...]

    @property
    def V(self) -> GridFunction:
        return self.levels[1]

    @property
    def j_max(self) -> int:
        return len(self.levels) - 1

    @property
    def step(self) -> float:
        return self.U.step

    @property
    def t_max(self) -> float:
        return self.U.t_max

    def level(self, k: int) -> GridFunction:
        if not 0 <= k <= self.j_max:
            raise DomainError(f"level {k} not built (have 0..{self.j_max})")
        return self.levels[k]


def build_renewal_grids(law: StepLaw, h: float, t_max: float, j_max: int = 1,
                        u_method: str = "auto") -> RenewalGrids:
    moments = compute_moments(law)
    U = build_U(law, h, t_max, u_method)
    G = build_G(law, h, t_max)
    V = build_V(U, G)
    levels = build_levels(V, max(j_max, 1))
    logger.info("renewal grids for %s: h=%g t_max=%g levels<=%d (U via %s)",
                law.label, h, U.t_max, len(levels) - 1, U.method)
    return RenewalGrids(law, moments, build_xi_distribution(law, h, t_max), U, G, levels)


def centering(n: float, j: int, grids: RenewalGrids) -> float:
    """E rho_j(n) = V_j(log n)."""
    if n < 1:
        raise DomainError(f"ball count must be >= 1, got {n!r}")
    return grids.level(j)(math.log(n))
