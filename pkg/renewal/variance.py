from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from config import JOINT_QUAD_NODES
from model.errors import DomainError
from model.grid import GridFunction
from renewal.convolution import RenewalGrids, convolve_stieltjes, stieltjes_sum

logger = logging.getLogger(__name__)


def _cross_term(grids: RenewalGrids, k: int, nodes: int) -> np.ndarray:
    """H_k(x) = E[V_{k-1}(x - eta) V_k(x - xi)] on the grid, (xi, eta) from one step."""
    prev, cur = grids.level(k - 1), grids.level(k)
    x = prev.nodes
    law = grids.law
    if not law.is_derived:
        left = stieltjes_sum(prev.values, grids.G, prev.atomic)
        right = stieltjes_sum(cur.values, grids.F, cur.atomic)
        return left * right
    xis, etas, probs = law.joint_nodes(nodes)
    out = np.zeros_like(x)
    for xi, eta, p in zip(xis, etas, probs):
        out += p * prev(x - eta) * cur(x - xi)
    return out


@dataclass(frozen=True)
class VarianceProfile:
    """
    D_k(t) = Var N_k(t) and I_k(t) = Var sum_r V_{k-1}(t - T_r), k = 1..j_max, linked by
    D_1 = I_1 and D_k = D_{k-1} * V + I_k.
    """

    I: tuple[np.ndarray, ...]
    D: tuple[np.ndarray, ...]
    step: float

    @property
    def j_max(self) -> int:
        return len(self.D)

    def _at(self, arr: np.ndarray, t: float) -> float:
        nodes = self.step * np.arange(len(arr))
        return float(np.interp(t, nodes, arr))

    def D_at(self, k: int, t: float) -> float:
        if k == 0:
            return 0.0
        return self._at(self.D[k - 1], t)

    def I_at(self, k: int, t: float) -> float:
        return self._at(self.I[k - 1], t)

    def recursion_rhs(self, k: int, grids: RenewalGrids) -> np.ndarray:
        """(D_{k-1} * V) + I_k on the grid."""
        if k == 1:
            return self.I[0]
        return stieltjes_sum(self.D[k - 2], grids.V) + self.I[k - 1]

    def y2_second_moment(self, j: int, t: float, grids: RenewalGrids) -> float:
        """E (rho_j - sum_r V_{j-1}(t - T_r))^2 = (D_{j-1} * V)(t)."""
        if j < 2:
            return 0.0
        conv = stieltjes_sum(self.D[j - 2], grids.V)
        return self._at(conv, t)


def variance_profile(grids: RenewalGrids, j_max: int, nodes: int = JOINT_QUAD_NODES) -> VarianceProfile:
    if not 1 <= j_max <= grids.j_max:
        raise DomainError(f"variance needs levels 1..{j_max}, grids have 1..{grids.j_max}")
    V, U = grids.V, grids.U
    I, D = [], []
    for k in range(1, j_max + 1):
        prev, cur = grids.level(k - 1), grids.level(k)
        # V_{k-1}^2 is nondecreasing and nonnegative, so it is a valid grid function
        sq = GridFunction(prev.step, prev.values**2, atomic=prev.atomic)
        first = convolve_stieltjes(sq, V).values
        H = _cross_term(grids, k, nodes)
        second = stieltjes_sum(H, U, prev.atomic and cur.atomic)
        I_k = np.maximum(first + 2.0 * second - cur.values**2, 0.0)
        I.append(I_k)
        D.append(I_k if k == 1 else stieltjes_sum(D[-1], V) + I_k)
        logger.debug("variance level %d: I(t_max)=%g D(t_max)=%g", k, I_k[-1], D[-1][-1])
    return VarianceProfile(tuple(I), tuple(D), grids.step)
