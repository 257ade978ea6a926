from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from config import TIE_TOLERANCE
from model.errors import DomainError, GridMismatch, GridTooShort


@dataclass(frozen=True)
class GridFunction:
    """
    Nondecreasing function on [0, t_max] sampled at 0, h, 2h, ..., t_max.
    - atomic=True: all mass sits on nodes (lattice laws); evaluation is a right-continuous step
    - atomic=False: mass inside a cell is spread over it; evaluation interpolates linearly
    The function is 0 on (-inf, 0); values[0] is the jump at zero.
    """

    step: float
    values: np.ndarray
    atomic: bool = False
    name: str = ""
    method: str = ""

    def __post_init__(self):
        vals = np.array(self.values, dtype=float)
        if vals.ndim != 1 or len(vals) < 2:
            raise DomainError("grid needs at least two nodes")
        if not np.all(np.isfinite(vals)):
            raise DomainError(f"grid {self.name or '?'} has non-finite values")
        scale = max(1.0, float(np.max(np.abs(vals))))
        if np.any(np.diff(vals) < -1e-12 * scale):
            raise DomainError(f"grid {self.name or '?'} is not nondecreasing")
        vals.setflags(write=False)
        object.__setattr__(self, "values", vals)

    @classmethod
    def constant(cls, value: float, step: float, size: int, name: str = "") -> "GridFunction":
        """value * 1{t >= 0}: a single atom at zero."""
        return cls(step, np.full(size, float(value)), atomic=True, name=name, method="constant")

    @property
    def size(self) -> int:
        return len(self.values)

    @property
    def t_max(self) -> float:
        return self.step * (self.size - 1)

    @property
    def jump_at_zero(self) -> float:
        return float(self.values[0])

    @property
    def nodes(self) -> np.ndarray:
        return self.step * np.arange(self.size)

    def increments(self) -> np.ndarray:
        """Mass at 0 followed by the mass of each cell ((k-1)h, kh]."""
        return np.diff(self.values, prepend=0.0)

    def index_of(self, t: float) -> int:
        """Largest node index with node <= t (ties within TIE_TOLERANCE snap up)."""
        self.require(t)
        return int(math.floor(t / self.step + TIE_TOLERANCE))

    def require(self, t: float) -> None:
        if t > self.t_max * (1.0 + 1e-12) + 1e-12:
            raise GridTooShort(f"{self.name or 'grid'} covers [0, {self.t_max:g}], needs {t:g}")

    def compatible(self, other: "GridFunction") -> bool:
        return self.size == other.size and math.isclose(self.step, other.step, rel_tol=1e-12)

    def check_compatible(self, other: "GridFunction") -> None:
        if not self.compatible(other):
            raise GridMismatch(
                f"grids differ: h={self.step:g}/{other.step:g}, nodes={self.size}/{other.size}"
            )

    def __call__(self, x):
        x = np.asarray(x, dtype=float)
        if x.size:
            self.require(float(np.max(x)))
        if self.atomic:
            idx = np.floor(x / self.step + TIE_TOLERANCE).astype(np.int64)
            out = self.values[np.clip(idx, 0, self.size - 1)]
        else:
            out = np.interp(x, self.nodes, self.values)
        out = np.where(x < 0.0, 0.0, out)
        return float(out) if out.ndim == 0 else out

    def interpolation_error(self, t: float) -> float:
        """h times the local slope at t; zero at nodes of atomic grids."""
        k = min(self.index_of(t), self.size - 2)
        if self.atomic:
            return 0.0
        return float(self.values[k + 1] - self.values[k])

    def integrate(self, fn: Callable[[np.ndarray], np.ndarray], lower: float, upper: float,
                  include_lower: bool = False) -> float:
        """
        Stieltjes integral of fn over (lower, upper] (or [lower, upper]) against this function.
        Cell masses are evaluated at the cell midpoint, or at the node for atomic grids.
        """
        self.require(upper)
        dk = self.increments()
        nodes = self.nodes
        where = nodes - (0.0 if self.atomic else 0.5 * self.step)
        where[0] = 0.0
        upper_ok = nodes <= upper + TIE_TOLERANCE * self.step
        if include_lower:
            lower_ok = where >= lower - TIE_TOLERANCE * self.step
        else:
            lower_ok = where > lower + TIE_TOLERANCE * self.step
        mask = upper_ok & lower_ok
        if not np.any(mask):
            return 0.0
        return float(np.sum(fn(where[mask]) * dk[mask]))

    def to_rows(self):
        for t, v in zip(self.nodes, self.values):
            yield float(t), float(v)


@dataclass(frozen=True)
class BoundReport:
    name: str
    holds: bool
    max_slack: float
    arg_max: float
    constants: dict = field(default_factory=dict)
    tolerance: float = 0.0
    details: dict = field(default_factory=dict)

    @classmethod
    def from_slack(cls, name: str, t: np.ndarray, slack: np.ndarray, tolerance,
                   constants: dict | None = None, details: dict | None = None) -> "BoundReport":
        """
        slack = bound - lhs on a set of points; entries below -tolerance are violations.
        tolerance is a scalar or one value per point; the reported point is the one
        closest to violating.
        """
        slack = np.asarray(slack, dtype=float)
        if slack.size == 0:
            return cls(name, True, math.inf, math.nan, dict(constants or {}), 0.0, dict(details or {}))
        tol = np.broadcast_to(np.asarray(tolerance, dtype=float), slack.shape)
        k = int(np.argmin(slack + tol))
        return cls(name, bool(np.all(slack >= -tol)), float(slack[k]), float(np.asarray(t)[k]),
                   dict(constants or {}), float(tol[k]), dict(details or {}))

    def to_dict(self) -> dict:
        return {
            "name": self.name,
            "holds": bool(self.holds),
            "max_slack": self.max_slack,
            "arg_max": self.arg_max,
            "constants": self.constants,
            "tolerance": self.tolerance,
            "details": self.details,
        }
