"""The Gaussian limit (int_0^inf e^{-u y} dB(y))_u and its covariance 1/(u + v)."""

from __future__ import annotations

import logging
import math
from typing import Sequence

import numpy as np

from config import LIMIT_HORIZON, LIMIT_MIN_DECAY, LIMIT_STEP
from model.errors import DomainError, HorizonTooShort

logger = logging.getLogger(__name__)


def limit_covariance(u: float, v: float) -> float:
    if not (u > 0 and v > 0):
        raise DomainError(f"u and v must be positive, got {u!r}, {v!r}")
    return 1.0 / (u + v)


def limit_covariance_matrix(u_list: Sequence[float]) -> np.ndarray:
    u = np.asarray(u_list, dtype=float)
    if np.any(u <= 0):
        raise DomainError("u values must be positive")
    return 1.0 / (u[:, None] + u[None, :])


def _check(u: np.ndarray, step: float, horizon: float) -> None:
    if not step > 0:
        raise DomainError(f"step must be positive, got {step!r}")
    if np.any(u <= 0):
        raise DomainError("u values must be positive")
    if u.size and horizon * float(u.min()) < LIMIT_MIN_DECAY:
        raise HorizonTooShort(
            f"horizon {horizon:g} * min(u) {float(u.min()):g} < {LIMIT_MIN_DECAY:g}; the tail is not negligible"
        )


def default_horizon(u: np.ndarray) -> float:
    """LIMIT_HORIZON, stretched so that horizon * min(u) reaches LIMIT_MIN_DECAY."""
    return max(LIMIT_HORIZON, LIMIT_MIN_DECAY / float(u.min()))


def sample_limit_vector(u_list: Sequence[float], rng: np.random.Generator, step: float = LIMIT_STEP,
                        horizon: float | None = None) -> np.ndarray:
    """One draw of (sum_i e^{-u y_i} (B(y_{i+1}) - B(y_i)))_u from a single Brownian path."""
    u = np.asarray(u_list, dtype=float)
    if not u.size:
        return np.empty(0)
    if np.any(u <= 0):
        raise DomainError("u values must be positive")
    horizon = default_horizon(u) if horizon is None else horizon
    _check(u, step, horizon)
    m = int(math.ceil(horizon / step))
    y = step * np.arange(m)
    dB = rng.normal(0.0, math.sqrt(step), size=m)
    return np.exp(-np.outer(u, y)) @ dB


def discretized_covariance(u_list: Sequence[float], step: float, horizon: float) -> np.ndarray:
    """Exact covariance of the discretized functional: step * sum_i e^{-(u+v) y_i}."""
    u = np.asarray(u_list, dtype=float)
    m = int(math.ceil(horizon / step))
    r = np.exp(-(u[:, None] + u[None, :]) * step)
    return step * (1.0 - r**m) / (1.0 - r)


def sample_limit_vectors(u_list: Sequence[float], count: int, rng: np.random.Generator,
                         step: float = LIMIT_STEP, horizon: float | None = None) -> np.ndarray:
    """count draws, shape (count, len(u_list)), from the Gaussian law of the discretized functional."""
    u = np.asarray(u_list, dtype=float)
    if not u.size:
        return np.empty((count, 0))
    if np.any(u <= 0):
        raise DomainError("u values must be positive")
    horizon = default_horizon(u) if horizon is None else horizon
    _check(u, step, horizon)
    cov = discretized_covariance(u, step, horizon)
    return rng.multivariate_normal(np.zeros(u.size), cov, size=count, method="cholesky")
