from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Any, Iterable

import numpy as np
from scipy import integrate, special, stats

from config import ATOM_MASS_TOL, MOMENT_QUAD_EPSREL, MOMENT_QUAD_LIMIT
from model.errors import LawInvalid, NonIntegrable

# Samples are clipped into the open interval so that -log w and -log(1-w) stay finite.
_W_LOW = float(np.finfo(float).tiny)
_W_HIGH = float(1.0 - np.finfo(float).epsneg)

Atoms = tuple[tuple[float, float], ...]


def _normalize_atoms(pairs: Iterable, lo: float, hi: float, what: str) -> Atoms:
    try:
        atoms = tuple((float(v), float(p)) for v, p in pairs)
    except (TypeError, ValueError) as exc:
        raise LawInvalid(f"{what}: atoms must be (value, probability) pairs") from exc
    if not atoms:
        raise LawInvalid(f"{what}: at least one atom is required")
    for v, p in atoms:
        if not (lo < v < hi) or not math.isfinite(v):
            raise LawInvalid(f"{what}: atom value {v} outside ({lo}, {hi})")
        if not p > 0.0:
            raise LawInvalid(f"{what}: atom probability {p} must be positive")
    total = math.fsum(p for _, p in atoms)
    if abs(total - 1.0) > ATOM_MASS_TOL:
        raise LawInvalid(f"{what}: atom probabilities sum to {total!r}, not 1")
    return tuple(sorted(atoms))


def _positive(value: Any, what: str) -> float:
    try:
        x = float(value)
    except (TypeError, ValueError) as exc:
        raise LawInvalid(f"{what} must be a positive real") from exc
    if not (x > 0.0 and math.isfinite(x)):
        raise LawInvalid(f"{what} must be a positive real, got {value!r}")
    return x


@dataclass(frozen=True)
class WeightLaw:
    """
    Law of the stick factor W on (0, 1).
    - kind "gem": density theta * w**(theta - 1), i.e. Beta(theta, 1)
    - kind "beta": Beta(a, b)
    - kind "atoms": finitely many values strictly inside (0, 1)
    """

    kind: str
    theta: float | None = None
    a: float | None = None
    b: float | None = None
    atoms: Atoms = ()
    label: str | None = None

    def __post_init__(self):
        if self.kind == "gem":
            object.__setattr__(self, "theta", _positive(self.theta, "gem.theta"))
        elif self.kind == "beta":
            object.__setattr__(self, "a", _positive(self.a, "beta.a"))
            object.__setattr__(self, "b", _positive(self.b, "beta.b"))
        elif self.kind == "atoms":
            object.__setattr__(self, "atoms", _normalize_atoms(self.atoms, 0.0, 1.0, "atoms"))
        else:
            raise LawInvalid(f"unknown weight law kind {self.kind!r}")

    @classmethod
    def gem(cls, theta: float, label: str | None = None) -> "WeightLaw":
        return cls("gem", theta=theta, label=label)

    @classmethod
    def beta(cls, a: float, b: float, label: str | None = None) -> "WeightLaw":
        return cls("beta", a=a, b=b, label=label)

    @classmethod
    def point_masses(cls, pairs: Iterable, label: str | None = None) -> "WeightLaw":
        return cls("atoms", atoms=tuple(pairs), label=label)

    @property
    def is_atomic(self) -> bool:
        return self.kind == "atoms"

    @property
    def beta_params(self) -> tuple[float, float]:
        if self.kind == "gem":
            return self.theta, 1.0
        if self.kind == "beta":
            return self.a, self.b
        raise LawInvalid("atomic weight law has no Beta parameters")

    def atom_arrays(self) -> tuple[np.ndarray, np.ndarray]:
        values = np.array([v for v, _ in self.atoms], dtype=float)
        probs = np.array([p for _, p in self.atoms], dtype=float)
        return values, probs / probs.sum()

    def sample(self, rng: np.random.Generator, size=None):
        if self.kind == "gem":
            w = rng.random(size) ** (1.0 / self.theta)
        elif self.kind == "beta":
            w = rng.beta(self.a, self.b, size)
        else:
            values, probs = self.atom_arrays()
            if len(values) == 1:
                return values[0] if size is None else np.full(size, values[0])
            w = values[rng.choice(len(values), size=size, p=probs)]
        return np.clip(w, _W_LOW, _W_HIGH)

    def cdf(self, w):
        w = np.asarray(w, dtype=float)
        if self.kind == "atoms":
            values, probs = self.atom_arrays()
            return np.sum(probs * (values <= w[..., None]), axis=-1)
        if self.kind == "gem":
            return np.clip(w, 0.0, 1.0) ** self.theta
        return stats.beta.cdf(w, self.a, self.b)

    def ppf(self, q):
        q = np.asarray(q, dtype=float)
        if self.kind == "gem":
            return q ** (1.0 / self.theta)
        if self.kind == "beta":
            return stats.beta.ppf(q, self.a, self.b)
        values, probs = self.atom_arrays()
        idx = np.searchsorted(np.cumsum(probs), q, side="left")
        return values[np.minimum(idx, len(values) - 1)]

    def mean_power(self, s: float) -> float:
        """E W**s."""
        if self.kind == "atoms":
            values, probs = self.atom_arrays()
            return float(np.sum(probs * values**s))
        a, b = self.beta_params
        return float(np.exp(special.betaln(a + s, b) - special.betaln(a, b)))

    def mean_complement_power(self, s: float) -> float:
        """E (1 - W)**s."""
        if self.kind == "atoms":
            values, probs = self.atom_arrays()
            return float(np.sum(probs * (1.0 - values) ** s))
        a, b = self.beta_params
        return float(np.exp(special.betaln(a, b + s) - special.betaln(a, b)))

    def to_dict(self) -> dict:
        if self.kind == "gem":
            d = {"kind": "gem", "theta": self.theta}
        elif self.kind == "beta":
            d = {"kind": "beta", "a": self.a, "b": self.b}
        else:
            d = {"kind": "atoms", "atoms": [[v, p] for v, p in self.atoms]}
        if self.label:
            d["label"] = self.label
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "WeightLaw":
        kind = d.get("kind")
        if kind == "gem":
            return cls.gem(d.get("theta"), d.get("label"))
        if kind == "beta":
            return cls.beta(d.get("a"), d.get("b"), d.get("label"))
        if kind == "atoms":
            return cls.point_masses(d.get("atoms") or (), d.get("label"))
        raise LawInvalid(f"unknown weight law kind {kind!r}")


@dataclass(frozen=True)
class Marginal:
    """Positive increment law used when xi and eta are given independently."""

    kind: str
    rate: float | None = None
    shape: float | None = None
    atoms: Atoms = ()

    def __post_init__(self):
        if self.kind == "exponential":
            object.__setattr__(self, "rate", _positive(self.rate, "exponential.rate"))
        elif self.kind == "gamma":
            object.__setattr__(self, "shape", _positive(self.shape, "gamma.shape"))
            object.__setattr__(self, "rate", _positive(self.rate, "gamma.rate"))
        elif self.kind == "atoms":
            object.__setattr__(self, "atoms", _normalize_atoms(self.atoms, 0.0, math.inf, "atoms"))
        else:
            raise LawInvalid(f"unknown marginal kind {self.kind!r}")

    @classmethod
    def exponential(cls, rate: float) -> "Marginal":
        return cls("exponential", rate=rate)

    @classmethod
    def gamma(cls, shape: float, rate: float) -> "Marginal":
        return cls("gamma", shape=shape, rate=rate)

    @classmethod
    def point_masses(cls, pairs: Iterable) -> "Marginal":
        return cls("atoms", atoms=tuple(pairs))

    @property
    def is_atomic(self) -> bool:
        return self.kind == "atoms"

    @property
    def exponential_rate(self) -> float | None:
        if self.kind == "exponential" or (self.kind == "gamma" and self.shape == 1.0):
            return self.rate
        return None

    @property
    def exponential_moment_radius(self) -> float:
        return math.inf if self.kind == "atoms" else float(self.rate)

    def atom_arrays(self) -> tuple[np.ndarray, np.ndarray]:
        values = np.array([v for v, _ in self.atoms], dtype=float)
        probs = np.array([p for _, p in self.atoms], dtype=float)
        return values, probs / probs.sum()

    def sample(self, rng: np.random.Generator, size=None):
        if self.kind == "exponential":
            return rng.exponential(1.0 / self.rate, size)
        if self.kind == "gamma":
            return rng.gamma(self.shape, 1.0 / self.rate, size)
        values, probs = self.atom_arrays()
        if len(values) == 1:
            return values[0] if size is None else np.full(size, values[0])
        return values[rng.choice(len(values), size=size, p=probs)]

    def cdf(self, x):
        x = np.asarray(x, dtype=float)
        if self.kind == "exponential":
            return np.where(x < 0, 0.0, -np.expm1(-self.rate * np.maximum(x, 0.0)))
        if self.kind == "gamma":
            return stats.gamma.cdf(x, self.shape, scale=1.0 / self.rate)
        values, probs = self.atom_arrays()
        return np.sum(probs * (values <= x[..., None]), axis=-1)

    def moment(self, k: int) -> float:
        if self.kind == "exponential":
            return math.factorial(k) / self.rate**k
        if self.kind == "gamma":
            return math.exp(math.lgamma(self.shape + k) - math.lgamma(self.shape)) / self.rate**k
        values, probs = self.atom_arrays()
        return float(np.sum(probs * values**k))

    def laplace(self, s: float) -> float:
        if self.kind == "exponential":
            return self.rate / (self.rate + s)
        if self.kind == "gamma":
            return (self.rate / (self.rate + s)) ** self.shape
        values, probs = self.atom_arrays()
        return float(np.sum(probs * np.exp(-s * values)))

    def to_dict(self) -> dict:
        if self.kind == "exponential":
            return {"kind": "exponential", "rate": self.rate}
        if self.kind == "gamma":
            return {"kind": "gamma", "shape": self.shape, "rate": self.rate}
        return {"kind": "atoms", "atoms": [[v, p] for v, p in self.atoms]}

    @classmethod
    def from_dict(cls, d: dict) -> "Marginal":
        kind = d.get("kind")
        if kind == "exponential":
            return cls.exponential(d.get("rate"))
        if kind == "gamma":
            return cls.gamma(d.get("shape"), d.get("rate"))
        if kind == "atoms":
            return cls.point_masses(d.get("atoms") or ())
        raise LawInvalid(f"unknown marginal kind {kind!r}")


@dataclass(frozen=True)
class StepLaw:
    """
    Law of the pair (xi, eta) driving the perturbed random walk.
    Either derived from a WeightLaw, (xi, eta) = (-log W, -log(1 - W)) from one
    draw of W, or two independent marginals.
    """

    weight: WeightLaw | None = None
    xi: Marginal | None = None
    eta: Marginal | None = None

    def __post_init__(self):
        derived = self.weight is not None
        independent = self.xi is not None and self.eta is not None
        if derived == independent or (derived and (self.xi or self.eta)):
            raise LawInvalid("step law needs either a weight law or both xi and eta marginals")

    @classmethod
    def derived(cls, weight: WeightLaw) -> "StepLaw":
        return cls(weight=weight)

    @classmethod
    def independent(cls, xi: Marginal, eta: Marginal) -> "StepLaw":
        return cls(xi=xi, eta=eta)

    @property
    def is_derived(self) -> bool:
        return self.weight is not None

    @property
    def label(self) -> str:
        if self.is_derived:
            if self.weight.label:
                return self.weight.label
            w = self.weight
            if w.kind == "gem":
                return f"GEM({w.theta:g})"
            if w.kind == "beta":
                return f"Beta({w.a:g},{w.b:g})"
            return "atoms(" + ",".join(f"{v:g}" for v, _ in w.atoms) + ")"
        return f"xi={self.xi.kind},eta={self.eta.kind}"

    @property
    def xi_is_atomic(self) -> bool:
        return self.weight.is_atomic if self.is_derived else self.xi.is_atomic

    @property
    def eta_is_atomic(self) -> bool:
        return self.weight.is_atomic if self.is_derived else self.eta.is_atomic

    @property
    def xi_exponential_rate(self) -> float | None:
        # -log W is Exponential(theta) under GEM(theta)
        if self.is_derived:
            return self.weight.theta if self.weight.kind == "gem" else None
        return self.xi.exponential_rate

    @property
    def exponential_moment_radius(self) -> float:
        """sup of s with E e^{s xi} and E e^{s eta} finite."""
        if self.is_derived:
            if self.weight.is_atomic:
                return math.inf
            # P(W < e^{-y}) ~ e^{-a y} and P(1 - W < e^{-y}) ~ e^{-b y}
            return float(min(self.weight.beta_params))
        return min(self.xi.exponential_moment_radius, self.eta.exponential_moment_radius)

    def sample(self, rng: np.random.Generator, size=None):
        if self.is_derived:
            w = self.weight.sample(rng, size)
            return -np.log(w), -np.log1p(-w)
        return self.xi.sample(rng, size), self.eta.sample(rng, size)

    def xi_atoms(self) -> tuple[np.ndarray, np.ndarray] | None:
        if not self.xi_is_atomic:
            return None
        if self.is_derived:
            values, probs = self.weight.atom_arrays()
            return -np.log(values), probs
        return self.xi.atom_arrays()

    def eta_atoms(self) -> tuple[np.ndarray, np.ndarray] | None:
        if not self.eta_is_atomic:
            return None
        if self.is_derived:
            values, probs = self.weight.atom_arrays()
            return -np.log1p(-values), probs
        return self.eta.atom_arrays()

    def xi_cdf(self, x):
        x = np.asarray(x, dtype=float)
        if not self.is_derived:
            return self.xi.cdf(x)
        if self.weight.is_atomic:
            values, probs = self.xi_atoms()
            return np.sum(probs * (values <= x[..., None]), axis=-1)
        w = np.exp(-np.maximum(x, 0.0))
        return np.where(x < 0, 0.0, 1.0 - self.weight.cdf(w))

    def eta_cdf(self, y):
        y = np.asarray(y, dtype=float)
        if not self.is_derived:
            return self.eta.cdf(y)
        if self.weight.is_atomic:
            values, probs = self.eta_atoms()
            return np.sum(probs * (values <= y[..., None]), axis=-1)
        w = -np.expm1(-np.maximum(y, 0.0))
        return np.where(y < 0, 0.0, self.weight.cdf(w))

    def laplace_xi(self, s: float) -> float:
        return self.weight.mean_power(s) if self.is_derived else self.xi.laplace(s)

    def laplace_eta(self, s: float) -> float:
        return self.weight.mean_complement_power(s) if self.is_derived else self.eta.laplace(s)

    def joint_nodes(self, q: int) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """
        Finite (xi, eta, probability) representation of a derived law.
        Atoms are exact; continuous W uses q probability-midpoint quantiles.
        """
        if not self.is_derived:
            raise LawInvalid("joint nodes exist only for laws derived from W")
        if self.weight.is_atomic:
            values, probs = self.weight.atom_arrays()
        else:
            levels = (np.arange(q) + 0.5) / q
            values = np.clip(self.weight.ppf(levels), _W_LOW, _W_HIGH)
            probs = np.full(q, 1.0 / q)
        return -np.log(values), -np.log1p(-values), probs

    def to_dict(self) -> dict:
        if self.is_derived:
            return {"kind": "derived", "weight": self.weight.to_dict()}
        return {"kind": "independent", "xi": self.xi.to_dict(), "eta": self.eta.to_dict()}


def law_from_dict(d: dict) -> StepLaw:
    """Accepts a bare weight-law object ({"kind": "gem", ...}) or a step-law object."""
    if not isinstance(d, dict):
        raise LawInvalid("law must be a JSON object")
    kind = d.get("kind")
    if kind in ("gem", "beta", "atoms"):
        return StepLaw.derived(WeightLaw.from_dict(d))
    if kind == "derived":
        return StepLaw.derived(WeightLaw.from_dict(d.get("weight") or {}))
    if kind == "independent":
        return StepLaw.independent(Marginal.from_dict(d.get("xi") or {}), Marginal.from_dict(d.get("eta") or {}))
    raise LawInvalid(f"unknown law kind {kind!r}")


def sample_weight(law: WeightLaw, rng: np.random.Generator) -> float:
    return float(law.sample(rng))


def sample_step(law: StepLaw, rng: np.random.Generator) -> tuple[float, float]:
    xi, eta = law.sample(rng)
    return float(xi), float(eta)


@dataclass(frozen=True)
class MomentSet:
    mu: float
    sigma2: float
    e_eta: float
    e_xi2: float
    gamma: float = field(default=math.nan)

    @classmethod
    def from_raw(cls, mu: float, e_xi2: float, e_eta: float) -> "MomentSet":
        if not mu > 0.0:
            raise NonIntegrable(f"mean of xi must be positive, got {mu!r}")
        sigma2 = max(e_xi2 - mu * mu, 0.0)
        return cls(mu, sigma2, e_eta, e_xi2, e_xi2 / (2.0 * mu**2) - e_eta / mu)

    @property
    def s(self) -> float:
        return math.sqrt(self.sigma2)

    def to_dict(self) -> dict:
        return {"mu": self.mu, "sigma2": self.sigma2, "e_eta": self.e_eta, "e_xi2": self.e_xi2, "gamma": self.gamma}


def _quad_half_line(log_density, power: int) -> float:
    def integrand(x):
        return x**power * math.exp(log_density(x)) if x > 0 else 0.0

    total = 0.0
    for lo, hi in ((0.0, 1.0), (1.0, math.inf)):
        value, err = integrate.quad(integrand, lo, hi, epsabs=0.0, epsrel=MOMENT_QUAD_EPSREL, limit=MOMENT_QUAD_LIMIT)
        if not (math.isfinite(value) and math.isfinite(err)) or err > 1e-6 * max(abs(value), 1.0):
            raise NonIntegrable(f"moment of order {power} did not converge (value={value!r}, err={err!r})")
        total += value
    return total


def _derived_moments(weight: WeightLaw) -> tuple[float, float, float]:
    a, b = weight.beta_params
    lnorm = special.betaln(a, b)

    # xi = -log W has density w(x) f_W(e^{-x}) e^{-x}; eta = -log(1 - W) likewise
    def log_density_xi(x):
        return -a * x + (b - 1.0) * math.log(-math.expm1(-x)) - lnorm

    def log_density_eta(y):
        return -b * y + (a - 1.0) * math.log(-math.expm1(-y)) - lnorm

    return (
        _quad_half_line(log_density_xi, 1),
        _quad_half_line(log_density_xi, 2),
        _quad_half_line(log_density_eta, 1),
    )


@lru_cache(maxsize=None)
def compute_moments(law: StepLaw) -> MomentSet:
    if law.is_derived and not law.weight.is_atomic:
        mu, e_xi2, e_eta = _derived_moments(law.weight)
    elif law.is_derived:
        xi, p = law.xi_atoms()
        eta, _ = law.eta_atoms()
        mu, e_xi2, e_eta = float(np.sum(p * xi)), float(np.sum(p * xi**2)), float(np.sum(p * eta))
    else:
        mu, e_xi2, e_eta = law.xi.moment(1), law.xi.moment(2), law.eta.moment(1)
    for name, value in (("E xi", mu), ("E xi^2", e_xi2), ("E eta", e_eta)):
        if not math.isfinite(value):
            raise NonIntegrable(f"{name} diverges for {law.label}")
    return MomentSet.from_raw(mu, e_xi2, e_eta)
