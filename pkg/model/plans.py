"""Run configs: one JSON object per run, validated into an ExperimentPlan."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Any

from config import CONFIG_SCHEMA, DEFAULT_STEP
from model.errors import ConfigInvalid, DomainError, IoError, LabError
from model.laws import StepLaw, WeightLaw, law_from_dict

COMMANDS = ("occupancy", "brw", "renewal", "clt21", "clt32", "wlln", "vanish", "gap")

RENEWAL_CHECKS = (
    "lorden", "v_band", "prop41", "lemma42", "lemma42_limits", "tail_truncation", "dri",
    "exp_tail", "subadditivity", "expansion", "prop71", "expansion_remainder", "prop22",
    "correction_factors",
)

_REQUIRED = {
    "occupancy": ("law", "n", "j_max", "replicates"),
    "brw": ("law", "j", "t", "replicates"),
    "renewal": ("law",),
    "clt21": ("law", "j_rule", "u_list", "replicates"),
    "clt32": ("law", "t_list", "j_rule", "u_list", "replicates"),
    "wlln": ("law", "j_rule", "replicates"),
    "vanish": ("law", "j_rule", "replicates"),
    "gap": ("law", "j"),
}

# commands whose law must be a stick law W (they simulate the cascade)
_NEEDS_WEIGHT = ("occupancy", "clt21", "wlln")


@dataclass(frozen=True)
class JRule:
    """j = fixed value, or j_n = x^alpha (x = log n or t) with alpha < 1/2."""

    kind: str
    value: float

    def __post_init__(self):
        if self.kind == "fixed":
            if int(self.value) != self.value or self.value < 1:
                raise DomainError("fixed level must be a positive integer")
        elif self.kind == "power":
            if not 0 < self.value < 0.5:
                raise DomainError("power exponent must lie in (0, 1/2)")
        else:
            raise DomainError(f"unknown j rule {self.kind!r}")

    @classmethod
    def fixed(cls, j: int) -> "JRule":
        return cls("fixed", j)

    @classmethod
    def power(cls, alpha: float) -> "JRule":
        return cls("power", alpha)

    def j_n(self, x: float) -> float:
        return float(self.value) if self.kind == "fixed" else float(x) ** self.value

    def level(self, x: float, u: float = 1.0) -> int:
        """floor(j_n u), computed with a small guard against 2.9999999 style round-off."""
        return int(math.floor(self.j_n(x) * u + 1e-12))

    def __call__(self, x: float) -> int:
        return self.level(x)

    def to_dict(self) -> dict:
        key = "j" if self.kind == "fixed" else "alpha"
        return {"kind": self.kind, key: self.value}


@dataclass(frozen=True)
class ExperimentPlan:
    command: str
    law: StepLaw
    weight: WeightLaw | None = None
    seed: int = 0
    replicates: int = 0
    n: int | None = None
    j_max: int | None = None
    j: int | None = None
    t: float | None = None
    n_list: tuple[float, ...] = ()
    t_list: tuple[float, ...] = ()
    T_list: tuple[float, ...] = ()
    u_list: tuple[float, ...] = (1.0,)
    j_rule: JRule | None = None
    h: float = DEFAULT_STEP
    t_max: float | None = None
    budget: int | None = None
    mu_override: float | None = None
    statistic: str = "Y2"
    checks: tuple[str, ...] = ()
    raw: dict = field(default_factory=dict, compare=False, repr=False)

    def with_seed(self, seed: int) -> "ExperimentPlan":
        raw = dict(self.raw)
        raw["seed"] = int(seed)
        return replace(self, seed=int(seed), raw=raw)

    def effective_config(self) -> dict:
        return dict(self.raw)


def _fail(message: str, path: str) -> ConfigInvalid:
    return ConfigInvalid(message, path=path)


def _int(d: dict, key: str, lo: int = 0, default: Any = None) -> int | None:
    if key not in d:
        return default
    v = d[key]
    if isinstance(v, bool) or not isinstance(v, (int, float)) or int(v) != v or v < lo:
        raise _fail(f"expected an integer >= {lo}, got {v!r}", key)
    return int(v)


def _real(d: dict, key: str, positive: bool = True, default: Any = None) -> float | None:
    if key not in d:
        return default
    v = d[key]
    if isinstance(v, bool) or not isinstance(v, (int, float)) or not math.isfinite(v):
        raise _fail(f"expected a real number, got {v!r}", key)
    if positive and not v > 0:
        raise _fail(f"expected a positive number, got {v!r}", key)
    return float(v)


def _reals(d: dict, key: str, increasing: bool = False, at_least: float = 0.0) -> tuple[float, ...]:
    if key not in d:
        return ()
    v = d[key]
    if not isinstance(v, list) or not v:
        raise _fail("expected a nonempty list of numbers", key)
    out = []
    for i, x in enumerate(v):
        if isinstance(x, bool) or not isinstance(x, (int, float)) or not math.isfinite(x) or x < at_least:
            raise _fail(f"expected a number >= {at_least:g}, got {x!r}", f"{key}[{i}]")
        out.append(float(x))
    if increasing and any(b <= a for a, b in zip(out, out[1:])):
        raise _fail("values must be strictly increasing", key)
    return tuple(out)


def _ball_counts(d: dict) -> tuple[float, ...]:
    """n_list entries are ball counts; {"log_n": [...]} gives them as e^x."""
    if "log_n" in d and "n_list" not in d:
        return tuple(math.exp(x) for x in _reals(d, "log_n", increasing=True))
    return _reals(d, "n_list", increasing=True, at_least=1.0)


def _j_rule(d: dict) -> JRule | None:
    if "j_rule" not in d:
        return None
    v = d["j_rule"]
    if not isinstance(v, dict):
        raise _fail("expected an object like {\"kind\": \"power\", \"alpha\": 0.4}", "j_rule")
    kind = v.get("kind")
    try:
        if kind == "fixed":
            return JRule.fixed(_int(v, "j", 1))
        if kind == "power":
            return JRule.power(_real(v, "alpha"))
    except ConfigInvalid as exc:
        raise _fail(exc.reason, f"j_rule.{exc.path}") from exc
    except (ValueError, TypeError) as exc:
        raise _fail(str(exc), "j_rule") from exc
    raise _fail(f"unknown j rule kind {kind!r}", "j_rule.kind")


def _law(d: dict, command: str) -> tuple[StepLaw, WeightLaw | None]:
    v = d.get("law")
    try:
        law = law_from_dict(v)
    except LabError as exc:
        raise _fail(str(exc), "law") from exc
    if command in _NEEDS_WEIGHT and not law.is_derived:
        raise _fail("this command simulates the cascade and needs a stick law W", "law.kind")
    return law, law.weight


def plan_from_dict(d: Any, command: str) -> ExperimentPlan:
    if command not in COMMANDS:
        raise ConfigInvalid(f"unknown command {command!r}")
    if not isinstance(d, dict):
        raise ConfigInvalid("config must be a JSON object", path="$")
    schema = d.get("schema", CONFIG_SCHEMA)
    if schema != CONFIG_SCHEMA:
        raise _fail(f"unsupported schema {schema!r}, expected {CONFIG_SCHEMA}", "schema")
    for key in _REQUIRED[command]:
        if key not in d:
            raise _fail("required field missing", key)
    law, weight = _law(d, command)

    u_list = _reals(d, "u_list", increasing=True) or (1.0,)
    checks = d.get("checks", list(RENEWAL_CHECKS) if command == "renewal" else [])
    if not isinstance(checks, list) or any(c not in RENEWAL_CHECKS for c in checks):
        raise _fail(f"checks must be a list drawn from {', '.join(RENEWAL_CHECKS)}", "checks")
    statistic = d.get("statistic", "Y2")
    if statistic not in ("Y1", "Y2"):
        raise _fail("statistic must be Y1 or Y2", "statistic")

    plan = ExperimentPlan(
        command=command,
        law=law,
        weight=weight,
        seed=_int(d, "seed", 0, 0),
        replicates=_int(d, "replicates", 1, 0),
        n=_int(d, "n", 1),
        j_max=_int(d, "j_max", 1),
        j=_int(d, "j", 1),
        t=_real(d, "t", positive=False),
        n_list=_ball_counts(d),
        t_list=_reals(d, "t_list", increasing=True),
        T_list=_reals(d, "T_list", increasing=True),
        u_list=u_list,
        j_rule=_j_rule(d),
        h=_real(d, "h", default=DEFAULT_STEP),
        t_max=_real(d, "t_max"),
        budget=_int(d, "budget", 1),
        mu_override=_real(d, "mu_override"),
        statistic=statistic,
        checks=tuple(checks),
        raw=dict(d),
    )
    if command in ("clt21", "wlln", "gap") and not plan.n_list:
        raise _fail("required field missing", "n_list")
    if command == "vanish" and not (plan.t_list if statistic == "Y2" else plan.n_list):
        raise _fail("required field missing", "t_list" if statistic == "Y2" else "n_list")
    if plan.t is not None and plan.t < 0:
        raise _fail("horizon must be >= 0", "t")
    if plan.j_rule is not None:
        xs = [math.log(n) for n in plan.n_list] or list(plan.t_list)
        for x in xs:
            if plan.j_rule.level(x, min(plan.u_list)) < 1:
                raise _fail(f"floor(j_n u) = 0 at x={x:g}; every level must be >= 1", "u_list")
    return plan


def parse_plan(text: str, command: str) -> ExperimentPlan:
    try:
        d = json.loads(text)
    except json.JSONDecodeError as exc:
        offset = len(text[: exc.pos].encode("utf-8"))
        raise ConfigInvalid(f"malformed JSON: {exc.msg}", offset=offset) from exc
    return plan_from_dict(d, command)


def load_plan(path: str | Path, command: str) -> ExperimentPlan:
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise IoError(f"cannot read config {path}: {exc.strerror or exc}") from exc
    return parse_plan(text, command)


def canonical_json(d: dict) -> str:
    return json.dumps(d, sort_keys=True, separators=(",", ":"))
