"""One runner per subcommand: plan in, report and replicate tables out."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Any, Callable

import numpy as np

from config import BRW_BUDGET, CLT_MEAN_STDERRS, DEFAULT_T_MAX, TAIL_MARGIN, VARIANCE_Z_MAX, Y3_DOMINANCE_RATIO
from lab.clt import (
    Criterion,
    correction_factor_table,
    grids_for,
    run_gap,
    run_theorem21,
    run_theorem32,
    run_vanishing_terms,
    run_wlln,
    theorem31_norm,
)
from model.errors import DomainError, GammaNonpositive, GridTooShort, HypothesisUnmet, NoisyTail, RangeEmpty
from model.grid import BoundReport, GridFunction
from model.laws import StepLaw, WeightLaw, compute_moments
from model.plans import ExperimentPlan
from renewal import bounds
from renewal.convolution import RenewalGrids, build_renewal_grids
from renewal.variance import variance_profile
from sim.brw import conditional_mean, simulate_brw, variance_recursion_check
from sim.occupancy import SchemeConfig, decompose_result, pair_collision_probability, simulate_coupled
from sim.streams import map_replicates, replicate_rng

logger = logging.getLogger(__name__)

OCCUPANCY_COLUMNS = ["replicate", "j", "K", "rho", "Y1", "Y2", "Y3"]
BRW_COLUMNS = ["replicate", "j", "t", "N", "first_generation", "conditional_mean"]
CLT_COLUMNS = ["x", "replicate", "u", "level", "raw", "centering", "statistic"]

# a check whose hypothesis the law does not meet is reported, not failed
NOT_APPLICABLE = (HypothesisUnmet, NoisyTail, GammaNonpositive, RangeEmpty, GridTooShort)


@dataclass
class Outcome:
    command: str
    report: dict
    passed: bool | None = None
    tables: dict[str, tuple[list[str], list]] = field(default_factory=dict)
    grids: dict[str, GridFunction] = field(default_factory=dict)


# occupancy

def _occupancy_rows(seed: int, replicate: int, n: int, j_max: int, weight: WeightLaw,
                    levels: tuple[GridFunction, ...]) -> tuple[list[tuple], int | None]:
    result = simulate_coupled(SchemeConfig(n, j_max, weight, seed), replicate=replicate)
    rows = []
    for j in range(1, j_max + 1):
        d = decompose_result(result, j, levels)
        rows.append((replicate, j, d.K, d.rho, d.Y1, d.Y2, d.Y3))
    return rows, result.profile.height


def _y_variances(ys: np.ndarray) -> dict:
    """Sample variances of Y1, Y2, Y3 and the ratio Var Y3 / max(Var Y1, Var Y2)."""
    if ys.shape[0] < 2:
        return {"var_Y1": None, "var_Y2": None, "var_Y3": None, "y3_dominance": None, "y3_dominates": None}
    v1, v2, v3 = (float(x) for x in ys.var(axis=0, ddof=1))
    low = max(v1, v2)
    ratio = v3 / low if low > 0 else (math.inf if v3 > 0 else None)
    return {"var_Y1": v1, "var_Y2": v2, "var_Y3": v3, "y3_dominance": ratio,
            "y3_dominates": None if ratio is None else ratio >= Y3_DOMINANCE_RATIO}


def run_occupancy(plan: ExperimentPlan, threads: int = 1) -> Outcome:
    n, j_max = plan.n, plan.j_max
    grids = grids_for(plan, math.log(n), j_max)
    logger.info("occupancy: n=%d j_max=%d, %d replicates", n, j_max, plan.replicates)
    out = map_replicates(_occupancy_rows, plan.replicates, plan.seed, threads, (n, j_max, plan.weight, grids.levels))
    rows = [r for reps, _ in out for r in reps]
    heights = [h for _, h in out]
    arr = np.array(rows, dtype=float).reshape(-1, len(OCCUPANCY_COLUMNS))
    per_level = []
    for j in range(1, j_max + 1):
        sel = arr[arr[:, 1] == j]
        per_level.append({
            "j": j,
            "centering": grids.level(j)(math.log(n)),
            "mean_K": float(sel[:, 2].mean()),
            "mean_rho": float(sel[:, 3].mean()),
            "mean_Y1": float(sel[:, 4].mean()),
            "mean_Y2": float(sel[:, 5].mean()),
            "mean_Y3": float(sel[:, 6].mean()),
            "var_K": float(sel[:, 2].var(ddof=1)) if len(sel) > 1 else None,
            **_y_variances(sel[:, 4:7]),
        })
    reached = [h for h in heights if h is not None]
    report = {
        "law": plan.law.label, "n": n, "j_max": j_max, "replicates": plan.replicates,
        "moments": grids.moments.to_dict(), "levels": per_level,
        "pair_collision": pair_collision_probability(plan.weight),
        "height": {"reached": len(reached), "mean": float(np.mean(reached)) if reached else None},
    }
    return Outcome("occupancy", report, None, {"replicates": (OCCUPANCY_COLUMNS, rows)})


# branching random walk

def _brw_row(seed: int, replicate: int, law: StepLaw, j: int, t: float, prev: GridFunction,
             budget: int) -> tuple:
    sample = simulate_brw(law, j, t, replicate_rng(seed, replicate), budget)
    c = conditional_mean(sample.first_generation, t, prev)
    return replicate, j, t, sample.value, int(sample.first_generation.size), c


def run_brw(plan: ExperimentPlan, threads: int = 1) -> Outcome:
    law, j, t = plan.law, plan.j, plan.t
    budget = plan.budget or BRW_BUDGET
    grids = build_renewal_grids(law, plan.h, (math.ceil(t / plan.h) + 1) * plan.h, j)
    logger.info("brw: j=%d t=%g, %d replicates", j, t, plan.replicates)
    rows = map_replicates(_brw_row, plan.replicates, plan.seed, threads, (law, j, t, grids.level(j - 1), budget))
    N = np.array([r[3] for r in rows], dtype=float)
    C = np.array([r[5] for r in rows], dtype=float)
    expected = grids.level(j)(t)
    report: dict[str, Any] = {"law": law.label, "j": j, "t": t, "replicates": plan.replicates,
                              "V_j": expected, "mean_N": float(N.mean())}
    criteria = []
    if N.size >= 2:
        se = float(N.std(ddof=1) / math.sqrt(N.size))
        z = 0.0 if se == 0 else (float(N.mean()) - expected) / se
        report.update(stderr=se, variance_N=float(N.var(ddof=1)))
        criteria.append(Criterion("mean N vs V_j", z, f"|z| < {CLT_MEAN_STDERRS:g}", abs(z) < CLT_MEAN_STDERRS))
        mu = compute_moments(law).mu
        norm = theorem31_norm(j, j, t, mu) if t > 0 else 0.0
        report["normalized_Y2_second_moment"] = float(np.mean((norm * (N - C)) ** 2))
    if j >= 2 and plan.replicates >= 2:
        profile = variance_profile(grids, j)
        check = variance_recursion_check(law, j, t, plan.seed, grids, plan.replicates, profile, threads, budget)
        report["variance_recursion"] = check.to_dict()
        criteria.append(Criterion("variance recursion", check.z, f"|z| < {VARIANCE_Z_MAX:g}",
                                  abs(check.z) < VARIANCE_Z_MAX))
    report["criteria"] = [c.to_dict() for c in criteria]
    passed = all(c.passed for c in criteria) if criteria else None
    return Outcome("brw", report, passed, {"replicates": (BRW_COLUMNS, rows)})


# renewal grids and bound checks

DRI_FUNCTIONS: dict[str, Callable[[np.ndarray], np.ndarray]] = {
    "exp(-y)": lambda y: np.exp(-y),
    "1{y<=1}": lambda y: (y <= 1.0).astype(float),
    "exp(-exp(y))": lambda y: np.exp(-np.exp(np.minimum(y, 700.0))),
}


def _default_points(t_max: float, lo: float = 1.0, count: int = 5) -> list[float]:
    return [float(x) for x in np.linspace(lo, t_max, count)]


def _renewal_checks(plan: ExperimentPlan, grids: RenewalGrids, j: int) -> dict[str, Callable[[], Any]]:
    m = grids.moments
    levels = grids.levels
    c = bounds.estimate_c(grids.U, m)
    t_max = grids.t_max
    j_all = range(1, grids.j_max + 1)
    t_points = list(plan.t_list) or _default_points(t_max)
    tail_points = list(plan.t_list) or _default_points(max(t_max - TAIL_MARGIN, 1.0))
    t = plan.t if plan.t is not None else t_max
    alpha = plan.j_rule.value if plan.j_rule is not None and plan.j_rule.kind == "power" else 0.4
    j_rule = plan.j_rule if plan.j_rule is not None else j
    return {
        "lorden": lambda: bounds.check_lorden(grids.U, m),
        "v_band": lambda: bounds.check_V_band(grids.V, grids.U, grids.G, m),
        "prop41": lambda: bounds.check_prop41(levels, j_all, m, c),
        "lemma42": lambda: bounds.check_lemma42(levels, j, m, c),
        "lemma42_limits": lambda: bounds.lemma42_limits(
            list(plan.t_list) or [10.0, 20.0, 40.0, 1e3, 1e5, 1e7], m, c, alpha),
        "tail_truncation": lambda: [
            {"T": T, "value": v, "envelope": bounds.tail_truncation_envelope(T, m.mu)}
            for T, v in bounds.tail_truncation_diag(levels, j, t, list(plan.T_list) or [0.5, 1.0, 2.0, 4.0], m)
        ],
        "dri": lambda: [
            bounds.dri_convolution_bound(f, grids.V, grids.U, levels, j, (1.0, t_max), label=name)
            for name, f in DRI_FUNCTIONS.items()
        ],
        "exp_tail": lambda: bounds.exp_tail_bound(levels, j, tail_points, plan.law),
        "subadditivity": lambda: bounds.check_subadditivity(grids.V, grids.U),
        "expansion": lambda: bounds.expansion_fit(grids.V, m, plan.law),
        "prop71": lambda: [{"t": a, "j": b, "ratio": r} for a, b, r in bounds.prop71_ratio(levels, j_rule, m, t_points)],
        "expansion_remainder": lambda: bounds.check_expansion_remainder(levels, j_all, m, c),
        "prop22": lambda: bounds.prop22_ratio(levels, j, m, t_points),
        "correction_factors": lambda: correction_factor_table(levels, m, t, j_all),
    }


def _holds(value) -> bool | None:
    if isinstance(value, BoundReport):
        return value.holds
    if isinstance(value, list) and value and isinstance(value[0], BoundReport):
        return all(r.holds for r in value)
    return None


def _as_dict(value):
    if hasattr(value, "to_dict"):
        return value.to_dict()
    if isinstance(value, list):
        return [_as_dict(v) for v in value]
    return value


def run_renewal(plan: ExperimentPlan, threads: int = 1) -> Outcome:
    j = plan.j or 2
    j_max = max(plan.j_max or 4, j)
    t_max = plan.t_max or DEFAULT_T_MAX
    if plan.t is not None and plan.t > t_max:
        raise DomainError(f"t={plan.t:g} beyond t_max={t_max:g}")
    grids = build_renewal_grids(plan.law, plan.h, t_max, j_max)
    checks = _renewal_checks(plan, grids, j)
    results, verdicts = {}, {}
    for name in plan.checks:
        logger.info("renewal check %s", name)
        try:
            value = checks[name]()
        except NOT_APPLICABLE as exc:
            results[name] = {"not_applicable": type(exc).__name__, "message": str(exc)}
            continue
        results[name] = _as_dict(value)
        verdict = _holds(value)
        if verdict is not None:
            verdicts[name] = verdict
    report = {"law": plan.law.label, "h": grids.step, "t_max": grids.t_max, "j_max": grids.j_max,
              "moments": grids.moments.to_dict(), "U_method": grids.U.method,
              "c0": bounds.estimate_c0(grids.U, grids.moments), "c": bounds.estimate_c(grids.U, grids.moments),
              "holds": verdicts, "checks": results}
    dumps = {"U": grids.U, "G": grids.G, "F": grids.F}
    dumps.update({f"V{k}": grids.level(k) for k in range(1, grids.j_max + 1)})
    passed = all(verdicts.values()) if verdicts else None
    return Outcome("renewal", report, passed, grids=dumps)


# harness commands

def _clt_outcome(command: str, report) -> Outcome:
    return Outcome(command, report.to_dict(), report.passed, {"replicates": (CLT_COLUMNS, list(report.rows()))})


def _trend_outcome(command: str, report) -> Outcome:
    tables = {}
    if report.replicate_rows:
        header = list(report.replicate_rows[0])
        tables["replicates"] = (header, report.replicate_rows)
    return Outcome(command, report.to_dict(), report.passed, tables)


RUNNERS: dict[str, Callable[[ExperimentPlan, int], Outcome]] = {
    "occupancy": run_occupancy,
    "brw": run_brw,
    "renewal": run_renewal,
    "clt21": lambda plan, threads: _clt_outcome("clt21", run_theorem21(plan, threads)),
    "clt32": lambda plan, threads: _clt_outcome("clt32", run_theorem32(plan, threads)),
    "wlln": lambda plan, threads: _trend_outcome("wlln", run_wlln(plan, threads)),
    "vanish": lambda plan, threads: _trend_outcome("vanish", run_vanishing_terms(plan, threads)),
    "gap": lambda plan, threads: _trend_outcome("gap", run_gap(plan)),
}


def run_plan(plan: ExperimentPlan, threads: int = 1) -> Outcome:
    return RUNNERS[plan.command](plan, threads)
