"""
Desk-scale acceptance suite: exact oracles, bound checks and Monte Carlo trends,
run end to end with the parameters in config.ACCEPTANCE.
"""

from __future__ import annotations

import logging
import math
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Iterator, Sequence

import numpy as np

from config import ACCEPTANCE, ACCEPTANCE_SEED, VARIANCE_Z_MAX
from lab.clt import run_gap, run_theorem21, run_theorem32, run_vanishing_terms, run_wlln
from lab.limits import limit_covariance_matrix, sample_limit_vectors
from lab.reports import RunManifest, write_json
from model.errors import DomainError, LabError
from model.laws import Marginal, StepLaw, WeightLaw, compute_moments
from model.plans import plan_from_dict
from renewal.bounds import check_prop41, check_subadditivity, estimate_c, expansion_fit, prop71_ratio
from renewal.convolution import build_renewal_grids
from renewal.variance import variance_profile
from sim.brw import simulate_brw, variance_recursion_check
from sim.occupancy import SchemeConfig, simulate_occupancy
from sim.streams import derive_seed, map_replicates, replicate_rng

logger = logging.getLogger(__name__)

GEM1 = {"kind": "gem", "theta": 1.0}


def gem(theta: float) -> StepLaw:
    return StepLaw.derived(WeightLaw.gem(theta))


def lattice_law() -> StepLaw:
    """xi = eta = 1: T_i = i, N_j(t) = C(floor t, j)."""
    one = Marginal.point_masses([(1.0, 1.0)])
    return StepLaw.independent(one, one)


@dataclass
class CriterionResult:
    number: int
    name: str
    passed: bool
    seconds: float = 0.0
    checks: dict = field(default_factory=dict)
    details: dict = field(default_factory=dict)
    error: str | None = None

    def to_dict(self) -> dict:
        return dict(self.__dict__)


# Exact occupancy law for a single-atom stick W = w

def set_partitions(items: Sequence) -> Iterator[list[list]]:
    items = list(items)
    if not items:
        yield []
        return
    first, rest = items[0], items[1:]
    for part in set_partitions(rest):
        yield [[first]] + part
        for i in range(len(part)):
            yield part[:i] + [[first] + part[i]] + part[i + 1:]


def single_atom_power_sum(w: float, s: int, j: int) -> float:
    """sum of p^s over depth-j boxes when every stick is w: ((1-w)^s / (1-w^s))^j."""
    return ((1.0 - w) ** s / (1.0 - w**s)) ** j


def _distinct_boxes(sizes: Sequence[int], power_sum: Callable[[int], float]) -> float:
    """
    P(blocks of the given sizes land in pairwise distinct boxes, each block in one box),
    by Moebius inversion over set partitions of the blocks.
    """
    total = 0.0
    for sigma in set_partitions(range(len(sizes))):
        term = 1.0
        for group in sigma:
            term *= (-1) ** (len(group) - 1) * math.factorial(len(group) - 1)
            term *= power_sum(sum(sizes[i] for i in group))
        total += term
    return total


def exact_occupancy_law(n: int, j: int, w: float) -> np.ndarray:
    """P(K_n(j) = k), k = 0..n, for the sieve with every stick equal to w."""
    if n < 1 or j < 1:
        raise DomainError("need n >= 1 and j >= 1")
    if not 0.0 < w < 1.0:
        raise DomainError(f"stick value must lie in (0, 1), got {w!r}")
    probs = np.zeros(n + 1)
    for part in set_partitions(range(n)):
        sizes = [len(b) for b in part]
        probs[len(part)] += _distinct_boxes(sizes, lambda s: single_atom_power_sum(w, s, j))
    return probs


def _occupancy_histogram(seed: int, block: int, n: int, j_max: int, law: WeightLaw, per_block: int) -> np.ndarray:
    hist = np.zeros((j_max, n + 1), dtype=np.int64)
    cfg = SchemeConfig(n, j_max, law, seed)
    for i in range(block * per_block, (block + 1) * per_block):
        counts = simulate_occupancy(cfg, i).counts
        for j, k in enumerate(counts):
            hist[j, k] += 1
    return hist


def small_instance_check(runs: int, max_balls: int, seed: int, threads: int = 1, w: float = 0.5,
                         j_max: int = 2, stderrs: float = 3.0) -> CriterionResult:
    """Empirical P(K_n(j) = k) against the exact law, cell by cell."""
    law = WeightLaw.point_masses([(w, 1.0)])
    per_block = max(1, runs // 100)
    blocks = max(1, runs // per_block)
    runs = blocks * per_block
    result = CriterionResult(10, "small-instances", True)
    cells = []
    for n in range(1, max_balls + 1):
        hists = map_replicates(_occupancy_histogram, blocks, derive_seed(seed, n), threads,
                               (n, j_max, law, per_block))
        hist = np.sum(hists, axis=0)
        for j in range(1, j_max + 1):
            exact = exact_occupancy_law(n, j, w)
            freq = hist[j - 1] / runs
            for k in range(1, n + 1):
                se = math.sqrt(exact[k] * (1.0 - exact[k]) / runs)
                ok = abs(freq[k] - exact[k]) <= stderrs * se + 1e-12
                cells.append({"n": n, "j": j, "k": k, "exact": float(exact[k]), "empirical": float(freq[k]),
                              "stderr": se, "passed": ok})
                result.passed &= ok
    result.checks["occupancy_cells"] = all(c["passed"] for c in cells)
    result.details["cells"] = cells
    result.details["runs_per_n"] = runs

    brw_rows = []
    law_1 = lattice_law()
    rng = replicate_rng(seed, 0)
    for t in (0.5, 1.5, 3.5, 6.25):
        for j in (1, 2, 3, 4):
            got = simulate_brw(law_1, j, t, rng).value
            want = math.comb(int(math.floor(t)), j)
            brw_rows.append({"t": t, "j": j, "count": got, "enumerated": want})
    result.checks["lattice_brw"] = all(r["count"] == r["enumerated"] for r in brw_rows)
    result.passed &= result.checks["lattice_brw"]
    result.details["lattice_brw"] = brw_rows
    return result


def renewal_oracle_check(h: float, t_max: float, tol: float) -> CriterionResult:
    """GEM(1): U(t) = 1 + t and V(t) = E N(t) = t."""
    grids = build_renewal_grids(gem(1.0), h, t_max, 1)
    t = grids.U.nodes
    u_err = float(np.max(np.abs(grids.U.values - (1.0 + t))))
    v_err = float(np.max(np.abs(grids.V.values - t)))
    checks = {"U": u_err <= tol, "V": v_err <= tol}
    return CriterionResult(1, "renewal-oracle", all(checks.values()), checks=checks,
                           details={"U_max_error": u_err, "V_max_error": v_err, "tol": tol})


def prop41_check(h: float, t_max: float, j_max: int) -> CriterionResult:
    result = CriterionResult(2, "power-band", True)
    for name, law in (("gem1", gem(1.0)), ("lattice", lattice_law())):
        grids = build_renewal_grids(law, h, t_max, j_max)
        c = estimate_c(grids.U, grids.moments)
        report = check_prop41(grids.levels, range(1, j_max + 1), grids.moments, c)
        result.checks[name] = report.holds
        result.details[name] = report.to_dict()
        result.passed &= report.holds
    return result


def expansion_check(h: float, t_max: float, gamma_tol: float, ratio_tol: float, decay_tol: float) -> CriterionResult:
    result = CriterionResult(3, "expansion", True)
    exp_law = StepLaw.independent(Marginal.exponential(1.0), Marginal.exponential(4.0))
    grids = build_renewal_grids(exp_law, h, t_max, 2)
    fit = expansion_fit(grids.V, grids.moments, exp_law)
    ratio = prop71_ratio(grids.levels, 2, grids.moments, [50.0])[0][2]
    grids2 = build_renewal_grids(gem(2.0), h, t_max, 1)
    fit2 = expansion_fit(grids2.V, grids2.moments, grids2.law)
    result.checks = {
        "gamma_hat": abs(fit.gamma_hat - 0.75) <= gamma_tol,
        "ratio": abs(ratio - 1.0) <= ratio_tol,
        "decay_rate": abs(fit2.decay_rate + 1.0) <= decay_tol,
    }
    result.passed = all(result.checks.values())
    result.details = {"exp_fit": fit.to_dict(), "ratio_j2_t50": ratio, "gem2_fit": fit2.to_dict()}
    return result


def variance_check(t: float, levels: Sequence[int], replicates: int, h: float, seed: int,
                   threads: int = 1) -> CriterionResult:
    law = gem(1.0)
    grids = build_renewal_grids(law, h, math.ceil(t / h) * h + h, max(levels))
    profile = variance_profile(grids, max(levels))
    result = CriterionResult(8, "variance-recursion", True)
    for j in levels:
        check = variance_recursion_check(law, j, t, derive_seed(seed, j), grids, replicates, profile, threads)
        ok = abs(check.z) < VARIANCE_Z_MAX
        result.checks[f"j{j}"] = ok
        result.details[f"j{j}"] = check.to_dict()
        result.passed &= ok
    return result


def gap_check(log_n: Sequence[float], j: int, h: float) -> CriterionResult:
    plan = plan_from_dict({"law": GEM1, "j": j, "log_n": list(log_n), "h": h}, "gap")
    report = run_gap(plan)
    grids = build_renewal_grids(plan.law, h, 50.0, 1)
    sub = check_subadditivity(grids.V, grids.U, max_nodes=grids.V.size)
    checks = {"gap_ratios": report.passed, "subadditivity": sub.holds}
    return CriterionResult(9, "gap", all(checks.values()), checks=checks,
                           details={"gap": report.to_dict(), "subadditivity": sub.to_dict()})


def limit_law_check(u: Sequence[float], paths: int, tol: float, seed: int) -> CriterionResult:
    draws = sample_limit_vectors(u, paths, replicate_rng(seed, 0))
    emp = np.cov(draws, rowvar=False, ddof=1)
    dev = float(np.max(np.abs(emp - limit_covariance_matrix(u))))
    return CriterionResult(11, "limit-law", dev < tol, checks={"covariance": dev < tol},
                           details={"max_deviation": dev, "empirical": emp.tolist(), "tol": tol})


def _from_report(number: int, name: str, report) -> CriterionResult:
    return CriterionResult(number, name, report.passed,
                           checks={c.name: bool(c.passed) for c in report.criteria}, details=report.to_dict())


def clt32_check(p: dict, seed: int, threads: int) -> CriterionResult:
    plan = plan_from_dict({"law": GEM1, "seed": seed, "t_list": [p["t"]], "u_list": p["u"], "h": p["h"],
                           "j_rule": {"kind": "power", "alpha": p["alpha"]}, "replicates": p["replicates"]},
                          "clt32")
    return _from_report(4, "conditional-mean-clt", run_theorem32(plan, threads))


def vanish_check(p: dict, seed: int, threads: int) -> CriterionResult:
    plan = plan_from_dict({"law": GEM1, "seed": seed, "t_list": p["t"], "h": p["h"], "statistic": "Y2",
                           "j_rule": {"kind": "power", "alpha": p["alpha"]}, "replicates": p["replicates"]},
                          "vanish")
    return _from_report(5, "vanishing-terms", run_vanishing_terms(plan, threads))


def wlln_check(p: dict, seed: int, threads: int, mu_scale: float = 1.0) -> CriterionResult:
    d = {"law": GEM1, "seed": seed, "log_n": p["log_n"], "h": p["h"],
         "j_rule": {"kind": "power", "alpha": p["alpha"]}, "replicates": p["replicates"]}
    if mu_scale != 1.0:
        d["mu_override"] = compute_moments(gem(1.0)).mu * mu_scale
    return _from_report(6, "weak-law", run_wlln(plan_from_dict(d, "wlln"), threads))


def clt21_check(p: dict, seed: int, threads: int) -> CriterionResult:
    plan = plan_from_dict({"law": GEM1, "seed": seed, "log_n": [p["log_n"]], "u_list": p["u"], "h": p["h"],
                           "j_rule": {"kind": "power", "alpha": p["alpha"]}, "replicates": p["replicates"]},
                          "clt21")
    return _from_report(7, "occupancy-clt", run_theorem21(plan, threads))


def _criteria(seed: int, threads: int, mu_scale: float) -> dict[int, Callable[[], CriterionResult]]:
    a = ACCEPTANCE
    return {
        1: lambda: renewal_oracle_check(**a["renewal_oracle"]),
        2: lambda: prop41_check(**a["prop41"]),
        3: lambda: expansion_check(**a["expansion"]),
        4: lambda: clt32_check(a["clt32"], derive_seed(seed, 4), threads),
        5: lambda: vanish_check(a["vanish"], derive_seed(seed, 5), threads),
        6: lambda: wlln_check(a["wlln"], derive_seed(seed, 6), threads, mu_scale),
        7: lambda: clt21_check(a["clt21"], derive_seed(seed, 7), threads),
        8: lambda: variance_check(a["variance"]["t"], a["variance"]["levels"], a["variance"]["replicates"],
                                  a["variance"]["h"], derive_seed(seed, 8), threads),
        9: lambda: gap_check(a["gap"]["log_n"], a["gap"]["j"], a["gap"]["h"]),
        10: lambda: small_instance_check(a["small_instances"]["runs"], a["small_instances"]["max_balls"],
                                         derive_seed(seed, 10), threads),
        11: lambda: limit_law_check(a["limit_law"]["u"], a["limit_law"]["paths"], a["limit_law"]["tol"],
                                    derive_seed(seed, 11)),
    }


def run_acceptance(out_dir: str | Path, seed: int = ACCEPTANCE_SEED, threads: int = 1,
                   only: Sequence[int] | None = None, mu_scale: float = 1.0) -> RunManifest:
    """
    Runs the selected criteria (all by default), writing acceptance_<k>.json per
    criterion and the manifest last. A criterion that raises is recorded as failed.
    """
    out_dir = Path(out_dir)
    criteria = _criteria(seed, threads, mu_scale)
    selected = sorted(only) if only else sorted(criteria)
    unknown = [k for k in selected if k not in criteria]
    if unknown:
        raise DomainError(f"unknown acceptance criteria {unknown}")
    config = {"command": "acceptance", "seed": seed, "criteria": selected, "parameters": ACCEPTANCE}
    if mu_scale != 1.0:
        config["mu_scale"] = mu_scale
    manifest = RunManifest("acceptance", config, seed)
    for k in selected:
        logger.info("acceptance criterion %d", k)
        start = time.perf_counter()
        try:
            result = criteria[k]()
        except LabError as exc:
            logger.error("criterion %d raised %s: %s", k, type(exc).__name__, exc)
            result = CriterionResult(k, f"criterion-{k}", False, error=f"{type(exc).__name__}: {exc}")
        result.seconds = time.perf_counter() - start
        logger.info("criterion %d (%s): %s in %.1fs", k, result.name, "pass" if result.passed else "FAIL",
                    result.seconds)
        path = write_json(out_dir / f"acceptance_{k:02d}.json", result.to_dict())
        manifest.add_output(f"criterion_{k:02d}", path)
        manifest.results[f"{k:02d}-{result.name}"] = bool(result.passed)
    manifest.seal(out_dir)
    return manifest
