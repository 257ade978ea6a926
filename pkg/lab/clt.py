"""
Monte Carlo harness for the limit theorems: occupancy CLT, conditional-mean CLT,
weak law, vanishing terms, the K-vs-rho gap and the first-order constant.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy import stats

from config import (
    CLT21_VARIANCE_BAND,
    CLT32_VARIANCE_BAND,
    CLT_CORRELATION_TOL,
    CLT_MEAN_STDERRS,
    GAP_RATIO_MAX,
    KS_MIN_PVALUE,
    LEMMA62_DISCREPANCY,
    TAIL_MARGIN,
    VANISH_DIRECT_BUDGET,
    WLLN_FINAL_MAX,
    Y3_DOMINANCE_RATIO,
)
from lab.limits import limit_covariance_matrix
from model.errors import DomainError, HypothesisUnmet
from model.grid import GridFunction
from model.laws import MomentSet, StepLaw, WeightLaw, compute_moments
from model.plans import ExperimentPlan
from renewal.bounds import leading_term
from renewal.convolution import RenewalGrids, build_renewal_grids
from renewal.variance import VarianceProfile, variance_profile
from sim.brw import conditional_mean, sample_prw, simulate_brw
from sim.occupancy import SchemeConfig, decompose_result, simulate_coupled, simulate_occupancy
from sim.streams import derive_seed, map_replicates, replicate_rng

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class Criterion:
    name: str
    value: float | None
    threshold: str
    passed: bool

    def to_dict(self) -> dict:
        return {"name": self.name, "value": self.value, "threshold": self.threshold, "passed": bool(self.passed)}


def log_scale(j_n: float, k: int, x: float, sigma2: float, mu: float) -> float:
    """log of floor(j_n)^{1/2} (k-1)! / (sigma^2 mu^{-2k-1} x^{2k-1})^{1/2}."""
    return (0.5 * math.log(math.floor(j_n)) + math.lgamma(k)
            - 0.5 * (math.log(sigma2) - (2 * k + 1) * math.log(mu) + (2 * k - 1) * math.log(x)))


@dataclass
class CltPoint:
    """
    One (n or t) point: raw[i, a] is the replicate-i raw value at u_list[a] and
    stat = scale * (raw - centering).
    """

    x: float
    j_n: float
    u_list: tuple[float, ...]
    levels: tuple[int, ...]
    raw: np.ndarray
    centering: np.ndarray
    scale: np.ndarray
    n: float | None = None
    ks_pvalues: tuple[float, ...] = ()

    def __post_init__(self):
        self.raw = np.asarray(self.raw, dtype=float).reshape(-1, len(self.u_list))

    @property
    def statistics(self) -> np.ndarray:
        return self.scale * (self.raw - self.centering)

    @property
    def replicates(self) -> int:
        return self.raw.shape[0]

    @property
    def mean(self) -> np.ndarray:
        return self.statistics.mean(axis=0)

    @property
    def variance(self) -> np.ndarray:
        return self.statistics.var(axis=0, ddof=1)

    @property
    def stderr(self) -> np.ndarray:
        return np.sqrt(self.variance / self.replicates)

    @property
    def covariance(self) -> np.ndarray:
        return np.atleast_2d(np.cov(self.statistics, rowvar=False, ddof=1))

    @property
    def correlation(self) -> np.ndarray:
        return np.atleast_2d(np.corrcoef(self.statistics, rowvar=False))

    @property
    def limit_covariance(self) -> np.ndarray:
        return limit_covariance_matrix(self.u_list)

    def goodness_of_fit(self) -> tuple[float, ...]:
        """Two-sided KS p-value per u against Normal(0, 1/(2u))."""
        out = []
        for a, u in enumerate(self.u_list):
            res = stats.kstest(self.statistics[:, a], "norm", args=(0.0, math.sqrt(1.0 / (2.0 * u))))
            out.append(float(res.pvalue))
        self.ks_pvalues = tuple(out)
        return self.ks_pvalues

    def to_dict(self) -> dict:
        d = {
            "x": self.x, "n": self.n, "j_n": self.j_n, "u_list": list(self.u_list), "levels": list(self.levels),
            "replicates": self.replicates, "centering": self.centering.tolist(), "scale": self.scale.tolist(),
            "mean": self.mean.tolist(), "limit_covariance": self.limit_covariance.tolist(),
            "ks_pvalues": list(self.ks_pvalues),
        }
        if self.replicates >= 2:
            d.update(variance=self.variance.tolist(), stderr=self.stderr.tolist(),
                     covariance=self.covariance.tolist(), correlation=self.correlation.tolist())
        return d

    def rows(self):
        stat = self.statistics
        for i in range(self.replicates):
            for a, u in enumerate(self.u_list):
                yield {"x": self.x, "replicate": i, "u": u, "level": self.levels[a],
                       "raw": self.raw[i, a], "centering": self.centering[a], "statistic": stat[i, a]}


@dataclass
class CltReport:
    name: str
    law: str
    points: list[CltPoint] = field(default_factory=list)
    criteria: list[Criterion] = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return all(c.passed for c in self.criteria)

    def to_dict(self) -> dict:
        return {"name": self.name, "law": self.law, "passed": self.passed,
                "criteria": [c.to_dict() for c in self.criteria],
                "points": [p.to_dict() for p in self.points]}

    def rows(self):
        for p in self.points:
            yield from p.rows()


def _mean_criteria(point: CltPoint) -> list[Criterion]:
    out = []
    for a, u in enumerate(point.u_list):
        z = float(point.mean[a] / point.stderr[a]) if point.stderr[a] > 0 else 0.0
        out.append(Criterion(f"mean x={point.x:g} u={u:g}", z, f"|z| < {CLT_MEAN_STDERRS:g}",
                             abs(z) < CLT_MEAN_STDERRS))
    return out


def _variance_criteria(point: CltPoint, band: tuple[float, float]) -> list[Criterion]:
    out = []
    lo, hi = band
    for a, u in enumerate(point.u_list):
        limit = 1.0 / (2.0 * u)
        v = float(point.variance[a])
        out.append(Criterion(f"variance x={point.x:g} u={u:g}", v,
                             f"in [{lo * limit:g}, {hi * limit:g}]", lo * limit <= v <= hi * limit))
    return out


def grids_for(plan: ExperimentPlan, x_max: float, j_max: int, margin: float = 0.0) -> RenewalGrids:
    t_max = max(plan.t_max or 0.0, x_max + margin)
    # one spare cell: log(round(n)) can sit just above log n
    t_max = (math.ceil(t_max / plan.h) + 1) * plan.h
    return build_renewal_grids(plan.law, plan.h, t_max, j_max)


def _occupancy_counts(seed: int, replicate: int, n: int, j_max: int, weight: WeightLaw) -> tuple[int, ...]:
    return simulate_occupancy(SchemeConfig(n, j_max, weight, seed), replicate).counts


def run_theorem21(plan: ExperimentPlan, threads: int = 1, grids: RenewalGrids | None = None) -> CltReport:
    """
    floor(j_n)^{1/2} (k-1)! (K_n(k) - V_k(log n)) / (sigma^2 mu^{-2k-1} (log n)^{2k-1})^{1/2},
    k = floor(j_n u), against Normal(0, 1/(2u)).
    """
    moments = compute_moments(plan.law)
    if not moments.sigma2 > 0:
        raise HypothesisUnmet("the occupancy CLT needs Var |log W| > 0")
    rule = plan.j_rule
    xs = [math.log(n) for n in plan.n_list]
    j_top = max(rule.level(x, max(plan.u_list)) for x in xs)
    if grids is None:
        grids = grids_for(plan, max(xs), j_top)
    report = CltReport("clt21", plan.law.label)
    for p, (n, x) in enumerate(zip(plan.n_list, xs)):
        levels = tuple(rule.level(x, u) for u in plan.u_list)
        balls = int(round(n))
        logger.info("clt21: n=%d (log n=%.4g), levels %s, %d replicates", balls, x, levels, plan.replicates)
        counts = map_replicates(_occupancy_counts, plan.replicates, derive_seed(plan.seed, p), threads,
                                (balls, max(levels), plan.weight))
        raw = np.array([[c[k - 1] for k in levels] for c in counts], dtype=float)
        centering = np.array([grids.level(k)(math.log(balls)) for k in levels])
        scale = np.array([math.exp(log_scale(rule.j_n(x), k, math.log(balls), moments.sigma2, moments.mu))
                          for k in levels])
        point = CltPoint(math.log(balls), rule.j_n(x), plan.u_list, levels, raw, centering, scale, n=balls)
        if point.replicates >= 2:
            point.goodness_of_fit()
            report.criteria += _mean_criteria(point)
            report.criteria += _variance_criteria(point, CLT21_VARIANCE_BAND)
        report.points.append(point)
    return report


def _conditional_sums(seed: int, replicate: int, law: StepLaw, t: float, prevs: list[GridFunction]) -> list[float]:
    prw = sample_prw(law, t, replicate_rng(seed, replicate))
    return [conditional_mean(prw.T, t, prev) for prev in prevs]


def run_theorem32(plan: ExperimentPlan, threads: int = 1, grids: RenewalGrids | None = None) -> CltReport:
    """
    floor(j u) normalized sum_r V_{k-1}(t - T_r) - V_k(t), k = floor(j u); only a
    level-one perturbed walk is simulated per replicate.
    """
    moments = compute_moments(plan.law)
    if not moments.sigma2 > 0:
        raise HypothesisUnmet("the conditional-mean CLT needs Var xi in (0, inf)")
    rule = plan.j_rule
    j_top = max(rule.level(t, max(plan.u_list)) for t in plan.t_list)
    if grids is None:
        grids = grids_for(plan, max(plan.t_list), j_top)
    report = CltReport("clt32", plan.law.label)
    profile = variance_profile(grids, j_top) if plan.replicates >= 2 and j_top >= 2 else None
    for p, t in enumerate(plan.t_list):
        levels = tuple(rule.level(t, u) for u in plan.u_list)
        logger.info("clt32: t=%g, levels %s, %d replicates", t, levels, plan.replicates)
        prevs = [grids.level(k - 1) for k in levels]
        sums = map_replicates(_conditional_sums, plan.replicates, derive_seed(plan.seed, p), threads,
                              (plan.law, t, prevs))
        centering = np.array([grids.level(k)(t) for k in levels])
        scale = np.array([math.exp(log_scale(rule.j_n(t), k, t, moments.sigma2, moments.mu)) for k in levels])
        point = CltPoint(float(t), rule.j_n(t), plan.u_list, levels, np.array(sums), centering, scale)
        if point.replicates >= 2:
            pvals = point.goodness_of_fit()
            report.criteria += _mean_criteria(point)
            report.criteria += _variance_criteria(point, CLT32_VARIANCE_BAND)
            for a, u in enumerate(plan.u_list):
                report.criteria.append(Criterion(f"ks t={t:g} u={u:g}", pvals[a], f"> {KS_MIN_PVALUE:g}",
                                                 pvals[a] > KS_MIN_PVALUE))
            limit_corr = _corr(point.limit_covariance)
            emp_corr = point.correlation
            for a in range(len(plan.u_list)):
                for b in range(a + 1, len(plan.u_list)):
                    diff = float(emp_corr[a, b] - limit_corr[a, b])
                    report.criteria.append(Criterion(
                        f"correlation t={t:g} u=({plan.u_list[a]:g},{plan.u_list[b]:g})", float(emp_corr[a, b]),
                        f"{limit_corr[a, b]:.4f} +/- {CLT_CORRELATION_TOL:g}", abs(diff) <= CLT_CORRELATION_TOL,
                    ))
            report.criteria += _dominance_criteria(point, t, grids, profile)
        report.points.append(point)
    return report


def _dominance_criteria(point: CltPoint, t: float, grids: RenewalGrids,
                        profile: VarianceProfile | None) -> list[Criterion]:
    """Var Y3 from the replicates against the exact E Y2^2 = (D_{k-1} * V)(t); level 1 has Y2 = 0."""
    out = []
    if profile is None:
        return out
    for a, k in enumerate(point.levels):
        if k < 2:
            continue
        y2 = profile.y2_second_moment(k, t, grids)
        ratio = float(point.raw[:, a].var(ddof=1) / y2) if y2 > 0 else math.inf
        out.append(Criterion(f"dominance t={t:g} level={k}", ratio, f">= {Y3_DOMINANCE_RATIO:g}",
                             ratio >= Y3_DOMINANCE_RATIO))
    return out


def _corr(cov: np.ndarray) -> np.ndarray:
    d = np.sqrt(np.diag(cov))
    return cov / np.outer(d, d)


@dataclass(frozen=True)
class WllnRow:
    n: float
    log_n: float
    j: int
    median_ratio: float
    median_abs_dev: float
    iqr: float | None

    def to_dict(self) -> dict:
        return dict(self.__dict__)


@dataclass
class TrendReport:
    name: str
    law: str
    rows: list = field(default_factory=list)
    criteria: list[Criterion] = field(default_factory=list)
    replicate_rows: list[dict] = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return all(c.passed for c in self.criteria)

    def to_dict(self) -> dict:
        return {"name": self.name, "law": self.law, "passed": self.passed,
                "criteria": [c.to_dict() for c in self.criteria],
                "rows": [r.to_dict() for r in self.rows]}


def _iqr(values: np.ndarray) -> float | None:
    if values.size < 2:
        return None
    q1, q3 = np.percentile(values, [25, 75])
    return float(q3 - q1)


def _strictly_decreasing(values: Sequence[float]) -> bool:
    return all(b < a for a, b in zip(values, values[1:]))


def run_wlln(plan: ExperimentPlan, threads: int = 1) -> TrendReport:
    """j_n! mu^{j_n} K_n(j_n) / (log n)^{j_n} along increasing n."""
    mu = plan.mu_override if plan.mu_override is not None else compute_moments(plan.law).mu
    report = TrendReport("wlln", plan.law.label)
    for p, n in enumerate(plan.n_list):
        balls = int(round(n))
        x = math.log(balls)
        j = plan.j_rule.level(x)
        logger.info("wlln: n=%d j=%d, %d replicates", balls, j, plan.replicates)
        counts = map_replicates(_occupancy_counts, plan.replicates, derive_seed(plan.seed, p), threads,
                                (balls, j, plan.weight))
        K = np.array([c[j - 1] for c in counts], dtype=float)
        ratio = np.exp(math.lgamma(j + 1) + j * math.log(mu) - j * math.log(x)) * K
        report.rows.append(WllnRow(float(balls), x, j, float(np.median(ratio)),
                                   float(np.median(np.abs(ratio - 1.0))), _iqr(ratio)))
        report.replicate_rows += [{"n": balls, "replicate": i, "j": j, "K": int(k), "ratio": r}
                                  for i, (k, r) in enumerate(zip(K, ratio))]
    devs = [r.median_abs_dev for r in report.rows]
    report.criteria.append(Criterion("median |ratio-1| decreasing", devs[-1], "strictly decreasing",
                                     _strictly_decreasing(devs)))
    report.criteria.append(Criterion("final median |ratio-1|", devs[-1], f"< {WLLN_FINAL_MAX:g}",
                                     devs[-1] < WLLN_FINAL_MAX))
    return report


@dataclass(frozen=True)
class VanishRow:
    x: float
    j: int
    method: str
    second_moment: float
    stderr: float | None
    exact: float | None
    iqr: float | None

    def to_dict(self) -> dict:
        return dict(self.__dict__)


def theorem31_norm(j: int, k: int, t: float, mu: float) -> float:
    return math.exp(0.5 * math.log(j) + math.lgamma(k) + k * math.log(mu) - (k - 0.5) * math.log(t))


def _y2_direct(seed: int, replicate: int, law: StepLaw, k: int, t: float, prev: GridFunction) -> float:
    sample = simulate_brw(law, k, t, replicate_rng(seed, replicate))
    return sample.value - conditional_mean(sample.first_generation, t, prev)


def _y2_conditional(seed: int, replicate: int, law: StepLaw, t: float, D_prev: np.ndarray, step: float) -> float:
    prw = sample_prw(law, t, replicate_rng(seed, replicate))
    if not prw.T.size:
        return 0.0
    nodes = step * np.arange(len(D_prev))
    return float(np.sum(np.interp(t - prw.T, nodes, D_prev)))


def _y1_replicate(seed: int, replicate: int, n: int, j: int, weight: WeightLaw, levels) -> float:
    result = simulate_coupled(SchemeConfig(n, j, weight, seed), replicate=replicate)
    return decompose_result(result, j, levels).Y1


def run_vanishing_terms(plan: ExperimentPlan, threads: int = 1) -> TrendReport:
    """
    Second moments of the normalized lower-order terms:
    - Y2: floor(j)^{1/2}(j-1)! m^j (N_j(t) - sum_r V_{j-1}(t - T_r)) / t^{j-1/2}; simulated directly
      while V_j(t) < VANISH_DIRECT_BUDGET, otherwise from E[stat^2 | first generation]
      = norm^2 sum_r D_{j-1}(t - T_r)
    - Y1: K_n(j) - rho_j(n) under the occupancy normalization
    """
    moments = compute_moments(plan.law)
    report = TrendReport(f"vanish-{plan.statistic}", plan.law.label)
    if plan.statistic == "Y2":
        xs = list(plan.t_list)
        js = [plan.j_rule.level(t) for t in xs]
        grids = grids_for(plan, max(xs), max(js))
        profile: VarianceProfile | None = None
        for p, (t, j) in enumerate(zip(xs, js)):
            seed = derive_seed(plan.seed, p)
            norm = theorem31_norm(j, j, t, moments.mu)
            exact = None
            if j >= 2:
                if profile is None or profile.j_max < j - 1:
                    profile = variance_profile(grids, max(js) - 1)
                exact = norm**2 * profile.y2_second_moment(j, t, grids)
            if j < 2 or grids.level(j)(t) < VANISH_DIRECT_BUDGET:
                method = "direct"
                vals = map_replicates(_y2_direct, plan.replicates, seed, threads,
                                      (plan.law, j, t, grids.level(j - 1)))
                sq = (norm * np.array(vals, dtype=float)) ** 2
            else:
                method = "conditional"
                vals = map_replicates(_y2_conditional, plan.replicates, seed, threads,
                                      (plan.law, t, profile.D[j - 2], grids.step))
                sq = norm**2 * np.array(vals, dtype=float)
            logger.info("vanish Y2: t=%g j=%d via %s", t, j, method)
            report.rows.append(_vanish_row(t, j, method, sq, exact))
    else:
        xs = [math.log(n) for n in plan.n_list]
        js = [plan.j_rule.level(x) for x in xs]
        grids = grids_for(plan, max(xs), max(js))
        for p, (n, x, j) in enumerate(zip(plan.n_list, xs, js)):
            balls = int(round(n))
            vals = map_replicates(_y1_replicate, plan.replicates, derive_seed(plan.seed, p), threads,
                                  (balls, j, plan.weight, grids.levels))
            scale = math.exp(log_scale(j, j, math.log(balls), moments.sigma2, moments.mu))
            sq = (scale * np.array(vals, dtype=float)) ** 2
            logger.info("vanish Y1: n=%d j=%d", balls, j)
            report.rows.append(_vanish_row(math.log(balls), j, "direct", sq, None))
    seconds = [r.second_moment for r in report.rows]
    report.criteria.append(Criterion(f"{plan.statistic} second moment decreasing", seconds[-1],
                                     "strictly decreasing", _strictly_decreasing(seconds)))
    return report


def _vanish_row(x: float, j: int, method: str, sq: np.ndarray, exact: float | None) -> VanishRow:
    stderr = float(sq.std(ddof=1) / math.sqrt(sq.size)) if sq.size >= 2 else None
    return VanishRow(float(x), j, method, float(sq.mean()), stderr, exact, _iqr(sq))


@dataclass(frozen=True)
class GapTerms:
    n: float
    j: int
    tail_term: float
    sieve_term: float
    base: float

    @property
    def tail_ratio(self) -> float | None:
        return self.tail_term / self.base if self.base > 0 else None

    @property
    def sieve_ratio(self) -> float | None:
        return self.sieve_term / self.base if self.base > 0 else None

    def to_dict(self) -> dict:
        return {"n": self.n, "log_n": math.log(self.n), "j": self.j, "tail_term": self.tail_term,
                "sieve_term": self.sieve_term, "base": self.base, "tail_ratio": self.tail_ratio,
                "sieve_ratio": self.sieve_ratio}


def gap_bound_eval(n: float, j: int, levels) -> GapTerms:
    """
    With x = log n and E rho_j(e^y) = V_j(y):
    tail term  = n int_(n,inf) z^{-1} dE rho_j(z) = int_(x,inf) e^{x-y} dV_j(y)
    sieve term = int_[1,n] e^{-n/z} dE rho_j(z)   = int_[0,x] e^{-e^{x-y}} dV_j(y)
    """
    if n < 1:
        raise DomainError(f"ball count must be >= 1, got {n!r}")
    if j < 1:
        raise DomainError(f"level must be >= 1, got {j}")
    x = math.log(n)
    Vj = levels[j]
    Vj.require(x + TAIL_MARGIN)
    tail = Vj.integrate(lambda y: np.exp(x - y), x, Vj.t_max)
    sieve = Vj.integrate(lambda y: np.exp(-np.exp(x - y)), 0.0, x, include_lower=True)
    return GapTerms(float(n), j, tail, sieve, float(levels[j - 1](x)))


def run_gap(plan: ExperimentPlan) -> TrendReport:
    xs = [math.log(n) for n in plan.n_list]
    grids = grids_for(plan, max(xs), plan.j, margin=TAIL_MARGIN)
    report = TrendReport("gap", plan.law.label)
    for n in plan.n_list:
        terms = gap_bound_eval(n, plan.j, grids.levels)
        report.rows.append(terms)
        for label, ratio in (("tail", terms.tail_ratio), ("sieve", terms.sieve_ratio)):
            report.criteria.append(Criterion(f"{label} ratio log n={math.log(n):g}", ratio,
                                             f"<= {GAP_RATIO_MAX:g}", ratio is not None and ratio <= GAP_RATIO_MAX))
    return report


@dataclass(frozen=True)
class FirstOrderConstant:
    t: float
    replicates: int
    empirical: float
    stderr: float
    squared_form: float
    root_form: float

    @property
    def forms_disagree(self) -> bool:
        return abs(self.squared_form - self.root_form) > LEMMA62_DISCREPANCY * max(self.squared_form, self.root_form)

    @property
    def closer(self) -> str:
        return "root" if abs(self.empirical - self.root_form) <= abs(self.empirical - self.squared_form) else "squared"

    def to_dict(self) -> dict:
        d = dict(self.__dict__)
        d.update(forms_disagree=self.forms_disagree, closer=self.closer)
        return d


def _abs_deviation(seed: int, replicate: int, law: StepLaw, t: float, mean: float) -> float:
    return abs(sample_prw(law, t, replicate_rng(seed, replicate)).count - mean)


def lemma62_constant(law: StepLaw, t: float, replicates: int, seed: int, h: float = 1e-2,
                     threads: int = 1) -> FirstOrderConstant:
    """
    Empirical t^{-1/2} E|N(t) - V(t)| next to s^2 m^{-3} E|B(1)| and s m^{-3/2} E|B(1)|.
    """
    m: MomentSet = compute_moments(law)
    grids = build_renewal_grids(law, h, math.ceil(t / h) * h, 1)
    vals = np.array(map_replicates(_abs_deviation, replicates, seed, threads, (law, t, grids.V(t))))
    e_abs_b = math.sqrt(2.0 / math.pi)
    scaled = vals / math.sqrt(t)
    return FirstOrderConstant(
        float(t), replicates, float(scaled.mean()),
        float(scaled.std(ddof=1) / math.sqrt(replicates)) if replicates >= 2 else math.nan,
        m.sigma2 / m.mu**3 * e_abs_b, m.s / m.mu**1.5 * e_abs_b,
    )


def correction_factor_table(levels, moments: MomentSet, t: float, j_list: Sequence[int]) -> list[dict]:
    """V_j(t) / (t^j / (j! m^j)) along j; exploratory."""
    rows = []
    for j in j_list:
        lead = float(leading_term(t, j, moments.mu))
        rows.append({"t": float(t), "j": int(j), "ratio": levels[j](t) / lead})
    return rows
