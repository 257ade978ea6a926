from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np
from scipy import integrate, special

from config import (
    BOUND_TOL_FACTOR,
    ENVELOPE_TAIL_TOL,
    EXPANSION_NOISE_FLOOR,
    GAP_RATIO_MAX,
    SUBADDITIVITY_MAX_NODES,
    TAIL_MARGIN,
)
from model.errors import (
    DomainError,
    EnvelopeDiverges,
    GammaNonpositive,
    GridTooShort,
    HypothesisUnmet,
    NoisyTail,
    RangeEmpty,
)
from model.grid import BoundReport, GridFunction
from model.laws import MomentSet, StepLaw
from renewal.convolution import guard_overflow, stieltjes_sum

logger = logging.getLogger(__name__)


def grid_tolerance(grid: GridFunction) -> np.ndarray:
    """Per-node tolerance 10 h (1 + local slope); atomic grids are exact at nodes up to round-off."""
    vals = grid.values
    if grid.atomic:
        return 1e-9 * (1.0 + np.abs(vals))
    up = np.diff(vals, append=vals[-1])
    down = np.diff(vals, prepend=vals[0])
    slope = np.maximum(up, down) / grid.step
    return BOUND_TOL_FACTOR * grid.step * (1.0 + slope)


def estimate_c0(U: GridFunction, moments: MomentSet) -> float:
    return float(np.max(U.values - U.nodes / moments.mu))


def estimate_c(U: GridFunction, moments: MomentSet) -> float:
    return max(estimate_c0(U, moments), moments.e_eta / moments.mu)


def check_lorden(U: GridFunction, moments: MomentSet) -> BoundReport:
    """U(t) - t/m <= c0, with c0 the grid sup, checked against Lorden's E xi^2 / m^2."""
    m = moments.mu
    excess = U.values - U.nodes / m
    c0 = float(np.max(excess))
    lorden = moments.e_xi2 / m**2
    return BoundReport.from_slack(
        "lorden", U.nodes, lorden - excess, grid_tolerance(U),
        {"c0": c0, "m": m, "lorden_constant": lorden},
    )


def check_V_band(V: GridFunction, U: GridFunction, G: GridFunction, moments: MomentSet) -> BoundReport:
    """
    |V(t) - t/m| <= c with c = max(c0, E eta / m), and
    0 <= V(t) - m^{-1} ∫_0^t G <= c0 (reported under details.integral_band).
    """
    V.check_compatible(U)
    V.check_compatible(G)
    m = moments.mu
    c0 = estimate_c0(U, moments)
    c = max(c0, moments.e_eta / m)
    t = V.nodes
    tol = grid_tolerance(V)
    band = BoundReport.from_slack("V-band", t, c - np.abs(V.values - t / m), tol, {"c0": c0, "c": c, "m": m})

    if G.atomic:
        # exact for a right-continuous step with jumps at nodes
        int_G = np.concatenate(([0.0], np.cumsum(G.values[:-1]) * G.step))
    else:
        int_G = integrate.cumulative_trapezoid(G.values, t, initial=0.0)
    gap = V.values - int_G / m
    lower = BoundReport.from_slack("V-integral-lower", t, gap, tol)
    upper = BoundReport.from_slack("V-integral-upper", t, c0 - gap, tol)
    integral = lower if lower.max_slack <= upper.max_slack else upper
    holds = band.holds and lower.holds and upper.holds
    return BoundReport(
        "V-band", holds, min(band.max_slack, integral.max_slack),
        band.arg_max if band.max_slack <= integral.max_slack else integral.arg_max,
        band.constants, band.tolerance,
        {"band": band.to_dict(), "integral_band": {"lower": lower.to_dict(), "upper": upper.to_dict()}},
    )


def _poly_terms(t: np.ndarray, j: int, c: float, m: float, upto: int) -> np.ndarray:
    """sum_{i<upto} C(j,i) c^{j-i} t^i / (i! m^i)."""
    out = np.zeros_like(t)
    for i in range(upto):
        out += math.comb(j, i) * c ** (j - i) * t**i / (math.factorial(i) * m**i)
    return out


def leading_term(t, j: int, m: float):
    t = np.asarray(t, dtype=float)
    return t**j / (math.factorial(j) * m**j)


def check_prop41(levels: Sequence[GridFunction], j_list: Sequence[int], moments: MomentSet,
                 c: float) -> BoundReport:
    """|V_j(t) - t^j/(j! m^j)| <= sum_{i<j} C(j,i) c^{j-i} t^i/(i! m^i) at every node, each j."""
    m = moments.mu
    per_j = {}
    worst = None
    for j in j_list:
        guard_overflow(levels[j].t_max, j)
        Vj = levels[j]
        t = Vj.nodes
        slack = _poly_terms(t, j, c, m, j) - np.abs(Vj.values - leading_term(t, j, m))
        rep = BoundReport.from_slack(f"power-band-j{j}", t, slack, grid_tolerance(Vj))
        per_j[str(j)] = rep.to_dict()
        if worst is None or (rep.max_slack + rep.tolerance) < (worst.max_slack + worst.tolerance):
            worst = rep
    holds = all(v["holds"] for v in per_j.values())
    return BoundReport("power-band", holds, worst.max_slack, worst.arg_max,
                       {"c": c, "m": m, "j_list": list(j_list)}, worst.tolerance, {"per_level": per_j})


def check_lemma42(levels: Sequence[GridFunction], j: int, moments: MomentSet, c: float) -> list[BoundReport]:
    """
    On s >= 2 c m j^2, for 1 <= k <= j:
    - V_k(s) <= 2 s^k / (k! m^k)
    - sum_{i<k} C(k,i) c^{k-i} s^i/(i! m^i) <= 2 c k s^{k-1} / ((k-1)! m^{k-1})
    - sum_{i<k} C(k,i) c^{k-i} s^{i+1}/((i+1)! m^{i+1}) <= 2 c s^k / ((k-1)! m^k)
    """
    m = moments.mu
    s0 = 2.0 * c * m * j * j
    t_max = levels[j].t_max
    if s0 > t_max:
        raise RangeEmpty(f"admissible range starts at {s0:g} beyond t_max={t_max:g}")
    reports = []
    consts = {"c": c, "m": m, "s0": s0}
    for k in range(1, j + 1):
        Vk = levels[k]
        mask = Vk.nodes >= s0
        s = Vk.nodes[mask]
        bound = 2.0 * leading_term(s, k, m)
        reports.append(BoundReport.from_slack(f"doubling-V{k}", s, bound - Vk.values[mask],
                                              grid_tolerance(Vk)[mask], consts))

        lhs = _poly_terms(s, k, c, m, k)
        rhs = 2.0 * c * k * s ** (k - 1) / (math.factorial(k - 1) * m ** (k - 1))
        reports.append(BoundReport.from_slack(f"doubling-sum{k}", s, rhs - lhs, 1e-12 * rhs, consts))

        lhs = np.zeros_like(s)
        for i in range(k):
            lhs += math.comb(k, i) * c ** (k - i) * s ** (i + 1) / (math.factorial(i + 1) * m ** (i + 1))
        rhs = 2.0 * c * s**k / (math.factorial(k - 1) * m**k)
        reports.append(BoundReport.from_slack(f"doubling-int{k}", s, rhs - lhs, 1e-12 * rhs, consts))
    return reports


def _log_poly_sum(log_t: float, a: float, m: float, top: int, binom_n: int) -> float:
    """log sum_{i=0}^{top} C(binom_n, i) a^{binom_n-i} t^i / (i! m^i), computed in log space."""
    i = np.arange(top + 1)
    log_terms = (
        special.gammaln(binom_n + 1) - special.gammaln(i + 1) - special.gammaln(binom_n - i + 1)
        + (binom_n - i) * math.log(a) + i * log_t - special.gammaln(i + 1) - i * math.log(m)
    )
    return float(special.logsumexp(log_terms))


def lemma42_limits(t_list: Sequence[float], moments: MomentSet, a: float, alpha: float = 0.4) -> list[dict]:
    """
    The two normalized sums that vanish when j = floor(t^alpha) = o(t^{1/2}):
    (j-1)! m^{j-1}/(j t^{j-1}) sum_{i<=j-2} C(j,i) a^{j-i} t^i/(i! m^i), and
    (j-1)! m^{j-1}/(j t^{j-1}) (j-1) sum_{i<=j-2} C(j-2,i) a^{j-2-i} t^i/(i! m^i).
    """
    if not 0 < alpha < 0.5:
        raise DomainError(f"alpha must lie in (0, 1/2), got {alpha!r}")
    m = moments.mu
    rows = []
    for t in t_list:
        j = int(math.floor(t**alpha))
        if j < 2:
            rows.append({"t": t, "j": j, "first": 0.0, "second": 0.0, "envelope": 0.0})
            continue
        log_t = math.log(t)
        log_norm = math.lgamma(j) + (j - 1) * math.log(m) - math.log(j) - (j - 1) * log_t
        first = math.exp(log_norm + _log_poly_sum(log_t, a, m, j - 2, j))
        second = math.exp(log_norm + math.log(j - 1) + _log_poly_sum(log_t, a, m, j - 2, j - 2))
        q = a * j * j / (m * t)
        envelope = (a * j) ** 2 / (m * t) / (1.0 - q) if q < 1 else math.inf
        rows.append({"t": t, "j": j, "first": first, "second": second, "envelope": envelope})
    return rows


def tail_truncation_diag(levels: Sequence[GridFunction], j: int, t: float, T_list: Sequence[float],
                         moments: MomentSet) -> list[tuple[float, float]]:
    """
    j^{1/2} (j-1)! m^j t^{-(j-1/2)} ∫_(Tt/j, t] y^{1/2} d_y(-V_{j-1}(t - y)) for each T.
    The jump V_{j-1}(0) sits at y = t.
    """
    if j < 1:
        raise DomainError("level must be >= 1")
    Vp = levels[j - 1]
    K = Vp.index_of(t)
    h = Vp.step
    # vals[i] = V_{j-1}(t - i h); cell (y_{i-1}, y_i] carries vals[i-1] - vals[i]
    vals = Vp.values[: K + 1][::-1]
    dm = -np.diff(vals, prepend=vals[0])
    y = h * np.arange(K + 1)
    where = y if Vp.atomic else y - 0.5 * h
    norm = math.exp(0.5 * math.log(j) + math.lgamma(j) + j * math.log(moments.mu) - (j - 0.5) * math.log(t))
    out = []
    for T in T_list:
        if T >= j:
            out.append((T, 0.0))
            continue
        lo = T * t / j
        mask = where > lo
        mask[0] = False
        value = float(np.sum(np.sqrt(np.maximum(where[mask], 0.0)) * dm[mask]))
        value += math.sqrt(t) * vals[-1]
        out.append((T, norm * value))
    return out


def tail_truncation_envelope(T: float, m: float) -> float:
    """m ∫_T^inf e^{-y} y^{-1/2} dy + m T^{1/2} e^{-T}."""
    return m * math.sqrt(math.pi) * special.erfc(math.sqrt(T)) + m * math.sqrt(T) * math.exp(-T)


def unit_interval_sups(f_values: np.ndarray, h: float) -> np.ndarray:
    """sup of f over [n-1, n) for n = 1, 2, ... covering the tabulated range."""
    per = max(int(round(1.0 / h)), 1)
    n_cells = int(math.ceil(len(f_values) / per))
    padded = np.full(n_cells * per, -np.inf)
    padded[: len(f_values)] = f_values
    return np.max(padded.reshape(n_cells, per), axis=1)


def dri_convolution_bound(f, V: GridFunction, U: GridFunction, levels: Sequence[GridFunction], j: int,
                          t_range: tuple[float, float], label: str = "f") -> BoundReport:
    """
    Checks g(x) = ∫_[0,x] f(x-y) dV(y) <= r = U(1) * sum_n sup_[n-1,n) f at every node, and
    reports sup of (f * V_j)(t) / V_{j-1}(t) over t in t_range.
    f is a callable on [0, inf) or an array tabulated on V's grid.
    """
    V.check_compatible(U)
    nodes = V.nodes
    f_vals = np.asarray(f(nodes) if callable(f) else f, dtype=float)
    if f_vals.shape != nodes.shape:
        raise DomainError("tabulated f must match the grid")
    if np.any(f_vals < 0):
        raise DomainError("f must be nonnegative")
    sups = unit_interval_sups(f_vals, V.step)
    total = float(np.sum(sups))
    if sups[-1] > ENVELOPE_TAIL_TOL * max(total, 1.0):
        raise EnvelopeDiverges(f"envelope still {sups[-1]:g} on the last unit interval; sum not settled")
    r = U(1.0) * total
    g = stieltjes_sum(f_vals, V)
    tol = grid_tolerance(V) * (1.0 + float(np.max(f_vals, initial=0.0)))
    report = BoundReport.from_slack("dri-convolution", nodes, r - g, tol,
                                    {"r": r, "U(1)": U(1.0), "envelope_sum": total})

    lo, hi = t_range
    conv = stieltjes_sum(f_vals, levels[j])
    prev = levels[j - 1].values
    mask = (nodes >= lo) & (nodes <= hi)
    ratio = np.divide(conv[mask], prev[mask], out=np.zeros(int(mask.sum())), where=prev[mask] > 0)
    sup_ratio = float(np.max(ratio, initial=0.0))
    details = {"f": label, "sup_ratio": sup_ratio, "j": j, "t_range": [lo, hi], "sup_g": float(np.max(g))}
    return BoundReport(report.name, report.holds, report.max_slack, report.arg_max,
                       report.constants, report.tolerance, details)


def exp_tail_bound(levels: Sequence[GridFunction], j: int, t_points: Sequence[float], law: StepLaw,
                   bound: float = GAP_RATIO_MAX) -> BoundReport:
    """
    ∫_(t,inf) e^{t-y} dV_j(y) / V_{j-1}(t) over t_points, checked against a constant bound.
    At level 1 the tail itself is also checked against the cap 1/(1 - E e^{-xi}) that
    subadditivity gives, and its distance from rho = E e^{-eta}/(1 - E e^{-xi}) is reported.
    """
    Vj = levels[j]
    cap = 1.0 / (1.0 - law.laplace_xi(1.0))
    rho = law.laplace_eta(1.0) * cap
    ratios, tails = [], []
    for t in t_points:
        if t + TAIL_MARGIN > Vj.t_max + 1e-9:
            raise GridTooShort(f"tail at t={t:g} needs the grid up to {t + TAIL_MARGIN:g}")
        tail = Vj.integrate(lambda y: np.exp(t - y), t, Vj.t_max)
        base = levels[j - 1](t)
        tails.append(tail)
        ratios.append(tail / base if base > 0 else (0.0 if tail == 0 else math.inf))
    ratios = np.array(ratios)
    details = {"ratios": ratios.tolist(), "tails": tails}
    slack = bound - ratios
    tol = BOUND_TOL_FACTOR * Vj.step
    if j == 1:
        tails_arr = np.asarray(tails)
        details["tail_minus_rho"] = float(np.max(tails_arr) - rho)
        details["within_rho"] = bool(np.all(tails_arr <= rho + tol))
        slack = np.minimum(slack, cap - tails_arr)
    return BoundReport.from_slack(f"exp-tail-j{j}", np.asarray(t_points, dtype=float), slack,
                                  tol, {"rho": rho, "tail_cap": cap, "bound": bound}, details)


def check_subadditivity(V: GridFunction, U: GridFunction, max_nodes: int = SUBADDITIVITY_MAX_NODES) -> BoundReport:
    """V(x+y) - V(x) <= U(y) on all pairs of a node subgrid with x + y <= t_max."""
    V.check_compatible(U)
    stride = max(1, int(math.ceil(V.size / max_nodes)))
    idx = np.arange(0, V.size, stride)
    tol_v = grid_tolerance(V)
    worst_slack, worst_at, worst_tol, holds = math.inf, math.nan, 0.0, True
    for iy in idx:
        ix = idx[idx + iy < V.size]
        inc = V.values[ix + iy] - V.values[ix]
        slack = U.values[iy] - inc
        tol = tol_v[ix + iy] + tol_v[ix] + 1e-12
        holds &= bool(np.all(slack >= -tol))
        k = int(np.argmin(slack + tol))
        if slack[k] + tol[k] < worst_slack + worst_tol:
            worst_slack, worst_at, worst_tol = float(slack[k]), float(iy * V.step), float(tol[k])
    return BoundReport("subadditivity", holds, worst_slack, worst_at, {"stride": stride}, worst_tol,
                       {"y_at_worst": worst_at})


@dataclass(frozen=True)
class ExpansionFit:
    gamma_hat: float
    decay_rate: float
    report: dict

    def to_dict(self) -> dict:
        return {"gamma_hat": self.gamma_hat, "decay_rate": self.decay_rate, "report": self.report}


def expansion_fit(V: GridFunction, moments: MomentSet, law: StepLaw,
                  noise_floor: float = EXPANSION_NOISE_FLOOR) -> ExpansionFit:
    """
    V(t) = t/m + gamma + T(t) with |T(t)| <= C0 e^{-beta0 t}:
    - gamma_hat: mean of V(t) - t/m over the last quarter of the grid
    - decay_rate: least-squares slope of log|V(t) - t/m - gamma| over the leading
      run of nodes where the residual stays above noise_floor
    """
    if law.xi_is_atomic:
        raise HypothesisUnmet("xi has no absolutely continuous component")
    t = V.nodes
    excess = V.values - t / moments.mu
    gamma_hat = float(np.mean(excess[3 * V.size // 4:]))
    residual = np.abs(excess - moments.gamma)
    above = residual > noise_floor
    run = int(np.argmin(above)) if not np.all(above) else V.size
    report = {"gamma": moments.gamma, "gamma_error": gamma_hat - moments.gamma, "fit_nodes": run,
              "noise_floor": noise_floor, "moment_radius": law.exponential_moment_radius}
    if run < 2:
        raise NoisyTail("residual never rises above the noise floor", gamma_hat)
    slope, intercept = np.polyfit(t[:run], np.log(residual[:run]), 1)
    report["log_C0"] = float(intercept)
    return ExpansionFit(gamma_hat, float(slope), report)


def prop71_ratio(levels: Sequence[GridFunction], j_rule, moments: MomentSet,
                 t_points: Sequence[float]) -> list[tuple[float, int, float]]:
    """
    (V_j(t) - t^j/(j! m^j)) / (gamma j t^{j-1} / ((j-1)! m^{j-1})) for j = j_rule(t).
    j_rule is an int or a callable of t.
    """
    gamma = moments.gamma
    if not gamma > 0:
        raise GammaNonpositive(f"gamma = {gamma:g} must be positive")
    m = moments.mu
    rows = []
    for t in t_points:
        j = int(j_rule(t)) if callable(j_rule) else int(j_rule)
        if j >= len(levels):
            raise DomainError(f"level {j} not built")
        guard_overflow(t, j)
        excess = levels[j](t) - float(leading_term(t, j, m))
        scale = gamma * j * t ** (j - 1) / (math.factorial(j - 1) * m ** (j - 1))
        rows.append((float(t), j, excess / scale))
    return rows


def expansion_polynomial(t, j: int, moments: MomentSet):
    """W_j(t) = sum_{i<=j} C(j,i) gamma^{j-i} t^i / (i! m^i)."""
    t = np.asarray(t, dtype=float)
    g, m = moments.gamma, moments.mu
    out = np.zeros_like(t)
    for i in range(j + 1):
        out = out + math.comb(j, i) * g ** (j - i) * t**i / (math.factorial(i) * m**i)
    return out


def check_expansion_remainder(levels: Sequence[GridFunction], j_list: Sequence[int], moments: MomentSet,
                              c: float, t_min: float = 1.0) -> BoundReport:
    """
    Witness for |V_j - W_j| <= A (j-1) sum_{i<=j-2} C(j-2,i) c^{j-2-i} t^i/(i! m^i):
    A is estimated as the sup of the ratio over nodes t >= t_min, per level j >= 2.
    """
    m = moments.mu
    witnesses = {}
    for j in j_list:
        if j < 2:
            continue
        Vj = levels[j]
        mask = Vj.nodes >= t_min
        t = Vj.nodes[mask]
        rem = np.abs(Vj.values[mask] - expansion_polynomial(t, j, moments))
        scale = (j - 1) * _poly_terms(t, j - 2, c, m, j - 1)
        witnesses[str(j)] = float(np.max(rem / scale))
    finite = all(math.isfinite(a) for a in witnesses.values())
    worst = max(witnesses.values(), default=0.0)
    return BoundReport("expansion-remainder", finite, -worst, math.nan, {"c": c, "m": m},
                       0.0, {"A_hat": witnesses})


def prop22_ratio(levels: Sequence[GridFunction], j: int, moments: MomentSet,
                 t_points: Sequence[float]) -> list[dict]:
    """
    j^{1/2} (j-1)! m^j (V_j(t) - t^j/(j! m^j)) / t^{j-1/2} next to m gamma j^{3/2} t^{-1/2}.
    """
    m = moments.mu
    rows = []
    for t in t_points:
        excess = levels[j](t) - float(leading_term(t, j, m))
        value = math.sqrt(j) * math.factorial(j - 1) * m**j * excess / t ** (j - 0.5)
        predicted = m * moments.gamma * j**1.5 / math.sqrt(t)
        rows.append({"t": float(t), "j": j, "value": value, "predicted": predicted})
    return rows
