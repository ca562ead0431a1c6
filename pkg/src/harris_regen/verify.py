"""Statistical checks of the moment bounds, dependence structure, tail index and bound domination."""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Sequence

import numpy as np
from scipy import stats

from .cycles import SCHEMA_VERSION, RegenerationStream
from .montecarlo import DeviationCurve

SIGMAS = 3.0
P_MIN = 0.01
HILL_TOL = 0.05
LIGHT_TAIL_ALPHA = 4.0
MIN_XI_CYCLES = 100_000
MIN_NT_SAMPLES = 10_000
MIN_DEPENDENCE_CYCLES = 10_000
MIN_TAIL_SAMPLES = 1_000_000

THRESHOLDS = {
    "sigmas": SIGMAS,
    "p_min": P_MIN,
    "hill_tolerance": HILL_TOL,
    "light_tail_alpha": LIGHT_TAIL_ALPHA,
    "ci_level": 0.99,
}

STATUSES = ("pass", "fail", "vacuous")


@dataclass(frozen=True)
class CheckReport:
    check_name: str
    status: str
    statistic: float
    threshold: float
    details: str = ""

    def __post_init__(self):
        if self.status not in STATUSES:
            raise ValueError(f"status must be one of {STATUSES}")

    @property
    def failed(self) -> bool:
        return self.status == "fail"

    def to_dict(self) -> dict:
        d = asdict(self)
        for k in ("statistic", "threshold"):
            v = d[k]
            d[k] = None if v is None or not math.isfinite(v) else float(v)
        return d


def _status(ok: bool) -> str:
    return "pass" if ok else "fail"


def _need(n: int, minimum: int, what: str):
    if n < minimum:
        raise ValueError(f"{what}: need at least {minimum} samples, got {n}")


# ---------------------------------------------------------------- moments


def check_xi_moments(cycles: RegenerationStream, name: str, k_f: float, p_max: int = 4,
                     min_cycles: int = MIN_XI_CYCLES) -> list[CheckReport]:
    """``E|xi|^p - 3 se <= p! K(f)^p`` for ``p = 1..p_max``."""
    if not 1 <= p_max <= 4:
        raise ValueError("p_max must lie in 1..4")
    xi = np.abs(cycles.xi[name])
    _need(xi.size, min_cycles, "check_xi_moments")
    out = []
    for p in range(1, p_max + 1):
        vals = xi**p
        mean = float(vals.mean())
        se = float(vals.std(ddof=1) / math.sqrt(vals.size))
        stat = mean - SIGMAS * se
        bound = math.factorial(p) * k_f**p
        out.append(CheckReport(
            f"xi_moment[{name},p={p}]", _status(stat <= bound), stat, bound,
            f"E|xi|^{p} = {mean:.6g} (se {se:.3g}); mean - {SIGMAS:g} se = {stat:.6g} <= {p}! K^{p} = {bound:.6g}",
        ))
    return out


def check_nt_moments(t_grid, nt_samples, vstar, p_max: int = 3, delta: float = 0.5, xs=(1.0, 2.0),
                     min_samples: int = MIN_NT_SAMPLES, label: str = "") -> list[CheckReport]:
    """``E N_t^p <= p! (v*_t)^p`` and the tail ``P(N_t > v^{1+delta}(x v 1)) <= 2 exp(-v^delta (x v 1) / 2)``.

    ``nt_samples`` has one column per ``t``; ``vstar`` one entry per ``t``.
    """
    nt = np.asarray(nt_samples, dtype=float)
    _need(nt.shape[0], min_samples, "check_nt_moments")
    tag = f"{label}," if label else ""
    out = []
    for j, t in enumerate(t_grid):
        col = nt[:, j]
        v = float(vstar[j])
        for p in range(1, p_max + 1):
            vals = col**p
            mean = float(vals.mean())
            se = float(vals.std(ddof=1) / math.sqrt(vals.size))
            stat = mean - SIGMAS * se
            bound = math.factorial(p) * v**p
            out.append(CheckReport(
                f"nt_moment[{tag}t={t:g},p={p}]", _status(stat <= bound), stat, bound,
                f"E N_t^{p} = {mean:.6g} (se {se:.3g}) vs {p}! (v*_t)^{p} = {bound:.6g}, v*_t = {v:.6g}",
            ))
        for x in xs:
            level = v ** (1 + delta) * max(x, 1.0)
            bound = 2.0 * math.exp(-0.5 * v**delta * max(x, 1.0))
            k = int(np.count_nonzero(col > level))
            ci = stats.binomtest(k, col.size).proportion_ci(confidence_level=THRESHOLDS["ci_level"], method="exact")
            name = f"nt_tail[{tag}t={t:g},x={x:g}]"
            detail = (f"P(N_t > {level:.4g}) = {k / col.size:.4g}, 99% CI low {ci.low:.4g} "
                      f"vs 2exp(-v^{delta:g}(x v 1)/2) = {bound:.4g}")
            if bound >= 1:
                out.append(CheckReport(name, "vacuous", float(ci.low), bound, detail))
            else:
                out.append(CheckReport(name, _status(ci.low <= bound), float(ci.low), bound, detail))
    return out


# ---------------------------------------------------------------- dependence


def autocorrelation(x, lag: int) -> float:
    x = np.asarray(x, dtype=float)
    x = x - x.mean()
    den = float(x @ x)
    if den == 0:
        return 0.0
    return float(x[lag:] @ x[:-lag] / den)


def check_dependence_structure(cycles: RegenerationStream, nu=None,
                               min_cycles: int = MIN_DEPENDENCE_CYCLES) -> list[CheckReport]:
    """Lag autocorrelations, half-vs-half KS of durations, start-state law against ``nu``.

    Cycle lengths are i.i.d., so their lag-1 and lag-2 correlations are
    tested; cycle integrals are only 2-independent, so for them lag 2 is
    tested and lag 1 is reported without a verdict.
    """
    d = cycles.durations
    n = d.size
    _need(n, min_cycles, "check_dependence_structure")
    band = SIGMAS / math.sqrt(n)
    out = []
    for lag in (1, 2):
        rho = autocorrelation(d, lag)
        out.append(CheckReport(f"duration_autocorr[lag={lag}]", _status(abs(rho) < band), abs(rho), band,
                               f"|rho| = {abs(rho):.4g} vs 3/sqrt(N) = {band:.4g}"))
    for name, xi in cycles.xi.items():
        rho1 = autocorrelation(xi, 1)
        out.append(CheckReport(f"xi_autocorr[{name},lag=1]", "vacuous", abs(rho1), band,
                               f"reported only: rho_1 = {rho1:.4g}"))
        rho2 = autocorrelation(xi, 2)
        out.append(CheckReport(f"xi_autocorr[{name},lag=2]", _status(abs(rho2) < band), abs(rho2), band,
                               f"|rho_2| = {abs(rho2):.4g} vs 3/sqrt(N) = {band:.4g}"))
    half = n // 2
    ks = stats.ks_2samp(d[:half], d[half:])
    out.append(CheckReport("duration_blocks_ks", _status(ks.pvalue > P_MIN), float(ks.pvalue), P_MIN,
                           f"two-sample KS first vs second half: p = {ks.pvalue:.4g}"))
    if nu is not None and cycles.start_states is not None:
        nu = np.asarray(nu, dtype=float)
        support = np.flatnonzero(nu > 0)
        counts = np.bincount(cycles.start_states, minlength=nu.size)
        outside = int(counts.sum() - counts[support].sum())
        if support.size == 1:
            ok, p = outside == 0, 1.0 if outside == 0 else 0.0
        else:
            inside = counts[support]
            res = stats.chisquare(inside, nu[support] / nu[support].sum() * inside.sum())
            p = float(res.pvalue)
            ok = p > P_MIN and outside == 0
        out.append(CheckReport("start_state_law", _status(ok), p, P_MIN,
                               f"chi-square start states vs nu: p = {p:.4g}, {outside} starts outside supp(nu)"))
    return out


def check_centered_mean(cycles: RegenerationStream, name: str) -> CheckReport:
    """Mean cycle integral of a centered observable is zero within 3 standard errors."""
    xi = cycles.xi[name]
    mean = float(xi.mean())
    se = float(xi.std(ddof=1) / math.sqrt(xi.size))
    return CheckReport(f"centered_xi_mean[{name}]", _status(abs(mean) <= SIGMAS * se), abs(mean), SIGMAS * se,
                       f"mean xi = {mean:.4g}, 3 se = {SIGMAS * se:.4g}")


def check_stationarity(cycles: RegenerationStream, name: str) -> CheckReport:
    """Means of xi over the two halves of the stationary cycles agree within 3 pooled se."""
    xi = cycles.xi[name]
    h = xi.size // 2
    a, b = xi[:h], xi[h:]
    pooled = math.sqrt(a.var(ddof=1) / a.size + b.var(ddof=1) / b.size)
    diff = abs(float(a.mean() - b.mean()))
    return CheckReport(f"xi_stationarity[{name}]", _status(diff <= SIGMAS * pooled), diff, SIGMAS * pooled,
                       f"|mean first half - mean second half| = {diff:.4g}")


# ---------------------------------------------------------------- tail index


def hill_estimate(samples, k: int) -> float:
    """Hill estimator of the tail index from the top ``k`` order statistics."""
    x = np.sort(np.asarray(samples, dtype=float))[::-1]
    if not 1 <= k < x.size:
        raise ValueError("k must lie in [1, N)")
    logs = np.log(x[:k]) - math.log(x[k])
    return float(1.0 / logs.mean())


def check_tail_index(durations, alpha_expected: float, k: int | None = None,
                     min_samples: int = MIN_TAIL_SAMPLES) -> CheckReport:
    """Hill estimate on the top ``ceil(sqrt N)`` order statistics against ``alpha_expected``."""
    d = np.asarray(durations, dtype=float)
    _need(d.size, min_samples, "check_tail_index")
    k = k or int(math.ceil(math.sqrt(d.size)))
    a = hill_estimate(d, k)
    a_half = hill_estimate(d, max(1, k // 2))
    a_double = hill_estimate(d, min(d.size - 1, 2 * k))
    detail = f"hill(k={k}) = {a:.4f}; k/2 -> {a_half:.4f}, 2k -> {a_double:.4f}; expected {alpha_expected:g}"
    if a > LIGHT_TAIL_ALPHA:
        return CheckReport("tail_index", "vacuous", a, HILL_TOL, "light tail, inapplicable: " + detail)
    err = abs(a - alpha_expected)
    return CheckReport("tail_index", _status(err <= HILL_TOL), err, HILL_TOL, detail)


# ---------------------------------------------------------------- bounds


def check_bound_domination(curve: DeviationCurve) -> CheckReport:
    if not len(curve):
        raise ValueError("empty deviation curve")
    live = [r for r in curve.rows if not r.vacuous]
    if not live:
        return CheckReport("bound_domination", "vacuous", math.nan, 0.0,
                           f"all {len(curve)} grid points vacuous (bound >= 1)")
    worst = min(live, key=lambda r: r.margin)
    bad = [r for r in live if not r.dominated]
    detail = (f"{len(live)} non-vacuous of {len(curve)} points; worst margin {worst.margin:.4g} at "
              f"{worst.regime} eta={worst.eta} t={worst.t:g} x={worst.x:g} "
              f"(ci_high {worst.ci_high:.4g} vs bound {worst.bound_total:.4g})")
    if bad:
        detail += f"; {len(bad)} violations"
    return CheckReport("bound_domination", _status(not bad), worst.margin, 0.0, detail)


# ---------------------------------------------------------------- fault injection


def splice_cycles(cycles: RegenerationStream, width: int = 3) -> RegenerationStream:
    """Overlapping sums of ``width`` consecutive cycles: a deliberately dependent stream."""
    kern = np.ones(width)

    def roll(a):
        return np.convolve(a, kern, mode="valid")

    return RegenerationStream(
        durations=roll(cycles.durations),
        xi={k: roll(v) for k, v in cycles.xi.items()},
        initial_duration=cycles.initial_duration,
        initial_xi=dict(cycles.initial_xi),
        method=cycles.method + "+spliced",
        start_states=None if cycles.start_states is None else cycles.start_states[: cycles.durations.size - width + 1],
    )


# ---------------------------------------------------------------- reporting


def write_report(reports: Sequence[CheckReport], path, extra: dict | None = None) -> dict:
    doc = {
        "schema_version": SCHEMA_VERSION,
        "thresholds": THRESHOLDS,
        "n_checks": len(reports),
        "n_failed": sum(r.failed for r in reports),
        "checks": [r.to_dict() for r in reports],
    }
    if extra:
        doc.update(extra)
    Path(path).write_text(json.dumps(doc, indent=2))
    return doc


def read_report(path) -> list[CheckReport]:
    doc = json.loads(Path(path).read_text())
    return [CheckReport(c["check_name"], c["status"],
                        math.nan if c["statistic"] is None else c["statistic"],
                        math.nan if c["threshold"] is None else c["threshold"], c.get("details", ""))
            for c in doc["checks"]]


def summary_table(reports: Sequence[CheckReport]) -> str:
    width = max([len(r.check_name) for r in reports] + [5])
    lines = [f"{'check':<{width}}  status   statistic     threshold", "-" * (width + 40)]
    for r in reports:
        stat = "nan" if not math.isfinite(r.statistic) else f"{r.statistic:.5g}"
        lines.append(f"{r.check_name:<{width}}  {r.status:<7}  {stat:>12}  {r.threshold:>12.5g}")
    n_fail = sum(r.failed for r in reports)
    n_vac = sum(r.status == "vacuous" for r in reports)
    lines.append(f"{len(reports)} checks: {len(reports) - n_fail - n_vac} pass, {n_fail} fail, {n_vac} vacuous")
    return "\n".join(lines)
