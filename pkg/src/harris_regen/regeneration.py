"""Estimators built on regeneration cycles: C(f), K(f), B(f), m, F-hat, N_t, v*_t, Kac ratios."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np
from scipy import stats

from .cycles import SCHEMA_VERSION, ObservableSpec, RegenerationRecord, RegenerationStream
from .models import CtmcModel, Diffusion1D, diffusion_first_cycles
from .resolvent import stationary_measure
from .splitting import MinorizationCert, first_cycle_integrals

__all__ = [
    "ObservableSpec",
    "RegenerationRecord",
    "InsufficientDataError",
    "CfEstimate",
    "estimate_cf",
    "ConstantEstimates",
    "constants_from_cycles",
    "empirical_laplace",
    "laplace_table",
    "LaplaceEvaluator",
    "NtTable",
    "count_regenerations",
    "split_replications",
    "KacRatio",
    "kac_ratio",
    "center_on_states",
    "center_step",
    "diffusion_start_grid",
]

MIN_CYCLES = 100
CF_SAFETY_SE = 2.0
DIFFUSION_GRID_POINTS = 21


class InsufficientDataError(ValueError):
    pass


def _durations(cycles) -> np.ndarray:
    if isinstance(cycles, RegenerationStream):
        return cycles.durations
    return np.asarray(cycles, dtype=float)


# ---------------------------------------------------------------- C(f)


@dataclass(frozen=True)
class CfEstimate:
    """Per-start-state means of ``int_0^{R_1} |f|`` and the conservative sup."""

    c_f: float
    c_f_se: float
    starts: np.ndarray
    means: np.ndarray
    stderrs: np.ndarray
    argmax: object
    n_truncated: int = 0


def diffusion_start_grid(model: Diffusion1D, f: ObservableSpec, points: int = DIFFUSION_GRID_POINTS) -> np.ndarray:
    """Equispaced starts covering the support of ``f`` and the regeneration interval."""
    a, b = model.regen_levels
    lo, hi = a, b
    if f.support is not None and not f.is_finite_state:
        lo, hi = min(lo, f.support[0]), max(hi, f.support[1])
    return np.linspace(lo, hi, points)


def estimate_cf(model, cert: MinorizationCert | None, f: ObservableSpec, n_per_state: int, rng,
                starts=None) -> CfEstimate:
    """Monte Carlo ``C(f) = sup_x E_x int_0^{R_1} |f|(X_s) ds``.

    Every start state of a finite model is tried (diffusions use a grid of
    starts); the reported ``c_f`` is ``max_x (mean_x + 2 se_x)``.
    """
    if n_per_state < 2:
        raise ValueError("n_per_state must be at least 2")
    g = f.absolute()
    truncated = 0
    if isinstance(model, CtmcModel):
        if cert is None:
            raise ValueError("finite models need a minorization certificate")
        starts = np.arange(model.n) if starts is None else np.asarray(starts)
        if g.sup_norm == 0:
            z = np.zeros(starts.size)
            return CfEstimate(0.0, 0.0, starts, z, z.copy(), starts[0])
        means, ses = [], []
        for x in starts:
            xi, _ = first_cycle_integrals(model, cert, int(x), n_per_state, g, rng)
            means.append(xi.mean())
            ses.append(xi.std(ddof=1) / math.sqrt(xi.size))
    elif isinstance(model, Diffusion1D):
        starts = diffusion_start_grid(model, f) if starts is None else np.asarray(starts, dtype=float)
        if g.sup_norm == 0:
            z = np.zeros(starts.size)
            return CfEstimate(0.0, 0.0, starts, z, z.copy(), starts[0])
        means, ses = [], []
        for x in starts:
            xi, _, n_tr = diffusion_first_cycles(model, float(x), n_per_state, g, rng)
            truncated += n_tr
            means.append(xi.mean())
            ses.append(xi.std(ddof=1) / math.sqrt(xi.size))
    else:
        raise TypeError(f"unsupported model type {type(model).__name__}")
    means = np.array(means)
    ses = np.array(ses)
    upper = means + CF_SAFETY_SE * ses
    k = int(np.argmax(upper))
    return CfEstimate(float(upper[k]), float(ses[k]), starts, means, ses, starts[k], truncated)


# ---------------------------------------------------------------- Laplace transform


def empirical_laplace(cycles, lam: float, n_truncated: int | None = None) -> tuple[float, float]:
    """Sample mean of ``exp(-lam * duration)`` over stationary cycles, with its standard error.

    Truncated diffusion cycles are longer than the truncation time and enter
    with contribution zero.
    """
    if lam < 0:
        raise ValueError("lambda must be non-negative")
    d = _durations(cycles)
    if n_truncated is None:
        n_truncated = cycles.n_truncated if isinstance(cycles, RegenerationStream) else 0
    if d.size == 0:
        raise InsufficientDataError("no cycles")
    if lam == 0:
        return 1.0, 0.0
    vals = np.exp(-lam * d)
    if n_truncated:
        vals = np.concatenate([vals, np.zeros(n_truncated)])
    se = vals.std(ddof=1) / math.sqrt(vals.size) if vals.size > 1 else 0.0
    return float(vals.mean()), float(se)


def laplace_table(cycles, lambdas) -> list[tuple[float, float, float]]:
    return [(float(lam), *empirical_laplace(cycles, float(lam))) for lam in lambdas]


DEFAULT_LAMBDAS = np.concatenate([[0.0], np.geomspace(1e-4, 1e3, 141)])


@dataclass(frozen=True)
class LaplaceEvaluator:
    """``lam -> F-hat(lam)`` from a tabulated transform, log-linear in ``log lam``.

    Beyond the last node the log-transform is extended linearly in ``lam``
    with the last secant slope, which keeps the evaluator decreasing.
    """

    lambdas: np.ndarray
    values: np.ndarray

    def __post_init__(self):
        lam = np.asarray(self.lambdas, dtype=float)
        val = np.asarray(self.values, dtype=float)
        if lam.size < 3 or lam[0] != 0 or np.any(np.diff(lam) <= 0):
            raise ValueError("Laplace table needs >= 3 increasing nodes starting at 0")
        if np.any(val <= 0) or np.any(val > 1 + 1e-12):
            raise ValueError("Laplace values must lie in (0, 1]")
        object.__setattr__(self, "lambdas", lam)
        object.__setattr__(self, "values", np.minimum.accumulate(np.minimum(val, 1.0)))

    def __call__(self, lam):
        lam = np.asarray(lam, dtype=float)
        logv = np.log(self.values)
        pos = self.lambdas[1:]
        inside = np.interp(np.log(np.maximum(lam, pos[0])), np.log(pos), logv[1:])
        # between 0 and the first positive node interpolate linearly in lam
        head = logv[0] + (logv[1] - logv[0]) * lam / pos[0]
        slope = (logv[-1] - logv[-2]) / (pos[-1] - pos[-2])
        tail = logv[-1] + slope * (lam - pos[-1])
        out = np.where(lam < pos[0], head, np.where(lam > pos[-1], tail, inside))
        return np.exp(out)

    @classmethod
    def from_cycles(cls, cycles, lambdas=DEFAULT_LAMBDAS) -> "LaplaceEvaluator":
        tab = laplace_table(cycles, lambdas)
        vals = np.array([v for _, v, _ in tab])
        # an empirical transform can underflow to 0 at large lambda
        vals = np.maximum(vals, np.finfo(float).tiny)
        return cls(np.asarray(lambdas, dtype=float), vals)


# ---------------------------------------------------------------- N_t and v*_t


@dataclass(frozen=True)
class NtTable:
    """Samples of ``N_t`` (rows: replications) and ``v*_t = mean N_t + 1``."""

    t_grid: np.ndarray
    samples: np.ndarray
    vstar: np.ndarray
    vstar_se: np.ndarray

    def rows(self) -> list[tuple[float, float, float]]:
        return [(float(t), float(v), float(s)) for t, v, s in zip(self.t_grid, self.vstar, self.vstar_se)]

    def at(self, t: float) -> float:
        k = int(np.flatnonzero(np.isclose(self.t_grid, t))[0])
        return float(self.vstar[k])


def count_regenerations(replications: Sequence[np.ndarray], t_grid) -> NtTable:
    """``N_t = #{n >= 1 : R_n <= t}`` per replication of cycle durations started at ``R_0 = 0``."""
    t_grid = np.asarray(t_grid, dtype=float)
    if t_grid.ndim != 1 or t_grid.size == 0 or np.any(np.diff(t_grid) < 0):
        raise ValueError("t_grid must be a non-empty sorted sequence")
    horizon = float(t_grid[-1])
    out = np.empty((len(replications), t_grid.size), dtype=np.int64)
    for r, d in enumerate(replications):
        arrivals = np.cumsum(np.asarray(d, dtype=float))
        if arrivals.size == 0 or arrivals[-1] < horizon:
            covered = float(arrivals[-1]) if arrivals.size else 0.0
            raise InsufficientDataError(f"replication {r} covers only {covered:g} < horizon {horizon:g}")
        out[r] = np.searchsorted(arrivals, t_grid, side="right")
    n = out.shape[0]
    if n == 0:
        raise InsufficientDataError("no replications")
    mean = out.mean(axis=0)
    se = out.std(axis=0, ddof=1) / math.sqrt(n) if n > 1 else np.zeros(t_grid.size)
    return NtTable(t_grid, out, mean + 1.0, se)


def split_replications(durations, horizon: float, gap: int = 1) -> list[np.ndarray]:
    """Cut one stream of stationary durations into consecutive blocks covering ``horizon``.

    Each block is followed by ``gap`` unused cycles.
    """
    d = np.asarray(durations, dtype=float)
    blocks = []
    i = 0
    while i < d.size:
        csum = np.cumsum(d[i:])
        k = int(np.searchsorted(csum, horizon, side="left"))
        if k >= csum.size:
            break
        blocks.append(d[i : i + k + 1])
        i += k + 1 + gap
    return blocks


# ---------------------------------------------------------------- constants


@dataclass
class ConstantEstimates:
    """``C(f)``, ``K(f) = |f|_inf + C(f)``, ``B(f) = max(K^2, K)``, ``m`` and ``v*_t``."""

    observable: str
    sup_norm: float
    c_f: float
    c_f_se: float
    m_hat: float
    m_se: float
    n_cycles: int
    vstar: list = field(default_factory=list)
    laplace: list = field(default_factory=list)
    mu_cycle: float | None = None
    mu_cycle_se: float | None = None

    def __post_init__(self):
        if self.c_f < 0:
            raise ValueError("c_f must be non-negative")
        if not self.m_hat > 0:
            raise ValueError("m_hat must be positive")

    @property
    def k_f(self) -> float:
        return self.sup_norm + self.c_f

    @property
    def b_f(self) -> float:
        k = self.k_f
        return max(k * k, k)

    @property
    def mu_probability(self) -> float | None:
        return None if self.mu_cycle is None else self.mu_cycle / self.m_hat

    def vstar_at(self, t: float) -> float:
        for tt, v, _ in self.vstar:
            if math.isclose(tt, t, rel_tol=1e-12):
                return float(v)
        raise KeyError(f"no v*_t estimate at t = {t}")

    def laplace_evaluator(self) -> LaplaceEvaluator:
        if not self.laplace:
            raise ValueError("no Laplace table recorded")
        lam = np.array([r[0] for r in self.laplace])
        val = np.array([r[1] for r in self.laplace])
        return LaplaceEvaluator(lam, np.maximum(val, np.finfo(float).tiny))

    def to_dict(self) -> dict:
        return {
            "schema_version": SCHEMA_VERSION,
            "observable": self.observable,
            "sup_norm": self.sup_norm,
            "c_f": self.c_f,
            "c_f_se": self.c_f_se,
            "k_f": self.k_f,
            "b_f": self.b_f,
            "m_hat": self.m_hat,
            "m_se": self.m_se,
            "n_cycles": self.n_cycles,
            "mu": {"cycle": self.mu_cycle, "cycle_se": self.mu_cycle_se, "probability": self.mu_probability},
            "vstar": [list(r) for r in self.vstar],
            "laplace": [list(r) for r in self.laplace],
        }

    def to_json(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2))

    @classmethod
    def from_dict(cls, doc: dict) -> "ConstantEstimates":
        try:
            mu = doc.get("mu") or {}
            out = cls(
                observable=str(doc["observable"]),
                sup_norm=float(doc["sup_norm"]),
                c_f=float(doc["c_f"]),
                c_f_se=float(doc.get("c_f_se", 0.0)),
                m_hat=float(doc["m_hat"]),
                m_se=float(doc.get("m_se", 0.0)),
                n_cycles=int(doc.get("n_cycles", 0)),
                vstar=[tuple(float(v) for v in r) for r in doc.get("vstar", [])],
                laplace=[tuple(float(v) for v in r) for r in doc.get("laplace", [])],
                mu_cycle=mu.get("cycle"),
                mu_cycle_se=mu.get("cycle_se"),
            )
        except (KeyError, TypeError, ValueError) as exc:
            raise ValueError(f"malformed constants document: {exc}") from exc
        for key in ("k_f", "b_f"):
            if key in doc and not math.isclose(float(doc[key]), getattr(out, key), rel_tol=1e-9):
                raise ValueError(f"malformed constants document: {key} inconsistent with sup_norm and c_f")
        return out

    @classmethod
    def from_json(cls, path) -> "ConstantEstimates":
        return cls.from_dict(json.loads(Path(path).read_text()))


def constants_from_cycles(cycles: RegenerationStream, f: ObservableSpec, c_f: float, c_f_se: float = 0.0,
                          vstar: NtTable | None = None, lambdas=DEFAULT_LAMBDAS) -> ConstantEstimates:
    """Assemble the bound constants from ``C(f)`` and the stationary cycles 2..N."""
    d = cycles.durations
    if d.size < MIN_CYCLES:
        raise InsufficientDataError(f"need at least {MIN_CYCLES} stationary cycles, got {d.size}")
    mu = mu_se = None
    if f.name in cycles.xi:
        xi = cycles.xi[f.name]
        mu, mu_se = float(xi.mean()), float(xi.std(ddof=1) / math.sqrt(xi.size))
    return ConstantEstimates(
        observable=f.name,
        sup_norm=f.sup_norm,
        c_f=float(c_f),
        c_f_se=float(c_f_se),
        m_hat=float(d.mean()),
        m_se=float(d.std(ddof=1) / math.sqrt(d.size)),
        n_cycles=int(d.size),
        vstar=vstar.rows() if vstar is not None else [],
        laplace=laplace_table(cycles, lambdas) if lambdas is not None else [],
        mu_cycle=mu,
        mu_cycle_se=mu_se,
    )


# ---------------------------------------------------------------- Kac ratio


@dataclass(frozen=True)
class KacRatio:
    ratio: float
    se: float
    ci_low: float
    ci_high: float
    level: float
    n_cycles: int

    def covers(self, value: float) -> bool:
        return self.ci_low <= value <= self.ci_high


def _xi(cycles: RegenerationStream, obs) -> np.ndarray:
    name = obs.name if isinstance(obs, ObservableSpec) else str(obs)
    if name not in cycles.xi:
        raise KeyError(f"stream has no cycle integrals for {name!r}")
    return cycles.xi[name]


def kac_ratio(cycles: RegenerationStream, f, g, level: float = 0.99) -> KacRatio:
    """``sum xi(f) / sum xi(g)`` over stationary cycles with a delta-method interval.

    The cycle integrals are 1-dependent, so the variance of the linearized
    residual includes its lag-1 autocovariance.
    """
    xf, xg = _xi(cycles, f), _xi(cycles, g)
    n = xf.size
    den = xg.sum()
    if den == 0:
        raise ValueError("degenerate observable: sum of cycle integrals of g is zero")
    r = float(xf.sum() / den)
    if n < 3:
        return KacRatio(r, math.inf, -math.inf, math.inf, level, n)
    e = xf - r * xg
    e = e - e.mean()
    var = e @ e / n + 2.0 * (e[1:] @ e[:-1]) / n
    var = max(var, e @ e / n * 1e-12)
    se = math.sqrt(var / n) / abs(den / n)
    z = stats.norm.ppf(0.5 + level / 2)
    return KacRatio(r, float(se), float(r - z * se), float(r + z * se), level, n)


# ---------------------------------------------------------------- centering


def center_on_states(model: CtmcModel, values, name: str) -> ObservableSpec:
    """``f - pi(f)`` for the exact stationary probability ``pi``."""
    values = np.asarray(values, dtype=float)
    mu = stationary_measure(model)
    return ObservableSpec.on_states(name, values - mu(values), centered=True)


def center_step(edges, levels, name: str) -> ObservableSpec:
    """Step observable with zero Lebesgue integral (the invariant measure of BM).

    The levels are shifted by a constant on the support so that the integral
    vanishes.
    """
    edges = np.asarray(edges, dtype=float)
    levels = np.asarray(levels, dtype=float)
    width = np.diff(edges)
    shift = float(levels @ width / width.sum())
    return ObservableSpec.step(name, edges, levels - shift, centered=True)
