"""Explicit deviation bounds: Legendre transforms, Birge-Massart, the deviation bounds and the v*-sandwich."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Sequence

import numpy as np
from scipy import optimize

from .cycles import SCHEMA_VERSION
from .regeneration import ConstantEstimates

REGIMES = ("positive_eta", "positive_clt", "null_general", "regular")
LAMBDA_CAP_FACTOR = 50.0
SANDWICH_SIGMAS = 3.0


class BoundError(ValueError):
    pass


class InvalidTransformError(ValueError):
    pass


# ---------------------------------------------------------------- 1-D maximization


def _checked(laplace: Callable, lam: float) -> float:
    v = float(laplace(lam))
    if not (0.0 <= v <= 1.0 + 1e-12) or math.isnan(v):
        raise InvalidTransformError(f"Laplace evaluator returned {v} at lambda = {lam}")
    return min(v, 1.0)


def _sup_over_log(objective: Callable[[float], float], lo: float, hi: float, n_grid: int = 241) -> tuple[float, float]:
    """Maximize a unimodal function of ``lambda`` by scanning ``log lambda`` then golden-section refinement."""
    s = np.linspace(math.log(lo), math.log(hi), n_grid)
    vals = np.array([objective(math.exp(v)) for v in s])
    k = int(np.nanargmax(vals))
    best_s, best = float(s[k]), float(vals[k])
    if 0 < k < n_grid - 1:
        res = optimize.minimize_scalar(
            lambda z: -objective(math.exp(z)), bracket=(s[k - 1], s[k], s[k + 1]), method="golden",
            options={"xtol": 1e-10},
        )
        if -res.fun > best:
            best_s, best = float(res.x), float(-res.fun)
    return best, math.exp(best_s)


def legendre_star(laplace: Callable, u: float, m_hat: float | None = None, lam_min: float = 1e-12) -> float:
    """``sup_{lambda > 0} [-lambda u - log F(lambda)]``, clipped at 0.

    The search runs over ``lambda`` in ``[lam_min, 50 / m_hat]`` (up to 1e6
    when no finite mean is known).
    """
    if not u > 0:
        raise ValueError("u must be positive")
    if _checked(laplace, 0.0) < 1.0 - 1e-9:
        raise InvalidTransformError("Laplace transform must equal 1 at lambda = 0")
    cap = LAMBDA_CAP_FACTOR / m_hat if m_hat and math.isfinite(m_hat) else 1e6

    def obj(lam):
        v = _checked(laplace, lam)
        if v <= 0:
            return -math.inf
        return -lam * u - math.log(v)

    best, _ = _sup_over_log(obj, lam_min, cap)
    return max(best, 0.0)


def lambda_star_t(laplace: Callable, t: float, alpha: float, eta: float, L_t: float) -> float:
    """``sup_lambda [-log F(lambda) s_t^alpha / L(t) - lambda s_t]`` with ``s_t = t^{1 - 2 eta / (2 - alpha)}``.

    Maximized over ``w = lambda s_t`` so the search window does not drift with ``t``.
    """
    s_t = t ** (1.0 - 2.0 * eta / (2.0 - alpha))
    scale = s_t**alpha / L_t

    def obj(w):
        v = _checked(laplace, w / s_t)
        if v <= 0:
            return -math.inf
        return -math.log(v) * scale - w

    best, _ = _sup_over_log(obj, 1e-12, 1e4)
    return max(best, 0.0)


def regular_floor(alpha: float) -> float:
    """Asymptotic lower bound ``(1 - alpha) alpha^{alpha / (1 - alpha)}`` of ``Lambda*_t``."""
    return (1.0 - alpha) * alpha ** (alpha / (1.0 - alpha))


def birge_massart(y: float, v: float) -> tuple[float, float]:
    """``sup_{0 < lambda < 1/v} [lambda y - lambda^2 v^2 / (1 - lambda v)]`` and its lower bound ``y^2 / (2vy + 4v^2)``."""
    if not (y > 0 and v > 0):
        raise ValueError("y and v must be positive")
    lam = (1.0 - math.sqrt(v / (y + v))) / v
    sup = lam * y - lam * lam * v * v / (1.0 - lam * v)
    lower = y * y / (2.0 * v * y + 4.0 * v * v)
    if sup < lower * (1 - 1e-12):
        raise ArithmeticError(f"Birge-Massart inequality violated at y={y}, v={v}")
    return sup, lower


# ---------------------------------------------------------------- deviation bounds


@dataclass(frozen=True)
class BoundQuery:
    regime: str
    t: float
    x: float
    eta_dev: float | None
    constants: ConstantEstimates
    alpha_reg: float | None = None
    L_t: float | None = None
    vstar_t: float | None = None
    laplace: Callable | None = None

    def __post_init__(self):
        if self.regime not in REGIMES:
            raise BoundError(f"unknown regime {self.regime!r}; expected one of {REGIMES}")
        if not self.x > 0:
            raise BoundError("deviation level x must be positive")
        if not self.t > 0:
            raise BoundError("t must be positive")
        m = self.constants.m_hat
        if self.regime in ("positive_eta", "positive_clt") and not self.t > 4 * m:
            raise BoundError(f"positive regimes need t > 4m = {4 * m:g}, got t = {self.t:g}")
        if self.regime != "positive_clt":
            if self.eta_dev is None:
                raise BoundError(f"regime {self.regime} needs eta_dev")
        if self.regime in ("positive_eta", "null_general") and not 0 < self.eta_dev <= 0.5:
            raise BoundError("eta_dev must lie in (0, 1/2]")
        if self.regime == "null_general" and self.vstar() < 1:
            raise BoundError("v*_t must be at least 1")
        if self.regime == "regular":
            a = self.alpha_reg
            if a is None or not 0 < a < 1:
                raise BoundError("regular regime needs alpha_reg in (0, 1)")
            if self.L_t is None or not self.L_t > 0:
                raise BoundError("regular regime needs L_t > 0")
            if not 0 < self.eta_dev <= a / 2:
                raise BoundError("eta_dev must lie in (0, alpha_reg/2] in the regular regime")
            if regular_t0_ratio(self.t, a, self.eta_dev, self.L_t) < 1:
                raise BoundError(f"t = {self.t:g} is below t0 of the regular regime")

    def vstar(self) -> float:
        if self.vstar_t is not None:
            return float(self.vstar_t)
        return self.constants.vstar_at(self.t)

    def transform(self) -> Callable:
        return self.laplace if self.laplace is not None else self.constants.laplace_evaluator()


def regular_t0_ratio(t: float, alpha: float, eta: float, L_t: float) -> float:
    """``t^gamma / L(t) * t^{-alpha/2 - eta}``; the regular bound holds once this is >= 1."""
    gamma = alpha + 2 * eta * (1 - alpha) / (2 - alpha)
    return t**gamma / L_t * t ** (-alpha / 2 - eta)


@dataclass(frozen=True)
class BoundValue:
    regime: str
    t: float
    x: float
    eta: float | None
    threshold: float
    gaussian_term: float
    exponential_term: float
    clock_term: float
    rate: float | None = None

    @property
    def total(self) -> float:
        return self.gaussian_term + self.exponential_term + self.clock_term

    @property
    def terms(self) -> dict[str, float]:
        return {
            "gaussian_term": self.gaussian_term,
            "exponential_term": self.exponential_term,
            "clock_term": self.clock_term,
        }

    @property
    def vacuous(self) -> bool:
        return self.total >= 1.0


def deviation_threshold(q: BoundQuery) -> float:
    """Level that ``|int_0^t f|`` is compared with on the left side of each display."""
    t, x, eta, m = q.t, q.x, q.eta_dev, q.constants.m_hat
    if q.regime == "positive_eta":
        return t ** (0.5 + eta) * (2.0 / m) ** (0.5 + eta) * x
    if q.regime == "positive_clt":
        return math.sqrt(t) * x * math.sqrt(2.0) / math.sqrt(m)
    if q.regime == "null_general":
        return q.vstar() ** (0.5 + eta) * x
    return t ** (q.alpha_reg / 2 + eta) * x


def evaluate_bound(q: BoundQuery) -> BoundValue:
    c = q.constants
    t, x, eta = q.t, q.x, q.eta_dev
    m, K, B = c.m_hat, c.k_f, c.b_f
    x2x = min(x * x, x)
    xv1 = max(x, 1.0)
    rate = None
    if q.regime in ("positive_eta", "positive_clt"):
        rate = legendre_star(q.transform(), 2.0 * m / 3.0, m_hat=m)
        clock = 8.0 * math.exp(-t * xv1 * 3.0 / (4.0 * m) * rate)
        if q.regime == "positive_eta":
            p = 0.5 + eta
            gauss = 4.0 * math.exp(-(t ** (2 * eta)) / (42.0 * m * B) * x2x)
            expo = 4.0 * math.e * math.exp(-(2.0**p) / (6.0 * K * m**p) * t**p * x)
        else:
            gauss = 4.0 * math.exp(-x2x / (42.0 * B))
            expo = 4.0 * math.e * math.exp(-math.sqrt(2.0) / (6.0 * K * math.sqrt(m)) * math.sqrt(t) * x)
    elif q.regime == "null_general":
        v = q.vstar()
        gauss = 4.0 * math.exp(-(v**eta) * x2x / (42.0 * B))
        expo = 4.0 * math.e * math.exp(-(v ** (0.5 + eta)) * x / (6.0 * K))
        clock = 8.0 * math.exp(-0.5 * v**eta * xv1)
    else:
        a, L = q.alpha_reg, q.L_t
        r = t ** (2 * eta / (2 - a))
        rate = lambda_star_t(q.transform(), t, a, eta, L)
        gauss = 4.0 * math.exp(-r * x2x * L / (42.0 * B))
        expo = 4.0 * math.e * math.exp(-(t ** (a / 2 + eta)) * x / (6.0 * K))
        clock = 8.0 * math.exp(-0.5 * r * xv1 * rate)
    return BoundValue(q.regime, t, x, eta, deviation_threshold(q), gauss, expo, clock, rate)


BOUND_COLUMNS = ["regime", "t", "x", "eta", "gaussian_term", "exponential_term", "clock_term", "total", "vacuous"]


def write_bound_table(rows: Sequence[BoundValue], path) -> None:
    with Path(path).open("w", newline="") as fh:
        fh.write(f"# schema_version: {SCHEMA_VERSION}\n")
        w = csv.writer(fh)
        w.writerow(BOUND_COLUMNS)
        for b in rows:
            w.writerow([b.regime, repr(b.t), repr(b.x), "" if b.eta is None else repr(b.eta),
                        repr(b.gaussian_term), repr(b.exponential_term), repr(b.clock_term),
                        repr(b.total), int(b.vacuous)])


# ---------------------------------------------------------------- v*-sandwich


@dataclass(frozen=True)
class SandwichResult:
    passed: bool
    upper_ok: bool
    lower_ok: bool
    upper_slack: float
    lower_slack: float
    tolerance: float


def vstar_sandwich(v_t: float, vstar_t: float, c_g: float, mu_g: float, se: float = 0.0) -> SandwichResult:
    """Check ``mu(g) v*_t - 2 C(g) <= v_t <= C(g) + mu(g) v*_t`` up to ``3 se``.

    ``mu_g`` is the cycle-normalized invariant mass of ``g``; slacks are the
    margins before the statistical tolerance is applied.
    """
    if min(v_t, vstar_t, mu_g) <= 0 or c_g < 0 or se < 0:
        raise ValueError("sandwich inputs must be positive")
    tol = SANDWICH_SIGMAS * se
    upper = c_g + mu_g * vstar_t - v_t
    lower = v_t - (mu_g * vstar_t - 2.0 * c_g)
    up_ok = upper >= -tol
    lo_ok = lower >= -tol
    return SandwichResult(bool(up_ok and lo_ok), bool(up_ok), bool(lo_ok), float(upper), float(lower), float(tol))
