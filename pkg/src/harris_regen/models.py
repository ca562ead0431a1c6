"""Process families: finite CTMCs, spin-flip systems, 1-D diffusions, Brownian cycles."""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field
from functools import cached_property
from typing import Callable, Sequence

import numba
import numpy as np
from scipy.sparse.csgraph import connected_components

from . import _kernels
from .cycles import ObservableSpec, RegenerationStream, observable_steps

MAX_SPINFLIP_SITES = 12
ROW_SUM_TOL = 1e-12


class ModelError(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class CtmcModel:
    """Finite-state continuous-time Markov chain given by its generator.

    The reference measure is counting measure, so ``p_t(x, y)`` is just the
    ``(x, y)`` entry of ``exp(tG)``.
    """

    states: tuple
    generator: np.ndarray
    reference_measure: np.ndarray | None = None

    def __post_init__(self):
        g = np.array(self.generator, dtype=float)
        n = len(self.states)
        if g.shape != (n, n):
            raise ModelError(f"generator shape {g.shape} does not match {n} states")
        if n < 2:
            raise ModelError("a CTMC needs at least two states")
        off = g - np.diag(np.diag(g))
        if np.any(off < 0):
            raise ModelError("off-diagonal rates must be non-negative")
        scale = max(1.0, float(np.max(np.abs(g))))
        if np.any(np.abs(g.sum(axis=1)) > ROW_SUM_TOL * scale):
            raise ModelError("generator rows must sum to zero")
        n_comp, _ = connected_components(off > 0, directed=True, connection="strong")
        if n_comp != 1:
            raise ModelError("the chain is not irreducible")
        g.setflags(write=False)
        object.__setattr__(self, "generator", g)
        object.__setattr__(self, "states", tuple(self.states))
        lam = np.ones(n) if self.reference_measure is None else np.array(self.reference_measure, dtype=float)
        if not np.allclose(lam, 1.0):
            raise ModelError("only counting reference measure is supported")
        lam.setflags(write=False)
        object.__setattr__(self, "reference_measure", lam)

    @property
    def n(self) -> int:
        return len(self.states)

    def index(self, state) -> int:
        """Position of ``state``; plain integers not used as labels are read as positions."""
        if state in self.states:
            return self.states.index(state)
        if isinstance(state, (int, np.integer)) and 0 <= state < self.n:
            return int(state)
        raise ModelError(f"unknown state {state!r}")

    @cached_property
    def exit_rates(self) -> np.ndarray:
        return -np.diag(self.generator).copy()

    @cached_property
    def jump_cdf(self) -> np.ndarray:
        """Row-wise cumulative jump-chain probabilities (zero on the diagonal)."""
        off = self.generator - np.diag(np.diag(self.generator))
        probs = off / self.exit_rates[:, None]
        cdf = np.cumsum(probs, axis=1)
        cdf[:, -1] = np.maximum(cdf[:, -1], 1.0)
        return cdf

    def fingerprint(self) -> str:
        h = hashlib.sha256()
        h.update(repr(self.states).encode())
        h.update(np.ascontiguousarray(self.generator).tobytes())
        return h.hexdigest()[:16]


def build_two_state_ctmc(a: float, b: float) -> CtmcModel:
    """States (0, 1) with rate ``a`` for 0 -> 1 and ``b`` for 1 -> 0."""
    if not (a > 0 and b > 0):
        raise ModelError(f"two-state rates must be positive, got a={a}, b={b}")
    return CtmcModel((0, 1), np.array([[-a, a], [b, -b]], dtype=float))


# ---------------------------------------------------------------- spin flips

RateFn = Callable[[int, np.ndarray], float]


@dataclass(frozen=True, eq=False)
class SpinFlipSpec:
    """Spin system on a finite ``sites`` subset of Z^d.

    ``rate_fn(i, eta)`` is the flip rate of site ``i`` (an index into
    ``sites``) in configuration ``eta`` (an array of +-1).
    """

    sites: tuple
    rate_fn: RateFn
    rate_caps: tuple

    def __post_init__(self):
        sites = tuple(tuple(int(c) for c in np.atleast_1d(s)) for s in self.sites)
        if len(set(sites)) != len(sites):
            raise ModelError("duplicate sites")
        if len(sites) > MAX_SPINFLIP_SITES:
            raise ModelError(f"spin-flip systems are capped at {MAX_SPINFLIP_SITES} sites, got {len(sites)}")
        if len(self.rate_caps) != len(sites):
            raise ModelError("one rate cap per site is required")
        object.__setattr__(self, "sites", sites)
        object.__setattr__(self, "rate_caps", tuple(float(m) for m in self.rate_caps))

    def neighbors(self, i: int) -> list[int]:
        si = np.array(self.sites[i])
        return [j for j, s in enumerate(self.sites) if np.abs(np.array(s) - si).sum() == 1]

    def configurations(self) -> np.ndarray:
        """All configurations, row ``k`` has spin +1 at site ``j`` iff bit ``j`` of ``k`` is set."""
        n = len(self.sites)
        k = np.arange(2**n)[:, None]
        bits = (k >> np.arange(n)[None, :]) & 1
        return (2 * bits - 1).astype(np.int8)


def constant_rate(c: float) -> RateFn:
    return lambda i, eta: c


def majority_rate(agree: float, disagree: float, neighbors: Callable[[int], Sequence[int]]) -> RateFn:
    """Flip slowly when aligned with the neighbourhood majority, fast otherwise."""

    def rate(i, eta):
        nb = neighbors(i)
        field_ = int(sum(eta[j] for j in nb))
        if field_ == 0:
            return 0.5 * (agree + disagree)
        return agree if np.sign(field_) == eta[i] else disagree

    return rate


def compile_spinflip(spec: SpinFlipSpec) -> CtmcModel:
    n = len(spec.sites)
    if n > MAX_SPINFLIP_SITES:
        raise ModelError(f"spin-flip systems are capped at {MAX_SPINFLIP_SITES} sites")
    configs = spec.configurations()
    size = configs.shape[0]
    g = np.zeros((size, size))
    for k, eta in enumerate(configs):
        for i in range(n):
            c = float(spec.rate_fn(i, eta))
            if c < 0 or c > spec.rate_caps[i]:
                raise ModelError(f"rate c_{i}={c} outside [0, {spec.rate_caps[i]}] at configuration {eta.tolist()}")
            g[k, k ^ (1 << i)] += c
    np.fill_diagonal(g, -g.sum(axis=1))
    labels = [tuple(int(s) for s in eta) for eta in configs]
    return CtmcModel(tuple(labels), g)


# ---------------------------------------------------------------- paths


@dataclass(frozen=True, eq=False)
class PathSegment:
    """Piecewise-constant path: ``values[k]`` holds on ``[times[k], times[k+1])``."""

    times: np.ndarray
    values: np.ndarray
    horizon: float

    def __post_init__(self):
        t = np.asarray(self.times, dtype=float)
        if t.size != len(self.values):
            raise ValueError("times and values differ in length")
        if t.size and (np.any(np.diff(t) <= 0) or t[0] < 0 or t[-1] > self.horizon):
            raise ValueError("event times must be strictly increasing within [0, horizon]")

    def holding_times(self) -> np.ndarray:
        return np.diff(np.append(self.times, self.horizon))

    def occupation(self, n_states: int) -> np.ndarray:
        return np.bincount(self.values, weights=self.holding_times(), minlength=n_states)

    def integral(self, table) -> float:
        return float(np.dot(np.asarray(table)[self.values], self.holding_times()))


def simulate_ctmc_path(model: CtmcModel, x0, horizon: float, rng: np.random.Generator) -> PathSegment:
    """Exact event-driven sample path on ``[0, horizon]``."""
    if horizon < 0:
        raise ValueError("horizon must be non-negative")
    x = model.index(x0)
    times, values = _kernels.ctmc_path(model.exit_rates, model.jump_cdf, x, float(horizon), rng)
    return PathSegment(times, values, float(horizon))


def ctmc_integrals(model: CtmcModel, table, x0, t_grid, rng) -> np.ndarray:
    return _kernels.ctmc_integrals(
        model.exit_rates, model.jump_cdf, np.asarray(table, dtype=float), model.index(x0),
        np.asarray(t_grid, dtype=float), rng,
    )


# ---------------------------------------------------------------- Brownian cycles


def sample_bm_cycle_duration(rng: np.random.Generator, size=None):
    """Exact ``R_2 - R_1`` for standard BM with levels (0, 1): two Levy hitting times."""
    z1 = rng.standard_normal(size)
    z2 = rng.standard_normal(size)
    return 1.0 / z1**2 + 1.0 / z2**2


def bm_laplace(lam):
    """Laplace transform of the Brownian (0, 1) cycle length."""
    return np.exp(-2.0 * np.sqrt(2.0 * np.asarray(lam, dtype=float)))


BM_SLOWLY_VARYING = 2.0 * np.sqrt(2.0)
BM_ALPHA = 0.5


# ---------------------------------------------------------------- diffusions


def _jit(fn):
    if isinstance(fn, numba.core.registry.CPUDispatcher):
        return fn
    return numba.njit(fn)


def linear_drift(c0: float = 0.0, c1: float = 0.0):
    """``b(x) = c0 + c1 x``."""

    @numba.njit
    def drift(x):
        return c0 + c1 * x

    drift.params = {"name": "linear", "c0": c0, "c1": c1}
    return drift


def constant_dispersion(sigma: float = 1.0):
    if sigma <= 0:
        raise ModelError("dispersion must be positive")

    @numba.njit
    def disp(x):
        return sigma

    disp.params = {"name": "constant", "value": sigma}
    return disp


@dataclass(frozen=True, eq=False)
class Diffusion1D:
    """``dX = b(X) dt + sigma(X) dW`` with regeneration levels ``a < b``.

    Cycles run from a hit of ``b`` to the next hit of ``a``. When
    ``excursion_skip`` is set (Brownian motion only) the path is stepped on
    the grid only inside a band around the levels and the observables'
    support; excursions outside the band are replaced by exact return times.
    """

    drift: Callable
    dispersion: Callable
    regen_levels: tuple[float, float]
    step: float
    max_cycle_duration: float = 1e4
    excursion_skip: bool = False
    band_margin: float = 0.5
    params: dict = field(default_factory=dict)

    def __post_init__(self):
        a, b = (float(v) for v in self.regen_levels)
        if not (np.isfinite(a) and np.isfinite(b)) or a == b:
            raise ModelError("regeneration levels must be distinct and finite")
        if a > b:
            raise ModelError("regeneration levels must satisfy a < b")
        if not self.step > 0:
            raise ModelError("step must be positive")
        object.__setattr__(self, "regen_levels", (a, b))
        object.__setattr__(self, "drift", _jit(self.drift))
        object.__setattr__(self, "dispersion", _jit(self.dispersion))
        span = b - a
        probe = np.linspace(a - 5 * span, b + 5 * span, 201)
        if any(not self.dispersion(float(x)) > 0 for x in probe):
            raise ModelError("dispersion must be positive on the simulated range")

    def band(self, observables: Sequence[ObservableSpec] = ()) -> np.ndarray:
        a, b = self.regen_levels
        lo, hi = a, b
        for obs in observables:
            if obs.support is not None:
                lo = min(lo, obs.support[0])
                hi = max(hi, obs.support[1])
        w = self.band_margin
        return np.array([lo - w, hi + w, lo - 2 * w, hi + 2 * w])


BM_MAX_CYCLE_DURATION = 1e12


def brownian_motion(step: float, levels=(0.0, 1.0), sigma: float = 1.0, **kw) -> Diffusion1D:
    # excursions are skipped exactly, so long cycles cost O(1); a low cap would
    # discard the heavy tail and bias centered cycle integrals
    kw.setdefault("max_cycle_duration", BM_MAX_CYCLE_DURATION)
    return Diffusion1D(
        linear_drift(0.0, 0.0), constant_dispersion(sigma), tuple(levels), step,
        excursion_skip=True, params={"kind": "bm", "sigma": sigma}, **kw,
    )


def _run_diffusion_cycles(model: Diffusion1D, x0: float, n_cycles: int, observables, rng, restart: bool):
    edges, levels, counts = observable_steps(observables)
    a, b = model.regen_levels
    return _kernels.diffusion_cycles(
        model.drift, model.dispersion, float(x0), a, b, model.step, edges, levels, counts, len(observables),
        int(n_cycles), float(model.max_cycle_duration), restart, model.excursion_skip, model.band(observables), rng,
    )


def simulate_diffusion_cycles(
    model: Diffusion1D,
    n_cycles: int,
    observables: Sequence[ObservableSpec],
    rng: np.random.Generator,
    x0: float | None = None,
) -> RegenerationStream:
    """Regeneration cycles of an Euler-discretized diffusion started at ``x0`` (default ``a``).

    Cycles longer than ``max_cycle_duration`` are discarded, counted in
    ``n_truncated``, and the path restarts at level ``a``.
    """
    if n_cycles < 1:
        raise ValueError("n_cycles must be at least 1")
    x0 = model.regen_levels[0] if x0 is None else float(x0)
    durations, xi, truncated = _run_diffusion_cycles(model, x0, n_cycles, observables, rng, restart=False)
    names = [o.name for o in observables]
    return RegenerationStream(
        durations=durations[1:],
        xi={n: xi[1:, j] for j, n in enumerate(names)},
        initial_duration=float(durations[0]),
        initial_xi={n: float(xi[0, j]) for j, n in enumerate(names)},
        method="hitting",
        initial_state=x0,
        n_truncated=int(truncated),
        truncation_time=float(model.max_cycle_duration),
        meta={"step": model.step, "levels": model.regen_levels},
    )


def diffusion_first_cycles(model: Diffusion1D, x0: float, n: int, observable: ObservableSpec, rng):
    """``n`` independent ``int_0^{R_1} f`` samples from ``x0`` plus the truncation count."""
    durations, xi, truncated = _run_diffusion_cycles(model, x0, n, [observable], rng, restart=True)
    return xi[:, 0], durations, int(truncated)


def diffusion_integrals(model: Diffusion1D, observable: ObservableSpec, x0: float, t_grid, rng) -> np.ndarray:
    """Trapezoid ``int_0^t f(X_s) ds`` on the model's Euler grid for each ``t``."""
    edges, levels, counts = observable_steps([observable])
    return _kernels.diffusion_integrals(
        model.drift, model.dispersion, float(x0), model.step, edges[0], levels[0], int(counts[0]),
        np.asarray(t_grid, dtype=float), model.excursion_skip, model.band([observable]), rng,
    )


# ---------------------------------------------------------------- documents

RATE_BUILTINS = ("constant", "majority")
DRIFT_BUILTINS = ("linear",)
DISPERSION_BUILTINS = ("constant",)


def model_from_document(doc: dict):
    """Build a model from its JSON document (``kind`` in ctmc/spinflip/diffusion1d/bm)."""
    kind = doc.get("kind")
    if kind == "ctmc":
        if "generator" in doc:
            g = np.array(doc["generator"], dtype=float)
            states = tuple(doc.get("states", range(g.shape[0])))
            return CtmcModel(states, g)
        if "two_state" in doc:
            return build_two_state_ctmc(*doc["two_state"])
        raise ModelError("ctmc document needs 'generator' or 'two_state'")
    if kind == "spinflip":
        sites = [tuple(np.atleast_1d(s)) for s in doc["sites"]]
        rate = doc.get("rate", {"name": "constant", "c": 1.0})
        name = rate.get("name")
        spec_sites = tuple(sites)
        if name == "constant":
            c = float(rate.get("c", 1.0))
            return compile_spinflip(SpinFlipSpec(spec_sites, constant_rate(c), tuple([c] * len(sites))))
        if name == "majority":
            agree, disagree = float(rate["agree"]), float(rate["disagree"])
            holder: list[SpinFlipSpec] = []
            fn = majority_rate(agree, disagree, lambda i: holder[0].neighbors(i))
            spec = SpinFlipSpec(spec_sites, fn, tuple([max(agree, disagree)] * len(sites)))
            holder.append(spec)
            return compile_spinflip(spec)
        raise ModelError(f"unknown spin-flip rate {name!r}; built-ins are {RATE_BUILTINS}")
    if kind in ("diffusion1d", "bm"):
        step = float(doc.get("step", 1e-3))
        levels = tuple(doc.get("regen_levels", doc.get("levels", (0.0, 1.0))))
        extra = {k: doc[k] for k in ("max_cycle_duration", "band_margin") if k in doc}
        if kind == "bm":
            return brownian_motion(step, levels, float(doc.get("sigma", 1.0)), **extra)
        drift = doc.get("drift", {"name": "linear", "c0": 0.0, "c1": 0.0})
        disp = doc.get("dispersion", {"name": "constant", "value": 1.0})
        if drift.get("name") != "linear":
            raise ModelError(f"unknown drift {drift.get('name')!r}; built-ins are {DRIFT_BUILTINS}")
        if disp.get("name") != "constant":
            raise ModelError(f"unknown dispersion {disp.get('name')!r}; built-ins are {DISPERSION_BUILTINS}")
        return Diffusion1D(
            linear_drift(float(drift.get("c0", 0.0)), float(drift.get("c1", 0.0))),
            constant_dispersion(float(disp.get("value", 1.0))),
            levels, step, params={"kind": "diffusion1d"}, **extra,
        )
    raise ModelError(f"unknown model kind {kind!r}")
