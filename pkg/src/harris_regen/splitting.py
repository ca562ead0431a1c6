"""Continuous-time Nummelin splitting on finite chains.

The forward construction follows the four-step recipe literally: jump times
drawn from ``e^{-t} p_t(x, x') / u1(x, x')``, frozen marks between jumps,
bridge fill of the first coordinate, renewal at jump times. The retrospective
construction runs the plain chain with an independent unit-rate clock and
flips the atom coin after seeing the next skeleton state; both produce the
same law of regeneration cycles.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache
from typing import Sequence

import numpy as np
import scipy.linalg

from . import _kernels
from .cycles import ObservableSpec, RegenerationStream, observable_tables
from .models import CtmcModel
from .resolvent import ResolventKernel, resolvent_kernel, transition_matrix

CERT_TOL = 1e-14
DEFAULT_BRIDGE_POINTS = 32


class CertificateError(ValueError):
    pass


@lru_cache(maxsize=64)
def _cached_kernel(model: CtmcModel) -> ResolventKernel:
    return resolvent_kernel(model)


@dataclass(frozen=True, eq=False)
class MinorizationCert:
    """``u1[x, y] >= alpha_minor * nu[y]`` for every ``x`` in ``small_set``."""

    small_set: tuple
    alpha_minor: float
    nu: np.ndarray

    def __post_init__(self):
        nu = np.asarray(self.nu, dtype=float)
        small = tuple(sorted(int(i) for i in self.small_set))
        if not small:
            raise CertificateError("small set must be non-empty")
        if not 0 < self.alpha_minor < 1:
            raise CertificateError(f"alpha_minor must lie in (0, 1), got {self.alpha_minor}")
        if abs(nu.sum() - 1.0) > 1e-12:
            raise CertificateError("nu must be a probability vector")
        mask = np.zeros(nu.size, dtype=bool)
        mask[list(small)] = True
        if np.any(nu[~mask] != 0) or np.any(nu[mask] <= 0):
            raise CertificateError("nu must be positive on the small set and vanish outside it")
        nu.setflags(write=False)
        object.__setattr__(self, "nu", nu)
        object.__setattr__(self, "small_set", small)

    @property
    def in_c(self) -> np.ndarray:
        mask = np.zeros(self.nu.size, dtype=np.bool_)
        mask[list(self.small_set)] = True
        return mask

    def slack(self, kernel: ResolventKernel) -> np.ndarray:
        """``u1[x, y] - alpha * nu[y]`` over ``x`` in C and all ``y``."""
        return kernel.u1[list(self.small_set)] - self.alpha_minor * self.nu[None, :]

    def verify(self, kernel: ResolventKernel) -> bool:
        return bool(np.all(self.slack(kernel) >= -CERT_TOL))


def compute_minorization(kernel: ResolventKernel, small_set) -> MinorizationCert:
    """Column-wise minimum of the resolvent rows indexed by ``small_set``."""
    small = sorted({int(i) for i in small_set})
    if not small:
        raise CertificateError("small set must be non-empty")
    if small[0] < 0 or small[-1] >= kernel.n:
        raise CertificateError("small set index out of range")
    col_min = kernel.u1[small][:, small].min(axis=0)
    alpha = float(col_min.sum())
    if alpha <= 0:
        raise CertificateError("degenerate small set: no common mass")
    if alpha >= 1:
        raise CertificateError("alpha_minor >= 1; the resolvent rows cannot all coincide")
    nu = np.zeros(kernel.n)
    nu[small] = col_min / alpha
    cert = MinorizationCert(tuple(small), alpha, nu)
    if not cert.verify(kernel):
        raise CertificateError("minorization inequality fails")
    return cert


def kernel_q(cert: MinorizationCert, kernel: ResolventKernel, z1: int, z2: float) -> np.ndarray:
    """Law of the mark ``Z^3`` given ``(Z^1, Z^2) = (z1, z2)``."""
    if not 0 <= z2 <= 1:
        raise ValueError(f"z2 must lie in [0, 1], got {z2}")
    row = kernel.u1[z1]
    if z1 not in cert.small_set:
        return row.copy()
    if z2 <= cert.alpha_minor:
        return cert.nu.copy()
    rest = (row - cert.alpha_minor * cert.nu) / (1 - cert.alpha_minor)
    if np.any(rest < -CERT_TOL):
        raise CertificateError(f"negative residual kernel weight at state {z1}")
    rest = np.clip(rest, 0.0, None)
    return rest / rest.sum()


@dataclass(frozen=True)
class SplitState:
    z1: int
    z2: float
    z3: int

    def __post_init__(self):
        if not 0 <= self.z2 <= 1:
            raise ValueError("z2 must lie in [0, 1]")

    def in_atom(self, cert: MinorizationCert) -> bool:
        return self.z1 in cert.small_set and self.z2 <= cert.alpha_minor


def _categorical(weights: np.ndarray, u: float) -> int:
    cdf = np.cumsum(weights)
    k = int(np.searchsorted(cdf, u * cdf[-1], side="right"))
    return min(k, weights.size - 1)


def initial_split_state(cert: MinorizationCert, kernel: ResolventKernel, x: int, rng) -> SplitState:
    """Draw ``Z_0 = (x, U, Q((x, U), .))``."""
    u = rng.random()
    return SplitState(int(x), u, _categorical(kernel_q(cert, kernel, int(x), u), rng.random()))


# ---------------------------------------------------------------- jump times


class JumpTimeSampler:
    """Inverse-CDF sampler for the density ``e^{-t} p_t(x, x') / u1(x, x')``.

    The CDF is exact on a fixed grid, ``U^1 (I - e^{-t} P_t)`` divided by
    ``u1``, and inverted with cubic Hermite interpolation (the density is the
    derivative). Beyond ``t_max``, where ``1 - CDF < tail_eps``, the tail is
    completed by a unit-rate exponential.
    """

    def __init__(self, model: CtmcModel, kernel: ResolventKernel | None = None, tail_eps: float = 1e-10,
                 n_grid: int = 1500):
        if model.n > 64:
            raise ValueError("jump-time tables are limited to 64 states")
        self.model = model
        self.kernel = kernel or _cached_kernel(model)
        u1 = self.kernel.u1
        # 1 - CDF(t) <= e^{-t} max (U1 P_t / u1) <= e^{-t} / min u1
        t_max = float(np.log(1.0 / (tail_eps * u1.min()))) + 1.0
        head = np.geomspace(1e-7, 0.05, 80)
        body = np.linspace(0.05, t_max, n_grid)[1:]
        self.t = np.concatenate([[0.0], head, body])
        eye = np.eye(model.n)
        p = np.stack([transition_matrix(model, s) for s in self.t])
        decay = np.exp(-self.t)[:, None, None]
        self._cdf = np.einsum("ij,kjl->kil", u1, eye[None] - decay * p) / u1[None]
        self._cdf[0] = 0.0
        self._dens = decay * p / u1[None]
        self._tables: dict[tuple[int, int], tuple[np.ndarray, np.ndarray]] = {}

    def table(self, x: int, x3: int):
        key = (x, x3)
        if key not in self._tables:
            cdf = np.maximum.accumulate(self._cdf[:, x, x3])
            self._tables[key] = (cdf, self._dens[:, x, x3])
        return self._tables[key]

    def cdf(self, x: int, x3: int, t):
        """Exact CDF (no tabulation), for checks."""
        t = np.atleast_1d(np.asarray(t, dtype=float))
        u1 = self.kernel.u1
        return np.array([self.kernel.integrated(self.model, s)[x, x3] / u1[x, x3] for s in t])

    def sample(self, x: int, x3: int, rng, size=None):
        if self.kernel.u1[x, x3] <= 0:
            raise ValueError(f"pair ({x}, {x3}) is unreachable under U^1")
        cdf, dens = self.table(x, x3)
        u = rng.random(size)
        scalar = np.ndim(u) == 0
        u = np.atleast_1d(u)
        out = np.empty_like(u)
        tail = u >= cdf[-1]
        if np.any(tail):
            out[tail] = self.t[-1] - np.log((1.0 - u[tail]) / (1.0 - cdf[-1]))
        body = ~tail
        if np.any(body):
            out[body] = self._invert(cdf, dens, u[body])
        return float(out[0]) if scalar else out

    def _invert(self, cdf, dens, u):
        t = self.t
        k = np.clip(np.searchsorted(cdf, u, side="right") - 1, 0, t.size - 2)
        t0, t1 = t[k], t[k + 1]
        c0, c1 = cdf[k], cdf[k + 1]
        d0, d1 = dens[k], dens[k + 1]
        h = t1 - t0
        span = np.where(c1 > c0, c1 - c0, 1.0)
        s = np.clip((u - c0) / span, 0.0, 1.0)
        for _ in range(8):
            h00 = 2 * s**3 - 3 * s**2 + 1
            h10 = s**3 - 2 * s**2 + s
            h01 = -2 * s**3 + 3 * s**2
            h11 = s**3 - s**2
            val = h00 * c0 + h10 * h * d0 + h01 * c1 + h11 * h * d1
            der = ((6 * s**2 - 6 * s) * c0 + (3 * s**2 - 4 * s + 1) * h * d0
                   + (-6 * s**2 + 6 * s) * c1 + (3 * s**2 - 2 * s) * h * d1)
            step = np.where(der > 0, (val - u) / np.where(der > 0, der, 1.0), 0.0)
            s = np.clip(s - step, 0.0, 1.0)
        return t0 + s * h


_samplers: dict[int, JumpTimeSampler] = {}


def _sampler_for(model: CtmcModel, kernel: ResolventKernel) -> JumpTimeSampler:
    key = id(model)
    sampler = _samplers.get(key)
    if sampler is None or sampler.model is not model:
        sampler = JumpTimeSampler(model, kernel)
        _samplers[key] = sampler
    return sampler


def sample_jump_time(kernel: ResolventKernel, model: CtmcModel, x: int, x3: int, rng, size=None):
    if kernel.u1[x, x3] <= 0:
        raise ValueError(f"pair ({x}, {x3}) is unreachable under U^1")
    return _sampler_for(model, kernel).sample(x, x3, rng, size)


# ---------------------------------------------------------------- bridges


def bridge_weights(model: CtmcModel, x: int, x3: int, total: float, s: float) -> np.ndarray:
    if not 0 < s < total:
        raise ValueError("bridge time must satisfy 0 < s < total")
    p_s = transition_matrix(model, s)[x]
    p_rest = transition_matrix(model, total - s)[:, x3]
    norm = transition_matrix(model, total)[x, x3]
    if norm <= 0:
        raise RuntimeError("zero bridge density; impossible for an irreducible finite chain")
    return p_s * p_rest / norm


def sample_bridge_state(model: CtmcModel, x: int, x3: int, total: float, s: float, rng, size=None):
    """Sample ``X_s`` given ``X_0 = x`` and ``X_total = x3``."""
    w = bridge_weights(model, x, x3, total, s)
    w = np.clip(w, 0.0, None)
    return rng.choice(model.n, size=size, p=w / w.sum())


def _bridge_fill(model: CtmcModel, x: int, x3: int, total: float, points: int, rng) -> np.ndarray:
    """States on an equispaced grid of ``points`` intervals over ``[0, total]``."""
    h = total / points
    step = scipy.linalg.expm(h * model.generator)
    powers = [np.eye(model.n)]
    for _ in range(points):
        powers.append(powers[-1] @ step)
    path = np.empty(points + 1, dtype=np.int64)
    path[0] = x
    path[-1] = x3
    y = x
    u = rng.random(points - 1)
    for k in range(1, points):
        remaining = powers[points - k][:, x3]
        w = step[y] * remaining
        y = _categorical(np.clip(w, 0.0, None), u[k - 1])
        path[k] = y
    return path


# ---------------------------------------------------------------- cycle generators


def _check_cycles(n_cycles: int):
    if n_cycles < 2:
        raise ValueError("n_cycles must be at least 2 (one initial plus one stationary cycle)")


def forward_split_chain(
    model: CtmcModel,
    cert: MinorizationCert,
    z0: SplitState,
    n_cycles: int,
    observables: Sequence[ObservableSpec],
    rng: np.random.Generator,
    bridge_points: int = DEFAULT_BRIDGE_POINTS,
    kernel: ResolventKernel | None = None,
    keep_clock: bool = False,
) -> RegenerationStream:
    """Simulate the split process ``Z`` and cut it at the regeneration times ``R_n``.

    Cycle integrals use the trapezoid rule on the bridge grid, so they are
    approximate; durations are exact.
    """
    _check_cycles(n_cycles)
    kernel = kernel or _cached_kernel(model)
    sampler = _sampler_for(model, kernel)
    tables = observable_tables(observables, model.n)
    k_obs = len(observables)
    in_c = cert.in_c

    durations = np.empty(n_cycles)
    xi = np.zeros((n_cycles, k_obs))
    starts = np.empty(n_cycles, dtype=np.int64)
    marks: list[float] = [z0.z2]
    clock: list[float] = [0.0]

    x, u, x3 = z0.z1, z0.z2, z0.z3
    starts[0] = x
    elapsed = 0.0
    t_abs = 0.0
    check_allowed = False
    c = 0
    while c < n_cycles:
        regen_pending = check_allowed and in_c[x] and u <= cert.alpha_minor
        sigma = sampler.sample(x, x3, rng)
        if k_obs:
            path = _bridge_fill(model, x, x3, sigma, bridge_points, rng)
            vals = tables[:, path]
            h = sigma / bridge_points
            xi[c] += h * (vals.sum(axis=1) - 0.5 * (vals[:, 0] + vals[:, -1]))
        elapsed += sigma
        t_abs += sigma
        if regen_pending:
            durations[c] = elapsed
            elapsed = 0.0
            c += 1
            if c < n_cycles:
                starts[c] = x3
            check_allowed = False
        else:
            check_allowed = True
        x = x3
        u = rng.random()
        x3 = _categorical(kernel_q(cert, kernel, x, u), rng.random())
        marks.append(u)
        if keep_clock:
            clock.append(t_abs)
    names = [o.name for o in observables]
    return RegenerationStream(
        durations=durations[1:],
        xi={n: xi[1:, j] for j, n in enumerate(names)},
        initial_duration=float(durations[0]),
        initial_xi={n: float(xi[0, j]) for j, n in enumerate(names)},
        method="forward",
        start_states=starts[1:],
        initial_state=int(z0.z1),
        clock_times=np.array(clock) if keep_clock else None,
        jump_marks=np.array(marks),
        meta={"bridge_points": bridge_points, "alpha_minor": cert.alpha_minor},
    )


def _check_coin(cert: MinorizationCert, kernel: ResolventKernel):
    coin = cert.alpha_minor * cert.nu[None, :] / kernel.u1[list(cert.small_set)]
    if np.any(coin > 1 + 1e-12):
        raise CertificateError("retrospective coin probability exceeds 1; certificate is invalid")


def retrospective_regeneration(
    model: CtmcModel,
    cert: MinorizationCert,
    x0,
    n_cycles: int,
    observables: Sequence[ObservableSpec],
    rng: np.random.Generator,
    kernel: ResolventKernel | None = None,
) -> RegenerationStream:
    """Regeneration cycles from the chain plus a unit-rate clock and a delayed coin.

    At a clock tick ``T_n`` with ``X_{T_n} = x`` in C, once ``y = X_{T_{n+1}}``
    is known, ``T_n`` is an atom visit with probability
    ``alpha * nu(y) / u1(x, y)``; the regeneration time is then ``T_{n+1}``.
    Cycle integrals are exact.
    """
    _check_cycles(n_cycles)
    if not cert.small_set:
        raise CertificateError("empty small set")
    kernel = kernel or _cached_kernel(model)
    _check_coin(cert, kernel)
    x = model.index(x0)
    tables = observable_tables(observables, model.n)
    durations, xi, starts, steps = _kernels.retrospective_cycles(
        model.exit_rates, model.jump_cdf, kernel.u1, cert.nu, cert.alpha_minor, cert.in_c,
        tables, x, int(n_cycles), False, rng,
    )
    names = [o.name for o in observables]
    return RegenerationStream(
        durations=durations[1:],
        xi={n: xi[1:, j] for j, n in enumerate(names)},
        initial_duration=float(durations[0]),
        initial_xi={n: float(xi[0, j]) for j, n in enumerate(names)},
        method="retrospective",
        start_states=starts[1:],
        initial_state=x,
        skeleton_steps=steps[1:],
        meta={"alpha_minor": cert.alpha_minor, "initial_steps": int(steps[0])},
    )


def first_cycle_integrals(model: CtmcModel, cert: MinorizationCert, x0, n: int,
                          observable: ObservableSpec, rng, kernel: ResolventKernel | None = None):
    """``n`` independent samples of ``(int_0^{R_1} f, R_1)`` started from ``x0``."""
    kernel = kernel or _cached_kernel(model)
    tables = observable_tables([observable], model.n)
    durations, xi, _, _ = _kernels.retrospective_cycles(
        model.exit_rates, model.jump_cdf, kernel.u1, cert.nu, cert.alpha_minor, cert.in_c,
        tables, model.index(x0), int(n), True, rng,
    )
    return xi[:, 0], durations


def regeneration_counts(model: CtmcModel, cert: MinorizationCert, x0, observable: ObservableSpec,
                        t_grid, rng, kernel: ResolventKernel | None = None):
    """One replication of ``(N_t, int_0^t f)`` on ``t_grid`` via the retrospective coin."""
    kernel = kernel or _cached_kernel(model)
    table = observable_tables([observable], model.n)[0]
    return _kernels.retrospective_horizon(
        model.exit_rates, model.jump_cdf, kernel.u1, cert.nu, cert.alpha_minor, cert.in_c,
        table, model.index(x0), np.asarray(t_grid, dtype=float), rng,
    )
