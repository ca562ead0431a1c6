"""Independent reference computations used to derive frozen test values.

Nothing here imports the library's numerical code paths: closed forms,
quadrature and small linear systems only.
"""

from __future__ import annotations

import math

import numba
import numpy as np
from scipy import integrate, linalg


def two_state_generator(a, b):
    return np.array([[-a, a], [b, -b]], dtype=float)


def two_state_pt(a, b, t):
    """Closed-form ``exp(tG)`` for the two-state chain."""
    s = a + b
    e = math.exp(-s * t)
    return np.array([[b + a * e, a - a * e], [b - b * e, a + b * e]]) / s


def two_state_occupation(a, b, t):
    """``E_0 int_0^t 1{X_s = 0} ds``, the integral of ``P_s(0, 0)``."""
    s = a + b
    return b / s * t + a / s**2 * (1 - math.exp(-s * t))


def resolvent_by_quadrature(g):
    """``int_0^inf e^{-t} exp(tG) dt`` by adaptive vector quadrature."""
    return integrate.quad_vec(lambda t: math.exp(-t) * linalg.expm(t * g), 0, np.inf, epsabs=1e-13)[0]


def jump_time_mean(g, x, x3):
    """``int t e^{-t} p_t(x, x3) dt / u1(x, x3)`` by adaptive quadrature."""
    num = integrate.quad(lambda t: t * math.exp(-t) * linalg.expm(t * g)[x, x3], 0, np.inf, limit=200)[0]
    den = integrate.quad(lambda t: math.exp(-t) * linalg.expm(t * g)[x, x3], 0, np.inf, limit=200)[0]
    return num / den


def split_chain_first_cycle(u1, alpha, nu, in_c, g_values):
    """Exact ``E_x int_0^{R_1} g(X_s) ds`` for every start ``x``.

    One clock step from ``x`` ending in ``y`` accumulates ``(U D U)(x, y)``
    of ``g``; the step from an eligible tick in C ends the cycle with
    probability ``alpha nu(y) / u1(x, y)``. The first step is never eligible.
    """
    n = u1.shape[0]
    m = u1 @ np.diag(g_values) @ u1
    keep = u1 - alpha * np.outer(in_c.astype(float), nu)
    v = np.linalg.solve(np.eye(n) - keep, m @ np.ones(n))
    return m @ np.ones(n) + u1 @ v


def levy_sum_tail(x):
    """``P(1/Z1^2 + 1/Z2^2 > x)``: the sum is Levy with scale 4."""
    return math.erf(math.sqrt(2.0 / x))


def bm_cycle_occupation(x, y):
    """Expected time density at ``y`` before ``R_1`` for BM started at ``x`` (levels 0 and 1).

    Phase one runs until the first hit of 1, phase two from 1 until the hit of 0.
    """
    if x <= 1:
        g1 = 2.0 * (1.0 - max(x, y)) if y < 1 else 0.0
    else:
        g1 = 2.0 * (min(x, y) - 1.0) if y > 1 else 0.0
    g2 = 2.0 * min(1.0, y) if y > 0 else 0.0
    return g1 + g2


def bm_first_cycle_integral(x, edges, levels):
    """``E_x int_0^{R_1} |f|`` for a step function by exact piecewise integration."""
    total = 0.0
    for lo, hi, lev in zip(edges[:-1], edges[1:], levels):
        pts = sorted({lo, hi, *[p for p in (0.0, 1.0, x) if lo < p < hi]})
        for p, q in zip(pts[:-1], pts[1:]):
            total += abs(lev) * integrate.quad(lambda y: bm_cycle_occupation(x, y), p, q)[0]
    return total


def bound_positive_eta(t, x, eta, m, K, B, lam_star):
    """Theorem 1(i), typed out independently."""
    a = 4 * np.exp(-(t ** (2 * eta)) * (1 / (42 * m * B)) * min(x**2, x))
    b = 4 * np.e * np.exp(-(2 ** (0.5 + eta)) / (6 * K * m ** (0.5 + eta)) * t ** (0.5 + eta) * x)
    c = 8 * np.exp(-t * max(x, 1) * (3 / (4 * m)) * lam_star)
    return a, b, c


def bound_positive_clt(t, x, m, K, B, lam_star):
    a = 4 * np.exp(-(1 / (42 * B)) * min(x**2, x))
    b = 4 * np.e * np.exp(-np.sqrt(2) / (6 * K * np.sqrt(m)) * np.sqrt(t) * x)
    c = 8 * np.exp(-t * max(x, 1) * (3 / (4 * m)) * lam_star)
    return a, b, c


def bound_null(vstar, x, eta, K, B):
    a = 4 * np.exp(-(1 / (42 * B)) * vstar**eta * min(x**2, x))
    b = 4 * np.e * np.exp(-(1 / (6 * K)) * vstar ** (0.5 + eta) * x)
    c = 8 * np.exp(-0.5 * vstar**eta * max(x, 1))
    return a, b, c


def bound_regular(t, x, eta, alpha, L, K, B, lam_t):
    a = 4 * np.exp(-(1 / (42 * B)) * t ** (2 * eta / (2 - alpha)) * min(x**2, x) * L)
    b = 4 * np.e * np.exp(-(1 / (6 * K)) * t ** (alpha / 2 + eta) * x)
    c = 8 * np.exp(-0.5 * t ** (2 * eta / (2 - alpha)) * max(x, 1) * lam_t)
    return a, b, c


def grid_sup(fn, lo, hi, n=200_001):
    grid = np.linspace(lo, hi, n)
    vals = fn(grid)
    k = int(np.argmax(vals))
    return float(vals[k]), float(grid[k])


@numba.njit(cache=True)
def ou_fine_cycles(z, dt, refine, c1, a, b, aux):
    """Cycle lengths of an Euler path with step ``dt / refine`` driven by the coarse normals ``z``.

    Each coarse increment ``sqrt(dt) z[k]`` is split into ``refine`` pieces by
    Brownian-bridge sampling, so the fine and coarse paths share the same
    Brownian motion. Cycles are ``b``-hit then ``a``-hit, detected by sign change.
    """
    h = dt / refine
    sq = math.sqrt(dt)
    x = a
    phase = 0
    elapsed = 0.0
    out = []
    inc = np.empty(refine)
    for k in range(z.size):
        rem = sq * z[k]
        left = dt
        for i in range(refine - 1):
            d = rem * h / left + math.sqrt(h * (left - h) / left) * aux.standard_normal()
            inc[i] = d
            rem -= d
            left -= h
        inc[refine - 1] = rem
        for i in range(refine):
            xn = x + c1 * x * h + inc[i]
            elapsed += h
            if phase == 0:
                if (x < b and xn >= b) or (x > b and xn <= b):
                    phase = 1
            elif (x < a and xn >= a) or (x > a and xn <= a):
                out.append(elapsed)
                elapsed = 0.0
                phase = 0
            x = xn
    return np.array(out)

