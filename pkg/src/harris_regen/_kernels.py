"""Compiled inner loops.

Every kernel takes a ``numpy.random.Generator`` and draws from it in a fixed
order, so outputs are reproducible from the generator's seed.
"""

import math

import numpy as np
from numba import njit


@njit(cache=True)
def _next_state(jump_cdf, y, u):
    row = jump_cdf[y]
    n = row.size
    for z in range(n):
        if u < row[z]:
            return z
    # rounding in the last cumulative entry
    for z in range(n - 1, -1, -1):
        if z != y:
            return z
    return y


@njit(cache=True)
def ctmc_path(exit_rates, jump_cdf, x0, horizon, rng):
    cap = 64
    times = np.empty(cap)
    values = np.empty(cap, dtype=np.int64)
    times[0] = 0.0
    values[0] = x0
    n = 1
    t = 0.0
    y = x0
    while True:
        r = exit_rates[y]
        if r <= 0.0:
            break
        t += rng.exponential() / r
        if t > horizon:
            break
        y = _next_state(jump_cdf, y, rng.random())
        if n == cap:
            cap *= 2
            nt = np.empty(cap)
            nv = np.empty(cap, dtype=np.int64)
            nt[:n] = times[:n]
            nv[:n] = values[:n]
            times = nt
            values = nv
        times[n] = t
        values[n] = y
        n += 1
    return times[:n], values[:n]


@njit(cache=True)
def ctmc_integrals(exit_rates, jump_cdf, table, x0, t_grid, rng):
    """``int_0^t table[X_s] ds`` for each ``t`` in the sorted ``t_grid``."""
    out = np.zeros(t_grid.size)
    acc = 0.0
    t = 0.0
    y = x0
    k = 0
    horizon = t_grid[t_grid.size - 1]
    while k < t_grid.size:
        r = exit_rates[y]
        t_next = t + rng.exponential() / r if r > 0.0 else math.inf
        while k < t_grid.size and t_grid[k] <= t_next:
            out[k] = acc + table[y] * (t_grid[k] - t)
            k += 1
        if t_next > horizon:
            break
        acc += table[y] * (t_next - t)
        t = t_next
        y = _next_state(jump_cdf, y, rng.random())
    return out


@njit(cache=True)
def retrospective_cycles(exit_rates, jump_cdf, u1, nu, alpha, in_c, tables, x0, n_cycles, restart, rng):
    """Split-chain cycles by the retrospective coin.

    Returns durations, cycle integrals (n_cycles, k), start states and the
    number of unit-rate clock ticks per cycle. With ``restart`` every cycle
    starts afresh from ``x0`` (used for first-cycle expectations).
    """
    k = tables.shape[0]
    durations = np.empty(n_cycles)
    xi = np.zeros((n_cycles, k))
    starts = np.empty(n_cycles, dtype=np.int64)
    steps = np.zeros(n_cycles, dtype=np.int64)
    x = x0
    starts[0] = x0
    elapsed = 0.0
    eligible = False  # S_{n+1} is searched strictly after R_n
    c = 0
    while c < n_cycles:
        sigma = rng.exponential()
        y = x
        remaining = sigma
        while True:
            r = exit_rates[y]
            h = rng.exponential() / r if r > 0.0 else math.inf
            if h >= remaining:
                for j in range(k):
                    xi[c, j] += tables[j, y] * remaining
                break
            for j in range(k):
                xi[c, j] += tables[j, y] * h
            remaining -= h
            y = _next_state(jump_cdf, y, rng.random())
        elapsed += sigma
        steps[c] += 1
        regen = False
        if eligible and in_c[x]:
            p = alpha * nu[y] / u1[x, y]
            if rng.random() < p:
                regen = True
        if regen:
            durations[c] = elapsed
            c += 1
            elapsed = 0.0
            eligible = False
            if restart:
                y = x0
            if c < n_cycles:
                starts[c] = y
        else:
            eligible = True
        x = y
    return durations, xi, starts, steps


@njit(cache=True)
def retrospective_horizon(exit_rates, jump_cdf, u1, nu, alpha, in_c, table, x0, t_grid, rng):
    """Regeneration counts ``N_t`` and integrals ``int_0^t table[X_s] ds`` on ``t_grid``."""
    m = t_grid.size
    counts = np.zeros(m, dtype=np.int64)
    integrals = np.zeros(m)
    horizon = t_grid[m - 1]
    x = x0
    t = 0.0
    acc = 0.0
    n_regen = 0
    eligible = False
    k_int = 0
    k_cnt = 0
    while k_int < m or k_cnt < m:
        sigma = rng.exponential()
        t_end = t + sigma
        y = x
        s = t
        while True:
            r = exit_rates[y]
            s_next = s + rng.exponential() / r if r > 0.0 else math.inf
            stop = s_next >= t_end
            seg_end = t_end if stop else s_next
            while k_int < m and t_grid[k_int] <= seg_end:
                integrals[k_int] = acc + table[y] * (t_grid[k_int] - s)
                k_int += 1
            acc += table[y] * (seg_end - s)
            if stop:
                break
            s = s_next
            y = _next_state(jump_cdf, y, rng.random())
        t = t_end
        regen = False
        if eligible and in_c[x]:
            if rng.random() < alpha * nu[y] / u1[x, y]:
                regen = True
        if regen:
            while k_cnt < m and t_grid[k_cnt] < t:
                counts[k_cnt] = n_regen
                k_cnt += 1
            n_regen += 1
            eligible = False
        else:
            eligible = True
        x = y
        if t > horizon:
            while k_cnt < m:
                counts[k_cnt] = n_regen
                k_cnt += 1
    return counts, integrals


@njit(cache=True)
def _step_value(edges, levels, count, x):
    if x < edges[0] or x >= edges[count]:
        return 0.0
    lo = 0
    hi = count
    while hi - lo > 1:
        mid = (lo + hi) // 2
        if edges[mid] <= x:
            lo = mid
        else:
            hi = mid
    return levels[lo]


@njit(cache=True)
def _crossed(prev, new, level):
    return (prev < level and new >= level) or (prev > level and new <= level)


@njit(cache=True)
def diffusion_cycles(drift, disp, x0, lvl_a, lvl_b, dt, edges, levels, counts, n_obs,
                     n_cycles, max_dur, restart, skip, band, rng):
    """Euler cycles ``b``-hit then ``a``-hit, detected by sign change on the grid.

    With ``skip`` the path is stepped only inside the outer band
    ``[band[2], band[3]]``; outside it the exact driftless return time to the
    inner band edge is drawn (valid for Brownian motion only).
    """
    durations = np.empty(n_cycles)
    xi = np.zeros((n_cycles, max(n_obs, 1)))
    sq = math.sqrt(dt)
    truncated = 0
    c = 0
    x = x0
    elapsed = 0.0
    phase = 1 if x == lvl_b else 0
    fx = np.empty(max(n_obs, 1))
    for j in range(n_obs):
        fx[j] = _step_value(edges[j], levels[j], counts[j], x)
    while c < n_cycles:
        x_new = x + drift(x) * dt + disp(x) * sq * rng.standard_normal()
        elapsed += dt
        for j in range(n_obs):
            f_new = _step_value(edges[j], levels[j], counts[j], x_new)
            xi[c, j] += 0.5 * (fx[j] + f_new) * dt
            fx[j] = f_new
        done = False
        if phase == 0:
            if _crossed(x, x_new, lvl_b):
                phase = 1
        elif _crossed(x, x_new, lvl_a):
            done = True
        x = x_new
        if skip and not done and (x > band[3] or x < band[2]):
            edge = band[1] if x > band[3] else band[0]
            s = disp(edge)
            z = rng.standard_normal()
            elapsed += ((x - edge) / s) ** 2 / (z * z)
            x = edge
            for j in range(n_obs):
                fx[j] = _step_value(edges[j], levels[j], counts[j], x)
        if done:
            durations[c] = elapsed
            c += 1
            elapsed = 0.0
            phase = 0
            if restart:
                x = x0
                phase = 1 if x == lvl_b else 0
                for j in range(n_obs):
                    fx[j] = _step_value(edges[j], levels[j], counts[j], x)
        elif elapsed > max_dur:
            truncated += 1
            for j in range(n_obs):
                xi[c, j] = 0.0
            elapsed = 0.0
            x = x0 if restart else lvl_a
            phase = 1 if x == lvl_b else 0
            for j in range(n_obs):
                fx[j] = _step_value(edges[j], levels[j], counts[j], x)
    return durations, xi[:, :n_obs], truncated


@njit(cache=True)
def diffusion_integrals(drift, disp, x0, dt, edges, levels, count, t_grid, skip, band, rng):
    """Trapezoid ``int_0^t f(X_s) ds`` on an Euler grid for each ``t`` in ``t_grid``."""
    m = t_grid.size
    out = np.zeros(m)
    acc = 0.0
    t = 0.0
    x = x0
    fx = _step_value(edges, levels, count, x)
    k = 0
    while k < m:
        h = dt
        if t + h >= t_grid[k]:
            h = t_grid[k] - t
        x_new = x + drift(x) * h + disp(x) * math.sqrt(h) * rng.standard_normal()
        f_new = _step_value(edges, levels, count, x_new)
        acc += 0.5 * (fx + f_new) * h
        t += h
        x = x_new
        fx = f_new
        while k < m and t >= t_grid[k]:
            out[k] = acc
            k += 1
        if skip and k < m and (x > band[3] or x < band[2]):
            edge = band[1] if x > band[3] else band[0]
            s = disp(edge)
            z = rng.standard_normal()
            t += ((x - edge) / s) ** 2 / (z * z)
            x = edge
            fx = _step_value(edges, levels, count, x)
            while k < m and t >= t_grid[k]:
                out[k] = acc
                k += 1
    return out
