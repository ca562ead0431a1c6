"""Brownian regeneration cycles: exact sampler, heavy tail, and the regular-regime rate.

Run with ``python3 demos/brownian_cycles.py``; takes under a minute.
"""

import math

import numpy as np

from harris_regen.bounds import lambda_star_t, regular_floor
from harris_regen.models import (
    BM_ALPHA,
    BM_SLOWLY_VARYING,
    bm_laplace,
    brownian_motion,
    sample_bm_cycle_duration,
    simulate_diffusion_cycles,
)
from harris_regen.regeneration import center_step, empirical_laplace
from harris_regen.streams import stream
from harris_regen.verify import hill_estimate

# a cycle is the hitting time of 1 from 0 plus that of 0 from 1: a sum of two Levy variables
d = sample_bm_cycle_duration(stream(1), 1_000_000)
for lam in (0.1, 0.5, 1.0):
    v, se = empirical_laplace(d, lam)
    print(f"F({lam}) = {v:.5f} +- {se:.5f}   exact {math.exp(-2 * math.sqrt(2 * lam)):.5f}")

k = int(math.sqrt(d.size))
print(f"Hill tail index (k = {k}): {hill_estimate(d, k):.3f}, expected {BM_ALPHA}")
print(f"P(D > 100) = {np.mean(d > 100):.4f}, exact {math.erf(math.sqrt(2 / 100)):.4f}")

# Euler cycles with a centered step observable: +1 on [0,1), -1 on [1,2).
# The grid detects level crossings late, so Euler cycles run longer than exact ones.
f = center_step([0.0, 1.0, 2.0], [1.0, -1.0], "f")
cyc = simulate_diffusion_cycles(brownian_motion(1e-2), 50_000, [f], stream(2))
xi = cyc.xi["f"]
print(f"Euler grid cycles: mean xi = {xi.mean():+.4f} +- {xi.std() / math.sqrt(xi.size):.4f}, "
      f"median duration {np.median(cyc.durations):.3f} (exact sampler {np.median(d):.3f})")

for t in (1e3, 1e6):
    lam = lambda_star_t(bm_laplace, t, BM_ALPHA, 0.25, BM_SLOWLY_VARYING)
    print(f"Lambda*_t at t = {t:g}: {lam:.5f}  (floor {regular_floor(BM_ALPHA)})")
