import numpy as np


def within_sigmas(estimate, target, se, k=3.0):
    return abs(estimate - target) <= k * se


def mean_se(x):
    x = np.asarray(x, dtype=float)
    return float(x.mean()), float(x.std(ddof=1) / np.sqrt(x.size))
