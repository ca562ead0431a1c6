"""Exact transition, resolvent and invariant-measure computations for finite chains."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.linalg

from .models import CtmcModel


class ResolventError(ValueError):
    pass


def transition_matrix(model: CtmcModel, t: float) -> np.ndarray:
    """``P_t = exp(t G)``; rows sum to one."""
    if t < 0:
        raise ResolventError(f"transition time must be non-negative, got {t}")
    if t == 0:
        return np.eye(model.n)
    return scipy.linalg.expm(t * model.generator)


@dataclass(frozen=True, eq=False)
class ResolventKernel:
    """``u1[x, y] = U^1(x, {y}) = int_0^inf e^{-t} p_t(x, y) dt``."""

    u1: np.ndarray
    model_ref: str

    def __post_init__(self):
        u1 = np.asarray(self.u1, dtype=float)
        if np.any(u1 < 0):
            raise ResolventError("resolvent has negative entries")
        if not np.allclose(u1.sum(axis=1), 1.0, atol=1e-10, rtol=0):
            raise ResolventError("resolvent rows do not sum to 1")
        u1.setflags(write=False)
        object.__setattr__(self, "u1", u1)

    @property
    def n(self) -> int:
        return self.u1.shape[0]

    def integrated(self, model: CtmcModel, t: float) -> np.ndarray:
        """``int_0^t e^{-s} P_s ds = U^1 (I - e^{-t} P_t)``."""
        return self.u1 @ (np.eye(self.n) - np.exp(-t) * transition_matrix(model, t))


def resolvent_kernel(model: CtmcModel) -> ResolventKernel:
    n = model.n
    a = np.eye(n) - model.generator
    if np.linalg.cond(a) > 1e12:
        raise ResolventError("I - G is numerically singular")
    u1 = np.linalg.solve(a, np.eye(n))
    u1[np.abs(u1) < 1e-300] = 0.0
    # roundoff can leave -1e-17 entries
    u1 = np.where((u1 < 0) & (u1 > -1e-14), 0.0, u1)
    kernel = ResolventKernel(u1, model.fingerprint())
    if np.any(kernel.u1 <= 0):
        raise ResolventError("irreducible model produced a non-positive resolvent entry")
    return kernel


@dataclass(frozen=True, eq=False)
class StationaryMeasure:
    """Invariant weights; ``normalization`` is ``"probability"`` or ``"cycle"``.

    The cycle normalization scales the probability vector by the mean cycle
    length ``m`` so that ``mu(f)`` equals the expected integral of ``f`` over
    one life cycle.
    """

    weights: np.ndarray
    normalization: str = "probability"

    def __post_init__(self):
        w = np.asarray(self.weights, dtype=float)
        if np.any(w < 0):
            raise ValueError("invariant weights must be non-negative")
        if self.normalization not in ("probability", "cycle"):
            raise ValueError(f"unknown normalization {self.normalization!r}")
        if self.normalization == "probability" and abs(w.sum() - 1.0) > 1e-10:
            raise ValueError("probability-normalized weights must sum to 1")
        w.setflags(write=False)
        object.__setattr__(self, "weights", w)

    @property
    def total_mass(self) -> float:
        return float(self.weights.sum())

    def cycle_normalized(self, mean_cycle: float) -> "StationaryMeasure":
        p = self.weights / self.weights.sum()
        return StationaryMeasure(p * mean_cycle, "cycle")

    def __call__(self, values) -> float:
        return float(np.dot(self.weights, np.asarray(values, dtype=float)))


def stationary_measure(model: CtmcModel) -> StationaryMeasure:
    """Left null vector of the generator, normalized to a probability."""
    n = model.n
    # replace one balance equation by the normalization; nonsingular when irreducible
    a = model.generator.T.copy()
    a[-1, :] = 1.0
    rhs = np.zeros(n)
    rhs[-1] = 1.0
    w = np.linalg.solve(a, rhs)
    w = np.where(w < 0, 0.0, w)
    w /= w.sum()
    return StationaryMeasure(w, "probability")
