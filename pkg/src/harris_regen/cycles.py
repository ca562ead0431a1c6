"""Observables and regeneration-cycle containers shared by all simulators."""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

SCHEMA_VERSION = 1


@dataclass(frozen=True, eq=False)
class ObservableSpec:
    """A bounded observable ``f`` together with its sup norm.

    Finite-state observables carry a per-state ``table``; diffusion observables
    are step functions given by ``edges``/``levels`` and vanish outside
    ``[edges[0], edges[-1])``, so they have compact support.
    """

    name: str
    eval: Callable[[np.ndarray], np.ndarray]
    sup_norm: float
    centered: bool = False
    support: tuple | None = None
    table: np.ndarray | None = None
    edges: np.ndarray | None = None
    levels: np.ndarray | None = None

    @classmethod
    def on_states(cls, name: str, values, centered: bool = False) -> "ObservableSpec":
        table = np.array(values, dtype=float)
        table.setflags(write=False)
        support = tuple(int(i) for i in np.flatnonzero(table))
        return cls(
            name=name,
            eval=lambda idx: table[np.asarray(idx, dtype=np.int64)],
            sup_norm=float(np.max(np.abs(table))) if table.size else 0.0,
            centered=centered,
            support=support,
            table=table,
        )

    @classmethod
    def indicator(cls, name: str, n_states: int, state: int) -> "ObservableSpec":
        values = np.zeros(n_states)
        values[state] = 1.0
        return cls.on_states(name, values)

    @classmethod
    def step(cls, name: str, edges, levels, centered: bool = False) -> "ObservableSpec":
        edges = np.array(edges, dtype=float)
        levels = np.array(levels, dtype=float)
        if edges.ndim != 1 or levels.shape != (edges.size - 1,):
            raise ValueError("step observable needs len(levels) == len(edges) - 1")
        if np.any(np.diff(edges) <= 0):
            raise ValueError("step edges must be strictly increasing")
        edges.setflags(write=False)
        levels.setflags(write=False)

        def f(x):
            x = np.asarray(x, dtype=float)
            k = np.searchsorted(edges, x, side="right") - 1
            inside = (k >= 0) & (k < levels.size)
            return np.where(inside, levels[np.clip(k, 0, levels.size - 1)], 0.0)

        return cls(
            name=name,
            eval=f,
            sup_norm=float(np.max(np.abs(levels))),
            centered=centered,
            support=(float(edges[0]), float(edges[-1])),
            edges=edges,
            levels=levels,
        )

    @property
    def is_finite_state(self) -> bool:
        return self.table is not None

    @property
    def lebesgue_integral(self) -> float:
        if self.edges is None:
            raise TypeError(f"observable {self.name!r} is not a step function")
        return float(np.sum(self.levels * np.diff(self.edges)))

    def absolute(self) -> "ObservableSpec":
        """``|f|``, as needed by the constant C(f)."""
        if self.table is not None:
            return ObservableSpec.on_states(f"abs_{self.name}", np.abs(self.table))
        if self.edges is not None:
            return ObservableSpec.step(f"abs_{self.name}", self.edges, np.abs(self.levels))
        raise TypeError("absolute() needs a tabulated or step observable")

    def scaled(self, factor: float, name: str | None = None) -> "ObservableSpec":
        name = name or f"{factor:g}*{self.name}"
        if self.table is not None:
            return ObservableSpec.on_states(name, factor * self.table, centered=self.centered)
        if self.edges is not None:
            return ObservableSpec.step(name, self.edges, factor * self.levels, centered=self.centered)
        raise TypeError("scaled() needs a tabulated or step observable")

    def check_bounded(self, points) -> bool:
        vals = np.asarray(self.eval(np.asarray(points)))
        return bool(np.all(np.abs(vals) <= self.sup_norm * (1 + 1e-12)))

    def mean_under(self, weights) -> float:
        """Integral of ``f`` against per-state ``weights``."""
        if self.table is None:
            raise TypeError("mean_under() needs a finite-state observable")
        return float(np.dot(np.asarray(weights, dtype=float), self.table))


def observable_tables(observables: Sequence[ObservableSpec], n_states: int) -> np.ndarray:
    """Stack finite-state observables into a ``(k, n_states)`` matrix."""
    out = np.zeros((len(observables), n_states))
    for i, obs in enumerate(observables):
        if obs.table is None or obs.table.shape != (n_states,):
            raise ValueError(f"observable {obs.name!r} is not defined on {n_states} states")
        out[i] = obs.table
    return out


def observable_steps(observables: Sequence[ObservableSpec]) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Pack step observables as padded ``edges``/``levels`` arrays plus counts."""
    k = len(observables)
    width = max([obs.levels.size for obs in observables], default=1)
    edges = np.zeros((max(k, 1), width + 1))
    levels = np.zeros((max(k, 1), width))
    counts = np.zeros(max(k, 1), dtype=np.int64)
    for i, obs in enumerate(observables):
        if obs.edges is None:
            raise ValueError(f"observable {obs.name!r} is not a step function")
        n = obs.levels.size
        edges[i, : n + 1] = obs.edges
        levels[i, :n] = obs.levels
        counts[i] = n
    return edges, levels, counts


@dataclass(frozen=True)
class RegenerationRecord:
    """One life cycle ``[R_{n-1}, R_n]``."""

    index: int
    duration: float
    xi: dict[str, float]

    def __post_init__(self):
        if not self.duration > 0:
            raise ValueError(f"cycle {self.index}: duration must be positive, got {self.duration}")


@dataclass
class RegenerationStream:
    """Cycles produced by one simulation run.

    ``durations``/``xi`` hold the stationary cycles n = 2, 3, ...; the first
    cycle ``[0, R_1]`` has a different law and is kept apart in
    ``initial_duration``/``initial_xi``.
    """

    durations: np.ndarray
    xi: dict[str, np.ndarray]
    initial_duration: float
    initial_xi: dict[str, float]
    method: str
    start_states: np.ndarray | None = None
    initial_state: object = None
    skeleton_steps: np.ndarray | None = None
    clock_times: np.ndarray | None = None
    jump_marks: np.ndarray | None = None
    n_truncated: int = 0
    truncation_time: float | None = None
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.durations = np.asarray(self.durations, dtype=float)
        self.xi = {k: np.asarray(v, dtype=float) for k, v in self.xi.items()}
        for name, arr in self.xi.items():
            if arr.shape != self.durations.shape:
                raise ValueError(f"xi[{name!r}] has shape {arr.shape}, expected {self.durations.shape}")

    def __len__(self) -> int:
        return self.durations.size

    @property
    def observable_names(self) -> list[str]:
        return list(self.xi)

    @property
    def records(self) -> list[RegenerationRecord]:
        return [
            RegenerationRecord(n + 2, float(d), {k: float(v[n]) for k, v in self.xi.items()})
            for n, d in enumerate(self.durations)
        ]

    @property
    def initial_record(self) -> RegenerationRecord:
        return RegenerationRecord(1, float(self.initial_duration), dict(self.initial_xi))

    def all_durations(self) -> np.ndarray:
        """Durations of every cycle, first (non-stationary) cycle included."""
        return np.concatenate([[self.initial_duration], self.durations])

    def all_xi(self, name: str) -> np.ndarray:
        return np.concatenate([[self.initial_xi[name]], self.xi[name]])

    def subset(self, idx) -> "RegenerationStream":
        """Stationary cycles selected by ``idx`` (initial segment kept)."""
        pick = lambda a: None if a is None else np.asarray(a)[idx]
        return RegenerationStream(
            durations=self.durations[idx],
            xi={k: v[idx] for k, v in self.xi.items()},
            initial_duration=self.initial_duration,
            initial_xi=dict(self.initial_xi),
            method=self.method,
            start_states=pick(self.start_states),
            initial_state=self.initial_state,
            skeleton_steps=pick(self.skeleton_steps),
            n_truncated=self.n_truncated,
            truncation_time=self.truncation_time,
            meta=dict(self.meta),
        )

    def to_csv(self, path) -> None:
        path = Path(path)
        names = self.observable_names
        with path.open("w", newline="") as fh:
            fh.write(f"# schema_version: {SCHEMA_VERSION}\n")
            writer = csv.writer(fh)
            header = ["cycle_index", "duration"] + [f"xi_{n}" for n in names]
            with_states = self.start_states is not None
            if with_states:
                header.append("start_state")
            writer.writerow(header)
            row = [1, repr(float(self.initial_duration))] + [repr(float(self.initial_xi[n])) for n in names]
            if with_states:
                row.append(self.initial_state if self.initial_state is not None else "")
            writer.writerow(row)
            for i, d in enumerate(self.durations):
                row = [i + 2, repr(float(d))] + [repr(float(self.xi[n][i])) for n in names]
                if with_states:
                    row.append(int(self.start_states[i]))
                writer.writerow(row)

    @classmethod
    def from_csv(cls, path, method: str = "unknown") -> "RegenerationStream":
        path = Path(path)
        with path.open(newline="") as fh:
            lines = [ln for ln in fh if not ln.startswith("#")]
        reader = csv.reader(lines)
        header = next(reader)
        rows = list(reader)
        if header[:2] != ["cycle_index", "duration"]:
            raise ValueError(f"{path}: unexpected header {header}")
        if not rows:
            raise ValueError(f"{path}: no cycles")
        xi_cols = [(j, h[3:]) for j, h in enumerate(header) if h.startswith("xi_")]
        state_col = header.index("start_state") if "start_state" in header else None
        first, rest = rows[0], rows[1:]
        durations = np.array([float(r[1]) for r in rest])
        xi = {name: np.array([float(r[j]) for r in rest]) for j, name in xi_cols}
        starts = None
        initial_state = None
        if state_col is not None:
            starts = np.array([int(r[state_col]) for r in rest], dtype=np.int64)
            initial_state = int(first[state_col]) if first[state_col] != "" else None
        return cls(
            durations=durations,
            xi=xi,
            initial_duration=float(first[1]),
            initial_xi={name: float(first[j]) for j, name in xi_cols},
            method=method,
            start_states=starts,
            initial_state=initial_state,
        )
