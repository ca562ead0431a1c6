"""Replicated simulation of additive functionals, exact binomial tail estimates, deviation curves."""

from __future__ import annotations

import csv
import hashlib
import json
import math
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np
from scipy import stats

from . import __version__
from .bounds import REGIMES, BoundQuery, evaluate_bound
from .cycles import SCHEMA_VERSION, ObservableSpec, RegenerationStream
from .models import (
    BM_ALPHA,
    BM_SLOWLY_VARYING,
    CtmcModel,
    Diffusion1D,
    bm_laplace,
    diffusion_integrals,
    model_from_document,
    sample_bm_cycle_duration,
    simulate_diffusion_cycles,
)
from .regeneration import (
    ConstantEstimates,
    InsufficientDataError,
    NtTable,
    center_on_states,
    center_step,
    constants_from_cycles,
    count_regenerations,
    estimate_cf,
    split_replications,
)
from .resolvent import resolvent_kernel
from .splitting import (
    MinorizationCert,
    compute_minorization,
    forward_split_chain,
    initial_split_state,
    regeneration_counts,
    retrospective_regeneration,
)
from .streams import TAG_CONSTANTS, TAG_CYCLES, TAG_SIMULATE, stream

METHODS = ("forward", "retrospective", "hitting")
FAULTS = ("splice", "bound_div", "halve_k")
MIN_TAIL_SAMPLES = 1000
CI_LEVEL = 0.99
ONE = "one"


class ConfigError(ValueError):
    pass


# ---------------------------------------------------------------- configuration


def _sorted_grid(values, name: str) -> tuple[float, ...]:
    vals = tuple(float(v) for v in np.atleast_1d(values))
    if not vals:
        raise ConfigError(f"{name} must be non-empty")
    if any(b < a for a, b in zip(vals, vals[1:])):
        raise ConfigError(f"{name} must be sorted")
    return vals


@dataclass(frozen=True)
class ExperimentConfig:
    """One experiment: model, observable, regimes and grids, replication count, seed."""

    model: dict
    observable: dict
    regimes: tuple[str, ...]
    t_grid: tuple[float, ...]
    x_grid: tuple[float, ...]
    eta_grid: tuple[float, ...]
    replications: int
    master_seed: int
    method: str
    x0: object = None
    small_set: tuple | None = None
    n_cycles: int = 100_000
    n_per_state: int = 20_000
    vstar_replications: int = 10_000
    alpha_reg: float | None = None
    L_t: float | None = None
    laplace: str = "empirical"
    fault_injection: tuple[str, ...] = ()
    name: str = "experiment"
    min_replications: int = MIN_TAIL_SAMPLES

    def __post_init__(self):
        for r in self.regimes:
            if r not in REGIMES:
                raise ConfigError(f"unknown regime {r!r}; expected one of {REGIMES}")
        if self.method not in METHODS:
            raise ConfigError(f"unknown method {self.method!r}; expected one of {METHODS}")
        if self.replications < self.min_replications:
            raise ConfigError(f"replications must be at least {self.min_replications}")
        if not 0 <= self.master_seed < 2**64:
            raise ConfigError("master_seed must be a 64-bit non-negative integer")
        for fault in self.fault_injection:
            if fault not in FAULTS:
                raise ConfigError(f"unknown fault injection {fault!r}; expected one of {FAULTS}")
        if self.laplace not in ("empirical", "bm"):
            raise ConfigError("laplace must be 'empirical' or 'bm'")
        if "name" not in self.observable:
            raise ConfigError("observable needs a name")
        kind = self.model.get("kind")
        if kind in ("bm", "diffusion1d") and self.method != "hitting":
            raise ConfigError("diffusion models use method 'hitting'")
        if kind in ("ctmc", "spinflip") and self.method == "hitting":
            raise ConfigError("finite models use method 'forward' or 'retrospective'")

    @property
    def eta_dev(self) -> float:
        return self.eta_grid[0]

    @property
    def observable_name(self) -> str:
        return str(self.observable["name"])

    @classmethod
    def from_dict(cls, doc: dict, base_dir: Path | None = None) -> "ExperimentConfig":
        doc = dict(doc)
        if "model_file" in doc:
            path = Path(doc.pop("model_file"))
            if base_dir is not None and not path.is_absolute():
                path = base_dir / path
            if not path.exists():
                raise FileNotFoundError(f"model file not found: {path}")
            doc["model"] = json.loads(path.read_text())
        try:
            regimes = doc.get("regimes", doc.get("regime"))
            regimes = (regimes,) if isinstance(regimes, str) else tuple(regimes)
            eta = doc.get("eta_grid", doc.get("eta_dev", 0.5))
            small = doc.get("small_set")
            return cls(
                model=dict(doc["model"]),
                observable=dict(doc["observable"]),
                regimes=regimes,
                t_grid=_sorted_grid(doc["t_grid"], "t_grid"),
                x_grid=_sorted_grid(doc["x_grid"], "x_grid"),
                eta_grid=_sorted_grid(eta, "eta_grid"),
                replications=int(doc["replications"]),
                master_seed=int(doc["master_seed"]),
                method=str(doc.get("method", "retrospective")),
                x0=doc.get("x0"),
                small_set=None if small is None else tuple(int(s) for s in small),
                n_cycles=int(doc.get("n_cycles", 100_000)),
                n_per_state=int(doc.get("n_per_state", 20_000)),
                vstar_replications=int(doc.get("vstar_replications", 10_000)),
                alpha_reg=None if doc.get("alpha_reg") is None else float(doc["alpha_reg"]),
                L_t=None if doc.get("L_t") is None else float(doc["L_t"]),
                laplace=str(doc.get("laplace", "empirical")),
                fault_injection=tuple(doc.get("fault_injection", ())),
                name=str(doc.get("name", "experiment")),
                min_replications=int(doc.get("min_replications", MIN_TAIL_SAMPLES)),
            )
        except KeyError as exc:
            raise ConfigError(f"missing config field {exc.args[0]!r}") from exc
        except (TypeError, ValueError) as exc:
            if isinstance(exc, ConfigError):
                raise
            raise ConfigError(str(exc)) from exc

    def to_dict(self) -> dict:
        d = asdict(self)
        for k, v in d.items():
            if isinstance(v, tuple):
                d[k] = list(v)
        return d

    def config_hash(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"), default=str)
        return hashlib.sha256(blob.encode()).hexdigest()


def load_config(path) -> ExperimentConfig:
    """Read a TOML or JSON experiment file; parse errors carry line numbers."""
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"config file not found: {path}")
    text = path.read_text()
    if path.suffix.lower() == ".json":
        try:
            doc = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}:{exc.lineno}:{exc.colno}: {exc.msg}") from exc
    else:
        try:
            import tomllib
        except ModuleNotFoundError:  # Python < 3.11
            import tomli as tomllib
        try:
            doc = tomllib.loads(text)
        except tomllib.TOMLDecodeError as exc:
            raise ConfigError(f"{path}: {exc}") from exc
    return ExperimentConfig.from_dict(doc, base_dir=path.parent)


# ---------------------------------------------------------------- resolution


@dataclass
class Setup:
    """Objects resolved from a config: model, observables, certificate."""

    model: object
    f: ObservableSpec
    one: ObservableSpec | None
    cert: MinorizationCert | None
    kernel: object
    x0: object


def build_observable(model, doc: dict) -> ObservableSpec:
    name = str(doc["name"])
    center = bool(doc.get("center", False))
    if isinstance(model, CtmcModel):
        if "values" in doc:
            values = np.asarray(doc["values"], dtype=float)
        elif "indicator" in doc:
            values = np.zeros(model.n)
            values[model.index(doc["indicator"])] = 1.0
        else:
            raise ConfigError("finite-state observable needs 'values' or 'indicator'")
        if values.shape != (model.n,):
            raise ConfigError(f"observable {name!r} has {values.size} values for {model.n} states")
        if center:
            return center_on_states(model, values, name)
        return ObservableSpec.on_states(name, values)
    if "edges" not in doc or "levels" not in doc:
        raise ConfigError("diffusion observable needs 'edges' and 'levels'")
    if center:
        return center_step(doc["edges"], doc["levels"], name)
    return ObservableSpec.step(name, doc["edges"], doc["levels"])


def resolve(cfg: ExperimentConfig) -> Setup:
    try:
        model = model_from_document(cfg.model)
    except (KeyError, TypeError, ValueError) as exc:
        raise ConfigError(f"model: {exc}") from exc
    f = build_observable(model, cfg.observable)
    if isinstance(model, CtmcModel):
        kernel = resolvent_kernel(model)
        small = cfg.small_set if cfg.small_set is not None else tuple(range(model.n))
        cert = compute_minorization(kernel, small)
        one = ObservableSpec.on_states(ONE, np.ones(model.n))
        x0 = model.index(cfg.x0 if cfg.x0 is not None else 0)
        return Setup(model, f, one, cert, kernel, x0)
    x0 = float(cfg.x0) if cfg.x0 is not None else model.regen_levels[0]
    return Setup(model, f, None, None, None, x0)


# ---------------------------------------------------------------- replications


@dataclass
class ReplicationSamples:
    """``A_t = int_0^t f(X_s) ds`` (rows: replications, columns: t) and, for CTMCs, ``N_t``."""

    t_grid: np.ndarray
    values: np.ndarray
    counts: np.ndarray | None = None

    def column(self, t: float) -> np.ndarray:
        k = int(np.flatnonzero(np.isclose(self.t_grid, t))[0])
        return self.values[:, k]

    def to_csv(self, path) -> None:
        with Path(path).open("w", newline="") as fh:
            fh.write(f"# schema_version: {SCHEMA_VERSION}\n")
            w = csv.writer(fh)
            header = ["replication"] + [f"A_t={float(t)!r}" for t in self.t_grid]
            if self.counts is not None:
                header += [f"N_t={float(t)!r}" for t in self.t_grid]
            w.writerow(header)
            for r in range(self.values.shape[0]):
                row = [r] + [repr(float(v)) for v in self.values[r]]
                if self.counts is not None:
                    row += [int(c) for c in self.counts[r]]
                w.writerow(row)

    @classmethod
    def from_csv(cls, path) -> "ReplicationSamples":
        with Path(path).open(newline="") as fh:
            rows = list(csv.reader(ln for ln in fh if not ln.startswith("#")))
        header, body = rows[0], rows[1:]
        a_cols = [j for j, h in enumerate(header) if h.startswith("A_t=")]
        n_cols = [j for j, h in enumerate(header) if h.startswith("N_t=")]
        t_grid = np.array([float(header[j][4:]) for j in a_cols])
        values = np.array([[float(r[j]) for j in a_cols] for r in body])
        counts = np.array([[int(r[j]) for j in n_cols] for r in body], dtype=np.int64) if n_cols else None
        return cls(t_grid, values, counts)


def _replication_block(cfg_doc: dict, lo: int, hi: int):
    cfg = ExperimentConfig.from_dict(cfg_doc)
    setup = resolve(cfg)
    t_grid = np.asarray(cfg.t_grid)
    values = np.empty((hi - lo, t_grid.size))
    counts = np.empty((hi - lo, t_grid.size), dtype=np.int64) if setup.cert is not None else None
    for i, r in enumerate(range(lo, hi)):
        rng = stream(cfg.master_seed, r, TAG_SIMULATE)
        if setup.cert is not None:
            counts[i], values[i] = regeneration_counts(setup.model, setup.cert, setup.x0, setup.f, t_grid, rng,
                                                       kernel=setup.kernel)
        else:
            values[i] = diffusion_integrals(setup.model, setup.f, setup.x0, t_grid, rng)
    return values, counts


def _partition(n: int, workers: int) -> list[tuple[int, int]]:
    edges = np.linspace(0, n, workers + 1).round().astype(int)
    return [(int(a), int(b)) for a, b in zip(edges[:-1], edges[1:]) if b > a]


def run_replications(cfg: ExperimentConfig, workers: int = 1) -> ReplicationSamples:
    """Replication ``r`` draws from the stream keyed on ``(master_seed, r)``.

    Replications are split into static contiguous blocks, one per worker, and
    reassembled in index order, so the output does not depend on ``workers``.
    """
    doc = cfg.to_dict()
    blocks = _partition(cfg.replications, max(1, int(workers)))
    if workers <= 1 or len(blocks) == 1:
        parts = [_replication_block(doc, lo, hi) for lo, hi in blocks]
    else:
        with ProcessPoolExecutor(max_workers=len(blocks)) as pool:
            futures = [pool.submit(_replication_block, doc, lo, hi) for lo, hi in blocks]
            parts = [fut.result() for fut in futures]
    values = np.concatenate([p[0] for p in parts])
    counts = None if parts[0][1] is None else np.concatenate([p[1] for p in parts])
    return ReplicationSamples(np.asarray(cfg.t_grid), values, counts)


# ---------------------------------------------------------------- cycles and constants


def simulate_cycles(cfg: ExperimentConfig, setup: Setup | None = None, n_cycles: int | None = None) -> RegenerationStream:
    """Cycle stream for ``cfg`` with observables ``f`` and, for CTMCs, the constant one."""
    setup = setup or resolve(cfg)
    n = int(n_cycles or cfg.n_cycles)
    rng = stream(cfg.master_seed, 0, TAG_CYCLES)
    if setup.cert is None:
        return simulate_diffusion_cycles(setup.model, n, [setup.f], rng, x0=setup.x0)
    obs = [setup.f, setup.one]
    if cfg.method == "forward":
        z0 = initial_split_state(setup.cert, setup.kernel, setup.x0, rng)
        return forward_split_chain(setup.model, setup.cert, z0, n, obs, rng, kernel=setup.kernel)
    return retrospective_regeneration(setup.model, setup.cert, setup.x0, n, obs, rng, kernel=setup.kernel)


def bm_renewal_durations(n_rep: int, horizon: float, rng, sigma: float = 1.0, levels=(0.0, 1.0)) -> list[np.ndarray]:
    """Per-replication exact Brownian cycle durations covering ``horizon``."""
    scale = ((levels[1] - levels[0]) / sigma) ** 2
    out = []
    for _ in range(n_rep):
        chunks = []
        total = 0.0
        size = 64
        while total < horizon:
            d = scale * sample_bm_cycle_duration(rng, size)
            chunks.append(d)
            total += d.sum()
            size *= 2
        out.append(np.concatenate(chunks))
    return out


def estimate_vstar(cfg: ExperimentConfig, setup: Setup, cycles: RegenerationStream) -> NtTable | None:
    """``v*_t = E_nu N_t + 1`` on ``cfg.t_grid``.

    Brownian models use exact cycle durations; other models cut the
    stationary cycle stream into blocks covering the largest ``t``.
    """
    horizon = cfg.t_grid[-1]
    if cfg.model.get("kind") == "bm":
        rng = stream(cfg.master_seed, 1, TAG_CONSTANTS)
        sigma = float(cfg.model.get("sigma", 1.0))
        reps = bm_renewal_durations(cfg.vstar_replications, horizon, rng, sigma, setup.model.regen_levels)
        return count_regenerations(reps, cfg.t_grid)
    blocks = split_replications(cycles.durations, horizon)
    if len(blocks) < 30:
        return None
    return count_regenerations(blocks, cfg.t_grid)


def estimate_constants(cfg: ExperimentConfig, setup: Setup | None = None,
                       cycles: RegenerationStream | None = None) -> ConstantEstimates:
    setup = setup or resolve(cfg)
    cycles = cycles if cycles is not None else simulate_cycles(cfg, setup)
    rng = stream(cfg.master_seed, 0, TAG_CONSTANTS)
    cf = estimate_cf(setup.model, setup.cert, setup.f, cfg.n_per_state, rng)
    vstar = estimate_vstar(cfg, setup, cycles)
    return constants_from_cycles(cycles, setup.f, cf.c_f, cf.c_f_se, vstar=vstar)


def constants_for_one(cfg: ExperimentConfig, setup: Setup, cycles: RegenerationStream) -> ConstantEstimates:
    """Constants for the constant observable 1 (cycle lengths), finite models only."""
    rng = stream(cfg.master_seed, 2, TAG_CONSTANTS)
    cf = estimate_cf(setup.model, setup.cert, setup.one, cfg.n_per_state, rng)
    return constants_from_cycles(cycles, setup.one, cf.c_f, cf.c_f_se, lambdas=None)


# ---------------------------------------------------------------- tails and curves


def tail_probability(samples, threshold: float, level: float = CI_LEVEL,
                     min_samples: int = MIN_TAIL_SAMPLES) -> tuple[float, float, float]:
    """Fraction of ``|sample| >= threshold`` with its exact (Clopper-Pearson) interval."""
    s = np.asarray(samples, dtype=float)
    if s.size == 0:
        raise InsufficientDataError("no samples")
    if s.size < min_samples:
        raise InsufficientDataError(f"tail estimation needs at least {min_samples} samples, got {s.size}")
    k = int(np.count_nonzero(np.abs(s) >= threshold))
    ci = stats.binomtest(k, s.size).proportion_ci(confidence_level=level, method="exact")
    return k / s.size, float(ci.low), float(ci.high)


@dataclass(frozen=True)
class CurveRow:
    regime: str
    eta: float | None
    t: float
    x: float
    threshold: float
    p_hat: float
    ci_low: float
    ci_high: float
    bound_total: float
    vacuous: bool

    @property
    def dominated(self) -> bool:
        return self.vacuous or self.ci_high <= self.bound_total

    @property
    def margin(self) -> float:
        return self.bound_total - self.ci_high


CURVE_COLUMNS = ["regime", "eta", "t", "x", "threshold", "p_hat", "ci_low", "ci_high", "bound_total",
                 "vacuous", "dominated"]


@dataclass
class DeviationCurve:
    rows: list[CurveRow] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.rows)

    @property
    def all_dominated(self) -> bool:
        return all(r.dominated for r in self.rows)

    def to_csv(self, path) -> None:
        with Path(path).open("w", newline="") as fh:
            fh.write(f"# schema_version: {SCHEMA_VERSION}\n")
            w = csv.writer(fh)
            w.writerow(CURVE_COLUMNS)
            for r in self.rows:
                w.writerow([r.regime, "" if r.eta is None else repr(r.eta), repr(r.t), repr(r.x),
                            repr(r.threshold), repr(r.p_hat), repr(r.ci_low), repr(r.ci_high),
                            repr(r.bound_total), int(r.vacuous), int(r.dominated)])

    @classmethod
    def from_csv(cls, path) -> "DeviationCurve":
        with Path(path).open(newline="") as fh:
            reader = csv.DictReader(ln for ln in fh if not ln.startswith("#"))
            rows = [
                CurveRow(d["regime"], None if d["eta"] == "" else float(d["eta"]), float(d["t"]), float(d["x"]),
                         float(d["threshold"]), float(d["p_hat"]), float(d["ci_low"]), float(d["ci_high"]),
                         float(d["bound_total"]), bool(int(d["vacuous"])))
                for d in reader
            ]
        return cls(rows)

    def write_slices(self, out_dir) -> list[Path]:
        """Gnuplot-ready files ``x p_hat ci_high bound`` per (regime, eta, t)."""
        out_dir = Path(out_dir)
        paths = []
        keys = sorted({(r.regime, r.eta, r.t) for r in self.rows}, key=lambda k: (k[0], k[1] or 0.0, k[2]))
        for regime, eta, t in keys:
            tag = f"{regime}_eta{eta:g}" if eta is not None else regime
            p = out_dir / f"slice_{tag}_t{t:g}.dat"
            with p.open("w") as fh:
                fh.write("# x p_hat ci_high bound_total\n")
                for r in self.rows:
                    if (r.regime, r.eta, r.t) == (regime, eta, t):
                        fh.write(f"{r.x!r} {r.p_hat!r} {r.ci_high!r} {min(r.bound_total, 1.0)!r}\n")
            paths.append(p)
        return paths


def _laplace_for(cfg: ExperimentConfig):
    if cfg.laplace == "bm":
        return bm_laplace
    return None


def deviation_curve(cfg: ExperimentConfig, constants: ConstantEstimates,
                    samples: ReplicationSamples | None = None, workers: int = 1) -> DeviationCurve:
    """Empirical tail probabilities against the selected bounds on the (regime, eta, t, x) grid.

    Grid points where a regime's precondition on ``t`` fails are skipped.
    """
    samples = samples if samples is not None else run_replications(cfg, workers)
    laplace = _laplace_for(cfg)
    divisor = 1e6 if "bound_div" in cfg.fault_injection else 1.0
    alpha = cfg.alpha_reg if cfg.alpha_reg is not None else (BM_ALPHA if cfg.laplace == "bm" else None)
    L_t = cfg.L_t if cfg.L_t is not None else (BM_SLOWLY_VARYING if cfg.laplace == "bm" else None)
    rows = []
    for regime in cfg.regimes:
        etas = [None] if regime == "positive_clt" else list(cfg.eta_grid)
        for eta in etas:
            for t in cfg.t_grid:
                col = samples.column(t)
                for x in cfg.x_grid:
                    try:
                        q = BoundQuery(regime, t, x, eta, constants, alpha_reg=alpha, L_t=L_t, laplace=laplace)
                    except ValueError:
                        continue
                    b = evaluate_bound(q)
                    p, lo, hi = tail_probability(col, b.threshold, min_samples=cfg.min_replications)
                    total = b.total / divisor
                    rows.append(CurveRow(regime, eta, t, x, b.threshold, p, lo, hi, total, total >= 1.0))
    return DeviationCurve(rows)


# ---------------------------------------------------------------- manifests


def code_version() -> str:
    return __version__


def write_manifest(path, cfg: ExperimentConfig, outputs: Sequence[str], started: float, extra: dict | None = None):
    doc = {
        "schema_version": SCHEMA_VERSION,
        "config_hash": cfg.config_hash(),
        "master_seed": cfg.master_seed,
        "code_version": code_version(),
        "started": time.strftime("%Y-%m-%dT%H:%M:%S", time.gmtime(started)),
        "wall_time_s": round(time.time() - started, 3),
        "outputs": list(outputs),
        "config": cfg.to_dict(),
    }
    if extra:
        doc.update(extra)
    Path(path).write_text(json.dumps(doc, indent=2, default=str))
    return doc


def verify_manifest(doc: dict) -> bool:
    cfg = ExperimentConfig.from_dict(doc["config"])
    return cfg.config_hash() == doc["config_hash"]
