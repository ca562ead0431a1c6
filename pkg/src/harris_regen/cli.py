"""Batch command line: simulate, verify, curve, estimate, report.

Exit codes: 0 success, 1 check failure, 2 usage or input error.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
import time
from dataclasses import replace
from pathlib import Path

import numpy as np

from .cycles import RegenerationStream
from .models import BM_ALPHA, sample_bm_cycle_duration
from .montecarlo import (
    ConfigError,
    DeviationCurve,
    ExperimentConfig,
    ReplicationSamples,
    bm_renewal_durations,
    constants_for_one,
    deviation_curve,
    estimate_constants,
    load_config,
    resolve,
    run_replications,
    simulate_cycles,
    verify_manifest,
    write_manifest,
)
from .regeneration import ConstantEstimates, count_regenerations
from .streams import stream
from .verify import (
    MIN_TAIL_SAMPLES,
    CheckReport,
    check_bound_domination,
    check_centered_mean,
    check_dependence_structure,
    check_nt_moments,
    check_stationarity,
    check_tail_index,
    check_xi_moments,
    read_report,
    splice_cycles,
    summary_table,
    write_report,
)

EXIT_OK, EXIT_FAIL, EXIT_USAGE = 0, 1, 2
ENV_OUT = "HARRIS_REGEN_OUT"
TAG_TAIL = "tail"

log = logging.getLogger("harris_regen")


class UsageError(Exception):
    pass


def _out_dir(args, cfg: ExperimentConfig | None = None) -> Path:
    if getattr(args, "out", None):
        return Path(args.out)
    root = Path(os.environ.get(ENV_OUT, "runs"))
    return root / (cfg.name if cfg is not None else "run")


def _load(args) -> ExperimentConfig:
    cfg = load_config(args.config)
    if getattr(args, "seed", None) is not None:
        cfg = replace(cfg, master_seed=int(args.seed))
    return cfg


def _write_nt(path: Path, t_grid, samples: np.ndarray):
    with path.open("w") as fh:
        fh.write("# schema_version: 1\n")
        fh.write(",".join(["replication"] + [f"N_t={float(t)!r}" for t in t_grid]) + "\n")
        for r, row in enumerate(samples):
            fh.write(",".join([str(r)] + [str(int(v)) for v in row]) + "\n")


def _read_nt(path: Path):
    lines = [ln for ln in path.read_text().splitlines() if not ln.startswith("#")]
    header = lines[0].split(",")
    t_grid = np.array([float(h[4:]) for h in header[1:]])
    data = np.array([[int(v) for v in ln.split(",")[1:]] for ln in lines[1:]], dtype=np.int64)
    return t_grid, data


# ---------------------------------------------------------------- commands


def cmd_simulate(args) -> int:
    started = time.time()
    cfg = _load(args)
    out = _out_dir(args, cfg)
    out.mkdir(parents=True, exist_ok=True)
    setup = resolve(cfg)
    cycles = simulate_cycles(cfg, setup)
    cycles.to_csv(out / "cycles.csv")
    samples = run_replications(cfg, args.workers)
    samples.to_csv(out / "samples.csv")
    constants = estimate_constants(cfg, setup, cycles)
    constants.to_json(out / "constants.json")
    outputs = ["cycles.csv", "samples.csv", "constants.json", "nt.csv", "manifest.json", "config.json"]
    if setup.cert is not None:
        constants_for_one(cfg, setup, cycles).to_json(out / "constants_one.json")
        outputs.append("constants_one.json")
        nt_t, nt = samples.t_grid, samples.counts
    else:
        rng = stream(cfg.master_seed, 3, "nt")
        reps = bm_renewal_durations(cfg.vstar_replications, cfg.t_grid[-1], rng,
                                    float(cfg.model.get("sigma", 1.0)), setup.model.regen_levels)
        nt_t, nt = np.asarray(cfg.t_grid), count_regenerations(reps, cfg.t_grid).samples
    _write_nt(out / "nt.csv", nt_t, nt)
    (out / "config.json").write_text(json.dumps(cfg.to_dict(), indent=2, default=str))
    extra = {"method": cycles.method, "model_kind": cfg.model.get("kind")}
    if setup.cert is not None:
        extra.update(model_fingerprint=setup.model.fingerprint(),
                     cert={"small_set": list(setup.cert.small_set), "alpha_minor": setup.cert.alpha_minor,
                           "nu": setup.cert.nu.tolist()})
    write_manifest(out / "manifest.json", cfg, outputs, started, extra)
    print(f"simulate: wrote {len(outputs)} files to {out}")
    return EXIT_OK


def _require(out: Path, names) -> None:
    if not out.is_dir():
        raise FileNotFoundError(f"output directory not found: {out}")
    for n in names:
        if not (out / n).exists():
            raise FileNotFoundError(f"missing input: {out / n}")


def run_checks(out: Path, faults=None) -> list[CheckReport]:
    """All checks for a completed simulate run in ``out``.

    ``faults`` overrides the config's fault injections, so one run can be
    checked under each fault separately.
    """
    _require(out, ["manifest.json", "cycles.csv", "samples.csv", "constants.json", "nt.csv"])
    manifest = json.loads((out / "manifest.json").read_text())
    if not verify_manifest(manifest):
        raise ConfigError("manifest config_hash does not match the stored config")
    cfg = ExperimentConfig.from_dict(manifest["config"])
    faults = set(cfg.fault_injection if faults is None else faults)
    if faults:
        cfg = replace(cfg, fault_injection=tuple(sorted(faults)))
    cycles = RegenerationStream.from_csv(out / "cycles.csv", method=manifest.get("method", "unknown"))
    constants = ConstantEstimates.from_json(out / "constants.json")
    samples = ReplicationSamples.from_csv(out / "samples.csv")
    nt_t, nt = _read_nt(out / "nt.csv")
    halve = 0.5 if "halve_k" in faults else 1.0
    f = cfg.observable_name
    min_xi = min(100_000, cycles.durations.size)
    reports: list[CheckReport] = []
    reports += check_xi_moments(cycles, f, constants.k_f * halve, 4, min_cycles=min_xi)
    if (out / "constants_one.json").exists():
        one = ConstantEstimates.from_json(out / "constants_one.json")
        reports += check_xi_moments(cycles, one.observable, one.k_f * halve, 4, min_cycles=min_xi)
    vstar = np.array([constants.vstar_at(t) for t in nt_t]) if constants.vstar else None
    if vstar is not None:
        reports += check_nt_moments(nt_t, nt, vstar, 3, min_samples=min(10_000, nt.shape[0]))
    dep = splice_cycles(cycles) if "splice" in faults else cycles
    nu = manifest.get("cert", {}).get("nu")
    reports += check_dependence_structure(dep, nu, min_cycles=min(10_000, dep.durations.size))
    reports.append(check_centered_mean(cycles, f))
    reports.append(check_stationarity(cycles, f))
    if cfg.model.get("kind") == "bm":
        rng = stream(cfg.master_seed, 0, TAG_TAIL)
        reports.append(check_tail_index(sample_bm_cycle_duration(rng, MIN_TAIL_SAMPLES), BM_ALPHA))
    curve = deviation_curve(cfg, constants, samples)
    curve.to_csv(out / "curve.csv")
    reports.append(check_bound_domination(curve))
    return reports


def cmd_verify(args) -> int:
    out = Path(args.out_dir)
    reports = run_checks(out)
    write_report(reports, out / "report.json")
    print(summary_table(reports))
    failed = [r.check_name for r in reports if r.failed]
    if failed:
        print("failing checks: " + ", ".join(failed))
        return EXIT_FAIL
    return EXIT_OK


def cmd_estimate(args) -> int:
    started = time.time()
    cfg = _load(args)
    out = _out_dir(args, cfg)
    out.mkdir(parents=True, exist_ok=True)
    setup = resolve(cfg)
    cycles = simulate_cycles(cfg, setup)
    constants = estimate_constants(cfg, setup, cycles)
    constants.to_json(out / "constants.json")
    write_manifest(out / "manifest_estimate.json", cfg, ["constants.json"], started)
    print(json.dumps({k: v for k, v in constants.to_dict().items() if k not in ("laplace", "vstar")}, indent=2))
    return EXIT_OK


def cmd_curve(args) -> int:
    started = time.time()
    cfg = _load(args)
    cpath = Path(args.constants)
    if not cpath.exists():
        raise FileNotFoundError(f"constants file not found: {cpath}")
    try:
        constants = ConstantEstimates.from_json(cpath)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{cpath}:{exc.lineno}:{exc.colno}: malformed constants file: {exc.msg}") from exc
    out = _out_dir(args, cfg)
    out.mkdir(parents=True, exist_ok=True)
    curve = deviation_curve(cfg, constants, workers=args.workers)
    curve.to_csv(out / "curve.csv")
    slices = curve.write_slices(out)
    write_manifest(out / "manifest_curve.json", cfg, ["curve.csv"] + [p.name for p in slices], started)
    n_vac = sum(r.vacuous for r in curve.rows)
    print(f"curve: {len(curve)} rows, {n_vac} vacuous, all dominated: {curve.all_dominated}")
    return EXIT_OK if curve.all_dominated else EXIT_FAIL


def cmd_report(args) -> int:
    out = Path(args.out_dir)
    _require(out, ["report.json"])
    reports = read_report(out / "report.json")
    print(summary_table(reports))
    cpath = out / "constants.json"
    if cpath.exists():
        c = ConstantEstimates.from_json(cpath)
        print(f"\nC(f) = {c.c_f:.5g}  K(f) = {c.k_f:.5g}  B(f) = {c.b_f:.5g}  m = {c.m_hat:.5g} +- {c.m_se:.2g}")
    return EXIT_FAIL if any(r.failed for r in reports) else EXIT_OK


# ---------------------------------------------------------------- parser


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="harris-regen", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, config=True):
        if config:
            sp.add_argument("config", help="experiment config (TOML or JSON)")
            sp.add_argument("--seed", type=int, help="override master_seed")
        sp.add_argument("--workers", type=int, default=1, help="worker processes for replications")
        sp.add_argument("--out", help=f"output directory (default ${ENV_OUT}/<name> or runs/<name>)")

    s = sub.add_parser("simulate", help="cycles, replications, constants and manifest")
    common(s)
    s.set_defaults(func=cmd_simulate)

    v = sub.add_parser("verify", help="run all checks on a simulate output directory")
    v.add_argument("out_dir")
    v.set_defaults(func=cmd_verify)

    c = sub.add_parser("curve", help="deviation curve against the explicit bounds")
    common(c)
    c.add_argument("constants", help="constants.json produced by 'estimate' or 'simulate'")
    c.set_defaults(func=cmd_curve)

    e = sub.add_parser("estimate", help="estimate C(f), K(f), B(f), m, v*_t")
    common(e)
    e.set_defaults(func=cmd_estimate)

    r = sub.add_parser("report", help="print the summary of a verified run")
    r.add_argument("out_dir")
    r.set_defaults(func=cmd_report)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_USAGE if exc.code else EXIT_OK
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except (FileNotFoundError, ConfigError, UsageError, ValueError, KeyError) as exc:
        msg = exc.args[0] if isinstance(exc, KeyError) and exc.args else exc
        print(f"error: {msg}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
