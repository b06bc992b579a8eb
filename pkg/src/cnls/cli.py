"""Command line harness: ``cnls {ground-state,classify,evolve,verify,sweep} --config FILE``.

Exit codes: 0 success, 1 invalid configuration or arguments, 2 solver failure,
3 a verification property failed. Nothing is written until the configuration
and the initial data have been validated and built.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import math
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from . import __version__
from .config import ConfigError, ExperimentConfig, load_config
from .core import AdmissibilityError, CartesianGrid, Field, GridError, NonFiniteFieldError, Params
from .diagnostics import (
    CutoffWeight,
    ScatterThresholds,
    classify_outcome,
    concavity_window,
    delta_one,
    minus_set_bound,
    trailing_monotone,
    virial_probe,
)
from .evolution import CSV_COLUMNS, conservation_report, evolve
from .functionals import ScalingRangeError, SupportOverflowError, evaluate
from .groundstate import (
    ShootingError,
    classify_data,
    critical_dilation,
    dilated,
    explicit_aubin_talenti,
    ground_state,
    on_cartesian,
    read_profile,
    sharp_sobolev_constant,
    threshold,
    write_profile,
)
from .verify import TOLERANCES, run_suite

log = logging.getLogger("cnls")

EXIT_OK, EXIT_INVALID, EXIT_SOLVER, EXIT_VERIFY = 0, 1, 2, 3
LOG_LEVELS = {"error": logging.ERROR, "warn": logging.WARNING, "info": logging.INFO, "debug": logging.DEBUG}
SOLVER_ERRORS = (ShootingError, NonFiniteFieldError, SupportOverflowError, ScalingRangeError, ArithmeticError,
                 RuntimeError, ValueError)


class InvalidInput(Exception):
    """Raised for anything that should exit with code 1."""


# ---------------------------------------------------------------------------
# output helpers
# ---------------------------------------------------------------------------


def _clean(obj):
    """JSON-safe copy: numpy scalars to Python, non-finite floats to null."""
    if isinstance(obj, dict):
        return {str(k): _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, (bool, np.bool_)):
        return bool(obj)
    if isinstance(obj, (int, np.integer)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        x = float(obj)
        return x if math.isfinite(x) else None
    return obj


def write_json(path: Path, data: dict) -> None:
    path.write_text(json.dumps(_clean(data), indent=2, sort_keys=True) + "\n")


class CsvSink:
    """Streams trajectory rows with 17 significant digits."""

    def __init__(self, path: Path):
        self._fh = open(path, "w", newline="")
        self._w = csv.writer(self._fh)
        self._w.writerow(CSV_COLUMNS)

    def __call__(self, row: dict) -> None:
        self._w.writerow(["%.17g" % row[c] for c in CSV_COLUMNS])

    def close(self) -> None:
        self._fh.close()


def _params_dict(p: Params) -> dict:
    return {"d": p.d, "p": p.p, "omega": p.omega}


# ---------------------------------------------------------------------------
# initial data
# ---------------------------------------------------------------------------


def radial_data(cfg: ExperimentConfig) -> Field:
    """The configured initial datum as a radial profile."""
    params, spec = cfg.params, cfg.initial_data
    if spec.kind == "gaussian":
        grid = cfg.radial_grid.build(params)
        return Field(grid, spec.amplitude * np.exp(-grid.r**2 / spec.width**2) + 0j, "gaussian")
    if spec.kind == "file":
        return read_profile(spec.path).field() * spec.amplitude
    if params.regime == "energy-critical":
        at = explicit_aubin_talenti(params.d)
        if spec.kind == "ground_state_multiple":
            return at.truncated() * spec.c
        return at.truncated(eps=spec.eps)
    gs = ground_state(params, cfg.radial_grid.build(params))
    if spec.kind == "ground_state_multiple":
        return gs.profile * spec.c
    return dilated(gs, spec.eps)


def cartesian_data(cfg: ExperimentConfig, grid: CartesianGrid) -> Field:
    params, spec = cfg.params, cfg.initial_data
    if spec.kind == "gaussian":
        return Field(grid, spec.amplitude * np.exp(-grid.radius**2 / spec.width**2) + 0j, "gaussian")
    if spec.kind == "file":
        return on_cartesian(read_profile(spec.path).field(), grid, amplitude=spec.amplitude, tag="file")
    if params.regime == "energy-critical":
        prof = explicit_aubin_talenti(params.d).truncated(R1=grid.L / 4)
        if spec.kind == "ground_state_multiple":
            return on_cartesian(prof, grid, amplitude=spec.c, tag="W")
        # energy-invariant dilation of W, applied to the mass-invariant placement
        return on_cartesian(prof, grid, amplitude=spec.eps, lam=1 / spec.eps, tag="W_eps")
    gs = ground_state(params, cfg.radial_grid.build(params))
    if spec.kind == "ground_state_multiple":
        return on_cartesian(gs.profile, grid, amplitude=spec.c, tag="cQ")
    return on_cartesian(gs.profile, grid, lam=1 / spec.eps, tag="T_eps Q")


# ---------------------------------------------------------------------------
# subcommands
# ---------------------------------------------------------------------------


def cmd_ground_state(cfg: ExperimentConfig, out: Path) -> int:
    params = cfg.params
    if params.regime == "energy-critical":
        at = explicit_aubin_talenti(params.d)
        others = {om: threshold(params.with_omega(om)) for om in (0.5, 1.0, 2.0)}
        spread = max(abs(v - at.E0_of_W) for v in others.values())
        summary = {
            "regime": params.regime,
            "E0_of_W": at.E0_of_W,
            "m_omega": at.E0_of_W,
            "omega_independent": spread <= 1e-12,
            "threshold_by_omega": {str(k): v for k, v in others.items()},
            "residual_sup": at.residual_sup,
            "sobolev_constant": sharp_sobolev_constant(params.d),
            "Q0": float(at.profile.values[0].real),
        }
        out.mkdir(parents=True, exist_ok=True)
        write_profile(out / "profile.dat", at, params)
    else:
        gs = ground_state(params, cfg.radial_grid.build(params))
        summary = {"regime": params.regime, **gs.summary(), "K_relative": gs.K_relative,
                   "dilation_eps_A_minus_max": critical_dilation(gs)}
        out.mkdir(parents=True, exist_ok=True)
        write_profile(out / "profile.dat", gs)
    summary["params"] = _params_dict(params)
    write_json(out / "ground_state.json", summary)
    log.info("ground state written to %s", out)
    return EXIT_OK


def cmd_classify(cfg: ExperimentConfig, out: Path) -> int:
    u0 = radial_data(cfg)
    m = classify_data(u0, cfg.params)
    out.mkdir(parents=True, exist_ok=True)
    write_json(out / "classification.json", m.as_dict())
    log.info("classified as %s (margin %.6g)", m.set, m.margin)
    return EXIT_OK


def _cutoff(cfg: ExperimentConfig, grid: CartesianGrid):
    kind = cfg.diagnostics.virial_cutoff
    if kind == "none":
        return None
    R = cfg.diagnostics.virial_R
    if R is None:
        R = grid.L / 3 if kind == "blowup_cutoff" else grid.L / 2.5
    return CutoffWeight(kind, R, grid)


def _monitors(tr, membership, params: Params, has_virial: bool) -> dict:
    out: dict = {}
    if membership.set == "A_minus":
        b = minus_set_bound(tr, membership.m_omega)
        out["minus_set_bound"] = {"holds": b.holds, "violations": b.violations, "worst_slack": b.worst_margin}
        d1 = delta_one(tr.series[0].bundle.S_omega, membership.m_omega)
        out["delta_1"] = d1
        if has_virial:
            out["concavity_window"] = concavity_window(tr, d1, membership.m_omega).as_dict()
        out["gradient_trailing_monotone"] = trailing_monotone(tr.grad_norm())
    elif membership.set == "A_plus":
        K = tr.column("K")
        out["K_nonnegative"] = bool(np.all(K >= 0))
        out["min_K"] = float(K.min())
    return out


def cmd_evolve(cfg: ExperimentConfig, out: Path) -> int:
    params = cfg.params
    grid = cfg.grid.build(params.d)
    u0 = cartesian_data(cfg, grid)
    membership = classify_data(u0, params)
    w = _cutoff(cfg, grid)
    probe = virial_probe(w, params) if w is not None else None

    out.mkdir(parents=True, exist_ok=True)
    sink = CsvSink(out / "trajectory.csv")
    try:
        tr = evolve(u0, params, cfg.controls, virial=probe, sink=sink)
    finally:
        sink.close()
    dg = cfg.diagnostics
    verdict = classify_outcome(tr, membership, params,
                               ScatterThresholds(dg.increment_share, dg.amplitude_ratio, dg.tail_fraction))
    summary = {
        "params": _params_dict(params),
        "status": tr.status,
        "message": tr.message,
        "steps": tr.steps,
        "t_final": tr.t_final,
        "drifts": conservation_report(tr).as_dict(),
        "verdict": verdict.outcome,
        "theory_consistent": verdict.theory_consistent,
        "evidence": verdict.evidence,
        "membership": membership.as_dict(),
        "monitors": _monitors(tr, membership, params, w is not None),
    }
    if w is not None:
        summary["virial_cutoff"] = {"kind": w.kind, "R": w.R}
    write_json(out / "summary.json", summary)
    if dg.plots:
        write_plots(tr, out)
    log.info("evolve: %s, verdict %s", tr.status, verdict.outcome)
    return EXIT_OK


def cmd_verify(cfg: ExperimentConfig, out: Path) -> int:
    v = cfg.verify
    report = run_suite(cfg.params, cfg.seed, v.n_bumps, v.separations, v.trapping_samples)
    report["tolerances"] = TOLERANCES
    out.mkdir(parents=True, exist_ok=True)
    write_json(out / "verify.json", report)
    failed = [k for k, c in report["checks"].items() if not c["passed"]]
    if failed:
        log.error("verification failed: %s", ", ".join(failed))
        return EXIT_VERIFY
    log.info("verification: all %d checks passed", len(report["checks"]))
    return EXIT_OK


COMMANDS = {
    "ground-state": cmd_ground_state,
    "classify": cmd_classify,
    "evolve": cmd_evolve,
    "verify": cmd_verify,
}


def _sweep_worker(command: str, cfg: ExperimentConfig, out: str) -> int:
    return run_command(command, cfg, Path(out))


def cmd_sweep(cfg: ExperimentConfig, out: Path, threads: int = 1) -> int:
    sw = cfg.sweep
    if sw is None:
        raise InvalidInput("sweep needs a 'sweep' section with key and values")
    runs = [(i, v, cfg.with_override(sw.key, v)) for i, v in enumerate(sw.values)]
    out.mkdir(parents=True, exist_ok=True)
    dirs = [out / f"run_{i:03d}" for i, _, _ in runs]
    if threads > 1:
        with ProcessPoolExecutor(max_workers=threads) as pool:
            futures = [pool.submit(_sweep_worker, sw.command, c, str(d)) for (_, _, c), d in zip(runs, dirs)]
            codes = [f.result() for f in futures]
    else:
        codes = [_sweep_worker(sw.command, c, str(d)) for (_, _, c), d in zip(runs, dirs)]
    index = {
        "key": sw.key,
        "command": sw.command,
        "runs": [{"index": i, "value": v, "dir": d.name, "exit_code": code}
                 for (i, v, _), d, code in zip(runs, dirs, codes)],
    }
    write_json(out / "sweep.json", index)
    return max(codes)


def run_command(command: str, cfg: ExperimentConfig, out: Path) -> int:
    """Run one subcommand, mapping failures to exit codes."""
    try:
        return COMMANDS[command](cfg, out)
    except (ConfigError, InvalidInput, AdmissibilityError, GridError) as exc:
        log.error("invalid input: %s", exc)
        return EXIT_INVALID
    except OSError as exc:
        log.error("i/o failure: %s", exc)
        return EXIT_SOLVER
    except SOLVER_ERRORS as exc:
        log.error("solver failure: %s: %s", type(exc).__name__, exc)
        return EXIT_SOLVER


# ---------------------------------------------------------------------------
# plots
# ---------------------------------------------------------------------------


def write_plots(tr, out: Path) -> None:
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    grid = tr.snapshots[0].grid
    x = grid.axis
    centre = (grid.n // 2,) * (grid.d - 1)
    fig, ax = plt.subplots(figsize=(7, 4))
    picks = np.unique(np.linspace(0, len(tr.snapshots) - 1, min(6, len(tr.snapshots))).astype(int))
    for i in picks:
        a = np.abs(tr.snapshots[i].values)
        line = a if grid.d == 1 else a[(slice(None),) + centre]
        ax.plot(x, line, label=f"t = {tr.snapshot_times[i]:.4g}")
    ax.set_xlabel("x" if grid.d == 1 else "x (slice through the origin)")
    ax.set_ylabel("|u|")
    ax.legend(fontsize=8)
    fig.tight_layout()
    fig.savefig(out / "amplitude.png", dpi=120)
    plt.close(fig)

    t = np.array(tr.times)
    fig, axes = plt.subplots(2, 2, figsize=(9, 6), sharex=True)
    for ax, name in zip(axes.flat, ("grad_norm_sq", "K", "S_omega", "V_R_second")):
        ax.plot(t, tr.column(name))
        ax.set_title(name)
    for ax in axes[1]:
        ax.set_xlabel("t")
    fig.tight_layout()
    fig.savefig(out / "series.png", dpi=120)
    plt.close(fig)


# ---------------------------------------------------------------------------
# entry point
# ---------------------------------------------------------------------------


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_INVALID, f"{self.prog}: error: {message}\n")


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", required=True, help="YAML experiment configuration")
    common.add_argument("--out", help="output directory (overrides output.dir)")
    common.add_argument("--quiet", action="store_true", help="only log errors")
    common.add_argument("--threads", type=int, default=1, help="concurrent runs in sweep mode")
    parser = _Parser(prog="cnls", description="Combined-power NLS experiments")
    parser.add_argument("--version", action="version", version=f"cnls {__version__}")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)
    helps = {
        "ground-state": "solve for the ground state (or the Aubin-Talenti profile)",
        "classify": "place the initial datum relative to the threshold",
        "evolve": "integrate the equation and judge the outcome",
        "verify": "run the property suite",
        "sweep": "run one subcommand over a list of parameter values",
    }
    for name, text in helps.items():
        sub.add_parser(name, parents=[common], help=text)
    return parser


def _setup_logging(quiet: bool) -> None:
    raw = os.environ.get("NLS_LOG_LEVEL", "warn").strip().lower()
    if raw not in LOG_LEVELS:
        raise InvalidInput(f"NLS_LOG_LEVEL must be one of {sorted(LOG_LEVELS)}, got {raw!r}")
    level = logging.ERROR if quiet else LOG_LEVELS[raw]
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr, force=True)


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        _setup_logging(args.quiet)
        if args.threads < 1:
            raise InvalidInput("--threads must be at least 1")
        cfg = load_config(args.config)
    except (ConfigError, InvalidInput) as exc:
        print(f"cnls: {exc}", file=sys.stderr)
        return EXIT_INVALID
    out = Path(args.out or cfg.output_dir)
    if args.command == "sweep":
        try:
            code = cmd_sweep(cfg, out, args.threads)
        except (ConfigError, InvalidInput) as exc:
            print(f"cnls: {exc}", file=sys.stderr)
            return EXIT_INVALID
    else:
        code = run_command(args.command, cfg, out)
    if not args.quiet and code == EXIT_OK:
        print(f"cnls {args.command}: results in {out}")
    return code


if __name__ == "__main__":
    sys.exit(main())
