"""
ssep-lab Command Line
Subcommands: simulate | verify-rate | berry-esseen | diagnostics | covariance.
Exit codes: 0 pass, 1 criterion failed, 2 config error, 3 precondition or noise gate.
"""

import argparse
import logging
import os
import sys
from dataclasses import dataclass, field
from datetime import datetime
from typing import Callable, Optional

import numpy as np
import pandas as pd

from cli import __version__
from cli.output import file_manifest, output_path, run_manifest, write_csv, write_json
from core.clt_harness import berry_esseen_curve, diagnostics_suite, error_curve, fit_rate
from core.config_manager import ConfigManager, ExperimentConfig
from core.errors import ConfigError, IndefiniteCovarianceError, NoiseGateError, PreconditionError
from core.observables import smoothness_report
from core.ou_gaussian import PSD_TOLERANCE, covariance_V
from core.run_store import RunStore
from core.seeding import PARTICLE_STREAM, replica_rng
from core.ssep_simulator import mean_field, sample_initial, simulate_path, snapshot_frame
from core.torus_spectral import mode_basis

log = logging.getLogger(__name__)

EXIT_PASS = 0
EXIT_CRITERION = 1
EXIT_CONFIG = 2
EXIT_PRECONDITION = 3

OUT_DIR_ENV = "SSEP_LAB_OUT_DIR"
DEFAULT_OUT_DIR = "results"
LOG_FILE = "ssep_lab.log"
LOG_FORMAT = "%(asctime)s [%(levelname)s] %(name)s - %(message)s"


@dataclass
class CommandResult:
    exit_code: int
    criteria: dict[str, str] = field(default_factory=dict)
    rows: list[dict] = field(default_factory=list)


def _status(ok: bool) -> str:
    return "pass" if ok else "fail"


# ------------------------------------------------------------------ #
#  Subcommands                                                        #
# ------------------------------------------------------------------ #

def cmd_simulate(cfg: ExperimentConfig, out_dir: str, manifest: dict, threads: Optional[int]) -> CommandResult:
    """One trajectory per n, snapshotted at t = 0 and at every configured time."""
    times = list(cfg.snapshot_times)
    if not times or times[0] > 0:
        times.insert(0, 0.0)
    frames = []
    for n in cfg.n_list:
        rho0 = cfg.profile.on_lattice(n)
        rng = replica_rng(cfg.master_seed, PARTICLE_STREAM, n, 0)
        path = simulate_path(sample_initial(rho0, rng), times, rng)
        for t, snapshot in zip(times, path):
            frame = snapshot_frame(snapshot, t, mean_field(rho0, t))
            frame.insert(0, "n", n)
            frames.append(frame)
        log.info("simulated n=%d through %d snapshots", n, len(times))
    write_csv(pd.concat(frames, ignore_index=True), output_path(out_dir, "snapshots.csv"), manifest)
    return CommandResult(EXIT_PASS)


def cmd_verify_rate(cfg: ExperimentConfig, out_dir: str, manifest: dict, threads: Optional[int]) -> CommandResult:
    table = error_curve(cfg, threads)
    rows = [row.as_record() for row in table.rows]
    write_csv(table.to_frame(), output_path(out_dir, "error_table.csv"), manifest)
    fit = fit_rate(table, drop_noisy=True)
    criteria = {"slope_gate": _status(fit.slope <= cfg.gate)}
    write_json(
        {**manifest, "fit": fit.to_dict(), "gate": cfg.gate, "criteria": criteria,
         "truncation_tails": {str(n): tail for n, tail in table.truncation_tails.items()},
         "smoothness": smoothness_report(cfg.build_observable())},
        output_path(out_dir, "summary.json"),
    )
    return CommandResult(EXIT_PASS if fit.slope <= cfg.gate else EXIT_CRITERION, criteria, rows)


def cmd_berry_esseen(cfg: ExperimentConfig, out_dir: str, manifest: dict, threads: Optional[int]) -> CommandResult:
    table, fit = berry_esseen_curve(cfg)
    rows = [row.as_record() for row in table.rows]
    write_csv(table.to_frame(), output_path(out_dir, "berry_esseen.csv"), manifest)
    if fit is None:
        criteria = {"slope_gate": "skipped"}
        code = EXIT_PASS
    else:
        criteria = {"slope_gate": _status(fit.slope <= cfg.gate)}
        code = EXIT_PASS if fit.slope <= cfg.gate else EXIT_CRITERION
    write_json(
        {**manifest, "fit": fit.to_dict() if fit else None, "gate": cfg.gate, "criteria": criteria,
         "smoothness": smoothness_report(cfg.build_observable())},
        output_path(out_dir, "summary.json"),
    )
    return CommandResult(code, criteria, rows)


def cmd_diagnostics(cfg: ExperimentConfig, out_dir: str, manifest: dict, threads: Optional[int]) -> CommandResult:
    report = diagnostics_suite(cfg)
    write_csv(report.to_frame(), output_path(out_dir, "diagnostics.csv"), manifest)
    write_json({**manifest, **report.to_dict()}, output_path(out_dir, "diagnostics.json"))
    failed = [r.name for r in report.results if not r.passed]
    if failed:
        log.warning("failed diagnostics: %s", ", ".join(failed))
    return CommandResult(EXIT_PASS if report.all_passed else EXIT_CRITERION, report.to_dict()["criteria"])


def cmd_covariance(cfg: ExperimentConfig, out_dir: str, manifest: dict, threads: Optional[int]) -> CommandResult:
    """V_t over the real basis at K = truncation(max n), labelled by mode."""
    K = cfg.truncation(max(cfg.n_list))
    V = covariance_V(cfg.profile, cfg.t, K, cfg.prefactor)
    labels = list(mode_basis(K, cfg.d).labels)
    frame = pd.DataFrame(V, index=pd.Index(labels, name="mode"), columns=labels)
    write_csv(frame, output_path(out_dir, "covariance.csv"), {**manifest, "K": K, "t": cfg.t}, index=True)
    lowest = float(np.linalg.eigvalsh(V).min())
    criteria = {"psd": _status(lowest >= -PSD_TOLERANCE)}
    write_json({**manifest, "K": K, "min_eigenvalue": lowest, "criteria": criteria}, output_path(out_dir, "summary.json"))
    return CommandResult(EXIT_PASS if lowest >= -PSD_TOLERANCE else EXIT_CRITERION, criteria)


COMMANDS: dict[str, Callable[..., CommandResult]] = {
    "simulate": cmd_simulate,
    "verify-rate": cmd_verify_rate,
    "berry-esseen": cmd_berry_esseen,
    "diagnostics": cmd_diagnostics,
    "covariance": cmd_covariance,
}


# ------------------------------------------------------------------ #
#  Driver                                                             #
# ------------------------------------------------------------------ #

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="ssep-lab",
        description="Exclusion-process fluctuations against their Gaussian limit.",
    )
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        cmd = sub.add_parser(name)
        cmd.add_argument("--config", required=True, help="experiment config (JSON)")
        cmd.add_argument("--seed", type=int, default=None, help="override master_seed")
        cmd.add_argument("--threads", type=int, default=None, help="worker processes (default: physical cores)")
        cmd.add_argument("--out-dir", default=None, help=f"output directory (default: ${OUT_DIR_ENV} or ./{DEFAULT_OUT_DIR})")
        cmd.add_argument("--verbose", action="store_true", help="log at DEBUG level")
    return parser


def setup_logging(out_dir: str, verbose: bool = False):
    console = logging.StreamHandler(sys.stderr)
    console.setLevel(logging.WARNING)
    logging.basicConfig(
        level=logging.DEBUG if verbose else logging.INFO,
        format=LOG_FORMAT,
        handlers=[logging.FileHandler(os.path.join(out_dir, LOG_FILE), encoding="utf-8"), console],
        force=True,
    )


def main(argv: Optional[list[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    out_dir = args.out_dir or os.environ.get(OUT_DIR_ENV) or DEFAULT_OUT_DIR
    os.makedirs(out_dir, exist_ok=True)
    setup_logging(out_dir, args.verbose)

    try:
        manager = ConfigManager(args.config)
        manager.override(master_seed=args.seed)
        if args.threads is not None and args.threads < 1:
            raise ConfigError(f"--threads must be >= 1, got {args.threads}", key="threads")
    except ConfigError as exc:
        log.error("config error: %s", exc)
        return EXIT_CONFIG

    cfg = manager.experiment
    digest = manager.config_hash()
    base = file_manifest(args.command, digest, cfg.master_seed,
                         {"noise_prefactor": cfg.noise_prefactor})
    store = RunStore.in_directory(out_dir)
    run_id = store.start_run(args.command, digest, cfg.master_seed)
    started = datetime.now()
    log.info("%s started (run %s, config %s)", args.command, run_id, digest[:12])

    result = CommandResult(EXIT_PASS)
    try:
        result = COMMANDS[args.command](cfg, out_dir, base, args.threads or cfg.threads)
    except NoiseGateError as exc:
        for row in exc.rows:
            log.error("noise gate: n=%s abs_error=%.3g stderr=%.3g", row["n"], row["abs_error"], row["stderr"])
        log.error("%s", exc)
        result = CommandResult(EXIT_PRECONDITION, {"noise_gate": "fail"})
    except (PreconditionError, IndefiniteCovarianceError) as exc:
        log.error("precondition failed: %s", exc)
        result = CommandResult(EXIT_PRECONDITION)
    except ConfigError as exc:
        log.error("config error: %s", exc)
        result = CommandResult(EXIT_CONFIG)

    manifest = run_manifest(base, result.criteria, result.exit_code, started)
    write_json(manifest, output_path(out_dir, "manifest.json"))
    if result.rows:
        store.add_error_rows(run_id, result.rows)
    store.finish_run(run_id, result.exit_code, manifest)
    store.close()
    log.info("%s finished with exit code %d", args.command, result.exit_code)
    return result.exit_code
