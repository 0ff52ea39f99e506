"""Command-line front end: ``sea simulate|maxent|analyze <config>...``.

Exit codes: 0 success, 2 configuration error, 3 infeasible constraints,
4 numerical failure, 5 maximum time reached (partial outputs are written).
"""

from __future__ import annotations

import argparse
import io
import json
import logging
import os
import sys
import tempfile
from concurrent.futures import ProcessPoolExecutor

import numpy as np

from . import config as config_mod
from .config import ConfigError, RunConfig
from .dynamics import TauPolicy, sea_direction
from .errors import (DegenerateConstraintsError, EquilibriumError, InfeasibleTargetsError,
                     MetricError, NumericalError, SeaError, StateError)
from .integrator import integrate
from .maxent import disequilibrium_report, kl_divergence, solve_maxent

log = logging.getLogger("seapath")

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_INFEASIBLE = 3
EXIT_NUMERICAL = 4
EXIT_MAX_TIME = 5

LOG_LEVELS = {"error": logging.ERROR, "info": logging.INFO, "debug": logging.DEBUG}


def exit_code_for(exc: BaseException) -> int:
    if isinstance(exc, InfeasibleTargetsError):
        return EXIT_INFEASIBLE
    if isinstance(exc, (ConfigError, DegenerateConstraintsError, StateError, MetricError)):
        return EXIT_CONFIG
    if isinstance(exc, (NumericalError, EquilibriumError, SeaError, FloatingPointError)):
        return EXIT_NUMERICAL
    raise exc


# -- output helpers ----------------------------------------------------------------

def atomic_write(path: str, text: str) -> None:
    """Write ``text`` to ``path`` via a temporary file and rename."""
    directory = os.path.dirname(os.path.abspath(path))
    os.makedirs(directory, exist_ok=True)
    fd, tmp = tempfile.mkstemp(prefix=".tmp-", dir=directory)
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _plain(x):
    """Convert numpy values to JSON-ready Python values (floats keep ``repr`` precision)."""
    if isinstance(x, dict):
        return {k: _plain(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_plain(v) for v in x]
    if isinstance(x, np.ndarray):
        return [_plain(v) for v in x.tolist()]
    if isinstance(x, (np.floating,)):
        return float(x)
    if isinstance(x, (np.integer,)):
        return int(x)
    if isinstance(x, (np.bool_,)):
        return bool(x)
    if isinstance(x, float) and not np.isfinite(x):
        return None if np.isnan(x) else ("inf" if x > 0 else "-inf")
    return x


def dumps_json(doc: dict) -> str:
    return json.dumps(_plain(doc), indent=2, allow_nan=False) + "\n"


def trajectory_csv(record) -> str:
    """CSV with columns ``t, p_1..p_n, S, Pi_S, DoD, ell, drift_max``."""
    n = record.constraints.n
    header = ["t"] + [f"p_{j + 1}" for j in range(n)] + ["S", "Pi_S", "DoD", "ell", "drift_max"]
    drift = record.drift().max(axis=1)
    rows = np.array([
        [s.t, *s.state.probabilities, s.entropy, s.entropy_production, s.dod, s.ell, d]
        for s, d in zip(record.samples, drift)
    ])
    buf = io.StringIO()
    buf.write(",".join(header) + "\n")
    np.savetxt(buf, rows, fmt="%.17g", delimiter=",")
    return buf.getvalue()


def _paths(cfg: RunConfig, out_dir: str, command: str):
    stem = os.path.join(out_dir, cfg.output.name)
    if command == "simulate":
        return f"{stem}.trajectory.csv", f"{stem}.summary.json"
    return None, f"{stem}.{command}.json"


def _phase_meta(disc):
    if disc is None:
        return None
    return {"q": disc.q, "p": disc.p, "n_q": disc.grid.n_q, "n_p": disc.grid.n_p}


# -- commands ------------------------------------------------------------------------

def _no_targets(cfg: RunConfig, command: str):
    if cfg.problem.targets is not None:
        raise ConfigError(f"problem.targets: not used by {command}; targets are read from "
                          "the initial distribution")


def cmd_simulate(cfg: RunConfig, out_dir: str) -> int:
    _no_targets(cfg, "simulate")
    state, cs, disc = cfg.build_problem()
    metric = cfg.build_metric(cs.n)
    record = integrate(state, cs, metric, cfg.build_tau(), cfg.build_integrator(), cfg.kb)
    final = record.final
    end = sea_direction(final.state, record.constraints, metric, TauPolicy(), cfg.kb,
                        record.support)
    oracle = solve_maxent(record.constraints, record.initial_support)
    traj_path, summary_path = _paths(cfg, out_dir, "simulate")
    if cfg.output.trajectory:
        atomic_write(traj_path, trajectory_csv(record))
    summary = {
        "command": "simulate",
        "status": record.status,
        "message": record.message,
        "endpoint_distribution": final.state.probabilities,
        "beta": end.beta,
        "constraint_names": list(record.constraints.names),
        "targets": record.constraints.targets,
        "d_sea": final.ell,
        "d_sea_tail": record.ell_tail,
        "kl": kl_divergence(state, oracle),
        "kl_endpoint": kl_divergence(final.state, oracle),
        "final_time": final.t,
        "final_dod": final.dod,
        "max_drift": float(record.drift().max()),
        "accepted_steps": record.accepted_steps,
        "rejected_steps": record.rejected_steps,
        "samples": len(record.samples),
        "phase": _phase_meta(disc),
        "config": cfg.to_dict(),
    }
    if cfg.output.summary:
        atomic_write(summary_path, dumps_json(summary))
    log.info("simulate %s: %s, d_SEA=%.12g", cfg.output.name, record.status, final.ell)
    return EXIT_OK if record.converged else EXIT_MAX_TIME


def cmd_maxent(cfg: RunConfig, out_dir: str) -> int:
    state, cs, disc = cfg.build_problem(need_state=False)
    support = state.support() if state is not None else None
    result = solve_maxent(cs, support)
    doc = {
        "command": "maxent",
        "distribution": result.distribution,
        "dual_multipliers": result.dual_multipliers,
        "constraint_names": list(cs.names),
        "targets": cs.targets,
        "achieved_means": result.achieved_means,
        "iterations": result.iterations,
        "residual": result.residual,
        "phase": _phase_meta(disc),
        "config": cfg.to_dict(),
    }
    atomic_write(_paths(cfg, out_dir, "maxent")[1], dumps_json(doc))
    log.info("maxent %s: %d iterations", cfg.output.name, result.iterations)
    return EXIT_OK


def cmd_analyze(cfg: RunConfig, out_dir: str) -> int:
    _no_targets(cfg, "analyze")
    state, cs, disc = cfg.build_problem()
    metric = cfg.build_metric(cs.n)
    report = disequilibrium_report(state, cs, metric, cfg.kb, cfg.build_integrator())
    doc = {"command": "analyze", **report.as_dict(), "phase": _phase_meta(disc),
           "config": cfg.to_dict()}
    atomic_write(_paths(cfg, out_dir, "analyze")[1], dumps_json(doc))
    log.info("analyze %s: DoD=%.6g d_SEA=%.6g", cfg.output.name, report.dod, report.d_sea)
    return EXIT_OK if report.status == "converged" else EXIT_MAX_TIME


COMMANDS = {"simulate": cmd_simulate, "maxent": cmd_maxent, "analyze": cmd_analyze}


def run_one(command: str, path: str, out_dir: str) -> tuple[int, str]:
    """Run one command on one configuration file; returns ``(exit code, message)``."""
    try:
        cfg = config_mod.load(path)
        code = COMMANDS[command](cfg, out_dir)
        return code, "ok" if code == EXIT_OK else "max_time reached (partial outputs written)"
    except Exception as exc:  # noqa: BLE001 - mapped onto exit codes
        code = exit_code_for(exc)
        msg = str(exc)
        if not msg.startswith(path):
            msg = f"{path}: {msg}"
        return code, msg


def _configure_logging(quiet: bool):
    level_name = os.environ.get("SEA_LOG_LEVEL", "error" if quiet else "info").lower()
    level = LOG_LEVELS.get(level_name, logging.INFO)
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s",
                        stream=sys.stderr, force=True)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="sea", description="Steepest-entropy-ascent relaxation runs.")
    parser.add_argument("command", choices=sorted(COMMANDS))
    parser.add_argument("configs", nargs="+", metavar="config", help="TOML run configuration(s)")
    parser.add_argument("--out-dir", default=".", help="directory for output files (default: .)")
    parser.add_argument("--jobs", type=int, default=1, help="parallel worker processes")
    parser.add_argument("--quiet", action="store_true", help="only report errors")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    _configure_logging(args.quiet)
    if args.jobs < 1:
        print("sea: --jobs must be at least 1", file=sys.stderr)
        return EXIT_CONFIG
    jobs = [(args.command, path, args.out_dir) for path in args.configs]
    if args.jobs > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=args.jobs) as pool:
            results = list(pool.map(run_one, *zip(*jobs)))
    else:
        results = [run_one(*job) for job in jobs]
    worst = 0
    for (_, path, _), (code, msg) in zip(jobs, results):
        if code in (EXIT_OK, EXIT_MAX_TIME):
            if not args.quiet:
                print(f"{path}: {msg}")
        else:
            print(f"error: {msg}", file=sys.stderr)
        worst = max(worst, code)
    return worst


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
