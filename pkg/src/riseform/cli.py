"""Command-line front end.

Reports go to stdout as JSON; human-readable summaries go to stderr.
Exit codes: 0 success, 1 validation or runtime failure, 2 usage or config error.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import platform
import sys
import time
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import __version__
from . import config as cfgio
from .graph import GraphError, certify, gain_thresholds
from .sim import DEFAULT_SEED, NonFiniteState, SimConfig, TrajectoryLog, pentagon_scenario, run

OUT_ENV = "RISEFORM_OUT"
SCENARIOS = {"pentagon": pentagon_scenario}

EXIT_OK, EXIT_FAIL, EXIT_USAGE = 0, 1, 2


class UsageError(Exception):
    pass


def _emit(obj: dict) -> None:
    json.dump(obj, sys.stdout, indent=2)
    sys.stdout.write("\n")


def _say(msg: str) -> None:
    print(msg, file=sys.stderr)


def _load_config(args: argparse.Namespace) -> SimConfig:
    if args.scenario and args.config:
        raise UsageError("give either a config file or --scenario, not both")
    if args.scenario:
        cfg = SCENARIOS[args.scenario]()
    elif args.config:
        path = Path(args.config)
        if not path.is_file():
            raise UsageError(f"config file not found: {path}")
        try:
            cfg = cfgio.load(path)
        except cfgio.ConfigError as exc:
            raise UsageError(f"{path}: {exc}") from exc
    else:
        raise UsageError("a config file or --scenario is required")
    overrides = {}
    for key, attr in (("dt", "dt"), ("duration", "duration"), ("substeps", "substeps"), ("log_stride", "log_stride")):
        val = getattr(args, key, None)
        if val is not None:
            overrides[attr] = val
    if args.seed is not None:
        overrides["rng_seed"] = args.seed
    if overrides:
        try:
            cfg = replace(cfg, **overrides)
        except ValueError as exc:
            raise UsageError(str(exc)) from exc
    return cfg


def build_info() -> dict:
    import numba
    import scipy

    return {
        "package": "riseform",
        "version": __version__,
        "python": platform.python_version(),
        "numpy": np.__version__,
        "scipy": scipy.__version__,
        "numba": numba.__version__,
        "platform": platform.platform(),
    }


def write_artifacts(log: TrajectoryLog, cfg: SimConfig, out_dir: Path, stem: str, wall_s: float) -> tuple[Path, Path]:
    out_dir.mkdir(parents=True, exist_ok=True)
    csv_path = out_dir / f"{stem}.csv"
    meta_path = out_dir / f"{stem}.json"
    with csv_path.open("w", encoding="utf-8", newline="") as fh:
        log.write_csv(fh)
    meta = {
        "config_hash": cfgio.config_hash(cfg),
        "seed": cfg.rng_seed,
        "dt": cfg.dt,
        "substeps": cfg.substeps,
        "duration": cfg.duration,
        "log_stride": cfg.log_stride,
        "rows": int(log.t.size),
        "columns": log.columns(),
        "wall_time_s": wall_s,
        "build": build_info(),
    }
    meta_path.write_text(json.dumps(meta, indent=2) + "\n", encoding="utf-8")
    return csv_path, meta_path


def cmd_simulate(args: argparse.Namespace) -> int:
    cfg = _load_config(args)
    out_dir = Path(args.out or os.environ.get(OUT_ENV, "."))
    t0 = time.perf_counter()
    try:
        log = run(cfg)
    except NonFiniteState as exc:
        _say(f"simulation aborted: {exc}")
        return EXIT_FAIL
    wall = time.perf_counter() - t0
    csv_path, meta_path = write_artifacts(log, cfg, out_dir, args.stem, wall)
    summary = {
        "csv": str(csv_path),
        "metadata": str(meta_path),
        "final_vartheta": float(log.vartheta[-1]),
        "peak_nu": float(log.nu.max()),
        "wall_time_s": wall,
    }
    _emit(summary)
    _say(
        f"{log.t[-1]:.3f} s simulated in {wall:.2f} s; final vartheta = {summary['final_vartheta']:.3e}, "
        f"peak nu = {summary['peak_nu']:.3e}; wrote {csv_path}"
    )
    return EXIT_OK


def cmd_validate_graph(args: argparse.Namespace) -> int:
    cfg = _load_config(args)
    try:
        cert = certify(cfg.graph, require_strongly_connected=args.strict)
    except GraphError as exc:
        _emit({"valid": False, "error": type(exc).__name__, "message": str(exc)})
        _say(f"graph rejected: {exc}")
        return EXIT_FAIL
    thr = gain_thresholds(cert)
    report = {"valid": True, **cert.as_dict(), "thresholds": {"k1": thr.k1_min, "k2": thr.k2_min, "k4": thr.k4_min}}
    _emit(report)
    _say(
        f"graph ok: q > 0, Pi positive definite, L+B nonsingular M-matrix; "
        f"sigma(P(L+B)) in [{cert.sigma_min_PLB:.4g}, {cert.sigma_max_PLB:.4g}]"
    )
    return EXIT_OK


def cmd_gains(args: argparse.Namespace) -> int:
    cfg = _load_config(args)
    try:
        cert = certify(cfg.graph)
    except GraphError as exc:
        _say(f"graph rejected: {exc}")
        return EXIT_FAIL
    g = cfg.gains
    report = gain_thresholds(cert).report(g.k1, g.k2, g.k3, g.k4)
    _emit(report)
    for name, row in report["gains"].items():
        _say(f"{name} = {row['value']:g} vs > {row['threshold']:.4g}: {'pass' if row['pass'] else 'FAIL'}")
    return EXIT_OK


def read_csv(path: Path) -> tuple[list[str], np.ndarray]:
    with path.open(encoding="utf-8") as fh:
        header = fh.readline().strip().split(",")
    data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    return header, data


def cmd_metrics(args: argparse.Namespace) -> int:
    path = Path(args.csv)
    if not path.is_file():
        raise UsageError(f"trajectory file not found: {path}")
    try:
        header, data = read_csv(path)
        col = {name: k for k, name in enumerate(header)}
        n_agents = max(int(c[1:].split("_")[0]) for c in header if c.startswith("a") and "_" in c)
        dim = sum(1 for c in header if c.startswith("leader_p"))
        u = np.stack([[data[:, col[f"a{i}_u{k}"]] for k in range(1, dim + 1)] for i in range(1, n_agents + 1)])
        e = np.stack([[data[:, col[f"a{i}_e{k}"]] for k in range(1, dim + 1)] for i in range(1, n_agents + 1)])
    except (KeyError, ValueError, IndexError) as exc:
        raise UsageError(f"{path}: not a trajectory file ({exc})") from exc
    # (N, n, K) -> (K, N, n)
    u, e = np.moveaxis(u, -1, 0), np.moveaxis(e, -1, 0)
    nu = (u**2).sum(axis=(1, 2)) / (2 * n_agents)
    vartheta = np.abs(e).sum(axis=(1, 2)) / (2 * n_agents)
    t = data[:, col["t"]]
    below = np.nonzero(vartheta < args.threshold)[0]
    report = {
        "rows": int(t.size),
        "final_nu": float(nu[-1]),
        "peak_nu": float(nu.max()),
        "final_vartheta": float(vartheta[-1]),
        "peak_vartheta": float(vartheta.max()),
        "threshold": args.threshold,
        "first_time_below_threshold": None if below.size == 0 else float(t[below[0]]),
    }
    _emit(report)
    _say(f"final vartheta {report['final_vartheta']:.3e}, peak nu {report['peak_nu']:.3e}")
    return EXIT_OK


def cmd_scenario(args: argparse.Namespace) -> int:
    cfg = SCENARIOS[args.emit]()
    if args.seed is not None:
        cfg = replace(cfg, rng_seed=args.seed)
    sys.stdout.write(cfgio.dumps(cfg))
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, default=None, help=f"RNG seed for weight init (default {DEFAULT_SEED})")
    common.add_argument("-v", "--verbose", action="store_true")

    source = argparse.ArgumentParser(add_help=False)
    source.add_argument("config", nargs="?", help="scenario TOML file")
    source.add_argument("--scenario", choices=sorted(SCENARIOS), help="built-in scenario instead of a file")

    parser = argparse.ArgumentParser(prog="riseform", description="NN + RISE leader-follower formation control")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", parents=[common, source], help="run a scenario and write CSV + JSON")
    p.add_argument("--dt", type=float, help="sample period in seconds")
    p.add_argument("--duration", type=float, help="simulated time in seconds")
    p.add_argument("--substeps", type=int, help="RK4 steps per sample period")
    p.add_argument("--log-stride", type=int, dest="log_stride", help="record every k-th sample")
    p.add_argument("--out", help=f"output directory (default ${OUT_ENV} or .)")
    p.add_argument("--stem", default="trajectory", help="output file name stem")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("validate-graph", parents=[common, source], help="graph certificates as JSON")
    p.add_argument("--strict", action="store_true", help="also require strong connectivity")
    p.set_defaults(func=cmd_validate_graph)

    p = sub.add_parser("gains", parents=[common, source], help="gain thresholds and pass/fail")
    p.set_defaults(func=cmd_gains)

    p = sub.add_parser("metrics", parents=[common], help="nu and vartheta from a trajectory CSV")
    p.add_argument("csv")
    p.add_argument("--threshold", type=float, default=0.02)
    p.set_defaults(func=cmd_metrics)

    p = sub.add_parser("scenario", parents=[common], help="print a built-in scenario as TOML")
    p.add_argument("--emit", choices=sorted(SCENARIOS), required=True)
    p.set_defaults(func=cmd_scenario)
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s: %(message)s")
    try:
        return args.func(args)
    except UsageError as exc:
        _say(f"riseform: error: {exc}")
        return EXIT_USAGE
    except cfgio.ConfigError as exc:
        _say(f"riseform: config error: {exc}")
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
