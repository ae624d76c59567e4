"""Command-line entry point.

Exit codes: 0 success, 1 usage error, 2 invalid configuration, 3 runtime or
numerical failure. Failures print one diagnostic line to stderr.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import CODE_VERSION
from .cgm import fit, predict_mean, sample
from .config import ConfigError, load_config, parse_config
from .experiments import EXPERIMENT_RUNNERS, fit_library
from .library import build_single
from .numerics import RngStream, derive_stream_id
from .storage import load_library, load_predictor, load_trajectory, save_library, save_predictor, save_trajectory

EXIT_OK, EXIT_USAGE, EXIT_CONFIG, EXIT_RUNTIME = 0, 1, 2, 3


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.format_usage().strip()}\n{self.prog}: error: {message}")


def _add_globals(p: argparse.ArgumentParser, suppress: bool):
    d = (lambda v: argparse.SUPPRESS) if suppress else (lambda v: v)
    p.add_argument("--config", type=Path, default=d(None), help="JSON experiment config")
    p.add_argument("--seed", type=int, default=d(None), help="base seed (overrides the config)")
    p.add_argument("--out", type=Path, default=d(Path("results")), help="output directory")
    p.add_argument("--threads", type=int, default=d(1), help="worker processes for trial-level parallelism")
    p.add_argument("--format", choices=("csv", "jsonl"), default=d("csv"), help="result log format")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="bcgm", description="Behavioral generative model toolkit.")
    parser.add_argument("--version", action="version", version=CODE_VERSION)
    parser.add_argument("-v", "--verbose", action="store_true")
    _add_globals(parser, suppress=False)
    sub = parser.add_subparsers(dest="command", parser_class=_Parser)

    def add(name, help_text):
        p = sub.add_parser(name, help=help_text)
        _add_globals(p, suppress=True)
        return p

    p = add("simulate", "generate one data-collection trajectory and save it")
    p.add_argument("--plant", default=None, help="built-in plant name (default: config plant or stable_demo)")
    p.add_argument("--length", type=int, default=1017)

    p = add("build-library", "Hankel library from a saved trajectory")
    p.add_argument("trajectory", type=Path)
    p.add_argument("--T-ini", dest="T_ini", type=int, default=8)
    p.add_argument("--T", dest="T", type=int, default=10)

    p = add("fit", "fit the generative model to a saved library")
    p.add_argument("library", type=Path)

    p = add("predict", "conditional mean, covariance and samples for one conditioning vector")
    p.add_argument("predictor", type=Path)
    p.add_argument("--z", required=True, help="comma-separated col(u_ini, y_ini, u_f)")
    p.add_argument("--samples", type=int, default=0)

    for name in ("converge", "tini-gap", "control-bench"):
        add(name, f"run the {name} campaign")

    p = add("plot", "render a result log as SVG")
    p.add_argument("log", type=Path)
    p.add_argument("--output", type=Path, default=None)
    return parser


def _experiment_config(args, experiment: str):
    if args.config is not None:
        cfg = load_config(args.config)
        if cfg.experiment != experiment:
            raise ConfigError(f"config is for {cfg.experiment!r}, not {experiment!r}")
    else:
        if args.seed is None:
            raise ConfigError("no config given and no --seed; unseeded runs are not allowed")
        doc = {"experiment": experiment, "seed": args.seed}
        if experiment == "control_bench":
            doc["control_bench"] = {"controllers": [{"kind": "kf_dmpc"}, {"kind": "sspc_gen", "N": 1000}]}
        cfg = parse_config(doc)
    if args.seed is not None:
        cfg = cfg.with_seed(args.seed)
    return cfg


def _seed(args) -> int:
    if args.seed is not None:
        return args.seed
    if args.config is not None:
        return load_config(args.config).seed
    raise ConfigError("a --seed or --config is required")


def _cmd_simulate(args):
    if args.config is not None:
        cfg = load_config(args.config)
        if args.plant:
            cfg = parse_config({"experiment": cfg.experiment, "seed": cfg.seed, "plant": {"name": args.plant}})
    else:
        cfg = parse_config({"experiment": "converge", "seed": _seed(args),
                            "plant": {"name": args.plant or "stable_demo"}})
    seed = args.seed if args.seed is not None else cfg.seed
    N = args.length - cfg.T_ini - cfg.T + 1
    if N < 1:
        raise UsageError(f"--length must be at least {cfg.T_ini + cfg.T}")
    setup = cfg.plant_setup()
    from .lti import simulate_closed_loop

    traj = simulate_closed_loop(setup.model, setup.controller, cfg.noise, args.length,
                                RngStream(seed, derive_stream_id("simulate")), setup.initial_cov, setup.cross_cov)
    path = save_trajectory(traj, args.out / "trajectory", plant=setup.name, seed=seed, version=CODE_VERSION)
    print(path)


def _cmd_build_library(args):
    lib = build_single(load_trajectory(args.trajectory), args.T_ini, args.T)
    print(save_library(lib, args.out / "library", version=CODE_VERSION))


def _cmd_fit(args):
    pred = fit(load_library(args.library))
    print(save_predictor(pred, args.out / "predictor", version=CODE_VERSION))


def _cmd_predict(args):
    pred = load_predictor(args.predictor)
    try:
        z = np.array([float(v) for v in args.z.split(",")])
    except ValueError:
        raise UsageError("--z must be a comma-separated list of numbers") from None
    if z.size != pred.z_dim:
        raise UsageError(f"--z has {z.size} entries, the predictor expects {pred.z_dim}")
    out = {"mean": predict_mean(pred, z).tolist(), "cov": pred.Sigma_f.tolist()}
    if args.samples:
        rng = RngStream(_seed(args), derive_stream_id("predict"))
        out["samples"] = sample(pred, z, rng, args.samples, fast=True).tolist()
    print(json.dumps(out))


def _cmd_experiment(args):
    experiment = args.command.replace("-", "_")
    cfg = _experiment_config(args, experiment)
    summary = EXPERIMENT_RUNNERS[experiment](cfg, args.out, max(1, args.threads), args.format)
    if experiment == "converge":
        for (mode, metric), slope in summary["slopes"].items():
            print(f"{mode} {metric} slope {slope:.4f}")
    elif experiment == "tini_gap":
        for metric, (rho, r2, used) in summary["fits"].items():
            print(f"{metric} rho {rho:.4f} R2 {r2:.4f} points {used}")
    else:
        for row in summary["table"]:
            print(f"{row['controller']:22s} cost {row['average_cost']:9.2f}  p_fail {row['p_fail']:.2f}  "
                  f"ms {row['mean_solve_ms']:.2f}")
    print(summary["path"])


def _cmd_plot(args):
    from .plotting import plot_log

    print(plot_log(args.log, args.output))


COMMANDS = {
    "simulate": _cmd_simulate,
    "build-library": _cmd_build_library,
    "fit": _cmd_fit,
    "predict": _cmd_predict,
    "converge": _cmd_experiment,
    "tini-gap": _cmd_experiment,
    "control-bench": _cmd_experiment,
    "plot": _cmd_plot,
}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if args.command is None:
            raise UsageError(parser.format_usage().strip() + "\nbcgm: error: a subcommand is required")
        logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                            format="%(levelname)s %(name)s: %(message)s")
        COMMANDS[args.command](args)
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return EXIT_USAGE
    except ConfigError as exc:
        print(f"bcgm: invalid config: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except Exception as exc:  # runtime or numerical failure
        print(f"bcgm: {type(exc).__name__}: {exc}".splitlines()[0], file=sys.stderr)
        return EXIT_RUNTIME
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
