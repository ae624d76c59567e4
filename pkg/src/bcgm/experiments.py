"""Monte-Carlo campaigns: library-size convergence, past-window gap decay, closed-loop benchmark.

Each campaign is a list of independent work units. A unit draws its random
numbers from ``RngStream(seed, derive_stream_id(experiment, *unit_key))``, so
its result does not depend on which other units ran, in which order, or in
which worker process. Results go through a single :class:`ResultLog` writer in
unit order.
"""

from __future__ import annotations

import logging
import time
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .cgm import fit
from .config import ExperimentConfig
from .control import ControllerSpec, PredictiveController, run_closed_loop
from .kalman import (eta_map, multi_mode_target_covariance, output_covariance, scaled_model,
                     single_mode_target_covariance)
from .library import LibraryWidthWarning, build_multi_from_arrays, build_single
from .lti import simulate_batch, simulate_closed_loop
from .numerics import RngStream, derive_stream_id
from .results import ResultLog, read_rows, write_table

logger = logging.getLogger(__name__)

CONVERGE_COLUMNS = ["experiment", "mode", "N", "trial", "err_mean", "err_cov", "rel_err_mean", "rel_err_cov",
                    "wall_ms"]
GAP_COLUMNS = ["experiment", "pair", "T_ini", "gap_eta", "gap_psi", "gap_cov", "wall_ms"]
BENCH_COLUMNS = ["experiment", "controller", "N", "trial", "cost", "violated", "diverged", "n_violations",
                 "mean_solve_ms", "max_solve_ms", "error", "wall_ms"]
BENCH_TABLE_COLUMNS = ["controller", "N", "trials", "completed", "average_cost", "cost_stderr", "p_fail",
                       "mean_solve_ms"]


def unit_rng(seed: int, experiment: str, *key) -> RngStream:
    return RngStream(seed, derive_stream_id(experiment, *key))


def _map(func, tasks, threads: int):
    """Ordered map, in-process for one thread, over a process pool otherwise."""
    if threads <= 1 or len(tasks) <= 1:
        for t in tasks:
            yield func(t)
        return
    with ProcessPoolExecutor(max_workers=threads) as pool:
        yield from pool.map(func, tasks)


def loglog_slope(N_values, errors) -> float:
    """Least-squares slope of ``log(error)`` against ``log(N)``."""
    return float(np.polyfit(np.log(np.asarray(N_values, dtype=float)), np.log(np.asarray(errors)), 1)[0])


def geometric_fit(x, values, floor: float = 1e-12):
    """Fit ``values ~ c * rho**x`` on the points above ``floor * max(values)``.

    Returns:
        ``(rho, r_squared, points_used)``; ``rho`` is nan if fewer than three
        points survive the floor.
    """
    x = np.asarray(x, dtype=float)
    values = np.asarray(values, dtype=float)
    keep = values > floor * np.max(values)
    if keep.sum() < 3:
        return float("nan"), float("nan"), int(keep.sum())
    lx, ly = x[keep], np.log(values[keep])
    coef = np.polyfit(lx, ly, 1)
    resid = ly - np.polyval(coef, lx)
    ss_tot = np.sum((ly - ly.mean()) ** 2)
    r2 = 1.0 - np.sum(resid ** 2) / ss_tot if ss_tot > 0 else 1.0
    return float(np.exp(coef[0])), float(r2), int(keep.sum())


# ---------------------------------------------------------------- convergence

@dataclass(frozen=True)
class _ConvergeTask:
    cfg: ExperimentConfig
    mode: str
    N: int
    trial: int


def convergence_targets(cfg: ExperimentConfig, mode: str):
    """Limit mean coefficient and covariance the fitted model should approach."""
    setup = cfg.plant_setup()
    model = scaled_model(setup.model, cfg.noise)
    if mode == "single":
        Sigma = single_mode_target_covariance(setup.model, setup.controller, cfg.noise)
    else:
        Sigma = multi_mode_target_covariance(setup.initial_cov, setup.controller.Sigma_phi, setup.cross_cov)
    emap = eta_map(model, Sigma, cfg.T_ini, cfg.T)
    return emap.eta_f, output_covariance(model, Sigma, cfg.T_ini, cfg.T)


def fit_library(cfg: ExperimentConfig, mode: str, N: int, rng: RngStream, setup=None):
    """Collect data for ``N`` library columns and fit the generative model."""
    setup = setup or cfg.plant_setup()
    T_ini, T = cfg.T_ini, cfg.T
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", LibraryWidthWarning)
        if mode == "single":
            traj = simulate_closed_loop(setup.model, setup.controller, cfg.noise, N + T_ini + T - 1, rng,
                                        setup.initial_cov, setup.cross_cov)
            lib = build_single(traj, T_ini, T)
        else:
            out = simulate_batch(setup.model, setup.controller, cfg.noise, T_ini + T, N, rng,
                                 setup.initial_cov, setup.cross_cov)
            lib = build_multi_from_arrays(out["u"], out["y"], out["phi"], T_ini, T)
        return lib, fit(lib, keep_factor=False)


def _converge_unit(task: _ConvergeTask) -> dict:
    t0 = time.perf_counter()
    cfg = task.cfg
    eta_f, Y_f = convergence_targets(cfg, task.mode)
    rng = unit_rng(cfg.seed, "converge", task.mode, task.N, task.trial)
    _, pred = fit_library(cfg, task.mode, task.N, rng)
    err_mean = float(np.linalg.norm(pred.Theta_f - eta_f, 2))
    err_cov = float(np.linalg.norm(pred.Sigma_f - Y_f, 2))
    return {"experiment": "converge", "mode": task.mode, "N": task.N, "trial": task.trial,
            "err_mean": err_mean, "err_cov": err_cov,
            "rel_err_mean": err_mean / float(np.linalg.norm(eta_f, 2)),
            "rel_err_cov": err_cov / float(np.linalg.norm(Y_f, 2)),
            "wall_ms": 1e3 * (time.perf_counter() - t0)}


def convergence_experiment(cfg: ExperimentConfig, out_dir=None, threads: int = 1, fmt: str = "csv") -> dict:
    """Errors of the fitted mean coefficient and covariance on a grid of library sizes.

    Returns:
        dict with ``rows`` (all rows, including ones recovered from an earlier
        run), ``slopes`` keyed by ``(mode, metric)`` and ``path``.
    """
    c = cfg.converge
    tasks = [_ConvergeTask(cfg, mode, N, k) for mode in c.modes for N in c.N_values for k in range(c.trials)]
    return _run_campaign(cfg, "converge", tasks, _converge_unit, CONVERGE_COLUMNS, ("mode", "N", "trial"),
                         out_dir, threads, fmt, _converge_summary)


def _converge_summary(cfg, rows):
    slopes = {}
    for mode in cfg.converge.modes:
        Ns = cfg.converge.N_values
        for metric in ("err_mean", "err_cov"):
            means = [np.mean([float(r[metric]) for r in rows if r["mode"] == mode and int(r["N"]) == N])
                     for N in Ns]
            slopes[(mode, metric)] = loglog_slope(Ns, means)
    return {"slopes": slopes}


# ------------------------------------------------------------------ gap decay

def random_pd(rng: RngStream, n: int, scale: float = 1.0) -> np.ndarray:
    G = rng.standard_normal((n, n))
    return scale * (G @ G.T / n + 0.1 * np.eye(n))


def tini_gaps(model, Sigma, P_first, T_ini: int, T: int):
    """Distances between the filter-based posteriors under two initial covariances.

    ``gap_psi`` is the weight of the prior mean in the prediction, which is
    independent of the first covariance argument.
    """
    e_sigma = eta_map(model, Sigma, T_ini, T)
    e_first = eta_map(model, P_first, T_ini, T)
    return (float(np.linalg.norm(e_sigma.eta_f - e_first.eta_f, 2)),
            float(np.linalg.norm(e_first.psi_term, 2)),
            float(np.linalg.norm(output_covariance(model, Sigma, T_ini, T)
                                 - output_covariance(model, P_first, T_ini, T), 2)))


@dataclass(frozen=True)
class _GapTask:
    cfg: ExperimentConfig
    pair: int


def _gap_unit(task: _GapTask) -> list[dict]:
    cfg = task.cfg
    model = scaled_model(cfg.plant_setup().model, cfg.noise)
    rng = unit_rng(cfg.seed, "tini_gap", task.pair)
    Sigma = random_pd(rng, model.n, cfg.tini_gap.scale)
    P_first = random_pd(rng, model.n, cfg.tini_gap.scale)
    rows = []
    for T_ini in cfg.tini_gap.T_ini_values:
        t0 = time.perf_counter()
        g = tini_gaps(model, Sigma, P_first, T_ini, cfg.T)
        rows.append({"experiment": "tini_gap", "pair": task.pair, "T_ini": T_ini, "gap_eta": g[0],
                     "gap_psi": g[1], "gap_cov": g[2], "wall_ms": 1e3 * (time.perf_counter() - t0)})
    return rows


def tini_gap_experiment(cfg: ExperimentConfig, out_dir=None, threads: int = 1, fmt: str = "csv") -> dict:
    """Gap quantities against the past-window length, averaged over random covariance pairs.

    The geometric fit uses the pair-averaged curve with points at the
    floating-point floor removed.
    """
    tasks = [_GapTask(cfg, k) for k in range(cfg.tini_gap.pairs)]
    return _run_campaign(cfg, "tini_gap", tasks, _gap_unit, GAP_COLUMNS, ("pair", "T_ini"),
                         out_dir, threads, fmt, _gap_summary)


def _gap_summary(cfg, rows):
    Tis = cfg.tini_gap.T_ini_values
    fits = {}
    for metric in ("gap_eta", "gap_psi", "gap_cov"):
        curve = [np.mean([float(r[metric]) for r in rows if int(r["T_ini"]) == t]) for t in Tis]
        fits[metric] = geometric_fit(Tis, curve, cfg.tini_gap.floor)
    return {"fits": fits}


# ------------------------------------------------------------------ benchmark

@dataclass(frozen=True)
class _BenchTask:
    cfg: ExperimentConfig
    trial: int


def make_controller(spec: ControllerSpec, cfg: ExperimentConfig, model, pred=None, lib=None) -> PredictiveController:
    setup_model = scaled_model(model, cfg.noise)
    m, p = model.m, model.p
    return PredictiveController(spec, cfg.bench.objective, m, p, model=setup_model, pred=pred, lib=lib)


def _bench_unit(task: _BenchTask) -> list[dict]:
    """One trial: fresh libraries per size, then every controller on common plant noise."""
    cfg = task.cfg
    setup = cfg.plant_setup()
    base = unit_rng(cfg.seed, "control_bench", task.trial)
    fitted = {}
    rows = []
    for spec in cfg.bench.controllers:
        t0 = time.perf_counter()
        row = {"experiment": "control_bench", "controller": spec.label, "N": spec.N or 0, "trial": task.trial,
               "cost": float("nan"), "violated": False, "diverged": False, "n_violations": 0,
               "mean_solve_ms": float("nan"), "max_solve_ms": float("nan"), "error": ""}
        try:
            lib = pred = None
            if spec.N:
                if spec.N not in fitted:
                    fitted[spec.N] = fit_library(cfg, "single", spec.N, base.spawn("library", spec.N), setup)
                lib, pred = fitted[spec.N]
            ctrl = make_controller(spec, cfg, setup.model, pred, lib)
            res = run_closed_loop(setup.model, ctrl, cfg.bench.objective, cfg.bench.steps, base.spawn("loop"),
                                  cfg.noise)
            # a diverged run counts as a constraint failure
            row.update(cost=float(res.realized_cost), violated=bool(res.violated or res.diverged),
                       diverged=bool(res.diverged), n_violations=int(res.n_violations),
                       mean_solve_ms=res.mean_solve_ms, max_solve_ms=res.max_solve_ms)
        except Exception as exc:  # a failed trial is data, not a reason to stop
            logger.warning("trial %d %s failed: %s", task.trial, spec.label, exc)
            row["error"] = f"{type(exc).__name__}: {exc}".replace(",", ";").replace("\n", " ")
        row["wall_ms"] = 1e3 * (time.perf_counter() - t0)
        rows.append(row)
    return rows


def control_benchmark(cfg: ExperimentConfig, out_dir=None, threads: int = 1, fmt: str = "csv") -> dict:
    """Closed-loop runs of every configured controller; also writes an aggregate table."""
    tasks = [_BenchTask(cfg, k) for k in range(cfg.bench.trials)]
    return _run_campaign(cfg, "control_bench", tasks, _bench_unit, BENCH_COLUMNS, ("controller", "trial"),
                         out_dir, threads, fmt, _bench_summary)


def _truthy(v) -> bool:
    return v is True or str(v) in ("1", "True", "true")


def aggregate_benchmark(cfg: ExperimentConfig, rows) -> list[dict]:
    """Average cost over violation-free trials, failure probability and mean solve time.

    Trials that raised an error are counted in ``trials`` but excluded from
    every statistic.
    """
    table = []
    for spec in cfg.bench.controllers:
        mine = [r for r in rows if r["controller"] == spec.label]
        ok = [r for r in mine if not r["error"]]
        clean = [float(r["cost"]) for r in ok if not _truthy(r["violated"])]
        viol = [_truthy(r["violated"]) for r in ok]
        times = [float(r["mean_solve_ms"]) for r in ok]
        table.append({
            "controller": spec.label,
            "N": spec.N or 0,
            "trials": len(mine),
            "completed": len(ok),
            "average_cost": float(np.mean(clean)) if clean else float("nan"),
            "cost_stderr": float(np.std(clean, ddof=1) / np.sqrt(len(clean))) if len(clean) > 1 else float("nan"),
            "p_fail": float(np.mean(viol)) if viol else float("nan"),
            "mean_solve_ms": float(np.mean(times)) if times else float("nan"),
        })
    return table


def _bench_summary(cfg, rows):
    return {"table": aggregate_benchmark(cfg, rows)}


# ------------------------------------------------------------------- plumbing

def _run_campaign(cfg, name, tasks, unit, columns, key_columns, out_dir, threads, fmt, summarize) -> dict:
    rows: list[dict] = []
    log = None
    if out_dir is not None:
        log = ResultLog(Path(out_dir) / f"{name}.{fmt}", columns, key_columns, cfg.seed, fmt)
        pending = [t for t in tasks if not _task_done(log, t, cfg)]
        skipped = len(tasks) - len(pending)
        if skipped:
            logger.info("%s: %d of %d units already in the log", name, skipped, len(tasks))
        tasks = pending
    for result in _map(unit, tasks, threads):
        batch = result if isinstance(result, list) else [result]
        rows.extend(batch)
        if log is not None:
            log.write(batch)
    if log is not None:
        rows = read_rows(log.path)
    summary = summarize(cfg, rows)
    if name == "control_bench" and out_dir is not None:
        summary["table_path"] = write_table(Path(out_dir) / "control_bench_table.csv", BENCH_TABLE_COLUMNS,
                                            summary["table"])
    summary.update(rows=rows, path=None if log is None else log.path)
    return summary


def _task_done(log: ResultLog, task, cfg) -> bool:
    if isinstance(task, _ConvergeTask):
        return log.is_done({"mode": task.mode, "N": task.N, "trial": task.trial})
    if isinstance(task, _GapTask):
        return all(log.is_done({"pair": task.pair, "T_ini": t}) for t in cfg.tini_gap.T_ini_values)
    return all(log.is_done({"controller": s.label, "trial": task.trial}) for s in cfg.bench.controllers)


EXPERIMENT_RUNNERS = {
    "converge": convergence_experiment,
    "tini_gap": tini_gap_experiment,
    "control_bench": control_benchmark,
}
