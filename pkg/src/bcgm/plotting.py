"""SVG figures from result logs. Optional artifacts; nothing is validated against them."""

from __future__ import annotations

from collections import defaultdict
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from .experiments import geometric_fit, loglog_slope  # noqa: E402
from .results import read_rows  # noqa: E402


def _save(fig, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fig.savefig(path, format="svg")
    plt.close(fig)
    return path


def plot_convergence(rows, path) -> Path:
    """Mean error against library size on log-log axes, one line per mode and metric."""
    groups = defaultdict(lambda: defaultdict(list))
    for r in rows:
        for metric in ("err_mean", "err_cov"):
            groups[(r["mode"], metric)][int(r["N"])].append(float(r[metric]))
    fig, ax = plt.subplots(figsize=(6, 4))
    for (mode, metric), by_N in sorted(groups.items()):
        Ns = np.array(sorted(by_N))
        means = np.array([np.mean(by_N[N]) for N in Ns])
        slope = loglog_slope(Ns, means)
        ax.loglog(Ns, means, "o-", label=f"{mode} {metric} (slope {slope:.2f})")
    if groups:
        Ns = np.array(sorted(next(iter(groups.values()))))
        ax.loglog(Ns, means[0] * np.sqrt(Ns[0] / Ns), "k--", lw=0.8, label="N^-1/2")
    ax.set_xlabel("library columns N")
    ax.set_ylabel("spectral-norm error")
    ax.legend(fontsize=8)
    return _save(fig, path)


def plot_tini_gap(rows, path) -> Path:
    """Pair-averaged gaps against the past-window length on a log scale."""
    curves = defaultdict(lambda: defaultdict(list))
    for r in rows:
        for metric in ("gap_eta", "gap_psi", "gap_cov"):
            curves[metric][int(r["T_ini"])].append(float(r[metric]))
    fig, ax = plt.subplots(figsize=(6, 4))
    for metric, by_t in sorted(curves.items()):
        ts = np.array(sorted(by_t))
        vals = np.array([np.mean(by_t[t]) for t in ts])
        rho, r2, _ = geometric_fit(ts, vals)
        ax.semilogy(ts, vals, "o-", ms=3, label=f"{metric} (rho {rho:.3f}, R2 {r2:.3f})")
    ax.set_xlabel("past window length")
    ax.set_ylabel("gap")
    ax.legend(fontsize=8)
    return _save(fig, path)


def plot_benchmark(rows, path) -> Path:
    """Failure probability per controller."""
    by_ctrl = defaultdict(list)
    for r in rows:
        if not r.get("error"):
            by_ctrl[r["controller"]].append(str(r["violated"]) in ("1", "True", "true"))
    names = list(by_ctrl)
    fig, ax = plt.subplots(figsize=(6, 4))
    ax.bar(names, [np.mean(by_ctrl[n]) for n in names])
    ax.set_ylabel("failure probability")
    ax.tick_params(axis="x", rotation=30)
    fig.tight_layout()
    return _save(fig, path)


def plot_log(log_path, out_path=None) -> Path:
    """Pick a plot type from the log's experiment column."""
    rows = read_rows(log_path)
    if not rows:
        raise ValueError(f"{log_path} has no rows")
    out_path = out_path or Path(log_path).with_suffix(".svg")
    kind = rows[0]["experiment"]
    plotter = {"converge": plot_convergence, "tini_gap": plot_tini_gap, "control_bench": plot_benchmark}.get(kind)
    if plotter is None:
        raise ValueError(f"no plot for experiment {kind!r}")
    return plotter(rows, out_path)
