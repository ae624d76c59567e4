"""Library-size convergence study: error against N on log-log axes, plus the multi-trajectory limit check.

    python scripts/convergence_study.py --out results/convergence --threads 4
"""

import argparse
from pathlib import Path

import numpy as np

from bcgm.config import load_config
from bcgm.experiments import convergence_experiment
from bcgm.plotting import plot_log

HERE = Path(__file__).parent


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--out", type=Path, default=Path("results/convergence"))
    ap.add_argument("--threads", type=int, default=1)
    args = ap.parse_args()

    cfg = load_config(HERE / "configs" / "convergence_rate.json")
    res = convergence_experiment(cfg, args.out / "single", args.threads)
    for (mode, metric), slope in res["slopes"].items():
        print(f"{mode:6s} {metric:8s} slope {slope:+.3f}")
    print("figure:", plot_log(res["path"]))

    for name in ("limit_identity", "limit_identity_uniform"):
        cfg = load_config(HERE / "configs" / f"{name}.json")
        res = convergence_experiment(cfg, args.out / name, args.threads)
        top = max(cfg.converge.N_values)
        rows = [r for r in res["rows"] if int(r["N"]) == top]
        rel_mean = np.mean([float(r["rel_err_mean"]) for r in rows])
        rel_cov = np.mean([float(r["rel_err_cov"]) for r in rows])
        print(f"{name}: N={top} relative error mean {rel_mean:.4f} cov {rel_cov:.4f}")


if __name__ == "__main__":
    main()
