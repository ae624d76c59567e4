"""Gap between filter posteriors under different initial covariances, against the past-window length.

    python scripts/tini_gap.py --out results/tini_gap
"""

import argparse
from pathlib import Path

from bcgm.config import load_config
from bcgm.experiments import tini_gap_experiment
from bcgm.plotting import plot_log

HERE = Path(__file__).parent


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--out", type=Path, default=Path("results/tini_gap"))
    args = ap.parse_args()

    cfg = load_config(HERE / "configs" / "tini_gap.json")
    res = tini_gap_experiment(cfg, args.out)
    for metric, (rho, r2, used) in res["fits"].items():
        print(f"{metric:8s} rho {rho:.4f}  R2 {r2:.4f}  ({used} points above the floor)")
    print("figure:", plot_log(res["path"]))


if __name__ == "__main__":
    main()
