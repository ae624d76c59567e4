"""Closed-loop controller comparison on the stable demo plant.

All controllers in one trial see the same plant noise. Costs are averaged
over violation-free trials only.

    python scripts/stable_benchmark.py --out results/stable_bench --threads 4 [--trials 50]
"""

import argparse
from dataclasses import replace
from pathlib import Path

from bcgm.config import load_config
from bcgm.experiments import control_benchmark

HERE = Path(__file__).parent


def run(config_name: str, default_out: str):
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--out", type=Path, default=Path(default_out))
    ap.add_argument("--threads", type=int, default=1)
    ap.add_argument("--trials", type=int, default=None, help="override the configured trial count")
    args = ap.parse_args()

    cfg = load_config(HERE / "configs" / config_name)
    if args.trials:
        cfg = replace(cfg, bench=replace(cfg.bench, trials=args.trials))
    res = control_benchmark(cfg, args.out, args.threads)
    print(f"{'controller':22s} {'cost':>9s} {'p_fail':>7s} {'ms/step':>8s}")
    for row in res["table"]:
        print(f"{row['controller']:22s} {row['average_cost']:9.2f} {row['p_fail']:7.2f} {row['mean_solve_ms']:8.2f}")
    print("table:", res["table_path"])


if __name__ == "__main__":
    run("stable_benchmark.json", "results/stable_bench")
