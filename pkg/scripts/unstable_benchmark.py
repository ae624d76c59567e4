"""Generative scenario controller on the open-loop unstable plant.

    python scripts/unstable_benchmark.py --out results/unstable_bench --threads 4
"""

import sys
from pathlib import Path

sys.path.insert(0, str(Path(__file__).parent))

from stable_benchmark import run  # noqa: E402

if __name__ == "__main__":
    run("unstable_benchmark.json", "results/unstable_bench")
