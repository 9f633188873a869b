"""Climb-game returns under several exploration anneal lengths, for VDN and DVDN.

Shows where the greedy joint action settles when exploration decays at
different rates. ``python3 scripts/sweep_climb_anneal.py --seeds 0,1,2,3``
"""
import argparse
from pathlib import Path

import numpy as np

from dvdn import harness
from dvdn.config import load

CONFIGS = Path(__file__).resolve().parents[1] / "configs"


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--seeds", default="0,1,2,3")
    ap.add_argument("--anneal", default="2000,20000,50000")
    ap.add_argument("--steps", type=int, default=100_000)
    args = ap.parse_args()
    for algo in ("vdn", "dvdn"):
        for anneal in args.anneal.split(","):
            cfg = load(CONFIGS / f"climb_{algo}.cfg", [f"seeds={args.seeds}", f"explore.anneal_steps={anneal}",
                                                      f"train.total_steps={args.steps}"])
            mat, _ = harness.train(cfg).per_seed_matrix()
            print(f"{algo:5s} anneal {anneal:>6s}: per-seed max {mat.max(axis=1).tolist()}, "
                  f"final {mat[:, -1].tolist()}")


if __name__ == "__main__":
    main()
