"""Train the desk-scale learning presets and report the headline comparisons.

    python3 scripts/run_learning.py [--envs climb foraging] [--algorithms vdn dvdn iql] [--seeds 0,1]

Artifacts land in ``$DVDN_OUTPUT_ROOT/learning/<env>_<algorithm>`` and a
seed-aggregated plot table per environment in ``.../learning/plots``.
"""
import argparse
import time
from pathlib import Path

import numpy as np

from dvdn import harness
from dvdn.config import load
from dvdn.stats import max_average_return

CONFIGS = Path(__file__).resolve().parents[1] / "configs"


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--envs", nargs="+", default=["climb", "foraging"])
    ap.add_argument("--algorithms", nargs="+", default=["vdn", "dvdn", "iql"])
    ap.add_argument("--seeds", help="comma-separated seed list overriding the presets")
    ap.add_argument("--steps", type=int, help="override train.total_steps")
    args = ap.parse_args()

    overrides = []
    if args.seeds:
        overrides.append(f"seeds={args.seeds}")
    if args.steps:
        overrides.append(f"train.total_steps={args.steps}")
    root = harness.output_root() / "learning"
    arts = {}
    t0 = time.perf_counter()
    for env in args.envs:
        for algo in args.algorithms:
            t = time.perf_counter()
            art = harness.train(load(CONFIGS / f"{env}_{algo}.cfg", overrides), root / f"{env}_{algo}")
            arts[env, algo] = art
            mat, _ = art.per_seed_matrix()
            best = max_average_return(art.records())
            print(f"{env:9s} {algo:5s} max average return {best.mean:8.4f} at step {best.step:6d}  "
                  f"per-seed max {np.round(mat.max(axis=1), 2).tolist()}  ({time.perf_counter() - t:.0f}s)")
    print(f"total {time.perf_counter() - t0:.0f}s")

    for env in args.envs:
        if (env, "dvdn") in arts and (env, "iql") in arts:
            print(f"{env}: DVDN vs IQL {harness.compare_runs(arts[env, 'dvdn'].rows, arts[env, 'iql'].rows)}")
        if (env, "dvdn") in arts and (env, "vdn") in arts:
            print(f"{env}: DVDN vs VDN {harness.compare_runs(arts[env, 'dvdn'].rows, arts[env, 'vdn'].rows)}")
    paths = harness.export_plots([a.out_dir / "metrics.csv" for a in arts.values()], root / "plots")
    for p in paths:
        print(f"wrote {p}")


if __name__ == "__main__":
    main()
