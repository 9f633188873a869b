"""Ablation over the DVDN ingredients (IQL, JTD only, GT only, GT+JTD) on one preset.

    python3 scripts/run_ablation.py configs/foraging_dvdn.cfg [--override train.total_steps=50000]
"""
import argparse
from pathlib import Path

from dvdn import harness
from dvdn.config import load


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("config", type=Path)
    ap.add_argument("--override", action="append", default=[])
    args = ap.parse_args()
    cfg = load(args.config, args.override)
    out = harness.output_root() / f"ablation_{cfg.env}"
    for r in harness.run_ablation(cfg, out_dir=out):
        flag = " (narrow window)" if r.flagged else ""
        print(f"{r.group:7s} {r.mean:8.4f} [{r.ci_low:.4f}, {r.ci_high:.4f}] n={r.n_pooled:3d} "
              f"best step {r.best_step:6d}  vs IQL {r.vs_iql}{flag}")
    print(f"wrote {out / 'ablation.csv'}")


if __name__ == "__main__":
    main()
