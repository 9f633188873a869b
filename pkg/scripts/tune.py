"""Grid search over config keys on held-out tuning seeds.

Each grid point trains the given seeds; the point with the highest maximum
average return wins. Tuning seeds should not overlap the evaluation seeds.

    python3 scripts/tune.py configs/foraging_iql.cfg --seeds 100,101,102 \
        --grid train.lr=0.0001,0.0003,0.0005 --grid target.mode=hard,soft
"""
import argparse
import csv
import itertools
import time
from pathlib import Path

from dvdn import harness
from dvdn.config import load
from dvdn.stats import max_average_return


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("config", type=Path)
    ap.add_argument("--seeds", default="100,101,102")
    ap.add_argument("--grid", action="append", default=[], metavar="KEY=V1,V2,...")
    ap.add_argument("--override", action="append", default=[])
    args = ap.parse_args()

    keys, values = [], []
    for g in args.grid:
        k, v = g.split("=", 1)
        keys.append(k.strip())
        values.append([x.strip() for x in v.split(",")])
    rows = []
    for combo in itertools.product(*values):
        point = [f"{k}={v}" for k, v in zip(keys, combo)]
        cfg = load(args.config, args.override + point + [f"seeds={args.seeds}"])
        t0 = time.perf_counter()
        best = max_average_return(harness.train(cfg).records())
        rows.append({**dict(zip(keys, combo)), "max_average_return": best.mean, "best_step": best.step})
        print(f"{' '.join(point):50s} {best.mean:.4f} at step {best.step} ({time.perf_counter() - t0:.0f}s)",
              flush=True)
    winner = max(rows, key=lambda r: r["max_average_return"])
    print("best:", " ".join(f"{k}={winner[k]}" for k in keys))
    out = harness.output_root() / "tuning"
    out.mkdir(parents=True, exist_ok=True)
    path = out / f"{args.config.stem}.csv"
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=list(rows[0]), lineterminator="\n")
        w.writeheader()
        w.writerows(rows)
    print(f"wrote {path}")


if __name__ == "__main__":
    main()
