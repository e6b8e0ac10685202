"""Average precision of every method across several data/initialisation seeds.

    python scripts/seed_sweep.py --seeds 0,1,2 --out runs/seed_sweep.csv
"""
import argparse
import csv

from flowtree import experiments as E


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--seeds", default="0,1,2")
    ap.add_argument("--scale", type=float, default=0.04)
    ap.add_argument("--out", default="runs/seed_sweep.csv")
    args = ap.parse_args()

    rows = []
    for seed in (int(s) for s in args.seeds.split(",")):
        cfg = E.ExperimentConfig(seed=seed, scale=args.scale)
        for m, r in E.compare(cfg).items():
            rows.append((seed, m, r["accuracy"], r["avg_precision"]))
            print(f"seed {seed} {m:18s} acc {r['accuracy']:.4f} avg-prec {r['avg_precision']:.4f}", flush=True)
    with open(args.out, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["seed", "method", "accuracy", "avg_precision"])
        w.writerows(rows)


if __name__ == "__main__":
    main()
