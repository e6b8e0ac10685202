"""Method comparison, partial-flow and zero-shot runs on one synthetic split.

    python scripts/run_all.py --out-dir runs/default
"""
import argparse
import time

from flowtree import experiments as E


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--scale", type=float, default=0.04)
    ap.add_argument("--out-dir", default="runs/default")
    args = ap.parse_args()

    cfg = E.ExperimentConfig(seed=args.seed, scale=args.scale)
    t0 = time.perf_counter()
    data = E.prepare(cfg)
    print(f"prepared {len(data.y_train)} train / {len(data.y_test)} test flows in {time.perf_counter() - t0:.0f}s")

    reports = E.compare(cfg, args.out_dir, data)
    for m, r in reports.items():
        print(f"{m:18s} acc {r['accuracy']:.4f}  avg-prec {r['avg_precision']:.4f}")

    model, _ = E.train_tsdnn(data.X_train, data.y_train, cfg)
    for r in E.partial_flow(cfg, args.out_dir, data, model):
        print(f"fraction {r['fraction']:<5g} binary acc {r['accuracy']:.4f}  mean packets {r['mean_packets']:.2f}")
    z = E.zero_shot(cfg, args.out_dir, data, model)
    for fam, r in z["per_family"].items():
        print(f"zero-shot {fam}: {r['flagged_malicious']:.3f} flagged ({r['test_flows']} flows)")
    print(f"done in {time.perf_counter() - t0:.0f}s; outputs in {args.out_dir}")


if __name__ == "__main__":
    main()
