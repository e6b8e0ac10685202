"""Hold out each malicious class in turn and report how often stage 1 flags it.

    python scripts/zero_shot_families.py
"""
import argparse

from flowtree import experiments as E
from flowtree import labels as L


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--scale", type=float, default=0.04)
    args = ap.parse_args()

    cfg = E.ExperimentConfig(seed=args.seed, scale=args.scale)
    data = E.prepare(cfg)
    full, _ = E.train_tsdnn(data.X_train, data.y_train, cfg)
    for fam in L.CLASS_NAMES[1:]:
        z = E.zero_shot(E.ExperimentConfig(seed=args.seed, scale=args.scale, holdout=(fam,)), data=data, full_model=full)
        r = z["per_family"][fam]
        print(f"{fam:12s} flagged {r['flagged_malicious']:.3f} of {r['test_flows']:4d}  "
              f"benign FPR change {z['benign_fpr_change']:+.4f}", flush=True)


if __name__ == "__main__":
    main()
