"""Global majority:minority ratio versus the per-stage ratios of the tree.

    python scripts/imbalance_ratios.py --scale 1.0
"""
import argparse

from flowtree import datagen, tsdnn
from flowtree import labels as L


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--scale", type=float, default=1.0)
    ap.add_argument("--train-fraction", type=float, default=0.5)
    args = ap.parse_args()

    counts = datagen.class_counts(args.scale)
    train = {L.CLASS_INDEX[n]: max(1, round(args.train_fraction * c)) for n, c in counts.items()}
    print(f"global ratio {tsdnn.imbalance_ratio(train):.1f}")
    for k, local in enumerate(tsdnn.local_counts(train)):
        names = tsdnn.NODE_CLASSES[k]
        detail = ", ".join(f"{names[i]}={v}" for i, v in local.items())
        print(f"node{k + 1} ratio {tsdnn.imbalance_ratio(local):8.1f}  ({detail})")


if __name__ == "__main__":
    main()
