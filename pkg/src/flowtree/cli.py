"""Command-line entry point: ``flowtree <subcommand> ...``.

Exit status is 0 on success, 2 for configuration errors and 3 for data errors.
"""
from __future__ import annotations

import argparse
import json
import os
import sys
from collections import Counter

from . import datagen, experiments, features, qdbp
from . import labels as L
from .flowparse import (
    DEFAULT_IDLE_TIMEOUT,
    InvalidFraction,
    MalformedFrame,
    PcapError,
    UnlabeledFlow,
    flows_to_raw,
    label_flows,
    load_capture,
    read_label_file,
    write_flows_jsonl,
    write_label_file,
    write_pcap,
)

EXIT_OK, EXIT_CONFIG, EXIT_DATA = 0, 2, 3

DATA_ERRORS = (
    OSError, PcapError, MalformedFrame, UnlabeledFlow, json.JSONDecodeError,
    datagen.ClassTooSmall, datagen.TargetTooLarge, experiments.tsdnn.EmptyClass,
)
CONFIG_ERRORS = (
    ValueError, KeyError, qdbp.NonPositiveCoefficient, qdbp.UnknownClass,
    datagen.ScaleTooSmall, experiments.HoldoutUnknown, InvalidFraction,
)


class ConfigError(ValueError):
    pass


def _floats(text: str) -> tuple[float, ...]:
    try:
        return tuple(float(v) for v in text.split(",") if v.strip())
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from None


def _names(text: str) -> tuple[str, ...]:
    return tuple(v.strip() for v in text.split(",") if v.strip())


def _ints(text: str) -> tuple[int, ...]:
    try:
        return tuple(int(v) for v in text.split(",") if v.strip())
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from None


def _experiment_args(p: argparse.ArgumentParser) -> None:
    d = experiments.ExperimentConfig()
    p.add_argument("--seed", type=int, default=d.seed)
    p.add_argument("--scale", type=float, default=d.scale, help="fraction of the reference class counts")
    p.add_argument("--test-fraction", type=float, default=d.test_fraction)
    p.add_argument("--eta", type=float, default=d.eta)
    p.add_argument("--epochs", type=int, default=d.epochs)
    p.add_argument("--hidden", type=_ints, default=d.hidden, help="hidden widths, e.g. 256,128,64")
    p.add_argument("--batch-size", type=int, default=None)
    p.add_argument("--coeff-file", help="JSON {class_name: coefficient}")
    p.add_argument("--data", help="pcap or flow JSONL to use instead of synthetic flows")
    p.add_argument("--labels", help="flow_key,label CSV for --data")
    p.add_argument("--default-label", help="label for flows missing from --labels")
    p.add_argument("--idle-timeout", type=float, default=DEFAULT_IDLE_TIMEOUT, help="seconds")
    p.add_argument("--out-dir", default="runs")


def _config(args, **kw) -> experiments.ExperimentConfig:
    coeffs = None
    if args.coeff_file:
        loaded = qdbp.load_coefficients(args.coeff_file, L.CLASS_NAMES)
        coeffs = {L.CLASS_NAMES[c]: v for c, v in loaded.items() if v != 1.0}
    if args.default_label is not None and args.default_label not in L.CLASS_NAMES:
        raise ConfigError(f"unknown label {args.default_label!r}")
    return experiments.ExperimentConfig(
        seed=args.seed,
        scale=args.scale,
        test_fraction=args.test_fraction,
        eta=args.eta,
        epochs=args.epochs,
        hidden=args.hidden,
        batch_size=args.batch_size,
        coefficients=coeffs,
        data_path=args.data,
        labels_path=args.labels,
        default_label=args.default_label,
        idle_timeout=args.idle_timeout,
        **kw,
    )


def _summary(labels) -> str:
    c = Counter(L.CLASS_NAMES[y] for y in labels)
    return ", ".join(f"{n}={c[n]}" for n in L.CLASS_NAMES if c[n])


# --------------------------------------------------------------------------
# subcommands


def cmd_featurize(args) -> None:
    flows, stats = load_capture(args.input, args.idle_timeout)
    mapping = read_label_file(args.labels) if args.labels else None
    flows = label_flows(flows, mapping, args.default_label)
    features.write_feature_csv(args.out, features.featurize_many(flows), [f.label for f in flows])
    print(f"{len(flows)} flows ({stats.decoded} packets, {stats.fragments_dropped} fragments dropped): "
          f"{_summary(f.label for f in flows) or 'none'}")


def cmd_gen_data(args) -> None:
    ds = datagen.generate_dataset(args.scale, args.seed)
    write_flows_jsonl(ds.samples, args.out)
    if args.pcap:
        with open(args.pcap, "wb") as fh:
            fh.write(write_pcap(flows_to_raw(ds.samples)))
        write_label_file(os.path.splitext(args.pcap)[0] + "_labels.csv", ds.samples)
    print(f"{len(ds)} flows: {_summary(ds.labels)}")


def cmd_train(args) -> None:
    cfg = _config(args, methods=(args.method,))
    data = experiments.prepare(cfg)
    model, info = experiments.fit_method(args.method, data, cfg)
    os.makedirs(args.out_dir, exist_ok=True)
    path = os.path.join(args.out_dir, f"model_{args.method}.json")
    experiments.save_checkpoint(model, path, cfg, data, args.method)
    experiments._dump_json(experiments._envelope(cfg, method=args.method, method_info=info),
                           os.path.join(args.out_dir, f"train_{args.method}.json"))
    print(f"saved {path}")


def cmd_eval(args) -> None:
    model, method, norm = experiments.load_checkpoint(args.model)
    cfg = _config(args, methods=(method,))
    data = experiments.prepare(cfg)
    if norm is not None:
        # use the checkpoint's scaling, not a refit
        data.X_test = norm.transform(features.featurize_many(data.test_flows))
    rep = experiments.evaluate(model, data, cfg, method, checkpoint=os.path.basename(args.model))
    os.makedirs(args.out_dir, exist_ok=True)
    experiments._dump_json(rep, os.path.join(args.out_dir, f"eval_{method}.json"))
    print(f"{method}: accuracy {rep['accuracy']:.4f}, avg precision {rep['avg_precision']:.4f}")


def cmd_compare(args) -> None:
    cfg = _config(args, methods=args.methods)
    reports = experiments.compare(cfg, args.out_dir)
    for m, r in reports.items():
        print(f"{m:18s} accuracy {r['accuracy']:.4f}  avg precision {r['avg_precision']:.4f}")


def cmd_partial_flow(args) -> None:
    cfg = _config(args, fractions=args.fractions)
    for r in experiments.partial_flow(cfg, args.out_dir):
        print(f"fraction {r['fraction']:.2f}: binary accuracy {r['accuracy']:.4f}")


def cmd_zero_shot(args) -> None:
    cfg = _config(args, holdout=args.holdout)
    res = experiments.zero_shot(cfg, args.out_dir)
    for name, r in res["per_family"].items():
        print(f"{name}: {r['flagged_malicious']:.3f} of {r['test_flows']} test flows flagged malicious")
    print(f"benign false-positive change: {res['benign_fpr_change']:+.4f}")


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="flowtree", description=__doc__.splitlines()[0])
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("featurize", help="pcap or flow JSONL -> feature CSV")
    p.add_argument("input")
    p.add_argument("--labels", help="flow_key,label CSV")
    p.add_argument("--default-label")
    p.add_argument("--idle-timeout", type=float, default=DEFAULT_IDLE_TIMEOUT)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_featurize)

    p = sub.add_parser("gen-data", help="write a synthetic labelled flow set")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--scale", type=float, default=datagen.DEFAULT_SCALE)
    p.add_argument("--out", required=True, help="flow JSONL path")
    p.add_argument("--pcap", help="also write the flows as a pcap plus <name>_labels.csv")
    p.set_defaults(func=cmd_gen_data)

    p = sub.add_parser("train", help="train one method and save a checkpoint")
    _experiment_args(p)
    p.add_argument("--method", choices=experiments.METHODS, default="tsdnn-qdbp")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="score a checkpoint on the test split")
    _experiment_args(p)
    p.add_argument("--model", required=True)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("compare", help="train every method on one split and compare")
    _experiment_args(p)
    p.add_argument("--methods", type=_names, default=experiments.METHODS)
    p.set_defaults(func=cmd_compare)

    p = sub.add_parser("partial-flow", help="stage-1 accuracy on time-truncated test flows")
    _experiment_args(p)
    p.add_argument("--fractions", type=_floats, default=experiments.DEFAULT_FRACTIONS)
    p.set_defaults(func=cmd_partial_flow)

    p = sub.add_parser("zero-shot", help="hold malicious families out of training")
    _experiment_args(p)
    p.add_argument("--holdout", type=_names, default=("Locky",))
    p.set_defaults(func=cmd_zero_shot)
    return ap


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        args.func(args)
    except DATA_ERRORS as e:
        print(f"data error: {e}", file=sys.stderr)
        return EXIT_DATA
    except CONFIG_ERRORS as e:
        print(f"config error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
