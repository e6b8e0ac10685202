"""Experiment drivers: method comparison, partial-flow detection, zero-shot
holdout. All outputs are flat JSON/CSV files and fully determined by the
config.

Step-size convention: every method moves each loss term along a convex
combination of per-sample gradients scaled by ``eta``. Vanilla training
therefore steps ``eta / N`` along the plain gradient sum and QDBP steps
``eta / sum(c)`` along the c/n-weighted sum, so methods differ only in how
the step is distributed over classes.
"""
from __future__ import annotations

import csv
import json
import os
from dataclasses import asdict, dataclass, field

import numpy as np

from . import __version__
from . import datagen, features, metrics, nn, qdbp, tsdnn
from . import labels as L
from .flowparse import (
    DEFAULT_IDLE_TIMEOUT,
    FlowRecord,
    label_flows,
    load_capture,
    read_label_file,
    truncate_flow,
)

METHODS = ("vanilla-dnn", "dnn-oversample", "dnn-undersample", "dnn-incremental", "dnn-qdbp", "tsdnn-qdbp")
DEFAULT_FRACTIONS = (0.05, 0.1, 0.25, 0.5, 1.0)


class HoldoutUnknown(ValueError):
    pass


@dataclass
class ExperimentConfig:
    seed: int = 0
    scale: float = datagen.DEFAULT_SCALE
    test_fraction: float = 0.5
    eta: float = 0.1
    epochs: int = 50
    hidden: tuple[int, ...] = tsdnn.DEFAULT_HIDDEN
    batch_size: int | None = None
    coefficients: dict[str, float] | None = None  # None: 1.2 on each stage's smallest class
    methods: tuple[str, ...] = METHODS
    oversample_target: int | None = None  # None: round(10000 * scale)
    undersample_target: int | None = None  # None: smallest training class
    incremental_stages: int = 4
    fractions: tuple[float, ...] = DEFAULT_FRACTIONS
    holdout: tuple[str, ...] = ("Locky",)
    data_path: str | None = None  # pcap or flow JSONL instead of synthetic data
    labels_path: str | None = None  # flow_key,label CSV for data_path
    default_label: str | None = None
    idle_timeout: float = DEFAULT_IDLE_TIMEOUT

    def __post_init__(self):
        self.hidden = tuple(self.hidden)
        self.methods = tuple(self.methods)
        self.fractions = tuple(float(f) for f in self.fractions)
        self.holdout = tuple(self.holdout)
        bad = [m for m in self.methods if m not in METHODS]
        if bad:
            raise ValueError(f"unknown methods {bad}; choose from {METHODS}")
        if self.eta <= 0 or self.epochs <= 0:
            raise ValueError("eta and epochs must be positive")
        if not 0 < self.test_fraction < 1:
            raise ValueError("test_fraction must lie in (0, 1)")
        if self.idle_timeout <= 0:
            raise ValueError("idle_timeout must be positive")
        if self.incremental_stages < 2:
            raise ValueError("incremental_stages must be >= 2")

    def to_json(self) -> dict:
        d = asdict(self)
        return {k: (list(v) if isinstance(v, tuple) else v) for k, v in d.items()}


@dataclass
class PreparedData:
    train_flows: list[FlowRecord]
    test_flows: list[FlowRecord]
    normalizer: features.MinMaxNormalizer
    X_train: np.ndarray
    y_train: np.ndarray
    X_test: np.ndarray
    y_test: np.ndarray
    extra: dict = field(default_factory=dict)


def load_flows(cfg: ExperimentConfig) -> datagen.Dataset:
    if cfg.data_path is None:
        return datagen.generate_dataset(cfg.scale, cfg.seed)
    flows, _ = load_capture(cfg.data_path, cfg.idle_timeout)
    mapping = read_label_file(cfg.labels_path) if cfg.labels_path else None
    flows = label_flows(flows, mapping, cfg.default_label)
    return datagen.Dataset(flows, np.array([f.label for f in flows], dtype=np.int64))


def prepare(cfg: ExperimentConfig, dataset: datagen.Dataset | None = None) -> PreparedData:
    ds = dataset if dataset is not None else load_flows(cfg)
    train, test = datagen.split(ds, cfg.test_fraction, cfg.seed)
    Xtr_raw = features.featurize_many(train.samples)
    Xte_raw = features.featurize_many(test.samples)
    norm = features.MinMaxNormalizer.fit(Xtr_raw)
    return PreparedData(
        list(train.samples), list(test.samples), norm,
        norm.transform(Xtr_raw), train.labels, norm.transform(Xte_raw), test.labels,
    )


# --------------------------------------------------------------------------
# methods


def baseline_dims(cfg: ExperimentConfig, k: int = L.NUM_CLASSES) -> list[int]:
    return [features.FEATURE_DIM, *cfg.hidden, k]


def train_vanilla(X, y, cfg: ExperimentConfig, net=None, epochs: int | None = None) -> nn.DenseNetwork:
    net = net if net is not None else nn.init_network(baseline_dims(cfg), cfg.seed)
    tc = nn.TrainConfig(eta=cfg.eta / len(y), epochs=epochs or cfg.epochs, seed=cfg.seed, batch_size=cfg.batch_size)
    if cfg.batch_size is not None:
        tc.eta = cfg.eta / min(cfg.batch_size, len(y))
    net, _ = nn.train_weighted(net, X, y, tc)
    return net


def flat_coefficients(cfg: ExperimentConfig, y: np.ndarray) -> dict[int, float]:
    part = qdbp.ClassPartition.from_labels(y)
    if cfg.coefficients is None:
        return qdbp.minority_coefficients(part.counts())
    return {c: float(cfg.coefficients.get(L.CLASS_NAMES[c], 1.0)) for c in part.classes}


def train_dnn_qdbp(X, y, cfg: ExperimentConfig) -> nn.DenseNetwork:
    part = qdbp.ClassPartition.from_labels(y)
    w = qdbp.make_weighting(part, flat_coefficients(cfg, y))
    net = nn.init_network(baseline_dims(cfg), cfg.seed)
    tc = nn.TrainConfig(eta=cfg.eta / sum(w.coefficients.values()), epochs=cfg.epochs, seed=cfg.seed,
                        batch_size=cfg.batch_size)
    net, _ = nn.train_weighted(net, X, y, tc, w.sample_weights(y))
    return net


def train_tsdnn(X, y, cfg: ExperimentConfig, allow_missing: bool = False) -> tuple[tsdnn.TsdnnModel, tsdnn.TrainLog]:
    model = tsdnn.build_tsdnn(X.shape[1], cfg.hidden, cfg.seed)
    return tsdnn.train(
        model, X, y, cfg.eta, cfg.epochs,
        coefficients=tsdnn.node_coefficients_from_names(cfg.coefficients),
        batch_size=cfg.batch_size, seed=cfg.seed, normalize=True, allow_missing=allow_missing,
    )


def oversample_target(cfg: ExperimentConfig) -> int:
    return cfg.oversample_target if cfg.oversample_target is not None else int(round(10_000 * cfg.scale))


def fit_method(method: str, data: PreparedData, cfg: ExperimentConfig):
    """Train one method on the training split; return the model and notes."""
    X, y = data.X_train, data.y_train
    info: dict = {}
    if method == "vanilla-dnn":
        return train_vanilla(X, y, cfg), info
    if method == "dnn-oversample":
        t = oversample_target(cfg)
        idx = datagen.oversample_indices(y, t, cfg.seed)
        info = {"per_class_target": t, "train_size": int(len(idx))}
        return train_vanilla(X[idx], y[idx], cfg), info
    if method == "dnn-undersample":
        t = cfg.undersample_target or min(np.bincount(y, minlength=L.NUM_CLASSES)[np.unique(y)])
        idx = datagen.undersample_indices(y, int(t), cfg.seed)
        info = {"per_class_target": int(t), "train_size": int(len(idx))}
        return train_vanilla(X[idx], y[idx], cfg), info
    if method == "dnn-incremental":
        stages = datagen.incremental_indices(y, cfg.incremental_stages, cfg.seed)
        per_stage = max(1, -(-cfg.epochs // len(stages)))
        info = {"stage_sizes": [int(len(s)) for s in stages], "epochs_per_stage": per_stage}
        net = None
        for s in stages:
            net = train_vanilla(X[s], y[s], cfg, net=net, epochs=per_stage)
        return net, info
    if method == "dnn-qdbp":
        return train_dnn_qdbp(X, y, cfg), info
    if method == "tsdnn-qdbp":
        model, log = train_tsdnn(X, y, cfg)
        info = {
            "local_ratios": list(log.local_ratios),
            "global_ratio": log.global_ratio,
            "final_node_losses": list(log.node_losses[-1]),
        }
        return model, info
    raise ValueError(f"unknown method {method}")


def predict_labels(model, X: np.ndarray) -> np.ndarray:
    if isinstance(model, tsdnn.TsdnnModel):
        return tsdnn.predict(model, X).labels
    return nn.predict(model, X)


def run_method(method: str, data: PreparedData, cfg: ExperimentConfig) -> tuple[np.ndarray, dict]:
    """Train one method and return its test-split predictions and notes."""
    model, info = fit_method(method, data, cfg)
    return predict_labels(model, data.X_test), info


def evaluate(model, data: PreparedData, cfg: ExperimentConfig, name: str, **extra) -> dict:
    cm = metrics.confusion(predict_labels(model, data.X_test), data.y_test, L.NUM_CLASSES)
    return metrics.report(cm, L.CLASS_NAMES, name, cfg.seed, **_envelope(cfg, **extra))


def save_checkpoint(model, path, cfg: ExperimentConfig, data: PreparedData, method: str) -> None:
    norm = data.normalizer.to_json()
    if isinstance(model, tsdnn.TsdnnModel):
        obj = tsdnn.model_to_json(model, normalizer=norm)
    else:
        obj = nn.network_to_json(model, normalizer=norm, seed=cfg.seed, epoch=cfg.epochs)
    obj["method"] = method
    with open(path, "w") as fh:
        json.dump(obj, fh, sort_keys=True, separators=(",", ":"))


def load_checkpoint(path):
    """Return (model, method, normalizer) from a file written by ``save_checkpoint``."""
    with open(path) as fh:
        obj = json.load(fh)
    method = obj.get("method", "tsdnn-qdbp" if "nodes" in obj else "vanilla-dnn")
    model = tsdnn.model_from_json(obj) if "nodes" in obj else nn.network_from_json(obj)
    norm = obj.get("normalizer")
    return model, method, None if norm is None else features.MinMaxNormalizer.from_json(norm)


# --------------------------------------------------------------------------
# output helpers


def _dump_json(obj, path) -> None:
    with open(path, "w") as fh:
        json.dump(obj, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _envelope(cfg: ExperimentConfig, **kw) -> dict:
    return {"artifact_version": __version__, "config": cfg.to_json(), **kw}


def compare(cfg: ExperimentConfig, out_dir: str | None = None, data: PreparedData | None = None) -> dict[str, dict]:
    """Train each configured method on one split; write per-method reports
    and a comparison table."""
    data = data or prepare(cfg)
    reports = {}
    for m in cfg.methods:
        model, info = fit_method(m, data, cfg)
        reports[m] = evaluate(model, data, cfg, m, method_info=info)
    if out_dir is not None:
        os.makedirs(out_dir, exist_ok=True)
        for m, rep in reports.items():
            _dump_json(rep, os.path.join(out_dir, f"report_{m}.json"))
            metrics.write_matrix_csv(os.path.join(out_dir, f"matrix_{m}.csv"), np.array(rep["matrix"]), L.CLASS_NAMES)
        with open(os.path.join(out_dir, "comparison.csv"), "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["method", "accuracy", "precision"])
            for m, rep in reports.items():
                w.writerow([m, f"{rep['accuracy']:.6f}", f"{rep['avg_precision']:.6f}"])
    return reports


def binary_accuracy(preds: np.ndarray, y: np.ndarray) -> float:
    truth = (np.asarray(y) != L.BENIGN).astype(np.int64)
    return metrics.accuracy(metrics.confusion(preds, truth, 2))


def partial_flow(
    cfg: ExperimentConfig,
    out_dir: str | None = None,
    data: PreparedData | None = None,
    model: tsdnn.TsdnnModel | None = None,
) -> list[dict]:
    """Stage-1 benign/malicious accuracy on test flows cut to a prefix of their duration.

    One model, trained on whole flows; only the test inputs are truncated.
    """
    data = data or prepare(cfg)
    if model is None:
        model, _ = train_tsdnn(data.X_train, data.y_train, cfg)
    rows = []
    for frac in cfg.fractions:
        flows = [truncate_flow(f, frac) for f in data.test_flows]
        X = data.normalizer.transform(features.featurize_many(flows))
        preds = tsdnn.predict_binary(model, X)
        mal = data.y_test != L.BENIGN
        rows.append({
            "fraction": frac,
            "accuracy": binary_accuracy(preds, data.y_test),
            "detection_rate": float(preds[mal].mean()) if mal.any() else 0.0,
            "false_positive_rate": float(preds[~mal].mean()) if (~mal).any() else 0.0,
            "mean_packets": float(np.mean([len(f.packets) for f in flows])),
        })
    if out_dir is not None:
        os.makedirs(out_dir, exist_ok=True)
        with open(os.path.join(out_dir, "partial_flow.csv"), "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["fraction", "accuracy"])
            for r in rows:
                w.writerow([r["fraction"], f"{r['accuracy']:.6f}"])
        _dump_json(_envelope(cfg, experiment="partial-flow", seed=cfg.seed, rows=rows),
                   os.path.join(out_dir, "partial_flow.json"))
    return rows


def zero_shot(
    cfg: ExperimentConfig,
    out_dir: str | None = None,
    data: PreparedData | None = None,
    full_model: tsdnn.TsdnnModel | None = None,
) -> dict:
    """Train without the held-out families and check whether stage 1 still
    flags their test flows as malicious."""
    unknown = [h for h in cfg.holdout if h not in L.CLASS_NAMES or h == "Benign"]
    if unknown or not cfg.holdout:
        raise HoldoutUnknown(f"holdout must name malicious classes, got {list(cfg.holdout)}")
    data = data or prepare(cfg)
    held = np.array([L.CLASS_INDEX[h] for h in cfg.holdout])
    keep = ~np.isin(data.y_train, held)
    model, log = train_tsdnn(data.X_train[keep], data.y_train[keep], cfg, allow_missing=True)
    if full_model is None:
        full_model, _ = train_tsdnn(data.X_train, data.y_train, cfg)

    benign = data.y_test == L.BENIGN
    per_family = {}
    for h, c in zip(cfg.holdout, held):
        rows = data.y_test == c
        per_family[h] = {
            "test_flows": int(rows.sum()),
            "flagged_malicious": float(tsdnn.predict_binary(model, data.X_test[rows]).mean()),
        }
    fpr_holdout = float(tsdnn.predict_binary(model, data.X_test[benign]).mean())
    fpr_full = float(tsdnn.predict_binary(full_model, data.X_test[benign]).mean())
    result = _envelope(
        cfg,
        experiment="zero-shot",
        seed=cfg.seed,
        holdout=list(cfg.holdout),
        per_family=per_family,
        benign_fpr_holdout_model=fpr_holdout,
        benign_fpr_full_model=fpr_full,
        benign_fpr_change=fpr_holdout - fpr_full,
        trained_classes=sorted(L.CLASS_NAMES[c] for c in np.unique(data.y_train[keep])),
    )
    if out_dir is not None:
        os.makedirs(out_dir, exist_ok=True)
        _dump_json(result, os.path.join(out_dir, "zero_shot.json"))
    return result
