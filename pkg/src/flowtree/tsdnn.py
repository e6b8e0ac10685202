"""Three-stage tree of dense classifiers joined by concatenation bridges.

Stage 1 separates Benign from Malicious, stage 2 assigns one of five attack
behaviours to malicious flows, stage 3 names the ransomware family. A deeper
stage sees the raw features followed by the softmax outputs of every stage
above it::

    node1: x                      -> 2
    node2: [x, p1]                -> 5
    node3: [x, p1, p2]            -> 7

Gradients of the stage-2 and stage-3 losses flow back through those
probability vectors into the earlier stages.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

from . import labels as L
from .nn import (
    DenseNetwork,
    DimensionMismatch,
    Gradient,
    ShapeMismatch,
    apply_update,
    backprop,
    forward_batch,
    init_network,
    log_softmax,
    network_from_json,
    network_to_json,
)
from .qdbp import ClassPartition, QdbpWeighting, make_weighting, minority_coefficients

TSDNN_SCHEMA = 1
DEFAULT_HIDDEN = (256, 128, 64)
NODE_CLASSES = (L.NODE1_CLASSES, L.NODE2_CLASSES, L.NODE3_CLASSES)


class BadSpec(ValueError):
    pass


class EmptyClass(ValueError):
    pass


@dataclass
class NodalNetwork:
    name: str
    classes: tuple[str, ...]
    net: DenseNetwork

    def __post_init__(self):
        if self.net.output_dim != len(self.classes):
            raise BadSpec(f"{self.name}: {self.net.output_dim} outputs for {len(self.classes)} classes")

    @property
    def input_dim(self) -> int:
        return self.net.input_dim


@dataclass
class TsdnnModel:
    nodes: tuple[NodalNetwork, NodalNetwork, NodalNetwork]
    feature_dim: int
    seed: int | None = None

    def __post_init__(self):
        d = self.feature_dim
        want = (d, d + 2, d + 2 + 5)
        got = tuple(n.input_dim for n in self.nodes)
        if got != want:
            raise BadSpec(f"bridge dims {got} != {want}")

    def params(self) -> list[np.ndarray]:
        return [p for n in self.nodes for p in n.net.params()]

    def _split(self, arrays: Sequence[np.ndarray]) -> list[list[np.ndarray]]:
        out, i = [], 0
        for n in self.nodes:
            k = 2 * len(n.net.layers)
            out.append(list(arrays[i : i + k]))
            i += k
        if i != len(arrays):
            raise ShapeMismatch("parameter count does not match the model")
        return out

    def with_params(self, params: Sequence[np.ndarray]) -> "TsdnnModel":
        parts = self._split(params)
        nodes = tuple(
            NodalNetwork(n.name, n.classes, n.net.with_params(p)) for n, p in zip(self.nodes, parts)
        )
        return TsdnnModel(nodes, self.feature_dim, self.seed)


def build_tsdnn(feature_dim: int, hidden: Sequence[int] = DEFAULT_HIDDEN, seed: int = 0) -> TsdnnModel:
    if feature_dim <= 0 or any(h <= 0 for h in hidden):
        raise BadSpec(f"feature_dim={feature_dim}, hidden={tuple(hidden)}")
    seeds = np.random.SeedSequence(seed).spawn(3)
    in_dims = (feature_dim, feature_dim + 2, feature_dim + 7)
    nodes = tuple(
        NodalNetwork(f"node{k + 1}", NODE_CLASSES[k], init_network([d, *hidden, len(NODE_CLASSES[k])], s))
        for k, (d, s) in enumerate(zip(in_dims, seeds))
    )
    return TsdnnModel(nodes, feature_dim, seed)


def concat_bridge(v_in: np.ndarray, v_outs: Sequence[np.ndarray] = ()) -> np.ndarray:
    return np.concatenate([np.asarray(v_in, dtype=np.float64), *[np.asarray(v) for v in v_outs]], axis=-1)


# --------------------------------------------------------------------------
# inference


@dataclass
class RouteTrace:
    node1: np.ndarray
    node2: np.ndarray | None = None
    node3: np.ndarray | None = None
    decisions: list[int] = field(default_factory=list)
    label: int = L.BENIGN

    @property
    def label_name(self) -> str:
        return L.CLASS_NAMES[self.label]


def forward_route(model: TsdnnModel, x: np.ndarray, truth: int | str | None = None) -> RouteTrace:
    """Route one sample down the tree.

    With ``truth`` unset the route follows each stage's argmax; otherwise it
    follows the true label's super-classes and all stages it belongs to run.
    """
    x = np.asarray(x, dtype=np.float64)
    if x.shape != (model.feature_dim,):
        raise DimensionMismatch(f"expected {model.feature_dim} features, got {x.shape}")
    y = None if truth is None else L.label_index(truth)
    n1, n2, n3 = model.nodes

    p1 = forward_batch(n1.net, x[None]).probs[0]
    d1 = int(np.argmax(p1)) if y is None else L.node1_target(y)
    trace = RouteTrace(p1, decisions=[d1])
    if d1 == 0:
        trace.label = L.BENIGN
        return trace
    p2 = forward_batch(n2.net, concat_bridge(x, [p1])[None]).probs[0]
    d2 = int(np.argmax(p2)) if y is None else L.node2_target(y)
    trace.node2 = p2
    trace.decisions.append(d2)
    if d2 < 4:
        trace.label = L.assemble_label(d1, d2)
        return trace
    p3 = forward_batch(n3.net, concat_bridge(x, [p1, p2])[None]).probs[0]
    d3 = int(np.argmax(p3)) if y is None else L.node3_target(y)
    trace.node3 = p3
    trace.decisions.append(d3)
    trace.label = L.assemble_label(d1, d2, d3)
    return trace


@dataclass
class Prediction:
    labels: np.ndarray
    node1: np.ndarray  # (n, 2), always populated
    node2: np.ndarray  # (n, 5), NaN where not routed
    node3: np.ndarray  # (n, 7), NaN where not routed


def predict(model: TsdnnModel, X: np.ndarray) -> Prediction:
    """Batched predicted-mode routing; argmax ties go to the lowest index."""
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 2 or X.shape[1] != model.feature_dim:
        raise DimensionMismatch(f"expected (n, {model.feature_dim}) input")
    n = len(X)
    n1, n2, n3 = model.nodes
    P1 = forward_batch(n1.net, X).probs
    P2 = np.full((n, 5), np.nan)
    P3 = np.full((n, 7), np.nan)
    labels = np.zeros(n, dtype=np.int64)
    mal = np.flatnonzero(P1.argmax(axis=1) == 1)
    if mal.size:
        P2[mal] = forward_batch(n2.net, concat_bridge(X[mal], [P1[mal]])).probs
        d2 = P2[mal].argmax(axis=1)
        labels[mal] = np.where(d2 < 4, d2 + 1, -1)
        rans = mal[d2 == 4]
        if rans.size:
            P3[rans] = forward_batch(n3.net, concat_bridge(X[rans], [P1[rans], P2[rans]])).probs
            labels[rans] = P3[rans].argmax(axis=1) + 5
    return Prediction(labels, P1, P2, P3)


def predict_binary(model: TsdnnModel, X: np.ndarray) -> np.ndarray:
    """Stage-1 decision only: 0 = Benign, 1 = Malicious."""
    return forward_batch(model.nodes[0].net, np.asarray(X, dtype=np.float64)).probs.argmax(axis=1)


# --------------------------------------------------------------------------
# training


@dataclass
class Routing:
    """Ground-truth routing of a labelled batch through the three stages."""

    idx2: np.ndarray  # rows of X reaching node2 (malicious)
    idx3: np.ndarray  # rows of X reaching node3 (ransomware)
    pos3: np.ndarray  # position of each idx3 row inside idx2
    t1: np.ndarray
    t2: np.ndarray
    t3: np.ndarray

    @classmethod
    def from_labels(cls, y: np.ndarray) -> "Routing":
        y = np.asarray(y, dtype=np.int64)
        if y.size and (y.min() < 0 or y.max() >= L.NUM_CLASSES):
            raise ValueError("labels must be 12-class indices")
        idx2 = np.flatnonzero(y != L.BENIGN)
        idx3 = np.flatnonzero(y >= 5)
        pos3 = np.searchsorted(idx2, idx3)
        t1 = (y != L.BENIGN).astype(np.int64)
        t2 = np.minimum(y[idx2] - 1, 4)
        t3 = y[idx3] - 5
        return cls(idx2, idx3, pos3, t1, t2, t3)


def _softmax_vjp(P: np.ndarray, G: np.ndarray) -> np.ndarray:
    return P * (G - (G * P).sum(axis=1, keepdims=True))


def _ce_and_delta(cache, t: np.ndarray, w: np.ndarray) -> tuple[float, np.ndarray]:
    P = cache.probs
    ce = -log_softmax(cache.logits)[np.arange(len(t)), t]
    delta = P.copy()
    delta[np.arange(len(t)), t] -= 1.0
    return float(w @ ce), w[:, None] * delta


def composite_gradient(
    model: TsdnnModel,
    X: np.ndarray,
    y: np.ndarray,
    weights: tuple[np.ndarray, np.ndarray, np.ndarray] | None = None,
    detach_bridges: bool = False,
    routing: Routing | None = None,
) -> tuple[float, Gradient, tuple[float, float, float]]:
    """Weighted cross-entropy summed over stages, and its gradient.

    ``weights`` holds one per-sample weight vector per stage, aligned with the
    rows that reach that stage (all rows, malicious rows, ransomware rows).
    Unit weights when omitted. Returns (total loss, gradient, per-stage loss).
    """
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 2 or X.shape[1] != model.feature_dim:
        raise DimensionMismatch(f"expected (n, {model.feature_dim}) input")
    r = routing or Routing.from_labels(y)
    if weights is None:
        weights = (np.ones(len(X)), np.ones(len(r.idx2)), np.ones(len(r.idx3)))
    w1, w2, w3 = weights
    n1, n2, n3 = (n.net for n in model.nodes)
    D = model.feature_dim

    c1 = forward_batch(n1, X)
    P1 = c1.probs
    loss1, dZ1 = _ce_and_delta(c1, r.t1, w1)
    grads2 = [np.zeros_like(p) for p in n2.params()]
    grads3 = [np.zeros_like(p) for p in n3.params()]
    loss2 = loss3 = 0.0
    dP1 = np.zeros_like(P1)

    if r.idx2.size:
        c2 = forward_batch(n2, concat_bridge(X[r.idx2], [P1[r.idx2]]))
        P2 = c2.probs
        loss2, dZ2 = _ce_and_delta(c2, r.t2, w2)
        if r.idx3.size:
            c3 = forward_batch(n3, concat_bridge(X[r.idx3], [P1[r.idx3], P2[r.pos3]]))
            loss3, dZ3 = _ce_and_delta(c3, r.t3, w3)
            grads3, dX3 = backprop(n3, c3, dZ3)
            if not detach_bridges:
                dP2 = np.zeros_like(P2)
                np.add.at(dP2, r.pos3, dX3[:, D + 2 : D + 7])
                dZ2 = dZ2 + _softmax_vjp(P2, dP2)
                np.add.at(dP1, r.idx3, dX3[:, D : D + 2])
        grads2, dX2 = backprop(n2, c2, dZ2)
        if not detach_bridges:
            np.add.at(dP1, r.idx2, dX2[:, D : D + 2])
    if not detach_bridges:
        dZ1 = dZ1 + _softmax_vjp(P1, dP1)
    grads1, _ = backprop(n1, c1, dZ1)
    total = loss1 + loss2 + loss3
    return total, Gradient(grads1 + grads2 + grads3), (loss1, loss2, loss3)


def tsdnn_loss_and_grads(model: TsdnnModel, X: np.ndarray, y: np.ndarray) -> tuple[float, list[list[Gradient]]]:
    """Per-stage lists of per-sample gradients over all model parameters.

    Entry ``k`` holds, for each sample routed to stage ``k+1``, the gradient
    of that stage's cross-entropy on the sample; ``class_id`` is the
    sample's local class at that stage. Meant for small batches: costs one
    backward pass per (sample, stage).
    """
    r = Routing.from_labels(y)
    total, _, _ = composite_gradient(model, X, y, routing=r)
    sizes = (len(X), len(r.idx2), len(r.idx3))
    targets = (r.t1, r.t2, r.t3)
    out: list[list[Gradient]] = [[], [], []]
    for k in range(3):
        for j in range(sizes[k]):
            w = [np.zeros(s) for s in sizes]
            w[k][j] = 1.0
            _, g, _ = composite_gradient(model, X, y, weights=tuple(w), routing=r)
            g.class_id = int(targets[k][j])
            out[k].append(g)
    return total, out


def composite_loss(model: TsdnnModel, X: np.ndarray, y: np.ndarray) -> float:
    r = Routing.from_labels(y)
    n1, n2, n3 = (n.net for n in model.nodes)
    X = np.asarray(X, dtype=np.float64)
    c1 = forward_batch(n1, X)
    total = -log_softmax(c1.logits)[np.arange(len(X)), r.t1].sum()
    if r.idx2.size:
        c2 = forward_batch(n2, concat_bridge(X[r.idx2], [c1.probs[r.idx2]]))
        total += -log_softmax(c2.logits)[np.arange(len(r.idx2)), r.t2].sum()
        if r.idx3.size:
            c3 = forward_batch(n3, concat_bridge(X[r.idx3], [c1.probs[r.idx3], c2.probs[r.pos3]]))
            total += -log_softmax(c3.logits)[np.arange(len(r.idx3)), r.t3].sum()
    return float(total)


def local_labels(y: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    r = Routing.from_labels(y)
    return r.t1, r.t2, r.t3


def local_counts(class_counts: Mapping[int, int]) -> tuple[dict[int, int], dict[int, int], dict[int, int]]:
    """Per-stage local class cardinalities from 12-class counts."""
    c = {k: int(class_counts.get(k, 0)) for k in range(L.NUM_CLASSES)}
    node1 = {0: c[0], 1: sum(c[k] for k in range(1, 12))}
    node2 = {0: c[1], 1: c[2], 2: c[3], 3: c[4], 4: sum(c[k] for k in range(5, 12))}
    node3 = {k - 5: c[k] for k in range(5, 12)}
    return node1, node2, node3


def imbalance_ratio(counts: Mapping[int, int]) -> float:
    vals = [v for v in counts.values() if v > 0]
    return max(vals) / min(vals)


def node_coefficients_from_names(named: Mapping[str, float] | None) -> tuple[dict[int, float], ...] | None:
    """Spread one ``{class_name: c}`` map over the three stages' local classes."""
    if named is None:
        return None
    return tuple(
        {i: float(named.get(name, 1.0)) for i, name in enumerate(NODE_CLASSES[k])} for k in range(3)
    )


@dataclass
class TrainLog:
    node_losses: list[tuple[float, float, float]] = field(default_factory=list)
    local_ratios: tuple[float, float, float] = (0.0, 0.0, 0.0)
    global_ratio: float = 0.0
    coefficients: tuple[dict[int, float], ...] = ()


def node_weightings(
    y: np.ndarray,
    coefficients: Sequence[Mapping[int, float]] | None = None,
    allow_missing: bool = False,
) -> tuple[QdbpWeighting, QdbpWeighting, QdbpWeighting]:
    """QDBP weightings over each stage's local class partition.

    A local class without training samples raises EmptyClass unless
    ``allow_missing`` (zero-shot holdouts), in which case it is left out.
    """
    locs = local_labels(y)
    out = []
    for k, t in enumerate(locs):
        part = ClassPartition.from_labels(t)
        missing = [NODE_CLASSES[k][i] for i in range(len(NODE_CLASSES[k])) if i not in part.classes]
        if not part.classes or (missing and not allow_missing):
            raise EmptyClass(f"node{k + 1}: no training samples for {missing}")
        coeffs = coefficients[k] if coefficients is not None else minority_coefficients(part.counts())
        out.append(make_weighting(part, coeffs))
    return tuple(out)


def train(
    model: TsdnnModel,
    X: np.ndarray,
    y: np.ndarray,
    eta: float,
    epochs: int,
    coefficients: Sequence[Mapping[int, float]] | None = None,
    batch_size: int | None = None,
    seed: int = 0,
    normalize: bool = False,
    allow_missing: bool = False,
) -> tuple[TsdnnModel, TrainLog]:
    """End-to-end QDBP training with ground-truth routing.

    Each stage's loss terms are weighted by ``c/n`` over that stage's local
    classes, with ``n`` the cardinality in the whole training set even when
    mini-batching. With ``normalize`` each stage's step size is divided by
    the sum of its coefficients, so every stage's loss moves the parameters
    along a convex combination of per-sample gradients.
    """
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.int64)
    ws = node_weightings(y, coefficients, allow_missing)
    if normalize:
        ws = tuple(_rescaled(w, 1.0 / sum(w.coefficients.values())) for w in ws)
    r = Routing.from_labels(y)
    sample_w = (ws[0].sample_weights(r.t1), ws[1].sample_weights(r.t2), ws[2].sample_weights(r.t3))
    log = TrainLog(
        local_ratios=tuple(imbalance_ratio(w.counts) for w in ws),
        global_ratio=imbalance_ratio({c: int((y == c).sum()) for c in range(L.NUM_CLASSES)}),
        coefficients=tuple(w.coefficients for w in ws),
    )
    rng = np.random.default_rng(seed)
    n = len(y)
    for _ in range(epochs):
        if batch_size is None or batch_size >= n:
            batches = [np.arange(n)]
        else:
            order = rng.permutation(n)
            batches = [np.sort(order[i : i + batch_size]) for i in range(0, n, batch_size)]
        for b in batches:
            rb = Routing.from_labels(y[b])
            wb = (
                ws[0].sample_weights(rb.t1),
                ws[1].sample_weights(rb.t2),
                ws[2].sample_weights(rb.t3),
            ) if len(batches) > 1 else sample_w
            _, g, _ = composite_gradient(model, X[b], y[b], wb, routing=rb)
            model = apply_update(model, g, eta)
        log.node_losses.append(_mean_node_losses(model, X, r))
    return model, log


def _rescaled(w: QdbpWeighting, k: float) -> QdbpWeighting:
    return QdbpWeighting({c: k * v for c, v in w.coefficients.items()}, dict(w.counts))


def _mean_node_losses(model: TsdnnModel, X: np.ndarray, r: Routing) -> tuple[float, float, float]:
    sizes = (len(X), len(r.idx2), len(r.idx3))
    per_node = composite_gradient(model, X, None, routing=r)[2]
    return tuple(float(l / s) if s else 0.0 for l, s in zip(per_node, sizes))


# --------------------------------------------------------------------------
# checkpoints


def model_to_json(model: TsdnnModel, coefficients=None, normalizer: dict | None = None) -> dict:
    return {
        "schema_version": TSDNN_SCHEMA,
        "feature_dim": model.feature_dim,
        "seed": model.seed,
        "nodes": [
            {"name": n.name, "classes": list(n.classes), "network": network_to_json(n.net)}
            for n in model.nodes
        ],
        "bridges": {"node2": ["x", "node1"], "node3": ["x", "node1", "node2"]},
        "taxonomy": list(L.CLASS_NAMES),
        "coefficients": None if coefficients is None else [
            {NODE_CLASSES[k][i]: v for i, v in sorted(c.items())} for k, c in enumerate(coefficients)
        ],
        "normalizer": normalizer,
    }


def model_from_json(obj: dict) -> TsdnnModel:
    if obj["schema_version"] != TSDNN_SCHEMA:
        raise ValueError(f"unsupported TSDNN checkpoint schema {obj['schema_version']}")
    if tuple(obj["taxonomy"]) != L.CLASS_NAMES:
        raise BadSpec("checkpoint label taxonomy differs")
    nodes = tuple(
        NodalNetwork(n["name"], tuple(n["classes"]), network_from_json(n["network"])) for n in obj["nodes"]
    )
    return TsdnnModel(nodes, int(obj["feature_dim"]), obj.get("seed"))


def save_model(model: TsdnnModel, path, **kw) -> None:
    with open(path, "w") as fh:
        json.dump(model_to_json(model, **kw), fh)


def load_model(path) -> tuple[TsdnnModel, dict]:
    with open(path) as fh:
        obj = json.load(fh)
    return model_from_json(obj), obj
