"""Quantity-dependent backpropagation.

Each sample's gradient is scaled by ``c / n`` of its class, where ``n`` is
the class cardinality in the training split and ``c`` a per-class
coefficient, so every class contributes its mean gradient (times ``c``)
to the update no matter how many samples it has.
"""
from __future__ import annotations

import json
from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np

from .nn import Gradient, apply_update

MINORITY_COEFFICIENT = 1.2


class NonPositiveCoefficient(ValueError):
    pass


class UnknownClass(KeyError):
    pass


@dataclass(frozen=True)
class ClassPartition:
    classes: dict[int, tuple[int, ...]]

    def __post_init__(self):
        seen = [i for idx in self.classes.values() for i in idx]
        if len(seen) != len(set(seen)):
            raise ValueError("class index sets overlap")
        if any(len(v) == 0 for v in self.classes.values()):
            raise ValueError("empty classes are not kept in a partition")

    @classmethod
    def from_labels(cls, y: Sequence[int]) -> "ClassPartition":
        groups: dict[int, list[int]] = {}
        for i, c in enumerate(y):
            groups.setdefault(int(c), []).append(i)
        return cls({c: tuple(v) for c, v in sorted(groups.items())})

    @property
    def N(self) -> int:
        return sum(len(v) for v in self.classes.values())

    def counts(self) -> dict[int, int]:
        return {c: len(v) for c, v in self.classes.items()}


@dataclass(frozen=True)
class QdbpWeighting:
    coefficients: dict[int, float]
    counts: dict[int, int]

    def factor(self, class_id: int) -> float:
        try:
            return self.coefficients[class_id] / self.counts[class_id]
        except KeyError:
            raise UnknownClass(class_id) from None

    def vector(self) -> np.ndarray:
        """Per-class ``c/n`` in class order."""
        return np.array([self.factor(c) for c in sorted(self.counts)])

    def sample_weights(self, y: Sequence[int]) -> np.ndarray:
        return np.array([self.factor(int(c)) for c in y], dtype=np.float64)


def make_weighting(partition: ClassPartition, coefficients: Mapping[int, float] | None = None) -> QdbpWeighting:
    coefficients = dict(coefficients or {})
    coeffs = {}
    for c in partition.classes:
        v = float(coefficients.get(c, 1.0))
        if not v > 0:
            raise NonPositiveCoefficient(f"class {c}: coefficient {v}")
        coeffs[c] = v
    return QdbpWeighting(coeffs, partition.counts())


def minority_coefficients(counts: Mapping[int, int], value: float = MINORITY_COEFFICIENT) -> dict[int, float]:
    """1.0 everywhere except ``value`` on the smallest class (lowest id on ties)."""
    smallest = min(sorted(counts), key=lambda c: counts[c])
    return {c: (value if c == smallest else 1.0) for c in counts}


def qdbp_aggregate(grads: Sequence[Gradient], w: QdbpWeighting) -> Gradient:
    """Sum of per-sample gradients, each scaled by c/n of its class.

    Accumulates sample by sample in list order so the result is reproducible
    bit for bit.
    """
    if not grads:
        raise ValueError("need at least one gradient")
    total = [np.zeros_like(a) for a in grads[0].arrays]
    for g in grads:
        if g.class_id is None:
            raise UnknownClass("gradient without class_id")
        f = w.factor(g.class_id)
        for t, a in zip(total, g.arrays):
            t += f * a
    return Gradient(total)


def qdbp_step(model, grads: Sequence[Gradient], w: QdbpWeighting, eta: float):
    if eta <= 0:
        raise ValueError("eta must be positive")
    return apply_update(model, qdbp_aggregate(grads, w), eta)


def load_coefficients(path, class_names: Sequence[str]) -> dict[int, float]:
    """Read ``{class_name: coefficient}``; classes not listed get 1.0."""
    with open(path) as fh:
        raw = json.load(fh)
    out = {i: 1.0 for i in range(len(class_names))}
    for name, v in raw.items():
        if name not in class_names:
            raise UnknownClass(name)
        if not float(v) > 0:
            raise NonPositiveCoefficient(f"{name}: {v}")
        out[class_names.index(name)] = float(v)
    return out


def save_coefficients(path, coeffs: Mapping[int, float], class_names: Sequence[str]) -> None:
    with open(path, "w") as fh:
        json.dump({class_names[c]: v for c, v in sorted(coeffs.items())}, fh, indent=2)
