"""Fixed-width numeric encoding of a flow.

Layout (schema 1, 533 columns)::

    [0:21)    connection record + packet-size + inter-arrival statistics
    [21:277)  payload byte-value histogram
    [277:533) 16x16 packet-length Markov transition matrix, row-major
"""
from __future__ import annotations

import csv
import json
from dataclasses import dataclass

import numpy as np

from .flowparse import FORWARD, MAX_PAYLOAD, FlowRecord, Protocol
from .labels import CLASS_NAMES

SCHEMA_VERSION = 1
N_CONN = 21
N_HIST = 256
N_STATES = 16
BIN_WIDTH = 94  # 1500 / 16, floored
FEATURE_DIM = N_CONN + N_HIST + N_STATES * N_STATES
HIST_SLICE = slice(N_CONN, N_CONN + N_HIST)
MARKOV_SLICE = slice(N_CONN + N_HIST, FEATURE_DIM)
DEFAULT_HIST_CAP = 16384

CONN_NAMES = (
    "proto_tcp", "proto_udp",
    "src_port_wellknown", "src_port_registered", "src_port_ephemeral",
    "dst_port_wellknown", "dst_port_registered", "dst_port_ephemeral",
    "dst_port_norm",
    "log_pkt_count", "log_payload_bytes", "duration_s", "fwd_fraction",
    "len_mean", "len_std", "len_min", "len_max",
    "iat_mean", "iat_std", "iat_min", "iat_max",
)
FEATURE_NAMES: tuple[str, ...] = (
    CONN_NAMES
    + tuple(f"byte_{b:02x}" for b in range(N_HIST))
    + tuple(f"mk_{i:02d}_{j:02d}" for i in range(N_STATES) for j in range(N_STATES))
)
assert len(FEATURE_NAMES) == FEATURE_DIM


def port_class(port: int) -> int:
    if port < 1024:
        return 0
    if port < 49152:
        return 1
    return 2


def interarrival_features(flow: FlowRecord) -> np.ndarray:
    if len(flow.packets) < 2:
        return np.zeros(4)
    ts = np.array([p.ts_micros for p in flow.packets], dtype=np.float64)
    gaps = np.log1p(np.diff(ts))
    return np.array([gaps.mean(), gaps.std(), gaps.min(), gaps.max()])


def connection_features(flow: FlowRecord) -> np.ndarray:
    first = flow.packets[0]
    lens = np.array([p.payload_len for p in flow.packets], dtype=np.float64) / MAX_PAYLOAD
    fwd = np.array(flow.direction_flags) == FORWARD
    v = np.zeros(N_CONN)
    v[0 if first.protocol == Protocol.TCP else 1] = 1.0
    v[2 + port_class(first.src_port)] = 1.0
    v[5 + port_class(first.dst_port)] = 1.0
    v[8] = first.dst_port / 65535
    v[9] = np.log1p(len(flow.packets))
    v[10] = np.log1p(sum(p.payload_len for p in flow.packets))
    v[11] = flow.duration / 1e6
    v[12] = fwd.mean()
    v[13:17] = lens.mean(), lens.std(), lens.min(), lens.max()
    v[17:21] = interarrival_features(flow)
    return v


def payload_histogram(flow: FlowRecord, cap_bytes: int = DEFAULT_HIST_CAP) -> np.ndarray:
    buf = b"".join(p.payload for p in flow.packets)[:cap_bytes]
    if not buf:
        return np.zeros(N_HIST)
    counts = np.bincount(np.frombuffer(buf, dtype=np.uint8), minlength=N_HIST)
    return counts / counts.sum()


def length_state(payload_len: int) -> int:
    return min(min(payload_len, MAX_PAYLOAD) // BIN_WIDTH, N_STATES - 1)


def markov_matrix(flow: FlowRecord) -> np.ndarray:
    """Row-stochastic transition matrix between consecutive packet-length bins.

    Rows of states never left are uniform.
    """
    states = [length_state(p.payload_len) for p in flow.packets]
    counts = np.zeros((N_STATES, N_STATES))
    if len(states) >= 2:
        np.add.at(counts, (states[:-1], states[1:]), 1.0)
    totals = counts.sum(axis=1, keepdims=True)
    out = np.full((N_STATES, N_STATES), 1.0 / N_STATES)
    seen = totals[:, 0] > 0
    out[seen] = counts[seen] / totals[seen]
    return out


def featurize(flow: FlowRecord) -> np.ndarray:
    return np.concatenate(
        [connection_features(flow), payload_histogram(flow), markov_matrix(flow).ravel()]
    )


def featurize_many(flows) -> np.ndarray:
    if not flows:
        return np.zeros((0, FEATURE_DIM))
    return np.stack([featurize(f) for f in flows])


@dataclass
class MinMaxNormalizer:
    """Per-column min-max scaling fitted on training rows; output clipped to [0, 1]."""

    mins: np.ndarray
    maxs: np.ndarray
    schema_version: int = SCHEMA_VERSION

    @classmethod
    def fit(cls, X: np.ndarray) -> "MinMaxNormalizer":
        return cls(X.min(axis=0).astype(np.float64), X.max(axis=0).astype(np.float64))

    def transform(self, X: np.ndarray) -> np.ndarray:
        span = self.maxs - self.mins
        safe = np.where(span > 0, span, 1.0)
        Z = (X - self.mins) / safe
        Z = np.where(span > 0, Z, 0.0)
        return np.clip(Z, 0.0, 1.0)

    def to_json(self) -> dict:
        return {
            "schema_version": self.schema_version,
            "mins": self.mins.tolist(),
            "maxs": self.maxs.tolist(),
        }

    @classmethod
    def from_json(cls, obj: dict) -> "MinMaxNormalizer":
        if obj["schema_version"] != SCHEMA_VERSION:
            raise ValueError(f"normalizer schema {obj['schema_version']} != {SCHEMA_VERSION}")
        return cls(np.array(obj["mins"], dtype=np.float64), np.array(obj["maxs"], dtype=np.float64))

    def save(self, path) -> None:
        with open(path, "w") as fh:
            json.dump(self.to_json(), fh)

    @classmethod
    def load(cls, path) -> "MinMaxNormalizer":
        with open(path) as fh:
            return cls.from_json(json.load(fh))


def write_feature_csv(path, X: np.ndarray, labels) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(list(FEATURE_NAMES) + ["label"])
        for row, y in zip(X, labels):
            w.writerow([repr(float(v)) for v in row] + [CLASS_NAMES[y] if y is not None else ""])


def read_feature_csv(path) -> tuple[np.ndarray, np.ndarray]:
    with open(path, newline="") as fh:
        r = csv.reader(fh)
        header = next(r)
        if tuple(header[:-1]) != FEATURE_NAMES or header[-1] != "label":
            raise ValueError(f"{path}: not a schema-{SCHEMA_VERSION} feature file")
        rows, ys = [], []
        for line in r:
            rows.append([float(v) for v in line[:-1]])
            ys.append(CLASS_NAMES.index(line[-1]))
    X = np.array(rows, dtype=np.float64).reshape(-1, FEATURE_DIM)
    return X, np.array(ys, dtype=np.int64)
