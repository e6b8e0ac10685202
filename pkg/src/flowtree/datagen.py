"""Seeded synthetic flows with the class-imbalance profile of the reference
corpus, plus the resampling baselines (over/undersampling, incremental
schedules) and stratified splitting.

Each class has its own generative model over all three feature families:
destination ports, payload byte values (with a class-specific opening
message on the first packet), a packet-length Markov chain and log-normal
inter-arrival times. Malicious classes share a common component so that a
benign/malicious boundary exists beyond the per-family signatures.
"""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass
from typing import Sequence

import numpy as np

from . import labels as L
from .features import BIN_WIDTH, N_STATES
from .flowparse import FlowRecord, ParsedPacket, Protocol, canonical_key

PROFILE_VERSION = 1
PROFILE_SEED = 20170501
MIN_CLASS_COUNT = 10
DEFAULT_SCALE = 0.04
BASE_TS = 1_493_596_800_000_000  # 2017-05-01T00:00:00Z in microseconds


class ScaleTooSmall(ValueError):
    pass


class TargetTooLarge(ValueError):
    pass


class ClassTooSmall(ValueError):
    pass


@dataclass
class ClassProfile:
    label: str
    count: int
    ports: list[tuple[int, str, float]]  # (dst port, "TCP"/"UDP", weight)
    byte_dist: list[float]  # 256 probabilities
    opening: str  # hex, prefix of the first payload
    length_init: list[float]  # 16
    length_chain: list[list[float]]  # 16 x 16 row-stochastic
    iat_mu: float  # log microseconds
    iat_sigma: float
    pkts_range: tuple[int, int]
    fwd_prob: float
    server_net: int  # first two octets of server addresses, packed as a*256+b
    opening_prob: float = 1.0

    def __post_init__(self):
        if self.count < 1:
            raise ValueError(f"{self.label}: count must be >= 1")
        P = np.asarray(self.length_chain)
        if P.shape != (N_STATES, N_STATES) or not np.allclose(P.sum(axis=1), 1.0):
            raise ValueError(f"{self.label}: length chain must be 16x16 row-stochastic")


def class_counts(scale: float) -> dict[str, int]:
    if not 0 < scale <= 1:
        raise ScaleTooSmall(f"scale must lie in (0, 1], got {scale}")
    return {name: max(MIN_CLASS_COUNT, int(round(scale * L.REFERENCE_COUNTS[name]))) for name in L.CLASS_NAMES}


# --------------------------------------------------------------------------
# default profile


def _dirichlet_rows(rng, k, conc):
    return rng.dirichlet(np.full(k, conc), size=k)


def _byte_components() -> dict[str, np.ndarray]:
    text = np.full(256, 1e-4)
    text[32:127] = 1.0
    text[97:123] += 2.0  # lowercase
    text[[10, 13]] = 2.0
    binary = np.full(256, 0.2)
    binary[:16] = 4.0
    binary[0] = 20.0
    binary[255] = 3.0
    uniform = np.ones(256)
    return {k: v / v.sum() for k, v in {"text": text, "binary": binary, "uniform": uniform}.items()}


def cue_strength(bytes_per_flow: float) -> float:
    return float(np.clip(np.log10(bytes_per_flow / 500.0) / 2.0, 0.1, 1.0))


def default_profile(
    scale: float = DEFAULT_SCALE,
    separation: float = 0.12,
    malicious_shift: float = 0.25,
    opening_prob: float = 0.5,
) -> list[ClassProfile]:
    """Fixed per-class generator parameters.

    ``separation`` mixes class-specific structure (length chain, byte
    signature) into the background shared by a super-class;
    ``malicious_shift`` is the weight of the component common to all
    malicious classes; ``opening_prob`` is how often a flow starts with its
    class's opening message.
    """
    counts = class_counts(scale)
    rng = np.random.default_rng(PROFILE_SEED)
    comps = _byte_components()

    shared_chain = _dirichlet_rows(rng, N_STATES, 0.6)
    malicious_chain = _dirichlet_rows(rng, N_STATES, 0.6)
    mal_bytes = rng.dirichlet(np.full(256, 0.3))
    benign_mix = np.array([0.4, 0.2, 0.4])
    tls_hello = b"\x16\x03\x01\x02\x00\x01\x00\x01\xfc\x03\x03"

    web = [(443, "TCP", 0.55), (80, "TCP", 0.25), (53, "UDP", 0.12), (123, "UDP", 0.02), (993, "TCP", 0.03),
           (8080, "TCP", 0.03)]
    odd = [4444, 8443, 1337, 6667, 25, 587, 445, 3389, 9001, 7547]
    profiles = []
    for ci, name in enumerate(L.CLASS_NAMES):
        crng = np.random.default_rng([PROFILE_SEED, ci])
        malicious = ci != L.BENIGN
        mb = L.REFERENCE_SIZES_MB[name] * 1e6 / L.REFERENCE_COUNTS[name]  # mean bytes per flow
        # classes that move little data per flow carry weaker cues
        strength = cue_strength(mb) if malicious else 1.0
        sep = separation * strength
        shift = malicious_shift * strength

        base_chain = shared_chain
        if malicious:
            base_chain = (1 - shift) * shared_chain + shift * malicious_chain
        chain = (1 - sep) * base_chain + sep * _dirichlet_rows(crng, N_STATES, 0.4)

        mix = benign_mix + sep * (crng.dirichlet([2.0, 1.0, 2.0]) - benign_mix)
        background = mix[0] * comps["text"] + mix[1] * comps["binary"] + mix[2] * comps["uniform"]
        if malicious:
            background = (1 - shift) * background + shift * mal_bytes
        signature = np.zeros(256)
        signature[crng.choice(256, size=12, replace=False)] = crng.dirichlet(np.ones(12))
        byte_dist = (1 - sep) * background + sep * signature

        # longer flows for classes that moved more bytes per flow
        hi = int(np.clip(8 + 6 * np.log10(mb / 500.0), 8, 48))
        if malicious:
            k = int(crng.integers(1, 3))
            ports = [(p, t, w * (1 - shift)) for p, t, w in web]
            ports += [(odd[j], "TCP", shift / k) for j in crng.choice(len(odd), size=k, replace=False)]
            iat_mu = float(np.log(3e5) + shift * crng.uniform(-3.0, 1.0))
            iat_sigma = float(1.8 - shift * crng.uniform(0.0, 2.0))
            opening = bytes(crng.integers(0, 256, size=int(crng.integers(12, 28)))).hex()
            server_net = int(crng.integers(0x0100, 0xDF00))
            fwd_prob = float(0.5 + shift * crng.uniform(-0.5, 0.5))
        else:
            ports = web
            iat_mu = float(np.log(3e5))
            iat_sigma = 1.8
            opening = tls_hello.hex()
            server_net = (93 << 8) | 184
            fwd_prob = 0.5

        profiles.append(
            ClassProfile(
                label=name,
                count=counts[name],
                ports=ports,
                byte_dist=(byte_dist / byte_dist.sum()).tolist(),
                opening=opening,
                length_init=crng.dirichlet(np.full(N_STATES, 0.7)).tolist(),
                length_chain=(chain / chain.sum(axis=1, keepdims=True)).tolist(),
                iat_mu=iat_mu,
                iat_sigma=iat_sigma,
                pkts_range=(3, hi),
                fwd_prob=fwd_prob,
                server_net=server_net,
                opening_prob=opening_prob,
            )
        )
    return profiles


def save_profile(profiles: Sequence[ClassProfile], path) -> None:
    with open(path, "w") as fh:
        json.dump({"version": PROFILE_VERSION, "classes": [asdict(p) for p in profiles]}, fh)


def load_profile(path) -> list[ClassProfile]:
    with open(path) as fh:
        obj = json.load(fh)
    if obj["version"] != PROFILE_VERSION:
        raise ValueError(f"profile version {obj['version']} != {PROFILE_VERSION}")
    out = []
    for c in obj["classes"]:
        c["ports"] = [tuple(p) for p in c["ports"]]
        c["pkts_range"] = tuple(c["pkts_range"])
        out.append(ClassProfile(**c))
    return out


# --------------------------------------------------------------------------
# flow sampling


def _ip(a: int, b: int, c: int, d: int) -> str:
    return f"{a}.{b}.{c}.{d}"


@dataclass
class _Sampler:
    """Array views of a ClassProfile, built once per class."""

    profile: ClassProfile
    chain_cdf: np.ndarray
    init: np.ndarray
    byte_cdf: np.ndarray
    opening: bytes
    port_p: np.ndarray

    @classmethod
    def of(cls, p: ClassProfile) -> "_Sampler":
        w = np.array([x[2] for x in p.ports], dtype=np.float64)
        return cls(
            p,
            np.cumsum(np.asarray(p.length_chain), axis=1),
            np.asarray(p.length_init) / np.sum(p.length_init),
            np.cumsum(p.byte_dist),
            bytes.fromhex(p.opening),
            w / w.sum(),
        )


def sample_flow(
    profile: ClassProfile | _Sampler, class_id: int, rng: np.random.Generator, start_ts: int
) -> FlowRecord:
    sp = profile if isinstance(profile, _Sampler) else _Sampler.of(profile)
    prof = sp.profile
    lo, hi = prof.pkts_range
    n = int(np.exp(rng.uniform(np.log(lo), np.log(hi + 1))))
    n = min(max(n, lo), hi)

    cum = sp.chain_cdf
    s = int(rng.choice(N_STATES, p=sp.init))
    u = rng.random(n)
    states = np.empty(n, dtype=np.int64)
    for i in range(n):
        states[i] = s
        s = min(int(np.searchsorted(cum[s], u[i] * cum[s, -1])), N_STATES - 1)
    lens = states * BIN_WIDTH + rng.integers(0, BIN_WIDTH, size=n)
    lens[(states == 0) & (rng.random(n) < 0.5)] = 0
    lens = np.minimum(lens, 1500)

    opening = sp.opening if rng.random() < prof.opening_prob else b""
    lens[0] = max(lens[0], len(opening))
    total = int(lens.sum())
    body = np.minimum(np.searchsorted(sp.byte_cdf, rng.random(total) * sp.byte_cdf[-1]), 255)
    body = opening + body.astype(np.uint8).tobytes()[len(opening):]

    k = int(rng.choice(len(prof.ports), p=sp.port_p))
    port, proto = prof.ports[k][0], Protocol[prof.ports[k][1]]
    client = (_ip(10, *rng.integers(0, 256, size=2), int(rng.integers(1, 255))), int(rng.integers(49152, 65536)))
    server = (_ip(prof.server_net >> 8, prof.server_net & 0xFF, int(rng.integers(0, 256)),
                  int(rng.integers(1, 255))), int(port))

    gaps = np.rint(rng.lognormal(prof.iat_mu, prof.iat_sigma, size=n - 1)).astype(np.int64)
    ts = start_ts + np.concatenate([[0], np.cumsum(gaps)])
    fwd = rng.random(n) < prof.fwd_prob
    fwd[0] = True

    pkts = []
    off = 0
    for i in range(n):
        src, dst = (client, server) if fwd[i] else (server, client)
        pkts.append(ParsedPacket(int(ts[i]), src[0], dst[0], src[1], dst[1], proto, body[off : off + lens[i]]))
        off += lens[i]
    return FlowRecord(canonical_key(pkts[0]), tuple(pkts), class_id)


@dataclass
class Dataset:
    samples: list  # FlowRecords, or rows of a feature matrix
    labels: np.ndarray
    tags: list[str] | None = None

    def __len__(self) -> int:
        return len(self.labels)

    def take(self, idx: Sequence[int]) -> "Dataset":
        idx = np.asarray(idx, dtype=np.int64)
        if isinstance(self.samples, np.ndarray):
            samples = self.samples[idx]
        else:
            samples = [self.samples[i] for i in idx]
        tags = None if self.tags is None else [self.tags[i] for i in idx]
        return Dataset(samples, self.labels[idx], tags)

    def counts(self) -> dict[int, int]:
        vals, cnt = np.unique(self.labels, return_counts=True)
        return {int(v): int(c) for v, c in zip(vals, cnt)}


def generate_dataset(
    scale: float = DEFAULT_SCALE,
    seed: int = 0,
    profiles: Sequence[ClassProfile] | None = None,
) -> Dataset:
    """Sample every class's flows; each flow draws from its own RNG stream
    keyed by (seed, flow index)."""
    if profiles is None:
        profiles = default_profile(scale)
    else:
        counts = class_counts(scale)
        profiles = [p if p.count == counts[p.label] else _with_count(p, counts[p.label]) for p in profiles]
    flows, ys = [], []
    gi = 0
    for ci, prof in enumerate(profiles):
        sp = _Sampler.of(prof)
        for _ in range(prof.count):
            rng = np.random.default_rng([seed, gi])
            start = BASE_TS + int(rng.integers(0, 6 * 3600 * 1_000_000))
            flows.append(sample_flow(sp, ci, rng, start))
            ys.append(ci)
            gi += 1
    return Dataset(flows, np.array(ys, dtype=np.int64))


def _with_count(p: ClassProfile, n: int) -> ClassProfile:
    d = asdict(p)
    d["count"] = n
    d["ports"] = [tuple(x) for x in d["ports"]]
    d["pkts_range"] = tuple(d["pkts_range"])
    return ClassProfile(**d)


# --------------------------------------------------------------------------
# splitting and resampling


def split_indices(y: np.ndarray, test_fraction: float, seed: int) -> tuple[np.ndarray, np.ndarray]:
    if not 0 < test_fraction < 1:
        raise ValueError("test_fraction must lie in (0, 1)")
    rng = np.random.default_rng(seed)
    train, test = [], []
    for c in np.unique(y):
        idx = np.flatnonzero(y == c)
        if len(idx) < 2:
            raise ClassTooSmall(f"class {int(c)} has {len(idx)} sample(s); need 2 to split")
        idx = rng.permutation(idx)
        n_test = min(max(int(round(test_fraction * len(idx))), 1), len(idx) - 1)
        test.append(idx[:n_test])
        train.append(idx[n_test:])
    return np.sort(np.concatenate(train)), np.sort(np.concatenate(test))


def split(dataset: Dataset, test_fraction: float, seed: int) -> tuple[Dataset, Dataset]:
    tr, te = split_indices(dataset.labels, test_fraction, seed)
    train, test = dataset.take(tr), dataset.take(te)
    train.tags = ["train"] * len(train)
    test.tags = ["test"] * len(test)
    return train, test


def oversample_indices(y: np.ndarray, target: int, seed: int) -> np.ndarray:
    """Originals plus with-replacement draws topping each smaller class up to ``target``."""
    rng = np.random.default_rng(seed)
    out = [np.arange(len(y))]
    for c in np.unique(y):
        idx = np.flatnonzero(y == c)
        if len(idx) < target:
            out.append(rng.choice(idx, size=target - len(idx), replace=True))
    return np.concatenate(out)


def undersample_indices(y: np.ndarray, target: int, seed: int) -> np.ndarray:
    rng = np.random.default_rng(seed)
    classes = np.unique(y)
    smallest = min(int((y == c).sum()) for c in classes)
    if target > smallest:
        raise TargetTooLarge(f"target {target} exceeds the smallest class ({smallest})")
    keep = [np.sort(rng.choice(np.flatnonzero(y == c), size=target, replace=False)) for c in classes]
    return np.sort(np.concatenate(keep))


def oversample(train: Dataset, per_class_target: int, seed: int) -> Dataset:
    return train.take(oversample_indices(train.labels, per_class_target, seed))


def undersample(train: Dataset, per_class_target: int, seed: int) -> Dataset:
    return train.take(undersample_indices(train.labels, per_class_target, seed))


def incremental_indices(y: np.ndarray, stages: int, seed: int) -> list[np.ndarray]:
    """Nested index sets; the first is class-balanced at the minority size,
    later ones add equal slices of the remainder, the last is everything."""
    if stages < 2:
        raise ValueError("need at least 2 stages")
    rng = np.random.default_rng(seed)
    classes = np.unique(y)
    m = min(int((y == c).sum()) for c in classes)
    first = np.sort(np.concatenate([rng.choice(np.flatnonzero(y == c), size=m, replace=False) for c in classes]))
    rest = rng.permutation(np.setdiff1d(np.arange(len(y)), first))
    out = []
    for k in range(stages):
        take = int(round(k / (stages - 1) * len(rest)))
        out.append(np.sort(np.concatenate([first, rest[:take]])))
    return out


def incremental_schedule(train: Dataset, stages: int, seed: int) -> list[Dataset]:
    return [train.take(i) for i in incremental_indices(train.labels, stages, seed)]
