"""Class taxonomy shared by every stage of the pipeline.

Class indices follow the order of the data-statistics table: Benign first,
then the four non-ransomware attack behaviours, then the seven ransomware
families.
"""
from __future__ import annotations

CLASS_NAMES: tuple[str, ...] = (
    "Benign",
    "Bot",
    "Exploit",
    "Trojan",
    "Malspam",
    "Cryptomix",
    "Locky",
    "CrypMic",
    "Telslacrypt",
    "CryptXXX",
    "Cryptowall",
    "Cerber",
)
NUM_CLASSES = len(CLASS_NAMES)
CLASS_INDEX = {name: i for i, name in enumerate(CLASS_NAMES)}

# flow counts per class in the reference corpus
REFERENCE_COUNTS: dict[str, int] = {
    "Benign": 246_015,
    "Bot": 99,
    "Exploit": 349,
    "Trojan": 3_085,
    "Malspam": 3_612,
    "Cryptomix": 90,
    "Locky": 229,
    "CrypMic": 390,
    "Telslacrypt": 755,
    "CryptXXX": 1_259,
    "Cryptowall": 2_864,
    "Cerber": 23_260,
}
# capture size per class in MB; used to scale synthetic flow volume
REFERENCE_SIZES_MB: dict[str, float] = {
    "Benign": 560.2,
    "Bot": 6.5,
    "Exploit": 32.5,
    "Trojan": 18.1,
    "Malspam": 142.1,
    "Cryptomix": 2.0,
    "Locky": 9.3,
    "CrypMic": 14.3,
    "Telslacrypt": 26.5,
    "CryptXXX": 44.7,
    "Cryptowall": 34.7,
    "Cerber": 23.5,
}

BENIGN = 0
RANSOMWARE_FAMILIES: tuple[str, ...] = CLASS_NAMES[5:]
ATTACK_BEHAVIOURS: tuple[str, ...] = ("Bot", "Exploit", "Trojan", "Malspam", "Ransomware")

# local class sets of the three tree stages
NODE1_CLASSES: tuple[str, ...] = ("Benign", "Malicious")
NODE2_CLASSES: tuple[str, ...] = ATTACK_BEHAVIOURS
NODE3_CLASSES: tuple[str, ...] = RANSOMWARE_FAMILIES


def label_index(label: str | int) -> int:
    if isinstance(label, (int,)) and not isinstance(label, bool):
        if not 0 <= label < NUM_CLASSES:
            raise ValueError(f"label index {label} out of range")
        return int(label)
    try:
        return CLASS_INDEX[label]
    except KeyError:
        raise ValueError(f"unknown class label {label!r}") from None


def is_malicious(y: int) -> bool:
    return y != BENIGN


def is_ransomware(y: int) -> bool:
    return y >= 5


def node1_target(y: int) -> int:
    return 0 if y == BENIGN else 1


def node2_target(y: int) -> int:
    """Attack-behaviour index for a malicious class (4 = Ransomware)."""
    if y == BENIGN:
        raise ValueError("benign samples have no attack behaviour")
    return min(y - 1, 4)


def node3_target(y: int) -> int:
    if y < 5:
        raise ValueError("only ransomware samples have a family index")
    return y - 5


def assemble_label(node1: int, node2: int | None = None, node3: int | None = None) -> int:
    """Combine per-stage decisions into a 12-class index."""
    if node1 == 0:
        return BENIGN
    if node2 is None:
        raise ValueError("malicious route needs a node2 decision")
    if node2 < 4:
        return node2 + 1
    if node3 is None:
        raise ValueError("ransomware route needs a node3 decision")
    return node3 + 5
