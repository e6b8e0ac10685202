"""Classic pcap decoding and bidirectional flow reassembly.

Only the libpcap format (not pcapng), Ethernet II link layer and IPv4 with
TCP/UDP transport are understood. Anything else decodes to ``None``.
"""
from __future__ import annotations

import base64
import csv
import json
import socket
import struct
from dataclasses import dataclass, field, replace
from enum import IntEnum
from typing import Iterable, Sequence

from .labels import CLASS_NAMES, label_index

PCAP_MAGIC = 0xA1B2C3D4
PCAP_MAGIC_SWAPPED = 0xD4C3B2A1
LINKTYPE_ETHERNET = 1
GLOBAL_HEADER_LEN = 24
RECORD_HEADER_LEN = 16
ETHERTYPE_IPV4 = 0x0800
MAX_PAYLOAD = 1500
DEFAULT_IDLE_TIMEOUT = 64.0

FORWARD = 0
REVERSE = 1


class PcapError(ValueError):
    pass


class BadMagic(PcapError):
    pass


class TruncatedHeader(PcapError):
    pass


class TruncatedRecord(PcapError):
    pass


class MalformedFrame(ValueError):
    pass


class InvalidFraction(ValueError):
    pass


class Protocol(IntEnum):
    TCP = 6
    UDP = 17


@dataclass(frozen=True)
class RawPacket:
    ts_micros: int
    captured_len: int
    orig_len: int
    data: bytes

    def __post_init__(self):
        if self.captured_len != len(self.data):
            raise ValueError("captured_len must equal len(data)")
        if self.captured_len > self.orig_len:
            raise ValueError("captured_len exceeds orig_len")


@dataclass(frozen=True)
class ParsedPacket:
    ts_micros: int
    src_ip: str
    dst_ip: str
    src_port: int
    dst_port: int
    protocol: Protocol
    payload: bytes = b""

    @property
    def payload_len(self) -> int:
        return len(self.payload)

    def endpoints(self) -> tuple[tuple[str, int], tuple[str, int]]:
        return (self.src_ip, self.src_port), (self.dst_ip, self.dst_port)


FlowKey = tuple  # (ip_a, port_a, ip_b, port_b, Protocol), lower endpoint first


def _endpoint_order(ep: tuple[str, int]) -> tuple[bytes, int]:
    return socket.inet_aton(ep[0]), ep[1]


def canonical_key(pkt: ParsedPacket) -> FlowKey:
    a, b = pkt.endpoints()
    if _endpoint_order(b) < _endpoint_order(a):
        a, b = b, a
    return (a[0], a[1], b[0], b[1], Protocol(pkt.protocol))


def flow_key_str(key: FlowKey) -> str:
    return f"{key[0]}:{key[1]}-{key[2]}:{key[3]}/{Protocol(key[4]).name}"


@dataclass(frozen=True)
class FlowRecord:
    flow_key: FlowKey
    packets: tuple[ParsedPacket, ...]
    label: int | None = None
    direction_flags: tuple[int, ...] = field(default=())

    def __post_init__(self):
        if not self.packets:
            raise ValueError("a flow needs at least one packet")
        if not self.direction_flags:
            first_src = (self.packets[0].src_ip, self.packets[0].src_port)
            flags = tuple(
                FORWARD if (p.src_ip, p.src_port) == first_src else REVERSE
                for p in self.packets
            )
            object.__setattr__(self, "direction_flags", flags)
        if len(self.direction_flags) != len(self.packets):
            raise ValueError("one direction flag per packet")

    @property
    def first_ts(self) -> int:
        return self.packets[0].ts_micros

    @property
    def last_ts(self) -> int:
        return self.packets[-1].ts_micros

    @property
    def duration(self) -> int:
        return self.last_ts - self.first_ts

    @property
    def label_name(self) -> str | None:
        return None if self.label is None else CLASS_NAMES[self.label]

    def with_label(self, label: str | int) -> "FlowRecord":
        return replace(self, label=label_index(label))


@dataclass
class DecodeStats:
    decoded: int = 0
    skipped: int = 0  # non-IPv4 / non-TCP-UDP
    fragments_dropped: int = 0


# --------------------------------------------------------------------------
# pcap container


def parse_pcap(data: bytes) -> list[RawPacket]:
    if len(data) < GLOBAL_HEADER_LEN:
        raise TruncatedHeader(f"pcap global header needs 24 bytes, got {len(data)}")
    (magic,) = struct.unpack("<I", data[:4])
    if magic == PCAP_MAGIC:
        endian = "<"
    elif magic == PCAP_MAGIC_SWAPPED:
        endian = ">"
    else:
        raise BadMagic(f"unknown pcap magic 0x{magic:08x}")
    rec_fmt = endian + "IIII"

    packets = []
    off = GLOBAL_HEADER_LEN
    end = len(data)
    while off < end:
        if end - off < RECORD_HEADER_LEN:
            raise TruncatedRecord(f"partial record header at offset {off}")
        ts_sec, ts_usec, incl_len, orig_len = struct.unpack_from(rec_fmt, data, off)
        off += RECORD_HEADER_LEN
        if incl_len > end - off:
            raise TruncatedRecord(
                f"record promises {incl_len} bytes, {end - off} remain"
            )
        frame = bytes(data[off : off + incl_len])
        off += incl_len
        packets.append(
            RawPacket(ts_sec * 1_000_000 + ts_usec, incl_len, max(orig_len, incl_len), frame)
        )
    return packets


def read_pcap(path) -> list[RawPacket]:
    with open(path, "rb") as fh:
        return parse_pcap(fh.read())


def write_pcap(packets: Iterable[RawPacket], big_endian: bool = False, snaplen: int = 65535) -> bytes:
    e = ">" if big_endian else "<"
    out = [struct.pack(e + "IHHiIII", PCAP_MAGIC, 2, 4, 0, 0, snaplen, LINKTYPE_ETHERNET)]
    for p in packets:
        sec, usec = divmod(p.ts_micros, 1_000_000)
        out.append(struct.pack(e + "IIII", sec, usec, p.captured_len, p.orig_len))
        out.append(p.data)
    return b"".join(out)


# --------------------------------------------------------------------------
# link / network / transport decoding


def decode_frame(raw: RawPacket, stats: DecodeStats | None = None) -> ParsedPacket | None:
    pkt = _decode(raw.data, raw.ts_micros, stats)
    if stats is not None:
        if pkt is None:
            stats.skipped += 1
        else:
            stats.decoded += 1
    return pkt


def _decode(frame: bytes, ts: int, stats: DecodeStats | None) -> ParsedPacket | None:
    if len(frame) < 14:
        return None
    (ethertype,) = struct.unpack_from("!H", frame, 12)
    if ethertype != ETHERTYPE_IPV4:
        return None
    ip = frame[14:]
    if len(ip) < 20:
        raise MalformedFrame("IPv4 header shorter than 20 bytes")
    ver_ihl = ip[0]
    if ver_ihl >> 4 != 4:
        return None
    ihl = (ver_ihl & 0x0F) * 4
    total_len, frag, proto = struct.unpack_from("!H2xHxB", ip, 2)
    if ihl < 20 or total_len < ihl or total_len > len(ip):
        raise MalformedFrame(
            f"IPv4 lengths inconsistent (ihl={ihl}, total={total_len}, have={len(ip)})"
        )
    if proto not in (Protocol.TCP, Protocol.UDP):
        return None
    if frag & 0x1FFF:
        # non-first fragment: no transport header to read
        if stats is not None:
            stats.fragments_dropped += 1
        return None
    src_ip = socket.inet_ntoa(ip[12:16])
    dst_ip = socket.inet_ntoa(ip[16:20])
    seg = ip[ihl:total_len]  # drops Ethernet trailer padding

    if proto == Protocol.TCP:
        if len(seg) < 20:
            raise MalformedFrame("TCP segment shorter than 20 bytes")
        sport, dport = struct.unpack_from("!HH", seg, 0)
        data_off = (seg[12] >> 4) * 4
        if data_off < 20 or data_off > len(seg):
            raise MalformedFrame(f"TCP data offset {data_off} outside segment of {len(seg)}")
        payload = seg[data_off:]
    else:
        if len(seg) < 8:
            raise MalformedFrame("UDP datagram shorter than 8 bytes")
        sport, dport, ulen = struct.unpack_from("!HHH", seg, 0)
        if ulen < 8 or ulen > len(seg):
            raise MalformedFrame(f"UDP length {ulen} inconsistent with IPv4 payload {len(seg)}")
        payload = seg[8:ulen]
    return ParsedPacket(ts, src_ip, dst_ip, sport, dport, Protocol(proto), bytes(payload[:MAX_PAYLOAD]))


def decode_all(raws: Iterable[RawPacket]) -> tuple[list[ParsedPacket], DecodeStats]:
    stats = DecodeStats()
    out = []
    for raw in raws:
        pkt = decode_frame(raw, stats)
        if pkt is not None:
            out.append(pkt)
    return out, stats


def _checksum(data: bytes) -> int:
    if len(data) % 2:
        data += b"\0"
    s = sum(struct.unpack(f"!{len(data) // 2}H", data))
    while s >> 16:
        s = (s & 0xFFFF) + (s >> 16)
    return ~s & 0xFFFF


def build_frame(pkt: ParsedPacket, ip_id: int = 0) -> bytes:
    """Encode a ParsedPacket as an Ethernet/IPv4/{TCP,UDP} frame.

    Transport checksums are left at zero; frames shorter than the Ethernet
    minimum are zero-padded to 60 bytes.
    """
    if pkt.protocol == Protocol.TCP:
        l4 = struct.pack("!HHIIBBHHH", pkt.src_port, pkt.dst_port, 0, 0, 5 << 4, 0x18, 65535, 0, 0)
    else:
        l4 = struct.pack("!HHHH", pkt.src_port, pkt.dst_port, 8 + len(pkt.payload), 0)
    body = l4 + pkt.payload
    hdr = struct.pack(
        "!BBHHHBBH4s4s",
        0x45, 0, 20 + len(body), ip_id & 0xFFFF, 0x4000, 64, int(pkt.protocol), 0,
        socket.inet_aton(pkt.src_ip), socket.inet_aton(pkt.dst_ip),
    )
    hdr = hdr[:10] + struct.pack("!H", _checksum(hdr)) + hdr[12:]
    eth = b"\x02\x00\x00\x00\x00\x01" + b"\x02\x00\x00\x00\x00\x02" + struct.pack("!H", ETHERTYPE_IPV4)
    frame = eth + hdr + body
    if len(frame) < 60:
        frame += b"\0" * (60 - len(frame))
    return frame


def to_raw(pkt: ParsedPacket, ip_id: int = 0) -> RawPacket:
    frame = build_frame(pkt, ip_id)
    return RawPacket(pkt.ts_micros, len(frame), len(frame), frame)


# --------------------------------------------------------------------------
# flows


def assemble_flows(
    packets: Iterable[ParsedPacket], idle_timeout: float = DEFAULT_IDLE_TIMEOUT
) -> list[FlowRecord]:
    ordered = sorted(packets, key=lambda p: p.ts_micros)
    gap = idle_timeout * 1_000_000
    open_flows: dict[FlowKey, list[ParsedPacket]] = {}
    groups: list[tuple[FlowKey, list[ParsedPacket]]] = []
    for pkt in ordered:
        key = canonical_key(pkt)
        cur = open_flows.get(key)
        if cur is None or pkt.ts_micros - cur[-1].ts_micros > gap:
            cur = []
            open_flows[key] = cur
            groups.append((key, cur))
        cur.append(pkt)
    return [FlowRecord(key, tuple(pkts)) for key, pkts in groups]


def truncate_flow(flow: FlowRecord, fraction: float) -> FlowRecord:
    """Keep the packets seen within the first ``fraction`` of the flow's duration."""
    if not 0.0 < fraction <= 1.0:
        raise InvalidFraction(f"fraction must lie in (0, 1], got {fraction}")
    cutoff = flow.first_ts + fraction * flow.duration
    n = sum(1 for p in flow.packets if p.ts_micros <= cutoff)
    if n == len(flow.packets):
        return flow
    return FlowRecord(flow.flow_key, flow.packets[:n], flow.label, flow.direction_flags[:n])


def flows_to_raw(flows: Sequence[FlowRecord]) -> list[RawPacket]:
    """Interleave the packets of all flows into one time-ordered frame list."""
    pkts = sorted(
        ((p.ts_micros, i, j, p) for i, f in enumerate(flows) for j, p in enumerate(f.packets)),
        key=lambda t: t[:3],
    )
    return [to_raw(p, ip_id=k) for k, (_, _, _, p) in enumerate(pkts)]


# --------------------------------------------------------------------------
# JSONL flow files


def flow_to_json(flow: FlowRecord) -> dict:
    first = flow.packets[0]
    a = (flow.flow_key[0], flow.flow_key[1])
    return {
        "flow_key": [flow.flow_key[0], flow.flow_key[1], flow.flow_key[2], flow.flow_key[3],
                     Protocol(flow.flow_key[4]).name],
        "initiator": 0 if (first.src_ip, first.src_port) == a else 1,
        "label": flow.label_name,
        "first_ts": flow.first_ts,
        "duration_us": flow.duration,
        "packets": [
            {
                "ts_us": p.ts_micros,
                "dir": "fwd" if d == FORWARD else "rev",
                "len": p.payload_len,
                "payload_b64": base64.b64encode(p.payload).decode("ascii"),
            }
            for p, d in zip(flow.packets, flow.direction_flags)
        ],
    }


def flow_from_json(obj: dict) -> FlowRecord:
    ip_a, port_a, ip_b, port_b, proto = obj["flow_key"]
    proto = Protocol[proto]
    ends = [(ip_a, int(port_a)), (ip_b, int(port_b))]
    init = ends[obj.get("initiator", 0)]
    resp = ends[1 - obj.get("initiator", 0)]
    pkts = []
    flags = []
    for p in obj["packets"]:
        payload = base64.b64decode(p["payload_b64"])
        if len(payload) != p["len"]:
            raise ValueError("payload length does not match its 'len' field")
        fwd = p["dir"] == "fwd"
        src, dst = (init, resp) if fwd else (resp, init)
        pkts.append(ParsedPacket(p["ts_us"], src[0], dst[0], src[1], dst[1], proto, payload))
        flags.append(FORWARD if fwd else REVERSE)
    label = obj.get("label")
    return FlowRecord(
        (ip_a, int(port_a), ip_b, int(port_b), proto),
        tuple(pkts),
        None if label is None else label_index(label),
        tuple(flags),
    )


def write_flows_jsonl(flows: Iterable[FlowRecord], path) -> None:
    with open(path, "w") as fh:
        for f in flows:
            fh.write(json.dumps(flow_to_json(f), separators=(",", ":")))
            fh.write("\n")


def read_flows_jsonl(path) -> list[FlowRecord]:
    with open(path) as fh:
        return [flow_from_json(json.loads(line)) for line in fh if line.strip()]


# --------------------------------------------------------------------------
# label files and capture loading


class UnlabeledFlow(ValueError):
    pass


def read_label_file(path) -> dict[str, int]:
    """CSV with a ``flow_key,label`` header; keys as produced by ``flow_key_str``."""
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    if rows and set(rows[0]) != {"flow_key", "label"}:
        raise ValueError(f"{path}: expected columns flow_key,label")
    return {r["flow_key"]: label_index(r["label"]) for r in rows}


def write_label_file(path, flows: Iterable[FlowRecord]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["flow_key", "label"])
        seen = set()
        for f in flows:
            k = flow_key_str(f.flow_key)
            if k not in seen and f.label is not None:
                seen.add(k)
                w.writerow([k, f.label_name])


def label_flows(
    flows: Iterable[FlowRecord], mapping: dict[str, int] | None = None, default: str | int | None = None
) -> list[FlowRecord]:
    """Attach labels by flow key; flows already labelled keep theirs unless the mapping names them."""
    mapping = mapping or {}
    fallback = None if default is None else label_index(default)
    out = []
    for f in flows:
        y = mapping.get(flow_key_str(f.flow_key), f.label if f.label is not None else fallback)
        if y is None:
            raise UnlabeledFlow(f"no label for flow {flow_key_str(f.flow_key)}")
        out.append(replace(f, label=y))
    return out


def load_capture(path, idle_timeout: float = DEFAULT_IDLE_TIMEOUT) -> tuple[list[FlowRecord], DecodeStats]:
    """Flows from a classic pcap (sniffed by magic) or a flow JSONL file."""
    with open(path, "rb") as fh:
        head = fh.read(4)
    if len(head) == 4 and struct.unpack("<I", head)[0] in (PCAP_MAGIC, PCAP_MAGIC_SWAPPED):
        packets, stats = decode_all(read_pcap(path))
        return assemble_flows(packets, idle_timeout), stats
    flows = read_flows_jsonl(path)
    return flows, DecodeStats(decoded=sum(len(f.packets) for f in flows))
