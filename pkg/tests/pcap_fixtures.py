"""Hand-assembled pcap byte strings.

Every frame is written field by field from the wire layouts so the tests do
not depend on the package's own frame builder.
"""
import struct

# 24-byte global header, little-endian: magic, v2.4, thiszone, sigfigs, snaplen, linktype=1
GLOBAL_LE = bytes.fromhex("d4c3b2a1" "0200" "0400" "00000000" "00000000" "ffff0000" "01000000")
# same header written big-endian
GLOBAL_BE = bytes.fromhex("a1b2c3d4" "0002" "0004" "00000000" "00000000" "0000ffff" "00000001")

ETH_IPV4 = bytes.fromhex("020000000002" "020000000001" "0800")
ETH_ARP = bytes.fromhex("ffffffffffff" "020000000001" "0806")


def record(ts_sec, ts_usec, frame, orig_len=None, big=False):
    e = ">" if big else "<"
    return struct.pack(e + "IIII", ts_sec, ts_usec, len(frame), orig_len or len(frame)) + frame


def ipv4(total_len, proto, src, dst, frag=0x4000):
    # version/IHL, TOS, total length, id, flags/frag, TTL, proto, checksum (0), src, dst
    return (bytes([0x45, 0x00]) + total_len.to_bytes(2, "big") + b"\x00\x01"
            + frag.to_bytes(2, "big") + bytes([64, proto]) + b"\x00\x00" + bytes(src) + bytes(dst))


# UDP 10.0.0.1:5353 -> 10.0.0.2:53, payload "AB"; 14+20+8+2 = 44 bytes, padded to 60
UDP_AB = (
    ETH_IPV4
    + ipv4(30, 17, [10, 0, 0, 1], [10, 0, 0, 2])
    + bytes.fromhex("14e9" "0035" "000a" "0000")  # sport 5353, dport 53, len 10, csum 0
    + b"AB"
    + b"\x00" * 16
)
assert len(UDP_AB) == 60

# TCP 192.168.1.10:40000 -> 93.184.216.34:80, header only (data offset 5), total length 40
TCP_EMPTY = (
    ETH_IPV4
    + ipv4(40, 6, [192, 168, 1, 10], [93, 184, 216, 34])
    + bytes.fromhex("9c40" "0050" "00000001" "00000000" "50" "10" "ffff" "0000" "0000")
    + b"\x00" * 6
)
assert len(TCP_EMPTY) == 60

# TCP with 12 bytes of options (data offset 8) and payload "GET /"
TCP_OPTS_GET = (
    ETH_IPV4
    + ipv4(20 + 32 + 5, 6, [192, 168, 1, 10], [93, 184, 216, 34])
    + bytes.fromhex("9c40" "0050" "00000002" "00000000" "80" "18" "ffff" "0000" "0000")
    + bytes.fromhex("0101080a0000000100000002")
    + b"GET /"
)

# ARP request: not IPv4
ARP = ETH_ARP + bytes.fromhex("0001080006040001" "020000000001" "0a000001" "000000000000" "0a000002") + b"\x00" * 18

# ICMP echo: IPv4 but neither TCP nor UDP
ICMP = ETH_IPV4 + ipv4(28, 1, [10, 0, 0, 1], [10, 0, 0, 2]) + bytes.fromhex("0800f7ff00000000") + b"\x00" * 18

# UDP whose length field (200) overruns the IPv4 payload
UDP_BAD_LEN = ETH_IPV4 + ipv4(30, 17, [10, 0, 0, 1], [10, 0, 0, 2]) + bytes.fromhex("14e9003500c80000") + b"AB"

# TCP claiming data offset 15 (60 bytes) inside a 20-byte segment
TCP_BAD_OFFSET = (
    ETH_IPV4 + ipv4(40, 6, [10, 0, 0, 1], [10, 0, 0, 2])
    + bytes.fromhex("9c40" "0050" "00000001" "00000000" "f0" "10" "ffff" "0000" "0000")
)

# second fragment of a UDP datagram (offset 185 * 8 bytes)
UDP_FRAGMENT = ETH_IPV4 + ipv4(28, 17, [10, 0, 0, 1], [10, 0, 0, 2], frag=0x00B9) + b"\x11" * 8 + b"\x00" * 18


def udp_frame(src, sport, dst, dport, payload):
    ulen = 8 + len(payload)
    f = ETH_IPV4 + ipv4(20 + ulen, 17, src, dst) + struct.pack("!HHHH", sport, dport, ulen, 0) + payload
    return f + b"\x00" * max(0, 60 - len(f))
