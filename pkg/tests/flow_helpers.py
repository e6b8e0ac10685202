from flowtree.flowparse import FlowRecord, ParsedPacket, Protocol, canonical_key

CLIENT = ("10.0.0.1", 40000)
SERVER = ("10.0.0.2", 443)


def make_flow(payloads, ts=None, dirs=None, proto=Protocol.TCP, client=CLIENT, server=SERVER, label=None):
    """Flow from explicit payloads; ``dirs`` holds 0 for client->server, 1 for the reverse."""
    n = len(payloads)
    ts = ts if ts is not None else [i * 1000 for i in range(n)]
    dirs = dirs if dirs is not None else [0] * n
    pkts = []
    for t, d, pl in zip(ts, dirs, payloads):
        a, b = (client, server) if d == 0 else (server, client)
        pkts.append(ParsedPacket(t, a[0], b[0], a[1], b[1], proto, bytes(pl)))
    return FlowRecord(canonical_key(pkts[0]), tuple(pkts), label)


def flow_of_lengths(lens, **kw):
    return make_flow([b"\x00" * n for n in lens], **kw)
