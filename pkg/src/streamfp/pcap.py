"""Classic pcap ingestion: TCP reassembly and TLS record framing.

Reads classic (not pcapng) captures with Ethernet link type, reassembles
the server-to-client byte stream of each TCP connection, frames TLS
records from the 5-byte headers, and emits one Trace per connection whose
events are the application-data record lengths with their inter-arrival
gaps. A bundled fixture writer produces captures for round-trip testing.

Timestamps are handled as integer microseconds throughout so gap values
reproduce the capture resolution exactly.
"""
from __future__ import annotations

import hashlib
import json
import socket
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Iterator, NamedTuple

from .traces import Dataset, NetworkEvent, NOISE, Trace

PCAP_MAGIC = 0xA1B2C3D4
PCAP_MAGIC_SWAPPED = 0xD4C3B2A1
LINKTYPE_ETHERNET = 1

ETHERTYPE_IPV4 = 0x0800
ETHERTYPE_IPV6 = 0x86DD

TLS_HEADER_LEN = 5
# 2^14 payload plus maximum ciphertext expansion
TLS_MAX_RECORD = 16_640
CONTENT_TYPE_APPLICATION_DATA = 23
TLS_RECORD_VERSION = 0x0303

MAX_REASSEMBLY_BUFFER = 1 << 20  # per-flow out-of-order byte cap


class PcapFormatError(ValueError):
    """Unsupported or malformed capture file."""


class CorruptStreamError(ValueError):
    """TLS framing impossible: declared record length out of range."""


class TlsRecord(NamedTuple):
    timestamp: float
    content_type: int
    length: int


@dataclass(frozen=True)
class FlowKey:
    client_addr: str
    client_port: int
    server_addr: str
    server_port: int
    protocol: str = "tcp"

    def __str__(self) -> str:
        return (f"{self.client_addr}:{self.client_port}"
                f"<-{self.server_addr}:{self.server_port}/{self.protocol}")


@dataclass
class IngestReport:
    flows: int = 0
    abandoned: int = 0
    truncated_records: int = 0
    skipped_packets: int = 0

    def to_dict(self) -> dict:
        return {"flows": self.flows, "abandoned": self.abandoned,
                "truncated_records": self.truncated_records,
                "skipped_packets": self.skipped_packets}


def write_report_json(report: IngestReport, path) -> None:
    Path(path).write_text(json.dumps(report.to_dict(), sort_keys=True) + "\n",
                          encoding="utf-8")


# --- TLS framing ---------------------------------------------------------------


class _TlsFramer:
    """Incremental record framer over an in-order byte stream.

    A record's timestamp is the timestamp of the segment that completes it.
    """

    def __init__(self):
        self.buffer = bytearray()
        self.records: list[tuple[int, int, int]] = []  # (ts_us, type, length)

    def feed(self, data: bytes, ts_us: int) -> None:
        self.buffer.extend(data)
        while len(self.buffer) >= TLS_HEADER_LEN:
            content_type = self.buffer[0]
            (length,) = struct.unpack_from(">H", self.buffer, 3)
            if length > TLS_MAX_RECORD:
                raise CorruptStreamError(
                    f"TLS record length {length} exceeds {TLS_MAX_RECORD}")
            if len(self.buffer) < TLS_HEADER_LEN + length:
                break
            del self.buffer[:TLS_HEADER_LEN + length]
            self.records.append((ts_us, content_type, length))

    @property
    def has_partial(self) -> bool:
        return len(self.buffer) > 0


def parse_tls_records(segments: Iterable[tuple[bytes, float]]) -> list[TlsRecord]:
    """Frame TLS records from timestamped byte segments.

    The stream must begin at a record boundary. A record split across
    segments carries the timestamp of the completing segment; a trailing
    partial record is dropped.
    """
    framer = _TlsFramer()
    for data, ts in segments:
        framer.feed(bytes(data), int(round(ts * 1e6)))
    return [TlsRecord(ts_us / 1e6, ctype, length)
            for ts_us, ctype, length in framer.records]


# --- pcap reading ---------------------------------------------------------------


class _Packet(NamedTuple):
    ts_us: int
    src_addr: str
    src_port: int
    dst_addr: str
    dst_port: int
    seq: int
    syn: bool
    payload: bytes


def _iter_packets(path: Path, report: IngestReport) -> Iterator[_Packet]:
    data = path.read_bytes()
    if len(data) < 24:
        raise PcapFormatError(f"{path}: too short for a pcap global header")
    (magic,) = struct.unpack_from("<I", data, 0)
    if magic == PCAP_MAGIC:
        endian = "<"
    elif magic == PCAP_MAGIC_SWAPPED:
        endian = ">"
    else:
        raise PcapFormatError(
            f"{path}: unknown magic 0x{magic:08x}; only classic microsecond "
            f"pcap is supported")
    (network,) = struct.unpack_from(endian + "I", data, 20)
    if network != LINKTYPE_ETHERNET:
        raise PcapFormatError(f"{path}: unsupported link type {network}; "
                              f"expected Ethernet (1)")
    offset = 24
    while offset < len(data):
        if offset + 16 > len(data):
            raise PcapFormatError(f"{path}: truncated packet record header")
        ts_sec, ts_usec, incl_len, _orig = struct.unpack_from(endian + "IIII",
                                                              data, offset)
        offset += 16
        if offset + incl_len > len(data):
            raise PcapFormatError(f"{path}: truncated packet body")
        frame = data[offset:offset + incl_len]
        offset += incl_len
        pkt = _decode_frame(frame, ts_sec * 1_000_000 + ts_usec)
        if pkt is None:
            report.skipped_packets += 1
            continue
        yield pkt


def _decode_frame(frame: bytes, ts_us: int) -> _Packet | None:
    if len(frame) < 14:
        return None
    (ethertype,) = struct.unpack_from(">H", frame, 12)
    if ethertype == ETHERTYPE_IPV4:
        ip = frame[14:]
        if len(ip) < 20:
            return None
        ihl = (ip[0] & 0x0F) * 4
        total_len = struct.unpack_from(">H", ip, 2)[0]
        proto = ip[9]
        if proto != 6 or len(ip) < total_len or total_len < ihl:
            return None
        src = socket.inet_ntoa(ip[12:16])
        dst = socket.inet_ntoa(ip[16:20])
        tcp = ip[ihl:total_len]
    elif ethertype == ETHERTYPE_IPV6:
        ip = frame[14:]
        if len(ip) < 40:
            return None
        payload_len = struct.unpack_from(">H", ip, 4)[0]
        if ip[6] != 6 or len(ip) < 40 + payload_len:  # next header must be TCP
            return None
        src = socket.inet_ntop(socket.AF_INET6, ip[8:24])
        dst = socket.inet_ntop(socket.AF_INET6, ip[24:40])
        tcp = ip[40:40 + payload_len]
    else:
        return None
    if len(tcp) < 20:
        return None
    sport, dport, seq = struct.unpack_from(">HHI", tcp, 0)
    data_off = (tcp[12] >> 4) * 4
    flags = tcp[13]
    if data_off < 20 or data_off > len(tcp):
        return None
    return _Packet(ts_us=ts_us, src_addr=src, src_port=sport, dst_addr=dst,
                   dst_port=dport, seq=seq, syn=bool(flags & 0x02),
                   payload=tcp[data_off:])


# --- reassembly -----------------------------------------------------------------


class _FlowState:
    __slots__ = ("key", "next_seq", "pending", "pending_bytes", "framer",
                 "abandoned")

    def __init__(self, key: FlowKey):
        self.key = key
        self.next_seq: int | None = None
        self.pending: dict[int, tuple[bytes, int]] = {}
        self.pending_bytes = 0
        self.framer = _TlsFramer()
        self.abandoned = False

    def _deliver(self, payload: bytes, ts_us: int) -> None:
        self.framer.feed(payload, ts_us)
        self.next_seq = (self.next_seq + len(payload)) & 0xFFFFFFFF

    def add_segment(self, seq: int, payload: bytes, ts_us: int, syn: bool) -> None:
        if self.abandoned:
            return
        if self.next_seq is None:
            self.next_seq = (seq + 1) & 0xFFFFFFFF if syn else seq
        if syn and not payload:
            return
        if not payload:
            return
        end = seq + len(payload)
        if end <= self.next_seq:
            return  # pure retransmission
        if seq < self.next_seq:
            payload = payload[self.next_seq - seq:]  # partial overlap trim
            seq = self.next_seq
        if seq == self.next_seq:
            self._deliver(payload, ts_us)
            self._flush_pending()
        else:
            if seq not in self.pending or len(self.pending[seq][0]) < len(payload):
                if seq in self.pending:
                    self.pending_bytes -= len(self.pending[seq][0])
                self.pending_bytes += len(payload)
                self.pending[seq] = (payload, ts_us)
            if self.pending_bytes > MAX_REASSEMBLY_BUFFER:
                self.abandoned = True
                self.pending.clear()

    def _flush_pending(self) -> None:
        while self.pending:
            ready = [s for s in self.pending if s <= self.next_seq]
            if not ready:
                return
            for s in sorted(ready):
                payload, ts_us = self.pending.pop(s)
                self.pending_bytes -= len(payload)
                end = s + len(payload)
                if end <= self.next_seq:
                    continue
                if s < self.next_seq:
                    payload = payload[self.next_seq - s:]
                self._deliver(payload, ts_us)


def ingest_pcap_detailed(path, server_port: int = 443) -> tuple[Dataset, IngestReport]:
    """Parse a capture into Traces plus an ingest diagnostics report.

    Only the server-to-client direction (source port equal to
    ``server_port``) is observed. Events are application-data records; the
    first event's gap is zero and later gaps are successive record
    timestamp differences at microsecond resolution.
    """
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"pcap file not found: {path}")
    report = IngestReport()
    flows: dict[FlowKey, _FlowState] = {}
    corrupt: set[FlowKey] = set()
    for pkt in _iter_packets(path, report):
        if pkt.src_port != server_port:
            continue
        key = FlowKey(client_addr=pkt.dst_addr, client_port=pkt.dst_port,
                      server_addr=pkt.src_addr, server_port=pkt.src_port)
        state = flows.get(key)
        if state is None:
            state = flows[key] = _FlowState(key)
        if key in corrupt:
            continue
        try:
            state.add_segment(pkt.seq, pkt.payload, pkt.ts_us, pkt.syn)
        except CorruptStreamError:
            corrupt.add(key)
            state.abandoned = True

    digest = hashlib.sha256(path.read_bytes()).hexdigest()[:16]
    traces: list[Trace] = []
    for i, (key, state) in enumerate(flows.items()):
        report.flows += 1
        if state.abandoned:
            report.abandoned += 1
            continue
        if state.framer.has_partial or state.pending:
            report.truncated_records += 1
        app = [(ts, length) for ts, ctype, length in state.framer.records
               if ctype == CONTENT_TYPE_APPLICATION_DATA]
        if not app:
            continue
        events = [NetworkEvent(dt=0.0, size=app[0][1])]
        for (prev_ts, _), (ts, length) in zip(app, app[1:]):
            events.append(NetworkEvent(dt=max(0, ts - prev_ts) / 1e6, size=length))
        trace_id = f"{path.name}#{i:04d}"
        traces.append(Trace(
            id=trace_id, label=NOISE, prompt_id=trace_id, events=tuple(events),
            meta={"capture_file": path.name, "flow": str(key),
                  "records": str(len(state.framer.records))}))
    dataset = Dataset(traces=tuple(traces),
                      provenance={"source": "pcap", "config_digest": digest,
                                  "seed": "0"})
    return dataset, report


def ingest_pcap(path, server_port: int = 443) -> Dataset:
    dataset, _ = ingest_pcap_detailed(path, server_port)
    return dataset


# --- fixture writer -------------------------------------------------------------


def encode_tls_record(content_type: int, payload: bytes) -> bytes:
    if len(payload) > TLS_MAX_RECORD:
        raise ValueError(f"payload exceeds maximum record size: {len(payload)}")
    return struct.pack(">BHH", content_type, TLS_RECORD_VERSION, len(payload)) + payload


@dataclass
class FlowSpec:
    """Server-to-client byte stream for the fixture writer.

    ``segments`` are (timestamp_seconds, bytes) TCP payload chunks in
    stream order; sequencing, IP and Ethernet framing are synthesized.
    """

    client: tuple[str, int]
    server: tuple[str, int]
    segments: list[tuple[float, bytes]] = field(default_factory=list)
    initial_seq: int = 1000

    @classmethod
    def from_records(cls, client, server, records: list[tuple[float, bytes]],
                     segmenter=None, initial_seq: int = 1000) -> "FlowSpec":
        """Build segments from (timestamp, tls_record_bytes) entries.

        Default is one segment per record; ``segmenter(record_bytes)`` may
        return a list of chunk lengths to split records across segments
        (the last chunk of a record carries its timestamp).
        """
        segments: list[tuple[float, bytes]] = []
        for ts, record in records:
            if segmenter is None:
                segments.append((ts, record))
                continue
            cuts = segmenter(record)
            if sum(cuts) != len(record) or any(c <= 0 for c in cuts):
                raise ValueError("segmenter must partition the record")
            pos = 0
            for c in cuts:
                segments.append((ts, record[pos:pos + c]))
                pos += c
        return cls(client=client, server=server, segments=segments,
                   initial_seq=initial_seq)


def _ipv4_tcp_frame(src, sport, dst, dport, seq, payload) -> bytes:
    tcp = struct.pack(">HHIIBBHHH", sport, dport, seq & 0xFFFFFFFF, 0,
                      5 << 4, 0x18, 65_535, 0, 0) + payload  # PSH|ACK
    total_len = 20 + len(tcp)
    ip = struct.pack(">BBHHHBBH4s4s", 0x45, 0, total_len, 0, 0, 64, 6, 0,
                     socket.inet_aton(src), socket.inet_aton(dst))
    eth = b"\x02\x00\x00\x00\x00\x01" + b"\x02\x00\x00\x00\x00\x02" + \
        struct.pack(">H", ETHERTYPE_IPV4)
    return eth + ip + tcp


def write_pcap(path, flows: list[FlowSpec]) -> None:
    """Write a classic microsecond pcap with the flows' data packets
    interleaved in timestamp order."""
    packets: list[tuple[int, int, bytes]] = []  # (ts_us, arrival index, frame)
    arrival = 0
    for flow in flows:
        seq = flow.initial_seq
        for ts, payload in flow.segments:
            frame = _ipv4_tcp_frame(flow.server[0], flow.server[1],
                                    flow.client[0], flow.client[1], seq, payload)
            packets.append((int(round(ts * 1e6)), arrival, frame))
            arrival += 1
            seq += len(payload)
    packets.sort(key=lambda p: (p[0], p[1]))
    with Path(path).open("wb") as fh:
        fh.write(struct.pack("<IHHiIII", PCAP_MAGIC, 2, 4, 0, 0, 65_535,
                             LINKTYPE_ETHERNET))
        for ts_us, _, frame in packets:
            fh.write(struct.pack("<IIII", ts_us // 1_000_000, ts_us % 1_000_000,
                                 len(frame), len(frame)))
            fh.write(frame)


def dataset_to_pcap(dataset: Dataset, path, server_port: int = 443,
                    base_time: float = 1_700_000_000.0,
                    flow_spacing: float = 10.0, segmenter=None) -> None:
    """Render each trace as one application-data flow for round-trip tests."""
    flows = []
    for i, trace in enumerate(dataset):
        t = base_time + i * flow_spacing
        records = []
        for ev in trace.events:
            t += ev.dt
            records.append((t, encode_tls_record(CONTENT_TYPE_APPLICATION_DATA,
                                                 b"\x00" * ev.size)))
        flows.append(FlowSpec.from_records(
            client=("10.0.0.2", 40_000 + i), server=("192.0.2.1", server_port),
            records=records, segmenter=segmenter))
    write_pcap(path, flows)
