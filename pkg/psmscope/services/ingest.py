"""Trace loading, known-protocol filtering and session slicing."""
from __future__ import annotations

import ipaddress
import json
from collections import Counter, defaultdict
from pathlib import Path

import dpkt
import structlog
from pydantic import BaseModel, ConfigDict, Field, TypeAdapter, ValidationError, field_validator

from psmscope.config import TraceFormat
from psmscope.errors import ModelFileError, TraceError
from psmscope.models import Direction, KnownProtocolModel, Message, RawPacket, Session, Transport

logger = structlog.get_logger()

_known_models = TypeAdapter(list[KnownProtocolModel])


def split_endpoint(endpoint: str) -> tuple[str, int]:
    """``"10.0.0.1:443"`` -> ``("10.0.0.1", 443)``; the address part must be an IP."""
    addr, sep, port = endpoint.rpartition(":")
    if not sep:
        raise ValueError(f"endpoint {endpoint!r} is not addr:port")
    ipaddress.ip_address(addr)
    number = int(port)
    if not 0 <= number <= 65535:
        raise ValueError(f"port {number} out of range")
    return addr, number


class TraceRecord(BaseModel):
    """One line of a JSONL trace."""

    model_config = ConfigDict(frozen=True)

    ts: float
    src: str
    dst: str
    proto: Transport
    payload_hex: str = Field(default="", pattern=r"^[0-9a-f]*$")

    @field_validator("src", "dst")
    @classmethod
    def _endpoint(cls, value: str) -> str:
        split_endpoint(value)
        return value

    def to_packet(self) -> RawPacket:
        src, sport = split_endpoint(self.src)
        dst, dport = split_endpoint(self.dst)
        return RawPacket(
            timestamp=self.ts,
            src=src,
            dst=dst,
            sport=sport,
            dport=dport,
            transport=self.proto,
            payload=bytes.fromhex(self.payload_hex),
        )

    @classmethod
    def from_packet(cls, packet: RawPacket) -> TraceRecord:
        return cls(
            ts=packet.timestamp,
            src=packet.source,
            dst=packet.destination,
            proto=packet.transport,
            payload_hex=packet.payload.hex(),
        )


def _load_jsonl(path: Path) -> list[RawPacket]:
    packets: list[RawPacket] = []
    with path.open("r", encoding="utf-8") as handle:
        for index, line in enumerate(handle):
            if not line.strip():
                continue
            try:
                packets.append(TraceRecord.model_validate_json(line).to_packet())
            except (ValidationError, ValueError) as exc:
                raise TraceError(f"{path}: malformed record {index}: {exc}") from exc
    return packets


def _decode_frame(ts: float, frame: bytes, index: int) -> RawPacket | None:
    eth = dpkt.ethernet.Ethernet(frame)
    ip = eth.data
    if not isinstance(ip, dpkt.ip.IP):
        return None
    if ip.p not in (dpkt.ip.IP_PROTO_TCP, dpkt.ip.IP_PROTO_UDP):
        return None
    segment = ip.data
    if isinstance(segment, dpkt.tcp.TCP):
        transport = Transport.TCP
    elif isinstance(segment, dpkt.udp.UDP):
        transport = Transport.UDP
    else:
        raise TraceError(f"malformed record {index}: truncated transport header")
    return RawPacket(
        timestamp=float(ts),
        src=str(ipaddress.ip_address(ip.src)),
        dst=str(ipaddress.ip_address(ip.dst)),
        sport=segment.sport,
        dport=segment.dport,
        transport=transport,
        payload=bytes(segment.data),
    )


def _load_pcap(path: Path) -> list[RawPacket]:
    packets: list[RawPacket] = []
    skipped = 0
    with path.open("rb") as handle:
        try:
            reader = dpkt.pcap.Reader(handle)
        except (ValueError, dpkt.dpkt.UnpackError) as exc:
            raise TraceError(f"{path}: not a pcap file: {exc}") from exc
        if reader.datalink() != dpkt.pcap.DLT_EN10MB:
            raise TraceError(f"{path}: unsupported link type {reader.datalink()}")
        for index, (ts, frame) in enumerate(reader):
            try:
                packet = _decode_frame(ts, frame, index)
            except (dpkt.dpkt.UnpackError, ValueError) as exc:
                if isinstance(exc, TraceError):
                    raise TraceError(f"{path}: {exc.args[0]}") from exc
                raise TraceError(f"{path}: malformed record {index}: {exc}") from exc
            if packet is None:
                skipped += 1
                continue
            packets.append(packet)
    if skipped:
        logger.debug("pcap_records_skipped", path=str(path), skipped=skipped)
    return packets


def load_trace(path: str | Path, fmt: TraceFormat | str = TraceFormat.JSONL) -> list[RawPacket]:
    """Read a trace in capture order. Empty-payload packets are kept here."""
    path = Path(path)
    try:
        size = path.stat().st_size
    except OSError as exc:
        raise TraceError(f"cannot read trace {path}: {exc.strerror or exc}") from exc
    if size == 0:
        return []
    fmt = TraceFormat(fmt)
    packets = _load_pcap(path) if fmt == TraceFormat.PCAP else _load_jsonl(path)
    logger.info("trace_loaded", path=str(path), format=fmt.value, packets=len(packets))
    return packets


def write_trace(path: str | Path, packets: list[RawPacket]) -> None:
    with Path(path).open("w", encoding="utf-8") as handle:
        for packet in packets:
            handle.write(TraceRecord.from_packet(packet).model_dump_json() + "\n")


def load_known_models(path: str | Path) -> list[KnownProtocolModel]:
    path = Path(path)
    try:
        raw = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise ModelFileError(f"cannot read known-protocol models {path}: {exc.strerror or exc}") from exc
    try:
        return _known_models.validate_python(json.loads(raw))
    except (json.JSONDecodeError, ValidationError, ValueError) as exc:
        raise ModelFileError(f"invalid known-protocol models in {path}: {exc}") from exc


def label_known(packets: list[RawPacket], models: list[KnownProtocolModel]) -> Counter[str]:
    """Count packets claimed by each model; the first matching model wins."""
    counts: Counter[str] = Counter()
    for packet in packets:
        for model in models:
            if model.matches(packet):
                counts[model.name] += 1
                break
    return counts


def filter_known(packets: list[RawPacket], models: list[KnownProtocolModel]) -> list[RawPacket]:
    """Keep packets that carry payload and that no known model claims."""
    kept = [
        packet
        for packet in packets
        if packet.payload and not any(model.matches(packet) for model in models)
    ]
    logger.info("known_traffic_filtered", packets=len(packets), unknown=len(kept))
    return kept


def _endpoint_order(addr: str, port: int) -> tuple[int, int, int]:
    ip = ipaddress.ip_address(addr)
    return ip.version, int(ip), port


def session_key(packet: RawPacket) -> str:
    """Canonical bidirectional flow key: transport plus the sorted endpoint pair."""
    a, b = sorted(
        [(packet.src, packet.sport), (packet.dst, packet.dport)],
        key=lambda endpoint: _endpoint_order(*endpoint),
    )
    return f"{packet.transport.value}:{a[0]}:{a[1]}-{b[0]}:{b[1]}"


def slice_sessions(packets: list[RawPacket]) -> list[Session]:
    """Group packets into bidirectional sessions ordered by their first packet."""
    flows: dict[str, list[tuple[float, int, RawPacket]]] = defaultdict(list)
    for order, packet in enumerate(packets):
        if not packet.payload:
            continue
        flows[session_key(packet)].append((packet.timestamp, order, packet))

    firsts: list[tuple[float, int, Session]] = []
    for key, entries in flows.items():
        entries.sort(key=lambda entry: (entry[0], entry[1]))
        initiator = entries[0][2].source
        messages = [
            Message(
                session_key=key,
                direction=Direction.INITIATOR if packet.source == initiator else Direction.RESPONDER,
                index=index,
                payload=packet.payload,
                timestamp=ts,
                source=packet.source,
            )
            for index, (ts, _, packet) in enumerate(entries)
        ]
        firsts.append((entries[0][0], entries[0][1], Session(key=key, messages=messages)))

    firsts.sort(key=lambda item: (item[0], item[1]))
    sessions = [session for _, _, session in firsts]
    logger.info("sessions_sliced", sessions=len(sessions), messages=sum(len(s.messages) for s in sessions))
    return sessions


def all_messages(sessions: list[Session]) -> list[Message]:
    """Messages in session order, the row order used by every later stage."""
    return [message for session in sessions for message in session.messages]
