import json
import socket

import dpkt
import pytest

from psmscope.errors import ModelFileError, TraceError
from psmscope.models import Direction, KnownProtocolModel, RawPacket, Signature, Transport
from psmscope.services import ingest


def packet(ts, src, sport, dst, dport, payload=b"x", transport=Transport.TCP):
    return RawPacket(
        timestamp=ts, src=src, dst=dst, sport=sport, dport=dport, transport=transport, payload=payload
    )


def write_jsonl(path, records):
    path.write_text("".join(json.dumps(r) + "\n" for r in records), encoding="utf-8")
    return path


def frame(src, dst, segment, proto):
    ip = dpkt.ip.IP(src=socket.inet_aton(src), dst=socket.inet_aton(dst), p=proto, data=segment)
    ip.len = len(ip)
    return bytes(dpkt.ethernet.Ethernet(type=dpkt.ethernet.ETH_TYPE_IP, data=ip))


def udp(sport, dport, payload):
    return dpkt.udp.UDP(sport=sport, dport=dport, ulen=8 + len(payload), data=payload)


def write_pcap(path, frames):
    with path.open("wb") as handle:
        writer = dpkt.pcap.Writer(handle)
        for ts, data in frames:
            writer.writepkt(data, ts=ts)
    return path


class TestLoadTrace:
    def test_empty_file(self, tmp_path):
        path = tmp_path / "empty.jsonl"
        path.write_bytes(b"")
        assert ingest.load_trace(path) == []

    def test_jsonl_keeps_file_order(self, tmp_path):
        path = write_jsonl(
            tmp_path / "t.jsonl",
            [
                {"ts": 2.0, "src": "10.0.0.1:1000", "dst": "10.0.0.2:9000", "proto": "tcp", "payload_hex": "aa"},
                {"ts": 1.0, "src": "10.0.0.2:9000", "dst": "10.0.0.1:1000", "proto": "tcp", "payload_hex": ""},
                {"ts": 3.0, "src": "10.0.0.3:53", "dst": "10.0.0.4:5353", "proto": "udp", "payload_hex": "0102"},
            ],
        )
        packets = ingest.load_trace(path, "jsonl")
        assert [p.timestamp for p in packets] == [2.0, 1.0, 3.0]
        assert packets[0].payload == b"\xaa"
        assert packets[1].payload == b""
        assert packets[2].transport == Transport.UDP
        assert (packets[2].src, packets[2].sport) == ("10.0.0.3", 53)

    def test_malformed_record_names_index(self, tmp_path):
        path = tmp_path / "bad.jsonl"
        path.write_text(
            '{"ts": 1.0, "src": "10.0.0.1:1", "dst": "10.0.0.2:2", "proto": "tcp", "payload_hex": "00"}\n'
            '{"ts": 1.0, "src": "10.0.0.1:1", "dst": "10.0.0.2:2", "proto": "sctp", "payload_hex": "00"}\n',
            encoding="utf-8",
        )
        with pytest.raises(TraceError, match="record 1"):
            ingest.load_trace(path)

    @pytest.mark.parametrize(
        "record",
        [
            {"ts": 1.0, "src": "host:1", "dst": "10.0.0.2:2", "proto": "tcp"},
            {"ts": 1.0, "src": "10.0.0.1:70000", "dst": "10.0.0.2:2", "proto": "tcp"},
            {"ts": 1.0, "src": "10.0.0.1:1", "dst": "10.0.0.2:2", "proto": "tcp", "payload_hex": "ABZZ"},
        ],
    )
    def test_invalid_fields(self, tmp_path, record):
        with pytest.raises(TraceError, match="record 0"):
            ingest.load_trace(write_jsonl(tmp_path / "t.jsonl", [record]))

    def test_missing_file_names_path(self, tmp_path):
        with pytest.raises(TraceError, match="missing.jsonl"):
            ingest.load_trace(tmp_path / "missing.jsonl")

    def test_pcap_udp_datagram(self, tmp_path):
        path = write_pcap(
            tmp_path / "one.pcap",
            [(1.5, frame("10.0.0.1", "10.0.0.2", udp(5000, 6000, b"\x01\x02\x03\x04"), dpkt.ip.IP_PROTO_UDP))],
        )
        packets = ingest.load_trace(path, "pcap")
        assert len(packets) == 1
        assert packets[0].payload == b"\x01\x02\x03\x04"
        assert packets[0].transport == Transport.UDP
        assert (packets[0].source, packets[0].destination) == ("10.0.0.1:5000", "10.0.0.2:6000")
        assert packets[0].timestamp == pytest.approx(1.5)

    def test_pcap_tcp_and_skipped_protocols(self, tmp_path):
        tcp = dpkt.tcp.TCP(sport=40000, dport=4433, data=b"\x16\x03\x03")
        icmp = b"\x08\x00\xf7\xff\x00\x00\x00\x00"
        path = write_pcap(
            tmp_path / "mixed.pcap",
            [
                (1.0, frame("10.0.0.1", "10.0.0.2", icmp, dpkt.ip.IP_PROTO_ICMP)),
                (2.0, frame("10.0.0.1", "10.0.0.2", tcp, dpkt.ip.IP_PROTO_TCP)),
            ],
        )
        packets = ingest.load_trace(path, "pcap")
        assert len(packets) == 1
        assert packets[0].transport == Transport.TCP
        assert packets[0].payload == b"\x16\x03\x03"

    def test_not_a_pcap(self, tmp_path):
        path = tmp_path / "junk.pcap"
        path.write_bytes(b"\x00" * 64)
        with pytest.raises(TraceError, match="junk.pcap"):
            ingest.load_trace(path, "pcap")

    def test_write_then_load(self, tmp_path):
        packets = [
            packet(0.5, "10.0.0.1", 1000, "10.0.0.2", 2000, b"\x00\xff"),
            packet(0.75, "10.0.0.2", 2000, "10.0.0.1", 1000, b"", Transport.UDP),
        ]
        path = tmp_path / "rt.jsonl"
        ingest.write_trace(path, packets)
        assert ingest.load_trace(path) == packets


class TestKnownModels:
    def test_no_models_keeps_non_empty(self):
        packets = [packet(0, "10.0.0.1", 1, "10.0.0.2", 2, b"a"), packet(1, "10.0.0.1", 1, "10.0.0.2", 2, b"")]
        assert ingest.filter_known(packets, []) == packets[:1]

    def test_port_rule(self):
        dns = KnownProtocolModel(name="dns", ports=[53])
        kept = packet(0, "10.0.0.1", 40000, "10.0.0.2", 9999)
        packets = [packet(0, "10.0.0.1", 40000, "10.0.0.2", 53), kept]
        assert ingest.filter_known(packets, [dns]) == [kept]

    def test_signature_rule(self):
        tls = KnownProtocolModel(name="tls", signatures=[Signature(offset=0, bytes_hex="1603")])
        claimed = packet(0, "10.0.0.1", 1, "10.0.0.2", 2, b"\x16\x03\x03")
        shifted = packet(0, "10.0.0.1", 1, "10.0.0.2", 2, b"\x00\x16\x03")
        assert ingest.filter_known([claimed, shifted], [tls]) == [shifted]

    def test_label_known_first_match_wins(self):
        models = [
            KnownProtocolModel(name="a", ports=[80]),
            KnownProtocolModel(name="b", signatures=[Signature(offset=0, bytes_hex="47")]),
        ]
        packets = [
            packet(0, "10.0.0.1", 1, "10.0.0.2", 80, b"G"),
            packet(0, "10.0.0.1", 1, "10.0.0.2", 81, b"G"),
            packet(0, "10.0.0.1", 1, "10.0.0.2", 82, b"H"),
        ]
        assert ingest.label_known(packets, models) == {"a": 1, "b": 1}

    def test_load_bundled_model_file(self):
        from importlib import resources

        with resources.as_file(resources.files("psmscope.data") / "known_models.json") as path:
            models = ingest.load_known_models(path)
        assert [m.name for m in models] == ["dns", "ntp", "mdns", "http"]
        assert models[3].matches(packet(0, "10.0.0.1", 1, "10.0.0.2", 9, b"GET / HTTP/1.1"))

    def test_bad_model_file(self, tmp_path):
        path = tmp_path / "models.json"
        path.write_text('[{"name": "x", "signatures": [{"offset": -1, "bytes_hex": "00"}]}]', encoding="utf-8")
        with pytest.raises(ModelFileError):
            ingest.load_known_models(path)
        with pytest.raises(ModelFileError, match="absent.json"):
            ingest.load_known_models(tmp_path / "absent.json")


class TestSlicing:
    def test_single_flow(self):
        packets = [
            packet(i, "10.0.0.1" if i % 2 == 0 else "10.0.0.2", 1000 if i % 2 == 0 else 80,
                   "10.0.0.2" if i % 2 == 0 else "10.0.0.1", 80 if i % 2 == 0 else 1000, bytes([i + 1]))
            for i in range(5)
        ]
        sessions = ingest.slice_sessions(packets)
        assert len(sessions) == 1
        assert [m.payload for m in sessions[0].messages] == [bytes([i + 1]) for i in range(5)]
        assert [m.index for m in sessions[0].messages] == list(range(5))
        assert sessions[0].key == "tcp:10.0.0.1:1000-10.0.0.2:80"

    def test_interleaved_flows(self):
        a1 = packet(1, "10.0.0.1", 1000, "10.0.0.9", 80, b"a1")
        b1 = packet(2, "10.0.0.2", 1000, "10.0.0.9", 80, b"b1")
        a2 = packet(3, "10.0.0.9", 80, "10.0.0.1", 1000, b"a2")
        b2 = packet(4, "10.0.0.9", 80, "10.0.0.2", 1000, b"b2")
        sessions = ingest.slice_sessions([a1, b1, a2, b2])
        assert [[m.payload for m in s.messages] for s in sessions] == [[b"a1", b"a2"], [b"b1", b"b2"]]

    def test_initiator_is_first_sender(self):
        packets = [
            packet(1, "10.0.0.5", 5000, "10.0.0.1", 1000, b"q"),
            packet(2, "10.0.0.1", 1000, "10.0.0.5", 5000, b"r"),
            packet(3, "10.0.0.5", 5000, "10.0.0.1", 1000, b"q"),
        ]
        (session,) = ingest.slice_sessions(packets)
        assert [m.direction for m in session.messages] == [
            Direction.INITIATOR,
            Direction.RESPONDER,
            Direction.INITIATOR,
        ]

    def test_order_by_timestamp_then_capture(self):
        packets = [
            packet(2.0, "10.0.0.1", 1, "10.0.0.2", 2, b"late"),
            packet(1.0, "10.0.0.2", 2, "10.0.0.1", 1, b"early"),
            packet(2.0, "10.0.0.1", 1, "10.0.0.2", 2, b"tie"),
        ]
        (session,) = ingest.slice_sessions(packets)
        assert [m.payload for m in session.messages] == [b"early", b"late", b"tie"]
        assert session.messages[0].direction == Direction.INITIATOR
        assert session.messages[0].source == "10.0.0.2:2"

    def test_transport_separates_sessions(self):
        packets = [
            packet(0, "10.0.0.1", 1, "10.0.0.2", 2, b"t"),
            packet(1, "10.0.0.1", 1, "10.0.0.2", 2, b"u", Transport.UDP),
        ]
        assert len(ingest.slice_sessions(packets)) == 2

    def test_partition_and_direction_consistency(self, rng):
        hosts = [("10.0.0.1", 1000), ("10.0.0.2", 80), ("10.0.0.3", 2000), ("10.0.0.4", 443)]
        for _ in range(100):
            packets = []
            for ts in range(int(rng.integers(1, 40))):
                i, j = rng.choice(len(hosts), size=2, replace=False)
                payload = bytes(rng.integers(0, 256, size=int(rng.integers(0, 3)), dtype="uint8"))
                packets.append(packet(float(rng.integers(0, 10)), *hosts[i], *hosts[j], payload))
            sessions = ingest.slice_sessions(packets)
            assert sum(len(s.messages) for s in sessions) == sum(1 for p in packets if p.payload)
            for session in sessions:
                by_source = {}
                for message in session.messages:
                    assert by_source.setdefault(message.source, message.direction) == message.direction
                    assert message.session_key == session.key
            assert ingest.slice_sessions(packets) == sessions
