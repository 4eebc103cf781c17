"""Labelled synthetic traces rendered from reference protocol machines."""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

import numpy as np
import structlog
from pydantic import ValidationError

from psmscope.errors import EvaluationError, SpecError
from psmscope.models import (
    Direction,
    FormatTemplate,
    GroundTruth,
    Message,
    ProtocolSpec,
    RawPacket,
    Role,
    Session,
    TruthSession,
)
from psmscope.services.ingest import session_key, write_trace

logger = structlog.get_logger()

NOISE_LABEL = "noise"
MAX_WALK_TRIES = 1000
BUNDLED_SPECS = ("tlsish", "smtpish")


def load_spec(path: str | Path) -> ProtocolSpec:
    path = Path(path)
    try:
        spec = ProtocolSpec.model_validate_json(path.read_text(encoding="utf-8"))
    except OSError as exc:
        raise SpecError(f"cannot read protocol spec {path}: {exc.strerror or exc}") from exc
    except ValidationError as exc:
        raise SpecError(f"invalid protocol spec {path}: {exc}") from exc
    if not spec.psm.has_path_to_end():
        raise SpecError(f"protocol spec {spec.name}: machine has no Start to End path")
    return spec


def bundled_spec(name: str) -> ProtocolSpec:
    source = resources.files("psmscope.data").joinpath(f"{name}.json")
    if not source.is_file():
        raise SpecError(f"no bundled protocol spec named {name!r}")
    with resources.as_file(source) as path:
        return load_spec(path)


def resolve_spec(ref: str) -> ProtocolSpec:
    """A spec file path, or the name of a bundled spec."""
    return load_spec(ref) if Path(ref).is_file() else bundled_spec(ref)


def render(template: FormatTemplate, rng: np.random.Generator) -> bytes:
    """Magic, optional 2-byte length of the filler, random filler, trailer."""
    low, high = template.filler_len_range
    size = int(rng.integers(low, high + 1))
    if template.filler_alphabet_hex is None:
        filler = rng.integers(0, 256, size=size, dtype=np.uint8).tobytes()
    else:
        alphabet = np.frombuffer(bytes.fromhex(template.filler_alphabet_hex), dtype=np.uint8)
        filler = alphabet[rng.integers(0, len(alphabet), size=size)].tobytes()
    length = size.to_bytes(2, "big") if template.length_field else b""
    return bytes.fromhex(template.magic_hex) + length + filler + bytes.fromhex(template.trailer_hex)


def walk_formats(spec: ProtocolSpec, rng: np.random.Generator) -> list[str]:
    """Format names along one Start-to-End walk whose length fits ``session_len``."""
    if not spec.psm.has_path_to_end():
        raise SpecError(f"protocol spec {spec.name}: machine has no Start to End path")
    low, high = spec.session_len
    inner = {s.id for s in spec.psm.inner_states}
    for _ in range(MAX_WALK_TRIES):
        try:
            path = spec.psm.walk(rng)
        except ValueError as exc:
            raise SpecError(f"protocol spec {spec.name}: {exc}") from exc
        formats = [edge.label for edge in path if edge.target in inner]
        if low <= len(formats) <= high:
            return formats
    raise SpecError(
        f"protocol spec {spec.name}: no walk of length {low}..{high} in {MAX_WALK_TRIES} tries"
    )


@dataclass
class _Exchange:
    """One rendered message before it becomes a packet."""

    ts: float
    from_client: bool
    payload: bytes
    label: str


@dataclass
class _Flow:
    spec: ProtocolSpec
    client: tuple[str, int]
    server: tuple[str, int]
    exchanges: list[_Exchange] = field(default_factory=list)

    def packets(self) -> list[RawPacket]:
        out = []
        for ex in self.exchanges:
            src, dst = (self.client, self.server) if ex.from_client else (self.server, self.client)
            out.append(
                RawPacket(
                    timestamp=ex.ts,
                    src=src[0],
                    dst=dst[0],
                    sport=src[1],
                    dport=dst[1],
                    transport=self.spec.transport,
                    payload=ex.payload,
                )
            )
        return out


def _sample_flow(
    spec: ProtocolSpec,
    rng: np.random.Generator,
    client: tuple[str, int],
    server: tuple[str, int],
    start: float,
) -> _Flow:
    flow = _Flow(spec=spec, client=client, server=server)
    ts = start
    for name in walk_formats(spec, rng):
        template = spec.format(name)
        flow.exchanges.append(
            _Exchange(
                ts=round(ts, 6),
                from_client=template.role == Role.CLIENT,
                payload=render(template, rng),
                label=name,
            )
        )
        ts += float(rng.uniform(0.001, 0.050))
    return flow


def _to_session(flow: _Flow) -> Session:
    packets = flow.packets()
    key = session_key(packets[0])
    initiator = packets[0].source
    return Session(
        key=key,
        messages=[
            Message(
                session_key=key,
                direction=Direction.INITIATOR if packet.source == initiator else Direction.RESPONDER,
                index=index,
                payload=packet.payload,
                timestamp=packet.timestamp,
                source=packet.source,
                label=ex.label,
            )
            for index, (packet, ex) in enumerate(zip(packets, flow.exchanges))
        ],
    )


def sample_session(
    spec: ProtocolSpec,
    seed: int,
    client: tuple[str, int] = ("10.0.0.2", 40000),
    server: tuple[str, int] | None = None,
) -> Session:
    """One session walked from the reference machine; each message label names its format."""
    rng = np.random.default_rng(seed)
    flow = _sample_flow(spec, rng, client, server or ("192.168.0.1", spec.server_port), 0.0)
    return _to_session(flow)


def _inject_noise(flows: list[_Flow], count: int, rng: np.random.Generator) -> None:
    for _ in range(count):
        flow = flows[int(rng.integers(len(flows)))]
        position = int(rng.integers(1, len(flow.exchanges) + 1))
        before = flow.exchanges[position - 1].ts
        if position < len(flow.exchanges):
            after = flow.exchanges[position].ts
            ts = before + (after - before) * float(rng.uniform(0.1, 0.9))
        else:
            ts = before + float(rng.uniform(0.001, 0.050))
        size = int(rng.integers(8, 41))
        flow.exchanges.insert(
            position,
            _Exchange(
                ts=round(ts, 9),
                from_client=bool(rng.random() < 0.5),
                payload=rng.integers(0, 256, size=size, dtype=np.uint8).tobytes(),
                label=NOISE_LABEL,
            ),
        )


def build_corpus(
    specs: list[ProtocolSpec], sessions_per_spec: int, noise_rate: float, seed: int
) -> tuple[list[RawPacket], GroundTruth]:
    """Interleaved packets of every spec plus aligned truth; nothing touches disk."""
    if not 0.0 <= noise_rate <= 0.2:
        raise SpecError(f"noise rate {noise_rate} outside [0, 0.2]")
    if not specs or sessions_per_spec < 1:
        raise SpecError("need at least one spec and one session per spec")
    rng = np.random.default_rng(seed)
    horizon = 0.5 * len(specs) * sessions_per_spec
    flows = []
    for index, spec in enumerate(specs):
        server = (f"192.168.{index}.1", spec.server_port)
        for i in range(sessions_per_spec):
            client = (f"10.{index + 1}.{i // 250}.{i % 250 + 1}", 40000 + i)
            flows.append(_sample_flow(spec, rng, client, server, float(rng.uniform(0.0, horizon))))

    clean = sum(len(f.exchanges) for f in flows)
    noise = round(noise_rate * clean)
    _inject_noise(flows, noise, rng)

    packets = sorted(
        (packet for flow in flows for packet in flow.packets()), key=lambda p: p.timestamp
    )
    flows.sort(key=lambda f: f.exchanges[0].ts)
    truth = GroundTruth(
        sessions=[
            TruthSession(
                key=session_key(flow.packets()[0]),
                protocol=flow.spec.name,
                formats=[ex.label for ex in flow.exchanges],
            )
            for flow in flows
        ],
        protocols={spec.name: spec.psm for spec in specs},
    )
    logger.info(
        "corpus_generated",
        specs=[s.name for s in specs],
        sessions=len(flows),
        messages=len(packets),
        noise=noise,
    )
    return packets, truth


def write_truth(path: str | Path, truth: GroundTruth) -> None:
    Path(path).write_text(truth.model_dump_json(by_alias=True, indent=2) + "\n", encoding="utf-8")


def load_truth(path: str | Path) -> GroundTruth:
    path = Path(path)
    try:
        return GroundTruth.model_validate(json.loads(path.read_text(encoding="utf-8")))
    except OSError as exc:
        raise EvaluationError(f"cannot read truth {path}: {exc.strerror or exc}") from exc
    except (json.JSONDecodeError, ValidationError) as exc:
        raise EvaluationError(f"invalid truth file {path}: {exc}") from exc


def generate_corpus(
    specs: list[ProtocolSpec],
    sessions_per_spec: int,
    noise_rate: float,
    seed: int,
    out_dir: str | Path,
) -> tuple[Path, Path]:
    """Write ``trace.jsonl`` and ``truth.json`` into ``out_dir``."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    packets, truth = build_corpus(specs, sessions_per_spec, noise_rate, seed)
    trace_path, truth_path = out / "trace.jsonl", out / "truth.json"
    write_trace(trace_path, packets)
    write_truth(truth_path, truth)
    return trace_path, truth_path
