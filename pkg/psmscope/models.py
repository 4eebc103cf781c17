"""Shared domain types. Everything that crosses a stage boundary lives here."""
from __future__ import annotations

from collections import deque
from enum import Enum
from typing import Any

import numpy as np
from pydantic import (
    BaseModel,
    ConfigDict,
    Field,
    computed_field,
    field_validator,
    model_validator,
)

NOISE = -1
START = -2
END = -3


class Transport(str, Enum):
    TCP = "tcp"
    UDP = "udp"


class Direction(str, Enum):
    INITIATOR = "initiator"
    RESPONDER = "responder"


class Role(str, Enum):
    CLIENT = "client"
    SERVER = "server"
    START = "start"
    END = "end"


class RawPacket(BaseModel):
    model_config = ConfigDict(frozen=True)

    timestamp: float
    src: str
    dst: str
    sport: int = Field(ge=0, le=65535)
    dport: int = Field(ge=0, le=65535)
    transport: Transport
    payload: bytes = b""

    @property
    def source(self) -> str:
        return f"{self.src}:{self.sport}"

    @property
    def destination(self) -> str:
        return f"{self.dst}:{self.dport}"


class Message(BaseModel):
    """One unknown-protocol payload placed inside its session."""

    model_config = ConfigDict(frozen=True)

    session_key: str
    direction: Direction
    index: int = Field(ge=0)
    payload: bytes = Field(min_length=1)
    timestamp: float
    source: str
    label: str | None = None


class Session(BaseModel):
    model_config = ConfigDict(frozen=True)

    key: str
    messages: list[Message]


class Signature(BaseModel):
    model_config = ConfigDict(frozen=True)

    offset: int = Field(ge=0)
    bytes_hex: str = Field(min_length=2)

    @field_validator("bytes_hex")
    @classmethod
    def _valid_hex(cls, value: str) -> str:
        bytes.fromhex(value)
        return value.lower()

    def matches(self, payload: bytes) -> bool:
        needle = bytes.fromhex(self.bytes_hex)
        return payload[self.offset : self.offset + len(needle)] == needle


class KnownProtocolModel(BaseModel):
    """Declarative known-protocol description: a port rule or a byte signature claims a packet."""

    model_config = ConfigDict(frozen=True)

    name: str
    ports: list[int] = []
    signatures: list[Signature] = []

    def matches(self, packet: RawPacket) -> bool:
        if packet.sport in self.ports or packet.dport in self.ports:
            return True
        return any(sig.matches(packet.payload) for sig in self.signatures)


class FrequentItem(BaseModel):
    model_config = ConfigDict(frozen=True)

    bytes_hex: str
    support: float = Field(ge=0.0, le=1.0)

    @property
    def pattern(self) -> bytes:
        return bytes.fromhex(self.bytes_hex)

    @classmethod
    def of(cls, pattern: bytes, support: float) -> FrequentItem:
        return cls(bytes_hex=pattern.hex(), support=support)


class AcdaIteration(BaseModel):
    model_config = ConfigDict(frozen=True)

    iteration: int
    eps_step: float
    minpts_step: int
    best_eps: float | None
    best_minpts: int | None
    best_sc: float | None
    imp: float


class PfcLabeling(BaseModel):
    """Protocol format clusters: one label per message, ``NOISE`` for unclustered ones."""

    model_config = ConfigDict(frozen=True, populate_by_name=True)

    labels: list[int]
    best_eps: float = Field(alias="eps")
    best_minpts: int = Field(alias="minpts")
    best_sc: float | None = Field(default=None, alias="sc")
    history: list[AcdaIteration] = []

    @computed_field  # type: ignore[prop-decorator]
    @property
    def g(self) -> int:
        return len({label for label in self.labels if label != NOISE})


class SessionSequence(BaseModel):
    model_config = ConfigDict(frozen=True)

    session_key: str
    tokens: list[int]


class SessionClustering(BaseModel):
    model_config = ConfigDict(frozen=True)

    labels: list[int]
    k: int
    medoids: list[int]
    sc: float | None
    k_scores: dict[int, float | None] = {}


class SessionsArtifact(SessionClustering):
    sessions: list[SessionSequence]
    known: dict[str, int] = {}


class PsmState(BaseModel):
    model_config = ConfigDict(frozen=True)

    id: str
    role: Role


class PsmTransition(BaseModel):
    model_config = ConfigDict(frozen=True, populate_by_name=True)

    source: str = Field(alias="from")
    target: str = Field(alias="to")
    label: str | None = None
    p: float = Field(gt=0.0, le=1.0)


class Psm(BaseModel):
    """Probabilistic protocol state machine over client and server states."""

    model_config = ConfigDict(frozen=True, populate_by_name=True)

    states: list[PsmState]
    transitions: list[PsmTransition]
    meta: dict[str, Any] = {}

    @model_validator(mode="after")
    def _check_graph(self) -> Psm:
        roles = {state.id: state.role for state in self.states}
        if len(roles) != len(self.states):
            raise ValueError("duplicate state id")
        for edge in self.transitions:
            for end in (edge.source, edge.target):
                if end not in roles:
                    raise ValueError(f"transition endpoint {end!r} is not a state")
            if roles[edge.target] == Role.START:
                raise ValueError("start state cannot have incoming transitions")
            if roles[edge.source] == Role.END:
                raise ValueError("end state cannot have outgoing transitions")
        return self

    def state(self, role: Role) -> PsmState | None:
        return next((s for s in self.states if s.role == role), None)

    @property
    def inner_states(self) -> list[PsmState]:
        return [s for s in self.states if s.role in (Role.CLIENT, Role.SERVER)]

    @property
    def inner_transitions(self) -> list[PsmTransition]:
        inner = {s.id for s in self.inner_states}
        return [t for t in self.transitions if t.source in inner and t.target in inner]

    def outgoing(self, state_id: str) -> list[PsmTransition]:
        return [t for t in self.transitions if t.source == state_id]

    def has_path_to_end(self) -> bool:
        start, end = self.state(Role.START), self.state(Role.END)
        if start is None or end is None:
            return False
        seen, queue = {start.id}, deque([start.id])
        while queue:
            current = queue.popleft()
            if current == end.id:
                return True
            for edge in self.outgoing(current):
                if edge.target not in seen:
                    seen.add(edge.target)
                    queue.append(edge.target)
        return False

    def walk(self, rng: np.random.Generator, max_steps: int = 10_000) -> list[PsmTransition]:
        """Random walk from Start until End, picking each edge by its probability."""
        start, end = self.state(Role.START), self.state(Role.END)
        if start is None or end is None:
            raise ValueError("machine has no start or end state")
        path: list[PsmTransition] = []
        current = start.id
        while current != end.id:
            edges = self.outgoing(current)
            if not edges or len(path) >= max_steps:
                raise ValueError(f"walk stuck at state {current!r}")
            weights = np.array([e.p for e in edges], dtype=float)
            edge = edges[int(rng.choice(len(edges), p=weights / weights.sum()))]
            path.append(edge)
            current = edge.target
        return path


class TruthSession(BaseModel):
    model_config = ConfigDict(frozen=True)

    key: str
    protocol: str
    formats: list[str]


class GroundTruth(BaseModel):
    sessions: list[TruthSession]
    protocols: dict[str, Psm] = {}


class FormatTemplate(BaseModel):
    model_config = ConfigDict(frozen=True)

    name: str
    role: Role
    magic_hex: str
    filler_len_range: tuple[int, int]
    filler_alphabet_hex: str | None = None
    length_field: bool = False
    trailer_hex: str = ""

    @field_validator("role")
    @classmethod
    def _endpoint_role(cls, value: Role) -> Role:
        if value not in (Role.CLIENT, Role.SERVER):
            raise ValueError("format role must be client or server")
        return value

    @model_validator(mode="after")
    def _check_template(self) -> FormatTemplate:
        bytes.fromhex(self.magic_hex)
        bytes.fromhex(self.trailer_hex)
        if self.filler_alphabet_hex is not None and not bytes.fromhex(self.filler_alphabet_hex):
            raise ValueError("filler alphabet is empty")
        low, high = self.filler_len_range
        if not 0 <= low <= high:
            raise ValueError("filler_len_range must satisfy 0 <= min <= max")
        if not self.magic_hex and high == 0 and not self.trailer_hex:
            raise ValueError(f"format {self.name!r} renders empty messages")
        return self


class ProtocolSpec(BaseModel):
    model_config = ConfigDict(frozen=True)

    name: str
    formats: list[FormatTemplate] = Field(min_length=1)
    psm: Psm
    session_len: tuple[int, int]
    server_port: int = Field(4000, ge=1, le=65535)
    transport: Transport = Transport.TCP

    @model_validator(mode="after")
    def _check_spec(self) -> ProtocolSpec:
        names = {f.name for f in self.formats}
        if len(names) != len(self.formats):
            raise ValueError("duplicate format name")
        for edge in self.psm.transitions:
            if edge.label is not None and edge.label not in names:
                raise ValueError(f"transition label {edge.label!r} is not a declared format")
        for state in self.psm.inner_states:
            if state.id not in names:
                raise ValueError(f"state {state.id!r} is not a declared format")
        low, high = self.session_len
        if not 1 <= low <= high:
            raise ValueError("session_len must satisfy 1 <= min <= max")
        return self

    def format(self, name: str) -> FormatTemplate:
        return next(f for f in self.formats if f.name == name)
