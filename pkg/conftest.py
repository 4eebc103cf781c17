"""Shared pytest fixtures."""
from __future__ import annotations

import numpy as np
import pytest

from psmscope.models import FormatTemplate, ProtocolSpec, Psm, PsmState, PsmTransition, Role
from psmscope.services import synth


def machine(states: dict[str, Role], edges: list[tuple[str, str, str | None, float]]) -> Psm:
    """Psm from ``{id: role}`` and ``(from, to, label, p)`` tuples."""
    return Psm(
        states=[PsmState(id=sid, role=role) for sid, role in states.items()],
        transitions=[
            PsmTransition(source=s, target=t, label=label, p=p) for s, t, label, p in edges
        ],
    )


@pytest.fixture
def rng() -> np.random.Generator:
    return np.random.default_rng(1234)


@pytest.fixture
def pingpong_spec() -> ProtocolSpec:
    """Two formats, always ping then pong."""
    return ProtocolSpec(
        name="pingpong",
        formats=[
            FormatTemplate(name="ping", role=Role.CLIENT, magic_hex="5049", filler_len_range=(2, 4)),
            FormatTemplate(name="pong", role=Role.SERVER, magic_hex="504f", filler_len_range=(2, 4)),
        ],
        psm=machine(
            {"start": Role.START, "ping": Role.CLIENT, "pong": Role.SERVER, "end": Role.END},
            [
                ("start", "ping", "ping", 1.0),
                ("ping", "pong", "pong", 1.0),
                ("pong", "end", None, 1.0),
            ],
        ),
        session_len=(2, 2),
        server_port=7000,
    )


@pytest.fixture(scope="session")
def small_corpus(tmp_path_factory: pytest.TempPathFactory):
    """Both bundled protocols, 30 sessions each, as ``(trace, truth)`` paths."""
    out = tmp_path_factory.mktemp("corpus")
    specs = [synth.bundled_spec(name) for name in synth.BUNDLED_SPECS]
    return synth.generate_corpus(specs, 30, 0.02, seed=3, out_dir=out)
