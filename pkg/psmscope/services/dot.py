"""Graphviz DOT rendering of protocol state machines."""
from __future__ import annotations

from pathlib import Path

from jinja2 import Environment, PackageLoader, StrictUndefined

from psmscope.models import Psm, PsmTransition

SHAPES = {"client": "box", "server": "ellipse", "start": "circle", "end": "doublecircle"}

_env = Environment(
    loader=PackageLoader("psmscope", "templates"),
    undefined=StrictUndefined,
    trim_blocks=True,
    lstrip_blocks=True,
    keep_trailing_newline=True,
)


def edge_label(edge: PsmTransition) -> str:
    if edge.label is None:
        return f"p={edge.p:.2f}"
    return f"format:{edge.label} p={edge.p:.2f}"


def render_dot(psm: Psm, name: str = "psm") -> str:
    return _env.get_template("psm.dot.j2").render(
        name=name,
        states=psm.states,
        transitions=psm.transitions,
        shapes=SHAPES,
        edge_label=edge_label,
    )


def write_dot(psm: Psm, path: str | Path, name: str | None = None) -> Path:
    path = Path(path)
    path.write_text(render_dot(psm, name or path.stem), encoding="utf-8")
    return path
