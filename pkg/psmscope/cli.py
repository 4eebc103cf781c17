"""Command-line front end: gen, infer, eval, export-dot and sweep-ms."""
from __future__ import annotations

import argparse
import json
import sys
from collections.abc import Sequence
from pathlib import Path
from typing import Any

import structlog

from psmscope import __version__, configure_logging
from psmscope.config import TraceFormat, load_settings
from psmscope.errors import PsmError, PsmScopeError, SpecError
from psmscope.models import Psm
from psmscope.services import artifacts, pipeline, synth
from psmscope.services.dot import write_dot
from psmscope.services.mfi import DEFAULT_SWEEP

logger = structlog.get_logger()


def _csv(value: str) -> list[str]:
    return [part.strip() for part in value.split(",") if part.strip()]


def _floats(value: str) -> list[float]:
    try:
        return [float(part) for part in _csv(value)]
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"not a comma-separated list of numbers: {value!r}") from exc


def _add_trace_args(p: argparse.ArgumentParser) -> None:
    p.add_argument("--trace", type=Path, required=True, help="Trace file (JSONL or pcap)")
    p.add_argument(
        "--format",
        dest="trace_format",
        choices=[f.value for f in TraceFormat],
        default=None,
        help="Trace format (default: pcap for .pcap files, else jsonl)",
    )
    p.add_argument("--known", type=Path, default=None, help="Known-protocol model file (JSON)")
    p.add_argument("--config", type=Path, default=None, help="JSON config file")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="psmscope",
        description="Infer protocol state machines from mixed unknown-protocol traces",
    )
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument(
        "--log-level", default="info", choices=["debug", "info", "warning", "error"]
    )
    parser.add_argument("--log-json", action="store_true", help="Emit JSON log lines")
    sub = parser.add_subparsers(dest="command", required=True)

    gen = sub.add_parser("gen", help="Generate a labelled synthetic trace")
    gen.add_argument(
        "--specs",
        type=_csv,
        default=list(synth.BUNDLED_SPECS),
        help="Comma-separated protocol spec files or bundled names (default: tlsish,smtpish)",
    )
    gen.add_argument("--sessions", type=int, default=60, help="Sessions per spec (default: 60)")
    gen.add_argument("--noise", type=float, default=0.02, help="Noise message rate (default: 0.02)")
    gen.add_argument("--seed", type=int, default=0)
    gen.add_argument("--out", type=Path, required=True, help="Output directory")

    infer = sub.add_parser("infer", help="Run the full inference pipeline")
    _add_trace_args(infer)
    infer.add_argument("--out", type=Path, required=True, help="Artifact directory")
    infer.add_argument("--truth", type=Path, default=None, help="Truth file; writes report.json")
    infer.add_argument("--ms", type=float, default=None, help="Minimum support")
    infer.add_argument("--seed", type=int, default=None)
    infer.add_argument("--t-ps", type=float, default=None)
    infer.add_argument("--t-pt", type=float, default=None)
    infer.add_argument("--workers", type=int, default=None, help="Threads for the DBSCAN grid")

    ev = sub.add_parser("eval", help="Score a finished run against truth")
    ev.add_argument("--artifacts", type=Path, required=True, help="Artifact directory of a run")
    ev.add_argument("--truth", type=Path, required=True)

    dot = sub.add_parser("export-dot", help="Render a PSM JSON file as Graphviz DOT")
    dot.add_argument("--psm", type=Path, required=True)
    dot.add_argument("--out", type=Path, required=True)

    sweep = sub.add_parser("sweep-ms", help="Score candidate minimum supports by format RI")
    _add_trace_args(sweep)
    sweep.add_argument("--truth", type=Path, required=True)
    sweep.add_argument(
        "--values", type=_floats, default=list(DEFAULT_SWEEP), help="Comma-separated ms values"
    )
    sweep.add_argument("--out", type=Path, default=None, help="Also write the points to this file")
    return parser


def _trace_format(args: argparse.Namespace) -> str | None:
    if args.trace_format is not None:
        return args.trace_format
    if args.trace.suffix in (".pcap", ".cap"):
        return TraceFormat.PCAP.value
    return None


def _print_json(data: Any) -> None:
    print(json.dumps(data, indent=2))


def cmd_gen(args: argparse.Namespace) -> None:
    if args.sessions < 1:
        raise SpecError("--sessions must be at least 1")
    specs = [synth.resolve_spec(ref) for ref in args.specs]
    trace, truth = synth.generate_corpus(specs, args.sessions, args.noise, args.seed, args.out)
    _print_json({"trace": str(trace), "truth": str(truth)})


def cmd_infer(args: argparse.Namespace) -> None:
    settings = load_settings(
        args.config,
        {
            "trace": args.trace,
            "trace_format": _trace_format(args),
            "known_models": args.known,
            "truth": args.truth,
            "output_dir": args.out,
            "seed": args.seed,
            "mfi": {"ms": args.ms},
            "acda": {"workers": args.workers},
            "thresholds": {"t_ps": args.t_ps, "t_pt": args.t_pt},
        },
    )
    result = pipeline.run_pipeline(settings)
    summary: dict[str, Any] = {
        "output_dir": str(result.output_dir),
        "formats": result.pfc.g,
        "protocols": result.sessions.k,
    }
    if result.report is not None:
        summary["report"] = str(result.output_dir / artifacts.REPORT_FILE)
    _print_json(summary)


def cmd_eval(args: argparse.Namespace) -> None:
    _print_json(pipeline.evaluate_artifacts(args.artifacts, args.truth))


def cmd_export_dot(args: argparse.Namespace) -> None:
    machine = artifacts.load_model(args.psm, Psm, PsmError)
    args.out.parent.mkdir(parents=True, exist_ok=True)
    write_dot(machine, args.out, name=args.psm.stem)
    logger.info("dot_exported", psm=str(args.psm), out=str(args.out), states=len(machine.states))


def cmd_sweep_ms(args: argparse.Namespace) -> None:
    settings = load_settings(
        args.config,
        {
            "trace": args.trace,
            "trace_format": _trace_format(args),
            "known_models": args.known,
            "truth": args.truth,
        },
    )
    points = [p.model_dump() for p in pipeline.run_sweep(settings, args.values)]
    if args.out is not None:
        args.out.parent.mkdir(parents=True, exist_ok=True)
        artifacts.dump_json(args.out, points)
    _print_json(points)


COMMANDS = {
    "gen": cmd_gen,
    "infer": cmd_infer,
    "eval": cmd_eval,
    "export-dot": cmd_export_dot,
    "sweep-ms": cmd_sweep_ms,
}


def main(argv: Sequence[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    configure_logging(args.log_level, json=args.log_json)
    try:
        COMMANDS[args.command](args)
    except PsmScopeError as exc:
        logger.error("stage_failed", stage=exc.stage, error=str(exc), exit_code=exc.exit_code)
        print(f"psmscope: {exc}", file=sys.stderr)
        return exc.exit_code
    except Exception as exc:
        logger.exception("unhandled_exception", command=args.command, error=str(exc))
        return 1
    return 0
