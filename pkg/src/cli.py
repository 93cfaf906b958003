# src/cli.py
"""
Command-line entry point.

  python -m src.cli compile modules/calc.dsl --out build/
  python -m src.cli run scenarios/disruption.toml --out traces/disruption
  python -m src.cli dump-state --system config/system.toml --module modules/calc.dsl:10 --out state.json
  python -m src.cli inject state.json 0200...   (or --hex-file pkt.hex)

Exit codes: 0 ok, 1 other pipeline error, 2 syntax, 3 static check,
4 resource check, 5 placement, 6 scenario / config.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path
from typing import Dict, List, Optional

from src.errors import CheckFailed, ConfigError, PipelineError
from src.settings import configure_logging, load_settings

logger = logging.getLogger(__name__)


def _quota_args(pairs: List[str]) -> Dict[str, int]:
    out = {}
    for p in pairs or []:
        key, _, val = p.partition("=")
        try:
            out[key.strip()] = int(val, 0)
        except ValueError:
            raise ConfigError(f"quota must be key=<integer>, got {p!r}") from None
    return out


def _settings(args):
    settings = load_settings(Path(args.config) if args.config else None)
    if args.cookie is not None:
        settings = settings.model_copy(update={"cookie": args.cookie})
    return settings


# -----------------------
# COMMANDS
# -----------------------
def cmd_compile(args) -> int:
    from src.compiler import compile_module, emit_reconfig_packets
    from src.dsl import load_program, resolve_quota
    from src.frames import to_raw
    from src.utils import _write_json, write_hex_lines

    settings = _settings(args)
    prog = load_program(args.source)
    quota = resolve_quota(_quota_args(args.quota), prog, settings)
    cm = compile_module(prog, quota)
    out = Path(args.out)
    dump = out / f"{prog.name}.json"
    _write_json(dump, cm.to_dict(args.slot))
    packets = emit_reconfig_packets(cm, args.slot, settings.cookie)
    n = write_hex_lines(out / f"{prog.name}.packets.hex", (to_raw(p).data for p in packets))
    print(f"{prog.name}: stages {cm.stage_map}, {n} reconfiguration packets -> {out}")
    return 0


def cmd_run(args) -> int:
    from src.scenario import load_scenario, ScenarioRunner
    from src.utils import JsonlSink, _write_json

    settings = _settings(args)
    loaded = load_scenario(args.scenario)
    out = Path(args.out or Path(settings.trace_dir) / loaded.scenario.name)
    with JsonlSink(out / "trace.jsonl") as trace, JsonlSink(out / "stats.jsonl") as stats:
        report = ScenarioRunner(loaded, settings=settings).run(trace, stats)
    _write_json(out / "report.json", report.to_dict())
    for slot in sorted(report.series):
        t = report.totals(slot)
        print(f"slot {slot}: forwarded {t['forwarded']}, dropped {t['dropped']}")
    for w in report.windows:
        print(f"{w.action} slot {w.slot}: ticks {w.begin}..{w.end} ({w.writes} writes)")
    return 0


def _load_state(path: str):
    from src.pipeline import PipelineState
    from src.utils import _read_json

    if not Path(path).is_file():
        raise ConfigError(f"{path}: no such state file (write one with dump-state)")
    try:
        return PipelineState.from_dict(_read_json(path))
    except (KeyError, TypeError, ValueError, AttributeError) as e:
        raise ConfigError(f"{path}: not a pipeline state dump ({type(e).__name__}: {e})") from e


def cmd_inject(args) -> int:
    from src.pipeline import process_packet
    from src.phv import RawPacket
    from src.utils import _write_json, parse_hex, read_hex_file

    state = _load_state(args.state)
    if args.hex_file:
        data = read_hex_file(args.hex_file)
    elif args.packet:
        data = parse_hex(args.packet)
    else:
        print("inject: give a packet as hex or --hex-file", file=sys.stderr)
        return 1
    outcome = process_packet(state, RawPacket(data, arrival_seq=state.next_seq, ingress_port=args.port))
    print(json.dumps(outcome.to_dict(), indent=2))
    if args.save:
        _write_json(args.state, state.to_dict())
    return 0


def cmd_dump_state(args) -> int:
    from src.control import Controller
    from src.system_module import load_system_config
    from src.utils import _write_json

    ctl = Controller(settings=_settings(args))
    ctl.boot(load_system_config(args.system) if args.system else None)
    for spec in args.module or []:
        path, _, vid = spec.rpartition(":")
        if not path:
            print(f"dump-state: --module wants PATH:VID, got {spec!r}", file=sys.stderr)
            return 1
        ctl.load_module(Path(path).read_text(encoding="utf-8"), int(vid, 0))
    if args.out:
        _write_json(args.out, ctl.state.to_dict())
        print(f"state with {len(ctl.modules)} module(s) -> {args.out}")
    else:
        print(json.dumps(ctl.state.to_dict(), indent=2, sort_keys=True))
    return 0


# -----------------------
# ARGUMENTS
# -----------------------
def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="pipeline", description="Isolating match-action pipeline model")
    parser.add_argument("--config", help="pipeline.toml to read instead of config/pipeline.toml")
    parser.add_argument("--cookie", type=lambda s: int(s, 0), help="reconfiguration cookie override")
    parser.add_argument("--log-level", default=None)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("compile", help="check and compile a module program")
    p.add_argument("source")
    p.add_argument("--quota", action="append", metavar="KEY=VALUE")
    p.add_argument("--slot", type=int, default=1)
    p.add_argument("--out", default="build")
    p.set_defaults(func=cmd_compile)

    p = sub.add_parser("run", help="run a scenario file")
    p.add_argument("scenario")
    p.add_argument("--out")
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("inject", help="push one packet through a dumped pipeline state")
    p.add_argument("state")
    p.add_argument("packet", nargs="?")
    p.add_argument("--hex-file")
    p.add_argument("--port", type=int, default=0)
    p.add_argument("--save", action="store_true", help="write the updated state back")
    p.set_defaults(func=cmd_inject)

    p = sub.add_parser("dump-state", help="boot, load modules and write the pipeline state")
    p.add_argument("--system", help="system.toml")
    p.add_argument("--module", action="append", metavar="PATH:VID")
    p.add_argument("--out")
    p.set_defaults(func=cmd_dump_state)
    return parser


def main(argv: Optional[List[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        configure_logging(args.log_level)
        return args.func(args)
    except CheckFailed as e:
        print(f"{e.phase} check failed:", file=sys.stderr)
        for v in e.violations:
            print(f"  {v}", file=sys.stderr)
        return e.exit_code
    except PipelineError as e:
        print(f"error: {e}", file=sys.stderr)
        return e.exit_code
    except OSError as e:
        print(f"error: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
