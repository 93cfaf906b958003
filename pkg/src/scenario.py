# src/scenario.py
"""
Scenario files and the tick loop that runs them.

A scenario boots the system module, loads its modules (setup, untraced),
then runs `duration` ticks. Each tick:

  1. events scheduled for the tick fire; a load / reconfigure / unload opens
     a reconfiguration session (one at a time, later ones queue)
  2. the open session pushes up to `reconfig_rate` writes down the chain and
     closes as soon as the counter reaches its target
  3. every traffic source, in slot order, emits `rate` packets

Scenario TOML:

    name = "disruption"
    duration = 60
    seed = 7
    system_file = "../config/system.toml"     # or an inline [system] table

    [[modules]]
    source = "../modules/calc.dsl"
    vid = 10

    [[traffic]]
    slot = 1
    rate = 4
    dst_ip = "10.0.0.2"
    fields = [{ name = "a", offset = 48, width = 32, high = 1000 }]

    [[events]]
    tick = 20
    action = "reconfigure"
    slot = 1

Packets of one source depend only on (scenario seed, slot), so the same
source produces the same packets whether it runs alone or next to others.
"""

from __future__ import annotations

import ipaddress
import logging
import random
try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib
from collections import deque
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Deque, Dict, List, Literal, Optional, Union

from pydantic import BaseModel, Field, ValidationError, field_validator, model_validator

from src.control import Controller, ReconfigSession
from src.errors import ScenarioError
from src.frames import FrameTemplate, build_data_frame, payload_bytes
from src.system_module import SystemConfig, load_system_config
from src.utils import JsonlSink, parse_hex

logger = logging.getLogger(__name__)


# -----------------------
# SCHEMA
# -----------------------
class FieldSpec(BaseModel):
    """A frame field re-drawn for every packet: from `values`, else uniform in [low, high]."""

    name: str
    offset: int = Field(ge=0)
    width: int = 32
    values: List[int] = Field(default_factory=list)
    low: int = Field(0, ge=0)
    high: Optional[int] = None

    @field_validator("width")
    @classmethod
    def _width(cls, v: int) -> int:
        if v not in (8, 16, 32, 48):
            raise ValueError("width must be 8, 16, 32 or 48")
        return v

    @field_validator("values", mode="before")
    @classmethod
    def _ips(cls, v):
        return [int(ipaddress.IPv4Address(x)) if isinstance(x, str) else x for x in v or []]

    @model_validator(mode="after")
    def _range(self) -> "FieldSpec":
        top = (1 << self.width) - 1
        if self.high is None:
            self.high = top
        if not self.low <= self.high <= top:
            raise ValueError(f"{self.name}: range {self.low}..{self.high} does not fit {self.width} bits")
        if any(not 0 <= x <= top for x in self.values):
            raise ValueError(f"{self.name}: a listed value does not fit {self.width} bits")
        return self

    def draw(self, rng: random.Random) -> int:
        if self.values:
            return rng.choice(self.values)
        return rng.randint(self.low, self.high)


class TrafficSpec(BaseModel):
    slot: int = Field(ge=1, le=31)
    rate: int = Field(ge=0)  # packets per tick
    start: int = Field(0, ge=0)
    stop: Optional[int] = None  # first tick with no traffic
    payload_len: int = Field(32, ge=0, le=1400)
    src_ip: str = "10.0.0.1"
    dst_ip: str = "10.0.0.2"
    template: Optional[str] = None  # hex frame; replaces the generated one
    pcap: Optional[str] = None  # replay frames from a capture instead of drawing
    fields: List[FieldSpec] = Field(default_factory=list)


class ModuleSpec(BaseModel):
    source: str
    vid: int = Field(ge=1, lt=0xFFF)
    slot: Optional[int] = Field(None, ge=1, le=31)
    quota: Optional[Dict[str, Any]] = None


class EventSpec(BaseModel):
    tick: int = Field(ge=0)
    action: Literal["load", "reconfigure", "unload", "set_stats"]
    slot: Optional[int] = Field(None, ge=1, le=31)
    source: Optional[str] = None
    vid: Optional[int] = None
    link_util: int = 0
    queue_len: int = 0

    @model_validator(mode="after")
    def _needs(self) -> "EventSpec":
        if self.action in ("reconfigure", "unload") and self.slot is None:
            raise ValueError(f"{self.action} needs a slot")
        if self.action == "load" and (self.source is None or self.vid is None):
            raise ValueError("load needs a source and a vid")
        return self


class Scenario(BaseModel):
    name: str = "scenario"
    duration: int = Field(ge=0)
    seed: int = 0
    reconfig_rate: Optional[int] = Field(None, ge=1)
    system: Optional[SystemConfig] = None
    system_file: Optional[str] = None
    modules: List[ModuleSpec] = Field(default_factory=list)
    traffic: List[TrafficSpec] = Field(default_factory=list)
    events: List[EventSpec] = Field(default_factory=list)

    @model_validator(mode="after")
    def _distinct_slots(self) -> "Scenario":
        slots = [m.slot for m in self.modules if m.slot is not None]
        if len(set(slots)) != len(slots):
            raise ValueError("module slots must be distinct")
        vids = [m.vid for m in self.modules]
        if len(set(vids)) != len(vids):
            raise ValueError("module VIDs must be distinct")
        tslots = [t.slot for t in self.traffic]
        if len(set(tslots)) != len(tslots):
            raise ValueError("one traffic source per slot")
        return self

    def solo(self, slot: int) -> "Scenario":
        """The same run with only the module (and traffic) of one slot."""

        def slot_of(item) -> Optional[int]:
            # modules and load events without a slot take their tenant's
            if item.slot is None and item.vid is not None and self.system is not None:
                t = self.system.tenant(item.vid)
                return t.slot if t else None
            return item.slot

        return self.model_copy(
            update={
                "name": f"{self.name}-solo{slot}",
                "modules": [m for m in self.modules if slot_of(m) == slot],
                "traffic": [t for t in self.traffic if t.slot == slot],
                "events": [e for e in self.events if slot_of(e) == slot or e.action == "set_stats"],
            }
        )


def load_scenario(path: Union[str, Path]) -> "LoadedScenario":
    path = Path(path)
    try:
        with path.open("rb") as f:
            data = tomllib.load(f)
    except FileNotFoundError as e:
        raise ScenarioError("scenario file not found", str(path)) from e
    except tomllib.TOMLDecodeError as e:
        raise ScenarioError(str(e), str(path)) from e
    try:
        scenario = Scenario(**data)
    except ValidationError as e:
        raise ScenarioError(str(e), str(path)) from e
    return LoadedScenario(scenario, path.parent)


# -----------------------
# RESOLUTION (paths, system config, module slots)
# -----------------------
@dataclass
class LoadedScenario:
    scenario: Scenario
    base_dir: Path = Path(".")

    def path(self, rel: str) -> Path:
        p = Path(rel)
        return p if p.is_absolute() else self.base_dir / p

    def read_source(self, rel: str) -> str:
        try:
            return self.path(rel).read_text(encoding="utf-8")
        except OSError as e:
            raise ScenarioError(f"cannot read module source {rel}: {e}") from e

    def system_config(self) -> SystemConfig:
        sc = self.scenario
        if sc.system is not None:
            return sc.system
        if sc.system_file:
            return load_system_config(self.path(sc.system_file))
        return SystemConfig()

    def resolved(self) -> "LoadedScenario":
        """Module slots filled from the tenant table; every traffic slot must have a module."""
        sc = self.scenario
        cfg = self.system_config()
        modules = []
        for m in sc.modules:
            if m.slot is None:
                t = cfg.tenant(m.vid)
                if t is None:
                    raise ScenarioError(f"module VID {m.vid} has no slot and no tenant entry")
                m = m.model_copy(update={"slot": t.slot})
            modules.append(m)
        events = []
        for e in sc.events:
            if e.action == "load" and e.slot is None and cfg.tenant(e.vid) is not None:
                e = e.model_copy(update={"slot": cfg.tenant(e.vid).slot})
            events.append(e)
        slots = {m.slot for m in modules} | {e.slot for e in events if e.action == "load" and e.slot}
        for t in sc.traffic:
            if t.slot not in slots:
                raise ScenarioError(f"traffic for slot {t.slot}, which has no module")
        return LoadedScenario(sc.model_copy(update={"modules": modules, "events": events, "system": cfg, "system_file": None}), self.base_dir)

    def solo(self, slot: int) -> "LoadedScenario":
        return LoadedScenario(self.resolved().scenario.solo(slot), self.base_dir)


# -----------------------
# TRAFFIC
# -----------------------
class TrafficSource:
    def __init__(self, spec: TrafficSpec, vid: int, seed: int, base: LoadedScenario):
        self.spec = spec
        self.rng = random.Random((seed << 8) | spec.slot)
        self.replay: List[bytes] = []
        self.cursor = 0
        if spec.pcap:
            from scapy.utils import rdpcap

            self.replay = [bytes(p) for p in rdpcap(str(base.path(spec.pcap)))]
            if not self.replay:
                raise ScenarioError(f"{spec.pcap}: capture holds no frames")
        if spec.template:
            frame = parse_hex(spec.template)
        else:
            frame = build_data_frame(vid, payload_bytes(spec.payload_len), spec.src_ip, spec.dst_ip)
        self.template = FrameTemplate(frame, {f.name: (f.offset, f.width) for f in spec.fields})

    def active(self, tick: int) -> bool:
        s = self.spec
        return s.start <= tick and (s.stop is None or tick < s.stop)

    def next_frame(self) -> bytes:
        if self.replay:
            base = self.replay[self.cursor % len(self.replay)]
            self.cursor += 1
            if not self.spec.fields:
                return base
            return FrameTemplate(base, self.template.fields).stamp({f.name: f.draw(self.rng) for f in self.spec.fields})
        return self.template.stamp({f.name: f.draw(self.rng) for f in self.spec.fields})


# -----------------------
# RUN
# -----------------------
@dataclass
class Window:
    """Ticks during which slot's update bit was set: [begin, end)."""

    slot: int
    action: str
    begin: int
    end: Optional[int] = None
    writes: int = 0

    def to_dict(self) -> Dict[str, Any]:
        return {"slot": self.slot, "action": self.action, "begin": self.begin, "end": self.end, "writes": self.writes}


@dataclass
class RunReport:
    name: str
    ticks: int
    injected: int = 0
    series: Dict[int, List[Dict[str, int]]] = field(default_factory=dict)
    windows: List[Window] = field(default_factory=list)
    outputs: Dict[int, List[Dict[str, Any]]] = field(default_factory=dict)
    counters: Dict[str, Any] = field(default_factory=dict)

    def totals(self, slot: int) -> Dict[str, int]:
        rows = self.series.get(slot, [])
        return {
            "forwarded": sum(r["forwarded"] for r in rows),
            "dropped": sum(r["dropped"] for r in rows),
        }

    def to_dict(self) -> Dict[str, Any]:
        return {
            "name": self.name,
            "ticks": self.ticks,
            "injected": self.injected,
            "totals": {str(s): self.totals(s) for s in sorted(self.series)},
            "windows": [w.to_dict() for w in self.windows],
            "counters": self.counters,
        }


class ScenarioRunner:
    def __init__(self, loaded: LoadedScenario, controller: Optional[Controller] = None, settings=None):
        self.loaded = loaded.resolved()
        self.scenario = self.loaded.scenario
        self.controller = controller or Controller(settings=settings)
        self.rate = self.scenario.reconfig_rate or self.controller.settings.reconfig_rate
        self.session: Optional[ReconfigSession] = None
        self.window: Optional[Window] = None
        self.pending: Deque[EventSpec] = deque()

    # -- setup ----------------------------------------------------------------
    def setup(self) -> None:
        ctl = self.controller
        ctl.boot(self.scenario.system)
        for m in self.scenario.modules:
            ctl.load_module(self.loaded.read_source(m.source), m.vid, m.quota, m.slot)

    def _sources(self) -> List[TrafficSource]:
        vids = {m.slot: m.vid for m in self.scenario.modules}
        cfg = self.scenario.system
        for e in self.scenario.events:
            if e.action == "load":
                slot = e.slot or (cfg.tenant(e.vid).slot if cfg and cfg.tenant(e.vid) else None)
                if slot is not None:
                    vids.setdefault(slot, e.vid)
        return [
            TrafficSource(t, vids[t.slot], self.scenario.seed, self.loaded)
            for t in sorted(self.scenario.traffic, key=lambda t: t.slot)
        ]

    # -- events ---------------------------------------------------------------
    def _open(self, ev: EventSpec, tick: int) -> None:
        ctl = self.controller
        if ev.action == "load":
            session, module = ctl.begin_load(self.loaded.read_source(ev.source), ev.vid, None, ev.slot)
        elif ev.action == "reconfigure":
            source = self.loaded.read_source(ev.source) if ev.source else None
            session, module = ctl.begin_replace(ev.slot, source)
        else:
            session = ctl.begin_unload(ev.slot)
        self.session = session
        self.window = Window(session.slot, ev.action, tick, writes=len(session.packets))
        logger.info("tick %d: %s slot %d opened (%d writes)", tick, ev.action, session.slot, len(session.packets))

    def _fire(self, tick: int) -> None:
        for ev in [e for e in self.scenario.events if e.tick == tick]:
            if ev.action == "set_stats":
                self.controller.set_stats(ev.link_util, ev.queue_len)
            else:
                self.pending.append(ev)
        if self.session is None and self.pending:
            self._open(self.pending.popleft(), tick)

    def _advance(self, tick: int, report: RunReport, trace: Optional[JsonlSink]) -> None:
        if self.session is None:
            return
        state = self.controller.state
        for out in self.session.step(state, self.rate):
            if trace is not None:
                trace.write({"tick": tick, **out.to_dict()})
        if self.session.done(state):
            self.session.finish(state)
            self.window.end = tick
            report.windows.append(self.window)
            self.session, self.window = None, None
            if self.pending:
                self._open(self.pending.popleft(), tick)

    # -- main loop ------------------------------------------------------------
    def run(self, trace: Optional[JsonlSink] = None, stats: Optional[JsonlSink] = None) -> RunReport:
        self.setup()
        sources = self._sources()
        sc = self.scenario
        report = RunReport(sc.name, sc.duration)
        for src in sources:
            report.series[src.spec.slot] = []
            report.outputs[src.spec.slot] = []

        for tick in range(sc.duration):
            self._fire(tick)
            self._advance(tick, report, trace)
            for src in sources:
                slot = src.spec.slot
                row = {"tick": tick, "slot": slot, "injected": 0, "forwarded": 0, "dropped": 0}
                if src.active(tick):
                    for _ in range(src.spec.rate):
                        out = self.controller.inject(src.next_frame())
                        row["injected"] += 1
                        row["forwarded" if out.forwarded else "dropped"] += 1
                        report.outputs[slot].append(
                            {
                                "verdict": out.verdict.value,
                                "reason": out.reason,
                                "ports": list(out.ports),
                                "egress": out.egress_packet.hex() if out.egress_packet else None,
                            }
                        )
                        if trace is not None:
                            trace.write({"tick": tick, **out.to_dict()})
                report.injected += row["injected"]
                report.series[slot].append({k: row[k] for k in ("tick", "injected", "forwarded", "dropped")})
                if stats is not None:
                    stats.write(row)

        if self.window is not None:
            # still open at the end of the run
            report.windows.append(self.window)
        report.counters = self.controller.read_counters()
        logger.info("scenario %s: %d packets over %d ticks", sc.name, report.injected, sc.duration)
        return report


def run_scenario(
    path_or_loaded: Union[str, Path, LoadedScenario],
    trace: Optional[JsonlSink] = None,
    stats: Optional[JsonlSink] = None,
    settings=None,
) -> RunReport:
    loaded = path_or_loaded if isinstance(path_or_loaded, LoadedScenario) else load_scenario(path_or_loaded)
    return ScenarioRunner(loaded, settings=settings).run(trace, stats)
