# src/interpreter.py
"""
Reference interpreter for module programs: runs the DSL directly (fields by
name, tables in declared order, actions one after another) with none of the
pipeline machinery. Used as the oracle for compiled modules.

Semantics mirrored from the hardware model:
  - fields past the packet end or byte 128 read as zero and are not written back
  - predicates compare the low 16 bits of each operand
  - a table's stateful words are private; an access outside them faults,
    a faulting load yields 0 and a faulting store zeroes the stored field
  - the destination IP (offset 34) is always parsed and written back
  - with a system config, the tenant's virtual-IP / route / group lookup runs
    before the first table and forwarded packets are counted after the last
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Dict, List, Optional, Tuple, Union

from src.checks import DST_IP_OFFSET, DST_IP_WIDTH, shares_destination_ip
from src.dsl import (
    META_LINK_UTIL,
    META_PKT_LEN,
    META_QUEUE_LEN,
    Assign,
    Drop,
    FieldDecl,
    ModuleProgram,
    Port,
    Ports,
    Ref,
    Store,
    TableDecl,
)
from src.frames import frame_vid
from src.phv import HEADER_REGION, RawPacket
from src.pipeline import DropReason, Verdict

WORD_MASK = 0xFFFF_FFFF
_DST_IP = "<dst_ip>"


@dataclass
class ModuleState:
    """Everything the interpreter keeps between packets of one module."""

    memory: Dict[str, List[int]] = field(default_factory=dict)  # table -> words
    faults: int = 0
    forwarded: int = 0
    link_util: int = 0
    queue_len: int = 0

    @classmethod
    def for_program(cls, prog: ModuleProgram, link_util: int = 0, queue_len: int = 0) -> "ModuleState":
        return cls({t.name: [0] * t.memory for t in prog.tables if t.memory}, link_util=link_util, queue_len=queue_len)


@dataclass
class ReferenceOutcome:
    verdict: Verdict
    reason: Optional[str] = None
    ports: Tuple[int, ...] = ()
    packet: Optional[bytes] = None

    def key(self) -> Tuple:
        """Comparable with a pipeline PacketOutcome via outcome_key()."""
        return (self.verdict.value, self.reason, self.ports, self.packet)


def outcome_key(outcome) -> Tuple:
    egress = outcome.egress_packet.data if outcome.egress_packet is not None else None
    return (outcome.verdict.value, outcome.reason, tuple(outcome.ports), egress)


def _dst_name(prog: ModuleProgram) -> str:
    for f in prog.headers:
        if shares_destination_ip(prog, f.name):
            return f.name
    return _DST_IP


def _extract(header: bytes, offset: int, width: int) -> int:
    return int.from_bytes(header[offset:offset + width // 8], "big")


class _Run:
    """One packet's worth of interpreter state."""

    def __init__(self, prog: ModuleProgram, data: bytes, ms: ModuleState):
        self.prog = prog
        self.ms = ms
        self.fields: Dict[str, FieldDecl] = dict(prog.fields)
        self.fields.setdefault(_DST_IP, FieldDecl(_DST_IP, DST_IP_WIDTH, DST_IP_OFFSET))
        header = data[:HEADER_REGION].ljust(HEADER_REGION + 6, b"\x00")
        self.values: Dict[str, int] = {}
        for f in self.fields.values():
            self.values[f.name] = _extract(header, f.offset, f.width) if f.is_header else 0
        self.meta = {
            META_PKT_LEN: min(len(data), 0xFFFF),
            META_LINK_UTIL: ms.link_util & 0xFFFF,
            META_QUEUE_LEN: ms.queue_len & 0xFFFF,
        }
        self.ports = 0
        self.discard = False

    def mask(self, name: str) -> int:
        return (1 << self.fields[name].width) - 1

    def value(self, op: Union[Ref, int]) -> int:
        if isinstance(op, int):
            return op
        if op.is_meta:
            return self.meta[op.name]
        return self.values[op.name]

    # -- tables ---------------------------------------------------------------
    def predicate(self, table: TableDecl) -> bool:
        p = table.predicate
        a = self.value(p.left) & 0xFFFF
        b = self.value(p.right) & 0xFFFF
        return {
            "==": a == b,
            "!=": a != b,
            ">": a > b,
            ">=": a >= b,
            "<": a < b,
            "<=": a <= b,
        }[p.op]

    def apply(self, table: TableDecl) -> None:
        key = tuple(self.values[r.name] for r in table.key)
        flag = self.predicate(table) if table.predicate else True
        for e in table.entries:
            if e.values == key and (e.flag == flag or table.predicate is None):
                for a in e.actions:
                    self.act(table, a)
                return

    def memory(self, table: TableDecl, vaddr: int) -> Optional[List[int]]:
        words = self.ms.memory.get(table.name, [])
        if not 0 <= vaddr < len(words):
            self.ms.faults += 1
            return None
        return words

    def act(self, table: TableDecl, a) -> None:
        if isinstance(a, Port):
            self.ports = 1 << a.port
        elif isinstance(a, Ports):
            self.ports = a.bitmap
        elif isinstance(a, Drop):
            self.discard = True
        elif isinstance(a, Store):
            vaddr = self.value(a.addr)
            words = self.memory(table, vaddr)
            if words is None:
                self.values[a.value.name] = 0
            else:
                words[vaddr] = self.values[a.value.name] & WORD_MASK
        elif isinstance(a, Assign):
            name = a.target.name
            if a.op in ("load", "loadd"):
                vaddr = self.value(a.a)
                words = self.memory(table, vaddr)
                if words is None:
                    result = 0
                else:
                    result = words[vaddr]
                    if a.op == "loadd":
                        words[vaddr] = (result + 1) & WORD_MASK
            elif a.op == "set":
                result = self.value(a.a)
            elif a.op == "add":
                result = self.value(a.a) + self.value(a.b)
            else:
                result = self.value(a.a) - self.value(a.b)
            self.values[name] = result & self.mask(name)

    # -- deparse --------------------------------------------------------------
    def emit(self, data: bytes, dst: str) -> bytes:
        out = bytearray(data)
        limit = min(len(out), HEADER_REGION)
        names = [dst] + [n for n in self.prog.written_fields() if n != dst]
        for name in names:
            f = self.fields[name]
            raw = self.values[name].to_bytes(f.nbytes, "big")
            for j, byte in enumerate(raw):
                if f.offset + j < limit:
                    out[f.offset + j] = byte
        return bytes(out)


def interpret_reference(
    prog: ModuleProgram,
    pkt: Union[RawPacket, bytes],
    module_state: ModuleState,
    system=None,
) -> ReferenceOutcome:
    """
    Run one data packet of prog. system is an optional SystemConfig whose
    read half (VIP / route / group) and packet counting are applied around
    the module's tables.
    """
    data = pkt.data if isinstance(pkt, RawPacket) else bytes(pkt)
    run = _Run(prog, data, module_state)
    dst = _dst_name(prog)
    vid = frame_vid(data) or 0

    if system is not None:
        run.values[dst], run.ports = system.lookup(vid, run.values[dst])

    for table in prog.tables:
        run.apply(table)

    if run.discard:
        return ReferenceOutcome(Verdict.DROPPED, DropReason.DISCARDED.value)
    out = run.emit(data, dst)
    if not run.ports:
        return ReferenceOutcome(Verdict.DROPPED, DropReason.NO_ROUTE.value)
    if system is not None and system.tenant(vid) is not None:
        module_state.forwarded += 1
    ports = tuple(p for p in range(32) if run.ports >> p & 1)
    return ReferenceOutcome(Verdict.FORWARDED, ports=ports, packet=out)


class ReferenceModel:
    """A module program plus its private state; feed it packets in order."""

    def __init__(self, prog: ModuleProgram, system=None):
        self.prog = prog
        self.system = system
        lu = system.link_util if system is not None else 0
        ql = system.queue_len if system is not None else 0
        self.state = ModuleState.for_program(prog, lu, ql)

    def run(self, pkt: Union[RawPacket, bytes]) -> ReferenceOutcome:
        return interpret_reference(self.prog, pkt, self.state, self.system)

    def set_stats(self, link_util: int, queue_len: int) -> None:
        self.state.link_util = link_util
        self.state.queue_len = queue_len
