# src/checks.py
"""
Static and resource checks over a parsed ModuleProgram.

Both return every violation found (empty list == ok); the compiler wraps a
non-empty list in CheckFailed so the CLI can print all of them at once.

  static    VidModification  StatWrite  Recirculation  UnknownField
            DuplicateName    BadField   SharedFieldOverlap
            UnreadableMetadata  DuplicateEntry  KeyArity  ValueTooWide
            ImmediateTooWide
  resource  ParserActions  TableEntries  MemoryWords  KeyFields  Containers
"""

from __future__ import annotations

from collections import Counter
from dataclasses import dataclass
from typing import Dict, List, Optional

from src.dsl import (
    META_NAMES,
    META_PKT_LEN,
    META_VID,
    Assign,
    ModuleProgram,
    Port,
    Ports,
    Recirculate,
    Ref,
    ResourceQuota,
    Store,
)
from src.phv import HEADER_REGION

VLAN_TCI = (14, 16)  # byte range carrying the VID
DST_IP_OFFSET = 34
DST_IP_WIDTH = 32

ALU_IMM_MAX = (1 << 11) - 1
PREDICATE_IMM_MAX = (1 << 7) - 1
MULTICAST_PORTS = 11


@dataclass(frozen=True)
class Violation:
    kind: str
    message: str
    table: Optional[str] = None
    line: int = 0

    def __str__(self) -> str:
        where = f" (table {self.table})" if self.table else ""
        at = f" [line {self.line}]" if self.line else ""
        return f"{self.kind}: {self.message}{where}{at}"


def _overlaps(offset: int, nbytes: int, lo: int, hi: int) -> bool:
    return offset < hi and lo < offset + nbytes


def shares_destination_ip(prog: ModuleProgram, name: str) -> bool:
    f = prog.fields.get(name)
    return bool(f and f.offset == DST_IP_OFFSET and f.width == DST_IP_WIDTH)


# -----------------------
# STATIC
# -----------------------
def _check_target(prog: ModuleProgram, ref: Ref, table: str, out: List[Violation]) -> None:
    name = ref.name
    if name == META_VID:
        out.append(Violation("VidModification", "the VID cannot be written", table, ref.line))
    elif ref.is_meta:
        if name in META_NAMES:
            out.append(Violation("StatWrite", f"{name} is read-only", table, ref.line))
        else:
            out.append(Violation("UnknownField", f"{name} is not a metadata field", table, ref.line))
    else:
        f = prog.fields.get(name)
        if f is None:
            out.append(Violation("UnknownField", f"{name} is not declared", table, ref.line))
        elif f.is_header and _overlaps(f.offset, f.nbytes, *VLAN_TCI):
            out.append(Violation("VidModification", f"{name} overlaps the VLAN tag", table, ref.line))


def _check_read(prog: ModuleProgram, op, table: str, out: List[Violation], in_predicate: bool = False) -> None:
    if not isinstance(op, Ref):
        return
    if op.is_meta:
        if op.name not in META_NAMES:
            out.append(Violation("UnknownField", f"{op.name} is not a metadata field", table, op.line))
        elif op.name == META_VID or (not in_predicate and op.name != META_PKT_LEN):
            out.append(Violation("UnreadableMetadata", f"{op.name} cannot be read here", table, op.line))
    elif op.name not in prog.fields:
        out.append(Violation("UnknownField", f"{op.name} is not declared", table, op.line))


def _check_imm(op, limit: int, table: str, line: int, out: List[Violation]) -> None:
    if isinstance(op, int) and op > limit:
        out.append(Violation("ImmediateTooWide", f"{op} exceeds {limit}", table, line))


def static_check(prog: ModuleProgram) -> List[Violation]:
    out: List[Violation] = []

    seen = Counter(f.name for f in prog.headers + prog.temps)
    for name, n in seen.items():
        if n > 1:
            out.append(Violation("DuplicateName", f"{name} declared {n} times"))
    for f in prog.headers + prog.temps:
        if f.width not in (16, 32, 48):
            out.append(Violation("BadField", f"{f.name} is {f.width} bits; fields are 16, 32 or 48", line=f.line))
        elif f.is_header and f.offset + f.nbytes > HEADER_REGION:
            out.append(Violation("BadField", f"{f.name} ends past byte {HEADER_REGION}", line=f.line))
        elif (
            f.is_header
            and _overlaps(f.offset, f.nbytes, DST_IP_OFFSET, DST_IP_OFFSET + 4)
            and not (f.offset == DST_IP_OFFSET and f.width == DST_IP_WIDTH)
        ):
            out.append(Violation("SharedFieldOverlap", f"{f.name} partially covers the destination IP", line=f.line))

    tnames = Counter(t.name for t in prog.tables)
    for name, n in tnames.items():
        if n > 1:
            out.append(Violation("DuplicateName", f"table {name} declared {n} times"))

    fields = prog.fields
    for t in prog.tables:
        for r in t.key:
            if r.is_meta or r.name not in fields:
                out.append(Violation("UnknownField", f"key field {r.name} is not declared", t.name, r.line))
        if t.predicate:
            _check_read(prog, t.predicate.left, t.name, out, in_predicate=True)
            _check_read(prog, t.predicate.right, t.name, out, in_predicate=True)
            _check_imm(t.predicate.left, PREDICATE_IMM_MAX, t.name, t.line, out)
            _check_imm(t.predicate.right, PREDICATE_IMM_MAX, t.name, t.line, out)

        keys_seen = set()
        for e in t.entries:
            if len(e.values) != len(t.key):
                out.append(Violation("KeyArity", f"entry has {len(e.values)} values for {len(t.key)} key fields", t.name, e.line))
            else:
                for r, v in zip(t.key, e.values):
                    f = fields.get(r.name)
                    if f and v >> f.width:
                        out.append(Violation("ValueTooWide", f"{v:#x} does not fit {r.name}", t.name, e.line))
            sig = (e.values, e.flag if t.predicate else True)
            if sig in keys_seen:
                out.append(Violation("DuplicateEntry", f"key {e.values} repeated", t.name, e.line))
            keys_seen.add(sig)

            for a in e.actions:
                if isinstance(a, Recirculate):
                    out.append(Violation("Recirculation", "packets cannot be recirculated", t.name, a.line))
                elif isinstance(a, Assign):
                    _check_target(prog, a.target, t.name, out)
                    for op in (a.a, a.b):
                        _check_read(prog, op, t.name, out)
                        _check_imm(op, ALU_IMM_MAX, t.name, a.line, out)
                elif isinstance(a, Store):
                    _check_read(prog, a.addr, t.name, out)
                    _check_imm(a.addr, ALU_IMM_MAX, t.name, a.line, out)
                    if a.value.is_meta:
                        out.append(Violation("UnreadableMetadata", f"{a.value.name} cannot be stored", t.name, a.line))
                    else:
                        _check_target(prog, a.value, t.name, out)
                elif isinstance(a, Port) and a.port >= 32:
                    out.append(Violation("ImmediateTooWide", f"port {a.port} does not exist", t.name, a.line))
                elif isinstance(a, Ports) and a.bitmap >> MULTICAST_PORTS:
                    out.append(Violation("ImmediateTooWide", f"bitmap {a.bitmap:#x} names ports above {MULTICAST_PORTS - 1}", t.name, a.line))
    return out


# -----------------------
# RESOURCES
# -----------------------
def parser_action_count(prog: ModuleProgram) -> int:
    """Declared header fields plus the shared destination IP when not declared."""
    n = len(prog.headers)
    if not any(shares_destination_ip(prog, f.name) for f in prog.headers):
        n += 1
    return n


def _kind_counts(prog: ModuleProgram) -> Dict[int, int]:
    counts = Counter({16: 0, 32: 0, 48: 0})
    for f in prog.headers + prog.temps:
        if not shares_destination_ip(prog, f.name):
            counts[f.width] += 1
    return counts


def resource_check(prog: ModuleProgram, quota: ResourceQuota) -> List[Violation]:
    out: List[Violation] = []
    n = parser_action_count(prog)
    if n > quota.parser_actions:
        out.append(Violation("ParserActions", f"{n} > {quota.parser_actions}"))

    fields = prog.fields
    words = 0
    for t in prog.tables:
        if len(t.entries) > quota.cam_entries:
            out.append(Violation("TableEntries", f"{len(t.entries)} > {quota.cam_entries}", t.name))
        words += t.memory
        per_class = Counter(fields[r.name].width for r in t.key if r.name in fields)
        for width, count in sorted(per_class.items()):
            if count > 2:
                out.append(Violation("KeyFields", f"{count} key fields of {width} bits > 2", t.name))
    if words > quota.memory_words:
        out.append(Violation("MemoryWords", f"{words} > {quota.memory_words}"))

    if quota.containers is not None:
        counts = _kind_counts(prog)
        for width, cap in zip((16, 32, 48), quota.containers):
            if counts[width] > cap:
                out.append(Violation("Containers", f"{counts[width]} {width}-bit containers > {cap}"))
    return out
