# src/compiler.py
"""
Module compiler: ModuleProgram -> CompiledModule -> reconfiguration writes.

  parse_dsl ─► static_check ─► resource_check ─► stage_assign ─► allocate_and_lower
                                                                    │
                                              emit_reconfig_packets ◄┘

Tables are placed in the user stages (2..4), one table per module per stage.
An entry whose action list cannot run as one parallel VLIW word (it reads a
field an earlier action wrote, or two actions drive the same ALU) is split;
the remainder goes to a continuation table "<table>#<n>" with the same key
and predicate in a later stage.

PHV allocation: header fields and temporaries take containers of their width
in declaration order. The destination IP (4B container 7, frame offset 34)
is shared with the system module; 6B container 7 is system scratch.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Any, Dict, List, Optional, Tuple, Union

from src.checks import DST_IP_OFFSET, parser_action_count, resource_check, shares_destination_ip, static_check
from src.dsl import (
    EGRESS,
    META_LINK_UTIL,
    META_PKT_LEN,
    META_QUEUE_LEN,
    Action,
    Assign,
    Drop,
    Entry,
    ModuleProgram,
    Port,
    Ports,
    ResourceQuota,
    Store,
    TableDecl,
    parse_dsl,
    resolve_quota,
)
from src.errors import ActionConflict, CheckFailed, ContainerExhausted, PlacementError, TooManyDependencyLevels
from src.formats import (
    GEOMETRY,
    IMMEDIATE_SEL,
    KEY_BITS,
    KEY_SLOTS,
    PREDICATE_BIT,
    STAGE_DEPARSER,
    STAGE_PARSER,
    STAGE_REGISTRY,
    AluAction,
    CamEntry,
    CmpOp,
    KeyExtractorEntry,
    KeyMaskEntry,
    KeyOperand,
    MemoryWord,
    MetaStat,
    Opcode,
    PageTableEntry,
    ParseAction,
    ParserEntry,
    ReconfigPacket,
    RegistryEntry,
    ResourceId,
    ResourceType,
    VliwEntry,
    encode_entry,
    make_write,
    slot_mask,
)
from src.phv import CONTAINERS_PER_KIND, METADATA_INDEX, ContainerKind

logger = logging.getLogger(__name__)

SHARED_DST_IP = ContainerKind.FOUR_BYTE.base + 7
SYSTEM_SCRATCH = ContainerKind.SIX_BYTE.base + 7

CMP_CODES = {"==": CmpOp.EQ, "!=": CmpOp.NE, ">": CmpOp.GT, ">=": CmpOp.GE, "<": CmpOp.LT, "<=": CmpOp.LE}
META_STATS = {META_LINK_UTIL: MetaStat.LINK_UTIL, META_QUEUE_LEN: MetaStat.QUEUE_LEN, META_PKT_LEN: MetaStat.PKT_LEN}
# key slot indices (into KEY_SLOTS) available per field width
WIDTH_SLOTS = {16: (0, 1), 32: (2, 3), 48: (4, 5)}


# -----------------------
# ACTION SPLITTING
# -----------------------
def alu_of(action: Action) -> str:
    """Name of the field whose ALU issues the action (EGRESS for the metadata ALU)."""
    if isinstance(action, Assign):
        return action.target.name
    if isinstance(action, Store):
        return action.value.name
    return EGRESS


def split_actions(actions) -> List[List[Action]]:
    """Greedy cut into hazard-free segments; each segment is one VLIW word."""
    segments: List[List[Action]] = [[]]
    written: set = set()
    alus: set = set()
    for a in actions:
        alu = alu_of(a)
        if alu in alus or a.reads() & written:
            segments.append([])
            written, alus = set(), set()
        segments[-1].append(a)
        alus.add(alu)
        written |= a.writes()
    return segments if segments[0] else []


@dataclass
class TableNode:
    """One physical table: a declared table (level 0) or one of its continuations."""

    table: TableDecl
    level: int
    order: int
    entries: List[Tuple[Entry, List[Action]]] = field(default_factory=list)
    reads: frozenset = frozenset()
    writes: frozenset = frozenset()
    memory: int = 0  # words, only on the node that issues memory operations

    @property
    def name(self) -> str:
        return self.table.name if self.level == 0 else f"{self.table.name}#{self.level}"


def build_nodes(prog: ModuleProgram) -> List[TableNode]:
    nodes: List[TableNode] = []
    for order, t in enumerate(prog.tables):
        split = [(e, split_actions(e.actions)) for e in t.entries]
        depth = max([len(s) for _, s in split] + [1])
        mem_levels = {
            k for _, segs in split for k, seg in enumerate(segs) if any(a.uses_memory for a in seg)
        }
        if len(mem_levels) > 1:
            raise ActionConflict(f"table {t.name}: memory operations would land in more than one stage")
        mem_level = min(mem_levels) if mem_levels else 0
        match = t.match_reads()
        earlier_writes: frozenset = frozenset()
        for level in range(depth):
            entries = [(e, segs[level] if level < len(segs) else []) for e, segs in split if level == 0 or level < len(segs)]
            reads = set(match)
            writes = set()
            for _, seg in entries:
                for a in seg:
                    reads |= a.reads()
                    writes |= a.writes()
            if level and match & earlier_writes:
                raise ActionConflict(
                    f"table {t.name}: split actions overwrite key or predicate field(s) "
                    f"{sorted(match & earlier_writes)}"
                )
            node = TableNode(t, level, order, entries, frozenset(reads), frozenset(writes))
            node.memory = t.memory if level == mem_level else 0
            nodes.append(node)
            earlier_writes |= frozenset(writes)
    return nodes


def _conflict(a: TableNode, b: TableNode) -> bool:
    return bool(a.writes & b.reads or a.writes & b.writes or a.reads & b.writes) or (
        a.table is b.table
    )


# -----------------------
# STAGE ASSIGNMENT
# -----------------------
def dependency_depth(nodes: List[TableNode]) -> int:
    """Longest chain of mutually ordered tables."""
    depth: Dict[int, int] = {}
    for i, n in enumerate(nodes):
        depth[i] = 1 + max([depth[j] for j in range(i) if _conflict(nodes[j], n)] + [0])
    return max(depth.values(), default=0)


def place_nodes(nodes: List[TableNode]) -> Dict[str, int]:
    user = GEOMETRY.user_stages
    chain = dependency_depth(nodes)
    if chain > len(user):
        raise TooManyDependencyLevels(f"dependency chain of {chain} tables exceeds {len(user)} user stages")
    placed: Dict[int, int] = {}
    used = set()
    for i, n in enumerate(nodes):
        floor = max([placed[j] for j in range(i) if _conflict(nodes[j], n)] + [0])
        stage = next((s for s in user if s > floor and s not in used), None)
        if stage is None:
            raise TooManyDependencyLevels(f"{len(nodes)} tables need more than {len(user)} user stages")
        placed[i] = stage
        used.add(stage)
    return {nodes[i].name: s for i, s in placed.items()}


def stage_assign(prog: ModuleProgram) -> Dict[str, int]:
    """Table (and continuation) name -> stage number."""
    return place_nodes(build_nodes(prog))


# -----------------------
# CONTAINERS
# -----------------------
def allocate_containers(prog: ModuleProgram) -> Dict[str, int]:
    reserved = {SHARED_DST_IP, SYSTEM_SCRATCH}
    nxt = {k: 0 for k in ContainerKind}
    out: Dict[str, int] = {}
    for f in prog.headers + prog.temps:
        if shares_destination_ip(prog, f.name):
            out[f.name] = SHARED_DST_IP
            continue
        kind = ContainerKind.for_width(f.width)
        while nxt[kind] < CONTAINERS_PER_KIND and kind.base + nxt[kind] in reserved:
            nxt[kind] += 1
        if nxt[kind] >= CONTAINERS_PER_KIND:
            raise ContainerExhausted(f"{f.name}: no {kind.nbytes}-byte container left")
        out[f.name] = kind.base + nxt[kind]
        nxt[kind] += 1
    return out


# -----------------------
# COMPILED ARTIFACT
# -----------------------
@dataclass(frozen=True)
class Placement:
    vid: int = 1
    cam_rows: Dict[int, Tuple[int, ...]] = field(default_factory=dict)
    memory_base: Dict[int, int] = field(default_factory=dict)


@dataclass
class StageConfig:
    stage: int
    key_extractor: KeyExtractorEntry = KeyExtractorEntry()
    key_mask: KeyMaskEntry = KeyMaskEntry()
    page_table: PageTableEntry = PageTableEntry()
    cam: Dict[int, CamEntry] = field(default_factory=dict)
    vliw: Dict[int, VliwEntry] = field(default_factory=dict)
    memory: Dict[int, int] = field(default_factory=dict)  # physical word -> initial value
    tables: List[str] = field(default_factory=list)
    slot: Optional[int] = None  # per-slot rows target this slot instead of the module's own


Write = Tuple[ResourceId, int, Any]


@dataclass
class CompiledModule:
    name: str
    vid: int
    parser: Optional[ParserEntry] = None
    deparser: Optional[ParserEntry] = None
    stages: List[StageConfig] = field(default_factory=list)
    containers: Dict[str, int] = field(default_factory=dict)
    stage_map: Dict[str, int] = field(default_factory=dict)
    placeholders: int = 0

    def stage(self, number: int) -> Optional[StageConfig]:
        return next((s for s in self.stages if s.stage == number and s.slot is None), None)

    def writes(self, slot: int) -> List[Write]:
        """Deterministic order: parser, stages, deparser, registry last."""
        out: List[Write] = []
        if self.parser is not None:
            out.append((ResourceId(STAGE_PARSER, ResourceType.PARSER), slot, self.parser))
        for sc in sorted(self.stages, key=lambda s: (s.stage, -1 if s.slot is None else s.slot)):
            row_slot = slot if sc.slot is None else sc.slot
            out.append((ResourceId(sc.stage, ResourceType.KEY_EXTRACTOR), row_slot, sc.key_extractor))
            out.append((ResourceId(sc.stage, ResourceType.KEY_MASK), row_slot, sc.key_mask))
            for row in sorted(sc.cam):
                out.append((ResourceId(sc.stage, ResourceType.CAM), row, sc.cam[row]))
            for row in sorted(sc.vliw):
                out.append((ResourceId(sc.stage, ResourceType.VLIW), row, sc.vliw[row]))
            out.append((ResourceId(sc.stage, ResourceType.PAGE_TABLE), row_slot, sc.page_table))
            for word in sorted(sc.memory):
                out.append((ResourceId(sc.stage, ResourceType.MEMORY_WORD), word, MemoryWord(sc.memory[word])))
        if self.deparser is not None:
            out.append((ResourceId(STAGE_DEPARSER, ResourceType.DEPARSER), slot, self.deparser))
        out.append((ResourceId(STAGE_REGISTRY, ResourceType.REGISTRY), slot, RegistryEntry(self.vid, True)))
        return out

    def to_dict(self, slot: int = 0) -> Dict[str, Any]:
        """Hex dump of every emitted entry (golden / diff format)."""
        return {
            "name": self.name,
            "vid": self.vid,
            "containers": dict(sorted(self.containers.items())),
            "stage_map": dict(sorted(self.stage_map.items())),
            "placeholders": self.placeholders,
            "writes": [
                {"resource": str(rid), "index": idx, "entry": format(encode_entry(rid.rtype, e), "x")}
                for rid, idx, e in self.writes(slot)
            ],
        }


# -----------------------
# LOWERING
# -----------------------
def _kind_index(flat: int) -> Tuple[int, int]:
    return flat // CONTAINERS_PER_KIND, flat % CONTAINERS_PER_KIND


def _key_operand(op, containers: Dict[str, int]) -> KeyOperand:
    if isinstance(op, int):
        return KeyOperand(immediate=True, value=op)
    if op.name in META_STATS:
        return KeyOperand(kind=3, value=int(META_STATS[op.name]))
    kind, idx = _kind_index(containers[op.name])
    return KeyOperand(kind=kind, value=idx)


def _key_layout(table: TableDecl, prog: ModuleProgram, containers: Dict[str, int]):
    """(extractor entry, mask, [(field, key-slot)])."""
    selectors = [0] * 6
    mask = 0
    layout: List[Tuple[str, int]] = []
    taken = {w: list(s) for w, s in WIDTH_SLOTS.items()}
    for ref in table.key:
        f = prog.fields[ref.name]
        ks = taken[f.width].pop(0)
        selectors[ks] = _kind_index(containers[ref.name])[1]
        mask |= slot_mask(ks)
        layout.append((ref.name, ks))
    cmp, a, b = CmpOp.NEVER, KeyOperand(), KeyOperand()
    if table.predicate:
        p = table.predicate
        cmp = CMP_CODES[p.op]
        a = _key_operand(p.left, containers)
        b = _key_operand(p.right, containers)
        mask |= 1 << PREDICATE_BIT
    return KeyExtractorEntry(tuple(selectors), cmp, a, b), KeyMaskEntry(mask), layout


def _entry_key(entry: Entry, layout, has_predicate: bool) -> int:
    key = int(entry.flag) << PREDICATE_BIT if has_predicate else 0
    for (name, ks), value in zip(layout, entry.values):
        key |= value << KEY_SLOTS[ks][1]
    return key


def _sel(op, containers: Dict[str, int]) -> Tuple[int, int]:
    """(selector, imm) for an operand."""
    if isinstance(op, int):
        return IMMEDIATE_SEL, op
    if op.name == META_PKT_LEN:
        return METADATA_INDEX, 0
    return containers[op.name], 0


def lower_action(a: Action, containers: Dict[str, int]) -> Tuple[int, AluAction]:
    """(ALU index, action) for one DSL action."""
    if isinstance(a, Port):
        return METADATA_INDEX, AluAction(Opcode.PORT, imm=a.port)
    if isinstance(a, Ports):
        return METADATA_INDEX, AluAction(Opcode.SET, op_a=IMMEDIATE_SEL, imm=a.bitmap)
    if isinstance(a, Drop):
        return METADATA_INDEX, AluAction(Opcode.DISCARD)
    if isinstance(a, Store):
        alu = containers[a.value.name]
        b, imm = _sel(a.addr, containers)
        return alu, AluAction(Opcode.STORE, op_a=alu, op_b=b, imm=imm)
    alu = containers[a.target.name]
    if a.op == "set":
        sel, imm = _sel(a.a, containers)
        return alu, AluAction(Opcode.SET, op_a=sel, imm=imm)
    if a.op in ("load", "loadd"):
        b, imm = _sel(a.a, containers)
        return alu, AluAction(Opcode.LOAD if a.op == "load" else Opcode.LOADD, op_b=b, imm=imm)
    sel_a, _ = _sel(a.a, containers)
    if isinstance(a.b, int):
        return alu, AluAction(Opcode.ADDI if a.op == "add" else Opcode.SUBI, op_a=sel_a, imm=a.b)
    sel_b, _ = _sel(a.b, containers)
    return alu, AluAction(Opcode.ADD if a.op == "add" else Opcode.SUB, op_a=sel_a, op_b=sel_b)


def lower_segment(actions: List[Action], containers: Dict[str, int], where: str) -> VliwEntry:
    by_alu: Dict[int, AluAction] = {}
    last_mem = -1
    for a in actions:
        alu, act = lower_action(a, containers)
        if alu in by_alu:
            raise ActionConflict(f"{where}: two actions drive ALU {alu}")
        if act.opcode in (Opcode.LOAD, Opcode.STORE, Opcode.LOADD):
            if alu < last_mem:
                raise ActionConflict(f"{where}: memory operations are not in container order")
            last_mem = alu
        by_alu[alu] = act
    return VliwEntry.of(by_alu)


def placeholder_keys(mask: int, count: int) -> List[int]:
    """
    Keys with a marker bit outside the mask: extracted keys are ANDed with the
    mask, so no packet can produce them. Fewer keys than asked when the mask
    leaves too few free bits.
    """
    free = [b for b in range(KEY_BITS - 1, -1, -1) if not mask >> b & 1]
    if not free or count <= 0:
        return []
    marker, spare = free[0], free[1:]
    count = min(count, 1 << len(spare))
    keys = []
    for k in range(count):
        key = 1 << marker
        for i, bit in enumerate(spare):
            if k >> i & 1:
                key |= 1 << bit
        keys.append(key)
    return keys


def build_parser_entries(prog: ModuleProgram, containers: Dict[str, int]) -> Tuple[ParserEntry, ParserEntry]:
    parse = []
    for f in prog.headers:
        kind, idx = _kind_index(containers[f.name])
        parse.append(ParseAction(f.offset, kind, idx, True))
    shared = ParseAction(DST_IP_OFFSET, ContainerKind.FOUR_BYTE, 7, True)
    if shared not in parse:
        parse.append(shared)
    deparse = [shared]
    for name in prog.written_fields():
        if containers[name] == SHARED_DST_IP:
            continue
        f = prog.fields[name]
        kind, idx = _kind_index(containers[name])
        deparse.append(ParseAction(f.offset, kind, idx, True))
    return ParserEntry.of(parse), ParserEntry.of(deparse)


def default_placement(quota: ResourceQuota, stage_map: Dict[str, int], vid: int = 1) -> Placement:
    stages = sorted(set(stage_map.values()))
    return Placement(vid, {s: tuple(range(quota.cam_entries)) for s in stages}, {s: 0 for s in stages})


def allocate_and_lower(
    prog: ModuleProgram,
    quota: ResourceQuota,
    stage_map: Dict[str, int],
    placement: Optional[Placement] = None,
) -> CompiledModule:
    placement = placement or default_placement(quota, stage_map)
    containers = allocate_containers(prog)
    parser, deparser = build_parser_entries(prog, containers)
    cm = CompiledModule(prog.name, placement.vid, parser, deparser, containers=containers, stage_map=dict(stage_map))

    for node in build_nodes(prog):
        stage = stage_map[node.name]
        rows = list(placement.cam_rows.get(stage, ()))
        if len(node.entries) > len(rows):
            raise PlacementError(f"{node.name}: {len(node.entries)} entries, {len(rows)} rows owned in stage {stage}")
        ke, mask, layout = _key_layout(node.table, prog, containers)
        sc = StageConfig(stage, ke, mask, tables=[node.name])
        has_pred = node.table.predicate is not None
        for row, (entry, seg) in zip(rows, node.entries):
            sc.cam[row] = CamEntry(placement.vid, _entry_key(entry, layout, has_pred))
            sc.vliw[row] = lower_segment(seg, containers, f"{node.name} line {entry.line}")
        spare = rows[len(node.entries):]
        keys = placeholder_keys(mask.mask, len(spare))
        for row, key in zip(spare, keys):
            sc.cam[row] = CamEntry(placement.vid, key)
            sc.vliw[row] = VliwEntry()
        for row in spare[len(keys):]:
            sc.cam[row] = CamEntry()
            sc.vliw[row] = VliwEntry()
        cm.placeholders += len(keys)
        if node.memory:
            base = placement.memory_base.get(stage, 0)
            sc.page_table = PageTableEntry(base, node.memory)
            sc.memory = {w: 0 for w in range(base, base + node.memory)}
        cm.stages.append(sc)

    # stages the allocation owns but no table landed in keep cleared rows
    for stage, rows in sorted(placement.cam_rows.items()):
        if cm.stage(stage) is None and rows:
            cm.stages.append(StageConfig(stage, cam={r: CamEntry() for r in rows}, vliw={r: VliwEntry() for r in rows}))
    cm.stages.sort(key=lambda s: s.stage)
    verify_compiled(cm, quota, prog)
    return cm


def verify_compiled(cm: CompiledModule, quota: ResourceQuota, prog: ModuleProgram) -> None:
    """Post-hoc geometry and quota re-check of everything about to be emitted."""
    if len(cm.parser.valid_actions) != parser_action_count(prog):
        raise PlacementError("parser entry lost a field")
    if len(cm.parser.valid_actions) > quota.parser_actions:
        raise PlacementError("parser entry exceeds the parser-action quota")
    seen = set()
    for sc in cm.stages:
        if sc.stage not in GEOMETRY.user_stages:
            raise PlacementError(f"stage {sc.stage} is not a user stage")
        if sc.stage in seen:
            raise PlacementError(f"two tables in stage {sc.stage}")
        seen.add(sc.stage)
        if len(sc.cam) > quota.cam_entries:
            raise PlacementError(f"stage {sc.stage}: {len(sc.cam)} rows over quota")
        if sc.page_table.range > quota.memory_words:
            raise PlacementError(f"stage {sc.stage}: memory slice over quota")
        for entry in [sc.key_extractor, sc.key_mask, sc.page_table, *sc.cam.values(), *sc.vliw.values()]:
            entry.encode()
        for row, entry in sc.cam.items():
            if not 0 <= row < GEOMETRY.cam_depth:
                raise PlacementError(f"CAM row {row} out of range")
            if not entry.cleared and entry.vid != cm.vid:
                raise PlacementError(f"CAM row {row} carries VID {entry.vid}")
    keys = [(sc.stage, e.key) for sc in cm.stages for e in sc.cam.values() if not e.cleared]
    if len(keys) != len(set(keys)):
        raise PlacementError("duplicate CAM keys emitted")


# -----------------------
# DRIVER
# -----------------------
@dataclass
class ModulePlan:
    program: ModuleProgram
    quota: ResourceQuota
    stage_map: Dict[str, int]
    memory_words: Dict[int, int]

    @property
    def stages(self) -> List[int]:
        return sorted(set(self.stage_map.values()))


def check_program(prog: ModuleProgram, quota: ResourceQuota) -> None:
    violations = static_check(prog)
    if violations:
        raise CheckFailed("static", violations)
    violations = resource_check(prog, quota)
    if violations:
        raise CheckFailed("resource", violations)


def plan_module(prog: ModuleProgram, quota: ResourceQuota) -> ModulePlan:
    check_program(prog, quota)
    nodes = build_nodes(prog)
    stage_map = place_nodes(nodes)
    words = {stage_map[n.name]: n.memory for n in nodes if n.memory}
    return ModulePlan(prog, quota, stage_map, words)


def compile_module(
    source: Union[str, ModuleProgram],
    quota: Optional[ResourceQuota] = None,
    placement: Optional[Placement] = None,
) -> CompiledModule:
    prog = parse_dsl(source) if isinstance(source, str) else source
    quota = resolve_quota(quota, prog)
    try:
        plan = plan_module(prog, quota)
        cm = allocate_and_lower(prog, quota, plan.stage_map, placement)
    except Exception as e:
        logger.info("compile of %s failed: %s", prog.name, e)
        raise
    logger.debug("compiled %s: stages %s", prog.name, plan.stage_map)
    return cm


def emit_reconfig_packets(cm: CompiledModule, slot: int, cookie: int) -> List[ReconfigPacket]:
    """One packet per emitted entry; the registry write comes last."""
    return [make_write(rid, idx, entry, cookie) for rid, idx, entry in cm.writes(slot)]
