# src/pipeline.py
"""
Data-plane model: packet filter -> parser -> 5 match-action stages -> deparser.

One packet fully traverses every unit before the next one starts; all state
lives in PipelineState and is only mutated by process_packet (stateful
memory, statistics) and by control-plane writes (src/control.py).

Per stage, for the packet's module slot s:
  key   = extract(key_extractor[s]) & key_mask[s]      (193 bits)
  hit   = CAM row whose (vid, key) equals the packet's  (or miss)
  phv'  = VLIW[hit](phv)                                (miss -> identity)
Stateful memory is reached only through page_table[s] (base, range).
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from enum import Enum
from typing import Any, Dict, List, Optional, Tuple

from src.formats import (
    CONTROL_VID,
    GEOMETRY,
    IMMEDIATE_SEL,
    PREDICATE_BIT,
    KEY_SLOTS,
    CamEntry,
    CmpOp,
    KeyExtractorEntry,
    KeyMaskEntry,
    KeyOperand,
    MetaStat,
    Opcode,
    PageTableEntry,
    ParserEntry,
    RegistryEntry,
    ResourceType,
    VliwEntry,
    decode_entry,
    encode_entry,
)
from src.frames import frame_vid, has_reconfig_framing, reconfig_cookie
from src.phv import (
    CONTAINERS_PER_KIND,
    HEADER_REGION,
    METADATA_INDEX,
    NUM_CONTAINERS,
    WIDTH_MASKS,
    ContainerKind,
    Metadata,
    Phv,
    RawPacket,
    phv_zeroed,
)

logger = logging.getLogger(__name__)

WORD_MASK = 0xFFFF_FFFF


class Verdict(str, Enum):
    FORWARDED = "FORWARDED"
    DROPPED = "DROPPED"
    CONSUMED_RECONFIG = "CONSUMED_RECONFIG"


class DropReason(str, Enum):
    NO_VLAN = "NoVlan"
    BAD_COOKIE = "BadCookie"
    UNKNOWN_MODULE = "UnknownModule"
    UNDER_UPDATE = "UnderUpdate"
    DISCARDED = "Discarded"
    NO_ROUTE = "NoRoute"
    OVERSIZE = "Oversize"


class MemOp(str, Enum):
    LOAD = "LOAD"
    STORE = "STORE"
    LOADD = "LOADD"


# -----------------------
# STATE
# -----------------------
@dataclass
class FilterRegisters:
    cookie: int = 0
    reconfig_counter: int = 0
    update_bitmap: int = 0


def _rows(factory, n: int) -> list:
    return [factory() for _ in range(n)]


@dataclass
class StageState:
    number: int
    key_extractor: List[KeyExtractorEntry] = field(default_factory=lambda: _rows(KeyExtractorEntry, GEOMETRY.key_extractor_depth))
    key_mask: List[KeyMaskEntry] = field(default_factory=lambda: _rows(KeyMaskEntry, GEOMETRY.key_mask_depth))
    cam: List[CamEntry] = field(default_factory=lambda: _rows(CamEntry, GEOMETRY.cam_depth))
    vliw: List[VliwEntry] = field(default_factory=lambda: _rows(VliwEntry, GEOMETRY.vliw_depth))
    page_table: List[PageTableEntry] = field(default_factory=lambda: _rows(PageTableEntry, GEOMETRY.page_table_depth))
    memory: List[int] = field(default_factory=lambda: [0] * GEOMETRY.memory_words)
    faults: List[int] = field(default_factory=lambda: [0] * GEOMETRY.max_modules)
    # (vid, key) -> row, valid rows only
    cam_index: Dict[Tuple[int, int], int] = field(default_factory=dict)

    def cam_valid(self, row: int) -> bool:
        return not self.cam[row].cleared

    def write_cam(self, row: int, entry: CamEntry) -> Optional[str]:
        """Install or clear one row; returns a rejection reason or None."""
        old = self.cam[row]
        if entry.cleared:
            if not old.cleared:
                self.cam_index.pop((old.vid, old.key), None)
            self.cam[row] = CamEntry()
            return None
        owner = self.cam_index.get((entry.vid, entry.key))
        if owner is not None and owner != row:
            return "DuplicateKey"
        if not old.cleared:
            self.cam_index.pop((old.vid, old.key), None)
        self.cam[row] = entry
        self.cam_index[(entry.vid, entry.key)] = row
        return None


@dataclass
class SystemStats:
    link_util: int = 0
    queue_len: int = 0
    packets: Dict[int, int] = field(default_factory=dict)
    bytes: Dict[int, int] = field(default_factory=dict)
    drops: Dict[str, int] = field(default_factory=dict)

    def count_forward(self, slot: int, nbytes: int) -> None:
        self.packets[slot] = self.packets.get(slot, 0) + 1
        self.bytes[slot] = self.bytes.get(slot, 0) + nbytes

    def count_drop(self, reason: DropReason) -> None:
        self.drops[reason.value] = self.drops.get(reason.value, 0) + 1


@dataclass
class Rejection:
    resource: str
    index: int
    reason: str
    counter: int


@dataclass
class PipelineState:
    filter: FilterRegisters = field(default_factory=FilterRegisters)
    parser_table: List[ParserEntry] = field(default_factory=lambda: _rows(ParserEntry, GEOMETRY.parser_depth))
    deparser_table: List[ParserEntry] = field(default_factory=lambda: _rows(ParserEntry, GEOMETRY.deparser_depth))
    stages: List[StageState] = field(default_factory=lambda: [StageState(n) for n in range(1, GEOMETRY.num_stages + 1)])
    registry_rows: List[RegistryEntry] = field(default_factory=lambda: _rows(RegistryEntry, GEOMETRY.max_modules))
    vid_registry: Dict[int, int] = field(default_factory=dict)
    stats: SystemStats = field(default_factory=SystemStats)
    rejections: List[Rejection] = field(default_factory=list)
    max_frame: int = 1518
    next_seq: int = 0

    @classmethod
    def fresh(cls, cookie: int = 0, max_frame: int = 1518) -> "PipelineState":
        return cls(filter=FilterRegisters(cookie=cookie), max_frame=max_frame)

    def stage(self, number: int) -> StageState:
        return self.stages[number - 1]

    def slot_of(self, vid: int) -> Optional[int]:
        return self.vid_registry.get(vid)

    def bind(self, slot: int, entry: RegistryEntry) -> Optional[str]:
        """Registry row write; returns a rejection reason or None."""
        old = self.registry_rows[slot]
        if entry.valid:
            if entry.vid == CONTROL_VID:
                return "ReservedVid"
            other = self.vid_registry.get(entry.vid)
            if other is not None and other != slot:
                return "SlotMismatch"
        if old.valid:
            self.vid_registry.pop(old.vid, None)
        self.registry_rows[slot] = entry
        if entry.valid:
            self.vid_registry[entry.vid] = slot
        return None

    def set_system_stats(self, link_util: int, queue_len: int) -> None:
        self.stats.link_util = link_util & 0xFFFF
        self.stats.queue_len = queue_len & 0xFFFF

    # -- dump / load (hex rows) ---------------------------------------------
    def to_dict(self) -> Dict[str, Any]:
        def rows(rtype: ResourceType, entries) -> List[str]:
            return [format(encode_entry(rtype, e), "x") for e in entries]

        return {
            "filter": {
                "cookie": self.filter.cookie,
                "reconfig_counter": self.filter.reconfig_counter,
                "update_bitmap": self.filter.update_bitmap,
            },
            "parser": rows(ResourceType.PARSER, self.parser_table),
            "deparser": rows(ResourceType.DEPARSER, self.deparser_table),
            "registry": rows(ResourceType.REGISTRY, self.registry_rows),
            "stages": [
                {
                    "stage": s.number,
                    "key_extractor": rows(ResourceType.KEY_EXTRACTOR, s.key_extractor),
                    "key_mask": rows(ResourceType.KEY_MASK, s.key_mask),
                    "cam": rows(ResourceType.CAM, s.cam),
                    "vliw": rows(ResourceType.VLIW, s.vliw),
                    "page_table": rows(ResourceType.PAGE_TABLE, s.page_table),
                    "memory": b"".join(w.to_bytes(4, "big") for w in s.memory).hex(),
                    "faults": list(s.faults),
                }
                for s in self.stages
            ],
            "stats": {
                "link_util": self.stats.link_util,
                "queue_len": self.stats.queue_len,
                "packets": {str(k): v for k, v in sorted(self.stats.packets.items())},
                "bytes": {str(k): v for k, v in sorted(self.stats.bytes.items())},
                "drops": dict(sorted(self.stats.drops.items())),
            },
            "max_frame": self.max_frame,
            "next_seq": self.next_seq,
        }

    def config_view(self) -> Dict[str, Any]:
        """Configuration tables only (what a reconfiguration session writes)."""
        d = self.to_dict()
        for s in d["stages"]:
            s.pop("faults")
        d.pop("stats")
        d.pop("filter")
        d.pop("max_frame")
        d.pop("next_seq")
        return d

    @classmethod
    def from_dict(cls, d: Dict[str, Any]) -> "PipelineState":
        def rows(rtype: ResourceType, hexes: List[str]) -> list:
            return [decode_entry(rtype, int(h, 16)) for h in hexes]

        st = cls(max_frame=d.get("max_frame", 1518))
        f = d["filter"]
        st.filter = FilterRegisters(f["cookie"], f["reconfig_counter"], f["update_bitmap"])
        st.parser_table = rows(ResourceType.PARSER, d["parser"])
        st.deparser_table = rows(ResourceType.DEPARSER, d["deparser"])
        for slot, entry in enumerate(rows(ResourceType.REGISTRY, d["registry"])):
            st.bind(slot, entry)
        for sd in d["stages"]:
            s = st.stage(sd["stage"])
            s.key_extractor = rows(ResourceType.KEY_EXTRACTOR, sd["key_extractor"])
            s.key_mask = rows(ResourceType.KEY_MASK, sd["key_mask"])
            s.vliw = rows(ResourceType.VLIW, sd["vliw"])
            s.page_table = rows(ResourceType.PAGE_TABLE, sd["page_table"])
            for row, entry in enumerate(rows(ResourceType.CAM, sd["cam"])):
                s.write_cam(row, entry)
            raw = bytes.fromhex(sd["memory"])
            s.memory = [int.from_bytes(raw[i:i + 4], "big") for i in range(0, len(raw), 4)]
            s.faults = list(sd.get("faults", s.faults))
        stats = d.get("stats", {})
        st.stats = SystemStats(
            link_util=stats.get("link_util", 0),
            queue_len=stats.get("queue_len", 0),
            packets={int(k): v for k, v in stats.get("packets", {}).items()},
            bytes={int(k): v for k, v in stats.get("bytes", {}).items()},
            drops=dict(stats.get("drops", {})),
        )
        st.next_seq = d.get("next_seq", 0)
        return st


# -----------------------
# OUTCOMES / TRACE
# -----------------------
@dataclass
class UnitRecord:
    unit: str
    detail: Dict[str, Any] = field(default_factory=dict)

    def to_dict(self) -> Dict[str, Any]:
        return {"unit": self.unit, **self.detail}


@dataclass
class PacketOutcome:
    verdict: Verdict
    seq: int = 0
    slot: Optional[int] = None
    reason: Optional[str] = None
    ports: Tuple[int, ...] = ()
    egress_packet: Optional[RawPacket] = None
    trace: List[UnitRecord] = field(default_factory=list)

    @property
    def forwarded(self) -> bool:
        return self.verdict == Verdict.FORWARDED

    def to_dict(self) -> Dict[str, Any]:
        return {
            "seq": self.seq,
            "verdict": self.verdict.value,
            "reason": self.reason,
            "slot": self.slot,
            "ports": list(self.ports),
            "egress": self.egress_packet.hex() if self.egress_packet else None,
            "units": [u.to_dict() for u in self.trace],
        }


@dataclass(frozen=True)
class FilterDecision:
    kind: str  # "DATA" | "RECONFIG" | "DROP"
    slot: Optional[int] = None
    reason: Optional[DropReason] = None


# -----------------------
# PACKET FILTER
# -----------------------
def filter_packet(state: PipelineState, pkt: RawPacket) -> FilterDecision:
    data = pkt.data
    vid = frame_vid(data)
    if vid is None:
        return FilterDecision("DROP", reason=DropReason.NO_VLAN)
    if vid == CONTROL_VID:
        if has_reconfig_framing(data) and reconfig_cookie(data) == state.filter.cookie:
            return FilterDecision("RECONFIG")
        return FilterDecision("DROP", reason=DropReason.BAD_COOKIE)
    slot = state.slot_of(vid)
    if slot is None:
        return FilterDecision("DROP", reason=DropReason.UNKNOWN_MODULE)
    if state.filter.update_bitmap >> slot & 1:
        return FilterDecision("DROP", slot=slot, reason=DropReason.UNDER_UPDATE)
    return FilterDecision("DATA", slot=slot)


# -----------------------
# PARSER
# -----------------------
def parse(state: PipelineState, pkt: RawPacket, slot: int) -> Phv:
    data = pkt.data
    # bytes past the packet end or the header region read as zero
    header = data[:HEADER_REGION].ljust(HEADER_REGION + 6, b"\x00")
    values = list(phv_zeroed().values)
    for a in state.parser_table[slot].valid_actions:
        n = ContainerKind(a.kind).nbytes
        values[a.kind * CONTAINERS_PER_KIND + a.index] = int.from_bytes(header[a.offset:a.offset + n], "big")
    vid = frame_vid(data) or 0
    meta = Metadata(
        src_port=pkt.ingress_port & 0xFF,
        pkt_len=min(len(data), 0xFFFF),
        queue_len=state.stats.queue_len,
        link_util=state.stats.link_util,
        module_slot=slot,
        vid=vid,
    )
    return Phv(tuple(values), meta)


# -----------------------
# KEY EXTRACTOR
# -----------------------
def _operand_value(op: KeyOperand, values, meta: Metadata) -> int:
    if op.immediate:
        return op.value
    if op.kind == 3:
        stat = MetaStat(op.value)
        if stat == MetaStat.LINK_UTIL:
            return meta.link_util
        if stat == MetaStat.QUEUE_LEN:
            return meta.queue_len
        if stat == MetaStat.PKT_LEN:
            return meta.pkt_len
        return int(not meta.discard and meta.dest_port_bitmap != 0)
    return values[op.kind * CONTAINERS_PER_KIND + op.value] & 0xFFFF


def evaluate_predicate(ke: KeyExtractorEntry, values, meta: Metadata) -> bool:
    if ke.cmp == CmpOp.NEVER:
        return False
    if ke.cmp == CmpOp.ALWAYS:
        return True
    a = _operand_value(ke.operand_a, values, meta)
    b = _operand_value(ke.operand_b, values, meta)
    return {
        CmpOp.EQ: a == b,
        CmpOp.NE: a != b,
        CmpOp.GT: a > b,
        CmpOp.GE: a >= b,
        CmpOp.LT: a < b,
        CmpOp.LE: a <= b,
    }[ke.cmp]


def extract_key(stage: StageState, phv: Phv, slot: int) -> int:
    ke = stage.key_extractor[slot]
    values = phv.values
    key = int(evaluate_predicate(ke, values, phv.metadata)) << PREDICATE_BIT
    for sel, (kind, lsb) in zip(ke.selectors, KEY_SLOTS):
        key |= values[kind * CONTAINERS_PER_KIND + sel] << lsb
    return key & stage.key_mask[slot].mask


# -----------------------
# EXACT MATCH
# -----------------------
def match(stage: StageState, key: int, vid: int) -> Optional[int]:
    row = stage.cam_index.get((vid, key))
    if row is not None:
        entry = stage.cam[row]
        assert entry.vid == vid and entry.key == key, "CAM index out of sync"
    return row


# -----------------------
# STATEFUL MEMORY
# -----------------------
def access_memory(stage: StageState, slot: int, vaddr: int, op: MemOp, value: int = 0) -> Optional[int]:
    """
    Translate through page_table[slot]; None signals a fault (memory
    untouched, fault counter bumped). LOAD and LOADD return the old word,
    STORE returns the value written.
    """
    page = stage.page_table[slot]
    if not 0 <= vaddr < page.range:
        stage.faults[slot] += 1
        logger.debug("stage %d slot %d: fault at vaddr %d (range %d)", stage.number, slot, vaddr, page.range)
        return None
    phys = page.base + vaddr
    old = stage.memory[phys]
    if op == MemOp.STORE:
        stage.memory[phys] = value & WORD_MASK
        return value & WORD_MASK
    if op == MemOp.LOADD:
        stage.memory[phys] = (old + 1) & WORD_MASK
    return old


# -----------------------
# ACTION ENGINE
# -----------------------
_MEM_OPS = {Opcode.LOAD: MemOp.LOAD, Opcode.STORE: MemOp.STORE, Opcode.LOADD: MemOp.LOADD}


def execute_vliw(stage: StageState, phv: Phv, slot: int, vliw_index: Optional[int], fired: Optional[list] = None) -> Phv:
    """All operands read the input PHV; ALU i writes only container i."""
    if vliw_index is None:
        return phv
    entry = stage.vliw[vliw_index]
    src = phv.values
    meta = phv.metadata
    out = list(src)
    discard = meta.discard
    ports = meta.dest_port_bitmap

    def operand(sel: int, imm: int) -> int:
        if sel == IMMEDIATE_SEL:
            return imm
        if sel == METADATA_INDEX:
            return meta.pkt_len
        return src[sel]

    for i, a in enumerate(entry.actions):
        op = a.opcode
        if op == Opcode.NOP:
            continue
        if fired is not None:
            fired.append(f"{i}:{op.name.lower()}")
        if i == METADATA_INDEX:
            if op == Opcode.PORT:
                ports = (1 << a.imm) & WORD_MASK
            elif op == Opcode.SET:
                ports = operand(a.op_a, a.imm) & WORD_MASK
            elif op == Opcode.DISCARD:
                discard = True
            continue
        mask = WIDTH_MASKS[i]
        if op == Opcode.ADD:
            out[i] = (operand(a.op_a, a.imm) + operand(a.op_b, a.imm)) & mask
        elif op == Opcode.SUB:
            out[i] = (operand(a.op_a, a.imm) - operand(a.op_b, a.imm)) & mask
        elif op == Opcode.ADDI:
            out[i] = (operand(a.op_a, a.imm) + a.imm) & mask
        elif op == Opcode.SUBI:
            out[i] = (operand(a.op_a, a.imm) - a.imm) & mask
        elif op == Opcode.SET:
            out[i] = operand(a.op_a, a.imm) & mask
        elif op in _MEM_OPS:
            vaddr = a.imm if a.op_b == IMMEDIATE_SEL else operand(a.op_b, a.imm)
            stored = operand(a.op_a, a.imm) if op == Opcode.STORE else 0
            res = access_memory(stage, slot, vaddr, _MEM_OPS[op], stored)
            if res is None:
                out[i] = 0
            elif op != Opcode.STORE:
                out[i] = res & mask
    if ports != meta.dest_port_bitmap or discard != meta.discard:
        meta = Metadata(
            discard=discard,
            dest_port_bitmap=ports,
            src_port=meta.src_port,
            pkt_len=meta.pkt_len,
            queue_len=meta.queue_len,
            link_util=meta.link_util,
            module_slot=meta.module_slot,
            vid=meta.vid,
        )
    return Phv(tuple(out), meta)


# -----------------------
# DEPARSER
# -----------------------
def deparse(state: PipelineState, phv: Phv, original: RawPacket, slot: int) -> Optional[RawPacket]:
    """Writes back only the containers the deparser entry names; None when discarded."""
    if phv.metadata.discard:
        return None
    data = bytearray(original.data)
    limit = min(len(data), HEADER_REGION)
    for a in state.deparser_table[slot].valid_actions:
        n = ContainerKind(a.kind).nbytes
        raw = phv.values[a.kind * CONTAINERS_PER_KIND + a.index].to_bytes(n, "big")
        for j in range(n):
            pos = a.offset + j
            if pos < limit:
                data[pos] = raw[j]
    return RawPacket(bytes(data), original.arrival_seq, original.ingress_port)


def egress_ports(phv: Phv) -> Tuple[int, ...]:
    bitmap = phv.metadata.dest_port_bitmap
    return tuple(p for p in range(32) if bitmap >> p & 1)


# -----------------------
# FULL PATH
# -----------------------
def run_stages(state: PipelineState, phv: Phv, slot: int, trace: Optional[List[UnitRecord]] = None) -> Phv:
    vid = phv.metadata.vid
    for stage in state.stages:
        key = extract_key(stage, phv, slot)
        row = match(stage, key, vid)
        fired: List[str] = []
        phv = execute_vliw(stage, phv, slot, row, fired)
        if trace is not None:
            trace.append(UnitRecord(f"stage{stage.number}", {"key": format(key, "x"), "hit": row, "actions": fired}))
    return phv


def _drop(state: PipelineState, seq: int, reason: DropReason, slot: Optional[int], trace: List[UnitRecord]) -> PacketOutcome:
    state.stats.count_drop(reason)
    return PacketOutcome(Verdict.DROPPED, seq=seq, slot=slot, reason=reason.value, trace=trace)


def process_packet(state: PipelineState, pkt: RawPacket) -> PacketOutcome:
    seq = pkt.arrival_seq
    state.next_seq = max(state.next_seq, seq + 1)
    trace: List[UnitRecord] = []
    if len(pkt.data) > state.max_frame:
        trace.append(UnitRecord("filter", {"decision": "DROP"}))
        return _drop(state, seq, DropReason.OVERSIZE, None, trace)

    decision = filter_packet(state, pkt)
    trace.append(UnitRecord("filter", {"decision": decision.kind}))
    if decision.kind == "DROP":
        return _drop(state, seq, decision.reason, decision.slot, trace)
    if decision.kind == "RECONFIG":
        from src.control import consume_reconfig

        result = consume_reconfig(state, pkt)
        trace.append(UnitRecord("daisy_chain", result.to_dict()))
        return PacketOutcome(Verdict.CONSUMED_RECONFIG, seq=seq, reason=result.reason, trace=trace)

    slot = decision.slot
    phv = parse(state, pkt, slot)
    trace.append(UnitRecord("parser", {"slot": slot, "vid": phv.metadata.vid}))
    phv = run_stages(state, phv, slot, trace)
    out = deparse(state, phv, pkt, slot)
    trace.append(UnitRecord("deparser", {"discard": phv.metadata.discard}))
    if out is None:
        return _drop(state, seq, DropReason.DISCARDED, slot, trace)
    ports = egress_ports(phv)
    if not ports:
        return _drop(state, seq, DropReason.NO_ROUTE, slot, trace)
    state.stats.count_forward(slot, len(out.data))
    return PacketOutcome(Verdict.FORWARDED, seq=seq, slot=slot, ports=ports, egress_packet=out, trace=trace)


def inject(state: PipelineState, data: bytes, ingress_port: int = 0) -> PacketOutcome:
    """Stamp the next arrival sequence number and process."""
    pkt = RawPacket(data, arrival_seq=state.next_seq, ingress_port=ingress_port)
    return process_packet(state, pkt)


__all__ = [
    "DropReason",
    "FilterDecision",
    "FilterRegisters",
    "MemOp",
    "PacketOutcome",
    "PipelineState",
    "StageState",
    "Verdict",
    "access_memory",
    "deparse",
    "execute_vliw",
    "extract_key",
    "filter_packet",
    "inject",
    "match",
    "parse",
    "process_packet",
]
