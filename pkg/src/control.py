# src/control.py
"""
Control plane: register access, daisy-chain writes, reconfiguration sessions,
slot / row / memory allocation and the module lifecycle.

Secure reconfiguration of slot s:
  1. read COOKIE and COUNTER
  2. set bit s in BITMAP         (s's data packets now drop as UnderUpdate)
  3. inject every write, stamped with the cookie, through process_packet
  4. poll COUNTER until it reaches start + len(writes)
  5. clear bit s

Rejected writes still advance COUNTER (the packet traversed the chain) and are
recorded in state.rejections.
"""

from __future__ import annotations

import functools
import logging
import threading
from dataclasses import dataclass, field
from enum import Enum
from typing import Any, Dict, Iterable, List, Optional, Set, Tuple

from src.errors import (
    CamExhausted,
    ControlError,
    FormatError,
    MemoryExhausted,
    OwnershipError,
    ReconfigTimeout,
    RegistryFull,
    SessionBusy,
    WriteToReadOnly,
)
from src.formats import (
    CONTROL_VID,
    DEPTHS,
    GEOMETRY,
    STAGE_DEPARSER,
    STAGE_PARSER,
    STAGE_REGISTRY,
    CamEntry,
    KeyExtractorEntry,
    KeyMaskEntry,
    MemoryWord,
    PageTableEntry,
    ParserEntry,
    ReconfigPacket,
    RegistryEntry,
    ResourceId,
    ResourceType,
    VliwEntry,
    make_write,
)
from src.frames import parse_reconfig_packet, to_raw
from src.phv import RawPacket

logger = logging.getLogger(__name__)

WORD_MASK = 0xFFFF_FFFF


# -----------------------
# REGISTERS
# -----------------------
class Register(str, Enum):
    COOKIE = "cookie"
    COUNTER = "counter"
    BITMAP = "bitmap"


def reg_read(state, reg: Register) -> int:
    reg = Register(reg)
    f = state.filter
    if reg == Register.COOKIE:
        return f.cookie
    if reg == Register.COUNTER:
        return f.reconfig_counter
    return f.update_bitmap


def reg_write(state, reg: Register, value: int) -> None:
    reg = Register(reg)
    if reg == Register.COUNTER:
        raise WriteToReadOnly("the reconfiguration counter is read-only")
    value &= WORD_MASK
    if reg == Register.COOKIE:
        state.filter.cookie = value
    else:
        state.filter.update_bitmap = value


# -----------------------
# DAISY CHAIN
# -----------------------
@dataclass
class ApplyResult:
    applied: bool
    resource: str = ""
    index: int = 0
    reason: Optional[str] = None

    def to_dict(self) -> Dict[str, Any]:
        return {"applied": self.applied, "resource": self.resource, "index": self.index, "reason": self.reason}


def _under_update(state, slot: int) -> bool:
    return bool(state.filter.update_bitmap >> slot & 1)


def _cam_owner_ok(state, vid: int) -> bool:
    """
    A CAM row tagged vid may be touched only while the slot vid maps to is
    being updated. A VID with no binding yet belongs to whichever unbound slot
    is being loaded; with none loading, the write has no owner.
    """
    slot = state.slot_of(vid)
    if slot is not None:
        return _under_update(state, slot)
    return any(
        _under_update(state, s) and not row.valid
        for s, row in enumerate(state.registry_rows)
    )


def _reject(state, rp_label: str, index: int, reason: str) -> ApplyResult:
    from src.pipeline import Rejection

    state.rejections.append(Rejection(rp_label, index, reason, state.filter.reconfig_counter))
    logger.warning("reconfiguration write %s[%d] rejected: %s", rp_label, index, reason)
    return ApplyResult(False, rp_label, index, reason)


def apply_reconfig(state, rp: ReconfigPacket) -> ApplyResult:
    """One chain write. Assumes the cookie was already checked by the filter."""
    state.filter.reconfig_counter = (state.filter.reconfig_counter + 1) & WORD_MASK
    res = rp.resource
    label = str(res)
    idx = rp.index
    if idx >= DEPTHS[res.rtype]:
        return _reject(state, label, idx, "BadIndex")
    try:
        entry = rp.entry
    except FormatError as e:
        return _reject(state, label, idx, f"BadEntry: {e}")

    rtype = res.rtype
    if rtype == ResourceType.PARSER:
        state.parser_table[idx] = entry
    elif rtype == ResourceType.DEPARSER:
        state.deparser_table[idx] = entry
    elif rtype == ResourceType.REGISTRY:
        if not _under_update(state, idx):
            return _reject(state, label, idx, "SlotMismatch")
        reason = state.bind(idx, entry)
        if reason:
            return _reject(state, label, idx, reason)
    else:
        stage = state.stage(res.stage)
        if rtype == ResourceType.KEY_EXTRACTOR:
            stage.key_extractor[idx] = entry
        elif rtype == ResourceType.KEY_MASK:
            stage.key_mask[idx] = entry
        elif rtype == ResourceType.VLIW:
            stage.vliw[idx] = entry
        elif rtype == ResourceType.PAGE_TABLE:
            stage.page_table[idx] = entry
        elif rtype == ResourceType.MEMORY_WORD:
            stage.memory[idx] = entry.value
        elif rtype == ResourceType.CAM:
            old = stage.cam[idx]
            if not old.cleared and not _cam_owner_ok(state, old.vid):
                return _reject(state, label, idx, "SlotMismatch")
            if not entry.cleared and not _cam_owner_ok(state, entry.vid):
                return _reject(state, label, idx, "SlotMismatch")
            reason = stage.write_cam(idx, entry)
            if reason:
                return _reject(state, label, idx, reason)
    logger.debug("applied %s[%d]", label, idx)
    return ApplyResult(True, label, idx)


def consume_reconfig(state, pkt: RawPacket) -> ApplyResult:
    """Data-path entry point for a packet the filter classified RECONFIG."""
    try:
        rp = parse_reconfig_packet(pkt)
    except FormatError as e:
        state.filter.reconfig_counter = (state.filter.reconfig_counter + 1) & WORD_MASK
        return _reject(state, "malformed", 0, f"Malformed: {e}")
    return apply_reconfig(state, rp)


# -----------------------
# OWNERSHIP
# -----------------------
@dataclass
class Ownership:
    """Rows a slot may write outside its per-slot rows."""

    slot: int
    cam_rows: Dict[int, Set[int]] = field(default_factory=dict)
    memory: Dict[int, Tuple[int, int]] = field(default_factory=dict)  # stage -> (base, size)
    vid: Optional[int] = None

    def permits(self, rp: ReconfigPacket) -> bool:
        r = rp.resource
        if r.rtype in (ResourceType.CAM, ResourceType.VLIW):
            if rp.index not in self.cam_rows.get(r.stage, set()):
                return False
            if r.rtype == ResourceType.VLIW:
                return True
            # a CAM row carries the module's own VID or is cleared
            try:
                entry = rp.entry
            except FormatError:
                return False
            return entry.cleared or entry.vid == self.vid
        if r.rtype == ResourceType.MEMORY_WORD:
            base, size = self.memory.get(r.stage, (0, 0))
            return base <= rp.index < base + size
        return rp.index == self.slot


# -----------------------
# SESSIONS
# -----------------------
@dataclass
class ReconfigSession:
    slot: int
    packets: List[ReconfigPacket]
    counter_start: int
    cookie: int
    sent: int = 0
    finished: bool = False

    @property
    def target(self) -> int:
        return (self.counter_start + len(self.packets)) & WORD_MASK

    @property
    def remaining(self) -> int:
        return len(self.packets) - self.sent

    @classmethod
    def begin(cls, state, slot: int, packets: Iterable[ReconfigPacket], ownership: Optional[Ownership] = None) -> "ReconfigSession":
        cookie = reg_read(state, Register.COOKIE)
        start = reg_read(state, Register.COUNTER)
        stamped = [ReconfigPacket(cookie, p.resource, p.index, p.entry_bits) for p in packets]
        if ownership is not None:
            for p in stamped:
                if not ownership.permits(p):
                    raise OwnershipError(f"slot {slot} does not own {p.resource}[{p.index}]")
        reg_write(state, Register.BITMAP, reg_read(state, Register.BITMAP) | (1 << slot))
        logger.info("session slot %d: %d writes, counter at %d", slot, len(stamped), start)
        return cls(slot, stamped, start, cookie)

    def step(self, state, n: Optional[int] = None) -> list:
        from src.pipeline import inject

        n = self.remaining if n is None else min(n, self.remaining)
        outcomes = []
        for p in self.packets[self.sent:self.sent + n]:
            outcomes.append(inject(state, to_raw(p).data))
        self.sent += n
        return outcomes

    def done(self, state) -> bool:
        return reg_read(state, Register.COUNTER) == self.target

    def finish(self, state) -> None:
        observed = reg_read(state, Register.COUNTER)
        if observed != self.target:
            raise ReconfigTimeout(self.slot, self.target, observed)
        reg_write(state, Register.BITMAP, reg_read(state, Register.BITMAP) & ~(1 << self.slot))
        self.finished = True
        logger.info("session slot %d finished at counter %d", self.slot, observed)


def reconfigure_module(state, slot: int, packets: Iterable[ReconfigPacket], ownership: Optional[Ownership] = None) -> ReconfigSession:
    session = ReconfigSession.begin(state, slot, packets, ownership)
    session.step(state)
    session.finish(state)
    return session


# -----------------------
# ALLOCATOR
# -----------------------
@dataclass
class Allocation:
    slot: int
    vid: int
    cam_rows: Dict[int, Tuple[int, ...]] = field(default_factory=dict)
    memory: Dict[int, Tuple[int, int]] = field(default_factory=dict)

    def ownership(self) -> Ownership:
        return Ownership(self.slot, {s: set(r) for s, r in self.cam_rows.items()}, dict(self.memory), self.vid)


class ResourceAllocator:
    """
    Static partition of slots, CAM/VLIW rows (per stage) and stateful memory
    (per stage, first fit) across modules.
    """

    def __init__(self):
        self.slots: Dict[int, int] = {}  # slot -> vid
        self.reserved: Dict[int, int] = {}  # tenant slot -> tenant vid
        self.rows: Dict[int, Dict[int, int]] = {s: {} for s in range(1, GEOMETRY.num_stages + 1)}
        self.memory: Dict[int, List[Tuple[int, int, int]]] = {s: [] for s in range(1, GEOMETRY.num_stages + 1)}

    def reserve(self, tenants) -> None:
        self.reserved = {t.slot: t.vid for t in tenants}

    def take_slot(self, vid: int, slot: Optional[int] = None) -> int:
        if slot is not None:
            if slot in self.slots and self.slots[slot] != vid:
                raise RegistryFull(f"slot {slot} is bound to VID {self.slots[slot]}")
            self.slots[slot] = vid
            return slot
        # slot 0 belongs to the system module; tenant slots wait for their VID
        for s in range(1, GEOMETRY.max_modules):
            if s in self.reserved and self.reserved[s] != vid:
                continue
            if s not in self.slots:
                self.slots[s] = vid
                return s
        raise RegistryFull(f"no free module slot for VID {vid} ({len(self.reserved)} held for tenants)")

    def take_rows(self, slot: int, stage: int, n: int) -> Tuple[int, ...]:
        used = self.rows[stage]
        free = [r for r in range(GEOMETRY.cam_depth) if r not in used]
        if len(free) < n:
            raise CamExhausted(f"stage {stage}: {n} CAM rows wanted, {len(free)} free")
        for r in free[:n]:
            used[r] = slot
        return tuple(free[:n])

    def take_memory(self, slot: int, stage: int, words: int) -> Tuple[int, int]:
        if words == 0:
            return (0, 0)
        cursor = 0
        for base, size, _ in sorted(self.memory[stage]):
            if base - cursor >= words:
                break
            cursor = max(cursor, base + size)
        if cursor + words > GEOMETRY.memory_words:
            raise MemoryExhausted(f"stage {stage}: no {words}-word slice free")
        self.memory[stage].append((cursor, words, slot))
        return (cursor, words)

    def allocate(self, vid: int, rows: Dict[int, int], words: Dict[int, int], slot: Optional[int] = None) -> Allocation:
        """All-or-nothing: a failure releases whatever was taken."""
        had_slot = slot is not None and slot in self.slots
        s = self.take_slot(vid, slot)
        alloc = Allocation(s, vid)
        try:
            for stage, n in sorted(rows.items()):
                alloc.cam_rows[stage] = self.take_rows(s, stage, n)
            for stage, n in sorted(words.items()):
                if n:
                    alloc.memory[stage] = self.take_memory(s, stage, n)
        except Exception:
            self.release(alloc, keep_slot=had_slot)
            raise
        return alloc

    def release(self, alloc: Allocation, keep_slot: bool = False) -> None:
        for stage, rows in alloc.cam_rows.items():
            for r in rows:
                self.rows[stage].pop(r, None)
        for stage in alloc.memory:
            self.memory[stage] = [m for m in self.memory[stage] if m[2] != alloc.slot]
        if not keep_slot:
            self.slots.pop(alloc.slot, None)


# -----------------------
# MODULE LIFECYCLE
# -----------------------
@dataclass
class InstalledModule:
    name: str
    slot: int
    vid: int
    compiled: Any
    allocation: Allocation
    source: str = ""


def _clear_writes(alloc: Allocation, unbind: bool) -> List[ReconfigPacket]:
    """Writes returning every row of alloc to its power-on value."""
    slot = alloc.slot
    out: List[ReconfigPacket] = [make_write(ResourceId(STAGE_PARSER, ResourceType.PARSER), slot, ParserEntry())]
    stages = sorted(set(alloc.cam_rows) | set(alloc.memory))
    for stage in stages:
        out.append(make_write(ResourceId(stage, ResourceType.KEY_EXTRACTOR), slot, KeyExtractorEntry()))
        out.append(make_write(ResourceId(stage, ResourceType.KEY_MASK), slot, KeyMaskEntry()))
        for row in alloc.cam_rows.get(stage, ()):
            out.append(make_write(ResourceId(stage, ResourceType.CAM), row, CamEntry()))
        for row in alloc.cam_rows.get(stage, ()):
            out.append(make_write(ResourceId(stage, ResourceType.VLIW), row, VliwEntry()))
        out.append(make_write(ResourceId(stage, ResourceType.PAGE_TABLE), slot, PageTableEntry()))
    out.append(make_write(ResourceId(STAGE_DEPARSER, ResourceType.DEPARSER), slot, ParserEntry()))
    if unbind:
        out.append(make_write(ResourceId(STAGE_REGISTRY, ResourceType.REGISTRY), slot, RegistryEntry()))
    return out


def _serialized(method):
    """Run a Controller method under the controller's lock."""

    @functools.wraps(method)
    def wrapper(self, *args, **kwargs):
        with self.lock:
            return method(self, *args, **kwargs)

    return wrapper


class Controller:
    """
    Owns one PipelineState and serializes every control operation onto its
    timeline. The CLI, the scenario loop and the HTTP service all drive the
    pipeline through one of these.

    At most one reconfiguration session is open at a time: a session's
    counter target assumes no other writes reach the chain until it finishes.
    """

    def __init__(self, settings=None, state=None):
        from src.pipeline import PipelineState
        from src.settings import load_settings

        self.settings = settings or load_settings()
        self.state = state or PipelineState.fresh(cookie=self.settings.cookie, max_frame=self.settings.max_frame)
        self.allocator = ResourceAllocator()
        self.modules: Dict[int, InstalledModule] = {}
        self.system = None
        self.system_config = None
        self.lock = threading.RLock()
        self.session: Optional[ReconfigSession] = None

    # -- sessions -------------------------------------------------------------
    def _check_idle(self) -> None:
        open_ = self.session
        if open_ is not None and not open_.finished:
            raise SessionBusy(f"slot {open_.slot} is mid-reconfiguration ({open_.remaining} writes unsent)")

    def _open(self, slot: int, writes: Iterable[ReconfigPacket], ownership: Optional[Ownership] = None) -> ReconfigSession:
        self._check_idle()
        self.session = ReconfigSession.begin(self.state, slot, writes, ownership)
        return self.session

    def _run(self, session: ReconfigSession) -> list:
        try:
            outcomes = session.step(self.state)
            session.finish(self.state)
        finally:
            # a timed-out session keeps its bitmap bit for the operator
            self.session = None
        return outcomes

    # -- system module ------------------------------------------------------
    @_serialized
    def boot(self, system_config=None) -> None:
        """Install the system module (slot 0, VID 0) and its tenants' rows."""
        from src.compiler import emit_reconfig_packets
        from src.system_module import SystemConfig, build_system_module

        cfg = system_config or SystemConfig()
        cm = build_system_module(cfg)
        self.allocator.take_slot(cm.vid, 0)
        self.allocator.reserve(cfg.tenants)
        for sc in cm.stages:
            rows = self.allocator.rows[sc.stage]
            for r in sc.cam:
                rows[r] = 0
        for stage in (1, GEOMETRY.num_stages):
            # the system module owns the first and last stage outright
            self.allocator.memory[stage].append((0, GEOMETRY.memory_words, 0))
        self._run(self._open(0, emit_reconfig_packets(cm, 0, self.state.filter.cookie)))
        self.state.set_system_stats(cfg.link_util, cfg.queue_len)
        self.system = cm
        self.system_config = cfg
        logger.info("system module installed for %d tenants", len(cfg.tenants))

    def _tenant_slot(self, vid: int) -> Optional[int]:
        if self.system_config is None:
            return None
        for t in self.system_config.tenants:
            if t.vid == vid:
                return t.slot
        return None

    # -- user modules -------------------------------------------------------
    def prepare(self, source: str, vid: int, quota=None, slot: Optional[int] = None, replacing: Optional[InstalledModule] = None):
        """Compile and allocate; returns (InstalledModule, writes) without touching the pipeline."""
        from src.compiler import Placement, allocate_and_lower, emit_reconfig_packets, plan_module
        from src.dsl import parse_dsl, resolve_quota

        if not 0 < vid < CONTROL_VID:
            raise ControlError(f"VID {vid} is reserved")
        prog = parse_dsl(source)
        quota = resolve_quota(quota, prog, self.settings)
        plan = plan_module(prog, quota)
        rows = {stage: quota.cam_entries for stage in plan.stages}
        words = dict(plan.memory_words)
        if slot is None:
            slot = replacing.slot if replacing else self._tenant_slot(vid)
        if replacing is not None:
            self.allocator.release(replacing.allocation, keep_slot=True)
        try:
            alloc = self.allocator.allocate(vid, rows, words, slot)
        except Exception:
            if replacing is not None:
                self._reclaim(replacing.allocation)
            raise
        placement = Placement(vid=vid, cam_rows=alloc.cam_rows, memory_base={s: b for s, (b, _) in alloc.memory.items()})
        cm = allocate_and_lower(prog, quota, plan.stage_map, placement)
        writes = []
        if replacing is not None:
            writes += _clear_writes(replacing.allocation, unbind=False)
        writes += emit_reconfig_packets(cm, alloc.slot, self.state.filter.cookie)
        module = InstalledModule(prog.name, alloc.slot, vid, cm, alloc, source)
        return module, writes

    def _reclaim(self, alloc: Allocation) -> None:
        for stage, rows in alloc.cam_rows.items():
            for r in rows:
                self.allocator.rows[stage][r] = alloc.slot
        for stage, (base, size) in alloc.memory.items():
            self.allocator.memory[stage].append((base, size, alloc.slot))

    def _ownership(self, module: InstalledModule, previous: Optional[InstalledModule] = None) -> Ownership:
        own = module.allocation.ownership()
        if previous is not None:
            for stage, rows in previous.allocation.cam_rows.items():
                own.cam_rows.setdefault(stage, set()).update(rows)
        return own

    @_serialized
    def begin_load(self, source: str, vid: int, quota=None, slot: Optional[int] = None) -> Tuple[ReconfigSession, InstalledModule]:
        self._check_idle()
        module, writes = self.prepare(source, vid, quota, slot)
        try:
            session = self._open(module.slot, writes, self._ownership(module))
        except Exception:
            self.allocator.release(module.allocation)
            raise
        self.modules[module.slot] = module
        return session, module

    @_serialized
    def load_module(self, source: str, vid: int, quota=None, slot: Optional[int] = None) -> InstalledModule:
        session, module = self.begin_load(source, vid, quota, slot)
        try:
            self._run(session)
        except Exception:
            self.modules.pop(module.slot, None)
            self.allocator.release(module.allocation)
            raise
        logger.info("loaded %s into slot %d (VID %d)", module.name, module.slot, vid)
        return module

    @_serialized
    def begin_replace(self, slot: int, source: Optional[str] = None, quota=None) -> Tuple[ReconfigSession, InstalledModule]:
        """Start a live update of slot; caller steps and finishes the session."""
        self._check_idle()
        old = self.modules[slot]
        module, writes = self.prepare(source or old.source, old.vid, quota, slot, replacing=old)
        session = self._open(slot, writes, self._ownership(module, old))
        self.modules[slot] = module
        return session, module

    @_serialized
    def replace_module(self, slot: int, source: Optional[str] = None, quota=None) -> InstalledModule:
        session, module = self.begin_replace(slot, source, quota)
        self._run(session)
        return module

    @_serialized
    def begin_unload(self, slot: int) -> ReconfigSession:
        self._check_idle()
        module = self.modules[slot]
        writes = _clear_writes(module.allocation, unbind=True)
        for stage, (base, size) in module.allocation.memory.items():
            writes += [make_write(ResourceId(stage, ResourceType.MEMORY_WORD), w, MemoryWord(0)) for w in range(base, base + size)]
        session = self._open(slot, writes, module.allocation.ownership())
        del self.modules[slot]
        self.allocator.release(module.allocation)
        return session

    @_serialized
    def unload_module(self, slot: int) -> None:
        self._run(self.begin_unload(slot))
        logger.info("unloaded slot %d", slot)

    @_serialized
    def configure_resource(self, slot: int, resource: ResourceId, index: int, entry) -> ApplyResult:
        """Raw single-row write inside a one-packet session for slot."""
        module = self.modules.get(slot)
        own = module.allocation.ownership() if module else Ownership(slot)
        outcomes = self._run(self._open(slot, [make_write(resource, index, entry)], own))
        detail = next((u.detail for u in outcomes[0].trace if u.unit == "daisy_chain"), {})
        return ApplyResult(detail.get("applied", False), detail.get("resource", ""), detail.get("index", index), detail.get("reason"))

    # -- data path / readout --------------------------------------------------
    @_serialized
    def inject(self, data: bytes, ingress_port: int = 0):
        from src.pipeline import inject

        return inject(self.state, data, ingress_port)

    @_serialized
    def set_stats(self, link_util: int, queue_len: int) -> None:
        self.state.set_system_stats(link_util, queue_len)

    def packet_counters(self) -> Dict[int, int]:
        """Per-tenant forwarded-packet words kept by the system module's last stage."""
        from src.system_module import counter_words

        if self.system_config is None:
            return {}
        last = self.state.stage(GEOMETRY.num_stages)
        return {slot: last.memory[word] for slot, word in counter_words(self.system_config).items()}

    @_serialized
    def read_counters(self) -> Dict[str, Any]:
        st = self.state
        return {
            "reconfig_counter": st.filter.reconfig_counter,
            "packets": {str(k): v for k, v in sorted(st.stats.packets.items())},
            "bytes": {str(k): v for k, v in sorted(st.stats.bytes.items())},
            "drops": dict(sorted(st.stats.drops.items())),
            "faults": {
                str(slot): [stage.faults[slot] for stage in st.stages]
                for slot in sorted(self.modules)
            },
            "system_packet_counters": {str(k): v for k, v in self.packet_counters().items()},
            "rejections": len(st.rejections),
        }
