# tests/test_control.py
from concurrent.futures import ThreadPoolExecutor

import pytest

from src.control import (
    Ownership,
    ReconfigSession,
    ResourceAllocator,
    Register,
    apply_reconfig,
    reconfigure_module,
    reg_read,
    reg_write,
)
from src.dsl import ResourceQuota
from src.errors import (
    CamExhausted,
    MemoryExhausted,
    OwnershipError,
    ReconfigTimeout,
    RegistryFull,
    SessionBusy,
    WriteToReadOnly,
)
from src.formats import (
    CamEntry,
    KeyMaskEntry,
    MemoryWord,
    ParserEntry,
    ParseAction,
    RegistryEntry,
    ResourceId,
    ResourceType,
    VliwEntry,
    encode_entry,
    make_write,
)
from src.pipeline import DropReason
from src.system_module import Tenant
from tests.conftest import COOKIE, data_frame, read_module

REGISTRY = ResourceId(7, ResourceType.REGISTRY)
CAM2 = ResourceId(2, ResourceType.CAM)


def _write(resource, index, entry):
    return make_write(resource, index, entry, COOKIE)


# -- registers -----------------------------------------------------------------
def test_registers(state):
    assert reg_read(state, Register.COOKIE) == COOKIE
    reg_write(state, Register.COOKIE, 0x1234)
    reg_write(state, Register.BITMAP, 0b110)
    assert reg_read(state, "cookie") == 0x1234
    assert reg_read(state, Register.BITMAP) == 0b110


def test_counter_is_read_only(state):
    with pytest.raises(WriteToReadOnly):
        reg_write(state, Register.COUNTER, 5)
    assert reg_read(state, Register.COUNTER) == 0


# -- daisy chain ---------------------------------------------------------------
def test_registry_write_needs_update_bit(state):
    res = apply_reconfig(state, _write(REGISTRY, 1, RegistryEntry(vid=10, valid=True)))
    assert not res.applied
    assert res.reason == "SlotMismatch"
    assert state.slot_of(10) is None
    assert state.filter.reconfig_counter == 1
    rej = state.rejections[-1]
    assert (rej.resource, rej.index, rej.reason, rej.counter) == ("registry@7", 1, "SlotMismatch", 1)


def test_registry_rejects_control_vid_and_stolen_vid(state):
    reg_write(state, Register.BITMAP, 0b110)
    assert apply_reconfig(state, _write(REGISTRY, 1, RegistryEntry(vid=0xFFF, valid=True))).reason == "ReservedVid"
    assert apply_reconfig(state, _write(REGISTRY, 1, RegistryEntry(vid=10, valid=True))).applied
    assert apply_reconfig(state, _write(REGISTRY, 2, RegistryEntry(vid=10, valid=True))).reason == "SlotMismatch"
    assert state.slot_of(10) == 1


def test_bad_index_and_bad_entry(state):
    assert apply_reconfig(state, _write(REGISTRY, 40, RegistryEntry())).reason == "BadIndex"
    assert apply_reconfig(state, _write(CAM2, 16, CamEntry())).reason == "BadIndex"
    from src.formats import ReconfigPacket

    reserved = ReconfigPacket(COOKIE, REGISTRY, 1, 0x1000)
    assert apply_reconfig(state, reserved).reason.startswith("BadEntry")
    assert state.filter.reconfig_counter == 3


def test_cam_owner_must_be_under_update(state):
    reg_write(state, Register.BITMAP, 1 << 1)
    apply_reconfig(state, _write(REGISTRY, 1, RegistryEntry(vid=10, valid=True)))
    assert apply_reconfig(state, _write(CAM2, 0, CamEntry(vid=10, key=5))).applied
    reg_write(state, Register.BITMAP, 0)
    # installing and clearing rows of a live module are both refused
    assert apply_reconfig(state, _write(CAM2, 1, CamEntry(vid=10, key=6))).reason == "SlotMismatch"
    assert apply_reconfig(state, _write(CAM2, 0, CamEntry())).reason == "SlotMismatch"
    assert state.stage(2).cam[0] == CamEntry(vid=10, key=5)


def test_duplicate_cam_key_rejected(state):
    # slot 1 is being loaded and not yet bound, so unbound VIDs have an owner
    reg_write(state, Register.BITMAP, 1 << 1)
    assert apply_reconfig(state, _write(CAM2, 0, CamEntry(vid=20, key=5))).applied
    assert apply_reconfig(state, _write(CAM2, 1, CamEntry(vid=20, key=5))).reason == "DuplicateKey"
    assert apply_reconfig(state, _write(CAM2, 1, CamEntry(vid=21, key=5))).applied


def test_cam_vid_must_belong_to_the_updating_slot(state):
    reg_write(state, Register.BITMAP, 1 << 1)
    assert apply_reconfig(state, _write(REGISTRY, 1, RegistryEntry(vid=10, valid=True))).applied
    # slot 1 is bound to VID 10: a row for VID 11 has no owner being updated
    assert apply_reconfig(state, _write(CAM2, 5, CamEntry(vid=11, key=9))).reason == "SlotMismatch"
    assert state.stage(2).cam[5].cleared
    reg_write(state, Register.BITMAP, 0)
    assert apply_reconfig(state, _write(CAM2, 5, CamEntry(vid=11, key=9))).reason == "SlotMismatch"
    assert state.slot_of(11) is None


# -- sessions ---------------------------------------------------------------------
def _parser_writes(slot, n):
    return [_write(ResourceId(0, ResourceType.PARSER), slot, ParserEntry.of([ParseAction(46 + i, 0, 0, True)])) for i in range(n)]


def test_session_sets_and_clears_update_bit(state):
    session = ReconfigSession.begin(state, 3, _parser_writes(3, 5))
    assert reg_read(state, Register.BITMAP) == 1 << 3
    assert session.target == 5
    session.step(state, 2)
    assert not session.done(state)
    assert session.remaining == 3
    session.step(state)
    assert session.done(state)
    session.finish(state)
    assert reg_read(state, Register.BITMAP) == 0
    assert state.parser_table[3].valid_actions[0].offset == 50


def test_session_times_out_when_writes_are_lost(state):
    session = ReconfigSession.begin(state, 2, _parser_writes(2, 4))
    session.step(state, 3)
    with pytest.raises(ReconfigTimeout) as err:
        session.finish(state)
    assert (err.value.expected, err.value.observed) == (4, 3)
    assert reg_read(state, Register.BITMAP) == 1 << 2


def test_session_stamps_current_cookie(state):
    reg_write(state, Register.COOKIE, 0xABCD)
    stale = make_write(ResourceId(2, ResourceType.KEY_MASK), 1, KeyMaskEntry(3), cookie=0)
    reconfigure_module(state, 1, [stale])
    assert state.stage(2).key_mask[1] == KeyMaskEntry(3)


def test_ownership_checked_before_anything_is_sent(state):
    own = Ownership(slot=1, cam_rows={2: {0, 1}}, memory={2: (8, 4)})
    assert own.permits(_write(CAM2, 1, CamEntry()))
    assert own.permits(_write(ResourceId(2, ResourceType.MEMORY_WORD), 11, MemoryWord(0)))
    assert not own.permits(_write(ResourceId(2, ResourceType.MEMORY_WORD), 12, MemoryWord(0)))
    with pytest.raises(OwnershipError):
        ReconfigSession.begin(state, 1, [_write(CAM2, 2, CamEntry())], own)
    with pytest.raises(OwnershipError):
        ReconfigSession.begin(state, 1, _parser_writes(2, 1), own)
    assert reg_read(state, Register.BITMAP) == 0
    assert reg_read(state, Register.COUNTER) == 0


def test_ownership_pins_cam_rows_to_the_module_vid():
    own = Ownership(slot=1, cam_rows={2: {5}}, vid=10)
    assert own.permits(_write(CAM2, 5, CamEntry(vid=10, key=9)))
    assert own.permits(_write(CAM2, 5, CamEntry()))
    assert not own.permits(_write(CAM2, 5, CamEntry(vid=11, key=9)))
    assert own.permits(_write(ResourceId(2, ResourceType.VLIW), 5, VliwEntry()))


# -- controller lifecycle ---------------------------------------------------------
def test_load_uses_tenant_slot(controller, calc_source):
    module = controller.load_module(calc_source, 11)
    assert module.slot == 2
    assert controller.state.slot_of(11) == 2
    assert module.allocation.cam_rows[2] and len(module.allocation.cam_rows[2]) == 4
    assert reg_read(controller.state, Register.BITMAP) == 0


def test_reserved_vids_refused(controller, calc_source):
    from src.errors import ControlError

    for vid in (0, 0xFFF):
        with pytest.raises(ControlError):
            controller.load_module(calc_source, vid)


def test_unload_returns_rows_to_power_on(controller, calc_source):
    fresh = controller.state.config_view()
    controller.load_module(calc_source, 10)
    controller.unload_module(1)
    assert controller.state.config_view() == fresh
    assert controller.inject(data_frame(10)).reason == DropReason.UNKNOWN_MODULE.value
    assert 1 not in controller.allocator.slots
    controller.load_module(calc_source, 10)
    assert controller.modules[1].name == "calc"
    assert controller.inject(data_frame(10, {"op": (46, 16, 1)})).forwarded


def _put_row(view, rid, index, entry):
    """Write one encoded entry into a config_view() dict the way the chain would."""
    bits = encode_entry(rid.rtype, entry)
    top = {ResourceType.PARSER: "parser", ResourceType.DEPARSER: "deparser", ResourceType.REGISTRY: "registry"}
    if rid.rtype in top:
        view[top[rid.rtype]][index] = format(bits, "x")
        return
    stage = next(s for s in view["stages"] if s["stage"] == rid.stage)
    if rid.rtype == ResourceType.MEMORY_WORD:
        mem = stage["memory"]
        stage["memory"] = mem[:8 * index] + format(bits, "08x") + mem[8 * index + 8:]
    else:
        stage[rid.rtype.name.lower()][index] = format(bits, "x")


@pytest.mark.parametrize("name,vid", [("calc", 10), ("qos", 11), ("netcache_lite", 12), ("firewall", 10)])
def test_installed_rows_match_compiled_writes(controller, name, vid):
    expected = controller.state.config_view()
    module = controller.load_module(read_module(name), vid)
    for rid, index, entry in module.compiled.writes(module.slot):
        _put_row(expected, rid, index, entry)
    assert controller.state.config_view() == expected


def test_replace_keeps_slot_and_vid(controller, calc_source):
    controller.load_module(calc_source, 10)
    module = controller.replace_module(1, read_module("multicast"))
    assert (module.slot, module.vid, module.name) == (1, 10, "multicast")
    out = controller.inject(data_frame(10, {"group": (46, 16, 2)}))
    assert out.ports == (1, 2, 3, 4)
    assert not controller.state.rejections


def test_configure_resource_inside_owned_slice(controller):
    module = controller.load_module(read_module("netcache_lite"), 12)
    base, size = module.allocation.memory[2]
    res = controller.configure_resource(3, ResourceId(2, ResourceType.MEMORY_WORD), base + 1, MemoryWord(77))
    assert res.to_dict() == {"applied": True, "resource": "memory_word@2", "index": base + 1, "reason": None}
    assert controller.state.stage(2).memory[base + 1] == 77
    with pytest.raises(OwnershipError):
        controller.configure_resource(3, ResourceId(2, ResourceType.MEMORY_WORD), base + size, MemoryWord(1))


def test_module_cannot_plant_rows_for_another_tenant(controller, calc_source):
    module = controller.load_module(calc_source, 10, ResourceQuota(cam_entries=6))
    spare = module.allocation.cam_rows[2][-1]
    before = controller.state.stage(2).cam[spare]
    with pytest.raises(OwnershipError):
        controller.configure_resource(1, CAM2, spare, CamEntry(vid=11, key=9))
    assert controller.state.stage(2).cam[spare] == before
    assert before.vid == 10
    assert reg_read(controller.state, Register.BITMAP) == 0
    # the tenant that owns VID 11 still loads and sees only its own rows
    controller.load_module(calc_source, 11)
    out = controller.inject(data_frame(11, {"op": (46, 16, 9)}, dst_ip="10.9.9.9"))
    assert out.reason == DropReason.NO_ROUTE.value


# -- serialization ------------------------------------------------------------------
def test_second_session_waits_for_the_first(controller, calc_source):
    session, _ = controller.begin_load(calc_source, 10)
    with pytest.raises(SessionBusy):
        controller.begin_load(calc_source, 11)
    with pytest.raises(SessionBusy):
        controller.unload_module(1)
    assert 2 not in controller.allocator.slots
    session.step(controller.state)
    session.finish(controller.state)
    assert controller.load_module(calc_source, 11).slot == 2
    assert not controller.state.rejections


def test_concurrent_loads_are_serialized(controller, calc_source):
    with ThreadPoolExecutor(max_workers=3) as pool:
        modules = list(pool.map(lambda vid: controller.load_module(calc_source, vid), (10, 11, 12)))
    assert sorted(m.slot for m in modules) == [1, 2, 3]
    assert reg_read(controller.state, Register.BITMAP) == 0
    assert not controller.state.rejections
    for vid in (10, 11, 12):
        assert controller.inject(data_frame(vid, {"op": (46, 16, 1)})).forwarded


# -- slot assignment ----------------------------------------------------------------
def test_auto_slot_skips_tenant_slots(controller, calc_source):
    controller.load_module(calc_source, 10)
    assert controller.load_module(calc_source, 41).slot == 4
    assert controller.load_module(calc_source, 11).slot == 2
    assert controller.load_module(calc_source, 12).slot == 3


def test_allocator_reserves_tenant_slots():
    alloc = ResourceAllocator()
    alloc.reserve([Tenant(vid=10, slot=1), Tenant(vid=11, slot=3)])
    assert alloc.take_slot(41) == 2
    assert alloc.take_slot(42) == 4
    assert alloc.take_slot(11) == 3
    assert alloc.take_slot(10) == 1


def test_registry_fills_at_31_modules(bare_controller):
    for i in range(31):
        bare_controller.load_module(f"module empty_{i};", 100 + i)
    assert len(bare_controller.modules) == 31
    with pytest.raises(RegistryFull):
        bare_controller.load_module("module one_too_many;", 200)


def _chain_source(i: int, depth: int) -> str:
    """depth tables, each keyed on what the previous one wrote: one per user stage."""
    names = "abc"
    lines = [f"module chain_{i};"]
    lines += [f"field {n} : 16 @ {46 + 2 * k};" for k, n in enumerate(names[:depth])]
    for k in range(depth):
        action = "port(1);" if k == depth - 1 else f"{names[k + 1]} = {names[k]};"
        lines.append(f"table t{k + 1} {{ key = {names[k]}; entry 1 {{ {action} }} }}")
    return "\n".join(lines) + "\n"


@pytest.mark.parametrize("depth", [1, 2, 3])
def test_every_user_stage_caps_at_sixteen_rows(bare_controller, depth):
    quota = ResourceQuota(cam_entries=1)
    stages = list(range(2, 2 + depth))
    for i in range(16):
        module = bare_controller.load_module(_chain_source(i, depth), 100 + i, quota)
        assert sorted(module.allocation.cam_rows) == stages
    with pytest.raises(CamExhausted):
        bare_controller.load_module(_chain_source(16, depth), 116, quota)
    assert len(bare_controller.modules) == 16
    # the failed load gave its slot back
    assert sorted(bare_controller.allocator.slots) == list(range(17))
    for stage in stages:
        assert len(bare_controller.allocator.rows[stage]) == 16
        assert not any(e.cleared for e in bare_controller.state.stage(stage).cam)
    for i in range(16):
        out = bare_controller.inject(data_frame(100 + i, {"a": (46, 16, 1)}))
        assert out.ports == (1,)


def test_memory_slices_exhaust(bare_controller):
    src = """
    module big_{i};
    quota memory_words = 200;
    field k : 16 @ 46;
    field v : 32 @ 48;
    table t {{ key = k; memory 200; entry 1 {{ v = load(k); port(1); }} }}
    """
    bare_controller.load_module(src.format(i=0), 100)
    with pytest.raises(MemoryExhausted):
        bare_controller.load_module(src.format(i=1), 101)
    assert sorted(bare_controller.modules) == [1]


def test_system_counters_track_forwarded_packets(controller, calc_source):
    controller.load_module(calc_source, 10)
    controller.load_module(read_module("firewall"), 11)
    for _ in range(25):
        controller.inject(data_frame(10, {"op": (46, 16, 1)}))
    for _ in range(4):
        controller.inject(data_frame(10, {"op": (46, 16, 9)}, dst_ip="10.9.9.9"))
    counters = controller.packet_counters()
    assert counters[1] == 25
    assert counters[2] == 0
    summary = controller.read_counters()
    assert summary["packets"]["1"] == 25
    assert summary["drops"][DropReason.NO_ROUTE.value] == 4
    assert summary["system_packet_counters"]["1"] == 25
