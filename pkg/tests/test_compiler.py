# tests/test_compiler.py
import pytest

from src import cli
from src.compiler import compile_module, emit_reconfig_packets, placeholder_keys, stage_assign
from src.dsl import ResourceQuota, parse_dsl
from src.errors import ActionConflict, CheckFailed, DslSyntaxError, TooManyDependencyLevels
from src.formats import PREDICATE_BIT, AluAction, Opcode, ResourceType
from tests.conftest import COOKIE, VIOLATION_DIR, read_module


def _violation(name):
    return (VIOLATION_DIR / f"{name}.dsl").read_text(encoding="utf-8")


# -- stage assignment ----------------------------------------------------------
@pytest.mark.parametrize(
    "name, expected",
    [
        ("calc", {"compute": 2}),
        ("qos", {"classify": 2, "police": 3}),
        ("netchain_lite", {"sequence": 2, "commit": 3}),
    ],
)
def test_stage_maps(name, expected):
    assert stage_assign(parse_dsl(read_module(name))) == expected


def test_dependent_action_continues_in_next_stage():
    src = """
    module cont;
    field op : 16 @ 46;
    field x  : 16 @ 48;
    field y  : 16 @ 50;
    table t { key = op; entry 1 { x = x + 1; y = x; port(1); } }
    """
    cm = compile_module(src)
    assert cm.stage_map == {"t": 2, "t#1": 3}
    # the continuation matches on the same key
    assert cm.stage(2).cam[0].key == cm.stage(3).cam[0].key


def test_four_dependent_tables_do_not_fit():
    with pytest.raises(TooManyDependencyLevels):
        compile_module(_violation("four_level_chain"))


# -- action conflicts ----------------------------------------------------------
def test_memory_split_over_two_stages_is_refused():
    src = """
    module twice;
    field k : 16 @ 46;
    field v : 32 @ 48;
    table t { key = k; memory 4; entry 1 { v = load(0); v = load(1); } }
    """
    with pytest.raises(ActionConflict):
        compile_module(src)


def test_split_that_overwrites_the_key_is_refused():
    src = """
    module rekey;
    field op : 16 @ 46;
    table t { key = op; entry 1 { op = 2; op = 3; } }
    """
    with pytest.raises(ActionConflict):
        compile_module(src)


def test_memory_ops_must_follow_container_order():
    src = """
    module order;
    field op : 16 @ 46;
    field x  : 16 @ 48;
    field y  : 16 @ 50;
    table t { key = op; memory 4; entry 1 { y = load(0); x = load(1); } }
    """
    with pytest.raises(ActionConflict):
        compile_module(src)


# -- lowering ------------------------------------------------------------------
def test_calc_lowering():
    cm = compile_module(read_module("calc"))
    assert cm.containers == {"op": 0, "a": 8, "b": 9, "result": 10}
    stage = cm.stage(2)
    assert stage.cam[0].key == 1 << 176
    assert stage.vliw[0].actions[10] == AluAction(Opcode.ADD, 8, 9)
    assert stage.vliw[0].actions[24] == AluAction(Opcode.PORT, imm=1)
    assert cm.placeholders == 0


def test_spare_rows_get_unreachable_keys():
    cm = compile_module(read_module("firewall"))
    assert cm.placeholders == 1
    stage = cm.stage(2)
    mask = stage.key_mask.mask
    assert stage.cam[3].vid == cm.vid
    assert stage.cam[3].key & ~mask
    assert all(stage.cam[r].key & ~mask == 0 for r in range(3))


def test_placeholder_keys_are_distinct_and_outside_mask():
    mask = (1 << PREDICATE_BIT) - 1
    keys = placeholder_keys(mask, 3)
    assert len(set(keys)) == 1  # one free bit left: a single marker key
    assert keys[0] == 1 << PREDICATE_BIT
    keys = placeholder_keys(0, 5)
    assert len(set(keys)) == 5
    assert placeholder_keys(0, 0) == []


def test_emit_orders_registry_last():
    cm = compile_module(read_module("calc"))
    packets = emit_reconfig_packets(cm, 1, COOKIE)
    assert len(packets) == len(cm.writes(1)) == 14
    assert packets[0].resource.rtype == ResourceType.PARSER
    assert packets[-1].resource.rtype == ResourceType.REGISTRY
    assert packets[-1].index == 1
    assert all(p.cookie == COOKIE for p in packets)


def test_quota_argument_beats_program_quota():
    cm = compile_module(read_module("calc"), ResourceQuota(cam_entries=6, memory_words=0))
    assert len(cm.stage(2).cam) == 6
    assert cm.placeholders == 2


# -- checks --------------------------------------------------------------------
@pytest.mark.parametrize(
    "name, phase, kind",
    [
        ("vid_write", "static", "VidModification"),
        ("stat_write", "static", "StatWrite"),
        ("recirculate", "static", "Recirculation"),
        ("too_many_parse", "resource", "ParserActions"),
        ("too_many_entries", "resource", "TableEntries"),
    ],
)
def test_violations_are_reported(name, phase, kind):
    with pytest.raises(CheckFailed) as err:
        compile_module(_violation(name))
    assert err.value.phase == phase
    assert kind in [v.kind for v in err.value.violations]


def test_syntax_error_carries_line():
    with pytest.raises(DslSyntaxError) as err:
        compile_module(_violation("syntax_error"))
    assert err.value.line == 6


@pytest.mark.parametrize(
    "name, code",
    [
        ("vid_write", 3),
        ("stat_write", 3),
        ("recirculate", 3),
        ("too_many_parse", 4),
        ("too_many_entries", 4),
        ("four_level_chain", 5),
        ("syntax_error", 2),
    ],
)
def test_cli_exit_codes(tmp_path, name, code):
    path = VIOLATION_DIR / f"{name}.dsl"
    assert cli.main(["compile", str(path), "--out", str(tmp_path)]) == code
