# tests/test_scenario.py
import pytest

from src.errors import ScenarioError
from src.scenario import Scenario, ScenarioRunner, load_scenario, run_scenario
from src.utils import JsonlSink, read_jsonl
from tests.conftest import SCENARIO_DIR


def _run(name, settings):
    return ScenarioRunner(load_scenario(SCENARIO_DIR / f"{name}.toml"), settings=settings).run()


def test_disruption_only_touches_the_updated_slot(settings):
    report = _run("disruption", settings)
    assert len(report.windows) == 1
    w = report.windows[0]
    assert (w.slot, w.action, w.begin) == (1, "reconfigure", 20)
    assert w.end is not None and w.end > w.begin

    for slot in (2, 3):
        assert report.totals(slot)["dropped"] == 0
        assert report.totals(slot)["forwarded"] == 60 * 8
    for row in report.series[1]:
        in_window = w.begin <= row["tick"] < w.end
        assert row["dropped"] == (8 if in_window else 0), row


def test_disruption_is_deterministic(settings):
    first = _run("disruption", settings)
    second = _run("disruption", settings)
    assert first.outputs == second.outputs
    assert [x.to_dict() for x in first.windows] == [x.to_dict() for x in second.windows]


def test_lifecycle_windows_follow_event_order(settings):
    runner = ScenarioRunner(load_scenario(SCENARIO_DIR / "lifecycle.toml"), settings=settings)
    report = runner.run()
    assert [w.action for w in report.windows] == ["load", "reconfigure", "unload"]
    assert [w.slot for w in report.windows] == [2, 1, 2]
    # the queued replace opens when the load closes
    assert report.windows[1].begin == report.windows[0].end
    assert runner.controller.modules[1].name == "qos"
    assert 2 not in runner.controller.modules
    assert report.injected == 0


def test_congestion_counts_every_packet(settings):
    report = _run("congestion", settings)
    assert report.injected == 800
    assert report.counters["rejections"] == 0
    assert not report.windows


def test_run_writes_trace_and_stats(tmp_path, settings):
    with JsonlSink(tmp_path / "trace.jsonl") as trace, JsonlSink(tmp_path / "stats.jsonl") as stats:
        report = run_scenario(SCENARIO_DIR / "congestion.toml", trace, stats, settings=settings)
    rows = read_jsonl(tmp_path / "stats.jsonl")
    assert len(rows) == 40 * 2
    assert sum(r["injected"] for r in rows) == report.injected
    assert len(read_jsonl(tmp_path / "trace.jsonl")) == report.injected


# -- errors --------------------------------------------------------------------
def test_missing_scenario_file(tmp_path):
    with pytest.raises(ScenarioError):
        load_scenario(tmp_path / "nope.toml")


def test_traffic_needs_a_module(tmp_path):
    path = tmp_path / "orphan.toml"
    path.write_text(
        'duration = 5\n\n[[traffic]]\nslot = 4\nrate = 1\n',
        encoding="utf-8",
    )
    with pytest.raises(ScenarioError):
        ScenarioRunner(load_scenario(path))


def test_bad_event_rejected(tmp_path):
    path = tmp_path / "bad.toml"
    path.write_text('duration = 5\n\n[[events]]\ntick = 1\naction = "unload"\n', encoding="utf-8")
    with pytest.raises(ScenarioError):
        load_scenario(path)


def test_solo_keeps_only_one_slot():
    sc = Scenario(
        duration=1,
        modules=[{"source": "a.dsl", "vid": 10, "slot": 1}, {"source": "b.dsl", "vid": 11, "slot": 2}],
        traffic=[{"slot": 1, "rate": 1}, {"slot": 2, "rate": 1}],
        events=[{"tick": 0, "action": "set_stats", "queue_len": 5}, {"tick": 0, "action": "unload", "slot": 2}],
    )
    solo = sc.solo(1)
    assert [m.slot for m in solo.modules] == [1]
    assert [t.slot for t in solo.traffic] == [1]
    assert [e.action for e in solo.events] == ["set_stats"]


def test_solo_resolves_slots_from_the_tenant_table():
    sc = Scenario(
        duration=1,
        system={"tenants": [{"vid": 10, "slot": 1}, {"vid": 11, "slot": 2}]},
        modules=[{"source": "a.dsl", "vid": 10}],
        events=[{"tick": 0, "action": "load", "source": "b.dsl", "vid": 11}],
    )
    assert [m.vid for m in sc.solo(1).modules] == [10]
    assert [e.vid for e in sc.solo(2).events] == [11]
    assert sc.solo(1).events == []


def test_solo_run_keeps_tenant_load(settings):
    solo = load_scenario(SCENARIO_DIR / "lifecycle.toml").solo(2)
    assert [(e.action, e.slot) for e in solo.scenario.events] == [("load", 2), ("unload", 2)]
    assert solo.scenario.modules == []
    report = ScenarioRunner(solo, settings=settings).run()
    assert [(w.action, w.slot) for w in report.windows] == [("load", 2), ("unload", 2)]
