# tests/test_isolation.py
"""Each module's packets come out the same whether it runs alone or beside two others."""
import pytest

from src.scenario import ScenarioRunner, load_scenario
from tests.conftest import SCENARIO_DIR


@pytest.mark.slow
@pytest.mark.parametrize("name", ["isolation_a", "isolation_b"])
def test_concurrent_run_matches_solo_runs(settings, name):
    loaded = load_scenario(SCENARIO_DIR / f"{name}.toml")
    together = ScenarioRunner(loaded, settings=settings).run()
    assert together.injected >= 10_000

    for slot in (1, 2, 3):
        alone = ScenarioRunner(loaded.solo(slot), settings=settings).run()
        assert alone.outputs[slot] == together.outputs[slot], f"slot {slot} diverged"
        assert alone.totals(slot) == together.totals(slot)


@pytest.mark.slow
def test_isolation_runs_produce_no_rejections_or_foreign_faults(settings):
    loaded = load_scenario(SCENARIO_DIR / "isolation_a.toml")
    runner = ScenarioRunner(loaded, settings=settings)
    report = runner.run()
    assert report.counters["rejections"] == 0
    # only the cache (slot 3) reads past its slice
    faults = report.counters["faults"]
    assert not any(faults["1"]) and not any(faults["2"])
    assert any(faults["3"])
