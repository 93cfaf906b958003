# src/flow.py
"""
Dashboard state and actions. No rendering here: app.py wires these into
the widgets from src/ui.py.
"""

from __future__ import annotations

import logging
from pathlib import Path
from typing import Dict, List, Optional

import streamlit as st

from src.errors import PipelineError
from src.scenario import RunReport, load_scenario, run_scenario
from src.utils import JsonlSink

logger = logging.getLogger(__name__)

PROJECT_ROOT = Path(__file__).resolve().parent.parent
SCENARIO_DIR = PROJECT_ROOT / "scenarios"


# -----------------------
# 1. SESSION STATE
# -----------------------
def init_state():
    defaults = {
        "scenario_path": "",
        "report": None,
        "solo_reports": {},
        "run_error": "",
        "trace_tail": [],
    }
    for k, v in defaults.items():
        st.session_state.setdefault(k, v)


def list_scenarios(root: Path = SCENARIO_DIR) -> List[Path]:
    return sorted(root.glob("*.toml")) if root.exists() else []


# -----------------------
# 2. ACTIONS
# -----------------------
def run_selected(path: str, compare_solo: bool = False, trace_rows: int = 200) -> Optional[RunReport]:
    """Run the scenario at path; stash the report (and solo baselines) in session state."""
    st.session_state.run_error = ""
    st.session_state.scenario_path = path
    try:
        loaded = load_scenario(path)
        with JsonlSink(keep=True) as trace:
            report = run_scenario(loaded, trace=trace)
        solo: Dict[int, RunReport] = {}
        if compare_solo:
            for slot in sorted(report.series):
                solo[slot] = run_scenario(loaded.solo(slot))
    except PipelineError as e:
        logger.warning("scenario %s failed: %s", path, e)
        st.session_state.run_error = str(e)
        st.session_state.report = None
        return None

    st.session_state.report = report
    st.session_state.solo_reports = solo
    st.session_state.trace_tail = trace.records[-trace_rows:]
    return report


def clear_results():
    st.session_state.report = None
    st.session_state.solo_reports = {}
    st.session_state.trace_tail = []
    st.session_state.run_error = ""


def isolation_rows(report: RunReport, solo: Dict[int, RunReport]) -> List[Dict[str, object]]:
    """Per slot: outputs identical to the module running alone?"""
    rows = []
    for slot in sorted(report.series):
        base = solo.get(slot)
        if base is None:
            continue
        rows.append({
            "slot": slot,
            "packets": len(report.outputs.get(slot, [])),
            "identical": report.outputs.get(slot, []) == base.outputs.get(slot, []),
        })
    return rows
