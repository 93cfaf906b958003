# app.py
import streamlit as st

# UI only
from src.ui import (
    inject_css,
    render_sidebar,
    render_metrics,
    render_series,
    render_windows,
    render_totals,
    render_counters,
    render_trace,
)

# Flow only (state + actions)
from src.flow import (
    init_state,
    list_scenarios,
    run_selected,
    clear_results,
    isolation_rows,
)
from src.settings import configure_logging

# -----------------------
# APP CONFIG
# -----------------------
st.set_page_config(
    page_title="Pipeline Scenarios",
    page_icon="🔀",
    layout="wide",
    initial_sidebar_state="expanded",
)

# -----------------------
# BOOTSTRAP
# -----------------------
configure_logging()
init_state()
inject_css()

render_sidebar(list_scenarios(), on_run=run_selected, on_clear=clear_results)

if st.session_state.get("run_error"):
    st.error(st.session_state.run_error)

report = st.session_state.get("report")
if report is None:
    st.markdown("## Pipeline scenarios")
    st.caption("Pick a scenario in the sidebar and run it.")
    st.stop()

# -----------------------
# RESULTS
# -----------------------
render_metrics(report)

left, right = st.columns([3, 2])
with left:
    tab_fwd, tab_drop = st.tabs(["Forwarded per tick", "Dropped per tick"])
    with tab_fwd:
        render_series(report, "forwarded")
    with tab_drop:
        render_series(report, "dropped")
with right:
    st.markdown("#### Totals")
    render_totals(report, isolation_rows(report, st.session_state.get("solo_reports") or {}))
    st.markdown("#### Reconfiguration windows")
    render_windows(report)

render_counters(report.counters)
render_trace(st.session_state.get("trace_tail") or [])
