# src/ui.py
import streamlit as st


# ------------------------------------------------------------
# CSS
# ------------------------------------------------------------
def inject_css():
    st.markdown(
        """
        <style>
        :root {
            --indigo-600:#4f46e5; --slate-500:#64748b; --border:#e2e8f0;
            --green:#10b981; --amber:#f59e0b; --red:#ef4444;
            --r-md:14px;
            --sh-sm:0 2px 8px rgba(15,23,42,.09),0 1px 3px rgba(15,23,42,.05);
        }
        .pl-metrics { display:grid; grid-template-columns:repeat(4,1fr); gap:14px; margin:8px 0 18px; }
        .pl-metric-card {
            border:1px solid var(--border); border-radius:var(--r-md);
            box-shadow:var(--sh-sm); padding:14px 16px;
        }
        .pl-metric-label { font-size:12px; color:var(--slate-500); text-transform:uppercase; letter-spacing:.04em; }
        .pl-metric-value { font-size:26px; font-weight:800; }
        .pl-badge { font-size:11px; font-weight:700; padding:2px 8px; border-radius:999px; color:#fff; background:var(--green); }
        .pl-badge.warn { background:var(--amber); }
        .pl-badge.bad  { background:var(--red); }
        @media (max-width: 768px) { .pl-metrics { grid-template-columns:repeat(2,1fr); } }
        </style>
        """,
        unsafe_allow_html=True,
    )


# ------------------------------------------------------------
# SIDEBAR
# ------------------------------------------------------------
def render_sidebar(scenarios, on_run, on_clear):
    """scenarios: list of Paths. on_run(path, compare_solo) / on_clear() are flow actions."""
    with st.sidebar:
        st.markdown("### Pipeline scenarios")
        if not scenarios:
            st.info("No scenario files under scenarios/.")
            return
        names = [p.name for p in scenarios]
        current = st.session_state.get("scenario_path", "")
        idx = next((i for i, p in enumerate(scenarios) if str(p) == current), 0)
        choice = st.selectbox("Scenario", names, index=idx, key="scenario_choice")
        compare = st.checkbox("Compare each slot against a solo run", value=False, key="compare_solo")

        path = str(scenarios[names.index(choice)])
        if st.button("Run", type="primary", use_container_width=True, key="run_scenario"):
            with st.spinner(f"running {choice} ..."):
                on_run(path, compare)
            st.rerun()
        if st.button("Clear", use_container_width=True, key="clear_results"):
            on_clear()
            st.rerun()


# ------------------------------------------------------------
# HEADER + METRICS
# ------------------------------------------------------------
def render_metrics(report):
    forwarded = sum(report.totals(s)["forwarded"] for s in report.series)
    dropped = sum(report.totals(s)["dropped"] for s in report.series)
    rejected = int(report.counters.get("rejections", 0))
    if rejected == 0:
        badge_class, badge_text = "pl-badge", "clean"
    elif rejected < 10:
        badge_class, badge_text = "pl-badge warn", "some"
    else:
        badge_class, badge_text = "pl-badge bad", "many"

    st.markdown(f"## {report.name}")
    st.markdown(
        f"""
        <div class="pl-metrics">
          <div class="pl-metric-card">
            <span class="pl-metric-label">Ticks</span>
            <div class="pl-metric-value">{report.ticks}</div>
          </div>
          <div class="pl-metric-card">
            <span class="pl-metric-label">Injected</span>
            <div class="pl-metric-value">{report.injected}</div>
          </div>
          <div class="pl-metric-card">
            <span class="pl-metric-label">Forwarded / dropped</span>
            <div class="pl-metric-value">{forwarded} / {dropped}</div>
          </div>
          <div class="pl-metric-card">
            <span class="pl-metric-label">Rejected writes</span>
            <div class="pl-metric-value">{rejected}</div>
            <span class="{badge_class}">{badge_text}</span>
          </div>
        </div>
        """,
        unsafe_allow_html=True,
    )


# ------------------------------------------------------------
# SERIES / WINDOWS / COUNTERS
# ------------------------------------------------------------
def render_series(report, metric: str = "forwarded"):
    """One line per slot of metric (forwarded or dropped) against tick."""
    chart = {}
    for slot in sorted(report.series):
        chart[f"slot {slot}"] = [row[metric] for row in report.series[slot]]
    if not chart:
        st.caption("no traffic")
        return
    st.line_chart(chart)


def render_windows(report):
    if not report.windows:
        st.caption("no reconfiguration windows")
        return
    st.dataframe([w.to_dict() for w in report.windows], use_container_width=True, hide_index=True)


def render_totals(report, isolation_rows=None):
    rows = []
    flags = {r["slot"]: r["identical"] for r in (isolation_rows or [])}
    for slot in sorted(report.series):
        row = {"slot": slot, **report.totals(slot)}
        if slot in flags:
            row["same as solo"] = "yes" if flags[slot] else "NO"
        rows.append(row)
    st.dataframe(rows, use_container_width=True, hide_index=True)


def render_counters(counters):
    with st.expander("Counters", expanded=False):
        st.json(counters)


def render_trace(records):
    with st.expander(f"Trace tail ({len(records)} records)", expanded=False):
        for r in records:
            st.code(str(r), language="json")
