"""Streamlit viewer for corrslam runs.

Pick a run directory to see the map with the trajectory in red, the error
report and where the time went. Runs are produced by the CLI
(``corrslam graph --log ... --out runs/intel``); SLAM logic stays in
``src/corrslam``.
"""

import sys
from pathlib import Path

import plotly.express as px
import streamlit as st

ROOT = Path(__file__).resolve().parents[1]
SRC = ROOT / "src"
for path in (ROOT, SRC):
    path_str = str(path)
    if path_str not in sys.path:
        sys.path.insert(0, path_str)

from app.runs import list_runs, load_run  # noqa: E402
from corrslam.plots import map_figure, residual_figure, timing_figure  # noqa: E402

st.set_page_config(page_title="corrslam run viewer", layout="wide")

DEFAULT_RUNS_DIR = ROOT / "runs"


def _sidebar() -> Path | None:
    st.sidebar.header("Runs")
    root = Path(st.sidebar.text_input("Runs directory", str(DEFAULT_RUNS_DIR)))
    runs = list_runs(root)
    if not runs:
        st.sidebar.info("No runs found. Write one with `corrslam graph --log <log> --out runs/<name>`.")
        return None
    labels = {str(p.relative_to(root)) if p != root else ".": p for p in runs}
    choice = st.sidebar.selectbox("Run", list(labels))
    return labels[choice]


def _report(run) -> None:
    if not run.report:
        st.caption("No relations were given for this run.")
        return
    cols = st.columns(4)
    cols[0].metric("ε_trans [m]", run.report.get("eps_trans", "-"))
    cols[1].metric("ε_rot [rad]", run.report.get("eps_rot", "-"))
    cols[2].metric("relations", run.report.get("count", "-"))
    cols[3].metric("skipped", run.report.get("skipped", "-"))
    if run.residuals is not None and not run.residuals.empty:
        st.plotly_chart(residual_figure(run.residuals), use_container_width=True)


def main() -> None:
    st.title("corrslam run viewer")
    run_dir = _sidebar()
    if run_dir is None:
        return
    try:
        run = load_run(run_dir)
    except (ValueError, OSError) as exc:
        st.error(f"Unable to load {run_dir}: {exc}")
        return

    left, right = st.columns([3, 2])
    with left:
        poses = [p for _, p in run.trajectory]
        st.plotly_chart(map_figure(run.map, poses), use_container_width=True)
    with right:
        st.subheader("Error report")
        _report(run)
        st.subheader("Runtime breakdown")
        timings = run.timings
        if timings.empty:
            st.caption("Run log has no phase timings.")
        else:
            st.plotly_chart(timing_figure(timings), use_container_width=True)
            st.dataframe(timings, use_container_width=True)
    if run.records:
        st.subheader("Match score per step")
        st.plotly_chart(px.line(run.scores, x="step", y="score"), use_container_width=True)


main()
