import streamlit as st
import numpy as np
import pandas as pd
import matplotlib.pyplot as plt

from core.errors import DiffcpError
from core.experiment import ExperimentSpec, simulate_replication
from core.model import get_model
from core.path import describe_path
from core.pipeline import PipelineConfig, run_pipeline

# =====================================================
# SESSION STATE
# =====================================================

if "path" not in st.session_state:
    st.session_state.path = None
    st.session_state.spec = None
    st.session_state.report = None

# =====================================================
# APP CONFIG
# =====================================================

st.set_page_config(page_title="diffcp", layout="wide")
st.title("diffcp • Change points in ergodic diffusions")
st.caption("Diffusion change → exclusion window → drift change")

# =====================================================
# SIDEBAR CONTROLS
# =====================================================

st.sidebar.header("Model")
model_name = st.sidebar.selectbox("Model", ["ou", "hyperbolic"])
situation = st.sidebar.selectbox(
    "Situation",
    ["i", "ii", "iii"],
    index=1,
    help="(i) no drift change, (ii) drift change away from the diffusion change, (iii) same point",
)

st.sidebar.header("Sampling")
log_n = st.sidebar.slider("log10 n", 3.0, 5.5, 4.5, step=0.5)
change = st.sidebar.radio("Drift change", ["fixed", "shrinking"])
seed = st.sidebar.number_input("Seed", 0, 10**9, 0, step=1)

st.sidebar.header("Pipeline")
level = st.sidebar.select_slider("Level ε", [0.01, 0.05, 0.10], value=0.05)
drift_test = st.sidebar.selectbox("Drift test rule", ["either", "both", "t1", "t2"])
same_point_reps = st.sidebar.slider("Same-point bootstrap reps", 0, 400, 100, step=50)

if st.sidebar.button("Reset"):
    st.session_state.path = None
    st.session_state.spec = None
    st.session_state.report = None
    st.sidebar.success("Cleared")

# =====================================================
# SIMULATE
# =====================================================

col_a, col_b = st.columns(2)

if col_a.button("▶ Simulate path"):
    spec = ExperimentSpec(
        model=model_name,
        situation=situation,
        n=int(10 ** log_n),
        change=change,
        replications=1,
        seed=int(seed),
        substeps=8,
    )
    with st.spinner("Simulating..."):
        st.session_state.path = simulate_replication(spec, 0)
    st.session_state.spec = spec
    st.session_state.report = None

path = st.session_state.path
spec = st.session_state.spec

if path is None:
    st.info("Simulate a path to start.")
    st.stop()

# =====================================================
# ANALYZE
# =====================================================

if col_b.button("Run pipeline"):
    config = PipelineConfig(
        level=level,
        drift_test=drift_test,
        same_point_reps=same_point_reps,
        seed=int(seed),
    )
    try:
        with st.spinner("Running change-point pipeline..."):
            st.session_state.report = run_pipeline(path, get_model(spec.model), config)
    except DiffcpError as exc:
        st.error(str(exc))

report = st.session_state.report

# =====================================================
# PATH VIEW
# =====================================================

truth = spec.truth()
fig, ax = plt.subplots(figsize=(11, 3.5))
ax.plot(path.t, path.x[:, 0], lw=0.4, color="black")
ax.axvline(truth["tau_alpha"] * path.T, color="tab:blue", ls=":", label="true τ^α")
if truth["tau_beta"] is not None:
    ax.axvline(truth["tau_beta"] * path.T, color="tab:red", ls=":", label="true τ^β")

if report is not None:
    if report.tau_alpha is not None:
        ax.axvline(report.tau_alpha.tau_hat * path.T, color="tab:blue", label="τ̂^α")
    if report.window is not None:
        ax.axvspan(report.window.tau_lower * path.T, report.window.tau_upper * path.T,
                   color="tab:blue", alpha=0.15, label="exclusion window")
    if report.tau_beta is not None:
        ax.axvline(report.tau_beta.tau_hat * path.T, color="tab:red", label="τ̂^β")

ax.set_xlabel("t")
ax.legend(loc="upper right", fontsize=8)
st.pyplot(fig)

c1, c2 = st.columns([1, 2])
with c1:
    st.subheader("Path")
    st.json(describe_path(path))
    st.subheader("Truth")
    st.json(truth)

with c2:
    st.subheader("Decision report")
    if report is None:
        st.caption("Run the pipeline to see the report.")
    else:
        st.metric("Branch", report.branch)
        st.code(report.to_text())

        rows = []
        for side, tests in report.drift_tests.items():
            for name, t in tests.items():
                rows.append({
                    "Side": side,
                    "Test": name,
                    "Statistic": round(t.statistic, 4),
                    "Critical": t.critical_value,
                    "Reject": t.reject,
                })
        if rows:
            st.dataframe(pd.DataFrame(rows), use_container_width=True)

        with st.expander("JSON"):
            st.json(report.to_dict())
