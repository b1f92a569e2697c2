import io

import streamlit as st
import matplotlib.pyplot as plt

from core.errors import DiffcpError
from core.model import get_model
from core.path import describe_path, read_path_csv
from core.pipeline import PipelineConfig, run_pipeline

st.set_page_config(page_title="Analyze CSV", layout="wide")
st.title("📄 Analyze a path CSV")
st.caption("Header t,x1; equidistant observations")

model_name = st.selectbox("Model", ["ou", "hyperbolic"])
upload = st.file_uploader("Path CSV", type=["csv"])
level = st.select_slider("Level ε", [0.01, 0.05, 0.10], value=0.05)
same_point_reps = st.slider("Same-point bootstrap reps", 0, 400, 100, step=50)

if upload is not None and st.button("Analyze"):
    model = get_model(model_name)
    try:
        path = read_path_csv(io.StringIO(upload.getvalue().decode("utf-8")), expected_dim=model.state_dim)
        report = run_pipeline(path, model, PipelineConfig(level=level, same_point_reps=same_point_reps))
    except DiffcpError as exc:
        st.error(str(exc))
        st.stop()

    fig, ax = plt.subplots(figsize=(11, 3))
    ax.plot(path.t, path.x[:, 0], lw=0.4, color="black")
    if report.tau_alpha is not None:
        ax.axvline(report.tau_alpha.tau_hat * path.T, color="tab:blue")
    if report.tau_beta is not None:
        ax.axvline(report.tau_beta.tau_hat * path.T, color="tab:red")
    st.pyplot(fig)

    st.json(describe_path(path))
    st.metric("Branch", report.branch)
    st.code(report.to_text())
    st.download_button("Download report JSON", report.to_json(), file_name="report.json")

st.markdown("---")
if st.button("⬅ Return to Console"):
    st.switch_page("streamlit_app.py")
