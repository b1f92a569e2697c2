import streamlit as st
import numpy as np
import matplotlib.pyplot as plt
from scipy.stats import kstwobign

from core.changepoint import compute_J, sample_limit_argmin
from core.cusum import MonteCarloConfig
from core.errors import DiffcpError
from core.experiment import critical_value_table
from core.model import get_model
from core.simulate import sample_brownian_bridge_sup

st.set_page_config(page_title="Limit laws", layout="wide")
st.title("📈 Critical values & limit laws")

# =====================================================
# CRITICAL VALUES
# =====================================================

st.header("sup ‖B⁰‖ critical values")
c1, c2, c3 = st.columns(3)
k = c1.selectbox("Bridge dimension k", [1, 2, 3])
n_grid = c2.select_slider("Grid", [500, 1000, 2000, 5000, 10000], value=1000)
n_reps = c3.select_slider("Replications", [500, 1000, 2000, 5000, 10000], value=2000)

if st.button("Simulate bridge sups"):
    mc = MonteCarloConfig(n_grid=n_grid, n_reps=n_reps)
    st.dataframe(critical_value_table([k], [0.01, 0.05, 0.10, 0.5], mc), use_container_width=True)

    sample = sample_brownian_bridge_sup(k, n_grid, n_reps)
    fig, ax = plt.subplots(figsize=(6, 3.5))
    ax.step(sample, np.arange(1, sample.size + 1) / sample.size, where="post", label="simulated")
    if k == 1:
        ax.plot(sample, kstwobign.cdf(sample), "r--", label="Kolmogorov")
    ax.legend()
    st.pyplot(fig)

# =====================================================
# ARGMIN LAW
# =====================================================

st.header("argmin of −2√J W(v) + J|v|")
model_name = st.selectbox("Model", ["ou", "hyperbolic"])
direction = st.radio("Change direction e", ["(0, 1)", "(1, 0)"], horizontal=True)
alpha = st.number_input("α", 0.1, 5.0, 1.0)
beta = st.number_input("β", 0.1, 1.4, 1.0)
gamma = st.number_input("γ", 1.6, 5.0, 2.0)
reps = st.select_slider("Draws", [1000, 2000, 5000, 10000], value=2000)

if st.button("Sample limit law"):
    e = [0.0, 1.0] if direction == "(0, 1)" else [1.0, 0.0]
    try:
        J = compute_J(get_model(model_name), [alpha], [beta, gamma], e,
                      n_mc=5000, burn_in=5000, thin=10, chains=500)
        sample = sample_limit_argmin(J, reps)
    except DiffcpError as exc:
        st.error(str(exc))
        st.stop()

    st.metric("J", f"{J:.4f}")
    fig, ax = plt.subplots(figsize=(6, 3.5))
    ax.hist(sample, bins=60, density=True, color="tab:gray")
    ax.set_xlim(np.quantile(sample, [0.005, 0.995]))
    st.pyplot(fig)

st.markdown("---")
if st.button("⬅ Return to Console"):
    st.switch_page("streamlit_app.py")
