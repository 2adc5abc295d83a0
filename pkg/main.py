"""
main.py
-------
Streamlit control panel over the library:
- Sidebar: dimension, surface, base c (or automatic search), scale tie, seed
- Points & incidence: build a family, run the gate suite, inspect the report
- Grid bound: the exact periodic-grid X-ray check for p in {1, 2, inf}
- Ratio sweep: run the schedule (or load a YAML config) and view the rows

Run with: streamlit run main.py
"""
import os
import tempfile

import pandas as pd
import streamlit as st

from estimates import parse_ps, sharpness_rows, xray_bound_suite
from experiment import ExperimentConfig, build_family, log_fit, ratio_sweep, resolve_parameters
from incidence import incidence_suite
from utils.errors import IncidenceGateError, SearchError


def langsmith_link():
    proj = os.getenv("LANGCHAIN_PROJECT", "default")
    url = "https://smith.langchain.com/"
    return f"[Open LangSmith (project: {proj})]({url})"


st.set_page_config(page_title="log R counterexample", layout="wide")
st.title("Mizohata-Takeuchi log R counterexample")

# ---------- Sidebar: construction controls ----------
st.sidebar.header("Construction")
d = st.sidebar.selectbox("Dimension d", [2, 3], index=0)
surface = st.sidebar.selectbox("Surface", ["paraboloid", "sphere", "quadratic"])
auto_c = st.sidebar.checkbox("Search for c automatically", value=True)
c = None if auto_c else st.sidebar.selectbox("Base c", [2.0, 4.0, 8.0, 16.0, 1.05])
scale_power = st.sidebar.slider("Scale power (R = c^{power (N + n0)})", 1, 3, d)
n0 = st.sidebar.slider("Discarded prefix n0", 0, 4, 2)
stride = st.sidebar.slider("Index stride", 1, 3, 1)
seed = st.sidebar.number_input("Seed", value=7, step=1)
threads = st.sidebar.slider("Threads", 1, 8, 1)
st.sidebar.caption(f"Traces (when LangSmith tracing is on): {langsmith_link()}")


def base_config(**extra) -> ExperimentConfig:
    return ExperimentConfig(d=d, surface=surface, c=c, n0=n0, stride=stride, scale_power=scale_power,
                            seed=int(seed), threads=threads, **extra)


tab1, tab2, tab3 = st.tabs(["Points & incidence", "Grid bound", "Ratio sweep"])

# -------- Tab 1: points and the gate -------- #
with tab1:
    N = st.slider("N (points)", 1, 14, 8)
    n_dirs = st.slider("Sampled directions", 500, 20_000, 2000, step=500)
    if st.button("Build family and run suite", type="primary"):
        try:
            with st.spinner("Building..."):
                config = resolve_parameters(base_config(N_schedule=[N], n_dirs=n_dirs))
                _, family, lattice = build_family(config, N)
                report = incidence_suite(family, lattice, n_dirs=n_dirs, seed=int(seed), threads=threads)
        except (SearchError, ValueError) as exc:
            st.error(str(exc))
        else:
            st.write(f"c = {config.c:g}, b = {config.b:g}, R = {family.R:.4g}, |Q| = {lattice.size}")
            if report.passed:
                st.success("Incidence suite passed")
            else:
                st.error(f"Incidence suite failed: {', '.join(report.failures)}")
            st.json(report.model_dump(mode="json"))
            with st.expander("Generators xi_n - xi0"):
                st.dataframe(pd.DataFrame(family.generators, index=list(family.indices)))

# -------- Tab 2: exact grid check -------- #
with tab2:
    M = st.selectbox("Grid size M", [16, 32, 64], index=1)
    draws = st.slider("Random draws", 10, 1000, 100, step=10)
    p_text = st.text_input("Exponents p", value="all")
    if st.button("Run grid check"):
        try:
            with st.spinner("Checking..."):
                rows = xray_bound_suite(d, M, draws, seed=int(seed), ps=parse_ps(p_text), threads=threads)
                sharp = sharpness_rows(d, min(M, 32), seed=int(seed))
        except ValueError as exc:
            st.error(str(exc))
        else:
            frame = pd.DataFrame(rows)
            failures = int((~frame["passed"]).sum())
            (st.success if failures == 0 else st.error)(f"{failures} failures over {len(frame)} checks")
            st.dataframe(frame.groupby("p")["margin"].describe())
            st.subheader("Sharpness at p = inf")
            st.dataframe(pd.DataFrame(sharp))

# -------- Tab 3: sweep -------- #
with tab3:
    schedule = st.multiselect("N schedule", list(range(1, 15)), default=[4, 6, 8, 10, 12])
    uploaded = st.file_uploader("...or a config file", type=["yaml", "yml", "json"])
    if st.button("Run sweep"):
        try:
            if uploaded:
                with tempfile.TemporaryDirectory() as tmpdir:
                    path = os.path.join(tmpdir, uploaded.name)
                    with open(path, "wb") as f:
                        f.write(uploaded.read())
                    config = ExperimentConfig.from_file(path, seed=int(seed), threads=threads)
            else:
                config = base_config(N_schedule=sorted(schedule))
            with st.spinner("Sweeping..."):
                report = ratio_sweep(config)
        except IncidenceGateError as exc:
            st.error(f"Gate failed: {exc}")
            if exc.report is not None:
                st.json(exc.report.model_dump(mode="json"))
        except (SearchError, ValueError) as exc:
            st.error(str(exc))
        else:
            frame = pd.DataFrame([r.model_dump() for r in report.rows])
            st.dataframe(frame[["N", "R", "lattice_size", "energy", "sup_line_lower", "mixed_norm_upper",
                                "ratio_conservative", "ratio_observed"]])
            st.line_chart(frame.set_index("log_R")[["ratio_conservative", "ratio_observed"]])
            if len(frame) >= 3:
                slope, intercept, r2 = log_fit(report)
                st.write(f"fit: slope {slope:.4g}, intercept {intercept:.4g}, r^2 {r2:.4f}")
            (st.success if report.conservative_increasing else st.warning)(
                "conservative ratio strictly increasing" if report.conservative_increasing
                else "conservative ratio not monotone"
            )
