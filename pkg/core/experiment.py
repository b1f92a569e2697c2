"""
Simulation experiments: the three situations per builtin model, replication
runs over a process pool, aggregate tables, histogram data and generated
plotting scripts. Also the critical-value and limit-law tabulations behind
the `critical-values` and `limit-law` commands.
"""

import json
import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from functools import partial
from pathlib import Path as FsPath
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd
from scipy.stats import kstwobign

from core.changepoint import compute_J, sample_limit_argmin
from core.config import dataclass_to_dict, default_workers
from core.cusum import MonteCarloConfig
from core.errors import ConfigError, DiffcpError
from core.estimate import OptimizerConfig
from core.model import get_model
from core.path import Path, write_path_csv
from core.pipeline import PipelineConfig, run_pipeline
from core.rng import derive_seed
from core.simulate import ParamSchedule, empirical_upper_quantile, sample_brownian_bridge_sup, \
    simulate_exact, simulate_path

logger = logging.getLogger(__name__)

SITUATIONS = ("i", "ii", "iii")
DEFAULT_H_EXPONENT = {"ou": 0.52, "hyperbolic": 0.625}
DRIFT_TESTS = ("t1_left", "t2_left", "t1_right", "t2_right")


# ==================================================
# EXPERIMENT SPEC
# ==================================================
@dataclass(frozen=True)
class ExperimentSpec:
    model: str = "ou"
    situation: str = "ii"
    n: int = 100_000
    h_exponent: Optional[float] = None
    change: str = "fixed"
    drift_change: float = 0.5
    theta_exponent: float = 0.1
    replications: int = 100
    seed: int = 0
    workers: Optional[int] = None
    output_dir: str = "results"
    substeps: int = 32
    simulator: str = "auto"

    def __post_init__(self):
        if self.model not in DEFAULT_H_EXPONENT:
            raise ConfigError(f"unknown model '{self.model}', choose from {sorted(DEFAULT_H_EXPONENT)}")
        if self.situation not in SITUATIONS:
            raise ConfigError(f"situation must be one of {SITUATIONS}, got '{self.situation}'")
        if self.replications < 1:
            raise ConfigError(f"replications must be >= 1, got {self.replications}")
        if self.n < 10:
            raise ConfigError(f"n must be >= 10, got {self.n}")
        if self.change not in ("fixed", "shrinking"):
            raise ConfigError(f"change must be 'fixed' or 'shrinking', got '{self.change}'")
        if self.simulator not in ("auto", "euler", "exact"):
            raise ConfigError(f"simulator must be auto/euler/exact, got '{self.simulator}'")
        if self.simulator == "exact" and get_model(self.model).exact_transition is None:
            raise ConfigError(f"model {self.model} has no exact simulator")
        if self.workers is not None and self.workers < 1:
            raise ConfigError("workers must be >= 1")
        if not 0.5 < self.h_exp < 1.0:
            logger.warning("h = n^-%g violates n h -> infinity, n h^2 -> 0", self.h_exp)

    @property
    def h_exp(self) -> float:
        return DEFAULT_H_EXPONENT[self.model] if self.h_exponent is None else float(self.h_exponent)

    @property
    def h(self) -> float:
        return float(self.n ** (-self.h_exp))

    @property
    def T(self) -> float:
        return self.n * self.h

    def situation_setup(self) -> dict:
        """x0, schedule and the drift change size theta for this model/situation."""
        n = self.n
        if self.model == "ou":
            x0, tau_a, a1, a2 = 2.0, 0.8, 1.0, 1.2
            theta = self.drift_change if self.change == "fixed" else n ** (-self.theta_exponent)
            b1, b2 = np.array([1.0, 2.0 - theta]), np.array([1.0, 2.0])
            tau_b = {"ii": 0.4, "iii": 0.8}.get(self.situation)
        else:
            x0, tau_a, a1, a2 = 1.0, 0.4, 1.0 + n ** (-0.36), 1.0
            b1, b2 = np.array([1.0, 2.0]), np.array([0.5, 2.0])
            theta = float(np.linalg.norm(b1 - b2))
            tau_b = {"ii": 0.7, "iii": 0.4}.get(self.situation)
        if tau_b is None:
            # no drift change: the post-change drift of situation (ii) holds throughout for OU
            beta = b2 if self.model == "ou" else b1
            schedule = ParamSchedule.from_changes([a1], beta, alpha2=[a2], tau_alpha=tau_a)
            theta, betas = 0.0, (beta.tolist(),)
        else:
            schedule = ParamSchedule.from_changes([a1], b1, alpha2=[a2], tau_alpha=tau_a,
                                                  beta2=b2, tau_beta=tau_b)
            betas = (b1.tolist(), b2.tolist())
        return {"x0": x0, "schedule": schedule, "theta": theta, "tau_alpha": tau_a, "tau_beta": tau_b,
                "alpha": (a1, a2), "beta": betas}

    def truth(self) -> dict:
        s = self.situation_setup()
        return {"tau_alpha": s["tau_alpha"], "tau_beta": s["tau_beta"], "alpha": list(s["alpha"]),
                "beta": [list(b) for b in s["beta"]], "theta": s["theta"], "x0": s["x0"]}

    def worker_count(self) -> int:
        return self.workers or default_workers()


def simulate_replication(spec: ExperimentSpec, index: int) -> Path:
    setup = spec.situation_setup()
    seed = derive_seed(spec.seed, index)
    model = get_model(spec.model)
    exact = spec.simulator == "exact" or (spec.simulator == "auto" and model.exact_transition is not None)
    if exact:
        return simulate_exact(model, setup["schedule"], setup["x0"], spec.n, spec.h, seed)
    return simulate_path(model, setup["schedule"], setup["x0"], spec.n, spec.h, spec.substeps, seed)


# ==================================================
# REPLICATIONS
# ==================================================
def _vec(prefix: str, values) -> Dict[str, float]:
    if values is None:
        return {}
    return {f"{prefix}_{j}": float(v) for j, v in enumerate(np.atleast_1d(values))}


def report_row(report) -> dict:
    row = {"branch": report.branch}
    if report.diffusion_test is not None:
        row["t_alpha"] = report.diffusion_test.statistic
        row["t_alpha_reject"] = report.diffusion_test.reject
    if report.alpha_expansion is not None:
        row.update(_vec("alpha1", report.alpha1.alpha_hat))
        row.update(_vec("alpha2", report.alpha2.alpha_hat))
    if report.tau_alpha is not None:
        row["tau_alpha"] = report.tau_alpha.tau_hat
    if report.window is not None:
        row.update(epsilon1=report.window.epsilon1, tau_lower=report.window.tau_lower,
                   tau_upper=report.window.tau_upper)
    for side, tests in report.drift_tests.items():
        for name, t in tests.items():
            row[f"{name}_{side}"] = t.statistic
            row[f"{name}_{side}_reject"] = t.reject
    for side, est in report.beta_windows.items():
        row.update(_vec(f"beta_{side}", est.beta_hat))
    if report.beta_expansion is not None:
        row.update(_vec("beta1", report.beta_expansion.first.beta_hat))
        row.update(_vec("beta2", report.beta_expansion.second.beta_hat))
    if report.tau_beta is not None:
        row["tau_beta"] = report.tau_beta.tau_hat
    if report.same_point is not None:
        row["same_point"] = report.same_point["statistic"]
        row["same_point_reference"] = report.same_point["reference"]
    row["flags"] = len(report.all_flags())
    return row


def run_replication(spec: ExperimentSpec, pipeline: PipelineConfig, optimizer: OptimizerConfig,
                    mc: Optional[MonteCarloConfig], index: int) -> dict:
    row = {"replication": index, "seed": derive_seed(spec.seed, index), "status": "ok", "error": ""}
    try:
        path = simulate_replication(spec, index)
        report = run_pipeline(path, get_model(spec.model), pipeline, optimizer, mc)
    except DiffcpError as exc:
        row.update(status="failed", error=str(exc))
        return row
    row.update(report_row(report))
    truth = spec.truth()
    theta2 = truth["theta"] ** 2
    if report.tau_alpha is not None:
        row["tau_alpha_err"] = report.tau_alpha.tau_hat - truth["tau_alpha"]
    if report.tau_beta is not None and truth["tau_beta"] is not None:
        row["tau_beta_err"] = report.tau_beta.tau_hat - truth["tau_beta"]
        row["tau_beta_scaled"] = path.T * theta2 * row["tau_beta_err"]
    return row


def run_replications(spec: ExperimentSpec, pipeline: Optional[PipelineConfig] = None,
                     optimizer: Optional[OptimizerConfig] = None,
                     mc: Optional[MonteCarloConfig] = None) -> pd.DataFrame:
    """One row per replication, in replication order, independent of the worker count."""
    pipeline = pipeline or PipelineConfig()
    optimizer = optimizer or OptimizerConfig()
    job = partial(run_replication, spec, pipeline, optimizer, mc)
    reps = range(spec.replications)
    workers = spec.worker_count()
    step = max(1, spec.replications // 10)
    rows = []
    if workers == 1:
        results = map(job, reps)
        pool = None
    else:
        pool = ProcessPoolExecutor(max_workers=workers)
        results = pool.map(job, reps)
    try:
        for k, row in enumerate(results, 1):
            rows.append(row)
            if k % step == 0 or k == spec.replications:
                logger.info("replication %d / %d", k, spec.replications)
    finally:
        if pool is not None:
            pool.shutdown()
    return pd.DataFrame(rows)


def aggregate(rows: pd.DataFrame) -> pd.DataFrame:
    """mean / sd / count per numeric column over successful rows, rejection rates for decisions."""
    ok = rows[rows["status"] == "ok"] if "status" in rows else rows
    records = [{"quantity": "replications_ok", "mean": float(len(ok)), "sd": np.nan, "count": len(rows)}]
    skip = {"replication", "seed", "flags"}
    for col in ok.columns:
        if col in skip:
            continue
        series = ok[col].dropna()
        if series.empty:
            continue
        if series.dtype == bool or col.endswith("_reject"):
            records.append({"quantity": f"{col}_rate", "mean": float(series.astype(float).mean()),
                            "sd": np.nan, "count": int(series.size)})
        elif pd.api.types.is_numeric_dtype(series):
            sd = float(series.std(ddof=1)) if series.size > 1 else np.nan
            records.append({"quantity": col, "mean": float(series.mean()), "sd": sd,
                            "count": int(series.size)})
    if "branch" in ok:
        for branch, count in ok["branch"].value_counts().sort_index().items():
            records.append({"quantity": f"branch_{branch}", "mean": count / max(len(ok), 1),
                            "sd": np.nan, "count": int(count)})
    out = pd.DataFrame(records, columns=["quantity", "mean", "sd", "count"])
    if len(ok) < 2:
        logger.warning("fewer than two successful replications: sd columns are empty")
    return out


# ==================================================
# FIGURE DATA
# ==================================================
def edf_frame(statistics: np.ndarray, k: int, reference_reps: int = 2000,
              reference_grid: int = 1000, seed: int = 0) -> pd.DataFrame:
    """Empirical CDF of a test statistic next to the sup-bridge CDF."""
    x = np.sort(np.asarray(statistics, dtype=float))
    edf = np.arange(1, x.size + 1) / x.size
    if k == 1:
        ref = kstwobign.cdf(x)
    else:
        sample = sample_brownian_bridge_sup(k, reference_grid, reference_reps, seed)
        ref = np.searchsorted(sample, x, side="right") / sample.size
    return pd.DataFrame({"value": x, "edf": edf, "reference_cdf": ref})


def histogram_frame(values: np.ndarray, reference: np.ndarray, bins: int = 40) -> pd.DataFrame:
    values = np.asarray(values, dtype=float)
    lo = min(values.min(), np.quantile(reference, 0.005))
    hi = max(values.max(), np.quantile(reference, 0.995))
    edges = np.linspace(lo, hi, bins + 1)
    dens, _ = np.histogram(values, bins=edges, density=True)
    ref, _ = np.histogram(reference, bins=edges, density=True)
    return pd.DataFrame({"left": edges[:-1], "right": edges[1:], "density": dens,
                         "reference_density": ref})


PLOT_EDF = '''import matplotlib.pyplot as plt
import pandas as pd

df = pd.read_csv("{csv}")
fig, ax = plt.subplots(figsize=(6, 4))
ax.step(df["value"], df["edf"], where="post", color="black", label="empirical")
ax.plot(df["value"], df["reference_cdf"], color="red", linestyle="--", label="sup |B^0|")
ax.set_title("{title}")
ax.set_xlabel("statistic")
ax.legend()
fig.tight_layout()
fig.savefig("{png}", dpi=150)
'''

PLOT_HIST = '''import matplotlib.pyplot as plt
import pandas as pd

df = pd.read_csv("{csv}")
fig, ax = plt.subplots(figsize=(6, 4))
width = df["right"] - df["left"]
ax.bar(df["left"], df["density"], width=width, align="edge", alpha=0.5, label="empirical")
ax.plot(0.5 * (df["left"] + df["right"]), df["reference_density"], color="red", label="argmin law")
ax.set_title("{title}")
ax.legend()
fig.tight_layout()
fig.savefig("{png}", dpi=150)
'''


def write_csv(df: pd.DataFrame, target: FsPath) -> None:
    df.to_csv(target, index=False, float_format="%.17g", lineterminator="\n", encoding="utf-8")


def _emit(out: FsPath, name: str, df: pd.DataFrame, template: str, title: str) -> List[str]:
    write_csv(df, out / f"{name}.csv")
    script = template.format(csv=f"{name}.csv", png=f"{name}.png", title=title)
    (out / f"plot_{name}.py").write_text(script, encoding="utf-8", newline="\n")
    return [f"{name}.csv", f"plot_{name}.py"]


def figure_data(spec: ExperimentSpec, rows: pd.DataFrame, out: FsPath,
                limit_reps: int = 10_000) -> List[str]:
    """Statistic EDFs against sup-bridge CDFs and tau_beta errors against the argmin law."""
    ok = rows[rows["status"] == "ok"]
    written = []
    q = get_model(spec.model).beta_dim
    for col in DRIFT_TESTS:
        if col in ok and ok[col].notna().sum() >= 2:
            k = 1 if col.startswith("t1") else q
            written += _emit(out, f"edf_{col}", edf_frame(ok[col].dropna().to_numpy(), k, seed=spec.seed),
                             PLOT_EDF, f"{col}: empirical vs limit CDF")
    if "t_alpha" in ok and ok["t_alpha"].notna().sum() >= 2:
        written += _emit(out, "edf_t_alpha", edf_frame(ok["t_alpha"].dropna().to_numpy(), 1),
                         PLOT_EDF, "t_alpha: empirical vs limit CDF")

    truth = spec.truth()
    if "tau_beta_scaled" in ok and ok["tau_beta_scaled"].notna().sum() >= 2:
        J = limit_law_constant(spec)
        reference = sample_limit_argmin(J, limit_reps, seed=spec.seed)
        hist = histogram_frame(ok["tau_beta_scaled"].dropna().to_numpy(), reference)
        written += _emit(out, "tau_beta_limit", hist, PLOT_HIST,
                         f"T theta^2 (tau_beta - {truth['tau_beta']}) vs argmin law, J={J:.4g}")
    return written


def limit_law_constant(spec: ExperimentSpec) -> float:
    """J for the drift change of the spec, on the side window that contains it."""
    setup = spec.situation_setup()
    model = get_model(spec.model)
    b1, b2 = (np.asarray(b) for b in setup["beta"])
    e = (b2 - b1) / max(setup["theta"], 1e-300)
    alpha = setup["alpha"][0] if setup["tau_beta"] < setup["tau_alpha"] else setup["alpha"][1]
    return compute_J(model, [alpha], b2, e, kind="beta", n_mc=10_000, burn_in=5_000, thin=10,
                     chains=500, seed=spec.seed)


def run_experiment(spec: ExperimentSpec, pipeline: Optional[PipelineConfig] = None,
                   optimizer: Optional[OptimizerConfig] = None,
                   mc: Optional[MonteCarloConfig] = None) -> Dict[str, object]:
    out = FsPath(spec.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    rows = run_replications(spec, pipeline, optimizer, mc)
    agg = aggregate(rows)
    write_csv(rows, out / "replications.csv")
    write_csv(agg, out / "aggregates.csv")
    files = ["replications.csv", "aggregates.csv"] + figure_data(spec, rows, out)
    manifest = {"spec": dataclass_to_dict(spec), "h": spec.h, "T": spec.T, "truth": spec.truth(),
                "pipeline": dataclass_to_dict(pipeline or PipelineConfig()),
                "monte_carlo": dataclass_to_dict(mc) if mc is not None else None,
                "failed": int((rows["status"] != "ok").sum()), "files": files}
    (out / "manifest.json").write_text(json.dumps(manifest, indent=2), encoding="utf-8", newline="\n")
    logger.info("wrote %d files to %s", len(files) + 1, out)
    return {"rows": rows, "aggregates": agg, "manifest": manifest}


# ==================================================
# SIMULATE-ONLY
# ==================================================
def simulate_to_dir(spec: ExperimentSpec) -> dict:
    """One path CSV per replication plus manifest.json with seeds, schedule and truth."""
    out = FsPath(spec.output_dir)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise ConfigError(f"cannot create output directory {out}: {exc}") from exc
    setup = spec.situation_setup()
    entries = []
    width = len(str(spec.replications - 1))
    for index in range(spec.replications):
        path = simulate_replication(spec, index)
        name = f"path_{index:0{width}d}.csv"
        try:
            write_path_csv(path, out / name)
        except OSError as exc:
            raise ConfigError(f"cannot write {out / name}: {exc}") from exc
        entries.append({"replication": index, "seed": derive_seed(spec.seed, index), "file": name})
    manifest = {"spec": dataclass_to_dict(spec), "h": spec.h, "T": spec.T, "truth": spec.truth(),
                "schedule": setup["schedule"].to_dict(), "paths": entries}
    (out / "manifest.json").write_text(json.dumps(manifest, indent=2), encoding="utf-8", newline="\n")
    logger.info("simulated %d paths into %s", spec.replications, out)
    return manifest


# ==================================================
# CRITICAL VALUES / LIMIT LAW
# ==================================================
def critical_value_table(ks: Sequence[int], levels: Sequence[float],
                         mc: Optional[MonteCarloConfig] = None, batches: int = 10) -> pd.DataFrame:
    """w_k(level) with standard errors from splitting the sample into batches."""
    mc = mc or MonteCarloConfig()
    records = []
    for k in ks:
        draws = sample_brownian_bridge_sup(k, mc.n_grid, mc.n_reps, mc.seed, mc.batch, sort=False)
        whole = np.sort(draws)
        parts = [np.sort(p) for p in np.array_split(draws, batches) if p.size]
        for level in levels:
            if not 0.0 < level < 1.0:
                raise ConfigError(f"level must lie in (0, 1), got {level}")
            sub = np.array([empirical_upper_quantile(p, level) for p in parts])
            se = float(sub.std(ddof=1) / np.sqrt(len(sub))) if len(sub) > 1 else np.nan
            records.append({"k": int(k), "level": float(level),
                            "value": empirical_upper_quantile(whole, level), "stderr": se,
                            "n_grid": mc.n_grid, "n_reps": mc.n_reps, "seed": mc.seed})
    return pd.DataFrame(records)


def limit_law_summary(J: float, reps: int = 10_000, seed: int = 0, v_max: Optional[float] = None,
                      grid_step: Optional[float] = None) -> Tuple[np.ndarray, pd.DataFrame]:
    sample = sample_limit_argmin(J, reps, v_max, grid_step, seed)
    qs = [0.025, 0.05, 0.25, 0.5, 0.75, 0.95, 0.975]
    rows = [{"quantity": "J", "value": J}, {"quantity": "mean", "value": float(sample.mean())},
            {"quantity": "sd", "value": float(sample.std(ddof=1))}]
    rows += [{"quantity": f"q{q:g}", "value": float(np.quantile(sample, q))} for q in qs]
    return sample, pd.DataFrame(rows)
