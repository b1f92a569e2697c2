"""
End-to-end change-point analysis of one path.

  1  t_alpha on the whole path
  2-3  interval expansion -> alpha1, alpha2
  4  tau_alpha
  5  exclusion window [tau_lower, tau_upper]
  6  drift tests on (0, [n tau_lower]] and ([n tau_upper], n]
  7a no drift rejection: same-point diagnostic with a bootstrap reference
  7b one side rejects: drift expansion inside that window, then tau_beta

Every sub-operation failure is re-raised as PipelineStepError carrying the
step label.
"""

import json
import logging
from contextlib import contextmanager
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Tuple

import numpy as np

from core.changepoint import (ChangePointEstimate, ExclusionWindow, estimate_tau_alpha,
                              estimate_tau_beta, exclusion_window)
from core.config import dataclass_to_dict
from core.cusum import (MonteCarloConfig, TestResult, drift_decision, same_point_statistic,
                        t1_drift, t2_drift, t_alpha)
from core.errors import (ConfigError, DataError, DiffcpError, NoChangeDetectedError,
                         PipelineStepError, WindowTooShortError)
from core.estimate import (EXPANSION_FRACTIONS, ExpansionResult, IntervalEstimate, OptimizerConfig,
                           estimate_alpha, estimate_beta, estimate_beta_pooled, expand_and_estimate)
from core.model import DiffusionModel
from core.path import Interval, Path
from core.rng import derive_seed
from core.simulate import ParamSchedule, empirical_upper_quantile, simulate_exact, simulate_paths

logger = logging.getLogger(__name__)

NO_DIFFUSION_CHANGE = "no-diffusion-change"
UNLOCALIZABLE = "unlocalizable"
NO_CHANGE = "no-change"
DRIFT_CHANGE_LEFT = "drift-change-left"
DRIFT_CHANGE_RIGHT = "drift-change-right"
SAME_POINT_SUSPECTED = "same-point-suspected"

BRANCHES = (NO_DIFFUSION_CHANGE, UNLOCALIZABLE, NO_CHANGE, DRIFT_CHANGE_LEFT,
            DRIFT_CHANGE_RIGHT, SAME_POINT_SUSPECTED)


# ==================================================
# CONFIG
# ==================================================
@dataclass(frozen=True)
class PipelineConfig:
    level: float = 0.05
    drift_test: str = "either"
    fractions: Tuple[float, ...] = EXPANSION_FRACTIONS
    min_margin: int = 50
    eps_cap: float = 0.45
    eps_intercept: float = 0.9
    eps_slope: float = 1.8
    eps_floor: float = 0.01
    same_point_reps: int = 200
    same_point_quantile: float = 0.95
    bootstrap_substeps: int = 4
    cv_source: str = "table"
    min_n: int = 1000
    keep_profiles: bool = False
    seed: int = 0

    def __post_init__(self):
        if not 0.0 < self.level < 1.0:
            raise ConfigError(f"level must lie in (0, 1), got {self.level}")
        if self.drift_test not in ("either", "both", "t1", "t2"):
            raise ConfigError(f"drift_test must be one of either/both/t1/t2, got '{self.drift_test}'")
        fr = tuple(self.fractions)
        if not fr or any(not 0.0 < c < 0.5 for c in fr) or any(b >= a for a, b in zip(fr, fr[1:])):
            raise ConfigError(f"fractions must be strictly decreasing inside (0, 0.5): {fr}")
        if self.same_point_reps < 0 or not 0.0 < self.same_point_quantile < 1.0:
            raise ConfigError("same_point_reps must be >= 0 and same_point_quantile in (0, 1)")
        if self.bootstrap_substeps < 1:
            raise ConfigError("bootstrap_substeps must be >= 1")
        if self.cv_source not in ("table", "mc"):
            raise ConfigError(f"cv_source must be 'table' or 'mc', got '{self.cv_source}'")
        object.__setattr__(self, "fractions", fr)


# ==================================================
# REPORT
# ==================================================
@dataclass
class DecisionReport:
    model: str
    n: int
    h: float
    T: float
    config: dict
    branch: Optional[str] = None
    steps: List[str] = field(default_factory=list)
    diffusion_test: Optional[TestResult] = None
    alpha_full: Optional[IntervalEstimate] = None
    alpha_expansion: Optional[ExpansionResult] = None
    tau_alpha: Optional[ChangePointEstimate] = None
    window: Optional[ExclusionWindow] = None
    drift_tests: Dict[str, Dict[str, TestResult]] = field(default_factory=dict)
    drift_reject: Dict[str, bool] = field(default_factory=dict)
    beta_windows: Dict[str, IntervalEstimate] = field(default_factory=dict)
    drift_side: Optional[str] = None
    beta_expansion: Optional[ExpansionResult] = None
    tau_beta: Optional[ChangePointEstimate] = None
    same_point: Optional[dict] = None
    flags: List[str] = field(default_factory=list)

    @property
    def alpha1(self) -> Optional[IntervalEstimate]:
        return self.alpha_expansion.first if self.alpha_expansion else None

    @property
    def alpha2(self) -> Optional[IntervalEstimate]:
        return self.alpha_expansion.second if self.alpha_expansion else None

    def flag(self, message: str) -> None:
        logger.warning(message)
        self.flags.append(message)

    def all_flags(self) -> List[str]:
        out = list(self.flags)
        for part in (self.alpha_full, self.tau_alpha, self.window, self.tau_beta):
            if part is not None:
                out.extend(part.flags)
        for exp in (self.alpha_expansion, self.beta_expansion):
            if exp is not None:
                out.extend(exp.first.flags + exp.second.flags)
        for est in self.beta_windows.values():
            out.extend(est.flags)
        return list(dict.fromkeys(out))

    def to_dict(self) -> dict:
        def opt(x):
            return None if x is None else x.to_dict()

        return {
            "model": self.model,
            "n": self.n,
            "h": self.h,
            "T": self.T,
            "branch": self.branch,
            "steps": list(self.steps),
            "diffusion_test": opt(self.diffusion_test),
            "alpha_full": opt(self.alpha_full),
            "alpha_expansion": opt(self.alpha_expansion),
            "tau_alpha": opt(self.tau_alpha),
            "exclusion_window": opt(self.window),
            "drift_tests": {side: {k: t.to_dict() for k, t in tests.items()}
                            for side, tests in self.drift_tests.items()},
            "drift_reject": dict(self.drift_reject),
            "beta_windows": {side: est.to_dict() for side, est in self.beta_windows.items()},
            "drift_side": self.drift_side,
            "beta_expansion": opt(self.beta_expansion),
            "tau_beta": opt(self.tau_beta),
            "same_point": self.same_point,
            "flags": self.all_flags(),
            "config": self.config,
        }

    def to_json(self, indent: int = 2) -> str:
        return json.dumps(self.to_dict(), indent=indent)

    def to_text(self) -> str:
        lines = [f"model {self.model}: n={self.n}, h={self.h:.6g}, T={self.T:.6g}",
                 f"branch: {self.branch}"]
        if self.diffusion_test is not None:
            t = self.diffusion_test
            lines.append(f"diffusion test: {t.statistic:.4f} vs {t.critical_value:.4f} "
                         f"-> {'reject' if t.reject else 'accept'}")
        if self.alpha_expansion is not None:
            lines.append(f"alpha1={_fmt(self.alpha1.alpha_hat)} on {self.alpha1.interval}, "
                         f"alpha2={_fmt(self.alpha2.alpha_hat)} on {self.alpha2.interval} "
                         f"(split c={self.alpha_expansion.split_used:g})")
        if self.tau_alpha is not None:
            lines.append(f"tau_alpha={self.tau_alpha.tau_hat:.6f} (index {self.tau_alpha.index_hat})")
        if self.window is not None:
            w = self.window
            lines.append(f"exclusion window [{w.tau_lower:.6f}, {w.tau_upper:.6f}], eps1={w.epsilon1:.4f}")
        for side, tests in self.drift_tests.items():
            parts = [f"{k}={t.statistic:.4f}/{t.critical_value:.4f}{'*' if t.reject else ''}"
                     for k, t in tests.items()]
            lines.append(f"{side} drift tests: " + ", ".join(parts))
        for side, est in self.beta_windows.items():
            lines.append(f"{side} beta={_fmt(est.beta_hat)} on {est.interval}")
        if self.beta_expansion is not None:
            e = self.beta_expansion
            lines.append(f"beta1={_fmt(e.first.beta_hat)} on {e.first.interval}, "
                         f"beta2={_fmt(e.second.beta_hat)} on {e.second.interval}")
        if self.tau_beta is not None:
            lines.append(f"tau_beta={self.tau_beta.tau_hat:.6f} ({self.drift_side} window)")
        if self.same_point is not None:
            sp = self.same_point
            ref = "n/a" if sp["reference"] is None else f"{sp['reference']:.4f}"
            lines.append(f"same-point statistic {sp['statistic']:.4f}, bootstrap reference {ref} (heuristic)")
        for msg in self.all_flags():
            lines.append(f"flag: {msg}")
        return "\n".join(lines) + "\n"


def _fmt(v) -> str:
    return "[" + ", ".join(f"{x:.5f}" for x in np.atleast_1d(v)) + "]"


@contextmanager
def _step(label: str, report: DecisionReport):
    logger.info("%s", label)
    try:
        yield
    except PipelineStepError:
        raise
    except DiffcpError as exc:
        raise PipelineStepError(label, exc) from exc
    report.steps.append(label)


# ==================================================
# SAME-POINT BOOTSTRAP
# ==================================================
def same_point_reference(path: Path, model: DiffusionModel, alpha1, alpha2, tau_alpha: float,
                         left: Interval, right: Interval, config: PipelineConfig,
                         optimizer: Optional[OptimizerConfig] = None) -> Tuple[float, np.ndarray, np.ndarray]:
    """
    Upper quantile of sqrt(T) ||beta_left - beta_right|| on no-change
    drift paths simulated at the fitted parameters (alpha1 -> alpha2 at
    tau_alpha, pooled beta). Returns (quantile, pooled beta, sorted draws).
    """
    pooled = estimate_beta_pooled(path, [(left, alpha1), (right, alpha2)], model, optimizer).beta_hat
    schedule = ParamSchedule.from_changes(alpha1, pooled, alpha2=alpha2, tau_alpha=tau_alpha)
    seeds = [derive_seed(config.seed, i) for i in range(config.same_point_reps)]
    draws = []
    for chunk in range(0, len(seeds), 25):
        group = seeds[chunk:chunk + 25]
        if model.exact_transition is not None:
            paths = [simulate_exact(model, schedule, path.x[0], path.n, path.h, s) for s in group]
        else:
            paths = simulate_paths(model, schedule, path.x[0], path.n, path.h,
                                   config.bootstrap_substeps, group)
        for p in paths:
            b1 = estimate_beta(p, left, model, alpha1, optimizer).beta_hat
            b2 = estimate_beta(p, right, model, alpha2, optimizer).beta_hat
            draws.append(same_point_statistic(b1, b2, p.T))
    draws = np.sort(np.asarray(draws))
    return empirical_upper_quantile(draws, 1.0 - config.same_point_quantile), pooled, draws


# ==================================================
# PIPELINE
# ==================================================
def run_pipeline(path: Path, model: DiffusionModel, config: Optional[PipelineConfig] = None,
                 optimizer: Optional[OptimizerConfig] = None,
                 mc: Optional[MonteCarloConfig] = None) -> DecisionReport:
    config = config or PipelineConfig()
    if path.d != model.state_dim:
        raise DataError(f"path has d={path.d}, model {model.name} expects d={model.state_dim}")
    if path.n < config.min_n:
        raise DataError(f"insufficient data: n={path.n} < {config.min_n}")

    report = DecisionReport(model.name, path.n, path.h, path.T, dataclass_to_dict(config))
    lvl, cvs = config.level, config.cv_source

    with _step("step 1: diffusion test", report):
        report.alpha_full = estimate_alpha(path, path.full(), model, optimizer)
        report.diffusion_test = t_alpha(path, report.alpha_full.alpha_hat, model, lvl, cvs, mc)
    if not report.diffusion_test.reject:
        report.branch = NO_DIFFUSION_CHANGE
        report.flag("no diffusion change detected; the no-diffusion-change branch is not implemented")
        return report

    with _step("step 2-3: diffusion expansion", report):
        try:
            report.alpha_expansion = expand_and_estimate(
                path, path.full(), "alpha", model, lvl, fractions=config.fractions,
                min_margin=config.min_margin, optimizer=optimizer, cv_source=cvs, mc=mc)
        except NoChangeDetectedError as exc:
            report.branch = UNLOCALIZABLE
            report.flag(f"diffusion change detected but unlocalizable: {exc}")
    if report.branch == UNLOCALIZABLE:
        return report
    a1, a2 = report.alpha1.alpha_hat, report.alpha2.alpha_hat

    with _step("step 4: tau_alpha", report):
        report.tau_alpha = estimate_tau_alpha(path, a1, a2, model, keep_profile=config.keep_profiles)

    with _step("step 5: exclusion window", report):
        report.window = exclusion_window(path.n, report.tau_alpha.tau_hat, a1, a2, config.eps_cap,
                                         config.eps_intercept, config.eps_slope, config.eps_floor)
    window = report.window

    with _step("step 6: drift tests", report):
        sides = (("left", window.tau_lower, a1), ("right", window.tau_upper, a2))
        intervals = {"left": (0, window.index_lower), "right": (window.index_upper, path.n)}
        for side, boundary, alpha in sides:
            try:
                beta = estimate_beta(path, intervals[side], model, alpha, optimizer)
                t1 = t1_drift(path, side, boundary, alpha, beta.beta_hat, model, lvl, cvs, mc)
                t2 = t2_drift(path, side, boundary, alpha, beta.beta_hat, model, lvl, cvs, mc)
            except WindowTooShortError as exc:
                report.flag(f"{side} drift window skipped: {exc}")
                continue
            report.beta_windows[side] = beta
            report.drift_tests[side] = {"t1": t1, "t2": t2}
            report.drift_reject[side] = drift_decision(t1, t2, config.drift_test)
        if not report.drift_tests:
            raise WindowTooShortError("both drift windows are too short")

    rejecting = [s for s, r in report.drift_reject.items() if r]
    if not rejecting:
        with _step("step 7: same-point diagnostic", report):
            _same_point(path, model, report, intervals, config, optimizer)
        return report

    side = rejecting[0]
    if len(rejecting) == 2:
        side = max(rejecting, key=lambda s: max(t.statistic - t.critical_value
                                                for t in report.drift_tests[s].values()))
        report.flag(f"both drift windows reject; using the {side} window (larger exceedance)")
    report.drift_side = side
    report.branch = DRIFT_CHANGE_LEFT if side == "left" else DRIFT_CHANGE_RIGHT
    alpha = a1 if side == "left" else a2

    with _step("step 7: drift change point", report):
        try:
            report.beta_expansion = expand_and_estimate(
                path, intervals[side], "beta", model, lvl, alpha_fixed=alpha,
                drift_rule=config.drift_test, fractions=config.fractions,
                min_margin=config.min_margin, optimizer=optimizer, cv_source=cvs, mc=mc)
        except NoChangeDetectedError as exc:
            report.flag(f"drift change detected in the {side} window but unlocalizable: {exc}")
        else:
            report.tau_beta = estimate_tau_beta(
                path, side, window, alpha, report.beta_expansion.first.beta_hat,
                report.beta_expansion.second.beta_hat, model, keep_profile=config.keep_profiles)
    return report


def _same_point(path, model, report, intervals, config, optimizer) -> None:
    if set(report.beta_windows) != {"left", "right"}:
        report.branch = NO_CHANGE
        report.flag("same-point diagnostic needs both drift windows")
        return
    left, right = report.beta_windows["left"], report.beta_windows["right"]
    stat = same_point_statistic(left.beta_hat, right.beta_hat, path.T)
    reference, pooled = None, None
    if config.same_point_reps > 0:
        reference, pooled, _ = same_point_reference(
            path, model, report.alpha1.alpha_hat, report.alpha2.alpha_hat, report.tau_alpha.tau_hat,
            intervals["left"], intervals["right"], config, optimizer)
    else:
        report.flag("same-point bootstrap disabled; statistic reported without reference")
    suspected = reference is not None and stat > reference
    report.same_point = {
        "statistic": stat,
        "reference": reference,
        "quantile": config.same_point_quantile,
        "reps": config.same_point_reps,
        "beta_pooled": None if pooled is None else pooled.tolist(),
        "suspected": bool(suspected),
        "heuristic": True,
    }
    report.branch = SAME_POINT_SUSPECTED if suspected else NO_CHANGE
