"""
Adaptive quasi-likelihood estimation on observation sub-intervals.

    F_i(alpha)        = tr(A^{-1}(X_{i-1}, alpha) dX_i^2 / h) + log det A(X_{i-1}, alpha)
    G_i(beta | alpha) = tr(A^{-1}(X_{i-1}, alpha) (dX_i - h b(X_{i-1}, beta))^2 / h)

alpha is fitted first, then beta with alpha held fixed. The same per-term
arrays feed the change-point profiles in core.changepoint.
"""

import logging
from dataclasses import dataclass, field
from typing import List, Optional, Sequence, Tuple

import numpy as np
from scipy.optimize import minimize

from core.cusum import MonteCarloConfig, TestResult, drift_decision, t1_on, t2_on, t_alpha
from core.errors import ConfigError, NoChangeDetectedError, NumericalError, WindowTooShortError
from core.model import (DiffusionModel, ParameterBox, check_alpha, check_beta, drift_values,
                        mahalanobis, precision_terms)
from core.path import Interval, Path
from core.rng import stream

logger = logging.getLogger(__name__)

EXPANSION_FRACTIONS = (0.25, 0.125, 0.0625, 0.01)


# ==================================================
# CONFIG / RESULTS
# ==================================================
@dataclass(frozen=True)
class OptimizerConfig:
    multistarts: int = 8
    max_iter: int = 500
    tol: float = 1e-8
    seed: int = 0
    use_closed_form: bool = True

    def __post_init__(self):
        if self.multistarts < 1 or self.max_iter < 1 or not self.tol > 0:
            raise ConfigError("optimizer needs multistarts >= 1, max_iter >= 1, tol > 0")


@dataclass
class IntervalEstimate:
    interval: Interval
    alpha_hat: Optional[np.ndarray]
    beta_hat: Optional[np.ndarray]
    contrast_value: float
    iterations: int = 0
    converged: bool = True
    method: str = "closed-form"
    flags: List[str] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "interval": list(self.interval),
            "alpha_hat": None if self.alpha_hat is None else self.alpha_hat.tolist(),
            "beta_hat": None if self.beta_hat is None else self.beta_hat.tolist(),
            "contrast_value": self.contrast_value,
            "iterations": self.iterations,
            "converged": self.converged,
            "method": self.method,
            "flags": list(self.flags),
        }


# ==================================================
# CONTRASTS
# ==================================================
def alpha_terms(path: Path, interval: Interval, alpha, model: DiffusionModel) -> np.ndarray:
    """F_i(alpha) for every increment in the interval."""
    alpha = check_alpha(model, alpha)
    x_prev, dx = path.segment(interval, 1)
    A, logdet = precision_terms(model, x_prev, alpha, interval[0])
    return mahalanobis(A, dx) / path.h + logdet


def beta_terms(path: Path, interval: Interval, beta, alpha, model: DiffusionModel) -> np.ndarray:
    """G_i(beta | alpha) for every increment in the interval."""
    alpha = check_alpha(model, alpha)
    beta = check_beta(model, beta)
    x_prev, dx = path.segment(interval, 1)
    A, _ = precision_terms(model, x_prev, alpha, interval[0])
    resid = dx - path.h * drift_values(model, x_prev, beta)
    return mahalanobis(A, resid) / path.h


def alpha_contrast(path: Path, interval: Interval, alpha, model: DiffusionModel) -> float:
    return float(np.sum(alpha_terms(path, interval, alpha, model)))


def beta_contrast(path: Path, interval: Interval, beta, alpha, model: DiffusionModel) -> float:
    return float(np.sum(beta_terms(path, interval, beta, alpha, model)))


# ==================================================
# OPTIMIZATION
# ==================================================
def _multistart(objective, box: ParameterBox, cfg: OptimizerConfig):
    """Bounded Nelder-Mead from box-uniform starts; returns (x, fun, iterations, converged)."""

    def guarded(theta):
        try:
            value = objective(np.clip(theta, box.lower, box.upper))
        except NumericalError:
            return np.inf
        return value if np.isfinite(value) else np.inf

    starts = box.uniform(stream(cfg.seed), cfg.multistarts)
    best, iterations = None, 0
    for k, x0 in enumerate(starts):
        res = minimize(guarded, x0, method="Nelder-Mead", bounds=box.bounds(),
                       options={"maxiter": cfg.max_iter, "xatol": cfg.tol, "fatol": cfg.tol})
        iterations += int(res.nit)
        logger.debug("start %d: f=%.10g success=%s nit=%d", k, res.fun, res.success, res.nit)
        if best is None or res.fun < best.fun:
            best = res
    if not np.isfinite(best.fun):
        raise NumericalError("contrast is non-finite at every optimizer start")
    return np.clip(best.x, box.lower, box.upper), float(best.fun), iterations, bool(best.success)


def _flag_boundary(est: IntervalEstimate, box: ParameterBox, theta: np.ndarray, what: str) -> None:
    if box.on_boundary(theta):
        msg = f"{what} on parameter box boundary in ({est.interval[0]}, {est.interval[1]}]"
        logger.warning(msg)
        est.flags.append(msg)


# ==================================================
# ESTIMATORS
# ==================================================
def estimate_alpha(path: Path, interval: Interval, model: DiffusionModel,
                   optimizer: Optional[OptimizerConfig] = None) -> IntervalEstimate:
    """
    argmin of the alpha contrast over the box. For a(x, alpha) = alpha the
    closed form alpha^2 = sum dX^2 / (m h) is used, clamped to the box.
    """
    cfg = optimizer or OptimizerConfig()
    x_prev, dx = path.segment(interval, model.alpha_dim + 1)
    box = model.alpha_space

    if model.scalar_diffusion and cfg.use_closed_form:
        raw = np.array([np.sqrt(np.sum(dx * dx) / (dx.shape[0] * path.h))])
        alpha, clipped = box.clip(raw)
        est = IntervalEstimate(interval, alpha, None, alpha_contrast(path, interval, alpha, model))
        if clipped:
            msg = f"alpha estimate {raw[0]:.6g} clamped to box on ({interval[0]}, {interval[1]}]"
            logger.warning(msg)
            est.flags.append(msg)
        return est

    alpha, fun, nit, ok = _multistart(lambda a: alpha_contrast(path, interval, a, model), box, cfg)
    est = IntervalEstimate(interval, alpha, None, fun, nit, ok, "nelder-mead")
    if not ok:
        msg = f"alpha optimizer did not converge on ({interval[0]}, {interval[1]}]"
        logger.warning(msg)
        est.flags.append(msg)
    _flag_boundary(est, box, alpha, "alpha estimate")
    return est


def _closed_form_beta(model, pieces, h):
    """Stack (x_prev, dx, precision) over pieces and call the model's regression."""
    xs, dxs, ws = [], [], []
    for x_prev, dx, A in pieces:
        xs.append(x_prev)
        dxs.append(dx)
        ws.append(1.0 / A[:, 0, 0])
    return model.beta_closed_form(np.concatenate(xs), np.concatenate(dxs), h, np.concatenate(ws))


def _fit_beta(path, pieces_spec, model, cfg, label) -> IntervalEstimate:
    """pieces_spec: [(interval, alpha)]; shared by estimate_beta and estimate_beta_pooled."""
    pieces = []
    for interval, alpha in pieces_spec:
        x_prev, dx = path.segment(interval, model.beta_dim + 1)
        A, _ = precision_terms(model, x_prev, check_alpha(model, alpha), interval[0])
        pieces.append((x_prev, dx, A))

    def contrast(beta):
        return sum(beta_contrast(path, iv, beta, a, model) for iv, a in pieces_spec)

    interval = (min(iv[0] for iv, _ in pieces_spec), max(iv[1] for iv, _ in pieces_spec))
    box = model.beta_space
    flags = []
    if model.beta_closed_form is not None and cfg.use_closed_form and model.state_dim == 1:
        try:
            raw = np.asarray(_closed_form_beta(model, pieces, path.h), dtype=float)
        except NumericalError as exc:
            msg = f"closed-form drift fit failed on {label} ({exc}); using Nelder-Mead"
            logger.warning(msg)
            flags.append(msg)
        else:
            beta, clipped = box.clip(raw)
            est = IntervalEstimate(interval, None, beta, contrast(beta))
            if clipped:
                msg = f"beta estimate {raw.tolist()} clamped to box on {label}"
                logger.warning(msg)
                est.flags.append(msg)
            return est

    beta, fun, nit, ok = _multistart(contrast, box, cfg)
    est = IntervalEstimate(interval, None, beta, fun, nit, ok, "nelder-mead", flags)
    if not ok:
        msg = f"beta optimizer did not converge on {label}"
        logger.warning(msg)
        est.flags.append(msg)
    _flag_boundary(est, box, beta, "beta estimate")
    return est


def estimate_beta(path: Path, interval: Interval, model: DiffusionModel, alpha_fixed,
                  optimizer: Optional[OptimizerConfig] = None) -> IntervalEstimate:
    cfg = optimizer or OptimizerConfig()
    alpha = check_alpha(model, alpha_fixed)
    est = _fit_beta(path, [(interval, alpha)], model, cfg, f"({interval[0]}, {interval[1]}]")
    est.alpha_hat = alpha
    return est


def estimate_beta_pooled(path: Path, pieces: Sequence[Tuple[Interval, np.ndarray]],
                         model: DiffusionModel,
                         optimizer: Optional[OptimizerConfig] = None) -> IntervalEstimate:
    """One beta minimizing sum over pieces of G_i(beta | alpha_piece)."""
    if not pieces:
        raise ConfigError("pooled fit needs at least one piece")
    cfg = optimizer or OptimizerConfig()
    label = " + ".join(f"({iv[0]}, {iv[1]}]" for iv, _ in pieces)
    return _fit_beta(path, list(pieces), model, cfg, label)


# ==================================================
# INTERVAL EXPANSION
# ==================================================
@dataclass
class ExpansionResult:
    role: str
    first: IntervalEstimate
    second: IntervalEstimate
    split_used: float
    middle: Interval
    tests: List[TestResult]

    def to_dict(self) -> dict:
        return {
            "role": self.role,
            "first": self.first.to_dict(),
            "second": self.second.to_dict(),
            "split_used": self.split_used,
            "middle": list(self.middle),
            "tests": [t.to_dict() for t in self.tests],
        }


def expand_and_estimate(path: Path, window: Interval, role: str, model: DiffusionModel,
                        level: float = 0.05, alpha_fixed=None, drift_rule: str = "either",
                        fractions: Sequence[float] = EXPANSION_FRACTIONS, min_margin: int = 50,
                        optimizer: Optional[OptimizerConfig] = None, cv_source: str = "table",
                        mc: Optional[MonteCarloConfig] = None) -> ExpansionResult:
    """
    Test the middle (lo + cW, hi - cW] of the window for each c in turn
    (widening the middle); at the first rejecting split, estimate the
    parameter separately on the outer margins (lo, lo + cW] and (hi - cW, hi].

    role="alpha" runs t_alpha on the middle; role="beta" fits beta with
    alpha_fixed and runs the drift tests combined by drift_rule.
    """
    if role not in ("alpha", "beta"):
        raise ConfigError(f"role must be 'alpha' or 'beta', got '{role}'")
    if role == "beta" and alpha_fixed is None:
        raise ConfigError("drift expansion needs alpha_fixed")
    lo, hi = window
    width = hi - lo
    tried = 0
    for c in fractions:
        margin = int(np.floor(c * width))
        if margin < min_margin:
            logger.debug("split c=%g skipped: margin %d < %d", c, margin, min_margin)
            continue
        tried += 1
        middle = (lo + margin, hi - margin)
        if role == "alpha":
            mid_alpha = estimate_alpha(path, middle, model, optimizer).alpha_hat
            tests = [t_alpha(path, mid_alpha, model, level, cv_source, mc, interval=middle)]
            rejected = tests[0].reject
        else:
            mid_beta = estimate_beta(path, middle, model, alpha_fixed, optimizer).beta_hat
            tests = [t1_on(path, middle, alpha_fixed, mid_beta, model, level, cv_source, mc),
                     t2_on(path, middle, alpha_fixed, mid_beta, model, level, cv_source, mc)]
            rejected = drift_decision(tests[0], tests[1], drift_rule)
        logger.debug("split c=%g middle %s: %s", c, middle,
                     ", ".join(f"{t.name}={t.statistic:.4f}" for t in tests))
        if not rejected:
            continue

        left, right = (lo, lo + margin), (hi - margin, hi)
        if role == "alpha":
            first = estimate_alpha(path, left, model, optimizer)
            second = estimate_alpha(path, right, model, optimizer)
        else:
            first = estimate_beta(path, left, model, alpha_fixed, optimizer)
            second = estimate_beta(path, right, model, alpha_fixed, optimizer)
        logger.info("%s change localized with split c=%g on window (%d, %d]", role, c, lo, hi)
        return ExpansionResult(role, first, second, float(c), middle, tests)

    if tried == 0:
        raise WindowTooShortError(
            f"window ({lo}, {hi}] too short: no split leaves {min_margin} observations per margin")
    raise NoChangeDetectedError(f"no {role} change detected at any split of ({lo}, {hi}]")
