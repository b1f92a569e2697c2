"""
Change-point location.

Both estimators minimize a two-regime contrast over the split index k.
With D_i the difference of per-increment contrasts under the two fitted
regimes, the profile is a prefix sum of D plus a constant, so the argmin
is one cumulative-sum pass. Ties go to the smallest k.
"""

import logging
from dataclasses import dataclass, field
from pathlib import Path as FsPath
from typing import List, Optional, Tuple, Union

import numpy as np
import pandas as pd
from numpy.polynomial.hermite_e import hermegauss
from scipy.stats import ks_2samp

from core.errors import BoundaryHitError, ConfigError, DataError, DimensionError
from core.estimate import alpha_terms, beta_terms
from core.model import (DiffusionModel, check_alpha, check_beta, diffusion_A, drift_jacobian, solve_A)
from core.path import Interval, Path
from core.rng import stream
from core.simulate import sample_invariant_measure

logger = logging.getLogger(__name__)

HERMITE_NODES = 64


# ==================================================
# TYPES
# ==================================================
@dataclass
class ChangePointEstimate:
    tau_hat: float
    index_hat: int
    window: Interval
    n: int
    profile: Optional[np.ndarray] = None
    flags: List[str] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "tau_hat": self.tau_hat,
            "index_hat": self.index_hat,
            "window": list(self.window),
            "flags": list(self.flags),
        }

    def profile_frame(self) -> pd.DataFrame:
        if self.profile is None:
            raise ConfigError("estimate was computed without keep_profile=True")
        k = np.arange(self.window[0], self.window[1] + 1)
        return pd.DataFrame({"index": k, "tau": k / self.n, "contrast": self.profile})

    def write_profile_csv(self, target: Union[str, FsPath]) -> None:
        self.profile_frame().to_csv(target, index=False, float_format="%.17g", lineterminator="\n",
                                    encoding="utf-8")


@dataclass
class ExclusionWindow:
    epsilon1: float
    tau_alpha: float
    tau_lower: float
    tau_upper: float
    n: int
    flags: List[str] = field(default_factory=list)

    @property
    def index_lower(self) -> int:
        return int(np.floor(self.n * self.tau_lower + 1e-9))

    @property
    def index_upper(self) -> int:
        return int(np.floor(self.n * self.tau_upper + 1e-9))

    def to_dict(self) -> dict:
        return {
            "epsilon1": self.epsilon1,
            "tau_alpha": self.tau_alpha,
            "tau_lower": self.tau_lower,
            "tau_upper": self.tau_upper,
            "index_lower": self.index_lower,
            "index_upper": self.index_upper,
            "flags": list(self.flags),
        }


# ==================================================
# PROFILE SCAN
# ==================================================
def _scan(first: np.ndarray, second: np.ndarray, window: Interval, n: int,
          keep_profile: bool, tie: bool, what: str) -> ChangePointEstimate:
    """argmin_k sum_{lo<i<=k} first_i + sum_{k<i<=hi} second_i over k in [lo, hi]."""
    lo, hi = window
    prefix = np.concatenate([[0.0], np.cumsum(first - second)])
    k = int(np.argmin(prefix))
    est = ChangePointEstimate((lo + k) / n, lo + k, window, n)
    if keep_profile:
        est.profile = prefix + float(np.sum(second))
    if tie:
        msg = f"{what}: both regimes share the same estimate, profile is flat"
        logger.warning(msg)
        est.flags.append(msg)
    return est


def estimate_tau_alpha(path: Path, alpha1, alpha2, model: DiffusionModel,
                       interval: Optional[Interval] = None,
                       keep_profile: bool = False) -> ChangePointEstimate:
    """argmin_k sum_{i<=k} F_i(alpha1) + sum_{i>k} F_i(alpha2)."""
    interval = interval or path.full()
    a1, a2 = check_alpha(model, alpha1), check_alpha(model, alpha2)
    f1 = alpha_terms(path, interval, a1, model)
    f2 = alpha_terms(path, interval, a2, model)
    return _scan(f1, f2, interval, path.n, keep_profile, np.array_equal(a1, a2), "tau_alpha")


def exclusion_window(n: int, tau_alpha: float, alpha1, alpha2, cap: float = 0.45,
                     intercept: float = 0.9, slope: float = 1.8,
                     floor: float = 0.01) -> ExclusionWindow:
    """
    eps1 = min(cap, intercept + slope * log_n |alpha1 - alpha2|) and
    window tau_alpha -/+ n^{-eps1}, clamped to [1/n, 1 - 1/n].
    """
    if n < 10:
        raise DataError(f"exclusion window needs n >= 10, got {n}")
    diff = float(np.linalg.norm(np.atleast_1d(alpha1) - np.atleast_1d(alpha2)))
    if diff == 0.0:
        raise DataError("alpha estimates are equal, exclusion width undefined")
    flags = []
    eps1 = min(cap, intercept + slope * np.log(diff) / np.log(n))
    if eps1 < floor:
        flags.append(f"epsilon1 {eps1:.4g} floored at {floor}")
        eps1 = floor
    width = n ** (-eps1)
    lower, upper = tau_alpha - width, tau_alpha + width
    if lower < 1.0 / n:
        flags.append(f"tau_lower {lower:.6g} clamped to 1/n")
        lower = 1.0 / n
    if upper > 1.0 - 1.0 / n:
        flags.append(f"tau_upper {upper:.6g} clamped to 1 - 1/n")
        upper = 1.0 - 1.0 / n
    for msg in flags:
        logger.warning(msg)
    return ExclusionWindow(float(eps1), float(tau_alpha), float(lower), float(upper), n, flags)


def estimate_tau_beta(path: Path, side: str, window: ExclusionWindow, alpha, beta1, beta2,
                      model: DiffusionModel, keep_profile: bool = False) -> ChangePointEstimate:
    """
    Left: argmin over (0, [n tau_lower]] of the drift profile with alpha1.
    Right: the same over ([n tau_upper], n] with alpha2.
    """
    if side == "left":
        interval = (0, window.index_lower)
    elif side == "right":
        interval = (window.index_upper, path.n)
    else:
        raise ConfigError(f"side must be 'left' or 'right', got '{side}'")
    return estimate_tau_beta_on(path, interval, alpha, beta1, beta2, model, keep_profile)


def estimate_tau_beta_on(path: Path, interval: Interval, alpha, beta1, beta2,
                         model: DiffusionModel, keep_profile: bool = False) -> ChangePointEstimate:
    b1, b2 = check_beta(model, beta1), check_beta(model, beta2)
    g1 = beta_terms(path, interval, b1, alpha, model)
    g2 = beta_terms(path, interval, b2, alpha, model)
    return _scan(g1, g2, interval, path.n, keep_profile, np.array_equal(b1, b2), "tau_beta")


# ==================================================
# CASE-A CONSTANTS
# ==================================================
def _xi_beta(model, x, alpha, beta, e):
    """e^T d_beta b^T A^{-1} d_beta b e per state."""
    je = np.einsum("mdq,q->md", drift_jacobian(model, x, beta), e)
    return np.einsum("md,md->m", je, solve_A(diffusion_A(model, x, alpha), je))


def _xi_alpha(model, x, alpha, e):
    """(1/2) e^T [tr(A^{-1} dA_l A^{-1} dA_m)] e per state."""
    A = diffusion_A(model, x, alpha)
    dA = np.asarray(model.diffusion_jac_alpha(x, alpha), dtype=float)
    # directional derivative of A along e
    dAe = np.einsum("mpde,p->mde", dA, e)
    M = np.linalg.solve(A, dAe)
    return 0.5 * np.einsum("mij,mji->m", M, M)


def compute_J(model: DiffusionModel, alpha, beta, direction, kind: str = "beta",
              method: str = "auto", n_mc: int = 10_000, burn_in: int = 1_000_000,
              thin: int = 100, h: float = 0.01, chains: int = 1, seed: int = 0) -> float:
    """
    Integral of the direction-e quadratic form against the invariant law.

    kind="beta":  e^T (int d_beta b^T A^{-1} d_beta b dmu) e
    kind="alpha": (1/2) e^T (int [tr(A^{-1} d_l A A^{-1} d_m A)] dmu) e

    method="analytic" integrates by Gauss-Hermite quadrature against the
    model's Gaussian stationary law; "mc" averages over draws from
    sample_invariant_measure; "auto" prefers the analytic route.
    """
    alpha = check_alpha(model, alpha)
    beta = check_beta(model, beta)
    e = np.atleast_1d(np.asarray(direction, dtype=float))
    dim = model.beta_dim if kind == "beta" else model.alpha_dim
    if kind not in ("beta", "alpha"):
        raise ConfigError(f"kind must be 'beta' or 'alpha', got '{kind}'")
    if e.shape != (dim,):
        raise DimensionError(f"direction must have {dim} entries, got {e.shape}")
    if kind == "alpha" and model.diffusion_jac_alpha is None:
        raise ConfigError(f"model {model.name} has no diffusion_jac_alpha")
    if method not in ("auto", "analytic", "mc"):
        raise ConfigError(f"unknown method '{method}'")

    def integrand(x):
        return _xi_beta(model, x, alpha, beta, e) if kind == "beta" else _xi_alpha(model, x, alpha, e)

    analytic = model.stationary_law is not None and model.state_dim == 1
    if method == "analytic" and not analytic:
        raise ConfigError(f"model {model.name} has no Gaussian stationary law")
    if method != "mc" and analytic:
        mean, var = model.stationary_law(alpha, beta)
        nodes, weights = hermegauss(HERMITE_NODES)
        x = (mean + np.sqrt(var) * nodes).reshape(-1, 1)
        return float(np.sum(weights * integrand(x)) / np.sqrt(2.0 * np.pi))

    draws = sample_invariant_measure(model, alpha, beta, n_samples=n_mc, burn_in=burn_in,
                                     thin=thin, h=h, chains=chains, seed=seed)
    return float(np.mean(integrand(draws)))


# ==================================================
# LIMIT LAW
# ==================================================
def sample_limit_argmin(J: float, reps: int = 10_000, v_max: Optional[float] = None,
                        grid_step: Optional[float] = None, seed: int = 0,
                        batch: int = 200) -> np.ndarray:
    """
    Draws of argmin_v -2 sqrt(J) W(v) + J |v| over the grid [-v_max, v_max],
    W a two-sided Brownian motion with W(0) = 0.
    """
    if not J > 0:
        raise ConfigError(f"J must be positive, got {J}")
    v_max = 50.0 / J if v_max is None else float(v_max)
    grid_step = 0.01 / J if grid_step is None else float(grid_step)
    m = int(round(v_max / grid_step))
    if m < 1:
        raise ConfigError("grid_step must be smaller than v_max")
    grid = np.arange(-m, m + 1) * grid_step

    rng = stream(seed)
    out = np.empty(reps)
    hits = 0
    for start in range(0, reps, batch):
        b = min(batch, reps - start)
        steps = rng.standard_normal((b, 2, m)) * np.sqrt(grid_step)
        w = np.zeros((b, 2 * m + 1))
        w[:, m + 1:] = np.cumsum(steps[:, 0, :], axis=1)
        w[:, :m] = np.cumsum(steps[:, 1, :], axis=1)[:, ::-1]
        g = -2.0 * np.sqrt(J) * w + J * np.abs(grid)
        idx = np.argmin(g, axis=1)
        hits += int(np.sum((idx == 0) | (idx == 2 * m)))
        out[start:start + b] = grid[idx]

    fraction = hits / reps
    if fraction >= 0.05:
        raise BoundaryHitError(f"{fraction:.1%} of argmins hit +/-v_max={v_max:g}; increase v_max")
    if fraction >= 0.01:
        logger.warning("%.1f%% of argmins hit the grid boundary v_max=%g", 100 * fraction, v_max)
    return out


def limit_law_ks(scaled_errors, J: float, reps: int = 10_000, seed: int = 0,
                 **sampler_kwargs) -> Tuple[float, float]:
    """KS distance (and p-value) between T theta^2 (tau_hat - tau*) draws and the argmin law."""
    errors = np.asarray(scaled_errors, dtype=float)
    if errors.size == 0:
        raise DataError("no scaled errors to compare")
    reference = sample_limit_argmin(J, reps, seed=seed, **sampler_kwargs)
    res = ks_2samp(errors, reference)
    return float(res.statistic), float(res.pvalue)
