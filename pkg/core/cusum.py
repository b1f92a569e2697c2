"""
CUSUM test statistics.

Every statistic here is the sup over split points of a scaled bridge
||S_j - (j/m) S_m|| of some per-increment sequence:

    t_alpha   eta_i  = tr(A^{-1}(X_{i-1}, alpha) dX_i^2 / h)         vs w_1
    t1_drift  xi_i   = 1^T a^{-1}(X_{i-1}, alpha) (dX_i - h b)        vs w_1
    t2_drift  zeta_i = d_beta b^T A^{-1} (dX_i - h b), I^{-1/2}-weighted   vs w_q

Critical values w_k(eps) are upper-eps points of sup ||B_k^0||.
"""

import json
import logging
import threading
from dataclasses import asdict, dataclass
from typing import Dict, Optional, Tuple

import numpy as np
from scipy.linalg import eigh

from core.config import cache_dir
from core.errors import ConfigError, DataError, DimensionError, SingularMatrixError, WindowTooShortError
from core.model import (DiffusionModel, check_alpha, check_beta, drift_jacobian, drift_values,
                        mahalanobis, precision_terms, solve_A, solve_a)
from core.path import Interval, Path
from core.simulate import empirical_upper_quantile, sample_brownian_bridge_sup

logger = logging.getLogger(__name__)

MIN_DRIFT_WINDOW = 100
EIG_FLOOR = 1e-12
MAX_CONDITION = 1e12

CRITICAL_VALUE_TABLE: Dict[Tuple[int, float], float] = {
    (1, 0.05): 1.3617,
    (2, 0.05): 1.5736,
}


# ==================================================
# RESULTS
# ==================================================
@dataclass
class TestResult:
    __test__ = False

    name: str
    statistic: float
    argmax_index: int
    dim: int
    critical_value: float
    level: float
    reject: bool
    window: Tuple[int, int]

    def to_dict(self) -> dict:
        out = asdict(self)
        out["window"] = list(self.window)
        return out


@dataclass(frozen=True)
class MonteCarloConfig:
    n_grid: int = 10_000
    n_reps: int = 10_000
    seed: int = 0
    batch: int = 100

    def __post_init__(self):
        if min(self.n_grid, self.n_reps, self.batch) < 1:
            raise ConfigError("Monte-Carlo grid, reps and batch must be >= 1")


# ==================================================
# KERNEL
# ==================================================
def cusum_sup(values, scale: float, weight: Optional[np.ndarray] = None) -> Tuple[float, int]:
    """
    max_j scale * || W (S_j - (j/m) S_m) ||, j = 1..m, in one pass.

    `weight` is applied as a fixed linear map to the bridge. Returns the sup
    and the smallest 1-based j attaining it.
    """
    v = np.asarray(values, dtype=float)
    if v.ndim == 1:
        v = v[:, None]
    m = v.shape[0]
    if m == 0:
        raise DataError("CUSUM of an empty sequence")
    if not scale > 0:
        raise ConfigError(f"CUSUM scale must be positive, got {scale}")
    S = np.cumsum(v, axis=0)
    frac = (np.arange(1, m + 1) / m)[:, None]
    bridge = S - frac * S[-1]
    if weight is not None:
        bridge = bridge @ np.asarray(weight, dtype=float).T
    norms = np.sqrt(np.einsum("mk,mk->m", bridge, bridge))
    j = int(np.argmax(norms))
    return float(scale * norms[j]), j + 1


def inverse_sqrt_psd(M: np.ndarray, floor: float = EIG_FLOOR) -> np.ndarray:
    """M^{-1/2} via symmetric eigendecomposition; eigenvalues below floor * max are an error."""
    M = 0.5 * (np.asarray(M, dtype=float) + np.asarray(M, dtype=float).T)
    w, V = eigh(M)
    if w[-1] <= 0 or w[0] < floor * w[-1]:
        raise SingularMatrixError(f"weight matrix not positive definite (eigenvalues {w})")
    return (V / np.sqrt(w)) @ V.T


def weighted_cusum(zeta: np.ndarray, fisher: np.ndarray, scale: float) -> Tuple[float, int]:
    return cusum_sup(zeta, scale, inverse_sqrt_psd(fisher))


# ==================================================
# CRITICAL VALUES
# ==================================================
_cv_cache: Dict[tuple, float] = {}
_cv_lock = threading.Lock()


def _disk_key(key: tuple) -> str:
    k, level, grid, reps, seed = key
    return f"cv_k{k}_eps{level:g}_g{grid}_r{reps}_s{seed}.json"


def critical_value(k: int, level: float, source: str = "table",
                   mc: Optional[MonteCarloConfig] = None) -> float:
    """
    w_k(level). source="table" uses the shipped values and falls back to
    Monte Carlo for other (k, level); source="mc" always simulates.
    """
    if k < 1:
        raise ConfigError(f"bridge dimension must be >= 1, got {k}")
    if not 0.0 < level < 1.0:
        raise ConfigError(f"level must lie in (0, 1), got {level}")
    if source not in ("table", "mc"):
        raise ConfigError(f"unknown critical-value source '{source}'")
    if source == "table" and (k, level) in CRITICAL_VALUE_TABLE:
        return CRITICAL_VALUE_TABLE[(k, level)]

    mc = mc or MonteCarloConfig()
    key = (k, float(level), mc.n_grid, mc.n_reps, mc.seed)
    with _cv_lock:
        if key in _cv_cache:
            logger.debug("critical value cache hit %s", key)
            return _cv_cache[key]

    directory = cache_dir()
    disk = directory / _disk_key(key) if directory is not None else None
    if disk is not None and disk.exists():
        value = float(json.loads(disk.read_text(encoding="utf-8"))["value"])
    else:
        sample = sample_brownian_bridge_sup(k, mc.n_grid, mc.n_reps, mc.seed, mc.batch)
        value = empirical_upper_quantile(sample, level)
        logger.info("simulated w_%d(%g) = %.4f (grid %d, reps %d)", k, level, value, mc.n_grid, mc.n_reps)
        if disk is not None:
            disk.write_text(json.dumps({"key": list(key), "value": value}), encoding="utf-8")

    with _cv_lock:
        _cv_cache[key] = value
    return value


def _result(name, stat, j, lo, hi, k, level, cv_source, mc) -> TestResult:
    cv = critical_value(k, level, cv_source, mc)
    return TestResult(name, stat, lo + j, k, cv, level, bool(stat > cv), (lo, hi))


# ==================================================
# DIFFUSION TEST
# ==================================================
def eta_sequence(path: Path, interval: Interval, alpha, model: DiffusionModel) -> np.ndarray:
    alpha = check_alpha(model, alpha)
    x_prev, dx = path.segment(interval, 1)
    A, _ = precision_terms(model, x_prev, alpha, interval[0])
    return mahalanobis(A, dx) / path.h


def t_alpha(path: Path, alpha_hat, model: DiffusionModel, level: float = 0.05,
            cv_source: str = "table", mc: Optional[MonteCarloConfig] = None,
            interval: Optional[Interval] = None) -> TestResult:
    """(1 / sqrt(2 d m)) max_k | sum_{i<=k} eta_i - (k/m) sum eta_i | on the interval (default: whole path)."""
    interval = interval or path.full()
    eta = eta_sequence(path, interval, alpha_hat, model)
    stat, j = cusum_sup(eta, 1.0 / np.sqrt(2.0 * path.d * eta.size))
    return _result("t_alpha", stat, j, interval[0], interval[1], 1, level, cv_source, mc)


# ==================================================
# DRIFT TESTS
# ==================================================
def _residuals(path, interval, alpha, beta, model, min_length=1):
    alpha = check_alpha(model, alpha)
    beta = check_beta(model, beta)
    x_prev, dx = path.segment(interval, min_length)
    return x_prev, dx - path.h * drift_values(model, x_prev, beta), alpha, beta


def xi_sequence(path: Path, interval: Interval, alpha, beta, model: DiffusionModel) -> np.ndarray:
    x_prev, resid, alpha, _ = _residuals(path, interval, alpha, beta, model)
    return solve_a(model, x_prev, alpha, resid, interval[0]).sum(axis=1)


def zeta_sequence(path: Path, interval: Interval, alpha, beta, model: DiffusionModel) -> np.ndarray:
    x_prev, resid, alpha, beta = _residuals(path, interval, alpha, beta, model)
    A, _ = precision_terms(model, x_prev, alpha, interval[0])
    J = drift_jacobian(model, x_prev, beta)
    return np.einsum("mdq,md->mq", J, solve_A(A, resid))


def fisher_weight(path: Path, interval: Interval, alpha, beta, model: DiffusionModel,
                  check: bool = True) -> np.ndarray:
    """(1/m) sum d_beta b^T A^{-1} d_beta b over the interval, symmetrized."""
    alpha = check_alpha(model, alpha)
    beta = check_beta(model, beta)
    x_prev, _ = path.segment(interval, 1)
    A, _ = precision_terms(model, x_prev, alpha, interval[0])
    J = drift_jacobian(model, x_prev, beta)
    AinvJ = np.stack([solve_A(A, J[:, :, l]) for l in range(J.shape[2])], axis=2)
    G = np.einsum("mdq,mde->qe", J, AinvJ) / J.shape[0]
    G = 0.5 * (G + G.T)
    if check:
        w = np.linalg.eigvalsh(G)
        if w[-1] <= 0 or w[0] <= w[-1] / MAX_CONDITION:
            raise SingularMatrixError(f"fisher weight numerically singular (eigenvalues {w})")
    return G


def drift_window(path: Path, side: str, boundary: float) -> Interval:
    """(0, [n tau_lower]] on the left, ([n tau_upper], n] on the right."""
    k = path.index_of(boundary)
    if side == "left":
        interval = (0, k)
    elif side == "right":
        interval = (k, path.n)
    else:
        raise ConfigError(f"side must be 'left' or 'right', got '{side}'")
    if interval[1] - interval[0] < MIN_DRIFT_WINDOW:
        raise WindowTooShortError(
            f"{side} drift window ({interval[0]}, {interval[1]}] holds fewer than {MIN_DRIFT_WINDOW} increments")
    return interval


def t1_on(path: Path, interval: Interval, alpha, beta, model: DiffusionModel, level: float = 0.05,
          cv_source: str = "table", mc: Optional[MonteCarloConfig] = None,
          name: str = "t1") -> TestResult:
    xi = xi_sequence(path, interval, alpha, beta, model)
    scale = 1.0 / np.sqrt(path.d * xi.size * path.h)
    stat, j = cusum_sup(xi, scale)
    return _result(name, stat, j, interval[0], interval[1], 1, level, cv_source, mc)


def t2_on(path: Path, interval: Interval, alpha, beta, model: DiffusionModel, level: float = 0.05,
          cv_source: str = "table", mc: Optional[MonteCarloConfig] = None,
          name: str = "t2") -> TestResult:
    zeta = zeta_sequence(path, interval, alpha, beta, model)
    fisher = fisher_weight(path, interval, alpha, beta, model)
    stat, j = weighted_cusum(zeta, fisher, 1.0 / np.sqrt(zeta.shape[0] * path.h))
    return _result(name, stat, j, interval[0], interval[1], model.beta_dim, level, cv_source, mc)


def t1_drift(path: Path, side: str, boundary: float, alpha, beta, model: DiffusionModel,
             level: float = 0.05, cv_source: str = "table",
             mc: Optional[MonteCarloConfig] = None) -> TestResult:
    interval = drift_window(path, side, boundary)
    return t1_on(path, interval, alpha, beta, model, level, cv_source, mc, name=f"t1_{side}")


def t2_drift(path: Path, side: str, boundary: float, alpha, beta, model: DiffusionModel,
             level: float = 0.05, cv_source: str = "table",
             mc: Optional[MonteCarloConfig] = None) -> TestResult:
    interval = drift_window(path, side, boundary)
    return t2_on(path, interval, alpha, beta, model, level, cv_source, mc, name=f"t2_{side}")


def drift_decision(t1: Optional[TestResult], t2: Optional[TestResult], rule: str = "either") -> bool:
    """Combine t1/t2 decisions: 'either', 'both', 't1' or 't2'."""
    r1 = bool(t1 and t1.reject)
    r2 = bool(t2 and t2.reject)
    if rule == "either":
        return r1 or r2
    if rule == "both":
        return r1 and r2
    if rule == "t1":
        return r1
    if rule == "t2":
        return r2
    raise ConfigError(f"unknown drift test rule '{rule}'")


# ==================================================
# SAME-POINT DIAGNOSTIC
# ==================================================
def same_point_statistic(beta1, beta2, T: float) -> float:
    """sqrt(T) ||beta1 - beta2||"""
    b1 = np.atleast_1d(np.asarray(beta1, dtype=float))
    b2 = np.atleast_1d(np.asarray(beta2, dtype=float))
    if b1.shape != b2.shape:
        raise DimensionError(f"estimates differ in shape: {b1.shape} vs {b2.shape}")
    return float(np.sqrt(T) * np.linalg.norm(b1 - b2))
