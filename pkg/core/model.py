"""
Diffusion models dX_t = b(X_t, beta) dt + a(X_t, alpha) dW_t.

A DiffusionModel bundles vectorized coefficient functions together with
their parameter derivatives and the parameter boxes. Coefficients are
evaluated on stacks of states:

    drift(x, beta)            x: (m, d)  ->  (m, d)
    diffusion(x, alpha)       x: (m, d)  ->  (m, d, r)
    drift_jac_beta(x, beta)   x: (m, d)  ->  (m, d, q)
    diffusion_jac_alpha(x, alpha)        ->  (m, p, d, d)   (d A / d alpha_l, optional)

Two builtins ship with the library: the Ornstein-Uhlenbeck process and the
hyperbolic diffusion, both with constant diffusion coefficient a = alpha.
"""

import logging
from dataclasses import dataclass, field
from typing import Callable, Dict, List, Optional, Tuple

import numpy as np

from core.errors import ConfigError, DimensionError, NumericalError, ParameterBoxError, SingularMatrixError
from core.rng import stream

logger = logging.getLogger(__name__)

Coefficient = Callable[[np.ndarray, np.ndarray], np.ndarray]


# ==================================================
# PARAMETER BOXES
# ==================================================
@dataclass(frozen=True, eq=False)
class ParameterBox:
    lower: np.ndarray
    upper: np.ndarray

    def __post_init__(self):
        lo = np.atleast_1d(np.asarray(self.lower, dtype=float))
        hi = np.atleast_1d(np.asarray(self.upper, dtype=float))
        if lo.shape != hi.shape or np.any(lo >= hi):
            raise ValueError(f"invalid parameter box {lo} .. {hi}")
        object.__setattr__(self, "lower", lo)
        object.__setattr__(self, "upper", hi)

    @property
    def dim(self) -> int:
        return self.lower.size

    def contains(self, theta) -> bool:
        theta = np.asarray(theta, dtype=float)
        return bool(np.all(theta >= self.lower) and np.all(theta <= self.upper))

    def clip(self, theta) -> Tuple[np.ndarray, bool]:
        theta = np.asarray(theta, dtype=float)
        clipped = np.clip(theta, self.lower, self.upper)
        return clipped, bool(np.any(clipped != theta))

    def on_boundary(self, theta, rtol: float = 1e-9) -> bool:
        theta = np.asarray(theta, dtype=float)
        span = self.upper - self.lower
        return bool(np.any(np.abs(theta - self.lower) <= rtol * span)
                    or np.any(np.abs(theta - self.upper) <= rtol * span))

    def uniform(self, rng: np.random.Generator, size: int) -> np.ndarray:
        return rng.uniform(self.lower, self.upper, size=(size, self.dim))

    def bounds(self) -> List[Tuple[float, float]]:
        return list(zip(self.lower.tolist(), self.upper.tolist()))


# ==================================================
# MODEL
# ==================================================
@dataclass(frozen=True, eq=False)
class DiffusionModel:
    name: str
    state_dim: int
    noise_dim: int
    alpha_dim: int
    beta_dim: int
    drift: Coefficient
    diffusion: Coefficient
    drift_jac_beta: Coefficient
    alpha_space: ParameterBox
    beta_space: ParameterBox
    diffusion_jac_alpha: Optional[Coefficient] = None
    # a(x, alpha) = alpha with d = r = p = 1: enables the closed-form alpha estimate
    scalar_diffusion: bool = False
    # (x_prev, dx, h, precision) -> unconstrained beta minimizing the drift contrast
    beta_closed_form: Optional[Callable[..., np.ndarray]] = None
    # (alpha, beta) -> (mean, variance) of a Gaussian invariant law, when known
    stationary_law: Optional[Callable[[np.ndarray, np.ndarray], Tuple[float, float]]] = None
    # (alpha, beta, h) -> (phi, level, scale): X_{i+1} - level = phi (X_i - level) + scale Z_i exactly
    exact_transition: Optional[Callable[[np.ndarray, np.ndarray, float], Tuple[float, float, float]]] = None
    notes: Dict[str, str] = field(default_factory=dict)

    def __post_init__(self):
        if min(self.state_dim, self.noise_dim, self.alpha_dim, self.beta_dim) < 1:
            raise ValueError("model dimensions must be positive")
        if self.alpha_space.dim != self.alpha_dim or self.beta_space.dim != self.beta_dim:
            raise ValueError("parameter boxes do not match alpha_dim / beta_dim")

    @property
    def square_noise(self) -> bool:
        return self.noise_dim == self.state_dim


# ==================================================
# ARGUMENT CHECKS
# ==================================================
def check_alpha(model: DiffusionModel, alpha) -> np.ndarray:
    alpha = np.atleast_1d(np.asarray(alpha, dtype=float))
    if alpha.shape != (model.alpha_dim,):
        raise DimensionError(f"alpha must have p={model.alpha_dim} entries, got {alpha.shape}")
    if not model.alpha_space.contains(alpha):
        raise ParameterBoxError(f"alpha={alpha} outside {model.alpha_space.bounds()}")
    return alpha


def check_beta(model: DiffusionModel, beta) -> np.ndarray:
    beta = np.atleast_1d(np.asarray(beta, dtype=float))
    if beta.shape != (model.beta_dim,):
        raise DimensionError(f"beta must have q={model.beta_dim} entries, got {beta.shape}")
    if not model.beta_space.contains(beta):
        raise ParameterBoxError(f"beta={beta} outside {model.beta_space.bounds()}")
    return beta


# ==================================================
# COEFFICIENT EVALUATION
# ==================================================
def eval_drift(model: DiffusionModel, x, beta) -> np.ndarray:
    """b(x, beta) at a single state."""
    x = np.asarray(x, dtype=float).reshape(-1)
    if x.size != model.state_dim:
        raise DimensionError(f"state has {x.size} entries, model has d={model.state_dim}")
    beta = check_beta(model, beta)
    return np.asarray(model.drift(x.reshape(1, -1), beta), dtype=float)[0]


def eval_A(model: DiffusionModel, x, alpha) -> np.ndarray:
    """A(x, alpha) = a a^T at a single state."""
    x = np.asarray(x, dtype=float).reshape(-1)
    if x.size != model.state_dim:
        raise DimensionError(f"state has {x.size} entries, model has d={model.state_dim}")
    alpha = check_alpha(model, alpha)
    return diffusion_A(model, x.reshape(1, -1), alpha)[0]


def diffusion_a(model: DiffusionModel, x: np.ndarray, alpha: np.ndarray) -> np.ndarray:
    a = np.asarray(model.diffusion(x, alpha), dtype=float)
    expected = (x.shape[0], model.state_dim, model.noise_dim)
    if a.shape != expected:
        raise DimensionError(f"diffusion returned shape {a.shape}, expected {expected}")
    return a


def diffusion_A(model: DiffusionModel, x: np.ndarray, alpha: np.ndarray) -> np.ndarray:
    a = diffusion_a(model, x, alpha)
    A = a @ np.swapaxes(a, -1, -2)
    return 0.5 * (A + np.swapaxes(A, -1, -2))


def drift_values(model: DiffusionModel, x: np.ndarray, beta: np.ndarray) -> np.ndarray:
    b = np.asarray(model.drift(x, beta), dtype=float)
    if b.shape != x.shape:
        raise DimensionError(f"drift returned shape {b.shape}, expected {x.shape}")
    return b


def drift_jacobian(model: DiffusionModel, x: np.ndarray, beta: np.ndarray) -> np.ndarray:
    J = np.asarray(model.drift_jac_beta(x, beta), dtype=float)
    expected = (x.shape[0], model.state_dim, model.beta_dim)
    if J.shape != expected:
        raise DimensionError(f"drift_jac_beta returned shape {J.shape}, expected {expected}")
    return J


# ==================================================
# QUADRATIC FORMS ALONG A PATH
# ==================================================
def precision_terms(model: DiffusionModel, x_prev: np.ndarray, alpha: np.ndarray,
                    offset: int = 0) -> Tuple[np.ndarray, np.ndarray]:
    """
    (A, log det A) at every left point. Raises SingularMatrixError naming the
    observation index offset + j of the first point where A is not positive definite.
    """
    A = diffusion_A(model, x_prev, alpha)
    if A.shape[1] == 1:
        a11 = A[:, 0, 0]
        with np.errstate(divide="ignore"):
            logdet = np.log(a11)
        ok = (a11 > 0) & np.isfinite(logdet)
    else:
        sign, logdet = np.linalg.slogdet(A)
        ok = (sign > 0) & np.isfinite(logdet)
    if not ok.all():
        raise SingularMatrixError("A(x, alpha) is not positive definite", index=offset + int(np.argmin(ok)))
    return A, logdet


def solve_A(A: np.ndarray, resid: np.ndarray) -> np.ndarray:
    """A^{-1} r row by row; A (m, d, d), r (m, d)."""
    if A.shape[1] == 1:
        return resid / A[:, :, 0]
    return np.linalg.solve(A, resid[..., None])[..., 0]


def mahalanobis(A: np.ndarray, resid: np.ndarray) -> np.ndarray:
    """tr(A^{-1} r r^T) = r^T A^{-1} r per row."""
    return np.einsum("md,md->m", resid, solve_A(A, resid))


def solve_a(model: DiffusionModel, x_prev: np.ndarray, alpha: np.ndarray, resid: np.ndarray,
            offset: int = 0) -> np.ndarray:
    """a^{-1} r per row; needs a square diffusion coefficient."""
    if not model.square_noise:
        raise DimensionError(f"needs r = d, model has d={model.state_dim}, r={model.noise_dim}")
    a = diffusion_a(model, x_prev, alpha)
    det = np.linalg.det(a) if a.shape[1] > 1 else a[:, 0, 0]
    bad = ~np.isfinite(det) | (np.abs(det) <= 1e-300)
    if bad.any():
        raise SingularMatrixError("a(x, alpha) is singular", index=offset + int(np.argmax(bad)))
    if a.shape[1] == 1:
        return resid / a[:, :, 0]
    return np.linalg.solve(a, resid[..., None])[..., 0]


# ==================================================
# DERIVATIVE SELF-CHECK
# ==================================================
@dataclass
class DerivativeReport:
    model: str
    n_points: int
    max_rel_error: float
    max_rel_error_alpha: Optional[float]
    min_eig_A: float
    passed: bool
    tolerance: float

    def to_dict(self) -> dict:
        return {
            "model": self.model,
            "n_points": self.n_points,
            "max_rel_error": self.max_rel_error,
            "max_rel_error_alpha": self.max_rel_error_alpha,
            "min_eig_A": self.min_eig_A,
            "passed": self.passed,
            "tolerance": self.tolerance,
        }


DERIVATIVE_ZERO = 1e-8


def _rel_err(analytic: np.ndarray, numeric: np.ndarray) -> float:
    # entries below DERIVATIVE_ZERO in both arrays count as equal
    scale = np.maximum(np.abs(analytic), np.abs(numeric))
    active = scale > DERIVATIVE_ZERO
    if not np.any(active):
        return 0.0
    return float(np.max(np.abs(analytic - numeric)[active] / scale[active]))


def check_derivatives(model: DiffusionModel, n_points: int = 32, seed: int = 0,
                      state_box: Tuple[float, float] = (-10.0, 10.0),
                      tolerance: float = 1e-5) -> DerivativeReport:
    """
    Compare drift_jac_beta (and diffusion_jac_alpha, if given) against
    central differences at random points, and check that A is symmetric
    positive definite there. Errors are relative to the larger of the two
    magnitudes, entrywise.
    """
    rng = stream(seed)
    x = rng.uniform(state_box[0], state_box[1], size=(n_points, model.state_dim))
    betas = model.beta_space.uniform(rng, n_points)
    alphas = model.alpha_space.uniform(rng, n_points)

    worst = 0.0
    worst_alpha = 0.0 if model.diffusion_jac_alpha is not None else None
    min_eig = np.inf
    for j in range(n_points):
        xj = x[j:j + 1]
        beta, alpha = betas[j], alphas[j]

        J = drift_jacobian(model, xj, beta)[0]
        if not np.all(np.isfinite(J)) or not np.all(np.isfinite(drift_values(model, xj, beta))):
            raise NumericalError(f"non-finite drift output at point {j}")
        fd = np.empty_like(J)
        for l in range(model.beta_dim):
            step = 1e-6 * max(1.0, abs(beta[l]))
            up, dn = beta.copy(), beta.copy()
            up[l] += step
            dn[l] -= step
            fd[:, l] = (drift_values(model, xj, up)[0] - drift_values(model, xj, dn)[0]) / (2 * step)
        worst = max(worst, _rel_err(J, fd))

        A = diffusion_A(model, xj, alpha)[0]
        if not np.all(np.isfinite(A)):
            raise NumericalError(f"non-finite diffusion output at point {j}")
        min_eig = min(min_eig, float(np.linalg.eigvalsh(A)[0]))

        if model.diffusion_jac_alpha is not None:
            dA = np.asarray(model.diffusion_jac_alpha(xj, alpha), dtype=float)[0]
            fd_a = np.empty_like(dA)
            for l in range(model.alpha_dim):
                step = 1e-6 * max(1.0, abs(alpha[l]))
                up, dn = alpha.copy(), alpha.copy()
                up[l] += step
                dn[l] -= step
                fd_a[l] = (diffusion_A(model, xj, up)[0] - diffusion_A(model, xj, dn)[0]) / (2 * step)
            worst_alpha = max(worst_alpha, _rel_err(dA, fd_a))

    passed = worst <= tolerance and min_eig > 0.0
    if worst_alpha is not None:
        passed = passed and worst_alpha <= tolerance
    if not passed:
        logger.warning("derivative check failed for %s: beta err %.3g, alpha err %s, min eig %.3g",
                       model.name, worst, worst_alpha, min_eig)
    return DerivativeReport(model.name, n_points, worst, worst_alpha, min_eig, passed, tolerance)


# ==================================================
# CLOSED-FORM DRIFT FITS
# ==================================================
def weighted_least_squares(design: np.ndarray, target: np.ndarray, weights: np.ndarray) -> np.ndarray:
    """argmin_c sum_i w_i (target_i - design_i . c)^2 via the normal equations."""
    Zw = design * weights[:, None]
    gram = design.T @ Zw
    rhs = Zw.T @ target
    try:
        return np.linalg.solve(gram, rhs)
    except np.linalg.LinAlgError as exc:
        raise NumericalError(f"degenerate drift design: {exc}") from exc


def _ou_closed_form(x_prev, dx, h, precision):
    # dX ~ h (c0 + c1 x) with c1 = -beta, c0 = beta * gamma
    x = x_prev[:, 0]
    design = h * np.column_stack([np.ones_like(x), x])
    c0, c1 = weighted_least_squares(design, dx[:, 0], precision)
    beta = -c1
    if beta <= 0:
        raise NumericalError(f"OU regression gave non-positive mean reversion {beta:.4g}")
    return np.array([beta, c0 / beta])


def _hyperbolic_closed_form(x_prev, dx, h, precision):
    x = x_prev[:, 0]
    design = h * np.column_stack([np.ones_like(x), -x / np.sqrt(1.0 + x * x)])
    return weighted_least_squares(design, dx[:, 0], precision)


# ==================================================
# BUILTIN MODELS
# ==================================================
def _ou_transition(alpha, theta, h: float) -> Tuple[float, float, float]:
    kappa, gamma = float(theta[0]), float(theta[1])
    if kappa <= 0:
        raise ParameterBoxError(f"OU mean reversion must be positive, got {kappa}")
    scale = float(alpha[0]) * np.sqrt(-np.expm1(-2.0 * kappa * h) / (2.0 * kappa))
    return float(np.exp(-kappa * h)), gamma, scale


def _constant_diffusion(x, alpha):
    return np.full((x.shape[0], 1, 1), float(alpha[0]))


def _constant_diffusion_dA(x, alpha):
    return np.full((x.shape[0], 1, 1, 1), 2.0 * float(alpha[0]))


def ou_model(alpha_range=(1e-3, 10.0), beta_range=(1e-3, 10.0),
             gamma_range=(-10.0, 10.0)) -> DiffusionModel:
    """dX = -beta (X - gamma) dt + alpha dW, parameters (beta, gamma)."""

    def drift(x, theta):
        return -theta[0] * (x - theta[1])

    def jac(x, theta):
        return np.stack([-(x - theta[1]), np.full_like(x, theta[0])], axis=-1)

    def stationary(alpha, theta):
        return float(theta[1]), float(alpha[0]) ** 2 / (2.0 * float(theta[0]))

    return DiffusionModel(
        name="ou",
        state_dim=1, noise_dim=1, alpha_dim=1, beta_dim=2,
        drift=drift,
        diffusion=_constant_diffusion,
        drift_jac_beta=jac,
        alpha_space=ParameterBox([alpha_range[0]], [alpha_range[1]]),
        beta_space=ParameterBox([beta_range[0], gamma_range[0]], [beta_range[1], gamma_range[1]]),
        diffusion_jac_alpha=_constant_diffusion_dA,
        scalar_diffusion=True,
        beta_closed_form=_ou_closed_form,
        stationary_law=stationary,
        exact_transition=_ou_transition,
        notes={"assumptions": "alpha > 0, beta > 0; Gaussian invariant law N(gamma, alpha^2 / (2 beta))"},
    )


def hyperbolic_model(alpha_range=(1e-3, 10.0), beta_bound: float = 1.5,
                     gamma_range=(1.6, 10.0)) -> DiffusionModel:
    """dX = (beta - gamma X / sqrt(1 + X^2)) dt + alpha dW with |beta| < gamma."""
    if beta_bound >= gamma_range[0]:
        raise ValueError("box must keep |beta| < gamma: need beta_bound < gamma lower bound")

    def drift(x, theta):
        return theta[0] - theta[1] * x / np.sqrt(1.0 + x * x)

    def jac(x, theta):
        return np.stack([np.ones_like(x), -x / np.sqrt(1.0 + x * x)], axis=-1)

    return DiffusionModel(
        name="hyperbolic",
        state_dim=1, noise_dim=1, alpha_dim=1, beta_dim=2,
        drift=drift,
        diffusion=_constant_diffusion,
        drift_jac_beta=jac,
        alpha_space=ParameterBox([alpha_range[0]], [alpha_range[1]]),
        beta_space=ParameterBox([-beta_bound, gamma_range[0]], [beta_bound, gamma_range[1]]),
        diffusion_jac_alpha=_constant_diffusion_dA,
        scalar_diffusion=True,
        beta_closed_form=_hyperbolic_closed_form,
        notes={"assumptions": "alpha > 0, |beta| < gamma (box: |beta| <= %g < %g <= gamma)"
                              % (beta_bound, gamma_range[0])},
    )


BUILTIN_MODELS: Dict[str, Callable[[], DiffusionModel]] = {
    "ou": ou_model,
    "hyperbolic": hyperbolic_model,
}


def get_model(name: str) -> DiffusionModel:
    try:
        return BUILTIN_MODELS[name.lower()]()
    except KeyError:
        raise ConfigError(f"unknown model '{name}', choose from {sorted(BUILTIN_MODELS)}") from None
