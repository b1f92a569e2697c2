"""
Path generation for piecewise-parameter diffusions.

Parameters switch on the observation grid: with breakpoint tau, increments
i <= [n tau] use the old parameters and increments i > [n tau] the new ones,
i.e. the transition out of observation index [n tau] is the first one under
the new regime.
"""

import logging
from dataclasses import dataclass
from typing import List, Optional, Sequence, Tuple

import numpy as np
from scipy.signal import lfilter

from core.errors import ConfigError, ExplosionError
from core.model import DiffusionModel, check_alpha, check_beta, diffusion_a, drift_values, ou_model
from core.path import Path
from core.rng import stream

logger = logging.getLogger(__name__)

EULER_CHUNK = 2048


# ==================================================
# PARAMETER SCHEDULES
# ==================================================
@dataclass(frozen=True, eq=False)
class Segment:
    end: float
    alpha: np.ndarray
    beta: np.ndarray


@dataclass(frozen=True, eq=False)
class ParamSchedule:
    segments: Tuple[Segment, ...]

    def __post_init__(self):
        segs = tuple(Segment(float(s.end), np.atleast_1d(np.asarray(s.alpha, dtype=float)),
                             np.atleast_1d(np.asarray(s.beta, dtype=float)))
                     for s in self.segments)
        if not segs:
            raise ConfigError("schedule needs at least one segment")
        ends = [s.end for s in segs]
        if any(e <= 0 for e in ends) or any(b <= a for a, b in zip(ends, ends[1:])):
            raise ConfigError(f"segment fractions must be strictly increasing in (0, 1]: {ends}")
        if abs(ends[-1] - 1.0) > 1e-12:
            raise ConfigError("last segment must end at fraction 1")
        object.__setattr__(self, "segments", segs)

    @classmethod
    def constant(cls, alpha, beta) -> "ParamSchedule":
        return cls((Segment(1.0, alpha, beta),))

    @classmethod
    def from_changes(cls, alpha1, beta1, alpha2=None, tau_alpha: Optional[float] = None,
                     beta2=None, tau_beta: Optional[float] = None) -> "ParamSchedule":
        """At most one change per parameter; equal fractions give a simultaneous change."""
        cuts = {1.0}
        if alpha2 is not None:
            cuts.add(float(tau_alpha))
        if beta2 is not None:
            cuts.add(float(tau_beta))
        segs = []
        for end in sorted(cuts):
            a = alpha2 if alpha2 is not None and end > tau_alpha else alpha1
            b = beta2 if beta2 is not None and end > tau_beta else beta1
            segs.append(Segment(end, a, b))
        return cls(tuple(segs))

    def validate(self, model: DiffusionModel) -> None:
        for s in self.segments:
            check_alpha(model, s.alpha)
            check_beta(model, s.beta)

    def index_bounds(self, n: int) -> List[Tuple[int, int, np.ndarray, np.ndarray]]:
        """(lo, hi, alpha, beta) per non-empty segment: increments in (lo, hi]."""
        out = []
        lo = 0
        for s in self.segments:
            hi = n if s.end >= 1.0 else int(np.floor(n * s.end + 1e-9))
            if hi > lo:
                out.append((lo, hi, s.alpha, s.beta))
            lo = max(lo, hi)
        return out

    def _first_change(self, attr: str) -> Optional[float]:
        for prev, cur in zip(self.segments, self.segments[1:]):
            if not np.array_equal(getattr(prev, attr), getattr(cur, attr)):
                return prev.end
        return None

    @property
    def tau_alpha(self) -> Optional[float]:
        return self._first_change("alpha")

    @property
    def tau_beta(self) -> Optional[float]:
        return self._first_change("beta")

    def to_dict(self) -> dict:
        return {
            "segments": [{"end": s.end, "alpha": s.alpha.tolist(), "beta": s.beta.tolist()}
                         for s in self.segments],
            "tau_alpha": self.tau_alpha,
            "tau_beta": self.tau_beta,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "ParamSchedule":
        return cls(tuple(Segment(s["end"], s["alpha"], s["beta"]) for s in data["segments"]))


# ==================================================
# EULER-MARUYAMA
# ==================================================
def simulate_paths(model: DiffusionModel, schedule: ParamSchedule, x0, n: int, h: float,
                   substeps: int = 32, seeds: Sequence[int] = (0,)) -> List[Path]:
    """
    Euler-Maruyama for several independent paths at once, one Philox stream
    per seed. Path j depends only on seeds[j].
    """
    if substeps < 1:
        raise ConfigError("substeps must be >= 1")
    if n < 2 or not h > 0:
        raise ConfigError(f"need n >= 2 and h > 0, got n={n}, h={h}")
    schedule.validate(model)
    d, r = model.state_dim, model.noise_dim
    x0 = np.asarray(x0, dtype=float).reshape(-1)
    if x0.size != d:
        raise ConfigError(f"x0 must have d={d} entries")

    R = len(seeds)
    rngs = [stream(s) for s in seeds]
    out = np.empty((R, n + 1, d))
    out[:, 0, :] = x0
    state = np.tile(x0, (R, 1))
    delta = h / substeps
    sqrt_delta = np.sqrt(delta)

    for lo, hi, alpha, beta in schedule.index_bounds(n):
        # shapes checked once per segment
        drift_values(model, state, beta)
        diffusion_a(model, state, alpha)
        constant_a = float(alpha[0]) if model.scalar_diffusion else None
        for c0 in range(lo, hi, EULER_CHUNK):
            c1 = min(hi, c0 + EULER_CHUNK)
            # (step, substep, path, noise)
            noise = np.stack([g.standard_normal((c1 - c0, substeps, r)) for g in rngs], axis=2)
            noise *= sqrt_delta if constant_a is None else sqrt_delta * constant_a
            for j in range(c0, c1):
                for dw in noise[j - c0]:
                    if constant_a is None:
                        dw = np.einsum("mdr,mr->md", model.diffusion(state, alpha), dw)
                    state = state + model.drift(state, beta) * delta + dw
                out[:, j + 1, :] = state
            block = out[:, c0 + 1:c1 + 1, :]
            finite = np.all(np.isfinite(block), axis=2)
            if not finite.all():
                first = int(np.min(np.argmax(~finite, axis=1)[~finite.all(axis=1)]))
                raise ExplosionError(c0 + 1 + first)

    return [Path(h=h, x=out[k]) for k in range(R)]


def simulate_path(model: DiffusionModel, schedule: ParamSchedule, x0, n: int, h: float,
                  substeps: int = 32, seed: int = 0) -> Path:
    return simulate_paths(model, schedule, x0, n, h, substeps, (seed,))[0]


# ==================================================
# EXACT LINEAR TRANSITION
# ==================================================
def simulate_exact(model: DiffusionModel, schedule: ParamSchedule, x0, n: int, h: float,
                   seed: int = 0) -> Path:
    """
    Exact simulation of a one-dimensional linear Gaussian model from its
    AR(1) transition X_{i+1} - level = phi (X_i - level) + scale Z_i.
    """
    if model.exact_transition is None:
        raise ConfigError(f"model {model.name} has no exact transition")
    if n < 2 or not h > 0:
        raise ConfigError(f"need n >= 2 and h > 0, got n={n}, h={h}")
    z = stream(seed).standard_normal(n)
    x = np.empty(n + 1)
    x[0] = float(np.asarray(x0, dtype=float).reshape(-1)[0])
    for lo, hi, alpha, beta in schedule.index_bounds(n):
        phi, level, scale = model.exact_transition(alpha, beta, h)
        y, _ = lfilter([scale], [1.0, -phi], z[lo:hi], zi=[phi * (x[lo] - level)])
        x[lo + 1:hi + 1] = level + y
    return Path(h=h, x=x)


def simulate_ou_exact(schedule: ParamSchedule, x0, n: int, h: float, seed: int = 0) -> Path:
    """Schedule entries alpha = (alpha,), beta = (beta, gamma)."""
    return simulate_exact(ou_model(), schedule, x0, n, h, seed)


# ==================================================
# BROWNIAN BRIDGE
# ==================================================
def brownian_bridges(k: int, n_grid: int, n_reps: int, rng: np.random.Generator) -> np.ndarray:
    """(n_reps, n_grid + 1, k) bridges B(s) = W(s) - s W(1) on s = j / n_grid."""
    steps = rng.standard_normal((n_reps, n_grid, k)) / np.sqrt(n_grid)
    w = np.zeros((n_reps, n_grid + 1, k))
    np.cumsum(steps, axis=1, out=w[:, 1:, :])
    s = (np.arange(n_grid + 1) / n_grid)[None, :, None]
    return w - s * w[:, -1:, :]


def sample_brownian_bridge_sup(k: int, n_grid: int = 10_000, n_reps: int = 10_000,
                               seed: int = 0, batch: int = 100, sort: bool = True) -> np.ndarray:
    """Draws of sup_s ||B_k^0(s)||, sorted unless sort=False."""
    if k < 1 or n_grid < 1 or n_reps < 1:
        raise ConfigError("k, n_grid and n_reps must be >= 1")
    rng = stream(seed)
    out = np.empty(n_reps)
    for start in range(0, n_reps, batch):
        m = min(batch, n_reps - start)
        bridges = brownian_bridges(k, n_grid, m, rng)
        out[start:start + m] = np.linalg.norm(bridges, axis=2).max(axis=1)
    if sort:
        out.sort()
    return out


def empirical_upper_quantile(sorted_sample: np.ndarray, level: float) -> float:
    """Order statistic at 1-based index ceil((1 - level) * reps)."""
    idx = int(np.ceil((1.0 - level) * sorted_sample.size)) - 1
    return float(sorted_sample[min(max(idx, 0), sorted_sample.size - 1)])


# ==================================================
# INVARIANT MEASURE
# ==================================================
def sample_invariant_measure(model: DiffusionModel, alpha, beta, n_samples: int = 10_000,
                             burn_in: int = 1_000_000, thin: int = 100, h: float = 0.01,
                             chains: int = 1, x0=None, seed: int = 0) -> np.ndarray:
    """
    Approximate draws from mu_(alpha, beta): Euler chains run burn_in steps,
    then every thin-th state is kept until n_samples states are collected.
    Returns (n_samples, d).
    """
    alpha = check_alpha(model, alpha)
    beta = check_beta(model, beta)
    d = model.state_dim
    per_chain = int(np.ceil(n_samples / chains))
    start = np.zeros(d) if x0 is None else np.asarray(x0, dtype=float).reshape(-1)
    state = np.tile(start, (chains, 1))
    rng = stream(seed)
    sqrt_h = np.sqrt(h)

    def advance(state, steps):
        for c0 in range(0, steps, EULER_CHUNK):
            c1 = min(steps, c0 + EULER_CHUNK)
            noise = rng.standard_normal((c1 - c0, chains, model.noise_dim)) * sqrt_h
            for j in range(c1 - c0):
                a = diffusion_a(model, state, alpha)
                state = state + drift_values(model, state, beta) * h \
                    + np.einsum("mdr,mr->md", a, noise[j])
        if not np.all(np.isfinite(state)):
            raise ExplosionError(steps)
        return state

    state = advance(state, burn_in)
    draws = np.empty((per_chain, chains, d))
    for i in range(per_chain):
        state = advance(state, thin)
        draws[i] = state
    return draws.reshape(-1, d)[:n_samples]
