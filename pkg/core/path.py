"""
Discretely observed paths {X_{t_i}}, t_i = i h, and their CSV codec.

Increment i (1 <= i <= n) is dX_i = X_{t_i} - X_{t_{i-1}}. An index interval
(lo, hi] selects increments lo+1 .. hi, i.e. dx[lo:hi] together with the
left points x[lo:hi].
"""

import logging
from dataclasses import dataclass
from pathlib import Path as FsPath
from typing import Tuple, Union

import numpy as np
import pandas as pd

from core.errors import DataError, DimensionError, WindowTooShortError

logger = logging.getLogger(__name__)

Interval = Tuple[int, int]


@dataclass(frozen=True, eq=False)
class Path:
    h: float
    x: np.ndarray

    def __post_init__(self):
        x = np.asarray(self.x, dtype=float)
        if x.ndim == 1:
            x = x.reshape(-1, 1)
        if x.ndim != 2:
            raise DimensionError(f"path must be (n+1, d), got shape {x.shape}")
        if x.shape[0] < 3:
            raise DataError("path needs n >= 2 increments")
        if not self.h > 0:
            raise DataError(f"step size must be positive, got {self.h}")
        bad = np.flatnonzero(~np.all(np.isfinite(x), axis=1))
        if bad.size:
            raise DataError("non-finite observation", row=int(bad[0]))
        x.setflags(write=False)
        object.__setattr__(self, "x", x)
        object.__setattr__(self, "h", float(self.h))

    @property
    def n(self) -> int:
        return self.x.shape[0] - 1

    @property
    def d(self) -> int:
        return self.x.shape[1]

    @property
    def T(self) -> float:
        return self.n * self.h

    @property
    def t(self) -> np.ndarray:
        return np.arange(self.n + 1) * self.h

    @property
    def dx(self) -> np.ndarray:
        return np.diff(self.x, axis=0)

    def full(self) -> Interval:
        return (0, self.n)

    def segment(self, interval: Interval, min_length: int = 1) -> Tuple[np.ndarray, np.ndarray]:
        """(x_prev, dx) for the increments in (lo, hi]."""
        lo, hi = check_interval(self, interval, min_length)
        return self.x[lo:hi], self.x[lo + 1:hi + 1] - self.x[lo:hi]

    def index_of(self, fraction: float) -> int:
        """[n tau]"""
        return int(np.floor(self.n * fraction + 1e-9))


def check_interval(path: Path, interval: Interval, min_length: int = 1) -> Interval:
    lo, hi = int(interval[0]), int(interval[1])
    if lo < 0 or hi > path.n or lo >= hi:
        raise WindowTooShortError(f"interval ({lo}, {hi}] not inside (0, {path.n}]")
    if hi - lo < min_length:
        raise WindowTooShortError(f"interval ({lo}, {hi}] has {hi - lo} increments, need {min_length}")
    return lo, hi


def describe_path(path: Path) -> dict:
    dx = path.dx
    return {
        "n": path.n,
        "d": path.d,
        "h": path.h,
        "T": path.T,
        "x_min": path.x.min(axis=0).tolist(),
        "x_max": path.x.max(axis=0).tolist(),
        "x_mean": path.x.mean(axis=0).tolist(),
        "realized_var_rate": (np.sum(dx * dx, axis=0) / path.T).tolist(),
    }


# ==================================================
# CSV
# ==================================================
def path_frame(path: Path) -> pd.DataFrame:
    cols = {"t": path.t}
    for j in range(path.d):
        cols[f"x{j + 1}"] = path.x[:, j]
    return pd.DataFrame(cols)


def write_path_csv(path: Path, target: Union[str, FsPath]) -> None:
    path_frame(path).to_csv(target, index=False, float_format="%.17g", lineterminator="\n",
                            encoding="utf-8")


def read_path_csv(source: Union[str, FsPath], expected_dim: int = None) -> Path:
    """Parse `t,x1,...,xd`. Errors name the 1-based file line."""
    try:
        raw = pd.read_csv(source, dtype=str, keep_default_na=False)
    except (pd.errors.ParserError, pd.errors.EmptyDataError, UnicodeDecodeError) as exc:
        raise DataError(f"malformed CSV {source}: {exc}") from exc

    columns = [c.strip() for c in raw.columns]
    d = len(columns) - 1
    if d < 1 or columns[0] != "t" or columns[1:] != [f"x{j + 1}" for j in range(d)]:
        raise DataError(f"header must be t,x1,...,xd; got {','.join(columns)}")
    if expected_dim is not None and d != expected_dim:
        raise DimensionError(f"file has d={d} state columns, model expects d={expected_dim}")
    if len(raw) < 3:
        raise DataError("need at least 3 observation rows")

    values = raw.apply(lambda s: pd.to_numeric(s.str.strip(), errors="coerce"))
    arr = values.to_numpy(dtype=float)
    bad = np.flatnonzero(~np.all(np.isfinite(arr), axis=1))
    if bad.size:
        # header is line 1
        raise DataError("non-numeric or NaN value", row=int(bad[0]) + 2)

    t = arr[:, 0]
    steps = np.diff(t)
    h = float(steps[0])
    if h <= 0 or not np.allclose(steps, h, rtol=1e-8, atol=1e-12 * max(1.0, abs(t[-1]))):
        raise DataError("time column must be strictly increasing and equidistant")
    if abs(t[0]) > 1e-9 * max(1.0, h):
        logger.warning("time column starts at %g, treating observations as t_i = i h", t[0])
    return Path(h=h, x=arr[:, 1:])
