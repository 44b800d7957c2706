"""State grid, hybrid preemption-candidate grid and far-field closure."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .distributions import ServiceDistribution

NEVER = -1  # candidate index meaning "never preempt"

DEFAULT_DT = 0.01
DEFAULT_Y_CUT_MEANS = 20.0
DEFAULT_THETA_FINE_MEANS = 5.0
DEFAULT_TAIL_EPS = 1e-4
DEFAULT_N_LOG = 60
MIN_CELLS = 10


class GridError(ValueError):
    pass


def build_state_grid(dt: float, y_cut: float) -> np.ndarray:
    """Uniform nodes ``0, dt, ..., M*dt`` with ``M = round(y_cut / dt)``."""
    if not dt > 0:
        raise GridError(f"dt must be positive, got {dt}")
    m = int(round(y_cut / dt))
    if m < 1:
        raise GridError(f"y_cut={y_cut} is below dt={dt}")
    return np.arange(m + 1) * dt


def build_hybrid_action_grid(dt: float, theta_fine: float, theta_max: float, n_log: int) -> np.ndarray:
    """Grid indices ``j`` (candidate ``theta = j*dt``) of the finite preemption
    candidates: every multiple of dt up to ``theta_fine`` plus ``n_log``
    geometric points on ``(theta_fine, theta_max]``. Sorted, deduplicated, all
    indices >= 1. The never-preempt candidate is implicit (see ``NEVER``).
    """
    if not dt > 0:
        raise GridError(f"dt must be positive, got {dt}")
    if theta_max < theta_fine:
        raise GridError(f"theta_max={theta_max} is below theta_fine={theta_fine}")
    if theta_fine < dt:
        raise GridError(f"theta_fine={theta_fine} is below dt={dt}")
    if n_log < 1:
        raise GridError("n_log must be at least 1")
    j_fine = int(round(theta_fine / dt))
    uniform = np.arange(1, j_fine + 1)
    geo = np.geomspace(theta_fine, theta_max, n_log + 1)[1:]
    log_idx = np.rint(geo / dt).astype(np.int64)
    idx = np.unique(np.concatenate([uniform, log_idx]))
    return idx[idx >= 1]


def far_field_value(v: np.ndarray, y: float, slope: float, dt: float) -> float:
    """Value of ``v`` at an arbitrary ``y >= 0``: nearest node (ties to the
    lower node) inside the grid, linear extrapolation with ``slope`` beyond."""
    if y < 0:
        raise GridError(f"negative state {y}")
    m = len(v) - 1
    y_m = m * dt
    if y > y_m:
        return float(v[m] + slope * (y - y_m))
    i = min(int(math.ceil(y / dt - 0.5)), m)
    return float(v[i])


def nearest_index(y: float, dt: float, m: int) -> int:
    return min(max(int(math.ceil(y / dt - 0.5)), 0), m)


@dataclass(frozen=True)
class Grids:
    dt: float
    m: int
    theta_fine: float
    theta_max: float
    n_log: int
    slope: float
    candidates: np.ndarray  # finite candidate indices, ascending
    tail_eps: float | None = None

    @property
    def y_cut(self) -> float:
        return self.m * self.dt

    @property
    def states(self) -> np.ndarray:
        return np.arange(self.m + 1) * self.dt

    @property
    def j_max(self) -> int:
        """Index of the largest finite candidate."""
        return int(self.candidates[-1])

    @property
    def horizon(self) -> int:
        """Last action-grid index used for quadrature."""
        return max(self.j_max, self.m)

    def candidate_values(self) -> np.ndarray:
        return self.candidates * self.dt

    def with_candidates(self, candidates) -> "Grids":
        c = np.unique(np.asarray(candidates, dtype=np.int64))
        return Grids(self.dt, self.m, self.theta_fine, self.theta_max, self.n_log,
                     self.slope, c, self.tail_eps)

    def with_dt(self, dt: float) -> "Grids":
        return make_grids(dt=dt, y_cut=self.y_cut, theta_fine=self.theta_fine,
                          theta_max=self.theta_max, n_log=self.n_log, slope=self.slope)

    def summary(self) -> dict:
        return {
            "dt": self.dt,
            "y_cut": self.y_cut,
            "M": self.m,
            "theta_fine": self.theta_fine,
            "theta_max": self.j_max * self.dt,
            "n_log": self.n_log,
            "far_field_slope": self.slope,
            "n_candidates": int(self.candidates.size) + 1,
            "tail_eps": self.tail_eps,
        }


def make_grids(
    dt: float,
    y_cut: float,
    theta_fine: float,
    theta_max: float,
    n_log: int,
    slope: float,
    tail_eps: float | None = None,
) -> Grids:
    build_state_grid(dt, y_cut)
    m = int(round(y_cut / dt))
    if m < MIN_CELLS:
        raise GridError(f"y_cut={y_cut} gives only {m} cells; the solver needs at least {MIN_CELLS}")
    cands = build_hybrid_action_grid(dt, theta_fine, theta_max, n_log)
    return Grids(dt, m, theta_fine, theta_max, n_log, slope, cands, tail_eps)


def grids_for(
    dist: ServiceDistribution,
    dt: float = DEFAULT_DT,
    y_cut: float | None = None,
    theta_fine: float | None = None,
    theta_max: float | None = None,
    tail_eps: float | None = None,
    n_log: int = DEFAULT_N_LOG,
    slope: float | None = None,
) -> Grids:
    """Grids scaled to ``dist``; unspecified extents default to multiples of
    E[Y], and ``theta_max`` (if not given) is the ``tail_eps`` quantile
    (default 1e-4). Tail coverage is checked whenever ``tail_eps`` is in force."""
    mean = dist.mean
    if y_cut is None:
        y_cut = DEFAULT_Y_CUT_MEANS * mean
    if theta_fine is None:
        theta_fine = DEFAULT_THETA_FINE_MEANS * mean
    theta_fine = max(dt, round(theta_fine / dt) * dt)
    if theta_max is None:
        if tail_eps is None:
            tail_eps = DEFAULT_TAIL_EPS
        theta_max = math.ceil(dist.quantile_tail(tail_eps) / dt - 1e-9) * dt
    theta_max = max(theta_max, theta_fine)
    if slope is None:
        slope = mean
    g = make_grids(dt, y_cut, theta_fine, theta_max, n_log, slope, tail_eps)
    if tail_eps is not None:
        top = g.j_max * dt
        if dist.tail(top) > tail_eps * (1 + 1e-9):
            raise GridError(
                f"largest candidate {top:g} leaves tail {dist.tail(top):.3g} > tail_eps {tail_eps:g}"
            )
    return g
