"""Average-cost policy iteration for joint sampling and preemption.

The busy phase is parameterized by the busy-start AoI ``y`` on a uniform grid
``y_i = i*dt``; preemption thresholds live on the action grid ``t_j = j*dt``.
Every integral against the service law, ``int_0^theta phi(t) dF(t)``, uses
the trapezoid rule in Stieltjes form: interval ``[t_{j-1}, t_j]`` carries its
exact probability mass ``tail(t_{j-1}) - tail(t_j)`` split evenly between its
endpoints. The transition rows therefore sum to one exactly, and the same
prefix sums serve both improvement and evaluation.
"""

from __future__ import annotations

import csv
import logging
import math
import time
from dataclasses import dataclass, field

import numpy as np
from scipy import integrate
from scipy import sparse
from scipy.sparse import linalg as splinalg

from .distributions import ServiceDistribution
from .grids import NEVER, Grids, nearest_index

log = logging.getLogger(__name__)


class SolverError(RuntimeError):
    pass


class SingularPolicyError(SolverError):
    """The Poisson system of a policy could not be solved reliably."""


class DegeneratePolicyError(SolverError):
    pass


class GridTooSmallError(SolverError):
    pass


# ---------------------------------------------------------------------------
# quadrature tables


@dataclass(frozen=True)
class QuadTables:
    """Per-(distribution, grid) arrays on the action grid ``t_j, j=0..N``."""

    t: np.ndarray
    tail: np.ndarray
    mass: np.ndarray  # mass[l-1] = tail(t_{l-1}) - tail(t_l), l = 1..N
    atom0: float  # P(Y = 0)
    A: np.ndarray
    J1: np.ndarray
    mean: float
    second_moment: float
    mean_above_horizon: float  # E[Y; Y > t_N]
    dist: ServiceDistribution = field(repr=False, compare=False)

    @property
    def n(self) -> int:
        return self.t.size - 1

    def beyond(self, z_far: float) -> tuple[float, float, float, float, float]:
        """Moments of Y past the horizon, split where the idle map switches
        from the constant target ``z_far`` to ``z(t) = t``.

        Returns ``(p1, m1, m2, p2, m1_hi)``: mass, first and second partial
        moments on ``(t_N, b]`` and mass and first partial moment on
        ``(b, inf)`` with ``b = max(t_N, z_far)``.
        """
        t_n = float(self.t[-1])
        tail_n = float(self.tail[-1])
        if z_far <= t_n:
            return 0.0, 0.0, 0.0, tail_n, self.mean_above_horizon
        d = self.dist
        tail_b = float(d.tail(z_far))
        a_b, j_b = (float(x) for x in d.partial_expectations(z_far))
        below1_b = a_b - z_far * tail_b
        below2_b = 2 * j_b - z_far * z_far * tail_b
        below1_n = float(self.A[-1]) - t_n * tail_n
        below2_n = 2 * float(self.J1[-1]) - t_n * t_n * tail_n
        return (tail_n - tail_b, below1_b - below1_n, below2_b - below2_n,
                tail_b, max(self.mean - below1_b, 0.0))

    def cumint(self, h: np.ndarray) -> np.ndarray:
        """Prefix integrals ``int_[0, t_J] h dF`` for J = 0..N."""
        head = self.atom0 * h[0]
        inc = self.mass * 0.5 * (h[:-1] + h[1:])
        out = np.empty_like(h, dtype=float)
        out[0] = head
        np.cumsum(inc, out=out[1:])
        out[1:] += head
        return out


def quad_tables(dist: ServiceDistribution, grids: Grids) -> QuadTables:
    n = grids.horizon
    t = np.arange(n + 1) * grids.dt
    tail = np.asarray(dist.tail(t), dtype=float)
    a, j1 = dist.partial_expectations(t)
    mean, m2 = dist.moments()
    above = mean - (float(a[-1]) - t[-1] * float(tail[-1]))
    return QuadTables(
        t=t,
        tail=tail,
        mass=tail[:-1] - tail[1:],
        atom0=1.0 - float(tail[0]),
        # closed forms can wobble by an ulp once saturated
        A=np.maximum.accumulate(np.asarray(a, dtype=float)),
        J1=np.maximum.accumulate(np.asarray(j1, dtype=float)),
        mean=mean,
        second_moment=m2,
        mean_above_horizon=max(above, 0.0),
        dist=dist,
    )


# ---------------------------------------------------------------------------
# policies


@dataclass
class StationaryPolicy:
    """Sampling targets ``z_map`` and preemption-candidate indices
    ``theta_idx`` (``NEVER`` = run to completion) on the state grid.

    ``z_far`` is the sampling target used beyond the grid, where the idle map
    is ``z(D) = max(D, z_far)``. ``far_table`` optionally carries the
    far-field busy objective so that ``threshold`` can be evaluated past
    ``y_cut``; without it the last grid node's threshold is reused.
    """

    z_map: np.ndarray
    theta_idx: np.ndarray
    dt: float
    z_far: float = -math.inf
    far_table: dict | None = field(default=None, repr=False)

    def __post_init__(self):
        self.z_map = np.asarray(self.z_map, dtype=float)
        self.theta_idx = np.asarray(self.theta_idx, dtype=np.int64)
        y = np.arange(self.z_map.size) * self.dt
        if np.any(self.z_map < y - 1e-9 * (1 + y)):
            raise ValueError("sampling target below current AoI")
        if np.any((self.theta_idx < 1) & (self.theta_idx != NEVER)):
            raise ValueError("preemption threshold must be at least dt or never")

    @property
    def m(self) -> int:
        return self.z_map.size - 1

    @property
    def theta_map(self) -> np.ndarray:
        return np.where(self.theta_idx == NEVER, np.inf, self.theta_idx * self.dt)

    def sample_target(self, aoi: float) -> float:
        """AoI at which to sample when the channel went idle at AoI ``aoi``."""
        m = self.m
        if aoi > m * self.dt:
            return max(aoi, self.z_far)
        i = nearest_index(aoi, self.dt, m)
        z = self.z_map[i]
        if z <= i * self.dt:
            return aoi
        return max(aoi, z)

    def threshold(self, y: float) -> float:
        """Preemption threshold for busy-start AoI ``y`` (``inf`` = never)."""
        m = self.m
        if y > m * self.dt and self.far_table is not None:
            ft = self.far_table
            q = ft["slope"] * y + ft["const"]
            return float(ft["theta"][int(np.argmin(q))])
        j = self.theta_idx[nearest_index(y, self.dt, m)]
        return math.inf if j == NEVER else j * self.dt


@dataclass
class IdleMap:
    phi: np.ndarray
    m_env: np.ndarray  # suffix minima of phi (tail candidate included)
    z_index: np.ndarray  # argmin node, m+1 marks the analytic tail candidate
    z: np.ndarray  # sampling target per state node
    z_far: float
    z_tail: float
    h_idle: np.ndarray  # h_I on the action grid
    rho: float


@dataclass
class Evaluation:
    rho: float
    v: np.ndarray
    residual: float
    rhs_norm: float
    g: np.ndarray = field(repr=False)
    r: np.ndarray = field(repr=False)


@dataclass
class SolvedPolicy:
    policy: StationaryPolicy
    rho: float
    v: np.ndarray
    h_idle: np.ndarray
    iterations: int
    converged: bool
    residuals: list
    grids: Grids = field(repr=False)
    wall_time: float = 0.0
    linear_residuals: list = field(default_factory=list)
    rhs_norms: list = field(default_factory=list)

    @property
    def states(self) -> np.ndarray:
        return self.grids.states


# ---------------------------------------------------------------------------
# idle phase


def idle_envelope(v, rho: float, kappa_s: float, grids: Grids, tables: QuadTables) -> IdleMap:
    """Suffix-min envelope of ``kappa_s + v(z) + z^2/2 - rho*z`` over ``z >= y_i``.

    The far-field closure makes the objective beyond ``y_cut`` a parabola
    minimized at ``rho - s``; that analytic candidate competes at the grid end.
    Ties go to the smallest index.
    """
    v = np.asarray(v, dtype=float)
    m, dt, s = grids.m, grids.dt, grids.slope
    y = np.arange(m + 1) * dt
    y_m = m * dt
    phi = kappa_s + v + 0.5 * y * y - rho * y
    z_far = rho - s
    z_tail = max(y_m, z_far)
    phi_tail = kappa_s + v[m] + s * (z_tail - y_m) + 0.5 * z_tail * z_tail - rho * z_tail

    m_env = np.empty(m + 1)
    z_index = np.empty(m + 1, dtype=np.int64)
    if phi_tail < phi[m]:
        best, arg = phi_tail, m + 1
    else:
        best, arg = phi[m], m
    m_env[m], z_index[m] = best, arg
    for i in range(m - 1, -1, -1):
        if phi[i] <= best:
            best, arg = phi[i], i
        m_env[i] = best
        z_index[i] = arg
    z = np.where(z_index > m, z_tail, z_index * dt)

    t = tables.t
    h = rho * t - 0.5 * t * t
    h[: m + 1] += m_env
    if tables.n > m:
        tf = t[m + 1:]
        zf = np.maximum(tf, z_far)
        h[m + 1:] += kappa_s + v[m] + s * (zf - y_m) + 0.5 * zf * zf - rho * zf
    return IdleMap(phi, m_env, z_index, z, z_far, z_tail, h, rho)


def cumulative_fh(idle: IdleMap, v_m: float, kappa_s: float, grids: Grids, tables: QuadTables):
    """Prefix integrals ``I_fh(t_J)`` and the full integral ``int h_I dF``."""
    fh = tables.cumint(idle.h_idle)
    return fh, float(fh[-1] + _beyond_idle_integral(idle.z_far, idle.rho, v_m, kappa_s, grids, tables))


def _beyond_idle_terms(z_far: float, kappa_s: float, grids: Grids, tables: QuadTables):
    """Past the horizon: (int w dF, int (kappa_s + t*w + w^2/2) dF, mass on
    v(y_M), constant part of int v(z) dF)."""
    p1, m1, m2, p2, m1_hi = tables.beyond(z_far)
    s, y_m = grids.slope, grids.y_cut
    g_x = z_far * p1 - m1 if p1 > 0 else 0.0
    r_x = kappa_s * (p1 + p2) + (0.5 * (z_far * z_far * p1 - m2) if p1 > 0 else 0.0)
    const = s * (z_far - y_m) * p1 + s * (m1_hi - y_m * p2)
    return g_x, r_x, p1 + p2, const


def _beyond_idle_integral(z_far, rho, v_m, kappa_s, grids, tables) -> float:
    g_x, r_x, mass, const = _beyond_idle_terms(z_far, kappa_s, grids, tables)
    return r_x - rho * g_x + v_m * mass + const


# ---------------------------------------------------------------------------
# busy phase


def eval_Q(y: float, theta_idx: int, rho: float, v, fh, fh_inf: float,
           kappa_p: float, grids: Grids, tables: QuadTables) -> float:
    """Busy-phase objective for busy-start AoI ``y`` and candidate index
    ``theta_idx`` (``NEVER`` for no preemption)."""
    if theta_idx == NEVER:
        return (y - rho) * tables.mean + 0.5 * tables.second_moment + fh_inf
    j = int(theta_idx)
    y_next = y + j * grids.dt
    m = grids.m
    y_m = m * grids.dt
    if y_next > y_m:
        v_next = v[m] + grids.slope * (y_next - y_m)
    else:
        v_next = v[nearest_index(y_next, grids.dt, m)]
    return (y - rho) * tables.A[j] + tables.J1[j] + fh[j] + tables.tail[j] * (kappa_p + v_next)


def q_matrix(v, rho: float, fh, fh_inf: float, kappa_p: float, grids: Grids,
             tables: QuadTables, candidates=None) -> np.ndarray:
    """Q(y_i, theta_c) for every node and every candidate; the last column is
    the never-preempt candidate."""
    v = np.asarray(v, dtype=float)
    cand = grids.candidates if candidates is None else np.asarray(candidates)
    m, dt, s = grids.m, grids.dt, grids.slope
    i = np.arange(m + 1)
    y = i * dt
    y_m = m * dt
    nxt = i[:, None] + cand[None, :]
    inside = nxt <= m
    y_next = nxt * dt
    v_next = np.where(inside, v[np.minimum(nxt, m)], v[m] + s * (y_next - y_m))
    q = np.empty((m + 1, cand.size + 1))
    q[:, :-1] = ((y[:, None] - rho) * tables.A[cand] + tables.J1[cand] + fh[cand]
                 + tables.tail[cand] * (kappa_p + v_next))
    q[:, -1] = (y - rho) * tables.mean + 0.5 * tables.second_moment + fh_inf
    return q


def busy_improve(v, rho: float, fh, fh_inf: float, kappa_p: float, grids: Grids,
                 tables: QuadTables, candidates=None) -> np.ndarray:
    """Argmin over the candidate set at every node; ties go to the smallest
    finite threshold and never-preempt loses all ties."""
    cand = grids.candidates if candidates is None else np.asarray(candidates)
    q = q_matrix(v, rho, fh, fh_inf, kappa_p, grids, tables, cand)
    col = np.argmin(q, axis=1)
    full = np.append(cand, NEVER)
    return full[col].astype(np.int64)


def far_field_table(v_m: float, rho: float, fh, fh_inf: float, kappa_p: float,
                    grids: Grids, tables: QuadTables, candidates=None) -> dict:
    """Busy objective beyond ``y_cut`` as ``slope*y + const`` per candidate."""
    cand = grids.candidates if candidates is None else np.asarray(candidates)
    s, y_m = grids.slope, grids.y_cut
    tl = tables.tail[cand]
    slope = np.append(tables.A[cand] + s * tl, tables.mean)
    const = np.append(
        -rho * tables.A[cand] + tables.J1[cand] + fh[cand]
        + tl * (kappa_p + v_m + s * (cand * grids.dt - y_m)),
        -rho * tables.mean + 0.5 * tables.second_moment + fh_inf,
    )
    theta = np.append(cand * grids.dt, np.inf)
    return {"slope": slope, "const": const, "theta": theta}


# ---------------------------------------------------------------------------
# policy evaluation


def _idle_targets(policy: StationaryPolicy, grids: Grids, tables: QuadTables):
    """Per action node: sampling target z_j, the node k_j carrying v(z_j), and
    the far-field constant c_j with v(z_j) = v[k_j] + c_j."""
    m, dt, s = grids.m, grids.dt, grids.slope
    y_m = m * dt
    t = tables.t
    z = np.empty_like(t)
    z[: m + 1] = policy.z_map
    if tables.n > m:
        z[m + 1:] = np.maximum(t[m + 1:], policy.z_far)
    on_grid = z <= y_m * (1 + 1e-12)
    k = np.where(on_grid, np.minimum(np.rint(z / dt).astype(np.int64), m), m)
    c = np.where(on_grid, 0.0, s * (z - y_m))
    return z, k, c


def policy_evaluate(policy: StationaryPolicy, dist: ServiceDistribution, kappa_s: float,
                    kappa_p: float, grids: Grids, tables: QuadTables | None = None) -> Evaluation:
    """Solve the Poisson equation ``v = r - rho*g + P v`` with ``v(0) = 0`` and
    the far-field slope closure replacing the last node's equation.

    Unknowns are ``v_1..v_M``, prefix integrals ``G_J = int_[0,t_J] v(z(t)) dF``
    for ``J = 0..L`` (``L <= M``), and ``rho``. Each row then has at most five
    nonzeros besides the ``rho`` column.
    """
    if tables is None:
        tables = quad_tables(dist, grids)
    m, dt, s = grids.m, grids.dt, grids.slope
    y_m = m * dt
    n = tables.n
    theta = policy.theta_idx[:m]
    z, k, c = _idle_targets(policy, grids, tables)
    t = tables.t
    w = z - t
    w_cum = tables.cumint(w)
    r_cum = tables.cumint(kappa_s + t * w + 0.5 * w * w)
    c_cum = tables.cumint(c)

    never = theta == NEVER
    jj = np.where(never, n, theta)
    if np.any(jj > n):
        raise GridTooSmallError("candidate beyond quadrature horizon")
    big_l = int(min(m, jj.max()))

    i = np.arange(m)
    y = i * dt
    tail_j = tables.tail[jj]
    a_j = np.where(never, tables.mean, tables.A[jj])
    j1_j = np.where(never, 0.5 * tables.second_moment, tables.J1[jj])
    g_x, r_x, mass_x, const_x = _beyond_idle_terms(policy.z_far, kappa_s, grids, tables)
    g = a_j + w_cum[jj] + np.where(never, g_x, 0.0)
    r = y * a_j + j1_j + r_cum[jj] + np.where(never, r_x, tail_j * kappa_p)

    # column layout
    nv = m  # v_1..v_M -> 0..M-1
    g0 = nv  # G_0..G_L -> nv..nv+L
    rho_col = nv + big_l + 1
    size = rho_col + 1

    rows, cols, vals = [], [], []
    rhs = np.zeros(size)

    def add(rw, cl, vl):
        rows.append(np.broadcast_to(rw, np.shape(cl)).ravel())
        cols.append(np.asarray(cl).ravel())
        vals.append(np.broadcast_to(vl, np.shape(cl)).ravel().astype(float))

    def vcol(node):
        return np.asarray(node) - 1  # node 0 carries v = 0, filtered below

    # Poisson rows i = 0..M-1
    rhs[:m] = r.copy()
    add(i[1:], vcol(i[1:]), 1.0)
    add(i, np.full(m, rho_col), g)
    jl = np.minimum(jj, big_l)
    add(i, g0 + jl, -1.0)
    # beyond L = M the integrand is v(y_M) + c_j
    over = jj > big_l
    if np.any(over):
        extra_mass = tables.tail[big_l] - tables.tail[jj[over]]
        add(i[over], np.full(over.sum(), vcol(m)), -extra_mass)
        rhs[:m][over] += c_cum[jj[over]] - c_cum[big_l]
    # continuation after preemption, or beyond-horizon completions
    fin = ~never
    nxt = i[fin] + jj[fin]
    inside = nxt <= m
    add(i[fin][inside], vcol(nxt[inside]), -tail_j[fin][inside])
    out_rows = i[fin][~inside]
    add(out_rows, np.full(out_rows.size, vcol(m)), -tail_j[fin][~inside])
    rhs[out_rows] += tail_j[fin][~inside] * s * (nxt[~inside] * dt - y_m)
    if np.any(never):
        add(i[never], np.full(never.sum(), vcol(m)), -mass_x)
        rhs[:m][never] += const_x

    # slope closure
    add(np.array([m]), np.array([vcol(m)]), 1.0)
    if m - 1 >= 1:
        add(np.array([m]), np.array([vcol(m - 1)]), -1.0)
    rhs[m] = s * dt

    # prefix-integral rows: G_0 = atom0 * v(z_0); G_J = G_{J-1} + mass_J/2 (v(z_{J-1}) + v(z_J))
    base = m + 1
    add(np.array([base]), np.array([g0]), 1.0)
    add(np.array([base]), np.array([vcol(k[0])]), -tables.atom0)
    rhs[base] = tables.atom0 * c[0]
    if big_l >= 1:
        jr = np.arange(1, big_l + 1)
        half = 0.5 * tables.mass[jr - 1]
        rr = base + jr
        add(rr, g0 + jr, 1.0)
        add(rr, g0 + jr - 1, -1.0)
        add(rr, vcol(k[jr - 1]), -half)
        add(rr, vcol(k[jr]), -half)
        rhs[rr] = half * (c[jr - 1] + c[jr])

    rows = np.concatenate(rows)
    cols = np.concatenate(cols)
    vals = np.concatenate(vals)
    keep = cols >= 0  # drop v_0 = 0
    mat = sparse.csc_matrix((vals[keep], (rows[keep], cols[keep])), shape=(size, size))

    x = _solve(mat, rhs)
    v = np.concatenate([[0.0], x[:m]])
    rho = float(x[rho_col])

    resid = poisson_residual(v, rho, policy, kappa_s, kappa_p, grids, tables)
    rhs_norm = float(np.max(np.abs(rhs[:m])))
    if not resid <= 1e-9 * (1 + rhs_norm):
        raise SingularPolicyError(
            f"Poisson residual {resid:.3g} exceeds tolerance; condition estimate "
            f"{_condition_estimate(mat):.3g}"
        )
    return Evaluation(rho, v, resid, rhs_norm, g, r)


def _solve(mat, rhs):
    try:
        lu = splinalg.splu(mat)
    except RuntimeError as exc:
        raise SingularPolicyError(f"singular policy system ({exc})") from exc
    x = lu.solve(rhs)
    if not np.all(np.isfinite(x)):
        raise SingularPolicyError(
            f"non-finite solution; condition estimate {_condition_estimate(mat):.3g}"
        )
    # one refinement step keeps the residual at round-off level
    x += lu.solve(rhs - mat @ x)
    return x


def _condition_estimate(mat) -> float:
    try:
        lu = splinalg.splu(mat)
        inv = splinalg.LinearOperator(mat.shape, matvec=lu.solve, rmatvec=lambda b: lu.solve(b, "T"))
        return float(splinalg.onenormest(mat) * splinalg.onenormest(inv))
    except Exception:  # singular beyond repair
        return math.inf


def poisson_residual(v, rho, policy, kappa_s, kappa_p, grids, tables) -> float:
    """max_i |v_i - (r_i - rho*g_i + (P v)_i)| over i < M, evaluated directly
    from prefix sums (independent of the sparse assembly)."""
    m, dt, s = grids.m, grids.dt, grids.slope
    y_m = m * dt
    n = tables.n
    z, k, c = _idle_targets(policy, grids, tables)
    t = tables.t
    w = z - t
    vz = v[k] + c
    h = kappa_s + t * w + 0.5 * w * w - rho * w + vz  # h_I under the policy
    h_cum = tables.cumint(h)
    worst = 0.0
    i = np.arange(m)
    y = i * dt
    theta = policy.theta_idx[:m]
    never = theta == NEVER
    jj = np.where(never, n, theta)
    cont = np.zeros(m)
    fin = ~never
    nxt = i[fin] + jj[fin]
    cont[fin] = np.where(nxt <= m, v[np.minimum(nxt, m)], v[m] + s * (nxt * dt - y_m))
    tail_j = tables.tail[jj]
    q_fin = (y - rho) * tables.A[jj] + tables.J1[jj] + h_cum[jj] + tail_j * (kappa_p + cont)
    beyond = _beyond_idle_integral(policy.z_far, rho, v[m], kappa_s, grids, tables)
    q_nev = (y - rho) * tables.mean + 0.5 * tables.second_moment + h_cum[n] + beyond
    q = np.where(never, q_nev, q_fin)
    worst = float(np.max(np.abs(v[:m] - q)))
    return worst


# ---------------------------------------------------------------------------
# policy iteration


def policy_iteration(
    dist: ServiceDistribution,
    kappa_s: float,
    kappa_p: float,
    grids: Grids,
    eps_v: float | None = None,
    eps_rho: float = 1e-8,
    max_iter: int = 200,
    candidates=None,
    tables: QuadTables | None = None,
) -> SolvedPolicy:
    """Alternate idle envelope, busy improvement and policy evaluation from
    ``v = 0, rho = 0, theta = never`` until ``v``, ``rho`` and the threshold
    map all settle. ``eps_v`` defaults to ``1e-6 * (1 + |v(y_M)|)``.

    ``candidates`` restricts the finite preemption candidates (an empty list
    leaves only never-preempt).
    """
    if max_iter < 1:
        raise ValueError("max_iter must be at least 1")
    start = time.perf_counter()
    if tables is None:
        tables = quad_tables(dist, grids)
    cand = grids.candidates if candidates is None else np.asarray(candidates, dtype=np.int64)
    m = grids.m
    v = np.zeros(m + 1)
    rho = 0.0
    theta = np.full(m + 1, NEVER, dtype=np.int64)
    history = []
    lin_res = []
    rhs_norms = []
    converged = False
    policy = None
    idle = None
    for it in range(1, max_iter + 1):
        idle = idle_envelope(v, rho, kappa_s, grids, tables)
        fh, fh_inf = cumulative_fh(idle, v[m], kappa_s, grids, tables)
        theta_new = busy_improve(v, rho, fh, fh_inf, kappa_p, grids, tables, cand)
        # the guard ignores the first sweep: v = 0 there makes preemption look free
        if it > 1 and cand.size and np.all(theta_new == 1) and np.all(idle.z_index == np.arange(m + 1)):
            raise DegeneratePolicyError(
                "improvement chose theta = dt and immediate sampling everywhere; "
                "costs are too small for this grid"
            )
        policy = StationaryPolicy(idle.z, theta_new, grids.dt, idle.z_far,
                                  far_field_table(v[m], rho, fh, fh_inf, kappa_p, grids, tables, cand))
        ev = policy_evaluate(policy, dist, kappa_s, kappa_p, grids, tables)
        dv = float(np.max(np.abs(ev.v - v)))
        drho = abs(ev.rho - rho)
        same = bool(np.array_equal(theta_new, theta))
        history.append((dv, drho))
        lin_res.append(ev.residual)
        rhs_norms.append(ev.rhs_norm)
        log.debug("iter %d rho=%.10g dv=%.3g drho=%.3g same_theta=%s", it, ev.rho, dv, drho, same)
        tol_v = eps_v if eps_v is not None else 1e-6 * (1 + abs(ev.v[m]))
        v, rho, theta = ev.v, ev.rho, theta_new
        if dv <= tol_v and drho <= eps_rho and same:
            converged = True
            break
    if not converged:
        log.warning("policy iteration stopped after %d iterations without converging", max_iter)
    # final maps consistent with the returned (rho, v)
    idle = idle_envelope(v, rho, kappa_s, grids, tables)
    fh, fh_inf = cumulative_fh(idle, v[m], kappa_s, grids, tables)
    policy = StationaryPolicy(idle.z, theta, grids.dt, idle.z_far,
                              far_field_table(v[m], rho, fh, fh_inf, kappa_p, grids, tables, cand))
    return SolvedPolicy(
        policy=policy,
        rho=rho,
        v=v,
        h_idle=idle.h_idle,
        iterations=len(history),
        converged=converged,
        residuals=history,
        grids=grids,
        wall_time=time.perf_counter() - start,
        linear_residuals=lin_res,
        rhs_norms=rhs_norms,
    )


# ---------------------------------------------------------------------------
# exponential-service check


def exp_stopping_objective(tau: float, rho: float, h_idle, rate: float, kappa_p: float) -> float:
    """Stopping objective for exponential service with v(y) = y/rate:

        G(tau) = int_0^tau e^{-rate t} (t - rho + rate*h_I(t)) dt + e^{-rate tau} (kappa_p + tau/rate)
    """
    if tau < 0:
        raise ValueError("tau must be nonnegative")
    if tau == 0:
        return float(kappa_p)
    val, _ = integrate.quad(
        lambda t: math.exp(-rate * t) * (t - rho + rate * h_idle(t)),
        0.0, tau, limit=500, epsabs=1e-12, epsrel=1e-10,
    )
    return val + math.exp(-rate * tau) * (kappa_p + tau / rate)


def export_policy_csv(solved: SolvedPolicy, path) -> None:
    """Write ``y,v,z,theta`` (theta ``inf`` for never) with 12 significant digits."""
    g = solved.grids
    y = g.states
    theta = solved.policy.theta_map
    with open(path, "w", newline="", encoding="utf-8") as fh:
        wr = csv.writer(fh, lineterminator="\n")
        wr.writerow(["y", "v", "z", "theta"])
        for yi, vi, zi, ti in zip(y, solved.v, solved.policy.z_map, theta):
            wr.writerow([f"{yi:.12g}", f"{vi:.12g}", f"{zi:.12g}",
                         "inf" if math.isinf(ti) else f"{ti:.12g}"])
