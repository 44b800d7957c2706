import math

import numpy as np
import pytest
from scipy import optimize

from tailor.baselines import threshold_cost
from tailor.distributions import Exponential, LogNormal, Lomax
from tailor.grids import NEVER, grids_for, make_grids
from tailor.solver import (
    StationaryPolicy,
    busy_improve,
    cumulative_fh,
    eval_Q,
    exp_stopping_objective,
    export_policy_csv,
    idle_envelope,
    policy_evaluate,
    policy_iteration,
    poisson_residual,
    q_matrix,
    quad_tables,
)


def _setup(dist, grids, v, rho, kappa_s=1.0):
    tables = quad_tables(dist, grids)
    idle = idle_envelope(v, rho, kappa_s, grids, tables)
    fh, fh_inf = cumulative_fh(idle, v[grids.m], kappa_s, grids, tables)
    return tables, idle, fh, fh_inf


class TestQuadTables:
    @pytest.mark.parametrize("dist", [Exponential(1.0), Lomax(1.0, 2.1), LogNormal(-2.31, 6.0)])
    def test_monotone_and_consistent(self, dist):
        g = grids_for(dist, dt=0.05)
        tb = quad_tables(dist, g)
        assert np.all(np.diff(tb.A) >= 0)
        assert np.all(np.diff(tb.J1) >= 0)
        assert tb.atom0 + tb.mass.sum() + tb.tail[-1] == pytest.approx(1.0, abs=1e-14)

    def test_cumint_linear_exact_for_uniform_mass(self):
        d = Exponential(1.0)
        g = make_grids(0.01, 1.0, 0.5, 3.0, 5, 1.0)
        tb = quad_tables(d, g)
        # int_0^T t dF by trapezoid vs closed form 1 - e^-T (1 + T)
        got = tb.cumint(tb.t)[-1]
        T = tb.t[-1]
        assert got == pytest.approx(1 - math.exp(-T) * (1 + T), rel=1e-4)


class TestIdleEnvelope:
    def test_increasing_phi_samples_immediately(self, small_grids):
        g = small_grids
        v = np.zeros(g.m + 1)
        tb = quad_tables(Exponential(1.0), g)
        idle = idle_envelope(v, 0.0, 1.0, g, tb)
        y = g.states
        assert np.allclose(idle.z, y)
        assert np.allclose(idle.m_env, 1 + y * y / 2)

    def test_quadratic_minimizer(self):
        g = make_grids(0.01, 5.0, 1.0, 5.0, 5, 0.0)
        tb = quad_tables(Exponential(1.0), g)
        idle = idle_envelope(np.zeros(g.m + 1), 1.0, 0.0, g, tb)
        expected = np.maximum(g.states, 1.0)
        assert np.max(np.abs(idle.z - expected)) <= g.dt + 1e-12

    @pytest.mark.parametrize("rho", [2.5, 4.0, 7.3])
    def test_linear_value_threshold(self, rho):
        d = Exponential(1.0)
        g = grids_for(d, dt=0.01, y_cut=20.0)
        tb = quad_tables(d, g)
        idle = idle_envelope(g.states * d.mean, rho, 1.0, g, tb)
        expected = np.maximum(g.states, rho - d.mean)
        assert np.max(np.abs(idle.z - expected)) <= g.dt + 1e-12

    def test_tail_candidate_used_beyond_grid(self):
        d = Exponential(1.0)
        g = make_grids(0.1, 2.0, 1.0, 3.0, 3, 1.0)
        tb = quad_tables(d, g)
        idle = idle_envelope(g.states, 10.0, 1.0, g, tb)
        assert np.allclose(idle.z, 9.0)
        assert idle.z_far == pytest.approx(9.0)


class TestEvalQ:
    def test_never_reduction(self, small_grids):
        d = Lomax(1.0, 2.1)
        g = small_grids
        v = 0.9 * g.states
        tb, idle, fh, fh_inf = _setup(d, g, v, 2.0)
        for y in [0.0, 0.7, 2.0]:
            q = eval_Q(y, NEVER, 2.0, v, fh, fh_inf, 1.0, g, tb)
            assert q == pytest.approx(y * d.mean - 2.0 * d.mean + d.second_moment / 2 + fh_inf, rel=1e-13)

    def test_small_theta_limit(self):
        d = Exponential(1.0)
        g = make_grids(1e-4, 0.01, 1e-3, 1e-2, 3, 1.0)
        v = g.states ** 2
        tb, idle, fh, fh_inf = _setup(d, g, v, 2.0)
        q = eval_Q(0.005, 1, 2.0, v, fh, fh_inf, 3.0, g, tb)
        assert q == pytest.approx(3.0 + 0.005 ** 2, abs=5e-4)

    def test_affine_in_y_for_linear_v(self, small_grids):
        d = Exponential(1.0)
        g = small_grids
        v = g.states.copy()
        tb, idle, fh, fh_inf = _setup(d, g, v, 2.4)
        for j in [1, 3, 10, int(g.candidates[-1]), NEVER]:
            ys = np.arange(0, 11) * g.dt
            qs = np.array([eval_Q(y, j, 2.4, v, fh, fh_inf, 1.0, g, tb) for y in ys])
            assert np.allclose(np.diff(qs, 2), 0.0, atol=1e-12)

    def test_exponential_translation_invariance(self, small_grids):
        d = Exponential(1.0)
        g = small_grids
        v = g.states.copy()
        tb, idle, fh, fh_inf = _setup(d, g, v, 2.4)
        q = q_matrix(v, 2.4, fh, fh_inf, 1.0, g, tb)
        # Q(y, theta) - y is the same function of theta at every y
        shifted = q - g.states[:, None]
        assert np.allclose(shifted, shifted[0], atol=1e-12)


class TestBusyImprove:
    @staticmethod
    def naive(v, rho, fh, fh_inf, kappa_p, g, tb):
        out = []
        cands = list(g.candidates) + [NEVER]
        for i in range(g.m + 1):
            y = i * g.dt
            best, arg = None, None
            for c in cands:
                q = eval_Q(y, int(c), rho, v, fh, fh_inf, kappa_p, g, tb)
                if best is None or q < best:
                    best, arg = q, int(c)
            out.append(arg)
        return np.array(out)

    @pytest.mark.parametrize("seed", [0, 1, 2])
    def test_matches_naive_bitwise(self, small_grids, seed):
        g = small_grids
        assert g.m + 1 == 21 and g.candidates.size + 1 == 15
        d = Lomax(1.0, 2.1)
        rng = np.random.default_rng(seed)
        v = np.concatenate([[0.0], np.cumsum(rng.uniform(0, 2, g.m))])
        rho = float(rng.uniform(1, 4))
        tb, idle, fh, fh_inf = _setup(d, g, v, rho)
        q = q_matrix(v, rho, fh, fh_inf, 1.0, g, tb)
        for i in range(g.m + 1):
            for c, j in enumerate(list(g.candidates) + [NEVER]):
                assert q[i, c] == eval_Q(i * g.dt, int(j), rho, v, fh, fh_inf, 1.0, g, tb)
        got = busy_improve(v, rho, fh, fh_inf, 1.0, g, tb)
        assert np.array_equal(got, self.naive(v, rho, fh, fh_inf, 1.0, g, tb))

    def test_huge_kappa_p_never(self, small_grids):
        g = small_grids
        d = Lomax(1.0, 2.1)
        v = d.mean * g.states
        tb, idle, fh, fh_inf = _setup(d, g, v, 2.0)
        kappa_p = 1e3 * (g.y_cut * d.mean + d.second_moment)
        assert np.all(busy_improve(v, 2.0, fh, fh_inf, kappa_p, g, tb) == NEVER)


class TestPolicyEvaluate:
    def test_renewal_reward_oracle(self):
        d = Exponential(1.0)
        g = grids_for(d, dt=0.01, y_cut=20.0)
        z = np.maximum(g.states, 1.0)
        pol = StationaryPolicy(z, np.full(g.m + 1, NEVER), g.dt, z_far=1.0)
        ev = policy_evaluate(pol, d, 1.0, 1.0, g)
        assert ev.rho == pytest.approx(threshold_cost(d, 1.0, 1.0), rel=0.005)
        assert ev.v[0] == 0.0
        assert np.allclose(np.diff(ev.v) / g.dt, d.mean, rtol=0.02)

    def test_residual_small(self, lomax_coarse):
        d, g, tb, solved = lomax_coarse
        ev = policy_evaluate(solved.policy, d, 1.0, 1.0, g, tb)
        assert ev.residual <= 1e-9 * (1 + ev.rhs_norm)
        assert poisson_residual(ev.v, ev.rho, solved.policy, 1.0, 1.0, g, tb) == ev.residual


class TestPolicyIteration:
    def test_exponential_linear_value(self, exp_solved):
        d, g, tb, solved = exp_solved
        assert solved.converged
        assert np.max(np.abs(solved.v - g.states)) <= 0.05

    def test_no_preemption_reduces_to_threshold(self):
        d = Exponential(1.0)
        g = grids_for(d, dt=0.01, y_cut=20.0)
        solved = policy_iteration(d, 1.0, 1.0, g, candidates=[])
        assert np.all(solved.policy.theta_idx == NEVER)
        best = optimize.minimize_scalar(lambda b: threshold_cost(d, 1.0, b), bounds=(0, 10), method="bounded")
        assert solved.rho == pytest.approx(best.fun, rel=0.01)

    def test_max_iter_validation(self, small_grids):
        with pytest.raises(ValueError):
            policy_iteration(Exponential(1.0), 1.0, 1.0, small_grids, max_iter=0)

    def test_unconverged_is_flagged(self):
        d = Lomax(1.0, 2.1)
        g = grids_for(d, dt=0.05)
        solved = policy_iteration(d, 1.0, 1.0, g, max_iter=2)
        assert not solved.converged
        assert solved.iterations == 2

    def test_csv_export_deterministic(self, exp_solved, tmp_path):
        *_, solved = exp_solved
        export_policy_csv(solved, tmp_path / "a.csv")
        export_policy_csv(solved, tmp_path / "b.csv")
        a = (tmp_path / "a.csv").read_bytes()
        assert a == (tmp_path / "b.csv").read_bytes()
        assert a.startswith(b"y,v,z,theta\n") and b"\r" not in a


class TestExpStopping:
    def test_zero(self):
        assert exp_stopping_objective(0.0, 3.0, lambda t: t, 1.0, 2.5) == 2.5

    def test_closed_form(self):
        assert exp_stopping_objective(1.0, 0.0, lambda t: 0.0, 1.0, 1.0) == pytest.approx(1.0, abs=1e-12)

    @pytest.mark.parametrize("lam, tau, kp", [(1.0, 0.3, 1.0), (2.0, 2.0, 0.5)])
    def test_h_zero_general(self, lam, tau, kp):
        got = exp_stopping_objective(tau, 0.0, lambda t: 0.0, lam, kp)
        ref = (1 - math.exp(-lam * tau) * (1 + lam * tau)) / lam ** 2 + math.exp(-lam * tau) * (kp + tau / lam)
        assert got == pytest.approx(ref, rel=1e-10)

    def test_negative(self):
        with pytest.raises(ValueError):
            exp_stopping_objective(-1.0, 0.0, lambda t: 0.0, 1.0, 1.0)
