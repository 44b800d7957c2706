import math

import numpy as np
import pytest
from scipy import integrate

from tailor.baselines import (
    BracketError,
    ThresholdPolicy,
    aoi_np_solve,
    threshold_cost,
    zero_wait,
    zero_wait_cost,
)
from tailor.distributions import Exponential, LogNormal, Lomax, Tabulated


def _renewal_oracle(d, kappa_s, beta):
    """Threshold-policy cost by direct double quadrature over (Yp, Y)."""
    m1, m2 = d.moments()

    def w(yp):
        return max(0.0, beta - yp)

    ew = integrate.quad(lambda x: w(x) * d.pdf(x), 0, beta, limit=200)[0] if beta > 0 else 0.0
    # area over a cycle: int_0^{w+Y} (Yp + t) dt
    def f(x):
        return d.pdf(x) * (x * (w(x) + m1) + 0.5 * (w(x) ** 2 + 2 * w(x) * m1 + m2))

    earea = integrate.quad(f, 0, beta, limit=200)[0] if beta > 0 else 0.0
    earea += integrate.quad(f, beta, np.inf, limit=400)[0]
    return (earea + kappa_s) / (ew + m1)


class TestZeroWait:
    def test_exponential(self):
        assert zero_wait_cost(Exponential(1.0), 1.0) == pytest.approx(3.0, rel=1e-15)

    def test_lognormal(self):
        assert zero_wait_cost(LogNormal(-1.31, 4.0), 1.0) == pytest.approx(56.8, rel=0.01)

    def test_lomax(self):
        assert zero_wait_cost(Lomax(1.0, 2.1), 1.0) == pytest.approx(12.0, rel=0.01)

    def test_named(self):
        r = zero_wait(Exponential(1.0), 1.0)
        assert (r.name, r.beta) == ("ZW-NP", 0.0)


class TestThresholdCost:
    @pytest.mark.parametrize("d", [Exponential(1.0), Lomax(1.0, 2.1), LogNormal(-1.31, 4.0)])
    @pytest.mark.parametrize("beta", [0.0, 0.5, 3.0])
    def test_against_double_integral(self, d, beta):
        assert threshold_cost(d, 1.0, beta) == pytest.approx(_renewal_oracle(d, 1.0, beta), rel=1e-7)

    def test_zero_threshold_is_zero_wait(self):
        d = Lomax(1.0, 2.1)
        assert threshold_cost(d, 1.0, 0.0) == pytest.approx(zero_wait_cost(d, 1.0), rel=1e-14)

    def test_negative_beta(self):
        with pytest.raises(ValueError):
            threshold_cost(Exponential(1.0), 1.0, -1.0)


class TestAoiNp:
    @pytest.mark.parametrize("d", [Exponential(1.0), Lomax(1.0, 2.1), LogNormal(-1.31, 4.0),
                                   LogNormal(-2.31, 6.0)])
    def test_fixed_point_and_optimality(self, d):
        r = aoi_np_solve(d, 1.0)
        assert r.beta == pytest.approx(max(0.0, r.rho - d.mean), abs=1e-4 * (1 + r.rho))
        grid = np.linspace(0, 3 * r.beta + 1, 400)
        assert r.rho <= min(threshold_cost(d, 1.0, b) for b in grid) + 1e-12
        assert r.rho <= zero_wait_cost(d, 1.0)

    def test_exponential_value(self):
        r = aoi_np_solve(Exponential(1.0), 1.0)
        assert r.rho == pytest.approx(2.55623, abs=1e-4)

    def test_lognormal_reported(self):
        assert aoi_np_solve(LogNormal(-1.31, 4.0), 1.0).rho == pytest.approx(16.0, rel=0.15)

    def test_degenerates_to_zero_wait(self):
        # service times near 1 and free sampling: the threshold (about 0.5)
        # sits below almost every service time, so waiting almost never occurs
        d = Tabulated(np.linspace(0.95, 1.05, 2001))
        r = aoi_np_solve(d, 0.0)
        assert r.beta < 0.95
        assert r.rho == pytest.approx(zero_wait_cost(d, 0.0), rel=1e-3)

    def test_zero_threshold_when_optimum_is_at_zero(self, monkeypatch):
        import tailor.baselines as b

        monkeypatch.setattr(b, "threshold_cost", lambda d, k, beta: 0.5 + beta)
        r = aoi_np_solve(Exponential(2.0), 0.0)
        assert (r.beta, r.rho) == (0.0, 0.5)

    def test_bracket_failure(self, monkeypatch):
        import tailor.baselines as b

        monkeypatch.setattr(b, "threshold_cost", lambda d, k, beta: -beta)
        with pytest.raises(BracketError):
            aoi_np_solve(Exponential(1.0), 1.0)


class TestThresholdPolicy:
    def test_targets(self):
        p = ThresholdPolicy(2.0)
        assert p.sample_target(0.5) == 2.0
        assert p.sample_target(3.0) == 3.0
        assert math.isinf(p.threshold(1.0))
