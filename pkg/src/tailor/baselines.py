"""No-preemption benchmark policies: zero-wait (ZW-NP) and the AoI-optimal
threshold sampler without preemption (AoI-NP)."""

from __future__ import annotations

import math
from dataclasses import dataclass

from .distributions import ServiceDistribution

ZW_NP = "ZW-NP"
AOI_NP = "AoI-NP"


class BracketError(RuntimeError):
    pass


@dataclass(frozen=True)
class BaselineResult:
    name: str
    rho: float
    beta: float = 0.0


@dataclass(frozen=True)
class ThresholdPolicy:
    """Sample once the AoI reaches ``beta`` (immediately if already past it);
    never preempt."""

    beta: float = 0.0

    def sample_target(self, aoi: float) -> float:
        return max(aoi, self.beta)

    def threshold(self, y: float) -> float:
        return math.inf


def zero_wait_cost(dist: ServiceDistribution, kappa_s: float) -> float:
    """Renewal-reward cost of sampling at every delivery without preemption:
    (E[Y]^2 + E[Y^2]/2 + kappa_s) / E[Y]."""
    m1, m2 = dist.moments()
    return (m1 * m1 + 0.5 * m2 + kappa_s) / m1


def threshold_cost(dist: ServiceDistribution, kappa_s: float, beta: float) -> float:
    """Long-run cost of :class:`ThresholdPolicy` ``beta``.

    A cycle starts at a delivery with AoI ``Yp`` (the previous service time),
    waits ``w = max(0, beta - Yp)`` and serves a fresh ``Y``; with ``Yp`` and
    ``Y`` independent every cross moment reduces to partial moments of ``Yp``
    below ``beta``.
    """
    if beta < 0:
        raise ValueError("beta must be nonnegative")
    m1, m2 = dist.moments()
    a, j1 = (float(x) for x in dist.partial_expectations(beta))
    tail_b = float(dist.tail(beta))
    p0 = 1.0 - tail_b  # P(Yp <= beta)
    q1 = a - beta * tail_b  # E[Yp; Yp <= beta]
    q2 = 2.0 * j1 - beta * beta * tail_b  # E[Yp^2; Yp <= beta]
    ew = beta * p0 - q1
    eyw = beta * q1 - q2
    ew2 = beta * beta * p0 - 2.0 * beta * q1 + q2
    num = eyw + m1 * m1 + 0.5 * ew2 + ew * m1 + 0.5 * m2 + kappa_s
    return num / (ew + m1)


def aoi_np_solve(dist: ServiceDistribution, kappa_s: float, xtol: float = 1e-10) -> BaselineResult:
    """Minimize :func:`threshold_cost` over ``beta >= 0`` by golden section on
    ``[0, 10*(E[Y] + sqrt(E[Y^2]))]``, doubling the bracket (at most six
    times) while the minimizer sits on its upper end."""
    m1, m2 = dist.moments()
    hi = 10.0 * (m1 + math.sqrt(m2))

    def cost(b):
        return threshold_cost(dist, kappa_s, b)

    for _ in range(7):
        beta, rho = _golden(cost, 0.0, hi, xtol)
        if beta < hi * (1 - 1e-6):
            break
        hi *= 2.0
    else:
        raise BracketError(f"minimizer not bracketed below beta={hi / 2:g}")
    rho0 = cost(0.0)
    if rho0 <= rho:
        beta, rho = 0.0, rho0
    fixed = max(0.0, rho - m1)
    if abs(beta - fixed) > 1e-4 * (1 + rho):
        raise RuntimeError(f"fixed-point check failed: beta={beta:.8g}, rho-E[Y]={rho - m1:.8g}")
    return BaselineResult(AOI_NP, rho, beta)


def _golden(f, lo, hi, xtol):
    invphi = (math.sqrt(5) - 1) / 2
    c = hi - invphi * (hi - lo)
    d = lo + invphi * (hi - lo)
    fc, fd = f(c), f(d)
    while hi - lo > xtol * max(1.0, abs(c)):
        if fc <= fd:
            hi, d, fd = d, c, fc
            c = hi - invphi * (hi - lo)
            fc = f(c)
        else:
            lo, c, fc = c, d, fd
            d = lo + invphi * (hi - lo)
            fd = f(d)
    x = 0.5 * (lo + hi)
    return x, f(x)


def zero_wait(dist: ServiceDistribution, kappa_s: float) -> BaselineResult:
    return BaselineResult(ZW_NP, zero_wait_cost(dist, kappa_s), 0.0)
