"""Service-time distributions.

Every family exposes the quantities the solver and simulator consume: tail,
density, hazard, residual-life CDF, the partial expectations

    A(theta)  = int_0^theta  tail(t) dt        = E[min(Y, theta)]
    J1(theta) = int_0^theta  t * tail(t) dt

and an inverse-CDF sampler. All array-valued methods accept scalars or numpy
arrays; ``theta = inf`` is allowed in :meth:`partial_expectations`.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy import special

__all__ = [
    "TAIL_FLOOR",
    "ServiceDistribution",
    "Exponential",
    "Lomax",
    "LogNormal",
    "Tabulated",
    "HazardUndefinedError",
    "TraceError",
    "TraceParseError",
    "NegativeSampleError",
    "TooFewSamplesError",
    "from_samples",
    "make_distribution",
    "FAMILIES",
]

TAIL_FLOOR = 1e-300
MIN_TRACE_SAMPLES = 100


class HazardUndefinedError(ValueError):
    """Raised when a conditional quantity is requested beyond the support."""


class TraceError(ValueError):
    """Base class for delay-trace ingestion failures."""


class TraceParseError(TraceError):
    def __init__(self, path, lineno: int, text: str):
        super().__init__(f"{path}, line {lineno}: cannot parse {text!r} as a number")
        self.lineno = lineno


class NegativeSampleError(TraceError):
    def __init__(self, path, lineno: int, value: float):
        super().__init__(f"{path}, line {lineno}: negative service time {value!r}")
        self.lineno = lineno


class TooFewSamplesError(TraceError):
    pass


class ServiceDistribution:
    """Base class; subclasses implement ``tail``, ``pdf``, ``ppf``, the
    partial expectations and the moments."""

    name = "abstract"

    def tail(self, t):
        raise NotImplementedError

    def pdf(self, t):
        raise NotImplementedError

    def ppf(self, u):
        raise NotImplementedError

    def partial_expectations(self, theta):
        raise NotImplementedError

    def moments(self) -> tuple[float, float]:
        raise NotImplementedError

    @property
    def mean(self) -> float:
        return self.moments()[0]

    @property
    def second_moment(self) -> float:
        return self.moments()[1]

    def cdf(self, t):
        return 1.0 - self.tail(t)

    def density(self, t):
        return self.pdf(t)

    def _check_support(self, b) -> np.ndarray:
        b = np.asarray(b, dtype=float)
        tb = self.tail(b)
        if np.any(tb <= TAIL_FLOOR):
            raise HazardUndefinedError(
                f"{self.name}: tail probability at service age {b} is below {TAIL_FLOOR:g}"
            )
        return tb

    def hazard(self, b):
        """Completion rate f(b) / tail(b) at service age ``b``."""
        tb = self._check_support(b)
        out = self.pdf(b) / tb
        return float(out) if np.ndim(out) == 0 else out

    def residual_cdf(self, b, t):
        """P(Y - b <= t | Y >= b)."""
        tb = self._check_support(b)
        t = np.asarray(t, dtype=float)
        if np.any(t < 0):
            raise ValueError("residual time must be nonnegative")
        out = 1.0 - self.tail(np.asarray(b) + t) / tb
        return float(out) if np.ndim(out) == 0 else out

    def partial_mean_above(self, theta: float) -> float:
        """E[Y ; Y > theta]."""
        a, _ = self.partial_expectations(theta)
        return self.mean - (float(a) - theta * float(self.tail(theta)))

    def sample(self, rng: np.random.Generator, size=None):
        """Draw from the distribution by inverse CDF (deterministic in ``rng``)."""
        u = rng.random(size)
        return self.ppf(u)

    def quantile_tail(self, eps: float) -> float:
        """Smallest t with tail(t) <= eps, by bisection."""
        if not 0 < eps < 1:
            raise ValueError("eps must lie in (0, 1)")
        lo, hi = 0.0, max(self.mean, 1e-12)
        while self.tail(hi) > eps:
            lo, hi = hi, 2.0 * hi
            if hi > 1e300:
                raise ValueError(f"{self.name}: tail never falls below {eps}")
        for _ in range(200):
            mid = 0.5 * (lo + hi)
            if self.tail(mid) > eps:
                lo = mid
            else:
                hi = mid
            if hi - lo <= 1e-12 * hi:
                break
        return hi

    def to_dict(self) -> dict:
        raise NotImplementedError


def _scalar_or_array(x):
    return float(x) if np.ndim(x) == 0 else x


@dataclass(frozen=True)
class Exponential(ServiceDistribution):
    rate: float
    name = "exponential"

    def __post_init__(self):
        if not (self.rate > 0 and math.isfinite(self.rate)):
            raise ValueError(f"exponential rate must be positive, got {self.rate}")

    def tail(self, t):
        t = np.asarray(t, dtype=float)
        return _scalar_or_array(np.exp(-self.rate * np.maximum(t, 0.0)))

    def pdf(self, t):
        t = np.asarray(t, dtype=float)
        return _scalar_or_array(np.where(t < 0, 0.0, self.rate * np.exp(-self.rate * np.maximum(t, 0.0))))

    def ppf(self, u):
        return _scalar_or_array(-np.log1p(-np.asarray(u, dtype=float)) / self.rate)

    def hazard(self, b):
        self._check_support(b)
        return _scalar_or_array(np.full(np.shape(b), self.rate))

    def partial_expectations(self, theta):
        th = np.asarray(theta, dtype=float)
        lam = self.rate
        e = np.exp(-lam * th)
        a = -np.expm1(-lam * th) / lam
        with np.errstate(invalid="ignore"):
            j1 = (1.0 - e * (1.0 + lam * th)) / lam**2
        j1 = np.where(np.isinf(th), 1.0 / lam**2, j1)
        return _scalar_or_array(a), _scalar_or_array(j1)

    def moments(self):
        return 1.0 / self.rate, 2.0 / self.rate**2

    def to_dict(self):
        return {"family": "exponential", "rate": self.rate}


@dataclass(frozen=True)
class Lomax(ServiceDistribution):
    """Pareto type II: tail(t) = (scale / (scale + t)) ** shape."""

    scale: float
    shape: float
    name = "lomax"

    def __post_init__(self):
        if not self.scale > 0:
            raise ValueError(f"lomax scale must be positive, got {self.scale}")
        if not self.shape > 2:
            raise ValueError(
                f"lomax shape must exceed 2 (finite second moment), got {self.shape}"
            )

    def tail(self, t):
        t = np.maximum(np.asarray(t, dtype=float), 0.0)
        return _scalar_or_array((self.scale / (self.scale + t)) ** self.shape)

    def pdf(self, t):
        t = np.asarray(t, dtype=float)
        s, a = self.scale, self.shape
        val = a / s * (s / (s + np.maximum(t, 0.0))) ** (a + 1.0)
        return _scalar_or_array(np.where(t < 0, 0.0, val))

    def hazard(self, b):
        self._check_support(b)
        return _scalar_or_array(self.shape / (self.scale + np.asarray(b, dtype=float)))

    def ppf(self, u):
        u = np.asarray(u, dtype=float)
        return _scalar_or_array(self.scale * np.expm1(-np.log1p(-u) / self.shape))

    def partial_expectations(self, theta):
        th = np.asarray(theta, dtype=float)
        s, a = self.scale, self.shape
        r = s / (s + th)  # 0 at theta = inf
        big_a = s / (a - 1.0) * (1.0 - r ** (a - 1.0))
        # int_0^th (s+t) tail dt = s^2/(a-2) * (1 - r^(a-2))
        j1 = s * s / (a - 2.0) * (1.0 - r ** (a - 2.0)) - s * big_a
        return _scalar_or_array(big_a), _scalar_or_array(j1)

    def moments(self):
        s, a = self.scale, self.shape
        return s / (a - 1.0), 2.0 * s * s / ((a - 1.0) * (a - 2.0))

    def to_dict(self):
        return {"family": "lomax", "scale": self.scale, "shape": self.shape}


@dataclass(frozen=True)
class LogNormal(ServiceDistribution):
    """ln Y ~ Normal(mu, sigma2)."""

    mu: float
    sigma2: float
    name = "lognormal"

    def __post_init__(self):
        if not self.sigma2 > 0:
            raise ValueError(f"lognormal log-variance must be positive, got {self.sigma2}")

    @property
    def sigma(self) -> float:
        return math.sqrt(self.sigma2)

    def _z(self, t):
        t = np.asarray(t, dtype=float)
        with np.errstate(divide="ignore"):
            return (np.log(np.maximum(t, 0.0)) - self.mu) / self.sigma

    def tail(self, t):
        # erfc form keeps tail values accurate far beyond the bulk
        return _scalar_or_array(0.5 * special.erfc(self._z(t) / math.sqrt(2.0)))

    def pdf(self, t):
        t = np.asarray(t, dtype=float)
        z = self._z(t)
        with np.errstate(divide="ignore", invalid="ignore"):
            val = np.exp(-0.5 * z * z) / (np.maximum(t, 0.0) * self.sigma * math.sqrt(2 * math.pi))
        return _scalar_or_array(np.where(t > 0, val, 0.0))

    def ppf(self, u):
        u = np.asarray(u, dtype=float)
        return _scalar_or_array(np.exp(self.mu + self.sigma * special.ndtri(u)))

    def sample(self, rng, size=None):
        return _scalar_or_array(np.exp(self.mu + self.sigma * rng.standard_normal(size)))

    def partial_expectations(self, theta):
        th = np.asarray(theta, dtype=float)
        z = self._z(th)
        s2, s = self.sigma2, self.sigma
        m1_below = math.exp(self.mu + s2 / 2) * special.ndtr(z - s)
        m2_below = math.exp(2 * self.mu + 2 * s2) * special.ndtr(z - 2 * s)
        tl = 0.5 * special.erfc(z / math.sqrt(2.0))
        with np.errstate(invalid="ignore"):
            th_tail = np.where(np.isinf(th), 0.0, th * tl)
            th2_tail = np.where(np.isinf(th), 0.0, th * th * tl)
        return _scalar_or_array(th_tail + m1_below), _scalar_or_array(0.5 * (th2_tail + m2_below))

    def moments(self):
        return (
            math.exp(self.mu + self.sigma2 / 2),
            math.exp(2 * self.mu + 2 * self.sigma2),
        )

    def to_dict(self):
        return {"family": "lognormal", "mu": self.mu, "sigma2": self.sigma2}


@dataclass(frozen=True, eq=False)
class Tabulated(ServiceDistribution):
    """Empirical distribution with a piecewise-linear CDF through the order
    statistics: F(x_(k)) = k/n, F(0) = 0. Repeated values become atoms."""

    samples: np.ndarray
    units: str = "time"
    name = "tabulated"
    _xs: np.ndarray = field(init=False, repr=False)
    _fs: np.ndarray = field(init=False, repr=False)
    _a_knots: np.ndarray = field(init=False, repr=False)
    _j_knots: np.ndarray = field(init=False, repr=False)
    _bandwidth: float = field(init=False, repr=False)

    def __post_init__(self):
        x = np.sort(np.asarray(self.samples, dtype=float))
        if x.size < 1 or not np.all(np.isfinite(x)) or x[0] < 0:
            raise ValueError("tabulated samples must be finite and nonnegative")
        n = x.size
        xs = np.concatenate([[0.0], x])
        fs = np.arange(n + 1) / n
        tl = 1.0 - fs
        h = np.diff(xs)
        # exact integrals of the piecewise-linear tail
        a_seg = 0.5 * h * (tl[:-1] + tl[1:])
        # int t*tail over a segment: tail linear, Simpson is exact
        mid_t = 0.5 * (xs[:-1] + xs[1:])
        mid_tl = 0.5 * (tl[:-1] + tl[1:])
        j_seg = h / 6.0 * (xs[:-1] * tl[:-1] + 4 * mid_t * mid_tl + xs[1:] * tl[1:])
        q75, q25 = np.percentile(x, [75, 25])
        object.__setattr__(self, "samples", x)
        object.__setattr__(self, "_xs", xs)
        object.__setattr__(self, "_fs", fs)
        object.__setattr__(self, "_a_knots", np.concatenate([[0.0], np.cumsum(a_seg)]))
        object.__setattr__(self, "_j_knots", np.concatenate([[0.0], np.cumsum(j_seg)]))
        object.__setattr__(self, "_bandwidth", (q75 - q25) / 10.0)

    def _locate(self, t):
        t = np.asarray(t, dtype=float)
        xs = self._xs
        k = np.clip(np.searchsorted(xs, t, side="right"), 1, xs.size - 1)
        x0, x1 = xs[k - 1], xs[k]
        h = x1 - x0
        with np.errstate(invalid="ignore", divide="ignore"):
            frac = np.where(h > 0, (t - x0) / np.where(h > 0, h, 1.0), 1.0)
        return t, k, np.clip(frac, 0.0, 1.0)

    def cdf(self, t):
        t, k, frac = self._locate(t)
        f = self._fs[k - 1] + frac * (self._fs[k] - self._fs[k - 1])
        f = np.where(t >= self._xs[-1], 1.0, np.where(t < 0, 0.0, f))
        return _scalar_or_array(f)

    def tail(self, t):
        return _scalar_or_array(1.0 - np.asarray(self.cdf(t)))

    def pdf(self, t):
        t, k, _ = self._locate(t)
        h = self._xs[k] - self._xs[k - 1]
        with np.errstate(divide="ignore", invalid="ignore"):
            val = np.where(h > 0, (self._fs[k] - self._fs[k - 1]) / np.where(h > 0, h, 1.0), 0.0)
        val = np.where((t < 0) | (t >= self._xs[-1]), 0.0, val)
        return _scalar_or_array(val)

    def hazard(self, b):
        """Kernel-smoothed hazard: Gaussian KDE density over the empirical tail."""
        tb = self._check_support(b)
        bw = self._bandwidth
        if bw <= 0:
            raise HazardUndefinedError("degenerate sample (zero interquartile range)")
        b = np.atleast_1d(np.asarray(b, dtype=float))
        z = (b[:, None] - self.samples[None, :]) / bw
        dens = np.exp(-0.5 * z * z).sum(axis=1) / (self.samples.size * bw * math.sqrt(2 * math.pi))
        out = dens / np.atleast_1d(tb)
        return float(out[0]) if np.ndim(tb) == 0 else out

    def ppf(self, u):
        return _scalar_or_array(np.interp(np.asarray(u, dtype=float), self._fs, self._xs))

    def partial_expectations(self, theta):
        th = np.asarray(theta, dtype=float)
        finite = np.where(np.isinf(th), self._xs[-1], np.minimum(th, self._xs[-1]))
        t, k, frac = self._locate(finite)
        x0 = self._xs[k - 1]
        tl0 = 1.0 - self._fs[k - 1]
        tl_t = 1.0 - np.asarray(self.cdf(t))
        d = t - x0
        a = self._a_knots[k - 1] + 0.5 * d * (tl0 + tl_t)
        mid = x0 + 0.5 * d
        j1 = self._j_knots[k - 1] + d / 6.0 * (x0 * tl0 + 4 * mid * 0.5 * (tl0 + tl_t) + t * tl_t)
        return _scalar_or_array(a), _scalar_or_array(j1)

    def moments(self):
        return float(self._a_knots[-1]), 2.0 * float(self._j_knots[-1])

    def to_dict(self):
        return {"family": "tabulated", "n": int(self.samples.size), "units": self.units}


def from_samples(path, units: str = "time") -> Tabulated:
    """Build a :class:`Tabulated` distribution from a delay trace.

    The file holds one nonnegative decimal per line; blank lines and lines
    starting with ``#`` are skipped.
    """
    path = Path(path)
    values = []
    with path.open(encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            try:
                x = float(line)
            except ValueError:
                raise TraceParseError(path, lineno, line) from None
            if not math.isfinite(x):
                raise TraceParseError(path, lineno, line)
            if x < 0:
                raise NegativeSampleError(path, lineno, x)
            values.append(x)
    if len(values) < MIN_TRACE_SAMPLES:
        raise TooFewSamplesError(
            f"{path}: too few samples ({len(values)} < {MIN_TRACE_SAMPLES})"
        )
    return Tabulated(np.array(values), units=units)


FAMILIES = {
    "exponential": (Exponential, ("rate",)),
    "lomax": (Lomax, ("scale", "shape")),
    "lognormal": (LogNormal, ("mu", "sigma2")),
}


def make_distribution(family: str, **params) -> ServiceDistribution:
    try:
        cls, names = FAMILIES[family]
    except KeyError:
        raise ValueError(
            f"unknown distribution family {family!r}; supported: {', '.join(sorted(FAMILIES))}"
        ) from None
    missing = set(names) - set(params)
    extra = set(params) - set(names)
    if missing or extra:
        raise ValueError(f"{family} expects parameters {names}, got {sorted(params)}")
    return cls(**{k: float(params[k]) for k in names})
