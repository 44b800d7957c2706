"""Event-driven Monte Carlo of the sampling/preemption system.

A cycle runs from one delivery to the next: wait in idle until the AoI hits
the sampling target, pay ``kappa_s``, then serve fresh updates, preempting
(and paying ``kappa_p``) whenever the service age reaches the threshold of
the current busy-start AoI. The AoI drops to the delivered packet's service
time at delivery and is untouched by preemptions.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .distributions import ServiceDistribution

CHUNK = 1 << 16


class SimulationError(RuntimeError):
    pass


class PreemptionCapError(SimulationError):
    pass


@dataclass(frozen=True)
class SimConfig:
    cycles: int = 1_010_101  # 10**6 after the 1% warmup
    warmup_cycles: int | None = None  # default: 1% of cycles
    batches: int = 50
    seed: int = 2024
    max_preemptions_per_chain: int = 1_000_000
    replication: int = 0

    def __post_init__(self):
        if self.batches < 10:
            raise ValueError("need at least 10 batches")
        if self.cycles < self.batches:
            raise ValueError("cycles must be at least the number of batches")
        if self.warmup >= self.cycles:
            raise ValueError("warmup must be shorter than the run")
        if self.cycles - self.warmup < self.batches:
            raise ValueError("too few post-warmup cycles for the batch count")

    @property
    def warmup(self) -> int:
        if self.warmup_cycles is None:
            return self.cycles // 100
        return self.warmup_cycles


@dataclass
class SimResult:
    avg_cost: float
    stderr: float
    n_samples: int
    n_preemptions: int
    n_deliveries: int
    aoi_time_integral: float
    impulse_cost_total: float
    elapsed_sim_time: float
    batch_means: np.ndarray = field(repr=False)
    trajectory: list | None = field(default=None, repr=False)

    def ci(self, z: float = 1.96) -> tuple[float, float]:
        return self.avg_cost - z * self.stderr, self.avg_cost + z * self.stderr


def make_rng(seed: int, replication: int = 0) -> np.random.Generator:
    """Counter-based stream ``(seed, replication)``."""
    ss = np.random.SeedSequence(seed, spawn_key=(replication,))
    return np.random.Generator(np.random.Philox(ss))


class _Draws:
    """Buffered service-time draws from one stream."""

    def __init__(self, dist, rng):
        self.dist, self.rng = dist, rng
        self.buf, self.pos = [], 0

    def next(self) -> float:
        if self.pos >= len(self.buf):
            self.buf = np.asarray(self.dist.sample(self.rng, CHUNK), dtype=float).tolist()
            self.pos = 0
        y = self.buf[self.pos]
        self.pos += 1
        return y


def simulate(policy, dist: ServiceDistribution, kappa_s: float, kappa_p: float,
             cfg: SimConfig, trajectory: bool = False) -> SimResult:
    """Run ``cfg.cycles`` delivery cycles under ``policy`` and estimate the
    long-run average cost over the post-warmup cycles with batch means.

    ``policy`` needs ``sample_target(aoi)`` and ``threshold(y)`` (``inf`` for
    never preempt); both :class:`~tailor.solver.StationaryPolicy` and
    :class:`~tailor.baselines.ThresholdPolicy` qualify.
    """
    draws = _Draws(dist, make_rng(cfg.seed, cfg.replication))
    draw = draws.next
    target = policy.sample_target
    thresh = policy.threshold
    cap = cfg.max_preemptions_per_chain
    warm = cfg.warmup
    n_post = cfg.cycles - warm
    per_batch = n_post // cfg.batches
    # leftover cycles join the last batch
    bounds = [warm + per_batch * (b + 1) for b in range(cfg.batches)]
    bounds[-1] = cfg.cycles

    b_area = [0.0] * cfg.batches
    b_imp = [0.0] * cfg.batches
    b_time = [0.0] * cfg.batches
    n_samp = n_pre = n_del = 0
    traj = [] if trajectory else None
    clock = 0.0

    aoi = dist.mean  # start idle at AoI E[Y]
    batch = -1
    next_bound = warm
    for cyc in range(cfg.cycles):
        if cyc == next_bound:
            batch += 1
            next_bound = bounds[batch]
        area = 0.0
        imp = kappa_s
        z = target(aoi)
        if z < aoi:
            raise SimulationError(f"sampling target {z} below AoI {aoi}")
        u = z - aoi
        area += aoi * u + 0.5 * u * u
        dur = u
        y = z
        if traj is not None:
            traj.append((clock + dur, z, "B", "sample"))
        k = 0
        while True:
            s = draw()
            th = thresh(y)
            if s <= th:
                area += y * s + 0.5 * s * s
                dur += s
                new_aoi = s
                if not new_aoi <= y + s:
                    raise SimulationError("delivery raised the AoI")
                aoi = new_aoi
                break
            area += y * th + 0.5 * th * th
            dur += th
            imp += kappa_p
            k += 1
            y_next = y + th
            if not y_next > y:
                raise SimulationError(f"preemption at threshold {th} did not advance the busy-start AoI")
            y = y_next
            if traj is not None:
                traj.append((clock + dur, y, "B", "preempt"))
            if k >= cap:
                raise PreemptionCapError(f"{k} preemptions in one chain (cap {cap})")
        clock += dur
        if traj is not None:
            traj.append((clock, aoi, "I", "deliver"))
        if batch >= 0:
            b_area[batch] += area
            b_imp[batch] += imp
            b_time[batch] += dur
            n_samp += 1
            n_pre += k
            n_del += 1

    area_t = math.fsum(b_area)
    imp_t = math.fsum(b_imp)
    time_t = math.fsum(b_time)
    means = (np.array(b_area) + np.array(b_imp)) / np.array(b_time)
    stderr = float(np.std(means, ddof=1) / math.sqrt(cfg.batches))
    return SimResult(
        avg_cost=(area_t + imp_t) / time_t,
        stderr=stderr,
        n_samples=n_samp,
        n_preemptions=n_pre,
        n_deliveries=n_del,
        aoi_time_integral=area_t,
        impulse_cost_total=imp_t,
        elapsed_sim_time=time_t,
        batch_means=means,
        trajectory=traj,
    )


@dataclass
class ComparisonRow:
    scenario: str
    tailor_rho: float
    tailor_sim: float
    tailor_stderr: float
    aoinp_rho: float
    aoinp_sim: float
    zw_rho: float
    zw_sim: float
    ratio_aoinp: float
    ratio_zw: float
    converged: bool = True
    sims: dict = field(default_factory=dict, repr=False)

    CSV_FIELDS = ("scenario", "tailor_rho", "tailor_sim", "tailor_stderr", "aoinp_rho",
                  "aoinp_sim", "zw_rho", "zw_sim", "ratio_aoinp", "ratio_zw")

    def csv_row(self) -> list[str]:
        out = [self.scenario]
        for name in self.CSV_FIELDS[1:-2]:
            out.append(f"{getattr(self, name):.10g}")
        out += [f"{self.ratio_aoinp:.3g}", f"{self.ratio_zw:.3g}"]
        return out


def _compare_one(sc, cfg):
    from .baselines import ThresholdPolicy, aoi_np_solve, zero_wait_cost
    from .solver import policy_iteration

    cfg = cfg or sc.sim
    solved = policy_iteration(sc.dist, sc.kappa_s, sc.kappa_p, sc.grids,
                              eps_v=sc.eps_v, eps_rho=sc.eps_rho, max_iter=sc.max_iter)
    aoinp = aoi_np_solve(sc.dist, sc.kappa_s)
    zw = zero_wait_cost(sc.dist, sc.kappa_s)
    sims = {
        "TAILOR": simulate(solved.policy, sc.dist, sc.kappa_s, sc.kappa_p, cfg),
        "AoI-NP": simulate(ThresholdPolicy(aoinp.beta), sc.dist, sc.kappa_s, sc.kappa_p, cfg),
        "ZW-NP": simulate(ThresholdPolicy(0.0), sc.dist, sc.kappa_s, sc.kappa_p, cfg),
    }
    return ComparisonRow(
        scenario=sc.name,
        tailor_rho=solved.rho,
        tailor_sim=sims["TAILOR"].avg_cost,
        tailor_stderr=sims["TAILOR"].stderr,
        aoinp_rho=aoinp.rho,
        aoinp_sim=sims["AoI-NP"].avg_cost,
        zw_rho=zw,
        zw_sim=sims["ZW-NP"].avg_cost,
        ratio_aoinp=aoinp.rho / solved.rho,
        ratio_zw=zw / solved.rho,
        converged=solved.converged,
        sims=sims,
    )


def compare(scenarios, cfg: SimConfig | None = None, workers: int = 1) -> list[ComparisonRow]:
    """Solve, benchmark and simulate every scenario; rows sorted by name.

    ``cfg`` replaces each scenario's own simulation settings when given.
    Scenarios run in ``workers`` processes; results do not depend on it.
    """
    scenarios = list(scenarios)
    if workers > 1 and len(scenarios) > 1:
        from concurrent.futures import ProcessPoolExecutor

        with ProcessPoolExecutor(max_workers=workers) as pool:
            rows = list(pool.map(_compare_one, scenarios, [cfg] * len(scenarios)))
    else:
        rows = [_compare_one(sc, cfg) for sc in scenarios]
    return sorted(rows, key=lambda r: r.scenario)
