"""Analytic checkpoint-frequency models plus a Monte-Carlo waste oracle.

System MTBF scales inversely with node count; the first-order optimal
checkpoint interval is sqrt(2*mu*C) and the resulting overhead fraction is
C / sqrt(2*mu*C). The Monte-Carlo simulation provides an independent check
that the analytic optimum actually minimizes expected completion time in the
regime where the first-order approximation is valid (C small against mu).
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class PlannerInputs:
    """Node MTBF, node count, per-checkpoint cost, recovery cost, redundancy.

    `redundancy` follows the memory-model convention where the pairwise
    scheme counts as 2 copies, giving memory factors 5 (resilient) and 3.
    """

    mu_ind: float
    num_nodes: int
    checkpoint_cost: float
    recovery_cost: float = 1.0
    redundancy: int = 2
    resilient: bool = True

    def __post_init__(self) -> None:
        if self.mu_ind <= 0 or self.checkpoint_cost <= 0 or self.recovery_cost <= 0:
            raise ValueError("times must be positive")
        if self.num_nodes < 1:
            raise ValueError("num_nodes must be >= 1")
        if self.redundancy < 1:
            raise ValueError("redundancy must be >= 1")

    @property
    def system_mtbf(self) -> float:
        return system_mtbf(self.mu_ind, self.num_nodes)

    @property
    def first_order_valid(self) -> bool:
        """The sqrt(2*mu*C) approximation assumes C is small against mu."""
        return self.checkpoint_cost < self.system_mtbf / 10.0


def system_mtbf(mu_ind: float, n_nodes: int) -> float:
    """Mean time between failures of an n-node system with equal node MTBF."""
    if mu_ind <= 0:
        raise ValueError("mu_ind must be positive")
    if n_nodes < 1:
        raise ValueError("n_nodes must be >= 1")
    return mu_ind / n_nodes


def optimal_interval(mu: float, c: float) -> float:
    """First-order optimal checkpoint interval sqrt(2*mu*c)."""
    if mu <= 0 or c <= 0:
        raise ValueError("mu and c must be positive")
    if c >= mu / 10.0:
        warnings.warn(
            f"checkpoint cost {c} is not small against MTBF {mu}; "
            "the first-order interval is only a rough estimate",
            stacklevel=2,
        )
    return math.sqrt(2.0 * mu * c)


def overhead_fraction(mu: float, c: float) -> float:
    """Fraction of runtime spent checkpointing at the optimal interval: c / sqrt(2*mu*c)."""
    if mu <= 0 or c <= 0:
        raise ValueError("mu and c must be positive")
    return c / math.sqrt(2.0 * mu * c)


def memory_bytes(s: int | float, r: int, resilient: bool) -> int | float:
    """Per-process memory of the scheme: s*(1+2r) resilient, s*(1+r) otherwise."""
    if s <= 0:
        raise ValueError("s must be positive")
    if r < 1:
        raise ValueError("r must be >= 1")
    return s * (1 + 2 * r) if resilient else s * (1 + r)


@dataclass(frozen=True)
class WastePoint:
    interval: float
    mean_completion: float
    mean_commits: float
    mean_faults: float


def _trial(interval: float, mu: float, c: float, r_cost: float, horizon: float,
           rng: np.random.Generator) -> tuple[float, int, int]:
    """One seeded run of the renewal model.

    Work advances at wall rate 1/(1 + C/interval), committing after every
    full `interval` of work; the checkpoint cost is charged pro rata so that
    the fault-free completion time is exactly horizon * (1 + C/interval).
    A fault rolls progress back to the last commit and costs `r_cost`.
    """
    rate = 1.0 + c / interval
    wall = 0.0
    committed = 0.0
    commits = 0
    faults = 0
    while True:
        gap = rng.exponential(mu) if math.isfinite(mu) else math.inf
        need = (horizon - committed) * rate
        if need <= gap:
            wall += need
            commits += int(horizon // interval) - int(round(committed / interval))
            return wall, commits, faults
        reached = committed + gap / rate
        new_committed = interval * math.floor(reached / interval)
        commits += int(round((new_committed - committed) / interval))
        committed = new_committed
        wall += gap + r_cost
        faults += 1


def simulate_waste(interval: float, inputs: PlannerInputs, horizon: float,
                   trials: int, seed: int) -> float:
    """Mean wall time to finish `horizon` seconds of useful work.

    Trials are seeded per index, so a sweep over intervals reuses the same
    fault arrival sequences (common random numbers) and yields a smooth
    comparison curve.
    """
    return waste_statistics(interval, inputs, horizon, trials, seed).mean_completion


def waste_statistics(interval: float, inputs: PlannerInputs, horizon: float,
                     trials: int, seed: int) -> WastePoint:
    if interval <= 0:
        raise ValueError("interval must be positive")
    if horizon <= 0 or trials < 1:
        raise ValueError("horizon must be positive and trials >= 1")
    mu = inputs.system_mtbf
    c = inputs.checkpoint_cost
    total = 0.0
    total_commits = 0
    total_faults = 0
    for t in range(trials):
        rng = np.random.default_rng(np.random.SeedSequence((seed, t)))
        wall, commits, faults = _trial(interval, mu, c, inputs.recovery_cost, horizon, rng)
        total += wall
        total_commits += commits
        total_faults += faults
    return WastePoint(
        interval=interval,
        mean_completion=total / trials,
        mean_commits=total_commits / trials,
        mean_faults=total_faults / trials,
    )


def waste_sweep(intervals: list[float], inputs: PlannerInputs, horizon: float,
                trials: int, seed: int) -> list[WastePoint]:
    """Monte-Carlo completion-time curve over checkpoint intervals."""
    return [waste_statistics(i, inputs, horizon, trials, seed) for i in intervals]


def geometric_intervals(center: float, factor: float, points: int) -> list[float]:
    """`points` geometrically spaced intervals spanning center/factor .. center*factor."""
    if points < 2:
        return [center]
    lo, hi = math.log(center / factor), math.log(center * factor)
    return [math.exp(lo + (hi - lo) * k / (points - 1)) for k in range(points)]
