"""Redundancy placement: who receives my snapshot copy, whose copy I hold.

The shipped strategy is the pairwise one: each rank sends its encoded
snapshot to the rank shifted by floor(N/2). For even N this pairs ranks
r <-> r + N/2 (an involution); for odd N it yields a length-N cycle, which
recovery handles unchanged because it recomputes the same shift.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np


@dataclass(frozen=True)
class DistributionPlan:
    """Partner ranks for one checkpoint round; send_to == recv_from == rank
    means local-only (single process, no partner copy)."""

    send_to: int
    recv_from: int

    def is_local_only_for(self, rank: int) -> bool:
        return self.send_to == rank and self.recv_from == rank


# A strategy is any pure function (rank, nprocs) -> DistributionPlan whose
# plans are globally consistent: send_to(recv_from(r)) == r for every rank.
DistributionStrategy = Callable[[int, int], DistributionPlan]


def pairwise_plan(rank: int, n: int) -> DistributionPlan:
    """Pairwise snapshot distribution with shift = floor(n/2)."""
    if n < 1:
        raise ValueError("n must be >= 1")
    if not 0 <= rank < n:
        raise ValueError(f"rank {rank} outside [0, {n})")
    if n == 1:
        return DistributionPlan(send_to=rank, recv_from=rank)
    shift = n // 2
    send_to = (rank + shift) % n
    if shift > rank:
        recv_from = n - (shift - rank)
    else:
        recv_from = rank - shift
    return DistributionPlan(send_to=send_to, recv_from=recv_from)


def pairwise_plan_table(n: int) -> tuple[np.ndarray, np.ndarray]:
    """(send_to, recv_from) arrays over all ranks of an n-process world.

    Vectorized form of pairwise_plan for bulk property checks.
    """
    if n < 1:
        raise ValueError("n must be >= 1")
    ranks = np.arange(n, dtype=np.int64)
    if n == 1:
        return ranks.copy(), ranks.copy()
    shift = n // 2
    send_to = (ranks + shift) % n
    recv_from = np.where(shift > ranks, n - (shift - ranks), ranks - shift)
    return send_to, recv_from


SNAPSHOT_TAG_KIND = "snapshot"


def exchange_snapshots(proc, encoded: bytes, plan: DistributionPlan, step: int):
    """Ship my encoded snapshot to plan.send_to, collect plan.recv_from's copy.

    Returns (origin_rank, blob) for the received partner snapshot, or None
    for a local-only plan. The send is posted before the receive, so partner
    cycles of any length drain under the cooperative scheduler. Proc-failed /
    revoked errors propagate to the caller, which treats the checkpoint round
    as failed.
    """
    me = proc.rank
    if plan.is_local_only_for(me):
        return None
    tag = (SNAPSHOT_TAG_KIND, step)
    yield from proc.send(plan.send_to, tag, encoded)
    blob = yield from proc.recv(plan.recv_from, tag)
    return plan.recv_from, blob
