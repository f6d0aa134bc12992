"""Diskless pairwise checkpoint/restart on a deterministic simulated cluster."""

from .grid import BlockMap, DomainSpec, neighbors_of, partition_domain
from .distribution import DistributionPlan, pairwise_plan
from .planner import (
    PlannerInputs,
    memory_bytes,
    optimal_interval,
    overhead_fraction,
    simulate_waste,
    system_mtbf,
)
from .recovery import (
    CheckpointConfig,
    CommitOutcome,
    RecoveryContext,
    UnrecoverableDataLossError,
    resolve_recovery_rank,
    run_with_recovery,
)
from .runtime import (
    CommFailure,
    CostModel,
    DeadlockError,
    DeterministicFault,
    FaultSchedule,
    ProcFailedError,
    RevokedError,
    Simulator,
    StochasticFaults,
    run_simulation,
)
from .workload import BlockData, init_block, state_checksum, step_block

__all__ = [
    "BlockData",
    "BlockMap",
    "CheckpointConfig",
    "CommFailure",
    "CommitOutcome",
    "CostModel",
    "DeadlockError",
    "DeterministicFault",
    "DistributionPlan",
    "DomainSpec",
    "FaultSchedule",
    "PlannerInputs",
    "ProcFailedError",
    "RecoveryContext",
    "RevokedError",
    "Simulator",
    "StochasticFaults",
    "UnrecoverableDataLossError",
    "init_block",
    "memory_bytes",
    "neighbors_of",
    "optimal_interval",
    "overhead_fraction",
    "pairwise_plan",
    "partition_domain",
    "resolve_recovery_rank",
    "run_simulation",
    "run_with_recovery",
    "simulate_waste",
    "state_checksum",
    "step_block",
    "system_mtbf",
]
__version__ = "0.1.0"
