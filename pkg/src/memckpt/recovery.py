"""Fault-tolerant checkpoint commit, pairwise recovery resolution, the
exception-driven main loop, and greedy post-recovery rebalancing.

A checkpoint round fills the writable snapshot half, exchanges encoded
copies with the partner rank, and then runs a collective handshake. Only a
unanimous all-alive verdict swaps the buffers; the swap is local and happens
with no request boundary between verdict and swap, so a fault can never
split a round into committed and uncommitted survivors. On any failure the
round rolls back and survivors restore the previous committed snapshot,
which requires no communication because every rank already holds its own
copy plus its partner's.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field
from enum import Enum

from .distribution import DistributionStrategy, exchange_snapshots, pairwise_plan
from .grid import BlockMap, DomainSpec, partition_domain
from .runtime import AbortSimulation, CommFailure, Proc
from .snapshot import (
    EntityHooks,
    EntityRegistry,
    FillError,
    RestoreContext,
    SnapshotBuffer,
    SnapshotSet,
    decode_snapshot,
    encode_snapshot,
    fill_buffer,
)
from .workload import (
    BlockData,
    ExchangePlan,
    build_exchange_plan,
    decode_blocks,
    encode_blocks,
    exchange_ghosts,
    init_block,
    step_block,
)


class UnrecoverableDataLossError(AbortSimulation):
    """Both holders of a snapshot pair died before the next commit."""


class CommitOutcome(Enum):
    COMMITTED = "committed"
    ROLLED_BACK = "rolled-back"


@dataclass(frozen=True)
class CheckpointConfig:
    """Checkpoint period, distribution strategy, and buffering mode.

    With `resilient_double_buffer` off, only a single snapshot buffer is
    kept (memory S(1+R) instead of S(1+2R)); a fault during the checkpoint
    round itself then destroys the only copy and is unrecoverable.
    """

    interval_steps: int
    strategy: DistributionStrategy = pairwise_plan
    resilient_double_buffer: bool = True

    def __post_init__(self) -> None:
        if self.interval_steps < 1:
            raise ValueError("interval_steps must be >= 1")


@dataclass
class RecoveryContext:
    """Inputs of the pairwise recovery resolution.

    `old_nprocs` is the world size at the time the restored snapshot was
    committed; `reassignment` maps that epoch's ranks to current ranks, with
    dead ranks absent.
    """

    old_nprocs: int
    reassignment: dict[int, int]


def resolve_recovery_rank(old_rank: int, ctx: RecoveryContext) -> int | None:
    """Which current rank restores the data of `old_rank`; None if lost.

    If old_rank survived, its own (reassigned) rank restores it. Otherwise
    the backup holder shifted by floor(old_nprocs / 2) does; if that rank
    died too, the snapshot pair is gone.
    """
    if old_rank in ctx.reassignment:
        return ctx.reassignment[old_rank]
    shift = ctx.old_nprocs // 2
    backup = (old_rank + shift) % ctx.old_nprocs
    if backup not in ctx.reassignment:
        return None
    return ctx.reassignment[backup]


def find_lost_pairs(ctx: RecoveryContext) -> list[int]:
    """Old ranks whose data is unrecoverable (own and backup holder both dead)."""
    return [
        r for r in range(ctx.old_nprocs)
        if resolve_recovery_rank(r, ctx) is None
    ]


@dataclass
class WorkerState:
    """Per-rank engine state living inside one simulated process."""

    spec: DomainSpec
    seed: int
    dt: float
    blocks: dict[int, BlockData] = field(default_factory=dict)
    bmap: BlockMap | None = None
    step: int = 0
    registry: EntityRegistry = field(default_factory=EntityRegistry)
    snapshots: SnapshotSet = field(default_factory=SnapshotSet)
    single_buffer: SnapshotBuffer = field(default_factory=SnapshotBuffer)
    resilient: bool = True
    commit_epoch: int = 0
    last_commit_step: int = -1
    last_encoded_size: int = 0
    exchange_plan: ExchangePlan | None = None
    # Ownership map frozen at the last commit. Every rank evolves the global
    # map through the same deterministic sequence (partition, recovery
    # remap, rebalance moves), so this needs no snapshot entry and no
    # communication to agree on.
    committed_map: BlockMap | None = None
    # Scratch used while restore callbacks run.
    restore_target_rank: int = 0
    restore_ctx: RecoveryContext | None = None

    def committed(self) -> SnapshotBuffer:
        return self.snapshots.read_only if self.resilient else self.single_buffer

    def writable(self) -> SnapshotBuffer:
        return self.snapshots.writable if self.resilient else self.single_buffer

    def live_payload_bytes(self) -> int:
        return sum(len(hooks.create()) for hooks in self.registry)

    def refresh_exchange_plan(self, rank: int) -> None:
        assert self.bmap is not None
        self.exchange_plan = build_exchange_plan(sorted(self.blocks), self.bmap, self.spec, rank)

    def resident_snapshot_bytes(self) -> int:
        """Live payload plus all resident snapshot copies (spec memory model)."""
        stored = (
            self.snapshots.resident_bytes()
            if self.resilient
            else self.single_buffer.resident_bytes()
        )
        return self.live_payload_bytes() + stored


def _make_entities(state: WorkerState) -> None:
    """Register the engine entities: the block payload and the step timer."""

    def create_blocks() -> bytes:
        return encode_blocks(state.blocks)

    def restore_blocks(payload: bytes, ctx: RestoreContext) -> None:
        assert state.restore_ctx is not None
        for bid, block in decode_blocks(payload, ctx.origin_rank).items():
            target = resolve_recovery_rank(block.origin_rank, state.restore_ctx)
            if target == state.restore_target_rank:
                state.blocks[bid] = block

    def create_step() -> bytes:
        return struct.pack("<Q", state.step)

    def restore_step(payload: bytes, ctx: RestoreContext) -> None:
        (state.step,) = struct.unpack("<Q", payload)

    noop = lambda: None
    state.registry.register(EntityHooks("blocks", create_blocks, restore_blocks, noop))
    state.registry.register(EntityHooks("step_timer", create_step, restore_step, noop))


def resilient_checkpoint(proc: Proc, state: WorkerState, config: CheckpointConfig):
    """One checkpoint round: fill, exchange, handshake, swap (Alg. 2 flow).

    Returns CommitOutcome.COMMITTED when every live rank swapped, else
    CommitOutcome.ROLLED_BACK with no rank swapped. No errors escape; all
    failure paths funnel into the rollback outcome.
    """
    step = state.step
    ok = True
    encoded = b""

    yield from proc.enter_phase("snapshot-fill")
    try:
        if state.resilient:
            buf = state.snapshots.fill(state.registry, step, proc.rank)
        else:
            buf = fill_buffer(state.single_buffer, state.registry, step, proc.rank)
        encoded = encode_snapshot(buf)
    except FillError:
        ok = False
    finally:
        proc.exit_phase("snapshot-fill")

    if ok:
        yield from proc.enter_phase("snapshot-exchange")
        try:
            plan = config.strategy(proc.rank, proc.nprocs)
            received = yield from exchange_snapshots(proc, encoded, plan, step)
            if received is not None:
                origin, blob = received
                buf.partners = {origin: blob}
        except CommFailure:
            ok = False
        finally:
            proc.exit_phase("snapshot-exchange")

    yield from proc.enter_phase("handshake")
    try:
        verdict = yield from proc.handshake(ok)
    except CommFailure:
        verdict = False
    finally:
        proc.exit_phase("handshake")

    if not verdict:
        proc.log_event("abort", f"step={step}")
        if not state.resilient:
            raise UnrecoverableDataLossError(
                f"fault during non-resilient checkpoint at step {step}"
            )
        return CommitOutcome.ROLLED_BACK

    # Swap immediately after the verdict: no request boundary exists between
    # handshake success and the swap, so no fault can be injected in between.
    if state.resilient:
        state.snapshots.commit_swap(state.registry)
    state.commit_epoch = proc.epoch
    state.last_commit_step = step
    state.last_encoded_size = len(encoded)
    assert state.bmap is not None
    state.committed_map = state.bmap.copy()
    proc.log_event("commit", f"step={step}")
    yield from proc.enter_phase("commit")
    proc.exit_phase("commit")
    return CommitOutcome.COMMITTED


def _cold_restart(proc: Proc, state: WorkerState) -> None:
    """No checkpoint was ever committed: rebuild the deterministic initial
    state for the current (possibly shrunk) world."""
    spec = state.spec
    fresh = DomainSpec(
        global_cells=spec.global_cells,
        block_cells=spec.block_cells,
        fields_per_cell=spec.fields_per_cell,
        num_processes=proc.nprocs,
    )
    state.bmap = partition_domain(fresh)
    state.blocks = {
        bid: init_block(bid, fresh, state.seed) for bid in state.bmap.blocks_of(proc.rank)
    }
    state.step = 0
    state.commit_epoch = proc.epoch
    state.last_commit_step = -1
    state.committed_map = None
    state.refresh_exchange_plan(proc.rank)


def restore_from_checkpoint(proc: Proc, state: WorkerState):
    """Restore every held snapshot that resolves to this rank (Alg. 3).

    Sends zero messages: each survivor restores from the copies already in
    its memory and recomputes the global ownership map locally. Raises
    UnrecoverableDataLossError when any snapshot pair was fully lost.
    """
    committed = state.committed()
    yield from proc.enter_phase("restore")
    try:
        if not committed.valid:
            _cold_restart(proc, state)
            proc.set_step(0)
            proc.log_event("restore", "step=0;ro_step=-1;cold=1")
            return

        ctx = RecoveryContext(
            old_nprocs=proc.epoch_nprocs(state.commit_epoch),
            reassignment=proc.reassignment_since(state.commit_epoch),
        )
        assert state.committed_map is not None
        lost = [
            r for r in find_lost_pairs(ctx)
            if state.committed_map.blocks_of(r)  # empty-handed ranks lose nothing
        ]
        if lost:
            raise UnrecoverableDataLossError(
                f"snapshot pair(s) lost for pre-fault rank(s) {lost}"
            )

        state.restore_ctx = ctx
        state.restore_target_rank = proc.rank
        state.blocks = {}
        hooks_by_name = {h.name: h for h in state.registry}

        def apply(entries, origin: int, step: int) -> None:
            for entry in entries:
                hooks_by_name[entry.name].restore(
                    entry.payload, RestoreContext(origin_rank=origin, step=step)
                )

        # Own snapshot first, then partner copies in origin order. The step
        # timer entries are identical in all of them (coordinated
        # checkpointing), so the application order is immaterial there.
        apply(committed.entries, committed.origin_rank, committed.step)
        for origin in sorted(committed.partners):
            decoded = decode_snapshot(committed.partners[origin])
            assert decoded.step == committed.step, "snapshot steps must agree"
            apply(decoded.entries, decoded.origin_rank, decoded.step)

        new_assignment = {}
        for bid, old_owner in state.committed_map.assignment.items():
            new_owner = resolve_recovery_rank(old_owner, ctx)
            assert new_owner is not None
            new_assignment[bid] = new_owner
        state.bmap = BlockMap(new_assignment)
        assert sorted(state.blocks) == state.bmap.blocks_of(proc.rank), (
            "restored blocks disagree with the recomputed ownership map"
        )
        # commit_epoch stays at the epoch of the last commit: the buffers
        # still carry snapshots numbered in that epoch, and a further fault
        # before the next commit must resolve against that numbering.
        state.last_commit_step = state.step
        state.refresh_exchange_plan(proc.rank)
        proc.set_step(state.step)
        proc.log_event("restore", f"step={state.step};ro_step={committed.step}")
    finally:
        state.restore_ctx = None
        proc.exit_phase("restore")


def plan_migrations(bmap: BlockMap, nprocs: int) -> list[tuple[int, int, int]]:
    """Greedy rebalance plan: (block, donor, recipient) moves until the block
    counts satisfy max - min <= 1. Ties break to the lowest rank, the moved
    block is the donor's lowest id."""
    work = bmap.copy()
    loads = work.loads(nprocs)
    moves: list[tuple[int, int, int]] = []
    while True:
        mx, mn = max(loads), min(loads)
        if mx - mn <= 1:
            break
        donor = loads.index(mx)
        recipient = loads.index(mn)
        bid = work.blocks_of(donor)[0]
        moves.append((bid, donor, recipient))
        work.move(bid, recipient)
        loads[donor] -= 1
        loads[recipient] += 1
    return moves


def rebalance_greedy(proc: Proc, state: WorkerState):
    """Ship whole blocks from overloaded to underloaded ranks.

    Every rank derives the same migration list from its own copy of the
    ownership map, so no coordination messages are needed; only block
    payloads move. Failures propagate and re-enter recovery.
    """
    assert state.bmap is not None
    moves = plan_migrations(state.bmap, proc.nprocs)
    if not moves:
        return
    yield from proc.enter_phase("rebalance")
    try:
        me = proc.rank
        for idx, (bid, donor, recipient) in enumerate(moves):
            tag = ("migrate", idx)
            if donor == me:
                payload = encode_blocks({bid: state.blocks[bid]})
                yield from proc.send(recipient, tag, payload)
                del state.blocks[bid]
            elif recipient == me:
                payload = yield from proc.recv(donor, tag)
                state.blocks.update(decode_blocks(payload, me))
            state.bmap.move(bid, recipient)
        proc.log_event("rebalance", f"moves={len(moves)}")
    finally:
        state.refresh_exchange_plan(proc.rank)
        proc.exit_phase("rebalance")


@dataclass
class WorkerResult:
    """Footprint and final payload a rank reports when the run completes."""

    step: int
    blocks: dict[int, BlockData]
    resident_snapshot_bytes: int
    encoded_snapshot_bytes: int


def run_with_recovery(proc: Proc, spec: DomainSpec, config: CheckpointConfig,
                      total_steps: int, dt: float, seed: int):
    """Per-rank main loop: step the workload, checkpoint periodically, and on
    any fault signal revoke, shrink, restore, rebalance, and continue from
    the restored step (the exception-driven recovery mechanism)."""
    state = WorkerState(spec=spec, seed=seed, dt=dt, resilient=config.resilient_double_buffer)
    _make_entities(state)
    state.bmap = partition_domain(spec)
    state.blocks = {bid: init_block(bid, spec, seed) for bid in state.bmap.blocks_of(proc.rank)}
    state.refresh_exchange_plan(proc.rank)
    proc.set_step(0)

    pending_recovery = False
    while True:
        try:
            if pending_recovery:
                pending_recovery = False
                yield from proc.enter_phase("recovery")
                try:
                    yield from proc.revoke()
                    yield from proc.shrink()
                finally:
                    proc.exit_phase("recovery")
                yield from restore_from_checkpoint(proc, state)
                yield from rebalance_greedy(proc, state)
                continue

            if state.step >= total_steps:
                # Completion barrier: if anyone died undetected near the end,
                # every survivor funnels back into recovery instead of exiting
                # with a rolled-back peer still running.
                done = yield from proc.handshake(True)
                if done:
                    break
                pending_recovery = True
                continue

            if state.step % config.interval_steps == 0 and state.step != state.last_commit_step:
                outcome = yield from resilient_checkpoint(proc, state, config)
                if outcome is CommitOutcome.ROLLED_BACK:
                    pending_recovery = True
                    continue

            yield from proc.enter_phase("ghost-exchange")
            try:
                yield from exchange_ghosts(
                    proc, state.blocks, state.bmap, state.spec, state.step,
                    plan=state.exchange_plan,
                )
            finally:
                proc.exit_phase("ghost-exchange")

            yield from proc.enter_phase("compute")
            try:
                yield from proc.advance(
                    len(state.blocks) * state.spec.cells_per_block
                    * proc.cost.compute_cost_per_cell
                )
                state.blocks = {bid: step_block(b, dt) for bid, b in state.blocks.items()}
                state.step += 1
                proc.set_step(state.step)
            finally:
                proc.exit_phase("compute")
        except CommFailure:
            pending_recovery = True

    return WorkerResult(
        step=state.step,
        blocks=state.blocks,
        resident_snapshot_bytes=state.resident_snapshot_bytes(),
        encoded_snapshot_bytes=state.last_encoded_size,
    )
