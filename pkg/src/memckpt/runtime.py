"""Deterministic cooperative simulation of a message-passing cluster with
ULFM-style failure semantics.

Process programs are generators that yield runtime requests through a Proc
handle (`yield from proc.send(...)`). The scheduler advances processes in
rank order; a process runs until it blocks, finishes, or dies, and every
yielded request is an event boundary at which scheduled faults can fire.
The whole simulation is a pure function of (programs, fault schedule, cost
model, seed).

Failure semantics follow the ULFM error model: talking to a dead process
raises proc-failed; any operation on a revoked communicator raises revoked
without transferring bytes; shrink builds a new communicator of survivors
with dense, order-preserving ranks. The handshake is a native agreement
collective: it resolves once every live member has entered and delivers the
same verdict to all of them, so survivors can never split on whether a
checkpoint round succeeded.
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass

import numpy as np

from .metrics import MetricsCollector


class CommFailure(Exception):
    """Base for the two ULFM error signals; programs catch and recover."""


class ProcFailedError(CommFailure):
    """An operation touched a process that is known to have failed."""


class RevokedError(CommFailure):
    """The communicator was revoked; no communication was performed."""


class DeadlockError(RuntimeError):
    """All live processes are blocked with no possible progress."""


class AbortSimulation(Exception):
    """Raised by a program to stop the whole simulation cleanly."""


class SimulationError(RuntimeError):
    pass


@dataclass(frozen=True)
class DeterministicFault:
    """Kill `victim` (epoch-0 rank) at a simulated time or a (step, phase) point.

    `op_index` counts runtime-request boundaries from the phase entry: 0 kills
    the victim at the phase entry itself, k kills it k requests later. With
    `kill_node`, every rank on the victim's node dies at the same instant.
    """

    victim: int
    at_time: float | None = None
    at_step: int | None = None
    phase: str | None = None
    op_index: int = 0
    kill_node: bool = False

    def __post_init__(self) -> None:
        timed = self.at_time is not None
        phased = self.at_step is not None or self.phase is not None
        if timed == phased:
            raise ValueError("exactly one of at_time or (at_step, phase) must be set")
        if phased and (self.at_step is None or self.phase is None):
            raise ValueError("step faults need both at_step and phase")
        if self.op_index < 0:
            raise ValueError("op_index must be >= 0")


@dataclass(frozen=True)
class StochasticFaults:
    """Exponential per-node failures with the given node MTBF (seconds)."""

    mtbf_ind: float
    seed: int = 0

    def __post_init__(self) -> None:
        if self.mtbf_ind <= 0:
            raise ValueError("mtbf_ind must be positive")


@dataclass(frozen=True)
class FaultSchedule:
    """Deterministic and/or stochastic fault injection plan.

    Consecutive ranks share a node (`ranks_per_node` each); node failures
    kill all of a node's ranks at one instant.
    """

    deterministic: tuple[DeterministicFault, ...] = ()
    stochastic: StochasticFaults | None = None
    ranks_per_node: int = 1

    def __post_init__(self) -> None:
        if self.ranks_per_node < 1:
            raise ValueError("ranks_per_node must be >= 1")
        victims = [f.victim for f in self.deterministic]
        if len(set(victims)) != len(victims):
            raise ValueError("a rank may die at most once")

    def node_of(self, pid: int) -> int:
        return pid // self.ranks_per_node


@dataclass(frozen=True)
class CostModel:
    """Simulated-time costs: per-cell compute, message latency, bandwidth (B/s)."""

    compute_cost_per_cell: float = 1e-9
    message_latency: float = 1e-6
    bandwidth: float = 1e9

    def __post_init__(self) -> None:
        if min(self.compute_cost_per_cell, self.message_latency, self.bandwidth) <= 0:
            raise ValueError("cost model entries must be positive")


def draw_node_failure_times(mtbf_ind: float, n_nodes: int, seed: int) -> np.ndarray:
    """First failure time of each node, exponential with mean `mtbf_ind`.

    The system-level inter-failure time is the minimum over nodes, so its
    mean is mtbf_ind / n_nodes.
    """
    rng = np.random.default_rng(seed)
    return rng.exponential(mtbf_ind, size=n_nodes)


@dataclass(frozen=True)
class Communicator:
    """Epoch-stamped snapshot of the world communicator's state."""

    epoch: int
    live_ranks: tuple[int, ...]  # epoch-0 identities, ordered by current rank
    revoked: bool
    reassignment: dict[int, int]  # previous-epoch rank -> current rank


@dataclass(frozen=True)
class ShrinkResult:
    epoch: int
    rank: int
    nprocs: int
    reassignment: dict[int, int]


class _Epoch:
    __slots__ = ("index", "members", "rank_of", "revoked", "mailboxes", "hs_waiters", "shrink_waiters")

    def __init__(self, index: int, members: list[int]) -> None:
        self.index = index
        self.members = members  # pid by epoch rank
        self.rank_of = {pid: r for r, pid in enumerate(members)}
        self.revoked = False
        self.mailboxes: dict[tuple, deque] = {}
        self.hs_waiters: dict[int, bool] = {}  # pid -> flag
        self.shrink_waiters: set[int] = set()


class _PState:
    __slots__ = (
        "pid", "gen", "alive", "finished", "result", "clock", "step",
        "blocked", "resume_value", "resume_exc", "armed",
    )

    def __init__(self, pid: int, gen) -> None:
        self.pid = pid
        self.gen = gen
        self.alive = True
        self.finished = False
        self.result = None
        self.clock = 0.0
        self.step = 0
        self.blocked: tuple | None = None
        self.resume_value = None
        self.resume_exc: BaseException | None = None
        self.armed: tuple[int, tuple[int, ...]] | None = None  # (ops left, kill set)


class Proc:
    """Per-process runtime handle passed to programs.

    All communicating methods are generators and must be driven with
    `yield from`; attribute accessors are plain reads.
    """

    def __init__(self, sim: "Simulator", pid: int) -> None:
        self._sim = sim
        self.pid = pid

    @property
    def rank(self) -> int:
        return self._sim._epoch.rank_of[self.pid]

    @property
    def nprocs(self) -> int:
        return len(self._sim._epoch.members)

    @property
    def epoch(self) -> int:
        return self._sim._epoch.index

    @property
    def clock(self) -> float:
        return self._sim._pstates[self.pid].clock

    @property
    def cost(self) -> CostModel:
        return self._sim.cost

    def send(self, dst: int, tag, payload: bytes):
        yield ("send", dst, tag, payload)

    def recv(self, src: int, tag) -> bytes:
        data = yield ("recv", src, tag)
        return data

    def advance(self, seconds: float):
        yield ("advance", seconds)

    def enter_phase(self, name: str):
        yield ("phase_begin", name)

    def exit_phase(self, name: str) -> None:
        # Deliberately not a runtime request: phase exits happen inside
        # `finally` blocks during fault unwinding, where a generator must
        # not yield. The next request boundary covers injection instead.
        self._sim.metrics.end_phase(self.pid, name)

    def handshake(self, ok: bool = True) -> bool:
        verdict = yield ("handshake", bool(ok))
        return verdict

    def revoke(self):
        yield ("revoke",)

    def shrink(self) -> ShrinkResult:
        result = yield ("shrink",)
        return result

    # Non-yielding helpers (no event boundary, no injection point).

    def set_step(self, step: int) -> None:
        self._sim._pstates[self.pid].step = step

    @property
    def step(self) -> int:
        return self._sim._pstates[self.pid].step

    def log_event(self, kind: str, detail: str = "") -> None:
        st = self._sim._pstates[self.pid]
        self._sim.metrics.log(st.clock, self.pid, kind, st.step, detail)

    def reassignment_since(self, from_epoch: int) -> dict[int, int]:
        return self._sim.reassignment_since(from_epoch)

    def epoch_nprocs(self, epoch: int) -> int:
        return self._sim.epoch_nprocs(epoch)

    def communicator(self) -> Communicator:
        return self._sim.communicator()


class Simulator:
    """Deterministic scheduler for one simulated cluster."""

    def __init__(
        self,
        nprocs: int,
        schedule: FaultSchedule | None = None,
        cost: CostModel | None = None,
        seed: int = 0,
        trace: bool = False,
    ) -> None:
        if nprocs < 1:
            raise ValueError("nprocs must be >= 1")
        self.nprocs = nprocs
        self.schedule = schedule or FaultSchedule()
        self.cost = cost or CostModel()
        self.seed = seed
        self.metrics = MetricsCollector(nprocs)
        self.trace = trace
        self.trace_log: list[tuple] = []
        self.abort_exc: AbortSimulation | None = None

        self._epoch = _Epoch(0, list(range(nprocs)))
        self._epoch_sizes = [nprocs]
        self._shrink_maps: list[dict[int, int]] = []
        self._pstates: list[_PState] = []
        self._procs = [Proc(self, pid) for pid in range(nprocs)]

        # Split scheduled faults into (step, phase) triggers per pid and
        # time triggers; stochastic node failures are pre-drawn, fixed before
        # execution, and applied as time triggers that kill whole nodes.
        self._phase_faults: dict[int, list[DeterministicFault]] = {}
        self._time_faults: list[tuple[float, tuple[int, ...]]] = []
        for f in self.schedule.deterministic:
            if f.victim >= nprocs:
                raise ValueError(f"fault victim {f.victim} outside world of {nprocs}")
            if f.at_time is not None:
                self._time_faults.append((f.at_time, self._kill_set(f.victim, f.kill_node)))
            else:
                self._phase_faults.setdefault(f.victim, []).append(f)
        if self.schedule.stochastic is not None:
            n_nodes = (nprocs + self.schedule.ranks_per_node - 1) // self.schedule.ranks_per_node
            times = draw_node_failure_times(
                self.schedule.stochastic.mtbf_ind, n_nodes, self.schedule.stochastic.seed
            )
            for node, t in enumerate(times):
                pids = tuple(
                    pid for pid in range(nprocs) if self.schedule.node_of(pid) == node
                )
                self._time_faults.append((float(t), pids))
        self._time_faults.sort(key=lambda e: (e[0], e[1]))

    def _kill_set(self, victim: int, kill_node: bool) -> tuple[int, ...]:
        if not kill_node:
            return (victim,)
        node = self.schedule.node_of(victim)
        return tuple(p for p in range(self.nprocs) if self.schedule.node_of(p) == node)

    # -- public views -----------------------------------------------------

    def communicator(self) -> Communicator:
        ep = self._epoch
        live = tuple(pid for pid in ep.members if self._pstates[pid].alive)
        reassignment = self._shrink_maps[-1] if self._shrink_maps else {
            r: r for r in range(self.nprocs)
        }
        return Communicator(ep.index, live, ep.revoked, dict(reassignment))

    def epoch_nprocs(self, epoch: int) -> int:
        return self._epoch_sizes[epoch]

    def reassignment_since(self, from_epoch: int) -> dict[int, int]:
        """Composed rank map from `from_epoch` ranks to current-epoch ranks.

        Ranks that died along the way are absent from the result.
        """
        mapping = {r: r for r in range(self._epoch_sizes[from_epoch])}
        for shrink_map in self._shrink_maps[from_epoch:]:
            mapping = {r0: shrink_map[r1] for r0, r1 in mapping.items() if r1 in shrink_map}
        return mapping

    def alive(self, pid: int) -> bool:
        return self._pstates[pid].alive

    def live_pids(self) -> list[int]:
        return [pid for pid in range(self.nprocs) if self._pstates[pid].alive]

    # -- execution --------------------------------------------------------

    def run(self, make_program) -> dict[int, object]:
        """Drive `make_program(proc)` generators to completion.

        Returns per-pid generator return values for processes that finished.
        Raises DeadlockError when all live processes are blocked for good.
        """
        if self._pstates:
            raise SimulationError("a Simulator instance runs once")
        for pid in range(self.nprocs):
            self._pstates.append(_PState(pid, make_program(self._procs[pid])))
        while True:
            if self.abort_exc is not None:
                break
            progressed = False
            for pid in range(self.nprocs):
                st = self._pstates[pid]
                if not st.alive or st.finished:
                    continue
                if st.blocked is not None and not self._try_unblock(st):
                    continue
                progressed = True
                self._run_turn(st)
                if self.abort_exc is not None:
                    break
            if self.abort_exc is not None:
                break
            pending = [st for st in self._pstates if st.alive and not st.finished]
            if not pending:
                break
            if not progressed:
                if self._resolve_collectives():
                    continue
                if self._fire_earliest_time_fault():
                    continue
                blocked = {st.pid: st.blocked for st in pending}
                raise DeadlockError(f"all live processes blocked: {blocked}")
        return {
            st.pid: st.result for st in self._pstates if st.finished
        }

    def _resume(self, st: _PState):
        try:
            if st.resume_exc is not None:
                exc, st.resume_exc = st.resume_exc, None
                return st.gen.throw(exc)
            value, st.resume_value = st.resume_value, None
            return st.gen.send(value)
        except StopIteration as stop:
            st.finished = True
            st.result = stop.value
            return None
        except AbortSimulation as abort:
            self.abort_exc = abort
            self.metrics.log(st.clock, st.pid, "abort", st.step, str(abort))
            return None

    def _run_turn(self, st: _PState) -> None:
        ep = self._epoch
        metrics = self.metrics
        while True:
            req = self._resume(st)
            if req is None or self.abort_exc is not None:
                return
            if self.trace:
                self.trace_log.append((st.pid, st.step, metrics.current_phase(st.pid), req[0]))
            if self._fault_check(st, req):
                return
            ep = self._epoch
            kind = req[0]
            if kind == "send":
                _, dst, tag, payload = req
                if ep.revoked:
                    st.resume_exc = RevokedError("send on revoked communicator")
                    continue
                if not 0 <= dst < len(ep.members):
                    st.resume_exc = SimulationError(f"send to invalid rank {dst}")
                    continue
                dst_pid = ep.members[dst]
                if not self._pstates[dst_pid].alive:
                    st.resume_exc = ProcFailedError(f"send to dead rank {dst}")
                    continue
                dt = len(payload) / self.cost.bandwidth
                st.clock += dt
                metrics.add(st.pid, bytes=len(payload), messages=1, seconds=dt)
                arrival = st.clock + self.cost.message_latency
                key = (ep.rank_of[st.pid], dst, tag)
                ep.mailboxes.setdefault(key, deque()).append((arrival, payload))
                continue
            if kind == "recv":
                _, src, tag = req
                if ep.revoked:
                    st.resume_exc = RevokedError("recv on revoked communicator")
                    continue
                if not 0 <= src < len(ep.members):
                    st.resume_exc = SimulationError(f"recv from invalid rank {src}")
                    continue
                key = (src, ep.rank_of[st.pid], tag)
                q = ep.mailboxes.get(key)
                if q:
                    arrival, payload = q.popleft()
                    if arrival > st.clock:
                        metrics.add(st.pid, seconds=arrival - st.clock)
                        st.clock = arrival
                    st.resume_value = payload
                    continue
                if not self._pstates[ep.members[src]].alive:
                    st.resume_exc = ProcFailedError(f"recv from dead rank {src}")
                    continue
                st.blocked = ("recv", src, tag, ep.index)
                return
            if kind == "advance":
                dt = req[1]
                st.clock += dt
                metrics.add(st.pid, seconds=dt)
                continue
            if kind == "phase_begin":
                metrics.begin_phase(st.pid, req[1])
                continue
            if kind == "handshake":
                if ep.revoked:
                    st.resume_exc = RevokedError("handshake on revoked communicator")
                    continue
                ep.hs_waiters[st.pid] = req[1]
                st.blocked = ("handshake", ep.index)
                self._resolve_collectives()
                return
            if kind == "revoke":
                if not ep.revoked:
                    ep.revoked = True
                    metrics.log(st.clock, st.pid, "revoke", st.step, f"epoch={ep.index}")
                    self._wake_revoked(ep)
                continue
            if kind == "shrink":
                ep.shrink_waiters.add(st.pid)
                st.blocked = ("shrink", ep.index)
                self._resolve_collectives()
                return
            raise SimulationError(f"unknown runtime request {kind!r}")

    # -- faults -----------------------------------------------------------

    def _fault_check(self, st: _PState, req: tuple) -> bool:
        """Arm and fire scheduled faults at this request boundary."""
        if req[0] == "phase_begin":
            for f in self._phase_faults.get(st.pid, ()):  # at most one per victim
                if f.at_step == st.step and f.phase == req[1]:
                    self._phase_faults[st.pid].remove(f)
                    st.armed = (f.op_index, self._kill_set(st.pid, f.kill_node))
                    break
        if st.armed is not None:
            ops_left, victims = st.armed
            if ops_left == 0:
                st.armed = None
                self._kill(victims, st.clock)
                return True
            st.armed = (ops_left - 1, victims)
        if self._time_faults:
            due = [e for e in self._time_faults if st.pid in e[1] and e[0] <= st.clock]
            if due:
                t, victims = due[0]
                self._time_faults.remove(due[0])
                self._kill(victims, max(t, st.clock))
                return st.pid in victims
        return False

    def _kill(self, victims: tuple[int, ...], when: float) -> None:
        ep = self._epoch
        for pid in victims:
            st = self._pstates[pid]
            if not st.alive:
                continue
            st.alive = False
            st.blocked = None
            ep.hs_waiters.pop(pid, None)
            ep.shrink_waiters.discard(pid)
            self.metrics.log(when, pid, "fault", st.step, "killed")
            try:
                st.gen.close()
            except RuntimeError:
                pass
        self._resolve_collectives()

    def _fire_earliest_time_fault(self) -> bool:
        """When every live process is blocked, simulated time flows until the
        next scheduled failure breaks the wait."""
        for i, (t, victims) in enumerate(self._time_faults):
            if any(self._pstates[p].alive for p in victims):
                del self._time_faults[i]
                self._kill(victims, t)
                return True
        return False

    # -- blocking / collectives -------------------------------------------

    def _try_unblock(self, st: _PState) -> bool:
        kind = st.blocked[0]
        if kind != "recv":
            return False  # handshake/shrink waiters are woken by resolvers
        _, src, tag, epoch_idx = st.blocked
        ep = self._epoch
        if ep.index != epoch_idx:
            st.blocked = None
            st.resume_exc = RevokedError("epoch ended while blocked")
            return True
        if ep.revoked:
            st.blocked = None
            st.resume_exc = RevokedError("communicator revoked while blocked in recv")
            return True
        key = (src, ep.rank_of[st.pid], tag)
        q = ep.mailboxes.get(key)
        if q:
            arrival, payload = q.popleft()
            if arrival > st.clock:
                self.metrics.add(st.pid, seconds=arrival - st.clock)
                st.clock = arrival
            st.blocked = None
            st.resume_value = payload
            return True
        if not self._pstates[ep.members[src]].alive:
            st.blocked = None
            st.resume_exc = ProcFailedError(f"recv from dead rank {src}")
            return True
        return False

    def _wake_revoked(self, ep: _Epoch) -> None:
        """Revocation interrupts every pending recv and handshake on the epoch."""
        for pid in ep.members:
            st = self._pstates[pid]
            if not st.alive or st.blocked is None:
                continue
            kind = st.blocked[0]
            if kind == "recv" or kind == "handshake":
                st.blocked = None
                st.resume_exc = RevokedError("communicator revoked")
        ep.hs_waiters.clear()

    def _resolve_collectives(self) -> bool:
        ep = self._epoch
        live = [pid for pid in ep.members if self._pstates[pid].alive]
        if not live:
            return False
        resolved = False
        if ep.hs_waiters and all(pid in ep.hs_waiters for pid in live):
            any_dead = any(not self._pstates[pid].alive for pid in ep.members)
            verdict = (not any_dead) and all(ep.hs_waiters[pid] for pid in live)
            sync = max(self._pstates[pid].clock for pid in live)
            for pid in sorted(ep.hs_waiters):
                st = self._pstates[pid]
                if st.clock < sync:
                    self.metrics.add(pid, seconds=sync - st.clock)
                    st.clock = sync
                st.blocked = None
                st.resume_value = verdict
            ep.hs_waiters.clear()
            resolved = True
        if ep.shrink_waiters and all(pid in ep.shrink_waiters for pid in live):
            survivors = [pid for pid in ep.members if self._pstates[pid].alive]
            reassignment = {
                ep.rank_of[pid]: new_rank for new_rank, pid in enumerate(survivors)
            }
            new_ep = _Epoch(ep.index + 1, survivors)
            self._epoch = new_ep
            self._epoch_sizes.append(len(survivors))
            self._shrink_maps.append(reassignment)
            sync = max(self._pstates[pid].clock for pid in survivors)
            for pid in sorted(ep.shrink_waiters):
                st = self._pstates[pid]
                if st.clock < sync:
                    self.metrics.add(pid, seconds=sync - st.clock)
                    st.clock = sync
                st.blocked = None
                st.resume_value = ShrinkResult(
                    epoch=new_ep.index,
                    rank=new_ep.rank_of[pid],
                    nprocs=len(survivors),
                    reassignment=dict(reassignment),
                )
                self.metrics.log(st.clock, pid, "shrink", st.step,
                                 f"epoch={new_ep.index};nprocs={len(survivors)}")
            ep.shrink_waiters.clear()
            resolved = True
        return resolved


def run_simulation(make_program, nprocs: int, schedule: FaultSchedule | None = None,
                   cost: CostModel | None = None, seed: int = 0, trace: bool = False):
    """Convenience wrapper: build a Simulator, run it, return (results, sim)."""
    sim = Simulator(nprocs, schedule=schedule, cost=cost, seed=seed, trace=trace)
    results = sim.run(make_program)
    return results, sim
