"""Per-rank, per-phase accounting and the simulation report.

Counters attribute every byte, message, and simulated second of a run to the
phase active at the time. Ranks in reports always refer to the initial
(epoch-0) process identities so that rows stay comparable across shrinks.
"""

from __future__ import annotations

import io
from dataclasses import dataclass, field

# Canonical phase order used for deterministic report rows.
PHASES = (
    "compute",
    "ghost-exchange",
    "snapshot-fill",
    "snapshot-exchange",
    "handshake",
    "commit",
    "recovery",
    "restore",
    "rebalance",
    "other",
)

# Phases that may carry fault injection points.
INJECTION_PHASES = (
    "compute",
    "ghost-exchange",
    "snapshot-fill",
    "snapshot-exchange",
    "handshake",
    "commit",
)

EVENT_KINDS = ("fault", "revoke", "shrink", "restore", "rebalance", "commit", "abort")


@dataclass
class PhaseCounter:
    bytes: int = 0
    messages: int = 0
    seconds: float = 0.0


@dataclass(frozen=True)
class Event:
    sim_time: float
    rank: int
    kind: str
    step: int
    detail: str = ""


@dataclass
class SimulationReport:
    """Everything a finished (or aborted) run reports, CSV-serializable."""

    num_processes: int
    counters: dict[tuple[int, str], PhaseCounter] = field(default_factory=dict)
    events: list[Event] = field(default_factory=list)
    resident_snapshot_bytes: dict[int, int] = field(default_factory=dict)
    encoded_snapshot_bytes: dict[int, int] = field(default_factory=dict)
    final_step: int | None = None
    final_checksum: int | None = None
    outcome: str = "completed"

    @property
    def faults(self) -> int:
        return sum(1 for e in self.events if e.kind == "fault")

    @property
    def commits(self) -> int:
        return sum(1 for e in self.events if e.kind == "commit")

    @property
    def aborts(self) -> int:
        return sum(1 for e in self.events if e.kind == "abort")

    def phase_bytes(self, rank: int, phase: str) -> int:
        c = self.counters.get((rank, phase))
        return c.bytes if c else 0

    def phase_messages(self, rank: int, phase: str) -> int:
        c = self.counters.get((rank, phase))
        return c.messages if c else 0

    def phase_seconds(self, rank: int, phase: str) -> float:
        c = self.counters.get((rank, phase))
        return c.seconds if c else 0.0

    def sorted_events(self) -> list[Event]:
        return sorted(self.events, key=lambda e: (e.sim_time, e.rank, e.kind))

    def to_csv(self) -> str:
        """CSV schema: kind,rank,phase,step,sim_time_s,bytes,messages,detail."""
        out = io.StringIO()
        out.write("kind,rank,phase,step,sim_time_s,bytes,messages,detail\n")
        known = [p for p in PHASES]
        extra = sorted({p for (_, p) in self.counters} - set(known))
        for rank in range(self.num_processes):
            for phase in known + extra:
                c = self.counters.get((rank, phase))
                if c is None:
                    continue
                out.write(f"counter,{rank},{phase},,{c.seconds!r},{c.bytes},{c.messages},\n")
            if rank in self.resident_snapshot_bytes:
                out.write(f"counter,{rank},resident-snapshot,,0.0,{self.resident_snapshot_bytes[rank]},0,\n")
            if rank in self.encoded_snapshot_bytes:
                out.write(f"counter,{rank},encoded-snapshot,,0.0,{self.encoded_snapshot_bytes[rank]},0,\n")
        for e in self.sorted_events():
            out.write(f"event,{e.rank},{e.kind},{e.step},{e.sim_time!r},0,0,{e.detail}\n")
        checksum = f"0x{self.final_checksum:016x}" if self.final_checksum is not None else ""
        step = self.final_step if self.final_step is not None else ""
        out.write(f"summary,,run,{step},0.0,0,0,outcome={self.outcome};final_checksum={checksum}\n")
        return out.getvalue()


class MetricsCollector:
    """Mutable accounting sink threaded through one simulator instance."""

    def __init__(self, num_processes: int) -> None:
        self.num_processes = num_processes
        self.counters: dict[tuple[int, str], PhaseCounter] = {}
        self.events: list[Event] = []
        self._phase: dict[int, str] = {r: "other" for r in range(num_processes)}
        self._in_scope: dict[int, str | None] = {r: None for r in range(num_processes)}

    def current_phase(self, rank: int) -> str:
        return self._phase[rank]

    def begin_phase(self, rank: int, name: str) -> None:
        # Scopes are flat: entering a phase while another scope is open is a
        # programming error in the instrumented program.
        assert self._in_scope[rank] is None, (
            f"phase scope {name!r} opened inside {self._in_scope[rank]!r} on rank {rank}"
        )
        self._in_scope[rank] = name
        self._phase[rank] = name

    def end_phase(self, rank: int, name: str) -> None:
        assert self._in_scope[rank] == name, (
            f"phase scope end {name!r} does not match open scope {self._in_scope[rank]!r}"
        )
        self._in_scope[rank] = None
        self._phase[rank] = "other"

    def add(self, rank: int, bytes: int = 0, messages: int = 0, seconds: float = 0.0) -> None:
        key = (rank, self._phase[rank])
        c = self.counters.get(key)
        if c is None:
            c = self.counters[key] = PhaseCounter()
        c.bytes += bytes
        c.messages += messages
        c.seconds += seconds

    def log(self, sim_time: float, rank: int, kind: str, step: int, detail: str = "") -> None:
        self.events.append(Event(sim_time, rank, kind, step, detail))

    def report(self) -> SimulationReport:
        return SimulationReport(
            num_processes=self.num_processes,
            counters=self.counters,
            events=self.events,
        )
