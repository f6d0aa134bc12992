"""Scenario runner and experiment driver.

Subcommands:
  run <config>                       execute one simulated run, emit report CSV
  sweep <config> --intervals a,b,c   Monte-Carlo completion-time curve CSV
  plan --mu-ind .. --nodes .. --c .. print MTBF, T_FO, overhead, memory factor

Config files are flat `key = value` text with `#` comments. Durations take
an `s` or `h` suffix, sizes `B` or `KiB`, both mandatory. Exit codes:
0 ok, 2 config error, 3 unrecoverable data loss, 4 deadlock.
"""

from __future__ import annotations

import argparse
import sys
import warnings
from dataclasses import dataclass, field, replace

from .grid import DomainSpec
from .metrics import INJECTION_PHASES, SimulationReport
from .planner import (
    PlannerInputs,
    memory_bytes,
    optimal_interval,
    overhead_fraction,
    system_mtbf,
    waste_sweep,
)
from .recovery import CheckpointConfig, WorkerResult, run_with_recovery
from .runtime import (
    CostModel,
    DeadlockError,
    DeterministicFault,
    FaultSchedule,
    Simulator,
    StochasticFaults,
)
from .workload import state_checksum

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_DATA_LOSS = 3
EXIT_DEADLOCK = 4


class ConfigError(ValueError):
    pass


def _number(text: str, unit: str) -> float:
    try:
        return float(text)
    except ValueError as exc:
        raise ConfigError(f"bad {unit} value {text!r}") from exc


def parse_duration(text: str) -> float:
    """Strictly suffixed duration: `s` (seconds) or `h` (hours)."""
    text = text.strip()
    if text.endswith("h"):
        return _number(text[:-1], "duration") * 3600.0
    if text.endswith("s"):
        return _number(text[:-1], "duration")
    raise ConfigError(f"duration {text!r} needs an 's' or 'h' suffix")


def format_duration(seconds: float) -> str:
    return f"{seconds!r}s"


def parse_size(text: str) -> int:
    """Strictly suffixed size: `B` or `KiB`."""
    text = text.strip()
    if text.endswith("KiB"):
        return int(_number(text[:-3], "size") * 1024)
    if text.endswith("B"):
        return int(_number(text[:-1], "size"))
    raise ConfigError(f"size {text!r} needs a 'B' or 'KiB' suffix")


def format_size(n: int) -> str:
    return f"{n}B"


def _parse_triple(text: str) -> tuple[int, int, int]:
    parts = text.lower().split("x")
    if len(parts) != 3:
        raise ConfigError(f"expected AxBxC, got {text!r}")
    return tuple(int(p) for p in parts)  # type: ignore[return-value]


def _parse_bool(text: str) -> bool:
    if text in ("true", "yes", "on", "1"):
        return True
    if text in ("false", "no", "off", "0"):
        return False
    raise ConfigError(f"expected a boolean, got {text!r}")


@dataclass(frozen=True)
class ScenarioConfig:
    """Everything one simulated run needs; validated before execution."""

    global_cells: tuple[int, int, int]
    block_cells: tuple[int, int, int]
    num_processes: int
    total_steps: int
    interval_steps: int
    fields_per_cell: int = 12
    resilient: bool = True
    dt: float = 0.1
    seed: int = 0
    faults: tuple[DeterministicFault, ...] = ()
    mtbf_ind: float | None = None
    fault_seed: int = 0
    ranks_per_node: int = 1
    compute_cost_per_cell: float = 1e-9
    message_latency: float = 1e-6
    bandwidth: float = 1e9
    output: str | None = None
    # Planner inputs used by the `sweep` subcommand.
    waste_mtbf: float | None = None
    waste_checkpoint_cost: float | None = None
    waste_recovery_cost: float = 1.0
    waste_horizon: float = 36000.0
    waste_trials: int = 1000

    def domain(self) -> DomainSpec:
        return DomainSpec(
            global_cells=self.global_cells,
            block_cells=self.block_cells,
            fields_per_cell=self.fields_per_cell,
            num_processes=self.num_processes,
        )

    def schedule(self) -> FaultSchedule:
        stochastic = None
        if self.mtbf_ind is not None:
            stochastic = StochasticFaults(mtbf_ind=self.mtbf_ind, seed=self.fault_seed)
        return FaultSchedule(
            deterministic=self.faults,
            stochastic=stochastic,
            ranks_per_node=self.ranks_per_node,
        )

    def cost(self) -> CostModel:
        return CostModel(
            compute_cost_per_cell=self.compute_cost_per_cell,
            message_latency=self.message_latency,
            bandwidth=self.bandwidth,
        )

    def checkpoint(self) -> CheckpointConfig:
        return CheckpointConfig(
            interval_steps=self.interval_steps,
            resilient_double_buffer=self.resilient,
        )

    def validate(self) -> None:
        self.domain()
        self.schedule()
        self.cost()
        self.checkpoint()
        if self.total_steps < 1:
            raise ConfigError("total_steps must be >= 1")
        if not 0.0 < self.dt <= 1.0 / 6.0:
            raise ConfigError("dt must be in (0, 1/6]")
        for f in self.faults:
            if f.victim >= self.num_processes:
                raise ConfigError(f"fault victim {f.victim} outside world")
            if f.phase is not None and f.phase not in INJECTION_PHASES:
                raise ConfigError(f"unknown fault phase {f.phase!r}")


def _fault_to_text(f: DeterministicFault) -> str:
    parts = [f"rank={f.victim}"]
    if f.at_time is not None:
        parts.append(f"time={format_duration(f.at_time)}")
    else:
        parts.append(f"step={f.at_step}")
        parts.append(f"phase={f.phase}")
        if f.op_index:
            parts.append(f"op={f.op_index}")
    if f.kill_node:
        parts.append("node")
    return " ".join(parts)


def _fault_from_text(text: str) -> DeterministicFault:
    victim = None
    kwargs: dict = {}
    for token in text.split():
        if token == "node":
            kwargs["kill_node"] = True
            continue
        if "=" not in token:
            raise ConfigError(f"bad fault token {token!r}")
        key, value = token.split("=", 1)
        if key == "rank":
            victim = int(value)
        elif key == "time":
            kwargs["at_time"] = parse_duration(value)
        elif key == "step":
            kwargs["at_step"] = int(value)
        elif key == "phase":
            kwargs["phase"] = value
        elif key == "op":
            kwargs["op_index"] = int(value)
        else:
            raise ConfigError(f"unknown fault key {key!r}")
    if victim is None:
        raise ConfigError(f"fault entry {text!r} needs rank=")
    try:
        return DeterministicFault(victim=victim, **kwargs)
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc


def config_to_text(cfg: ScenarioConfig) -> str:
    lines = [
        "# memckpt scenario",
        f"global_cells = {cfg.global_cells[0]}x{cfg.global_cells[1]}x{cfg.global_cells[2]}",
        f"block_cells = {cfg.block_cells[0]}x{cfg.block_cells[1]}x{cfg.block_cells[2]}",
        f"fields_per_cell = {cfg.fields_per_cell}",
        f"num_processes = {cfg.num_processes}",
        f"total_steps = {cfg.total_steps}",
        f"checkpoint_interval_steps = {cfg.interval_steps}",
        f"resilient = {'true' if cfg.resilient else 'false'}",
        f"dt = {cfg.dt!r}",
        f"seed = {cfg.seed}",
        f"ranks_per_node = {cfg.ranks_per_node}",
        f"compute_cost_per_cell = {format_duration(cfg.compute_cost_per_cell)}",
        f"message_latency = {format_duration(cfg.message_latency)}",
        f"bandwidth = {format_size(int(cfg.bandwidth))}",
    ]
    if cfg.mtbf_ind is not None:
        lines.append(f"mtbf_ind = {format_duration(cfg.mtbf_ind)}")
        lines.append(f"fault_seed = {cfg.fault_seed}")
    for f in cfg.faults:
        lines.append(f"fault = {_fault_to_text(f)}")
    if cfg.output:
        lines.append(f"output = {cfg.output}")
    if cfg.waste_mtbf is not None:
        lines.append(f"waste_mtbf = {format_duration(cfg.waste_mtbf)}")
    if cfg.waste_checkpoint_cost is not None:
        lines.append(f"waste_checkpoint_cost = {format_duration(cfg.waste_checkpoint_cost)}")
    lines.append(f"waste_recovery_cost = {format_duration(cfg.waste_recovery_cost)}")
    lines.append(f"waste_horizon = {format_duration(cfg.waste_horizon)}")
    lines.append(f"waste_trials = {cfg.waste_trials}")
    return "\n".join(lines) + "\n"


def config_from_text(text: str) -> ScenarioConfig:
    values: dict = {}
    faults: list[DeterministicFault] = []
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'key = value'")
        key, value = (p.strip() for p in line.split("=", 1))
        if key == "fault":
            try:
                faults.append(_fault_from_text(value))
            except ConfigError:
                raise
            except ValueError as exc:
                raise ConfigError(f"line {lineno}: {exc}") from exc
            continue
        values[key] = value

    def need(key: str) -> str:
        if key not in values:
            raise ConfigError(f"missing required key {key!r}")
        return values.pop(key)

    try:
        cfg = ScenarioConfig(
            global_cells=_parse_triple(need("global_cells")),
            block_cells=_parse_triple(need("block_cells")),
            num_processes=int(need("num_processes")),
            total_steps=int(need("total_steps")),
            interval_steps=int(need("checkpoint_interval_steps")),
            fields_per_cell=int(values.pop("fields_per_cell", "12")),
            resilient=_parse_bool(values.pop("resilient", "true")),
            dt=float(values.pop("dt", "0.1")),
            seed=int(values.pop("seed", "0")),
            faults=tuple(faults),
            mtbf_ind=parse_duration(values.pop("mtbf_ind")) if "mtbf_ind" in values else None,
            fault_seed=int(values.pop("fault_seed", "0")),
            ranks_per_node=int(values.pop("ranks_per_node", "1")),
            compute_cost_per_cell=parse_duration(values.pop("compute_cost_per_cell", "1e-9s")),
            message_latency=parse_duration(values.pop("message_latency", "1e-6s")),
            bandwidth=float(parse_size(values.pop("bandwidth", "1000000000B"))),
            output=values.pop("output", None),
            waste_mtbf=parse_duration(values.pop("waste_mtbf")) if "waste_mtbf" in values else None,
            waste_checkpoint_cost=(
                parse_duration(values.pop("waste_checkpoint_cost"))
                if "waste_checkpoint_cost" in values else None
            ),
            waste_recovery_cost=parse_duration(values.pop("waste_recovery_cost", "1s")),
            waste_horizon=parse_duration(values.pop("waste_horizon", "10h")),
            waste_trials=int(values.pop("waste_trials", "1000")),
        )
    except ConfigError:
        raise
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc
    if values:
        raise ConfigError(f"unknown keys: {sorted(values)}")
    try:
        cfg.validate()
    except ConfigError:
        raise
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc
    return cfg


@dataclass
class ScenarioResult:
    outcome: str  # completed | data-loss | deadlock
    report: SimulationReport
    results: dict[int, WorkerResult] = field(default_factory=dict)
    trace: list[tuple] = field(default_factory=list)

    @property
    def final_checksum(self) -> int | None:
        return self.report.final_checksum


def run_scenario(cfg: ScenarioConfig, trace: bool = False) -> ScenarioResult:
    """Execute one scenario under the simulator and assemble its report."""
    cfg.validate()
    spec = cfg.domain()
    ckpt = cfg.checkpoint()

    def make_program(proc):
        return run_with_recovery(proc, spec, ckpt, cfg.total_steps, cfg.dt, cfg.seed)

    sim = Simulator(
        cfg.num_processes,
        schedule=cfg.schedule(),
        cost=cfg.cost(),
        seed=cfg.seed,
        trace=trace,
    )
    try:
        results = sim.run(make_program)
    except DeadlockError:
        report = sim.metrics.report()
        report.outcome = "deadlock"
        return ScenarioResult(outcome="deadlock", report=report, trace=sim.trace_log)

    report = sim.metrics.report()
    if sim.abort_exc is not None or not results:
        report.outcome = "data-loss"
        return ScenarioResult(
            outcome="data-loss", report=report, results=results, trace=sim.trace_log
        )

    steps = {r.step for r in results.values()}
    assert len(steps) == 1, "survivors finished at different steps"
    blocks = {}
    for r in results.values():
        overlap = blocks.keys() & r.blocks.keys()
        assert not overlap, f"blocks owned twice after completion: {sorted(overlap)}"
        blocks.update(r.blocks)
    report.final_step = steps.pop()
    report.final_checksum = state_checksum(blocks, report.final_step)
    for pid, r in results.items():
        report.resident_snapshot_bytes[pid] = r.resident_snapshot_bytes
        report.encoded_snapshot_bytes[pid] = r.encoded_snapshot_bytes
    report.outcome = "completed"
    return ScenarioResult(
        outcome="completed", report=report, results=results, trace=sim.trace_log
    )


def _cmd_run(args) -> int:
    try:
        with open(args.config, "r", encoding="utf-8") as fh:
            cfg = config_from_text(fh.read())
    except OSError as exc:
        print(f"error: cannot read config: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except ConfigError as exc:
        print(f"error: bad config: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    if args.output:
        cfg = replace(cfg, output=args.output)
    result = run_scenario(cfg)
    csv_text = result.report.to_csv()
    if cfg.output:
        with open(cfg.output, "w", encoding="utf-8", newline="") as fh:
            fh.write(csv_text)
    else:
        sys.stdout.write(csv_text)
    if result.outcome == "completed":
        print(
            f"completed: final_step={result.report.final_step} "
            f"final_checksum=0x{result.report.final_checksum:016x} "
            f"faults={result.report.faults} commits={result.report.commits}",
            file=sys.stderr,
        )
        return EXIT_OK
    if result.outcome == "data-loss":
        print("error: unrecoverable data loss (snapshot pair fully lost)", file=sys.stderr)
        return EXIT_DATA_LOSS
    print("error: simulation deadlocked", file=sys.stderr)
    return EXIT_DEADLOCK


def _cmd_sweep(args) -> int:
    try:
        with open(args.config, "r", encoding="utf-8") as fh:
            cfg = config_from_text(fh.read())
        intervals = [float(x) for x in args.intervals.split(",") if x.strip()]
        if not intervals:
            raise ConfigError("interval list is empty")
        if any(i <= 0 for i in intervals):
            raise ConfigError("intervals must be positive")
        if cfg.waste_mtbf is None or cfg.waste_checkpoint_cost is None:
            raise ConfigError("sweep needs waste_mtbf and waste_checkpoint_cost in the config")
    except OSError as exc:
        print(f"error: cannot read config: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (ConfigError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    inputs = PlannerInputs(
        mu_ind=cfg.waste_mtbf,
        num_nodes=1,
        checkpoint_cost=cfg.waste_checkpoint_cost,
        recovery_cost=cfg.waste_recovery_cost,
    )
    points = waste_sweep(intervals, inputs, cfg.waste_horizon, cfg.waste_trials, cfg.seed)
    lines = ["interval_s,mean_completion_s,commits,aborts"]
    for p in points:
        lines.append(f"{p.interval!r},{p.mean_completion!r},{p.mean_commits!r},{p.mean_faults!r}")
    text = "\n".join(lines) + "\n"
    if args.output:
        with open(args.output, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)
    else:
        sys.stdout.write(text)
    return EXIT_OK


def _cmd_plan(args) -> int:
    try:
        mu_ind = parse_duration(args.mu_ind)
        c = parse_duration(args.c)
        nodes = args.nodes
        if mu_ind <= 0 or c <= 0 or nodes < 1:
            raise ConfigError("plan inputs must be positive")
        s = parse_size(args.s) if args.s else None
        r = args.r
        if r < 1:
            raise ConfigError("r must be >= 1")
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    resilient = not args.non_resilient
    mu = system_mtbf(mu_ind, nodes)
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always")
        t_fo = optimal_interval(mu, c)
    overhead = overhead_fraction(mu, c)
    factor = (1 + 2 * r) if resilient else (1 + r)
    if args.csv:
        print("mu_s,t_fo_s,overhead,memory_factor" + (",memory_bytes" if s else ""))
        row = f"{mu!r},{t_fo!r},{overhead!r},{factor}"
        if s:
            row += f",{memory_bytes(s, r, resilient)}"
        print(row)
    else:
        print(f"system MTBF           : {mu:.6g} s")
        print(f"optimal interval T_FO : {t_fo:.6g} s")
        print(f"overhead fraction     : {overhead * 100.0:.4g} %")
        mode = "resilient" if resilient else "non-resilient"
        print(f"memory factor         : {factor}  ({mode}, r={r})")
        if s:
            print(f"memory bytes          : {memory_bytes(s, r, resilient)} B")
    for w in caught:
        print(f"warning: {w.message}", file=sys.stderr)
    return EXIT_OK


def main(argv: list[str] | None = None) -> int:
    parser = argparse.ArgumentParser(
        prog="memckpt",
        description="Diskless pairwise checkpoint/restart simulator and planner",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="run one scenario, emit report CSV")
    p_run.add_argument("config")
    p_run.add_argument("-o", "--output", help="override the config's output path")
    p_run.set_defaults(func=_cmd_run)

    p_sweep = sub.add_parser("sweep", help="Monte-Carlo interval sweep, emit CSV")
    p_sweep.add_argument("config")
    p_sweep.add_argument("--intervals", required=True, help="comma-separated seconds")
    p_sweep.add_argument("-o", "--output")
    p_sweep.set_defaults(func=_cmd_sweep)

    p_plan = sub.add_parser("plan", help="print MTBF, T_FO, overhead, memory factor")
    p_plan.add_argument("--mu-ind", required=True, help="node MTBF, e.g. 8h")
    p_plan.add_argument("--nodes", type=int, required=True)
    p_plan.add_argument("--c", required=True, help="checkpoint cost, e.g. 7s")
    p_plan.add_argument("--s", help="local snapshot size, e.g. 4KiB")
    p_plan.add_argument("--r", type=int, default=2, help="redundancy copies (default 2)")
    p_plan.add_argument("--non-resilient", action="store_true")
    p_plan.add_argument("--csv", action="store_true")
    p_plan.set_defaults(func=_cmd_plan)

    args = parser.parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
