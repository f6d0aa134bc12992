#!/usr/bin/env python3
"""Kill every rank at every phase/step offset and check bit-exact recovery.

Runs the full injection grid of the workhorse scenario (one victim per run)
and reports, per phase, how many runs finished with a final checksum equal
to the fault-free reference. Expected output: every cell equal.
"""

import argparse
import sys
import time
from collections import Counter
from dataclasses import replace

from memckpt.cli import ScenarioConfig, run_scenario
from memckpt.runtime import DeterministicFault

EVERY_STEP_PHASES = ("compute", "ghost-exchange")
COMMIT_PHASES = ("snapshot-fill", "snapshot-exchange", "handshake", "commit")


def base_scenario(seed: int) -> ScenarioConfig:
    return ScenarioConfig(
        global_cells=(16, 16, 8),
        block_cells=(4, 4, 4),
        num_processes=8,
        total_steps=100,
        interval_steps=10,
        seed=seed,
    )


def main() -> int:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--seed", type=int, default=42)
    parser.add_argument("--base-step", type=int, default=50)
    args = parser.parse_args()

    reference = run_scenario(base_scenario(args.seed))
    assert reference.outcome == "completed"
    print(f"reference checksum: 0x{reference.report.final_checksum:016x}")

    matches: Counter = Counter()
    totals: Counter = Counter()
    start = time.perf_counter()
    for victim in range(8):
        points = [(args.base_step + o, p) for o in range(10) for p in EVERY_STEP_PHASES]
        points += [(args.base_step, p) for p in COMMIT_PHASES]
        for step, phase in points:
            cfg = replace(
                base_scenario(args.seed),
                faults=(DeterministicFault(victim, at_step=step, phase=phase),),
            )
            result = run_scenario(cfg)
            totals[phase] += 1
            if (
                result.outcome == "completed"
                and result.report.final_checksum == reference.report.final_checksum
            ):
                matches[phase] += 1
    elapsed = time.perf_counter() - start

    print(f"{'phase':<18} {'bit-identical':>14} {'runs':>6}")
    failed = False
    for phase in EVERY_STEP_PHASES + COMMIT_PHASES:
        print(f"{phase:<18} {matches[phase]:>14} {totals[phase]:>6}")
        failed |= matches[phase] != totals[phase]
    print(f"{sum(totals.values())} runs in {elapsed:.1f}s")
    return 1 if failed else 0


if __name__ == "__main__":
    sys.exit(main())
