#!/usr/bin/env python3
"""Per-rank checkpoint traffic as the world grows (weak-scaling stand-in).

With a fixed per-rank payload, pairwise redundancy ships the same number of
bytes per rank no matter how many processes run: the table's traffic column
is constant. Doubling the cells per block doubles it (modulo framing).
"""

import argparse
import sys

from memckpt.cli import ScenarioConfig, run_scenario


def chain(n: int, block: tuple[int, int, int], blocks_per_rank: int, seed: int) -> ScenarioConfig:
    return ScenarioConfig(
        global_cells=(block[0] * blocks_per_rank * n, block[1], block[2]),
        block_cells=block,
        num_processes=n,
        total_steps=10,
        interval_steps=5,
        seed=seed,
    )


def main() -> int:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--block", default="4x4x4")
    parser.add_argument("--blocks-per-rank", type=int, default=2)
    parser.add_argument("--seed", type=int, default=1)
    parser.add_argument(
        "--sizes", default="4,8,16,32,64,128,256", help="comma-separated world sizes"
    )
    args = parser.parse_args()
    block = tuple(int(p) for p in args.block.lower().split("x"))
    sizes = [int(s) for s in args.sizes.split(",")]

    print(f"{'n':>5} {'ckpt bytes/rank':>16} {'ghost bytes/rank':>17} {'commits':>8}")
    for n in sizes:
        result = run_scenario(chain(n, block, args.blocks_per_rank, args.seed))
        assert result.outcome == "completed"
        ckpt = {result.report.phase_bytes(r, "snapshot-exchange") for r in range(n)}
        ghost = result.report.phase_bytes(0, "ghost-exchange")
        assert len(ckpt) == 1, f"ranks disagree at n={n}"
        print(f"{n:>5} {ckpt.pop():>16} {ghost:>17} {result.report.commits // n:>8}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
