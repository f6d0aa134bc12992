"""Acceptance suite: one test per criterion, each printing a PASS line.

Run with `pytest tests/test_acceptance.py -v -s` to see the per-criterion
lines; the whole suite is plain pytest otherwise.
"""

import math
import time
from collections import Counter

import numpy as np
import pytest

from memckpt.cli import ScenarioConfig, run_scenario
from memckpt.distribution import pairwise_plan, pairwise_plan_table
from memckpt.planner import (
    PlannerInputs,
    geometric_intervals,
    optimal_interval,
    overhead_fraction,
    waste_sweep,
)
from memckpt.runtime import DeterministicFault
from memckpt.snapshot import HEADER_SIZE

from conftest import make_scenario


def ok(num, text):
    print(f"ACCEPTANCE {num:02d} PASS - {text}")


# -- criterion 1 ---------------------------------------------------------


def test_criterion_01_pairwise_mapping_brute_force():
    start = time.perf_counter()
    for n in range(2, 4097):
        send, recv = pairwise_plan_table(n)
        ranks = np.arange(n)
        assert (send[recv[ranks]] == ranks).all(), f"consistency broken at n={n}"
        if n % 2 == 0:
            assert (send[send[ranks]] == ranks).all(), f"involution broken at n={n}"
    # the vectorized table is the scalar routine: spot-weld them together
    for n in list(range(2, 129)) + [1024, 2049, 4096]:
        send, recv = pairwise_plan_table(n)
        for r in range(0, n, max(1, n // 64)):
            p = pairwise_plan(r, n)
            assert (p.send_to, p.recv_from) == (send[r], recv[r])
    elapsed = time.perf_counter() - start
    assert elapsed < 5.0, f"brute force took {elapsed:.2f}s"
    ok(1, f"send/recv consistency + even involution for all n in 2..4096 ({elapsed:.2f}s)")


# -- criteria 2 and 4 share one sweep ------------------------------------

SWEEP_PHASES_EVERY_STEP = ("compute", "ghost-exchange")
SWEEP_PHASES_AT_COMMITS = ("snapshot-fill", "snapshot-exchange", "handshake")


@pytest.fixture(scope="module")
def crash_sweep():
    """Every (victim, phase, step-mod-interval) injection point of the
    16x16x8 / 4x4x4 / 8-rank / 100-step / interval-10 scenario."""
    reference = run_scenario(make_scenario())
    assert reference.outcome == "completed"
    runs = []
    start = time.perf_counter()
    for victim in range(8):
        for offset in range(10):
            step = 50 + offset  # mid-run, one full interval of offsets
            for phase in SWEEP_PHASES_EVERY_STEP:
                cfg = make_scenario(
                    faults=(DeterministicFault(victim, at_step=step, phase=phase),)
                )
                runs.append(((victim, phase, offset), run_scenario(cfg)))
        for phase in SWEEP_PHASES_AT_COMMITS:  # rounds run at offset 0 only
            cfg = make_scenario(
                faults=(DeterministicFault(victim, at_step=50, phase=phase),)
            )
            runs.append(((victim, phase, 0), run_scenario(cfg)))
    elapsed = time.perf_counter() - start
    return reference, runs, elapsed


def test_criterion_02_crash_consistency_sweep(crash_sweep):
    reference, runs, elapsed = crash_sweep
    assert len(runs) == 8 * (10 * 2 + 3)
    for key, result in runs:
        assert result.outcome == "completed", key
        assert result.report.final_step == 100, key
        assert result.report.final_checksum == reference.report.final_checksum, key
    assert elapsed < 120.0, f"sweep took {elapsed:.1f}s"
    ok(2, f"{len(runs)} injection points all bit-identical to the reference ({elapsed:.1f}s)")


def test_criterion_04_recovery_locality(crash_sweep):
    _, runs, _ = crash_sweep
    for key, result in runs:
        for rank in range(8):
            assert result.report.phase_messages(rank, "restore") == 0, key
            assert result.report.phase_bytes(rank, "restore") == 0, key
    ok(4, "restore-phase message counter is 0 in every sweep scenario")


# -- criterion 3 ---------------------------------------------------------


def n4_scenario(**overrides):
    base = dict(
        global_cells=(8, 8, 4),
        block_cells=(4, 4, 4),
        num_processes=4,
        total_steps=30,
        interval_steps=10,
        seed=7,
    )
    base.update(overrides)
    return ScenarioConfig(**base)


def test_criterion_03_all_or_nothing_commit():
    # enumerate the actual request boundaries of the checkpoint round at
    # step 20 from a fault-free trace, then kill each victim at each one
    trace_run = run_scenario(n4_scenario(), trace=True)
    in_phase = Counter()
    for pid, step, phase, _kind in trace_run.trace:
        if step == 20 and phase in SWEEP_PHASES_AT_COMMITS:
            in_phase[(pid, phase)] += 1

    cases = 0
    for victim in range(4):
        for phase in SWEEP_PHASES_AT_COMMITS:
            boundaries = 1 + in_phase[(victim, phase)]  # phase entry + each request
            for op_index in range(boundaries):
                cfg = n4_scenario(
                    faults=(
                        DeterministicFault(victim, at_step=20, phase=phase, op_index=op_index),
                    )
                )
                result = run_scenario(cfg)
                assert result.outcome == "completed", (victim, phase, op_index)
                restores = [e for e in result.report.events if e.kind == "restore"]
                survivors = {e.rank for e in restores}
                assert survivors == set(range(4)) - {victim}
                first = {}
                for e in result.report.sorted_events():
                    if e.kind == "restore" and e.rank not in first:
                        first[e.rank] = e.detail
                # all-or-nothing: every survivor's read-only half still holds
                # the previous commit (step 10), never the aborted step 20
                assert set(first.values()) == {"step=10;ro_step=10"}, (victim, phase, op_index)
                cases += 1
    ok(3, f"{cases} exhaustive in-round injections: no survivor ever swapped early")


# -- criterion 5 ---------------------------------------------------------


def test_criterion_05_pair_loss_abort():
    rng = np.random.default_rng(12345)
    silently_wrong = 0
    for case in range(50):
        r = int(rng.integers(0, 4))
        step = int(rng.integers(1, 96))
        phase = ("compute", "ghost-exchange")[int(rng.integers(0, 2))]
        seed = int(rng.integers(0, 2**31))
        cfg = make_scenario(
            seed=seed,
            faults=(
                DeterministicFault(r, at_step=step, phase=phase),
                DeterministicFault(r + 4, at_step=step, phase=phase),
            ),
        )
        result = run_scenario(cfg)
        if result.outcome == "completed":
            silently_wrong += 1
        assert result.outcome == "data-loss", (case, r, step, phase)
    assert silently_wrong == 0
    ok(5, "50 randomized pair kills all abort with the data-loss outcome")


# -- criterion 6 ---------------------------------------------------------


def chain_scenario(n, block=(4, 4, 4)):
    return make_scenario(
        global_cells=(block[0] * 2 * n, block[1], block[2]),
        block_cells=block,
        num_processes=n,
        total_steps=10,
        interval_steps=5,
        seed=1,
    )


def test_criterion_06_scaling_proxy():
    sizes = set()
    for n in (4, 8, 16, 32, 64, 128, 256):
        result = run_scenario(chain_scenario(n))
        assert result.outcome == "completed"
        per_rank = {result.report.phase_bytes(r, "snapshot-exchange") for r in range(n)}
        assert len(per_rank) == 1, f"ranks disagree at n={n}"
        sizes |= per_rank
    assert len(sizes) == 1, f"checkpoint bytes vary with world size: {sizes}"

    small = run_scenario(chain_scenario(4, block=(8, 8, 8)))
    big = run_scenario(chain_scenario(4, block=(8, 8, 16)))
    b_small = small.report.phase_bytes(0, "snapshot-exchange")
    b_big = big.report.phase_bytes(0, "snapshot-exchange")
    assert abs(b_big - 2 * b_small) <= 0.01 * b_big, (b_small, b_big)
    ok(6, f"checkpoint bytes/rank exactly {sizes.pop()} for n=4..256; doubling cells doubles bytes")


# -- criterion 7 ---------------------------------------------------------


def test_criterion_07_overhead_formula():
    for c, bound in [(7.0, 0.04), (6.0, 0.03)]:
        got = overhead_fraction(3600.0, c)
        assert got <= bound
        expected = math.sqrt(c / (2.0 * 3600.0))
        assert abs(got - expected) <= 1e-12 * expected
    ok(7, "overhead(1h, 7s) <= 4%, overhead(1h, 6s) <= 3%, exact to 1e-12")


# -- criterion 8 ---------------------------------------------------------

# Snapshot framing around the two engine entities ("blocks", "step_timer"):
# 26-byte header + per-entry (2 + name + 4 + 8 + 4) + 4-byte trailer.
FRAMING = HEADER_SIZE + (18 + len("blocks")) + (18 + len("step_timer")) + 4


def test_criterion_08_memory_model():
    resilient = run_scenario(make_scenario(total_steps=30))
    for rank in range(8):
        enc = resilient.report.encoded_snapshot_bytes[rank]
        res = resilient.report.resident_snapshot_bytes[rank]
        # live payload + 2 * (own entries + partner blob); entry payloads
        # miss exactly one framing each, the live payload misses one
        assert 5 * enc - res == 3 * FRAMING, (rank, enc, res)

    single = run_scenario(make_scenario(total_steps=30, resilient=False))
    for rank in range(8):
        enc = single.report.encoded_snapshot_bytes[rank]
        res = single.report.resident_snapshot_bytes[rank]
        assert 3 * enc - res == 2 * FRAMING, (rank, enc, res)
    ok(8, "resident snapshot bytes are 5x (resilient) and 3x (single-buffer) the "
          "encoded size, modulo fixed framing")


# -- criterion 9 ---------------------------------------------------------


def test_criterion_09_waste_curve():
    start = time.perf_counter()
    t_fo = optimal_interval(3600.0, 7.0)
    inputs = PlannerInputs(mu_ind=3600.0, num_nodes=1, checkpoint_cost=7.0, recovery_cost=1.0)
    intervals = geometric_intervals(t_fo, 8.0, 16)
    points = waste_sweep(intervals, inputs, horizon=36000.0, trials=1000, seed=0)
    best = min(points, key=lambda p: p.mean_completion)
    assert t_fo / 2.0 <= best.interval <= 2.0 * t_fo, best
    elapsed = time.perf_counter() - start
    assert elapsed < 60.0, f"sweep took {elapsed:.1f}s"
    ok(9, f"empirical optimum {best.interval:.1f}s brackets T_FO={t_fo:.1f}s ({elapsed:.1f}s)")


# -- criterion 10 --------------------------------------------------------


def test_criterion_10_determinism_golden():
    cfg = make_scenario(
        total_steps=60,
        faults=(DeterministicFault(3, at_step=23, phase="ghost-exchange"),),
        mtbf_ind=30 * 24 * 3600.0,
        fault_seed=11,
        ranks_per_node=2,
    )
    a = run_scenario(cfg).report.to_csv()
    b = run_scenario(cfg).report.to_csv()
    assert a == b
    assert "outcome=completed" in a
    ok(10, "fixed scenario + seed reproduces byte-identical report CSV")
