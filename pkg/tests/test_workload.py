import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from memckpt.grid import DomainSpec
from memckpt.runtime import ProcFailedError, Simulator
from memckpt.workload import (
    PayloadError,
    StabilityError,
    decode_blocks,
    encode_blocks,
    exchange_ghosts,
    fill_local_ghosts,
    init_block,
    state_checksum,
    step_block,
)


def single_block_spec(n=3, fields=1):
    return DomainSpec(global_cells=(n, n, n), block_cells=(n, n, n), fields_per_cell=fields)


class TestInit:
    def test_deterministic(self):
        s = single_block_spec(4, fields=3)
        a, b = init_block(0, s, 99), init_block(0, s, 99)
        assert np.array_equal(a.interior, b.interior)

    def test_seed_changes_payload(self):
        s = single_block_spec(4)
        a, b = init_block(0, s, 0), init_block(0, s, 1)
        assert not np.array_equal(a.interior, b.interior)

    def test_blocks_differ(self):
        s = DomainSpec(global_cells=(8, 4, 4), block_cells=(4, 4, 4))
        a, b = init_block(0, s, 7), init_block(1, s, 7)
        assert not np.array_equal(a.interior, b.interior)

    def test_values_in_unit_interval(self):
        s = single_block_spec(5, fields=4)
        b = init_block(0, s, 3)
        assert (b.interior >= 0).all() and (b.interior < 1).all()


class TestStep:
    def test_uniform_field_is_fixed_point(self):
        s = single_block_spec(4)
        b = init_block(0, s, 0)
        b.interior[...] = 0.375
        fill_local_ghosts({0: b}, s)
        out = step_block(b, 0.1)
        assert np.array_equal(out.interior, np.full_like(out.interior, 0.375))

    def test_point_source_hand_values(self):
        # one center cell = 1 in a 3x3x3 periodic block, dt = 0.1:
        # center -> 1 + 0.1*(0 - 6) = 0.4, each face neighbor -> 0.1
        s = single_block_spec(3)
        b = init_block(0, s, 0)
        b.interior[...] = 0.0
        b.interior[0, 1, 1, 1] = 1.0
        fill_local_ghosts({0: b}, s)
        out = step_block(b, 0.1)
        assert out.interior[0, 1, 1, 1] == pytest.approx(0.4, rel=1e-12)
        for z, y, x in [(0, 1, 1), (2, 1, 1), (1, 0, 1), (1, 2, 1), (1, 1, 0), (1, 1, 2)]:
            assert out.interior[0, z, y, x] == pytest.approx(0.1, rel=1e-12)
        assert out.interior[0, 0, 0, 0] == 0.0

    def test_unstable_dt_rejected(self):
        s = single_block_spec(3)
        b = init_block(0, s, 0)
        with pytest.raises(StabilityError):
            step_block(b, 1.0 / 6.0 + 1e-9)

    def test_step_commutes_with_serialization(self):
        s = single_block_spec(4, fields=2)
        b = init_block(0, s, 5)
        rt = decode_blocks(encode_blocks({0: b}), origin_rank=0)[0]
        fill_local_ghosts({0: b}, s)
        fill_local_ghosts({0: rt}, s)
        assert np.array_equal(step_block(b, 0.1).interior, step_block(rt, 0.1).interior)

    @given(seed=st.integers(0, 2**32), steps=st.integers(1, 8))
    @settings(max_examples=25, deadline=None)
    def test_conservation(self, seed, steps):
        s = single_block_spec(4, fields=2)
        blocks = {0: init_block(0, s, seed)}
        totals = blocks[0].interior.sum(axis=(1, 2, 3))
        for _ in range(steps):
            fill_local_ghosts(blocks, s)
            blocks = {0: step_block(blocks[0], 0.1)}
        after = blocks[0].interior.sum(axis=(1, 2, 3))
        assert np.allclose(after, totals, rtol=1e-9)

    @given(seed=st.integers(0, 2**32), dt=st.floats(1e-3, 1.0 / 6.0))
    @settings(max_examples=25, deadline=None)
    def test_max_norm_non_increasing(self, seed, dt):
        s = single_block_spec(4)
        blocks = {0: init_block(0, s, seed)}
        before = np.abs(blocks[0].interior).max()
        for _ in range(4):
            fill_local_ghosts(blocks, s)
            blocks = {0: step_block(blocks[0], dt)}
            now = np.abs(blocks[0].interior).max()
            assert now <= before + 1e-15
            before = now


class TestChecksum:
    def test_stable(self):
        s = DomainSpec(global_cells=(8, 4, 4), block_cells=(4, 4, 4))
        blocks = {b: init_block(b, s, 1) for b in range(2)}
        assert state_checksum(blocks, 3) == state_checksum(blocks, 3)

    def test_bit_flip_changes_digest(self):
        s = single_block_spec(3)
        b = init_block(0, s, 1)
        before = state_checksum({0: b}, 0)
        raw = b.interior[0, 0, 0, 0]
        b.interior[0, 0, 0, 0] = np.frombuffer(
            (np.array([raw]).tobytes()[:-1] + bytes([np.array([raw]).tobytes()[-1] ^ 1])),
            dtype=np.float64,
        )[0]
        assert state_checksum({0: b}, 0) != before

    def test_step_counter_included(self):
        s = single_block_spec(3)
        b = init_block(0, s, 1)
        assert state_checksum({0: b}, 0) != state_checksum({0: b}, 1)

    def test_ownership_independent(self):
        s = DomainSpec(global_cells=(8, 4, 4), block_cells=(4, 4, 4))
        blocks = {b: init_block(b, s, 1) for b in range(2)}
        digest = state_checksum(blocks, 5)
        for b in blocks.values():
            b.origin_rank = 3
        assert state_checksum(blocks, 5) == digest


class TestCodec:
    @given(seed=st.integers(0, 2**31), meta=st.binary(max_size=16))
    @settings(max_examples=20, deadline=None)
    def test_round_trip(self, seed, meta):
        s = DomainSpec(global_cells=(4, 4, 4), block_cells=(2, 2, 2), fields_per_cell=3)
        blocks = {b: init_block(b, s, seed) for b in range(8)}
        blocks[3].meta = meta
        out = decode_blocks(encode_blocks(blocks), origin_rank=2)
        assert sorted(out) == sorted(blocks)
        for bid in blocks:
            assert np.array_equal(out[bid].interior, blocks[bid].interior)
            assert out[bid].meta == blocks[bid].meta
            assert out[bid].origin_rank == 2

    def test_truncation_rejected(self):
        s = single_block_spec(3)
        enc = encode_blocks({0: init_block(0, s, 0)})
        with pytest.raises(PayloadError):
            decode_blocks(enc[:-1], origin_rank=0)

    def test_trailing_bytes_rejected(self):
        s = single_block_spec(3)
        enc = encode_blocks({0: init_block(0, s, 0)})
        with pytest.raises(PayloadError):
            decode_blocks(enc + b"x", origin_rank=0)


def _ghost_program(spec, seed, steps):
    from memckpt.grid import partition_domain
    from memckpt.workload import init_block

    def make(proc):
        def program(proc):
            bmap = partition_domain(spec)
            blocks = {b: init_block(b, spec, seed) for b in bmap.blocks_of(proc.rank)}
            for step in range(steps):
                yield from exchange_ghosts(proc, blocks, bmap, spec, step)
                blocks = {b: step_block(blk, 0.1) for b, blk in blocks.items()}
            return blocks
        return program(proc)

    return make


class TestGhostExchange:
    def test_all_local_no_messages(self):
        spec = DomainSpec(global_cells=(4, 4, 4), block_cells=(2, 2, 2), num_processes=1)
        sim = Simulator(1)
        sim.run(_ghost_program(spec, 3, 2))
        assert sim.metrics.report().phase_messages(0, "other") == 0

    def test_1d_split_two_messages_per_rank_per_step(self):
        # 2 ranks, 2 blocks: only the two x faces cross the rank boundary
        spec = DomainSpec(global_cells=(4, 2, 2), block_cells=(2, 2, 2), num_processes=2)
        steps = 3
        sim = Simulator(2)
        sim.run(_ghost_program(spec, 3, steps))
        report = sim.metrics.report()
        for rank in range(2):
            assert report.phase_messages(rank, "other") == 2 * steps

    def test_matches_single_rank_evolution(self):
        spec = DomainSpec(global_cells=(8, 4, 2), block_cells=(2, 2, 2), num_processes=4)
        sim = Simulator(4)
        results = sim.run(_ghost_program(spec, 11, 5))
        combined = {}
        for blocks in results.values():
            combined.update(blocks)

        solo_spec = DomainSpec(global_cells=(8, 4, 2), block_cells=(2, 2, 2), num_processes=1)
        sim1 = Simulator(1)
        solo = sim1.run(_ghost_program(solo_spec, 11, 5))[0]
        assert state_checksum(combined, 5) == state_checksum(solo, 5)

    def test_dead_partner_raises(self):
        spec = DomainSpec(global_cells=(4, 2, 2), block_cells=(2, 2, 2), num_processes=2)
        from memckpt.grid import partition_domain
        from memckpt.runtime import DeterministicFault, FaultSchedule

        def make(proc):
            def program(proc):
                bmap = partition_domain(spec)
                blocks = {b: init_block(b, spec, 0) for b in bmap.blocks_of(proc.rank)}
                yield from proc.advance(1e-6)  # rank 1's scheduled kill fires here
                try:
                    yield from exchange_ghosts(proc, blocks, bmap, spec, 0)
                except ProcFailedError:
                    return "proc-failed"
                return "no-error"
            return program(proc)

        sim = Simulator(
            2,
            schedule=FaultSchedule(deterministic=(DeterministicFault(1, at_time=0.0),)),
        )
        results = sim.run(make)
        assert results[0] == "proc-failed"
        assert 1 not in results
