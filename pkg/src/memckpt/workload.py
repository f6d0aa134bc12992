"""Deterministic multi-field diffusion stencil acting as the checkpointed payload.

Every block carries F independent cell fields updated by an explicit 7-point
Jacobi step under periodic boundaries. All updates are elementwise with a
fixed expression tree, so block states are bit-reproducible regardless of
which rank owns a block or how often the run was rolled back.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numba
import numpy as np

from .checksum import crc64
from .grid import (
    OPPOSITE_FACE,
    BlockMap,
    DomainSpec,
    Triple,
    block_origin_cells,
    neighbor_table,
)

MAX_STABLE_DT = 1.0 / 6.0


class StabilityError(ValueError):
    """dt exceeds the 3D 7-point explicit stability bound (1/6)."""


class PayloadError(ValueError):
    """Malformed block payload bytes."""


@dataclass
class BlockData:
    """One block's fields on a ghost-padded array of shape (F, z+2, y+2, x+2).

    `dims` are interior cell counts (x, y, z); `origin_rank` is the rank that
    owned the block when it was last serialized; `meta` is an opaque
    per-block metadata extension carried through snapshots untouched.
    """

    bid: int
    dims: Triple
    data: np.ndarray
    origin_rank: int = 0
    meta: bytes = b""

    @property
    def interior(self) -> np.ndarray:
        return self.data[:, 1:-1, 1:-1, 1:-1]

    @property
    def fields(self) -> int:
        return self.data.shape[0]


def _padded(fields: int, dims: Triple) -> np.ndarray:
    dx, dy, dz = dims
    return np.zeros((fields, dz + 2, dy + 2, dx + 2), dtype=np.float64)


def _splitmix64(x: np.ndarray) -> np.ndarray:
    z = x + np.uint64(0x9E3779B97F4A7C15)
    z = (z ^ (z >> np.uint64(30))) * np.uint64(0xBF58476D1CE4E5B9)
    z = (z ^ (z >> np.uint64(27))) * np.uint64(0x94D049BB133111EB)
    return z ^ (z >> np.uint64(31))


def init_block(bid: int, spec: DomainSpec, seed: int) -> BlockData:
    """Seed a block from its global cell coordinates, independent of ownership.

    Cell value = splitmix64(seed xor linear-global-index(field, cell)) mapped
    to [0, 1).
    """
    gx, gy, gz = spec.global_cells
    ox, oy, oz = block_origin_cells(bid, spec)
    dx, dy, dz = spec.block_cells
    f = spec.fields_per_cell

    xs = (np.arange(ox, ox + dx, dtype=np.uint64)).reshape(1, 1, 1, dx)
    ys = (np.arange(oy, oy + dy, dtype=np.uint64) * np.uint64(gx)).reshape(1, 1, dy, 1)
    zs = (np.arange(oz, oz + dz, dtype=np.uint64) * np.uint64(gx * gy)).reshape(1, dz, 1, 1)
    fs = (np.arange(f, dtype=np.uint64) * np.uint64(gx * gy * gz)).reshape(f, 1, 1, 1)
    idx = xs + ys + zs + fs

    h = _splitmix64(np.uint64(seed) ^ idx)
    values = (h >> np.uint64(11)).astype(np.float64) * (2.0 ** -53)

    block = BlockData(bid=bid, dims=spec.block_cells, data=_padded(f, spec.block_cells))
    block.interior[...] = values
    return block


@numba.njit(cache=True, nogil=True)
def _stencil_kernel(c: np.ndarray, out: np.ndarray, dt: float) -> None:
    # Fixed loop order (field, z, y, x) and a fixed expression tree per cell,
    # so results are bit-identical across runs and owning ranks.
    nf, nz, ny, nx = c.shape
    for f in range(nf):
        for z in range(1, nz - 1):
            for y in range(1, ny - 1):
                for x in range(1, nx - 1):
                    u = c[f, z, y, x]
                    nb = (
                        (c[f, z - 1, y, x] + c[f, z + 1, y, x])
                        + (c[f, z, y - 1, x] + c[f, z, y + 1, x])
                    ) + (c[f, z, y, x - 1] + c[f, z, y, x + 1])
                    out[f, z, y, x] = u + dt * (nb - 6.0 * u)


def step_block(block: BlockData, dt: float) -> BlockData:
    """One explicit diffusion step: u' = u + dt * (sum of 6 face neighbors - 6u).

    Requires filled face halos. Ghost shells of the result are left
    unwritten; nothing reads them before the next halo exchange, and
    serialization covers the interior only.
    """
    if not 0.0 < dt <= MAX_STABLE_DT:
        raise StabilityError(f"dt={dt} outside (0, {MAX_STABLE_DT}]")
    c = block.data
    data = np.empty_like(c)
    _stencil_kernel(c, data, dt)
    return BlockData(
        bid=block.bid,
        dims=block.dims,
        data=data,
        origin_rank=block.origin_rank,
        meta=block.meta,
    )


# Ghost plane source/target slices per face, on the padded (F, z, y, x) array.
# Target = my ghost layer; source = the neighbor's interior boundary plane.
_GHOST_TARGET = {
    "-x": np.s_[:, 1:-1, 1:-1, 0],
    "+x": np.s_[:, 1:-1, 1:-1, -1],
    "-y": np.s_[:, 1:-1, 0, 1:-1],
    "+y": np.s_[:, 1:-1, -1, 1:-1],
    "-z": np.s_[:, 0, 1:-1, 1:-1],
    "+z": np.s_[:, -1, 1:-1, 1:-1],
}
_GHOST_SOURCE = {
    "-x": np.s_[:, 1:-1, 1:-1, -2],
    "+x": np.s_[:, 1:-1, 1:-1, 1],
    "-y": np.s_[:, 1:-1, -2, 1:-1],
    "+y": np.s_[:, 1:-1, 1, 1:-1],
    "-z": np.s_[:, -2, 1:-1, 1:-1],
    "+z": np.s_[:, 1, 1:-1, 1:-1],
}


def fill_local_ghosts(blocks: dict[int, BlockData], spec: DomainSpec) -> None:
    """Fill all face halos when every neighbor is present in `blocks`."""
    table = neighbor_table(spec)
    for bid in sorted(blocks):
        b = blocks[bid]
        for face, nb_id in table[bid]:
            b.data[_GHOST_TARGET[face]] = blocks[nb_id].data[_GHOST_SOURCE[face]]


@dataclass
class ExchangePlan:
    """Static halo-exchange pattern for one rank under a fixed ownership map.

    local:  (target block, face, source block) same-rank plane copies
    sends:  (dst rank, receiving block, receiving face, my source block)
    recvs:  (src rank, my block, face)
    """

    local: list[tuple[int, str, int]]
    sends: list[tuple[int, int, str, int]]
    recvs: list[tuple[int, int, str]]


def build_exchange_plan(owned: list[int], bmap: BlockMap, spec: DomainSpec, rank: int) -> ExchangePlan:
    """Derive who copies, sends, and receives which face planes for `rank`.

    Tags are receiver-centric: the remote block nb sees my block at
    OPPOSITE(face) and expects my source plane for that direction.
    """
    table = neighbor_table(spec)
    plan = ExchangePlan(local=[], sends=[], recvs=[])
    for bid in sorted(owned):
        for face, nb_id in table[bid]:
            owner = bmap.owner(nb_id)
            if owner == rank:
                plan.local.append((bid, face, nb_id))
            else:
                plan.recvs.append((owner, bid, face))
    for bid in sorted(owned):
        for face, nb_id in table[bid]:
            owner = bmap.owner(nb_id)
            if owner != rank:
                plan.sends.append((owner, nb_id, OPPOSITE_FACE[face], bid))
    return plan


def exchange_ghosts(proc, blocks: dict[int, BlockData], bmap: BlockMap, spec: DomainSpec,
                    step: int, plan: ExchangePlan | None = None):
    """Fill every local block's halos, messaging only for remote neighbors.

    Same-rank neighbor planes are copied directly; each remote (block, face)
    pair costs exactly one message tagged (step, block id, face). Sends are
    posted before any receive so the exchange cannot deadlock under the
    cooperative scheduler. Propagates proc-failed/revoked from the runtime.
    """
    if plan is None:
        plan = build_exchange_plan(sorted(blocks), bmap, spec, proc.rank)
    for bid, face, nb_id in plan.local:
        blocks[bid].data[_GHOST_TARGET[face]] = blocks[nb_id].data[_GHOST_SOURCE[face]]
    for dst, recv_bid, recv_face, src_bid in plan.sends:
        plane = np.ascontiguousarray(blocks[src_bid].data[_GHOST_SOURCE[recv_face]])
        yield from proc.send(dst, (step, recv_bid, recv_face), plane.tobytes())
    for src, bid, face in plan.recvs:
        payload = yield from proc.recv(src, (step, bid, face))
        target = _GHOST_TARGET[face]
        shape = blocks[bid].data[target].shape
        blocks[bid].data[target] = np.frombuffer(payload, dtype=np.float64).reshape(shape)


_BLOCK_HDR = struct.Struct("<QIIII")  # id, dims x/y/z, field count


def encode_block(block: BlockData) -> bytes:
    """Canonical block record: header, raw LE float64 interior fields, metadata."""
    parts = [_BLOCK_HDR.pack(block.bid, *block.dims, block.fields)]
    parts.append(np.ascontiguousarray(block.interior).tobytes())
    parts.append(struct.pack("<I", len(block.meta)))
    parts.append(block.meta)
    return b"".join(parts)


def encode_blocks(blocks: dict[int, BlockData]) -> bytes:
    """Block entity payload: count then records in ascending id order."""
    parts = [struct.pack("<I", len(blocks))]
    for bid in sorted(blocks):
        parts.append(encode_block(blocks[bid]))
    return b"".join(parts)


def decode_blocks(payload: bytes, origin_rank: int) -> dict[int, BlockData]:
    """Inverse of encode_blocks; tags every block with `origin_rank`."""
    view = memoryview(payload)
    if len(view) < 4:
        raise PayloadError("truncated block payload")
    (count,) = struct.unpack_from("<I", view, 0)
    off = 4
    blocks: dict[int, BlockData] = {}
    for _ in range(count):
        if off + _BLOCK_HDR.size > len(view):
            raise PayloadError("truncated block record header")
        bid, dx, dy, dz, nf = _BLOCK_HDR.unpack_from(view, off)
        off += _BLOCK_HDR.size
        n = nf * dx * dy * dz * 8
        if off + n + 4 > len(view):
            raise PayloadError("truncated block field data")
        fields = np.frombuffer(view, dtype="<f8", count=nf * dx * dy * dz, offset=off)
        off += n
        (meta_len,) = struct.unpack_from("<I", view, off)
        off += 4
        if off + meta_len > len(view):
            raise PayloadError("truncated block metadata")
        meta = bytes(view[off : off + meta_len])
        off += meta_len
        b = BlockData(bid=bid, dims=(dx, dy, dz), data=_padded(nf, (dx, dy, dz)),
                      origin_rank=origin_rank, meta=meta)
        b.interior[...] = fields.reshape(nf, dz, dy, dx)
        blocks[bid] = b
    if off != len(view):
        raise PayloadError("trailing bytes after block payload")
    return blocks


def block_digest(block: BlockData) -> int:
    """CRC-64 over the canonical record, independent of current ownership."""
    return crc64(encode_block(block))


def state_checksum(blocks: dict[int, BlockData], step: int) -> int:
    """Order-independent digest of a set of blocks plus the step counter.

    Per-block digests are combined in ascending id order, so the result does
    not depend on which ranks currently own the blocks.
    """
    acc = bytearray()
    for bid in sorted(blocks):
        acc += struct.pack("<QQ", bid, block_digest(blocks[bid]))
    acc += struct.pack("<Q", step)
    return crc64(bytes(acc))
