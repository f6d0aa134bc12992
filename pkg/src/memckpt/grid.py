"""Block partitioning of a 3D cell domain and periodic neighbor topology.

The global grid is cut into equally sized rectangular blocks. Blocks carry
linear ids in lexicographic order (x fastest) and are assigned to ranks as
contiguous id runs, so that consecutive ranks own spatially adjacent data.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import lru_cache


class DomainError(ValueError):
    """Block size does not tile the global domain, or an id is out of range."""


Triple = tuple[int, int, int]

# Face order is fixed: (-x, +x, -y, +y, -z, +z).
FACES = ("-x", "+x", "-y", "+y", "-z", "+z")
_FACE_OFFSETS = {
    "-x": (-1, 0, 0),
    "+x": (1, 0, 0),
    "-y": (0, -1, 0),
    "+y": (0, 1, 0),
    "-z": (0, 0, -1),
    "+z": (0, 0, 1),
}

OPPOSITE_FACE = {"-x": "+x", "+x": "-x", "-y": "+y", "+y": "-y", "-z": "+z", "+z": "-z"}


@dataclass(frozen=True)
class DomainSpec:
    """Global cell counts, block cell counts, fields per cell, process count."""

    global_cells: Triple
    block_cells: Triple
    fields_per_cell: int = 12
    num_processes: int = 1

    def __post_init__(self) -> None:
        for g, b in zip(self.global_cells, self.block_cells):
            if g <= 0 or b <= 0:
                raise DomainError(f"cell counts must be positive: {self.global_cells} / {self.block_cells}")
            if g % b != 0:
                raise DomainError(f"block size {self.block_cells} does not divide domain {self.global_cells}")
        if self.fields_per_cell <= 0:
            raise DomainError("fields_per_cell must be positive")
        if self.num_processes < 1:
            raise DomainError("num_processes must be >= 1")

    @property
    def blocks_per_dim(self) -> Triple:
        g, b = self.global_cells, self.block_cells
        return (g[0] // b[0], g[1] // b[1], g[2] // b[2])

    @property
    def num_blocks(self) -> int:
        nx, ny, nz = self.blocks_per_dim
        return nx * ny * nz

    @property
    def cells_per_block(self) -> int:
        bx, by, bz = self.block_cells
        return bx * by * bz


def block_id(coords: Triple, spec: DomainSpec) -> int:
    """Linear id of block `coords`, lexicographic with x fastest."""
    nx, ny, nz = spec.blocks_per_dim
    bx, by, bz = coords
    if not (0 <= bx < nx and 0 <= by < ny and 0 <= bz < nz):
        raise DomainError(f"block coords {coords} outside grid {spec.blocks_per_dim}")
    return bx + nx * (by + ny * bz)


def block_coords(bid: int, spec: DomainSpec) -> Triple:
    """Inverse of block_id."""
    nx, ny, nz = spec.blocks_per_dim
    if not 0 <= bid < nx * ny * nz:
        raise DomainError(f"block id {bid} outside grid {spec.blocks_per_dim}")
    return (bid % nx, (bid // nx) % ny, bid // (nx * ny))


def block_origin_cells(bid: int, spec: DomainSpec) -> Triple:
    """Global cell coordinates of the block's low corner."""
    cx, cy, cz = block_coords(bid, spec)
    bx, by, bz = spec.block_cells
    return (cx * bx, cy * by, cz * bz)


@dataclass
class BlockMap:
    """Ownership of every block: id -> rank, plus the per-rank sorted lists."""

    assignment: dict[int, int]
    inverse: dict[int, list[int]] = field(default_factory=dict)

    def __post_init__(self) -> None:
        if not self.inverse:
            self.inverse = {}
            for bid in sorted(self.assignment):
                self.inverse.setdefault(self.assignment[bid], []).append(bid)

    def owner(self, bid: int) -> int:
        return self.assignment[bid]

    def blocks_of(self, rank: int) -> list[int]:
        return self.inverse.get(rank, [])

    def copy(self) -> "BlockMap":
        return BlockMap(dict(self.assignment))

    def move(self, bid: int, to_rank: int) -> None:
        """Reassign one block, keeping per-rank lists sorted."""
        src = self.assignment[bid]
        if src == to_rank:
            return
        self.assignment[bid] = to_rank
        self.inverse[src].remove(bid)
        dst = self.inverse.setdefault(to_rank, [])
        dst.append(bid)
        dst.sort()

    def loads(self, num_ranks: int) -> list[int]:
        return [len(self.inverse.get(r, [])) for r in range(num_ranks)]


def partition_domain(spec: DomainSpec) -> BlockMap:
    """Split block ids into `num_processes` contiguous runs of near-equal length.

    Run lengths differ by at most one; rank r owns the r-th run. A rank may
    own zero blocks when there are fewer blocks than processes.
    """
    nb, n = spec.num_blocks, spec.num_processes
    q, rem = divmod(nb, n)
    assignment: dict[int, int] = {}
    start = 0
    for r in range(n):
        length = q + (1 if r < rem else 0)
        for bid in range(start, start + length):
            assignment[bid] = r
        start += length
    return BlockMap(assignment)


def neighbors_of(bid: int, spec: DomainSpec) -> list[tuple[str, int]]:
    """The 6 face neighbors of a block under periodic wrap, in FACES order."""
    nx, ny, nz = spec.blocks_per_dim
    bx, by, bz = block_coords(bid, spec)
    out = []
    for face in FACES:
        dx, dy, dz = _FACE_OFFSETS[face]
        nb = ((bx + dx) % nx, (by + dy) % ny, (bz + dz) % nz)
        out.append((face, block_id(nb, spec)))
    return out


@lru_cache(maxsize=64)
def neighbor_table(spec: DomainSpec) -> dict[int, tuple[tuple[str, int], ...]]:
    """Cached full neighbor topology: block id -> ((face, neighbor id), ...)."""
    return {bid: tuple(neighbors_of(bid, spec)) for bid in range(spec.num_blocks)}
