"""Entity registry, double-buffered snapshot store, and the snapshot encoding.

Entities register create/restore/swap callbacks and are captured in
registration order. Each process keeps two snapshot buffers: the read-only
half always carries the last committed checkpoint and is never touched while
a new one is being prepared; committing swaps the two roles without copying
any payload bytes.

Wire format (all integers little-endian):
  header  : magic u32 = 0x43484B50, version u16 = 1, step u64,
            origin_rank u32, entry_count u32, header CRC-32C u32 over the
            preceding 22 bytes (26-byte header total)
  entry   : name_len u16, name (UTF-8), origin_rank u32, payload_len u64,
            payload, payload CRC-32C u32
  trailer : whole-snapshot CRC-32C u32 over everything preceding; omitted
            when entry_count == 0, so an empty snapshot is exactly the
            26-byte header
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field
from typing import Callable

from .checksum import crc32c

MAGIC = 0x43484B50
VERSION = 1
HEADER_SIZE = 26

_HEADER = struct.Struct("<IHQII")  # magic, version, step, origin_rank, entry_count


class SnapshotError(Exception):
    pass


class DuplicateEntityError(SnapshotError):
    pass


class CorruptSnapshotError(SnapshotError):
    """Bad magic, unsupported version, truncation, or CRC mismatch."""


class FillError(SnapshotError):
    """An entity's create callback failed; the writable half is invalid."""


@dataclass(frozen=True)
class RestoreContext:
    """Passed to restore callbacks: who created the snapshot, and at which step."""

    origin_rank: int
    step: int


@dataclass(frozen=True)
class EntityHooks:
    """Callbacks an entity provides to participate in checkpoints.

    `create` returns the entity's serialized state; `restore` consumes a
    payload plus a RestoreContext; `swap` exchanges any entity-internal
    buffer pair and must run in time independent of the payload size.
    """

    name: str
    create: Callable[[], bytes]
    restore: Callable[[bytes, RestoreContext], None]
    swap: Callable[[], None]


@dataclass
class SnapshotEntry:
    name: str
    origin_rank: int
    payload: bytes


@dataclass
class SnapshotBuffer:
    """One half of the double buffer: own entries plus received partner copies."""

    step: int | None = None
    origin_rank: int | None = None
    entries: list[SnapshotEntry] = field(default_factory=list)
    partners: dict[int, bytes] = field(default_factory=dict)
    valid: bool = False

    def payload_bytes(self) -> int:
        return sum(len(e.payload) for e in self.entries)

    def resident_bytes(self) -> int:
        return self.payload_bytes() + sum(len(b) for b in self.partners.values())


class EntityRegistry:
    """Ordered registry of checkpointable entities."""

    def __init__(self) -> None:
        self.entities: list[EntityHooks] = []
        self._names: set[str] = set()

    def register(self, hooks: EntityHooks) -> EntityHooks:
        if hooks.name in self._names:
            raise DuplicateEntityError(f"entity {hooks.name!r} already registered")
        self._names.add(hooks.name)
        self.entities.append(hooks)
        return hooks

    def __iter__(self):
        return iter(self.entities)

    def __len__(self) -> int:
        return len(self.entities)


class SnapshotSet:
    """Double-buffered snapshot store owned by one simulated process."""

    def __init__(self) -> None:
        self._buffers = [SnapshotBuffer(), SnapshotBuffer()]
        self._ro = 0  # index of the read-only half

    @property
    def read_only(self) -> SnapshotBuffer:
        return self._buffers[self._ro]

    @property
    def writable(self) -> SnapshotBuffer:
        return self._buffers[1 - self._ro]

    def fill(self, registry: EntityRegistry, step: int, rank: int) -> SnapshotBuffer:
        """Capture all registered entities into the writable half.

        The read-only half is never touched. A failing create callback leaves
        the writable half marked invalid and raises FillError.
        """
        return fill_buffer(self.writable, registry, step, rank)

    def commit_swap(self, registry: EntityRegistry) -> None:
        """Swap buffer roles; purely local, no payload copying, cannot fail partway."""
        assert self.writable.valid, "commit_swap requires a valid writable buffer"
        self._ro = 1 - self._ro
        for hooks in registry:
            hooks.swap()

    def resident_bytes(self) -> int:
        return self._buffers[0].resident_bytes() + self._buffers[1].resident_bytes()


def fill_buffer(buf: SnapshotBuffer, registry: EntityRegistry, step: int, rank: int) -> SnapshotBuffer:
    """(Re)capture all registered entities into `buf`, in registration order."""
    buf.step = step
    buf.origin_rank = rank
    buf.entries = []
    buf.partners = {}
    buf.valid = False
    try:
        for hooks in registry:
            buf.entries.append(SnapshotEntry(hooks.name, rank, hooks.create()))
    except Exception as exc:
        raise FillError(f"create callback failed: {exc}") from exc
    buf.valid = True
    return buf


def encode_snapshot(buf: SnapshotBuffer) -> bytes:
    """Serialize a buffer's own entries (partner blobs ship separately)."""
    head = _HEADER.pack(MAGIC, VERSION, buf.step or 0, buf.origin_rank or 0, len(buf.entries))
    parts = [head + struct.pack("<I", crc32c(head))]
    for e in buf.entries:
        name = e.name.encode("utf-8")
        parts.append(struct.pack("<H", len(name)))
        parts.append(name)
        parts.append(struct.pack("<IQ", e.origin_rank, len(e.payload)))
        parts.append(e.payload)
        parts.append(struct.pack("<I", crc32c(e.payload)))
    if buf.entries:
        body = b"".join(parts)
        return body + struct.pack("<I", crc32c(body))
    return b"".join(parts)


def decode_snapshot(data: bytes) -> SnapshotBuffer:
    """Parse and verify an encoded snapshot; raises CorruptSnapshotError."""
    if len(data) < HEADER_SIZE:
        raise CorruptSnapshotError("snapshot shorter than header")
    magic, version, step, origin, count = _HEADER.unpack_from(data, 0)
    (head_crc,) = struct.unpack_from("<I", data, _HEADER.size)
    if magic != MAGIC:
        raise CorruptSnapshotError(f"bad magic 0x{magic:08X}")
    if version != VERSION:
        raise CorruptSnapshotError(f"unsupported version {version}")
    if head_crc != crc32c(data[: _HEADER.size]):
        raise CorruptSnapshotError("header CRC mismatch")
    if count == 0:
        if len(data) != HEADER_SIZE:
            raise CorruptSnapshotError("trailing bytes after empty snapshot")
        return SnapshotBuffer(step=step, origin_rank=origin, valid=True)

    off = HEADER_SIZE
    entries: list[SnapshotEntry] = []
    for _ in range(count):
        if off + 2 > len(data):
            raise CorruptSnapshotError("truncated entry name length")
        (name_len,) = struct.unpack_from("<H", data, off)
        off += 2
        if off + name_len + 12 > len(data):
            raise CorruptSnapshotError("truncated entry header")
        try:
            name = data[off : off + name_len].decode("utf-8")
        except UnicodeDecodeError as exc:
            raise CorruptSnapshotError("entry name is not valid UTF-8") from exc
        off += name_len
        e_origin, payload_len = struct.unpack_from("<IQ", data, off)
        off += 12
        if off + payload_len + 4 > len(data):
            raise CorruptSnapshotError("truncated entry payload")
        payload = data[off : off + payload_len]
        off += payload_len
        (pcrc,) = struct.unpack_from("<I", data, off)
        off += 4
        if pcrc != crc32c(payload):
            raise CorruptSnapshotError(f"payload CRC mismatch for entry {name!r}")
        entries.append(SnapshotEntry(name, e_origin, payload))
    if off + 4 != len(data):
        raise CorruptSnapshotError("bad snapshot length")
    (total_crc,) = struct.unpack_from("<I", data, off)
    if total_crc != crc32c(data[:off]):
        raise CorruptSnapshotError("whole-snapshot CRC mismatch")
    return SnapshotBuffer(step=step, origin_rank=origin, entries=entries, valid=True)
