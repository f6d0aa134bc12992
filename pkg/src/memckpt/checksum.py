"""CRC kernels used by the snapshot wire format and the state digest.

CRC-32C (Castagnoli) frames every snapshot; CRC-64/XZ feeds the
order-independent global state digest. Both are reflected table-driven
implementations jitted with numba so that checkpoint encoding stays cheap
relative to the simulated payloads.
"""

from __future__ import annotations

import numba
import numpy as np

_POLY32C = 0x82F63B78  # CRC-32C, reflected
_POLY64 = 0xC96C5795D7870F42  # CRC-64/XZ, reflected


def _reflected_table(poly: int, width_mask: int) -> np.ndarray:
    tbl = np.zeros(256, dtype=np.uint64)
    for i in range(256):
        c = i
        for _ in range(8):
            c = (c >> 1) ^ (poly if (c & 1) else 0)
        tbl[i] = c & width_mask
    return tbl


_TBL32 = _reflected_table(_POLY32C, 0xFFFFFFFF).astype(np.uint32)
_TBL64 = _reflected_table(_POLY64, 0xFFFFFFFFFFFFFFFF)


@numba.njit(cache=True, nogil=True)
def _crc32_kernel(data: np.ndarray, crc: np.uint32, table: np.ndarray) -> np.uint32:
    for i in range(data.shape[0]):
        crc = table[(crc ^ data[i]) & np.uint32(0xFF)] ^ (crc >> np.uint32(8))
    return crc


@numba.njit(cache=True, nogil=True)
def _crc64_kernel(data: np.ndarray, crc: np.uint64, table: np.ndarray) -> np.uint64:
    for i in range(data.shape[0]):
        crc = table[(crc ^ data[i]) & np.uint64(0xFF)] ^ (crc >> np.uint64(8))
    return crc


def crc32c(data: bytes | memoryview, value: int = 0) -> int:
    """CRC-32C of `data`; `value` chains a previous digest."""
    arr = np.frombuffer(data, dtype=np.uint8)
    crc = np.uint32(value ^ 0xFFFFFFFF)
    crc = _crc32_kernel(arr, crc, _TBL32)
    return int(crc ^ np.uint32(0xFFFFFFFF))


def crc64(data: bytes | memoryview, value: int = 0) -> int:
    """CRC-64/XZ of `data`; `value` chains a previous digest."""
    arr = np.frombuffer(data, dtype=np.uint8)
    crc = np.uint64(value ^ 0xFFFFFFFFFFFFFFFF)
    crc = _crc64_kernel(arr, crc, _TBL64)
    return int(crc ^ np.uint64(0xFFFFFFFFFFFFFFFF))
