"""Packed bit-string helpers shared by descriptors and matching.

Bit ``d`` of a descriptor lives in byte ``d // 8`` at position ``d % 8``
(LSB first). numpy >= 2.0 provides a hardware population count
(``np.bitwise_count``); older numpy uses a byte lookup table.
"""

import numpy as np
from packaging.version import Version

HAS_BITWISE_COUNT = Version(np.__version__) >= Version("2.0") and hasattr(np, "bitwise_count")

_POPCOUNT_TABLE = np.array([bin(i).count("1") for i in range(256)], dtype=np.uint8)


def popcount(packed: np.ndarray, axis: int = -1) -> np.ndarray:
    """Number of set bits of uint8 arrays summed along ``axis``."""
    packed = np.asarray(packed, dtype=np.uint8)
    counts = np.bitwise_count(packed) if HAS_BITWISE_COUNT else _POPCOUNT_TABLE[packed]
    return counts.sum(axis=axis, dtype=np.int64)


def pack_bits(bits: np.ndarray) -> np.ndarray:
    """Pack a boolean array along its last axis; padding bits are zero."""
    return np.packbits(np.asarray(bits, dtype=bool), axis=-1, bitorder="little")


def unpack_bits(packed: np.ndarray, dim: int) -> np.ndarray:
    return np.unpackbits(np.asarray(packed, dtype=np.uint8), axis=-1, count=dim, bitorder="little").astype(bool)


def packed_length(dim: int) -> int:
    return (int(dim) + 7) // 8
