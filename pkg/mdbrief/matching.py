"""Hamming and masked Hamming distances, brute-force nearest-neighbour matching."""

from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass
from pathlib import Path
from typing import List, Optional, Sequence, Tuple, Union

import numpy as np

from .bitops import popcount
from .descriptor import BinaryDescriptor, run_chunked

logger = logging.getLogger(__name__)

MATCH_CHUNK_ROWS = 128


@dataclass(frozen=True)
class Match:
    """Nearest-neighbour pair; distance in bits (plain) or on [0, 2] (masked)."""

    index_i: int
    index_j: int
    distance: float


def _check_pair(d_i: BinaryDescriptor, d_j: BinaryDescriptor) -> None:
    if d_i.dim != d_j.dim:
        raise ValueError(f"descriptor dimension mismatch: {d_i.dim} vs {d_j.dim}")


def hamming(d_i: BinaryDescriptor, d_j: BinaryDescriptor) -> int:
    """Number of differing bits."""
    _check_pair(d_i, d_j)
    return int(popcount(np.bitwise_xor(d_i.bits, d_j.bits)))


def masked_hamming(d_i: BinaryDescriptor, d_j: BinaryDescriptor) -> float:
    """Differences counted under each side's mask, each normalized by its mask size.

    Raises:
        ValueError: dimension mismatch or a missing mask
    """
    _check_pair(d_i, d_j)
    if d_i.mask is None or d_j.mask is None:
        raise ValueError("masked_hamming needs masks on both descriptors")
    diff = np.bitwise_xor(d_i.bits, d_j.bits)
    return (int(popcount(diff & d_i.mask)) / d_i.mask_ones
            + int(popcount(diff & d_j.mask)) / d_j.mask_ones)


@dataclass
class DescriptorMatrix:
    """Stacked packed descriptors of one set, ready for all-pairs distances."""

    bits: np.ndarray
    dim: int
    masks: Optional[np.ndarray] = None
    mask_ones: Optional[np.ndarray] = None

    @classmethod
    def stack(cls, descs: Sequence[BinaryDescriptor]) -> "DescriptorMatrix":
        if not descs:
            raise ValueError("descriptor set is empty")
        dims = {d.dim for d in descs}
        if len(dims) != 1:
            raise ValueError(f"descriptor set mixes dimensions {sorted(dims)}")
        masked = {d.has_mask for d in descs}
        if len(masked) != 1:
            raise ValueError("descriptor set mixes masked and unmasked descriptors")
        bits = np.stack([d.bits for d in descs])
        if masked.pop():
            return cls(bits, dims.pop(), np.stack([d.mask for d in descs]),
                       np.array([d.mask_ones for d in descs], dtype=np.float64))
        return cls(bits, dims.pop())

    @property
    def has_masks(self) -> bool:
        return self.masks is not None

    def __len__(self) -> int:
        return int(self.bits.shape[0])


def hamming_matrix(a: DescriptorMatrix, b: DescriptorMatrix, rows: Optional[range] = None) -> np.ndarray:
    """All-pairs plain Hamming distances (rows of ``a`` against ``b``)."""
    rows = range(len(a)) if rows is None else rows
    diff = np.bitwise_xor(a.bits[rows.start:rows.stop, None, :], b.bits[None, :, :])
    return popcount(diff)


def masked_hamming_matrix(a: DescriptorMatrix, b: DescriptorMatrix, rows: Optional[range] = None) -> np.ndarray:
    """All-pairs masked Hamming distances."""
    if not (a.has_masks and b.has_masks):
        raise ValueError("masked distances need masks on both sets")
    rows = range(len(a)) if rows is None else rows
    sl = slice(rows.start, rows.stop)
    diff = np.bitwise_xor(a.bits[sl, None, :], b.bits[None, :, :])
    left = popcount(diff & a.masks[sl, None, :]) / a.mask_ones[sl, None]
    right = popcount(diff & b.masks[None, :, :]) / b.mask_ones[None, :]
    return left + right


def check_sets(set_i: Sequence[BinaryDescriptor], set_j: Sequence[BinaryDescriptor],
               masked: bool) -> Tuple[DescriptorMatrix, DescriptorMatrix]:
    """Stack and validate two descriptor sets for matching.

    Raises:
        ValueError: empty sets, mixed dimensions, mixed masked/unmasked
            descriptors, or ``masked`` without masks
    """
    a = DescriptorMatrix.stack(set_i)
    b = DescriptorMatrix.stack(set_j)
    if a.dim != b.dim:
        raise ValueError(f"descriptor dimension mismatch: {a.dim} vs {b.dim}")
    if a.has_masks != b.has_masks:
        raise ValueError("cannot match masked descriptors against unmasked ones")
    if masked and not a.has_masks:
        raise ValueError("masked matching requested but descriptors carry no masks")
    return a, b


def distance_matrix(set_i: Sequence[BinaryDescriptor], set_j: Sequence[BinaryDescriptor], masked: bool = False,
                    threads: Optional[int] = None) -> np.ndarray:
    """Full (N_i, N_j) distance matrix, computed in row chunks."""
    a, b = check_sets(set_i, set_j, masked)
    fn = masked_hamming_matrix if masked else hamming_matrix
    blocks = run_chunked(lambda rows: fn(a, b, rows), len(a), MATCH_CHUNK_ROWS, threads)
    return np.concatenate(blocks, axis=0).astype(np.float64 if masked else np.int64)


def nearest_neighbours(dist: np.ndarray, cross_check: bool = False) -> Tuple[np.ndarray, np.ndarray]:
    """Nearest column per row (lowest index on ties) and a keep mask for cross-checking."""
    nearest = np.argmin(dist, axis=1)
    keep = np.ones(dist.shape[0], dtype=bool)
    if cross_check:
        reverse = np.argmin(dist, axis=0)
        keep = reverse[nearest] == np.arange(dist.shape[0])
    return nearest, keep


def match_brute_force(set_i: Sequence[BinaryDescriptor], set_j: Sequence[BinaryDescriptor], masked: bool = False,
                      threshold: Optional[float] = None, cross_check: bool = False,
                      threads: Optional[int] = None) -> List[Match]:
    """Match every descriptor of ``set_i`` to its nearest neighbour in ``set_j``.

    A match is emitted when its distance is <= ``threshold`` (no threshold
    keeps all). With ``cross_check`` the query must also be the nearest
    neighbour of its match. Results are ordered by query index.
    """
    dist = distance_matrix(set_i, set_j, masked, threads)
    return matches_from_distances(dist, threshold, cross_check)


def matches_from_distances(dist: np.ndarray, threshold: Optional[float] = None,
                           cross_check: bool = False) -> List[Match]:
    nearest, keep = nearest_neighbours(dist, cross_check)
    limit = math.inf if threshold is None else threshold
    matches = []
    for i, j in enumerate(nearest):
        d = dist[i, j]
        if keep[i] and d <= limit:
            matches.append(Match(i, int(j), float(d) if dist.dtype.kind == "f" else int(d)))
    return matches


def write_matches(path: Union[str, Path], matches: Sequence[Match]) -> None:
    """Match CSV: ``index_i,index_j,distance``."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["index_i", "index_j", "distance"])
        for m in matches:
            writer.writerow([m.index_i, m.index_j, repr(m.distance) if isinstance(m.distance, float) else m.distance])
