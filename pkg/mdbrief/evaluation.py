"""Ground truth from homographies, recognition rate, PR curves and distribution overlap."""

from __future__ import annotations

import csv
import logging
from dataclasses import dataclass
from enum import Enum
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
from scipy.spatial import cKDTree

from .camera.base import CameraModel
from .descriptor import BinaryDescriptor
from .detector import Keypoint
from .errors import InputParseError
from .matching import Match, distance_matrix, matches_from_distances

logger = logging.getLogger(__name__)

DEFAULT_RADIUS = 3.0
MASKED_HISTOGRAM_BINS = 128
NORMALIZATION_TOL = 1e-9


@dataclass(frozen=True, eq=False)
class Homography:
    """3x3 map between undistorted normalized image planes (row-major)."""

    matrix: np.ndarray

    def __post_init__(self) -> None:
        m = np.array(self.matrix, dtype=np.float64).reshape(3, 3)
        if not np.isfinite(m).all():
            raise ValueError("homography entries must be finite")
        if abs(np.linalg.det(m)) <= 1e-12:
            raise ValueError("homography is singular")
        if m[2, 2] != 0:
            m = m / m[2, 2]
        m.setflags(write=False)
        object.__setattr__(self, "matrix", m)

    @classmethod
    def identity(cls) -> "Homography":
        return cls(np.eye(3))

    @classmethod
    def parse(cls, text: str, source: str = "<string>") -> "Homography":
        try:
            values = [float(tok) for tok in text.split()]
        except ValueError:
            raise InputParseError(f"{source}: homography must hold 9 numbers") from None
        if len(values) != 9:
            raise InputParseError(f"{source}: homography needs 9 values, got {len(values)}")
        try:
            return cls(np.array(values))
        except ValueError as e:
            raise InputParseError(f"{source}: {e}") from None

    @classmethod
    def load(cls, path: Union[str, Path]) -> "Homography":
        path = Path(path)
        return cls.parse(path.read_text(encoding="utf-8"), str(path))

    def apply(self, points: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
        """Map (N, 2) plane points; rays ending with w <= 0 are flagged invalid."""
        points = np.asarray(points, dtype=np.float64).reshape(-1, 2)
        homog = np.column_stack([points, np.ones(len(points))]) @ self.matrix.T
        w = homog[:, 2]
        valid = np.isfinite(homog).all(axis=1) & (w > 1e-12)
        safe = np.where(valid, w, 1.0)
        return homog[:, :2] / safe[:, None], valid


@dataclass(frozen=True)
class GroundTruth:
    """Injective correspondences (index in image i, index in image j)."""

    correspondences: Tuple[Tuple[int, int], ...]
    radius: float = DEFAULT_RADIUS

    def __len__(self) -> int:
        return len(self.correspondences)

    def as_dict(self) -> Dict[int, int]:
        return dict(self.correspondences)

    @classmethod
    def identity(cls, n: int) -> "GroundTruth":
        return cls(tuple((i, i) for i in range(n)))


class RateDenominator(Enum):
    """What the recognition rate divides by."""

    GROUND_TRUTH = "ground-truth"
    ALL = "all"


def project_keypoints(kps: Sequence[Keypoint], model: CameraModel, H: Homography) -> Tuple[np.ndarray, np.ndarray]:
    """Carry keypoints through ``H`` on the normalized plane and back to pixels.

    Returns:
        (pixels (N, 2), valid (N,)); invalid entries left the domain, fell
        behind the camera or landed outside the image
    """
    xy = np.array([[kp.x, kp.y] for kp in kps], dtype=np.float64).reshape(-1, 2)
    bearings, valid = model.unproject_points(xy)
    valid &= bearings[:, 2] > 1e-12
    vz = np.where(valid, bearings[:, 2], 1.0)
    plane = bearings[:, :2] / vz[:, None]
    mapped, ok = H.apply(plane)
    valid &= ok
    points = np.column_stack([mapped, np.ones(len(mapped))])
    pixels, ok = model.project_points(points)
    valid &= ok & model.in_image(pixels)
    return pixels, valid


def rate_denominator(mode: Union[str, RateDenominator], kps_i: Sequence[Keypoint], model: CameraModel,
                     H: Homography) -> Optional[int]:
    """``#C`` override for ``mode``; None keeps the ground-truth count."""
    if RateDenominator(mode) is RateDenominator.ALL:
        _, valid = project_keypoints(kps_i, model, H)
        return int(valid.sum())
    return None


def build_ground_truth(kps_i: Sequence[Keypoint], kps_j: Sequence[Keypoint], model: CameraModel, H: Homography,
                       radius: float = DEFAULT_RADIUS) -> GroundTruth:
    """Pair projected ``kps_i`` with ``kps_j`` within ``radius`` pixels.

    Candidate pairs are assigned greedily by ascending distance (ties by
    lowest source, then target index); each source and target is used once.
    """
    if not radius > 0:
        raise ValueError(f"radius must be positive, got {radius}")
    if not kps_i or not kps_j:
        return GroundTruth((), radius)
    projected, valid = project_keypoints(kps_i, model, H)
    targets = np.array([[kp.x, kp.y] for kp in kps_j], dtype=np.float64)
    tree = cKDTree(targets)
    candidates = []
    for i in np.nonzero(valid)[0]:
        for j in tree.query_ball_point(projected[i], r=radius):
            d = float(np.hypot(*(targets[j] - projected[i])))
            if d <= radius:
                candidates.append((d, int(i), int(j)))
    candidates.sort()
    used_i, used_j = set(), set()
    pairs = []
    for _, i, j in candidates:
        if i in used_i or j in used_j:
            continue
        used_i.add(i)
        used_j.add(j)
        pairs.append((i, j))
    pairs.sort()
    logger.debug("[evaluate] ground truth: %d of %d keypoints matched within %.1f px", len(pairs), len(kps_i), radius)
    return GroundTruth(tuple(pairs), radius)


def count_correct(matches: Sequence[Match], gt: GroundTruth) -> int:
    truth = gt.as_dict()
    return sum(1 for m in matches if truth.get(m.index_i) == m.index_j)


def recognition_rate(matches: Sequence[Match], gt: GroundTruth, denominator: Optional[int] = None) -> float:
    """Correct matches over ground-truth correspondences.

    ``denominator`` overrides ``#C`` (e.g. all projected keypoints).

    Raises:
        ValueError: empty ground truth (and no override)
    """
    total = len(gt) if denominator is None else int(denominator)
    if total <= 0:
        raise ValueError("recognition rate needs a non-empty ground truth")
    return count_correct(matches, gt) / total


@dataclass(frozen=True)
class PRPoint:
    threshold: float
    one_minus_precision: float
    recall: float


def pr_curve(desc_i: Sequence[BinaryDescriptor], desc_j: Sequence[BinaryDescriptor], gt: GroundTruth,
             thresholds: Sequence[float], masked: bool = False, cross_check: bool = False,
             denominator: Optional[int] = None, threads: Optional[int] = None) -> List[PRPoint]:
    """Recall and 1-precision per threshold; thresholds with no match are omitted."""
    thresholds = list(thresholds)
    if any(b < a for a, b in zip(thresholds, thresholds[1:])):
        raise ValueError("thresholds must be ascending")
    dist = distance_matrix(desc_i, desc_j, masked, threads)
    all_matches = matches_from_distances(dist, None, cross_check)
    truth = gt.as_dict()
    points = []
    for t in thresholds:
        emitted = [m for m in all_matches if m.distance <= t]
        if not emitted:
            continue
        correct = sum(1 for m in emitted if truth.get(m.index_i) == m.index_j)
        recall = recognition_rate(emitted, gt, denominator) if (len(gt) or denominator) else 0.0
        points.append(PRPoint(float(t), 1.0 - correct / len(emitted), recall))
    return points


def mean_pr_curve(curves: Sequence[Sequence[PRPoint]]) -> List[PRPoint]:
    """Pointwise mean over image pairs, for thresholds present in every curve."""
    if not curves:
        return []
    common = set(p.threshold for p in curves[0])
    for curve in curves[1:]:
        common &= set(p.threshold for p in curve)
    mean = []
    for t in sorted(common):
        rows = [next(p for p in curve if p.threshold == t) for curve in curves]
        mean.append(PRPoint(t, float(np.mean([p.one_minus_precision for p in rows])),
                            float(np.mean([p.recall for p in rows]))))
    return mean


def bhattacharyya(p: Sequence[float], q: Sequence[float]) -> float:
    """Overlap ``sum(sqrt(p*q))`` of two normalized histograms.

    Raises:
        ValueError: different bin counts, negative bins or sums away from 1
    """
    p = np.asarray(p, dtype=np.float64)
    q = np.asarray(q, dtype=np.float64)
    if p.shape != q.shape:
        raise ValueError(f"histograms differ in bin count: {p.size} vs {q.size}")
    for name, h in (("p", p), ("q", q)):
        if (h < 0).any() or abs(h.sum() - 1.0) > NORMALIZATION_TOL:
            raise ValueError(f"histogram {name} is not normalized (sum {h.sum()})")
    return float(min(1.0, np.sqrt(p * q).sum()))


def _normalized(counts: np.ndarray) -> np.ndarray:
    total = counts.sum()
    return counts / total if total > 0 else counts.astype(np.float64)


def distance_histograms(desc_i: Sequence[BinaryDescriptor], desc_j: Sequence[BinaryDescriptor], gt: GroundTruth,
                        masked: bool = False, threads: Optional[int] = None) -> Tuple[np.ndarray, np.ndarray]:
    """Relative frequencies of matching (ground-truth) and non-matching distances.

    Plain distances use D+1 integer bins; masked distances use 128 uniform
    bins on [0, 2]. A side with no pairs is returned as all zeros.
    """
    if not len(gt):
        raise ValueError("distance histograms need a non-empty ground truth")
    dist = distance_matrix(desc_i, desc_j, masked, threads)
    is_match = np.zeros(dist.shape, dtype=bool)
    for i, j in gt.correspondences:
        is_match[i, j] = True
    if masked:
        edges = np.linspace(0.0, 2.0, MASKED_HISTOGRAM_BINS + 1)
        matching, _ = np.histogram(dist[is_match], bins=edges)
        nonmatching, _ = np.histogram(dist[~is_match], bins=edges)
    else:
        bins = desc_i[0].dim + 1
        matching = np.bincount(dist[is_match].astype(np.int64), minlength=bins)
        nonmatching = np.bincount(dist[~is_match].astype(np.int64), minlength=bins)
    return _normalized(matching), _normalized(nonmatching)


# --- outputs --------------------------------------------------------------------

def write_pr_csv(path: Union[str, Path], points: Sequence[PRPoint]) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["threshold", "one_minus_precision", "recall"])
        for p in points:
            writer.writerow([repr(p.threshold), repr(p.one_minus_precision), repr(p.recall)])


def write_histogram_csv(path: Union[str, Path], matching: np.ndarray, nonmatching: np.ndarray,
                        coefficient: Optional[float] = None) -> None:
    """Histogram CSV with a trailing ``# bhattacharyya = <value>`` comment."""
    if coefficient is None:
        coefficient = bhattacharyya(matching, nonmatching)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["bin", "matching_freq", "nonmatching_freq"])
        for k, (a, b) in enumerate(zip(matching, nonmatching)):
            writer.writerow([k, repr(float(a)), repr(float(b))])
        fh.write(f"# bhattacharyya = {coefficient!r}\n")
