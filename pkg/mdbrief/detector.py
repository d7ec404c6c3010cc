"""FAST-style segment-test corners with intensity-centroid orientation.

Detection runs on the raw (distorted) image; the circle is not warped.
"""

from __future__ import annotations

import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import List, Optional, Sequence, Tuple, Union

import numpy as np
from scipy import ndimage

from .errors import InputParseError
from .imageproc import MIN_LEVEL_SIZE, GrayImage, Pyramid

logger = logging.getLogger(__name__)

KEYPOINT_HEADER = "keypoints v1"
DEFAULT_ORIENTATION_RADIUS = 15
DEFAULT_PATCH_RADIUS = 16

# Bresenham circle of radius 3, clockwise from 12 o'clock (x right, y down)
CIRCLE = (
    (0, -3), (1, -3), (2, -2), (3, -1), (3, 0), (3, 1), (2, 2), (1, 3),
    (0, 3), (-1, 3), (-2, 2), (-3, 1), (-3, 0), (-3, -1), (-2, -2), (-1, -3),
)


@dataclass(frozen=True)
class Keypoint:
    """Oriented keypoint in level-0 pixel coordinates."""

    x: float
    y: float
    angle: float = 0.0
    octave: int = 0
    score: float = 0.0

    def __post_init__(self) -> None:
        for name in ("x", "y", "angle", "score"):
            object.__setattr__(self, name, float(getattr(self, name)))
        object.__setattr__(self, "octave", int(self.octave))
        if not (math.isfinite(self.x) and math.isfinite(self.y) and math.isfinite(self.angle)):
            raise ValueError(f"keypoint fields must be finite: {self}")
        if self.octave < 0:
            raise ValueError(f"octave must be >= 0, got {self.octave}")

    def __str__(self) -> str:
        return f"({self.x:.2f}, {self.y:.2f}) angle={self.angle:.3f} octave={self.octave}"


def wrap_angle(angle: float) -> float:
    """Map an angle into [-pi, pi)."""
    if -math.pi <= angle < math.pi:
        return angle
    wrapped = math.fmod(angle + math.pi, 2.0 * math.pi)
    if wrapped < 0:
        wrapped += 2.0 * math.pi
    return wrapped - math.pi


def _longest_circular_run(flags: np.ndarray, weights: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """Length and weight sum of the longest circular True run along axis 0.

    Among runs of equal length the heavier one wins.
    """
    n = flags.shape[0]
    run = np.zeros(flags.shape[1:], dtype=np.int16)
    run_sum = np.zeros(flags.shape[1:], dtype=np.float64)
    best = np.zeros_like(run)
    best_sum = np.zeros_like(run_sum)
    for i in range(2 * n):
        on = flags[i % n]
        run = np.where(on, run + 1, 0).astype(np.int16)
        run_sum = np.where(on, run_sum + weights[i % n], 0.0)
        better = (run > best) | ((run == best) & (run_sum > best_sum))
        best = np.where(better, run, best)
        best_sum = np.where(better, run_sum, best_sum)
    full = flags.all(axis=0)
    best = np.where(full, n, best)
    best_sum = np.where(full, np.where(flags, weights, 0.0).sum(axis=0), best_sum)
    return best, best_sum


def fast_scores(img: GrayImage, threshold: int, n_contiguous: int = 9, margin: int = 3) -> np.ndarray:
    """Segment-test score map (0 where no corner), before non-maximum suppression.

    The score of a corner is the sum of ``|I_p - I_c|`` over the longest
    contiguous arc of qualifying circle pixels (all brighter or all darker).
    """
    if not threshold > 0:
        raise ValueError(f"threshold must be positive, got {threshold}")
    if not 9 <= n_contiguous <= 12:
        raise ValueError(f"n_contiguous must be in [9, 12], got {n_contiguous}")
    if img.width < MIN_LEVEL_SIZE or img.height < MIN_LEVEL_SIZE:
        raise ValueError(f"image {img.width}x{img.height} smaller than {MIN_LEVEL_SIZE}x{MIN_LEVEL_SIZE}")
    margin = max(3, int(margin))

    data = img.data.astype(np.int16)
    h, w = data.shape
    scores = np.zeros((h, w), dtype=np.float64)
    if h - 2 * margin < 1 or w - 2 * margin < 1:
        return scores

    center = data[margin:h - margin, margin:w - margin]
    ring = np.stack([
        data[margin + dy:h - margin + dy, margin + dx:w - margin + dx] for dx, dy in CIRCLE
    ])
    brighter = ring > center + threshold
    darker = ring < center - threshold
    diff = np.abs(ring - center).astype(np.float64)

    bright_run, bright_score = _longest_circular_run(brighter, diff)
    dark_run, dark_score = _longest_circular_run(darker, diff)
    inner = (np.where(bright_run >= n_contiguous, bright_score, 0.0)
             + np.where(dark_run >= n_contiguous, dark_score, 0.0))
    scores[margin:h - margin, margin:w - margin] = inner
    return scores


def detect_fast(img: GrayImage, threshold: int, n_contiguous: int = 9, margin: int = 3) -> List[Keypoint]:
    """Segment-test corners with 3x3 non-maximum suppression.

    Returns keypoints in raster order (y, then x), angle 0, octave 0.

    Raises:
        ValueError: non-positive threshold, n_contiguous outside [9, 12] or
            an image smaller than 16x16
    """
    scores = fast_scores(img, threshold, n_contiguous, margin)
    local_max = ndimage.maximum_filter(scores, size=3, mode="constant", cval=0.0)
    keep = (scores > 0) & (scores == local_max)
    ys, xs = np.nonzero(keep)
    return [Keypoint(float(x), float(y), 0.0, 0, float(scores[y, x])) for y, x in zip(ys, xs)]


def _disc_offsets(radius: int):
    r = int(radius)
    dy, dx = np.mgrid[-r:r + 1, -r:r + 1]
    inside = dx * dx + dy * dy <= r * r
    return dx[inside], dy[inside]


def orientation_centroid(img: GrayImage, kp: Keypoint, radius: int = DEFAULT_ORIENTATION_RADIUS) -> float:
    """Intensity-centroid angle ``atan2(m01, m10)`` over a disc around ``kp``.

    A patch with zero first moments (e.g. constant) has angle 0.

    Raises:
        ValueError: if the disc is not fully inside the image
    """
    cx, cy = int(round(kp.x)), int(round(kp.y))
    r = int(radius)
    if cx - r < 0 or cy - r < 0 or cx + r > img.width - 1 or cy + r > img.height - 1:
        raise ValueError(f"orientation disc of radius {r} at ({cx}, {cy}) leaves the image")
    dx, dy = _disc_offsets(r)
    values = img.pixels[cy + dy, cx + dx]
    m10 = float(np.dot(dx, values))
    m01 = float(np.dot(dy, values))
    if m10 == 0.0 and m01 == 0.0:
        return 0.0
    return wrap_angle(math.atan2(m01, m10))


def _detect_level(level: GrayImage, octave: int, scale: float, threshold: int, n_contiguous: int,
                  margin: int, orientation_radius: int) -> List[Keypoint]:
    if level.width < 2 * margin + 1 or level.height < 2 * margin + 1:
        return []
    found = []
    for kp in detect_fast(level, threshold, n_contiguous, margin):
        angle = orientation_centroid(level, kp, orientation_radius)
        found.append(Keypoint(kp.x * scale, kp.y * scale, angle, octave, kp.score))
    logger.debug("[detect] octave %d: %d corners", octave, len(found))
    return found


def detect_multiscale(pyr: Pyramid, n_target: int, threshold: int, n_contiguous: int = 9,
                      patch_radius: float = DEFAULT_PATCH_RADIUS,
                      orientation_radius: int = DEFAULT_ORIENTATION_RADIUS,
                      threads: Optional[int] = None) -> List[Keypoint]:
    """Detect on every level, orient at the native level, keep the best ``n_target``.

    Ordering is score descending with ties broken by (octave, y, x), so the
    result does not depend on the scheduling of the per-level workers.
    """
    if n_target < 1:
        raise ValueError(f"n_target must be >= 1, got {n_target}")
    margin = max(3, int(orientation_radius), int(math.ceil(patch_radius)))

    def work(k: int) -> List[Keypoint]:
        return _detect_level(pyr[k], k, pyr.scale(k), threshold, n_contiguous, margin, orientation_radius)

    if threads and threads > 1 and len(pyr) > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            per_level = list(pool.map(work, range(len(pyr))))
    else:
        per_level = [work(k) for k in range(len(pyr))]

    merged = [kp for level in per_level for kp in level]
    merged.sort(key=lambda kp: (-kp.score, kp.octave, kp.y, kp.x))
    logger.info("[detect] %d corners over %d levels, keeping %d", len(merged), len(pyr), min(n_target, len(merged)))
    return merged[:n_target]


# --- keypoint files ---------------------------------------------------------

def format_keypoints(kps: Sequence[Keypoint]) -> str:
    lines = [KEYPOINT_HEADER]
    lines.extend(f"{kp.x!r} {kp.y!r} {kp.angle!r} {kp.octave} {kp.score!r}" for kp in kps)
    return "\n".join(lines) + "\n"


def parse_keypoints(text: str, source: str = "<string>") -> List[Keypoint]:
    """Parse a keypoint file (header ``keypoints v1`` then ``x y angle octave score``)."""
    lines = text.splitlines()
    if not lines or lines[0].strip() != KEYPOINT_HEADER:
        raise InputParseError(f"{source}: missing '{KEYPOINT_HEADER}' header")
    kps = []
    for lineno, line in enumerate(lines[1:], start=2):
        if not line.strip():
            continue
        parts = line.split()
        if len(parts) != 5:
            raise InputParseError(f"{source}:{lineno}: expected 5 fields, got {len(parts)}")
        try:
            x, y, angle = (float(p) for p in parts[:3])
            octave = int(parts[3])
            score = float(parts[4])
            kps.append(Keypoint(x, y, angle, octave, score))
        except ValueError as e:
            raise InputParseError(f"{source}:{lineno}: {e}") from None
    return kps


def write_keypoints(path: Union[str, Path], kps: Sequence[Keypoint]) -> None:
    Path(path).write_text(format_keypoints(kps), encoding="utf-8")


def read_keypoints(path: Union[str, Path]) -> List[Keypoint]:
    path = Path(path)
    return parse_keypoints(path.read_text(encoding="utf-8"), str(path))
