"""Synthetic planar scenes: rendering, point tracking and descriptor experiments.

A textured plane z = 0 is observed by a calibrated camera moving along a
trajectory. Texel (c, r) of the texture lies at world (c, r) * texel_size.
Poses map world to camera coordinates, X_c = R X_w + t.
"""

from __future__ import annotations

import csv
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
from scipy import ndimage

from .camera.base import CameraModel
from .descriptor import TestSet, Variant, random_tests, read_tests, run_chunked
from .detector import Keypoint, detect_multiscale
from .errors import ModelDomainError, SimulationError
from .evaluation import GroundTruth, bhattacharyya, distance_histograms, recognition_rate
from .extractor import DescriptorExtractor
from .imageproc import GrayImage, build_pyramid, read_pgm
from .learning import DEFAULT_ROT_MAGNITUDE
from .matching import hamming, masked_hamming, match_brute_force

logger = logging.getLogger(__name__)

ORTHONORMAL_TOL = 1e-9
RENDER_CHUNK_ROWS = 32


@dataclass(frozen=True, eq=False)
class CameraPose:
    """Exterior orientation: world-to-camera rotation and translation."""

    rotation: np.ndarray
    translation: np.ndarray

    def __post_init__(self) -> None:
        r = np.array(self.rotation, dtype=np.float64).reshape(3, 3)
        t = np.array(self.translation, dtype=np.float64).reshape(3)
        if not np.allclose(r.T @ r, np.eye(3), rtol=0.0, atol=ORTHONORMAL_TOL):
            raise ValueError("pose rotation is not orthonormal")
        if np.linalg.det(r) <= 0:
            raise ValueError("pose rotation must have determinant +1")
        r.setflags(write=False)
        t.setflags(write=False)
        object.__setattr__(self, "rotation", r)
        object.__setattr__(self, "translation", t)

    @classmethod
    def from_center(cls, center: Sequence[float], rotation: Optional[np.ndarray] = None) -> "CameraPose":
        r = np.eye(3) if rotation is None else np.asarray(rotation, dtype=np.float64)
        return cls(r, -r @ np.asarray(center, dtype=np.float64))

    @property
    def center(self) -> np.ndarray:
        return -self.rotation.T @ self.translation

    def to_camera(self, points: np.ndarray) -> np.ndarray:
        return np.asarray(points, dtype=np.float64).reshape(-1, 3) @ self.rotation.T + self.translation


def default_trajectory(views: int, start: Sequence[float], step: float) -> List[CameraPose]:
    """Fronto-parallel poses translating along world x.

    ``start`` is the first camera centre; a negative z puts the camera in
    front of the plane looking along +z.
    """
    if views < 1:
        raise ValueError(f"views must be >= 1, got {views}")
    start = np.asarray(start, dtype=np.float64)
    return [CameraPose.from_center(start + np.array([k * step, 0.0, 0.0])) for k in range(views)]


@dataclass(frozen=True)
class SimSequence:
    """Poses, camera and plane texture of one synthetic sequence.

    ``supersample`` renders every pixel as the mean of ``supersample**2``
    rays, which keeps the compressed periphery of wide-angle views from
    aliasing.
    """

    poses: Tuple[CameraPose, ...]
    model: CameraModel
    texture: GrayImage
    texel_size: float = 1.0
    supersample: int = 1

    def __post_init__(self) -> None:
        object.__setattr__(self, "poses", tuple(self.poses))
        if not self.poses:
            raise ValueError("a sequence needs at least one pose")
        if not self.texel_size > 0:
            raise ValueError(f"texel_size must be positive, got {self.texel_size}")
        if self.supersample < 1:
            raise ValueError(f"supersample must be >= 1, got {self.supersample}")
        for k, pose in enumerate(self.poses):
            if abs(pose.center[2]) <= 1e-9:
                raise ModelDomainError(f"pose {k}: camera centre lies in the scene plane")

    def __len__(self) -> int:
        return len(self.poses)


def synthetic_texture(size: int = 1024, seed: int = 0) -> GrayImage:
    """Procedural high-texture image: multi-octave value noise plus random shapes."""
    if size < 16:
        raise ValueError(f"texture size must be >= 16, got {size}")
    rng = np.random.default_rng(seed)
    canvas = np.zeros((size, size))
    for cells, weight in ((4, 0.5), (16, 0.8), (64, 1.0), (size // 8, 0.6)):
        grid = rng.random((cells + 1, cells + 1))
        layer = ndimage.zoom(grid, size / (cells + 1), order=3, mode="nearest")
        canvas += weight * layer[:size, :size]
    canvas = (canvas - canvas.min()) / max(np.ptp(canvas), 1e-12) * 255.0

    n_shapes = max(8, size * size // 4096)
    for _ in range(n_shapes):
        cx, cy = rng.integers(0, size, 2)
        extent = int(rng.integers(4, max(5, size // 24)))
        value = float(rng.integers(0, 256))
        y0, y1 = max(0, cy - extent), min(size, cy + extent + 1)
        x0, x1 = max(0, cx - extent), min(size, cx + extent + 1)
        if rng.random() < 0.5:
            canvas[y0:y1, max(0, cx - extent // 2):min(size, cx + extent // 2 + 1)] = value
        else:
            ys, xs = np.mgrid[y0:y1, x0:x1]
            window = canvas[y0:y1, x0:x1]
            window[(xs - cx) ** 2 + (ys - cy) ** 2 <= extent * extent] = value
    return GrayImage(np.clip(np.rint(canvas), 0, 255).astype(np.uint8))


def pixels_to_plane(seq: SimSequence, index: int, pixels: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """Intersect pixel rays of view ``index`` with the plane.

    Returns:
        (world xy (N, 2), valid); rays that miss the plane or leave the model
        domain are invalid
    """
    pose = seq.poses[index]
    bearings, valid = seq.model.unproject_points(pixels)
    rays = bearings @ pose.rotation
    center = pose.center
    dz = rays[:, 2]
    with np.errstate(divide="ignore", invalid="ignore"):
        s = np.where(np.abs(dz) > 1e-12, -center[2] / dz, -1.0)
    valid &= np.isfinite(s) & (s > 0)
    s = np.where(valid, s, 0.0)
    world = center[:2] + s[:, None] * rays[:, :2]
    return world, valid


def render_view(seq: SimSequence, index: int, threads: Optional[int] = None) -> GrayImage:
    """Inverse-mapped rendering of view ``index``; rays seeing no texture contribute 0."""
    if not 0 <= index < len(seq):
        raise IndexError(f"view {index} out of range for {len(seq)} poses")
    w, h = seq.model.width, seq.model.height
    texels = seq.texture.pixels
    n = seq.supersample
    sub = (np.arange(n) + 0.5) / n - 0.5

    def work(rows: range) -> np.ndarray:
        ys, xs = np.mgrid[rows.start:rows.stop, 0:w].astype(np.float64)
        total = np.zeros(ys.size)
        for dy in sub:
            for dx in sub:
                pix = np.column_stack([xs.ravel() + dx, ys.ravel() + dy])
                world, valid = pixels_to_plane(seq, index, pix)
                tex = world / seq.texel_size
                values = ndimage.map_coordinates(texels, [tex[:, 1], tex[:, 0]], order=1, mode="constant", cval=0.0)
                values[~valid] = 0.0
                total += values
        return (total / (n * n)).reshape(len(rows), w)

    out = np.concatenate(run_chunked(work, h, RENDER_CHUNK_ROWS, threads), axis=0)
    return GrayImage(np.clip(np.rint(out), 0, 255).astype(np.uint8))


def track_points(seq: SimSequence, world_points: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """Exact projections of plane points in every view.

    Returns:
        (pixels (V, N, 2), visible (V, N)); invisible points are behind the
        camera, outside the model domain or outside the image
    """
    pts = np.asarray(world_points, dtype=np.float64)
    pts = pts.reshape(-1, pts.shape[-1])
    if pts.shape[1] == 2:
        pts = np.column_stack([pts, np.zeros(len(pts))])
    pixels = np.empty((len(seq), len(pts), 2))
    visible = np.empty((len(seq), len(pts)), dtype=bool)
    for k, pose in enumerate(seq.poses):
        pix, valid = seq.model.project_points(pose.to_camera(pts))
        pixels[k] = pix
        visible[k] = valid & seq.model.in_image(pix)
    return pixels, visible


def build_sequence(config, views: Optional[int] = None) -> SimSequence:
    """Sequence described by an experiment config (see ``mdbrief.config``)."""
    from .camera.factory import load_model

    model = load_model(config.model)
    if config.texture is not None:
        texture = read_pgm(config.texture)
    else:
        texture = synthetic_texture(config.texture_size, config.seed)
    poses = default_trajectory(views or config.views, config.start, config.step)
    return SimSequence(tuple(poses), model, texture, config.texel_size, config.supersample)


def experiment_tests(config) -> TestSet:
    if config.tests is not None:
        return read_tests(config.tests)
    return random_tests(config.dim, config.patch_size, config.seed)


# --- experiments ------------------------------------------------------------------

def _extractors(seq: SimSequence, variants: Sequence[Variant], tests: TestSet, sigma: float,
                rot_magnitude: float, seed: int) -> Dict[Variant, DescriptorExtractor]:
    # the camera translates without rolling, so tests stay unrotated
    return {v: DescriptorExtractor(v, tests, seq.model, use_orientation=False, sigma=sigma,
                                   rot_magnitude=rot_magnitude, seed=seed) for v in variants}


def _distance(variant: Variant, a, b) -> float:
    if variant.masked:
        return masked_hamming(a, b) * a.dim / 2.0
    return float(hamming(a, b))


@dataclass
class EvolutionTable:
    """Distance to the view-0 descriptor, one row per view."""

    variants: Tuple[Variant, ...]
    rows: List[Tuple[int, Tuple[float, ...]]] = field(default_factory=list)

    def column(self, variant: Variant) -> List[float]:
        k = self.variants.index(variant)
        return [values[k] for _, values in self.rows]


def hamming_evolution(seq: SimSequence, point: Sequence[float], variants: Sequence[Variant], tests: TestSet,
                      sigma: float = 2.0, rot_magnitude: float = DEFAULT_ROT_MAGNITUDE, seed: int = 0,
                      threads: Optional[int] = None) -> EvolutionTable:
    """Describe one tracked plane point in every view and compare with view 0.

    Masked variants report ``masked_hamming * D / 2`` so every column is in bits.

    Raises:
        SimulationError: the point is not visible or not describable in some view
    """
    variants = tuple(variants)
    pixels, visible = track_points(seq, np.asarray(point, dtype=np.float64).reshape(1, -1))
    hidden = np.nonzero(~visible[:, 0])[0]
    if hidden.size:
        raise SimulationError(f"track point {tuple(point)} leaves the image in view {int(hidden[0])}")
    extractors = _extractors(seq, variants, tests, sigma, rot_magnitude, seed)

    def describe(k: int):
        image = render_view(seq, k)
        kp = Keypoint(pixels[k, 0, 0], pixels[k, 0, 1])
        out = {}
        for v, ex in extractors.items():
            result = ex.describe(image, [kp])
            if not len(result):
                raise SimulationError(f"view {k}: {v.value} descriptor not available: {result.skipped[0][1]}")
            out[v] = result.descriptors[0]
        logger.info("[simulate] evolution view %d of %d", k + 1, len(seq))
        return out

    per_view = _map_views(describe, len(seq), threads)
    table = EvolutionTable(variants)
    for k, descs in enumerate(per_view):
        table.rows.append((k, tuple(_distance(v, per_view[0][v], descs[v]) for v in variants)))
    return table


def _map_views(fn, n: int, threads: Optional[int]) -> list:
    if threads and threads > 1 and n > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            return list(pool.map(fn, range(n)))
    return [fn(k) for k in range(n)]


@dataclass
class RecognitionResult:
    """Per-view recognition rate and matching/non-matching overlap for each variant."""

    variants: Tuple[Variant, ...]
    keypoints: List[Keypoint]
    world_points: np.ndarray
    rates: Dict[Tuple[int, Variant], float] = field(default_factory=dict)
    overlap: Dict[Tuple[int, Variant], float] = field(default_factory=dict)
    histograms: Dict[Tuple[int, Variant], Tuple[np.ndarray, np.ndarray]] = field(default_factory=dict)
    n_views: int = 0

    def rate_column(self, variant: Variant) -> List[float]:
        return [self.rates[(k, variant)] for k in range(self.n_views)]


def select_tracked_keypoints(seq: SimSequence, n_points: int, threshold: int, margin: float) -> Tuple[List[Keypoint], np.ndarray]:
    """Detect in view 0 and keep the strongest points visible, with ``margin``, in every view.

    Raises:
        SimulationError: fewer than ``n_points`` usable keypoints
    """
    image = render_view(seq, 0)
    candidates = detect_multiscale(build_pyramid(image, 1, 1.2), n_target=max(1, 20 * n_points), threshold=threshold)
    if not candidates:
        raise SimulationError("no keypoints detected in view 0")
    xy = np.array([[kp.x, kp.y] for kp in candidates])
    world, on_plane = pixels_to_plane(seq, 0, xy)
    tex = world / seq.texel_size
    inside = ((tex >= margin) & (tex <= np.array([seq.texture.width, seq.texture.height]) - 1 - margin)).all(axis=1)
    pixels, visible = track_points(seq, world)
    w, h = seq.model.width, seq.model.height
    in_view = ((pixels[..., 0] >= margin) & (pixels[..., 0] <= w - 1 - margin)
               & (pixels[..., 1] >= margin) & (pixels[..., 1] <= h - 1 - margin))
    usable = on_plane & inside & (visible & in_view).all(axis=0)
    keep = np.nonzero(usable)[0][:n_points]
    if keep.size < n_points:
        raise SimulationError(f"only {keep.size} of {n_points} keypoints are trackable over {len(seq)} views")
    logger.info("[simulate] tracking %d keypoints (%d detected)", keep.size, len(candidates))
    return [candidates[i] for i in keep], world[keep]


def run_recognition_experiment(seq: SimSequence, n_points: int, variants: Sequence[Variant], tests: TestSet,
                               threshold: int = 20, sigma: float = 2.0,
                               rot_magnitude: float = DEFAULT_ROT_MAGNITUDE, seed: int = 0,
                               threads: Optional[int] = None) -> RecognitionResult:
    """Track view-0 keypoints through the sequence and match every view against view 0.

    Matching is thresholdless nearest neighbour; the rate divides by ``n_points``.

    Raises:
        SimulationError: too few trackable keypoints or a point that cannot be described
    """
    if n_points < 2:
        raise ValueError(f"n_points must be >= 2, got {n_points}")
    variants = tuple(variants)
    margin = float(tests.patch_size)
    keypoints, world = select_tracked_keypoints(seq, n_points, threshold, margin)
    pixels, _ = track_points(seq, world)
    extractors = _extractors(seq, variants, tests, sigma, rot_magnitude, seed)
    gt = GroundTruth.identity(n_points)

    def describe(k: int):
        image = render_view(seq, k)
        kps = [Keypoint(x, y) for x, y in pixels[k]]
        out = {}
        for v, ex in extractors.items():
            result = ex.describe(image, kps)
            if result.skipped:
                i, why = result.skipped[0]
                raise SimulationError(f"view {k}: keypoint {i} has no {v.value} descriptor: {why}")
            out[v] = result.descriptors
        logger.info("[simulate] recognition view %d of %d", k + 1, len(seq))
        return out

    per_view = _map_views(describe, len(seq), threads)
    result = RecognitionResult(variants, keypoints, world, n_views=len(seq))
    for k, descs in enumerate(per_view):
        for v in variants:
            matches = match_brute_force(per_view[0][v], descs[v], masked=v.masked)
            result.rates[(k, v)] = recognition_rate(matches, gt, denominator=n_points)
            matching, nonmatching = distance_histograms(per_view[0][v], descs[v], gt, masked=v.masked)
            result.histograms[(k, v)] = (matching, nonmatching)
            result.overlap[(k, v)] = bhattacharyya(matching, nonmatching)
    return result


# --- outputs ------------------------------------------------------------------------

def write_evolution_csv(path: Union[str, Path], table: EvolutionTable) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["view"] + [v.value for v in table.variants])
        for k, values in table.rows:
            writer.writerow([k] + [repr(float(x)) for x in values])


def write_recognition_csv(path: Union[str, Path], result: RecognitionResult) -> None:
    """``view,rate_<variant>...,bhattacharyya_<variant>...``"""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["view"] + [f"rate_{v.value}" for v in result.variants]
                        + [f"bhattacharyya_{v.value}" for v in result.variants])
        for k in range(result.n_views):
            writer.writerow([k] + [repr(result.rates[(k, v)]) for v in result.variants]
                            + [repr(result.overlap[(k, v)]) for v in result.variants])
