"""Offline test selection and online mask learning.

Offline, every admissible pixel pair of an S x S patch is scored by the
variance of its outcome over a patch corpus; tests are then admitted greedily
in variance order while their outcome correlation with all admitted tests
stays under a threshold that is relaxed pass by pass.

Online, each keypoint is described three times (nominal orientation and two
small random rotations); tests whose bit changes are masked out.
"""

from __future__ import annotations

import csv
import logging
from dataclasses import dataclass
from pathlib import Path
from typing import List, Optional, Sequence, Tuple, Union

import numpy as np

from .camera.base import CameraModel
from .descriptor import (
    DEFAULT_SCALE_FACTOR,
    TestSet,
    apply_tests_batch,
    project_tests_batch,
    rotated_offsets,
    run_chunked,
)
from .detector import Keypoint
from .errors import InputParseError, LearningError, ModelDomainError
from .imageproc import GrayImage, bilinear, gaussian_smooth, read_pgm, snap_subpixel, write_pgm

logger = logging.getLogger(__name__)

MANIFEST_NAME = "manifest.txt"
DEFAULT_T_START = 0.2
DEFAULT_T_STEP = 0.1
DEFAULT_ROT_MAGNITUDE = np.deg2rad(20.0)
# endpoint samples per outcome block, bounds memory independently of corpus size
BLOCK_SAMPLES = 1 << 18


@dataclass(frozen=True, eq=False)
class PatchCorpus:
    """S x S training patches with their orientation.

    ``positions`` (x, y, octave per patch, level-0 pixels of the patch centre)
    is only needed for distorted learning.
    """

    patches: np.ndarray
    angles: np.ndarray
    source: str = "<memory>"
    positions: Optional[np.ndarray] = None

    def __post_init__(self) -> None:
        patches = np.array(self.patches, dtype=np.uint8, copy=True)
        if patches.ndim != 3 or patches.shape[1] != patches.shape[2]:
            raise ValueError(f"patches must have shape (P, S, S), got {patches.shape}")
        angles = np.array(self.angles, dtype=np.float64, copy=True).reshape(-1)
        if angles.size != patches.shape[0]:
            raise ValueError(f"{patches.shape[0]} patches but {angles.size} angles")
        if not np.isfinite(angles).all():
            raise ValueError("patch orientations must be finite")
        object.__setattr__(self, "patches", patches)
        object.__setattr__(self, "angles", angles)
        if self.positions is not None:
            positions = np.array(self.positions, dtype=np.float64, copy=True).reshape(-1, 3)
            if positions.shape[0] != patches.shape[0]:
                raise ValueError(f"{patches.shape[0]} patches but {positions.shape[0]} positions")
            object.__setattr__(self, "positions", positions)

    def __len__(self) -> int:
        return int(self.patches.shape[0])

    @property
    def patch_size(self) -> int:
        return int(self.patches.shape[1])

    @property
    def has_positions(self) -> bool:
        return self.positions is not None

    def keypoints(self) -> List[Keypoint]:
        if self.positions is None:
            raise ValueError(f"corpus {self.source} carries no patch positions")
        return [Keypoint(float(x), float(y), float(a), int(o))
                for (x, y, o), a in zip(self.positions, self.angles)]

    def smoothed(self, sigma: float) -> "PatchCorpus":
        patches = np.stack([gaussian_smooth(GrayImage(p), sigma).data for p in self.patches]) if len(self) else self.patches
        return PatchCorpus(patches, self.angles, self.source, self.positions)

    @classmethod
    def from_keypoints(cls, img: GrayImage, kps: Sequence[Keypoint], patch_size: int,
                       source: str = "<image>") -> "PatchCorpus":
        """Crop ``patch_size`` patches centred on rounded keypoint positions.

        Keypoints whose patch would leave the image are dropped.
        """
        half = patch_size // 2
        patches, angles, positions = [], [], []
        for kp in kps:
            cx, cy = int(np.rint(kp.x)), int(np.rint(kp.y))
            if cx - half < 0 or cy - half < 0 or cx + half > img.width or cy + half > img.height:
                continue
            patches.append(img.data[cy - half:cy + half, cx - half:cx + half])
            angles.append(kp.angle)
            positions.append((kp.x, kp.y, kp.octave))
        if not patches:
            return cls(np.zeros((0, patch_size, patch_size), np.uint8), np.zeros(0), source, np.zeros((0, 3)))
        return cls(np.stack(patches), np.array(angles), source, np.array(positions))


def read_corpus(directory: Union[str, Path]) -> PatchCorpus:
    """Load a corpus directory: PGM patches listed in ``manifest.txt``.

    Manifest lines are ``filename angle`` or ``filename angle x y octave``;
    all lines must use the same form. ``#`` starts a comment.

    Raises:
        InputParseError: missing manifest, malformed lines, patches of mixed
            or non-square size, or an empty corpus
    """
    directory = Path(directory)
    manifest = directory / MANIFEST_NAME
    if not manifest.is_file():
        raise InputParseError(f"{directory}: no {MANIFEST_NAME}")
    patches, angles, positions = [], [], []
    width = None
    for lineno, raw in enumerate(manifest.read_text(encoding="utf-8").splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        parts = line.split()
        if len(parts) not in (2, 5):
            raise InputParseError(f"{manifest}:{lineno}: expected 'filename angle [x y octave]'")
        if width is None:
            width = len(parts)
        elif len(parts) != width:
            raise InputParseError(f"{manifest}:{lineno}: mixes lines with and without positions")
        try:
            angle = float(parts[1])
            pos = (float(parts[2]), float(parts[3]), int(parts[4])) if len(parts) == 5 else None
        except ValueError as e:
            raise InputParseError(f"{manifest}:{lineno}: {e}") from None
        if not np.isfinite(angle):
            raise InputParseError(f"{manifest}:{lineno}: orientation must be finite")
        patch = read_pgm(directory / parts[0])
        if patch.width != patch.height:
            raise InputParseError(f"{directory / parts[0]}: patch is {patch.width}x{patch.height}, not square")
        if patches and patch.shape != patches[0].shape:
            raise InputParseError(f"{directory / parts[0]}: patch size differs from {patches[0].shape}")
        patches.append(patch.data)
        angles.append(angle)
        if pos is not None:
            positions.append(pos)
    if not patches:
        raise InputParseError(f"{manifest}: corpus is empty")
    logger.info("[learn] loaded %d patches of %dx%d from %s", len(patches), *patches[0].shape, directory)
    return PatchCorpus(np.stack(patches), np.array(angles), str(directory),
                       np.array(positions) if positions else None)


def write_corpus(directory: Union[str, Path], corpus: PatchCorpus) -> None:
    """Write ``corpus`` as numbered PGM patches plus a manifest."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    lines = []
    for k, patch in enumerate(corpus.patches):
        name = f"patch_{k:06d}.pgm"
        write_pgm(GrayImage(patch), directory / name)
        line = f"{name} {float(corpus.angles[k])!r}"
        if corpus.positions is not None:
            x, y, octave = corpus.positions[k]
            line += f" {float(x)!r} {float(y)!r} {int(octave)}"
        lines.append(line)
    (directory / MANIFEST_NAME).write_text("\n".join(lines) + "\n", encoding="utf-8")


# --- candidates and variances ---------------------------------------------------

def enumerate_candidate_tests(patch_size: int, filtered: bool = True) -> TestSet:
    """Every unordered pixel pair of an S x S patch, pixels taken row-major.

    With ``filtered`` the pairs touching the one-pixel border, with endpoint
    distance <= 3 or with whole-pixel distance above 9S/10 are dropped.
    """
    s = int(patch_size)
    if s < 4 or s % 2:
        raise ValueError(f"patch size must be even and >= 4, got {patch_size}")
    ys, xs = np.divmod(np.arange(s * s), s)
    if filtered:
        interior = (xs > 0) & (xs < s - 1) & (ys > 0) & (ys < s - 1)
        xs, ys = xs[interior], ys[interior]
    i, j = np.triu_indices(xs.size, k=1)
    if filtered:
        d2 = (xs[j] - xs[i]) ** 2 + (ys[j] - ys[i]) ** 2
        longest = (9 * s) // 10
        keep = (d2 > 9) & (d2 < (longest + 1) ** 2)
        i, j = i[keep], j[keep]
    half = s // 2
    pairs = np.column_stack([xs[i] - half, ys[i] - half, xs[j] - half, ys[j] - half]).astype(np.float64)
    logger.debug("[learn] %d candidate tests for S=%d (filtered=%s)", len(pairs), s, filtered)
    return TestSet(pairs, s)


@dataclass(frozen=True)
class TestStats:
    """Outcome statistics of one candidate: ``alpha`` is the ratio of ones."""

    __test__ = False

    index: int
    pair: Tuple[float, float, float, float]
    alpha: float
    variance: float


def _block_size(n_patches: int) -> int:
    return max(1, BLOCK_SAMPLES // max(1, n_patches))


def _patch_coordinates(corpus: PatchCorpus, pairs: np.ndarray, rotate_with_orientation: bool,
                       model: Optional[CameraModel]) -> np.ndarray:
    """(P, n, 4) endpoint coordinates in patch pixels, clamped into the patch."""
    s = corpus.patch_size
    q = TestSet(pairs, s)
    angles = corpus.angles if rotate_with_orientation else np.zeros(len(corpus))
    if model is None:
        coords = rotated_offsets(q, angles, np.ones(len(corpus))) + s // 2
    else:
        kps = corpus.keypoints()
        batch = project_tests_batch(q, kps, model, angles, scale_factor=1.0)
        if not batch.ok.all():
            bad = int(np.argmin(batch.ok))
            raise ModelDomainError(f"{corpus.source}: patch {bad}: {batch.reasons[bad]}")
        centres = np.rint(corpus.positions[:, :2])
        coords = batch.pairs - np.tile(centres, 2)[:, None, :] + s // 2
    return np.clip(coords, 0, s - 1)


def outcome_columns(corpus: PatchCorpus, pairs: np.ndarray, rotate_with_orientation: bool = True,
                    model: Optional[CameraModel] = None) -> np.ndarray:
    """(P, n) outcomes ``I(u1) < I(u2)`` of ``pairs`` on every corpus patch."""
    pairs = np.asarray(pairs, dtype=np.float64).reshape(-1, 4)
    coords = snap_subpixel(_patch_coordinates(corpus, pairs, rotate_with_orientation, model))
    stack = corpus.patches.astype(np.float64)
    layers = np.arange(len(corpus))[:, None]
    first = bilinear(stack, coords[..., 0], coords[..., 1], layers)
    second = bilinear(stack, coords[..., 2], coords[..., 3], layers)
    return first < second


def compute_variances(corpus: PatchCorpus, candidates: TestSet, rotate_with_orientation: bool = True,
                      model: Optional[CameraModel] = None, threads: Optional[int] = None) -> List[TestStats]:
    """Ratio of ones and Bernoulli variance of every candidate over the corpus.

    Only per-candidate counters are kept; outcomes are evaluated in blocks.
    With ``model`` the tests are projected through it at each patch position
    before sampling (distorted learning).

    Raises:
        ValueError: empty corpus or patch size mismatch
    """
    if not len(corpus):
        raise ValueError("cannot compute test variances on an empty corpus")
    if candidates.patch_size != corpus.patch_size:
        raise ValueError(f"candidates are for S={candidates.patch_size}, corpus patches are S={corpus.patch_size}")
    n_patches = len(corpus)

    def count(rows: range) -> np.ndarray:
        cols = outcome_columns(corpus, candidates.pairs[rows.start:rows.stop], rotate_with_orientation, model)
        return cols.sum(axis=0, dtype=np.int64)

    counts = np.concatenate(run_chunked(count, candidates.dim, _block_size(n_patches), threads))
    stats = []
    for k, ones in enumerate(counts):
        alpha = int(ones) / n_patches
        stats.append(TestStats(k, tuple(float(v) for v in candidates.pairs[k]), alpha, alpha * (1.0 - alpha)))
    logger.info("[learn] variances of %d candidates over %d patches", len(stats), n_patches)
    return stats


def sort_by_variance(stats: Sequence[TestStats]) -> List[TestStats]:
    """Descending variance, ties by candidate index."""
    return sorted(stats, key=lambda st: (-st.variance, st.index))


# --- greedy selection -------------------------------------------------------------

def correlation(outcomes_a: Sequence[bool], outcomes_b: Sequence[bool]) -> float:
    """``|2/P * sum|a - b| - 1|``: 0 for unrelated tests, 1 for equal or complementary."""
    a = np.asarray(outcomes_a, dtype=bool).reshape(-1)
    b = np.asarray(outcomes_b, dtype=bool).reshape(-1)
    if a.size != b.size:
        raise ValueError(f"outcome columns differ in length: {a.size} vs {b.size}")
    if a.size == 0:
        raise ValueError("outcome columns are empty")
    differing = int(np.count_nonzero(a != b))
    return abs(2 * differing / a.size - 1)


@dataclass(frozen=True)
class LearningPass:
    number: int
    t_c: float
    admitted: int


def _max_correlation(dots: np.ndarray, n_patches: int) -> float:
    if dots.size == 0:
        return 0.0
    differing = ((n_patches - np.rint(dots).astype(np.int64)) // 2)
    return float(np.max(np.abs(2 * differing / n_patches - 1)))


def greedy_select(stats: Sequence[TestStats], corpus: PatchCorpus, d_target: int,
                  t_start: float = DEFAULT_T_START, t_step: float = DEFAULT_T_STEP,
                  rotate_with_orientation: bool = True, model: Optional[CameraModel] = None,
                  log: Optional[List[LearningPass]] = None) -> TestSet:
    """Admit tests in the given order while their correlation stays below ``t_c``.

    ``stats`` must already be sorted (see ``sort_by_variance``). The first test
    seeds the set. Each pass rescans the tests not yet admitted; when a pass
    ends short of ``d_target`` the threshold grows by ``t_step``.

    Raises:
        LearningError: threshold above 1 before reaching ``d_target``
    """
    if d_target < 1:
        raise ValueError(f"d_target must be >= 1, got {d_target}")
    if not stats:
        raise ValueError("no candidate tests to select from")
    if not len(corpus):
        raise ValueError("cannot select tests on an empty corpus")
    n_patches = len(corpus)
    block = min(256, _block_size(n_patches))

    def signed_columns(items: Sequence[TestStats]) -> np.ndarray:
        cols = outcome_columns(corpus, np.array([st.pair for st in items]), rotate_with_orientation, model)
        return cols.astype(np.float64) * 2.0 - 1.0

    # signed (+1/-1) outcome columns of admitted tests; A^T b = P - 2 * differing
    admitted_cols = np.empty((n_patches, d_target), dtype=np.float64)
    admitted: List[TestStats] = [stats[0]]
    admitted_cols[:, 0] = signed_columns(stats[:1])[:, 0]
    remaining = list(stats[1:])
    number = 0
    while True:
        t_c = round(t_start + number * t_step, 10)
        number += 1
        if t_c > 1.0:
            raise LearningError(
                f"correlation threshold exceeded 1.0 with {len(admitted)} of {d_target} tests admitted",
                achieved=len(admitted),
            )
        rejected = []
        for start in range(0, len(remaining), block):
            chunk = remaining[start:start + block]
            if len(admitted) >= d_target:
                rejected.extend(chunk)
                continue
            cols = signed_columns(chunk)
            k0 = len(admitted)
            dots = admitted_cols[:, :k0].T @ cols
            for j, st in enumerate(chunk):
                if len(admitted) >= d_target:
                    rejected.append(st)
                    continue
                k = len(admitted)
                extra = admitted_cols[:, k0:k].T @ cols[:, j]
                c = max(_max_correlation(dots[:, j], n_patches), _max_correlation(extra, n_patches))
                if c < t_c:
                    admitted_cols[:, k] = cols[:, j]
                    admitted.append(st)
                else:
                    rejected.append(st)
        if log is not None:
            log.append(LearningPass(number, t_c, len(admitted)))
        logger.info("[learn] pass %d: t_c=%.1f, %d of %d tests admitted", number, t_c, len(admitted), d_target)
        if len(admitted) >= d_target:
            break
        remaining = rejected
    return TestSet(np.array([st.pair for st in admitted]), corpus.patch_size)


def learn_tests(corpus: PatchCorpus, d_target: int, filtered: bool = True, rotate_with_orientation: bool = True,
                model: Optional[CameraModel] = None, threads: Optional[int] = None,
                log: Optional[List[LearningPass]] = None) -> TestSet:
    """Candidate enumeration, variance ranking and greedy selection in one call."""
    candidates = enumerate_candidate_tests(corpus.patch_size, filtered)
    stats = sort_by_variance(compute_variances(corpus, candidates, rotate_with_orientation, model, threads))
    return greedy_select(stats, corpus, d_target, rotate_with_orientation=rotate_with_orientation,
                         model=model, log=log)


def write_learning_log(path: Union[str, Path], passes: Sequence[LearningPass]) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["pass", "t_c", "admitted"])
        for p in passes:
            writer.writerow([p.number, repr(p.t_c), p.admitted])


# --- online masks -----------------------------------------------------------------

def rotation_draws(seed: int, rot_magnitude: float) -> np.ndarray:
    """The two perturbation angles, uniform in ``[-rot_magnitude, rot_magnitude]``."""
    return np.random.default_rng(seed).uniform(-rot_magnitude, rot_magnitude, size=2)


def _stable_mask(bits: np.ndarray) -> np.ndarray:
    """``bits`` is (..., 3, D); a test is kept when all three outcomes agree."""
    mask = (bits[..., 0, :] == bits[..., 1, :]) & (bits[..., 0, :] == bits[..., 2, :])
    empty = ~mask.any(axis=-1)
    mask[empty] = True
    return mask


@dataclass
class MaskBatch:
    masks: np.ndarray
    ok: np.ndarray
    reasons: List[Optional[str]]


def learn_masks(img: GrayImage, kps: Sequence[Keypoint], q: TestSet, model: CameraModel,
                rot_magnitude: float = DEFAULT_ROT_MAGNITUDE, seed: int = 0, use_orientation: bool = True,
                scale_factor: float = DEFAULT_SCALE_FACTOR, indices: Optional[Sequence[int]] = None,
                threads: Optional[int] = None, chunk_size: int = 256) -> MaskBatch:
    """Stability masks for many keypoints; keypoint ``k`` draws with ``seed ^ indices[k]``.

    ``img`` must already be smoothed. Keypoints whose perturbed tests cannot be
    projected get ``ok = False``.
    """
    if rot_magnitude < 0:
        raise ValueError(f"rot_magnitude must be >= 0, got {rot_magnitude}")
    indices = list(range(len(kps))) if indices is None else list(indices)

    def work(chunk: range) -> Tuple[np.ndarray, np.ndarray, List[Optional[str]]]:
        tripled, angles = [], []
        for k in chunk:
            kp = kps[k]
            base = kp.angle if use_orientation else 0.0
            r1, r2 = rotation_draws(int(seed) ^ int(indices[k]), rot_magnitude)
            tripled.extend((kp, kp, kp))
            angles.extend((base, base + r1, base + r2))
        batch = project_tests_batch(q, tripled, model, angles, scale_factor)
        ok = batch.ok.reshape(-1, 3).all(axis=1)
        bits = np.zeros((len(chunk), 3, q.dim), dtype=bool)
        if ok.any():
            pairs = batch.pairs.reshape(len(chunk), 3, q.dim, 4)
            bits[ok] = apply_tests_batch(img, pairs[ok])
        reasons = [next((r for r in batch.reasons[3 * j:3 * j + 3] if r), None) for j in range(len(chunk))]
        return np.where(ok[:, None], _stable_mask(bits), True), ok, reasons

    masks, oks, reasons = [], [], []
    for m, ok, why in run_chunked(work, len(kps), chunk_size, threads):
        masks.append(m)
        oks.append(ok)
        reasons.extend(why)
    if not masks:
        return MaskBatch(np.zeros((0, q.dim), dtype=bool), np.zeros(0, dtype=bool), [])
    return MaskBatch(np.concatenate(masks), np.concatenate(oks), reasons)


def learn_mask(img: GrayImage, kp: Keypoint, q: TestSet, model: CameraModel,
               rot_magnitude: float = DEFAULT_ROT_MAGNITUDE, seed: int = 0, use_orientation: bool = True,
               scale_factor: float = DEFAULT_SCALE_FACTOR) -> Tuple[np.ndarray, int]:
    """Mask of tests that keep their bit under two random rotations of ``kp``.

    Returns:
        (mask as a boolean array of length D, number of ones)

    Raises:
        ModelDomainError: the keypoint or a perturbed test cannot be projected
    """
    batch = learn_masks(img, [kp], q, model, rot_magnitude, seed, use_orientation, scale_factor, indices=[0])
    if not batch.ok[0]:
        raise ModelDomainError(f"cannot learn mask at {kp}: {batch.reasons[0]}")
    mask = batch.masks[0]
    return mask, int(mask.sum())
