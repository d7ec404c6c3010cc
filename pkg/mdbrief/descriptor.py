"""Binary test sets, their camera-aware projection and descriptor extraction.

A test set holds D point pairs in patch coordinates. For extraction the pairs
are rotated by the keypoint angle, scaled by ``scale_factor**octave`` and
anchored on the plane at distance ``lambda`` in front of the camera, at the
undistorted keypoint. Each endpoint is then projected back through the
camera model. With a pinhole model this reduces to plain pixel offsets from
the keypoint, i.e. classic BRIEF.
"""

from __future__ import annotations

import logging
import struct
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import List, Optional, Sequence, Tuple, Union

import numpy as np

from .bitops import pack_bits, packed_length, popcount, unpack_bits
from .camera.base import CameraModel, ModelVariant
from .detector import Keypoint
from .errors import InputParseError, ModelDomainError
from .imageproc import GrayImage, Pyramid, gaussian_smooth, sample_bilinear_many, snap_subpixel

logger = logging.getLogger(__name__)

TESTS_HEADER = "dbrief-tests v1"
DESCRIPTOR_MAGIC = b"DBRF"
DESCRIPTOR_VERSION = 1
DEFAULT_DIM = 256
DEFAULT_PATCH_SIZE = 32
DEFAULT_SCALE_FACTOR = 1.2
MIN_BEARING_Z = 1e-6
MIN_TEST_DISTANCE = 3.0
MAX_TEST_DISTANCE_RATIO = 0.9


class Variant(Enum):
    """Descriptor flavours: plain or distorted tests, with or without masks."""

    BRIEF = "brief"
    DBRIEF = "dbrief"
    MBRIEF = "mbrief"
    MDBRIEF = "mdbrief"

    @property
    def distorted(self) -> bool:
        return self in (Variant.DBRIEF, Variant.MDBRIEF)

    @property
    def masked(self) -> bool:
        return self in (Variant.MBRIEF, Variant.MDBRIEF)


@dataclass(frozen=True, eq=False)
class TestSet:
    """Ordered binary tests ``(u1x, u1y, u2x, u2y)`` relative to the patch centre."""

    __test__ = False

    pairs: np.ndarray
    patch_size: int

    def __post_init__(self) -> None:
        pairs = np.array(self.pairs, dtype=np.float64, copy=True).reshape(-1, 4)
        if not np.isfinite(pairs).all():
            raise ValueError("test endpoints must be finite")
        pairs.setflags(write=False)
        object.__setattr__(self, "pairs", pairs)

    @property
    def dim(self) -> int:
        return int(self.pairs.shape[0])

    def __len__(self) -> int:
        return self.dim

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, TestSet):
            return NotImplemented
        return self.patch_size == other.patch_size and np.array_equal(self.pairs, other.pairs)

    def distances(self) -> np.ndarray:
        return np.hypot(self.pairs[:, 2] - self.pairs[:, 0], self.pairs[:, 3] - self.pairs[:, 1])

    def validate(self, learned: bool = False) -> None:
        """Check endpoint bounds, and for learned sets the endpoint-distance window.

        Raises:
            ValueError: describing the first violation
        """
        half = self.patch_size / 2.0
        if (np.abs(self.pairs) > half + 1e-9).any():
            raise ValueError(f"test endpoints must lie within [-{half:g}, {half:g}]")
        if learned:
            d = self.distances()
            too_short = d <= MIN_TEST_DISTANCE
            too_long = np.floor(d + 1e-9) > MAX_TEST_DISTANCE_RATIO * self.patch_size
            if (too_short | too_long).any():
                raise ValueError("learned tests violate the endpoint-distance window")

    def subset(self, indices: Sequence[int]) -> "TestSet":
        return TestSet(self.pairs[np.asarray(indices, dtype=np.intp)], self.patch_size)

    def __repr__(self) -> str:
        return f"TestSet(dim={self.dim}, patch_size={self.patch_size})"


@dataclass(frozen=True, eq=False)
class ProjectedTestSet:
    """Absolute image coordinates of one keypoint's tests after projection."""

    pairs: np.ndarray
    source_keypoint: Keypoint
    clamped: int = 0

    @property
    def dim(self) -> int:
        return int(self.pairs.shape[0])


@dataclass(frozen=True, eq=False)
class BinaryDescriptor:
    """Packed D-bit descriptor with an optional packed stability mask."""

    bits: np.ndarray
    dim: int
    mask: Optional[np.ndarray] = None
    mask_ones: int = 0

    def __post_init__(self) -> None:
        nbytes = packed_length(self.dim)
        bits = np.asarray(self.bits, dtype=np.uint8).reshape(-1)
        if bits.size != nbytes:
            raise ValueError(f"descriptor of {self.dim} bits needs {nbytes} bytes, got {bits.size}")
        if self.dim % 8 and bits[-1] >> (self.dim % 8):
            raise ValueError("padding bits must be zero")
        object.__setattr__(self, "bits", bits)
        if self.mask is not None:
            mask = np.asarray(self.mask, dtype=np.uint8).reshape(-1)
            if mask.size != nbytes:
                raise ValueError(f"mask of {self.dim} bits needs {nbytes} bytes, got {mask.size}")
            ones = int(popcount(mask))
            if ones < 1:
                raise ValueError("mask must keep at least one test")
            object.__setattr__(self, "mask", mask)
            object.__setattr__(self, "mask_ones", ones)

    @classmethod
    def from_bits(cls, bits: np.ndarray, mask: Optional[np.ndarray] = None) -> "BinaryDescriptor":
        bits = np.asarray(bits, dtype=bool)
        return cls(pack_bits(bits), int(bits.size), None if mask is None else pack_bits(mask))

    @property
    def has_mask(self) -> bool:
        return self.mask is not None

    def unpacked(self) -> np.ndarray:
        return unpack_bits(self.bits, self.dim)

    def unpacked_mask(self) -> Optional[np.ndarray]:
        return None if self.mask is None else unpack_bits(self.mask, self.dim)

    def with_mask(self, mask: np.ndarray) -> "BinaryDescriptor":
        return BinaryDescriptor(self.bits, self.dim, pack_bits(mask))

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, BinaryDescriptor):
            return NotImplemented
        if self.dim != other.dim or not np.array_equal(self.bits, other.bits):
            return False
        if self.mask is None or other.mask is None:
            return self.mask is None and other.mask is None
        return np.array_equal(self.mask, other.mask)

    def __repr__(self) -> str:
        masked = f", mask_ones={self.mask_ones}" if self.mask is not None else ""
        return f"BinaryDescriptor(dim={self.dim}{masked})"


# --- test geometry ----------------------------------------------------------

def rotate_tests(q: TestSet, angle: float) -> TestSet:
    """Rotate every endpoint about the patch origin (y axis pointing down)."""
    c, s = float(np.cos(angle)), float(np.sin(angle))
    x1, y1, x2, y2 = q.pairs.T
    rotated = np.column_stack([c * x1 - s * y1, s * x1 + c * y1, c * x2 - s * y2, s * x2 + c * y2])
    return TestSet(rotated, q.patch_size)


def rotated_offsets(q: TestSet, angles: np.ndarray, scales: np.ndarray) -> np.ndarray:
    """(K, D, 4) rotated and scaled offsets, one row block per keypoint."""
    c = np.cos(angles)[:, None]
    s = np.sin(angles)[:, None]
    x1, y1, x2, y2 = (q.pairs[:, i][None, :] for i in range(4))
    out = np.stack([c * x1 - s * y1, s * x1 + c * y1, c * x2 - s * y2, s * x2 + c * y2], axis=-1)
    return out * scales[:, None, None]


@dataclass
class ProjectionBatch:
    """Vectorized output of project_tests_batch for K keypoints."""

    pairs: np.ndarray
    clamped: np.ndarray
    ok: np.ndarray
    reasons: List[Optional[str]] = field(default_factory=list)


def project_tests_batch(q: TestSet, kps: Sequence[Keypoint], model: CameraModel, angles: Sequence[float],
                        scale_factor: float = DEFAULT_SCALE_FACTOR) -> ProjectionBatch:
    """Project a test set for many keypoints at once.

    Keypoints that cannot be handled (outside the image, bearing too close to
    the image plane, endpoint not projectable) get ``ok = False`` and a reason;
    their rows in ``pairs`` are undefined.
    """
    k = len(kps)
    xy = np.array([[kp.x, kp.y] for kp in kps], dtype=np.float64).reshape(k, 2)
    octaves = np.array([kp.octave for kp in kps], dtype=np.float64)
    offsets = rotated_offsets(q, np.asarray(angles, dtype=np.float64).reshape(k), scale_factor ** octaves)

    ok = model.in_image(xy)
    reasons: List[Optional[str]] = [None if inside else "keypoint outside the image" for inside in ok]

    if model.variant is ModelVariant.PINHOLE:
        pairs = offsets + np.tile(xy, 2)[:, None, :]
        valid = np.ones(pairs.shape[:2] + (2,), dtype=bool)
    else:
        bearings, unproj_ok = model.unproject_points(xy)
        vz = bearings[:, 2]
        front = unproj_ok & (vz > MIN_BEARING_Z)
        for i in np.nonzero(ok & ~front)[0]:
            reasons[i] = "bearing too close to the image plane"
        ok &= front
        lam = model.lam
        safe_vz = np.where(front, vz, 1.0)
        anchor = lam * bearings[:, :2] / safe_vz[:, None]
        d = q.dim
        pts = np.empty((k, d, 2, 3))
        pts[..., 0] = anchor[:, None, None, 0] + offsets[..., 0::2]
        pts[..., 1] = anchor[:, None, None, 1] + offsets[..., 1::2]
        pts[..., 2] = lam
        pix, valid = model.project_points(pts.reshape(-1, 3))
        pairs = pix.reshape(k, d, 4)
        valid = valid.reshape(k, d, 2)

    projectable = valid.all(axis=(1, 2))
    for i in np.nonzero(ok & ~projectable)[0]:
        reasons[i] = "test endpoint cannot be projected"
    ok &= projectable

    w, h = model.width, model.height
    xs, ys = pairs[..., 0::2], pairs[..., 1::2]
    outside = (xs < 0) | (xs > w - 1) | (ys < 0) | (ys > h - 1)
    clamped = outside.sum(axis=(1, 2))
    pairs[..., 0::2] = np.clip(xs, 0, w - 1)
    pairs[..., 1::2] = np.clip(ys, 0, h - 1)
    return ProjectionBatch(pairs, clamped, ok, reasons)


def project_tests(q: TestSet, kp: Keypoint, model: CameraModel, angle: float,
                  scale_factor: float = DEFAULT_SCALE_FACTOR) -> ProjectedTestSet:
    """Anchor, rotate and project a test set for one keypoint.

    Endpoints leaving the image are clamped to the border and counted.

    Raises:
        ModelDomainError: keypoint outside the image, bearing with v_z <= 1e-6,
            or an endpoint the model cannot project
    """
    batch = project_tests_batch(q, [kp], model, [angle], scale_factor)
    if not batch.ok[0]:
        raise ModelDomainError(f"cannot project tests at {kp}: {batch.reasons[0]}")
    return ProjectedTestSet(batch.pairs[0], kp, int(batch.clamped[0]))


def apply_tests_batch(img: GrayImage, pairs: np.ndarray) -> np.ndarray:
    """Bits ``I(u1) < I(u2)`` for (..., D, 4) endpoint arrays, bilinear sampling."""
    pairs = snap_subpixel(pairs)
    first = sample_bilinear_many(img, pairs[..., 0], pairs[..., 1])
    second = sample_bilinear_many(img, pairs[..., 2], pairs[..., 3])
    return first < second


def apply_tests(img: GrayImage, pts: ProjectedTestSet) -> BinaryDescriptor:
    """Evaluate projected tests on a smoothed image; ties give 0."""
    return BinaryDescriptor.from_bits(apply_tests_batch(img, pts.pairs))


# --- extraction ---------------------------------------------------------------

@dataclass
class ExtractOptions:
    use_orientation: bool = True
    smooth_sigma: Optional[float] = 2.0
    scale_factor: float = DEFAULT_SCALE_FACTOR
    threads: Optional[int] = None
    chunk_size: int = 256


@dataclass
class ExtractionResult:
    """Descriptors for the keypoints that could be described, in input order.

    ``indices[i]`` is the input position of ``keypoints[i]``; skipped inputs
    are listed with a reason. ``clamped[i]`` counts border-clamped endpoints.
    """

    keypoints: List[Keypoint] = field(default_factory=list)
    descriptors: List[BinaryDescriptor] = field(default_factory=list)
    indices: List[int] = field(default_factory=list)
    skipped: List[Tuple[int, str]] = field(default_factory=list)
    clamped: List[int] = field(default_factory=list)
    bits: Optional[np.ndarray] = None

    def __len__(self) -> int:
        return len(self.descriptors)


def prepare_image(source: Union[GrayImage, Pyramid], smooth_sigma: Optional[float]) -> Tuple[GrayImage, Optional[float]]:
    """Level-0 image smoothed once, plus the pyramid scale factor if any."""
    if isinstance(source, Pyramid):
        image, scale_factor = source.base, source.scale_factor
    else:
        image, scale_factor = source, None
    if smooth_sigma:
        image = gaussian_smooth(image, smooth_sigma)
    return image, scale_factor


def _chunks(n: int, size: int) -> List[range]:
    size = max(1, int(size))
    return [range(i, min(i + size, n)) for i in range(0, n, size)]


def run_chunked(fn, n: int, chunk_size: int, threads: Optional[int]) -> list:
    """Apply ``fn(range)`` over chunks of ``range(n)``; results keep chunk order."""
    chunks = _chunks(n, chunk_size)
    if threads and threads > 1 and len(chunks) > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            return list(pool.map(fn, chunks))
    return [fn(c) for c in chunks]


def extract(source: Union[GrayImage, Pyramid], kps: Sequence[Keypoint], q: TestSet, model: CameraModel,
            options: Optional[ExtractOptions] = None) -> ExtractionResult:
    """Describe keypoints with ``q`` projected through ``model``.

    The level-0 image is smoothed once and sampled for every octave. Keypoints
    whose tests cannot be projected are skipped and reported.
    """
    options = options or ExtractOptions()
    image, pyr_scale = prepare_image(source, options.smooth_sigma)
    scale_factor = pyr_scale if pyr_scale is not None else options.scale_factor

    def work(chunk: range):
        sub = [kps[i] for i in chunk]
        angles = [kp.angle if options.use_orientation else 0.0 for kp in sub]
        batch = project_tests_batch(q, sub, model, angles, scale_factor)
        bits = np.zeros((len(sub), q.dim), dtype=bool)
        if batch.ok.any():
            bits[batch.ok] = apply_tests_batch(image, batch.pairs[batch.ok])
        return batch, bits

    result = ExtractionResult()
    kept_bits = []
    for chunk, (batch, bits) in zip(_chunks(len(kps), options.chunk_size),
                                    run_chunked(work, len(kps), options.chunk_size, options.threads)):
        for j, i in enumerate(chunk):
            if not batch.ok[j]:
                result.skipped.append((i, batch.reasons[j]))
                logger.warning("[extract] skipped keypoint %d: %s", i, batch.reasons[j])
                continue
            result.keypoints.append(kps[i])
            result.indices.append(i)
            result.descriptors.append(BinaryDescriptor.from_bits(bits[j]))
            result.clamped.append(int(batch.clamped[j]))
            kept_bits.append(bits[j])
            if batch.clamped[j]:
                logger.debug("[extract] keypoint %d: %d endpoints clamped", i, int(batch.clamped[j]))
    result.bits = np.array(kept_bits, dtype=bool).reshape(-1, q.dim)
    total_clamped = sum(result.clamped)
    if total_clamped:
        logger.info("[extract] %d endpoints clamped over %d keypoints", total_clamped, len(result))
    return result


# --- test sets ----------------------------------------------------------------

def random_tests(dim: int = DEFAULT_DIM, patch_size: int = DEFAULT_PATCH_SIZE, seed: int = 0,
                 sigma: Optional[float] = None) -> TestSet:
    """Classic BRIEF layout: endpoints i.i.d. isotropic Gaussian, std ``S/5``.

    Endpoints are rounded to integers and clipped to ``[-S/2, S/2]``; pairs
    with coincident endpoints are redrawn.
    """
    if dim < 1:
        raise ValueError(f"dim must be >= 1, got {dim}")
    sigma = patch_size / 5.0 if sigma is None else float(sigma)
    half = patch_size / 2.0
    rng = np.random.default_rng(seed)
    drawn: List[np.ndarray] = []
    count = 0
    while count < dim:
        batch = np.clip(np.rint(rng.normal(0.0, sigma, size=(dim, 4))), -half, half) + 0.0
        distinct = (batch[:, 0] != batch[:, 2]) | (batch[:, 1] != batch[:, 3])
        drawn.append(batch[distinct])
        count += int(distinct.sum())
    return TestSet(np.concatenate(drawn)[:dim], patch_size)


def format_tests(q: TestSet) -> str:
    rounded = np.rint(q.pairs)
    if not np.array_equal(rounded, q.pairs):
        raise ValueError("only integer test sets can be written")
    lines = [TESTS_HEADER, f"D={q.dim} S={q.patch_size}"]
    lines.extend(" ".join(str(int(v)) for v in row) for row in rounded)
    return "\n".join(lines) + "\n"


def parse_tests(text: str, source: str = "<string>") -> TestSet:
    """Parse a test-set file: header, ``D=<dim> S=<patch_size>``, D integer rows."""
    lines = [line for line in text.splitlines() if line.strip()]
    if not lines or lines[0].strip() != TESTS_HEADER:
        raise InputParseError(f"{source}: missing '{TESTS_HEADER}' header")
    if len(lines) < 2:
        raise InputParseError(f"{source}: missing 'D=<dim> S=<patch_size>' line")
    fields = dict(tok.split("=", 1) for tok in lines[1].split() if "=" in tok)
    try:
        dim, patch_size = int(fields["D"]), int(fields["S"])
    except (KeyError, ValueError):
        raise InputParseError(f"{source}: malformed size line '{lines[1].strip()}'") from None
    rows = lines[2:]
    if len(rows) != dim:
        raise InputParseError(f"{source}: header declares D={dim} but file has {len(rows)} tests")
    try:
        pairs = np.array([[int(tok) for tok in row.split()] for row in rows], dtype=np.float64)
    except ValueError:
        raise InputParseError(f"{source}: test rows must hold integers") from None
    if dim and pairs.shape != (dim, 4):
        raise InputParseError(f"{source}: every test row needs 4 integers")
    q = TestSet(pairs.reshape(-1, 4), patch_size)
    try:
        q.validate()
    except ValueError as e:
        raise InputParseError(f"{source}: {e}") from None
    return q


def write_tests(path: Union[str, Path], q: TestSet) -> None:
    Path(path).write_text(format_tests(q), encoding="utf-8")


def read_tests(path: Union[str, Path]) -> TestSet:
    path = Path(path)
    return parse_tests(path.read_text(encoding="utf-8"), str(path))


# --- descriptor files ---------------------------------------------------------

_HEADER = struct.Struct("<4sBIH")
_KEYPOINT = struct.Struct("<5f")


def encode_descriptors(kps: Sequence[Keypoint], descs: Sequence[BinaryDescriptor]) -> bytes:
    """Binary descriptor file: header, then keypoint, bits, mask flag and mask per record."""
    if len(kps) != len(descs):
        raise ValueError(f"{len(kps)} keypoints but {len(descs)} descriptors")
    dims = {d.dim for d in descs}
    if len(dims) > 1:
        raise ValueError(f"descriptors of mixed dimensions {sorted(dims)}")
    dim = dims.pop() if dims else 0
    chunks = [_HEADER.pack(DESCRIPTOR_MAGIC, DESCRIPTOR_VERSION, len(descs), dim)]
    for kp, desc in zip(kps, descs):
        chunks.append(_KEYPOINT.pack(kp.x, kp.y, kp.angle, float(kp.octave), kp.score))
        chunks.append(desc.bits.tobytes())
        if desc.mask is None:
            chunks.append(b"\x00")
        else:
            chunks.append(b"\x01")
            chunks.append(desc.mask.tobytes())
    return b"".join(chunks)


def decode_descriptors(buf: bytes, source: str = "<bytes>") -> Tuple[List[Keypoint], List[BinaryDescriptor]]:
    if len(buf) < _HEADER.size:
        raise InputParseError(f"{source}: truncated descriptor header")
    magic, version, count, dim = _HEADER.unpack_from(buf, 0)
    if magic != DESCRIPTOR_MAGIC:
        raise InputParseError(f"{source}: not a descriptor file (magic {magic!r})")
    if version != DESCRIPTOR_VERSION:
        raise InputParseError(f"{source}: unsupported descriptor file version {version}")
    nbytes = packed_length(dim)
    pos = _HEADER.size
    kps: List[Keypoint] = []
    descs: List[BinaryDescriptor] = []
    for index in range(count):
        if pos + _KEYPOINT.size + nbytes + 1 > len(buf):
            raise InputParseError(f"{source}: truncated record {index}")
        x, y, angle, octave, score = _KEYPOINT.unpack_from(buf, pos)
        pos += _KEYPOINT.size
        bits = np.frombuffer(buf, dtype=np.uint8, count=nbytes, offset=pos).copy()
        pos += nbytes
        flag = buf[pos]
        pos += 1
        mask = None
        if flag == 1:
            if pos + nbytes > len(buf):
                raise InputParseError(f"{source}: truncated mask in record {index}")
            mask = np.frombuffer(buf, dtype=np.uint8, count=nbytes, offset=pos).copy()
            pos += nbytes
        elif flag != 0:
            raise InputParseError(f"{source}: bad mask flag {flag} in record {index}")
        try:
            kps.append(Keypoint(x, y, angle, int(round(octave)), score))
            descs.append(BinaryDescriptor(bits, dim, mask))
        except ValueError as e:
            raise InputParseError(f"{source}: record {index}: {e}") from None
    if pos != len(buf):
        raise InputParseError(f"{source}: {len(buf) - pos} trailing bytes")
    return kps, descs


def write_descriptors(path: Union[str, Path], kps: Sequence[Keypoint], descs: Sequence[BinaryDescriptor]) -> None:
    Path(path).write_bytes(encode_descriptors(kps, descs))


def read_descriptors(path: Union[str, Path]) -> Tuple[List[Keypoint], List[BinaryDescriptor]]:
    path = Path(path)
    return decode_descriptors(path.read_bytes(), str(path))
