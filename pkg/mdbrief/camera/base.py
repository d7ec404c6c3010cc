"""Base interface for calibrated camera models."""

from __future__ import annotations

from abc import ABC, abstractmethod
from dataclasses import dataclass
from enum import Enum
from typing import ClassVar, Sequence, Tuple

import numpy as np

from ..errors import ModelDomainError

BEARING_NORM_TOL = 1e-9


class ModelVariant(Enum):
    """Camera model families, named as in calibration files."""

    PINHOLE = "pinhole"
    RADIAL = "radial"
    FISHEYE = "fisheye"


@dataclass(frozen=True)
class BearingVector:
    """Unit-norm viewing direction in the camera frame."""

    x: float
    y: float
    z: float

    def __post_init__(self) -> None:
        norm = float(np.sqrt(self.x ** 2 + self.y ** 2 + self.z ** 2))
        if abs(norm - 1.0) > BEARING_NORM_TOL:
            raise ValueError(f"bearing vector must be unit length, got norm {norm}")

    @classmethod
    def from_direction(cls, direction: Sequence[float]) -> "BearingVector":
        """Normalize a direction. Raises ModelDomainError for a zero vector."""
        d = np.asarray(direction, dtype=np.float64)
        norm = float(np.linalg.norm(d))
        if not np.isfinite(norm) or norm < 1e-300:
            raise ModelDomainError("zero-norm direction has no bearing")
        d = d / norm
        return cls(float(d[0]), float(d[1]), float(d[2]))

    def as_array(self) -> np.ndarray:
        return np.array([self.x, self.y, self.z])

    @property
    def in_front(self) -> bool:
        return self.z > 0.0


def normalize_rows(directions: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """Normalize (N, 3) directions; returns (unit rows, nonzero mask)."""
    norms = np.linalg.norm(directions, axis=1)
    valid = np.isfinite(norms) & (norms > 1e-300)
    safe = np.where(valid, norms, 1.0)
    return directions / safe[:, None], valid


class CameraModel(ABC):
    """Interior orientation of a calibrated camera.

    Pixel coordinates are (u, v) with v pointing down. Each adapter implements
    the array forms ``unproject_points`` and ``project_points``, which flag
    invalid entries instead of raising; the scalar ``unproject`` / ``project``
    are built on top of them and raise ``ModelDomainError``.
    """

    variant: ClassVar[ModelVariant]

    def __init__(self, lam: float, principal_point: Sequence[float], image_size: Sequence[int]) -> None:
        if not lam > 0:
            raise ModelDomainError(f"lambda must be positive, got {lam}")
        width, height = (int(s) for s in image_size)
        if width < 1 or height < 1:
            raise ModelDomainError(f"invalid image size {width}x{height}")
        self._lam = float(lam)
        self._principal_point = (float(principal_point[0]), float(principal_point[1]))
        self._image_size = (width, height)

    @property
    def lam(self) -> float:
        """Distance of the anchoring plane from the projection centre."""
        return self._lam

    @property
    def principal_point(self) -> Tuple[float, float]:
        return self._principal_point

    @property
    def image_size(self) -> Tuple[int, int]:
        return self._image_size

    @property
    def width(self) -> int:
        return self._image_size[0]

    @property
    def height(self) -> int:
        return self._image_size[1]

    @abstractmethod
    def unproject_points(self, pixels: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
        """Map (N, 2) pixels to (N, 3) unit bearings.

        Returns:
            (bearings, valid) where invalid rows are outside the model domain
        """

    @abstractmethod
    def project_points(self, points: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
        """Map (N, 3) camera-frame points to (N, 2) pixels.

        Returns:
            (pixels, valid); image bounds are not checked here
        """

    @abstractmethod
    def to_calibration(self):
        """Return the Calibration record describing this model."""

    def in_image(self, pixels: np.ndarray) -> np.ndarray:
        """Mask of pixels inside ``[0, width-1] x [0, height-1]``."""
        pixels = np.asarray(pixels, dtype=np.float64).reshape(-1, 2)
        u, v = pixels[:, 0], pixels[:, 1]
        return (u >= 0) & (u <= self.width - 1) & (v >= 0) & (v <= self.height - 1)

    def unproject(self, m_pix: Sequence[float]) -> BearingVector:
        """Bearing of one pixel inside the image.

        Raises:
            ModelDomainError: pixel outside the image or the model domain
        """
        pix = np.asarray(m_pix, dtype=np.float64).reshape(1, 2)
        if not self.in_image(pix)[0]:
            raise ModelDomainError(f"pixel ({pix[0, 0]}, {pix[0, 1]}) outside {self.width}x{self.height} image")
        bearings, valid = self.unproject_points(pix)
        if not valid[0]:
            raise ModelDomainError(f"pixel ({pix[0, 0]}, {pix[0, 1]}) outside the {self.variant.value} model domain")
        b = bearings[0]
        return BearingVector(float(b[0]), float(b[1]), float(b[2]))

    def project(self, p: Sequence[float]) -> Tuple[float, float]:
        """Pixel of one camera-frame point.

        Raises:
            ModelDomainError: point cannot be projected by this model
        """
        pts = np.asarray(p, dtype=np.float64).reshape(1, 3)
        pix, valid = self.project_points(pts)
        if not valid[0]:
            raise ModelDomainError(f"point {tuple(pts[0])} cannot be projected by the {self.variant.value} model")
        return float(pix[0, 0]), float(pix[0, 1])

    def __repr__(self) -> str:
        return (
            f"{self.__class__.__name__}(lambda={self._lam:g}, "
            f"principal_point={self._principal_point}, image_size={self._image_size})"
        )
