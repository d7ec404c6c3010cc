"""Perspective camera with one-parameter division-model radial distortion."""

from __future__ import annotations

from typing import Sequence, Tuple

import numpy as np

from ..errors import ModelDomainError
from .base import CameraModel, ModelVariant, normalize_rows

DENOMINATOR_EPS = 1e-12


def distort_radial_points(m: np.ndarray, xi: float) -> Tuple[np.ndarray, np.ndarray]:
    """Vectorized ``m_d = 2m / (1 + sqrt(1 - 4 xi |m|^2))`` on (N, 2) sensor points."""
    m = np.asarray(m, dtype=np.float64).reshape(-1, 2)
    radicand = 1.0 - 4.0 * xi * np.einsum("ij,ij->i", m, m)
    valid = np.isfinite(radicand) & (radicand >= 0.0)
    root = np.sqrt(np.where(valid, radicand, 1.0))
    return 2.0 * m / (1.0 + root)[:, None], valid


def undistort_radial_points(m_d: np.ndarray, xi: float) -> Tuple[np.ndarray, np.ndarray]:
    """Vectorized exact inverse ``m = m_d / (1 + xi |m_d|^2)``."""
    m_d = np.asarray(m_d, dtype=np.float64).reshape(-1, 2)
    denom = 1.0 + xi * np.einsum("ij,ij->i", m_d, m_d)
    valid = np.isfinite(denom) & (np.abs(denom) > DENOMINATOR_EPS)
    return m_d / np.where(valid, denom, 1.0)[:, None], valid


def distort_radial(m: Sequence[float], xi: float) -> Tuple[float, float]:
    """Apply division-model distortion to one sensor point.

    Raises:
        ModelDomainError: if ``1 - 4 xi |m|^2 < 0``
    """
    out, valid = distort_radial_points(np.asarray(m, dtype=np.float64), xi)
    if not valid[0]:
        raise ModelDomainError(f"point {tuple(m)} outside the radial model domain for xi={xi}")
    return float(out[0, 0]), float(out[0, 1])


def undistort_radial(m_d: Sequence[float], xi: float) -> Tuple[float, float]:
    """Remove division-model distortion from one sensor point.

    Raises:
        ModelDomainError: if ``1 + xi |m_d|^2`` is within 1e-12 of zero
    """
    out, valid = undistort_radial_points(np.asarray(m_d, dtype=np.float64), xi)
    if not valid[0]:
        raise ModelDomainError(f"point {tuple(m_d)} hits the undistortion pole for xi={xi}")
    return float(out[0, 0]), float(out[0, 1])


class RadialModel(CameraModel):
    """Pinhole plus division-model distortion applied in sensor coordinates."""

    variant = ModelVariant.RADIAL

    def __init__(self, lam: float, xi: float, principal_point: Sequence[float],
                 image_size: Sequence[int]) -> None:
        super().__init__(lam, principal_point, image_size)
        self._xi = float(xi)
        self._check_corners()

    @property
    def xi(self) -> float:
        return self._xi

    def _check_corners(self) -> None:
        # the undistortion denominator and the forward radicand are monotone in radius
        w, h = self.width, self.height
        corners = np.array([[0, 0], [w - 1, 0], [0, h - 1], [w - 1, h - 1]], dtype=np.float64)
        m_d = (corners - np.asarray(self.principal_point)) / self.lam
        m, ok = undistort_radial_points(m_d, self._xi)
        denom = 1.0 + self._xi * np.einsum("ij,ij->i", m_d, m_d)
        if not ok.all() or (denom <= 0).any():
            raise ModelDomainError(f"xi={self._xi} puts an undistortion pole inside the image")
        _, ok = distort_radial_points(m, self._xi)
        if not ok.all():
            raise ModelDomainError(f"xi={self._xi} makes the forward model complex inside the image")

    def unproject_points(self, pixels: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
        m_d = (np.asarray(pixels, dtype=np.float64).reshape(-1, 2) - np.asarray(self.principal_point)) / self.lam
        m, ok = undistort_radial_points(m_d, self._xi)
        bearings, nonzero = normalize_rows(np.column_stack([m, np.ones(len(m))]))
        return bearings, ok & nonzero

    def project_points(self, points: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
        points = np.asarray(points, dtype=np.float64).reshape(-1, 3)
        valid = np.isfinite(points).all(axis=1) & (points[:, 2] > 0)
        z = np.where(valid, points[:, 2], 1.0)
        m = points[:, :2] / z[:, None]
        m_d, ok = distort_radial_points(m, self._xi)
        return m_d * self.lam + np.asarray(self.principal_point), valid & ok

    def to_calibration(self):
        from .calibration import Calibration

        return Calibration(
            model=self.variant,
            lam=self.lam,
            xi=self._xi,
            principal_point=self.principal_point,
            size=self.image_size,
        )

    def __repr__(self) -> str:
        return f"RadialModel(lambda={self.lam:g}, xi={self._xi:g}, principal_point={self.principal_point})"
