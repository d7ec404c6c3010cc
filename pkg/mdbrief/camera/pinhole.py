"""Ideal perspective camera."""

from __future__ import annotations

from typing import Tuple

import numpy as np

from .base import CameraModel, ModelVariant, normalize_rows


class PinholeModel(CameraModel):
    """Perspective projection: pixel = lambda * p_xy / p_z + o."""

    variant = ModelVariant.PINHOLE

    @classmethod
    def identity(cls, width: int, height: int) -> "PinholeModel":
        """Pixel-frame model used for plain BRIEF: tests anchor directly in pixels."""
        return cls(lam=float(max(width, height)), principal_point=((width - 1) / 2.0, (height - 1) / 2.0),
                   image_size=(width, height))

    def to_sensor(self, pixels: np.ndarray) -> np.ndarray:
        """Sensor coordinates ``(pixel - o) / lambda``."""
        o = np.asarray(self.principal_point)
        return (np.asarray(pixels, dtype=np.float64).reshape(-1, 2) - o) / self.lam

    def from_sensor(self, sensor: np.ndarray) -> np.ndarray:
        return np.asarray(sensor, dtype=np.float64) * self.lam + np.asarray(self.principal_point)

    def unproject_points(self, pixels: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
        m = self.to_sensor(pixels)
        directions = np.column_stack([m, np.ones(len(m))])
        return normalize_rows(directions)

    def project_points(self, points: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
        points = np.asarray(points, dtype=np.float64).reshape(-1, 3)
        valid = np.isfinite(points).all(axis=1) & (points[:, 2] > 0)
        z = np.where(valid, points[:, 2], 1.0)
        m = points[:, :2] / z[:, None]
        return self.from_sensor(m), valid

    def to_calibration(self):
        from .calibration import Calibration

        return Calibration(
            model=self.variant,
            lam=self.lam,
            principal_point=self.principal_point,
            size=self.image_size,
        )
