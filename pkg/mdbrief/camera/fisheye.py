"""Generic polynomial fisheye model (unprojection polynomial + affine stretch).

Unprojection: ``m' = A^-1 (m - o)``, ``rho = |m'|`` and the ray is
``(m'_x, m'_y, a0 + a2 rho^2 + a3 rho^3 + a4 rho^4)``. The forward direction
needs the radius ``rho`` whose ray elevation matches the point; it comes from
``forward_poly`` when the calibration provides one, otherwise from a
vectorized Newton solve on the unprojection polynomial.
"""

from __future__ import annotations

import logging
from typing import Optional, Sequence, Tuple

import numpy as np

from ..errors import ModelDomainError
from .base import CameraModel, ModelVariant, normalize_rows

logger = logging.getLogger(__name__)

NEWTON_MAX_ITER = 20
NEWTON_TOL = 1e-10
STRETCH_DET_EPS = 1e-12


class FisheyeModel(CameraModel):
    """Generic fisheye camera; ``lambda`` defaults to ``a0``."""

    variant = ModelVariant.FISHEYE

    def __init__(self, poly_unproj: Sequence[float], principal_point: Sequence[float],
                 image_size: Sequence[int], stretch: Optional[Sequence[float]] = None,
                 forward_poly: Optional[Sequence[float]] = None, lam: Optional[float] = None) -> None:
        if len(poly_unproj) != 4:
            raise ModelDomainError(f"poly_unproj needs a0 a2 a3 a4, got {len(poly_unproj)} values")
        a0, a2, a3, a4 = (float(c) for c in poly_unproj)
        if not a0 > 0:
            raise ModelDomainError(f"a0 must be positive, got {a0}")
        super().__init__(a0 if lam is None else lam, principal_point, image_size)
        self._poly = (a0, a2, a3, a4)
        # ascending coefficients of z(rho)
        self._z_coef = np.array([a0, 0.0, a2, a3, a4])
        self._dz_coef = np.array([0.0, 2.0 * a2, 3.0 * a3, 4.0 * a4])

        stretch = (1.0, 0.0, 0.0, 1.0) if stretch is None else tuple(float(s) for s in stretch)
        if len(stretch) != 4:
            raise ModelDomainError(f"stretch needs 4 values, got {len(stretch)}")
        self._stretch = np.array(stretch, dtype=np.float64).reshape(2, 2)
        if abs(np.linalg.det(self._stretch)) <= STRETCH_DET_EPS:
            raise ModelDomainError("stretch matrix is not invertible")
        self._stretch_inv = np.linalg.inv(self._stretch)

        self._forward_poly = None if forward_poly is None else tuple(float(c) for c in forward_poly)
        self._horizon = self._horizon_radius()

    @property
    def poly_unproj(self) -> Tuple[float, float, float, float]:
        return self._poly

    @property
    def stretch(self) -> Tuple[float, float, float, float]:
        return tuple(float(v) for v in self._stretch.ravel())

    @property
    def forward_poly(self) -> Optional[Tuple[float, ...]]:
        return self._forward_poly

    @property
    def horizon_radius(self) -> float:
        """Smallest positive rho with z(rho) = 0 (inf when z never vanishes)."""
        return self._horizon

    def with_forward_poly(self, forward_poly: Sequence[float]) -> "FisheyeModel":
        return FisheyeModel(self._poly, self.principal_point, self.image_size,
                            stretch=self.stretch, forward_poly=forward_poly, lam=self.lam)

    def _horizon_radius(self) -> float:
        roots = np.polynomial.polynomial.polyroots(np.trim_zeros(self._z_coef, "b"))
        real = roots[np.abs(roots.imag) < 1e-9].real
        positive = real[real > 0]
        return float(positive.min()) if positive.size else float("inf")

    def _z(self, rho: np.ndarray) -> np.ndarray:
        return np.polynomial.polynomial.polyval(rho, self._z_coef)

    def _dz(self, rho: np.ndarray) -> np.ndarray:
        return np.polynomial.polynomial.polyval(rho, self._dz_coef)

    def unproject_points(self, pixels: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
        pixels = np.asarray(pixels, dtype=np.float64).reshape(-1, 2)
        m = (pixels - np.asarray(self.principal_point)) @ self._stretch_inv.T
        rho = np.hypot(m[:, 0], m[:, 1])
        return normalize_rows(np.column_stack([m, self._z(rho)]))

    def rho_for_elevation(self, r: np.ndarray, pz: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
        """Image radius for rays with planar radius ``r > 0`` and height ``pz``.

        Solves ``r * z(rho) - pz * rho = 0`` by Newton iteration, seeded at
        ``lambda * r / pz`` clamped to the horizon radius.
        """
        r = np.asarray(r, dtype=np.float64)
        pz = np.asarray(pz, dtype=np.float64)
        a0 = self._poly[0]
        with np.errstate(divide="ignore", invalid="ignore"):
            seed = np.where(pz > 0, self.lam * r / pz, np.inf)
        seed = np.minimum(seed, self._horizon)
        if not np.isfinite(self._horizon):
            # no horizon: rays at or below the image plane are unreachable
            seed = np.where(pz > 0, seed, np.nan)
        rho = seed.copy()
        for _ in range(NEWTON_MAX_ITER):
            f = r * self._z(rho) - pz * rho
            df = r * self._dz(rho) - pz
            with np.errstate(divide="ignore", invalid="ignore"):
                step = np.where(df != 0, f / df, np.nan)
            rho = rho - step
            if np.all(~np.isfinite(step) | (np.abs(step) <= NEWTON_TOL * np.maximum(1.0, np.abs(rho)))):
                break
        residual = np.abs(r * self._z(rho) - pz * rho)
        scale = np.maximum(r * a0, 1e-12)
        valid = np.isfinite(rho) & (rho > 0) & (residual <= 1e-8 * scale)
        return rho, valid

    def project_points(self, points: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
        points = np.asarray(points, dtype=np.float64).reshape(-1, 3)
        finite = np.isfinite(points).all(axis=1)
        px, py, pz = points[:, 0], points[:, 1], points[:, 2]
        r = np.hypot(px, py)
        on_axis = finite & (r == 0)
        off_axis = finite & (r > 0)

        rho = np.zeros(len(points))
        valid = on_axis & (pz > 0)
        if off_axis.any():
            if self._forward_poly is not None:
                theta = np.arctan2(pz[off_axis], r[off_axis])
                rho_off = np.polynomial.polynomial.polyval(theta, np.asarray(self._forward_poly))
                ok = np.isfinite(rho_off) & (rho_off > 0)
            else:
                rho_off, ok = self.rho_for_elevation(r[off_axis], pz[off_axis])
            rho[off_axis] = np.where(ok, rho_off, 0.0)
            valid[off_axis] = ok

        safe_r = np.where(r > 0, r, 1.0)
        m = np.column_stack([rho * px / safe_r, rho * py / safe_r])
        pixels = m @ self._stretch.T + np.asarray(self.principal_point)
        return pixels, valid

    def to_calibration(self):
        from .calibration import Calibration

        return Calibration(
            model=self.variant,
            lam=None if self.lam == self._poly[0] else self.lam,
            poly_unproj=self._poly,
            poly_forward=self._forward_poly,
            stretch=self.stretch,
            principal_point=self.principal_point,
            size=self.image_size,
        )

    def __repr__(self) -> str:
        return (f"FisheyeModel(poly_unproj={self._poly}, principal_point={self.principal_point}, "
                f"image_size={self.image_size})")


def fit_forward_poly(model: FisheyeModel, degree: int, samples: int = 500) -> Tuple[float, ...]:
    """Least-squares fit of rho(theta) over the elevations seen by the image.

    ``theta`` is the ray elevation ``arctan(p_z / r)`` used by the forward
    projection. The sampled range runs from the lowest elevation at the image
    corners up to just below the optical axis.

    Raises:
        ValueError: if degree < 1
        ModelDomainError: if too few samples can be solved
    """
    if degree < 1:
        raise ValueError(f"degree must be >= 1, got {degree}")
    w, h = model.width, model.height
    corners = np.array([[0, 0], [w - 1, 0], [0, h - 1], [w - 1, h - 1]], dtype=np.float64)
    bearings, _ = model.unproject_points(corners)
    elev = np.arctan2(bearings[:, 2], np.hypot(bearings[:, 0], bearings[:, 1]))
    theta = np.linspace(float(elev.min()), np.pi / 2 - 1e-3, samples)
    r = np.cos(theta)
    pz = np.sin(theta)
    rho, ok = model.rho_for_elevation(r, pz)
    if ok.sum() <= degree:
        raise ModelDomainError("not enough solvable elevations to fit a forward polynomial")
    coef = np.polynomial.polynomial.polyfit(theta[ok], rho[ok], degree)
    logger.info("[fit-forward] degree %d fit, max residual %.3g px", degree,
                float(np.max(np.abs(np.polynomial.polynomial.polyval(theta[ok], coef) - rho[ok]))))
    return tuple(float(c) for c in coef)
