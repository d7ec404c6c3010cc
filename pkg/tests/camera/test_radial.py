"""Tests for the division-model radial distortion."""

import numpy as np
import pytest

from mdbrief.camera import RadialModel, distort_radial, undistort_radial
from mdbrief.camera.radial import distort_radial_points, undistort_radial_points
from mdbrief.errors import ModelDomainError
from mdbrief_helpers import small_pinhole, small_radial


@pytest.mark.parametrize("xi", [-0.2, -0.05, 0.0, 0.05])
def test_distortion_inverts(xi):
    rng = np.random.default_rng(0)
    m = rng.uniform(-0.8, 0.8, (100, 2))
    m_d, ok = distort_radial_points(m, xi)
    assert ok.all()
    back, ok = undistort_radial_points(m_d, xi)
    assert ok.all()
    assert np.allclose(back, m, atol=1e-12)


def test_zero_xi_is_identity():
    assert distort_radial((0.3, -0.4), 0.0) == pytest.approx((0.3, -0.4))


def test_barrel_distortion_pulls_inwards():
    x, _ = distort_radial((1.0, 0.0), -0.1)
    assert 0.0 < x < 1.0


def test_distort_domain_error():
    with pytest.raises(ModelDomainError):
        distort_radial((1.0, 0.0), 1.0)


def test_undistort_pole():
    with pytest.raises(ModelDomainError, match="pole"):
        undistort_radial((1.0, 0.0), -1.0)


def test_model_round_trip():
    model = small_radial()
    pixels = np.array([[0.0, 0.0], [159.0, 119.0], [79.5, 59.5], [30.0, 100.0]])
    bearings, valid = model.unproject_points(pixels)
    assert valid.all()
    back, ok = model.project_points(bearings)
    assert ok.all()
    assert np.allclose(back, pixels, atol=1e-9)


def test_zero_xi_matches_pinhole():
    radial = small_radial(xi=0.0)
    pinhole = small_pinhole()
    pixels = np.array([[3.0, 4.0], [150.0, 2.0]])
    assert np.allclose(radial.unproject_points(pixels)[0], pinhole.unproject_points(pixels)[0])


def test_pole_inside_image_rejected():
    with pytest.raises(ModelDomainError, match="pole"):
        RadialModel(60.0, -1.0, (79.5, 59.5), (160, 120))


def test_calibration_record():
    calib = small_radial().to_calibration()
    assert calib.xi == -0.05
    assert calib.lam == 60.0
