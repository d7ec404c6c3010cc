"""Factory for creating camera models from a Calibration record."""

from pathlib import Path
from typing import Union

from ..errors import InputParseError, ModelDomainError
from .base import CameraModel, ModelVariant
from .calibration import Calibration
from .fisheye import FisheyeModel
from .pinhole import PinholeModel
from .radial import RadialModel


def create_model(calib: Calibration) -> CameraModel:
    """Create the CameraModel implementation for a calibration.

    Mapping:
    - pinhole -> PinholeModel
    - radial  -> RadialModel
    - fisheye -> FisheyeModel (lambda defaults to a0)
    """
    if calib.model is ModelVariant.PINHOLE:
        return PinholeModel(calib.lam, calib.principal_point, calib.size)
    if calib.model is ModelVariant.RADIAL:
        return RadialModel(calib.lam, calib.xi, calib.principal_point, calib.size)
    if calib.model is ModelVariant.FISHEYE:
        return FisheyeModel(calib.poly_unproj, calib.principal_point, calib.size,
                            stretch=calib.stretch, forward_poly=calib.poly_forward, lam=calib.lam)

    raise ValueError(f"Unsupported camera model: {calib.model}")


def load_model(path: Union[str, Path]) -> CameraModel:
    """Parse a calibration file and build its model.

    Model-domain violations found at load time (non-invertible stretch,
    undistortion pole inside the image) are reported as parse errors of the file.
    """
    calib = Calibration.load(path)
    try:
        return create_model(calib)
    except ModelDomainError as e:
        raise InputParseError(f"{path}: {e}") from None
