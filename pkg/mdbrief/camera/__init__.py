"""Camera model adapters.

Provides one interface over the supported interior orientations:
- ideal pinhole
- pinhole with division-model radial distortion
- generic polynomial fisheye
"""

from .base import BearingVector, CameraModel, ModelVariant
from .pinhole import PinholeModel
from .radial import RadialModel, distort_radial, undistort_radial
from .fisheye import FisheyeModel, fit_forward_poly
from .calibration import Calibration
from .factory import create_model, load_model

__all__ = [
    'BearingVector',
    'CameraModel',
    'ModelVariant',
    'PinholeModel',
    'RadialModel',
    'FisheyeModel',
    'Calibration',
    'distort_radial',
    'undistort_radial',
    'fit_forward_poly',
    'create_model',
    'load_model',
]
