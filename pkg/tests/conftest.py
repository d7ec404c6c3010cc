"""Pytest conftest: re-exports helpers from mdbrief_helpers for convenience."""
from mdbrief_helpers import (  # noqa: F401
    textured_image,
    square_image,
    ramp_image,
    save_pgm,
    small_pinhole,
    small_radial,
    small_fisheye,
    random_corpus,
    descriptor,
    random_descriptors,
    flip_bits,
)
