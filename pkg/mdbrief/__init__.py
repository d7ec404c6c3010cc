"""mdbrief: distortion-aware binary descriptors for wide-angle and fisheye cameras."""

__version__ = "0.1.0-dev"
