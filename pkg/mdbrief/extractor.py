"""Descriptor extraction façade used by the CLI and the simulation."""

from __future__ import annotations

import logging
from typing import Optional, Sequence, Union

from .camera.base import CameraModel
from .camera.pinhole import PinholeModel
from .descriptor import (
    DEFAULT_SCALE_FACTOR,
    ExtractionResult,
    ExtractOptions,
    TestSet,
    Variant,
    extract,
    prepare_image,
)
from .detector import Keypoint
from .imageproc import GrayImage, Pyramid
from .learning import DEFAULT_ROT_MAGNITUDE, learn_masks

logger = logging.getLogger(__name__)


class DescriptorExtractor:
    """Describes keypoints with one descriptor variant.

    BRIEF and mBRIEF place tests directly in pixels; dBRIEF and mdBRIEF
    project them through the calibrated model. Masked variants learn a
    stability mask per keypoint.
    """

    def __init__(self, variant: Variant, tests: TestSet, model: CameraModel, use_orientation: bool = True,
                 sigma: Optional[float] = 2.0, rot_magnitude: float = DEFAULT_ROT_MAGNITUDE, seed: int = 0,
                 scale_factor: float = DEFAULT_SCALE_FACTOR, threads: Optional[int] = None) -> None:
        self.variant = variant
        self.tests = tests
        self.calibrated_model = model
        self.model = model if variant.distorted else PinholeModel.identity(model.width, model.height)
        self.use_orientation = use_orientation
        self.sigma = sigma
        self.rot_magnitude = rot_magnitude
        self.seed = seed
        self.scale_factor = scale_factor
        self.threads = threads

    @classmethod
    def uncalibrated(cls, variant: Variant, tests: TestSet, width: int, height: int, **kwargs) -> "DescriptorExtractor":
        """Extractor for the pixel-space variants when no calibration is at hand."""
        if variant.distorted:
            raise ValueError(f"variant {variant.value} needs a camera calibration")
        return cls(variant, tests, PinholeModel.identity(width, height), **kwargs)

    def describe(self, source: Union[GrayImage, Pyramid], kps: Sequence[Keypoint]) -> ExtractionResult:
        image, pyr_scale = prepare_image(source, self.sigma)
        scale_factor = pyr_scale if pyr_scale is not None else self.scale_factor
        options = ExtractOptions(use_orientation=self.use_orientation, smooth_sigma=None,
                                 scale_factor=scale_factor, threads=self.threads)
        result = extract(image, kps, self.tests, self.model, options)
        if not self.variant.masked:
            return result
        return self._add_masks(image, result, scale_factor)

    def _add_masks(self, image: GrayImage, result: ExtractionResult, scale_factor: float) -> ExtractionResult:
        batch = learn_masks(image, result.keypoints, self.tests, self.model, self.rot_magnitude, self.seed,
                            self.use_orientation, scale_factor, indices=result.indices, threads=self.threads)
        masked = ExtractionResult(skipped=list(result.skipped))
        rows = []
        for k, desc in enumerate(result.descriptors):
            index = result.indices[k]
            if not batch.ok[k]:
                masked.skipped.append((index, batch.reasons[k]))
                logger.warning("[extract] skipped keypoint %d: %s", index, batch.reasons[k])
                continue
            masked.keypoints.append(result.keypoints[k])
            masked.descriptors.append(desc.with_mask(batch.masks[k]))
            masked.indices.append(index)
            masked.clamped.append(result.clamped[k])
            rows.append(k)
        masked.skipped.sort()
        masked.bits = result.bits[rows]
        ones = [d.mask_ones for d in masked.descriptors]
        if ones:
            logger.info("[extract] masks keep %.1f of %d tests on average", sum(ones) / len(ones), self.tests.dim)
        return masked

    def __repr__(self) -> str:
        return f"DescriptorExtractor({self.variant.value}, D={self.tests.dim}, model={self.model!r})"
