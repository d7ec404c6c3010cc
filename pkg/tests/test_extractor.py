"""Tests for the DescriptorExtractor façade."""
import numpy as np
import pytest

from mdbrief.camera import PinholeModel
from mdbrief.descriptor import ExtractOptions, Variant, extract, random_tests
from mdbrief.detector import Keypoint
from mdbrief.extractor import DescriptorExtractor
from mdbrief_helpers import small_fisheye, textured_image


@pytest.fixture
def scene():
    img = textured_image(160, 120, seed=21)
    kps = [Keypoint(40, 40, 0.3), Keypoint(80, 60, -1.2), Keypoint(120, 90, 2.0), Keypoint(-3, 10)]
    return img, kps, random_tests(128, 32, seed=5)


def test_plain_variants_ignore_calibration(scene):
    img, kps, q = scene
    brief = DescriptorExtractor(Variant.BRIEF, q, small_fisheye())
    assert isinstance(brief.model, PinholeModel)
    result = brief.describe(img, kps)
    reference = extract(img, kps, q, PinholeModel.identity(160, 120))
    assert result.indices == reference.indices == [0, 1, 2]
    assert np.array_equal(result.bits, reference.bits)


def test_distorted_variant_uses_calibration(scene):
    img, kps, q = scene
    model = small_fisheye()
    dbrief = DescriptorExtractor(Variant.DBRIEF, q, model)
    assert dbrief.model is model
    result = dbrief.describe(img, kps[:3])
    reference = extract(img, kps[:3], q, model, ExtractOptions())
    assert np.array_equal(result.bits, reference.bits)


def test_masked_variant_adds_masks(scene):
    img, kps, q = scene
    plain = DescriptorExtractor(Variant.BRIEF, q, small_fisheye()).describe(img, kps)
    masked = DescriptorExtractor(Variant.MBRIEF, q, small_fisheye(), seed=4).describe(img, kps)
    assert masked.indices == plain.indices
    assert [i for i, _ in masked.skipped] == [3]
    for a, b in zip(plain.descriptors, masked.descriptors):
        assert not a.has_mask and b.has_mask
        assert np.array_equal(a.bits, b.bits)
        assert 1 <= b.mask_ones <= 128


def test_masks_depend_on_seed_only_through_draws(scene):
    img, kps, q = scene
    first = DescriptorExtractor(Variant.MDBRIEF, q, small_fisheye(), seed=1).describe(img, kps)
    again = DescriptorExtractor(Variant.MDBRIEF, q, small_fisheye(), seed=1).describe(img, kps)
    assert first.descriptors == again.descriptors


def test_uncalibrated_factory(scene):
    _, _, q = scene
    ex = DescriptorExtractor.uncalibrated(Variant.MBRIEF, q, 160, 120, use_orientation=False)
    assert ex.model.image_size == (160, 120)
    assert "mbrief" in repr(ex)
    with pytest.raises(ValueError, match="calibration"):
        DescriptorExtractor.uncalibrated(Variant.MDBRIEF, q, 160, 120)
