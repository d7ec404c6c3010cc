"""Tests for test sets, test projection, descriptor extraction and descriptor files."""
import time

import numpy as np
import pytest

from mdbrief.bitops import unpack_bits
from mdbrief.camera import PinholeModel
from mdbrief.descriptor import (
    BinaryDescriptor,
    ExtractOptions,
    ProjectedTestSet,
    TestSet,
    Variant,
    apply_tests,
    decode_descriptors,
    encode_descriptors,
    extract,
    format_tests,
    parse_tests,
    project_tests,
    random_tests,
    read_descriptors,
    rotate_tests,
    write_descriptors,
)
from mdbrief.detector import Keypoint
from mdbrief.errors import InputParseError, ModelDomainError
from mdbrief.imageproc import GrayImage, build_pyramid, gaussian_smooth
from mdbrief_helpers import descriptor, small_fisheye, small_pinhole, textured_image


def test_variant_flags():
    assert [v.distorted for v in Variant] == [False, True, False, True]
    assert [v.masked for v in Variant] == [False, False, True, True]


def test_random_tests_layout():
    q = random_tests(256, 32, seed=1)
    assert q.dim == 256 and q.patch_size == 32
    q.validate()
    assert np.array_equal(q.pairs, np.rint(q.pairs))
    assert (q.distances() > 0).all()
    assert random_tests(256, 32, seed=1) == q
    assert random_tests(256, 32, seed=2) != q


def test_test_set_validate():
    TestSet([[-16, 0, 16, 0]], 32).validate()
    with pytest.raises(ValueError):
        TestSet([[-17, 0, 0, 0]], 32).validate()
    with pytest.raises(ValueError, match="distance window"):
        TestSet([[0, 0, 3, 0]], 32).validate(learned=True)
    with pytest.raises(ValueError, match="distance window"):
        TestSet([[-15, 0, 15, 0]], 32).validate(learned=True)
    TestSet([[-14, 0, 14, 0]], 32).validate(learned=True)


def test_rotate_tests_quarter_turn():
    q = TestSet([[1, 0, 0, 2]], 8)
    rotated = rotate_tests(q, np.pi / 2)
    assert np.allclose(rotated.pairs, [[0, 1, -2, 0]], atol=1e-12)


def test_tests_file_text():
    q = TestSet([[1, -2, 3, 4], [0, 0, -5, 5]], 16)
    text = format_tests(q)
    assert text.splitlines()[:2] == ["dbrief-tests v1", "D=2 S=16"]
    assert parse_tests(text) == q


@pytest.mark.parametrize("text,message", [
    ("nope\n", "header"),
    ("dbrief-tests v1\nD=2 S=16\n1 2 3 4\n", "declares D=2"),
    ("dbrief-tests v1\nD=1 S=16\n1 2 3\n", "4 integers"),
    ("dbrief-tests v1\nD=1 S=16\n1 2 3 x\n", "integers"),
    ("dbrief-tests v1\nD=1 S=16\n1 2 30 4\n", "within"),
    ("dbrief-tests v1\nD=one S=16\n", "malformed size line"),
])
def test_parse_tests_errors(text, message):
    with pytest.raises(InputParseError, match=message):
        parse_tests(text)


def test_apply_tests_compares_endpoints():
    ramp = GrayImage(np.tile(np.arange(64, dtype=np.uint8) * 2, (32, 1)))
    pairs = np.array([
        [10.0, 5.0, 20.0, 5.0],
        [20.0, 5.0, 10.0, 5.0],
        [15.0, 3.0, 15.0, 25.0],
        [10.5, 8.0, 11.0, 8.0],
    ])
    desc = apply_tests(ramp, ProjectedTestSet(pairs, Keypoint(15.0, 15.0, 0.0, 0)))
    assert desc.dim == 4
    assert desc.mask is None
    assert unpack_bits(desc.bits, 4).tolist() == [True, False, False, True]


def test_constant_image_sets_no_bits():
    flat = GrayImage.constant(80, 60, 90)
    q = random_tests(256, 32)
    kp = Keypoint(40.3, 30.7, 0.3)
    for model in (small_pinhole(80, 60), small_fisheye(80, 60, a0=40.0, a2=-4e-3)):
        projected = project_tests(q, kp, model, kp.angle)
        # sub-pixel endpoints everywhere
        assert (projected.pairs % 1.0 != 0.0).any()
        assert not apply_tests(flat, projected).unpacked().any()


def test_inverted_image_flips_differing_bits():
    img = gaussian_smooth(textured_image(80, 60, seed=14), 2.0)
    q = random_tests(256, 32, seed=6)
    projected = project_tests(q, Keypoint(40, 30), small_pinhole(80, 60), 0.0)
    bits = apply_tests(img, projected).unpacked()
    flipped = apply_tests(img.inverted(), projected).unpacked()
    xy = np.rint(projected.pairs).astype(int)
    first = img.pixels[xy[:, 1], xy[:, 0]]
    second = img.pixels[xy[:, 3], xy[:, 2]]
    differ = first != second
    assert differ.sum() > 128
    assert np.array_equal(bits != flipped, differ)
    assert not (bits[~differ] | flipped[~differ]).any()


def test_fisheye_tests_are_point_symmetric_at_principal_point():
    model = small_fisheye()
    q = random_tests(128, 32, seed=7)
    kp = Keypoint(*model.principal_point)
    upright = project_tests(q, kp, model, 0.0)
    turned = project_tests(q, kp, model, np.pi)
    centre = np.tile(np.asarray(model.principal_point), 2)
    assert upright.clamped == 0
    assert np.allclose(turned.pairs - centre, -(upright.pairs - centre), atol=1e-9)


def test_pinhole_projection_is_pixel_offset():
    q = random_tests(64, 32, seed=3)
    model = small_pinhole()
    kp = Keypoint(70.0, 50.0, 0.3, 0)
    projected = project_tests(q, kp, model, kp.angle)
    expected = rotate_tests(q, kp.angle).pairs + np.array([70.0, 50.0, 70.0, 50.0])
    assert np.allclose(projected.pairs, expected, atol=1e-9)
    identity = project_tests(q, kp, PinholeModel.identity(160, 120), kp.angle)
    assert np.allclose(identity.pairs, expected, atol=1e-9)


def test_octave_scales_offsets():
    q = TestSet([[4, 0, -4, 0]], 16)
    kp = Keypoint(80.0, 60.0, 0.0, 2)
    projected = project_tests(q, kp, PinholeModel.identity(160, 120), 0.0, scale_factor=1.5)
    assert np.allclose(projected.pairs, [[89.0, 60.0, 71.0, 60.0]])


def test_fisheye_projection_compresses_offsets():
    model = small_fisheye()
    q = random_tests(128, 32, seed=4)
    cx, cy = model.principal_point
    projected = project_tests(q, Keypoint(cx, cy), model, 0.0)
    offsets = projected.pairs - np.array([cx, cy, cx, cy])
    assert np.allclose(offsets, q.pairs, atol=1.0)
    for a, b in ((0, 1), (2, 3)):
        assert (np.hypot(offsets[:, a], offsets[:, b]) <= np.hypot(q.pairs[:, a], q.pairs[:, b]) + 1e-9).all()


def test_projection_outside_image_raises():
    q = random_tests(8, 16)
    with pytest.raises(ModelDomainError, match="outside the image"):
        project_tests(q, Keypoint(-5.0, 10.0), small_pinhole(), 0.0)


def test_endpoints_are_clamped_and_counted():
    q = TestSet([[-8, -8, -4, -8], [1, 1, 2, 2]], 16)
    projected = project_tests(q, Keypoint(2.0, 3.0), PinholeModel.identity(40, 30), 0.0)
    assert projected.clamped == 2
    assert projected.pairs[0, 0] == 0.0 and projected.pairs[0, 1] == 0.0


def test_binary_descriptor_checks():
    d = descriptor([1, 0, 1, 1, 0, 0, 0, 0, 1])
    assert d.dim == 9 and d.bits.tolist() == [0b1101, 1]
    with pytest.raises(ValueError, match="padding"):
        BinaryDescriptor(np.array([0, 2], dtype=np.uint8), 9)
    with pytest.raises(ValueError, match="at least one"):
        descriptor([1, 0, 1], mask=[0, 0, 0])
    masked = d.with_mask(np.ones(9, dtype=bool))
    assert masked.mask_ones == 9 and masked != d


def test_extract_skips_and_keeps_order():
    img = textured_image(80, 60, seed=2)
    q = random_tests(32, 16, seed=0)
    kps = [Keypoint(40, 30), Keypoint(-1, 5), Keypoint(20, 20), Keypoint(500, 5)]
    result = extract(img, kps, q, PinholeModel.identity(80, 60))
    assert result.indices == [0, 2]
    assert [i for i, _ in result.skipped] == [1, 3]
    assert result.bits.shape == (2, 32)
    assert np.array_equal(result.descriptors[1].unpacked(), result.bits[1])


def test_extract_threads_and_chunks_do_not_change_bits():
    img = textured_image(120, 90, seed=7)
    q = random_tests(64, 32, seed=1)
    rng = np.random.default_rng(0)
    kps = [Keypoint(x, y, a) for x, y, a in zip(rng.uniform(0, 119, 50), rng.uniform(0, 89, 50),
                                                rng.uniform(-3, 3, 50))]
    model = small_fisheye(120, 90, a0=50.0, a2=-2e-3)
    one = extract(img, kps, q, model, ExtractOptions(threads=1, chunk_size=256))
    many = extract(img, kps, q, model, ExtractOptions(threads=4, chunk_size=7))
    assert one.indices == many.indices
    assert np.array_equal(one.bits, many.bits)


def test_extract_uses_pyramid_scale_factor():
    img = textured_image(120, 90, seed=8)
    pyr = build_pyramid(img, 2, 1.5)
    q = random_tests(32, 16, seed=2)
    kp = [Keypoint(60, 45, 0.0, 1)]
    model = PinholeModel.identity(120, 90)
    from_pyramid = extract(pyr, kp, q, model)
    explicit = extract(img, kp, q, model, ExtractOptions(scale_factor=1.5))
    assert np.array_equal(from_pyramid.bits, explicit.bits)


def test_descriptor_file(tmp_path):
    kps = [Keypoint(1.5, 2.25, -0.5, 1, 12.0), Keypoint(10, 20)]
    descs = [descriptor([1, 0, 1, 1] * 4), descriptor([0, 1] * 8, mask=[1] * 15 + [0])]
    path = tmp_path / "a.desc"
    write_descriptors(path, kps, descs)
    got_kps, got_descs = read_descriptors(path)
    assert got_kps == kps
    assert got_descs == descs
    assert got_descs[1].mask_ones == 15


def test_descriptor_file_errors():
    buf = encode_descriptors([Keypoint(1, 1)], [descriptor([1] * 8)])
    with pytest.raises(InputParseError, match="magic"):
        decode_descriptors(b"XXXX" + buf[4:])
    with pytest.raises(InputParseError, match="trailing"):
        decode_descriptors(buf + b"\x00")
    with pytest.raises(InputParseError, match="truncated"):
        decode_descriptors(buf[:-1])
    with pytest.raises(ValueError):
        encode_descriptors([Keypoint(1, 1)], [])


@pytest.mark.benchmark
def test_extraction_throughput():
    img = textured_image(640, 480, seed=13)
    rng = np.random.default_rng(13)
    kps = [Keypoint(x, y, a) for x, y, a in zip(rng.uniform(40, 600, 1000), rng.uniform(40, 440, 1000),
                                                 rng.uniform(-np.pi, np.pi, 1000))]
    q = random_tests(256, 32, seed=13)
    model = PinholeModel.identity(640, 480)
    best = float("inf")
    for _ in range(3):
        start = time.perf_counter()
        result = extract(img, kps, q, model)
        best = min(best, time.perf_counter() - start)
    assert len(result.indices) == 1000
    # 1 ms per keypoint
    assert best / len(kps) < 1e-3
