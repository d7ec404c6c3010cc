"""Tests for gray images, smoothing, sampling, pyramids and PGM I/O."""
import numpy as np
import pytest

from mdbrief.errors import InputParseError
from mdbrief.imageproc import (
    GrayImage,
    bilinear,
    build_pyramid,
    decode_pgm,
    encode_pgm,
    gaussian_kernel,
    gaussian_smooth,
    read_pgm,
    sample_bilinear,
    sample_bilinear_many,
    snap_subpixel,
    write_pgm,
)
from mdbrief_helpers import ramp_image, textured_image


def test_gray_image_is_read_only():
    img = GrayImage(np.zeros((4, 5), dtype=np.uint8))
    assert (img.width, img.height) == (5, 4)
    with pytest.raises(ValueError):
        img.data[0, 0] = 1


def test_gray_image_rejects_out_of_range():
    with pytest.raises(ValueError):
        GrayImage(np.array([[0, 300]]))
    with pytest.raises(ValueError):
        GrayImage(np.array([[0.5, 1.0]]))
    with pytest.raises(ValueError):
        GrayImage(np.zeros((0, 3)))


def test_gaussian_kernel_normalized():
    k = gaussian_kernel(2.0)
    assert len(k) == 2 * 6 + 1
    assert k.sum() == pytest.approx(1.0)
    assert k[6] == k.max()
    with pytest.raises(ValueError):
        gaussian_kernel(0.0)


def test_smooth_constant_image_unchanged():
    img = GrayImage.constant(20, 20, 77)
    assert gaussian_smooth(img, 2.0) == img


def test_smooth_reduces_variance():
    img = textured_image(64, 64, seed=3, blur=0.5)
    smoothed = gaussian_smooth(img, 2.0)
    assert smoothed.pixels.std() < img.pixels.std()


def test_sample_bilinear_blends_neighbours():
    img = GrayImage(np.array([[0, 100], [100, 200]], dtype=np.uint8))
    assert sample_bilinear(img, 0.0, 0.0) == pytest.approx(0.0)
    assert sample_bilinear(img, 0.5, 0.5) == pytest.approx(100.0)
    assert sample_bilinear(img, 1.0, 0.5) == pytest.approx(150.0)


def test_bilinear_is_exact_between_equal_pixels():
    rng = np.random.default_rng(4)
    flat = GrayImage.constant(30, 20, 90)
    xs = rng.uniform(0, 29, 5000)
    ys = rng.uniform(0, 19, 5000)
    assert (sample_bilinear_many(flat, xs, ys) == 90.0).all()
    # equal along x, varying along y
    rows = GrayImage(np.repeat(np.arange(20, dtype=np.uint8)[:, None] * 7, 30, axis=1))
    values = sample_bilinear_many(rows, xs, np.floor(ys))
    assert np.array_equal(values, rows.pixels[np.floor(ys).astype(int), 0])


def test_bilinear_on_a_stack_picks_layers():
    stack = np.stack([np.full((4, 4), 10.0), np.full((4, 4), 200.0)])
    stack[1, 2, 2] = 100.0
    xs = np.array([[1.5, 2.0], [1.5, 2.0]])
    ys = np.array([[1.5, 2.0], [1.5, 2.0]])
    values = bilinear(stack, xs, ys, np.arange(2)[:, None])
    assert values.tolist() == [[10.0, 10.0], [175.0, 100.0]]


def test_snap_subpixel_absorbs_rounding_noise():
    coords = np.array([3.0 - 1e-13, 2.5 + 1e-12, 0.3, -7.0])
    assert snap_subpixel(coords).tolist() == [3.0, 2.5, 307 / 1024, -7.0]
    img = ramp_image()
    noisy = sample_bilinear_many(img, snap_subpixel([10.0 - 1e-13]), snap_subpixel([5.0 + 1e-13]))
    assert noisy[0] == img.pixels[5, 10]


def test_sample_bilinear_outside_raises():
    img = ramp_image()
    with pytest.raises(ValueError):
        sample_bilinear(img, -0.1, 0.0)
    with pytest.raises(ValueError):
        sample_bilinear(img, 0.0, img.height - 0.5)


def test_pyramid_level_sizes():
    img = textured_image(100, 80)
    pyr = build_pyramid(img, 3, 1.2)
    assert len(pyr) == 3
    assert pyr[0] is img
    assert (pyr[1].width, pyr[1].height) == (83, 66)
    assert (pyr[2].width, pyr[2].height) == (69, 55)
    assert pyr.scale(2) == pytest.approx(1.44)


def test_pyramid_rejects_tiny_levels():
    img = textured_image(40, 40)
    with pytest.raises(ValueError, match="smaller than"):
        build_pyramid(img, 8, 2.0)
    with pytest.raises(ValueError):
        build_pyramid(img, 2, 1.0)


def test_pgm_file(tmp_path):
    img = textured_image(17, 9)
    path = tmp_path / "img.pgm"
    write_pgm(img, path)
    assert read_pgm(path) == img


def test_pgm_header_comments_and_maxval():
    buf = b"P5\n# a comment\n3 1\n# more\n200\n" + bytes([0, 100, 200])
    img = decode_pgm(buf)
    assert img.data.tolist() == [[0, 100, 200]]


@pytest.mark.parametrize("buf,message", [
    (b"P2\n1 1\n255\n0", "not a binary PGM"),
    (b"P5\n2 2\n255\n" + bytes(3), "expected 4 pixel bytes"),
    (b"P5\n1 1\n65535\n" + bytes(2), "only 8-bit"),
    (b"P5\n1 1\n100\n" + bytes([101]), "exceeds maxval"),
    (b"P5\n2", "truncated"),
])
def test_pgm_malformed(buf, message):
    with pytest.raises(InputParseError, match=message):
        decode_pgm(buf)


def test_encode_pgm_header():
    img = GrayImage.constant(3, 2, 9)
    assert encode_pgm(img).startswith(b"P5\n3 2\n255\n")
