"""
Test the imaging pipeline: PNG I/O, bicubic resampling, luminance, PSNR and SSIM
"""

import sys
import os

import numpy as np
import pytest
from PIL import Image as PILImage

# Add project root to path
sys.path.insert(0, os.path.join(os.path.dirname(__file__), '..', '..'))

from src.core.errors import DataError, ImageFormatError
from src.utils.dataset_loader import synthetic_hr
from src.utils.image_io import png_read, png_write
from src.utils.imaging import Image, ImagePair, bicubic_resize, degrade, modcrop, quantize, rgb_to_y
from src.utils.metrics import PSNR_INF, format_psnr, psnr, ssim


def _rgb(height, width, seed=0):
    return Image(np.random.default_rng(seed).integers(0, 256, (height, width, 3), dtype=np.uint8))


# ------------------------------------------------------------------ Image

def test_image_validation():
    assert Image(np.zeros((4, 5), dtype=np.uint8)).channels == 1
    with pytest.raises(DataError):
        Image(np.zeros((4, 5, 2), dtype=np.uint8))
    with pytest.raises(DataError):
        Image(np.zeros((4, 5, 3), dtype=np.float32))
    with pytest.raises(DataError):
        ImagePair(hr=_rgb(8, 8), lr=_rgb(3, 4), scale=2)


def test_quantize_rounds_half_away_and_clamps():
    values = np.array([-3.0, 0.49, 0.5, 1.5, 254.5, 300.0])
    assert quantize(values).tolist() == [0, 0, 1, 2, 255, 255]


# ---------------------------------------------------------------- modcrop

def test_modcrop_examples():
    img = _rgb(721, 1281)
    cropped = modcrop(img, 4)
    assert (cropped.height, cropped.width) == (720, 1280)
    np.testing.assert_array_equal(cropped.pixels, img.pixels[:720, :1280])
    assert modcrop(_rgb(9, 9), 3) == _rgb(9, 9)
    with pytest.raises(DataError):
        modcrop(_rgb(2, 5), 3)


# ---------------------------------------------------------------- bicubic

def test_bicubic_constant_and_identity():
    constant = Image(np.full((10, 12, 3), 77, dtype=np.uint8))
    assert bicubic_resize(constant, 5, 4) == Image(np.full((4, 5, 3), 77, dtype=np.uint8))
    assert bicubic_resize(constant, 30, 21) == Image(np.full((21, 30, 3), 77, dtype=np.uint8))
    img = _rgb(7, 9, seed=1)
    assert bicubic_resize(img, 9, 7) == img


def test_bicubic_hand_computed_downscale():
    row = np.array([[0.0, 0.0, 255.0, 255.0, 0.0, 0.0]])
    out = bicubic_resize(row, 3, 1).reshape(-1)
    np.testing.assert_allclose(out, [16.93359375, 221.1328125, 16.93359375], atol=1e-9)
    img = Image(np.array([[0, 0, 255, 255, 0, 0]], dtype=np.uint8))
    small = bicubic_resize(img, 3, 1).pixels.reshape(-1).astype(int)
    assert np.all(np.abs(small - np.array([16.93, 221.13, 16.93])) <= 1)


def _pillow_resize(plane, width, height):
    image = PILImage.fromarray(plane.astype(np.float32))
    return np.asarray(image.resize((width, height), resample=PILImage.Resampling.BICUBIC), dtype=np.float64)


def test_bicubic_matches_reference_interior():
    plane = np.random.default_rng(2).uniform(0, 255, (40, 48))
    for width, height in [(24, 20), (96, 80), (24, 40)]:
        ours = bicubic_resize(plane, width, height)
        ref = _pillow_resize(plane, width, height)
        margin = 8
        np.testing.assert_allclose(ours[margin:-margin, margin:-margin], ref[margin:-margin, margin:-margin],
                                   atol=1e-2)


def test_degrade_upsample_psnr_matches_reference_pipeline():
    hr = synthetic_hr(256, 256, seed=3)
    ours = bicubic_resize(degrade(hr, 2), 256, 256)

    channels = []
    for c in range(3):
        plane = hr.pixels[:, :, c].astype(np.float64)
        small = quantize(_pillow_resize(plane, 128, 128)).astype(np.float64)
        channels.append(quantize(_pillow_resize(small, 256, 256)))
    reference = Image(np.stack(channels, axis=2))

    border = 8
    ours_psnr = psnr(rgb_to_y(ours), rgb_to_y(hr), border)
    ref_psnr = psnr(rgb_to_y(reference), rgb_to_y(hr), border)
    assert abs(ours_psnr - ref_psnr) < 0.05


def test_degrade_sizes():
    lr = degrade(_rgb(100, 101), 3)
    assert (lr.height, lr.width) == (33, 33)
    with pytest.raises(DataError):
        degrade(_rgb(2, 2), 3)


# -------------------------------------------------------------- luminance

def test_rgb_to_y_examples():
    pixels = np.array([[[255, 255, 255], [0, 0, 0], [128, 128, 128]]], dtype=np.uint8)
    y = rgb_to_y(Image(pixels)).reshape(-1)
    np.testing.assert_allclose(y, [235.0, 16.0, 16.0 + 219.0 * 128 / 255], atol=1e-9)
    assert abs(y[2] - 125.929) < 1e-3


def test_rgb_to_y_range_and_grayscale():
    y = rgb_to_y(_rgb(20, 20, seed=4))
    assert y.min() >= 16.0 and y.max() <= 235.0
    gray = Image(np.arange(12, dtype=np.uint8).reshape(3, 4))
    np.testing.assert_array_equal(rgb_to_y(gray), np.arange(12, dtype=np.float64).reshape(3, 4))


# ------------------------------------------------------------------- PSNR

def test_psnr_examples():
    a = np.full((16, 16), 100.0)
    assert psnr(a, a) == PSNR_INF
    assert abs(psnr(a, a + 1.0) - 48.1308) < 1e-4
    assert abs(psnr(np.zeros((4, 4)), np.full((4, 4), 255.0))) < 1e-12


def test_psnr_border_and_symmetry():
    rng = np.random.default_rng(5)
    a = rng.uniform(0, 255, (12, 12))
    b = a.copy()
    b[0, :] += 50.0
    assert psnr(a, b, border=1) == PSNR_INF
    c = rng.uniform(0, 255, (12, 12))
    assert psnr(a, c) == psnr(c, a)
    with pytest.raises(DataError):
        psnr(a, c, border=6)
    with pytest.raises(DataError):
        psnr(a, c[:, :11])


def test_format_psnr():
    assert format_psnr(PSNR_INF) == "inf"
    assert format_psnr(31.5) == 31.5


# ------------------------------------------------------------------- SSIM

def ssim_oracle(a, b, data_range=255.0):
    """Direct per-window SSIM with 11x11 Gaussian weights (sigma 1.5), averaged over valid windows"""
    x = np.arange(-5, 6, dtype=np.float64)
    g = np.exp(-x ** 2 / (2 * 1.5 ** 2))
    g /= g.sum()
    window = np.outer(g, g)
    c1, c2 = (0.01 * data_range) ** 2, (0.03 * data_range) ** 2
    values = []
    for i in range(a.shape[0] - 10):
        for j in range(a.shape[1] - 10):
            wa, wb = a[i:i + 11, j:j + 11], b[i:i + 11, j:j + 11]
            mu_a, mu_b = np.sum(window * wa), np.sum(window * wb)
            var_a = np.sum(window * wa * wa) - mu_a ** 2
            var_b = np.sum(window * wb * wb) - mu_b ** 2
            cov = np.sum(window * wa * wb) - mu_a * mu_b
            values.append(((2 * mu_a * mu_b + c1) * (2 * cov + c2))
                          / ((mu_a ** 2 + mu_b ** 2 + c1) * (var_a + var_b + c2)))
    return float(np.mean(values))


def test_ssim_examples():
    a = np.full((16, 16), 100.0)
    assert abs(ssim(a, a) - 1.0) < 1e-9
    c1 = (0.01 * 255) ** 2
    expected = (2 * 100 * 110 + c1) / (100 ** 2 + 110 ** 2 + c1)
    assert abs(ssim(a, np.full((16, 16), 110.0)) - expected) < 1e-6
    assert abs(expected - 0.99548) < 1e-5


def test_ssim_matches_window_oracle():
    rng = np.random.default_rng(6)
    a = rng.uniform(0, 255, (32, 30))
    b = np.clip(a + rng.normal(0, 20, a.shape), 0, 255)
    assert abs(ssim(a, b) - ssim_oracle(a, b)) < 1e-6
    assert abs(ssim(a, b, border=3) - ssim_oracle(a[3:-3, 3:-3], b[3:-3, 3:-3])) < 1e-6


def test_ssim_rejects_small_planes():
    with pytest.raises(DataError):
        ssim(np.zeros((10, 20)), np.zeros((10, 20)))


# -------------------------------------------------------------------- PNG

def test_png_round_trip(tmp_path):
    for img in (_rgb(13, 17, seed=7), Image(np.arange(30, dtype=np.uint8).reshape(5, 6))):
        path = str(tmp_path / "img.png")
        png_write(path, img)
        assert png_read(path) == img


def test_png_palette_expands_to_rgb(tmp_path):
    path = str(tmp_path / "palette.png")
    indices = np.random.default_rng(8).integers(0, 4, (6, 7), dtype=np.uint8)
    palette_image = PILImage.new("P", (7, 6))
    palette_image.putdata(indices.reshape(-1).tolist())
    palette_image.putpalette([255, 0, 0, 0, 255, 0, 0, 0, 255, 10, 20, 30] + [0] * (256 * 3 - 12))
    palette_image.save(path)
    decoded = png_read(path)
    assert decoded.channels == 3
    with PILImage.open(path) as handle:
        reference = np.asarray(handle.convert("RGB"))
    np.testing.assert_array_equal(decoded.pixels, reference)


def test_png_rejects_16_bit_and_garbage(tmp_path):
    deep = str(tmp_path / "deep.png")
    PILImage.fromarray(np.full((4, 4), 1000, dtype=np.uint16)).save(deep)
    with pytest.raises(ImageFormatError):
        png_read(deep)

    garbage = tmp_path / "garbage.png"
    garbage.write_bytes(b"definitely not a png file at all")
    with pytest.raises(ImageFormatError):
        png_read(str(garbage))

    with pytest.raises(DataError):
        png_read(str(tmp_path / "missing.png"))


def test_png_alpha_is_dropped(tmp_path):
    path = str(tmp_path / "alpha.png")
    rgba = np.random.default_rng(9).integers(0, 256, (5, 5, 4), dtype=np.uint8)
    PILImage.fromarray(rgba).save(path)
    np.testing.assert_array_equal(png_read(path).pixels, rgba[:, :, :3])


if __name__ == "__main__":
    sys.exit(pytest.main([__file__, "-v"]))
