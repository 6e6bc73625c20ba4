import math

import numpy as np
import pytest
import torch
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays
from PIL import Image as PILImage

from idf.data import PersonRecord
from idf.errors import ContractViolation, DimensionError, ImageFormatError, IngestionError, ParameterError
from idf.image_core import (IlluminationLevel, ScaleLevel, channel_histogram, classify_illumination,
                            classify_scale, gamma_degrade, illumination_level, load_and_resize, mean_lightness,
                            resize, to_uint8)

images = arrays(np.float32, st.tuples(st.just(3), st.integers(1, 6), st.integers(1, 6)),
                elements=st.floats(0, 1, width=32)).map(torch.from_numpy)


def save_rgb(path, arr):
    PILImage.fromarray(np.asarray(arr, dtype=np.uint8)).save(path)
    return path


def bilinear_oracle(src, out_h, out_w):
    """Scalar half-pixel-centre bilinear interpolation with edge clamping."""
    in_h, in_w = src.shape
    out = np.zeros((out_h, out_w))
    for y in range(out_h):
        for x in range(out_w):
            sy = max((y + 0.5) * in_h / out_h - 0.5, 0.0)
            sx = max((x + 0.5) * in_w / out_w - 0.5, 0.0)
            y0, x0 = int(math.floor(sy)), int(math.floor(sx))
            y1, x1 = min(y0 + 1, in_h - 1), min(x0 + 1, in_w - 1)
            wy, wx = sy - y0, sx - x0
            out[y, x] = ((1 - wy) * ((1 - wx) * src[y0, x0] + wx * src[y0, x1])
                         + wy * ((1 - wx) * src[y1, x0] + wx * src[y1, x1]))
    return out


def test_load_at_target_size_is_plain_scaling(tmp_path):
    rng = np.random.default_rng(0)
    arr = rng.integers(0, 256, size=(256, 128, 3))
    img = load_and_resize(save_rgb(tmp_path / "a.png", arr))
    assert img.shape == (3, 256, 128)
    assert torch.equal(img, torch.from_numpy(arr.transpose(2, 0, 1).astype(np.float32)) / 255)


def test_constant_white_resizes_to_ones(tmp_path):
    img = load_and_resize(save_rgb(tmp_path / "w.png", np.full((37, 11, 3), 255)))
    assert img.shape == (3, 256, 128)
    assert torch.all(img == 1)


def test_checkerboard_upsample_matches_bilinear_oracle(tmp_path):
    board = np.array([[0, 255], [255, 0]])
    arr = np.repeat(board[..., None], 3, axis=2)
    img = load_and_resize(save_rgb(tmp_path / "c.png", arr), size=(4, 4))
    expected = bilinear_oracle(board / 255.0, 4, 4)
    for c in range(3):
        np.testing.assert_allclose(img[c].numpy(), expected, atol=1e-6)


def test_load_errors(tmp_path):
    with pytest.raises(IngestionError, match="missing.png"):
        load_and_resize(tmp_path / "missing.png")
    bad = tmp_path / "bad.png"
    bad.write_bytes(b"not an image")
    with pytest.raises(IngestionError, match="bad.png"):
        load_and_resize(bad)
    PILImage.fromarray(np.zeros((4, 4), dtype=np.uint8)).save(tmp_path / "gray.png")
    with pytest.raises(ImageFormatError):
        load_and_resize(tmp_path / "gray.png")


def test_gamma_examples():
    img = torch.tensor([0.0, 0.5, 1.0]).reshape(3, 1, 1)
    assert torch.equal(gamma_degrade(img, 1.0), img)
    out = gamma_degrade(img, 3.0)
    assert out[0].item() == 0 and out[2].item() == 1
    assert out[1].item() == pytest.approx(0.125)
    with pytest.raises(ParameterError):
        gamma_degrade(img, 0.0)
    with pytest.raises(ContractViolation):
        gamma_degrade(img + 1, 2.0)


@given(images, st.floats(0.1, 8), st.floats(0.1, 8))
def test_gamma_monotone_and_in_range(img, g1, g2):
    lo, hi = sorted((g1, g2))
    a, b = gamma_degrade(img, lo), gamma_degrade(img, hi)
    assert torch.all(b <= a)
    assert a.min() >= 0 and a.max() <= 1


@given(images, st.floats(0.1, 8), st.floats(0.1, 8))
def test_illumination_class_non_increasing_in_gamma(img, g1, g2):
    lo, hi = sorted((g1, g2))
    assert classify_illumination(gamma_degrade(img, hi)) <= classify_illumination(gamma_degrade(img, lo))


@given(images, st.integers(1, 9), st.integers(1, 9))
def test_resize_preserves_range(img, h, w):
    out = resize(img, (h, w))
    assert out.shape == (3, h, w)
    assert out.min() >= 0 and out.max() <= 1


def test_mean_lightness():
    assert mean_lightness(torch.zeros(3, 4, 4)) == 0
    assert mean_lightness(torch.ones(3, 4, 4)) == 255
    half = torch.zeros(3, 4, 4)
    half[:, :2] = 1
    assert mean_lightness(half) == pytest.approx(127.5)


@pytest.mark.parametrize("lightness, level", [
    (10, IlluminationLevel.LOW),
    (255 / 10, IlluminationLevel.MEDIUM),
    (40, IlluminationLevel.MEDIUM),
    (255 / 5, IlluminationLevel.MEDIUM),
    (60, IlluminationLevel.HIGH),
])
def test_illumination_thresholds(lightness, level):
    assert illumination_level(lightness) is level


def test_classify_illumination_on_images():
    assert classify_illumination(torch.full((3, 2, 2), 10 / 255)) is IlluminationLevel.LOW
    assert classify_illumination(torch.full((3, 2, 2), 0.5)) is IlluminationLevel.HIGH


@pytest.mark.parametrize("height, level", [
    (50, ScaleLevel.SMALL), (100, ScaleLevel.MEDIUM), (150, ScaleLevel.MEDIUM),
    (200, ScaleLevel.MEDIUM), (250, ScaleLevel.BIG),
])
def test_scale_levels(height, level):
    assert classify_scale(PersonRecord("x.png", 0, 1, 0, height)) is level


def test_histogram_examples():
    h = channel_histogram(torch.zeros(3, 4, 5), 10)
    assert h.shape == (3, 10)
    assert (h[:, 0] == 20).all() and h[:, 1:].sum() == 0
    with pytest.raises(ParameterError):
        channel_histogram(torch.zeros(3, 2, 2), 0)


def test_histogram_gradient_row_matches_counting_oracle():
    row = torch.linspace(0, 1, 7)
    img = row.expand(3, 1, 7).clone()
    h = channel_histogram(img, 2)
    # brute force: bin index is floor(2v), with v == 1 in the last bin
    expected = [sum(1 for v in row.tolist() if v < 0.5), sum(1 for v in row.tolist() if v >= 0.5)]
    assert h.tolist() == [expected] * 3


@given(images, st.integers(1, 20))
def test_histogram_conserves_pixel_count(img, bins):
    h = channel_histogram(img, bins)
    assert (h.sum(1) == img.shape[1] * img.shape[2]).all()


def test_check_image_rejects_bad_shapes():
    with pytest.raises(DimensionError):
        mean_lightness(torch.zeros(4, 2, 2))


def test_to_uint8_rounds_half_away_from_zero():
    img = torch.tensor([0.5 / 255, 1.5 / 255, 2.4999 / 255], dtype=torch.float64).reshape(3, 1, 1)
    assert to_uint8(img).reshape(-1).tolist() == [1, 2, 2]
