"""Image tensors, ingestion, gamma degradation and benchmark statistics.

An image is a float tensor of shape ``(3, H, W)`` (R, G, B) with every value
in ``[0, 1]``. Most functions also accept a leading batch dimension.
"""

from __future__ import annotations

import enum
from pathlib import Path

import numpy as np
import torch
import torch.nn.functional as F
from PIL import Image as PILImage, UnidentifiedImageError

from .errors import ContractViolation, DimensionError, ImageFormatError, IngestionError, ParameterError

TARGET_SIZE = (256, 128)

# mean-lightness thresholds on the 0..255 scale, and height thresholds in pixels
LOW_LIGHT = 255 / 10
HIGH_LIGHT = 255 / 5
SMALL_HEIGHT = 100
BIG_HEIGHT = 200


class IlluminationLevel(enum.IntEnum):
    LOW = 0
    MEDIUM = 1
    HIGH = 2

    @property
    def label(self) -> str:
        return self.name.capitalize()


class ScaleLevel(enum.IntEnum):
    SMALL = 0
    MEDIUM = 1
    BIG = 2

    @property
    def label(self) -> str:
        return self.name.capitalize()


def check_image(img: torch.Tensor, *, batched: bool | None = None) -> torch.Tensor:
    """Validate shape ``(3, H, W)`` (or ``(B, 3, H, W)``) and the [0, 1] range."""
    if not isinstance(img, torch.Tensor):
        raise DimensionError(f"expected a tensor, got {type(img).__name__}")
    ok_single = img.dim() == 3 and img.shape[0] == 3
    ok_batch = img.dim() == 4 and img.shape[1] == 3
    if batched is True and not ok_batch or batched is False and not ok_single or not (ok_single or ok_batch):
        raise DimensionError(f"expected a 3-channel image, got shape {tuple(img.shape)}")
    if img.numel() and (img.min() < 0 or img.max() > 1):
        raise ContractViolation("image intensities must lie in [0, 1]")
    return img


def from_uint8(arr: np.ndarray) -> torch.Tensor:
    """HxWx3 uint8 array -> (3, H, W) float32 tensor in [0, 1]."""
    return torch.from_numpy(np.ascontiguousarray(arr.transpose(2, 0, 1))).float() / 255.0


def to_uint8(img: torch.Tensor) -> np.ndarray:
    """(3, H, W) image -> HxWx3 uint8 with round-half-away-from-zero."""
    check_image(img, batched=False)
    scaled = img.detach().double().cpu().numpy().transpose(1, 2, 0) * 255.0
    # values are non-negative, so half-away-from-zero is floor(x + 0.5)
    return np.clip(np.floor(scaled + 0.5), 0, 255).astype(np.uint8)


def resize(img: torch.Tensor, size: tuple[int, int]) -> torch.Tensor:
    """Bilinear resample (half-pixel centres, edge clamp) to ``size = (H, W)``."""
    if tuple(img.shape[-2:]) == tuple(size):
        return img.clone()
    x = img if img.dim() == 4 else img.unsqueeze(0)
    out = F.interpolate(x, size=tuple(size), mode="bilinear", align_corners=False, antialias=False)
    out = out.clamp(0.0, 1.0)
    return out if img.dim() == 4 else out.squeeze(0)


def read_rgb(path: str | Path) -> np.ndarray:
    """Decode a file to an HxWx3 uint8 array; raises on missing, corrupt or non-RGB files."""
    p = Path(path)
    if not p.is_file():
        raise IngestionError(f"cannot read image: {p} (no such file)")
    try:
        with PILImage.open(p) as im:
            im.load()
            mode = im.mode
            if mode != "RGB":
                raise ImageFormatError(f"{p}: expected an RGB raster, got mode {mode!r}")
            return np.asarray(im, dtype=np.uint8).copy()
    except (UnidentifiedImageError, OSError, SyntaxError) as exc:
        raise IngestionError(f"cannot decode image: {p} ({exc})") from exc


def load_and_resize(path: str | Path, size: tuple[int, int] = TARGET_SIZE) -> torch.Tensor:
    return resize(from_uint8(read_rgb(path)), size)


def gamma_degrade(img: torch.Tensor, gamma: float) -> torch.Tensor:
    if not gamma > 0:
        raise ParameterError(f"gamma must be positive, got {gamma}")
    check_image(img)
    return img.pow(gamma)


def mean_lightness(img: torch.Tensor) -> float:
    """Unweighted mean over channels and pixels, on the 0..255 scale."""
    check_image(img, batched=False)
    return float(img.double().mean()) * 255.0


def illumination_level(lightness: float) -> IlluminationLevel:
    if lightness < LOW_LIGHT:
        return IlluminationLevel.LOW
    if lightness > HIGH_LIGHT:
        return IlluminationLevel.HIGH
    return IlluminationLevel.MEDIUM


def classify_illumination(img: torch.Tensor) -> IlluminationLevel:
    return illumination_level(mean_lightness(img))


def scale_level(height: float) -> ScaleLevel:
    if height < SMALL_HEIGHT:
        return ScaleLevel.SMALL
    if height > BIG_HEIGHT:
        return ScaleLevel.BIG
    return ScaleLevel.MEDIUM


def classify_scale(rec) -> ScaleLevel:
    return scale_level(rec.original_height)


def channel_histogram(img: torch.Tensor, bins: int) -> np.ndarray:
    """Per-channel pixel counts over ``bins`` equal-width bins of [0, 1].

    Returns an int64 array of shape (3, bins); the value 1.0 falls in the last bin.
    """
    if bins < 1:
        raise ParameterError(f"bins must be >= 1, got {bins}")
    check_image(img, batched=False)
    vals = img.detach().double().reshape(3, -1).cpu().numpy()
    idx = np.minimum(np.floor(vals * bins).astype(np.int64), bins - 1)
    return np.stack([np.bincount(row, minlength=bins) for row in idx])
