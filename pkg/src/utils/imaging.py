"""
8-bit images and the classical pre-processing chain: modcrop, bicubic
degradation and BT.601 luminance.
"""

import logging
from dataclasses import dataclass
from typing import Union

import numpy as np

from src.core.errors import DataError
from src.core.resampling import bicubic_matrix

logger = logging.getLogger(__name__)


@dataclass
class Image:
    """Row-major 8-bit samples, shape (height, width, channels), RGB order"""
    pixels: np.ndarray

    def __post_init__(self):
        pixels = np.asarray(self.pixels)
        if pixels.ndim == 2:
            pixels = pixels[:, :, None]
        if pixels.ndim != 3 or pixels.shape[2] not in (1, 3):
            raise DataError(f"Images are (H, W, 1|3) arrays, got shape {pixels.shape}")
        if pixels.dtype != np.uint8:
            raise DataError(f"Images hold 8-bit samples, got dtype {pixels.dtype}")
        if pixels.shape[0] < 1 or pixels.shape[1] < 1:
            raise DataError(f"Empty image {pixels.shape[1]}x{pixels.shape[0]}")
        self.pixels = np.ascontiguousarray(pixels)

    @property
    def height(self) -> int:
        return self.pixels.shape[0]

    @property
    def width(self) -> int:
        return self.pixels.shape[1]

    @property
    def channels(self) -> int:
        return self.pixels.shape[2]

    def __eq__(self, other) -> bool:
        return isinstance(other, Image) and np.array_equal(self.pixels, other.pixels)


@dataclass
class ImagePair:
    hr: Image
    lr: Image
    scale: int

    def __post_init__(self):
        if (self.hr.height, self.hr.width) != (self.lr.height * self.scale, self.lr.width * self.scale):
            raise DataError(f"HR {self.hr.width}x{self.hr.height} is not LR "
                            f"{self.lr.width}x{self.lr.height} times {self.scale}")
        if self.hr.channels != self.lr.channels:
            raise DataError("HR and LR images have different channel counts")


def quantize(values: np.ndarray) -> np.ndarray:
    """Clamp to [0, 255] and round half away from zero"""
    return np.floor(np.clip(values, 0.0, 255.0) + 0.5).astype(np.uint8)


def _resize_plane(plane: np.ndarray, out_w: int, out_h: int) -> np.ndarray:
    rows = bicubic_matrix(plane.shape[0], out_h)
    cols = bicubic_matrix(plane.shape[1], out_w)
    return rows @ plane @ cols.T


def bicubic_resize(img: Union[Image, np.ndarray], out_w: int, out_h: int) -> Union[Image, np.ndarray]:
    """Keys bicubic (a = -0.5); float planes stay float, Images are re-quantized"""
    if out_w < 1 or out_h < 1:
        raise DataError(f"Resize target must be positive, got {out_w}x{out_h}")
    if isinstance(img, Image):
        channels = [_resize_plane(img.pixels[:, :, c].astype(np.float64), out_w, out_h)
                    for c in range(img.channels)]
        return Image(quantize(np.stack(channels, axis=2)))
    plane = np.asarray(img, dtype=np.float64)
    if plane.ndim != 2:
        raise DataError(f"Float input must be a 2-D plane, got shape {plane.shape}")
    return _resize_plane(plane, out_w, out_h)


def modcrop(img: Image, s: int) -> Image:
    if s < 1:
        raise DataError(f"Scale must be >= 1, got {s}")
    height, width = (img.height // s) * s, (img.width // s) * s
    if height == 0 or width == 0:
        raise DataError(f"Image {img.width}x{img.height} is smaller than scale {s}")
    return Image(img.pixels[:height, :width])


def degrade(hr: Image, s: int) -> Image:
    """modcrop, then bicubic downscale by 1/s"""
    cropped = modcrop(hr, s)
    return bicubic_resize(cropped, cropped.width // s, cropped.height // s)


def rgb_to_y(img: Union[Image, np.ndarray]) -> np.ndarray:
    """BT.601 studio-swing luminance in [16, 235]; grayscale passes through as float"""
    pixels = img.pixels if isinstance(img, Image) else np.asarray(img)
    if pixels.ndim == 2 or pixels.shape[2] == 1:
        return pixels.reshape(pixels.shape[0], pixels.shape[1]).astype(np.float64)
    rgb = pixels.astype(np.float64)
    return 16.0 + (65.481 * rgb[:, :, 0] + 128.553 * rgb[:, :, 1] + 24.966 * rgb[:, :, 2]) / 255.0
