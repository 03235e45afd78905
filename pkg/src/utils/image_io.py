"""PNG read/write through Pillow (8-bit grayscale and RGB only)."""

import logging
import os
import struct

import numpy as np
from PIL import Image as PILImage
from PIL import UnidentifiedImageError

from src.core.errors import DataError, ImageFormatError
from src.utils.imaging import Image

logger = logging.getLogger(__name__)

PNG_SIGNATURE = b"\x89PNG\r\n\x1a\n"

# Pillow mode -> mode we decode into
_MODES = {
    "1": "L",
    "L": "L",
    "LA": "L",
    "RGB": "RGB",
    "RGBA": "RGB",
    "P": "RGB",
    "PA": "RGB",
}


def _bit_depth(path: str) -> int:
    with open(path, "rb") as f:
        header = f.read(26)
    if len(header) < 26 or header[:8] != PNG_SIGNATURE or header[12:16] != b"IHDR":
        raise ImageFormatError(f"{path} is not a PNG file")
    return struct.unpack(">B", header[24:25])[0]


def png_read(path: str) -> Image:
    """Decode an 8-bit PNG; palette images expand to RGB, alpha is dropped"""
    if not os.path.exists(path):
        raise DataError(f"Image not found: {path}")
    depth = _bit_depth(path)
    if depth > 8:
        raise ImageFormatError(f"{path}: {depth}-bit PNGs are not supported (8-bit only)")
    try:
        with PILImage.open(path) as handle:
            mode = handle.mode
            if mode not in _MODES:
                raise ImageFormatError(f"{path}: unsupported PNG mode {mode}")
            pixels = np.array(handle.convert(_MODES[mode]), dtype=np.uint8)
    except (UnidentifiedImageError, SyntaxError, OSError) as e:
        raise ImageFormatError(f"Cannot decode {path}: {e}") from None
    logger.debug(f"Read {path}: {pixels.shape[1]}x{pixels.shape[0]} ({mode})")
    return Image(pixels)


def png_write(path: str, img: Image):
    directory = os.path.dirname(path)
    if directory:
        os.makedirs(directory, exist_ok=True)
    pixels = img.pixels[:, :, 0] if img.channels == 1 else img.pixels
    PILImage.fromarray(pixels).save(path, format="PNG")
    logger.debug(f"Wrote {path}: {img.width}x{img.height}")
