"""
PSNR / SSIM evaluation protocol on float planes (8-bit range, L = 255).
"""

import logging
import math

import numpy as np
from skimage.metrics import mean_squared_error, structural_similarity

from src.core.errors import DataError

logger = logging.getLogger(__name__)

DATA_RANGE = 255.0
PSNR_INF = math.inf
SSIM_WINDOW = 11
SSIM_SIGMA = 1.5
SSIM_K1 = 0.01
SSIM_K2 = 0.03


def _planes(a, b):
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise DataError(f"Metric operands differ in shape: {a.shape} vs {b.shape}")
    if a.ndim != 2:
        raise DataError(f"Metrics take 2-D planes, got shape {a.shape}")
    return a, b


def crop_border(plane: np.ndarray, border: int) -> np.ndarray:
    if border < 0:
        raise DataError(f"Border must be >= 0, got {border}")
    if border == 0:
        return plane
    interior = plane[border:-border, border:-border]
    if interior.size == 0:
        raise DataError(f"Border {border} leaves no interior in a {plane.shape[1]}x{plane.shape[0]} plane")
    return interior


def psnr(a, b, border: int = 0) -> float:
    """10*log10(255^2 / MSE) over the interior; identical planes give PSNR_INF"""
    a, b = _planes(a, b)
    a, b = crop_border(a, border), crop_border(b, border)
    mse = mean_squared_error(a, b)
    if mse == 0:
        return PSNR_INF
    return float(10.0 * np.log10(DATA_RANGE ** 2 / mse))


def ssim(a, b, border: int = 0) -> float:
    """Mean SSIM over valid 11x11 Gaussian (sigma 1.5) windows"""
    a, b = _planes(a, b)
    a, b = crop_border(a, border), crop_border(b, border)
    if min(a.shape) < SSIM_WINDOW:
        raise DataError(f"SSIM needs planes of at least {SSIM_WINDOW}x{SSIM_WINDOW}, got {a.shape}")
    return float(structural_similarity(
        a, b,
        data_range=DATA_RANGE,
        gaussian_weights=True,
        sigma=SSIM_SIGMA,
        use_sample_covariance=False,
        K1=SSIM_K1,
        K2=SSIM_K2,
    ))


def format_psnr(value: float):
    """JSON-safe PSNR: the infinity sentinel is written as the string "inf" """
    return "inf" if math.isinf(value) else value
