"""
1-D resampling matrices shared by the tensor operators and the imaging module.

A resize of an (H, W) plane is computed as R_h @ plane @ R_w.T, where each
R is an (out, in) matrix built here. Both kernels use half-pixel centers:
output sample i sits at input coordinate (i + 0.5) * in / out - 0.5.
"""

from functools import lru_cache

import numpy as np

# Keys cubic convolution parameter
CUBIC_A = -0.5


def cubic_kernel(x: np.ndarray, a: float = CUBIC_A) -> np.ndarray:
    x = np.abs(x)
    x2 = x * x
    x3 = x2 * x
    near = (a + 2.0) * x3 - (a + 3.0) * x2 + 1.0
    far = a * x3 - 5.0 * a * x2 + 8.0 * a * x - 4.0 * a
    return np.where(x <= 1.0, near, np.where(x < 2.0, far, 0.0))


def _mirror(indices: np.ndarray, size: int) -> np.ndarray:
    # symmetric extension: ... 1 0 | 0 1 2 ... n-1 | n-1 n-2 ...
    period = 2 * size
    folded = np.mod(indices, period)
    return np.where(folded < size, folded, period - 1 - folded)


@lru_cache(maxsize=256)
def _bicubic_matrix(in_size: int, out_size: int, antialias: bool) -> np.ndarray:
    scale = out_size / in_size
    widen = antialias and scale < 1.0
    support = 2.0 / scale if widen else 2.0

    centers = (np.arange(out_size, dtype=np.float64) + 0.5) / scale - 0.5
    left = np.floor(centers - support).astype(np.int64)
    taps = int(np.ceil(2.0 * support)) + 2
    indices = left[:, None] + np.arange(taps)[None, :]
    distance = centers[:, None] - indices
    if widen:
        weights = scale * cubic_kernel(scale * distance)
    else:
        weights = cubic_kernel(distance)
    weights = weights / weights.sum(axis=1, keepdims=True)

    matrix = np.zeros((out_size, in_size), dtype=np.float64)
    rows = np.repeat(np.arange(out_size), taps)
    # taps falling outside the plane are folded back by mirroring; np.add.at
    # accumulates in row-major tap order
    np.add.at(matrix, (rows, _mirror(indices, in_size).reshape(-1)), weights.reshape(-1))
    matrix.setflags(write=False)
    return matrix


def bicubic_matrix(in_size: int, out_size: int, antialias: bool = True) -> np.ndarray:
    """(out, in) Keys bicubic weights; kernel widened by 1/scale when shrinking"""
    if in_size < 1 or out_size < 1:
        raise ValueError(f"Resize extents must be positive, got {in_size} -> {out_size}")
    return _bicubic_matrix(int(in_size), int(out_size), bool(antialias))


@lru_cache(maxsize=256)
def _bilinear_matrix(in_size: int, out_size: int) -> np.ndarray:
    source = (np.arange(out_size, dtype=np.float64) + 0.5) * in_size / out_size - 0.5
    source = np.clip(source, 0.0, in_size - 1)
    low = np.floor(source).astype(np.int64)
    high = np.minimum(low + 1, in_size - 1)
    frac = source - low

    matrix = np.zeros((out_size, in_size), dtype=np.float64)
    rows = np.arange(out_size)
    np.add.at(matrix, (rows, low), 1.0 - frac)
    np.add.at(matrix, (rows, high), frac)
    matrix.setflags(write=False)
    return matrix


def bilinear_matrix(in_size: int, out_size: int) -> np.ndarray:
    """(out, in) bilinear weights with clamped half-pixel source coordinates"""
    if in_size < 1 or out_size < 1:
        raise ValueError(f"Resize extents must be positive, got {in_size} -> {out_size}")
    return _bilinear_matrix(int(in_size), int(out_size))
