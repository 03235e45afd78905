"""
Neural-network primitives over rank-4 tensors.

Every operator:
  - validates shapes and raises ShapeError on mismatch,
  - computes its output in the dtype of its inputs (float32 normally,
    float64 under gradient checking),
  - raises NumericError if the output contains NaN/Inf,
  - records itself on the active Tape with a backward rule,
  - accepts meta tensors, in which case only the output shape is inferred.

Accumulation order (fixed, so results are bit-reproducible for a given
BLAS build and thread count):
  conv2d     - im2col columns ordered (in_channel, kernel_row, kernel_col);
               each output element is one float GEMM dot product over that
               axis, then the bias is added. Batch gradients of the weight
               are summed over N in ascending order.
  resize ops - separable: rows first (R_h @ x), then columns (@ R_w.T).
  reductions - numpy pairwise summation over the flattened NCHW order.
"""

import logging
from dataclasses import dataclass
from typing import Optional, Sequence, Tuple, Union

import numpy as np

from src.core.errors import ShapeError
from src.core.resampling import bicubic_matrix, bilinear_matrix
from src.core.tensor import Tensor, check_finite, record

logger = logging.getLogger(__name__)

Pair = Tuple[int, int]


def _pair(value) -> Pair:
    if isinstance(value, int):
        return (value, value)
    first, second = value
    return (int(first), int(second))


@dataclass(frozen=True)
class ConvSpec:
    in_channels: int
    out_channels: int
    kernel: Pair = (3, 3)
    stride: Pair = (1, 1)
    dilation: Pair = (1, 1)
    padding: Pair = (0, 0)
    groups: int = 1
    has_bias: bool = True

    def __post_init__(self):
        for field_name in ("kernel", "stride", "dilation", "padding"):
            object.__setattr__(self, field_name, _pair(getattr(self, field_name)))
        if self.in_channels < 1 or self.out_channels < 1 or self.groups < 1:
            raise ShapeError(f"Channel counts and groups must be positive: {self}")
        if self.in_channels % self.groups or self.out_channels % self.groups:
            raise ShapeError(
                f"in_channels={self.in_channels} and out_channels={self.out_channels} "
                f"must both be divisible by groups={self.groups}")
        if min(self.kernel + self.stride + self.dilation) < 1:
            raise ShapeError(f"Kernel, stride and dilation extents must be >= 1: {self}")
        if min(self.padding) < 0:
            raise ShapeError(f"Padding must be non-negative: {self}")

    @classmethod
    def same(cls, in_channels: int, out_channels: int, kernel: int = 3, *, dilation: int = 1,
             groups: int = 1, has_bias: bool = True) -> "ConvSpec":
        """Stride-1 conv that preserves spatial size: padding = d * (k - 1) / 2"""
        if kernel % 2 == 0:
            raise ShapeError(f"'same' padding needs an odd kernel, got {kernel}")
        pad = dilation * (kernel - 1) // 2
        return cls(in_channels, out_channels, (kernel, kernel), (1, 1), (dilation, dilation),
                   (pad, pad), groups, has_bias)

    @property
    def weight_shape(self) -> Tuple[int, int, int, int]:
        return (self.out_channels, self.in_channels // self.groups) + self.kernel

    @property
    def num_params(self) -> int:
        out_c, in_g, kh, kw = self.weight_shape
        return out_c * in_g * kh * kw + (self.out_channels if self.has_bias else 0)

    def output_size(self, height: int, width: int) -> Pair:
        sizes = []
        for extent, k, s, d, p in zip((height, width), self.kernel, self.stride,
                                      self.dilation, self.padding):
            sizes.append((extent + 2 * p - d * (k - 1) - 1) // s + 1)
        return (sizes[0], sizes[1])

    def multi_adds(self, out_height: int, out_width: int) -> int:
        kh, kw = self.kernel
        return kh * kw * (self.in_channels // self.groups) * self.out_channels * out_height * out_width


def _result_dtype(*tensors: Tensor) -> np.dtype:
    return np.result_type(*[t.dtype for t in tensors])


def _meta_or(inputs: Sequence[Tensor]) -> bool:
    return any(t.is_meta for t in inputs)


def _finish(op: str, inputs: Sequence[Tensor], shape, data: Optional[np.ndarray], backward,
            layer: str = "", multi_adds: int = 0) -> Tensor:
    if data is None:
        out = Tensor.meta(shape, dtype=_result_dtype(*inputs))
        return record(op, inputs, out, None, layer, multi_adds)
    out = Tensor(check_finite(data, op), dtype=data.dtype)
    return record(op, inputs, out, backward, layer, multi_adds)


# ---------------------------------------------------------------- convolution

def _im2col(padded: np.ndarray, spec: ConvSpec, out_h: int, out_w: int) -> np.ndarray:
    n, c = padded.shape[:2]
    kh, kw = spec.kernel
    dh, dw = spec.dilation
    sh, sw = spec.stride
    cols = np.empty((n, c, kh, kw, out_h, out_w), dtype=padded.dtype)
    for i in range(kh):
        row = i * dh
        for j in range(kw):
            col = j * dw
            cols[:, :, i, j] = padded[:, :, row:row + sh * (out_h - 1) + 1:sh,
                                      col:col + sw * (out_w - 1) + 1:sw]
    return cols


def _col2im(cols: np.ndarray, spec: ConvSpec, padded_shape, out_h: int, out_w: int) -> np.ndarray:
    kh, kw = spec.kernel
    dh, dw = spec.dilation
    sh, sw = spec.stride
    padded = np.zeros(padded_shape, dtype=cols.dtype)
    for i in range(kh):
        row = i * dh
        for j in range(kw):
            col = j * dw
            padded[:, :, row:row + sh * (out_h - 1) + 1:sh,
                   col:col + sw * (out_w - 1) + 1:sw] += cols[:, :, i, j]
    return padded


def conv2d(x: Tensor, weight: Tensor, bias: Optional[Tensor], spec: ConvSpec, *,
           name: str = "") -> Tensor:
    """2-D cross-correlation with zero padding, stride, dilation and groups"""
    n, c, h, w = x.shape
    if c != spec.in_channels:
        raise ShapeError(f"conv2d {name}: input has {c} channels, spec expects {spec.in_channels}")
    if weight.shape != spec.weight_shape:
        raise ShapeError(f"conv2d {name}: weight shape {weight.shape} != {spec.weight_shape}")
    if spec.has_bias:
        if bias is None or bias.size != spec.out_channels:
            raise ShapeError(f"conv2d {name}: expected a bias of {spec.out_channels} elements")
    elif bias is not None:
        raise ShapeError(f"conv2d {name}: spec has no bias but one was given")
    out_h, out_w = spec.output_size(h, w)
    if out_h < 1 or out_w < 1:
        raise ShapeError(f"conv2d {name}: non-positive output extent {out_h}x{out_w} for input {h}x{w}")

    inputs = (x, weight) + ((bias,) if bias is not None else ())
    out_shape = (n, spec.out_channels, out_h, out_w)
    macs = spec.multi_adds(out_h, out_w)
    if _meta_or(inputs):
        return _finish("conv2d", inputs, out_shape, None, None, name, macs)

    dtype = _result_dtype(*inputs)
    groups = spec.groups
    ph, pw = spec.padding
    kh, kw = spec.kernel
    in_g = c // groups
    out_g = spec.out_channels // groups
    taps = in_g * kh * kw
    length = out_h * out_w

    padded = np.pad(x.data.astype(dtype, copy=False), ((0, 0), (0, 0), (ph, ph), (pw, pw)))
    cols = _im2col(padded, spec, out_h, out_w).reshape(n, groups, taps, length)
    w_mat = weight.data.astype(dtype, copy=False).reshape(groups, out_g, taps)
    out = np.matmul(w_mat[None], cols).reshape(out_shape)
    if bias is not None:
        out = out + bias.data.astype(dtype, copy=False).reshape(1, -1, 1, 1)

    def backward_fn(grad: np.ndarray):
        grad_r = grad.reshape(n, groups, out_g, length)
        grad_w = np.zeros((groups, out_g, taps), dtype=dtype)
        for sample in range(n):
            grad_w += np.matmul(grad_r[sample], cols[sample].transpose(0, 2, 1))
        grad_cols = np.matmul(w_mat.transpose(0, 2, 1)[None], grad_r)
        grad_cols = grad_cols.reshape(n, c, kh, kw, out_h, out_w)
        grad_padded = _col2im(grad_cols, spec, padded.shape, out_h, out_w)
        grad_x = grad_padded[:, :, ph:ph + h, pw:pw + w]
        grads = [grad_x, grad_w.reshape(weight.shape)]
        if bias is not None:
            grads.append(grad.sum(axis=(0, 2, 3)).reshape(bias.shape))
        return grads

    return _finish("conv2d", inputs, out_shape, out, backward_fn, name, macs)


# --------------------------------------------------------------- permutations

def _pixel_shuffle_array(data: np.ndarray, r: int) -> np.ndarray:
    n, c, h, w = data.shape
    out_c = c // (r * r)
    return data.reshape(n, out_c, r, r, h, w).transpose(0, 1, 4, 2, 5, 3).reshape(n, out_c, h * r, w * r)


def _pixel_unshuffle_array(data: np.ndarray, r: int) -> np.ndarray:
    n, c, h, w = data.shape
    return data.reshape(n, c, h // r, r, w // r, r).transpose(0, 1, 3, 5, 2, 4).reshape(
        n, c * r * r, h // r, w // r)


def pixel_shuffle(x: Tensor, r: int) -> Tensor:
    """(N, C*r*r, H, W) -> (N, C, H*r, W*r); out[c][h*r+i][w*r+j] = in[c*r*r + i*r + j][h][w]"""
    n, c, h, w = x.shape
    if r < 1 or c % (r * r):
        raise ShapeError(f"pixel_shuffle: {c} channels not divisible by r^2 = {r * r}")
    out_shape = (n, c // (r * r), h * r, w * r)
    if x.is_meta:
        return _finish("pixel_shuffle", (x,), out_shape, None, None)
    return _finish("pixel_shuffle", (x,), out_shape, _pixel_shuffle_array(x.data, r),
                   lambda grad: [_pixel_unshuffle_array(grad, r)])


def pixel_unshuffle(x: Tensor, r: int) -> Tensor:
    """Space-to-depth; inverse permutation of pixel_shuffle"""
    n, c, h, w = x.shape
    if r < 1 or h % r or w % r:
        raise ShapeError(f"pixel_unshuffle: spatial size {h}x{w} not divisible by {r}")
    out_shape = (n, c * r * r, h // r, w // r)
    if x.is_meta:
        return _finish("pixel_unshuffle", (x,), out_shape, None, None)
    return _finish("pixel_unshuffle", (x,), out_shape, _pixel_unshuffle_array(x.data, r),
                   lambda grad: [_pixel_shuffle_array(grad, r)])


def _channel_shuffle_array(data: np.ndarray, groups: int) -> np.ndarray:
    n, c, h, w = data.shape
    return data.reshape(n, groups, c // groups, h, w).transpose(0, 2, 1, 3, 4).reshape(n, c, h, w)


def channel_shuffle(x: Tensor, groups: int) -> Tensor:
    """Output channel i*g + j holds input channel j*(C/g) + i"""
    n, c, h, w = x.shape
    if groups < 1 or c % groups:
        raise ShapeError(f"channel_shuffle: {c} channels not divisible by groups={groups}")
    if x.is_meta:
        return _finish("channel_shuffle", (x,), x.shape, None, None)
    return _finish("channel_shuffle", (x,), x.shape, _channel_shuffle_array(x.data, groups),
                   lambda grad: [_channel_shuffle_array(grad, c // groups)])


# ------------------------------------------------------------------- resizing

def _separable(x: Tensor, rows: np.ndarray, cols: np.ndarray, op: str, name: str) -> Tensor:
    n, c = x.shape[:2]
    out_shape = (n, c, rows.shape[0], cols.shape[0])
    if x.is_meta:
        return _finish(op, (x,), out_shape, None, None, name)
    dtype = x.dtype
    r_h = rows.astype(dtype)
    r_w = cols.astype(dtype)
    out = np.matmul(np.matmul(r_h, x.data), r_w.T)

    def backward_fn(grad: np.ndarray):
        return [np.matmul(np.matmul(r_h.T, grad), r_w)]

    return _finish(op, (x,), out_shape, out, backward_fn, name)


def upsample_bilinear(x: Tensor, out_h: int, out_w: int, *, name: str = "") -> Tensor:
    """Bilinear resize with half-pixel centers (no corner alignment)"""
    if out_h < 1 or out_w < 1:
        raise ShapeError(f"upsample_bilinear: target {out_h}x{out_w} must be positive")
    _, _, h, w = x.shape
    return _separable(x, bilinear_matrix(h, out_h), bilinear_matrix(w, out_w),
                      "upsample_bilinear", name)


def resize_bicubic(x: Tensor, out_h: int, out_w: int, *, antialias: bool = True,
                   name: str = "") -> Tensor:
    """Keys (a = -0.5) bicubic resize, same kernel as the imaging module"""
    if out_h < 1 or out_w < 1:
        raise ShapeError(f"resize_bicubic: target {out_h}x{out_w} must be positive")
    _, _, h, w = x.shape
    return _separable(x, bicubic_matrix(h, out_h, antialias), bicubic_matrix(w, out_w, antialias),
                      "resize_bicubic", name)


# ------------------------------------------------------------------ pointwise

def _same_shape(op: str, a: Tensor, b: Tensor):
    if a.shape != b.shape:
        raise ShapeError(f"{op}: shape mismatch {a.shape} vs {b.shape}")


def add(a: Tensor, b: Tensor) -> Tensor:
    _same_shape("add", a, b)
    if _meta_or((a, b)):
        return _finish("add", (a, b), a.shape, None, None)
    return _finish("add", (a, b), a.shape, a.data + b.data, lambda grad: [grad, grad])


def sub(a: Tensor, b: Tensor) -> Tensor:
    _same_shape("sub", a, b)
    if _meta_or((a, b)):
        return _finish("sub", (a, b), a.shape, None, None)
    return _finish("sub", (a, b), a.shape, a.data - b.data, lambda grad: [grad, -grad])


def mul(a: Tensor, b: Tensor) -> Tensor:
    _same_shape("mul", a, b)
    if _meta_or((a, b)):
        return _finish("mul", (a, b), a.shape, None, None)
    a_data, b_data = a.data, b.data
    return _finish("mul", (a, b), a.shape, a_data * b_data,
                   lambda grad: [grad * b_data, grad * a_data])


def scale(a: Tensor, factor: Union[float, Tensor]) -> Tensor:
    """Multiply by a python scalar or by a trainable (1,1,1,1) gate"""
    if isinstance(factor, Tensor):
        if factor.size != 1:
            raise ShapeError(f"scale: gate must hold one element, got {factor.shape}")
        if _meta_or((a, factor)):
            return _finish("scale", (a, factor), a.shape, None, None)
        a_data = a.data
        value = factor.data.reshape(()).astype(a_data.dtype)

        def backward_fn(grad: np.ndarray):
            return [grad * value, np.sum(grad * a_data).reshape(factor.shape)]

        return _finish("scale", (a, factor), a.shape, a_data * value, backward_fn)

    constant = float(factor)
    if a.is_meta:
        return _finish("scale", (a,), a.shape, None, None)
    value = a.data.dtype.type(constant)
    return _finish("scale", (a,), a.shape, a.data * value, lambda grad: [grad * value])


def relu(a: Tensor) -> Tensor:
    if a.is_meta:
        return _finish("relu", (a,), a.shape, None, None)
    mask = a.data > 0
    return _finish("relu", (a,), a.shape, np.where(mask, a.data, 0).astype(a.dtype),
                   lambda grad: [grad * mask])


def sigmoid(a: Tensor) -> Tensor:
    if a.is_meta:
        return _finish("sigmoid", (a,), a.shape, None, None)
    half = a.dtype.type(0.5)
    out = half * (np.tanh(a.data * half) + 1)
    return _finish("sigmoid", (a,), a.shape, out, lambda grad: [grad * out * (1 - out)])


def abs_(a: Tensor) -> Tensor:
    if a.is_meta:
        return _finish("abs", (a,), a.shape, None, None)
    sign = np.sign(a.data)
    return _finish("abs", (a,), a.shape, np.abs(a.data), lambda grad: [grad * sign])


def square(a: Tensor) -> Tensor:
    if a.is_meta:
        return _finish("square", (a,), a.shape, None, None)
    data = a.data
    return _finish("square", (a,), a.shape, data * data, lambda grad: [2 * grad * data])


def concat_channels(*tensors: Tensor) -> Tensor:
    """Stack along channels in argument order; N, H, W must agree"""
    if not tensors:
        raise ShapeError("concat_channels needs at least one tensor")
    n, _, h, w = tensors[0].shape
    for t in tensors[1:]:
        if (t.shape[0], t.shape[2], t.shape[3]) != (n, h, w):
            raise ShapeError(f"concat_channels: {t.shape} incompatible with {tensors[0].shape}")
    channels = [t.shape[1] for t in tensors]
    out_shape = (n, sum(channels), h, w)
    if _meta_or(tensors):
        return _finish("concat", tensors, out_shape, None, None)
    bounds = np.cumsum([0] + channels)

    def backward_fn(grad: np.ndarray):
        return [grad[:, bounds[i]:bounds[i + 1]] for i in range(len(tensors))]

    return _finish("concat", tensors, out_shape, np.concatenate([t.data for t in tensors], axis=1),
                   backward_fn)


# ----------------------------------------------------------------- reductions

def sum_all(a: Tensor) -> Tensor:
    if a.is_meta:
        return _finish("sum", (a,), (1, 1, 1, 1), None, None)
    shape = a.shape
    total = np.sum(a.data, dtype=a.dtype).reshape(1, 1, 1, 1)
    return _finish("sum", (a,), (1, 1, 1, 1), total,
                   lambda grad: [np.broadcast_to(grad.reshape(()), shape).astype(grad.dtype)])


def mean_all(a: Tensor) -> Tensor:
    if a.is_meta:
        return _finish("mean", (a,), (1, 1, 1, 1), None, None)
    shape = a.shape
    count = a.size
    total = (np.sum(a.data, dtype=a.dtype) / a.dtype.type(count)).reshape(1, 1, 1, 1)

    def backward_fn(grad: np.ndarray):
        value = grad.reshape(()) / grad.dtype.type(count)
        return [np.full(shape, value, dtype=grad.dtype)]

    return _finish("mean", (a,), (1, 1, 1, 1), total, backward_fn)
