"""
Dense NCHW tensors and the reverse-mode tape.

Every value flowing through the network is a rank-4 Tensor. Operators in
src/core/ops.py record themselves on the innermost active Tape; backward()
replays the tape in reverse and fills the grad slot of every leaf that
requires gradients.

A Tensor may also be "meta": it carries a shape but no storage. Operators
accept meta inputs and only infer shapes, which lets the complexity module
trace the real forward graph without doing any arithmetic.
"""

import logging
import threading
from contextlib import contextmanager
from dataclasses import dataclass
from typing import Callable, Dict, Iterator, List, Optional, Sequence, Tuple

import numpy as np

from src.core.errors import GradientError, NumericError, ShapeError

logger = logging.getLogger(__name__)

Shape = Tuple[int, int, int, int]
BackwardFn = Callable[[np.ndarray], Sequence[Optional[np.ndarray]]]

# Bytes per element used by memory accounting, independent of the
# evaluation dtype.
ELEMENT_BYTES = 4

_state = threading.local()


def default_dtype() -> np.dtype:
    return getattr(_state, "dtype", np.dtype(np.float32))


@contextmanager
def precision(dtype):
    """Select the dtype of newly created tensors (float32 or float64)"""
    dtype = np.dtype(dtype)
    if dtype not in (np.dtype(np.float32), np.dtype(np.float64)):
        raise ValueError(f"Unsupported tensor dtype: {dtype}")
    previous = default_dtype()
    _state.dtype = dtype
    try:
        yield dtype
    finally:
        _state.dtype = previous


def _as_shape(shape) -> Shape:
    shape = tuple(int(s) for s in shape)
    if len(shape) != 4:
        raise ShapeError(f"Tensors are rank-4 (N, C, H, W), got shape {shape}")
    if any(s < 1 for s in shape):
        raise ShapeError(f"Tensor extents must be positive, got {shape}")
    return shape


class Tensor:
    """Rank-4 float tensor with an optional gradient slot"""

    def __init__(self, data=None, *, shape=None, requires_grad: bool = False,
                 name: str = "", dtype=None):
        if data is None:
            if shape is None:
                raise ShapeError("A meta tensor needs an explicit shape")
            self.data: Optional[np.ndarray] = None
            self._shape = _as_shape(shape)
            self._dtype = np.dtype(dtype) if dtype is not None else default_dtype()
        else:
            array = np.ascontiguousarray(data, dtype=dtype if dtype is not None else default_dtype())
            if shape is not None:
                array = array.reshape(shape)
            self._shape = _as_shape(array.shape)
            self.data = array
            self._dtype = array.dtype
        self.requires_grad = requires_grad
        self.grad: Optional[np.ndarray] = None
        self.name = name

    @classmethod
    def meta(cls, shape, *, requires_grad: bool = False, name: str = "", dtype=None) -> "Tensor":
        return cls(None, shape=shape, requires_grad=requires_grad, name=name, dtype=dtype)

    @classmethod
    def zeros(cls, shape, *, requires_grad: bool = False, name: str = "", dtype=None) -> "Tensor":
        dtype = dtype if dtype is not None else default_dtype()
        return cls(np.zeros(_as_shape(shape), dtype=dtype), requires_grad=requires_grad, name=name, dtype=dtype)

    @property
    def shape(self) -> Shape:
        return self._shape

    @property
    def dtype(self) -> np.dtype:
        return self._dtype

    @property
    def is_meta(self) -> bool:
        return self.data is None

    @property
    def size(self) -> int:
        n, c, h, w = self._shape
        return n * c * h * w

    @property
    def nbytes(self) -> int:
        return self.size * ELEMENT_BYTES

    def numpy(self) -> np.ndarray:
        if self.data is None:
            raise ShapeError(f"Meta tensor {self.name or self._shape} has no storage")
        return self.data

    def item(self) -> float:
        if self.size != 1:
            raise ShapeError(f"item() needs a single-element tensor, got {self._shape}")
        return float(self.numpy().reshape(-1)[0])

    def astype(self, dtype) -> "Tensor":
        """Leaf copy in another dtype; keeps name and requires_grad"""
        if self.is_meta:
            return Tensor.meta(self._shape, requires_grad=self.requires_grad, name=self.name, dtype=dtype)
        return Tensor(self.data.astype(dtype), requires_grad=self.requires_grad, name=self.name, dtype=dtype)

    def zero_grad(self):
        self.grad = None

    def __repr__(self):
        kind = "meta" if self.is_meta else str(self._dtype)
        label = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self._shape}, {kind}{label}, requires_grad={self.requires_grad})"


def check_finite(array: np.ndarray, op: str) -> np.ndarray:
    """Raise NumericError when an operator output contains NaN/Inf"""
    if not np.isfinite(array).all():
        bad = int(array.size - np.count_nonzero(np.isfinite(array)))
        raise NumericError(f"{op} produced {bad} non-finite value(s)")
    return array


@dataclass
class TapeEntry:
    op: str
    inputs: Tuple[Tensor, ...]
    output: Tensor
    backward: Optional[BackwardFn]
    layer: str = ""
    multi_adds: int = 0


class Tape:
    """
    Ordered record of executed operators.

    Use as a context manager; operators executed inside the block are
    appended in execution order. With record_backward=False the tape keeps
    only the trace (op, layer, shapes, multiply-accumulates), which is what
    the complexity analysis and the memory instrumentation need.

    A tape is single-owner: recording and backward must happen on the same
    thread.
    """

    def __init__(self, record_backward: bool = True):
        self.record_backward = record_backward
        self.entries: List[TapeEntry] = []
        self.released = False

    def __enter__(self) -> "Tape":
        stack = getattr(_state, "tapes", None)
        if stack is None:
            stack = _state.tapes = []
        stack.append(self)
        return self

    def __exit__(self, exc_type, exc, tb):
        _state.tapes.pop()
        return False

    def __len__(self) -> int:
        return len(self.entries)

    def __iter__(self) -> Iterator[TapeEntry]:
        return iter(self.entries)

    def release(self):
        """Drop saved intermediates; the tape can no longer run backward"""
        for entry in self.entries:
            entry.backward = None
        self.released = True


def active_tape() -> Optional[Tape]:
    stack = getattr(_state, "tapes", None)
    return stack[-1] if stack else None


def record(op: str, inputs: Sequence[Tensor], output: Tensor, backward: Optional[BackwardFn],
           layer: str = "", multi_adds: int = 0) -> Tensor:
    """Append an operator to the active tape (if any) and mark the output's grad requirement"""
    output.requires_grad = any(t.requires_grad for t in inputs)
    tape = active_tape()
    if tape is not None:
        keep = backward if (tape.record_backward and output.requires_grad) else None
        tape.entries.append(TapeEntry(op, tuple(inputs), output, keep, layer, multi_adds))
    return output


def backward(tape: Tape, loss: Tensor) -> Dict[Tensor, np.ndarray]:
    """
    Reverse-mode sweep from a scalar loss.

    Every leaf tensor with requires_grad that the loss depends on gets its
    grad slot set to dLoss/dLeaf (overwriting any previous value). Returns
    the same gradients keyed by tensor. Saved intermediates are released
    afterwards, so a tape supports exactly one backward pass.
    """
    if loss.shape != (1, 1, 1, 1):
        raise GradientError(f"backward needs a scalar (1,1,1,1) loss, got {loss.shape}")
    if tape.released:
        raise GradientError("Tape was already consumed by a previous backward pass")

    end = None
    for index in range(len(tape.entries) - 1, -1, -1):
        if tape.entries[index].output is loss:
            end = index
            break
    if end is None:
        raise GradientError("Loss tensor is not reachable from the tape")
    if not loss.requires_grad:
        raise GradientError("Loss does not depend on any tensor that requires grad")

    produced = {id(entry.output) for entry in tape.entries[:end + 1]}
    grads: Dict[int, np.ndarray] = {id(loss): np.ones(loss.shape, dtype=loss.dtype)}
    leaves: Dict[int, Tensor] = {}

    for entry in reversed(tape.entries[:end + 1]):
        grad_out = grads.pop(id(entry.output), None)
        if grad_out is None:
            continue
        if entry.backward is None:
            raise GradientError(f"Operator {entry.op} was recorded without a backward rule")
        input_grads = entry.backward(grad_out)
        for tensor, grad in zip(entry.inputs, input_grads):
            if grad is None or not tensor.requires_grad:
                continue
            key = id(tensor)
            if key in grads:
                grads[key] = grads[key] + grad
            else:
                grads[key] = grad
            if key not in produced:
                leaves[key] = tensor

    result: Dict[Tensor, np.ndarray] = {}
    for key, tensor in leaves.items():
        grad = grads.get(key)
        if grad is None:
            grad = np.zeros(tensor.shape, dtype=loss.dtype)
        tensor.grad = check_finite(np.asarray(grad, dtype=tensor.dtype).reshape(tensor.shape),
                                   f"gradient of {tensor.name or 'leaf'}")
        result[tensor] = tensor.grad

    tape.release()
    logger.debug(f"backward: {end + 1} recorded ops, {len(result)} leaf gradients")
    return result
