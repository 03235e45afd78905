"""
Adam and AdamP over named parameter maps.

Both share one moment update. AdamP additionally removes the radial
(weight-direction) component of the update for conv weight tensors whose
gradient is nearly orthogonal to the weights, per channel first and then
per layer. Everything else (biases, gates) follows Adam bit-exactly.
"""

import logging
from dataclasses import dataclass, field
from typing import Callable, Dict, Mapping, Optional, Set, Tuple

import numpy as np

from src.core.blocks import ScalarGate
from src.core.errors import ConfigError, NumericError, ShapeError
from src.core.tensor import Tensor

logger = logging.getLogger(__name__)

Betas = Tuple[float, float]

# AdamP defaults
PROJECTION_DELTA = 0.1
OPTIMIZERS = ("adam", "adamp")


@dataclass
class OptimizerState:
    exp_avg: Dict[str, np.ndarray] = field(default_factory=dict)
    exp_avg_sq: Dict[str, np.ndarray] = field(default_factory=dict)
    step: int = 0
    projected: int = 0

    def moments(self, name: str, param: Tensor) -> Tuple[np.ndarray, np.ndarray]:
        if name not in self.exp_avg:
            self.exp_avg[name] = np.zeros(param.shape, dtype=param.dtype)
            self.exp_avg_sq[name] = np.zeros(param.shape, dtype=param.dtype)
        m, v = self.exp_avg[name], self.exp_avg_sq[name]
        if m.shape != param.shape:
            raise ShapeError(f"Optimizer state for {name} has shape {m.shape}, parameter is {param.shape}")
        return m, v


def _views(array: np.ndarray):
    # channel view (one row per output channel), then layer view
    return (array.reshape(array.shape[0], -1), array.reshape(1, -1))


def _cosine(a: np.ndarray, b: np.ndarray, eps: float) -> np.ndarray:
    norms = np.maximum(np.linalg.norm(a, axis=1) * np.linalg.norm(b, axis=1), eps)
    return np.abs(np.sum(a * b, axis=1)) / norms


def radial_projection(weight: np.ndarray, update: np.ndarray, view: str = "channel",
                      eps: float = 1e-8) -> np.ndarray:
    """Remove the component of `update` along `weight` (per output channel or whole layer)"""
    if view not in ("channel", "layer"):
        raise ConfigError(f"Unknown projection view {view!r}")
    flat_shape = (weight.shape[0], -1) if view == "channel" else (1, -1)
    expand = (-1,) + (1,) * (weight.ndim - 1)
    unit = weight / (np.linalg.norm(weight.reshape(flat_shape), axis=1).reshape(expand) + eps)
    radial = np.sum((unit * update).reshape(flat_shape), axis=1).reshape(expand)
    return update - unit * radial


def _maybe_project(weight: np.ndarray, grad: np.ndarray, update: np.ndarray, delta: float,
                   eps: float) -> Tuple[np.ndarray, bool]:
    for view, (w_flat, g_flat) in zip(("channel", "layer"), zip(_views(weight), _views(grad))):
        if _cosine(g_flat, w_flat, eps).max() < delta / np.sqrt(w_flat.shape[1]):
            return radial_projection(weight, update, view, eps), True
    return update, False


def _step(params: Mapping[str, Tensor], grads: Mapping[str, np.ndarray], state: OptimizerState,
          lr: float, betas: Betas, eps: float, project: Optional[Set[str]], delta: float):
    beta1, beta2 = betas
    state.step += 1
    bias_correction1 = 1.0 - beta1 ** state.step
    bias_correction2 = 1.0 - beta2 ** state.step
    step_size = lr / bias_correction1

    for name, param in params.items():
        grad = grads.get(name)
        if grad is None:
            continue
        if grad.shape != param.shape:
            raise ShapeError(f"Gradient for {name} has shape {grad.shape}, parameter is {param.shape}")
        m, v = state.moments(name, param)
        m *= beta1
        m += (1.0 - beta1) * grad
        v *= beta2
        v += (1.0 - beta2) * grad * grad
        denom = np.sqrt(v) / np.sqrt(bias_correction2) + eps
        update = m / denom
        if project is not None and name in project:
            update, applied = _maybe_project(param.data, grad, update, delta, eps)
            state.projected += int(applied)
        param.data -= (step_size * update).astype(param.dtype, copy=False)
        if not np.isfinite(param.data).all():
            raise NumericError(f"Optimizer step {state.step} produced non-finite values in {name}")


def adam_step(params: Mapping[str, Tensor], grads: Mapping[str, np.ndarray], state: OptimizerState,
              lr: float, betas: Betas = (0.9, 0.999), eps: float = 1e-8):
    """Bias-corrected Adam; updates parameters in place and increments state.step"""
    _step(params, grads, state, lr, betas, eps, None, PROJECTION_DELTA)


def projectable(params: Mapping[str, Tensor]) -> Set[str]:
    """Names of conv weight tensors (the scale-invariant set AdamP projects)"""
    return {name for name, t in params.items()
            if not isinstance(t, ScalarGate) and name.endswith(".weight")}


def adamp_step(params: Mapping[str, Tensor], grads: Mapping[str, np.ndarray], state: OptimizerState,
               lr: float, betas: Betas = (0.9, 0.999), eps: float = 1e-8,
               project: Optional[Set[str]] = None, delta: float = PROJECTION_DELTA):
    """Adam with radial projection on `project` (default: every conv weight)"""
    targets = projectable(params) if project is None else set(project)
    _step(params, grads, state, lr, betas, eps, targets, delta)


class Optimizer:
    """Binds a step function, its state and the parameter map; reads .grad slots"""

    def __init__(self, params: Mapping[str, Tensor], kind: str = "adam", betas: Betas = (0.9, 0.999),
                 eps: float = 1e-8):
        kind = kind.lower()
        if kind not in OPTIMIZERS:
            raise ConfigError(f"Unknown optimizer {kind!r}; expected one of {OPTIMIZERS}")
        self.params = dict(params)
        self.kind = kind
        self.betas = betas
        self.eps = eps
        self.state = OptimizerState()
        self._step_fn: Callable = adamp_step if kind == "adamp" else adam_step

    def step(self, lr: float):
        grads = {name: t.grad for name, t in self.params.items() if t.grad is not None}
        self._step_fn(self.params, grads, self.state, lr, self.betas, self.eps)

    def zero_grad(self):
        for t in self.params.values():
            t.zero_grad()
