"""Pixel losses; both reduce to a (1,1,1,1) scalar tensor."""

from typing import Callable, Dict

from src.core import ops
from src.core.errors import ConfigError, ShapeError
from src.core.tensor import Tensor

LossFn = Callable[[Tensor, Tensor], Tensor]


def _check(pred: Tensor, target: Tensor, name: str):
    if pred.shape != target.shape:
        raise ShapeError(f"{name}: prediction {pred.shape} and target {target.shape} differ")


def l1_loss(pred: Tensor, target: Tensor) -> Tensor:
    """Mean absolute error; subgradient 0 at exact ties"""
    _check(pred, target, "l1_loss")
    return ops.mean_all(ops.abs_(ops.sub(pred, target)))


def l2_loss(pred: Tensor, target: Tensor) -> Tensor:
    """Mean squared error"""
    _check(pred, target, "l2_loss")
    return ops.mean_all(ops.square(ops.sub(pred, target)))


LOSSES: Dict[str, LossFn] = {"l1": l1_loss, "l2": l2_loss}


def get_loss(name: str) -> LossFn:
    try:
        return LOSSES[name.lower()]
    except KeyError:
        raise ConfigError(f"Unknown loss {name!r}; expected one of {sorted(LOSSES)}") from None
