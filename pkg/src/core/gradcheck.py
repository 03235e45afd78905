"""
Finite-difference verification of the tape's gradients.

All evaluation happens in float64. Coordinates where the loss has a kink
(a ReLU input crossing zero inside [-eps, eps]) are detected by comparing
the two one-sided differences and are resampled instead of compared.
"""

import logging
from dataclasses import dataclass, field
from typing import Callable, Dict, List, Tuple

import numpy as np

from src.core.errors import ConfigError
from src.core.losses import l2_loss
from src.core.model import NetConfig, Network, build, forward
from src.core.tensor import Tape, Tensor, backward, precision

logger = logging.getLogger(__name__)

DEFAULT_EPS = 1e-6
DEFAULT_SAMPLES = 64
REL_FLOOR = 1e-5
KINK_TOLERANCE = 1e-3
MAX_EXTENT = 16


def relative_error(analytic: float, numeric: float, floor: float = REL_FLOOR) -> float:
    return abs(analytic - numeric) / max(abs(analytic), abs(numeric), floor)


def finite_diff_grad(f: Callable[[Tensor], float], x: Tensor, eps: float = 1e-3) -> np.ndarray:
    """Central differences (f(x + eps*e) - f(x - eps*e)) / 2eps for every coordinate of x"""
    data = x.numpy()
    grad = np.zeros(data.shape, dtype=np.float64)
    flat = data.reshape(-1)
    out = grad.reshape(-1)
    for i in range(flat.size):
        original = flat[i]
        flat[i] = original + eps
        plus = float(f(x))
        flat[i] = original - eps
        minus = float(f(x))
        flat[i] = original
        out[i] = (plus - minus) / (2.0 * eps)
    return grad


@dataclass
class GradSample:
    name: str
    index: Tuple[int, ...]
    analytic: float
    numeric: float
    rel_error: float


@dataclass
class GradcheckReport:
    max_rel_error: float
    checked: int
    skipped: int
    eps: float
    gate_grads: Dict[str, float] = field(default_factory=dict)
    samples: List[GradSample] = field(default_factory=list)
    all_finite: bool = True

    def passed(self, tolerance: float = 1e-4) -> bool:
        return self.all_finite and self.max_rel_error < tolerance


Coordinate = Tuple[str, Tuple[int, ...]]


def _random_coordinate(net: Network, rng: np.random.Generator) -> Coordinate:
    # tensor chosen uniformly by name so small layers are not drowned out
    names = list(net.params)
    name = names[int(rng.integers(0, len(names)))]
    return name, tuple(int(rng.integers(0, extent)) for extent in net[name].shape)


def _pick_coordinates(net: Network, rng: np.random.Generator, count: int) -> List[Coordinate]:
    picks = [(gate.name, (0, 0, 0, 0)) for gate in net.gates()]
    while len(picks) < count:
        picks.append(_random_coordinate(net, rng))
    return picks


def gradcheck_network(cfg: NetConfig, samples: int = DEFAULT_SAMPLES, eps: float = DEFAULT_EPS,
                      seed: int = 0, input_hw: Tuple[int, int] = (9, 9),
                      zero_input: bool = False) -> GradcheckReport:
    """
    Compare backward() against central differences on `samples` parameter
    coordinates (every lambda gate first, then random ones) for an MSE loss
    against a random target.
    """
    height, width = input_hw
    if max(height, width) > MAX_EXTENT:
        raise ConfigError(f"Gradient check input {height}x{width} exceeds {MAX_EXTENT}x{MAX_EXTENT}")
    if samples < 1:
        raise ConfigError(f"samples must be >= 1, got {samples}")

    with precision(np.float64):
        net = build(cfg, seed)
        rng = np.random.default_rng(seed + 1)
        lr_shape = (1, cfg.colors, height, width)
        x = Tensor.zeros(lr_shape) if zero_input else Tensor(rng.uniform(0.0, 1.0, lr_shape))
        target = Tensor(rng.uniform(0.0, 1.0, (1, cfg.colors, height * cfg.scale, width * cfg.scale)))

        def loss_value() -> float:
            return l2_loss(forward(net, x), target).item()

        with Tape() as tape:
            loss = l2_loss(forward(net, x), target)
        grads = backward(tape, loss)
        analytic = {t.name: g for t, g in grads.items()}
        all_finite = all(np.isfinite(g).all() for g in grads.values())
        base = loss.item()

        report = GradcheckReport(max_rel_error=0.0, checked=0, skipped=0, eps=eps, all_finite=all_finite)
        report.gate_grads = {gate.name: float(analytic[gate.name].reshape(-1)[0]) for gate in net.gates()}

        attempts = 0
        pending = _pick_coordinates(net, rng, samples)
        while pending and attempts < 20 * samples:
            attempts += 1
            name, index = pending.pop(0)
            data = net[name].data
            original = data[index]
            data[index] = original + eps
            plus = loss_value()
            data[index] = original - eps
            minus = loss_value()
            data[index] = original

            forward_diff = (plus - base) / eps
            backward_diff = (base - minus) / eps
            if abs(forward_diff - backward_diff) > KINK_TOLERANCE * max(abs(forward_diff), abs(backward_diff),
                                                                        REL_FLOOR):
                report.skipped += 1
                pending.append(_random_coordinate(net, rng))
                continue

            numeric = (plus - minus) / (2.0 * eps)
            value = float(analytic[name][index])
            error = relative_error(value, numeric)
            report.samples.append(GradSample(name, index, value, numeric, error))
            report.checked += 1
            report.max_rel_error = max(report.max_rel_error, error)

    logger.info(f"Gradient check: {report.checked} samples, {report.skipped} kinks skipped, "
                f"max relative error {report.max_rel_error:.3e}")
    return report
