"""
Training loop: step-halving learning rate, patch batches from a background
producer, periodic checkpoints and best-model selection on a validation
directory.
"""

import logging
import math
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Protocol, Tuple

import numpy as np

from src.core.errors import ConfigError, DataError, NumericError
from src.core.evaluation import mean_psnr
from src.core.losses import get_loss
from src.core.model import Network, build, forward, tiny
from src.core.optimizers import OPTIMIZERS, Optimizer
from src.core.tensor import Tape, Tensor, backward
from src.database.checkpoint_manager import CheckpointManager
from src.utils.dataset_loader import BatchProducer, PatchDataset, load_hr_dir, synthetic_hr

logger = logging.getLogger(__name__)


@dataclass
class TrainConfig:
    lr0: float = 2e-4
    batch: int = 16
    patch: int = 48
    epochs: int = 1000
    halve_every: int = 200
    optimizer: str = "adamp"
    betas: Tuple[float, float] = (0.9, 0.999)
    eps: float = 1e-8
    seed: int = 0
    loss: str = "l1"
    augment: bool = True
    checkpoint_every: int = 0
    checkpoint_dir: Optional[str] = None
    val_dir: Optional[str] = None
    val_every: int = 1
    iterations_per_epoch: Optional[int] = None
    prefetch: int = 4

    def validate(self) -> "TrainConfig":
        if not self.lr0 > 0:
            raise ConfigError(f"lr0 must be > 0, got {self.lr0}")
        if self.batch < 1:
            raise ConfigError(f"batch must be >= 1, got {self.batch}")
        if self.patch < 8:
            raise ConfigError(f"patch must be >= 8, got {self.patch}")
        if self.epochs < 1 or self.halve_every < 1:
            raise ConfigError("epochs and halve_every must be >= 1")
        if self.optimizer.lower() not in OPTIMIZERS:
            raise ConfigError(f"Unknown optimizer {self.optimizer!r}; expected one of {OPTIMIZERS}")
        get_loss(self.loss)
        if self.checkpoint_every < 0 or self.val_every < 1:
            raise ConfigError("checkpoint_every must be >= 0 and val_every >= 1")
        if self.checkpoint_every and not self.checkpoint_dir:
            raise ConfigError("checkpoint_every needs a checkpoint_dir")
        return self


def lr_at(epoch: int, cfg: TrainConfig) -> float:
    """lr0 * 0.5^(epoch // halve_every)"""
    if epoch < 0:
        raise ConfigError(f"epoch must be >= 0, got {epoch}")
    return cfg.lr0 * 0.5 ** (epoch // cfg.halve_every)


@dataclass
class LossRow:
    epoch: int
    lr: float
    loss: float


@dataclass
class TrainResult:
    curve: List[LossRow] = field(default_factory=list)
    best_epoch: Optional[int] = None
    best_psnr: Optional[float] = None
    iterations: int = 0
    val_dir: Optional[str] = None
    checkpoints: List[str] = field(default_factory=list)

    @property
    def losses(self) -> List[float]:
        return [row.loss for row in self.curve]


class Reporter(Protocol):
    def on_epoch(self, row: LossRow): ...

    def on_checkpoint(self, epoch: int, path: str): ...

    def on_validation(self, epoch: int, psnr: float, best: bool): ...


def _snapshot(net: Network) -> Dict[str, np.ndarray]:
    return {name: t.numpy().copy() for name, t in net.named_parameters()}


def _restore(net: Network, snapshot: Dict[str, np.ndarray]):
    for name, data in snapshot.items():
        net[name].data[...] = data


def train(net: Network, dataset: PatchDataset, cfg: TrainConfig,
          reporter: Optional[Reporter] = None) -> TrainResult:
    """
    One optimizer step per batch; an epoch is ceil(len(dataset) / batch)
    iterations unless iterations_per_epoch overrides it. Deterministic for a
    given seed. With a val_dir the parameters with the best mean Y-PSNR are
    restored into `net` at the end.
    """
    cfg.validate()
    if len(dataset) == 0:
        raise DataError("Training dataset is empty")
    if dataset.scale != net.cfg.scale:
        raise ConfigError(f"Dataset scale {dataset.scale} differs from network scale {net.cfg.scale}")
    if dataset.channels != net.cfg.colors:
        raise DataError(f"Dataset has {dataset.channels} channels, network expects {net.cfg.colors}")

    loss_fn = get_loss(cfg.loss)
    optimizer = Optimizer(net.params, cfg.optimizer, cfg.betas, cfg.eps)
    per_epoch = cfg.iterations_per_epoch or math.ceil(len(dataset) / cfg.batch)
    val_images = load_hr_dir(cfg.val_dir) if cfg.val_dir else None
    checkpoints = CheckpointManager(cfg.checkpoint_dir or "data/checkpoints")
    result = TrainResult(val_dir=cfg.val_dir)
    best_snapshot: Optional[Dict[str, np.ndarray]] = None

    logger.info(f"Training {cfg.epochs} epochs x {per_epoch} iterations, batch {cfg.batch}, "
                f"patch {cfg.patch}, {cfg.optimizer}, {cfg.loss} loss")
    producer = BatchProducer(dataset, cfg.batch, cfg.patch, cfg.seed, cfg.augment,
                             total=per_epoch * cfg.epochs, prefetch=cfg.prefetch)
    with producer:
        for epoch in range(cfg.epochs):
            lr = lr_at(epoch, cfg)
            losses = []
            for iteration in range(per_epoch):
                lr_batch, hr_batch = producer.get()
                net.zero_grad()
                try:
                    with Tape() as tape:
                        loss = loss_fn(forward(net, Tensor(lr_batch)), Tensor(hr_batch))
                    backward(tape, loss)
                    optimizer.step(lr)
                except NumericError as e:
                    logger.error(f"Training diverged at epoch {epoch}, iteration {iteration} "
                                 f"(lr={lr:g}, last loss={losses[-1] if losses else 'n/a'}): {e}")
                    raise
                losses.append(loss.item())
                result.iterations += 1
                logger.debug(f"epoch {epoch} it {iteration}: loss {losses[-1]:.6f}")

            row = LossRow(epoch, lr, float(np.mean(losses)))
            result.curve.append(row)
            if reporter is not None:
                reporter.on_epoch(row)

            if cfg.checkpoint_every and (epoch + 1) % cfg.checkpoint_every == 0:
                path = checkpoints.save_checkpoint(net, checkpoints.path_for(f"epoch_{epoch + 1:04d}"))
                result.checkpoints.append(path)
                if reporter is not None:
                    reporter.on_checkpoint(epoch, path)

            if val_images is not None and ((epoch + 1) % cfg.val_every == 0 or epoch == cfg.epochs - 1):
                value = mean_psnr(net, val_images)
                improved = result.best_psnr is None or value > result.best_psnr
                if improved:
                    result.best_psnr, result.best_epoch = value, epoch
                    best_snapshot = _snapshot(net)
                if reporter is not None:
                    reporter.on_validation(epoch, value, improved)

    if best_snapshot is not None:
        _restore(net, best_snapshot)
        logger.info(f"Selected epoch {result.best_epoch} ({result.best_psnr:.3f} dB on {cfg.val_dir})")
        if cfg.checkpoint_dir:
            result.checkpoints.append(checkpoints.save_checkpoint(net, checkpoints.path_for("best")))
    return result


# -------------------------------------------------------------- smoke run

SMOKE_CHANNELS = 32
SMOKE_SCALE = 2
SMOKE_LR_SIZE = 48


def smoke_config(seed: int = 0, iterations: int = 200) -> TrainConfig:
    return TrainConfig(lr0=2e-4, batch=1, patch=SMOKE_LR_SIZE, epochs=iterations, halve_every=200,
                       optimizer="adam", loss="l1", seed=seed, augment=False, prefetch=2)


def run_smoke(seed: int = 0, iterations: int = 200, reporter: Optional[Reporter] = None) -> TrainResult:
    """Overfit one 48x48 LR pair with the tiny network; the loss should at least halve"""
    net = build(tiny(SMOKE_SCALE, SMOKE_CHANNELS), seed)
    hr = synthetic_hr(SMOKE_LR_SIZE * SMOKE_SCALE, SMOKE_LR_SIZE * SMOKE_SCALE, seed)
    dataset = PatchDataset.from_images([hr], SMOKE_SCALE, ["synthetic"])
    return train(net, dataset, smoke_config(seed, iterations), reporter)


def smoke_passed(result: TrainResult, ratio: float = 0.5) -> bool:
    losses = result.losses
    return bool(losses) and losses[-1] <= ratio * losses[0]
