"""
Command implementations behind the CLI subcommands.

Each cmd_* function returns a CommandResult (exit code + JSON-serializable
payload) and raises package errors for failures; run_command converts those
into exit codes:
    0 success | 1 usage / config | 2 data, shape, format, I/O | 3 numeric / gradient
"""

import json
import logging
import os
import re
import time
import traceback
from dataclasses import dataclass, field
from typing import Any, Callable, Dict, Optional, Tuple

from src.core.complexity import analyze, report_to_dict
from src.core.errors import (
    CheckpointFormatError,
    ConfigError,
    DataError,
    GradientError,
    ImageFormatError,
    NumericError,
    ShapeError,
)
from src.core.evaluation import evaluate_images, mean_scores, super_resolve
from src.core.gradcheck import DEFAULT_EPS, DEFAULT_SAMPLES, gradcheck_network
from src.core.model import NetConfig, build, maffsrn, tiny
from src.core.trainer import TrainConfig, run_smoke, smoke_passed, train
from src.database.checkpoint_manager import CheckpointManager
from src.ui.reporter import LossReporter
from src.utils.dataset_loader import PatchDataset, load_hr_dir, materialize_lr
from src.utils.image_io import png_read, png_write
from src.utils.imaging import degrade
from src.utils.metrics import format_psnr
from src.utils.settings_manager import get_settings_manager

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_DATA = 2
EXIT_NUMERIC = 3

# payload keys that vary run to run
TIMING_KEYS = ("seconds", "total_seconds")


@dataclass
class CommandResult:
    exit_code: int = EXIT_OK
    payload: Dict[str, Any] = field(default_factory=dict)

    def to_json(self) -> str:
        return json.dumps(self.payload, indent=2, sort_keys=True)


def exit_code_for(error: BaseException) -> int:
    if isinstance(error, ConfigError):
        return EXIT_USAGE
    if isinstance(error, (NumericError, GradientError)):
        return EXIT_NUMERIC
    if isinstance(error, (DataError, ShapeError, ImageFormatError, CheckpointFormatError, OSError)):
        return EXIT_DATA
    return EXIT_USAGE


def run_command(fn: Callable[..., CommandResult], **kwargs) -> CommandResult:
    """Call a command, converting raised errors into an exit code and an error payload"""
    try:
        return fn(**kwargs)
    except Exception as e:
        code = exit_code_for(e)
        logger.error(f"{fn.__name__} failed ({type(e).__name__}): {e}")
        if code == EXIT_USAGE and not isinstance(e, ConfigError):
            logger.error(traceback.format_exc())
        return CommandResult(code, {"error": type(e).__name__, "message": str(e)})


def strip_timing(payload: Any) -> Any:
    """Copy of a payload without wall-clock fields, for determinism comparisons"""
    if isinstance(payload, dict):
        return {k: strip_timing(v) for k, v in payload.items() if k not in TIMING_KEYS}
    if isinstance(payload, list):
        return [strip_timing(v) for v in payload]
    return payload


def parse_size(text: str) -> Tuple[int, int]:
    """'WxH' -> (height, width)"""
    match = re.fullmatch(r"\s*(\d+)\s*[xX]\s*(\d+)\s*", str(text))
    if not match:
        raise ConfigError(f"Expected a size like 1280x720, got {text!r}")
    width, height = int(match.group(1)), int(match.group(2))
    if width < 1 or height < 1:
        raise ConfigError(f"Size must be positive, got {text!r}")
    return height, width


def load_config(path: Optional[str]) -> NetConfig:
    if path is None:
        default = get_settings_manager().get('default_config')
        if default and os.path.exists(default):
            return NetConfig.load(default)
        return maffsrn(2)
    return NetConfig.load(path)


def _load_network(ckpt: str):
    return CheckpointManager().load_checkpoint(ckpt)


# ------------------------------------------------------------------ commands

def cmd_analyze(config: Optional[str] = None, hr: str = "1280x720") -> CommandResult:
    cfg = load_config(config)
    height, width = parse_size(hr)
    s = cfg.scale
    effective = ((height // s) * s, (width // s) * s)
    if min(effective) < 1:
        raise ConfigError(f"HR size {hr} is smaller than scale {s}")
    if effective != (height, width):
        logger.info(f"HR {width}x{height} cropped to {effective[1]}x{effective[0]} for scale {s}")
    report = analyze(cfg, effective)
    payload = report_to_dict(report)
    payload["requested_hr"] = {"height": height, "width": width}
    payload["config"] = cfg.to_dict()
    return CommandResult(EXIT_OK, payload)


def cmd_degrade(input: str, scale: int, output: str) -> CommandResult:
    if scale < 1:
        raise ConfigError(f"Scale must be >= 1, got {scale}")
    hr = png_read(input)
    lr = degrade(hr, scale)
    png_write(output, lr)
    logger.info(f"Degraded {input} ({hr.width}x{hr.height}) -> {output} ({lr.width}x{lr.height})")
    return CommandResult(EXIT_OK, {
        "input": input, "output": output, "scale": scale,
        "hr": {"width": hr.width, "height": hr.height},
        "lr": {"width": lr.width, "height": lr.height},
    })


def cmd_sr(ckpt: str, input: str, output: str) -> CommandResult:
    net = _load_network(ckpt)
    lr = png_read(input)
    start = time.perf_counter()
    sr = super_resolve(net, lr)
    seconds = time.perf_counter() - start
    png_write(output, sr)
    logger.info(f"Super-resolved {input} x{net.cfg.scale} in {seconds:.2f}s -> {output}")
    return CommandResult(EXIT_OK, {
        "input": input, "output": output, "scale": net.cfg.scale,
        "lr": {"width": lr.width, "height": lr.height},
        "sr": {"width": sr.width, "height": sr.height},
        "seconds": seconds,
    })


def cmd_eval(hr_dir: str, ckpt: Optional[str] = None, scale: Optional[int] = None,
             border: Optional[int] = None, workers: Optional[int] = None) -> CommandResult:
    """Y-channel PSNR/SSIM per image; without a checkpoint the bicubic baseline (zero network) is scored"""
    settings = get_settings_manager()
    if ckpt:
        net = _load_network(ckpt)
        if scale is not None and scale != net.cfg.scale:
            raise DataError(f"--scale {scale} does not match the checkpoint's scale {net.cfg.scale}")
    else:
        if scale is None:
            raise ConfigError("eval needs --ckpt or --scale")
        # zero weights reduce any config to its bicubic skip path
        net = build(tiny(scale)).zero_()
    s = net.cfg.scale
    border = settings.eval_border(s) if border is None else border
    images = load_hr_dir(hr_dir)
    workers = workers or settings.thread_cap()

    start = time.perf_counter()
    scores = evaluate_images(net, images, border, workers)
    total = time.perf_counter() - start
    mean_psnr, mean_ssim = mean_scores(scores)
    rows = [{"name": sc.name, "psnr": format_psnr(sc.psnr), "ssim": sc.ssim, "seconds": sc.seconds}
            for sc in scores]
    logger.info(f"Evaluated {len(rows)} images x{s} (border {border}): "
                f"{mean_psnr:.3f} dB / {mean_ssim:.4f}")
    return CommandResult(EXIT_OK, {
        "scale": s, "border": border, "checkpoint": ckpt, "images": rows,
        "mean_psnr": format_psnr(mean_psnr), "mean_ssim": mean_ssim,
        "total_seconds": total,
    })


def cmd_train(data_dir: Optional[str] = None, config: Optional[str] = None, smoke: bool = False,
              seed: int = 0, epochs: Optional[int] = None, batch: Optional[int] = None,
              patch: Optional[int] = None, lr: Optional[float] = None, optimizer: Optional[str] = None,
              loss: Optional[str] = None, checkpoint_every: Optional[int] = None,
              checkpoint_dir: Optional[str] = None, val_dir: Optional[str] = None,
              loss_csv: Optional[str] = None, output: Optional[str] = None,
              no_augment: bool = False) -> CommandResult:
    reporter = LossReporter(loss_csv)
    if smoke:
        result = run_smoke(seed, reporter=reporter)
        passed = smoke_passed(result)
        initial, final = result.losses[0], result.losses[-1]
        if not passed:
            logger.error(f"Smoke run failed: loss {initial:.6f} -> {final:.6f}")
        return CommandResult(EXIT_OK if passed else EXIT_NUMERIC, {
            "smoke": True, "passed": passed, "seed": seed, "iterations": result.iterations,
            "initial_loss": initial, "final_loss": final, "ratio": final / initial,
        })

    if not data_dir:
        raise ConfigError("train needs --data-dir (or --smoke)")
    cfg = load_config(config)
    defaults = get_settings_manager().training_defaults()

    def pick(value, key):
        return defaults[key] if value is None else value

    train_cfg = TrainConfig(
        lr0=float(pick(lr, 'lr0')), batch=int(pick(batch, 'batch')), patch=int(pick(patch, 'patch')),
        epochs=int(pick(epochs, 'epochs')), halve_every=int(defaults['halve_every']),
        optimizer=str(pick(optimizer, 'optimizer')), loss=str(pick(loss, 'loss')), seed=seed,
        augment=not no_augment,
        checkpoint_every=int(pick(checkpoint_every, 'checkpoint_every')) if checkpoint_dir else 0,
        checkpoint_dir=checkpoint_dir, val_dir=val_dir, prefetch=int(defaults['prefetch']),
    ).validate()
    dataset = PatchDataset.from_dir(data_dir, cfg.scale)
    net = build(cfg, seed)
    result = train(net, dataset, train_cfg, reporter)
    if output:
        CheckpointManager().save_checkpoint(net, output)
    return CommandResult(EXIT_OK, {
        "smoke": False, "epochs": train_cfg.epochs, "iterations": result.iterations,
        "final_loss": result.losses[-1], "best_epoch": result.best_epoch,
        "best_psnr": None if result.best_psnr is None else format_psnr(result.best_psnr),
        "val_dir": result.val_dir, "checkpoints": result.checkpoints, "output": output,
    })


def cmd_gradcheck(config: Optional[str] = None, samples: int = DEFAULT_SAMPLES, eps: float = DEFAULT_EPS,
                  seed: int = 0, tolerance: float = 1e-4, size: str = "9x9") -> CommandResult:
    cfg = NetConfig.load(config) if config else tiny()
    height, width = parse_size(size)
    report = gradcheck_network(cfg, samples, eps, seed, (height, width))
    passed = report.passed(tolerance)
    if not passed:
        logger.error(f"Gradient check failed: max relative error {report.max_rel_error:.3e}")
    return CommandResult(EXIT_OK if passed else EXIT_NUMERIC, {
        "passed": passed, "max_rel_error": report.max_rel_error, "tolerance": tolerance,
        "checked": report.checked, "skipped": report.skipped, "eps": eps,
        "gate_grads": report.gate_grads, "all_finite": report.all_finite,
    })


def cmd_materialize(root: str, scale: int) -> CommandResult:
    if scale < 1:
        raise ConfigError(f"Scale must be >= 1, got {scale}")
    written = materialize_lr(root, scale)
    return CommandResult(EXIT_OK, {"root": root, "scale": scale, "written": len(written),
                                   "directory": os.path.join(root, f"LR_x{scale}")})

