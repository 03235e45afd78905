"""
Super-resolve images with a Network and score them on the Y channel.
"""

import logging
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import List, Optional, Sequence, Tuple

import numpy as np

from src.core.errors import DataError
from src.core.model import Network, forward, image_to_tensor, tensor_to_image
from src.utils.dataset_loader import make_pair
from src.utils.imaging import Image, rgb_to_y
from src.utils.metrics import psnr, ssim

logger = logging.getLogger(__name__)


@dataclass
class ImageScore:
    name: str
    psnr: float
    ssim: float
    seconds: float = 0.0


def super_resolve(net: Network, lr: Image) -> Image:
    if lr.channels != net.cfg.colors:
        raise DataError(f"Image has {lr.channels} channels, network expects {net.cfg.colors}")
    sr = forward(net, image_to_tensor(lr.pixels, dtype=net.dtype))
    return Image(tensor_to_image(sr))


def score(sr: Image, hr: Image, border: int) -> Tuple[float, float]:
    """(PSNR, SSIM) on BT.601 luminance, `border` pixels cropped per side"""
    sr_y, hr_y = rgb_to_y(sr), rgb_to_y(hr)
    return psnr(sr_y, hr_y, border), ssim(sr_y, hr_y, border)


def evaluate_image(net: Network, name: str, hr: Image, border: int) -> ImageScore:
    start = time.perf_counter()
    pair = make_pair(hr, net.cfg.scale)
    sr = super_resolve(net, pair.lr)
    value_psnr, value_ssim = score(sr, pair.hr, border)
    elapsed = time.perf_counter() - start
    logger.debug(f"{name}: {value_psnr:.4f} dB / {value_ssim:.4f} in {elapsed:.2f}s")
    return ImageScore(name, value_psnr, value_ssim, elapsed)


def evaluate_images(net: Network, images: Sequence[Tuple[str, Image]], border: int,
                    workers: int = 1) -> List[ImageScore]:
    """Per-image scores in input order; images are independent so they run on a thread pool"""
    if not images:
        raise DataError("No images to evaluate")
    if workers <= 1 or len(images) == 1:
        return [evaluate_image(net, name, hr, border) for name, hr in images]
    with ThreadPoolExecutor(max_workers=workers, thread_name_prefix="eval") as pool:
        futures = [pool.submit(evaluate_image, net, name, hr, border) for name, hr in images]
        return [future.result() for future in futures]


def mean_scores(scores: Sequence[ImageScore]) -> Tuple[float, float]:
    return (float(np.mean([s.psnr for s in scores])), float(np.mean([s.ssim for s in scores])))


def mean_psnr(net: Network, images: Sequence[Tuple[str, Image]], border: Optional[int] = None) -> float:
    border = net.cfg.scale if border is None else border
    return mean_scores(evaluate_images(net, images, border))[0]
