"""
Training data: HR directories, on-the-fly LR pairs, aligned patch sampling
with the eight flip/rotation symmetries, and a background batch producer.
"""

import glob
import logging
import os
import queue
import threading
from typing import List, Optional, Sequence, Tuple

import numpy as np

from src.core.errors import DataError
from src.utils.image_io import png_read, png_write
from src.utils.imaging import Image, ImagePair, degrade, modcrop

logger = logging.getLogger(__name__)

DEFAULT_PATCH = 48
SYMMETRIES = 8

PatchPair = Tuple[np.ndarray, np.ndarray]


def make_pair(hr: Image, s: int) -> ImagePair:
    cropped = modcrop(hr, s)
    return ImagePair(hr=cropped, lr=degrade(cropped, s), scale=s)


def extract_patch(pair: ImagePair, lr_size: int = DEFAULT_PATCH,
                  rng: Optional[np.random.Generator] = None) -> PatchPair:
    """Random LR patch and its aligned HR patch; LR (i, j) covers HR rows s*i .. s*i+s-1"""
    lr, s = pair.lr, pair.scale
    if lr.height < lr_size or lr.width < lr_size:
        raise DataError(f"LR image {lr.width}x{lr.height} smaller than patch {lr_size}")
    rng = rng if rng is not None else np.random.default_rng()
    top = int(rng.integers(0, lr.height - lr_size + 1))
    left = int(rng.integers(0, lr.width - lr_size + 1))
    lr_patch = lr.pixels[top:top + lr_size, left:left + lr_size]
    hr_patch = pair.hr.pixels[s * top:s * (top + lr_size), s * left:s * (left + lr_size)]
    return lr_patch, hr_patch


def apply_symmetry(patch: np.ndarray, k: int) -> np.ndarray:
    """k in 0..7: k % 4 quarter turns, preceded by a horizontal flip when k >= 4"""
    if k >= 4:
        patch = patch[:, ::-1]
    return np.rot90(patch, k % 4, axes=(0, 1))


def augment(patch_pair: PatchPair, rng: np.random.Generator) -> PatchPair:
    k = int(rng.integers(0, SYMMETRIES))
    lr_patch, hr_patch = patch_pair
    return apply_symmetry(lr_patch, k), apply_symmetry(hr_patch, k)


def list_pngs(root: str) -> List[str]:
    """`<root>/HR/*.png` when an HR subdirectory exists, else `<root>/*.png`"""
    hr_dir = os.path.join(root, "HR")
    base = hr_dir if os.path.isdir(hr_dir) else root
    if not os.path.isdir(base):
        raise DataError(f"Not a directory: {root}")
    return sorted(glob.glob(os.path.join(base, "*.png")))


def load_hr_dir(root: str) -> List[Tuple[str, Image]]:
    paths = list_pngs(root)
    if not paths:
        raise DataError(f"No PNG images found under {root}")
    images = [(os.path.splitext(os.path.basename(p))[0], png_read(p)) for p in paths]
    logger.info(f"Loaded {len(images)} HR images from {root}")
    return images


class PatchDataset:
    """HR images with their LR counterparts generated once at load time"""

    def __init__(self, pairs: Sequence[ImagePair], names: Optional[Sequence[str]] = None):
        if not pairs:
            raise DataError("Dataset is empty")
        self.pairs = list(pairs)
        self.names = list(names) if names is not None else [str(i) for i in range(len(self.pairs))]
        self.scale = self.pairs[0].scale

    @classmethod
    def from_images(cls, images: Sequence[Image], s: int, names: Optional[Sequence[str]] = None):
        return cls([make_pair(img, s) for img in images], names)

    @classmethod
    def from_dir(cls, root: str, s: int) -> "PatchDataset":
        named = load_hr_dir(root)
        return cls.from_images([img for _, img in named], s, [name for name, _ in named])

    def __len__(self) -> int:
        return len(self.pairs)

    @property
    def channels(self) -> int:
        return self.pairs[0].hr.channels


def _to_nchw(patches: Sequence[np.ndarray]) -> np.ndarray:
    stacked = np.stack([np.ascontiguousarray(p) for p in patches]).astype(np.float32)
    return stacked.transpose(0, 3, 1, 2) / np.float32(255.0)


def sample_batch(dataset: PatchDataset, batch: int, patch: int, rng: np.random.Generator,
                 augment_patches: bool = True) -> Tuple[np.ndarray, np.ndarray]:
    """Images drawn with replacement; returns (LR, HR) float32 NCHW arrays in [0, 1]"""
    lr_patches, hr_patches = [], []
    for _ in range(batch):
        pair = dataset.pairs[int(rng.integers(0, len(dataset)))]
        patch_pair = extract_patch(pair, patch, rng)
        if augment_patches:
            patch_pair = augment(patch_pair, rng)
        lr_patches.append(patch_pair[0])
        hr_patches.append(patch_pair[1])
    return _to_nchw(lr_patches), _to_nchw(hr_patches)


class BatchProducer:
    """
    Prefetches batches on one background thread through a bounded queue.

    A single producer draws from one seeded stream, so the batch sequence is
    the same as calling sample_batch in a loop.
    """

    _STOP = object()

    def __init__(self, dataset: PatchDataset, batch: int, patch: int, seed: int,
                 augment_patches: bool = True, total: Optional[int] = None, prefetch: int = 4):
        self.dataset = dataset
        self.batch = batch
        self.patch = patch
        self.augment_patches = augment_patches
        self.total = total
        self.rng = np.random.default_rng(seed)
        self.queue: "queue.Queue" = queue.Queue(maxsize=max(1, prefetch))
        self._stop = threading.Event()
        self._thread = threading.Thread(target=self._run, name="batch-producer", daemon=True)
        self._error: Optional[BaseException] = None

    def start(self) -> "BatchProducer":
        self._thread.start()
        return self

    def _put(self, item) -> bool:
        while not self._stop.is_set():
            try:
                self.queue.put(item, timeout=0.1)
                return True
            except queue.Full:
                continue
        return False

    def _run(self):
        produced = 0
        try:
            while not self._stop.is_set() and (self.total is None or produced < self.total):
                item = sample_batch(self.dataset, self.batch, self.patch, self.rng, self.augment_patches)
                if not self._put(item):
                    return
                produced += 1
        except Exception as e:
            logger.error(f"Batch producer failed: {e}")
            self._error = e
        self._put(self._STOP)

    def get(self) -> Tuple[np.ndarray, np.ndarray]:
        item = self.queue.get()
        if item is self._STOP:
            if self._error is not None:
                raise self._error
            raise DataError("Batch producer is exhausted")
        return item

    def close(self):
        self._stop.set()
        self._thread.join(timeout=5.0)

    def __enter__(self) -> "BatchProducer":
        return self.start()

    def __exit__(self, exc_type, exc, tb):
        self.close()
        return False


def synthetic_hr(width: int, height: int, seed: int = 0) -> Image:
    """Deterministic textured RGB image (smooth ramps, stripes, a disc and mild noise)"""
    rng = np.random.default_rng(seed)
    yy, xx = np.mgrid[0:height, 0:width].astype(np.float64)
    channels = []
    for c in range(3):
        phase = rng.uniform(0.0, 2.0 * np.pi)
        freq = rng.uniform(0.08, 0.25)
        ramp = 255.0 * (xx / max(width - 1, 1) * (c + 1) / 3.0)
        stripes = 60.0 * np.sin(freq * (xx + (c + 1) * yy) + phase)
        channels.append(0.5 * ramp + 90.0 + stripes)
    pixels = np.stack(channels, axis=2)
    disc = (yy - height / 2.0) ** 2 + (xx - width / 3.0) ** 2 < (min(width, height) / 4.0) ** 2
    pixels[disc] = 255.0 - pixels[disc]
    pixels += rng.normal(0.0, 4.0, pixels.shape)
    return Image(np.floor(np.clip(pixels, 0.0, 255.0) + 0.5).astype(np.uint8))


def materialize_lr(root: str, s: int) -> List[str]:
    """Write `<root>/LR_x{s}/<name>.png` for every HR image; returns written paths"""
    out_dir = os.path.join(root, f"LR_x{s}")
    written = []
    for name, hr in load_hr_dir(root):
        path = os.path.join(out_dir, f"{name}.png")
        png_write(path, degrade(hr, s))
        written.append(path)
    logger.info(f"Materialized {len(written)} LR images into {out_dir}")
    return written
