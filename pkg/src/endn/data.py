"""Image I/O, patch cropping, augmentation and AWGN pair synthesis."""
from __future__ import annotations

import queue
import threading
from dataclasses import dataclass
from pathlib import Path
from typing import Iterator, Sequence

import numpy as np
from PIL import Image, UnidentifiedImageError
from scipy.ndimage import correlate

from .errors import ConfigError, FormatError, EndnIOError

IMAGE_SUFFIXES = (".png", ".pgm", ".ppm")
AUGMENTATIONS = ("rot90", "rot180", "rot270", "flip", "blur", "contrast_stretch", "invert")
BLUR_SIGMA = 0.8

# modes converted losslessly to 8-bit L / RGB; anything else is rejected
_MODE_MAP = {"L": "L", "RGB": "RGB", "1": "L", "P": "RGB", "LA": "L", "RGBA": "RGB"}


@dataclass
class ImageBuffer:
    data: np.ndarray  # (channels, h, w), float32 in [0, 1]

    @property
    def channels(self) -> int:
        return self.data.shape[0]

    @property
    def h(self) -> int:
        return self.data.shape[1]

    @property
    def w(self) -> int:
        return self.data.shape[2]

    def to_tensor4(self) -> np.ndarray:
        return self.data[None]

    @classmethod
    def from_uint8(cls, arr: np.ndarray) -> "ImageBuffer":
        arr = np.asarray(arr)
        if arr.ndim == 2:
            arr = arr[:, :, None]
        return cls((arr.astype(np.float32) / 255.0).transpose(2, 0, 1).copy())


def load_image(path) -> ImageBuffer:
    path = Path(path)
    try:
        with Image.open(path) as im:
            im.load()
            mode = _MODE_MAP.get(im.mode)
            if mode is None:
                raise FormatError(f"{path}: unsupported pixel format {im.mode!r} (need 8-bit gray or RGB)")
            arr = np.asarray(im.convert(mode))
    except FileNotFoundError as e:
        raise EndnIOError(f"{path}: no such file") from e
    except (UnidentifiedImageError, SyntaxError, ValueError) as e:
        raise FormatError(f"{path}: not a readable PNG/PGM/PPM image ({e})") from e
    except OSError as e:
        if isinstance(e, EndnIOError):
            raise
        raise EndnIOError(f"{path}: {e}") from e
    return ImageBuffer.from_uint8(arr)


def to_uint8(data: np.ndarray) -> np.ndarray:
    """(c, h, w) floats -> (h, w) or (h, w, 3) uint8 after clamping to [0, 1]."""
    q = np.rint(np.clip(np.asarray(data, dtype=np.float64), 0.0, 1.0) * 255.0).astype(np.uint8)
    q = q.transpose(1, 2, 0)
    return q[:, :, 0] if q.shape[2] == 1 else q


def save_image(img, path) -> None:
    """Write an ImageBuffer or (c, h, w) / (1, c, h, w) array as 8-bit PNG/PGM/PPM."""
    data = img.data if isinstance(img, ImageBuffer) else np.asarray(img)
    if data.ndim == 4:
        if data.shape[0] != 1:
            raise ConfigError(f"can only save a single image, got batch of {data.shape[0]}")
        data = data[0]
    if data.ndim != 3 or data.shape[0] not in (1, 3):
        raise ConfigError(f"image data must be (1|3, h, w), got {data.shape}")
    path = Path(path)
    if path.suffix.lower() not in IMAGE_SUFFIXES:
        raise ConfigError(f"{path}: output must end in one of {IMAGE_SUFFIXES}")
    if path.suffix.lower() == ".pgm" and data.shape[0] != 1:
        raise ConfigError(f"{path}: PGM holds grayscale only")
    try:
        Image.fromarray(to_uint8(data)).save(path)
    except OSError as e:
        raise EndnIOError(f"{path}: {e}") from e


def list_images(data_dir) -> list[Path]:
    d = Path(data_dir)
    if not d.is_dir():
        raise ConfigError(f"{d}: not a directory")
    return sorted(p for p in d.iterdir() if p.is_file() and p.suffix.lower() in IMAGE_SUFFIXES)


def load_dir(data_dir) -> list[tuple[str, ImageBuffer]]:
    paths = list_images(data_dir)
    if not paths:
        raise ConfigError(f"{data_dir}: no .png/.pgm/.ppm images found")
    images = [(p.name, load_image(p)) for p in paths]
    chans = {img.channels for _, img in images}
    if len(chans) > 1:
        raise ConfigError(f"{data_dir}: images mix channel counts {sorted(chans)}")
    return images


# ----------------------------------------------------------------------- noise

def add_awgn(clean: np.ndarray, sigma8: float, rng) -> np.ndarray:
    """clean + N(0, (sigma8 / 255)^2) per element; the result is not clamped."""
    if sigma8 < 0:
        raise ConfigError(f"noise sigma must be non-negative, got {sigma8}")
    clean = np.asarray(clean)
    if sigma8 == 0:
        return clean.copy()
    rng = rng if isinstance(rng, np.random.Generator) else np.random.default_rng(rng)
    noise = rng.normal(0.0, sigma8 / 255.0, size=clean.shape)
    return (clean + noise).astype(clean.dtype if clean.dtype.kind == "f" else np.float32)


# --------------------------------------------------------------------- patches

def _grid_starts(extent: int, size: int, stride: int) -> list[int]:
    starts = list(range(0, extent - size + 1, stride))
    if starts[-1] != extent - size:
        starts.append(extent - size)
    return starts


def extract_patches(img: ImageBuffer, size: int = 64, policy: str = "random", *,
                    stride: int | None = None, count: int = 1, rng=None) -> list[np.ndarray]:
    """Crop (1, c, size, size) patches.

    ``policy="random"`` draws ``count`` uniformly placed crops; ``"grid"``
    tiles the image with ``stride`` (default ``size``), snapping the last
    row and column of tiles to the image border.
    """
    if size < 1 or size > min(img.h, img.w):
        raise ConfigError(f"patch size {size} does not fit a {img.h}x{img.w} image")
    if policy == "grid":
        stride = stride or size
        if stride < 1:
            raise ConfigError(f"stride must be positive, got {stride}")
        return [img.data[None, :, y:y + size, x:x + size].copy()
                for y in _grid_starts(img.h, size, stride)
                for x in _grid_starts(img.w, size, stride)]
    if policy != "random":
        raise ConfigError(f"unknown patch policy {policy!r}")
    rng = rng if isinstance(rng, np.random.Generator) else np.random.default_rng(rng)
    out = []
    for _ in range(count):
        y = int(rng.integers(0, img.h - size + 1))
        x = int(rng.integers(0, img.w - size + 1))
        out.append(img.data[None, :, y:y + size, x:x + size].copy())
    return out


# ---------------------------------------------------------------- augmentation

def _blur_kernel() -> np.ndarray:
    r = np.array([-1.0, 0.0, 1.0])
    k = np.exp(-(r * r) / (2 * BLUR_SIGMA ** 2))
    k2 = np.outer(k, k)
    return k2 / k2.sum()


def augment(patch: np.ndarray, op: str, rng=None) -> np.ndarray:
    """Apply one named augmentation to a (..., h, w) patch."""
    if op == "rot90":
        return np.rot90(patch, 1, axes=(-2, -1)).copy()
    if op == "rot180":
        return np.rot90(patch, 2, axes=(-2, -1)).copy()
    if op == "rot270":
        return np.rot90(patch, 3, axes=(-2, -1)).copy()
    if op == "flip":
        return patch[..., ::-1].copy()
    if op == "invert":
        return (1.0 - patch).astype(patch.dtype)
    if op == "blur":
        k = _blur_kernel().reshape((1,) * (patch.ndim - 2) + (3, 3))
        return correlate(patch, k.astype(patch.dtype), mode="reflect")
    if op == "contrast_stretch":
        lo, hi = patch.min(), patch.max()
        if hi == lo:
            return patch.copy()
        return ((patch - lo) / (hi - lo)).astype(patch.dtype)
    if op == "identity":
        return patch.copy()
    raise ConfigError(f"unknown augmentation {op!r}")


def random_augment(patch: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    """Identity or one augmentation, chosen uniformly."""
    ops = ("identity",) + AUGMENTATIONS
    return augment(patch, ops[int(rng.integers(len(ops)))], rng)


# --------------------------------------------------------------------- batches

@dataclass
class PatchBatch:
    noisy: np.ndarray
    clean: np.ndarray
    sigma: float


def make_batch(images: Sequence[ImageBuffer], batch_size: int, patch_size: int,
               sigmas: Sequence[float], rng: np.random.Generator, augment_patches: bool = True) -> PatchBatch:
    """Random crops from random images, augmented, then noised with one sigma for the batch.

    Augmentation happens before noise so ``noisy - clean`` is the sampled field.
    """
    sigma = float(sigmas[int(rng.integers(len(sigmas)))])
    clean = []
    for _ in range(batch_size):
        img = images[int(rng.integers(len(images)))]
        p = extract_patches(img, patch_size, "random", rng=rng)[0]
        clean.append(random_augment(p, rng) if augment_patches else p)
    clean_arr = np.concatenate(clean, axis=0).astype(np.float32)
    return PatchBatch(add_awgn(clean_arr, sigma, rng), clean_arr, sigma)


def shuffle_pairs(batch: PatchBatch, rng: np.random.Generator) -> PatchBatch:
    order = rng.permutation(batch.clean.shape[0])
    return PatchBatch(batch.noisy[order], batch.clean[order], batch.sigma)


class BatchStream:
    """Endless iterator of :class:`PatchBatch`.

    With ``workers == 1`` batches are generated inline from one generator,
    so the sequence is reproducible and its state can be checkpointed.
    More workers each own an independent child generator and feed a
    bounded queue; order then depends on thread scheduling.
    """

    def __init__(self, images: Sequence[ImageBuffer], batch_size: int, patch_size: int,
                 sigmas: Sequence[float], seed: int, workers: int = 1, augment_patches: bool = True):
        if workers < 1:
            raise ConfigError(f"workers must be at least 1, got {workers}")
        self.images = list(images)
        self.args = (batch_size, patch_size, tuple(sigmas))
        self.augment_patches = augment_patches
        self.workers = workers
        self.rng = np.random.default_rng(seed)
        self._queue: queue.Queue | None = None
        self._stop = threading.Event()
        self._threads: list[threading.Thread] = []
        if workers > 1:
            self._queue = queue.Queue(maxsize=2 * workers)
            for child in np.random.SeedSequence(seed).spawn(workers):
                t = threading.Thread(target=self._produce, args=(np.random.default_rng(child),), daemon=True)
                t.start()
                self._threads.append(t)

    def _produce(self, rng):
        while not self._stop.is_set():
            batch = make_batch(self.images, *self.args, rng, self.augment_patches)
            while not self._stop.is_set():
                try:
                    self._queue.put(batch, timeout=0.1)
                    break
                except queue.Full:
                    continue

    def __iter__(self) -> Iterator[PatchBatch]:
        return self

    def __next__(self) -> PatchBatch:
        if self._queue is None:
            return make_batch(self.images, *self.args, self.rng, self.augment_patches)
        return self._queue.get()

    def get_state(self) -> dict:
        if self._queue is not None:
            raise ConfigError("generator state is only reproducible with a single worker")
        return self.rng.bit_generator.state

    def set_state(self, state: dict) -> None:
        if self._queue is not None:
            raise ConfigError("generator state is only reproducible with a single worker")
        self.rng.bit_generator.state = state

    def close(self) -> None:
        self._stop.set()
        for t in self._threads:
            t.join(timeout=1.0)
