"""Images as coordinate -> value regression targets.

Coordinates live on a uniform grid in [0, 1]^2 (x along columns, y along
rows, row-major order) and pixel values are scaled to [0, 1].
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import imageio

log = logging.getLogger(__name__)

IMAGE_SUFFIXES = (".ppm", ".pgm", ".pnm", ".png")


class DataError(ValueError):
    """Missing, empty or unusable input data."""


@dataclass(frozen=True, eq=False)
class Signal:
    coords: np.ndarray
    targets: np.ndarray
    height: int
    width: int
    id: str

    @property
    def channels(self) -> int:
        return self.targets.shape[1]

    @property
    def image(self) -> np.ndarray:
        return self.targets.reshape(self.height, self.width, self.channels)

    @classmethod
    def from_image(cls, image: np.ndarray, id: str) -> "Signal":
        image = np.asarray(image, dtype=np.float64)
        if image.ndim == 2:
            image = image[:, :, None]
        h, w, c = image.shape
        coords = make_grid(h, w)
        coords.setflags(write=False)
        targets = np.ascontiguousarray(image.reshape(h * w, c))
        targets.setflags(write=False)
        return cls(coords, targets, h, w, id)


@dataclass(frozen=True)
class SignalSet:
    train: list[Signal]
    val: list[Signal]
    source: str = ""
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        overlap = {s.id for s in self.train} & {s.id for s in self.val}
        if overlap:
            raise DataError(f"signals in both splits: {sorted(overlap)[:3]}")

    def split(self, name: str) -> list[Signal]:
        if name not in ("train", "val"):
            raise ValueError(f"unknown split {name!r}")
        return self.train if name == "train" else self.val


def make_grid(height: int, width: int) -> np.ndarray:
    """Row-major ``(H*W, 2)`` grid of ``(x, y)`` with x = j/(W-1), y = i/(H-1)."""
    if height < 1 or width < 1:
        raise ValueError("grid dimensions must be >= 1")
    xs = np.arange(width, dtype=np.float64) / (width - 1) if width > 1 else np.zeros(1)
    ys = np.arange(height, dtype=np.float64) / (height - 1) if height > 1 else np.zeros(1)
    gx, gy = np.meshgrid(xs, ys)
    return np.stack([gx.ravel(), gy.ravel()], axis=1)


def resize_bilinear(image: np.ndarray, height: int, width: int) -> np.ndarray:
    """Bilinear resampling with pixel-centre alignment; (H, W, C) float in/out."""
    h, w = image.shape[:2]
    if (h, w) == (height, width):
        return image.astype(np.float64, copy=True)

    def axis(n_in, n_out):
        pos = (np.arange(n_out) + 0.5) * (n_in / n_out) - 0.5
        pos = np.clip(pos, 0, n_in - 1)
        lo = np.floor(pos).astype(np.int64)
        hi = np.minimum(lo + 1, n_in - 1)
        return lo, hi, pos - lo

    y0, y1, fy = axis(h, height)
    x0, x1, fx = axis(w, width)
    img = image.astype(np.float64)
    top = img[y0][:, x0] * (1 - fx)[None, :, None] + img[y0][:, x1] * fx[None, :, None]
    bot = img[y1][:, x0] * (1 - fx)[None, :, None] + img[y1][:, x1] * fx[None, :, None]
    return top * (1 - fy)[:, None, None] + bot * fy[:, None, None]


def center_crop_window(height: int, width: int, size: int) -> tuple[slice, slice]:
    if height < size or width < size:
        raise DataError(f"{height}x{width} image is smaller than crop size {size}")
    top = (height - size) // 2
    left = (width - size) // 2
    return slice(top, top + size), slice(left, left + size)


def prepare_image(image: np.ndarray, size: int, resize_to: int | None = None,
                  channels: int = 3) -> np.ndarray:
    """Scale to [0,1], optionally resize the short side, center-crop to size x size.

    Without ``resize_to`` the image is only resized when its short side is
    below ``size``.
    """
    img = imageio.to_unit_float(image)
    h, w = img.shape[:2]
    short = min(h, w)
    target = resize_to if resize_to is not None else max(short, size)
    if target != short:
        scale = target / short
        img = resize_bilinear(img, max(target, round(h * scale)), max(target, round(w * scale)))
    rows, cols = center_crop_window(img.shape[0], img.shape[1], size)
    img = img[rows, cols]
    if img.shape[2] == 1 and channels == 3:
        img = np.repeat(img, 3, axis=2)
    elif img.shape[2] != channels:
        raise DataError(f"cannot convert {img.shape[2]}-channel image to {channels} channels")
    return np.clip(img, 0.0, 1.0)


def load_image(path, size: int, resize_to: int | None = None, channels: int = 3) -> Signal:
    img = prepare_image(imageio.read_image(path), size, resize_to, channels)
    return Signal.from_image(img, Path(path).name)


def load_image_dir(path, size: int, split_ratio: float = 0.8, seed: int = 0,
                   resize_to: int | None = None, channels: int = 3) -> SignalSet:
    """Load every .ppm/.pgm/.png file in ``path`` (alphabetical order).

    Unreadable files are skipped with a warning. ``split_ratio`` is the
    fraction of images placed in the training split; membership is drawn
    with ``seed`` and each split keeps alphabetical order.
    """
    root = Path(path)
    if not root.is_dir():
        raise DataError(f"{root} is not a directory")
    if not 0.0 <= split_ratio <= 1.0:
        raise ValueError("split_ratio must be in [0, 1]")
    files = sorted(p for p in root.iterdir() if p.suffix.lower() in IMAGE_SUFFIXES)
    signals = []
    for f in files:
        try:
            signals.append(load_image(f, size, resize_to, channels))
        except (OSError, ValueError) as exc:
            log.warning("skipping %s: %s", f, exc)
    if not signals:
        raise DataError(f"no decodable images in {root}")
    n_train = int(math.floor(split_ratio * len(signals) + 0.5))
    order = np.random.default_rng(seed).permutation(len(signals))
    train_idx = sorted(order[:n_train])
    val_idx = sorted(order[n_train:])
    return SignalSet([signals[i] for i in train_idx], [signals[i] for i in val_idx],
                     source=str(root),
                     meta={"size": size, "split_ratio": split_ratio, "seed": seed,
                           "resize_to": resize_to})


def _fourier_field(rng: np.random.Generator, coords: np.ndarray, max_freq: int) -> np.ndarray:
    """Unit-variance random sum of plane waves with integer frequencies
    ``0 < |k| <= max_freq`` (cycles per unit) and 1/|k| amplitudes."""
    fx, fy = np.meshgrid(np.arange(-max_freq, max_freq + 1), np.arange(max_freq + 1))
    fx, fy = fx.ravel(), fy.ravel()
    r = np.hypot(fx, fy)
    # one of each +-k pair, no DC term
    keep = ((fy > 0) | (fx > 0)) & (r <= max_freq)
    fx, fy, r = fx[keep], fy[keep], r[keep]
    amp = rng.normal(0.0, 1.0, fx.size) / r
    phase = rng.uniform(0.0, 2 * np.pi, fx.size)
    arg = 2 * np.pi * (np.outer(coords[:, 0], fx) + np.outer(coords[:, 1], fy)) + phase
    field = np.cos(arg) @ amp
    return field / max(field.std(), 1e-12)


def synth_image(rng: np.random.Generator, coords: np.ndarray, max_freq: int = 12,
                template: np.ndarray | None = None, shared: float = 0.7) -> np.ndarray:
    """One RGB pattern with values in [0, 1], shape ``(len(coords), 3)``.

    Each channel mixes ``template`` (weight ``shared``) with an image-specific
    random Fourier field and a radial gradient around a random centre.
    """
    own = np.stack([_fourier_field(rng, coords, max_freq) for _ in range(3)], axis=1)
    cx, cy = rng.uniform(0.0, 1.0, 2)
    radial = np.hypot(coords[:, 0] - cx, coords[:, 1] - cy)
    radial = (radial - radial.mean()) / max(radial.std(), 1e-12)
    own = own + rng.normal(0.0, 0.5, 3) * radial[:, None]
    own /= max(own.std(), 1e-12)
    if template is None:
        template, shared = np.zeros_like(own), 0.0
    img = shared * template + (1.0 - shared) * own
    return np.clip(0.5 + 0.15 * img, 0.0, 1.0)


def synth_set(seed: int, n: int, size: int, n_val: int | None = None,
              max_freq: int = 12, shared: float = 0.7) -> SignalSet:
    """``n`` training and ``n_val`` (default ``n``) validation images of size x size.

    All images of one set share a seeded template pattern, the way photos of
    one domain share structure; ``shared=0`` gives independent images.
    """
    if n < 2:
        raise ValueError("n must be >= 2")
    if size < 8:
        raise ValueError("size must be >= 8")
    if not 0.0 <= shared <= 1.0:
        raise ValueError("shared must lie in [0, 1]")
    n_val = n if n_val is None else n_val
    rng = np.random.default_rng([seed, n, size, max_freq])
    coords = make_grid(size, size)
    template = np.stack([_fourier_field(rng, coords, max_freq) for _ in range(3)], axis=1)
    out = {"train": [], "val": []}
    for split, count in (("train", n), ("val", n_val)):
        for k in range(count):
            img = synth_image(rng, coords, max_freq, template, shared).reshape(size, size, 3)
            out[split].append(Signal.from_image(img, f"synth-{seed}-{split}-{k}"))
    return SignalSet(out["train"], out["val"], source=f"synth(seed={seed}, n={n}, size={size})",
                     meta={"seed": seed, "n": n, "n_val": n_val, "size": size,
                           "max_freq": max_freq, "shared": shared})
