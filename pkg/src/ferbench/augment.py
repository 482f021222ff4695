"""Training-time image augmentation: flip, affine jitter, photometric jitter."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import ndimage


@dataclass
class AugmentationConfig:
    """Magnitudes for the standard augmentation stack.

    Defaults are deliberately conservative "small degrees": 5% shift,
    +-5% scale, 10 degree rotation, +-0.1 brightness, +-10% contrast.
    """

    horizontal_flip_prob: float = 0.5
    max_shift_fraction: float = 0.05
    scale_range: tuple = (0.95, 1.05)
    max_rotation_degrees: float = 10.0
    brightness_delta: float = 0.1
    contrast_range: tuple = (0.9, 1.1)
    seed: int = 0

    def __post_init__(self):
        if not 0.0 <= self.horizontal_flip_prob <= 1.0:
            raise ValueError("horizontal_flip_prob must be in [0,1]")
        if self.scale_range[0] > self.scale_range[1]:
            raise ValueError("scale_range must be (lo, hi) with lo <= hi")
        if self.contrast_range[0] > self.contrast_range[1]:
            raise ValueError("contrast_range must be (lo, hi) with lo <= hi")
        if self.max_shift_fraction < 0 or self.max_rotation_degrees < 0 or self.brightness_delta < 0:
            raise ValueError("augmentation magnitudes must be non-negative")

    @classmethod
    def disabled(cls, seed=0):
        return cls(horizontal_flip_prob=0.0, max_shift_fraction=0.0, scale_range=(1.0, 1.0),
                   max_rotation_degrees=0.0, brightness_delta=0.0, contrast_range=(1.0, 1.0),
                   seed=seed)

    def rng(self):
        return np.random.default_rng(self.seed)


def augment(pixels: np.ndarray, cfg: AugmentationConfig, rng: np.random.Generator) -> np.ndarray:
    """Apply one random draw of the augmentation stack to an [H,W,C] image.

    All random numbers are drawn in a fixed order regardless of magnitudes,
    so a seeded generator replays identically across configs that share draws.
    """
    img = np.asarray(pixels, dtype=np.float64)
    h, w = img.shape[:2]
    do_flip = rng.uniform() < cfg.horizontal_flip_prob
    dx = rng.uniform(-1.0, 1.0) * cfg.max_shift_fraction * w
    dy = rng.uniform(-1.0, 1.0) * cfg.max_shift_fraction * h
    s = rng.uniform(cfg.scale_range[0], cfg.scale_range[1])
    theta = np.deg2rad(rng.uniform(-1.0, 1.0) * cfg.max_rotation_degrees)
    bright = rng.uniform(-1.0, 1.0) * cfg.brightness_delta
    contrast = rng.uniform(cfg.contrast_range[0], cfg.contrast_range[1])

    if do_flip:
        img = img[:, ::-1, :]
    if not (dx == 0.0 and dy == 0.0 and s == 1.0 and theta == 0.0):
        img = _affine(img, dx, dy, s, theta)
    if bright != 0.0 or contrast != 1.0:
        img = (img - 0.5) * contrast + 0.5 + bright
    return np.clip(img, 0.0, 1.0)


def _affine(img, dx, dy, s, theta):
    """Rotate by theta and scale by s about the center, then shift by (dx, dy).

    Bilinear resampling with reflect-101 borders via the inverse map.
    """
    h, w = img.shape[:2]
    c = np.array([(h - 1) / 2.0, (w - 1) / 2.0])
    cos_t, sin_t = np.cos(theta), np.sin(theta)
    # forward map in (row, col) space: p -> s*R(p - c) + c + t
    fwd = s * np.array([[cos_t, -sin_t], [sin_t, cos_t]])
    t = np.array([dy, dx])
    inv = np.linalg.inv(fwd)
    offset = c - inv @ (c + t)
    out = np.empty_like(img)
    for ch in range(img.shape[2]):
        out[:, :, ch] = ndimage.affine_transform(
            img[:, :, ch], inv, offset=offset, order=1, mode="mirror")
    return out
