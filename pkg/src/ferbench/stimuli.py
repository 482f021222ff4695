"""Stimulus types and the blur / grayscale / click-reveal image pipeline."""

from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property

import numpy as np

from .labels import validate_label

DEFAULT_BLUR_K = 70
GRAY_WEIGHTS = (0.299, 0.587, 0.114)


@dataclass(frozen=True)
class ClickMask:
    """Union-of-disks reveal mask over an height x width image."""

    height: int
    width: int
    radius: float
    clicks: tuple = ()

    def __post_init__(self):
        for x, y in self.clicks:
            if not (0 <= x < self.width and 0 <= y < self.height):
                raise ValueError(f"click ({x},{y}) outside {self.width}x{self.height} image")

    @cached_property
    def field(self) -> np.ndarray:
        """Boolean [H,W]: True exactly within `radius` of some click."""
        out = np.zeros((self.height, self.width), dtype=bool)
        if not self.clicks:
            return out
        yy, xx = np.mgrid[0:self.height, 0:self.width]
        r2 = self.radius * self.radius
        for x, y in self.clicks:
            out |= (xx - x) ** 2 + (yy - y) ** 2 <= r2
        return out

    def with_click(self, x, y) -> "ClickMask":
        return ClickMask(self.height, self.width, self.radius, self.clicks + ((x, y),))


@dataclass
class StimulusImage:
    """One expression image with its 2AFC label pair."""

    id: str
    pixels: np.ndarray  # [H,W,3] floats in [0,1]
    true_label: str
    false_label: str
    gt_region: np.ndarray | None = None  # bool [H,W], synthetic data only

    def __post_init__(self):
        validate_label(self.true_label)
        validate_label(self.false_label)
        if self.true_label == self.false_label:
            raise ValueError(f"{self.id}: true and false labels must differ")
        p = np.asarray(self.pixels)
        if p.ndim != 3 or p.shape[2] != 3:
            raise ValueError(f"{self.id}: pixels must be [H,W,3], got {p.shape}")
        if p.min() < 0.0 or p.max() > 1.0:
            raise ValueError(f"{self.id}: pixel values outside [0,1]")
        self.pixels = p

    @property
    def shape(self):
        return self.pixels.shape[:2]


def scaled_blur_k(size: int) -> int:
    """The reference blur kernel (70 at 224 px) rescaled to another image size."""
    return max(1, int(round(DEFAULT_BLUR_K * size / 224.0)))


def box_blur(pixels: np.ndarray, k: int = DEFAULT_BLUR_K) -> np.ndarray:
    """Mean filter over a k x k window with reflect-101 borders.

    For even k the window is anchored at the top-left of its center pair,
    i.e. it extends k//2-1 up/left and k//2 down/right.
    """
    img = np.asarray(pixels)
    h, w = img.shape[:2]
    if k < 1:
        raise ValueError(f"blur kernel k must be >= 1, got {k}")
    if k > 2 * min(h, w):
        raise ValueError(f"blur kernel k={k} too large for {h}x{w} image (max {2 * min(h, w)})")
    if k == 1:
        return img.copy()
    lo = k // 2 - 1 if k % 2 == 0 else k // 2
    hi = k // 2
    flat = img.reshape(h, w, -1).astype(np.float64)
    padded = np.pad(flat, ((lo, hi), (lo, hi), (0, 0)), mode="reflect")
    # summed-area table with a zero border row/col for O(1) window sums
    sat = np.zeros((padded.shape[0] + 1, padded.shape[1] + 1, flat.shape[2]))
    np.cumsum(padded, axis=0, out=sat[1:, 1:])
    np.cumsum(sat[1:, 1:], axis=1, out=sat[1:, 1:])
    sums = sat[k:k + h, k:k + w] - sat[0:h, k:k + w] - sat[k:k + h, 0:w] + sat[0:h, 0:w]
    out = (sums / (k * k)).astype(img.dtype, copy=False)
    return out.reshape(img.shape)


def to_grayscale(pixels: np.ndarray) -> np.ndarray:
    """Rec. 601 luminance, replicated across all three channels."""
    img = np.asarray(pixels)
    if img.ndim != 3 or img.shape[2] != 3:
        raise ValueError(f"to_grayscale expects [H,W,3], got {img.shape}")
    lum = img[..., 0] * GRAY_WEIGHTS[0] + img[..., 1] * GRAY_WEIGHTS[1] + img[..., 2] * GRAY_WEIGHTS[2]
    return np.repeat(lum[..., None], 3, axis=2)


def blurred_grayscale(pixels: np.ndarray, k: int = DEFAULT_BLUR_K) -> np.ndarray:
    """The unrevealed rendition shown to participants: blur first, then grayscale."""
    return to_grayscale(box_blur(pixels, k))


def reveal_composite(original: np.ndarray, clicks: ClickMask, blur_k: int = DEFAULT_BLUR_K) -> np.ndarray:
    """Original pixels inside the clicked disks, blurred grayscale elsewhere."""
    original = np.asarray(original)
    if original.shape[:2] != (clicks.height, clicks.width):
        raise ValueError(f"mask geometry {clicks.height}x{clicks.width} does not match image {original.shape[:2]}")
    base = blurred_grayscale(original, blur_k)
    return np.where(clicks.field[..., None], original, base)


_EIGHT_DIRS = ((-1, -1), (0, -1), (1, -1), (-1, 0), (1, 0), (-1, 1), (0, 1), (1, 1))


def shift_mask_8dirs(mask: ClickMask) -> list[ClickMask]:
    """The eight one-pixel translations of a click mask, clamped at borders."""
    out = []
    for dx, dy in _EIGHT_DIRS:
        moved = tuple((min(max(x + dx, 0), mask.width - 1), min(max(y + dy, 0), mask.height - 1))
                      for x, y in mask.clicks)
        out.append(ClickMask(mask.height, mask.width, mask.radius, moved))
    return out
