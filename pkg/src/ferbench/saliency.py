"""CAM, GradCAM, and extremal-perturbation saliency with mask post-processing.

All three methods read a frozen classifier and return SaliencyMap values at
input resolution. The comparison pipeline downstream is fixed: average maps
within a pair, normalize and scale to 0..255, threshold at 50, then compare
binary masks.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np
from PIL import Image

from . import tensor as T
from .network import Network
from .stimuli import box_blur, scaled_blur_k
from .tensor import Tensor

SALIENCY_SOURCES = ("cam", "gradcam", "extremal_perturbation", "human_clicks")


@dataclass
class SaliencyMap:
    """A [H,W] attention map from one method for one class.

    `normalized` marks maps put through min-max normalization (range [0,1]
    with max exactly 1 unless all-zero). Extremal-perturbation masks are
    bounded in [0,1] by construction but not min-max rescaled, since
    rescaling an everywhere-high mask would destroy its area semantics;
    they carry normalized=False.
    """

    values: np.ndarray
    source: str
    class_index: int
    normalized: bool = True

    def __post_init__(self):
        if self.source not in SALIENCY_SOURCES:
            raise ValueError(f"unknown saliency source {self.source!r}")
        v = np.asarray(self.values, dtype=np.float64)
        if v.ndim != 2:
            raise ValueError(f"saliency values must be [H,W], got shape {v.shape}")
        if self.normalized:
            if v.min() < -1e-9 or v.max() > 1.0 + 1e-9:
                raise ValueError("normalized saliency values must lie in [0,1]")
            if v.size and v.max() > 0 and abs(v.max() - 1.0) > 1e-6:
                raise ValueError("normalized saliency map must attain max 1 (or be all-zero)")
        self.values = v

    @property
    def shape(self):
        return self.values.shape


@dataclass
class BinaryMask:
    bits: np.ndarray

    def __post_init__(self):
        b = np.asarray(self.bits)
        if b.ndim != 2:
            raise ValueError(f"mask bits must be [H,W], got shape {b.shape}")
        if not np.isin(b, (0, 1)).all():
            raise ValueError("mask bits must be exactly 0 or 1")
        self.bits = b.astype(np.uint8)

    @property
    def shape(self):
        return self.bits.shape


@dataclass(frozen=True)
class EPConfig:
    """Extremal-perturbation settings; the defaults are the reference run.

    smoothing_sigma=None resolves to 5% of the image width at call time.
    """

    area_fraction: float = 0.1
    smoothing_sigma: float = None
    iterations: int = 300
    step_size: float = 0.05
    perturbation: str = "blur"
    seed: int = 0

    def __post_init__(self):
        if not 0.0 < self.area_fraction < 1.0:
            raise ValueError(f"area_fraction must be in (0,1), got {self.area_fraction}")
        if self.smoothing_sigma is not None and self.smoothing_sigma <= 0:
            raise ValueError(f"smoothing_sigma must be positive, got {self.smoothing_sigma}")
        if self.iterations < 1:
            raise ValueError(f"iterations must be >= 1, got {self.iterations}")
        if self.step_size <= 0:
            raise ValueError(f"step_size must be positive, got {self.step_size}")
        if self.perturbation != "blur":
            raise ValueError(f"unsupported perturbation {self.perturbation!r}")


_EP_LAMBDA_MAX = 10.0


def _net_of(clf) -> Network:
    return clf.net if hasattr(clf, "net") else clf


def _check_class(net: Network, class_index: int):
    if not 0 <= class_index < net.head_class_count:
        raise ValueError(
            f"class_index {class_index} out of range for a {net.head_class_count}-way head")


def _to_input(img: np.ndarray) -> np.ndarray:
    img = np.asarray(img)
    if img.ndim != 3 or img.shape[2] != 3:
        raise ValueError(f"image must be [H,W,3], got shape {img.shape}")
    return img.transpose(2, 0, 1)[None].astype(np.float64)


def _minmax(values: np.ndarray) -> np.ndarray:
    lo, hi = float(values.min()), float(values.max())
    if hi == lo:
        return np.zeros_like(values, dtype=np.float64)
    return (values - lo) / (hi - lo)


def _upsample(values: np.ndarray, out_hw) -> np.ndarray:
    t = T.upsample_bilinear(Tensor(values[None, None].astype(np.float64)), out_hw)
    return t.data[0, 0]


def cam_raw(clf, img: np.ndarray, class_index: int) -> np.ndarray:
    """Class activation map at feature resolution, signed and unnormalized."""
    net = _net_of(clf)
    _check_class(net, class_index)
    net.forward(_to_input(img), record=False)
    feats = net.features_before_gap().data[0]
    weights = net.head_weights()[class_index]
    return np.tensordot(weights, feats, axes=1)


def cam(clf, img: np.ndarray, class_index: int) -> SaliencyMap:
    """CAM: head-weighted sum of pre-pool features, upsampled then normalized."""
    raw = cam_raw(clf, img, class_index)
    h, w = np.asarray(img).shape[:2]
    up = _upsample(raw, (h, w))
    return SaliencyMap(values=_minmax(up), source="cam", class_index=class_index)


def gradcam_raw(clf, img: np.ndarray, class_index: int):
    """GradCAM at feature resolution; returns (raw map, channel weights alpha)."""
    net = _net_of(clf)
    _check_class(net, class_index)
    x = Tensor(_to_input(img), requires_grad=True)
    logits = net.forward(x, record=False)
    net.backward(T.select(logits, (0, class_index)))
    feats = net.features_before_gap()
    alphas = feats.grad[0].mean(axis=(1, 2))
    raw = np.maximum(np.tensordot(alphas, feats.data[0], axes=1), 0.0)
    return raw, alphas


def gradcam(clf, img: np.ndarray, class_index: int) -> SaliencyMap:
    """GradCAM: relu of alpha-weighted features, upsampled then normalized."""
    raw, _ = gradcam_raw(clf, img, class_index)
    h, w = np.asarray(img).shape[:2]
    up = _upsample(raw, (h, w))
    return SaliencyMap(values=_minmax(up), source="gradcam", class_index=class_index)


def _gaussian_kernel(sigma: float):
    r = int(np.ceil(3.0 * sigma))
    g = np.exp(-0.5 * (np.arange(-r, r + 1) / sigma) ** 2)
    k2 = np.outer(g, g)
    return (k2 / k2.sum()).astype(np.float64), r


def _smooth_factors(h, w, sigma):
    """Kernel tensor and border renormalizer for in-graph Gaussian smoothing."""
    k2, r = _gaussian_kernel(sigma)
    kernel = Tensor(k2[None, None])
    zero_bias = Tensor(np.zeros(1))
    ones = Tensor(np.ones((1, 1, h, w)))
    coverage = T.conv2d(ones, kernel, zero_bias, padding=r).data
    return kernel, zero_bias, Tensor(1.0 / coverage), r


def ep_blur_k(size: int) -> int:
    """Blur kernel width for the perturbation baseline: 70 scaled from 224."""
    return scaled_blur_k(size)


def extremal_perturbation(clf, img: np.ndarray, class_index: int,
                          cfg: EPConfig = EPConfig()) -> SaliencyMap:
    """Optimize a smooth area-constrained mask that preserves the class logit.

    The mask is a logistic-squashed latent at 1/8 input resolution, bilinearly
    upsampled and Gaussian-smoothed; gradient ascent maximizes the logit of
    mask*img + (1-mask)*blur(img) minus an area penalty on the descending-
    sorted mask values, whose weight ramps to its maximum over the first half
    of the iterations. Steps are normalized by the gradient's max magnitude.
    """
    net = _net_of(clf)
    _check_class(net, class_index)
    img = np.asarray(img)
    h, w = img.shape[:2]
    sigma = cfg.smoothing_sigma if cfg.smoothing_sigma is not None else 0.05 * w
    x_orig = _to_input(img)
    x_blur = _to_input(box_blur(img, ep_blur_k(w)))
    orig_t, blur_t = Tensor(x_orig), Tensor(x_blur)

    kernel, zero_bias, coverage_inv, r = _smooth_factors(h, w, sigma)
    n_on = int(round(cfg.area_fraction * h * w))
    reference = np.zeros(h * w, dtype=np.float64)
    reference[:n_on] = 1.0
    half = max(1, cfg.iterations // 2)

    rng = np.random.default_rng(cfg.seed)
    hl, wl = max(2, round(h / 8)), max(2, round(w / 8))
    z = rng.normal(0.0, 0.01, size=(1, 1, hl, wl))

    mask = None
    for it in range(cfg.iterations):
        z_t = Tensor(z, requires_grad=True)
        mask = T.mul(T.conv2d(T.upsample_bilinear(T.sigmoid(z_t), (h, w)),
                              kernel, zero_bias, padding=r),
                     coverage_inv)
        keep = T.mul(mask, orig_t)
        drop = T.mul(T.add_const(T.scale(mask, -1.0), 1.0), blur_t)
        logits = net.forward(T.add(keep, drop), record=False)
        score = T.select(logits, (0, class_index))
        lam = _EP_LAMBDA_MAX * min(1.0, it / half)
        objective = T.sub(score, T.scale(T.sorted_ref_penalty(mask, reference), lam))
        if not np.isfinite(objective.data):
            raise ValueError(f"extremal perturbation diverged at iteration {it}")
        objective.backward()
        g = z_t.grad
        z = z + cfg.step_size * g / (np.abs(g).max() + 1e-12)
        if not np.all(np.isfinite(z)):
            raise ValueError(f"extremal perturbation diverged at iteration {it}")

    return SaliencyMap(values=mask.data[0, 0], source="extremal_perturbation",
                       class_index=class_index, normalized=False)


def normalize_scale_255(m: SaliencyMap) -> np.ndarray:
    """Min-max normalize and scale to integers 0..255 (half-up rounding).

    An all-constant map scales to all zeros rather than mid-gray, so its
    thresholded mask is empty.
    """
    v = m.values
    lo, hi = float(v.min()), float(v.max())
    if hi == lo:
        return np.zeros(v.shape, dtype=np.uint8)
    return np.floor(255.0 * (v - lo) / (hi - lo) + 0.5).astype(np.uint8)


def threshold_mask(scaled: np.ndarray, t: int = 50) -> BinaryMask:
    """Binarize a 0..255 integer map; values >= t (50 itself included) become 1."""
    if not 0 <= t <= 255:
        raise ValueError(f"threshold must be in [0,255], got {t}")
    scaled = np.asarray(scaled)
    return BinaryMask(bits=(scaled >= t).astype(np.uint8))


def average_maps(maps: list) -> SaliencyMap:
    """Element-wise mean of same-shape maps, then min-max renormalized."""
    if not maps:
        raise ValueError("average_maps requires a nonempty list")
    shape = maps[0].shape
    for m in maps:
        if m.shape != shape:
            raise ValueError(f"shape mismatch: {m.shape} vs {shape}")
    mean = np.mean([m.values for m in maps], axis=0)
    return SaliencyMap(values=_minmax(mean), source=maps[0].source,
                       class_index=maps[0].class_index)


def save_saliency_png(m: SaliencyMap, path, config=None) -> Path:
    """Write the map as 8-bit grayscale PNG plus a JSON sidecar."""
    path = Path(path)
    Image.fromarray(normalize_scale_255(m), mode="L").save(path)
    sidecar = {"source": m.source, "class_index": m.class_index}
    if config is not None:
        sidecar["config"] = asdict(config) if hasattr(config, "__dataclass_fields__") else config
    path.with_suffix(".json").write_text(json.dumps(sidecar, indent=2) + "\n")
    return path
