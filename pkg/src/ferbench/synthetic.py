"""Schematic face generator with per-class geometry and ground-truth regions.

Each expression class is a documented (brow, eye, mouth) parameter triple;
the ground-truth discriminative region of an image is the union of the
feature regions whose parameters differ from the neutral triple.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .labels import LABELS
from .stimuli import StimulusImage


@dataclass(frozen=True)
class FaceParams:
    """Geometry knobs, all as fractions of image size except angles (degrees)."""

    brow_angle: float = 0.0     # >0 tilts inner brow ends down toward the nose
    brow_raise: float = 0.0     # vertical offset above the resting height
    brow_weight: float = 1.0    # thickness multiplier (knitted brows read heavier)
    brow_asym: float = 0.0      # one-sided raise: left brow lifts by this fraction of height
    eye_open: float = 0.5       # vertical aperture of the eyes
    eye_asym: float = 0.0       # one-sided lid droop: left aperture scaled by (1 - eye_asym)
    mouth_curve: float = 0.0    # >0 corners up (smile), <0 corners down
    mouth_open: float = 0.08    # vertical opening at the mouth center
    mouth_width: float = 0.30   # half-width
    mouth_asym: float = 0.0     # one-sided corner raise


CLASS_PARAMS = {
    "neutral":  FaceParams(eye_open=0.45, mouth_open=0.05, mouth_width=0.28),
    "happy":    FaceParams(eye_open=0.38, mouth_curve=0.95, mouth_open=0.50, mouth_width=0.42),
    "sad":      FaceParams(brow_angle=-35.0, brow_raise=0.012, eye_open=0.34,
                           mouth_curve=-0.85, mouth_open=0.18, mouth_width=0.30),
    "surprise": FaceParams(brow_raise=0.065, eye_open=1.00, mouth_open=0.78, mouth_width=0.16),
    "fear":     FaceParams(brow_angle=-18.0, brow_raise=0.05, eye_open=0.85,
                           mouth_curve=-0.35, mouth_open=0.38, mouth_width=0.46),
    "disgust":  FaceParams(brow_angle=15.0, brow_raise=-0.01, brow_weight=1.3, eye_open=0.14,
                           mouth_curve=-0.60, mouth_open=0.26, mouth_width=0.22),
    "anger":    FaceParams(brow_angle=35.0, brow_raise=-0.035, brow_weight=1.7, eye_open=0.18,
                           mouth_curve=-0.10, mouth_open=0.02, mouth_width=0.44),
    "contempt": FaceParams(brow_asym=0.9, eye_open=0.38, eye_asym=0.65, mouth_curve=0.15,
                           mouth_asym=1.00, mouth_open=0.07),
}

_BROW_FIELDS = ("brow_angle", "brow_raise", "brow_weight", "brow_asym")
_EYE_FIELDS = ("eye_open", "eye_asym")
_MOUTH_FIELDS = ("mouth_curve", "mouth_open", "mouth_width", "mouth_asym")

_SKIN = np.array([0.93, 0.78, 0.64])
_BACKGROUND = np.array([0.84, 0.86, 0.90])
_BROW = np.array([0.25, 0.16, 0.10])
_SCLERA = np.array([0.98, 0.98, 0.97])
_IRIS = np.array([0.18, 0.12, 0.35])
_LIP = np.array([0.62, 0.22, 0.22])
_MOUTH_INNER = np.array([0.25, 0.08, 0.08])


def differing_features(label: str) -> set:
    """Feature groups whose class parameters differ from neutral."""
    base = CLASS_PARAMS["neutral"]
    p = CLASS_PARAMS[label]
    groups = set()
    if any(getattr(p, f) != getattr(base, f) for f in _BROW_FIELDS):
        groups.add("brows")
    if any(getattr(p, f) != getattr(base, f) for f in _EYE_FIELDS):
        groups.add("eyes")
    if any(getattr(p, f) != getattr(base, f) for f in _MOUTH_FIELDS):
        groups.add("mouth")
    return groups


def _jitter(p: FaceParams, rng) -> FaceParams:
    return replace(
        p,
        brow_angle=p.brow_angle + rng.uniform(-3.0, 3.0),
        brow_raise=p.brow_raise + rng.uniform(-0.004, 0.004),
        brow_weight=float(np.clip(p.brow_weight + rng.uniform(-0.08, 0.08), 0.7, 2.2)),
        brow_asym=p.brow_asym + rng.uniform(-0.05, 0.05),
        eye_open=float(np.clip(p.eye_open + rng.uniform(-0.04, 0.04), 0.12, 1.0)),
        eye_asym=float(np.clip(p.eye_asym + rng.uniform(-0.03, 0.03), 0.0, 0.9)),
        mouth_curve=p.mouth_curve + rng.uniform(-0.05, 0.05),
        mouth_open=float(np.clip(p.mouth_open + rng.uniform(-0.015, 0.015), 0.02, 0.8)),
        mouth_width=float(np.clip(p.mouth_width + rng.uniform(-0.015, 0.015), 0.1, 0.5)),
        mouth_asym=p.mouth_asym + rng.uniform(-0.04, 0.04),
    )


def render_face(p: FaceParams, size: int, rng) -> tuple[np.ndarray, dict]:
    """Rasterize one face; returns (pixels [S,S,3], feature-region masks)."""
    s = float(size)
    yy, xx = np.mgrid[0:size, 0:size].astype(np.float64)
    cx = (0.5 + rng.uniform(-0.015, 0.015)) * s
    cy = (0.52 + rng.uniform(-0.015, 0.015)) * s
    skin = np.clip(_SKIN + rng.uniform(-0.04, 0.04, size=3), 0, 1)
    background = np.clip(_BACKGROUND + rng.uniform(-0.03, 0.03, size=3), 0, 1)

    img = np.empty((size, size, 3))
    img[:] = background

    def ellipse(ecx, ecy, rx, ry):
        return ((xx - ecx) / rx) ** 2 + ((yy - ecy) / ry) ** 2 <= 1.0

    head = ellipse(cx, cy, 0.38 * s, 0.46 * s)
    img[head] = skin

    regions = {}
    eye_dx = 0.16 * s
    eye_y = cy - 0.11 * s
    eye_rx = 0.095 * s
    eye_ry = (0.012 + 0.075 * p.eye_open) * s
    eyes = np.zeros((size, size), dtype=bool)
    for side in (-1, 1):
        ex = cx + side * eye_dx
        ry = eye_ry * (1.0 - p.eye_asym) if side < 0 else eye_ry
        ry = max(ry, 0.010 * s)
        sclera = ellipse(ex, eye_y, eye_rx, ry)
        img[sclera] = _SCLERA
        iris = ellipse(ex, eye_y, 0.034 * s, min(0.034 * s, ry * 0.9))
        img[iris] = _IRIS
        eyes |= ellipse(ex, eye_y, eye_rx * 1.25, max(eye_ry * 1.4, 0.055 * s))
    regions["eyes"] = eyes

    brow_y = eye_y - (0.075 + p.brow_raise) * s
    brow_half = 0.115 * s
    brow_th = 0.022 * s * p.brow_weight
    slope = np.tan(np.deg2rad(p.brow_angle))
    brows = np.zeros((size, size), dtype=bool)
    for side in (-1, 1):
        ex = cx + side * eye_dx
        t = (xx - ex) / brow_half
        side_y = brow_y - (p.brow_asym * 0.045 * s if side < 0 else 0.0)
        # inner end is the nose side: positive angle drops it for that side
        line_y = side_y - side * slope * (xx - ex)
        seg = (np.abs(t) <= 1.0) & (np.abs(yy - line_y) <= brow_th)
        img[seg] = _BROW
        brows |= (np.abs(t) <= 1.15) & (np.abs(yy - line_y) <= brow_th + 0.035 * s)
    regions["brows"] = brows

    mouth_y = cy + 0.24 * s
    mrx = p.mouth_width * s
    t = np.clip((xx - cx) / mrx, -1.5, 1.5)
    curve_px = 0.10 * p.mouth_curve * s
    asym_px = 0.08 * p.mouth_asym * s
    center_y = mouth_y + curve_px * (t * t - 0.5) - asym_px * t
    lip_px = 0.024 * s
    open_px = 0.5 * p.mouth_open * 0.40 * s
    half_th = np.maximum(lip_px, open_px * (1.0 - t * t)) * (
        1.0 + 0.35 * p.mouth_asym * t + 0.25 * abs(p.mouth_asym))
    inside = (np.abs(t) < 1.0) & (np.abs(yy - center_y) <= half_th)
    img[inside] = _LIP
    if p.mouth_open > 0.15:
        inner = (np.abs(t) < 0.8) & (np.abs(yy - center_y) <= (half_th - lip_px))
        img[inner] = _MOUTH_INNER
    regions["mouth"] = (np.abs(t) <= 1.2) & (np.abs(yy - mouth_y) <= np.abs(curve_px) + open_px + np.abs(asym_px) + 0.06 * s)

    return np.clip(img, 0.0, 1.0), regions


def generate_synthetic_dataset(n_per_class: int, size: int = 64, seed: int = 0) -> list[StimulusImage]:
    """Render n_per_class faces per expression with ground-truth regions.

    False labels rotate deterministically through the other seven classes so
    that all 56 ordered (true, false) pairs occur once n_per_class >= 7.
    """
    if size < 32:
        raise ValueError(f"size must be >= 32, got {size}")
    master = np.random.default_rng(seed)
    offsets = {label: int(master.integers(0, 7)) for label in LABELS}
    images = []
    for label in LABELS:
        others = [l for l in LABELS if l != label]
        for j in range(n_per_class):
            rng = np.random.default_rng((seed, LABELS.index(label), j))
            params = _jitter(CLASS_PARAMS[label], rng)
            pixels, regions = render_face(params, size, rng)
            gt = np.zeros((size, size), dtype=bool)
            for group in differing_features(label):
                gt |= regions[group]
            false_label = others[(j + offsets[label]) % 7]
            images.append(StimulusImage(
                id=f"{label}_{j:04d}",
                pixels=pixels,
                true_label=label,
                false_label=false_label,
                gt_region=gt,
            ))
    return images
