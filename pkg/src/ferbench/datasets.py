"""Stimulus set persistence: PNG images plus a JSONL manifest."""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np
from PIL import Image

from .labels import validate_label
from .stimuli import StimulusImage


def _to_uint8(pixels: np.ndarray) -> np.ndarray:
    return np.floor(np.clip(pixels, 0.0, 1.0) * 255.0 + 0.5).astype(np.uint8)


def save_stimulus_set(images: list[StimulusImage], root) -> Path:
    """Write PNGs plus manifest.jsonl under root; returns the manifest path."""
    root = Path(root)
    root.mkdir(parents=True, exist_ok=True)
    manifest = root / "manifest.jsonl"
    with open(manifest, "w") as fh:
        for img in images:
            file_name = f"{img.id}.png"
            Image.fromarray(_to_uint8(img.pixels)).save(root / file_name)
            record = {
                "id": img.id,
                "file": file_name,
                "true_label": img.true_label,
                "false_label": img.false_label,
            }
            if img.gt_region is not None:
                gt_name = f"{img.id}_gt.png"
                Image.fromarray(img.gt_region.astype(np.uint8) * 255).save(root / gt_name)
                record["gt_file"] = gt_name
            fh.write(json.dumps(record) + "\n")
    return manifest


def load_stimulus_set(root) -> list[StimulusImage]:
    """Read a manifest.jsonl stimulus set written by save_stimulus_set."""
    root = Path(root)
    manifest = root / "manifest.jsonl"
    if not manifest.exists():
        raise FileNotFoundError(f"no manifest.jsonl under {root}")
    images = []
    with open(manifest) as fh:
        for line_no, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                record = json.loads(line)
            except json.JSONDecodeError as exc:
                raise ValueError(f"{manifest}:{line_no}: invalid JSON: {exc}") from exc
            for key in ("id", "file", "true_label", "false_label"):
                if key not in record:
                    raise ValueError(f"{manifest}:{line_no}: missing field {key!r}")
            validate_label(record["true_label"])
            validate_label(record["false_label"])
            arr = np.asarray(Image.open(root / record["file"]).convert("RGB"), dtype=np.float64)
            pixels = arr / 255.0
            gt = None
            if "gt_file" in record:
                g = np.asarray(Image.open(root / record["gt_file"]).convert("L"))
                gt = g >= 128
            images.append(StimulusImage(
                id=record["id"],
                pixels=pixels,
                true_label=record["true_label"],
                false_label=record["false_label"],
                gt_region=gt,
            ))
    return images


def undersample_pair(images: list[StimulusImage], label_a: str, label_b: str,
                     seed: int = 0) -> list[StimulusImage]:
    """Balance the two classes by random undersampling of the larger one.

    Keeps original relative order of the survivors; deterministic in seed.
    """
    validate_label(label_a)
    validate_label(label_b)
    if label_a == label_b:
        raise ValueError("undersample_pair requires two distinct labels")
    group_a = [im for im in images if im.true_label == label_a]
    group_b = [im for im in images if im.true_label == label_b]
    if not group_a or not group_b:
        raise ValueError(f"need images of both {label_a!r} and {label_b!r}")
    n = min(len(group_a), len(group_b))
    rng = np.random.default_rng(seed)

    def pick(group):
        if len(group) == n:
            return list(group)
        keep = rng.choice(len(group), size=n, replace=False)
        keep_set = set(int(k) for k in keep)
        return [im for i, im in enumerate(group) if i in keep_set]

    kept = {im.id for im in pick(group_a)} | {im.id for im in pick(group_b)}
    return [im for im in images if im.id in kept]
