"""Tests for stimulus-set persistence and pair undersampling."""

import json

import numpy as np
import pytest

from ferbench.datasets import _to_uint8, load_stimulus_set, save_stimulus_set, undersample_pair
from ferbench.stimuli import StimulusImage
from ferbench.synthetic import generate_synthetic_dataset


def make_image(idx, true_label="happy", false_label="sad", gt=False, h=8, w=8):
    rng = np.random.default_rng(idx)
    pixels = rng.uniform(0.0, 1.0, size=(h, w, 3))
    gt_region = None
    if gt:
        gt_region = np.zeros((h, w), dtype=bool)
        gt_region[2:5, 3:6] = True
    return StimulusImage(id=f"{true_label}_{idx:04d}", pixels=pixels,
                         true_label=true_label, false_label=false_label,
                         gt_region=gt_region)


class TestUint8Conversion:
    def test_half_up_rounding(self):
        vals = np.array([[0.0, 1.0 / 255.0, 0.4999 / 255.0, 0.5 / 255.0, 1.0]])
        out = _to_uint8(vals[..., None].repeat(3, axis=-1))
        np.testing.assert_array_equal(out[0, :, 0], [0, 1, 0, 1, 255])

    def test_matches_formula_on_grid(self):
        vals = np.linspace(0.0, 1.0, 257)[None, :, None].repeat(3, axis=2)
        expected = np.floor(vals * 255.0 + 0.5).astype(np.uint8)
        np.testing.assert_array_equal(_to_uint8(vals), expected)


class TestSaveLoadRoundTrip:
    def test_round_trip_preserves_everything(self, tmp_path):
        images = generate_synthetic_dataset(2, size=32, seed=3)
        save_stimulus_set(images, tmp_path)
        loaded = load_stimulus_set(tmp_path)
        assert [im.id for im in loaded] == [im.id for im in images]
        for orig, back in zip(images, loaded):
            assert back.true_label == orig.true_label
            assert back.false_label == orig.false_label
            # pixels go through 8-bit quantization once
            np.testing.assert_allclose(back.pixels, orig.pixels, atol=0.5 / 255.0 + 1e-9)
            np.testing.assert_array_equal(back.gt_region, orig.gt_region)

    def test_round_trip_without_gt(self, tmp_path):
        images = [make_image(0), make_image(1, "sad", "anger")]
        save_stimulus_set(images, tmp_path)
        loaded = load_stimulus_set(tmp_path)
        assert all(im.gt_region is None for im in loaded)

    def test_manifest_is_jsonl_with_required_fields(self, tmp_path):
        images = [make_image(0, gt=True)]
        manifest = save_stimulus_set(images, tmp_path)
        lines = manifest.read_text().strip().split("\n")
        assert len(lines) == 1
        record = json.loads(lines[0])
        assert set(record) == {"id", "file", "true_label", "false_label", "gt_file"}
        assert (tmp_path / record["file"]).exists()
        assert (tmp_path / record["gt_file"]).exists()

    def test_loaded_pixels_are_unit_range(self, tmp_path):
        save_stimulus_set([make_image(5)], tmp_path)
        im = load_stimulus_set(tmp_path)[0]
        assert im.pixels.min() >= 0.0 and im.pixels.max() <= 1.0


class TestLoadValidation:
    def test_missing_manifest(self, tmp_path):
        with pytest.raises(FileNotFoundError):
            load_stimulus_set(tmp_path)

    def test_invalid_json_reports_line_number(self, tmp_path):
        save_stimulus_set([make_image(0)], tmp_path)
        with open(tmp_path / "manifest.jsonl", "a") as fh:
            fh.write("{not json\n")
        with pytest.raises(ValueError, match=":2:"):
            load_stimulus_set(tmp_path)

    def test_missing_field_rejected(self, tmp_path):
        save_stimulus_set([make_image(0)], tmp_path)
        manifest = tmp_path / "manifest.jsonl"
        record = json.loads(manifest.read_text())
        del record["false_label"]
        manifest.write_text(json.dumps(record) + "\n")
        with pytest.raises(ValueError, match="false_label"):
            load_stimulus_set(tmp_path)

    def test_unknown_label_rejected(self, tmp_path):
        save_stimulus_set([make_image(0)], tmp_path)
        manifest = tmp_path / "manifest.jsonl"
        record = json.loads(manifest.read_text())
        record["true_label"] = "bored"
        manifest.write_text(json.dumps(record) + "\n")
        with pytest.raises(ValueError):
            load_stimulus_set(tmp_path)


class TestUndersamplePair:
    def _mixed_set(self):
        images = [make_image(i, "happy", "sad") for i in range(6)]
        images += [make_image(i + 10, "sad", "happy") for i in range(4)]
        images += [make_image(i + 20, "anger", "fear") for i in range(3)]
        return images

    def test_balances_to_smaller_class(self):
        out = undersample_pair(self._mixed_set(), "happy", "sad", seed=0)
        counts = {lab: sum(1 for im in out if im.true_label == lab) for lab in ("happy", "sad")}
        assert counts == {"happy": 4, "sad": 4}
        assert all(im.true_label in ("happy", "sad") for im in out)

    def test_preserves_original_order(self):
        images = self._mixed_set()
        out = undersample_pair(images, "happy", "sad", seed=1)
        positions = [images.index(im) for im in out]
        assert positions == sorted(positions)

    def test_deterministic_in_seed(self):
        images = self._mixed_set()
        a = undersample_pair(images, "happy", "sad", seed=7)
        b = undersample_pair(images, "happy", "sad", seed=7)
        assert [im.id for im in a] == [im.id for im in b]

    def test_equal_classes_untouched(self):
        images = [make_image(i, "happy", "sad") for i in range(3)]
        images += [make_image(i + 10, "sad", "happy") for i in range(3)]
        out = undersample_pair(images, "happy", "sad", seed=0)
        assert [im.id for im in out] == [im.id for im in images]

    def test_same_labels_rejected(self):
        with pytest.raises(ValueError):
            undersample_pair(self._mixed_set(), "happy", "happy")

    def test_missing_label_rejected(self):
        with pytest.raises(ValueError):
            undersample_pair(self._mixed_set(), "happy", "contempt")
