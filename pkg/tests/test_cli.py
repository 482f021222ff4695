"""Pipeline CLI: the smoke pipeline, artifact counts, reproducibility,
config handling, and exit codes."""

import json
import subprocess
import sys
from pathlib import Path

import pytest

from ferbench.cli import PipelineConfig, load_pipeline_config, main
from ferbench.labels import LABELS
from ferbench.reports import read_confusion_csv, read_dice_csv
from ferbench.training import all_pair_specs

SCRIPT = Path(__file__).resolve().parent.parent / "scripts" / "simulate_participant.py"

TINY = ["--set", "data.per_class=8", "--set", "data.heldout_per_class=7",
        "--set", "data.size=32", "--set", "train.batch_size=8",
        "--set", "train.epoch_cap=1", "--set", "train.multiclass_epochs=1",
        "--set", "ep.iterations=6", "--set", "finetune.epochs=1"]


@pytest.fixture(scope="module")
def workspace(tmp_path_factory):
    """A work dir taken through synth-data, training, and one scripted session."""
    work = tmp_path_factory.mktemp("cliwork")
    flags = ["--set", f"work_dir={work}", *TINY]
    assert main([*flags, "synth-data"]) == 0
    assert main([*flags, "train-pairs", "--workers", "1"]) == 0
    assert main([*flags, "train-multiclass"]) == 0
    proc = subprocess.run([sys.executable, str(SCRIPT), *flags,
                           "--session-seed", "1", "--behavior-seed", "2"],
                          capture_output=True, text=True)
    assert proc.returncode == 0, proc.stderr
    return work, flags


class TestSynthData:
    def test_artifacts(self, workspace):
        work, _ = workspace
        assert (work / "data" / "train" / "manifest.jsonl").exists()
        assert (work / "data" / "heldout" / "manifest.jsonl").exists()
        meta = json.loads((work / "data" / "meta.json").read_text())
        assert meta["train"]["n"] == 8 * 8
        assert meta["heldout"]["n"] == 7 * 8
        assert meta["heldout"]["seed"] == meta["train"]["seed"] + 1
        assert len(meta["provenance"]["config_hash"]) == 12


class TestTrainPairs:
    def test_report_covers_all_pairs(self, workspace):
        work, _ = workspace
        report = json.loads(
            (work / "checkpoints" / "pairs" / "training_report.json").read_text())
        assert [e["index"] for e in report["pairs"]] == list(range(28))
        for entry in report["pairs"]:
            assert (work / "checkpoints" / "pairs" / entry["checkpoint"]).exists()
            assert "wall_s" not in entry  # timings live in the log, not the report

    def test_wall_times_in_log(self, workspace):
        work, _ = workspace
        log = (work / "checkpoints" / "pairs" / "training.log").read_text()
        assert len(log.splitlines()) == 28


@pytest.fixture(scope="module")
def eval_results(workspace, tmp_path_factory):
    _, flags = workspace
    out = tmp_path_factory.mktemp("eval")
    assert main([*flags, "evaluate", "--out", str(out)]) == 0
    return out


@pytest.fixture(scope="module")
def compare_results(workspace, tmp_path_factory):
    _, flags = workspace
    out = tmp_path_factory.mktemp("cmp")
    assert main([*flags, "compare", "--out", str(out)]) == 0
    return out


class TestEvaluate:
    @pytest.fixture
    def results(self, eval_results):
        return eval_results

    def test_exactly_28_pair_reports(self, results):
        assert len(list((results / "pair_reports").glob("*.json"))) == 28

    def test_two_ensemble_matrices_plus_multiclass(self, results):
        names = sorted(p.name for p in results.glob("confusion_*.csv"))
        assert names == ["confusion_multiclass.csv", "confusion_simple.csv",
                         "confusion_weighted.csv"]
        for name in names:
            cm = read_confusion_csv(results / name)
            assert cm.counts.sum() == 7 * 8  # every held-out image tallied once

    def test_correlations_and_summary(self, results):
        stats = json.loads((results / "correlations.json").read_text())
        assert set(stats["matrix_correlations"]) == {
            "simple_vs_weighted", "simple_vs_multiclass", "weighted_vs_multiclass"}
        summary = json.loads((results / "summary.json").read_text())
        assert set(summary["accuracy"]) == {"simple", "weighted", "multiclass"}
        for acc in summary["accuracy"].values():
            assert 0.0 <= acc <= 1.0

    def test_heatmaps_rendered(self, results):
        assert len(list(results.glob("confusion_*.png"))) == 3

    def test_rerun_byte_identical(self, workspace, results, tmp_path_factory):
        _, flags = workspace
        again = tmp_path_factory.mktemp("eval2")
        assert main([*flags, "evaluate", "--out", str(again)]) == 0
        for path in sorted(results.rglob("*")):
            if path.suffix == ".png" or path.is_dir():
                continue
            twin = again / path.relative_to(results)
            assert twin.read_bytes() == path.read_bytes(), path.name


class TestCompare:
    @pytest.fixture
    def results(self, compare_results):
        return compare_results

    def test_dice_table_three_methods_by_28_pairs(self, results):
        rows = read_dice_csv(results / "dice.csv")
        assert len(rows) == 84
        pairs = {str(s) for s in all_pair_specs()}
        seen = {(p, m) for p, m, _ in rows}
        assert seen == {(p, m) for p in pairs for m in ("cam", "gradcam", "ep")}
        assert all(0.0 <= v <= 1.0 for _, _, v in rows)

    def test_stats_json(self, results):
        stats = json.loads((results / "comparison_stats.json").read_text())
        assert stats["anova"]["df"] == [2, 81]
        assert len(stats["tukey"]) == 3
        comparisons = {t["comparison"] for t in stats["tukey"]}
        assert comparisons == {"cam-vs-ep", "cam-vs-gradcam", "ep-vs-gradcam"}

    def test_boxplot_rendered(self, results):
        assert (results / "dice_boxplot.png").stat().st_size > 1000

    def test_rerun_byte_identical(self, workspace, results, tmp_path_factory):
        _, flags = workspace
        again = tmp_path_factory.mktemp("cmp2")
        assert main([*flags, "compare", "--out", str(again)]) == 0
        for name in ("dice.csv", "comparison_stats.json"):
            assert (again / name).read_bytes() == (results / name).read_bytes()


class TestFinetuneCommand:
    def test_finetunes_every_covered_pair(self, workspace, tmp_path_factory):
        work, flags = workspace
        assert main([*flags, "finetune"]) == 0
        report = json.loads(
            (work / "checkpoints" / "finetuned" / "training_report.json").read_text())
        assert len(report["pairs"]) == 28  # the scripted session covers all pairs
        out = tmp_path_factory.mktemp("evalft")
        assert main([*flags, "evaluate", "--finetuned", "--out", str(out)]) == 0
        summary = json.loads((out / "summary.json").read_text())
        assert summary["checkpoints"].endswith("finetuned")


class TestSaliencyCommand:
    def test_maps_for_selected_stimuli(self, workspace, tmp_path_factory):
        _, flags = workspace
        out = tmp_path_factory.mktemp("sal")
        assert main([*flags, "saliency", "--count", "2", "--out", str(out)]) == 0
        pngs = sorted(p.name for p in (out / "saliency").glob("*.png"))
        assert len(pngs) == 6  # 2 stimuli x 3 methods
        sidecar = json.loads(next((out / "saliency").glob("*_cam.json")).read_text())
        assert len(sidecar["config"]["config_hash"]) == 12

    def test_single_method_by_id(self, workspace, tmp_path_factory):
        _, flags = workspace
        out = tmp_path_factory.mktemp("sal1")
        assert main([*flags, "saliency", "--method", "gradcam",
                     "--stimulus", "happy_0003", "--out", str(out)]) == 0
        assert [p.name for p in (out / "saliency").glob("*.png")] \
            == ["happy_0003_gradcam.png"]

    def test_unknown_stimulus_is_data_error(self, workspace, tmp_path_factory):
        _, flags = workspace
        out = tmp_path_factory.mktemp("sal2")
        assert main([*flags, "saliency", "--stimulus", "nope_0000",
                     "--out", str(out)]) == 2


class TestReportCommand:
    def test_rerenders_figures(self, workspace, tmp_path_factory):
        _, flags = workspace
        out = tmp_path_factory.mktemp("rerender")
        assert main([*flags, "evaluate", "--out", str(out)]) == 0
        for png in out.glob("*.png"):
            png.unlink()
        assert main([*flags, "report", "--results", str(out)]) == 0
        assert len(list(out.glob("confusion_*.png"))) == 3

    def test_empty_dir_is_data_error(self, workspace, tmp_path_factory, capsys):
        _, flags = workspace
        out = tmp_path_factory.mktemp("blank")
        assert main([*flags, "report", "--results", str(out)]) == 2
        assert "evaluate" in capsys.readouterr().err


class TestServeCommand:
    def test_maps_config_onto_service(self, workspace, monkeypatch):
        work, flags = workspace
        captured = {}
        monkeypatch.setattr("ferbench.service.serve",
                            lambda cfg: captured.update(cfg=cfg))
        assert main([*flags, "serve", "--port", "9123"]) == 0
        cfg = captured["cfg"]
        assert cfg.port == 9123
        assert cfg.stimulus_path == str(work / "data" / "heldout")
        assert cfg.results_dir == str(work / "sessions")
        assert cfg.block_count == 4


class TestConfigHandling:
    def test_toml_file_and_flag_precedence(self, tmp_path):
        cfg_file = tmp_path / "pipe.toml"
        cfg_file.write_text('work_dir = "w"\n[data]\nseed = 3\nper_class = 9\n')
        cfg = load_pipeline_config(cfg_file, ["data.seed=5"])
        assert cfg.data_seed == 5      # flag wins
        assert cfg.per_class == 9      # file survives
        assert cfg.work_dir == "w"

    def test_json_file(self, tmp_path):
        cfg_file = tmp_path / "pipe.json"
        cfg_file.write_text(json.dumps({"train": {"lr": 0.01, "batch_size": 4}}))
        cfg = load_pipeline_config(cfg_file)
        assert cfg.lr == 0.01 and cfg.batch_size == 4

    def test_unknown_file_key_is_data_error(self, tmp_path, capsys):
        cfg_file = tmp_path / "pipe.toml"
        cfg_file.write_text("[data]\nbogus = 1\n")
        assert main(["--config", str(cfg_file), "synth-data"]) == 2
        assert "bogus" in capsys.readouterr().err

    def test_missing_config_file(self, tmp_path):
        assert main(["--config", str(tmp_path / "nope.toml"), "synth-data"]) == 2

    def test_bad_override_key(self):
        assert main(["--set", "nope=1", "synth-data"]) == 1

    def test_bad_value_rejected(self):
        assert main(["--set", "train.lr=-1", "synth-data"]) == 1

    def test_unknown_command(self):
        assert main(["frobnicate"]) == 1

    def test_scaled_reveal_radius(self):
        assert PipelineConfig(image_size=224).radius == 20.0
        assert PipelineConfig(image_size=64).radius == 6.0
        assert PipelineConfig(image_size=32).radius == 3.0
        assert PipelineConfig(reveal_radius=11.5).radius == 11.5


class TestMissingArtifactMessages:
    def test_training_before_data(self, tmp_path, capsys):
        flags = ["--set", f"work_dir={tmp_path}"]
        assert main([*flags, "train-pairs"]) == 2
        assert "synth-data" in capsys.readouterr().err

    def test_evaluate_before_training(self, tmp_path, capsys):
        flags = ["--set", f"work_dir={tmp_path}", *TINY]
        assert main([*flags, "synth-data"]) == 0
        assert main([*flags, "evaluate", "--out", str(tmp_path / "r")]) == 2
        assert "train-pairs" in capsys.readouterr().err

    def test_compare_without_sessions(self, workspace, tmp_path, capsys):
        work, flags = workspace
        stash = work / "sessions_stash"
        (work / "sessions").rename(stash)
        try:
            assert main([*flags, "compare", "--out", str(tmp_path / "c")]) == 2
            assert "serve" in capsys.readouterr().err
        finally:
            stash.rename(work / "sessions")

    def test_finetune_with_missing_export(self, workspace, tmp_path, capsys):
        _, flags = workspace
        assert main([*flags, "finetune", "--exports",
                     str(tmp_path / "ghost.jsonl")]) == 2
        assert "export" in capsys.readouterr().err


class TestNumericFailureExitCode:
    def test_training_runtime_error_maps_to_3(self, workspace, monkeypatch, capsys):
        _, flags = workspace

        def boom(*a, **k):
            raise RuntimeError("loss diverged")

        monkeypatch.setattr("ferbench.cli.train_pair", boom)
        assert main([*flags, "train-pairs", "--workers", "1"]) == 3
        assert "diverged" in capsys.readouterr().err

    def test_nonfinite_saliency_maps_to_3(self, workspace, monkeypatch,
                                          tmp_path, capsys):
        import numpy as np

        from ferbench.saliency import SaliencyMap
        _, flags = workspace
        bad = SaliencyMap(values=np.full((4, 4), np.nan), source="cam",
                          class_index=0, normalized=False)
        monkeypatch.setitem(__import__("ferbench.cli", fromlist=["x"])._METHOD_FNS,
                            "cam", lambda *a, **k: bad)
        assert main([*flags, "saliency", "--method", "cam", "--count", "1",
                     "--out", str(tmp_path)]) == 3
        assert "non-finite" in capsys.readouterr().err
