"""Command-line pipeline: data generation through training, saliency,
human-vs-model comparison, reporting, and the experiment server.

One config file (TOML or JSON) drives everything; flags override single
values. Every analytic output embeds the resolved config hash and the seeds,
and re-running a command with unchanged inputs reproduces CSV/JSON outputs
byte for byte (figures and stimulus PNGs are excluded from that guarantee).

Exit codes: 0 success, 1 usage error, 2 data error (missing or malformed
inputs), 3 numeric failure during optimization.
"""

import argparse
import concurrent.futures
import json
import os
import sys
import time
from dataclasses import dataclass, fields, replace
from pathlib import Path

import numpy as np

from .analytics import aggregate_click_attention, confusion, dice, matrix_correlation
from .datasets import load_stimulus_set, save_stimulus_set
from .labels import LABELS
from .network import load_checkpoint, save_checkpoint
from .records import read_trials_jsonl
from .reports import (config_hash, read_confusion_csv, read_dice_csv,
                      save_confusion_heatmap, save_dice_boxplot,
                      stats_result_dict, write_confusion_csv, write_dice_csv,
                      write_stats_json)
from .saliency import (EPConfig, average_maps, cam, extremal_perturbation,
                       gradcam, normalize_scale_255, save_saliency_png,
                       threshold_mask)
from .stats import one_way_anova, tukey_pairwise
from .stimuli import ClickMask
from .synthetic import generate_synthetic_dataset
from .training import (PairSpec, StopRule, TrainConfig, TrainedClassifier,
                       all_pair_specs, finetune_masked, train_accuracy,
                       train_multiclass, train_pair)
from .voting import ensemble_logit_pairs, vote_tally

SALIENCY_METHODS = ("cam", "gradcam", "ep")

_METHOD_FNS = {"cam": cam, "gradcam": gradcam, "ep": extremal_perturbation}


class UsageError(Exception):
    """Bad invocation; maps to exit code 1."""


class DataError(Exception):
    """Missing or malformed inputs; maps to exit code 2."""


class NumericError(Exception):
    """Optimization produced no usable result; maps to exit code 3."""


@dataclass(frozen=True)
class PipelineConfig:
    """Resolved settings for every pipeline command."""

    work_dir: str = "ferbench-work"
    # data
    per_class: int = 200
    heldout_per_class: int = 50
    image_size: int = 64
    data_seed: int = 7
    # train
    batch_size: int = 16
    lr: float = 1e-4
    accuracy_threshold: float = 0.90
    epoch_cap: int = 150
    train_seed: int = 11
    multiclass_epochs: int = 40
    eval_batch: int = 128
    # extremal perturbation
    ep_area: float = 0.1
    ep_iterations: int = 300
    ep_step: float = 0.05
    ep_seed: int = 0
    # experiment
    port: int = 8765
    reveal_radius: float = 0.0   # 0 means: scale the 224px-reference radius 20
    blur_k: int = 0              # 0 means: scale the 224px-reference kernel 70
    block_count: int = 4
    stimulus_dir: str = ""       # empty means: work_dir/data/heldout
    # finetune
    finetune_ratio: float = 0.5
    finetune_epochs: int = 20

    def __post_init__(self):
        for name in ("per_class", "heldout_per_class", "image_size", "batch_size",
                     "epoch_cap", "multiclass_epochs", "eval_batch", "ep_iterations",
                     "block_count", "finetune_epochs"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1, got {getattr(self, name)}")
        if self.lr <= 0 or self.ep_step <= 0:
            raise ValueError("learning rates and step sizes must be positive")
        if not 0.0 < self.accuracy_threshold <= 1.0:
            raise ValueError(f"train.threshold must be in (0,1], got {self.accuracy_threshold}")
        if not 0.0 < self.ep_area < 1.0:
            raise ValueError(f"ep.area_fraction must be in (0,1), got {self.ep_area}")
        if not 0.0 < self.finetune_ratio <= 1.0:
            raise ValueError(f"finetune.ratio must be in (0,1], got {self.finetune_ratio}")
        if self.reveal_radius < 0:
            raise ValueError(f"experiment.reveal_radius must be >= 0, got {self.reveal_radius}")

    @property
    def radius(self) -> float:
        if self.reveal_radius > 0:
            return float(self.reveal_radius)
        return max(2.0, round(20.0 * self.image_size / 224.0))

    def hash(self) -> str:
        return config_hash({f.name: getattr(self, f.name) for f in fields(self)})

    def provenance(self) -> dict:
        return {"config_hash": self.hash(), "data_seed": self.data_seed,
                "train_seed": self.train_seed, "ep_seed": self.ep_seed}

    def train_config(self, stop_rule=None) -> TrainConfig:
        if stop_rule is None:
            stop_rule = StopRule.until_accuracy(self.accuracy_threshold, self.epoch_cap)
        return TrainConfig(batch_size=self.batch_size, lr=self.lr,
                           stop_rule=stop_rule, seed=self.train_seed,
                           eval_batch=self.eval_batch)

    def ep_config(self) -> EPConfig:
        return EPConfig(area_fraction=self.ep_area, iterations=self.ep_iterations,
                        step_size=self.ep_step, seed=self.ep_seed)

    # artifact locations under work_dir
    @property
    def train_dir(self) -> Path:
        return Path(self.work_dir) / "data" / "train"

    @property
    def heldout_dir(self) -> Path:
        return Path(self.work_dir) / "data" / "heldout"

    @property
    def pairs_dir(self) -> Path:
        return Path(self.work_dir) / "checkpoints" / "pairs"

    @property
    def finetuned_dir(self) -> Path:
        return Path(self.work_dir) / "checkpoints" / "finetuned"

    @property
    def multiclass_ckpt(self) -> Path:
        return Path(self.work_dir) / "checkpoints" / "multiclass.ckpt"

    @property
    def sessions_dir(self) -> Path:
        return Path(self.work_dir) / "sessions"

    @property
    def experiment_stimuli(self) -> Path:
        return Path(self.stimulus_dir) if self.stimulus_dir else self.heldout_dir


_CONFIG_KEYS = {
    "work_dir": "work_dir",
    "data.per_class": "per_class",
    "data.heldout_per_class": "heldout_per_class",
    "data.size": "image_size",
    "data.seed": "data_seed",
    "train.batch_size": "batch_size",
    "train.lr": "lr",
    "train.threshold": "accuracy_threshold",
    "train.epoch_cap": "epoch_cap",
    "train.seed": "train_seed",
    "train.multiclass_epochs": "multiclass_epochs",
    "train.eval_batch": "eval_batch",
    "ep.area_fraction": "ep_area",
    "ep.iterations": "ep_iterations",
    "ep.step_size": "ep_step",
    "ep.seed": "ep_seed",
    "experiment.port": "port",
    "experiment.reveal_radius": "reveal_radius",
    "experiment.blur_k": "blur_k",
    "experiment.block_count": "block_count",
    "experiment.stimulus_dir": "stimulus_dir",
    "finetune.ratio": "finetune_ratio",
    "finetune.epochs": "finetune_epochs",
}


def _flatten_config_doc(doc: dict) -> dict:
    flat = {}
    for key, value in doc.items():
        if isinstance(value, dict):
            for sub, v in value.items():
                flat[f"{key}.{sub}"] = v
        else:
            flat[key] = value
    return flat


def load_pipeline_config(path=None, overrides=()) -> PipelineConfig:
    """Build the config from an optional TOML/JSON file plus key=value overrides."""
    values = {}
    if path is not None:
        path = Path(path)
        if not path.exists():
            raise DataError(f"config file not found: {path}")
        if path.suffix == ".toml":
            try:
                import tomllib
            except ModuleNotFoundError:
                import tomli as tomllib
            with open(path, "rb") as fh:
                doc = tomllib.load(fh)
        elif path.suffix == ".json":
            with open(path) as fh:
                doc = json.load(fh)
        else:
            raise DataError(f"config must be .toml or .json, got {path.name}")
        for key, value in _flatten_config_doc(doc).items():
            if key not in _CONFIG_KEYS:
                raise DataError(f"{path}: unknown config key {key!r}")
            values[_CONFIG_KEYS[key]] = value
    for item in overrides:
        key, sep, raw = item.partition("=")
        if not sep or key not in _CONFIG_KEYS:
            known = ", ".join(sorted(_CONFIG_KEYS))
            raise UsageError(f"--set expects key=value with key one of: {known}")
        try:
            values[_CONFIG_KEYS[key]] = json.loads(raw)
        except json.JSONDecodeError:
            values[_CONFIG_KEYS[key]] = raw
    try:
        return PipelineConfig(**values)
    except (TypeError, ValueError) as exc:
        raise UsageError(f"bad config value: {exc}") from exc


def _results_dir(cfg: PipelineConfig, out) -> Path:
    if out:
        path = Path(out)
    else:
        stamp = time.strftime("%Y%m%d-%H%M%S")
        path = Path(cfg.work_dir) / "results" / stamp
    path.mkdir(parents=True, exist_ok=True)
    return path


def _load_set(root: Path, producer: str):
    try:
        return load_stimulus_set(root)
    except (FileNotFoundError, ValueError) as exc:
        raise DataError(f"stimulus set not usable at {root} ({exc}); "
                        f"run `ferbench {producer}` first") from exc


def _write_json(path, payload: dict) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _pair_ckpt_name(spec: PairSpec) -> str:
    return f"pair_{spec.index:02d}_{spec.label_a}_vs_{spec.label_b}.ckpt"


def _train_one_pair(train_dir: str, index: int, cfg: TrainConfig, ckpt_path: str) -> dict:
    """Train one pair and save its checkpoint; runs in-process or in a worker."""
    data = load_stimulus_set(train_dir)
    spec = all_pair_specs()[index]
    t0 = time.monotonic()
    clf = train_pair(spec, data, replace(cfg, seed=cfg.seed ^ spec.index))
    wall = time.monotonic() - t0
    save_checkpoint(clf.net, ckpt_path)
    return {"index": spec.index, "pair": str(spec),
            "label_a": spec.label_a, "label_b": spec.label_b,
            "checkpoint": os.path.basename(ckpt_path),
            "epochs_run": clf.epochs_run, "final_train_acc": clf.final_train_acc,
            "restarts": clf.restarts, "seed": clf.seed, "wall_s": wall}


def _load_pair_classifiers(ckpt_dir: Path, producer: str) -> list:
    report_path = ckpt_dir / "training_report.json"
    if not report_path.exists():
        raise DataError(f"no pair checkpoints at {ckpt_dir}; run `ferbench {producer}` first")
    with open(report_path) as fh:
        report = json.load(fh)
    specs = all_pair_specs()
    out = []
    for entry in report["pairs"]:
        spec = specs[entry["index"]]
        path = ckpt_dir / entry["checkpoint"]
        if not path.exists():
            raise DataError(f"checkpoint missing: {path}; run `ferbench {producer}` first")
        out.append(TrainedClassifier(
            net=load_checkpoint(path), pair=spec, epochs_run=entry["epochs_run"],
            final_train_acc=entry["final_train_acc"], seed=entry["seed"],
            restarts=entry["restarts"]))
    if len(out) != len(specs):
        raise DataError(f"{report_path} covers {len(out)} of {len(specs)} pairs; "
                        f"rerun `ferbench {producer}` with inputs covering every pair")
    return out


def _load_multiclass(cfg: PipelineConfig) -> TrainedClassifier:
    path = cfg.multiclass_ckpt
    report_path = path.with_name("multiclass_report.json")
    if not path.exists() or not report_path.exists():
        raise DataError(f"no multiclass checkpoint at {path}; "
                        f"run `ferbench train-multiclass` first")
    with open(report_path) as fh:
        entry = json.load(fh)
    return TrainedClassifier(net=load_checkpoint(path), pair="multiclass",
                             epochs_run=entry["epochs_run"],
                             final_train_acc=entry["final_train_acc"],
                             seed=entry["seed"], restarts=entry["restarts"])


def _spec_for_labels(a: str, b: str) -> PairSpec:
    lo, hi = sorted((a, b), key=LABELS.index)
    return PairSpec(lo, hi)


def _finite_map(m, context: str):
    if not np.isfinite(m.values).all():
        raise NumericError(f"non-finite saliency values from {context}")
    return m


# ---------------------------------------------------------------- commands


def cmd_synth_data(cfg: PipelineConfig, args) -> int:
    train = generate_synthetic_dataset(cfg.per_class, size=cfg.image_size,
                                       seed=cfg.data_seed)
    heldout = generate_synthetic_dataset(cfg.heldout_per_class, size=cfg.image_size,
                                         seed=cfg.data_seed + 1)
    save_stimulus_set(train, cfg.train_dir)
    save_stimulus_set(heldout, cfg.heldout_dir)
    meta = {"provenance": cfg.provenance(),
            "train": {"root": str(cfg.train_dir), "n": len(train),
                      "per_class": cfg.per_class, "seed": cfg.data_seed},
            "heldout": {"root": str(cfg.heldout_dir), "n": len(heldout),
                        "per_class": cfg.heldout_per_class, "seed": cfg.data_seed + 1},
            "image_size": cfg.image_size}
    _write_json(Path(cfg.work_dir) / "data" / "meta.json", meta)
    print(f"wrote {len(train)} training and {len(heldout)} held-out stimuli "
          f"({cfg.image_size}x{cfg.image_size}) under {Path(cfg.work_dir) / 'data'}")
    return 0


def cmd_train_pairs(cfg: PipelineConfig, args) -> int:
    _load_set(cfg.train_dir, "synth-data")  # fail fast with the right message
    cfg.pairs_dir.mkdir(parents=True, exist_ok=True)
    base = cfg.train_config()
    specs = all_pair_specs()
    jobs = [(str(cfg.train_dir), spec.index, base,
             str(cfg.pairs_dir / _pair_ckpt_name(spec))) for spec in specs]
    workers = args.workers if args.workers else (os.cpu_count() or 1)
    workers = min(workers, len(jobs))
    entries = []
    try:
        if workers <= 1:
            for job in jobs:
                entries.append(_train_one_pair(*job))
                _print_pair_progress(entries[-1], len(specs))
        else:
            with concurrent.futures.ProcessPoolExecutor(max_workers=workers) as pool:
                futures = [pool.submit(_train_one_pair, *job) for job in jobs]
                for fut in concurrent.futures.as_completed(futures):
                    entries.append(fut.result())
                    _print_pair_progress(entries[-1], len(specs))
    except RuntimeError as exc:
        raise NumericError(str(exc)) from exc
    except ValueError as exc:
        raise DataError(str(exc)) from exc
    entries.sort(key=lambda e: e["index"])
    log_lines = [f"pair {e['index']:02d} {e['pair']}: {e['wall_s']:.1f}s, "
                 f"{e['epochs_run']} epochs, acc {e['final_train_acc']:.3f}, "
                 f"restarts {e['restarts']}" for e in entries]
    (cfg.pairs_dir / "training.log").write_text("\n".join(log_lines) + "\n")
    for e in entries:
        del e["wall_s"]  # wall times go to the log, keeping the report reproducible
    _write_json(cfg.pairs_dir / "training_report.json",
                {"provenance": cfg.provenance(), "pairs": entries})
    below = [e["pair"] for e in entries
             if e["final_train_acc"] < cfg.accuracy_threshold]
    if below:
        print(f"warning: {len(below)} pairs below threshold "
              f"{cfg.accuracy_threshold}: {', '.join(below)}")
    print(f"trained {len(entries)} pair classifiers into {cfg.pairs_dir}")
    return 0


def _print_pair_progress(entry: dict, total: int) -> None:
    print(f"[{entry['index'] + 1:2d}/{total}] {entry['pair']}: "
          f"acc {entry['final_train_acc']:.3f} in {entry['epochs_run']} epochs "
          f"({entry['wall_s']:.0f}s)")


def cmd_train_multiclass(cfg: PipelineConfig, args) -> int:
    data = _load_set(cfg.train_dir, "synth-data")
    train_cfg = cfg.train_config(StopRule.fixed(cfg.multiclass_epochs))
    t0 = time.monotonic()
    try:
        clf = train_multiclass(data, train_cfg)
    except RuntimeError as exc:
        raise NumericError(str(exc)) from exc
    except ValueError as exc:
        raise DataError(str(exc)) from exc
    wall = time.monotonic() - t0
    cfg.multiclass_ckpt.parent.mkdir(parents=True, exist_ok=True)
    save_checkpoint(clf.net, cfg.multiclass_ckpt)
    entry = {"provenance": cfg.provenance(), "epochs_run": clf.epochs_run,
             "final_train_acc": clf.final_train_acc, "restarts": clf.restarts,
             "seed": clf.seed}
    _write_json(cfg.multiclass_ckpt.with_name("multiclass_report.json"), entry)
    cfg.multiclass_ckpt.with_name("multiclass.log").write_text(
        f"{wall:.1f}s, {clf.epochs_run} epochs, acc {clf.final_train_acc:.3f}\n")
    print(f"multiclass classifier: train acc {clf.final_train_acc:.3f} "
          f"after {clf.epochs_run} epochs -> {cfg.multiclass_ckpt}")
    return 0


def _collect_trials(paths) -> list:
    trials = []
    for path in paths:
        try:
            trials.extend(read_trials_jsonl(path))
        except FileNotFoundError as exc:
            raise DataError(f"session export not found: {path}; run `ferbench serve`, "
                            f"complete a session, then export it") from exc
        except ValueError as exc:
            raise DataError(str(exc)) from exc
    return trials


def _export_paths(cfg: PipelineConfig, args) -> list:
    if args.exports:
        return [Path(p) for p in args.exports]
    found = sorted(cfg.sessions_dir.glob("*.jsonl")) if cfg.sessions_dir.exists() else []
    found = [p for p in found if not p.name.endswith(".journal.jsonl")]
    if not found:
        raise DataError(f"no session exports under {cfg.sessions_dir}; run `ferbench serve`, "
                        f"complete a session, export it there (or pass paths explicitly)")
    return found


def _trials_by_pair(trials) -> dict:
    grouped = {}
    for tr in trials:
        spec = _spec_for_labels(tr.true_label, tr.false_label)
        grouped.setdefault(spec.index, []).append(tr)
    return grouped


def cmd_finetune(cfg: PipelineConfig, args) -> int:
    trials = _collect_trials(_export_paths(cfg, args))
    stimuli = {im.id: im for im in _load_set(cfg.experiment_stimuli, "synth-data")}
    train_data = _load_set(cfg.train_dir, "synth-data")
    classifiers = _load_pair_classifiers(cfg.pairs_dir, "train-pairs")
    cfg.finetuned_dir.mkdir(parents=True, exist_ok=True)

    usable = [tr for tr in trials if tr.correct and tr.clicks]
    grouped = _trials_by_pair(usable)
    ft_cfg = cfg.train_config(StopRule.fixed(cfg.finetune_epochs))
    entries, skipped = [], []
    for clf in classifiers:
        spec = clf.pair
        pair_trials = grouped.get(spec.index, [])
        masked = []
        for tr in pair_trials:
            im = stimuli.get(tr.stimulus_id)
            if im is None:
                raise DataError(f"trial references stimulus {tr.stimulus_id!r} absent "
                                f"from {cfg.experiment_stimuli}; pass the stimulus set "
                                f"the session actually served")
            h, w = im.shape
            clicks = tuple((c.x, c.y) for c in tr.clicks)
            masked.append((im, ClickMask(h, w, cfg.radius, clicks)))
        if not masked:
            skipped.append(str(spec))
            continue
        unmasked = [im for im in train_data if im.true_label in spec.labels]
        try:
            tuned = finetune_masked(clf, masked, unmasked, cfg.finetune_ratio,
                                    replace(ft_cfg, seed=ft_cfg.seed ^ spec.index))
        except RuntimeError as exc:
            raise NumericError(str(exc)) from exc
        save_checkpoint(tuned.net, cfg.finetuned_dir / _pair_ckpt_name(spec))
        entries.append({"index": spec.index, "pair": str(spec),
                        "label_a": spec.label_a, "label_b": spec.label_b,
                        "checkpoint": _pair_ckpt_name(spec),
                        "epochs_run": tuned.epochs_run,
                        "final_train_acc": tuned.final_train_acc,
                        "restarts": tuned.restarts, "seed": tuned.seed,
                        "masked_trials": len(masked)})
        print(f"finetuned {spec}: {len(masked)} masked trials, "
              f"acc {tuned.final_train_acc:.3f}")
    if not entries:
        raise DataError("no pair had correct trials with clicks; nothing to finetune")
    _write_json(cfg.finetuned_dir / "training_report.json",
                {"provenance": cfg.provenance(), "pairs": entries,
                 "skipped_pairs": skipped})
    if skipped:
        print(f"skipped {len(skipped)} pairs without usable trials: {', '.join(skipped)}")
    print(f"finetuned {len(entries)} classifiers into {cfg.finetuned_dir}")
    return 0


def _batch_of(images) -> np.ndarray:
    return np.stack([im.pixels.transpose(2, 0, 1) for im in images]).astype(np.float32)


def cmd_evaluate(cfg: PipelineConfig, args) -> int:
    heldout = _load_set(cfg.heldout_dir, "synth-data")
    ckpt_dir = cfg.finetuned_dir if args.finetuned else cfg.pairs_dir
    producer = "finetune" if args.finetuned else "train-pairs"
    classifiers = _load_pair_classifiers(ckpt_dir, producer)
    multi = _load_multiclass(cfg)
    out = _results_dir(cfg, args.out)
    prov = cfg.provenance()

    # 28 per-pair reports on the held-out images of those two classes
    pair_dir = out / "pair_reports"
    pair_dir.mkdir(exist_ok=True)
    pair_accs = []
    for clf in classifiers:
        spec = clf.pair
        subset = [im for im in heldout if im.true_label in spec.labels]
        if not subset:
            raise DataError(f"held-out set has no images for pair {spec}; "
                            f"run `ferbench synth-data` first")
        X = _batch_of(subset)
        y = np.array([spec.labels.index(im.true_label) for im in subset])
        acc = train_accuracy(clf.net, X, y, cfg.eval_batch)
        pair_accs.append(acc)
        _write_json(pair_dir / f"pair_{spec.index:02d}_{spec.label_a}_vs_{spec.label_b}.json",
                    {"provenance": prov, "pair": str(spec), "index": spec.index,
                     "heldout_accuracy": acc, "n_images": len(subset),
                     "train_epochs": clf.epochs_run,
                     "final_train_acc": clf.final_train_acc,
                     "restarts": clf.restarts})

    # ensemble confusion matrices under both voting rules
    X = _batch_of(heldout)
    logit_pairs = ensemble_logit_pairs(classifiers, X, cfg.eval_batch)
    true_labels = [im.true_label for im in heldout]
    matrices, accuracies = {}, {}
    for method in ("simple", "weighted"):
        winners = [vote_tally(lp, method=method).winner for lp in logit_pairs]
        matrices[method] = confusion(list(zip(true_labels, winners)))
        accuracies[method] = float(np.mean([w == t for w, t in zip(winners, true_labels)]))

    # multiclass confusion matrix
    logits = np.concatenate([multi.net.predict_logits(X[i:i + cfg.eval_batch])
                             for i in range(0, len(X), cfg.eval_batch)])
    preds = [LABELS[k] for k in logits.argmax(axis=1)]
    matrices["multiclass"] = confusion(list(zip(true_labels, preds)))
    accuracies["multiclass"] = float(np.mean([p == t for p, t in zip(preds, true_labels)]))

    for name, cm in matrices.items():
        title = "multiclass" if name == "multiclass" else f"{name} voting"
        write_confusion_csv(out / f"confusion_{name}.csv", cm, prov)
        save_confusion_heatmap(out / f"confusion_{name}.png", cm,
                               f"{title} [{prov['config_hash']}]")

    correlations = {}
    for a, b in (("simple", "weighted"), ("simple", "multiclass"),
                 ("weighted", "multiclass")):
        try:
            correlations[f"{a}_vs_{b}"] = stats_result_dict(matrix_correlation(matrices[a], matrices[b]))
        except ValueError as exc:
            correlations[f"{a}_vs_{b}"] = {"error": str(exc)}
    write_stats_json(out / "correlations.json", {"matrix_correlations": correlations}, prov)
    _write_json(out / "summary.json",
                {"provenance": prov, "n_heldout": len(heldout),
                 "accuracy": accuracies,
                 "pair_mean_heldout_accuracy": float(np.mean(pair_accs)),
                 "checkpoints": str(ckpt_dir)})

    print(f"held-out accuracy: simple {accuracies['simple']:.3f}, "
          f"weighted {accuracies['weighted']:.3f}, "
          f"multiclass {accuracies['multiclass']:.3f} "
          f"(pair mean {float(np.mean(pair_accs)):.3f})")
    print(f"reports under {out}")
    return 0


def _select_stimuli(data, ids, count):
    if ids:
        by_id = {im.id: im for im in data}
        missing = [i for i in ids if i not in by_id]
        if missing:
            raise DataError(f"stimulus ids not in set: {', '.join(missing)}")
        return [by_id[i] for i in ids]
    ordered = sorted(data, key=lambda im: im.id)
    return ordered if count is None else ordered[:count]


def cmd_saliency(cfg: PipelineConfig, args) -> int:
    data = _load_set(cfg.heldout_dir, "synth-data")
    classifiers = {clf.pair.index: clf
                   for clf in _load_pair_classifiers(cfg.pairs_dir, "train-pairs")}
    chosen = _select_stimuli(data, args.stimulus, args.count)
    methods = SALIENCY_METHODS if args.method == "all" else (args.method,)
    out = _results_dir(cfg, args.out) / "saliency"
    out.mkdir(exist_ok=True)
    prov = cfg.provenance()
    ep_cfg = cfg.ep_config()
    for im in chosen:
        spec = _spec_for_labels(im.true_label, im.false_label)
        clf = classifiers[spec.index]
        class_index = spec.labels.index(im.true_label)
        for method in methods:
            if method == "ep":
                m = extremal_perturbation(clf, im.pixels, class_index, ep_cfg)
            else:
                m = _METHOD_FNS[method](clf, im.pixels, class_index)
            _finite_map(m, f"{method} on {im.id}")
            save_saliency_png(m, out / f"{im.id}_{method}.png",
                              {**prov, "stimulus": im.id, "pair": str(spec),
                               "method": method})
        print(f"{im.id}: {', '.join(methods)} done")
    print(f"saliency maps under {out}")
    return 0


def cmd_compare(cfg: PipelineConfig, args) -> int:
    trials = _collect_trials(_export_paths(cfg, args))
    stimuli = {im.id: im for im in _load_set(cfg.experiment_stimuli, "synth-data")}
    classifiers = {clf.pair.index: clf
                   for clf in _load_pair_classifiers(
                       cfg.finetuned_dir if args.finetuned else cfg.pairs_dir,
                       "finetune" if args.finetuned else "train-pairs")}
    correct = [tr for tr in trials if tr.correct]
    grouped = _trials_by_pair(correct)
    missing = [str(s) for s in all_pair_specs() if s.index not in grouped]
    if missing:
        raise DataError(f"no correct trials for {len(missing)} pairs "
                        f"({', '.join(missing[:5])}{'...' if len(missing) > 5 else ''}); "
                        f"collect more sessions with `ferbench serve`")
    out = _results_dir(cfg, args.out)
    prov = cfg.provenance()
    ep_cfg = cfg.ep_config()

    rows, method_values = [], {m: [] for m in SALIENCY_METHODS}
    for spec in all_pair_specs():
        pair_trials = grouped[spec.index]
        first = stimuli.get(pair_trials[0].stimulus_id)
        if first is None:
            raise DataError(f"trial references stimulus {pair_trials[0].stimulus_id!r} "
                            f"absent from {cfg.experiment_stimuli}")
        human_map = aggregate_click_attention(pair_trials, radius=cfg.radius,
                                              shape=first.shape)
        human_mask = threshold_mask(normalize_scale_255(human_map))

        seen, pair_images = set(), []
        for tr in pair_trials:
            if tr.stimulus_id not in seen:
                seen.add(tr.stimulus_id)
                im = stimuli.get(tr.stimulus_id)
                if im is None:
                    raise DataError(f"trial references stimulus {tr.stimulus_id!r} "
                                    f"absent from {cfg.experiment_stimuli}")
                pair_images.append(im)
        clf = classifiers[spec.index]
        for method in SALIENCY_METHODS:
            maps = []
            for im in pair_images:
                class_index = spec.labels.index(im.true_label)
                if method == "ep":
                    m = extremal_perturbation(clf, im.pixels, class_index, ep_cfg)
                else:
                    m = _METHOD_FNS[method](clf, im.pixels, class_index)
                maps.append(_finite_map(m, f"{method} on {im.id}"))
            model_mask = threshold_mask(normalize_scale_255(average_maps(maps)))
            value = dice(human_mask, model_mask)
            rows.append((str(spec), method, value))
            method_values[method].append(value)
        print(f"{spec}: {len(pair_trials)} trials, {len(pair_images)} stimuli, "
              + ", ".join(f"{m} {method_values[m][-1]:.3f}" for m in SALIENCY_METHODS))

    write_dice_csv(out / "dice.csv", rows, prov)
    method_names = sorted(method_values)
    groups = [method_values[m] for m in method_names]
    anova = one_way_anova(groups)
    tukey = tukey_pairwise(groups, names=method_names)
    write_stats_json(out / "comparison_stats.json",
                     {"anova": stats_result_dict(anova),
                      "tukey": [stats_result_dict(r) for r in tukey],
                      "methods": {m: {"mean": float(np.mean(v)),
                                      "n": len(v)} for m, v in method_values.items()}},
                     prov)
    save_dice_boxplot(out / "dice_boxplot.png", method_values,
                      f"human vs model attention [{prov['config_hash']}]")
    print(f"ANOVA: F={anova.statistic:.3f}, p={anova.p_value:.4f}; "
          f"outputs under {out}")
    return 0


def cmd_report(cfg: PipelineConfig, args) -> int:
    src = Path(args.results)
    if not src.exists():
        raise DataError(f"results directory not found: {src}; "
                        f"run `ferbench evaluate` or `ferbench compare` first")
    rendered = 0
    for csv_path in sorted(src.glob("confusion_*.csv")):
        name = csv_path.stem.removeprefix("confusion_")
        cm = read_confusion_csv(csv_path)
        save_confusion_heatmap(csv_path.with_suffix(".png"), cm, name)
        rendered += 1
    dice_path = src / "dice.csv"
    if dice_path.exists():
        method_values = {}
        for _, method, value in read_dice_csv(dice_path):
            method_values.setdefault(method, []).append(value)
        save_dice_boxplot(src / "dice_boxplot.png", method_values,
                          "human vs model attention")
        rendered += 1
    if rendered == 0:
        raise DataError(f"no confusion_*.csv or dice.csv under {src}; "
                        f"run `ferbench evaluate` or `ferbench compare` first")
    print(f"re-rendered {rendered} figures under {src}")
    return 0


def cmd_serve(cfg: PipelineConfig, args) -> int:
    from .service import ServiceConfig, serve
    _load_set(cfg.experiment_stimuli, "synth-data")
    cfg.sessions_dir.mkdir(parents=True, exist_ok=True)
    svc = ServiceConfig(stimulus_path=str(cfg.experiment_stimuli),
                        results_dir=str(cfg.sessions_dir),
                        port=args.port or cfg.port,
                        reveal_radius=cfg.radius,
                        blur_k=cfg.blur_k or None,
                        block_count=cfg.block_count)
    print(f"serving {cfg.experiment_stimuli} on port {svc.port} "
          f"(radius {svc.reveal_radius}, blocks {svc.block_count})")
    serve(svc)
    return 0


# -------------------------------------------------------------- entry point


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="ferbench",
                     description="expression-recognition workbench pipeline")
    parser.add_argument("--config", help="TOML or JSON pipeline config file")
    parser.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                        dest="overrides", help="override one config value")
    sub = parser.add_subparsers(dest="command", required=True)

    sub.add_parser("synth-data", help="generate train and held-out stimulus sets")

    p = sub.add_parser("train-pairs", help="train the 28 pairwise classifiers")
    p.add_argument("--workers", type=int, default=0,
                   help="parallel training processes (default: cpu count)")

    sub.add_parser("train-multiclass", help="train the 8-way baseline classifier")

    p = sub.add_parser("finetune", help="finetune pair classifiers on click-masked trials")
    p.add_argument("--exports", nargs="*", default=[],
                   help="session export JSONL files (default: work_dir/sessions/*.jsonl)")

    p = sub.add_parser("evaluate", help="held-out pair, ensemble, and multiclass reports")
    p.add_argument("--out", help="results directory (default: timestamped)")
    p.add_argument("--finetuned", action="store_true",
                   help="evaluate the finetuned checkpoints instead")

    p = sub.add_parser("saliency", help="save attention maps for held-out stimuli")
    p.add_argument("--method", choices=SALIENCY_METHODS + ("all",), default="all")
    p.add_argument("--stimulus", action="append", default=[],
                   help="specific stimulus id (repeatable; default: first --count)")
    p.add_argument("--count", type=int, default=8,
                   help="how many stimuli when none are named")
    p.add_argument("--out", help="results directory (default: timestamped)")

    p = sub.add_parser("compare", help="dice between human and model attention + stats")
    p.add_argument("--exports", nargs="*", default=[],
                   help="session export JSONL files (default: work_dir/sessions/*.jsonl)")
    p.add_argument("--out", help="results directory (default: timestamped)")
    p.add_argument("--finetuned", action="store_true",
                   help="use the finetuned checkpoints instead")

    p = sub.add_parser("report", help="re-render figures from an existing results dir")
    p.add_argument("--results", required=True, help="directory holding the CSVs")

    p = sub.add_parser("serve", help="run the click-to-reveal experiment server")
    p.add_argument("--port", type=int, default=0, help="override the configured port")

    return parser


_COMMANDS = {
    "synth-data": cmd_synth_data,
    "train-pairs": cmd_train_pairs,
    "train-multiclass": cmd_train_multiclass,
    "finetune": cmd_finetune,
    "evaluate": cmd_evaluate,
    "saliency": cmd_saliency,
    "compare": cmd_compare,
    "report": cmd_report,
    "serve": cmd_serve,
}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        cfg = load_pipeline_config(args.config, args.overrides)
        return _COMMANDS[args.command](cfg, args)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return 1
    except DataError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return 2
    except NumericError as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
