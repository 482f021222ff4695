"""Pairwise, multiclass, and masked-fine-tuning training loops."""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from itertools import combinations

import numpy as np

from .augment import AugmentationConfig, augment
from .datasets import undersample_pair
from .labels import LABELS, validate_label
from .network import Network, make_small_cnn
from .optim import AdamState, adam_step
from .stimuli import StimulusImage, reveal_composite, scaled_blur_k, shift_mask_8dirs
from .tensor import Tensor, softmax_cross_entropy


@dataclass(frozen=True)
class PairSpec:
    label_a: str
    label_b: str

    def __post_init__(self):
        validate_label(self.label_a)
        validate_label(self.label_b)
        order = {lab: i for i, lab in enumerate(LABELS)}
        if order[self.label_a] >= order[self.label_b]:
            raise ValueError(
                f"pair labels must be in canonical order, got ({self.label_a}, {self.label_b})")

    @property
    def labels(self):
        return (self.label_a, self.label_b)

    @property
    def index(self) -> int:
        return all_pair_specs().index(self)

    def __str__(self):
        return f"{self.label_a}-vs-{self.label_b}"


def all_pair_specs() -> list:
    return [PairSpec(a, b) for a, b in combinations(LABELS, 2)]


@dataclass(frozen=True)
class StopRule:
    """Either train-to-accuracy with an epoch cap, or a fixed epoch count."""

    train_acc_threshold: float = None
    max_epochs: int = None
    fixed_epochs: int = None

    def __post_init__(self):
        threshold_mode = self.train_acc_threshold is not None or self.max_epochs is not None
        fixed_mode = self.fixed_epochs is not None
        if threshold_mode and fixed_mode:
            raise ValueError("stop rule must be threshold-based or fixed-epochs, not both")
        if threshold_mode:
            if self.train_acc_threshold is None or self.max_epochs is None:
                raise ValueError("threshold stop rule needs both train_acc_threshold and max_epochs")
            if not 0.0 < self.train_acc_threshold <= 1.0:
                raise ValueError(f"train_acc_threshold must be in (0,1], got {self.train_acc_threshold}")
            if self.max_epochs < 0:
                raise ValueError(f"max_epochs must be >= 0, got {self.max_epochs}")
        elif not fixed_mode:
            raise ValueError("stop rule needs either a threshold or fixed_epochs")
        elif self.fixed_epochs < 0:
            raise ValueError(f"fixed_epochs must be >= 0, got {self.fixed_epochs}")

    @classmethod
    def until_accuracy(cls, threshold=0.90, max_epochs=150):
        return cls(train_acc_threshold=threshold, max_epochs=max_epochs)

    @classmethod
    def fixed(cls, epochs):
        return cls(fixed_epochs=epochs)

    @property
    def epoch_cap(self) -> int:
        return self.max_epochs if self.fixed_epochs is None else self.fixed_epochs


@dataclass(frozen=True)
class TrainConfig:
    batch_size: int = 64
    lr: float = 1e-4
    stop_rule: StopRule = field(default_factory=StopRule.until_accuracy)
    seed: int = 0
    augment: AugmentationConfig = field(
        default_factory=lambda: AugmentationConfig(
            max_shift_fraction=0.0, scale_range=(1.0, 1.0), max_rotation_degrees=0.0))
    conv_channels: tuple = (8, 16, 32)
    eval_batch: int = 128

    def __post_init__(self):
        if self.batch_size < 1:
            raise ValueError(f"batch_size must be >= 1, got {self.batch_size}")
        if self.lr <= 0:
            raise ValueError(f"lr must be positive, got {self.lr}")


@dataclass
class TrainedClassifier:
    net: Network
    pair: object          # PairSpec, or the string "multiclass"
    epochs_run: int
    final_train_acc: float
    seed: int
    restarts: int = 0

    @property
    def is_multiclass(self) -> bool:
        return self.pair == "multiclass"


def _to_batch_array(images) -> np.ndarray:
    return np.stack([im.pixels.transpose(2, 0, 1) for im in images]).astype(np.float32)


def _predict_chunked(net, X, eval_batch):
    out = [net.predict_logits(X[i:i + eval_batch]) for i in range(0, len(X), eval_batch)]
    return np.concatenate(out)


def train_accuracy(net, X, y, eval_batch=128) -> float:
    return float((_predict_chunked(net, X, eval_batch).argmax(axis=1) == y).mean())


def _features_dead(net, X) -> bool:
    """True when every pre-pool feature channel is constant on a probe batch.

    A fully dead relu bank is an absorbing state (zero gradient everywhere),
    so the training loop restarts from a reseeded init instead of spending
    the remaining epoch budget on a constant function.
    """
    net.forward(X[: min(32, len(X))], record=False)
    return bool((net.features_before_gap().data.std(axis=(0, 2, 3)) < 1e-7).all())


def _augment_batch(X_batch, aug_cfg, rng):
    if aug_cfg is None:
        return X_batch
    out = np.empty_like(X_batch)
    for i in range(len(X_batch)):
        img = X_batch[i].transpose(1, 2, 0)
        out[i] = augment(img, aug_cfg, rng).transpose(2, 0, 1)
    return out


# Plateau escape: at every 50th epoch since the last (re)start, a run whose
# best accuracy so far has stayed under 0.80 is reinitialized from a reseeded
# net.  Healthy runs on this optimizer regularly idle near chance for 20+
# epochs before separating, so the checkpoint is late and the bar is low;
# epochs spent before a restart still count toward the epoch cap, so the stop
# rule is never exceeded.
_RESTART_CHECK_EVERY = 50
_RESTART_MIN_BEST = 0.80


def _train_loop(net, X, y, cfg: TrainConfig, class_weights=None, make_net=None):
    """Shared epoch loop; returns (net, epochs_run, final_acc, restarts)."""
    rule = cfg.stop_rule
    threshold_mode = rule.fixed_epochs is None
    state = AdamState.for_network(net, lr=cfg.lr)
    rng = np.random.default_rng(np.random.SeedSequence((cfg.seed, 0xBA7C4)))
    aug_rng = np.random.default_rng(np.random.SeedSequence((cfg.seed, 0xA06)))
    acc = train_accuracy(net, X, y, cfg.eval_batch) if rule.epoch_cap == 0 else 0.0
    epochs_run = 0
    restarts = 0
    window_epochs = 0
    window_best = 0.0
    for epoch in range(rule.epoch_cap):
        order = rng.permutation(len(X))
        for start in range(0, len(X), cfg.batch_size):
            idx = order[start:start + cfg.batch_size]
            batch = _augment_batch(X[idx], cfg.augment, aug_rng)
            logits = net.forward(Tensor(batch))
            loss = softmax_cross_entropy(logits, y[idx], class_weights=class_weights)
            net.backward(loss)
            adam_step(net, state)
        epochs_run = epoch + 1
        window_epochs += 1
        if threshold_mode:
            acc = train_accuracy(net, X, y, cfg.eval_batch)
            if acc >= rule.train_acc_threshold:
                break
            window_best = max(window_best, acc)
        if make_net is not None:
            dead = _features_dead(net, X)
            stalled = (threshold_mode and window_epochs % _RESTART_CHECK_EVERY == 0
                       and window_best < _RESTART_MIN_BEST)
            if dead or stalled:
                restarts += 1
                net = make_net(restarts)
                state = AdamState.for_network(net, lr=cfg.lr)
                window_epochs = 0
                window_best = 0.0
    if not threshold_mode and rule.epoch_cap > 0:
        acc = train_accuracy(net, X, y, cfg.eval_batch)
    return net, epochs_run, acc, restarts


def _calibrate_confidence(net, X, eval_batch) -> float:
    """Rescale the head so the mean winning logit on X equals 1; returns it.

    Accuracy-threshold training stops different classifiers at different
    margin overshoots, so their logit scales are not comparable out of the
    box, and the weighted ensemble vote sums winning logits across all of
    them.  Dividing the head by the classifier's own mean winning train-set
    logit puts every classifier on a common confidence unit.  The factor is
    positive and shared by both head rows, so decisions, accuracies, simple
    votes, and min-max-normalized saliency maps are all unchanged; an
    untrained (all-zero) head is left alone.
    """
    s = float(_predict_chunked(net, X, eval_batch).max(axis=1).mean())
    if s > 1e-9:
        net.parameters["head.weight"].data /= s
        net.parameters["head.bias"].data /= s
    return s


def train_pair(pair: PairSpec, data, cfg: TrainConfig) -> TrainedClassifier:
    """Train one binary classifier on an undersampled two-class subset.

    The returned net's head is confidence-calibrated: its mean winning logit
    over the (un-augmented) training subset is 1, so confidences read off
    different pair classifiers are commensurable.
    """
    labels_present = {im.true_label for im in data}
    for lab in pair.labels:
        if lab not in labels_present:
            raise ValueError(f"dataset has no images labeled {lab!r}")
    balanced = undersample_pair(data, pair.label_a, pair.label_b, seed=cfg.seed)
    X = _to_batch_array(balanced)
    y = np.array([pair.labels.index(im.true_label) for im in balanced], dtype=np.int64)

    def make_net(restart_index):
        # head_gain 0: keeps the two head rows exact negatives throughout
        # training, so logit magnitudes read as pure class-margin confidence.
        return make_small_cnn(in_channels=X.shape[1], num_classes=2,
                              conv_channels=cfg.conv_channels,
                              seed=cfg.seed + 1000 * restart_index, head_gain=0.0)

    net, epochs_run, acc, restarts = _train_loop(make_net(0), X, y, cfg, make_net=make_net)
    _calibrate_confidence(net, X, cfg.eval_batch)
    return TrainedClassifier(net=net, pair=pair, epochs_run=epochs_run,
                             final_train_acc=acc, seed=cfg.seed, restarts=restarts)


def train_all_pairs(data, cfg: TrainConfig, progress=None) -> list:
    """One classifier per canonical pair; per-pair seeds are seed XOR pair index."""
    labels_present = {im.true_label for im in data}
    missing = [lab for lab in LABELS if lab not in labels_present]
    if missing:
        raise ValueError(f"dataset is missing labels: {missing}")
    out = []
    for spec in all_pair_specs():
        pair_cfg = replace(cfg, seed=cfg.seed ^ spec.index)
        try:
            clf = train_pair(spec, data, pair_cfg)
        except Exception as exc:
            raise RuntimeError(f"training failed for pair {spec}: {exc}") from exc
        if progress is not None:
            progress(spec, clf)
        out.append(clf)
    return out


def class_weights_for(data) -> np.ndarray:
    """Weighted cross-entropy weights: total / (num_classes * per-class count)."""
    counts = np.array([sum(1 for im in data if im.true_label == lab) for lab in LABELS],
                      dtype=np.float64)
    if (counts == 0).any():
        missing = [lab for lab, c in zip(LABELS, counts) if c == 0]
        raise ValueError(f"dataset is missing labels: {missing}")
    return counts.sum() / (len(LABELS) * counts)


def train_multiclass(data, cfg: TrainConfig) -> TrainedClassifier:
    """8-way classifier with class-weighted loss instead of undersampling."""
    weights = class_weights_for(data)
    X = _to_batch_array(data)
    y = np.array([LABELS.index(im.true_label) for im in data], dtype=np.int64)

    def make_net(restart_index):
        return make_small_cnn(in_channels=X.shape[1], num_classes=len(LABELS),
                              conv_channels=cfg.conv_channels,
                              seed=cfg.seed + 1000 * restart_index, head_gain=0.0)

    net, epochs_run, acc, restarts = _train_loop(
        make_net(0), X, y, cfg, class_weights=weights, make_net=make_net)
    return TrainedClassifier(net=net, pair="multiclass", epochs_run=epochs_run,
                             final_train_acc=acc, seed=cfg.seed, restarts=restarts)


def finetune_masked(clf: TrainedClassifier, masked, unmasked, ratio: float,
                    cfg: TrainConfig, blur_k: int = None) -> TrainedClassifier:
    """Continue training from clf's weights on click-revealed composites.

    masked: list of (StimulusImage, ClickMask) pairs; each source mask is
    expanded to nine variants (original plus one-pixel shifts in eight
    directions). unmasked: plain StimulusImage list mixed in at (1 - ratio)
    per batch to hold on to the original task. blur_k defaults to the
    reference kernel rescaled to the image size, matching what the
    experiment shows participants.
    """
    if not masked:
        raise ValueError("finetune_masked requires a nonempty masked set")
    if not 0.0 < ratio <= 1.0:
        raise ValueError(f"ratio must be in (0, 1], got {ratio}")
    if ratio < 1.0 and not unmasked:
        raise ValueError("ratio < 1 requires unmasked images to sample from")

    if isinstance(clf.pair, PairSpec):
        pair_labels = clf.pair.labels
        label_to_class = {lab: i for i, lab in enumerate(pair_labels)}
    else:
        label_to_class = {lab: i for i, lab in enumerate(LABELS)}

    masked_X, masked_y = [], []
    for im, mask in masked:
        if im.true_label not in label_to_class:
            raise ValueError(f"image {im.id} labeled {im.true_label!r} does not fit this classifier")
        k = scaled_blur_k(min(im.pixels.shape[:2])) if blur_k is None else blur_k
        for variant in (mask, *shift_mask_8dirs(mask)):
            masked_X.append(reveal_composite(im.pixels, variant, blur_k=k).transpose(2, 0, 1))
            masked_y.append(label_to_class[im.true_label])
    masked_X = np.asarray(masked_X, dtype=np.float32)
    masked_y = np.asarray(masked_y, dtype=np.int64)

    plain_X = plain_y = None
    if unmasked:
        keep = [im for im in unmasked if im.true_label in label_to_class]
        if keep:
            plain_X = _to_batch_array(keep)
            plain_y = np.array([label_to_class[im.true_label] for im in keep], dtype=np.int64)

    net = clf.net.copy()
    state = AdamState.for_network(net, lr=cfg.lr)
    rng = np.random.default_rng(np.random.SeedSequence((cfg.seed, 0xF17E)))
    aug_rng = np.random.default_rng(np.random.SeedSequence((cfg.seed, 0xA07)))
    n_masked_per_batch = max(1, int(round(cfg.batch_size * ratio)))
    n_plain_per_batch = cfg.batch_size - n_masked_per_batch if plain_X is not None else 0
    steps_per_epoch = max(1, len(masked_X) // max(1, n_masked_per_batch))
    epochs = cfg.stop_rule.epoch_cap
    epochs_run = 0
    for _ in range(epochs):
        for _ in range(steps_per_epoch):
            idx = rng.choice(len(masked_X), size=min(n_masked_per_batch, len(masked_X)),
                             replace=False)
            xs, ys = [masked_X[idx]], [masked_y[idx]]
            if n_plain_per_batch > 0:
                jdx = rng.choice(len(plain_X), size=min(n_plain_per_batch, len(plain_X)),
                                 replace=False)
                xs.append(_augment_batch(plain_X[jdx], cfg.augment, aug_rng))
                ys.append(plain_y[jdx])
            batch = np.concatenate(xs)
            targets = np.concatenate(ys)
            logits = net.forward(Tensor(batch))
            loss = softmax_cross_entropy(logits, targets)
            net.backward(loss)
            adam_step(net, state)
        epochs_run += 1
    acc = train_accuracy(net, masked_X, masked_y, cfg.eval_batch)
    return TrainedClassifier(net=net, pair=clf.pair, epochs_run=epochs_run,
                             final_train_acc=acc, seed=cfg.seed)
