"""Training loops, evaluation and the repeated-run experiment driver.

Training follows a fixed recipe: Adam at a base learning rate that decays
linearly to zero over max_epochs, global-norm gradient clipping, a seeded
20% validation split over windows, and early stopping with best-epoch
checkpointing. Experiments repeat training over consecutive seeds and
report mean accuracy with the sample (n-1) standard deviation.
"""

from __future__ import annotations

import logging
import math
import statistics
from collections import Counter
from dataclasses import asdict, dataclass, field

import numpy as np

from ctxda.classifier import (
    ContextRNNParams,
    init_context_rnn,
    predict_batch,
    rnn_batch_loss,
    rnn_loss_and_grads,
)
from ctxda.encoder import SPEAKER_BITS
from ctxda.numkernel import AdamState, Rng, adam_step, clip_global_norm

log = logging.getLogger(__name__)

# A vectorized window: (T, d_in) float array plus the target class index.
VWindow = tuple[np.ndarray, int]


@dataclass
class TrainConfig:
    learning_rate: float = 1e-4
    clip_norm: float = 1.0
    validation_fraction: float = 0.2
    patience: int = 5
    max_epochs: int = 100
    batch_size: int = 32
    seed: int = 0
    context_size: int = 3
    speaker: bool = False
    vector_mode: str = "average"
    hidden_size: int = 64

    def validate(self) -> None:
        if not 0.0 < self.validation_fraction < 1.0:
            raise ValueError("validation_fraction must lie in (0, 1)")
        for name in ("patience",):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be >= 0")
        for name in ("max_epochs", "batch_size", "hidden_size"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")
        if self.context_size < 0:
            raise ValueError("context_size must be >= 0")
        if self.learning_rate <= 0 or self.clip_norm <= 0:
            raise ValueError("learning_rate and clip_norm must be positive")


@dataclass
class RunResult:
    accuracies: list[float]
    mean: float
    sd: float
    config: dict = field(default_factory=dict)


def lr_schedule(base_lr: float, epoch: int, max_epochs: int) -> float:
    """Linear decay from base_lr at epoch 0 to zero at max_epochs."""
    return base_lr * max(0.0, 1.0 - epoch / max_epochs)


def vector_windows(windows, table: np.ndarray, row_of, speaker: bool = False) -> list[VWindow]:
    """Materialize context windows as (T, d_in) arrays over the vector table.

    `row_of` maps (conversation_id, utterance index) to the table row. With
    `speaker` set, each row gains the two-dimensional speaker one-hot; the
    one-hot is attached to every utterance in the window.
    """
    out: list[VWindow] = []
    for window in windows:
        rows = [row_of[(u.conversation_id, u.index)] for u in window.utterances]
        X = table[rows]
        if speaker:
            bits = np.asarray(
                [SPEAKER_BITS[u.speaker] for u in window.utterances], dtype=table.dtype)
            X = np.hstack([X, bits])
        out.append((np.ascontiguousarray(X), window.target))
    return out


def _length_batches(indices, windows, batch_size: int):
    """Group indices by window length, preserving order inside each group."""
    by_len: dict[int, list[int]] = {}
    for i in indices:
        by_len.setdefault(windows[i][0].shape[0], []).append(i)
    batches = []
    for length in sorted(by_len):
        group = by_len[length]
        for start in range(0, len(group), batch_size):
            batches.append(group[start:start + batch_size])
    return batches


def _stack(windows, batch):
    X = np.stack([windows[i][0] for i in batch])
    targets = np.asarray([windows[i][1] for i in batch], dtype=np.int64)
    return X, targets


def _mean_loss(params, windows, indices, batch_size):
    if not indices:
        return math.nan
    total, count = 0.0, 0
    for batch in _length_batches(indices, windows, batch_size):
        X, targets = _stack(windows, batch)
        total += rnn_batch_loss(params, X, targets) * len(batch)
        count += len(batch)
    return total / count


def train_classifier(windows: list[VWindow], config: TrainConfig,
                     n_classes: int) -> tuple[ContextRNNParams, list[str]]:
    """Train the context RNN; returns best-validation params and the log.

    Log lines are 'epoch, train_loss, val_loss, lr', one per epoch run.
    Training stops once validation loss has failed to improve for more
    than `patience` consecutive epochs.
    """
    config.validate()
    if not windows:
        raise ValueError("training set is empty")
    d_in = windows[0][0].shape[1]
    for X, target in windows:
        if X.shape[1] != d_in:
            raise ValueError("inconsistent window vector dimensions")
        if not 0 <= target < n_classes:
            raise ValueError(f"target {target} out of range for {n_classes} classes")
    if len({t for _, t in windows}) == 1:
        log.warning("training set has a single class; training anyway")

    rng = Rng(config.seed)
    params = init_context_rnn(config.hidden_size, d_in, n_classes, rng)
    indices = list(range(len(windows)))
    rng.shuffle(indices)
    n_val = int(round(config.validation_fraction * len(windows)))
    val_idx = indices[:n_val]
    train_idx = indices[n_val:]
    if not train_idx:
        raise ValueError("training set is empty after the validation split")

    plist = params.to_list()
    state = AdamState.for_params(plist, lr=config.learning_rate)
    best_val = math.inf
    best_params = params.copy()
    since_best = 0
    logs: list[str] = []
    for epoch in range(config.max_epochs):
        lr = lr_schedule(config.learning_rate, epoch, config.max_epochs)
        rng.shuffle(train_idx)
        total, count = 0.0, 0
        for batch in _length_batches(train_idx, windows, config.batch_size):
            X, targets = _stack(windows, batch)
            loss, grads = rnn_loss_and_grads(ContextRNNParams.from_list(plist), X, targets)
            if not math.isfinite(loss):
                raise ValueError("training loss diverged to a non-finite value")
            grads = clip_global_norm(grads, config.clip_norm)
            plist, state = adam_step(plist, grads, state, lr=lr)
            total += loss * len(batch)
            count += len(batch)
        params = ContextRNNParams.from_list(plist)
        train_loss = total / count
        val_loss = _mean_loss(params, windows, val_idx, config.batch_size)
        if math.isnan(val_loss):
            val_loss = train_loss
        logs.append(f"{epoch}, {train_loss:.6f}, {val_loss:.6f}, {lr:.8g}")
        if val_loss < best_val:
            best_val = val_loss
            best_params = params.copy()
            since_best = 0
        else:
            since_best += 1
            if since_best > config.patience:
                break
    return best_params, logs


def evaluate(params: ContextRNNParams, windows: list[VWindow]) -> tuple[float, np.ndarray]:
    """Accuracy and the (true, predicted) confusion matrix over windows."""
    if not windows:
        raise ValueError("evaluation set is empty")
    n = params.n_classes
    for _, target in windows:
        if not 0 <= target < n:
            raise ValueError(f"target {target} outside the model's {n} classes")
    confusion = np.zeros((n, n), dtype=np.int64)
    correct = 0
    indices = list(range(len(windows)))
    for batch in _length_batches(indices, windows, 256):
        X, targets = _stack(windows, batch)
        preds = predict_batch(params, X)
        correct += int((preds == targets).sum())
        np.add.at(confusion, (targets, preds), 1)
    return correct / len(windows), confusion


def majority_baseline(windows_train: list[VWindow], windows_test: list[VWindow]) -> float:
    """Accuracy of always predicting the most frequent training label."""
    if not windows_train:
        raise ValueError("majority baseline needs a non-empty training set")
    counts = Counter(t for _, t in windows_train)
    top = max(counts.items(), key=lambda kv: (kv[1], -kv[0]))[0]
    if not windows_test:
        raise ValueError("majority baseline needs a non-empty test set")
    hits = sum(1 for _, t in windows_test if t == top)
    return hits / len(windows_test)


def run_experiment(windows_train: list[VWindow], windows_test: list[VWindow],
                   config: TrainConfig, n_classes: int, repeats: int = 10,
                   seed_stride: int = 1) -> RunResult:
    """Train `repeats` models with seeds seed, seed+stride, ... and evaluate.

    The mean and the sample (n-1) standard deviation are recomputable from
    the stored per-run accuracies.
    """
    if repeats <= 0:
        raise ValueError("repeats must be positive")
    accuracies = []
    for k in range(repeats):
        run_config = TrainConfig(**{**asdict(config), "seed": config.seed + k * seed_stride})
        params, _ = train_classifier(windows_train, run_config, n_classes)
        accuracy, _ = evaluate(params, windows_test)
        accuracies.append(accuracy)
    mean = statistics.fmean(accuracies)
    sd = statistics.stdev(accuracies) if len(accuracies) > 1 else 0.0
    snapshot = asdict(config)
    snapshot["repeats"] = repeats
    snapshot["seed_stride"] = seed_stride
    return RunResult(accuracies=accuracies, mean=mean, sd=sd, config=snapshot)
