"""Training recipe: label-smoothed cross-entropy, decoupled-weight-decay
Adam, warmup-then-step learning-rate schedule, and the fold-based epoch loop.

Mini-batches are grouped by true sequence length, so a batch is always a
dense [batch, length, width] block and padding never exists anywhere in the
training path. The number of optimizer steps per epoch is therefore fixed by
the length histogram of the training fold, and the schedule's step counts
derive from it deterministically.
"""

from __future__ import annotations

import dataclasses
import json
import math
import warnings
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import tensor as T
from .data import Dataset, PoseSample, augment_batch
from .errors import ConfigError, DataError, NumericsError, ParameterError
from .model import ActParams, ModelConfig, forward_graph, init_params, \
    logits_for_sequences, params_on_tape
from .tensor import Tape, Tensor


@dataclass(frozen=True)
class TrainConfig:
    """Published recipe defaults; every run-to-run knob lives here."""

    epochs: int = 350
    batch_size: int = 512
    warmup_fraction: float = 0.40
    step_fraction: float = 0.80
    post_step_lr: float = 1e-4
    weight_decay: float = 1e-4
    label_smoothing: float = 0.1
    dropout: float = 0.3
    flip_probability: float = 0.5
    noise_sigma: float = 0.03
    beta1: float = 0.9
    beta2: float = 0.98
    adam_eps: float = 1e-9
    seed: int = 0

    def __post_init__(self) -> None:
        if self.epochs < 1 or self.batch_size < 1:
            raise ConfigError("epochs and batch_size must be positive")
        if not 0.0 < self.warmup_fraction < self.step_fraction <= 1.0:
            raise ConfigError(
                "need 0 < warmup_fraction < step_fraction <= 1, got "
                f"{self.warmup_fraction} and {self.step_fraction}"
            )
        for name in ("post_step_lr", "weight_decay", "noise_sigma"):
            if getattr(self, name) < 0:
                raise ConfigError(f"{name} must be non-negative")
        for name in ("label_smoothing", "dropout", "beta1", "beta2"):
            v = getattr(self, name)
            if not 0.0 <= v < 1.0:
                raise ConfigError(f"{name} must be in [0, 1), got {v}")
        if not 0.0 <= self.flip_probability <= 1.0:
            raise ConfigError("flip_probability must be in [0, 1]")
        if self.adam_eps <= 0:
            raise ConfigError("adam_eps must be positive")


# ---------------------------------------------------------------------------
# Loss
# ---------------------------------------------------------------------------


def label_smoothed_ce(logits: Tensor, labels: np.ndarray, epsilon: float = 0.1,
                      reduction: str = "mean") -> Tensor:
    """Cross-entropy against q = (1-eps)*onehot + eps/C, averaged over the
    batch (or summed with reduction="sum")."""
    if not 0.0 <= epsilon < 1.0:
        raise ParameterError(f"label smoothing must be in [0, 1), got {epsilon}")
    if reduction not in ("mean", "sum"):
        raise ParameterError(f"unknown reduction {reduction!r}")
    labels = np.asarray(labels)
    batch, n_classes = logits.shape
    if labels.shape != (batch,):
        raise ParameterError(
            f"labels shape {labels.shape} does not match batch size {batch}"
        )
    if labels.min() < 0 or labels.max() >= n_classes:
        raise DataError(
            f"labels must lie in [0, {n_classes}), got range "
            f"[{labels.min()}, {labels.max()}]"
        )
    q = np.full((batch, n_classes), epsilon / n_classes, dtype=logits.dtype)
    q[np.arange(batch), labels] += 1.0 - epsilon
    logp = T.log_softmax(logits)
    total = T.scale(T.tsum(T.mul(logp, Tensor(q))), -1.0)
    return T.scale(total, 1.0 / batch) if reduction == "mean" else total


# ---------------------------------------------------------------------------
# Learning-rate schedule
# ---------------------------------------------------------------------------


def lr_schedule(step: int, total_steps: int, config: TrainConfig,
                d_model: int) -> float:
    """Inverse-square-root warmup schedule with a late constant drop.

    Before the drop point (step_fraction of all steps):
    d_model^-0.5 * min(step^-0.5, step * warmup_steps^-1.5); both branches
    meet at the warmup peak. From the drop point on, a constant small rate.
    """
    if step < 1:
        raise ParameterError(f"schedule step starts at 1, got {step}")
    if total_steps < 1:
        raise ParameterError(f"total_steps must be positive, got {total_steps}")
    if step >= config.step_fraction * total_steps:
        return config.post_step_lr
    warmup_steps = config.warmup_fraction * total_steps
    return d_model ** -0.5 * min(step ** -0.5, step * warmup_steps ** -1.5)


# ---------------------------------------------------------------------------
# Optimizer
# ---------------------------------------------------------------------------


def _decayed(name: str, array: np.ndarray) -> bool:
    # weight matrices only: biases, gains, the class token, and the
    # positional table are exempt from decay
    return array.ndim == 2 and name != "pos"


@dataclass
class OptimizerState:
    m: dict[str, np.ndarray]
    v: dict[str, np.ndarray]
    step: int = 0


def init_optimizer(params: ActParams) -> OptimizerState:
    zeros = {k: np.zeros_like(a) for k, a in params.arrays.items()}
    return OptimizerState(m=zeros, v={k: z.copy() for k, z in zeros.items()})


def adamw_step(params: ActParams, grads: dict[str, np.ndarray],
               state: OptimizerState, lr: float,
               config: TrainConfig) -> tuple[ActParams, OptimizerState]:
    """One decoupled-weight-decay Adam update, in place on ``params``."""
    state.step += 1
    t = state.step
    b1, b2 = config.beta1, config.beta2
    bias1 = 1.0 - b1 ** t
    bias2 = 1.0 - b2 ** t
    for name, theta in params.arrays.items():
        g = grads[name]
        if g.shape != theta.shape:
            raise ParameterError(
                f"gradient for {name} has shape {g.shape}, expected {theta.shape}"
            )
        if not np.isfinite(g).all():
            raise NumericsError(f"non-finite gradient in {name} at step {t}")
        m = state.m[name]
        v = state.v[name]
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * np.square(g)
        update = (m / bias1) / (np.sqrt(v / bias2) + config.adam_eps)
        if config.weight_decay > 0 and _decayed(name, theta):
            theta -= (lr * config.weight_decay) * theta
        theta -= lr * update.astype(theta.dtype, copy=False)
    return params, state


# ---------------------------------------------------------------------------
# Metrics
# ---------------------------------------------------------------------------


@dataclass
class Metrics:
    accuracy: float
    balanced_accuracy: float
    confusion: np.ndarray  # [classes, classes], rows are true labels

    @property
    def per_class_recall(self) -> np.ndarray:
        totals = self.confusion.sum(axis=1)
        with np.errstate(invalid="ignore", divide="ignore"):
            return np.where(totals > 0, np.diag(self.confusion) / totals, np.nan)


def balanced_accuracy(confusion: np.ndarray) -> float:
    """Mean per-class recall; classes with no test samples are excluded."""
    confusion = np.asarray(confusion)
    totals = confusion.sum(axis=1)
    present = totals > 0
    if not present.any():
        raise DataError("confusion matrix has no populated rows")
    recalls = np.diag(confusion)[present] / totals[present]
    return float(recalls.mean())


def evaluate(params: ActParams, samples: list[PoseSample],
             max_frames: int | None = None,
             batch_size: int = 512) -> Metrics:
    """Inference-mode metrics over a sample list. ``max_frames`` caps every
    sequence to its first that-many frames."""
    if not samples:
        raise DataError("cannot evaluate an empty sample list")
    cfg = params.config
    width = samples[0].width
    if width != cfg.in_features:
        raise ConfigError(
            f"dataset feature width {width} does not match model input "
            f"width {cfg.in_features}"
        )
    labels = np.array([s.label for s in samples])
    if labels.max() >= cfg.num_classes:
        raise DataError(
            f"label {labels.max()} out of range for {cfg.num_classes}-class model"
        )
    seqs = [s.features if max_frames is None else s.features[:max_frames]
            for s in samples]
    logits = logits_for_sequences(params, seqs, batch_size=batch_size)
    preds = np.argmax(logits, axis=1)  # ties resolve to the lowest index
    confusion = np.zeros((cfg.num_classes, cfg.num_classes), dtype=np.int64)
    np.add.at(confusion, (labels, preds), 1)
    return Metrics(
        accuracy=float((preds == labels).mean()),
        balanced_accuracy=balanced_accuracy(confusion),
        confusion=confusion,
    )


def summarize_folds(fold_metrics: list[Metrics]) -> dict:
    """Mean and population standard deviation across fold models."""
    if not fold_metrics:
        raise DataError("no fold metrics to summarize")
    acc = np.array([m.accuracy for m in fold_metrics])
    bal = np.array([m.balanced_accuracy for m in fold_metrics])
    return {
        "folds": len(fold_metrics),
        "accuracy_mean": float(acc.mean()),
        "accuracy_std": float(acc.std()),
        "balanced_accuracy_mean": float(bal.mean()),
        "balanced_accuracy_std": float(bal.std()),
    }


# ---------------------------------------------------------------------------
# Epoch loop
# ---------------------------------------------------------------------------


def _length_buckets(samples: list[PoseSample], indices: np.ndarray):
    buckets: dict[int, list[int]] = {}
    for i in indices:
        buckets.setdefault(samples[i].length, []).append(int(i))
    return buckets


def steps_per_epoch(samples: list[PoseSample], indices: np.ndarray,
                    batch_size: int) -> int:
    return sum(math.ceil(len(idx) / batch_size)
               for idx in _length_buckets(samples, indices).values())


def _epoch_batches(samples: list[PoseSample], indices: np.ndarray,
                   batch_size: int, rng: np.random.Generator):
    """Shuffled mini-batches of equal-length samples."""
    order = indices.copy()
    rng.shuffle(order)
    batches = []
    for length in sorted(_length_buckets(samples, order)):
        members = [i for i in order if samples[i].length == length]
        for start in range(0, len(members), batch_size):
            batches.append(members[start:start + batch_size])
    perm = rng.permutation(len(batches))
    return [batches[i] for i in perm]


def train_one(model_config: ModelConfig, dataset: Dataset,
              folds: list[tuple[np.ndarray, np.ndarray]], fold_index: int,
              train_config: TrainConfig,
              stop_at_balanced_accuracy: float | None = None,
              log=None) -> tuple[ActParams, list[dict]]:
    """Train one model on one validation fold of the training split.

    Returns the parameters that scored the best validation balanced accuracy
    and a per-epoch history (epoch, final lr, mean train loss, validation
    accuracy and balanced accuracy). Deterministic for a fixed seed.

    ``stop_at_balanced_accuracy`` ends training early once validation
    balanced accuracy reaches the threshold; the recipe default is to run
    every epoch.
    """
    if not 0 <= fold_index < len(folds):
        raise ParameterError(
            f"fold index {fold_index} out of range for {len(folds)} folds"
        )
    train_samples = dataset.train
    train_idx, val_idx = folds[fold_index]
    if len(train_idx) == 0 or len(val_idx) == 0:
        raise DataError("fold has an empty train or validation part")

    cfg = dataclasses.replace(model_config, dropout_rate=train_config.dropout)
    batch_size = train_config.batch_size
    if batch_size > len(train_idx):
        warnings.warn(
            f"batch size {batch_size} exceeds fold size {len(train_idx)}; "
            "using one batch per length group"
        )

    root = np.random.SeedSequence(train_config.seed)
    init_seed, shuffle_seed, augment_seed, dropout_seed = root.spawn(4)
    params = init_params(cfg, seed=init_seed.generate_state(1)[0])
    optimizer = init_optimizer(params)
    shuffle_rng = np.random.default_rng(shuffle_seed)
    augment_rng = np.random.default_rng(augment_seed)
    dropout_rng = np.random.default_rng(dropout_seed)

    total_steps = train_config.epochs * steps_per_epoch(
        train_samples, train_idx, batch_size)
    val_samples = [train_samples[i] for i in val_idx]

    best = params.copy()
    best_score = -1.0
    history: list[dict] = []
    step = 0
    lr = 0.0
    for epoch in range(1, train_config.epochs + 1):
        losses = []
        for batch_idx in _epoch_batches(train_samples, train_idx, batch_size,
                                        shuffle_rng):
            x = np.stack([train_samples[i].features for i in batch_idx])
            x = augment_batch(x, augment_rng, train_config.flip_probability,
                              train_config.noise_sigma)
            y = np.array([train_samples[i].label for i in batch_idx])
            step += 1
            lr = lr_schedule(step, total_steps, train_config, cfg.d_model)
            tape = Tape()
            leaves = params_on_tape(params, tape)
            logits, _ = forward_graph(leaves, x, cfg, training=True,
                                      rng=dropout_rng)
            loss = label_smoothed_ce(logits, y, train_config.label_smoothing)
            tape.backward(loss)
            grads = {name: Tape.gradient(leaf) for name, leaf in leaves.items()}
            tape.release()
            adamw_step(params, grads, optimizer, lr, train_config)
            losses.append(loss.item())
        val = evaluate(params, val_samples, batch_size=batch_size)
        record = {
            "epoch": epoch,
            "lr": lr,
            "train_loss": float(np.mean(losses)),
            "val_accuracy": val.accuracy,
            "val_balanced_accuracy": val.balanced_accuracy,
        }
        history.append(record)
        if log is not None:
            log(record)
        if val.balanced_accuracy > best_score:
            best_score = val.balanced_accuracy
            best = params.copy()
        if (stop_at_balanced_accuracy is not None
                and val.balanced_accuracy >= stop_at_balanced_accuracy):
            break
    return best, history


def write_history(path, history: list[dict]) -> None:
    """One JSON record per line, diff-friendly."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8") as fh:
        for record in history:
            fh.write(json.dumps(record) + "\n")


def read_history(path) -> list[dict]:
    path = Path(path)
    try:
        lines = path.read_text(encoding="utf-8").splitlines()
    except OSError as exc:
        raise DataError(f"cannot read history {path}: {exc}") from exc
    out = []
    for i, line in enumerate(lines):
        if not line.strip():
            continue
        try:
            out.append(json.loads(line))
        except json.JSONDecodeError as exc:
            raise DataError(f"{path}:{i + 1}: corrupt history record") from exc
    return out
