"""Inference-time capabilities: prediction, ensembles, attention
introspection, frame-drop robustness sweeps, and positional-embedding
analysis, plus the text/binary export formats for all of them.

Frame dropping never retrains or edits the model. Head-dropping (removing
the earliest frames) keeps each retained frame's original positional row by
default, preserving the absolute-position semantics the embedding learned;
re-indexing from 1 is available as an alternative alignment.
"""

from __future__ import annotations

import warnings
from pathlib import Path
from typing import Sequence

import numpy as np

from .data import PoseSample
from .errors import ConfigError, DataError, ParameterError, ShapeError
from .model import ActParams, AttentionMaps, forward
from .train import Metrics, balanced_accuracy as _balanced_accuracy


def predict(params: ActParams, batch: np.ndarray,
            positions: np.ndarray | None = None) -> np.ndarray:
    """Class probabilities for a batch of equal-length sequences."""
    logits, _ = forward(np.asarray(batch), params, positions=positions)
    z = logits - logits.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def ensemble_logits(param_sets: Sequence[ActParams], batch: np.ndarray,
                    positions: np.ndarray | None = None) -> np.ndarray:
    """Mean of member logits; the ensemble combination rule."""
    if not param_sets:
        raise ParameterError("ensemble needs at least one member")
    first = param_sets[0].config
    for i, p in enumerate(param_sets[1:], start=1):
        if p.config != first:
            raise ConfigError(
                f"ensemble member {i} config does not match member 0 "
                f"({p.config.name!r} vs {first.name!r})"
            )
    batch = np.asarray(batch)
    total = np.zeros((batch.shape[0], first.num_classes), dtype=np.float64)
    for p in param_sets:
        logits, _ = forward(batch, p, positions=positions)
        total += logits
    return (total / len(param_sets)).astype(np.float32)


def ensemble_predict(param_sets: Sequence[ActParams], batch: np.ndarray,
                     positions: np.ndarray | None = None) -> np.ndarray:
    """Probabilities from logits averaged across ensemble members."""
    mean = ensemble_logits(param_sets, batch, positions)
    z = mean - mean.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


# ---------------------------------------------------------------------------
# Attention introspection
# ---------------------------------------------------------------------------


def attention_maps(params: ActParams, sample: np.ndarray) -> AttentionMaps:
    """Every layer's and head's attention matrix for one sequence."""
    sample = np.asarray(sample)
    if sample.ndim != 2:
        raise ShapeError(f"expected one sequence [frames, features], got {sample.shape}")
    _, maps = forward(sample[None], params, want_attention=True)
    return maps[0]


def cls_attention_scores(params: ActParams, sample: np.ndarray,
                         normalization: str = "max") -> np.ndarray:
    """Per-frame attention of the class token in the last layer.

    Row 0 of the final layer's attention, columns for the frame tokens,
    summed over heads. "max" scales the peak to exactly 1 (alpha-channel
    convention); "sum" rescales to a distribution over frames.
    """
    if normalization not in ("max", "sum"):
        raise ParameterError(f"unknown normalization {normalization!r}")
    maps = attention_maps(params, sample)
    cls_row = maps.maps[-1, :, 0, 1:].sum(axis=0)  # sum heads, drop self
    denom = cls_row.max() if normalization == "max" else cls_row.sum()
    return cls_row / denom


def pos_embed_similarity(params: ActParams) -> np.ndarray:
    """Pairwise cosine similarity of the positional-embedding rows."""
    pos = params.arrays["pos"].astype(np.float64)
    norms = np.linalg.norm(pos, axis=1)
    zero = norms == 0
    if zero.any():
        warnings.warn(
            f"{int(zero.sum())} positional rows have zero norm; their "
            "similarities are reported as 0"
        )
        norms = np.where(zero, 1.0, norms)
    unit = pos / norms[:, None]
    unit[zero] = 0.0
    sim = unit @ unit.T
    return np.clip(sim, -1.0, 1.0)


# ---------------------------------------------------------------------------
# Frame-drop robustness
# ---------------------------------------------------------------------------


def truncate_sequence(features: np.ndarray, keep: int, direction: str,
                      align: str = "original"):
    """Keep ``keep`` frames of one sequence.

    direction "tail" drops the latest frames (keeps the first ``keep``);
    "head" drops the earliest. Returns (frames, 1-based positional indices):
    with align "original" the retained frames keep the positional rows of
    their original slots, with "reindex" they are renumbered from 1.
    """
    if direction not in ("head", "tail"):
        raise ParameterError(f"direction must be 'head' or 'tail', got {direction!r}")
    if align not in ("original", "reindex"):
        raise ParameterError(f"align must be 'original' or 'reindex', got {align!r}")
    length = features.shape[0]
    keep = min(keep, length)
    if keep < 1:
        raise ParameterError("must keep at least one frame")
    if direction == "tail":
        return features[:keep], np.arange(1, keep + 1)
    kept = features[length - keep:]
    if align == "reindex":
        return kept, np.arange(1, keep + 1)
    return kept, np.arange(length - keep + 1, length + 1)


def _metrics_at_length(param_sets: Sequence[ActParams],
                       samples: list[PoseSample], keep: int,
                       direction: str, align: str, batch_size: int) -> Metrics:
    n_classes = param_sets[0].config.num_classes
    labels = np.array([s.label for s in samples])
    preds = np.zeros(len(samples), dtype=np.int64)
    # samples sharing a length share positional indices, so each original
    # length forms one dense batch group
    groups: dict[int, list[int]] = {}
    for i, s in enumerate(samples):
        groups.setdefault(s.length, []).append(i)
    for length, members in sorted(groups.items()):
        feats, positions = zip(*(
            truncate_sequence(samples[i].features, keep, direction, align)
            for i in members))
        positions = positions[0]
        stack = np.stack(feats)
        for start in range(0, len(members), batch_size):
            chunk = slice(start, start + batch_size)
            logits = ensemble_logits(param_sets, stack[chunk],
                                     positions=positions)
            preds[np.asarray(members[chunk])] = np.argmax(logits, axis=1)
    confusion = np.zeros((n_classes, n_classes), dtype=np.int64)
    np.add.at(confusion, (labels, preds), 1)
    return Metrics(
        accuracy=float((preds == labels).mean()),
        balanced_accuracy=_balanced_accuracy(confusion),
        confusion=confusion,
    )


def ensemble_evaluate(param_sets: Sequence[ActParams],
                      samples: list[PoseSample],
                      max_frames: int | None = None,
                      direction: str = "tail", align: str = "original",
                      batch_size: int = 512) -> Metrics:
    """Test metrics for one model or a mean-logit ensemble, optionally with
    every sequence cut down to ``max_frames`` frames first. The default
    direction drops trailing frames, matching plain truncated evaluation."""
    if not param_sets:
        raise ParameterError("ensemble needs at least one member")
    if not samples:
        raise DataError("cannot evaluate an empty sample list")
    config = param_sets[0].config
    for s in samples:
        if s.label >= config.num_classes:
            raise DataError(f"sample {s.id!r} has label {s.label} but the "
                            f"model only has {config.num_classes} classes")
    keep = config.seq_len if max_frames is None else max_frames
    return _metrics_at_length(param_sets, samples, keep, direction, align,
                              batch_size)


def frame_drop_sweep(params: ActParams, samples: list[PoseSample],
                     direction: str = "head", align: str = "original",
                     batch_size: int = 512) -> list[dict]:
    """Balanced accuracy when only ``keep`` frames survive, for keep running
    from the trained maximum down to 1. Sequences shorter than ``keep`` pass
    through whole, so the full-length point reproduces plain evaluation."""
    if not samples:
        raise DataError("cannot sweep an empty sample list")
    curve = []
    for keep in range(params.config.seq_len, 0, -1):
        m = _metrics_at_length([params], samples, keep, direction, align,
                               batch_size)
        curve.append({
            "retained_frames": keep,
            "balanced_accuracy": m.balanced_accuracy,
            "accuracy": m.accuracy,
        })
    return curve


# ---------------------------------------------------------------------------
# Export formats
# ---------------------------------------------------------------------------
#
# Binary arrays (attention maps, similarity matrices) use "ACTBLOB v1": a
# short text header of "key: value" lines, a lone "---" separator line, then
# the raw array as little-endian float32, row-major. Curves are plain
# comma-separated text with a header row.

_BLOB_MAGIC = "ACTBLOB v1"


def write_blob(path, array: np.ndarray, kind: str,
               labels: Sequence[str] | None = None,
               extra: dict | None = None) -> None:
    array = np.asarray(array)
    lines = [_BLOB_MAGIC,
             f"kind: {kind}",
             "dtype: float32",
             "byte_order: little",
             f"shape: {' '.join(str(n) for n in array.shape)}"]
    if labels is not None:
        lines.append(f"labels: {','.join(labels)}")
    for key, value in (extra or {}).items():
        lines.append(f"{key}: {value}")
    lines.append("---")
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "wb") as fh:
        fh.write("\n".join(lines).encode("utf-8") + b"\n")
        fh.write(np.ascontiguousarray(array, dtype="<f4").tobytes())


def read_blob(path) -> tuple[np.ndarray, dict]:
    path = Path(path)
    raw = path.read_bytes()
    sep = raw.find(b"\n---\n")
    if sep < 0 or not raw.startswith(_BLOB_MAGIC.encode()):
        raise DataError(f"{path} is not an array blob")
    meta: dict = {}
    for line in raw[:sep].decode("utf-8").splitlines()[1:]:
        key, _, value = line.partition(":")
        meta[key.strip()] = value.strip()
    shape = tuple(int(n) for n in meta.get("shape", "").split())
    if "labels" in meta:
        meta["labels"] = meta["labels"].split(",")
    payload = raw[sep + 5:]
    count = int(np.prod(shape)) if shape else 0
    if len(payload) != count * 4:
        raise DataError(
            f"{path} payload is {len(payload)} bytes, expected {count * 4}"
        )
    return np.frombuffer(payload, dtype="<f4").reshape(shape), meta


def write_curve(path, curve: list[dict]) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("retained_frames,balanced_accuracy,accuracy\n")
        for point in curve:
            fh.write(f"{point['retained_frames']},"
                     f"{point['balanced_accuracy']:.6f},"
                     f"{point['accuracy']:.6f}\n")


def read_curve(path) -> list[dict]:
    path = Path(path)
    lines = path.read_text(encoding="utf-8").splitlines()
    if not lines or lines[0].split(",")[:2] != ["retained_frames", "balanced_accuracy"]:
        raise DataError(f"{path} is not a sweep curve file")
    out = []
    for line in lines[1:]:
        if not line.strip():
            continue
        frames, bal, acc = line.split(",")
        out.append({"retained_frames": int(frames),
                    "balanced_accuracy": float(bal),
                    "accuracy": float(acc)})
    return out
