"""Pose-sequence datasets: types, preprocessing, augmentation, folds, and
the on-disk interchange format (POSEPACK version 1).

A sample is a short sequence of per-frame feature vectors. Each frame packs
four channels per keypoint in the fixed order x, y, vx, vy, where the
velocities are backward differences of the positions. Sequences keep their
true length end to end; batching groups by length instead of padding, so
fill values can never reach the model.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import ConfigError, DataError, ParameterError, ShapeError

MIN_LENGTH = 20
MAX_LENGTH = 30

_SPLITS = ("train", "val", "test")


@dataclass
class PoseSample:
    """One labelled pose sequence: [length, features] float32."""

    id: str
    actor: str
    label: int
    features: np.ndarray
    split: str = "train"

    def __post_init__(self) -> None:
        self.features = np.asarray(self.features, dtype=np.float32)
        if self.features.ndim != 2:
            raise ShapeError(
                f"sample {self.id}: features must be [length, width], "
                f"got shape {self.features.shape}"
            )
        length = self.features.shape[0]
        if not MIN_LENGTH <= length <= MAX_LENGTH:
            raise DataError(
                f"sample {self.id}: length {length} outside [{MIN_LENGTH}, {MAX_LENGTH}]"
            )
        if not np.isfinite(self.features).all():
            raise DataError(f"sample {self.id}: features contain non-finite values")
        if self.label < 0:
            raise DataError(f"sample {self.id}: negative label {self.label}")
        if self.split not in _SPLITS:
            raise DataError(f"sample {self.id}: unknown split {self.split!r}")

    @property
    def length(self) -> int:
        return self.features.shape[0]

    @property
    def width(self) -> int:
        return self.features.shape[1]


@dataclass
class Dataset:
    """Immutable-by-convention collection of pose samples."""

    detector: str
    class_names: list[str]
    samples: list[PoseSample] = field(default_factory=list)

    def __post_init__(self) -> None:
        n_classes = len(self.class_names)
        widths = {s.width for s in self.samples}
        if len(widths) > 1:
            raise DataError(f"mixed feature widths in dataset: {sorted(widths)}")
        for s in self.samples:
            if s.label >= n_classes:
                raise DataError(
                    f"sample {s.id}: label {s.label} out of range for "
                    f"{n_classes} classes"
                )

    @property
    def feature_dim(self) -> int:
        if not self.samples:
            raise DataError("dataset has no samples")
        return self.samples[0].width

    def split(self, name: str) -> list[PoseSample]:
        if name not in _SPLITS:
            raise ParameterError(f"unknown split {name!r}; expected one of {_SPLITS}")
        return [s for s in self.samples if s.split == name]

    @property
    def train(self) -> list[PoseSample]:
        return self.split("train")

    @property
    def val(self) -> list[PoseSample]:
        return self.split("val")

    @property
    def test(self) -> list[PoseSample]:
        return self.split("test")


# ---------------------------------------------------------------------------
# Preprocessing
# ---------------------------------------------------------------------------


def compute_velocities(positions: np.ndarray) -> np.ndarray:
    """Turn [length, keypoints, 2] positions into [length, 4*keypoints]
    features with per-keypoint channel order x, y, vx, vy.

    Velocities are backward differences; frame 0 has zero velocity.
    """
    positions = np.asarray(positions)
    if positions.ndim != 3 or positions.shape[-1] != 2:
        raise ShapeError(
            f"positions must be [length, keypoints, 2], got {positions.shape}"
        )
    velocities = np.zeros_like(positions)
    velocities[1:] = positions[1:] - positions[:-1]
    combined = np.concatenate([positions, velocities], axis=-1)  # x, y, vx, vy
    length, keypoints = positions.shape[:2]
    return combined.reshape(length, 4 * keypoints)


def _horizontal_channels(width: int) -> np.ndarray:
    """Column indices of x and vx channels in the interleaved layout."""
    if width % 4 != 0:
        raise ShapeError(
            f"feature width {width} is not divisible by 4 "
            "(expected x, y, vx, vy per keypoint)"
        )
    cols = np.arange(width)
    return cols[(cols % 4 == 0) | (cols % 4 == 2)]


def flip_features(features: np.ndarray) -> np.ndarray:
    """Mirror horizontally: negate every x and vx channel. Valid because all
    producers emit horizontally centered coordinates."""
    out = np.array(features, copy=True)
    out[..., _horizontal_channels(out.shape[-1])] *= -1
    return out


def augment_flip(sample: PoseSample, rng: np.random.Generator,
                 probability: float = 0.5) -> PoseSample:
    """With the given probability, mirror the sample horizontally."""
    if not 0.0 <= probability <= 1.0:
        raise ParameterError(f"flip probability must be in [0, 1], got {probability}")
    if probability > 0 and rng.random() < probability:
        return PoseSample(sample.id, sample.actor, sample.label,
                          flip_features(sample.features), sample.split)
    return sample


def augment_noise(sample: PoseSample, sigma: float,
                  rng: np.random.Generator) -> PoseSample:
    """Add i.i.d. Gaussian noise with standard deviation ``sigma`` to every
    feature value."""
    if sigma < 0:
        raise ParameterError(f"noise sigma must be non-negative, got {sigma}")
    if sigma == 0:
        return sample
    noisy = sample.features + rng.normal(0.0, sigma, size=sample.features.shape)
    return PoseSample(sample.id, sample.actor, sample.label,
                      noisy.astype(np.float32), sample.split)


def augment_batch(batch: np.ndarray, rng: np.random.Generator,
                  flip_probability: float, noise_sigma: float) -> np.ndarray:
    """Vectorized training-time augmentation for a [batch, frames, width]
    array: independent per-sample flips, then elementwise noise."""
    out = np.array(batch, copy=True)
    if flip_probability > 0:
        flips = rng.random(out.shape[0]) < flip_probability
        if flips.any():
            out[np.ix_(np.flatnonzero(flips),
                       np.arange(out.shape[1]),
                       _horizontal_channels(out.shape[2]))] *= -1
    if noise_sigma > 0:
        out += rng.normal(0.0, noise_sigma, size=out.shape).astype(out.dtype)
    return out


def pad_or_truncate(sample: PoseSample, max_len: int = MAX_LENGTH):
    """Zero-pad trailing frames to ``max_len``. Returns (padded features,
    true length); consumers must slice back to the true length before any
    computation that could see the fill rows."""
    length = sample.length
    if length > max_len:
        raise DataError(
            f"sample {sample.id}: length {length} exceeds maximum {max_len}"
        )
    if length == max_len:
        return sample.features.copy(), length
    padded = np.zeros((max_len, sample.width), dtype=sample.features.dtype)
    padded[:length] = sample.features
    return padded, length


# ---------------------------------------------------------------------------
# Validation folds
# ---------------------------------------------------------------------------


def stratified_folds(samples: list[PoseSample], folds: int = 10,
                     val_fraction: float = 0.10, seed: int = 0):
    """Partition sample indices into ``folds`` (train, validation) pairs.

    Per class, indices are shuffled once and dealt into ``folds`` chunks of
    near-equal size; fold k validates on chunk k. Validation sets are
    disjoint, exhaust the data, and preserve class proportions within one
    sample. ``val_fraction`` must equal 1/folds, which the defaults satisfy.
    """
    if folds < 2:
        raise ConfigError(f"need at least 2 folds, got {folds}")
    if abs(val_fraction * folds - 1.0) > 1e-9:
        raise ConfigError(
            f"val_fraction {val_fraction} inconsistent with {folds} folds "
            f"(expected {1.0 / folds:.4g})"
        )
    by_class: dict[int, list[int]] = {}
    for i, s in enumerate(samples):
        by_class.setdefault(s.label, []).append(i)
    rng = np.random.default_rng(seed)
    chunks_per_class: dict[int, list[np.ndarray]] = {}
    for label in sorted(by_class):
        idx = np.array(by_class[label])
        if idx.size < folds:
            raise DataError(
                f"class {label} has only {idx.size} samples, fewer than "
                f"{folds} folds"
            )
        rng.shuffle(idx)
        chunks_per_class[label] = np.array_split(idx, folds)
    out = []
    all_idx = np.arange(len(samples))
    for k in range(folds):
        val = np.sort(np.concatenate(
            [chunks_per_class[label][k] for label in sorted(chunks_per_class)]))
        mask = np.ones(len(samples), dtype=bool)
        mask[val] = False
        out.append((all_idx[mask], val))
    return out


# ---------------------------------------------------------------------------
# POSEPACK v1 interchange format
# ---------------------------------------------------------------------------
#
# A dataset directory holds:
#   manifest.json  - format/version, detector tag, class names, and one
#                    record per sample (id, actor, label, length, split,
#                    byte offset into the blob)
#   tensors.bin    - each sample's [length, width] float32 matrix, row-major
#                    little-endian, at its recorded offset

_FORMAT = "POSEPACK"
_VERSION = 1


def save_dataset(dataset: Dataset, path) -> None:
    path = Path(path)
    path.mkdir(parents=True, exist_ok=True)
    records = []
    offset = 0
    with open(path / "tensors.bin", "wb") as blob:
        for s in dataset.samples:
            data = np.ascontiguousarray(s.features, dtype="<f4").tobytes()
            records.append({
                "id": s.id,
                "actor": s.actor,
                "label": int(s.label),
                "length": int(s.length),
                "split": s.split,
                "offset": offset,
            })
            blob.write(data)
            offset += len(data)
    manifest = {
        "format": _FORMAT,
        "version": _VERSION,
        "detector": dataset.detector,
        "feature_dim": int(dataset.feature_dim),
        "byte_order": "little",
        "dtype": "float32",
        "class_names": list(dataset.class_names),
        "samples": records,
    }
    with open(path / "manifest.json", "w", encoding="utf-8") as fh:
        json.dump(manifest, fh, indent=1)
        fh.write("\n")


def load_dataset(path) -> Dataset:
    path = Path(path)
    manifest_path = path / "manifest.json"
    blob_path = path / "tensors.bin"
    if not manifest_path.is_file():
        raise DataError(f"{path} is not a dataset directory (no manifest.json)")
    try:
        manifest = json.loads(manifest_path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise DataError(f"{manifest_path} is not valid JSON: {exc}") from exc
    if manifest.get("format") != _FORMAT:
        raise DataError(f"{manifest_path}: format {manifest.get('format')!r}, "
                        f"expected {_FORMAT!r}")
    if manifest.get("version") != _VERSION:
        raise DataError(
            f"{manifest_path}: unsupported version {manifest.get('version')!r}, "
            f"expected {_VERSION}"
        )
    if manifest.get("dtype") != "float32" or manifest.get("byte_order") != "little":
        raise DataError(f"{manifest_path}: unsupported tensor encoding")
    width = int(manifest["feature_dim"])
    try:
        blob = blob_path.read_bytes()
    except OSError as exc:
        raise DataError(f"cannot read {blob_path}: {exc}") from exc

    # offsets must be non-overlapping and inside the blob
    spans = []
    for rec in manifest["samples"]:
        size = int(rec["length"]) * width * 4
        start = int(rec["offset"])
        if start < 0 or start + size > len(blob):
            raise DataError(
                f"sample {rec['id']}: tensor [{start}, {start + size}) extends "
                f"past end of blob ({len(blob)} bytes)"
            )
        spans.append((start, start + size, rec["id"]))
    for (s0, e0, id0), (s1, _e1, id1) in zip(sorted(spans), sorted(spans)[1:]):
        if e0 > s1:
            raise DataError(f"samples {id0} and {id1} overlap in the blob")

    samples = []
    for rec in manifest["samples"]:
        start = int(rec["offset"])
        length = int(rec["length"])
        flat = np.frombuffer(blob, dtype="<f4", count=length * width, offset=start)
        features = flat.reshape(length, width).astype(np.float32)
        if not np.isfinite(features).all():
            raise DataError(f"sample {rec['id']}: non-finite values in tensor")
        samples.append(PoseSample(
            id=str(rec["id"]),
            actor=str(rec["actor"]),
            label=int(rec["label"]),
            features=features,
            split=str(rec["split"]),
        ))
    return Dataset(
        detector=str(manifest["detector"]),
        class_names=[str(c) for c in manifest["class_names"]],
        samples=samples,
    )
