"""POSEPACK v1 writer.

Layout (shared interchange format, documented in the consumer's docs):
  manifest.json  - {"format": "POSEPACK", "version": 1, "detector": str,
                    "feature_dim": int, "byte_order": "little",
                    "dtype": "float32", "class_names": [...],
                    "samples": [{"id", "actor", "label", "length",
                                 "split", "offset"}, ...]}
                   plus optional provenance keys (readers ignore extras)
  tensors.bin    - each sample's [length, feature_dim] float32 matrix,
                   row-major little-endian, at its recorded byte offset
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import DataError

FORMAT = "POSEPACK"
VERSION = 1


@dataclass(frozen=True)
class Sample:
    id: str
    actor: str
    label: int
    split: str
    features: np.ndarray  # [length, feature_dim] float32

    def __post_init__(self):
        if self.features.ndim != 2:
            raise DataError(f"sample {self.id}: features must be 2-d, "
                            f"got shape {self.features.shape}")
        if not np.isfinite(self.features).all():
            raise DataError(f"sample {self.id}: features contain "
                            "non-finite values")
        if self.split not in ("train", "val", "test"):
            raise DataError(f"sample {self.id}: unknown split "
                            f"{self.split!r}")


def write_posepack(path, samples: list[Sample], class_names: list[str],
                   detector: str, extra: dict | None = None) -> None:
    """Write a dataset directory. ``extra`` adds provenance keys to the
    manifest. Deterministic: identical inputs give identical bytes."""
    if not samples:
        raise DataError("refusing to write an empty dataset")
    widths = {s.features.shape[1] for s in samples}
    if len(widths) != 1:
        raise DataError(f"samples have mixed feature widths: {sorted(widths)}")
    seen = set()
    for s in samples:
        if s.id in seen:
            raise DataError(f"duplicate sample id {s.id!r}")
        seen.add(s.id)
        if not 0 <= s.label < len(class_names):
            raise DataError(f"sample {s.id}: label {s.label} out of range "
                            f"for {len(class_names)} classes")

    path = Path(path)
    path.mkdir(parents=True, exist_ok=True)
    records = []
    offset = 0
    with open(path / "tensors.bin", "wb") as blob:
        for s in samples:
            data = np.ascontiguousarray(s.features, dtype="<f4").tobytes()
            records.append({
                "id": s.id,
                "actor": s.actor,
                "label": int(s.label),
                "length": int(s.features.shape[0]),
                "split": s.split,
                "offset": offset,
            })
            blob.write(data)
            offset += len(data)
    manifest = {
        "format": FORMAT,
        "version": VERSION,
        "detector": detector,
        "feature_dim": int(widths.pop()),
        "byte_order": "little",
        "dtype": "float32",
        "class_names": list(class_names),
        "samples": records,
    }
    manifest.update(extra or {})
    with open(path / "manifest.json", "w", encoding="utf-8") as fh:
        json.dump(manifest, fh, indent=1)
        fh.write("\n")
