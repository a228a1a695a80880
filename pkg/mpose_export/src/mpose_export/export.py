"""Adapter from the published dataset package to POSEPACK v1 directories.

The dataset ships as an installable package that downloads pose archives on
first use and exposes train/test arrays after its own preprocessing. This
module performs no numeric preprocessing of its own: it drives the package's
documented default pipeline, attaches identity metadata, and serializes.
Every transformation that is ours (id assignment, actor parsing, partition
tagging) is deterministic, so re-exporting with pinned package and data
versions is byte-identical.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import ConfigError, DataError
from .posepack import Sample, write_posepack

DETECTOR_WIDTHS = {"openpose": 52, "posenet": 68}
SPLITS = (1, 2, 3)

# documented per-partition naming variants across package versions
_NAME_ATTRS = ("name_{p}", "names_{p}", "{p}_names", "{p}_ids", "ids_{p}")
_ACTOR_ATTRS = ("actor_{p}", "actors_{p}", "{p}_actors")


def _import_pose_package():
    try:
        import mpose
    except ImportError as exc:
        raise DataError(
            "the 'mpose' dataset package is not installed; run "
            "`pip install mpose` (it downloads the pose archives over the "
            "network on first use) and retry"
        ) from exc
    return mpose


@dataclass
class Partition:
    features: np.ndarray       # [count, frames, width] float32
    labels: np.ndarray         # [count] int
    names: list[str]
    actors: list[str] | None = None  # explicit metadata when available


@dataclass
class RawExport:
    detector: str
    split: int
    class_names: list[str]
    partitions: dict[str, Partition]
    package_version: str
    preprocessing: list[str] = field(default_factory=list)


def actor_from_name(name: str) -> str:
    """Actor id parsed from a sample identifier: the leading token of the
    underscore-separated name. Used only when the package exposes no
    explicit actor metadata; a wrong parse cannot slip through silently
    because the train/test actor disjointness check aborts the export."""
    token = str(name).split("_", 1)[0].strip()
    if not token:
        raise DataError(f"cannot parse an actor from sample name {name!r}")
    return token


def _probe_attr(dataset, patterns, part: str, count: int):
    for pattern in patterns:
        attr = pattern.format(p=part)
        values = getattr(dataset, attr, None)
        if values is None:
            continue
        values = [str(v) for v in list(values)]
        if len(values) != count:
            raise DataError(
                f"package metadata {attr} has {len(values)} entries for "
                f"{count} {part} samples")
        return values
    return None


def _partition_names(dataset, part: str, count: int) -> list[str]:
    names = _probe_attr(dataset, _NAME_ATTRS, part, count)
    if names is not None:
        return names
    tried = ", ".join(p.format(p=part) for p in _NAME_ATTRS)
    raise DataError(
        f"the installed dataset package exposes no sample identifiers for "
        f"the {part} partition (tried attributes: {tried}); actor metadata "
        "cannot be derived, so the export would violate its provenance "
        "contract. Install a package version that retains sample names.")


def _class_names(dataset) -> list[str]:
    getter = getattr(dataset, "get_labels", None)
    if getter is None:
        raise DataError("the installed dataset package has no get_labels()")
    labels = getter()
    if isinstance(labels, dict):
        # mapping of name -> index (or index -> name); normalize to a list
        try:
            items = sorted(labels.items(), key=lambda kv: int(kv[1]))
            return [str(k) for k, _ in items]
        except (TypeError, ValueError):
            items = sorted(labels.items(), key=lambda kv: int(kv[0]))
            return [str(v) for _, v in items]
    return [str(name) for name in list(labels)]


def _as_batched_frames(x: np.ndarray, part: str) -> np.ndarray:
    x = np.asarray(x)
    if x.ndim == 4:  # [count, frames, keypoints, channels] -> flatten
        x = x.reshape(x.shape[0], x.shape[1], -1)
    if x.ndim != 3:
        raise DataError(f"{part} features have shape {x.shape}, expected "
                        "[count, frames, width]")
    return np.ascontiguousarray(x, dtype=np.float32)


def pull_raw(split: int, detector: str) -> RawExport:
    """Drive the dataset package: construct, run its documented default
    preprocessing chain, and collect every partition it exposes."""
    if split not in SPLITS:
        raise ConfigError(f"split must be one of {SPLITS}, got {split}")
    if detector not in DETECTOR_WIDTHS:
        raise ConfigError(f"detector must be one of "
                          f"{sorted(DETECTOR_WIDTHS)}, got {detector!r}")
    package = _import_pose_package()
    try:
        dataset = package.MPOSE(pose_extractor=detector, split=split,
                                preprocess="scale_and_center",
                                velocities=True)
    except TypeError:
        dataset = package.MPOSE(pose_extractor=detector, split=split)
    steps = []
    for method in ("reduce_keypoints", "scale_and_center",
                   "remove_confidence", "flatten_features"):
        hook = getattr(dataset, method, None)
        if callable(hook):
            hook()
            steps.append(method)

    x_train, y_train, x_test, y_test = dataset.get_data()
    partitions = {
        "train": (x_train, y_train),
        "test": (x_test, y_test),
    }
    x_val = getattr(dataset, "X_val", None)
    y_val = getattr(dataset, "y_val", None)
    if x_val is not None and y_val is not None and len(x_val):
        partitions["val"] = (x_val, y_val)

    built = {}
    for part, (x, y) in partitions.items():
        x = _as_batched_frames(x, part)
        y = np.asarray(y).astype(int).ravel()
        if len(y) != x.shape[0]:
            raise DataError(f"{part}: {x.shape[0]} feature rows but "
                            f"{len(y)} labels")
        built[part] = Partition(
            x, y, _partition_names(dataset, part, x.shape[0]),
            actors=_probe_attr(dataset, _ACTOR_ATTRS, part, x.shape[0]))
    return RawExport(
        detector=detector,
        split=split,
        class_names=_class_names(dataset),
        partitions=built,
        package_version=str(getattr(package, "__version__", "unknown")),
        preprocessing=steps,
    )


def build_samples(raw: RawExport) -> list[Sample]:
    """Flatten partitions to writer samples, enforcing the interchange
    contract: correct feature width for the detector, globally unique ids,
    and disjoint train/test actor pools."""
    expected = DETECTOR_WIDTHS[raw.detector]
    samples = []
    all_names = [n for p in raw.partitions.values() for n in p.names]
    prefix_ids = len(set(all_names)) != len(all_names)
    for part in ("train", "val", "test"):
        partition = raw.partitions.get(part)
        if partition is None:
            continue
        width = partition.features.shape[2]
        if width != expected:
            raise DataError(
                f"{part} features are {width} wide but detector "
                f"{raw.detector!r} produces {expected}; refusing to export")
        for i, name in enumerate(partition.names):
            sample_id = f"{part}:{name}" if prefix_ids else name
            actor = (partition.actors[i] if partition.actors is not None
                     else actor_from_name(name))
            samples.append(Sample(
                id=sample_id,
                actor=actor,
                label=int(partition.labels[i]),
                split=part,
                features=partition.features[i],
            ))
    train_actors = {s.actor for s in samples if s.split == "train"}
    test_actors = {s.actor for s in samples if s.split == "test"}
    shared = sorted(train_actors & test_actors)
    if shared:
        raise DataError(
            f"actors appear in both train and test partitions: "
            f"{shared[:5]}{'...' if len(shared) > 5 else ''} -- either the "
            "package data is inconsistent or its naming convention changed "
            "and actor parsing is wrong")
    return samples


def export(split: int, detector: str, out, force: bool = False) -> dict:
    """Export one split to a POSEPACK v1 directory; returns count summary."""
    out = Path(out)
    if out.exists() and any(out.iterdir()) and not force:
        raise ConfigError(f"output directory {out} is not empty; "
                          "pass --force to overwrite")
    raw = pull_raw(split, detector)
    samples = build_samples(raw)
    write_posepack(out, samples, raw.class_names, raw.detector, extra={
        "preprocessing": raw.preprocessing,
        "source_package_version": raw.package_version,
        "source_split": raw.split,
    })
    counts = {part: sum(1 for s in samples if s.split == part)
              for part in ("train", "val", "test")}
    counts["total"] = len(samples)
    return counts
