"""Procedural pose-sequence generator for desk-scale experiments.

Each class is a parametric motion: one of five mirror-symmetric joint groups
oscillates along a fixed axis at one of four tempos, on top of an articulated
stick figure. Samples vary by actor (body scale, resting posture), phase,
amplitude, and per-frame jitter, so the classes are learnable but not
trivially linearly separable from single frames.

Horizontal coordinates are centered on zero, which keeps sign-flip
mirroring a label-preserving augmentation: every joint group is symmetric,
and oscillation phase is random per sample, so a mirrored sequence is just
another valid sample of the same class.
"""

from __future__ import annotations

import math

import numpy as np

from .data import Dataset, PoseSample, compute_velocities
from .errors import ParameterError

# 13-keypoint stick figure: head, neck, pelvis, shoulders, elbows, wrists,
# hips, knees (x centered on 0, y in [0, 1])
_FIGURE_13 = np.array([
    (0.00, 1.00),   # head
    (0.00, 0.80),   # neck
    (0.00, 0.40),   # pelvis
    (0.20, 0.78), (-0.20, 0.78),   # shoulders
    (0.32, 0.55), (-0.32, 0.55),   # elbows
    (0.36, 0.32), (-0.36, 0.32),   # wrists
    (0.12, 0.40), (-0.12, 0.40),   # hips
    (0.15, 0.10), (-0.15, 0.10),   # knees
])

# joint group, axis (0=x, 1=y), antiphase by body side, amplitude
_MOTIONS_13 = [
    ("arm-swing", [3, 4, 5, 6, 7, 8], 0, False, 0.22),
    ("leg-step", [9, 10, 11, 12], 0, True, 0.20),
    ("head-nod", [0, 1], 1, False, 0.15),
    ("body-sway", list(range(13)), 0, False, 0.18),
    ("arm-raise", [3, 4, 5, 6, 7, 8], 1, True, 0.22),
]

# cycles per frame; all well below the 0.5 sampling limit
_TEMPOS = [("slow", 0.05), ("easy", 0.11), ("brisk", 0.18), ("fast", 0.26)]

_JITTER = 0.015


def _base_figure(keypoints: int) -> np.ndarray:
    if keypoints == 13:
        return _FIGURE_13.copy()
    # generic centered figure: alternating sides, descending height
    idx = np.arange(keypoints)
    x = np.where(idx % 2 == 0, 1.0, -1.0) * 0.1 * (1 + idx // 2)
    x[0] = 0.0
    y = np.linspace(1.0, 0.0, keypoints)
    return np.stack([x, y], axis=1)


def _motions(keypoints: int):
    if keypoints == 13:
        return _MOTIONS_13
    # split the joint list into five contiguous groups
    parts = np.array_split(np.arange(keypoints), min(5, keypoints))
    specs = []
    for g, (name, _joints, axis, anti, amp) in enumerate(_MOTIONS_13):
        joints = list(parts[g % len(parts)])
        specs.append((name, joints, axis, anti, amp))
    return specs


def class_names(classes: int = 20) -> list[str]:
    names = [f"{motion}-{tempo}" for tempo, _ in _TEMPOS
             for motion, *_ in _MOTIONS_13]
    return names[:classes]


def _sequence(rng: np.random.Generator, base: np.ndarray, motion, freq: float,
              length: int, scale: float, posture: np.ndarray) -> np.ndarray:
    _name, joints, axis, antiphase, amp = motion
    figure = base * scale + posture
    pos = np.tile(figure, (length, 1, 1))
    t = np.arange(length)
    wave = np.sin(2 * math.pi * freq * t + rng.uniform(0, 2 * math.pi))
    wave = wave * amp * scale * rng.uniform(0.8, 1.2)
    for k in joints:
        side = -1.0 if (antiphase and base[k, 0] < 0) else 1.0
        pos[:, k, axis] += side * wave
    pos += rng.normal(0.0, _JITTER, size=pos.shape)
    return compute_velocities(pos).astype(np.float32)


def synth_generate(classes: int = 20, train_per_class: int = 100,
                   test_per_class: int = 20, in_features: int = 52,
                   seed: int = 0, train_actors: int = 8,
                   test_actors: int = 3) -> Dataset:
    """Generate a labelled synthetic dataset with disjoint train/test actors.

    Sequence lengths are uniform over [20, 30]; features are the usual
    x, y, vx, vy per keypoint, so ``in_features`` must be a multiple of 4.
    """
    if not 1 <= classes <= 20:
        raise ParameterError(f"classes must be in [1, 20], got {classes}")
    if train_per_class < 1 or test_per_class < 1:
        raise ParameterError("per-class sample counts must be at least 1")
    if in_features % 4 != 0 or in_features < 4:
        raise ParameterError(
            f"in_features must be a positive multiple of 4, got {in_features}"
        )
    keypoints = in_features // 4
    base = _base_figure(keypoints)
    motions = _motions(keypoints)
    specs = [(motions[c % len(motions)], _TEMPOS[(c // len(motions)) % len(_TEMPOS)][1])
             for c in range(classes)]

    root = np.random.SeedSequence(seed)
    actor_seed, sample_seed = root.spawn(2)
    actor_rng = np.random.default_rng(actor_seed)

    def make_actors(prefix: str, count: int):
        profiles = []
        for i in range(count):
            profiles.append((
                f"actor-{prefix}-{i:02d}",
                actor_rng.uniform(0.85, 1.15),
                actor_rng.normal(0.0, 0.02, size=base.shape),
            ))
        return profiles

    pools = {"train": make_actors("train", train_actors),
             "test": make_actors("test", test_actors)}
    counts = {"train": train_per_class, "test": test_per_class}

    samples = []
    rng = np.random.default_rng(sample_seed)
    for split in ("train", "test"):
        for c in range(classes):
            motion, freq = specs[c]
            for k in range(counts[split]):
                name, scale, posture = pools[split][
                    int(rng.integers(len(pools[split])))]
                length = int(rng.integers(20, 31))
                features = _sequence(rng, base, motion, freq, length,
                                     scale, posture)
                samples.append(PoseSample(
                    id=f"synth-{split}-c{c:02d}-{k:04d}",
                    actor=name,
                    label=c,
                    features=features,
                    split=split,
                ))
    return Dataset(detector="synthetic", class_names=class_names(classes),
                   samples=samples)
