"""A stand-in for the dataset package, injected as sys.modules["mpose"].

The real package needs network access to pull pose archives, so the suite
exercises the adapter against this deterministic replica of its interface;
tests marked with importorskip cover the genuine article when present.
"""

import sys
import types

import numpy as np
import pytest

WIDTHS = {"openpose": 52, "posenet": 68}


def make_stub_module(*, width=None, train_actors=("a01", "a02", "a03", "a04"),
                     val_actors=("a05",), test_actors=("a06", "a07"),
                     expose_names=True, expose_actors=False,
                     labels_value=("walk", "wave", "jump"),
                     with_val=True, four_d=False,
                     counts=(12, 4, 6), name_style="actor_first"):
    module = types.ModuleType("mpose")
    module.__version__ = "0.0-stub"

    class MPOSE:
        def __init__(self, pose_extractor, split, preprocess=None,
                     velocities=True, **_):
            self.calls = []
            p = width or WIDTHS[pose_extractor]
            rng = np.random.default_rng(split)

            def part(n, actors, tag):
                if four_d and p % 4 == 0:
                    x = rng.normal(size=(n, 30, p // 4, 4))
                else:
                    x = rng.normal(size=(n, 30, p))
                x = x.astype(np.float32)
                y = rng.integers(0, len(list(labels_value)), size=n)
                if name_style == "actor_first":
                    names = [f"{actors[i % len(actors)]}_{tag}_clip{i:03d}"
                             for i in range(n)]
                else:  # shared leading token; actor not parsable from name
                    names = [f"clip_{actors[i % len(actors)]}_{tag}_{i:03d}"
                             for i in range(n)]
                return x, y, names, [actors[i % len(actors)]
                                     for i in range(n)]

            n_train, n_val, n_test = counts
            self._train = part(n_train, list(train_actors), "train")
            self._val = part(n_val, list(val_actors), "val")
            self._test = part(n_test, list(test_actors), "test")
            if expose_names:
                self.name_train = self._train[2]
                self.name_val = self._val[2]
                self.name_test = self._test[2]
            if expose_actors:
                self.actor_train = self._train[3]
                self.actor_val = self._val[3]
                self.actor_test = self._test[3]
            if with_val:
                self.X_val = self._val[0]
                self.y_val = self._val[1]

        def reduce_keypoints(self):
            self.calls.append("reduce_keypoints")

        def scale_and_center(self):
            self.calls.append("scale_and_center")

        def remove_confidence(self):
            self.calls.append("remove_confidence")

        def flatten_features(self):
            self.calls.append("flatten_features")

        def get_data(self):
            return (self._train[0], self._train[1],
                    self._test[0], self._test[1])

        def get_labels(self):
            if isinstance(labels_value, dict):
                return dict(labels_value)
            return list(labels_value)

    module.MPOSE = MPOSE
    return module


@pytest.fixture
def stub(monkeypatch):
    def install(**overrides):
        module = make_stub_module(**overrides)
        monkeypatch.setitem(sys.modules, "mpose", module)
        return module
    return install
