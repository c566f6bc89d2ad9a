"""Glance sources: the live analytic simulator and the pre-recorded grid.

Both expose ``glance(objects, poses) -> (B, 256)`` normalized pressure.
"""

from __future__ import annotations

from pathlib import Path
from typing import Union

import numpy as np

from . import touch


class SimEnv:
    name = "sim"

    def glance(self, objects: np.ndarray, poses: np.ndarray) -> np.ndarray:
        return touch.glance_batch(objects, poses[:, 0], poses[:, 1])


class DatasetEnv:
    name = "dataset"

    def __init__(self, dataset: touch.GlanceDataset):
        self.dataset = dataset

    @classmethod
    def from_file(cls, path: Union[str, Path]) -> "DatasetEnv":
        return cls(touch.GlanceDataset.load(path))

    @classmethod
    def recorded(cls) -> "DatasetEnv":
        return cls(touch.record_dataset())

    def glance(self, objects: np.ndarray, poses: np.ndarray) -> np.ndarray:
        return self.dataset.lookup(objects, poses[:, 0], poses[:, 1])


_CACHE = {}


def make_env(kind: str = "dataset", dataset_path=None):
    """Build an environment; the in-memory recorded dataset is reused across calls."""
    if kind == "sim":
        return SimEnv()
    if kind != "dataset":
        raise ValueError(f"unknown env {kind!r}; expected 'sim' or 'dataset'")
    if dataset_path is not None:
        return DatasetEnv.from_file(dataset_path)
    if "recorded" not in _CACHE:
        _CACHE["recorded"] = DatasetEnv.recorded()
    return _CACHE["recorded"]
