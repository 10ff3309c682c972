"""Run trained models over a dataset and score each branch's heatmaps."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .heatmap import argmax_point
from .metrics import (
    DEFAULT_THRESHOLDS,
    MetricsReport,
    SingleClassError,
    build_report,
    presence_classification,
)
from .scene import Scene

BRANCHES = ("ja", "at", "f")
BRANCH_LABELS = {"ja": "H_JA", "at": "H_AT", "f": "H_F"}


class EmptyDatasetError(ValueError):
    """Evaluation was asked to score zero scenes."""


class GridMismatchError(ValueError):
    """Scene grid differs from the grid the models were built for."""


@dataclass
class Predictions:
    """Per-branch argmax points and heatmap maxima, one entry per scene."""

    points: dict[str, np.ndarray]
    max_values: dict[str, np.ndarray]
    has_ap: np.ndarray
    gt_points: np.ndarray


def check_grid(models, scenes: Sequence[Scene]) -> None:
    cfg = models.pjat.cfg
    for i, s in enumerate(scenes):
        if (s.grid_w, s.grid_h) != (cfg.grid_w, cfg.grid_h):
            raise GridMismatchError(
                f"scene {i} is {s.grid_w}x{s.grid_h}, model expects {cfg.grid_w}x{cfg.grid_h}"
            )
        if s.n_actions != cfg.n_actions:
            raise GridMismatchError(f"scene {i} has {s.n_actions} action classes, model expects {cfg.n_actions}")


def predict(models, scenes: Sequence[Scene]) -> Predictions:
    if not scenes:
        raise EmptyDatasetError("no scenes to evaluate")
    check_grid(models, scenes)
    points = {b: np.zeros((len(scenes), 2)) for b in BRANCHES}
    max_values = {b: np.zeros(len(scenes)) for b in BRANCHES}
    gt = np.full((len(scenes), 2), np.nan)
    for i, scene in enumerate(scenes):
        maps = models.heatmaps(scene)
        for b in BRANCHES:
            (x, y), v = argmax_point(maps[b])
            points[b][i] = (x, y)
            max_values[b][i] = v
        if scene.joint_ap is not None:
            gt[i] = scene.joint_ap
    has_ap = np.array([s.joint_ap is not None for s in scenes])
    return Predictions(points, max_values, has_ap, gt)


def score(
    test: Predictions,
    val: Predictions | None = None,
    thresholds: Sequence[float] = DEFAULT_THRESHOLDS,
    branches: Sequence[str] = BRANCHES,
) -> dict[str, MetricsReport]:
    """Distance metrics on scenes with an AP; presence metrics when both splits have both classes."""
    if not test.has_ap.any():
        raise EmptyDatasetError("test set has no scene with a joint attention point")
    reports = {}
    for b in branches:
        presence = None
        if val is not None:
            try:
                presence = presence_classification(val.max_values[b], val.has_ap, test.max_values[b], test.has_ap)
            except SingleClassError:
                presence = None
        reports[b] = build_report(test.points[b][test.has_ap], test.gt_points[test.has_ap], thresholds, presence)
    return reports


def evaluate(
    models,
    test_scenes: Sequence[Scene],
    val_scenes: Sequence[Scene] | None = None,
    thresholds: Sequence[float] = DEFAULT_THRESHOLDS,
) -> dict[str, MetricsReport]:
    val = predict(models, val_scenes) if val_scenes else None
    reports = score(predict(models, test_scenes), val, thresholds)
    weights = models.fusion.weights
    if weights is not None:
        reports["f"].extra["fusion_weights"] = {"w_ja": weights[0], "w_at": weights[1]}
    return reports


def mean_distance(models, scenes: Sequence[Scene], branch: str = "f") -> float:
    return score(predict(models, scenes), branches=(branch,))[branch].dist
