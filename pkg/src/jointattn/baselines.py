"""Reference predictors that involve no learning."""

from __future__ import annotations

from typing import Sequence

import numpy as np

from .scene import Scene


def gaze_intersection(scene: Scene) -> tuple[int, int]:
    """Least-squares intersection of every person's gaze line, snapped to the grid.

    Minimizes the summed squared perpendicular distance to the lines
    l_i + t g_i. Distractors are included, so their rays pull the estimate away
    from the shared point. Degenerate (parallel) configurations fall back to
    the minimum-norm solution.
    """
    a = np.zeros((2, 2))
    rhs = np.zeros(2)
    for p in scene.people:
        g = np.asarray(p.gaze)
        proj = np.eye(2) - np.outer(g, g)
        a += proj
        rhs += proj @ np.asarray(p.location)
    point = np.linalg.lstsq(a, rhs, rcond=None)[0]
    x = int(np.clip(np.floor(point[0] + 0.5), 0, scene.grid_w - 1))
    y = int(np.clip(np.floor(point[1] + 0.5), 0, scene.grid_h - 1))
    return x, y


def gaze_intersection_distance(scenes: Sequence[Scene]) -> float:
    """Mean distance of the intersection estimate on scenes that have a joint AP."""
    d = [
        float(np.hypot(*(np.asarray(gaze_intersection(s)) - np.asarray(s.joint_ap))))
        for s in scenes
        if s.joint_ap is not None
    ]
    if not d:
        raise ValueError("no scene with a joint attention point")
    return float(np.mean(d))
