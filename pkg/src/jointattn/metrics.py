"""Joint-attention evaluation: AP distances, detection rates, presence classification."""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field
from typing import Mapping, Sequence

import numpy as np

DEFAULT_THRESHOLDS = (3.0, 6.0, 9.0)


class SingleClassError(ValueError):
    """Presence metrics need both positive and negative scenes."""


def distance_metrics(pred_points, gt_points) -> tuple[float, float, float]:
    """Mean |dx|, mean |dy| and mean Euclidean distance over paired points."""
    pred = np.asarray(pred_points, dtype=np.float64).reshape(-1, 2)
    gt = np.asarray(gt_points, dtype=np.float64).reshape(-1, 2)
    if len(pred) == 0:
        raise ValueError("no points to compare")
    if pred.shape != gt.shape:
        raise ValueError(f"{len(pred)} predictions for {len(gt)} ground-truth points")
    dx, dy, d = per_sample_distances(pred, gt)
    return float(dx.mean()), float(dy.mean()), float(d.mean())


def per_sample_distances(pred, gt) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    delta = np.abs(np.asarray(pred, dtype=np.float64) - np.asarray(gt, dtype=np.float64))
    dx, dy = delta[:, 0], delta[:, 1]
    return dx, dy, np.hypot(dx, dy)


def detection_rate(dists, thresholds: Sequence[float] = DEFAULT_THRESHOLDS) -> dict[float, float]:
    """Fraction of samples with distance strictly below each threshold."""
    d = np.asarray(dists, dtype=np.float64)
    if any(t <= 0 for t in thresholds):
        raise ValueError("thresholds must be positive")
    if d.size == 0:
        return {float(t): 0.0 for t in thresholds}
    return {float(t): float(np.count_nonzero(d < t)) / d.size for t in thresholds}


def _confusion(scores: np.ndarray, labels: np.ndarray, threshold: float) -> tuple[int, int, int, int]:
    pred = scores > threshold
    tp = int(np.count_nonzero(pred & labels))
    fp = int(np.count_nonzero(pred & ~labels))
    fn = int(np.count_nonzero(~pred & labels))
    tn = int(np.count_nonzero(~pred & ~labels))
    return tp, fp, fn, tn


def f_score(scores, labels, threshold: float) -> float:
    tp, fp, fn, _ = _confusion(np.asarray(scores, float), np.asarray(labels, bool), threshold)
    denom = 2 * tp + fp + fn
    return 0.0 if tp == 0 else 2 * tp / denom


def accuracy(scores, labels, threshold: float) -> float:
    tp, _, _, tn = _confusion(np.asarray(scores, float), np.asarray(labels, bool), threshold)
    return (tp + tn) / len(scores)


def select_threshold(scores, labels) -> float:
    """Threshold maximizing F-score; candidates are the distinct scores plus +-inf.

    A scene counts as positive when its score is strictly greater than the
    threshold. Ties between candidates go to the lowest threshold.
    """
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels, dtype=bool)
    if labels.all() or not labels.any():
        raise SingleClassError("validation scores need both classes to choose a threshold")
    candidates = np.concatenate([[-np.inf], np.unique(scores), [np.inf]])
    # sweep: thresholds in ascending order; positives are scores > t
    order = np.argsort(scores, kind="stable")
    s_sorted = scores[order]
    l_sorted = labels[order]
    total_pos = int(labels.sum())
    best_t, best_f = candidates[0], -1.0
    for t in candidates:
        above = len(s_sorted) - int(np.searchsorted(s_sorted, t, side="right"))
        tp = int(l_sorted[len(s_sorted) - above:].sum()) if above else 0
        fp = above - tp
        fn = total_pos - tp
        f = 0.0 if tp == 0 else 2 * tp / (2 * tp + fp + fn)
        if f > best_f:
            best_t, best_f = t, f
    return float(best_t)


def roc_auc(scores, labels) -> float:
    """Mann-Whitney AUC with midranks; tied positive/negative pairs count one half."""
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels, dtype=bool)
    n_pos = int(labels.sum())
    n_neg = len(labels) - n_pos
    if n_pos == 0 or n_neg == 0:
        raise SingleClassError("AUC needs both classes")
    order = np.argsort(scores, kind="stable")
    ranks = np.empty(len(scores))
    sorted_scores = scores[order]
    i = 0
    while i < len(scores):
        j = i
        while j + 1 < len(scores) and sorted_scores[j + 1] == sorted_scores[i]:
            j += 1
        ranks[order[i:j + 1]] = 0.5 * (i + j) + 1.0
        i = j + 1
    u = ranks[labels].sum() - n_pos * (n_pos + 1) / 2.0
    return float(u / (n_pos * n_neg))


@dataclass
class PresenceResult:
    accuracy: float
    f_score: float
    auc: float
    threshold: float


def presence_classification(val_scores, val_labels, test_scores, test_labels) -> PresenceResult:
    """Pick the max-F threshold on validation data, then score the test split."""
    threshold = select_threshold(val_scores, val_labels)
    return PresenceResult(
        accuracy=accuracy(test_scores, test_labels, threshold),
        f_score=f_score(test_scores, test_labels, threshold),
        auc=roc_auc(test_scores, test_labels),
        threshold=threshold,
    )


@dataclass
class MetricsReport:
    dist_x: float
    dist_y: float
    dist: float
    detection_rate: dict[float, float]
    n_samples: int
    accuracy: float | None = None
    f_score: float | None = None
    auc: float | None = None
    chosen_presence_threshold: float | None = None
    extra: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["detection_rate"] = {_fmt_thr(k): v for k, v in self.detection_rate.items()}
        t = self.chosen_presence_threshold
        if t is not None and math.isinf(t):
            d["chosen_presence_threshold"] = "inf" if t > 0 else "-inf"
        return d


def build_report(pred_points, gt_points, thresholds=DEFAULT_THRESHOLDS, presence: PresenceResult | None = None) -> MetricsReport:
    pred = np.asarray(pred_points, dtype=np.float64).reshape(-1, 2)
    gt = np.asarray(gt_points, dtype=np.float64).reshape(-1, 2)
    dist_x, dist_y, dist = distance_metrics(pred, gt)
    _, _, d = per_sample_distances(pred, gt)
    report = MetricsReport(dist_x, dist_y, dist, detection_rate(d, thresholds), len(pred))
    if presence is not None:
        report.accuracy = presence.accuracy
        report.f_score = presence.f_score
        report.auc = presence.auc
        report.chosen_presence_threshold = presence.threshold
    return report


def _fmt_thr(t: float) -> str:
    return f"{t:g}"


def format_table(rows: Mapping[str, MetricsReport], thresholds: Sequence[float] | None = None) -> str:
    """Aligned text table: Method, Dist (x), Dist (y), Dist, Thr=..., then presence columns if any."""
    if not rows:
        return ""
    if thresholds is None:
        thresholds = list(next(iter(rows.values())).detection_rate)
    has_presence = any(r.auc is not None for r in rows.values())
    header = ["Method", "Dist (x)", "Dist (y)", "Dist"] + [f"Thr={_fmt_thr(t)}" for t in thresholds]
    if has_presence:
        header += ["Accuracy", "F-score", "AUC"]
    lines = []
    for name, r in rows.items():
        cells = [name, f"{r.dist_x:.2f}", f"{r.dist_y:.2f}", f"{r.dist:.2f}"]
        cells += [f"{100.0 * r.detection_rate.get(float(t), float('nan')):.1f}" for t in thresholds]
        if has_presence:
            cells += ["-" if v is None else f"{v:.2f}" for v in (r.accuracy, r.f_score, r.auc)]
        lines.append(cells)
    return align_rows(header, lines)


def align_rows(header: Sequence[str], rows: Sequence[Sequence[str]]) -> str:
    """First column left-aligned, the rest right-aligned, ``|`` separated."""
    widths = [max([len(header[i])] + [len(row[i]) for row in rows]) for i in range(len(header))]

    def render(cells):
        first = cells[0].ljust(widths[0])
        rest = [c.rjust(w) for c, w in zip(cells[1:], widths[1:])]
        return " | ".join([first, *rest])

    sep = "-+-".join("-" * w for w in widths)
    return "\n".join([render(header), sep, *(render(c) for c in rows)]) + "\n"


def reports_to_json(rows: Mapping[str, MetricsReport]) -> str:
    return json.dumps({k: v.to_dict() for k, v in rows.items()}, indent=2, sort_keys=False)
