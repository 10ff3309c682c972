"""Ablation sweeps: attribute knockouts, branch removal, head variants and fusion modes."""

from __future__ import annotations

import dataclasses
import logging
import time
from dataclasses import dataclass, field
from typing import Callable, Sequence

from .autodiff import CheckpointError
from .evaluate import EmptyDatasetError, GridMismatchError, evaluate
from .fusion import FusionMode
from .metrics import DEFAULT_THRESHOLDS, MetricsReport, align_rows
from .model import PjatConfig, Variant
from .scene import Scene
from .trainer import DEFAULT_STAGES, Stage, Target, TrainConfig, build_models, train

log = logging.getLogger(__name__)

ABLATIONS = ("wo_l", "wo_g", "wo_a", "wo_alpha", "wo_beta", "full")
ABLATION_LABELS = {
    "wo_l": "w/o l",
    "wo_g": "w/o g",
    "wo_a": "w/o a",
    "wo_alpha": "w/o alpha",
    "wo_beta": "w/o beta",
    "full": "full",
}
_KNOCKOUT_FIELD = {"wo_l": "use_location", "wo_g": "use_gaze", "wo_a": "use_action"}


@dataclass(frozen=True)
class Cell:
    ablation: str
    variant: Variant = Variant.J_JA_ONLY
    fusion: FusionMode = FusionMode.WEIGHTED

    def __post_init__(self):
        if self.ablation not in ABLATIONS:
            raise ValueError(f"unknown ablation {self.ablation!r}; choose from {', '.join(ABLATIONS)}")
        object.__setattr__(self, "variant", Variant(self.variant))
        object.__setattr__(self, "fusion", FusionMode(self.fusion))

    @property
    def name(self) -> str:
        return f"{ABLATION_LABELS[self.ablation]} / {self.variant.value} / {self.fusion.value}"


def grid_cells(
    ablations: Sequence[str] = ABLATIONS,
    variants: Sequence[Variant | str] = tuple(Variant),
    fusions: Sequence[FusionMode | str] = tuple(FusionMode),
) -> list[Cell]:
    return [Cell(a, v, f) for a in ablations for v in variants for f in fusions]


def final_branch(ablation: str) -> str:
    """With one branch removed, the remaining branch's map is the final estimate."""
    return {"wo_alpha": "at", "wo_beta": "ja"}.get(ablation, "f")


def trained_branches(ablation: str) -> tuple[str, ...]:
    return {"wo_alpha": ("at",), "wo_beta": ("ja",)}.get(ablation, ("ja", "at", "f"))


def cell_config(cell: Cell, base: PjatConfig) -> PjatConfig:
    changes = {"variant": cell.variant}
    if cell.ablation in _KNOCKOUT_FIELD:
        changes[_KNOCKOUT_FIELD[cell.ablation]] = False
    return dataclasses.replace(base, **changes)


def cell_stages(cell: Cell, stages: Sequence[Stage]) -> list[Stage]:
    """Drop the stages that would train a removed branch or the fusion on top of it."""
    keep = {"wo_alpha": {Target.BETA}, "wo_beta": {Target.ALPHA}}.get(cell.ablation)
    chosen = [s for s in stages if keep is None or s.target in keep]
    if not chosen:
        raise ValueError(f"schedule has no stage left for cell {cell.name}")
    return chosen


@dataclass
class CellResult:
    cell: Cell
    reports: dict[str, MetricsReport] = field(default_factory=dict)
    seconds: float = 0.0
    error: str | None = None

    @property
    def final(self) -> str:
        return final_branch(self.cell.ablation)

    @property
    def ok(self) -> bool:
        return self.error is None

    @property
    def final_report(self) -> MetricsReport | None:
        return self.reports.get(self.final)

    def to_dict(self) -> dict:
        return {
            "ablation": self.cell.ablation,
            "variant": self.cell.variant.value,
            "fusion": self.cell.fusion.value,
            "final_branch": self.final,
            "reports": {b: r.to_dict() for b, r in self.reports.items()},
            "seconds": self.seconds,
            "error": self.error,
        }


def run_cell(
    cell: Cell,
    train_scenes: Sequence[Scene],
    test_scenes: Sequence[Scene],
    val_scenes: Sequence[Scene] | None = None,
    base: PjatConfig | None = None,
    stages: Sequence[Stage] = DEFAULT_STAGES,
    seed: int = 0,
    batch_size: int = 1,
    thresholds: Sequence[float] = DEFAULT_THRESHOLDS,
) -> CellResult:
    """Train and score one cell; a failure is recorded on the result instead of raised."""
    start = time.perf_counter()
    result = CellResult(cell)
    try:
        cfg = cell_config(cell, base or PjatConfig())
        models = build_models(cfg, fusion_mode=cell.fusion, seed=seed)
        train(train_scenes, models, TrainConfig(stages=cell_stages(cell, stages), batch_size=batch_size, seed=seed))
        reports = evaluate(models, test_scenes, val_scenes, thresholds)
        result.reports = {b: reports[b] for b in trained_branches(cell.ablation)}
    except (FloatingPointError, ValueError, CheckpointError, EmptyDatasetError, GridMismatchError) as exc:
        result.error = f"{type(exc).__name__}: {exc}"
        log.warning("cell %s failed: %s", cell.name, result.error)
    result.seconds = time.perf_counter() - start
    return result


def run_sweep(
    cells: Sequence[Cell],
    train_scenes: Sequence[Scene],
    test_scenes: Sequence[Scene],
    val_scenes: Sequence[Scene] | None = None,
    on_result: Callable[[CellResult], None] | None = None,
    **kwargs,
) -> list[CellResult]:
    results = []
    for k, cell in enumerate(cells, start=1):
        log.info("cell %d/%d: %s", k, len(cells), cell.name)
        result = run_cell(cell, train_scenes, test_scenes, val_scenes, **kwargs)
        results.append(result)
        if on_result is not None:
            on_result(result)
    return results


def ranking(results: Sequence[CellResult]) -> list[CellResult]:
    """Successful cells by final mean distance (stable on ties), failures last."""
    ok = sorted((r for r in results if r.ok), key=lambda r: r.final_report.dist)
    return ok + [r for r in results if not r.ok]


def ranking_table(results: Sequence[CellResult], thresholds: Sequence[float] | None = None) -> str:
    """One row per cell. Dist (alpha) scores H_JA; Dist (final) scores the final map."""
    if thresholds is None:
        first = next((r.final_report for r in results if r.ok), None)
        thresholds = list(first.detection_rate) if first else list(DEFAULT_THRESHOLDS)
    header = ["Rank", "Ablation", "Variant", "Fusion", "Final", "Dist (alpha)", "Dist (final)"]
    header += [f"Thr={t:g}" for t in thresholds] + ["Status"]
    rows = []
    for rank, r in enumerate(ranking(results), start=1):
        cells = [str(rank) if r.ok else "-", ABLATION_LABELS[r.cell.ablation], r.cell.variant.value, r.cell.fusion.value]
        if r.ok:
            final = r.final_report
            alpha = r.reports.get("ja")
            cells += [
                {"ja": "H_JA", "at": "H_AT", "f": "H_F"}[r.final],
                "-" if alpha is None else f"{alpha.dist:.2f}",
                f"{final.dist:.2f}",
            ]
            cells += [f"{100.0 * final.detection_rate.get(float(t), float('nan')):.1f}" for t in thresholds]
            cells.append("ok")
        else:
            cells += ["-"] * (3 + len(thresholds)) + [r.error or "failed"]
        rows.append(cells)
    return align_rows(header, rows)
