"""Staged, deterministic training of the three modules.

Stages follow the pretrain-then-finetune regime: ``alpha`` fits the PJAT
branch on L_JA, ``beta`` the scene branch on L_AT, ``gamma`` only the
fusion parameters on L_F (both branch outputs detached), and ``all``
fits everything on L_ALL.
"""

from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass
from enum import Enum
from typing import Callable, Sequence

import numpy as np

from . import autodiff as ad
from .autodiff import Adam, CheckpointError, Tensor
from .fusion import (
    BranchConfig,
    Fusion,
    FusionMode,
    SceneBranch,
    ground_truth,
    loss_at,
    loss_ja,
    render_hat,
)
from .model import Pjat, PjatConfig
from .scene import Scene

log = logging.getLogger(__name__)


class Target(str, Enum):
    ALPHA = "alpha"
    BETA = "beta"
    GAMMA = "gamma"
    ALL = "all"


@dataclass
class Stage:
    target: Target
    steps: int
    lr: float = 1e-3

    def __post_init__(self):
        self.target = Target(self.target)
        if self.steps <= 0:
            raise ValueError(f"stage {self.target.value}: steps must be positive")
        if not self.lr > 0:
            raise ValueError(f"stage {self.target.value}: lr must be positive")


DEFAULT_STAGES = (
    Stage(Target.ALPHA, 2000),
    Stage(Target.BETA, 2000),
    Stage(Target.GAMMA, 500),
    Stage(Target.ALL, 1000),
)


def parse_stages(text: str, lr: float = 1e-3) -> list[Stage]:
    """``"alpha:2000,beta:2000"`` or a preset name (``default``, ``alpha-only``, ...)."""
    presets = {
        "default": [(s.target, s.steps) for s in DEFAULT_STAGES],
        "alpha-only": [(Target.ALPHA, DEFAULT_STAGES[0].steps)],
        "beta-only": [(Target.BETA, DEFAULT_STAGES[1].steps)],
        "no-finetune": [(s.target, s.steps) for s in DEFAULT_STAGES[:3]],
    }
    if text in presets:
        return [Stage(t, n, lr) for t, n in presets[text]]
    stages = []
    for chunk in text.split(","):
        chunk = chunk.strip()
        if not chunk:
            continue
        parts = chunk.split(":")
        if len(parts) not in (2, 3):
            raise ValueError(f"bad stage spec {chunk!r}; expected target:steps[:lr]")
        stage_lr = float(parts[2]) if len(parts) == 3 else lr
        stages.append(Stage(Target(parts[0]), int(parts[1]), stage_lr))
    if not stages:
        raise ValueError("no stages given")
    return stages


@dataclass
class TrainConfig:
    stages: Sequence[Stage] = DEFAULT_STAGES
    batch_size: int = 1
    seed: int = 0
    eval_every: int = 0
    checkpoint_path: str | None = None
    loss_log_path: str | None = None

    def __post_init__(self):
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")

    def to_dict(self) -> dict:
        return {
            "stages": [{"target": s.target.value, "steps": s.steps, "lr": s.lr} for s in self.stages],
            "batch_size": self.batch_size,
            "seed": self.seed,
            "eval_every": self.eval_every,
        }


@dataclass
class Models:
    pjat: Pjat
    branch: SceneBranch
    fusion: Fusion

    def params(self) -> dict[str, Tensor]:
        return {**self.pjat.params, **self.branch.params, **self.fusion.params}

    def stage_params(self, target: Target) -> dict[str, Tensor]:
        if target is Target.ALPHA:
            return dict(self.pjat.params)
        if target is Target.BETA:
            return dict(self.branch.params)
        if target is Target.GAMMA:
            return dict(self.fusion.params)
        return self.params()

    def meta(self) -> dict:
        return {
            "pjat": self.pjat.cfg.to_dict(),
            "branch": self.branch.cfg.to_dict(),
            "fusion": {"mode": self.fusion.mode.value, "cnn_channels": self.fusion.cnn_channels},
        }

    def heatmaps(self, scene: Scene) -> dict[str, np.ndarray]:
        """H_JA, H_AT and H_F for one scene, without recording a graph."""
        with ad.no_grad():
            h_ja = self.pjat.render(scene)
            _, h_at = render_hat(scene, self.branch)
            h_f = self.fusion(h_ja, h_at)
        return {"ja": h_ja.data, "at": h_at.data, "f": h_f.data}


def build_models(
    pjat_cfg: PjatConfig,
    branch_cfg: BranchConfig | None = None,
    fusion_mode: FusionMode | str = FusionMode.WEIGHTED,
    seed: int = 0,
) -> Models:
    if branch_cfg is None:
        branch_cfg = BranchConfig(grid_w=pjat_cfg.grid_w, grid_h=pjat_cfg.grid_h)
    if (branch_cfg.grid_w, branch_cfg.grid_h) != (pjat_cfg.grid_w, pjat_cfg.grid_h):
        raise ValueError("PJAT and scene branch grids differ")
    return Models(Pjat(pjat_cfg, seed), SceneBranch(branch_cfg, seed), Fusion(fusion_mode, seed))


class NonFiniteLossError(FloatingPointError):
    def __init__(self, step: int, component: str, value: float):
        super().__init__(f"step {step}: {component} = {value!r}")
        self.step = step
        self.component = component


@dataclass
class LossRecord:
    step: int
    stage: str
    l_ja: float | None = None
    l_at: float | None = None
    l_f: float | None = None
    l_all: float | None = None

    @property
    def objective(self) -> float:
        return {"alpha": self.l_ja, "beta": self.l_at, "gamma": self.l_f, "all": self.l_all}[self.stage]


def stage_loss(scene: Scene, models: Models, target: Target) -> tuple[Tensor, dict[str, float]]:
    """Objective of one stage plus the loss components it computed."""
    g_ja, g_at = ground_truth(scene)
    if target is Target.ALPHA:
        l = loss_ja(models.pjat.render(scene), g_ja)
        return l, {"l_ja": l.item()}
    if target is Target.BETA:
        maps, _ = render_hat(scene, models.branch)
        l = loss_at(maps, g_at)
        return l, {"l_at": l.item()}
    if target is Target.GAMMA:
        with ad.no_grad():
            h_ja = models.pjat.render(scene)
            _, h_at = render_hat(scene, models.branch)
        l = ad.mse_sum(models.fusion(Tensor(h_ja.data), Tensor(h_at.data)), g_ja)
        return l, {"l_f": l.item()}
    h_ja = models.pjat.render(scene)
    maps, h_at = render_hat(scene, models.branch)
    l_ja = loss_ja(h_ja, g_ja)
    l_at = loss_at(maps, g_at)
    l_f = ad.mse_sum(models.fusion(h_ja, h_at), g_ja)
    total = l_ja + l_at + l_f
    return total, {"l_ja": l_ja.item(), "l_at": l_at.item(), "l_f": l_f.item(), "l_all": total.item()}


def stage_stream(target: Target, occurrence: int = 0) -> int:
    """Shuffle stream of a stage, keyed by its target rather than its position.

    Only the parameters of ``target`` move during a stage, so keying the
    order this way makes ``beta`` alone reproduce the ``beta`` stage of the
    full schedule exactly.
    """
    return 4 * occurrence + list(Target).index(Target(target))


def scene_order(n_scenes: int, steps: int, batch_size: int, seed: int, stream: int) -> np.ndarray:
    """Scene indices for every step of a stage: fresh seeded permutation each epoch."""
    rng = np.random.default_rng([seed, 100 + stream])
    needed = steps * batch_size
    chunks = []
    while sum(len(c) for c in chunks) < needed:
        chunks.append(rng.permutation(n_scenes))
    return np.concatenate(chunks)[:needed].reshape(steps, batch_size)


def run_stage(
    dataset: Sequence[Scene],
    models: Models,
    stage: Stage,
    seed: int = 0,
    stream: int | None = None,
    batch_size: int = 1,
    start_step: int = 0,
    on_step: Callable[[LossRecord], None] | None = None,
) -> list[LossRecord]:
    if not dataset:
        raise ValueError("training dataset is empty")
    params = models.stage_params(stage.target)
    for p in models.params().values():
        p.zero_grad()
    opt = Adam(params, lr=stage.lr)
    if stream is None:
        stream = stage_stream(stage.target)
    order = scene_order(len(dataset), stage.steps, batch_size, seed, stream)
    history = []
    for i, batch in enumerate(order):
        step = start_step + i + 1
        sums: dict[str, float] = {}
        for idx in batch:
            loss, parts = stage_loss(dataset[idx], models, stage.target)
            for name, value in parts.items():
                if not math.isfinite(value):
                    raise NonFiniteLossError(step, name.upper(), value)
                sums[name] = sums.get(name, 0.0) + value / batch_size
            loss.backward(np.asarray(1.0 / batch_size))
        opt.step()
        record = LossRecord(step=step, stage=stage.target.value, **sums)
        history.append(record)
        if on_step is not None:
            on_step(record)
    return history


def train(
    dataset: Sequence[Scene],
    models: Models,
    cfg: TrainConfig,
    evaluate: Callable[[Models, int], None] | None = None,
    on_stage_end: Callable[[Stage, Models], None] | None = None,
) -> list[LossRecord]:
    """Run every stage in order; write the loss log and checkpoint if paths are set."""
    history: list[LossRecord] = []
    step = 0

    def on_step(record: LossRecord) -> None:
        if record.step % 200 == 0:
            log.info("step %d [%s] loss %.4f", record.step, record.stage, record.objective)
        if evaluate is not None and cfg.eval_every and record.step % cfg.eval_every == 0:
            evaluate(models, record.step)

    seen: dict[Target, int] = {}
    for stage in cfg.stages:
        stream = stage_stream(stage.target, seen.get(stage.target, 0))
        seen[stage.target] = seen.get(stage.target, 0) + 1
        history += run_stage(dataset, models, stage, cfg.seed, stream, cfg.batch_size, step, on_step)
        step = history[-1].step
        if on_stage_end is not None:
            on_stage_end(stage, models)
    if cfg.loss_log_path:
        write_loss_log(history, cfg.loss_log_path)
    if cfg.checkpoint_path:
        save_checkpoint(models, cfg.checkpoint_path, {"train": cfg.to_dict()})
    return history


LOSS_LOG_HEADER = ["step", "stage", "L_JA", "L_AT", "L_F", "L_ALL"]


def write_loss_log(history: Sequence[LossRecord], path) -> None:
    def fmt(v):
        return "" if v is None else repr(float(v))

    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(LOSS_LOG_HEADER)
        for r in history:
            writer.writerow([r.step, r.stage, fmt(r.l_ja), fmt(r.l_at), fmt(r.l_f), fmt(r.l_all)])


def read_loss_log(path) -> list[LossRecord]:
    def parse(v):
        return None if v == "" else float(v)

    with open(path, encoding="utf-8", newline="") as fh:
        rows = list(csv.DictReader(fh))
    return [
        LossRecord(int(r["step"]), r["stage"], parse(r["L_JA"]), parse(r["L_AT"]), parse(r["L_F"]), parse(r["L_ALL"]))
        for r in rows
    ]


# checkpoints

def save_checkpoint(models: Models, path, run: dict | None = None) -> None:
    """``run`` is free-form provenance stored next to the model description."""
    meta = models.meta()
    if run:
        meta["run"] = run
    ad.save_params(path, models.params(), meta)


def checkpoint_meta(path) -> dict:
    return ad.load_params(path)[0]


def load_checkpoint(path) -> Models:
    """Rebuild models from a checkpoint; nothing is returned unless every tensor matches."""
    meta, arrays = ad.load_params(path)
    try:
        pjat_cfg = PjatConfig.from_dict(meta["pjat"])
        branch_cfg = BranchConfig(**meta["branch"])
        fusion_meta = meta["fusion"]
        models = Models(
            Pjat(pjat_cfg),
            SceneBranch(branch_cfg),
            Fusion(fusion_meta["mode"], cnn_channels=fusion_meta.get("cnn_channels", 8)),
        )
    except (KeyError, TypeError, ValueError) as exc:
        raise CheckpointError(f"{path}: bad model description ({exc})") from exc
    params = models.params()
    if set(params) != set(arrays):
        missing = sorted(set(params) - set(arrays))
        extra = sorted(set(arrays) - set(params))
        raise CheckpointError(f"{path}: parameter set mismatch (missing {missing[:3]}, unexpected {extra[:3]})")
    for name, p in params.items():
        if arrays[name].shape != p.shape:
            raise CheckpointError(f"{path}: {name} has shape {arrays[name].shape}, expected {p.shape}")
    for name, p in params.items():
        p.data[...] = arrays[name]
    return models
