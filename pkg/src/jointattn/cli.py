"""Command line: generate data, train, evaluate, run inference on one scene, sweep ablations.

Exit codes: 0 success, 1 usage error, 2 data error, 3 numeric failure.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import json
import logging
import os
import sys
import time
from datetime import datetime, timezone
from pathlib import Path
from typing import Sequence

import numpy as np

from . import __version__
from .autodiff import CheckpointError
from .baselines import gaze_intersection
from .evaluate import BRANCH_LABELS, EmptyDatasetError, GridMismatchError, evaluate
from .experiments import ABLATIONS, grid_cells, ranking_table, run_sweep
from .fusion import BranchConfig, FusionMode
from .heatmap import Heatmap, argmax_point, write_pgm
from .metrics import DEFAULT_THRESHOLDS, build_report, format_table, reports_to_json
from .model import PjatConfig, Variant
from .scene import DatasetFormatError, InvariantError, Scene, SceneGenConfig, generate_dataset, read_dataset, read_scene, write_dataset
from .trainer import TrainConfig, build_models, checkpoint_meta, load_checkpoint, parse_stages, save_checkpoint, train, write_loss_log

log = logging.getLogger("jointattn")

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3


class UsageError(Exception):
    pass


class DataError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


# flag value parsing (accepts strings from the command line or JSON values from --config)

def parse_grid(value) -> tuple[int, int]:
    if isinstance(value, (list, tuple)) and len(value) == 2:
        w, h = value
    elif isinstance(value, int):
        w = h = value
    else:
        text = str(value).lower()
        try:
            w, h = (text.split("x") if "x" in text else (text, text))
            w, h = int(w), int(h)
        except ValueError:
            raise UsageError(f"--grid expects WxH or a single size, got {value!r}") from None
    if int(w) < 1 or int(h) < 1:
        raise UsageError(f"--grid must be positive, got {value!r}")
    return int(w), int(h)


def parse_range(value) -> tuple[int, int]:
    if isinstance(value, (list, tuple)) and len(value) == 2:
        lo, hi = value
    elif isinstance(value, int):
        lo = hi = value
    else:
        parts = str(value).replace(",", "-").split("-")
        try:
            lo, hi = (int(parts[0]), int(parts[-1])) if len(parts) in (1, 2) else (None, None)
        except ValueError:
            lo = hi = None
        if lo is None:
            raise UsageError(f"--n-people expects LO-HI or a single count, got {value!r}")
    return int(lo), int(hi)


def parse_list(value) -> list[str]:
    if isinstance(value, (list, tuple)):
        return [str(v) for v in value]
    return [v.strip() for v in str(value).split(",") if v.strip()]


def parse_thresholds(value) -> tuple[float, ...]:
    try:
        out = tuple(float(v) for v in parse_list(value))
    except ValueError:
        raise UsageError(f"--thresholds expects comma-separated numbers, got {value!r}") from None
    if not out or any(t <= 0 for t in out):
        raise UsageError("--thresholds must be positive")
    return out


def default_thresholds(grid_w: int, grid_h: int) -> tuple[float, ...]:
    """{3, 6, 9} on a 64-pixel grid, scaled with the larger grid side."""
    scale = max(grid_w, grid_h) / 64.0
    return tuple(t * scale for t in DEFAULT_THRESHOLDS)


# files, hashes, run directories

def sha256_file(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def _require_file(path, what: str) -> Path:
    if path is None:
        raise UsageError(f"{what} path is required")
    p = Path(path)
    if not p.is_file():
        raise UsageError(f"{what} not found: {p}")
    return p


def _load_dataset(path, what: str) -> tuple[list[Scene], dict]:
    p = _require_file(path, f"{what} dataset")
    scenes = read_dataset(p)
    return scenes, {"path": str(p), "sha256": sha256_file(p), "scenes": len(scenes)}


def _new_run_dir(args, command: str, fingerprint: dict) -> tuple[Path, str]:
    """A fresh directory per run; existing directories are never reused."""
    blob = json.dumps(fingerprint, sort_keys=True, default=str)
    run_id = hashlib.sha1(f"{command}|{blob}|{time.time_ns()}|{os.getpid()}".encode()).hexdigest()[:12]
    if args.run_dir:
        path = Path(args.run_dir)
        if path.exists():
            raise UsageError(f"run directory {path} already exists; runs are never overwritten")
    else:
        path = Path(args.out) / f"{command}-{run_id}"
    path.mkdir(parents=True, exist_ok=False)
    return path, run_id


def _write_manifest(run_dir: Path, manifest: dict) -> Path:
    path = run_dir / "manifest.json"
    with open(path, "x", encoding="utf-8") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True, default=str)
        fh.write("\n")
    return path


def _manifest(command: str, run_id: str, args, started: float, **sections) -> dict:
    config = {k: v for k, v in vars(args).items() if k not in ("handler", "command")}
    return {
        "command": command,
        "run_id": run_id,
        "version": __version__,
        "created": datetime.now(timezone.utc).isoformat(timespec="seconds"),
        "duration_seconds": round(time.perf_counter() - started, 3),
        "config": config,
        **sections,
    }


# model configuration from flags

def _add_model_flags(p: argparse.ArgumentParser) -> None:
    g = p.add_argument_group("model")
    g.add_argument("--d-model", type=int, default=64)
    g.add_argument("--n-heads", type=int, default=2)
    g.add_argument("--n-layers", type=int, default=2)
    g.add_argument("--head-hidden", type=int, default=64)
    g.add_argument("--variant", default=Variant.J_JA_ONLY.value, choices=[v.value for v in Variant])
    g.add_argument("--fusion", default=FusionMode.WEIGHTED.value, choices=[m.value for m in FusionMode])
    g.add_argument("--pos-freqs", type=int, default=4, help="sin/cos octaves of pixel coordinates fed to the head")
    g.add_argument("--prior-bias", action="store_true", help="start the head output at the target base rate instead of 0.5")
    g.add_argument("--knockout", action="append", default=[], choices=["l", "g", "a"], help="zero-fill an attribute block (repeatable)")
    g.add_argument("--branch-hidden", type=int, default=32)


def _add_train_flags(p: argparse.ArgumentParser) -> None:
    g = p.add_argument_group("training")
    g.add_argument("--stages", default="default", help="preset (default, alpha-only, beta-only, no-finetune) or target:steps[:lr],...")
    g.add_argument("--lr", type=float, default=1e-3)
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--batch-size", type=int, default=1)


def _pjat_config(args, scenes: Sequence[Scene]) -> PjatConfig:
    first = scenes[0]
    knock = set(args.knockout or [])
    try:
        return PjatConfig(
            n_actions=first.n_actions,
            grid_w=first.grid_w,
            grid_h=first.grid_h,
            d_model=args.d_model,
            n_heads=args.n_heads,
            n_layers=args.n_layers,
            head_hidden=args.head_hidden,
            variant=Variant(args.variant),
            use_location="l" not in knock,
            use_gaze="g" not in knock,
            use_action="a" not in knock,
            pos_freqs=args.pos_freqs,
            prior_bias=args.prior_bias,
        )
    except ValueError as exc:
        raise UsageError(str(exc)) from None


def _stages(args):
    try:
        return parse_stages(args.stages, args.lr)
    except ValueError as exc:
        raise UsageError(f"--stages: {exc}") from None


def _check_uniform(scenes: Sequence[Scene], what: str) -> None:
    shapes = {(s.grid_w, s.grid_h, s.n_actions) for s in scenes}
    if len(shapes) > 1:
        raise DataError(f"{what} dataset mixes grids or action counts: {sorted(shapes)}")


# commands

def cmd_gen(args) -> int:
    started = time.perf_counter()
    w, h = parse_grid(args.grid)
    cfg = SceneGenConfig(
        grid_w=w,
        grid_h=h,
        n_people_range=parse_range(args.n_people),
        distractor_fraction=args.distractor_frac,
        gaze_noise_std_rad=args.gaze_noise,
        no_ap_scene_fraction=args.no_ap_frac,
        n_actions=args.n_actions,
        saliency_clutter_count=args.clutter,
        seed=args.seed,
    )
    try:
        cfg.validate()
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    counts = {"train": args.count, "val": args.val_count, "test": args.test_count}
    for split, n in counts.items():
        if n < 0:
            raise UsageError(f"--{split}-count must be >= 0" if split != "train" else "--count must be >= 0")
    out = Path(args.out)
    targets = {split: out / f"{split}.jsonl" for split in counts}
    clash = [str(p) for p in [*targets.values(), out / "manifest.json"] if p.exists()]
    if clash:
        raise UsageError(f"refusing to overwrite existing files: {', '.join(clash)}")
    out.mkdir(parents=True, exist_ok=True)
    files = {}
    for stream, (split, n) in enumerate(counts.items()):
        write_dataset(generate_dataset(cfg, n, stream), targets[split])
        files[split] = {"path": str(targets[split]), "sha256": sha256_file(targets[split]), "scenes": n}
        print(f"wrote {n} scenes to {targets[split]}")
    run_id = hashlib.sha1(json.dumps(files, sort_keys=True).encode()).hexdigest()[:12]
    _write_manifest(out, _manifest("gen", run_id, args, started, scene_config=cfg.to_dict(), datasets=files))
    return EXIT_OK


def cmd_train(args) -> int:
    started = time.perf_counter()
    scenes, train_info = _load_dataset(args.train, "training")
    if not scenes:
        raise DataError(f"training dataset {args.train} is empty")
    _check_uniform(scenes, "training")
    datasets = {"train": train_info}
    val = None
    if args.val:
        val, datasets["val"] = _load_dataset(args.val, "validation")
    if args.eval_every and not val:
        raise UsageError("--eval-every needs --val")
    pjat_cfg = _pjat_config(args, scenes)
    stages = _stages(args)
    try:
        tcfg = TrainConfig(stages=stages, batch_size=args.batch_size, seed=args.seed, eval_every=args.eval_every)
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    branch_cfg = BranchConfig(pjat_cfg.grid_w, pjat_cfg.grid_h, args.branch_hidden)
    models = build_models(pjat_cfg, branch_cfg, args.fusion, seed=args.seed)

    run_dir, run_id = _new_run_dir(args, "train", {"config": vars(args), "data": datasets})
    ckpt, loss_log = run_dir / "checkpoint.json", run_dir / "loss_log.csv"
    # no run id here so that equal seeds give byte-identical checkpoints
    run_meta = {"train": tcfg.to_dict(), "train_sha256": train_info["sha256"]}
    val_history = []
    stage_files = []

    def on_eval(m, step):
        reports = evaluate(m, val)
        val_history.append({"step": step, **{b: reports[b].dist for b in reports}})
        log.info("step %d: validation dist %s", step, {b: round(r.dist, 3) for b, r in reports.items()})

    def on_stage_end(stage, m):
        if args.stage_checkpoints:
            path = run_dir / f"stage{len(stage_files) + 1}_{stage.target.value}.json"
            save_checkpoint(m, path, run_meta)
            stage_files.append(str(path))

    sections = {"datasets": datasets, "model": models.meta(), "train": tcfg.to_dict()}
    try:
        # overflow surfaces as a non-finite loss with a step-level diagnostic
        with np.errstate(over="ignore", invalid="ignore"):
            history = train(scenes, models, tcfg, evaluate=on_eval if val else None, on_stage_end=on_stage_end)
    except FloatingPointError as exc:
        _write_manifest(run_dir, _manifest("train", run_id, args, started, status="failed", error=str(exc), **sections))
        raise
    write_loss_log(history, loss_log)
    save_checkpoint(models, ckpt, run_meta)
    final = {}
    for stage in {r.stage for r in history}:
        objective = [r.objective for r in history if r.stage == stage]
        final[stage] = float(np.mean(objective[-100:]))
    realized = {"steps": len(history), "final_loss_mean_last_100": final, "train_seconds": round(time.perf_counter() - started, 3)}
    if models.fusion.weights is not None:
        realized["fusion_weights"] = dict(zip(("w_ja", "w_at"), models.fusion.weights))
    if val_history:
        realized["validation"] = val_history
    _write_manifest(
        run_dir,
        _manifest(
            "train", run_id, args, started, status="ok", checkpoint=str(ckpt), loss_log=str(loss_log),
            stage_checkpoints=stage_files, realized=realized, **sections,
        ),
    )
    print(f"run {run_id}: checkpoint {ckpt}")
    return EXIT_OK


def _baseline_reports(ckpt_path, test: Sequence[Scene], thresholds) -> dict:
    meta = checkpoint_meta(ckpt_path)
    seed = int(meta.get("run", {}).get("train", {}).get("seed", 0))
    trained = load_checkpoint(ckpt_path)
    untrained = build_models(trained.pjat.cfg, trained.branch.cfg, trained.fusion.mode, seed=seed)
    rows = {"untrained H_F": evaluate(untrained, test, thresholds=thresholds)["f"]}
    with_ap = [s for s in test if s.joint_ap is not None]
    if with_ap:
        pts = [gaze_intersection(s) for s in with_ap]
        rows["gaze-ray LS"] = build_report(pts, [s.joint_ap for s in with_ap], thresholds)
    return rows


def cmd_eval(args) -> int:
    started = time.perf_counter()
    ckpt = _require_file(args.checkpoint, "checkpoint")
    test, test_info = _load_dataset(args.test, "test")
    val, val_info = _load_dataset(args.val, "validation")
    models = load_checkpoint(ckpt)
    cfg = models.pjat.cfg
    thresholds = parse_thresholds(args.thresholds) if args.thresholds else default_thresholds(cfg.grid_w, cfg.grid_h)
    reports = evaluate(models, test, val, thresholds)
    branches = ("ja", "at", "f") if args.per_branch else ("f",)
    rows = {BRANCH_LABELS[b]: reports[b] for b in branches}
    if args.baselines:
        rows.update(_baseline_reports(ckpt, test, thresholds))
    datasets = {"test": test_info, "val": val_info, "checkpoint": {"path": str(ckpt), "sha256": sha256_file(ckpt)}}
    run_dir, run_id = _new_run_dir(args, "eval", {"config": vars(args), "data": datasets})
    table = format_table(rows, thresholds)
    (run_dir / "metrics.json").write_text(reports_to_json(rows) + "\n", encoding="utf-8")
    (run_dir / "metrics.txt").write_text(table, encoding="utf-8")
    realized = {"dist": {name: r.dist for name, r in rows.items()}}
    if models.fusion.weights is not None:
        realized["fusion_weights"] = dict(zip(("w_ja", "w_at"), models.fusion.weights))
    _write_manifest(
        run_dir,
        _manifest("eval", run_id, args, started, datasets=datasets, metrics=str(run_dir / "metrics.json"), realized=realized),
    )
    sys.stdout.write(table)
    return EXIT_OK


def cmd_infer(args) -> int:
    started = time.perf_counter()
    ckpt = _require_file(args.checkpoint, "checkpoint")
    scene = read_scene(_require_file(args.scene, "scene"))
    models = load_checkpoint(ckpt)
    cfg = models.pjat.cfg
    if (scene.grid_w, scene.grid_h) != (cfg.grid_w, cfg.grid_h) or scene.n_actions != cfg.n_actions:
        raise GridMismatchError(
            f"scene is {scene.grid_w}x{scene.grid_h} with {scene.n_actions} actions, "
            f"model expects {cfg.grid_w}x{cfg.grid_h} with {cfg.n_actions}"
        )
    layer = cfg.n_layers - 1 if args.layer is None else args.layer
    if not 0 <= layer < cfg.n_layers:
        raise UsageError(f"--layer must be in [0, {cfg.n_layers - 1}]")
    maps = models.heatmaps(scene)
    weights = models.pjat.extract_ja_attention(scene, layer)
    run_dir, run_id = _new_run_dir(args, "infer", {"scene": sha256_file(args.scene), "checkpoint": sha256_file(ckpt)})
    outputs = {}
    for b in ("ja", "at", "f"):
        path = run_dir / f"{BRANCH_LABELS[b]}.pgm"
        write_pgm(Heatmap(maps[b]), path)
        outputs[BRANCH_LABELS[b]] = str(path)
    att_path = run_dir / "attention.csv"
    with open(att_path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["person", "x", "y", "weight"])
        for i, (p, wgt) in enumerate(zip(scene.people, weights)):
            writer.writerow([i, repr(float(p.location[0])), repr(float(p.location[1])), repr(float(wgt))])
    (x, y), value = argmax_point(maps["f"])
    _write_manifest(
        run_dir,
        _manifest(
            "infer", run_id, args, started, outputs={**outputs, "attention": str(att_path)},
            realized={"argmax_h_f": [x, y], "value": value, "attention_layer": layer},
        ),
    )
    print(f"H_F argmax: {x} {y} value {value:.6f}")
    print(f"outputs in {run_dir}")
    return EXIT_OK


def cmd_ablate(args) -> int:
    started = time.perf_counter()
    train_set, train_info = _load_dataset(args.train, "training")
    test, test_info = _load_dataset(args.test, "test")
    datasets = {"train": train_info, "test": test_info}
    val = None
    if args.val:
        val, datasets["val"] = _load_dataset(args.val, "validation")
    if not train_set:
        raise DataError(f"training dataset {args.train} is empty")
    if not test:
        raise EmptyDatasetError(f"test dataset {args.test} is empty")
    _check_uniform(train_set, "training")
    try:
        cells = grid_cells(parse_list(args.ablations), parse_list(args.variants), parse_list(args.fusions))
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    if not cells:
        raise UsageError("no ablation cells selected")
    base = _pjat_config(args, train_set)
    stages = _stages(args)
    thresholds = parse_thresholds(args.thresholds) if args.thresholds else default_thresholds(base.grid_w, base.grid_h)
    run_dir, run_id = _new_run_dir(args, "ablate", {"config": vars(args), "data": datasets})
    results = run_sweep(
        cells, train_set, test, val, base=base, stages=stages, seed=args.seed,
        batch_size=args.batch_size, thresholds=thresholds,
        on_result=lambda r: log.info("%s: %s", r.cell.name, "ok" if r.ok else r.error),
    )
    table = ranking_table(results, thresholds)
    (run_dir / "ablation.txt").write_text(table, encoding="utf-8")
    (run_dir / "ablation.json").write_text(json.dumps([r.to_dict() for r in results], indent=2) + "\n", encoding="utf-8")
    failed = [r.cell.name for r in results if not r.ok]
    _write_manifest(
        run_dir,
        _manifest(
            "ablate", run_id, args, started, datasets=datasets, table=str(run_dir / "ablation.txt"),
            realized={"cells": len(results), "failed": failed,
                      "final_dist": {r.cell.name: r.final_report.dist for r in results if r.ok}},
        ),
    )
    sys.stdout.write(table)
    if failed:
        print(f"{len(failed)} of {len(results)} cells failed; see {run_dir / 'ablation.json'}", file=sys.stderr)
    return EXIT_OK


# parser

def build_parser() -> tuple[argparse.ArgumentParser, dict[str, argparse.ArgumentParser]]:
    parser = _Parser(prog="jointattn", description="Joint attention estimation with a position-embedded transformer.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", metavar="COMMAND")
    subs = {}

    def add(name, handler, help_text):
        p = sub.add_parser(name, help=help_text, description=help_text)
        p.add_argument("--config", help="JSON file of flag values; explicit flags override it")
        p.set_defaults(handler=handler)
        subs[name] = p
        return p

    def add_run_dir(p):
        p.add_argument("--out", default="runs", help="parent directory for the new run directory")
        p.add_argument("--run-dir", help="exact run directory to create (must not exist)")

    p = add("gen", cmd_gen, "Write train/val/test synthetic scene files.")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--grid", default="64x64", help="WxH or a single size")
    p.add_argument("--n-people", default="6-10", help="LO-HI people per scene")
    p.add_argument("--distractor-frac", type=float, default=0.25)
    p.add_argument("--gaze-noise", type=float, default=0.1, help="attender gaze angular noise std (radians)")
    p.add_argument("--no-ap-frac", type=float, default=0.1, help="fraction of scenes without joint attention")
    p.add_argument("--n-actions", type=int, default=5)
    p.add_argument("--clutter", type=int, default=3, help="saliency clutter bumps per scene")
    p.add_argument("--count", type=int, default=2000, help="training scenes")
    p.add_argument("--val-count", type=int, default=200)
    p.add_argument("--test-count", type=int, default=500)

    p = add("train", cmd_train, "Train the three modules with a staged schedule.")
    p.add_argument("--train", help="training dataset (JSON lines)")
    p.add_argument("--val", help="validation dataset, used with --eval-every")
    p.add_argument("--eval-every", type=int, default=0)
    p.add_argument("--stage-checkpoints", action="store_true", help="also checkpoint after every stage")
    _add_train_flags(p)
    _add_model_flags(p)
    add_run_dir(p)

    p = add("eval", cmd_eval, "Score a checkpoint on a test set.")
    p.add_argument("--checkpoint")
    p.add_argument("--test", help="test dataset")
    p.add_argument("--val", help="validation dataset for the presence threshold")
    p.add_argument("--per-branch", action="store_true", help="report H_JA, H_AT and H_F rows")
    p.add_argument("--baselines", action="store_true", help="add untrained-model and gaze-ray intersection rows")
    p.add_argument("--thresholds", help="detection thresholds in pixels, comma separated")
    add_run_dir(p)

    p = add("infer", cmd_infer, "Heatmaps and token attention for one scene.")
    p.add_argument("--checkpoint")
    p.add_argument("--scene", help="one scene as a JSON object")
    p.add_argument("--layer", type=int, help="encoder layer for attention weights (default: last)")
    add_run_dir(p)

    p = add("ablate", cmd_ablate, "Train and rank a grid of ablation cells.")
    p.add_argument("--train")
    p.add_argument("--test")
    p.add_argument("--val")
    p.add_argument("--ablations", default=",".join(ABLATIONS), help=f"subset of {','.join(ABLATIONS)}")
    p.add_argument("--variants", default=",".join(v.value for v in Variant))
    p.add_argument("--fusions", default=",".join(m.value for m in FusionMode))
    p.add_argument("--thresholds")
    _add_train_flags(p)
    _add_model_flags(p)
    add_run_dir(p)
    return parser, subs


_REQUIRED = {
    "train": ("train",),
    "eval": ("checkpoint", "test", "val"),
    "infer": ("checkpoint", "scene"),
    "ablate": ("train", "test"),
}


def parse_args(argv: Sequence[str] | None) -> argparse.Namespace:
    parser, subs = build_parser()
    args = parser.parse_args(argv)
    if args.command is None:
        raise UsageError(parser.format_usage().strip() + "\njointattn: a command is required")
    if args.config:
        sub = subs[args.command]
        try:
            values = json.loads(Path(args.config).read_text(encoding="utf-8"))
        except (OSError, json.JSONDecodeError) as exc:
            raise UsageError(f"--config {args.config}: {exc}") from None
        if not isinstance(values, dict):
            raise UsageError("--config must hold a JSON object")
        known = {a.dest for a in sub._actions} - {"help", "config", "handler"}
        values = {k.replace("-", "_"): v for k, v in values.items()}
        unknown = sorted(set(values) - known)
        if unknown:
            raise UsageError(f"--config has unknown keys for {args.command}: {', '.join(unknown)}")
        sub.set_defaults(**values)
        args = parser.parse_args(argv)
    for name in _REQUIRED.get(args.command, ()):
        if getattr(args, name) is None:
            raise UsageError(f"{args.command}: --{name.replace('_', '-')} is required")
    return args


def main(argv: Sequence[str] | None = None) -> int:
    try:
        args = parse_args(argv)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except SystemExit as exc:  # --help / --version
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.handler(args)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (DataError, DatasetFormatError, InvariantError, CheckpointError, EmptyDatasetError, GridMismatchError, OSError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except FloatingPointError as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
