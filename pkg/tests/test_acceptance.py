"""End-to-end acceptance checks.

Run with ``pytest -v tests/test_acceptance.py``; the terminal summary ends
with one PASS/FAIL line per criterion. The training-based criteria share one
set of runs on the default task (about half an hour on one CPU core).
"""

import itertools
import json
import math
import time
from statistics import median

import numpy as np
import pytest

from jointattn import autodiff as ad
from jointattn.autodiff import Parameter
from jointattn.cli import EXIT_OK, main
from jointattn.evaluate import mean_distance, predict
from jointattn.fusion import total_loss
from jointattn.metrics import detection_rate, distance_metrics, presence_classification, roc_auc, select_threshold
from jointattn.model import Pjat, PjatConfig
from jointattn.scene import SceneGenConfig, generate_dataset, generate_scene, read_dataset
from jointattn.trainer import TrainConfig, build_models, load_checkpoint, parse_stages, read_loss_log, save_checkpoint, train

SEEDS = (0, 1, 2)


# shared training runs

def _ok(argv):
    code = main([str(a) for a in argv])
    assert code == EXIT_OK, argv


@pytest.fixture(scope="module")
def task(tmp_path_factory):
    """Default task (64x64, 6-10 people, 25% distractors, 0.1 rad noise, 2000/200/500)."""
    out = tmp_path_factory.mktemp("accept") / "data"
    _ok(["gen", "--out", out])
    return out


@pytest.fixture(scope="module")
def runs(task):
    """Full default schedule per seed plus alpha-only knockout and imagewise cells."""
    root = task.parent / "runs"
    result = {"full": {}, "wo_g": {}, "wo_a": {}, "imagewise": {}, "seconds": {}}
    for seed in SEEDS:
        run = root / f"full-{seed}"
        started = time.perf_counter()
        _ok(["train", "--train", task / "train.jsonl", "--run-dir", run, "--seed", seed, "--stage-checkpoints"])
        result["seconds"][seed] = time.perf_counter() - started
        result["full"][seed] = run
        for name, flags in (("wo_g", ["--knockout", "g"]), ("wo_a", ["--knockout", "a"]), ("imagewise", ["--variant", "imagewise"])):
            run = root / f"{name}-{seed}"
            _ok(["train", "--train", task / "train.jsonl", "--run-dir", run, "--seed", seed, "--stages", "alpha-only", *flags])
            result[name][seed] = run
    return result


@pytest.fixture(scope="module")
def test_scenes(task):
    return read_dataset(task / "test.jsonl")


def dist(run_dir, scenes, branch, checkpoint="checkpoint.json"):
    return mean_distance(load_checkpoint(run_dir / checkpoint), scenes, branch)


# criterion 1

def _isolated_op_errors():
    rng = np.random.default_rng(7)
    a = rng.normal(size=(4, 3))
    a = np.where(np.abs(a) < 0.1, 0.1, a)
    a[np.abs(a + 0.5) < 0.05] += 0.1
    a[np.abs(a - 0.7) < 0.05] += 0.1
    p = {
        "a": Parameter(a),
        "b": Parameter(rng.normal(size=(4, 3))),
        "c": Parameter(rng.normal(size=(5, 3))),
        "m": Parameter(rng.normal(size=(3, 5))),
        "v": Parameter(rng.normal(size=(5,))),
        "g": Parameter(1.0 + 0.1 * rng.normal(size=(3,))),
        "img": Parameter(rng.normal(size=(2, 5, 6))),
        "k": Parameter(rng.normal(size=(3, 2, 3, 3))),
        "kb": Parameter(rng.normal(size=(3,))),
    }
    target = rng.normal(size=(4, 3))
    ops = {
        "add": lambda: ad.add(p["a"], p["b"]),
        "sub": lambda: ad.sub(p["a"], p["b"]),
        "mul": lambda: ad.mul(p["a"], p["b"]),
        "matmul": lambda: ad.matmul(p["a"], p["m"]),
        "relu": lambda: ad.relu(p["a"]),
        "sigmoid": lambda: ad.sigmoid(p["a"]),
        "clip": lambda: ad.clip(p["a"], -0.5, 0.7),
        "softmax_rows": lambda: ad.softmax_rows(p["a"]),
        "layer_norm": lambda: ad.layer_norm(p["a"], p["g"], p["b"][0]),
        "dense": lambda: ad.dense_forward(p["a"], p["m"], p["v"], "relu"),
        "outer_add": lambda: ad.outer_add(p["a"], p["c"]),
        "concat": lambda: ad.concat([p["a"], p["b"]], axis=1),
        "reshape_transpose": lambda: ad.reshape(ad.transpose(p["a"]), (2, 6)),
        "getitem": lambda: p["a"][1:3],
        "sum": lambda: ad.tsum(p["a"], axis=0),
        "mean": lambda: ad.mean(p["a"], axis=1),
        "mse_sum": lambda: ad.mse_sum(p["a"], target),
        "conv2d": lambda: ad.conv2d(p["img"], p["k"], p["kb"]),
    }
    errors = {}
    for name, op in ops.items():
        w = np.random.default_rng(11).normal(size=op().shape)

        def loss(op=op, w=w):
            return ad.tsum(ad.mul(op(), w))

        for q in p.values():
            q.zero_grad()
        loss().backward()
        used = {k: q for k, q in p.items() if np.any(q.grad != 0)}
        errors[name] = ad.grad_check(loss, used).max_rel_error
    return errors


def test_criterion_1_gradient_correctness(verdict):
    started = time.perf_counter()
    cfg = SceneGenConfig(grid_w=16, grid_h=16, n_people_range=(3, 3), no_ap_scene_fraction=0.0)
    scene = generate_scene(cfg, np.random.default_rng(1))
    per_mode = {}
    for mode in ("weighted", "average", "cnn"):
        models = build_models(PjatConfig(grid_w=16, grid_h=16), fusion_mode=mode, seed=3)
        report = ad.grad_check(
            lambda: total_loss(scene, models.pjat, models.branch, models.fusion).all,
            models.params(), h=1e-5, max_entries=6, freeze_kinks=True,
        )
        assert set(report.per_param) == set(models.params())
        per_mode[mode] = report
    ops = _isolated_op_errors()
    seconds = time.perf_counter() - started
    graph_err = max(r.max_rel_error for r in per_mode.values())
    op_err = max(ops.values())
    passed = graph_err < 1e-4 and op_err < 1e-6 and seconds < 60
    verdict(1, passed, f"L_ALL max rel err {graph_err:.2e} (< 1e-4), isolated ops {op_err:.2e} (< 1e-6), {seconds:.1f} s (< 60)")
    assert graph_err < 1e-4, {m: r.worst() for m, r in per_mode.items()}
    assert op_err < 1e-6, max(ops, key=ops.get)
    assert seconds < 60


# criterion 2

def test_criterion_2_permutation_invariance(verdict):
    model = Pjat(PjatConfig(), seed=5)
    scenes = generate_dataset(SceneGenConfig(seed=11), 100, 0)
    rng = np.random.default_rng(12)
    j_err = map_err = f_err = 0.0
    with ad.no_grad():
        for scene in scenes:
            base_map, base = model.forward(scene)
            for _ in range(20):
                order = rng.permutation(scene.n_people)
                h, enc = model.forward(scene.permuted(order))
                j_err = max(j_err, np.abs(enc.j_ja.data - base.j_ja.data).max())
                map_err = max(map_err, np.abs(h.data - base_map.data).max())
                f_err = max(f_err, np.abs(enc.f_ja.data - base.f_ja.data[order]).max())
    passed = j_err < 1e-9 and map_err < 1e-9 and f_err < 1e-12
    verdict(2, passed, f"J_JA {j_err:.1e}, H_JA {map_err:.1e} (< 1e-9); F_JA rows {f_err:.1e} (< 1e-12) over 100 x 20")
    assert passed


# criterion 3

def test_criterion_3_variable_length(runs, verdict):
    models = load_checkpoint(runs["full"][0] / "checkpoint.json")
    shapes = set()
    finite = True
    for n in range(1, 21):
        cfg = SceneGenConfig(n_people_range=(n, n), seed=n)
        for scene in generate_dataset(cfg, 3, 0):
            maps = models.heatmaps(scene)
            shapes.add(tuple(m.shape for m in maps.values()))
            finite &= all(np.all(np.isfinite(m)) for m in maps.values())
            assert len(models.pjat.extract_ja_attention(scene)) == n
    passed = shapes == {((64, 64),) * 3} and finite
    verdict(3, passed, f"N_p 1..20 on the trained seed-0 model: output shapes {sorted(shapes)}")
    assert passed


# criterion 4

def test_criterion_4_end_to_end_learning(task, runs, verdict):
    run = runs["full"][0]
    ev = run.parent / "eval-0"
    started = time.perf_counter()
    _ok(["eval", "--checkpoint", run / "checkpoint.json", "--test", task / "test.jsonl", "--val", task / "val.jsonl",
         "--run-dir", ev, "--per-branch", "--baselines"])
    seconds = runs["seconds"][0] + time.perf_counter() - started
    realized = json.loads((ev / "manifest.json").read_text())["realized"]["dist"]
    trained, untrained, oracle = realized["H_F"], realized["untrained H_F"], realized["gaze-ray LS"]
    passed = trained < untrained and trained < oracle and seconds < 15 * 60
    verdict(4, passed, f"H_F {trained:.2f} px vs untrained {untrained:.2f} and gaze-ray LS {oracle:.2f}; train+eval {seconds / 60:.1f} min (< 15)")
    assert trained < untrained
    assert trained < oracle
    assert seconds < 15 * 60


# criterion 5

def test_criterion_5_ablation_directions(runs, test_scenes, verdict):
    rows = []
    for seed in SEEDS:
        full = runs["full"][seed]
        rows.append({
            "full": dist(full, test_scenes, "f"),
            "alpha_only": dist(full, test_scenes, "ja", "stage1_alpha.json"),
            "beta_only": dist(full, test_scenes, "at", "stage2_beta.json"),
            "wo_g": dist(runs["wo_g"][seed], test_scenes, "ja"),
            "wo_a": dist(runs["wo_a"][seed], test_scenes, "ja"),
        })
    gaze_vs_action = median(r["wo_g"] - r["wo_a"] for r in rows)
    full_vs_alpha = median(r["full"] - r["alpha_only"] for r in rows)
    full_vs_beta = median(r["full"] - r["beta_only"] for r in rows)
    passed = gaze_vs_action >= 0 and full_vs_alpha <= 0 and full_vs_beta <= 0
    summary = "; ".join(f"{k} {median(r[k] for r in rows):.2f}" for k in rows[0])
    verdict(5, passed, f"medians over seeds: {summary}")
    for seed, r in zip(SEEDS, rows):
        print(f"  seed {seed}: " + ", ".join(f"{k} {v:.3f}" for k, v in r.items()))
    assert gaze_vs_action >= 0
    assert full_vs_alpha <= 0
    assert full_vs_beta <= 0


# criterion 6

def test_criterion_6_pixelwise_beats_imagewise(runs, test_scenes, verdict):
    pixel = [dist(runs["full"][s], test_scenes, "ja", "stage1_alpha.json") for s in SEEDS]
    image = [dist(runs["imagewise"][s], test_scenes, "ja") for s in SEEDS]
    passed = median(pixel) < median(image)
    verdict(6, passed, f"median H_JA distance pixelwise {median(pixel):.2f} vs imagewise {median(image):.2f}")
    assert passed


# criterion 7

def _brute_threshold(scores, labels):
    best, best_f = None, -1.0
    for t in [-math.inf] + sorted(set(scores)) + [math.inf]:
        tp = sum(s > t and l for s, l in zip(scores, labels))
        fp = sum(s > t and not l for s, l in zip(scores, labels))
        fn = sum(s <= t and l for s, l in zip(scores, labels))
        f = 0.0 if tp == 0 else 2 * tp / (2 * tp + fp + fn)
        if f > best_f:
            best, best_f = t, f
    return best


def _pairwise_auc(scores, labels):
    pos = [s for s, l in zip(scores, labels) if l]
    neg = [s for s, l in zip(scores, labels) if not l]
    return sum(1.0 if p > n else 0.5 if p == n else 0.0 for p, n in itertools.product(pos, neg)) / (len(pos) * len(neg))


def test_criterion_7_metrics_oracles(verdict):
    rng = np.random.default_rng(2024)
    threshold_ok, auc_err = True, 0.0
    for k in range(100):
        scores = np.round(rng.random(50), 1 + k % 3)
        labels = rng.random(50) < 0.4
        labels[0], labels[1] = True, False
        threshold_ok &= select_threshold(scores, labels) == _brute_threshold(scores.tolist(), labels.tolist())
        auc_err = max(auc_err, abs(roc_auc(scores, labels) - _pairwise_auc(scores.tolist(), labels.tolist())))
    examples = [
        distance_metrics([(10, 10)], [(13, 14)]) == (3.0, 4.0, 5.0),
        distance_metrics([(1, 2), (7, 7)], [(1, 2), (7, 7)]) == (0.0, 0.0, 0.0),
        distance_metrics([(0, 0), (0, 0)], [(0, 0), (6, 8)])[2] == 5.0,
        detection_rate([5, 25, 40], [30]) == {30.0: 2 / 3},
        detection_rate([5, 25, 40], [100]) == {100.0: 1.0},
        detection_rate([30.0], [30.0]) == {30.0: 0.0},
    ]
    separated, truth = [0.1, 0.2, 0.8, 0.9], [False, False, True, True]
    perfect = presence_classification(separated, truth, separated, truth)
    examples += [perfect.auc == 1.0, perfect.f_score == 1.0, roc_auc(np.full(6, 0.4), np.array([True, False] * 3)) == 0.5]
    passed = threshold_ok and auc_err <= 1e-12 and all(examples)
    verdict(7, passed, f"threshold = brute force on 100 sets: {threshold_ok}; AUC err {auc_err:.1e} (<= 1e-12); examples {sum(examples)}/{len(examples)}")
    assert passed


# criterion 8

def test_criterion_8_determinism_and_persistence(task, verdict):
    root = task.parent / "determinism"
    argv = ["train", "--train", task / "train.jsonl", "--seed", "4", "--stages", "alpha:60,beta:60,gamma:20,all:20"]
    for name in ("a", "b"):
        _ok([*argv, "--run-dir", root / name])
    same_log = (root / "a" / "loss_log.csv").read_bytes() == (root / "b" / "loss_log.csv").read_bytes()
    same_ckpt = (root / "a" / "checkpoint.json").read_bytes() == (root / "b" / "checkpoint.json").read_bytes()

    # an in-memory run compared with its restored checkpoint
    scenes = read_dataset(task / "train.jsonl")
    test = read_dataset(task / "test.jsonl")[:100]
    models = build_models(PjatConfig(), seed=4)
    history = train(scenes, models, TrainConfig(stages=parse_stages("alpha:60,beta:60,gamma:20,all:20"), seed=4))
    save_checkpoint(models, root / "mem.json")
    restored = load_checkpoint(root / "mem.json")
    a, b = predict(models, test), predict(restored, test)
    same_eval = all(
        np.array_equal(a.points[k], b.points[k]) and np.array_equal(a.max_values[k], b.max_values[k]) for k in a.points
    ) and all(np.array_equal(models.heatmaps(s)[k], restored.heatmaps(s)[k]) for s in test[:10] for k in ("ja", "at", "f"))
    same_history = [r.objective for r in history] == [r.objective for r in read_loss_log(root / "a" / "loss_log.csv")]
    passed = same_log and same_ckpt and same_eval and same_history
    verdict(8, passed, f"loss logs equal {same_log}, checkpoints equal {same_ckpt}, restored evaluation bitwise {same_eval}")
    assert passed
