"""People, scenes, the synthetic scene generator, and JSONL dataset I/O."""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass
from functools import cached_property
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .heatmap import Heatmap, default_sigma, gaussian_grid

ENGAGED_ACTION = 0
ACTION_FOCUS = 5.0
ACTION_SMOOTHING = 1.0
NORM_TOL = 1e-9


class InvariantError(ValueError):
    """A scene or person violates one of its invariants."""

    def __init__(self, field_name: str, message: str):
        super().__init__(f"{field_name}: {message}")
        self.field = field_name


class DatasetFormatError(ValueError):
    def __init__(self, path, line: int, field_name: str, message: str):
        super().__init__(f"{path}:{line}: field {field_name!r}: {message}")
        self.path = path
        self.line = line
        self.field = field_name


def _finite(values) -> bool:
    return all(math.isfinite(v) for v in values)


@dataclass(frozen=True)
class PersonAttributes:
    location: tuple[float, float]
    gaze: tuple[float, float]
    action: tuple[float, ...]
    is_attender: bool = False

    def __post_init__(self):
        object.__setattr__(self, "location", tuple(float(v) for v in self.location))
        object.__setattr__(self, "gaze", tuple(float(v) for v in self.gaze))
        object.__setattr__(self, "action", tuple(float(v) for v in self.action))
        object.__setattr__(self, "is_attender", bool(self.is_attender))
        if len(self.location) != 2 or not _finite(self.location):
            raise InvariantError("loc", f"expected a finite 2-vector, got {self.location}")
        if len(self.gaze) != 2 or not _finite(self.gaze):
            raise InvariantError("gaze", f"expected a finite 2-vector, got {self.gaze}")
        norm = math.hypot(*self.gaze)
        if abs(norm - 1.0) > NORM_TOL:
            raise InvariantError("gaze", f"norm {norm!r} is not 1")
        if len(self.action) < 1 or not _finite(self.action):
            raise InvariantError("action", "expected a non-empty finite vector")
        if min(self.action) < 0.0:
            raise InvariantError("action", "negative probability")
        if abs(math.fsum(self.action) - 1.0) > NORM_TOL:
            raise InvariantError("action", f"sums to {math.fsum(self.action)!r}, not 1")


Point = tuple[float, float]
Bump = tuple[float, float, float, float]


@dataclass(frozen=True)
class Scene:
    """People plus supervision targets on a ``grid_w`` x ``grid_h`` grid.

    ``is_attender`` flags and ``private_aps`` are supervision only; the
    models never read them. Saliency is kept as a list of
    ``(x, y, sigma, amplitude)`` bumps and rendered on demand.
    """

    people: tuple[PersonAttributes, ...]
    joint_ap: Point | None
    private_aps: tuple[Point, ...]
    grid_w: int
    grid_h: int
    saliency_points: tuple[Bump, ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "people", tuple(self.people))
        object.__setattr__(self, "private_aps", tuple(tuple(float(v) for v in p) for p in self.private_aps))
        object.__setattr__(self, "saliency_points", tuple(tuple(float(v) for v in b) for b in self.saliency_points))
        if self.joint_ap is not None:
            object.__setattr__(self, "joint_ap", tuple(float(v) for v in self.joint_ap))
        if self.grid_w < 1 or self.grid_h < 1:
            raise InvariantError("grid", f"non-positive grid {self.grid_w}x{self.grid_h}")
        if not self.people:
            raise InvariantError("people", "a scene needs at least one person")
        if len(self.private_aps) != len(self.people):
            raise InvariantError("private_aps", f"{len(self.private_aps)} points for {len(self.people)} people")
        n_actions = len(self.people[0].action)
        for i, p in enumerate(self.people):
            if not self.inside(p.location):
                raise InvariantError(f"people[{i}].loc", f"{p.location} outside the grid")
            if len(p.action) != n_actions:
                raise InvariantError(f"people[{i}].action", "inconsistent action vector length")
        for i, ap in enumerate(self.private_aps):
            if len(ap) != 2 or not self.inside(ap):
                raise InvariantError(f"private_aps[{i}]", f"{ap} outside the grid")
        if self.joint_ap is not None:
            if len(self.joint_ap) != 2 or not self.inside(self.joint_ap):
                raise InvariantError("joint_ap", f"{self.joint_ap} outside the grid")
            for i, (p, ap) in enumerate(zip(self.people, self.private_aps)):
                if p.is_attender and ap != self.joint_ap:
                    raise InvariantError(f"private_aps[{i}]", "attender does not look at the joint AP")
        for i, bump in enumerate(self.saliency_points):
            if len(bump) != 4 or not _finite(bump) or bump[2] <= 0:
                raise InvariantError(f"saliency.points[{i}]", f"bad bump {bump}")

    def inside(self, point) -> bool:
        x, y = point
        return 0.0 <= x < self.grid_w and 0.0 <= y < self.grid_h

    @property
    def n_people(self) -> int:
        return len(self.people)

    @property
    def n_actions(self) -> int:
        return len(self.people[0].action)

    @property
    def has_joint_ap(self) -> bool:
        return self.joint_ap is not None

    @cached_property
    def saliency(self) -> Heatmap:
        values = np.zeros((self.grid_h, self.grid_w))
        for x, y, sigma, amp in self.saliency_points:
            values += amp * gaussian_grid((x, y), sigma, self.grid_w, self.grid_h)
        peak = values.max()
        if peak > 0:
            values /= peak
        return Heatmap(values)

    def permuted(self, order: Sequence[int]) -> "Scene":
        order = list(order)
        if sorted(order) != list(range(self.n_people)):
            raise ValueError(f"{order} is not a permutation of {self.n_people} people")
        return Scene(
            people=tuple(self.people[i] for i in order),
            joint_ap=self.joint_ap,
            private_aps=tuple(self.private_aps[i] for i in order),
            grid_w=self.grid_w,
            grid_h=self.grid_h,
            saliency_points=self.saliency_points,
        )

    def to_json(self) -> dict:
        return {
            "grid": [self.grid_w, self.grid_h],
            "people": [
                {"loc": list(p.location), "gaze": list(p.gaze), "action": list(p.action), "attender": p.is_attender}
                for p in self.people
            ],
            "joint_ap": None if self.joint_ap is None else list(self.joint_ap),
            "private_aps": [list(ap) for ap in self.private_aps],
            "saliency": {"points": [list(b) for b in self.saliency_points]},
        }

    @classmethod
    def from_json(cls, obj: dict) -> "Scene":
        """Build a scene from its JSON object; raises InvariantError naming the bad field."""
        if not isinstance(obj, dict):
            raise InvariantError("<root>", "expected a JSON object")

        def need(container, key, where):
            if key not in container:
                raise InvariantError(where, "missing")
            return container[key]

        grid = need(obj, "grid", "grid")
        if not (isinstance(grid, list) and len(grid) == 2 and all(isinstance(v, int) and not isinstance(v, bool) for v in grid)):
            raise InvariantError("grid", f"expected [W, H] integers, got {grid!r}")
        raw_people = need(obj, "people", "people")
        if not isinstance(raw_people, list):
            raise InvariantError("people", "expected a list")
        people = []
        for i, rp in enumerate(raw_people):
            where = f"people[{i}]"
            if not isinstance(rp, dict):
                raise InvariantError(where, "expected an object")
            attender = need(rp, "attender", f"{where}.attender")
            if not isinstance(attender, bool):
                raise InvariantError(f"{where}.attender", "expected a boolean")
            try:
                people.append(
                    PersonAttributes(
                        location=_vector(need(rp, "loc", f"{where}.loc"), f"{where}.loc"),
                        gaze=_vector(need(rp, "gaze", f"{where}.gaze"), f"{where}.gaze"),
                        action=_vector(need(rp, "action", f"{where}.action"), f"{where}.action"),
                        is_attender=attender,
                    )
                )
            except InvariantError as exc:
                if exc.field.startswith("people["):
                    raise
                raise InvariantError(f"{where}.{exc.field}", str(exc).split(": ", 1)[1]) from None
        joint = need(obj, "joint_ap", "joint_ap")
        joint = None if joint is None else _vector(joint, "joint_ap")
        aps = need(obj, "private_aps", "private_aps")
        if not isinstance(aps, list):
            raise InvariantError("private_aps", "expected a list")
        aps = [_vector(ap, f"private_aps[{i}]") for i, ap in enumerate(aps)]
        saliency = need(obj, "saliency", "saliency")
        if not isinstance(saliency, dict):
            raise InvariantError("saliency", "expected an object")
        points = need(saliency, "points", "saliency.points")
        if not isinstance(points, list):
            raise InvariantError("saliency.points", "expected a list")
        points = [_vector(b, f"saliency.points[{i}]") for i, b in enumerate(points)]
        return cls(
            people=tuple(people),
            joint_ap=joint,
            private_aps=tuple(aps),
            grid_w=grid[0],
            grid_h=grid[1],
            saliency_points=tuple(points),
        )


def _vector(value, where: str) -> tuple[float, ...]:
    if not isinstance(value, list) or not all(
        isinstance(v, (int, float)) and not isinstance(v, bool) for v in value
    ):
        raise InvariantError(where, f"expected a list of numbers, got {value!r}")
    return tuple(float(v) for v in value)


# generation

@dataclass
class SceneGenConfig:
    grid_w: int = 64
    grid_h: int = 64
    n_people_range: tuple[int, int] = (6, 10)
    distractor_fraction: float = 0.25
    gaze_noise_std_rad: float = 0.1
    no_ap_scene_fraction: float = 0.1
    n_actions: int = 5
    saliency_clutter_count: int = 3
    seed: int = 0
    min_ap_distance: float = 3.0
    saliency_sigma: float | None = None

    def __post_init__(self):
        self.n_people_range = tuple(int(v) for v in self.n_people_range)

    def validate(self) -> "SceneGenConfig":
        lo, hi = self.n_people_range
        problems = []
        if self.grid_w < 1 or self.grid_h < 1:
            problems.append(f"grid must be positive, got {self.grid_w}x{self.grid_h}")
        if not 1 <= lo <= hi:
            problems.append(f"n_people_range must satisfy 1 <= lo <= hi, got {self.n_people_range}")
        for name in ("distractor_fraction", "no_ap_scene_fraction"):
            value = getattr(self, name)
            if not 0.0 <= value <= 1.0:
                problems.append(f"{name} must be in [0, 1], got {value}")
        if self.gaze_noise_std_rad < 0:
            problems.append(f"gaze_noise_std_rad must be >= 0, got {self.gaze_noise_std_rad}")
        if self.n_actions < 2:
            problems.append(f"n_actions must be >= 2, got {self.n_actions}")
        if self.saliency_clutter_count < 0:
            problems.append(f"saliency_clutter_count must be >= 0, got {self.saliency_clutter_count}")
        if self.min_ap_distance < 0 or self.min_ap_distance >= 0.5 * max(self.grid_w, self.grid_h):
            problems.append(f"min_ap_distance {self.min_ap_distance} does not fit the grid")
        if problems:
            raise ValueError("; ".join(problems))
        return self

    @property
    def bump_sigma(self) -> float:
        return self.saliency_sigma if self.saliency_sigma is not None else default_sigma(self.grid_w, self.grid_h)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["n_people_range"] = list(self.n_people_range)
        return d


def n_distractors(fraction: float, n_people: int) -> int:
    """round(fraction * n_people), halves rounded up."""
    return min(n_people, int(math.floor(fraction * n_people + 0.5)))


def aim_gaze(location: Point, target: Point, angle: float = 0.0) -> tuple[float, float]:
    """Unit vector from ``location`` towards ``target`` rotated by ``angle`` radians."""
    dx, dy = target[0] - location[0], target[1] - location[1]
    norm = math.hypot(dx, dy)
    if norm == 0.0:
        raise ValueError("gaze target coincides with the person")
    ux, uy = dx / norm, dy / norm
    if angle == 0.0:
        return ux, uy
    c, s = math.cos(angle), math.sin(angle)
    gx, gy = c * ux - s * uy, s * ux + c * uy
    n = math.hypot(gx, gy)
    return gx / n, gy / n


def _uniform_point(rng: np.random.Generator, cfg: SceneGenConfig) -> Point:
    return float(rng.uniform(0.0, cfg.grid_w)), float(rng.uniform(0.0, cfg.grid_h))


def _point_away_from(rng, cfg, anchor: Point) -> Point:
    while True:
        p = _uniform_point(rng, cfg)
        if math.hypot(p[0] - anchor[0], p[1] - anchor[1]) >= cfg.min_ap_distance:
            return p


def _sample_action(rng: np.random.Generator, n_actions: int, attender: bool) -> tuple[float, ...]:
    alpha = np.full(n_actions, ACTION_SMOOTHING)
    focus = ENGAGED_ACTION if attender else int(rng.integers(1, n_actions))
    alpha[focus] = ACTION_FOCUS
    probs = rng.dirichlet(alpha)
    probs = probs / probs.sum()
    return tuple(float(v) for v in probs)


def generate_scene(cfg: SceneGenConfig, rng: np.random.Generator) -> Scene:
    """Draw one scene; a pure function of ``cfg`` and the generator state."""
    lo, hi = cfg.n_people_range
    n = int(rng.integers(lo, hi + 1))
    no_ap = bool(rng.random() < cfg.no_ap_scene_fraction)
    if no_ap:
        joint_ap = None
        n_distract = n
    else:
        joint_ap = _uniform_point(rng, cfg)
        n_distract = n_distractors(cfg.distractor_fraction, n)
    distractors = set(int(i) for i in rng.permutation(n)[:n_distract])

    people, aps = [], []
    for i in range(n):
        attender = i not in distractors
        if attender:
            ap = joint_ap
            loc = _point_away_from(rng, cfg, ap)
        else:
            loc = _uniform_point(rng, cfg)
            ap = _point_away_from(rng, cfg, loc)
        angle = float(rng.normal(0.0, cfg.gaze_noise_std_rad)) if cfg.gaze_noise_std_rad > 0 else 0.0
        gaze = aim_gaze(loc, ap, angle)
        action = _sample_action(rng, cfg.n_actions, attender)
        people.append(PersonAttributes(loc, gaze, action, attender))
        aps.append(ap)

    sigma = cfg.bump_sigma
    bumps = []
    if joint_ap is not None:
        bumps.append((joint_ap[0], joint_ap[1], sigma, 1.0))
    for _ in range(cfg.saliency_clutter_count):
        x, y = _uniform_point(rng, cfg)
        bumps.append((x, y, sigma, 1.0))

    return Scene(
        people=tuple(people),
        joint_ap=joint_ap,
        private_aps=tuple(aps),
        grid_w=cfg.grid_w,
        grid_h=cfg.grid_h,
        saliency_points=tuple(bumps),
    )


def generate_dataset(cfg: SceneGenConfig, count: int, stream: int = 0) -> list[Scene]:
    """``count`` scenes from the generator seeded by ``(cfg.seed, stream)``."""
    cfg.validate()
    rng = np.random.default_rng([cfg.seed, stream])
    return [generate_scene(cfg, rng) for _ in range(count)]


# dataset files

def write_dataset(scenes: Iterable[Scene], path) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for scene in scenes:
            fh.write(json.dumps(scene.to_json(), separators=(",", ":")))
            fh.write("\n")


def read_dataset(path) -> list[Scene]:
    scenes = []
    with open(path, encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise DatasetFormatError(path, line_no, "<json>", str(exc)) from None
            try:
                scenes.append(Scene.from_json(obj))
            except InvariantError as exc:
                raise DatasetFormatError(path, line_no, exc.field, str(exc)) from None
    return scenes


def read_scene(path) -> Scene:
    """Single scene from a file holding one JSON object (pretty-printed or one line)."""
    text = Path(path).read_text(encoding="utf-8")
    try:
        obj = json.loads(text)
    except json.JSONDecodeError as exc:
        raise DatasetFormatError(path, exc.lineno, "<json>", str(exc)) from None
    try:
        return Scene.from_json(obj)
    except InvariantError as exc:
        raise DatasetFormatError(path, 1, exc.field, str(exc)) from None
