"""Heatmap grids, Gaussian ground truth, argmax readout, PGM/CSV output."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True, eq=False)
class Heatmap:
    """Immutable (height, width) grid of confidences, row-major.

    Pixel (x, y) lives at ``values[y, x]``, i.e. flat index ``y * width + x``.
    """

    values: np.ndarray

    def __post_init__(self):
        values = np.array(self.values, dtype=np.float64)
        if values.ndim != 2 or values.size == 0:
            raise ValueError(f"heatmap values must be a non-empty 2-D array, got shape {values.shape}")
        if not np.all(np.isfinite(values)):
            raise ValueError("heatmap values must be finite")
        values.setflags(write=False)
        object.__setattr__(self, "values", values)

    @property
    def width(self) -> int:
        return self.values.shape[1]

    @property
    def height(self) -> int:
        return self.values.shape[0]

    @property
    def flat(self) -> np.ndarray:
        return self.values.reshape(-1)

    @classmethod
    def zeros(cls, width: int, height: int) -> "Heatmap":
        return cls(np.zeros((height, width)))

    def __eq__(self, other):
        if not isinstance(other, Heatmap):
            return NotImplemented
        return np.array_equal(self.values, other.values)


def default_sigma(grid_w: int, grid_h: int) -> float:
    """3 px on a 64x64 grid, scaled with the mean side length."""
    return 3.0 * (grid_w + grid_h) / 128.0


def gaussian_grid(center, sigma: float, grid_w: int, grid_h: int) -> np.ndarray:
    cx, cy = center
    xs = np.arange(grid_w, dtype=np.float64) - cx
    ys = np.arange(grid_h, dtype=np.float64) - cy
    sq = ys[:, None] ** 2 + xs[None, :] ** 2
    return np.exp(-sq / (2.0 * sigma * sigma))


def render_gaussian_gt(center, sigma: float, grid) -> Heatmap:
    """Unnormalized Gaussian with peak 1 at ``center`` on a ``(width, height)`` grid."""
    grid_w, grid_h = grid
    cx, cy = center
    if sigma <= 0:
        raise ValueError(f"sigma must be positive, got {sigma}")
    if not (0 <= cx < grid_w and 0 <= cy < grid_h):
        raise ValueError(f"center ({cx}, {cy}) outside {grid_w}x{grid_h} grid")
    return Heatmap(gaussian_grid(center, sigma, grid_w, grid_h))


def argmax_point(h: Heatmap | np.ndarray) -> tuple[tuple[int, int], float]:
    """Pixel with the largest value; ties go to the lowest row-major index."""
    values = h.values if isinstance(h, Heatmap) else np.asarray(h)
    idx = int(np.argmax(values))
    y, x = divmod(idx, values.shape[1])
    return (x, y), float(values.reshape(-1)[idx])


def quantize(values: np.ndarray) -> np.ndarray:
    """Map [0, 1] to bytes with round-half-up."""
    v = np.clip(np.asarray(values, dtype=np.float64), 0.0, 1.0)
    return np.floor(255.0 * v + 0.5).astype(np.uint8)


def write_pgm(h: Heatmap, path) -> None:
    if h.values.min() < 0.0 or h.values.max() > 1.0:
        raise ValueError("PGM output expects values in [0, 1]")
    header = f"P5\n{h.width} {h.height}\n255\n".encode("ascii")
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(quantize(h.values).tobytes())


def read_pgm(path) -> Heatmap:
    with open(path, "rb") as fh:
        raw = fh.read()
    tokens: list[bytes] = []
    pos = 0
    while len(tokens) < 4:
        while pos < len(raw) and raw[pos:pos + 1].isspace():
            pos += 1
        if raw[pos:pos + 1] == b"#":
            while pos < len(raw) and raw[pos:pos + 1] != b"\n":
                pos += 1
            continue
        start = pos
        while pos < len(raw) and not raw[pos:pos + 1].isspace():
            pos += 1
        tokens.append(raw[start:pos])
    if tokens[0] != b"P5":
        raise ValueError(f"{path}: not a binary PGM")
    width, height, maxval = (int(t) for t in tokens[1:])
    pos += 1  # single whitespace byte after maxval
    data = np.frombuffer(raw, dtype=np.uint8, count=width * height, offset=pos)
    return Heatmap(data.reshape(height, width).astype(np.float64) / maxval)


def overlay_csv(h: Heatmap, path) -> None:
    """Full-precision ``x,y,value`` dump, one pixel per row in row-major order."""
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("x,y,value\n")
        for y in range(h.height):
            row = h.values[y]
            for x in range(h.width):
                fh.write(f"{x},{y},{float(row[x])!r}\n")


def pixel_distance(a, b) -> float:
    return math.hypot(a[0] - b[0], a[1] - b[1])


__all__ = [
    "Heatmap",
    "argmax_point",
    "default_sigma",
    "gaussian_grid",
    "overlay_csv",
    "pixel_distance",
    "quantize",
    "read_pgm",
    "render_gaussian_gt",
    "write_pgm",
]
