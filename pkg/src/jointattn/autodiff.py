"""Small reverse-mode autodiff over float64 numpy arrays.

Only the operations the joint-attention models need are provided. Every op
records a closure computing the vector-Jacobian product for its inputs;
``Tensor.backward`` walks the recorded graph in reverse topological order.
Leaf tensors created with ``requires_grad=True`` are parameters: their
``grad`` buffers accumulate across backward calls until explicitly zeroed.
"""

from __future__ import annotations

import contextlib
import json
import math
import os
import tempfile
from dataclasses import dataclass, field
from typing import Callable, Iterable, Mapping

import numpy as np

_grad_enabled = True


@contextlib.contextmanager
def no_grad():
    """Disable graph recording inside the block."""
    global _grad_enabled
    previous = _grad_enabled
    _grad_enabled = False
    try:
        yield
    finally:
        _grad_enabled = previous


class _KinkPatterns:
    """Activation patterns of piecewise ops, recorded once and then replayed.

    While replaying, relu and clip select their branch from the recorded
    pattern instead of from the current input, so a finite-difference probe
    sees the smooth piece the analytic gradient was taken on.
    """

    def __init__(self):
        self.patterns: list[np.ndarray] = []
        self.replaying = False
        self.cursor = 0

    def select(self, live: np.ndarray) -> np.ndarray:
        if not self.replaying:
            self.patterns.append(live)
            return live
        pattern = self.patterns[self.cursor]
        self.cursor += 1
        if pattern.shape != live.shape:
            raise RuntimeError("graph changed between recording and replay of activation patterns")
        return pattern


_kinks: _KinkPatterns | None = None


@contextlib.contextmanager
def _kink_scope(patterns: _KinkPatterns, replay: bool):
    global _kinks
    previous = _kinks
    patterns.replaying, patterns.cursor = replay, 0
    _kinks = patterns
    try:
        yield
    finally:
        _kinks = previous


def _relu_mask(pre: np.ndarray) -> np.ndarray:
    live = pre > 0
    return live if _kinks is None else _kinks.select(live)


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "name", "_parents", "_backward")
    # make ndarray <op> Tensor dispatch to Tensor's reflected operators
    __array_priority__ = 100

    def __init__(self, data, requires_grad: bool = False, name: str | None = None):
        self.data = np.asarray(data, dtype=np.float64)
        self.requires_grad = requires_grad
        self.grad = np.zeros_like(self.data) if requires_grad else None
        self.name = name
        self._parents: tuple[Tensor, ...] = ()
        self._backward: Callable | None = None

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def is_leaf(self) -> bool:
        return self._backward is None

    def __repr__(self) -> str:
        label = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}{label})"

    def zero_grad(self) -> None:
        if self.grad is not None:
            self.grad.fill(0.0)

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data)

    def backward(self, grad: np.ndarray | None = None) -> None:
        order = _topological_order(self)
        for node in order:
            if not node.is_leaf:
                node.grad = None
        seed = np.ones_like(self.data) if grad is None else np.asarray(grad, dtype=np.float64)
        if self.is_leaf:
            # a constant (no graph, no parameters) has nothing to propagate
            if self.requires_grad:
                self.grad += seed
            return
        self.grad = seed
        for node in reversed(order):
            if node.is_leaf or node.grad is None:
                continue
            for parent, g in zip(node._parents, node._backward(node.grad)):
                if g is None or not parent.requires_grad:
                    continue
                if parent.is_leaf:
                    parent.grad += g
                elif parent.grad is None:
                    parent.grad = g
                else:
                    parent.grad = parent.grad + g

    # operator sugar
    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(other, self)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(other, self)

    def __neg__(self):
        return mul(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def __rmatmul__(self, other):
        return matmul(other, self)

    def __getitem__(self, index):
        return getitem(self, index)

    @property
    def T(self):
        return transpose(self)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def sum(self, axis=None):
        return tsum(self, axis)

    def mean(self, axis=None):
        return mean(self, axis)


def Parameter(values, name: str | None = None) -> Tensor:
    return Tensor(np.array(values, dtype=np.float64), requires_grad=True, name=name)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _topological_order(root: Tensor) -> list[Tensor]:
    order: list[Tensor] = []
    seen: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for parent in node._parents:
            if parent.requires_grad and id(parent) not in seen:
                stack.append((parent, False))
    return order


def _result(data: np.ndarray, parents: tuple[Tensor, ...], backward: Callable) -> Tensor:
    out = Tensor(data)
    if _grad_enabled and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = parents
        out._backward = backward
    return out


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    if g.shape == shape:
        return g
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and g.shape[axis] != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g


# elementwise arithmetic

def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    return _result(
        a.data + b.data,
        (a, b),
        lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)),
    )


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    return _result(
        a.data - b.data,
        (a, b),
        lambda g: (_unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)),
    )


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    return _result(
        a.data * b.data,
        (a, b),
        lambda g: (
            _unbroadcast(g * b.data, a.shape) if a.requires_grad else None,
            _unbroadcast(g * a.data, b.shape) if b.requires_grad else None,
        ),
    )


def relu(x: Tensor) -> Tensor:
    mask = _relu_mask(x.data)
    y = x.data * mask
    return _result(y, (x,), lambda g: (g * mask,))


def sigmoid(x: Tensor) -> Tensor:
    # tanh form is overflow-free and gives sigmoid(0) == 0.5 exactly
    y = 0.5 * np.tanh(0.5 * x.data) + 0.5
    return _result(y, (x,), lambda g: (g * y * (1.0 - y),))


def clip(x: Tensor, lo: float, hi: float) -> Tensor:
    """Clamp to [lo, hi]; the gradient passes only where the input is in range."""
    side = np.where(x.data < lo, -1, np.where(x.data > hi, 1, 0)).astype(np.int8)
    if _kinks is not None:
        side = _kinks.select(side)
    mask = side == 0
    y = np.where(mask, x.data, np.where(side < 0, lo, hi))
    return _result(y, (x,), lambda g: (g * mask,))


# shape manipulation

def reshape(x: Tensor, shape: tuple[int, ...]) -> Tensor:
    return _result(x.data.reshape(shape), (x,), lambda g: (g.reshape(x.shape),))


def transpose(x: Tensor) -> Tensor:
    return _result(x.data.T, (x,), lambda g: (g.T,))


def getitem(x: Tensor, index) -> Tensor:
    def backward(g):
        full = np.zeros_like(x.data)
        np.add.at(full, index, g)
        return (full,)

    return _result(x.data[index], (x,), backward)


def concat(tensors: Iterable[Tensor], axis: int = 0) -> Tensor:
    tensors = tuple(as_tensor(t) for t in tensors)
    sizes = [t.shape[axis] for t in tensors]
    splits = np.cumsum(sizes)[:-1]
    return _result(
        np.concatenate([t.data for t in tensors], axis=axis),
        tensors,
        lambda g: tuple(np.split(g, splits, axis=axis)),
    )


def tsum(x: Tensor, axis=None) -> Tensor:
    def backward(g):
        if axis is None:
            return (np.broadcast_to(g, x.shape).copy(),)
        return (np.broadcast_to(np.expand_dims(g, axis), x.shape).copy(),)

    return _result(np.asarray(x.data.sum(axis=axis)), (x,), backward)


def mean(x: Tensor, axis=None) -> Tensor:
    count = x.data.size if axis is None else x.shape[axis]
    return mul(tsum(x, axis), 1.0 / count)


# linear algebra

def matmul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    def backward(g):
        ga = g @ b.data.T if a.requires_grad else None
        gb = a.data.T @ g if b.requires_grad else None
        return ga, gb

    return _result(a.data @ b.data, (a, b), backward)


def dense_forward(x, W: Tensor, b: Tensor | None = None, activation: str | None = None) -> Tensor:
    """y = x @ W + b for a row batch x, optionally followed by a fused ReLU."""
    x = as_tensor(x)
    y = x.data @ W.data
    if b is not None:
        y += b.data
    mask = None
    if activation == "relu":
        mask = _relu_mask(y)
        y *= mask
    elif activation is not None:
        raise ValueError(f"unknown activation {activation!r}")

    def backward(g):
        if mask is not None:
            g = g * mask
        gx = g @ W.data.T if x.requires_grad else None
        gw = x.data.T @ g
        if b is None:
            return gx, gw
        return gx, gw, _unbroadcast(g, b.shape)

    parents = (x, W) if b is None else (x, W, b)
    return _result(y, parents, backward)


def outer_add(rows: Tensor, cols: Tensor) -> Tensor:
    """All pairwise sums: out[i * m + j] = rows[i] + cols[j] for (n, k) and (m, k) inputs."""
    rows, cols = as_tensor(rows), as_tensor(cols)
    n, k = rows.shape
    m = cols.shape[0]
    out = (rows.data[:, None, :] + cols.data[None, :, :]).reshape(n * m, k)

    def backward(g):
        g3 = g.reshape(n, m, k)
        return g3.sum(axis=1), g3.sum(axis=0)

    return _result(out, (rows, cols), backward)


def softmax_rows(x: Tensor) -> Tensor:
    z = x.data - x.data.max(axis=-1, keepdims=True)
    e = np.exp(z)
    y = e / e.sum(axis=-1, keepdims=True)
    return _result(y, (x,), lambda g: (y * (g - (g * y).sum(axis=-1, keepdims=True)),))


def layer_norm(x: Tensor, gamma: Tensor, beta: Tensor, eps: float = 1e-5) -> Tensor:
    """Normalize each row over the last axis, then scale and shift."""
    mu = x.data.mean(axis=-1, keepdims=True)
    centered = x.data - mu
    var = (centered * centered).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = centered * inv
    y = xhat * gamma.data + beta.data

    def backward(g):
        gxhat = g * gamma.data
        gx = inv * (
            gxhat
            - gxhat.mean(axis=-1, keepdims=True)
            - xhat * (gxhat * xhat).mean(axis=-1, keepdims=True)
        )
        return gx, _unbroadcast(g * xhat, gamma.shape), _unbroadcast(g, beta.shape)

    return _result(y, (x, gamma, beta), backward)


def conv2d(x: Tensor, w: Tensor, b: Tensor) -> Tensor:
    """Same-padded stride-1 convolution of a (C_in, H, W) map with (C_out, C_in, k, k) kernels."""
    x = as_tensor(x)
    c_in, height, width = x.shape
    c_out, _, k, _ = w.shape
    pad = k // 2
    xp = np.pad(x.data, ((0, 0), (pad, pad), (pad, pad)))
    cols = np.empty((c_in, k, k, height, width))
    for di in range(k):
        for dj in range(k):
            cols[:, di, dj] = xp[:, di:di + height, dj:dj + width]
    cols = cols.reshape(c_in * k * k, height * width)
    wmat = w.data.reshape(c_out, -1)
    out = (wmat @ cols + b.data[:, None]).reshape(c_out, height, width)

    def backward(g):
        g2 = g.reshape(c_out, height * width)
        gw = (g2 @ cols.T).reshape(w.shape)
        gb = g2.sum(axis=1)
        gcols = (wmat.T @ g2).reshape(c_in, k, k, height, width)
        gxp = np.zeros_like(xp)
        for di in range(k):
            for dj in range(k):
                gxp[:, di:di + height, dj:dj + width] += gcols[:, di, dj]
        return gxp[:, pad:pad + height, pad:pad + width], gw, gb

    return _result(out, (x, w, b), backward)


def mse_sum(pred: Tensor, target) -> Tensor:
    """Sum (not mean) of squared per-element differences."""
    target = target.data if isinstance(target, Tensor) else np.asarray(target, dtype=np.float64)
    if pred.shape != target.shape:
        raise ValueError(f"shape mismatch: prediction {pred.shape} vs target {target.shape}")
    diff = pred.data - target
    return _result(np.asarray(np.sum(diff * diff)), (pred,), lambda g: (2.0 * diff * g,))


# optimization

@dataclass
class OptimizerState:
    learning_rate: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)


def optimizer_step(params: Mapping[str, Tensor], state: OptimizerState) -> None:
    """One Adam update of every parameter in place, then zero the gradients."""
    state.step += 1
    bc1 = 1.0 - state.beta1 ** state.step
    bc2 = 1.0 - state.beta2 ** state.step
    for name, p in params.items():
        g = p.grad
        if name not in state.m:
            state.m[name] = np.zeros_like(p.data)
            state.v[name] = np.zeros_like(p.data)
        m, v = state.m[name], state.v[name]
        m *= state.beta1
        m += (1.0 - state.beta1) * g
        v *= state.beta2
        v += (1.0 - state.beta2) * (g * g)
        p.data -= state.learning_rate * (m / bc1) / (np.sqrt(v / bc2) + state.eps)
        p.zero_grad()


class Adam:
    def __init__(self, params: Mapping[str, Tensor], lr: float = 1e-3):
        self.params = dict(params)
        self.state = OptimizerState(learning_rate=lr)

    def step(self) -> None:
        optimizer_step(self.params, self.state)

    def zero_grad(self) -> None:
        for p in self.params.values():
            p.zero_grad()


# verification

@dataclass
class GradCheckReport:
    per_param: dict[str, float]
    entries_checked: dict[str, int]
    max_rel_error: float
    tolerance: float | None = None

    @property
    def passed(self) -> bool:
        return self.tolerance is None or self.max_rel_error < self.tolerance

    def worst(self) -> tuple[str, float]:
        name = max(self.per_param, key=self.per_param.get)
        return name, self.per_param[name]


_FD_NOISE_FACTOR = 16.0


def grad_check(
    loss_fn: Callable[[], Tensor],
    params: Mapping[str, Tensor],
    tolerance: float | None = None,
    h: float = 1e-5,
    max_entries: int | None = None,
    seed: int = 0,
    freeze_kinks: bool = False,
) -> GradCheckReport:
    """Compare analytic gradients against central differences.

    ``loss_fn`` must rebuild the graph on every call. Tensors with more than
    ``max_entries`` elements are checked on a seeded random subsample.

    With ``freeze_kinks`` the relu/clip branch choices made at the unperturbed
    parameters are reused for every probe. A probe of width ``h`` that
    crosses a kink measures an average of two slopes rather than the
    derivative; freezing the pattern removes that error while leaving every
    smooth op in the graph under test.

    The reported error discounts the rounding noise of the two loss
    evaluations, so entries far below ``eps * |loss| / h`` are not judged
    on digits the difference cannot resolve.
    """
    patterns = _KinkPatterns() if freeze_kinks else None

    def evaluate(replay: bool) -> Tensor:
        if patterns is None:
            return loss_fn()
        with _kink_scope(patterns, replay):
            return loss_fn()

    for p in params.values():
        p.zero_grad()
    loss = evaluate(replay=False)
    if not np.isfinite(loss.data):
        raise FloatingPointError("loss is not finite")
    loss.backward()
    analytic = {name: p.grad.copy() for name, p in params.items()}
    for p in params.values():
        p.zero_grad()

    rng = np.random.default_rng(seed)
    per_param: dict[str, float] = {}
    counts: dict[str, int] = {}
    with no_grad():
        for name, p in params.items():
            flat = p.data.reshape(-1)
            idx = np.arange(flat.size)
            if max_entries is not None and flat.size > max_entries:
                idx = np.sort(rng.choice(flat.size, size=max_entries, replace=False))
            worst = 0.0
            for i in idx:
                original = flat[i]
                flat[i] = original + h
                up = evaluate(replay=True).item()
                flat[i] = original - h
                down = evaluate(replay=True).item()
                flat[i] = original
                if not (math.isfinite(up) and math.isfinite(down)):
                    raise FloatingPointError(f"loss not finite while perturbing {name}[{i}]")
                fd = (up - down) / (2.0 * h)
                ga = analytic[name].reshape(-1)[i]
                # rounding in up/down alone can shift fd by about eps*|L|/h
                noise = _FD_NOISE_FACTOR * np.finfo(float).eps * (abs(up) + abs(down)) / (2.0 * h)
                err = max(abs(ga - fd) - noise, 0.0) / max(abs(ga), abs(fd), 1e-8)
                worst = max(worst, err)
            per_param[name] = worst
            counts[name] = len(idx)
    overall = max(per_param.values(), default=0.0)
    return GradCheckReport(per_param, counts, overall, tolerance)


# persistence

CHECKPOINT_FORMAT = "jointattn-checkpoint"
CHECKPOINT_VERSION = 1


class CheckpointError(Exception):
    pass


def save_params(path, params: Mapping[str, Tensor], meta: dict | None = None) -> None:
    """Write parameters as JSON; floats are written with round-trip precision."""
    payload = {
        "format": CHECKPOINT_FORMAT,
        "version": CHECKPOINT_VERSION,
        "meta": meta or {},
        "params": {
            name: {"shape": list(p.shape), "values": p.data.reshape(-1).tolist()}
            for name, p in params.items()
        },
    }
    path = os.fspath(path)
    directory = os.path.dirname(os.path.abspath(path))
    fd, tmp = tempfile.mkstemp(dir=directory, suffix=".tmp")
    try:
        with os.fdopen(fd, "w", encoding="utf-8") as fh:
            json.dump(payload, fh, separators=(",", ":"))
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def load_params(path) -> tuple[dict, dict[str, np.ndarray]]:
    try:
        with open(path, encoding="utf-8") as fh:
            payload = json.load(fh)
    except json.JSONDecodeError as exc:
        raise CheckpointError(f"{path}: not valid JSON ({exc})") from exc
    except UnicodeDecodeError as exc:
        raise CheckpointError(f"{path}: not a text checkpoint") from exc
    if not isinstance(payload, dict) or payload.get("format") != CHECKPOINT_FORMAT:
        raise CheckpointError(f"{path}: not a {CHECKPOINT_FORMAT} file")
    if payload.get("version") != CHECKPOINT_VERSION:
        raise CheckpointError(
            f"{path}: checkpoint version {payload.get('version')!r}, expected {CHECKPOINT_VERSION}"
        )
    arrays = {}
    try:
        for name, entry in payload["params"].items():
            values = np.asarray(entry["values"], dtype=np.float64)
            arrays[name] = values.reshape(entry["shape"])
    except (KeyError, TypeError, ValueError) as exc:
        raise CheckpointError(f"{path}: malformed parameter entry ({exc})") from exc
    return payload.get("meta", {}), arrays
