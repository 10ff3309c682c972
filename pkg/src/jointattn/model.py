"""Position-embedded joint attention transformer.

Person attributes are embedded by a two-layer MLP, a learnable joint
attention token is appended as the last row, a stack of pre-norm
transformer encoder layers mixes the rows, and a coordinate-conditioned
MLP head turns the encoded token into one confidence per pixel.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass
from enum import Enum

import numpy as np

from . import autodiff as ad
from .autodiff import Parameter, Tensor
from .heatmap import Heatmap, default_sigma
from .scene import PersonAttributes, Scene


class Variant(str, Enum):
    J_JA_ONLY = "j_ja_only"
    F_JA_ONLY = "f_ja_only"
    F_JA_AND_J_JA = "f_ja_and_j_ja"
    IMAGEWISE = "imagewise"


@dataclass
class PjatConfig:
    n_actions: int = 5
    grid_w: int = 64
    grid_h: int = 64
    d_model: int = 64
    n_heads: int = 2
    n_layers: int = 2
    head_hidden: int = 64
    variant: Variant = Variant.J_JA_ONLY
    use_location: bool = True
    use_gaze: bool = True
    use_action: bool = True
    pos_freqs: int = 4  # sin/cos octaves of the pixel coordinates fed to the head
    prior_bias: bool = False  # start the output layer at the target base rate instead of 0.5

    def __post_init__(self):
        self.variant = Variant(self.variant)
        if self.d_model < 1 or self.n_heads < 1 or self.d_model % self.n_heads:
            raise ValueError(f"d_model={self.d_model} must be a positive multiple of n_heads={self.n_heads}")
        if self.n_layers < 1:
            raise ValueError("n_layers must be >= 1")
        if self.n_actions < 1 or self.grid_w < 1 or self.grid_h < 1 or self.head_hidden < 1:
            raise ValueError("n_actions, grid and head_hidden must be positive")

    @property
    def input_dim(self) -> int:
        return 4 + self.n_actions

    def to_dict(self) -> dict:
        d = asdict(self)
        d["variant"] = self.variant.value
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "PjatConfig":
        return cls(**d)


def normalize_xy(x, y, grid_w: int, grid_h: int):
    return x / grid_w * 2.0 - 1.0, y / grid_h * 2.0 - 1.0


def pixel_features(grid_w: int, grid_h: int, pos_freqs: int = 0) -> np.ndarray:
    """Normalized (x, y) of every pixel in row-major order, optionally Fourier-extended."""
    ys, xs = np.mgrid[0:grid_h, 0:grid_w]
    nx, ny = normalize_xy(xs.reshape(-1).astype(np.float64), ys.reshape(-1).astype(np.float64), grid_w, grid_h)
    return coordinate_features(nx, ny, pos_freqs)


def coordinate_features(nx, ny, pos_freqs: int = 0) -> np.ndarray:
    nx, ny = np.atleast_1d(nx).astype(np.float64), np.atleast_1d(ny).astype(np.float64)
    cols = [nx, ny]
    for k in range(pos_freqs):
        f = math.pi * 2.0 ** k
        cols += [np.sin(f * nx), np.cos(f * nx), np.sin(f * ny), np.cos(f * ny)]
    return np.stack(cols, axis=1)


def person_input_vector(p: PersonAttributes, cfg: PjatConfig) -> np.ndarray:
    """(l_x, l_y, a_1..a_Na, g_x, g_y) with knocked-out blocks zero-filled."""
    v = np.zeros(cfg.input_dim)
    if cfg.use_location:
        v[0], v[1] = normalize_xy(p.location[0], p.location[1], cfg.grid_w, cfg.grid_h)
    if cfg.use_action:
        v[2:2 + cfg.n_actions] = p.action
    if cfg.use_gaze:
        v[2 + cfg.n_actions:] = p.gaze
    return v


def prior_logit(grid_w: int, grid_h: int) -> float:
    """Logit of the mean ground-truth pixel value for one default-sigma Gaussian.

    A unit-peak Gaussian holds about 2*pi*sigma^2 of mass, so a map that
    predicts this constant everywhere matches the target mean. Starting the
    sigmoid there skips the early phase where the head only learns to
    suppress its initial 0.5 output.
    """
    sigma = default_sigma(grid_w, grid_h)
    p = min(0.5, 2.0 * math.pi * sigma * sigma / (grid_w * grid_h))
    return math.log(p / (1.0 - p))


def _glorot(rng: np.random.Generator, fan_in: int, fan_out: int) -> np.ndarray:
    bound = math.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-bound, bound, size=(fan_in, fan_out))


@dataclass
class Encoded:
    f_ja: Tensor          # (N_p, D) encoded person rows
    j_ja: Tensor          # (1, D) encoded joint attention token
    attention: list       # per layer: (n_heads, N_p + 1, N_p + 1) arrays


class Pjat:
    """Branch alpha: attributes -> joint attention heatmap."""

    prefix = "pjat"

    def __init__(self, cfg: PjatConfig, seed: int = 0):
        self.cfg = cfg
        self.params: dict[str, Tensor] = {}
        rng = np.random.default_rng([seed, 0])
        D, hid = cfg.d_model, cfg.head_hidden
        self._dense("fF.0", cfg.input_dim, D, rng)
        self._dense("fF.1", D, D, rng)
        self._add("token", rng.normal(0.0, 0.02, size=(1, D)))
        for l in range(cfg.n_layers):
            p = f"encoder.{l}"
            self._add(f"{p}.ln1.g", np.ones(D))
            self._add(f"{p}.ln1.b", np.zeros(D))
            for name in ("Wq", "Wk", "Wv"):
                self._add(f"{p}.attn.{name}", _glorot(rng, D, D))
            self._dense(f"{p}.attn.out", D, D, rng)
            self._add(f"{p}.ln2.g", np.ones(D))
            self._add(f"{p}.ln2.b", np.zeros(D))
            self._dense(f"{p}.ff.0", D, 4 * D, rng)
            self._dense(f"{p}.ff.1", 4 * D, D, rng)
        self._add("ln_f.g", np.ones(D))
        self._add("ln_f.b", np.zeros(D))

        self._pos = pixel_features(cfg.grid_w, cfg.grid_h, cfg.pos_freqs)
        if cfg.variant is Variant.IMAGEWISE:
            self._dense("fJ.0", D, hid, rng)
            self._dense("fJ.1", hid, hid, rng)
            self._dense("fJ.2", hid, cfg.grid_w * cfg.grid_h, rng)
        else:
            feat = 2 * D if cfg.variant is Variant.F_JA_AND_J_JA else D
            pos_dim = self._pos.shape[1]
            w0 = _glorot(rng, feat + pos_dim, hid)
            self._add("fJ.0.W_feat", w0[:feat])
            self._add("fJ.0.W_pos", rng.normal(0.0, 0.02, size=(pos_dim, hid)))
            self._add("fJ.0.b", np.zeros(hid))
            self._dense("fJ.1", hid, hid, rng)
            self._dense("fJ.2", hid, 1, rng)
        if cfg.prior_bias:
            self.p("fJ.2.b").data[...] = prior_logit(cfg.grid_w, cfg.grid_h)

    def _add(self, name: str, values) -> Tensor:
        full = f"{self.prefix}.{name}"
        t = Parameter(values, full)
        self.params[full] = t
        return t

    def _dense(self, name: str, fan_in: int, fan_out: int, rng) -> None:
        self._add(f"{name}.W", _glorot(rng, fan_in, fan_out))
        self._add(f"{name}.b", np.zeros(fan_out))

    def p(self, name: str) -> Tensor:
        return self.params[f"{self.prefix}.{name}"]

    # feature extractor

    def person_inputs(self, scene: Scene) -> np.ndarray:
        return np.stack([person_input_vector(p, self.cfg) for p in scene.people])

    def embed(self, scene: Scene) -> Tensor:
        x = Tensor(self.person_inputs(scene))
        h = ad.dense_forward(x, self.p("fF.0.W"), self.p("fF.0.b"), "relu")
        return ad.dense_forward(h, self.p("fF.1.W"), self.p("fF.1.b"))

    def embed_person(self, person: PersonAttributes) -> np.ndarray:
        with ad.no_grad():
            x = Tensor(person_input_vector(person, self.cfg)[None, :])
            h = ad.dense_forward(x, self.p("fF.0.W"), self.p("fF.0.b"), "relu")
            return ad.dense_forward(h, self.p("fF.1.W"), self.p("fF.1.b")).data[0]

    # encoder

    def _attention(self, h: Tensor, layer: int) -> tuple[Tensor, np.ndarray]:
        cfg = self.cfg
        p = f"encoder.{layer}.attn"
        q = h @ self.p(f"{p}.Wq")
        k = h @ self.p(f"{p}.Wk")
        v = h @ self.p(f"{p}.Wv")
        dh = cfg.d_model // cfg.n_heads
        scale = 1.0 / math.sqrt(dh)
        heads, maps = [], []
        for i in range(cfg.n_heads):
            cols = (slice(None), slice(i * dh, (i + 1) * dh))
            scores = ad.softmax_rows((q[cols] @ k[cols].T) * scale)
            maps.append(scores.data)
            heads.append(scores @ v[cols])
        mixed = ad.concat(heads, axis=1) if len(heads) > 1 else heads[0]
        return ad.dense_forward(mixed, self.p(f"{p}.out.W"), self.p(f"{p}.out.b")), np.stack(maps)

    def encode(self, features: Tensor) -> Encoded:
        n = features.shape[0]
        if n == 0:
            raise ValueError("cannot encode an empty person list")
        x = ad.concat([features, self.p("token")], axis=0)
        attention = []
        for l in range(self.cfg.n_layers):
            pre = f"encoder.{l}"
            h = ad.layer_norm(x, self.p(f"{pre}.ln1.g"), self.p(f"{pre}.ln1.b"))
            a, maps = self._attention(h, l)
            attention.append(maps)
            x = x + a
            h = ad.layer_norm(x, self.p(f"{pre}.ln2.g"), self.p(f"{pre}.ln2.b"))
            h = ad.dense_forward(h, self.p(f"{pre}.ff.0.W"), self.p(f"{pre}.ff.0.b"), "relu")
            x = x + ad.dense_forward(h, self.p(f"{pre}.ff.1.W"), self.p(f"{pre}.ff.1.b"))
        x = ad.layer_norm(x, self.p("ln_f.g"), self.p("ln_f.b"))
        return Encoded(f_ja=x[:n], j_ja=x[n:n + 1], attention=attention)

    # pixelwise head

    def _coordinate_head(self, feats: Tensor) -> Tensor:
        """Per-row feature vectors -> (rows, H, W) maps of sigmoid confidences."""
        cfg = self.cfg
        rows = feats.shape[0]
        feat_part = ad.dense_forward(feats, self.p("fJ.0.W_feat"), self.p("fJ.0.b"))
        pos_part = ad.matmul(Tensor(self._pos), self.p("fJ.0.W_pos"))
        h = ad.relu(ad.outer_add(feat_part, pos_part))
        h = ad.dense_forward(h, self.p("fJ.1.W"), self.p("fJ.1.b"), "relu")
        out = ad.sigmoid(ad.dense_forward(h, self.p("fJ.2.W"), self.p("fJ.2.b")))
        return out.reshape(rows, cfg.grid_h, cfg.grid_w)

    def _imagewise_head(self, j_ja: Tensor) -> Tensor:
        cfg = self.cfg
        h = ad.dense_forward(j_ja, self.p("fJ.0.W"), self.p("fJ.0.b"), "relu")
        h = ad.dense_forward(h, self.p("fJ.1.W"), self.p("fJ.1.b"), "relu")
        out = ad.sigmoid(ad.dense_forward(h, self.p("fJ.2.W"), self.p("fJ.2.b")))
        return out.reshape(cfg.grid_h, cfg.grid_w)

    def pixel_confidence(self, feature, x: float, y: float) -> float:
        """Head output at one normalized coordinate (x, y) in [-1, 1]^2."""
        if self.cfg.variant is Variant.IMAGEWISE:
            raise ValueError("the imagewise head has no coordinate input")
        feature = np.asarray(feature, dtype=np.float64).reshape(1, -1)
        pos = coordinate_features(x, y, self.cfg.pos_freqs)
        W = lambda name: self.p(name).data  # noqa: E731
        h = feature @ W("fJ.0.W_feat") + pos @ W("fJ.0.W_pos") + W("fJ.0.b")
        h = np.maximum(h, 0.0)
        h = np.maximum(h @ W("fJ.1.W") + W("fJ.1.b"), 0.0)
        z = h @ W("fJ.2.W") + W("fJ.2.b")
        return float(0.5 * np.tanh(0.5 * z[0, 0]) + 0.5)

    def person_maps(self, enc: Encoded) -> Tensor:
        """Individual maps H_JA^i for the per-person variants, shape (N_p, H, W)."""
        if self.cfg.variant is Variant.F_JA_ONLY:
            return self._coordinate_head(enc.f_ja)
        if self.cfg.variant is Variant.F_JA_AND_J_JA:
            n = enc.f_ja.shape[0]
            tiled = ad.matmul(Tensor(np.ones((n, 1))), enc.j_ja)
            return self._coordinate_head(ad.concat([enc.f_ja, tiled], axis=1))
        raise ValueError(f"variant {self.cfg.variant.value} has no per-person maps")

    def forward(self, scene: Scene) -> tuple[Tensor, Encoded]:
        self._check_grid(scene)
        enc = self.encode(self.embed(scene))
        variant = self.cfg.variant
        if variant is Variant.J_JA_ONLY:
            hja = self._coordinate_head(enc.j_ja).reshape(self.cfg.grid_h, self.cfg.grid_w)
        elif variant is Variant.IMAGEWISE:
            hja = self._imagewise_head(enc.j_ja)
        else:
            hja = self.person_maps(enc).mean(axis=0)
        return hja, enc

    def render(self, scene: Scene) -> Tensor:
        return self.forward(scene)[0]

    def render_hja(self, scene: Scene) -> Heatmap:
        with ad.no_grad():
            return Heatmap(self.render(scene).data)

    def extract_ja_attention(self, scene: Scene, layer: int | None = None) -> np.ndarray:
        """Joint-attention token's attention over the people, averaged over heads."""
        if layer is None:
            layer = self.cfg.n_layers - 1
        if not 0 <= layer < self.cfg.n_layers:
            raise IndexError(f"layer {layer} out of range for {self.cfg.n_layers} layers")
        with ad.no_grad():
            enc = self.encode(self.embed(scene))
        row = enc.attention[layer].mean(axis=0)[-1]
        return row[:-1].copy()

    def _check_grid(self, scene: Scene) -> None:
        if (scene.grid_w, scene.grid_h) != (self.cfg.grid_w, self.cfg.grid_h):
            raise ValueError(
                f"scene grid {scene.grid_w}x{scene.grid_h} does not match model grid "
                f"{self.cfg.grid_w}x{self.cfg.grid_h}"
            )
        if scene.n_actions != self.cfg.n_actions:
            raise ValueError(f"scene has {scene.n_actions} action classes, model expects {self.cfg.n_actions}")
