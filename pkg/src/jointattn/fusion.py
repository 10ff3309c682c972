"""Image-based branch, heatmap fusion, and the combined training objective.

The scene branch is a small per-pixel MLP that stands in for a full
image-based attention estimator. For each person it sees the pixel
position, the saliency at that pixel, the person's location and gaze, and
three geometric features derived from those (offset to the pixel,
distance, cosine between gaze and the offset).
"""

from __future__ import annotations

from dataclasses import asdict, dataclass
from enum import Enum

import numpy as np

from . import autodiff as ad
from .autodiff import Parameter, Tensor
from .heatmap import Heatmap, default_sigma, gaussian_grid
from .model import Pjat, normalize_xy, pixel_features
from .scene import Scene

N_BRANCH_FEATURES = 11


@dataclass
class BranchConfig:
    grid_w: int = 64
    grid_h: int = 64
    hidden: int = 32

    def to_dict(self) -> dict:
        return asdict(self)


def _glorot(rng, fan_in, fan_out):
    bound = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-bound, bound, size=(fan_in, fan_out))


class SceneBranch:
    """Branch beta: per-person attention heatmaps from saliency and gaze."""

    prefix = "branch"

    def __init__(self, cfg: BranchConfig, seed: int = 0):
        self.cfg = cfg
        rng = np.random.default_rng([seed, 1])
        sizes = [N_BRANCH_FEATURES, cfg.hidden, cfg.hidden, 1]
        self.params: dict[str, Tensor] = {}
        for i, (a, b) in enumerate(zip(sizes[:-1], sizes[1:])):
            self.params[f"{self.prefix}.{i}.W"] = Parameter(_glorot(rng, a, b), f"{self.prefix}.{i}.W")
            self.params[f"{self.prefix}.{i}.b"] = Parameter(np.zeros(b), f"{self.prefix}.{i}.b")
        self._pix = pixel_features(cfg.grid_w, cfg.grid_h)

    def features(self, scene: Scene) -> np.ndarray:
        """(N_p * H * W, 11) inputs, person-major then row-major pixels."""
        if (scene.grid_w, scene.grid_h) != (self.cfg.grid_w, self.cfg.grid_h):
            raise ValueError(f"scene grid {scene.grid_w}x{scene.grid_h} does not match branch grid")
        n, hw = scene.n_people, self._pix.shape[0]
        loc = np.array([normalize_xy(*p.location, scene.grid_w, scene.grid_h) for p in scene.people])
        gaze = np.array([p.gaze for p in scene.people])
        offset = self._pix[None, :, :] - loc[:, None, :]
        dist = np.sqrt((offset * offset).sum(axis=2))
        along = (offset * gaze[:, None, :]).sum(axis=2)
        cos = np.divide(along, dist, out=np.zeros_like(along), where=dist > 1e-12)
        out = np.empty((n, hw, N_BRANCH_FEATURES))
        out[:, :, 0:2] = self._pix[None]
        out[:, :, 2] = scene.saliency.flat[None, :]
        out[:, :, 3:5] = loc[:, None, :]
        out[:, :, 5:7] = gaze[:, None, :]
        out[:, :, 7:9] = offset
        out[:, :, 9] = dist
        out[:, :, 10] = cos
        return out.reshape(n * hw, N_BRANCH_FEATURES)

    def render(self, scene: Scene) -> Tensor:
        """Per-person maps H_AT^i, shape (N_p, H, W)."""
        P = self.params
        h = Tensor(self.features(scene))
        h = ad.dense_forward(h, P["branch.0.W"], P["branch.0.b"], "relu")
        h = ad.dense_forward(h, P["branch.1.W"], P["branch.1.b"], "relu")
        out = ad.sigmoid(ad.dense_forward(h, P["branch.2.W"], P["branch.2.b"]))
        return out.reshape(scene.n_people, self.cfg.grid_h, self.cfg.grid_w)


def render_hat(scene: Scene, branch: SceneBranch) -> tuple[Tensor, Tensor]:
    """(individual maps (N_p, H, W), their mean H_AT)."""
    maps = branch.render(scene)
    return maps, maps.mean(axis=0)


class FusionMode(str, Enum):
    WEIGHTED = "weighted"
    AVERAGE = "average"
    CNN = "cnn"


class Fusion:
    """Module gamma: combines H_JA and H_AT into H_F."""

    prefix = "fusion"

    def __init__(self, mode: FusionMode = FusionMode.WEIGHTED, seed: int = 0, cnn_channels: int = 8):
        self.mode = FusionMode(mode)
        self.cnn_channels = cnn_channels
        self.params: dict[str, Tensor] = {}
        if self.mode is FusionMode.WEIGHTED:
            self._add("w_ja", np.array([0.5]))
            self._add("w_at", np.array([0.5]))
        elif self.mode is FusionMode.CNN:
            rng = np.random.default_rng([seed, 2])
            c = cnn_channels
            b0 = np.sqrt(6.0 / (2 * 9 + c * 9))
            b1 = np.sqrt(6.0 / (c * 9 + 9))
            self._add("conv0.W", rng.uniform(-b0, b0, size=(c, 2, 3, 3)))
            self._add("conv0.b", np.zeros(c))
            self._add("conv1.W", rng.uniform(-b1, b1, size=(1, c, 3, 3)))
            self._add("conv1.b", np.zeros(1))

    def _add(self, name, values):
        full = f"{self.prefix}.{name}"
        self.params[full] = Parameter(values, full)

    @property
    def weights(self) -> tuple[float, float] | None:
        if self.mode is not FusionMode.WEIGHTED:
            return None
        return float(self.params["fusion.w_ja"].data[0]), float(self.params["fusion.w_at"].data[0])

    def __call__(self, h_ja: Tensor, h_at: Tensor) -> Tensor:
        if h_ja.shape != h_at.shape:
            raise ValueError(f"cannot fuse maps of shape {h_ja.shape} and {h_at.shape}")
        if self.mode is FusionMode.WEIGHTED:
            mixed = h_ja * self.params["fusion.w_ja"] + h_at * self.params["fusion.w_at"]
            return ad.clip(mixed, 0.0, 1.0)
        if self.mode is FusionMode.AVERAGE:
            return ad.clip(h_ja * 0.5 + h_at * 0.5, 0.0, 1.0)
        P = self.params
        stacked = ad.concat([h_ja.reshape(1, *h_ja.shape), h_at.reshape(1, *h_at.shape)], axis=0)
        h = ad.relu(ad.conv2d(stacked, P["fusion.conv0.W"], P["fusion.conv0.b"]))
        out = ad.sigmoid(ad.conv2d(h, P["fusion.conv1.W"], P["fusion.conv1.b"]))
        return out.reshape(*h_ja.shape)


def fuse(h_ja, h_at, fusion: Fusion):
    """Fuse two heatmaps; Heatmap inputs give a Heatmap, Tensors give a Tensor."""
    if isinstance(h_ja, Heatmap) and isinstance(h_at, Heatmap):
        with ad.no_grad():
            return Heatmap(fusion(Tensor(h_ja.values), Tensor(h_at.values)).data)
    return fusion(ad.as_tensor(h_ja), ad.as_tensor(h_at))


# objective

def ground_truth(scene: Scene, sigma: float | None = None) -> tuple[np.ndarray, np.ndarray]:
    """G_JA (all-zero without a joint AP) and the stack of per-person G_AT^i."""
    if sigma is None:
        sigma = default_sigma(scene.grid_w, scene.grid_h)
    w, h = scene.grid_w, scene.grid_h
    g_ja = np.zeros((h, w)) if scene.joint_ap is None else gaussian_grid(scene.joint_ap, sigma, w, h)
    g_at = np.stack([gaussian_grid(ap, sigma, w, h) for ap in scene.private_aps])
    return g_ja, g_at


@dataclass
class Losses:
    all: Tensor
    ja: Tensor
    at: Tensor
    f: Tensor

    def values(self) -> dict[str, float]:
        return {"L_JA": self.ja.item(), "L_AT": self.at.item(), "L_F": self.f.item(), "L_ALL": self.all.item()}


def loss_ja(h_ja: Tensor, g_ja: np.ndarray) -> Tensor:
    return ad.mse_sum(h_ja, g_ja)


def loss_at(h_at_maps: Tensor, g_at: np.ndarray) -> Tensor:
    # mean over people of per-person squared-error sums
    return ad.mse_sum(h_at_maps, g_at) * (1.0 / h_at_maps.shape[0])


def total_loss(scene: Scene, pjat: Pjat, branch: SceneBranch, fusion: Fusion, sigma: float | None = None) -> Losses:
    g_ja, g_at = ground_truth(scene, sigma)
    h_ja = pjat.render(scene)
    maps, h_at = render_hat(scene, branch)
    h_f = fusion(h_ja, h_at)
    l_ja = loss_ja(h_ja, g_ja)
    l_at = loss_at(maps, g_at)
    l_f = ad.mse_sum(h_f, g_ja)
    return Losses(all=l_ja + l_at + l_f, ja=l_ja, at=l_at, f=l_f)
