"""Joint-attention estimation with a position-embedded transformer over people.

Each person is a token built from location, action distribution and gaze
direction. A learnable joint-attention token attends over the group, and a
coordinate-conditioned head turns its output into a per-pixel heatmap that is
fused with a scene branch.
"""

from .heatmap import Heatmap, argmax_point, render_gaussian_gt
from .model import Pjat, PjatConfig, Variant
from .fusion import BranchConfig, Fusion, FusionMode, SceneBranch
from .scene import PersonAttributes, Scene, SceneGenConfig, generate_dataset, generate_scene
from .trainer import Stage, Target, TrainConfig, build_models, train
from .metrics import MetricsReport

__all__ = [
    "Heatmap",
    "argmax_point",
    "render_gaussian_gt",
    "Pjat",
    "PjatConfig",
    "Variant",
    "BranchConfig",
    "Fusion",
    "FusionMode",
    "SceneBranch",
    "PersonAttributes",
    "Scene",
    "SceneGenConfig",
    "generate_dataset",
    "generate_scene",
    "Stage",
    "Target",
    "TrainConfig",
    "build_models",
    "train",
    "MetricsReport",
]

__version__ = "0.1.0"
