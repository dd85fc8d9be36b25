"""Moreau-envelope saliency maps (MoreauGrad) with baselines, attacks and robustness metrics."""

__version__ = "0.1.0"

from .envelope import EnvelopeConfig, EnvelopeSolution, moreau_grad  # noqa: E402
from .model import FunctionModel, ScoreModel, load_weights, save_weights, train_toy  # noqa: E402
from .prox import GroupPartition, grid_partition, group_soft_threshold, soft_threshold  # noqa: E402

__all__ = [
    "EnvelopeConfig",
    "EnvelopeSolution",
    "moreau_grad",
    "FunctionModel",
    "ScoreModel",
    "load_weights",
    "save_weights",
    "train_toy",
    "GroupPartition",
    "grid_partition",
    "group_soft_threshold",
    "soft_threshold",
]
