"""Gradient-based reference interpreters: simple gradient, integrated gradients, SmoothGrad."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .envelope import smoothed_grad_estimate
from .errors import InvalidInputError
from .numerics import as_tensor

__all__ = ["BaselineConfig", "simple_gradient", "integrated_gradients", "smooth_grad"]


@dataclass
class BaselineConfig:
    """``ig_baseline=None`` selects the all-zero reference point."""

    ig_steps: int = 50
    ig_baseline: Optional[np.ndarray] = None
    sg_sigma: float = 0.05
    sg_samples: int = 50

    def __post_init__(self):
        if int(self.ig_steps) < 1:
            raise InvalidInputError(f"ig_steps must be >= 1, got {self.ig_steps}")
        if int(self.sg_samples) < 1:
            raise InvalidInputError(f"sg_samples must be >= 1, got {self.sg_samples}")
        if not self.sg_sigma >= 0:
            raise InvalidInputError(f"sg_sigma must be non-negative, got {self.sg_sigma}")


def simple_gradient(model, x, c):
    return model.grad_input(x, c)


def integrated_gradients(model, x, c, cfg: BaselineConfig = None):
    """Right-endpoint Riemann sum of the gradient along the straight path
    from the reference point to ``x``, multiplied elementwise by ``x - x0``.

    Works on a single input or a batch; the reference point broadcasts
    against ``x``.
    """
    cfg = cfg or BaselineConfig()
    x = as_tensor(x, "x")
    x0 = np.zeros_like(x) if cfg.ig_baseline is None else as_tensor(cfg.ig_baseline, "ig_baseline")
    try:
        delta = x - x0
    except ValueError:
        raise InvalidInputError(
            f"reference point shape {x0.shape} does not match input {x.shape}"
        ) from None
    if delta.shape != x.shape:
        raise InvalidInputError(f"reference point shape {x0.shape} does not match input {x.shape}")
    m = int(cfg.ig_steps)
    batched = x.shape != tuple(model.input_shape)
    n = x.shape[0] if batched else 1
    alphas = np.arange(1, m + 1) / m
    path = x0 + alphas.reshape((m,) + (1,) * x.ndim) * delta
    if batched:
        cls = np.tile(np.broadcast_to(np.asarray(c), (n,)), m)
        grads = model.grad_input(path.reshape((m * n,) + x.shape[1:]), cls)
        total = grads.reshape((m,) + x.shape).sum(axis=0)
    else:
        total = model.grad_input(path, np.full(m, c)).sum(axis=0)
    return delta / m * total


def smooth_grad(model, x, c, cfg: BaselineConfig = None, rng=None):
    """Mean input gradient over ``sg_samples`` Gaussian-noised copies of ``x``."""
    cfg = cfg or BaselineConfig()
    return smoothed_grad_estimate(model, x, c, cfg.sg_sigma, cfg.sg_samples, rng)
