"""Name-based construction of saliency interpreters.

An :class:`Interpreter` is a callable ``(model, x, c, rng=None) -> map`` that
accepts one input or a batch, whatever method it wraps.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .baselines import BaselineConfig, integrated_gradients, simple_gradient, smooth_grad
from .envelope import EnvelopeConfig, moreau_grad
from .errors import InvalidInputError
from .prox import GroupPartition, grid_partition

__all__ = ["METHODS", "Interpreter", "make_interpreter", "default_group_block", "partition_for"]

METHODS = (
    "simple-grad",
    "integrated-grad",
    "smooth-grad",
    "moreau",
    "sparse-moreau",
    "group-sparse-moreau",
)

DEFAULT_ETA = {"sparse-moreau": 0.005, "group-sparse-moreau": 0.05}
_MODE = {"moreau": "vanilla", "sparse-moreau": "sparse", "group-sparse-moreau": "group_sparse"}


def default_group_block(input_shape) -> int:
    """16x16 tiles for large images, half the side length for small ones."""
    side = max(input_shape[1:]) if len(input_shape) == 3 else int(np.prod(input_shape))
    return 16 if side > 16 else max(1, side // 2)


def partition_for(input_shape, block=None) -> GroupPartition:
    """Spatial tiles for ``(C, H, W)`` inputs, contiguous runs for vectors."""
    block = default_group_block(input_shape) if block is None else int(block)
    if len(input_shape) == 3:
        c, h, w = input_shape
        return grid_partition(h, w, c, block)
    d = int(np.prod(input_shape))
    if not 1 <= block < d:
        raise InvalidInputError(f"block must lie in 1..{d - 1} for a {d}-vector, got {block}")
    return GroupPartition([np.arange(s, min(s + block, d)) for s in range(0, d, block)])


@dataclass
class Interpreter:
    method: str
    envelope: Optional[EnvelopeConfig] = None
    baseline: BaselineConfig = field(default_factory=BaselineConfig)

    @property
    def stochastic(self) -> bool:
        """True when the output depends on the random stream."""
        if self.method == "smooth-grad":
            return self.baseline.sg_sigma > 0
        if self.envelope is not None:
            return self.envelope.regularized and self.envelope.sigma > 0
        return False

    def __call__(self, model, x, c, rng=None):
        if self.method == "simple-grad":
            return simple_gradient(model, x, c)
        if self.method == "integrated-grad":
            return integrated_gradients(model, x, c, self.baseline)
        if self.method == "smooth-grad":
            return smooth_grad(model, x, c, self.baseline, rng)
        return moreau_grad(model, x, c, self.envelope, rng).saliency


def make_interpreter(
    method,
    input_shape,
    rho=1.0,
    eta=None,
    gamma=None,
    iterations=200,
    tolerance=None,
    regularized=False,
    sigma=0.0,
    noise_samples=1,
    group_block=None,
    ig_steps=50,
    sg_sigma=0.05,
    sg_samples=50,
) -> Interpreter:
    """Build an interpreter by CLI method name.

    ``eta=None`` picks 0.005 for ``sparse-moreau`` and 0.05 for
    ``group-sparse-moreau``.
    """
    if method not in METHODS:
        raise InvalidInputError(f"unknown method {method!r}; choose from {METHODS}")
    baseline = BaselineConfig(ig_steps=ig_steps, sg_sigma=sg_sigma, sg_samples=sg_samples)
    if method not in _MODE:
        return Interpreter(method, None, baseline)
    mode = _MODE[method]
    cfg = EnvelopeConfig(
        rho=rho,
        eta=DEFAULT_ETA.get(method, 0.0) if eta is None else eta,
        mode=mode,
        partition=partition_for(tuple(input_shape), group_block) if mode == "group_sparse" else None,
        gamma=gamma,
        iterations=iterations,
        tolerance=tolerance,
        regularized=regularized,
        sigma=sigma,
        noise_samples=noise_samples,
    )
    return Interpreter(method, cfg, baseline)
