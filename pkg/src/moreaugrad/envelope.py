"""Moreau-envelope saliency maps computed by proximal gradient descent.

For a class score ``f`` and input ``x`` the solver minimizes over ``u``::

    f(u) + ||u - x||^2 / (2 rho) + eta * R(u - x)

where ``R`` is zero (vanilla), the L1 norm (sparse) or the L2,1 group norm
(group_sparse).  Each iteration takes a gradient step on the smooth part and
applies the matching proximal map to the offset ``u - x``.  The saliency map
is ``(x - u*) / rho``, which tends to the plain input gradient as
``rho -> 0``.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .errors import DivergenceError, InvalidInputError
from .numerics import as_tensor
from .prox import GroupPartition, group_soft_threshold, soft_threshold

__all__ = [
    "MODES",
    "EnvelopeConfig",
    "EnvelopeSolution",
    "smoothed_grad_estimate",
    "moreau_grad",
    "envelope_value",
    "brute_force_envelope_oracle",
]

log = logging.getLogger(__name__)

MODES = ("vanilla", "sparse", "group_sparse")

DIVERGENCE_FACTOR = 1e3
_NOISE_CHUNK = 256
_ORACLE_BLOCK = 1 << 14


@dataclass
class EnvelopeConfig:
    """Solver settings.

    ``gamma=None`` means ``rho / 2`` and ``tolerance=None`` means
    ``1e-6 * sqrt(d)``. The solver stops once an update moves the iterate by
    at most ``tolerance`` (L2) or after ``iterations`` updates.
    """

    rho: float = 1.0
    eta: float = 0.0
    mode: str = "vanilla"
    partition: Optional[GroupPartition] = None
    gamma: Optional[float] = None
    iterations: int = 200
    tolerance: Optional[float] = None
    regularized: bool = False
    sigma: float = 0.0
    noise_samples: int = 1

    def __post_init__(self):
        if not self.rho > 0:
            raise InvalidInputError(f"rho must be positive, got {self.rho}")
        if not self.eta >= 0:
            raise InvalidInputError(f"eta must be non-negative, got {self.eta}")
        if self.mode not in MODES:
            raise InvalidInputError(f"mode must be one of {MODES}, got {self.mode!r}")
        if self.mode == "group_sparse":
            if self.partition is None:
                raise InvalidInputError("group_sparse mode needs a partition")
            if not isinstance(self.partition, GroupPartition):
                self.partition = GroupPartition(self.partition)
        if self.gamma is not None and not 0 < self.gamma <= self.rho:
            raise InvalidInputError(
                f"gamma must satisfy 0 < gamma <= rho={self.rho}, got {self.gamma}"
            )
        if int(self.iterations) < 1:
            raise InvalidInputError(f"iterations must be >= 1, got {self.iterations}")
        if self.tolerance is not None and not self.tolerance >= 0:
            raise InvalidInputError(f"tolerance must be >= 0, got {self.tolerance}")
        if not self.sigma >= 0:
            raise InvalidInputError(f"sigma must be non-negative, got {self.sigma}")
        if int(self.noise_samples) < 1:
            raise InvalidInputError(f"noise_samples must be >= 1, got {self.noise_samples}")

    @property
    def step_size(self) -> float:
        return self.rho / 2 if self.gamma is None else self.gamma

    def tolerance_for(self, d: int) -> float:
        return 1e-6 * np.sqrt(d) if self.tolerance is None else self.tolerance

    def penalty(self, offset: np.ndarray) -> np.ndarray:
        """``eta * R(offset)`` per batch item; ``offset`` is ``(n, d)``."""
        if self.mode == "vanilla" or self.eta == 0:
            return np.zeros(offset.shape[0])
        if self.mode == "sparse":
            return self.eta * np.abs(offset).sum(axis=1)
        return self.eta * self.partition.group_norms(offset).sum(axis=1)

    def prox(self, offset: np.ndarray, step: float) -> np.ndarray:
        if self.mode == "vanilla" or self.eta == 0:
            return offset
        if self.mode == "sparse":
            return soft_threshold(offset, step * self.eta)
        return group_soft_threshold(offset, step * self.eta, self.partition)


@dataclass
class EnvelopeSolution:
    """Solver output. For batched input every field carries a leading batch axis."""

    x_star: np.ndarray
    saliency: np.ndarray
    envelope_value: object
    iterations_used: object
    final_update_norm: object


def _batch(model, x):
    x = as_tensor(x, "x")
    shape = tuple(model.input_shape)
    if x.shape == shape:
        return x[None], False
    if x.shape[1:] == shape:
        return x, True
    raise InvalidInputError(f"input shape {x.shape} does not match model input {shape}")


def smoothed_grad_estimate(model, x, c, sigma, m, rng=None):
    """Average input gradient over ``m`` Gaussian perturbations of ``x``.

    ``sigma == 0`` returns the exact gradient and draws nothing from ``rng``.
    """
    if not sigma >= 0:
        raise InvalidInputError(f"sigma must be non-negative, got {sigma}")
    if int(m) < 1:
        raise InvalidInputError(f"sample count must be >= 1, got {m}")
    if sigma == 0:
        return model.grad_input(x, c)
    if rng is None:
        raise InvalidInputError("a random generator is required when sigma > 0")
    xb, batched = _batch(model, x)
    n = xb.shape[0]
    cb = np.broadcast_to(np.asarray(c), (n,))
    total = np.zeros_like(xb)
    remaining = int(m)
    while remaining:
        k = min(remaining, _NOISE_CHUNK)
        noisy = xb[None] + sigma * rng.standard_normal((k,) + xb.shape)
        grads = model.grad_input(noisy.reshape((k * n,) + xb.shape[1:]), np.tile(cb, k))
        total += grads.reshape((k,) + xb.shape).sum(axis=0)
        remaining -= k
    est = total / m
    return est if batched else est[0]


def _solve(model, xb, c, cfg: EnvelopeConfig, rng):
    n = xb.shape[0]
    d = xb[0].size
    cb = np.broadcast_to(np.asarray(c), (n,))
    gamma, rho = cfg.step_size, cfg.rho
    tol = cfg.tolerance_for(d)
    limit = DIVERGENCE_FACTOR * (1.0 + np.linalg.norm(xb.reshape(n, -1), axis=1))
    if cfg.regularized and cfg.sigma > 0 and rng is None:
        raise InvalidInputError("regularized mode with sigma > 0 needs a random generator")

    offset = np.zeros_like(xb)
    used = np.zeros(n, dtype=np.int64)
    last = np.full(n, np.inf)
    active = np.arange(n)
    for _ in range(int(cfg.iterations)):
        x_act = xb[active]
        point = x_act + offset[active]
        if cfg.regularized:
            g = smoothed_grad_estimate(model, point, cb[active], cfg.sigma, cfg.noise_samples, rng)
        else:
            g = model.grad_input(point, cb[active])
        # gradient step on f(u) + |u - x|^2 / (2 rho), written for the offset u - x
        new = (1.0 - gamma / rho) * offset[active] - gamma * g
        new = cfg.prox(new, gamma)
        step = np.linalg.norm((new - offset[active]).reshape(len(active), -1), axis=1)
        offset[active] = new
        used[active] += 1
        last[active] = step
        far = np.linalg.norm(new.reshape(len(active), -1), axis=1)
        if np.any(far > limit[active]):
            i = active[np.argmax(far > limit[active])]
            raise DivergenceError(
                f"iterate drifted {far.max():.3g} from the input (limit {limit[i]:.3g}); "
                f"rho={rho} is likely too large for this score function"
            )
        if not np.all(np.isfinite(new)):
            raise DivergenceError("non-finite iterate; rho or gamma is too large")
        active = active[step > tol]
        if active.size == 0:
            break

    x_star = xb + offset
    saliency = (xb - x_star) / rho
    scores = model.forward(x_star)[np.arange(n), cb]
    diff = (x_star - xb).reshape(n, -1)
    value = scores + np.sum(diff * diff, axis=1) / (2 * rho) + cfg.penalty(diff)
    return x_star, saliency, value, used, last


def moreau_grad(model, x, c, cfg: EnvelopeConfig = None, rng=None) -> EnvelopeSolution:
    """MoreauGrad saliency of class ``c`` at ``x`` (vanilla, sparse or group-sparse).

    Parameters
    ----------
    model : ScoreModel or FunctionModel
        Anything exposing ``input_shape``, ``forward`` and ``grad_input``.
    x : array
        One input or a batch with a leading axis.
    c : int or array of int
        Class whose score is explained (one per batch item allowed).
    cfg : EnvelopeConfig
    rng : numpy.random.Generator, optional
        Required only for regularized mode with ``sigma > 0``; fresh noise is
        drawn at every iteration.

    Raises
    ------
    DivergenceError
        If an iterate moves further than ``1e3 * (1 + ||x||)`` from ``x``.
    """
    cfg = cfg or EnvelopeConfig()
    xb, batched = _batch(model, x)
    x_star, saliency, value, used, last = _solve(model, xb, c, cfg, rng)
    if batched:
        return EnvelopeSolution(x_star, saliency, value, used, last)
    return EnvelopeSolution(x_star[0], saliency[0], float(value[0]), int(used[0]), float(last[0]))


def envelope_value(model, x, c, cfg: EnvelopeConfig = None, rng=None):
    """Objective value at the solver's minimizer.

    In regularized mode the minimizer comes from smoothed gradients but the
    value is reported with the model's own (unsmoothed) score.
    """
    return moreau_grad(model, x, c, cfg, rng).envelope_value


def brute_force_envelope_oracle(
    fn,
    x,
    rho,
    eta=0.0,
    mode="vanilla",
    grid_radius=1.0,
    grid_step=1e-3,
    partition=None,
):
    """Minimize the envelope objective by exhaustive search on a grid.

    The grid is ``x + k * grid_step`` for every integer ``k`` with
    ``|k * grid_step| <= grid_radius`` in each of the ``d <= 2`` coordinates.
    ``fn`` maps an ``(n, d)`` array of points to ``n`` values.

    Returns
    -------
    value : float
    argmin : ndarray of shape (d,)
    """
    x = np.atleast_1d(as_tensor(x, "x")).ravel()
    d = x.size
    if d not in (1, 2):
        raise InvalidInputError(f"oracle supports d in {{1, 2}}, got d={d}")
    if not grid_step > 0 or not grid_radius >= 0:
        raise InvalidInputError("grid_step must be positive and grid_radius non-negative")
    if mode not in MODES:
        raise InvalidInputError(f"mode must be one of {MODES}, got {mode!r}")
    if mode == "group_sparse":
        if partition is None:
            partition = [np.arange(d)]
        if not isinstance(partition, GroupPartition):
            partition = GroupPartition(partition)
        if partition.size != d:
            raise InvalidInputError("partition does not match the input dimension")
    half = int(np.floor(grid_radius / grid_step))
    count = 2 * half + 1

    def axis(lo, hi):
        return (np.arange(lo, hi) - half) * grid_step

    def objective(offsets):
        pts = x + offsets
        val = np.asarray(fn(pts), dtype=np.float64).reshape(-1)
        cols = [offsets[:, j] for j in range(d)]
        val += sum(col * col for col in cols) / (2 * rho)
        if mode == "sparse":
            val += eta * sum(np.abs(col) for col in cols)
        elif mode == "group_sparse":
            val += eta * partition.group_norms(offsets).sum(axis=1)
        return val

    best_val, best_off = np.inf, None
    # cache-sized blocks keep the elementwise passes fast
    if d == 1:
        chunks = (axis(i, min(i + _ORACLE_BLOCK, count))[:, None]
                  for i in range(0, count, _ORACLE_BLOCK))
    else:
        full = axis(0, count)
        rows = max(1, _ORACLE_BLOCK // count)
        chunks = (
            np.stack(np.meshgrid(full[i:i + rows], full, indexing="ij"), axis=-1).reshape(-1, 2)
            for i in range(0, count, rows)
        )
    for offsets in chunks:
        vals = objective(offsets)
        j = int(np.argmin(vals))
        if vals[j] < best_val:
            best_val, best_off = float(vals[j]), offsets[j]
    return best_val, x + best_off
