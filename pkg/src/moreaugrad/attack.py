"""Interpretation attacks: an L2-bounded top-k attack and a random Gaussian baseline.

The top-k attack lowers the total saliency on the positions that were most
salient for the clean input while keeping the predicted class fixed. The
objective gradient is estimated by central differences along random unit
directions, so any interpreter can be attacked without differentiating
through it.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .errors import InvalidInputError, PreconditionError, UnsupportedInterpreterError
from .metrics import spatial_map, topk_indices
from .numerics import as_tensor, derive_rng

__all__ = ["AttackConfig", "AttackResult", "topk_attack", "gaussian_attack"]


@dataclass
class AttackConfig:
    """Top-k attack settings.

    ``step_size=None`` uses ``2.5 * epsilon / steps``. Each step spends
    ``2 * directions + 1`` interpreter evaluations.
    """

    epsilon: float
    k: int
    steps: int = 20
    step_size: Optional[float] = None
    directions: int = 20
    fd_step: float = 1e-2

    def __post_init__(self):
        if not self.epsilon >= 0:
            raise InvalidInputError(f"epsilon must be non-negative, got {self.epsilon}")
        if int(self.k) < 1:
            raise InvalidInputError(f"k must be positive, got {self.k}")
        if int(self.steps) < 1 or int(self.directions) < 1:
            raise InvalidInputError("steps and directions must be positive")
        if self.step_size is not None and not self.step_size > 0:
            raise InvalidInputError(f"step_size must be positive, got {self.step_size}")
        if not self.fd_step > 0:
            raise InvalidInputError(f"fd_step must be positive, got {self.fd_step}")

    @property
    def initial_step(self) -> float:
        return 2.5 * self.epsilon / self.steps if self.step_size is None else self.step_size


@dataclass
class AttackResult:
    x_adv: np.ndarray
    delta_norm: float
    prediction_preserved: bool
    steps_taken: int
    clean_objective: float = 0.0
    objective: float = 0.0


def _project(delta, epsilon):
    norm = np.linalg.norm(delta)
    if norm <= epsilon:
        return delta
    # shave one ulp-scale factor so rounding never lands outside the ball
    return delta * (epsilon / norm) * (1.0 - 1e-12)


def topk_attack(model, interpreter, x, c, cfg: AttackConfig, rng) -> AttackResult:
    """Minimize the clean top-k positions' saliency within an L2 ball.

    Parameters
    ----------
    model : ScoreModel
    interpreter : callable
        ``interpreter(model, x, c, rng=None)`` returning a map for one input or
        a batch. If it has a true ``stochastic`` attribute, every evaluation
        reuses one fixed noise seed and inputs are evaluated one at a time.
    x : array
        Clean input, which the model must classify as ``c``.
    cfg : AttackConfig
    rng : numpy.random.Generator
        Source of search directions and of the interpreter's noise seed.

    Returns
    -------
    AttackResult
        The iterate with the lowest objective seen. Steps that change the
        prediction are rolled back and halve the step size.
    """
    if not callable(interpreter):
        raise UnsupportedInterpreterError(f"{interpreter!r} is not a callable interpreter")
    x = as_tensor(x, "x")
    prediction = model.predict(x).class_index
    if prediction != c:
        raise PreconditionError(f"input is classified as {prediction}, not the attacked class {c}")

    noise_seed = int(rng.integers(0, 2**63))
    stochastic = bool(getattr(interpreter, "stochastic", False))

    def maps(points):
        if stochastic:
            return np.stack([interpreter(model, p, c, rng=derive_rng(noise_seed)) for p in points])
        return interpreter(model, points, c, rng=derive_rng(noise_seed))

    clean = maps(x[None])[0]
    salient = topk_indices(clean, int(cfg.k))

    def objective(points):
        m = maps(points)
        return np.array([spatial_map(mi).ravel()[salient].sum() for mi in m])

    clean_obj = float(objective(x[None])[0])
    if cfg.epsilon == 0:
        return AttackResult(x.copy(), 0.0, True, 0, clean_obj, clean_obj)

    r, h = int(cfg.directions), cfg.fd_step
    step = cfg.initial_step
    delta = np.zeros_like(x)
    best_delta, best_obj = delta, clean_obj
    taken = 0
    for _ in range(int(cfg.steps)):
        u = rng.standard_normal((r,) + x.shape)
        u /= np.linalg.norm(u.reshape(r, -1), axis=1).reshape((r,) + (1,) * x.ndim)
        base = x + delta
        vals = objective(np.concatenate([base[None], base + h * u, base - h * u]))
        current = vals[0]
        if current < best_obj:
            best_delta, best_obj = delta, float(current)
        slopes = (vals[1:r + 1] - vals[r + 1:]) / (2 * h)
        grad = np.tensordot(slopes, u, axes=1)
        gnorm = np.linalg.norm(grad)
        taken += 1
        if gnorm == 0:
            break
        candidate = _project(delta - step * grad / gnorm, cfg.epsilon)
        if model.predict(x + candidate).class_index != c:
            step /= 2
            continue
        delta = candidate

    final = float(objective((x + delta)[None])[0])
    if final < best_obj:
        best_delta, best_obj = delta, final
    x_adv = x + best_delta
    return AttackResult(
        x_adv=x_adv,
        delta_norm=float(np.linalg.norm(x_adv - x)),
        prediction_preserved=model.predict(x_adv).class_index == c,
        steps_taken=taken,
        clean_objective=clean_obj,
        objective=best_obj,
    )


def gaussian_attack(x, epsilon, rng) -> np.ndarray:
    """``x`` plus a uniformly random direction of L2 length exactly ``epsilon``."""
    if not epsilon >= 0:
        raise InvalidInputError(f"epsilon must be non-negative, got {epsilon}")
    x = as_tensor(x, "x")
    if epsilon == 0:
        return x.copy()
    z = rng.standard_normal(x.shape)
    return x + epsilon * z / np.linalg.norm(z)
