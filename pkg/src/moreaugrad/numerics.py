"""Tensor helpers, seeded random streams and the norms used across the package.

Tensors are plain ``numpy.ndarray`` objects of dtype float64, flattened in
C (row-major) order whenever a flat index is needed.  Random streams come from
numpy's PCG64 bit generator fed by a ``SeedSequence``; PCG64 and the
ziggurat normal sampler are fully specified by numpy, so a seed reproduces the
same stream on every platform.
"""
from __future__ import annotations

import numpy as np

from .errors import InvalidInputError, InvalidPartitionError

__all__ = [
    "as_tensor",
    "make_rng",
    "derive_rng",
    "l2_norm",
    "group_norm_21",
    "gaussian_sample",
]


def as_tensor(x, name="tensor") -> np.ndarray:
    """Return ``x`` as a finite float64 array (copying only when needed)."""
    arr = np.asarray(x, dtype=np.float64)
    if arr.size == 0:
        raise InvalidInputError(f"{name} is empty")
    if not np.all(np.isfinite(arr)):
        raise InvalidInputError(f"{name} contains NaN or Inf")
    return arr


def make_rng(seed: int) -> np.random.Generator:
    if seed < 0 or seed >= 2**64:
        raise InvalidInputError(f"seed must be a 64-bit unsigned integer, got {seed}")
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(int(seed))))


def derive_rng(seed: int, *keys: int) -> np.random.Generator:
    """Independent stream for ``(seed, key...)``, e.g. one per batch item."""
    entropy = [int(seed)] + [int(k) for k in keys]
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(entropy)))


def l2_norm(v) -> float:
    v = as_tensor(v, "v")
    return float(np.sqrt(np.sum(v * v)))


def group_norm_21(v, partition) -> float:
    """Sum over groups of the Euclidean norm of each group's entries.

    ``partition`` is a :class:`moreaugrad.prox.GroupPartition` (or any sequence
    of index arrays) over the flattened positions of ``v``.
    """
    from .prox import GroupPartition

    v = as_tensor(v, "v").ravel()
    if not isinstance(partition, GroupPartition):
        partition = GroupPartition(partition)
    if partition.size != v.size:
        raise InvalidPartitionError(
            f"partition covers {partition.size} indices but v has {v.size}"
        )
    return float(np.sum(partition.group_norms(v)))


def gaussian_sample(rng: np.random.Generator, shape, sigma: float) -> np.ndarray:
    if not sigma >= 0:
        raise InvalidInputError(f"sigma must be non-negative, got {sigma}")
    if sigma == 0:
        return np.zeros(shape, dtype=np.float64)
    return sigma * rng.standard_normal(shape)
