"""Soft-thresholding operators and group partitions.

``soft_threshold`` is the proximal map of ``alpha * ||.||_1`` and
``group_soft_threshold`` the proximal map of ``alpha * ||.||_{2,1}``.
Both accept batched input: when ``v`` has one more leading axis than the
partition describes, the operator is applied to every item independently.
"""
from __future__ import annotations

import numpy as np

from .errors import InvalidInputError, InvalidPartitionError

__all__ = ["GroupPartition", "soft_threshold", "group_soft_threshold", "grid_partition"]


class GroupPartition:
    """Disjoint index subsets covering ``0..d-1`` of a flattened tensor.

    Validation happens at construction, so every live instance is a true
    partition. ``labels[i]`` is the group holding flat index ``i``.
    """

    def __init__(self, groups):
        groups = tuple(np.asarray(g, dtype=np.int64).ravel() for g in groups)
        if not groups:
            raise InvalidPartitionError("partition has no groups")
        if any(g.size == 0 for g in groups):
            raise InvalidPartitionError("partition contains an empty group")
        flat = np.concatenate(groups)
        d = flat.size
        if flat.min() < 0 or flat.max() >= d:
            raise InvalidPartitionError(
                f"indices must lie in 0..{d - 1}; partition is incomplete or out of range"
            )
        counts = np.bincount(flat, minlength=d)
        if np.any(counts > 1):
            raise InvalidPartitionError(
                f"index {int(np.argmax(counts > 1))} appears in more than one group"
            )
        labels = np.empty(d, dtype=np.int64)
        for i, g in enumerate(groups):
            labels[g] = i
        self.groups = groups
        self.labels = labels
        self._order = flat
        self._starts = np.concatenate(([0], np.cumsum([g.size for g in groups])[:-1]))

    def __repr__(self):
        return f"GroupPartition({len(self.groups)} groups over {self.size} indices)"

    @property
    def size(self) -> int:
        return self.labels.size

    def __len__(self):
        return len(self.groups)

    def group_norms(self, v: np.ndarray) -> np.ndarray:
        """Per-group L2 norms; ``v`` is ``(d,)`` or ``(n, d)``."""
        sq = np.square(v)
        if sq.ndim == 1:
            return np.sqrt(np.bincount(self.labels, weights=sq, minlength=len(self)))
        return np.sqrt(np.add.reduceat(sq[:, self._order], self._starts, axis=1))


def _check_alpha(alpha):
    if not alpha >= 0:
        raise InvalidInputError(f"alpha must be non-negative, got {alpha}")


def soft_threshold(v, alpha: float) -> np.ndarray:
    """Entrywise shrinkage toward zero by ``alpha``; ``|v_i| <= alpha`` maps to 0."""
    _check_alpha(alpha)
    v = np.asarray(v, dtype=np.float64)
    mag = np.abs(v) - alpha
    return np.where(mag > 0, np.sign(v) * mag, 0.0)


def group_soft_threshold(v, alpha: float, partition: GroupPartition) -> np.ndarray:
    """Blockwise shrinkage: each group is zeroed when its norm is at most
    ``alpha`` and otherwise scaled by ``1 - alpha / ||v_S||``.

    ``v`` may be a single tensor with ``partition.size`` entries or a batch
    whose trailing axes hold ``partition.size`` entries.
    """
    _check_alpha(alpha)
    if not isinstance(partition, GroupPartition):
        partition = GroupPartition(partition)
    v = np.asarray(v, dtype=np.float64)
    d = partition.size
    if v.size == d:
        flat = v.reshape(1, d)
    elif v.ndim >= 1 and v.size % d == 0 and v[0].size == d:
        flat = v.reshape(v.shape[0], d)
    else:
        raise InvalidPartitionError(
            f"partition covers {d} indices but tensor has shape {v.shape}"
        )
    norms = partition.group_norms(flat)
    with np.errstate(divide="ignore", invalid="ignore"):
        scale = np.where(norms > alpha, 1.0 - alpha / norms, 0.0)
    out = flat * scale[:, partition.labels]
    return out.reshape(v.shape)


def grid_partition(height: int, width: int, channels: int, block: int) -> GroupPartition:
    """Tile a ``(channels, height, width)`` tensor into ``block x block`` spatial groups.

    Every channel of a pixel lands in that pixel's group. Tiles on the right and
    bottom edges are truncated when the block size does not divide the image.
    Flat indices follow row-major ``(C, H, W)`` order.
    """
    if block < 1:
        raise InvalidInputError(f"block must be >= 1, got {block}")
    if min(height, width, channels) < 1:
        raise InvalidInputError("image dimensions must be positive")
    if block >= height and block >= width:
        raise InvalidInputError(
            f"block {block} covers the whole {height}x{width} image; grouping would be trivial"
        )
    index = np.arange(channels * height * width).reshape(channels, height, width)
    groups = []
    for r in range(0, height, block):
        for c in range(0, width, block):
            groups.append(index[:, r:r + block, c:c + block].ravel())
    return GroupPartition(groups)
