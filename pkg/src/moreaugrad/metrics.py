"""Similarity measures between a clean and a perturbed saliency map.

Maps with three axes are read as ``(C, H, W)``. Top-k and SSIM work on the
spatial map obtained by summing absolute values over channels; the
normalized distance uses the raw flattened map.
"""
from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import DegenerateInputError, InvalidInputError
from .numerics import as_tensor

__all__ = [
    "spatial_map",
    "default_k",
    "normalized_l2_distance",
    "topk_indices",
    "topk_intersection",
    "ssim",
    "ssim_index",
    "gaussian_window",
    "MetricsReport",
    "evaluate_pairs",
    "CSV_COLUMNS",
]

SSIM_WINDOW = 7
SSIM_SIGMA = 1.5
SSIM_C1 = 0.01 ** 2
SSIM_C2 = 0.03 ** 2

CSV_COLUMNS = ("sample_id", "method", "epsilon", "normalized_distance", "topk_ratio", "ssim")


def spatial_map(a) -> np.ndarray:
    """Per-pixel absolute saliency: channel L1 for ``(C, H, W)``, ``|a|`` otherwise."""
    a = as_tensor(a, "map")
    if a.ndim == 3:
        return np.abs(a).sum(axis=0)
    return np.abs(a)


def default_k(shape) -> int:
    """10% of the spatial positions, at least one."""
    n = int(np.prod(shape[1:] if len(shape) == 3 else shape))
    return max(1, int(round(0.1 * n)))


def normalized_l2_distance(a, b) -> float:
    a = as_tensor(a, "a").ravel()
    b = as_tensor(b, "b").ravel()
    if a.shape != b.shape:
        raise InvalidInputError(f"maps differ in size: {a.size} vs {b.size}")
    if not np.any(a) or not np.any(b):
        raise DegenerateInputError("normalized distance is undefined for an all-zero map")
    # pre-scale by the largest entry so tiny maps do not underflow the norm
    a = a / np.abs(a).max()
    b = b / np.abs(b).max()
    return float(min(2.0, np.linalg.norm(a / np.linalg.norm(a) - b / np.linalg.norm(b))))


def topk_indices(a, k) -> np.ndarray:
    """Flat indices of the ``k`` largest spatial entries, lowest index first on ties."""
    flat = spatial_map(a).ravel()
    if not 1 <= k <= flat.size:
        raise InvalidInputError(f"k must lie in 1..{flat.size}, got {k}")
    return np.argsort(-flat, kind="stable")[:k]


def topk_intersection(a, b, k) -> float:
    if np.shape(a) != np.shape(b):
        raise InvalidInputError(f"maps differ in shape: {np.shape(a)} vs {np.shape(b)}")
    common = np.intersect1d(topk_indices(a, k), topk_indices(b, k))
    return common.size / k


def gaussian_window(size=SSIM_WINDOW, sigma=SSIM_SIGMA) -> np.ndarray:
    r = np.arange(size) - (size - 1) / 2
    g = np.exp(-(r * r) / (2 * sigma * sigma))
    w = np.outer(g, g)
    return w / w.sum()


def ssim_index(x, y, data_range=1.0) -> float:
    """Mean SSIM of two single-channel images over all fully contained 7x7 windows."""
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if x.shape != y.shape or x.ndim != 2:
        raise InvalidInputError(f"SSIM needs two equal 2-D images, got {x.shape} and {y.shape}")
    if min(x.shape) < SSIM_WINDOW:
        raise InvalidInputError(
            f"image {x.shape} is smaller than the {SSIM_WINDOW}x{SSIM_WINDOW} SSIM window"
        )
    w = gaussian_window()
    c1 = SSIM_C1 * data_range ** 2
    c2 = SSIM_C2 * data_range ** 2
    wx = sliding_window_view(x, w.shape)
    wy = sliding_window_view(y, w.shape)
    mx = np.einsum("ijkl,kl->ij", wx, w)
    my = np.einsum("ijkl,kl->ij", wy, w)
    dx = wx - mx[..., None, None]
    dy = wy - my[..., None, None]
    vx = np.einsum("ijkl,kl->ij", dx * dx, w)
    vy = np.einsum("ijkl,kl->ij", dy * dy, w)
    cxy = np.einsum("ijkl,kl->ij", dx * dy, w)
    local = ((2 * mx * my + c1) * (2 * cxy + c2)) / ((mx * mx + my * my + c1) * (vx + vy + c2))
    return float(local.mean())


def _unit_range(img):
    lo, hi = img.min(), img.max()
    if hi == lo:
        return np.zeros_like(img)
    return (img - lo) / (hi - lo)


def ssim(a, b) -> float:
    """SSIM between two saliency maps after collapsing channels and min-max scaling.

    A constant map scales to all zeros.
    """
    if np.shape(a) != np.shape(b):
        raise InvalidInputError(f"maps differ in shape: {np.shape(a)} vs {np.shape(b)}")
    sa, sb = spatial_map(a), spatial_map(b)
    if sa.ndim != 2:
        raise InvalidInputError(f"SSIM needs spatial maps, got shape {np.shape(a)}")
    return ssim_index(_unit_range(sa), _unit_range(sb))


@dataclass
class MetricsReport:
    """Per-sample metric rows plus mean and median aggregates."""

    k: int
    rows: list = field(default_factory=list)

    def column(self, name):
        return np.array([r[name] for r in self.rows], dtype=np.float64)

    def mean(self, name) -> float:
        return float(np.nanmean(self.column(name)))

    def median(self, name) -> float:
        return float(np.nanmedian(self.column(name)))

    def to_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(CSV_COLUMNS)
        for r in self.rows:
            writer.writerow([r["sample_id"], r["method"], repr(float(r["epsilon"]))]
                            + [repr(float(r[c])) for c in CSV_COLUMNS[3:]])
        return buf.getvalue()

    def write_csv(self, path):
        with open(path, "w", encoding="utf-8", newline="") as fh:
            fh.write(self.to_csv())


def evaluate_pairs(clean, attacked, method="", epsilon=0.0, k=None) -> MetricsReport:
    """Score matched batches of clean/attacked maps (leading axis = sample).

    SSIM is reported as NaN for maps without two spatial axes.
    """
    clean = as_tensor(clean, "clean")
    attacked = as_tensor(attacked, "attacked")
    if clean.shape != attacked.shape:
        raise InvalidInputError(f"clean {clean.shape} and attacked {attacked.shape} maps differ")
    k = default_k(clean.shape[1:]) if k is None else int(k)
    report = MetricsReport(k=k)
    for i, (a, b) in enumerate(zip(clean, attacked)):
        try:
            s = ssim(a, b)
        except InvalidInputError:
            if spatial_map(a).ndim == 2:
                raise
            s = float("nan")
        report.rows.append({
            "sample_id": i,
            "method": method,
            "epsilon": float(epsilon),
            "normalized_distance": normalized_l2_distance(a, b),
            "topk_ratio": topk_intersection(a, b, k),
            "ssim": s,
        })
    return report
