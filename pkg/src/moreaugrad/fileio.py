"""MGT1 tensor files, P5 PGM heatmaps and JSON run manifests."""
from __future__ import annotations

import json
import struct

import numpy as np

from .errors import FormatError
from .metrics import spatial_map

__all__ = ["save_tensor", "load_tensor", "heatmap_bytes", "save_heatmap", "write_manifest"]

TENSOR_MAGIC = b"MGT1\n"


def save_tensor(path, arr):
    """Write ``arr`` as MGT1: magic, ndim, dims (u32 LE), float32 LE payload."""
    arr = np.asarray(arr)
    header = TENSOR_MAGIC + struct.pack("<I", arr.ndim) + struct.pack(f"<{arr.ndim}I", *arr.shape)
    with open(path, "wb") as fh:
        fh.write(header + arr.astype("<f4").tobytes(order="C"))


def load_tensor(path) -> np.ndarray:
    with open(path, "rb") as fh:
        blob = fh.read()
    if not blob.startswith(TENSOR_MAGIC):
        raise FormatError(f"{path}: missing MGT1 magic header")
    pos = len(TENSOR_MAGIC)
    if len(blob) < pos + 4:
        raise FormatError(f"{path}: truncated before ndim")
    (ndim,) = struct.unpack_from("<I", blob, pos)
    pos += 4
    if len(blob) < pos + 4 * ndim:
        raise FormatError(f"{path}: truncated inside dims")
    dims = struct.unpack_from(f"<{ndim}I", blob, pos)
    pos += 4 * ndim
    count = int(np.prod(dims, dtype=np.int64))
    if len(blob) - pos != 4 * count:
        raise FormatError(
            f"{path}: header declares {count} values but payload holds {(len(blob) - pos) / 4:g}"
        )
    data = np.frombuffer(blob, dtype="<f4", count=count, offset=pos)
    return data.astype(np.float64).reshape(dims)


def heatmap_bytes(saliency, batched=False) -> bytes:
    """P5 PGM of per-pixel ``|saliency|`` summed over channels, min-max scaled to 0-255.

    Vectors render as a single row; with ``batched`` the maps along the
    leading axis are stacked vertically.
    """
    s = np.asarray(saliency, dtype=np.float64)
    items = list(s) if batched else [s]
    img = np.concatenate([np.atleast_2d(spatial_map(m)) for m in items], axis=0)
    lo, hi = img.min(), img.max()
    scaled = np.zeros_like(img) if hi == lo else (img - lo) / (hi - lo)
    pixels = np.rint(scaled * 255).astype(np.uint8)
    h, w = pixels.shape
    return f"P5\n{w} {h}\n255\n".encode("ascii") + pixels.tobytes(order="C")


def save_heatmap(path, saliency, batched=False):
    with open(path, "wb") as fh:
        fh.write(heatmap_bytes(saliency, batched))


def write_manifest(path, manifest: dict):
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")
