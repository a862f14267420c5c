"""Raster reading and patch (de)serialisation."""

from __future__ import annotations

from pathlib import Path

import numpy as np
from PIL import Image

RASTER_SUFFIXES = (".png", ".pgm", ".tif", ".tiff")

_PATCH_SCALE = 65535


def read_raster(path) -> np.ndarray:
    """Read a grayscale raster as a 2-D integer array (uint8 or uint16)."""
    with Image.open(path) as img:
        arr = np.asarray(img)
    if arr.ndim == 3:
        raise ValueError(f"{path}: expected a single-channel raster, got shape {arr.shape}")
    if arr.dtype == np.uint8 or arr.dtype == np.uint16:
        return arr
    if arr.dtype.kind in "iu":
        # Pillow decodes 16-bit PGM as int32.
        if arr.min() < 0 or arr.max() > 65535:
            raise ValueError(f"{path}: values outside the 16-bit range")
        return arr.astype(np.uint16)
    if arr.dtype == bool:
        return arr.astype(np.uint8)
    raise ValueError(f"{path}: unsupported pixel type {arr.dtype}")


def max_intensity(arr: np.ndarray) -> float:
    """Format maximum used to bring intensities to [0, 1]."""
    if arr.dtype == np.uint8 or arr.dtype == bool:
        return 255.0
    if arr.dtype == np.uint16:
        return 65535.0
    if arr.dtype.kind == "f":
        return 1.0
    raise ValueError(f"no format maximum for dtype {arr.dtype}")


def write_raster(path, arr: np.ndarray) -> None:
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    Image.fromarray(arr).save(path)


def save_patch(path, pixels: np.ndarray) -> None:
    """Store a [0, 1] float patch as a 16-bit grayscale PNG."""
    q = np.rint(np.clip(pixels, 0.0, 1.0) * _PATCH_SCALE).astype(np.uint16)
    write_raster(path, q)


def load_patch(path) -> np.ndarray:
    arr = read_raster(path)
    return (arr.astype(np.float32) / np.float32(max_intensity(arr))).astype(np.float32)


def quantize_patch(pixels: np.ndarray) -> np.ndarray:
    """The exact values :func:`load_patch` returns after :func:`save_patch`."""
    q = np.rint(np.clip(pixels, 0.0, 1.0) * _PATCH_SCALE).astype(np.uint16)
    return (q.astype(np.float32) / np.float32(_PATCH_SCALE)).astype(np.float32)
