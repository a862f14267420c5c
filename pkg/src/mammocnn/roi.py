"""Mass bounding boxes, context padding and fixed-size patch extraction."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from .imageio import max_intensity

SMALL_FIXED = "SMALL_FIXED"
LARGE_PROPORTIONAL = "LARGE_PROPORTIONAL"


class ROIError(ValueError):
    pass


@dataclass(frozen=True)
class BoundingBox:
    x: int
    y: int
    w: int
    h: int

    def __post_init__(self):
        if self.w < 1 or self.h < 1:
            raise ROIError(f"degenerate box {self}")

    @property
    def x1(self) -> int:
        return self.x + self.w

    @property
    def y1(self) -> int:
        return self.y + self.h

    def contains(self, other: "BoundingBox") -> bool:
        return self.x <= other.x and self.y <= other.y and other.x1 <= self.x1 and other.y1 <= self.y1

    def inside(self, image_dims) -> bool:
        W, H = image_dims
        return 0 <= self.x and 0 <= self.y and self.x1 <= W and self.y1 <= H

    def as_tuple(self) -> tuple[int, int, int, int]:
        return (self.x, self.y, self.w, self.h)


@dataclass(frozen=True)
class ContextStrategy:
    kind: str = LARGE_PROPORTIONAL
    pad_pixels: int = 50
    scale: float = 2.0

    def __post_init__(self):
        if self.kind not in (SMALL_FIXED, LARGE_PROPORTIONAL):
            raise ROIError(f"unknown context strategy {self.kind!r}")
        if self.pad_pixels < 0:
            raise ROIError("pad_pixels must be >= 0")
        if self.scale < 1:
            raise ROIError("scale must be >= 1")

    @classmethod
    def small(cls, pad: int = 50) -> "ContextStrategy":
        return cls(SMALL_FIXED, pad_pixels=pad)

    @classmethod
    def large(cls, scale: float = 2.0) -> "ContextStrategy":
        return cls(LARGE_PROPORTIONAL, scale=scale)

    @classmethod
    def from_name(cls, name: str, pad: int = 50, scale: float = 2.0) -> "ContextStrategy":
        name = name.lower()
        if name in ("small", SMALL_FIXED.lower()):
            return cls.small(pad)
        if name in ("large", LARGE_PROPORTIONAL.lower()):
            return cls.large(scale)
        raise ROIError(f"unknown context strategy {name!r} (expected small or large)")

    @property
    def short_name(self) -> str:
        return "small" if self.kind == SMALL_FIXED else "large"

    def expand(self, box: BoundingBox, image_dims) -> BoundingBox:
        if self.kind == SMALL_FIXED:
            return expand_fixed(box, self.pad_pixels, image_dims)
        return expand_proportional(box, self.scale, image_dims)


@dataclass
class ROIPatch:
    pixels: np.ndarray  # (S, S) float32 in [0, 1]
    source_record: str
    strategy: ContextStrategy
    source_box: BoundingBox  # context box before clamping

    @property
    def side(self) -> int:
        return self.pixels.shape[0]


def mask_to_bbox(mask: np.ndarray) -> BoundingBox:
    """Tightest axis-aligned box around the positive pixels of ``mask``."""
    mask = np.asarray(mask)
    rows = np.flatnonzero(mask.any(axis=1))
    if rows.size == 0:
        raise ROIError("empty mask")
    cols = np.flatnonzero(mask.any(axis=0))
    return BoundingBox(int(cols[0]), int(rows[0]), int(cols[-1] - cols[0] + 1), int(rows[-1] - rows[0] + 1))


def clamp(x0: int, y0: int, x1: int, y1: int, image_dims) -> BoundingBox:
    W, H = image_dims
    x0, y0 = max(0, x0), max(0, y0)
    x1, y1 = min(W, x1), min(H, y1)
    return BoundingBox(x0, y0, x1 - x0, y1 - y0)


def _check_inside(box: BoundingBox, image_dims):
    if not box.inside(image_dims):
        raise ROIError(f"{box} lies outside image of size {tuple(image_dims)}")


def expand_fixed(box: BoundingBox, pad: int = 50, image_dims=None) -> BoundingBox:
    """Grow ``box`` by ``pad`` pixels on each side, clamped to the image."""
    _check_inside(box, image_dims)
    return clamp(box.x - pad, box.y - pad, box.x1 + pad, box.y1 + pad, image_dims)


def _round_half_up(v: float) -> int:
    return math.floor(v + 0.5)


def scaled_box(box: BoundingBox, scale: float) -> tuple[int, int, int, int]:
    """Unclamped (x, y, w, h) of ``box`` scaled about its centre."""
    w = max(1, _round_half_up(scale * box.w))
    h = max(1, _round_half_up(scale * box.h))
    # centre-preserving origin, x + (w_old - w_new) / 2 rounded half up
    x = (2 * box.x + box.w - w + 1) // 2
    y = (2 * box.y + box.h - h + 1) // 2
    return x, y, w, h


def expand_proportional(box: BoundingBox, scale: float = 2.0, image_dims=None) -> BoundingBox:
    """Box ``scale`` times the linear size of ``box``, same centre, clamped to the image."""
    if scale < 1:
        raise ROIError("scale must be >= 1")
    _check_inside(box, image_dims)
    x, y, w, h = scaled_box(box, scale)
    return clamp(x, y, x + w, y + h, image_dims)


def resize_bilinear(grid: np.ndarray, out_h: int, out_w: int | None = None) -> np.ndarray:
    """Corner-aligned bilinear resize (output corners sample input corners).

    Downsampled axes are Gaussian-prefiltered first (sigma = (factor - 1) / 2)
    so pixel-level noise does not alias into the patch.
    """
    out_w = out_h if out_w is None else out_w
    grid = np.asarray(grid)
    h, w = grid.shape
    if (h, w) == (out_h, out_w):
        return grid.copy()
    sigma = [max(0.0, (h / out_h - 1) / 2), max(0.0, (w / out_w - 1) / 2)]
    if any(sigma):
        grid = ndimage.gaussian_filter(grid.astype(np.float64), sigma, mode="nearest").astype(grid.dtype)
    ys = np.linspace(0.0, h - 1, out_h) if out_h > 1 else np.array([(h - 1) / 2])
    xs = np.linspace(0.0, w - 1, out_w) if out_w > 1 else np.array([(w - 1) / 2])
    yy, xx = np.meshgrid(ys, xs, indexing="ij")
    return ndimage.map_coordinates(grid, [yy, xx], order=1, mode="nearest").astype(grid.dtype)


def normalize_intensity(image: np.ndarray) -> np.ndarray:
    return (np.asarray(image, dtype=np.float64) / max_intensity(np.asarray(image))).astype(np.float32)


def extract_patch(
    image: np.ndarray,
    box: BoundingBox,
    out_side: int = 224,
    *,
    record_id: str = "",
    strategy: ContextStrategy | None = None,
    source_box: BoundingBox | None = None,
) -> ROIPatch:
    """Crop ``box``, scale intensities to [0, 1] by the format maximum, resize to ``out_side``."""
    if box.w < 1 or box.h < 1:
        raise ROIError(f"degenerate box {box}")
    H, W = image.shape
    _check_inside(box, (W, H))
    crop = normalize_intensity(image[box.y : box.y1, box.x : box.x1])
    pixels = np.clip(resize_bilinear(crop, out_side), 0.0, 1.0).astype(np.float32)
    return ROIPatch(
        pixels=pixels,
        source_record=record_id,
        strategy=strategy or ContextStrategy(),
        source_box=source_box or box,
    )


def record_patch(image: np.ndarray, mask: np.ndarray, strategy: ContextStrategy, out_side: int = 224,
                 record_id: str = "") -> ROIPatch:
    """Full chain for one record: mask box, context expansion, extraction."""
    if image.shape != mask.shape:
        raise ROIError(f"{record_id}: image {image.shape} and mask {mask.shape} differ")
    H, W = image.shape
    tight = mask_to_bbox(mask)
    if strategy.kind == SMALL_FIXED:
        p = strategy.pad_pixels
        raw = BoundingBox(tight.x - p, tight.y - p, tight.w + 2 * p, tight.h + 2 * p)
    else:
        raw = BoundingBox(*scaled_box(tight, strategy.scale))
    box = strategy.expand(tight, (W, H))
    return extract_patch(image, box, out_side, record_id=record_id, strategy=strategy, source_box=raw)
