"""Offline rotation x crop augmentation and train-time random mirroring."""

from __future__ import annotations

import hashlib
import math
from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from .roi import BoundingBox, ROIPatch, resize_bilinear


@dataclass(frozen=True)
class AugmentationSpec:
    n_rotations: int = 5
    n_crops_per_rotation: int = 5
    rotation_range_degrees: tuple[float, float] = (0.0, 360.0)
    crop_fraction_range: tuple[float, float] = (0.8, 1.0)
    seed: int = 0

    def __post_init__(self):
        if self.n_rotations < 1 or self.n_crops_per_rotation < 1:
            raise ValueError("need at least one rotation and one crop per rotation")
        lo, hi = self.crop_fraction_range
        if not (0 < lo <= hi <= 1):
            raise ValueError(f"crop fractions must lie in (0, 1], got {self.crop_fraction_range}")
        a, b = self.rotation_range_degrees
        if b < a:
            raise ValueError("rotation range is reversed")

    @property
    def factor(self) -> int:
        return self.n_rotations * self.n_crops_per_rotation

    @classmethod
    def identity(cls) -> "AugmentationSpec":
        return cls(1, 1, (0.0, 0.0), (1.0, 1.0))


@dataclass
class AugmentedItem:
    pixels: np.ndarray
    parent_record: str
    rotation_degrees: float
    crop_box: BoundingBox  # in the rotated frame
    label: str
    rotation_index: int = 0
    crop_index: int = 0

    @property
    def item_id(self) -> str:
        return f"{self.parent_record}__r{self.rotation_index}c{self.crop_index}"


def record_rng(seed: int, record_id: str) -> np.random.Generator:
    """Generator keyed on (seed, record_id) so results do not depend on processing order."""
    digest = hashlib.sha256(record_id.encode("utf-8")).digest()
    return np.random.default_rng([seed, int.from_bytes(digest[:8], "little")])


def rotate(pixels: np.ndarray, degrees: float) -> np.ndarray:
    """Rotate about the patch centre; out-of-frame samples are reflected."""
    if degrees % 360 == 0:
        return pixels.copy()
    if degrees % 90 == 0:
        return np.rot90(pixels, int(degrees // 90) % 4).copy()
    out = ndimage.rotate(pixels, degrees, reshape=False, order=1, mode="reflect")
    return np.clip(out, 0.0, 1.0).astype(pixels.dtype)


def inscribed_side(side: int, degrees: float) -> int:
    """Largest axis-aligned square (pixels) inside a ``side`` square rotated by ``degrees``."""
    t = math.radians(degrees)
    k = abs(math.cos(t)) + abs(math.sin(t))
    return max(1, min(side, math.floor(side / k + 1e-9)))


def _place_crop(side: int, crop: int, degrees: float, rng: np.random.Generator) -> tuple[int, int]:
    """Top-left corner of a ``crop`` square inside both the frame and the rotated source."""
    t = math.radians(degrees)
    c, s = math.cos(t), math.sin(t)
    half = side / 2.0
    # crop centre offset (u, v) is valid iff |u c + v s| <= r and |-u s + v c| <= r
    r = half - crop * (abs(c) + abs(s)) / 2.0
    slack = (side - crop) / 2.0
    u = v = 0.0
    if r > 0:
        for _ in range(64):
            a, b = rng.uniform(-r, r, size=2)
            cand_u, cand_v = a * c - b * s, a * s + b * c
            if abs(cand_u) <= slack and abs(cand_v) <= slack:
                u, v = cand_u, cand_v
                break
    else:
        rng.uniform(size=2)  # keep the draw count independent of geometry
    x = int(np.clip(math.floor(half + u - crop / 2.0 + 0.5), 0, side - crop))
    y = int(np.clip(math.floor(half + v - crop / 2.0 + 0.5), 0, side - crop))
    return x, y


def augment_offline(patch: ROIPatch, label: str, spec: AugmentationSpec) -> list[AugmentedItem]:
    """``spec.n_rotations`` random rotations x ``spec.n_crops_per_rotation`` random crops each.

    Crop sides are fractions of the largest axis-aligned square that fits in
    the rotated patch, and every crop lies inside the rotated source.
    """
    pixels = np.asarray(patch.pixels, dtype=np.float32)
    side = pixels.shape[0]
    if pixels.shape != (side, side):
        raise ValueError(f"patch must be square, got {pixels.shape}")
    rng = record_rng(spec.seed, patch.source_record)
    lo_a, hi_a = spec.rotation_range_degrees
    lo_f, hi_f = spec.crop_fraction_range

    items = []
    for i in range(spec.n_rotations):
        angle = float(rng.uniform(lo_a, hi_a)) if hi_a > lo_a else float(lo_a)
        rotated = rotate(pixels, angle)
        fit = inscribed_side(side, angle)
        for j in range(spec.n_crops_per_rotation):
            frac = float(rng.uniform(lo_f, hi_f)) if hi_f > lo_f else float(lo_f)
            # fraction of the largest square inside the rotated patch, so crops
            # at one angle stay distinct instead of collapsing onto that square
            crop = max(1, min(fit, math.floor(frac * fit + 0.5)))
            x, y = _place_crop(side, crop, angle, rng)
            region = rotated[y : y + crop, x : x + crop]
            out = resize_bilinear(region, side) if crop != side else region.copy()
            items.append(AugmentedItem(
                pixels=out.astype(np.float32),
                parent_record=patch.source_record,
                rotation_degrees=angle,
                crop_box=BoundingBox(x, y, crop, crop),
                label=label,
                rotation_index=i,
                crop_index=j,
            ))
    return items


def mirror_random(patch: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    """Horizontal mirror with probability 0.5; consumes exactly one draw."""
    if rng.random() < 0.5:
        return patch[..., ::-1].copy()
    return patch
