"""Patch directories on disk and the in-memory ``PatchSet`` used for training."""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from . import CLASSES
from .augment import AugmentedItem
from .imageio import load_patch, save_patch
from .roi import ROIPatch

PATCH_MANIFEST = "patches.csv"
PATCH_HEADER = ["record_id", "patch_path", "strategy", "box_x", "box_y", "box_w", "box_h"]
AUGMENTED_MANIFEST = "augmented.csv"
AUGMENTED_HEADER = ["item_id", "parent_record", "rotation_deg", "crop_x", "crop_y", "crop_side", "label"]


def label_index(label: str) -> int:
    return CLASSES.index(label)


@dataclass
class PatchSet:
    """Labelled patches, held in memory or loaded from files batch by batch.

    ``parents`` maps each item to the record it came from, so augmented items
    from one record can be traced back (they share the record's label).
    """

    ids: list[str]
    labels: np.ndarray  # int64, 1 = MALIGNANT
    pixels: np.ndarray | None = None  # (N, S, S) float32
    paths: list[str] | None = None
    parents: list[str] | None = None

    def __post_init__(self):
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if (self.pixels is None) == (self.paths is None):
            raise ValueError("PatchSet needs exactly one of pixels or paths")
        n = len(self.pixels) if self.pixels is not None else len(self.paths)
        if not (len(self.ids) == len(self.labels) == n):
            raise ValueError("ids, labels and patches differ in length")
        if self.parents is None:
            self.parents = list(self.ids)

    def __len__(self) -> int:
        return len(self.ids)

    def load(self, idx: Sequence[int]) -> np.ndarray:
        if self.pixels is not None:
            return np.asarray(self.pixels[np.asarray(idx, dtype=np.int64)], dtype=np.float32)
        return np.stack([load_patch(self.paths[i]) for i in idx]).astype(np.float32)

    @property
    def side(self) -> int:
        return int(self.load([0]).shape[-1])

    def subset(self, idx: Sequence[int]) -> "PatchSet":
        idx = list(idx)
        return PatchSet(
            ids=[self.ids[i] for i in idx],
            labels=self.labels[idx],
            pixels=None if self.pixels is None else self.pixels[idx],
            paths=None if self.paths is None else [self.paths[i] for i in idx],
            parents=[self.parents[i] for i in idx],
        )

    def materialize(self) -> "PatchSet":
        if self.pixels is not None:
            return self
        return PatchSet(list(self.ids), self.labels.copy(), pixels=self.load(range(len(self))),
                        parents=list(self.parents))

    @classmethod
    def from_patches(cls, patches: Iterable[ROIPatch], labels: dict[str, str]) -> "PatchSet":
        patches = list(patches)
        return cls(
            ids=[p.source_record for p in patches],
            labels=[label_index(labels[p.source_record]) for p in patches],
            pixels=np.stack([p.pixels for p in patches]).astype(np.float32),
        )

    @classmethod
    def from_items(cls, items: Iterable[AugmentedItem]) -> "PatchSet":
        items = list(items)
        return cls(
            ids=[it.item_id for it in items],
            labels=[label_index(it.label) for it in items],
            pixels=np.stack([it.pixels for it in items]).astype(np.float32),
            parents=[it.parent_record for it in items],
        )


def write_patch_dir(patches: Iterable[ROIPatch], out_dir) -> Path:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    with open(out / PATCH_MANIFEST, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(PATCH_HEADER)
        for p in patches:
            name = f"{p.source_record}.png"
            save_patch(out / name, p.pixels)
            b = p.source_box
            w.writerow([p.source_record, name, p.strategy.short_name, b.x, b.y, b.w, b.h])
    return out / PATCH_MANIFEST


def read_patch_dir(patch_dir) -> dict[str, Path]:
    """record_id -> patch file for a directory written by :func:`write_patch_dir`."""
    root = Path(patch_dir)
    with open(root / PATCH_MANIFEST, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames != PATCH_HEADER:
            raise ValueError(f"{root / PATCH_MANIFEST}: bad header {reader.fieldnames}")
        return {row["record_id"]: root / row["patch_path"] for row in reader}


def load_roi_patches(patch_dir) -> dict[str, np.ndarray]:
    return {rid: load_patch(path) for rid, path in read_patch_dir(patch_dir).items()}


def patch_set(patch_dir, ids: Sequence[str], labels: dict[str, str], in_memory: bool = True) -> PatchSet:
    files = read_patch_dir(patch_dir)
    missing = [rid for rid in ids if rid not in files]
    if missing:
        raise FileNotFoundError(f"no patch for records {missing[:5]}{'...' if len(missing) > 5 else ''}")
    ps = PatchSet(
        ids=list(ids),
        labels=[label_index(labels[rid]) for rid in ids],
        paths=[str(files[rid]) for rid in ids],
    )
    return ps.materialize() if in_memory else ps


def write_augmented_dir(items: Iterable[AugmentedItem], out_dir, header: bool = True) -> Path:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    mode = "w" if header else "a"
    with open(out / AUGMENTED_MANIFEST, mode, newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        if header:
            w.writerow(AUGMENTED_HEADER)
        for it in items:
            save_patch(out / f"{it.item_id}.png", it.pixels)
            b = it.crop_box
            w.writerow([it.item_id, it.parent_record, repr(it.rotation_degrees), b.x, b.y, b.w, it.label])
    return out / AUGMENTED_MANIFEST


def augmented_set(aug_dir, parents: Sequence[str] | None = None, in_memory: bool = True) -> PatchSet:
    """Augmented items, optionally restricted to the given parent records."""
    root = Path(aug_dir)
    keep = None if parents is None else set(parents)
    ids, labels, paths, par = [], [], [], []
    with open(root / AUGMENTED_MANIFEST, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames != AUGMENTED_HEADER:
            raise ValueError(f"{root / AUGMENTED_MANIFEST}: bad header {reader.fieldnames}")
        for row in reader:
            if keep is not None and row["parent_record"] not in keep:
                continue
            ids.append(row["item_id"])
            labels.append(label_index(row["label"]))
            paths.append(str(root / f"{row['item_id']}.png"))
            par.append(row["parent_record"])
    if not ids:
        raise ValueError(f"{root}: no augmented items for the requested records")
    ps = PatchSet(ids=ids, labels=labels, paths=paths, parents=par)
    return ps.materialize() if in_memory else ps
