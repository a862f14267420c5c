"""Corpus scanning, manifests and patient-disjoint balanced splits."""

from __future__ import annotations

import csv
import logging
import math
import re
from collections import defaultdict
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np
from PIL import Image

from . import BENIGN, CLASSES, MALIGNANT
from .imageio import RASTER_SUFFIXES, read_raster

log = logging.getLogger(__name__)

VIEWS = ("MLO", "CC")
LATERALITIES = ("LEFT", "RIGHT")
SPLITS = ("train", "val", "test")
MANIFEST_HEADER = ["record_id", "patient_id", "view", "laterality", "label", "image_path", "mask_path"]

_LABEL_ALIASES = {
    "BENIGN": BENIGN,
    "BENIGN_WITHOUT_CALLBACK": BENIGN,
    "MALIGNANT": MALIGNANT,
}
_LATERALITY_ALIASES = {"L": "LEFT", "LEFT": "LEFT", "R": "RIGHT", "RIGHT": "RIGHT"}


class DatasetError(ValueError):
    pass


def normalize_label(raw: str) -> str:
    try:
        return _LABEL_ALIASES[raw.strip().upper()]
    except KeyError:
        raise DatasetError(f"unknown pathology label {raw!r}") from None


@dataclass(frozen=True)
class MassRecord:
    record_id: str
    patient_id: str
    image_path: str
    mask_path: str
    view: str
    laterality: str
    label: str

    def __post_init__(self):
        if self.view not in VIEWS:
            raise DatasetError(f"{self.record_id}: view must be one of {VIEWS}, got {self.view!r}")
        if self.laterality not in LATERALITIES:
            raise DatasetError(f"{self.record_id}: bad laterality {self.laterality!r}")
        if self.label not in CLASSES:
            raise DatasetError(f"{self.record_id}: label must be one of {CLASSES}, got {self.label!r}")


@dataclass
class DatasetManifest:
    records: list[MassRecord]
    source_root: str = ""

    def __post_init__(self):
        ids = [r.record_id for r in self.records]
        if len(set(ids)) != len(ids):
            raise DatasetError("duplicate record_id in manifest")

    def __len__(self):
        return len(self.records)

    def by_id(self) -> dict[str, MassRecord]:
        return {r.record_id: r for r in self.records}

    def patients(self) -> list[str]:
        return sorted({r.patient_id for r in self.records})


@dataclass(frozen=True)
class LayoutSpec:
    """Filename convention for a corpus directory.

    ``image_pattern`` must define the groups ``patient``, ``laterality`` and
    ``view``. ``mask_pattern`` must define the same groups plus ``label`` and
    may define ``mass`` (an index distinguishing several masses on one image).
    Patterns are matched against the file name only, not the directory.
    """

    image_pattern: str
    mask_pattern: str

    def __post_init__(self):
        img, msk = re.compile(self.image_pattern), re.compile(self.mask_pattern)
        for g in ("patient", "laterality", "view"):
            if g not in img.groupindex or g not in msk.groupindex:
                raise DatasetError(f"layout patterns must both define group {g!r}")
        if "label" not in msk.groupindex:
            raise DatasetError("mask pattern must define group 'label'")


_EXT = r"\.(?:png|pgm|tiff?)"
_COMMON = r"(?P<patient>[A-Za-z0-9-]+)_(?P<laterality>LEFT|RIGHT|L|R)_(?P<view>CC|MLO)"

DDSM_LAYOUT = LayoutSpec(
    image_pattern=rf"^{_COMMON}{_EXT}$",
    mask_pattern=rf"^{_COMMON}_MASK_(?P<mass>\d+)_(?P<label>BENIGN_WITHOUT_CALLBACK|BENIGN|MALIGNANT){_EXT}$",
)
LAYOUTS = {"ddsm": DDSM_LAYOUT}


def load_layout(spec: str) -> LayoutSpec:
    """Resolve a layout preset name or a ``key = value`` file with both patterns."""
    if spec in LAYOUTS:
        return LAYOUTS[spec]
    path = Path(spec)
    if not path.is_file():
        raise DatasetError(f"unknown layout {spec!r}: not a preset ({', '.join(LAYOUTS)}) or a file")
    values = {}
    for line in path.read_text(encoding="utf-8").splitlines():
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        key, sep, value = line.partition("=")
        if not sep:
            raise DatasetError(f"{path}: expected 'key = value', got {line!r}")
        values[key.strip()] = value.strip()
    unknown = set(values) - {"image_pattern", "mask_pattern"}
    if unknown:
        raise DatasetError(f"{path}: unknown layout keys {sorted(unknown)}")
    return LayoutSpec(**values)


def _image_size(path: Path) -> tuple[int, int]:
    with Image.open(path) as img:
        return img.size


def _validate(candidate):
    """Return the record or None; logs why a record was dropped."""
    record, image_path, mask_path = candidate
    try:
        w, h = _image_size(image_path)
        mask = read_raster(mask_path)
    except (OSError, ValueError) as exc:
        log.warning("skipping %s: unreadable file (%s)", record.record_id, exc)
        return None
    if mask.shape != (h, w):
        log.error("rejecting %s: mask %s does not match image %s", record.record_id, mask.shape[::-1], (w, h))
        return None
    if not mask.any():
        log.error("rejecting %s: mask has no positive pixels", record.record_id)
        return None
    return record


def scan_dataset(root, layout: LayoutSpec = DDSM_LAYOUT, workers: int = 4) -> DatasetManifest:
    """Build a manifest of every mass whose image and mask both resolve under ``root``."""
    root = Path(root)
    if not root.is_dir():
        raise DatasetError(f"dataset root {root} does not exist")
    img_re, mask_re = re.compile(layout.image_pattern), re.compile(layout.mask_pattern)

    images: dict[tuple, Path] = {}
    masks: list[tuple[dict, Path]] = []
    for path in sorted(root.rglob("*")):
        if not path.is_file() or path.suffix.lower() not in RASTER_SUFFIXES:
            continue
        if m := mask_re.match(path.name):
            masks.append((m.groupdict(), path))
        elif m := img_re.match(path.name):
            g = m.groupdict()
            key = (g["patient"], _LATERALITY_ALIASES[g["laterality"].upper()], g["view"].upper())
            images[key] = path

    candidates = []
    for g, mask_path in masks:
        key = (g["patient"], _LATERALITY_ALIASES[g["laterality"].upper()], g["view"].upper())
        image_path = images.get(key)
        if image_path is None:
            log.warning("skipping mask %s: no matching image", mask_path.name)
            continue
        mass = g.get("mass") or "1"
        record = MassRecord(
            record_id=f"{key[0]}_{key[1]}_{key[2]}_{mass}",
            patient_id=key[0],
            image_path=str(image_path),
            mask_path=str(mask_path),
            view=key[2],
            laterality=key[1],
            label=normalize_label(g["label"]),
        )
        candidates.append((record, image_path, mask_path))

    with ThreadPoolExecutor(max_workers=workers) as pool:
        checked = list(pool.map(_validate, candidates))
    records = sorted((r for r in checked if r is not None), key=lambda r: r.record_id)
    if not records:
        raise DatasetError(f"no valid mass records found under {root}")
    return DatasetManifest(records=records, source_root=str(root))


def write_manifest(manifest: DatasetManifest, path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(MANIFEST_HEADER)
        for r in manifest.records:
            w.writerow([r.record_id, r.patient_id, r.view, r.laterality, r.label, r.image_path, r.mask_path])


def read_manifest(path) -> DatasetManifest:
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames != MANIFEST_HEADER:
            raise DatasetError(f"{path}: bad manifest header {reader.fieldnames}")
        records = [MassRecord(**row) for row in reader]
    return DatasetManifest(records=records, source_root=str(Path(path).resolve().parent))


@dataclass
class SplitManifest:
    train: list[str]
    val: list[str]
    test: list[str]
    ratios: tuple[float, float, float]
    seed: int

    def assignment(self) -> dict[str, str]:
        out = {}
        for name in SPLITS:
            for rid in getattr(self, name):
                out[rid] = name
        return out


def _reach_table(counts: Sequence[tuple[int, int]], quota: int):
    """Bitset DP over (benign, malignant) totals reachable by patient subsets.

    State ``(b, m)`` lives at bit ``b * width + m``. ``table[i]`` holds the
    states reachable with the first ``i`` patients, both totals capped at
    ``quota``.
    """
    width = quota + 1 + max((m for _, m in counts), default=0)
    row = (1 << (quota + 1)) - 1
    valid = 0
    for b in range(quota + 1):
        valid |= row << (b * width)
    table = [1]
    for b, m in counts:
        prev = table[-1]
        table.append(prev | ((prev << (b * width + m)) & valid))
    return table, width


def _balanced_choices(counts, quota, cap=None):
    """Yield (per_class_count, chosen indices), largest balanced subset up to ``quota`` first.

    With ``cap`` above ``quota``, oversized balanced subsets follow, smallest
    first. Among subsets achieving a given balance, the one drawing on the
    earliest patients in ``counts`` order is chosen.
    """
    cap = max(quota, cap or quota)
    table, width = _reach_table(counts, cap)
    final = table[-1]
    for s in [*range(quota, 0, -1), *range(quota + 1, cap + 1)]:
        state = s * width + s
        if not (final >> state) & 1:
            continue
        chosen = []
        for i in range(len(counts) - 1, -1, -1):
            if (table[i] >> state) & 1:
                continue
            chosen.append(i)
            state -= counts[i][0] * width + counts[i][1]
        yield s, sorted(chosen)


def _per_class_quota(ratio: float, n_records: int) -> int:
    return max(1, math.floor(ratio * n_records + 1e-9) // 2)


def split_by_patient(manifest: DatasetManifest, ratios=(0.8, 0.1, 0.1), seed: int = 0) -> SplitManifest:
    """Patient-disjoint train/val/test split with exactly balanced val and test.

    Patients are shuffled with ``seed``. Test is filled first, then val: each
    takes the largest set of patients whose benign and malignant record counts
    are equal and at most ``floor(ratio * N) / 2``, preferring patients early
    in the shuffled order. Everything left over goes to train. If no such
    split exists, balanced sets larger than the quota are tried, smallest first.
    """
    ratios = tuple(float(r) for r in ratios)
    if len(ratios) != 3 or any(r <= 0 for r in ratios) or abs(sum(ratios) - 1.0) > 1e-9:
        raise DatasetError(f"ratios must be three positive fractions summing to 1, got {ratios}")
    patients = manifest.patients()
    if len(patients) < 3:
        raise DatasetError(f"need at least 3 patients for three splits, got {len(patients)}")

    per_patient: dict[str, list[MassRecord]] = defaultdict(list)
    for r in manifest.records:
        per_patient[r.patient_id].append(r)
    rng = np.random.default_rng(seed)
    order = [patients[i] for i in rng.permutation(len(patients))]

    def counts_of(pids):
        return [
            (sum(r.label == BENIGN for r in per_patient[p]), sum(r.label == MALIGNANT for r in per_patient[p]))
            for p in pids
        ]

    def deficiency(pids, name):
        c = counts_of(pids)
        nb, nm = sum(b for b, _ in c), sum(m for _, m in c)
        short = BENIGN if nb < nm else MALIGNANT if nm < nb else f"{BENIGN}/{MALIGNANT}"
        return DatasetError(
            f"cannot balance {name} split: too few {short} records among remaining patients "
            f"({nb} benign, {nm} malignant)"
        )

    n = len(manifest)
    test_quota, val_quota = _per_class_quota(ratios[2], n), _per_class_quota(ratios[1], n)

    def search(cap_test, cap_val):
        for _, test_idx in _balanced_choices(counts_of(order), test_quota, cap_test):
            taken = set(test_idx)
            rest = [p for i, p in enumerate(order) if i not in taken]
            for _, val_idx in _balanced_choices(counts_of(rest), val_quota, cap_val):
                if len(val_idx) < len(rest):  # train must keep at least one patient
                    return [order[i] for i in test_idx], [rest[i] for i in val_idx]
        return None

    # tiny corpora may only balance with more records than the quota allows
    picked = search(test_quota, val_quota) or search(n // 2, n // 2)
    if picked is None:
        if not any(True for _ in _balanced_choices(counts_of(order), test_quota, n // 2)):
            raise deficiency(order, "test")
        raise deficiency(order, "val")

    test_p, val_p = set(picked[0]), set(picked[1])

    def ids(pset):
        return sorted(r.record_id for p in pset for r in per_patient[p])

    train_p = set(patients) - test_p - val_p
    return SplitManifest(train=ids(train_p), val=ids(val_p), test=ids(test_p), ratios=ratios, seed=seed)


def write_split(split: SplitManifest, path) -> None:
    """CSV of ``record_id,split`` plus a one-line ``<path>.meta`` sidecar."""
    rows = sorted(split.assignment().items())
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["record_id", "split"])
        w.writerows(rows)
    ratios = ",".join(repr(r) for r in split.ratios)
    Path(f"{path}.meta").write_text(f"ratios={ratios} seed={split.seed}\n", encoding="utf-8")


def read_split(path) -> SplitManifest:
    lists = {name: [] for name in SPLITS}
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames != ["record_id", "split"]:
            raise DatasetError(f"{path}: bad split header {reader.fieldnames}")
        for row in reader:
            if row["split"] not in lists:
                raise DatasetError(f"{path}: unknown split {row['split']!r}")
            lists[row["split"]].append(row["record_id"])
    ratios, seed = (math.nan,) * 3, -1
    meta = Path(f"{path}.meta")
    if meta.is_file():
        fields = dict(tok.split("=", 1) for tok in meta.read_text(encoding="utf-8").split())
        ratios = tuple(float(x) for x in fields["ratios"].split(","))
        seed = int(fields["seed"])
    return SplitManifest(**{k: sorted(v) for k, v in lists.items()}, ratios=ratios, seed=seed)
