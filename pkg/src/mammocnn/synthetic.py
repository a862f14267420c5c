"""Synthetic mass mammograms for tests, demos and the desk-scale ablations.

Each image holds one mass core on smooth tissue-like texture. Both classes
draw the core from the same distribution; malignant masses additionally carry
radial spicules whose contrast ramps up with distance from the core, so most
of the class signal lies well outside the tight mask box. With cores of
200-280 px, a 50 px fixed margin sees little of it while a 2x proportional
box sees all of it.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy import ndimage

from . import BENIGN, MALIGNANT
from .dataset import DatasetManifest, MassRecord
from .imageio import write_raster
from .roi import ContextStrategy, record_patch


@dataclass(frozen=True)
class SynthParams:
    size: int = 720
    radius_range: tuple[float, float] = (100.0, 140.0)
    center_jitter: float = 20.0
    texture_sigma: float = 16.0
    texture_amplitude: float = 0.05
    noise_amplitude: float = 0.02
    core_contrast: float = 0.22
    n_spicules: tuple[int, int] = (2, 6)
    spicule_width: float = 16.0
    spicule_contrast: tuple[float, float] = (0.08, 0.18)
    spicule_start: float = 40.0  # px beyond the core edge where contrast starts ramping
    spicule_ramp: float = 15.0
    spicule_reach: float = 0.95  # outer end, as a fraction of the core radius beyond the edge
    n_distractors: tuple[int, int] = (0, 4)  # straight non-radial streaks, both classes
    bit_depth: int = 16


def _texture(rng, size, sigma):
    low = rng.standard_normal((size // 4, size // 4))
    low = ndimage.gaussian_filter(low, sigma / 4)
    tex = ndimage.zoom(low, size / low.shape[0], order=1)[:size, :size]
    return tex / (tex.std() + 1e-12)


def synth_mammogram(rng: np.random.Generator, label: str, p: SynthParams = SynthParams()):
    """(image, mask) with the image as uint8/uint16 and the mask as uint8 {0, 255}."""
    n = p.size
    yy, xx = np.mgrid[0:n, 0:n].astype(np.float64)
    cx = n / 2 + rng.uniform(-p.center_jitter, p.center_jitter)
    cy = n / 2 + rng.uniform(-p.center_jitter, p.center_jitter)
    R = rng.uniform(*p.radius_range)
    dx, dy = xx - cx, yy - cy
    dist = np.hypot(dx, dy)
    theta = np.arctan2(dy, dx)

    img = 0.35 + 0.1 * (yy / n) + p.texture_amplitude * _texture(rng, n, p.texture_sigma)

    # lobulated core with a soft edge, identical distribution for both classes
    k = rng.integers(2, 6)
    lob = 1.0 + 0.08 * np.sin(k * theta + rng.uniform(0, 2 * np.pi))
    edge = R * lob
    img += p.core_contrast / (1.0 + np.exp((dist - edge) / 3.0))
    mask = dist <= edge

    if label == MALIGNANT:
        lo, hi = p.n_spicules
        for _ in range(rng.integers(lo, hi + 1)):
            phi = rng.uniform(0, 2 * np.pi)
            ux, uy = np.cos(phi), np.sin(phi)
            along = dx * ux + dy * uy
            across = np.abs(-dx * uy + dy * ux)
            beyond = along - R
            reach = p.spicule_reach * R
            ramp = np.clip((beyond - p.spicule_start) / p.spicule_ramp, 0.0, 1.0)
            taper = np.clip((reach - beyond) / 10.0, 0.0, 1.0)
            width = p.spicule_width * (1.0 - 0.5 * np.clip(beyond / reach, 0, 1))
            profile = np.exp(-0.5 * (across / np.maximum(width, 1.0) * 2.0) ** 2)
            img += rng.uniform(*p.spicule_contrast) * ramp * taper * profile * (beyond > 0)

    lo, hi = p.n_distractors
    for _ in range(rng.integers(lo, hi + 1)):
        # a streak crossing the surround at a random offset, not pointing at the core
        phi = rng.uniform(0, 2 * np.pi)
        ux, uy = np.cos(phi), np.sin(phi)
        offset = rng.uniform(1.4, 1.9) * R * rng.choice([-1.0, 1.0])
        across = np.abs(-dx * uy + dy * ux - offset)
        along = dx * ux + dy * uy - rng.uniform(-0.5, 0.5) * R
        half_len = rng.uniform(0.3, 0.6) * R
        taper = np.clip((half_len - np.abs(along)) / 10.0, 0.0, 1.0)
        profile = np.exp(-0.5 * (across / (p.spicule_width / 2.0)) ** 2)
        img += rng.uniform(*p.spicule_contrast) * taper * profile

    img += p.noise_amplitude * rng.standard_normal((n, n))
    img = np.clip(img, 0.0, 1.0)
    top = 65535 if p.bit_depth == 16 else 255
    image = np.rint(img * top).astype(np.uint16 if p.bit_depth == 16 else np.uint8)
    return image, (mask * 255).astype(np.uint8)


def write_synthetic_corpus(root, n_patients: int = 12, seed: int = 0, params: SynthParams | None = None,
                           max_masses: int = 2) -> Path:
    """Write images and masks under ``root`` using the DDSM layout.

    Each patient gets 1..``max_masses`` masses on distinct views. Patient
    labels alternate so both classes are always present.
    """
    params = params or SynthParams(size=320, radius_range=(40.0, 60.0), center_jitter=10.0,
                                   spicule_start=10.0, spicule_ramp=15.0, bit_depth=8)
    root = Path(root)
    rng = np.random.default_rng(seed)
    views = [("LEFT", "CC"), ("LEFT", "MLO"), ("RIGHT", "CC"), ("RIGHT", "MLO")]
    for i in range(n_patients):
        pid = f"P{i:04d}"
        for j in range(int(rng.integers(1, max_masses + 1))):
            lat, view = views[j % len(views)]
            label = MALIGNANT if (i + j) % 2 else BENIGN
            image, mask = synth_mammogram(rng, label, params)
            write_raster(root / pid / f"{pid}_{lat}_{view}.png", image)
            write_raster(root / pid / f"{pid}_{lat}_{view}_MASK_1_{label}.png", mask)
    return root


@dataclass
class DeskCorpus:
    """Patches of one synthetic corpus under several context strategies."""

    manifest: DatasetManifest  # in-memory records; file paths are placeholders
    labels: dict[str, str]
    patches: dict[str, dict[str, np.ndarray]]  # strategy short name -> record_id -> pixels


def desk_corpus(n: int = 500, seed: int = 0, side: int = 48, strategies=("small", "large"),
                params: SynthParams = SynthParams()) -> DeskCorpus:
    """``n`` single-mass patients with balanced labels, rendered once and cut per strategy."""
    rng = np.random.default_rng(seed)
    labels_seq = np.array([BENIGN, MALIGNANT] * (n // 2) + [BENIGN] * (n % 2))
    rng.shuffle(labels_seq)
    strat_objs = {s: ContextStrategy.from_name(s) for s in strategies}
    records, labels = [], {}
    patches = {s: {} for s in strategies}
    for i, label in enumerate(labels_seq):
        rid = f"D{i:04d}_LEFT_CC_1"
        image, mask = synth_mammogram(rng, str(label), params)
        for s, strat in strat_objs.items():
            patches[s][rid] = record_patch(image, mask, strat, side, rid).pixels
        records.append(MassRecord(rid, f"D{i:04d}", "<memory>", "<memory>", "CC", "LEFT", str(label)))
        labels[rid] = str(label)
    return DeskCorpus(DatasetManifest(records), labels, patches)
