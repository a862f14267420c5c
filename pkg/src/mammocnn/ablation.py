"""Desk-scale versions of the context and augmentation ablations."""

from __future__ import annotations

import logging
import time
from dataclasses import dataclass, replace

import numpy as np

from .augment import AugmentationSpec, augment_offline
from .dataset import SplitManifest, split_by_patient
from .models import BASELINE, ModelConfig, build_network
from .patches import PatchSet, label_index
from .roi import ContextStrategy, ROIPatch
from .synthetic import DeskCorpus
from .train import TrainConfig, TrainingCurve, accuracy, train

log = logging.getLogger(__name__)

DESK_TRAIN = TrainConfig(max_epochs=20, batch_size=32, seed=0)  # enough iterations for BN running stats to settle
DESK_RATIOS = (0.6, 0.2, 0.2)


@dataclass
class AblationResult:
    strategy: str
    augmented: bool
    curve: TrainingCurve
    train_acc: float  # final epoch, eval mode, un-augmented training patches
    val_acc: float  # final epoch
    best_val_acc: float
    seconds: float

    @property
    def gap(self) -> float:
        return self.train_acc - self.val_acc


def corpus_sets(corpus: DeskCorpus, strategy: str, split: SplitManifest) -> tuple[PatchSet, PatchSet]:
    pix = corpus.patches[strategy]

    def build(ids):
        return PatchSet(ids=list(ids), labels=[label_index(corpus.labels[i]) for i in ids],
                        pixels=np.stack([pix[i] for i in ids]).astype(np.float32))

    return build(split.train), build(split.val)


def augmented(items: PatchSet, strategy: str, spec: AugmentationSpec) -> PatchSet:
    from . import CLASSES
    out = []
    strat = ContextStrategy.from_name(strategy)
    for rid, y, px in zip(items.ids, items.labels, items.pixels):
        patch = ROIPatch(px, rid, strat, source_box=None)
        out.extend(augment_offline(patch, CLASSES[y], spec))
    return PatchSet.from_items(out)


def run_condition(corpus: DeskCorpus, strategy: str, augment: bool, split: SplitManifest,
                  config: TrainConfig = DESK_TRAIN, aug_spec: AugmentationSpec | None = None) -> AblationResult:
    """Train the baseline on one (context, augmentation) cell of the grid."""
    start = time.perf_counter()
    train_items, val_items = corpus_sets(corpus, strategy, split)
    fit_items = augmented(train_items, strategy, aug_spec or AugmentationSpec(seed=config.seed)) \
        if augment else train_items
    side = train_items.side
    model_cfg = ModelConfig(arch=BASELINE, input_side=side)
    net = build_network(model_cfg)
    best, curve, _ = train(net, fit_items, val_items, config, model_config=model_cfg)
    result = AblationResult(
        strategy=strategy,
        augmented=augment,
        curve=curve,
        train_acc=accuracy(net, train_items),
        val_acc=curve.val[-1][1] if curve.val else float("nan"),
        best_val_acc=best.val_accuracy if best.val_accuracy is not None else float("nan"),
        seconds=time.perf_counter() - start,
    )
    log.info("%s context, %s: train %.3f val %.3f (best %.3f) in %.0fs", strategy,
             "aug" if augment else "no aug", result.train_acc, result.val_acc, result.best_val_acc, result.seconds)
    return result


def desk_split(corpus: DeskCorpus, seed: int = 0, ratios=DESK_RATIOS) -> SplitManifest:
    return split_by_patient(corpus.manifest, ratios, seed)


def with_epochs(config: TrainConfig, epochs: int) -> TrainConfig:
    return replace(config, max_epochs=epochs)
