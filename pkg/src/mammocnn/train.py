"""Optimisation loop, per-architecture presets and checkpoints."""

from __future__ import annotations

import copy
import csv
import hashlib
import json
import logging
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F

from .augment import mirror_random
from .models import (
    ALEXNET, BASELINE, GOOGLENET, XAVIER_SCRATCH, LRMultiplierScheme, MassNet, ModelConfig,
    build_network, multiplier_scheme, param_groups,
)
from .patches import PatchSet

log = logging.getLogger(__name__)

ADAM, VANILLA_SGD = "ADAM", "VANILLA_SGD"
ADAM_BETAS = (0.9, 0.999)
ADAM_EPS = 1e-8
EVAL_BATCH = 64


class TrainingDiverged(RuntimeError):
    pass


@dataclass(frozen=True)
class TrainConfig:
    optimizer: str = ADAM
    base_lr: float = 1e-3
    batch_size: int = 64
    dropout_rate: float = 0.0
    max_epochs: int = 35
    seed: int = 0
    mirror_at_train: bool = True
    multiplier_scheme: LRMultiplierScheme = field(default_factory=LRMultiplierScheme.uniform)

    def __post_init__(self):
        if self.optimizer not in (ADAM, VANILLA_SGD):
            raise ValueError(f"unknown optimizer {self.optimizer!r}")
        if not self.base_lr > 0:
            raise ValueError("base_lr must be > 0")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.max_epochs < 0:
            raise ValueError("max_epochs must be >= 0")
        if not 0 <= self.dropout_rate < 1:
            raise ValueError("dropout_rate must be in [0, 1)")


PRESETS = {
    "baseline": (BASELINE, TrainConfig(ADAM, 1e-3, 64, 0.0, 35)),
    "alexnet_ft": (ALEXNET, TrainConfig(ADAM, 1e-3, 64, 0.5, 30, multiplier_scheme=multiplier_scheme(ALEXNET))),
    "googlenet_ft": (GOOGLENET, TrainConfig(VANILLA_SGD, 1e-2, 64, 0.2, 30,
                                            multiplier_scheme=multiplier_scheme(GOOGLENET))),
}


def preset(name: str) -> TrainConfig:
    try:
        return PRESETS[name][1]
    except KeyError:
        raise ValueError(f"unknown preset {name!r}; choose from {', '.join(PRESETS)}") from None


def preset_arch(name: str) -> str:
    preset(name)
    return PRESETS[name][0]


@dataclass(frozen=True)
class IterationRecord:
    iteration: int
    epoch: int
    train_loss: float
    train_acc: float


@dataclass
class TrainingCurve:
    iterations: list[IterationRecord] = field(default_factory=list)
    val: list[tuple[int, float]] = field(default_factory=list)  # (epoch, val_acc)
    effective_lr: dict[str, float] = field(default_factory=dict)

    def __len__(self):
        return len(self.iterations)

    def epoch_mean(self, epoch: int, attr: str = "train_acc") -> float:
        vals = [getattr(r, attr) for r in self.iterations if r.epoch == epoch]
        return float(np.mean(vals)) if vals else float("nan")

    def write(self, run_dir) -> None:
        run_dir = Path(run_dir)
        with open(run_dir / "curve.csv", "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["iter", "epoch", "train_loss", "train_acc"])
            for r in self.iterations:
                w.writerow([r.iteration, r.epoch, repr(r.train_loss), repr(r.train_acc)])
        with open(run_dir / "val.csv", "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["epoch", "val_acc"])
            for epoch, acc in self.val:
                w.writerow([epoch, repr(acc)])


@dataclass
class Checkpoint:
    weights: dict
    optimizer_state: dict | None
    config_fingerprint: str
    epoch: int
    val_accuracy: float | None
    model_config: dict

    def save(self, path) -> None:
        Path(path).parent.mkdir(parents=True, exist_ok=True)
        torch.save(asdict(self), path)

    @classmethod
    def load(cls, path) -> "Checkpoint":
        return cls(**torch.load(path, map_location="cpu", weights_only=False))

    def network(self) -> MassNet:
        """Rebuild the network and load the stored weights, in eval mode."""
        cfg = dict(self.model_config)
        cfg.update(init=XAVIER_SCRATCH, pretrained_path=None)  # weights come from the checkpoint
        net = build_network(ModelConfig(**cfg))
        net.load_state_dict(self.weights)
        return net.eval()


def config_fingerprint(*configs) -> str:
    def plain(c):
        d = asdict(c) if hasattr(c, "__dataclass_fields__") else dict(c)
        return {k: (v.to_text() if isinstance(v, LRMultiplierScheme) else v) for k, v in d.items()}
    blob = json.dumps([plain(c) for c in configs], sort_keys=True, default=str)
    return hashlib.sha256(blob.encode("utf-8")).hexdigest()


def _has_batchnorm(net: nn.Module) -> bool:
    return any(isinstance(m, nn.modules.batchnorm._BatchNorm) for m in net.modules())


def set_dropout(net: nn.Module, rate: float) -> int:
    n = 0
    for m in net.modules():
        if isinstance(m, nn.Dropout):
            m.p = rate
            n += 1
    return n


def training_mean(items: PatchSet, limit: int = 4096) -> float:
    idx = np.linspace(0, len(items) - 1, min(len(items), limit)).round().astype(int)
    return float(items.load(np.unique(idx)).astype(np.float64).mean())


def accuracy(net: MassNet, items: PatchSet, batch_size: int = EVAL_BATCH) -> float:
    from .evaluation import predict_indices
    pred, _ = predict_indices(net, items, batch_size)
    return float(np.mean(pred == items.labels))


def make_optimizer(net: MassNet, config: TrainConfig):
    groups = param_groups(net, config.base_lr, config.multiplier_scheme)
    if config.optimizer == ADAM:
        opt = torch.optim.Adam(groups, lr=config.base_lr, betas=ADAM_BETAS, eps=ADAM_EPS)
    else:
        opt = torch.optim.SGD(groups, lr=config.base_lr, momentum=0.0, weight_decay=0.0)
    return opt


def _to_batch(x: np.ndarray) -> torch.Tensor:
    return torch.from_numpy(np.ascontiguousarray(x, dtype=np.float32)).unsqueeze(1)


def train(
    net: MassNet,
    train_items: PatchSet,
    val_items: PatchSet | None,
    config: TrainConfig,
    *,
    fingerprint: str = "",
    model_config: ModelConfig | None = None,
    stop: Callable[[IterationRecord], bool] | None = None,
) -> tuple[Checkpoint, TrainingCurve, Checkpoint]:
    """Train ``net`` in place; returns (best checkpoint, curve, last checkpoint).

    The best checkpoint has the highest validation accuracy, earliest epoch on
    ties. Without validation items the last epoch is returned as best.
    ``stop`` is called after every iteration and ends training when it returns
    True (the partial epoch still gets its validation pass).
    """
    if len(train_items) == 0:
        raise ValueError("no training items")
    side = train_items.side
    if side != net.input_side:
        raise ValueError(f"patch side {side} does not match network input {net.input_side}")
    model_config = model_config or ModelConfig(arch=net.arch, input_side=net.input_side)
    fingerprint = fingerprint or config_fingerprint(config, model_config)
    have_val = val_items is not None and len(val_items) > 0

    torch.manual_seed(config.seed)
    order_rng = np.random.default_rng([config.seed, 0])
    mirror_rng = np.random.default_rng([config.seed, 1])

    if set_dropout(net, config.dropout_rate) == 0 and config.dropout_rate > 0:
        log.warning("%s has no dropout layers; dropout_rate %.2f ignored", net.arch, config.dropout_rate)
    if not net.init_report["loaded"]:
        mean = training_mean(train_items)
        net.set_input_stats(mean)
        log.info("input mean subtraction from training set: %.6f", mean)

    optimizer = make_optimizer(net, config)
    curve = TrainingCurve(effective_lr={g["name"]: g["lr"] for g in optimizer.param_groups})
    for g in optimizer.param_groups:
        log.info("lr group=%s multiplier=%r effective_lr=%r", g["name"], g["multiplier"], g["lr"])

    def snapshot(epoch, val_acc):
        return Checkpoint(
            weights=copy.deepcopy(net.state_dict()),
            optimizer_state=copy.deepcopy(optimizer.state_dict()),
            config_fingerprint=fingerprint,
            epoch=epoch,
            val_accuracy=val_acc,
            model_config=asdict(model_config),
        )

    init_val = accuracy(net, val_items) if have_val and config.max_epochs == 0 else None
    best = snapshot(0, init_val)
    last = best
    best_acc = -1.0
    uses_bn = _has_batchnorm(net)
    iteration = 0
    stopped = False

    for epoch in range(1, config.max_epochs + 1):
        net.train()
        perm = order_rng.permutation(len(train_items))
        for start in range(0, len(perm), config.batch_size):
            idx = perm[start : start + config.batch_size]
            if uses_bn and len(idx) < 2:
                log.info("epoch %d: skipping batch of size %d (batch norm needs >= 2)", epoch, len(idx))
                continue
            x = train_items.load(idx)
            if config.mirror_at_train:
                x = np.stack([mirror_random(p, mirror_rng) for p in x])
            y = torch.from_numpy(train_items.labels[idx])
            logits = net(_to_batch(x))
            loss = F.cross_entropy(logits, y)
            iteration += 1
            if not torch.isfinite(loss):
                lrs = {g["name"]: g["lr"] for g in optimizer.param_groups}
                ids = [train_items.ids[i] for i in idx]
                raise TrainingDiverged(
                    f"non-finite loss {loss.item()} at iteration {iteration} (epoch {epoch}); "
                    f"lr {lrs}; batch {ids}"
                )
            optimizer.zero_grad(set_to_none=True)
            loss.backward()
            optimizer.step()
            acc = float((logits.detach().argmax(1) == y).float().mean())
            rec = IterationRecord(iteration, epoch, float(loss.item()), acc)
            curve.iterations.append(rec)
            if stop is not None and stop(rec):
                stopped = True
                break

        val_acc = None
        if have_val:
            val_acc = accuracy(net, val_items)
            curve.val.append((epoch, val_acc))
            log.info("epoch %d: train_loss %.4f train_acc %.4f val_acc %.4f", epoch,
                     curve.epoch_mean(epoch, "train_loss"), curve.epoch_mean(epoch), val_acc)
        else:
            log.info("epoch %d: train_loss %.4f train_acc %.4f", epoch,
                     curve.epoch_mean(epoch, "train_loss"), curve.epoch_mean(epoch))
        last = snapshot(epoch, val_acc)
        if have_val and val_acc > best_acc:
            best_acc, best = val_acc, last
        if stopped:
            break

    if not have_val:
        best = last
    net.eval()
    return best, curve, last


def load_checkpoint_into(net: MassNet, ckpt: Checkpoint) -> MassNet:
    net.load_state_dict(ckpt.weights)
    return net.eval()
