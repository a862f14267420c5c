"""Predictions and test metrics with MALIGNANT as the positive class."""

from __future__ import annotations

import csv
from dataclasses import dataclass
from importlib import resources
from pathlib import Path
from typing import Sequence

import numpy as np
import torch

from . import CLASSES, MALIGNANT
from .models import MassNet
from .patches import PatchSet


@dataclass(frozen=True)
class MetricsReport:
    tp: int
    fp: int
    tn: int
    fn: int
    positive_class: str = MALIGNANT

    @property
    def n_items(self) -> int:
        return self.tp + self.fp + self.tn + self.fn

    @property
    def confusion(self) -> tuple[int, int, int, int]:
        return (self.tp, self.fp, self.tn, self.fn)

    @property
    def accuracy(self) -> float:
        return (self.tp + self.tn) / self.n_items

    @property
    def precision(self) -> float | None:
        """None when nothing was predicted positive."""
        d = self.tp + self.fp
        return self.tp / d if d else None

    @property
    def recall(self) -> float | None:
        d = self.tp + self.fn
        return self.tp / d if d else None

    def to_text(self, **extra) -> str:
        lines = [
            f"positive_class = {self.positive_class}",
            f"n_items = {self.n_items}",
            f"tp = {self.tp}",
            f"fp = {self.fp}",
            f"tn = {self.tn}",
            f"fn = {self.fn}",
            f"accuracy = {self.accuracy!r}",
            f"precision = {_fmt(self.precision)}",
            f"recall = {_fmt(self.recall)}",
        ]
        lines += [f"{k} = {v}" for k, v in extra.items()]
        return "\n".join(lines) + "\n"

    @classmethod
    def from_text(cls, text: str) -> tuple["MetricsReport", dict[str, str]]:
        """Parse :meth:`to_text` output; ratios are recomputed from the counts."""
        kv = {}
        for line in text.splitlines():
            line = line.split("#", 1)[0].strip()
            if line:
                k, _, v = line.partition("=")
                kv[k.strip()] = v.strip()
        report = cls(int(kv["tp"]), int(kv["fp"]), int(kv["tn"]), int(kv["fn"]),
                     kv.get("positive_class", MALIGNANT))
        extra = {k: v for k, v in kv.items() if k not in _REPORT_KEYS}
        return report, extra


_REPORT_KEYS = {"positive_class", "n_items", "tp", "fp", "tn", "fn", "accuracy", "precision", "recall"}


def _fmt(v: float | None) -> str:
    return "undefined" if v is None else repr(v)


def compute_metrics(truth: Sequence[str], pred: Sequence[str]) -> MetricsReport:
    if len(truth) != len(pred):
        raise ValueError(f"length mismatch: {len(truth)} truths vs {len(pred)} predictions")
    if len(truth) == 0:
        raise ValueError("no items to evaluate")
    for v in (*truth, *pred):
        if v not in CLASSES:
            raise ValueError(f"unknown class {v!r}")
    t = np.asarray(truth) == MALIGNANT
    p = np.asarray(pred) == MALIGNANT
    return MetricsReport(
        tp=int(np.sum(t & p)), fp=int(np.sum(~t & p)), tn=int(np.sum(~t & ~p)), fn=int(np.sum(t & ~p))
    )


def decide(probabilities: np.ndarray) -> np.ndarray:
    """Class index per row; exact ties go to MALIGNANT."""
    probabilities = np.asarray(probabilities)
    return (probabilities[:, 1] >= probabilities[:, 0]).astype(np.int64)


@torch.no_grad()
def predict_indices(net: MassNet, items: PatchSet, batch_size: int = 64) -> tuple[np.ndarray, np.ndarray]:
    """(predicted class index, malignant probability) per item, eval mode, no augmentation."""
    was_training = net.training
    net.eval()
    preds, probs = [], []
    try:
        for start in range(0, len(items), batch_size):
            idx = range(start, min(start + batch_size, len(items)))
            x = torch.from_numpy(items.load(idx)).unsqueeze(1)
            _, p = net.scores(x)
            p = p.double().numpy()
            preds.append(decide(p))
            probs.append(p[:, 1])
    finally:
        net.train(was_training)
    return np.concatenate(preds), np.concatenate(probs)


def predict(net: MassNet, items: PatchSet, batch_size: int = 64) -> list[tuple[str, str, float]]:
    pred, p_mal = predict_indices(net, items, batch_size)
    return [(rid, CLASSES[k], float(p)) for rid, k, p in zip(items.ids, pred, p_mal)]


def write_predictions(path, items: PatchSet, predictions) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["record_id", "truth", "pred", "p_malignant"])
        for (rid, pred, p), y in zip(predictions, items.labels):
            w.writerow([rid, CLASSES[y], pred, repr(p)])


# ---------------------------------------------------------------- reports

def reference_table3() -> dict[str, tuple[MetricsReport, dict[str, str]]]:
    """Published test-set rows, stored as confusion counts on a 91/91 balanced test set."""
    root = resources.files("mammocnn").joinpath("data", "table3")
    out = {}
    for entry in sorted(root.iterdir(), key=lambda p: p.name):
        if entry.name.endswith(".txt"):
            report, extra = MetricsReport.from_text(entry.read_text("utf-8"))
            out[extra.get("model", entry.name[:-4])] = (report, extra)
    return out


def _cell(v: float | None) -> str:
    return "n/a" if v is None else f"{v:.3f}"


def format_table(rows: Sequence[tuple[str, MetricsReport, str]]) -> str:
    """Table with Model / Accuracy / Precision / Recall / # Epochs columns."""
    header = ("Model", "Accuracy", "Precision", "Recall", "# Epochs")
    body = [(name, _cell(r.accuracy), _cell(r.precision), _cell(r.recall), epochs) for name, r, epochs in rows]
    widths = [max(len(str(row[i])) for row in [header, *body]) for i in range(len(header))]
    fmt = lambda row: " | ".join(str(c).ljust(w) for c, w in zip(row, widths))
    return "\n".join([fmt(header), "-+-".join("-" * w for w in widths), *map(fmt, body)]) + "\n"


def load_run_report(path) -> tuple[str, MetricsReport, str]:
    """A metrics file, or a run directory containing ``metrics.txt``."""
    path = Path(path)
    if path.is_dir():
        path = path / "metrics.txt"
    report, extra = MetricsReport.from_text(path.read_text(encoding="utf-8"))
    return extra.get("model", path.parent.name), report, extra.get("epochs", "-")
