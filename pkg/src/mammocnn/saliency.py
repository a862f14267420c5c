"""Input-gradient saliency maps for the class scores of a trained network."""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np
import torch
import torch.nn as nn


@dataclass
class SaliencyMap:
    values: np.ndarray  # (S, S), >= 0, raw gradient magnitudes
    class_index: int
    vmin: float
    vmax: float

    def rendered(self) -> np.ndarray:
        """Linear min/max rescale to [0, 1]; a flat map renders as zeros."""
        span = self.vmax - self.vmin
        if span <= 0:
            return np.zeros_like(self.values, dtype=np.float64)
        return np.clip((self.values - self.vmin) / span, 0.0, 1.0)


def input_gradient(net: nn.Module, pixels: np.ndarray, class_index: int, dtype=torch.float32) -> np.ndarray:
    """d(score of ``class_index``)/d(input), shape (3, S, S), network in eval mode.

    The score is the pre-softmax logit. Grayscale ``pixels`` are replicated to
    three channels before differentiation.
    """
    if class_index not in (0, 1):
        raise ValueError("class_index must be 0 (benign) or 1 (malignant)")
    pixels = np.asarray(pixels)
    x = torch.as_tensor(pixels, dtype=dtype)
    if x.ndim == 2:
        x = x.unsqueeze(0).expand(3, -1, -1)
    x = x.unsqueeze(0).clone().requires_grad_(True)
    was_training = net.training
    net.eval()
    try:
        logits = net(x)
        if not logits.requires_grad:
            return np.zeros(tuple(x.shape[1:]), dtype=np.float64)
        (grad,) = torch.autograd.grad(logits[0, class_index], x, allow_unused=True)
    finally:
        net.train(was_training)
    if grad is None:
        return np.zeros(tuple(x.shape[1:]), dtype=np.float64)
    return grad[0].detach().double().numpy()


def predicted_class(net: nn.Module, pixels: np.ndarray) -> int:
    x = torch.as_tensor(np.asarray(pixels), dtype=torch.float32)
    if x.ndim == 2:
        x = x.unsqueeze(0).expand(3, -1, -1)
    was_training = net.training
    net.eval()
    try:
        with torch.no_grad():
            p = torch.softmax(net(x.unsqueeze(0)), dim=1)[0]
    finally:
        net.train(was_training)
    return int(p[1] >= p[0])


def saliency_map(net: nn.Module, patch, class_index: int | None = None, dtype=torch.float32) -> SaliencyMap:
    """Max over channels of |d logit / d pixel|; ``class_index=None`` uses the predicted class."""
    pixels = getattr(patch, "pixels", patch)
    if not isinstance(net, nn.Module):
        raise TypeError("saliency needs a differentiable torch network")
    if class_index is None:
        class_index = predicted_class(net, pixels)
    grad = input_gradient(net, pixels, class_index, dtype)
    values = np.abs(grad).max(axis=0)
    return SaliencyMap(values=values, class_index=class_index, vmin=float(values.min()), vmax=float(values.max()))


def render_panel(patches: Sequence, maps: Sequence[SaliencyMap], out_path, titles: Sequence[str] | None = None):
    """One column per patch: image on top, saliency heatmap below."""
    if len(patches) != len(maps):
        raise ValueError("need one saliency map per patch")
    if not patches:
        raise ValueError("nothing to render")
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    n = len(patches)
    fig, axes = plt.subplots(2, n, figsize=(2.0 * n, 4.2), squeeze=False)
    for i, (patch, smap) in enumerate(zip(patches, maps)):
        axes[0, i].imshow(getattr(patch, "pixels", patch), cmap="gray", vmin=0, vmax=1)
        axes[1, i].imshow(smap.rendered(), cmap="hot", vmin=0, vmax=1)
        if titles is not None:
            axes[0, i].set_title(titles[i], fontsize=8)
        for ax in axes[:, i]:
            ax.axis("off")
    fig.tight_layout()
    Path(out_path).parent.mkdir(parents=True, exist_ok=True)
    fig.savefig(out_path, dpi=100)
    plt.close(fig)
    return Path(out_path)
