"""Network construction, initialisation and layer-wise learning-rate multipliers.

All networks take ``(B, 3, S, S)`` tensors with intensities in [0, 1] (see
:func:`as_input` for grayscale and channels-last arrays) and return
pre-softmax class scores, class 1 being MALIGNANT. Input normalisation is a
buffer inside the network, so it is identical in train and eval mode and
travels with checkpoints.
"""

from __future__ import annotations

import fnmatch
import logging
from collections import OrderedDict
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F
import torchvision

log = logging.getLogger(__name__)

BASELINE, ALEXNET, GOOGLENET = "BASELINE", "ALEXNET", "GOOGLENET"
ARCHS = (BASELINE, ALEXNET, GOOGLENET)
XAVIER_SCRATCH, PRETRAINED_IMAGENET = "XAVIER_SCRATCH", "PRETRAINED_IMAGENET"

IMAGENET_MEAN = (0.485, 0.456, 0.406)
IMAGENET_STD = (0.229, 0.224, 0.225)
BN_EPS = 1e-5
BN_MOMENTUM = 0.1  # torch convention: running = 0.9 * running + 0.1 * batch


class ModelError(ValueError):
    pass


@dataclass(frozen=True)
class ModelConfig:
    arch: str = BASELINE
    num_classes: int = 2
    dropout_rate: float = 0.0
    init: str = XAVIER_SCRATCH
    input_side: int = 224
    input_channels: int = 3
    pretrained_path: str | None = None

    def __post_init__(self):
        if self.arch not in ARCHS:
            raise ModelError(f"unknown architecture {self.arch!r}")
        if self.num_classes != 2:
            raise ModelError("only binary classification is supported")
        if not 0 <= self.dropout_rate < 1:
            raise ModelError("dropout_rate must be in [0, 1)")
        if self.init not in (XAVIER_SCRATCH, PRETRAINED_IMAGENET):
            raise ModelError(f"unknown init {self.init!r}")
        if self.init == PRETRAINED_IMAGENET and self.arch == BASELINE:
            raise ModelError("the baseline has no pretrained weights")
        if self.input_channels != 3:
            raise ModelError("networks take 3-channel input")


class InputNorm(nn.Module):
    """Replicates grayscale to 3 channels and applies ``(x - mean) / std``."""

    def __init__(self, mean=(0.0, 0.0, 0.0), std=(1.0, 1.0, 1.0)):
        super().__init__()
        self.register_buffer("mean", torch.tensor(mean, dtype=torch.float32).view(1, 3, 1, 1))
        self.register_buffer("std", torch.tensor(std, dtype=torch.float32).view(1, 3, 1, 1))

    def forward(self, x):
        if x.shape[1] == 1:
            x = x.expand(-1, 3, -1, -1)
        return (x - self.mean) / self.std


class MassNet(nn.Module):
    """Classifier wrapper: input normalisation, architecture body, named layer groups."""

    def __init__(self, arch: str, body: nn.Module, layer_groups: "OrderedDict[str, list[str]]",
                 input_side: int = 224):
        super().__init__()
        self.arch = arch
        self.input_side = input_side
        self.prep = InputNorm()
        self.body = body
        # group name -> prefixes of this module's parameter names
        self.layer_groups = layer_groups
        self.init_report: dict[str, list[str]] = {"loaded": [], "fresh": []}

    def forward(self, x):
        return self.body(self.prep(x))

    @torch.no_grad()
    def scores(self, x):
        """(logits, probabilities) without gradient tracking."""
        logits = self(x)
        return logits, F.softmax(logits, dim=1)

    def set_input_stats(self, mean, std=(1.0, 1.0, 1.0)):
        mean = np.broadcast_to(np.asarray(mean, dtype=np.float32), (3,))
        std = np.broadcast_to(np.asarray(std, dtype=np.float32), (3,))
        self.prep.mean.copy_(torch.from_numpy(mean.copy()).view(1, 3, 1, 1))
        self.prep.std.copy_(torch.from_numpy(std.copy()).view(1, 3, 1, 1))

    def group_of(self, param_name: str) -> str:
        matches = [g for g, prefixes in self.layer_groups.items()
                   if any(param_name == p or param_name.startswith(p + ".") for p in prefixes)]
        if len(matches) != 1:
            raise ModelError(f"parameter {param_name} belongs to {len(matches)} layer groups")
        return matches[0]

    def grouped_parameters(self) -> "OrderedDict[str, list[tuple[str, nn.Parameter]]]":
        groups = OrderedDict((g, []) for g in self.layer_groups)
        for name, p in self.named_parameters():
            if p.requires_grad:
                groups[self.group_of(name)].append((name, p))
        return groups


def as_input(batch) -> torch.Tensor:
    """Accept (B,S,S) grayscale, (B,S,S,3) channels-last or (B,3,S,S) and return NCHW float."""
    x = torch.as_tensor(np.asarray(batch) if not torch.is_tensor(batch) else batch)
    if not x.is_floating_point():
        raise ModelError("network input must be floating point in [0, 1]")
    if x.ndim == 3:
        return x.unsqueeze(1).expand(-1, 3, -1, -1).contiguous()
    if x.ndim == 4 and x.shape[1] not in (1, 3) and x.shape[-1] in (1, 3):
        return x.permute(0, 3, 1, 2).contiguous()
    if x.ndim == 4:
        return x
    raise ModelError(f"cannot interpret input of shape {tuple(x.shape)}")


def trainable_parameter_count(net: nn.Module) -> int:
    return sum(p.numel() for p in net.parameters() if p.requires_grad)


# ---------------------------------------------------------------- baseline

BASELINE_FILTERS = (32, 32, 64)
BASELINE_FC = (128, 64, 2)


def _conv_block(cin: int, cout: int) -> nn.Sequential:
    return nn.Sequential(OrderedDict(
        conv=nn.Conv2d(cin, cout, 3, stride=1, padding=1, bias=False),  # BN supplies the shift
        bn=nn.BatchNorm2d(cout, eps=BN_EPS, momentum=BN_MOMENTUM),
        relu=nn.ReLU(inplace=True),
        pool=nn.MaxPool2d(2, 2),
    ))


def build_baseline(input_side: int = 224) -> MassNet:
    """Three conv-BN-ReLU-pool blocks (32, 32, 64 filters) then FC 128-64-2."""
    if input_side % 8:
        raise ModelError("baseline input side must be divisible by 8")
    flat = BASELINE_FILTERS[-1] * (input_side // 8) ** 2
    body = nn.Sequential(OrderedDict(
        block1=_conv_block(3, BASELINE_FILTERS[0]),
        block2=_conv_block(BASELINE_FILTERS[0], BASELINE_FILTERS[1]),
        block3=_conv_block(BASELINE_FILTERS[1], BASELINE_FILTERS[2]),
        flatten=nn.Flatten(),
        fc1=nn.Linear(flat, BASELINE_FC[0]),
        relu1=nn.ReLU(inplace=True),
        fc2=nn.Linear(BASELINE_FC[0], BASELINE_FC[1]),
        relu2=nn.ReLU(inplace=True),
        fc3=nn.Linear(BASELINE_FC[1], BASELINE_FC[2]),
    ))
    groups = OrderedDict(
        (name, [f"body.{name}"]) for name in ("block1", "block2", "block3", "fc1", "fc2", "fc3")
    )
    net = MassNet(BASELINE, body, groups, input_side)
    xavier_init(net)
    return net


def shape_trace(net: MassNet, input_side: int | None = None) -> "OrderedDict[str, tuple[int, ...]]":
    """Output shape of every top-level body layer for a single input."""
    side = input_side or net.input_side
    shapes: OrderedDict[str, tuple[int, ...]] = OrderedDict()
    hooks = [
        module.register_forward_hook(lambda m, i, o, name=name: shapes.__setitem__(name, tuple(o.shape[1:])))
        for name, module in net.body.named_children()
    ]
    was_training = net.training
    try:
        net.eval()
        with torch.no_grad():
            net(torch.zeros(1, 3, side, side))
    finally:
        for h in hooks:
            h.remove()
        net.train(was_training)
    return shapes


# ---------------------------------------------------------------- backbones

ALEXNET_FRESH = ("classifier.1", "classifier.4", "classifier.6")
GOOGLENET_FRESH = ("fc",)
_GOOGLENET_MODULES = ("conv1", "conv2", "conv3", "inception3a", "inception3b", "inception4a",
                      "inception4b", "inception4c", "inception4d", "inception4e",
                      "inception5a", "inception5b", "fc")


def adapt_backbone(arch: str, num_classes: int = 2, dropout_rate: float | None = None,
                   input_side: int = 224) -> MassNet:
    """Reference AlexNet/GoogLeNet with a fresh 2-way classifier (GoogLeNet: no auxiliary heads)."""
    if arch == ALEXNET:
        body = torchvision.models.alexnet(weights=None, dropout=0.5 if dropout_rate is None else dropout_rate)
        body.classifier[6] = nn.Linear(body.classifier[6].in_features, num_classes)
        groups = OrderedDict(
            [(f"conv{i + 1}", [f"body.features.{j}"]) for i, j in enumerate((0, 3, 6, 8, 10))]
            + [(f"fc{i + 6}", [f"body.{p}"]) for i, p in enumerate(ALEXNET_FRESH)]
        )
    elif arch == GOOGLENET:
        body = torchvision.models.googlenet(
            weights=None, aux_logits=False, transform_input=False, init_weights=False,
            dropout=0.2 if dropout_rate is None else dropout_rate,
        )
        body.fc = nn.Linear(body.fc.in_features, num_classes)
        groups = OrderedDict((m, [f"body.{m}"]) for m in _GOOGLENET_MODULES)
    elif arch == BASELINE:
        raise ModelError("the baseline is built from scratch, there is no backbone to adapt")
    else:
        raise ModelError(f"unknown architecture {arch!r}")
    net = MassNet(arch, body, groups, input_side)
    xavier_init(net)
    return net


def loss_heads(net: MassNet) -> list[str]:
    """Names of modules producing class scores (main classifier plus any auxiliaries)."""
    heads = []
    for name, m in net.body.named_modules():
        if isinstance(m, nn.Linear) and m.out_features == 2:
            heads.append(name)
    for aux in ("aux1", "aux2"):
        if getattr(net.body, aux, None) is not None:
            heads.append(aux)
    return heads


# ---------------------------------------------------------------- initialisation

def xavier_init(module: nn.Module, only: tuple[str, ...] | None = None) -> list[str]:
    """Xavier-uniform weights, zero biases, unit BN. Returns initialised module names."""
    done = []
    for name, m in module.named_modules():
        if only is not None and not any(name == p or name.startswith(p + ".") for p in only):
            continue
        if isinstance(m, (nn.Conv2d, nn.Linear)):
            nn.init.xavier_uniform_(m.weight)
            if m.bias is not None:
                nn.init.zeros_(m.bias)
            done.append(name)
        elif isinstance(m, nn.BatchNorm2d):
            m.reset_running_stats()
            nn.init.ones_(m.weight)
            nn.init.zeros_(m.bias)
    return done


def fresh_layers(arch: str) -> tuple[str, ...]:
    return {ALEXNET: ALEXNET_FRESH, GOOGLENET: GOOGLENET_FRESH}[arch]


def load_layer_map(arch: str) -> "OrderedDict[str, str]":
    """Network tensor name (relative to the backbone) -> archive key."""
    text = resources.files("mammocnn").joinpath("data", f"layer_map_{arch.lower()}.txt").read_text("utf-8")
    mapping: OrderedDict[str, str] = OrderedDict()
    for line in text.splitlines():
        line = line.split("#", 1)[0].strip()
        if line:
            ours, theirs = line.split()
            mapping[ours] = theirs
    return mapping


def _layer_name(tensor_key: str) -> str:
    return tensor_key.rsplit(".", 1)[0]


def init_weights(net: MassNet, scheme: str = XAVIER_SCRATCH, archive=None) -> MassNet:
    """Apply an initialisation scheme in place and record what was loaded vs. freshly drawn.

    ``archive`` is a path to a ``torch.save``'d state dict (or the dict itself)
    for the reference architecture; keys are matched via the shipped layer map.
    """
    if scheme == XAVIER_SCRATCH:
        names = xavier_init(net.body)
        net.set_input_stats(0.0)
        net.init_report = {"loaded": [], "fresh": names}
        return net
    if scheme != PRETRAINED_IMAGENET:
        raise ModelError(f"unknown init scheme {scheme!r}")
    if net.arch == BASELINE:
        raise ModelError("the baseline has no pretrained weights")
    if archive is None:
        raise ModelError("PRETRAINED_IMAGENET needs a weight archive")
    state = archive if isinstance(archive, dict) else torch.load(Path(archive), map_location="cpu",
                                                                   weights_only=True)
    mapping = load_layer_map(net.arch)
    own = net.body.state_dict()
    missing, mismatched, loaded = [], [], {}
    for ours, theirs in mapping.items():
        if theirs not in state:
            missing.append(_layer_name(ours))
        elif tuple(state[theirs].shape) != tuple(own[ours].shape):
            mismatched.append(f"{_layer_name(ours)} {tuple(state[theirs].shape)} vs {tuple(own[ours].shape)}")
        else:
            loaded[ours] = state[theirs]
    if missing or mismatched:
        parts = []
        if missing:
            parts.append("missing layers: " + ", ".join(dict.fromkeys(missing)))
        if mismatched:
            parts.append("shape mismatch: " + ", ".join(dict.fromkeys(mismatched)))
        raise ModelError("weight archive incompatible with " + net.arch + "; " + "; ".join(parts))
    fresh = xavier_init(net.body, only=fresh_layers(net.arch))
    net.body.load_state_dict(loaded, strict=False)
    net.set_input_stats(IMAGENET_MEAN, IMAGENET_STD)
    net.init_report = {"loaded": list(dict.fromkeys(_layer_name(k) for k in loaded)), "fresh": fresh}
    log.info("%s: loaded %d layers, fresh %s", net.arch, len(net.init_report["loaded"]), fresh)
    return net


def build_network(config: ModelConfig) -> MassNet:
    if config.arch == BASELINE:
        net = build_baseline(config.input_side)
    else:
        net = adapt_backbone(config.arch, config.num_classes, config.dropout_rate, config.input_side)
    return init_weights(net, config.init, config.pretrained_path)


# ---------------------------------------------------------------- lr multipliers

@dataclass(frozen=True)
class LRMultiplierScheme:
    """Ordered (layer-group glob, multiplier) pairs; each group must match exactly one."""

    entries: tuple[tuple[str, float], ...] = field(default_factory=lambda: (("*", 1.0),))

    def __post_init__(self):
        if any(m < 0 for _, m in self.entries):
            raise ModelError("learning-rate multipliers must be >= 0")

    @classmethod
    def uniform(cls) -> "LRMultiplierScheme":
        return cls((("*", 1.0),))

    def resolve(self, groups) -> "OrderedDict[str, float]":
        out = OrderedDict()
        for g in groups:
            hits = [m for pat, m in self.entries if fnmatch.fnmatchcase(g, pat)]
            if len(hits) != 1:
                raise ModelError(f"layer group {g!r} matches {len(hits)} multiplier patterns")
            out[g] = hits[0]
        return out

    def to_text(self) -> str:
        return ";".join(f"{p}:{m!r}" for p, m in self.entries)

    @classmethod
    def from_text(cls, text: str) -> "LRMultiplierScheme":
        entries = []
        for part in filter(None, (t.strip() for t in text.split(";"))):
            pat, _, mult = part.rpartition(":")
            entries.append((pat, float(mult)))
        return cls(tuple(entries))


def multiplier_scheme(arch: str) -> LRMultiplierScheme:
    """Fine-tuning multipliers: pretrained layers slowed, new/top layers at full or boosted rate."""
    if arch == ALEXNET:
        return LRMultiplierScheme((("conv*", 0.1), ("fc*", 1.0)))
    if arch == GOOGLENET:
        return LRMultiplierScheme((
            ("conv*", 0.1), ("inception3*", 0.1), ("inception4*", 0.1),
            ("inception5*", 1.0),
            ("fc", 10.0),
        ))
    if arch == BASELINE:
        raise ModelError("the baseline trains with a uniform multiplier of 1")
    raise ModelError(f"unknown architecture {arch!r}")


def param_groups(net: MassNet, base_lr: float, scheme: LRMultiplierScheme | None = None) -> list[dict]:
    """Torch optimiser groups with ``lr = base_lr * multiplier`` (weights and biases alike)."""
    scheme = scheme or LRMultiplierScheme.uniform()
    grouped = net.grouped_parameters()
    mults = scheme.resolve(grouped)
    return [
        {"params": [p for _, p in params], "lr": base_lr * mults[g], "name": g, "multiplier": mults[g]}
        for g, params in grouped.items() if params
    ]


def model_summary(net: MassNet, scheme: LRMultiplierScheme | None = None) -> str:
    scheme = scheme or LRMultiplierScheme.uniform()
    grouped = net.grouped_parameters()
    mults = scheme.resolve(grouped)
    lines = [f"# architecture {net.arch}, input side {net.input_side}",
             "# group\tmultiplier\tparameters\tshapes"]
    for g, params in grouped.items():
        shapes = " ".join("x".join(map(str, p.shape)) for _, p in params)
        lines.append(f"{g}\t{mults[g]!r}\t{sum(p.numel() for _, p in params)}\t{shapes}")
    lines.append(f"# total trainable {trainable_parameter_count(net)}")
    return "\n".join(lines) + "\n"
