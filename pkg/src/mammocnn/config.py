"""Flat ``key = value`` run configuration covering model, training, context and augmentation."""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, fields, replace
from pathlib import Path

from .augment import AugmentationSpec
from .models import (
    ALEXNET, BASELINE, GOOGLENET, PRETRAINED_IMAGENET, XAVIER_SCRATCH, LRMultiplierScheme, ModelConfig,
    multiplier_scheme,
)
from .roi import ContextStrategy
from .train import ADAM, PRESETS, VANILLA_SGD, TrainConfig, preset


class ConfigError(ValueError):
    pass


_BOOL = {"true": True, "yes": True, "on": True, "1": True, "false": False, "no": False, "off": False, "0": False}


def _bool(v: str) -> bool:
    try:
        return _BOOL[v.strip().lower()]
    except KeyError:
        raise ConfigError(f"not a boolean: {v!r}") from None


def _opt_path(v: str) -> str:
    return v.strip()


@dataclass(frozen=True)
class RunConfig:
    name: str = "run"
    # model
    arch: str = BASELINE
    init: str = XAVIER_SCRATCH
    pretrained_path: str = ""
    input_side: int = 224
    dropout_rate: float = 0.0
    # optimisation
    optimizer: str = ADAM
    base_lr: float = 1e-3
    batch_size: int = 64
    max_epochs: int = 35
    seed: int = 0
    mirror_at_train: bool = True
    multipliers: str = "uniform"  # "uniform", "default" (per-architecture scheme) or "glob:mult;..."
    # context
    context: str = "large"
    pad_pixels: int = 50
    scale: float = 2.0
    # augmentation
    augment: bool = True
    n_rotations: int = 5
    n_crops_per_rotation: int = 5
    rotation_min: float = 0.0
    rotation_max: float = 360.0
    crop_min: float = 0.8
    crop_max: float = 1.0
    aug_seed: int = 0
    # data paths; empty means "given on the command line"
    manifest: str = ""
    split: str = ""
    patches: str = ""
    augmented: str = ""

    def __post_init__(self):
        # validate by constructing every component
        self.model_config()
        self.train_config()
        self.context_strategy()
        if self.augment:
            self.augmentation_spec()

    def model_config(self) -> ModelConfig:
        return ModelConfig(arch=self.arch, dropout_rate=self.dropout_rate, init=self.init,
                           input_side=self.input_side, pretrained_path=self.pretrained_path or None)

    def scheme(self) -> LRMultiplierScheme:
        if self.multipliers == "uniform":
            return LRMultiplierScheme.uniform()
        if self.multipliers == "default":
            return LRMultiplierScheme.uniform() if self.arch == BASELINE else multiplier_scheme(self.arch)
        return LRMultiplierScheme.from_text(self.multipliers)

    def train_config(self) -> TrainConfig:
        return TrainConfig(optimizer=self.optimizer, base_lr=self.base_lr, batch_size=self.batch_size,
                           dropout_rate=self.dropout_rate, max_epochs=self.max_epochs, seed=self.seed,
                           mirror_at_train=self.mirror_at_train, multiplier_scheme=self.scheme())

    def context_strategy(self) -> ContextStrategy:
        return ContextStrategy.from_name(self.context, self.pad_pixels, self.scale)

    def augmentation_spec(self) -> AugmentationSpec:
        return AugmentationSpec(self.n_rotations, self.n_crops_per_rotation,
                                (self.rotation_min, self.rotation_max), (self.crop_min, self.crop_max),
                                self.aug_seed)

    def to_text(self) -> str:
        lines = [f"{f.name} = {_render(getattr(self, f.name))}" for f in fields(self)]
        return "\n".join(lines) + "\n"

    @property
    def fingerprint(self) -> str:
        body = "\n".join(sorted(f"{f.name}={_render(getattr(self, f.name))}" for f in fields(self)))
        return hashlib.sha256(body.encode("utf-8")).hexdigest()

    def with_paths(self, **paths) -> "RunConfig":
        return replace(self, **{k: str(v) for k, v in paths.items() if v})


def _render(v) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, float):
        return repr(v)
    return str(v)


_ARCH_NAMES = {"baseline": BASELINE, "alexnet": ALEXNET, "googlenet": GOOGLENET}
_INIT_NAMES = {"xavier": XAVIER_SCRATCH, "scratch": XAVIER_SCRATCH, "pretrained": PRETRAINED_IMAGENET}
_OPT_NAMES = {"adam": ADAM, "sgd": VANILLA_SGD, "vanilla_sgd": VANILLA_SGD}


def _enum(table):
    def conv(v: str) -> str:
        key = v.strip()
        if key.upper() in table.values():
            return key.upper()
        try:
            return table[key.lower()]
        except KeyError:
            raise ConfigError(f"{v!r} is not one of {sorted(table)}") from None
    return conv


_PARSERS = {f.name: {int: int, float: float, bool: _bool, str: _opt_path}[
    {"int": int, "float": float, "bool": bool, "str": str}[f.type]] for f in fields(RunConfig)}
_PARSERS.update(arch=_enum(_ARCH_NAMES), init=_enum(_INIT_NAMES), optimizer=_enum(_OPT_NAMES))


def preset_values(name: str) -> dict:
    """RunConfig field values implied by a training preset."""
    cfg = preset(name)
    arch = PRESETS[name][0]
    return dict(
        arch=arch,
        init=XAVIER_SCRATCH if arch == BASELINE else PRETRAINED_IMAGENET,
        optimizer=cfg.optimizer, base_lr=cfg.base_lr, batch_size=cfg.batch_size,
        dropout_rate=cfg.dropout_rate, max_epochs=cfg.max_epochs,
        multipliers="uniform" if arch == BASELINE else "default",
    )


def parse_config_text(text: str, source: str = "<config>") -> RunConfig:
    """Parse ``key = value`` lines; ``preset = NAME`` seeds defaults that later keys override."""
    values: dict = {}
    seen = set()
    preset_name = None
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, value = line.partition("=")
        key, value = key.strip(), value.strip()
        if not sep:
            raise ConfigError(f"{source}:{lineno}: expected 'key = value'")
        if key in seen:
            raise ConfigError(f"{source}:{lineno}: duplicate key {key!r}")
        seen.add(key)
        if key == "preset":
            preset_name = value
            continue
        if key not in _PARSERS:
            raise ConfigError(f"{source}:{lineno}: unknown key {key!r}")
        try:
            values[key] = _PARSERS[key](value)
        except (ValueError, ConfigError) as exc:
            raise ConfigError(f"{source}:{lineno}: bad value for {key}: {exc}") from None
    base = preset_values(preset_name) if preset_name else {}
    try:
        return RunConfig(**{**base, **values})
    except ValueError as exc:
        raise ConfigError(f"{source}: {exc}") from None


def load_config(path) -> RunConfig:
    path = Path(path)
    return parse_config_text(path.read_text(encoding="utf-8"), str(path))
