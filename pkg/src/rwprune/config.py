"""Run configuration: JSON file with a fixed schema, strict validation,
flag overrides applied by the CLI.

Every command is reproducible from its config plus the global seed; all
randomness is split deterministically per stage via ``stage_rng``.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, fields, is_dataclass, replace
from pathlib import Path

from .admm import AdmmConfig
from .errors import ConfigError, DataError
from .nn.network import (
    Conv2DSpec,
    DenseSpec,
    FlattenSpec,
    LayerSpec,
    MaxPool2x2Spec,
    ReLUSpec,
)
from .nn.optim import SGD, Adam, OptimizerConfig
from .pipeline import Absolute, GapDetect, PruneStepConfig, RelativeToMax, ThresholdPolicy
from .regularizers import RegKind

from .datasets import stage_rng  # re-exported: the canonical seed-splitting helper

__all__ = [
    "RunConfig",
    "load_config",
    "config_to_dict",
    "stage_rng",
    "build_layer_specs",
    "build_optimizer",
    "build_threshold_policy",
    "build_prune_config",
    "build_admm_config",
    "parse_reg_kind",
]


@dataclass(frozen=True)
class DatasetSection:
    kind: str = "digits28"          # digits28 | mnist-idx
    path: str | None = None         # directory of IDX files for mnist-idx
    n_train: int = 8000
    n_test: int = 2000
    train_strength: float = 1.0
    test_strength: float = 0.35


@dataclass(frozen=True)
class ModelSection:
    layers: tuple = ()


@dataclass(frozen=True)
class OptimizerSection:
    kind: str = "sgd"               # sgd | adam
    lr: float | None = None
    momentum: float = 0.9
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8


@dataclass(frozen=True)
class TrainSection:
    epochs: int = 10
    batch_size: int = 128


@dataclass(frozen=True)
class ThresholdSection:
    policy: str = "gap"             # gap | absolute | relative
    tau: float = 1e-4
    fraction: float = 0.01
    fallback: float | None = 1e-4


@dataclass(frozen=True)
class PruneSection:
    kind: str = "nonstructured"     # nonstructured | filter | shape | kernel
    steps: int = 1
    iterations: int = 4
    epochs_per_iteration: int = 25
    retrain_epochs: int = 20
    lam: float | None = None        # None: auto-tune from the loss band
    eps: float = 1e-3
    max_accuracy_drop: float = 0.02
    threshold: ThresholdSection = field(default_factory=ThresholdSection)


@dataclass(frozen=True)
class AdmmSection:
    task: str = "pattern-kernel"    # pattern-kernel | prune-quant
    rho: float = 1e-3
    iterations: int = 12
    inner_epochs: int = 10
    residual_tol: float = 1e-2
    lam: float | None = None
    eps: float = 1e-3
    kind: str = "kernel"
    retrain_epochs: int = 20
    conv_bits: int = 3
    fc_bits: int = 2
    pattern_count: int = 8
    pattern_nnz: int = 4
    lr: float = 1e-3


@dataclass(frozen=True)
class RunConfig:
    seed: int = 0
    out_dir: str = "runs/default"
    checkpoint: str | None = None
    dataset: DatasetSection = field(default_factory=DatasetSection)
    model: ModelSection = field(default_factory=ModelSection)
    optimizer: OptimizerSection = field(default_factory=OptimizerSection)
    train: TrainSection = field(default_factory=TrainSection)
    prune: PruneSection = field(default_factory=PruneSection)
    admm: AdmmSection = field(default_factory=AdmmSection)


def _from_dict(cls, data, path: str):
    if not isinstance(data, dict):
        raise ConfigError(f"{path or 'config'}: expected an object, got {type(data).__name__}")
    known = {f.name: f for f in fields(cls)}
    unknown = set(data) - set(known)
    if unknown:
        raise ConfigError(f"{path or 'config'}: unknown key '{sorted(unknown)[0]}'")
    sections = {
        "dataset": DatasetSection,
        "model": ModelSection,
        "optimizer": OptimizerSection,
        "train": TrainSection,
        "prune": PruneSection,
        "admm": AdmmSection,
        "threshold": ThresholdSection,
    }
    kwargs = {}
    for name, value in data.items():
        if name in sections:
            kwargs[name] = _from_dict(sections[name], value, f"{path}.{name}" if path else name)
        elif name == "layers":
            kwargs[name] = tuple(dict(v) for v in value)
        else:
            kwargs[name] = value
    try:
        return cls(**kwargs)
    except TypeError as exc:
        raise ConfigError(f"{path or 'config'}: {exc}") from exc


def load_config(path) -> RunConfig:
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"config file not found: {path}")
    try:
        data = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON ({exc})") from exc
    return _from_dict(RunConfig, data, "")


def _section_dict(obj):
    if is_dataclass(obj):
        out = {}
        for f in fields(obj):
            value = getattr(obj, f.name)
            if f.name == "layers":
                out[f.name] = [dict(v) for v in value]
            else:
                out[f.name] = _section_dict(value)
        return out
    return obj


def layer_dicts(model: ModelSection) -> list[dict]:
    return [dict(v) for v in model.layers]


def config_to_dict(cfg: RunConfig) -> dict:
    return _section_dict(cfg)


# ---------------------------------------------------------------------------
# section -> library object builders
# ---------------------------------------------------------------------------

_LAYER_BUILDERS = {
    "dense": lambda spec: DenseSpec(int(spec["in"]), int(spec["out"])),
    "conv": lambda spec: Conv2DSpec(
        int(spec["filters"]),
        int(spec["in_channels"]),
        (int(spec.get("kernel", 3)), int(spec.get("kernel", 3))),
        int(spec.get("stride", 1)),
        int(spec.get("padding", 0)),
    ),
    "relu": lambda spec: ReLUSpec(),
    "maxpool": lambda spec: MaxPool2x2Spec(),
    "flatten": lambda spec: FlattenSpec(),
}

_LAYER_KEYS = {
    "dense": {"type", "in", "out"},
    "conv": {"type", "filters", "in_channels", "kernel", "stride", "padding"},
    "relu": {"type"},
    "maxpool": {"type"},
    "flatten": {"type"},
}


def build_layer_specs(model: ModelSection) -> list[LayerSpec]:
    if not model.layers:
        raise ConfigError("model.layers is empty")
    specs = []
    for i, raw in enumerate(model.layers):
        spec = dict(raw)
        kind = spec.get("type")
        if kind not in _LAYER_BUILDERS:
            raise ConfigError(f"model.layers[{i}]: unknown layer type '{kind}'")
        extra = set(spec) - _LAYER_KEYS[kind]
        if extra:
            raise ConfigError(f"model.layers[{i}]: unknown key '{sorted(extra)[0]}'")
        try:
            specs.append(_LAYER_BUILDERS[kind](spec))
        except (KeyError, ValueError) as exc:
            raise ConfigError(f"model.layers[{i}]: {exc}") from exc
    return specs


def build_optimizer(section: OptimizerSection) -> OptimizerConfig:
    if section.kind == "sgd":
        return SGD(lr=section.lr if section.lr is not None else 0.01, momentum=section.momentum)
    if section.kind == "adam":
        return Adam(
            lr=section.lr if section.lr is not None else 1e-3,
            beta1=section.beta1,
            beta2=section.beta2,
            eps=section.eps,
        )
    raise ConfigError(f"unknown optimizer kind '{section.kind}'")


def build_threshold_policy(section: ThresholdSection) -> ThresholdPolicy:
    if section.policy == "gap":
        return GapDetect(fallback=section.fallback)
    if section.policy == "absolute":
        return Absolute(tau=section.tau)
    if section.policy == "relative":
        return RelativeToMax(fraction=section.fraction)
    raise ConfigError(f"unknown threshold policy '{section.policy}'")


def parse_reg_kind(name: str) -> RegKind:
    try:
        return RegKind(name)
    except ValueError:
        raise ConfigError(
            f"unknown regularizer kind '{name}' "
            f"(expected one of {[k.value for k in RegKind]})"
        ) from None


def build_prune_config(cfg: RunConfig) -> PruneStepConfig:
    p = cfg.prune
    return PruneStepConfig(
        reweight_iterations=p.iterations,
        epochs_per_iteration=p.epochs_per_iteration,
        retrain_epochs=p.retrain_epochs,
        lam=p.lam,
        eps=p.eps,
        threshold=build_threshold_policy(p.threshold),
        batch_size=cfg.train.batch_size,
        max_accuracy_drop=p.max_accuracy_drop,
        optimizer=build_optimizer(cfg.optimizer),
    )


def build_admm_config(cfg: RunConfig) -> AdmmConfig:
    a = cfg.admm
    return AdmmConfig(
        rho=a.rho,
        iterations=a.iterations,
        inner_epochs=a.inner_epochs,
        lam=a.lam,
        eps=a.eps,
        kind=parse_reg_kind(a.kind),
        residual_tol=a.residual_tol,
        batch_size=cfg.train.batch_size,
        optimizer=Adam(lr=a.lr),
        retrain_epochs=a.retrain_epochs,
    )


def override(cfg, **changes):
    """Immutable update helper used by the CLI flag layer."""
    changes = {k: v for k, v in changes.items() if v is not None}
    return replace(cfg, **changes) if changes else cfg
