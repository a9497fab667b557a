"""Plain-text ``key = value`` configuration.

Keys are namespaced by section (``features.dim``, ``optim.learning_rate``,
``specaug.f_pct`` ...). Each section maps onto one config dataclass and
field names are the dataclass field names. Unknown keys are errors.
"""

from __future__ import annotations

import dataclasses
import types
import typing
from enum import Enum
from pathlib import Path

from .augment import SpecAugmentConfig
from .errors import DataError, IoFailure
from .features import FeatureConfig
from .model import ModelConfig
from .nn.losses import FocalLossConfig
from .nn.optim import OptimizerConfig
from .pooling import PoolingConfig

ALIASES = {
    "train.lr": "optim.learning_rate",
    "chunk.overlap": "chunk.overlap_ratio",
    "specaug.f": "specaug.f_pct",
    "specaug.t": "specaug.t_pct",
}


class ConfigError(DataError):
    pass


def parse_kv(text: str, source: str = "<config>") -> dict[str, str]:
    out = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{source}:{lineno}: expected 'key = value'")
        key, value = (s.strip() for s in line.split("=", 1))
        if not key:
            raise ConfigError(f"{source}:{lineno}: empty key")
        key = ALIASES.get(key, key)
        if key in out:
            raise ConfigError(f"{source}:{lineno}: duplicate key {key}")
        out[key] = value
    return out


def format_kv(kv: dict[str, str]) -> str:
    return "".join(f"{k} = {kv[k]}\n" for k in sorted(kv))


def read_config_file(path) -> dict[str, str]:
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise IoFailure(f"{path}: {exc}") from exc
    return parse_kv(text, str(path))


def _format_value(value) -> str:
    if isinstance(value, Enum):
        return str(value.value)
    if isinstance(value, bool):
        return "true" if value else "false"
    if value is None:
        return "none"
    if isinstance(value, (tuple, list)):
        return ",".join(_format_value(v) for v in value)
    if isinstance(value, float):
        return repr(value)
    return str(value)


def _convert(text: str, hint, key: str):
    origin = typing.get_origin(hint)
    args = typing.get_args(hint)
    if origin in (typing.Union, types.UnionType):
        if text.lower() == "none" and type(None) in args:
            return None
        hint = next(a for a in args if a is not type(None))
        return _convert(text, hint, key)
    if origin is tuple:
        elem = args[0] if args else str
        return tuple(_convert(p.strip(), elem, key) for p in text.split(",") if p.strip())
    try:
        if hint is bool:
            if text.lower() not in ("true", "false", "1", "0", "yes", "no"):
                raise ValueError(text)
            return text.lower() in ("true", "1", "yes")
        if hint is int:
            return int(text)
        if hint is float:
            return float(text)
    except ValueError as exc:
        raise ConfigError(f"{key}: cannot parse {text!r} as {hint.__name__}") from exc
    return text


def section_values(cls, kv: dict[str, str], section: str, skip=()) -> dict:
    """Convert the ``section.*`` entries of ``kv`` into ``cls`` field values."""
    hints = typing.get_type_hints(cls)
    names = {f.name for f in dataclasses.fields(cls)} - set(skip)
    values = {}
    for key, text in kv.items():
        sec, _, name = key.partition(".")
        if sec != section:
            continue
        if name not in names:
            raise ConfigError(f"unknown config key {key}")
        values[name] = _convert(text, hints[name], key)
    return values


def section_kv(obj, section: str, skip=()) -> dict[str, str]:
    return {f"{section}.{f.name}": _format_value(getattr(obj, f.name))
            for f in dataclasses.fields(obj) if f.name not in skip}


def _build(cls, values: dict, key: str):
    try:
        return cls(**values)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"invalid {key} config: {exc}") from exc


def config_to_kv(cfg: ModelConfig) -> dict[str, str]:
    kv = section_kv(cfg, "model", skip=("pooling",))
    kv.update(section_kv(cfg.pooling, "pooling", skip=("input_dim",)))
    return kv


def model_config_from_kv(kv: dict[str, str], base: ModelConfig | None = None) -> ModelConfig:
    base = base or ModelConfig()
    pool = _build(PoolingConfig, {**dataclasses.asdict(base.pooling),
                                  **section_values(PoolingConfig, kv, "pooling", skip=("input_dim",))}, "pooling")
    values = section_values(ModelConfig, kv, "model", skip=("pooling",))
    merged = {f.name: getattr(base, f.name) for f in dataclasses.fields(base)}
    merged.update(values)
    merged["pooling"] = pool
    return _build(ModelConfig, merged, "model")


def feature_config_from_kv(kv: dict[str, str], base: FeatureConfig | None = None) -> FeatureConfig:
    values = section_values(FeatureConfig, kv, "features")
    base_values = (base or FeatureConfig()).to_dict()
    if "dim" in values and "n_filters" not in values:
        base_values["n_filters"] = None
    return _build(FeatureConfig, {**base_values, **values}, "features")


def feature_config_to_kv(cfg: FeatureConfig) -> dict[str, str]:
    return section_kv(cfg, "features")


SIMPLE_SECTIONS = {
    "optim": OptimizerConfig,
    "focal": FocalLossConfig,
    "specaug": SpecAugmentConfig,
}


def simple_from_kv(section: str, kv: dict[str, str], base=None):
    cls = SIMPLE_SECTIONS[section]
    base = base if base is not None else cls()
    merged = dataclasses.asdict(base)
    merged.update(section_values(cls, kv, section))
    return _build(cls, merged, section)


KNOWN_SECTIONS = {"features", "model", "pooling", "optim", "focal", "specaug", "chunk", "train", "infer", "meta"}


def check_sections(kv: dict[str, str], allowed=KNOWN_SECTIONS) -> None:
    for key in kv:
        if key.partition(".")[0] not in allowed:
            raise ConfigError(f"unknown config key {key}")


def train_config_from_kv(kv: dict[str, str], base=None):
    from .pipeline import ChunkSpec, TrainConfig

    base = base if base is not None else TrainConfig()
    nested = ("optimizer", "focal", "spec_augment", "chunk")
    merged = {f.name: getattr(base, f.name) for f in dataclasses.fields(base)}
    merged.update(section_values(TrainConfig, kv, "train", skip=nested))
    merged["optimizer"] = simple_from_kv("optim", kv, base.optimizer)
    merged["focal"] = simple_from_kv("focal", kv, base.focal)
    merged["spec_augment"] = simple_from_kv("specaug", kv, base.spec_augment)
    chunk_values = {**dataclasses.asdict(base.chunk), **section_values(ChunkSpec, kv, "chunk")}
    merged["chunk"] = _build(ChunkSpec, chunk_values, "chunk")
    return _build(TrainConfig, merged, "train")


def chunk_from_kv(kv: dict[str, str], base=None):
    from .pipeline import ChunkSpec

    base = base if base is not None else ChunkSpec()
    return _build(ChunkSpec, {**dataclasses.asdict(base), **section_values(ChunkSpec, kv, "chunk")}, "chunk")
