"""INI configuration for model geometry and training runs.

Two sections, [model] and [train], mapping 1:1 onto ModelConfig and
TrainConfig fields. Unknown sections or keys are rejected so a typo
cannot silently fall back to a default. Shape-valued keys use a compact
grammar: channel lists are comma-separated ints, kernel/stride lists are
comma-separated `TxF` pairs.

    [model]
    mics = 4
    encoder_channels = 32,32,32,64,80
    kernels = 2x5,2x3,2x3,2x3,2x3
    strides = 1x2,1x2,1x1,1x1,1x1

    [train]
    epochs = 5
    seed = 0
"""

import configparser
import dataclasses
import io

from .models import ModelConfig, ModelError
from .training import TrainConfig, TrainError


class ConfigError(ValueError):
    pass


def _parse_pairs(text):
    out = []
    for part in text.split(","):
        bits = part.strip().split("x")
        if len(bits) != 2:
            raise ConfigError(f"expected TxF pairs, got {part.strip()!r}")
        out.append((int(bits[0]), int(bits[1])))
    return tuple(out)


def _format_value(name, value):
    if name in ("kernels", "strides"):
        return ",".join(f"{a}x{b}" for a, b in value)
    if name == "depthwise_kernel":
        return f"{value[0]}x{value[1]}"
    if isinstance(value, tuple):
        return ",".join(str(v) for v in value)
    return str(value)


def _parse_value(field, raw):
    kind = field.type
    try:
        if field.name in ("kernels", "strides"):
            return _parse_pairs(raw)
        if field.name == "depthwise_kernel":
            (pair,) = _parse_pairs(raw)
            return pair
        if field.name == "encoder_channels":
            return tuple(int(v) for v in raw.split(","))
        if kind is bool or isinstance(field.default, bool):
            low = raw.strip().lower()
            if low in ("1", "true", "yes", "on"):
                return True
            if low in ("0", "false", "no", "off"):
                return False
            raise ConfigError(f"{field.name}: expected a boolean, got {raw!r}")
        if isinstance(field.default, int) and not isinstance(field.default, bool):
            return int(raw)
        if isinstance(field.default, float):
            return float(raw)
        return raw.strip()
    except ValueError as exc:
        raise ConfigError(f"{field.name}: {exc}") from exc


def _section_to_dataclass(parser, section, cls):
    fields = {f.name: f for f in dataclasses.fields(cls)}
    kwargs = {}
    if parser.has_section(section):
        for key, raw in parser.items(section):
            if key not in fields:
                raise ConfigError(f"unknown key {key!r} in [{section}]")
            kwargs[key] = _parse_value(fields[key], raw)
    try:
        return cls(**kwargs)
    except (ModelError, TrainError, ValueError) as exc:
        raise ConfigError(f"[{section}] {exc}") from exc


def load_config(path_or_text, from_text=False):
    """Returns (ModelConfig, TrainConfig); missing keys keep their defaults."""
    parser = configparser.ConfigParser()
    try:
        if from_text:
            parser.read_string(path_or_text)
        else:
            with open(path_or_text) as f:
                parser.read_file(f)
    except configparser.Error as exc:
        raise ConfigError(str(exc)) from exc
    for section in parser.sections():
        if section not in ("model", "train"):
            raise ConfigError(f"unknown section [{section}]")
    model_cfg = _section_to_dataclass(parser, "model", ModelConfig)
    train_cfg = _section_to_dataclass(parser, "train", TrainConfig)
    return model_cfg, train_cfg


def effective_config(model_cfg: ModelConfig, train_cfg: TrainConfig) -> str:
    """Renders both configs as round-trippable INI text."""
    parser = configparser.ConfigParser()
    parser["model"] = {
        f.name: _format_value(f.name, getattr(model_cfg, f.name))
        for f in dataclasses.fields(ModelConfig)
    }
    parser["train"] = {
        f.name: _format_value(f.name, getattr(train_cfg, f.name))
        for f in dataclasses.fields(TrainConfig)
    }
    buf = io.StringIO()
    parser.write(buf)
    return buf.getvalue()
