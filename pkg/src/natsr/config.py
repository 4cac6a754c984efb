"""Flat key=value run configuration: parsing, validation, canonical echo.

One `key = value` pair per line, `#` starts a comment. Every optimizer,
warm-up, split and backbone field is addressable; unknown keys are errors, as
are duplicates. `variant` and `eta` carry no defaults and must be supplied
(the CLI may inject `variant` via --variant).
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field

from .errors import ConfigError
from .optimizer import OptimizerConfig, WarmupConfig


@dataclass
class RunConfig:
    optimizer: OptimizerConfig
    warmup: WarmupConfig = field(default_factory=WarmupConfig)
    lookback: int = 60
    horizon: int = 1
    warmup_frac: float = 0.20
    val_frac: float = 0.05
    hidden_dims: tuple[int, ...] = (64, 64)
    activation: str = "relu"
    conv_kernel: int = 0
    conv_dilation: int = 1
    data_has_header: bool = True
    data_timestamp_col: int = -1  # -1: no timestamp column


def _parse_bool(v: str) -> bool:
    low = v.lower()
    if low in ("true", "1", "yes", "on"):
        return True
    if low in ("false", "0", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {v!r}")


def _parse_dims(v: str) -> tuple[int, ...]:
    if not v.strip():
        return ()
    return tuple(int(part) for part in v.split(","))


# key -> (section, attribute, parser, formatter)
_IDENT = str
_SCHEMA: dict[str, tuple[str, str, object]] = {
    "variant": ("optimizer", "variant", _IDENT),
    "eta": ("optimizer", "eta", float),
    "lam": ("optimizer", "lam", float),
    "nu": ("optimizer", "nu", float),
    "beta": ("optimizer", "beta", float),
    "alpha_s": ("optimizer", "alpha_s", float),
    "scale_floor": ("optimizer", "scale_floor", float),
    "s2_init": ("optimizer", "s2_init", float),
    "alpha_ema_step": ("optimizer", "alpha_ema_step", float),
    "alpha_ema_factors": ("optimizer", "alpha_ema_factors", float),
    "replay_batch": ("optimizer", "replay_batch", int),
    "mc_samples": ("optimizer", "mc_samples", int),
    "buffer_capacity": ("optimizer", "buffer_capacity", int),
    "max_stale": ("optimizer", "max_stale", int),
    "refresh_z": ("optimizer", "refresh_z", float),
    "tau_variant": ("optimizer", "tau_variant", _IDENT),
    "damping": ("optimizer", "damping", _IDENT),
    "factor_source": ("optimizer", "factor_source", _IDENT),
    "dynamic_scale": ("optimizer", "dynamic_scale", _parse_bool),
    "adam_beta1": ("optimizer", "adam_beta1", float),
    "adam_beta2": ("optimizer", "adam_beta2", float),
    "adam_eps": ("optimizer", "adam_eps", float),
    "warmup_lr": ("warmup", "lr", float),
    "warmup_epochs": ("warmup", "max_epochs", int),
    "warmup_batch": ("warmup", "batch", int),
    "warmup_patience": ("warmup", "patience", int),
    "lookback": ("top", "lookback", int),
    "horizon": ("top", "horizon", int),
    "warmup_frac": ("top", "warmup_frac", float),
    "val_frac": ("top", "val_frac", float),
    "hidden_dims": ("top", "hidden_dims", _parse_dims),
    "activation": ("top", "activation", _IDENT),
    "conv_kernel": ("top", "conv_kernel", int),
    "conv_dilation": ("top", "conv_dilation", int),
    "data_has_header": ("top", "data_has_header", _parse_bool),
    "data_timestamp_col": ("top", "data_timestamp_col", int),
}

REQUIRED_KEYS = ("variant", "eta")


def parse_config_text(text: str, overrides: dict[str, str] | None = None) -> RunConfig:
    values: dict[str, object] = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected key = value, got {raw.strip()!r}")
        key, _, val = line.partition("=")
        key = key.strip()
        val = val.strip()
        if key not in _SCHEMA:
            raise ConfigError(f"line {lineno}: unknown config key {key!r}")
        if key in values:
            raise ConfigError(f"line {lineno}: duplicate config key {key!r}")
        try:
            values[key] = _SCHEMA[key][2](val)
        except (ValueError, TypeError) as exc:
            raise ConfigError(f"line {lineno}: bad value for {key!r}: {exc}") from None
    for key, val in (overrides or {}).items():
        if key not in _SCHEMA:
            raise ConfigError(f"unknown config key {key!r}")
        values[key] = _SCHEMA[key][2](val) if isinstance(val, str) else val
    for key in REQUIRED_KEYS:
        if key not in values:
            raise ConfigError(f"missing config key {key!r}")
    sections = {"optimizer": {}, "warmup": {}, "top": {}}
    for key, val in values.items():
        section, attr, _ = _SCHEMA[key]
        sections[section][attr] = val
    try:
        opt = OptimizerConfig(**sections["optimizer"])
    except TypeError as exc:
        raise ConfigError(str(exc)) from None
    return RunConfig(optimizer=opt, warmup=WarmupConfig(**sections["warmup"]), **sections["top"])


def parse_config_file(path, overrides: dict[str, str] | None = None) -> RunConfig:
    try:
        with open(path, encoding="utf-8") as fh:
            text = fh.read()
    except OSError as exc:
        raise ConfigError(f"cannot read config file {path}: {exc}") from None
    return parse_config_text(text, overrides)


def _format_value(v) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, float):
        return repr(v)
    if isinstance(v, tuple):
        return ",".join(str(x) for x in v)
    return str(v)


def config_echo(rc: RunConfig) -> str:
    """Canonical resolved `key=value` string covering every addressable field."""
    parts = []
    for key in sorted(_SCHEMA):
        section, attr, _ = _SCHEMA[key]
        obj = {"optimizer": rc.optimizer, "warmup": rc.warmup, "top": rc}[section]
        parts.append(f"{key}={_format_value(getattr(obj, attr))}")
    return " ".join(parts)


def file_hash(path) -> str:
    with open(path, "rb") as fh:
        return hashlib.sha256(fh.read()).hexdigest()
