"""Run configuration: an INI file with [data], [encoder], [head] and [train] sections.

Every key has a default (see ``default_config_text``). Values are parsed
against the type of that default; unknown sections and keys are rejected
by name. Example::

    [encoder]
    num_layers = 2
    hidden_size = 64

    [head]
    alpha_cross = 1
    beta = 0.1

    [train]
    learning_rate = 1e-3
"""

from __future__ import annotations

import configparser
import dataclasses
from dataclasses import dataclass, field

from .data import DataConfig
from .encoder import EncoderConfig
from .errors import ConfigError
from .head import HeadConfig
from .training import TrainConfig

# n, d and num_pos are derived from the data and the encoder, so they are not configurable.
_HEAD_DERIVED = {"n", "d", "num_pos"}


def _defaults(cls, skip=()):
    values = {}
    for f in dataclasses.fields(cls):
        if f.name in skip:
            continue
        values[f.name] = f.default
    return values


HEAD_DEFAULTS = _defaults(HeadConfig, _HEAD_DERIVED)
SCHEMA = {
    "data": _defaults(DataConfig),
    "encoder": _defaults(EncoderConfig),
    "head": HEAD_DEFAULTS,
    "train": _defaults(TrainConfig),
}


@dataclass(frozen=True)
class RunConfig:
    data: DataConfig = field(default_factory=DataConfig)
    encoder: EncoderConfig = field(default_factory=EncoderConfig)
    head: dict = field(default_factory=lambda: dict(HEAD_DEFAULTS))  # HeadConfig fields except n/d
    train: TrainConfig = field(default_factory=TrainConfig)

    def to_dict(self):
        return {"data": dataclasses.asdict(self.data), "encoder": self.encoder.to_dict(),
                "head": dict(self.head), "train": self.train.to_dict()}


def _parse_value(section, key, raw, default):
    raw = raw.strip()
    try:
        if isinstance(default, bool):
            low = raw.lower()
            if low in ("1", "true", "yes", "on"):
                return True
            if low in ("0", "false", "no", "off"):
                return False
            raise ValueError(raw)
        if isinstance(default, int):
            return int(raw)
        if isinstance(default, float):
            return float(raw)
        if isinstance(default, tuple):
            parts = [p for p in raw.replace(":", ",").split(",") if p.strip()]
            return tuple(type(default[0])(p) for p in parts)
        return raw
    except ValueError:
        kind = type(default).__name__
        raise ConfigError(f"[{section}] {key}: cannot parse {raw!r} as {kind}") from None


def _format_value(value):
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, tuple):
        return ":".join(str(v) for v in value)
    return repr(value) if isinstance(value, float) else str(value)


def parse_config(text: str, source: str = "<config>", paper_protocol: bool = False) -> RunConfig:
    parser = configparser.ConfigParser(interpolation=None, default_section="__no_default__",
                                       inline_comment_prefixes=("#", ";"))
    parser.optionxform = str  # keys are case sensitive
    try:
        parser.read_string(text, source=source)
    except configparser.Error as exc:
        raise ConfigError(f"{source}: {exc}") from None
    values = {s: dict(d) for s, d in SCHEMA.items()}
    if paper_protocol:
        protocol = TrainConfig.paper_protocol()
        values["train"].update({k: getattr(protocol, k) for k in values["train"]})
    for section in parser.sections():
        if section not in SCHEMA:
            raise ConfigError(f"{source}: unknown section [{section}]")
        for key, raw in parser.items(section):
            if key not in SCHEMA[section]:
                raise ConfigError(f"{source}: unknown key '{key}' in section [{section}]")
            values[section][key] = _parse_value(section, key, raw, SCHEMA[section][key])
    try:
        run = RunConfig(DataConfig(**values["data"]), EncoderConfig(**values["encoder"]), values["head"],
                        TrainConfig(**values["train"]))
        HeadConfig(n=1, d=run.encoder.hidden_size, **run.head)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{source}: {exc}") from None
    return run


def load_config(path=None, paper_protocol: bool = False) -> RunConfig:
    if path is None:
        return parse_config("", paper_protocol=paper_protocol)
    try:
        with open(path, encoding="utf-8") as fh:
            text = fh.read()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc.strerror}") from None
    return parse_config(text, str(path), paper_protocol)


def config_to_text(run: RunConfig) -> str:
    parser = configparser.ConfigParser(interpolation=None)
    parser.optionxform = str
    for section, values in run.to_dict().items():
        parser[section] = {k: _format_value(tuple(v) if isinstance(v, list) else v) for k, v in values.items()}
    out = []
    for section in parser.sections():
        out.append(f"[{section}]")
        out.extend(f"{k} = {v}" for k, v in parser[section].items())
        out.append("")
    return "\n".join(out)


def default_config_text() -> str:
    return config_to_text(RunConfig())
