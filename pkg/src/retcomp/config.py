"""Run configuration: INI-style sections of ``key = value`` lines.

Every section maps onto one dataclass; unknown sections or keys are rejected.
``none`` clears an optional value.
"""

from __future__ import annotations

import configparser
import types
import typing
from dataclasses import asdict, dataclass, field, fields

from .cgrpo import CGRPOConfig
from .compressor import CompressConfig
from .core import RetcompError
from .pipeline import RetrievalConfig
from .synth import SynthConfig
from .vmr import SegmentConfig


class ConfigError(RetcompError):
    pass


@dataclass
class RunSection:
    seed: int = 0


@dataclass
class TrainSection:
    mode: str = "cgrpo"  # cgrpo | grpo | sft
    steps: int = 300
    batch_size: int = 16
    eval_every: int = 50
    eval_samples: int = 200  # held out from the end of the dataset
    init_scale: float = 0.01

    def __post_init__(self):
        if self.mode not in ("cgrpo", "grpo", "sft"):
            raise ValueError(f"mode must be cgrpo, grpo or sft, got {self.mode!r}")
        if self.steps < 0 or self.batch_size < 1 or self.eval_every < 1 or self.eval_samples < 0:
            raise ValueError("steps >= 0, batch_size >= 1, eval_every >= 1, eval_samples >= 0 required")


@dataclass
class IOSection:
    data: str = ""
    out: str = ""


_CLASSES = {
    "run": RunSection,
    "synth": SynthConfig,
    "segment": SegmentConfig,
    "retrieval": RetrievalConfig,
    "compress": CompressConfig,
    "cgrpo": CGRPOConfig,
    "train": TrainSection,
    "io": IOSection,
}


@dataclass
class RunConfig:
    run: RunSection = field(default_factory=RunSection)
    synth: SynthConfig = field(default_factory=SynthConfig)
    segment: SegmentConfig = field(default_factory=SegmentConfig)
    retrieval: RetrievalConfig = field(default_factory=RetrievalConfig)
    compress: CompressConfig = field(default_factory=lambda: CompressConfig(target_override=1))
    cgrpo: CGRPOConfig = field(default_factory=CGRPOConfig)
    train: TrainSection = field(default_factory=TrainSection)
    io: IOSection = field(default_factory=IOSection)

    def to_dict(self) -> dict:
        return {name: asdict(getattr(self, name)) for name in _CLASSES}

    def to_ini(self) -> str:
        lines = []
        for name, values in self.to_dict().items():
            lines.append(f"[{name}]")
            for k, v in values.items():
                lines.append(f"{k} = {'none' if v is None else str(v).lower() if isinstance(v, bool) else v}")
            lines.append("")
        return "\n".join(lines)


def _convert(raw: str, tp, where: str):
    text = raw.strip()
    optional = False
    origin = typing.get_origin(tp)
    if origin in (typing.Union, types.UnionType):
        args = [a for a in typing.get_args(tp) if a is not type(None)]
        optional = len(args) < len(typing.get_args(tp))
        tp = args[0]
    if optional and text.lower() in ("none", ""):
        return None
    try:
        if tp is bool:
            low = text.lower()
            if low in ("1", "true", "yes", "on"):
                return True
            if low in ("0", "false", "no", "off"):
                return False
            raise ValueError(text)
        if tp is int:
            return int(text)
        if tp is float:
            return float(text)
        return text
    except ValueError:
        raise ConfigError(f"{where}: cannot parse {raw!r} as {tp.__name__}") from None


def parse_config(text: str, overrides: dict | None = None) -> RunConfig:
    """Parse config text; ``overrides`` maps "section.key" to a raw string."""
    parser = configparser.ConfigParser(interpolation=None, default_section="__none__", inline_comment_prefixes=(";", "#"))
    parser.optionxform = str
    try:
        parser.read_string(text)
    except configparser.Error as exc:
        raise ConfigError(f"malformed config: {exc}") from None

    values: dict[str, dict[str, str]] = {name: {} for name in _CLASSES}
    for section in parser.sections():
        if section not in _CLASSES:
            raise ConfigError(f"unknown config section [{section}]")
        values[section].update(parser[section])
    for dotted, raw in (overrides or {}).items():
        section, key = dotted.split(".", 1)
        values[section][key] = str(raw)

    built = {}
    for name, cls in _CLASSES.items():
        hints = typing.get_type_hints(cls)
        known = {f.name for f in fields(cls)}
        kwargs = {}
        for key, raw in values[name].items():
            if key not in known:
                raise ConfigError(f"unknown config key '{name}.{key}'")
            kwargs[key] = _convert(raw, hints[key], f"{name}.{key}")
        if name == "compress":
            kwargs.setdefault("target_override", 1)  # single-frame student by default
        try:
            built[name] = cls(**kwargs)
        except ValueError as exc:
            raise ConfigError(f"[{name}] {exc}") from None
    return RunConfig(**built)


def load_config(path, overrides: dict | None = None) -> RunConfig:
    if path is None:
        return parse_config("", overrides)
    with open(path, encoding="utf-8") as fh:
        return parse_config(fh.read(), overrides)
