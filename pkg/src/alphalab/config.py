"""INI run configuration: every key defaulted, unknown keys rejected."""

from __future__ import annotations

import configparser
import io
from dataclasses import dataclass, fields, replace
from pathlib import Path

from .adnn import KernelParams, TrainConfig
from .diversity import DEFAULT_METRIC, METRICS
from .gp import GpConfig
from .market_data import DEFAULT_SPLITS, MIN_CROSS_SECTION
from .synthetic import SynthConfig


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class DataConfig:
    source: str = "synthetic"
    path: str = ""
    window_len: int = 30
    horizon: int = 5
    splits: tuple[int, int, int] = DEFAULT_SPLITS
    min_cross_section: int = MIN_CROSS_SECTION


@dataclass(frozen=True)
class DiversityConfig:
    metric: str = DEFAULT_METRIC
    k_fraction: float = 0.10
    raw_cross_entropy: bool = False


@dataclass(frozen=True)
class RunConfig:
    seed: int = 0
    workers: int = 1
    data: DataConfig = DataConfig()
    synth: SynthConfig = SynthConfig()
    gp: GpConfig = GpConfig()
    train: TrainConfig = TrainConfig()
    kernel: KernelParams = KernelParams()
    diversity: DiversityConfig = DiversityConfig()
    n_features: int = 20
    out: str = "out"

    def synth_config(self) -> SynthConfig:
        d = self.data
        return replace(self.synth, seed=self.seed, window_len=d.window_len, horizon=d.horizon, splits=d.splits)

    def validate(self) -> None:
        try:
            if self.seed < 0:
                raise ValueError(f"seed={self.seed} must be >= 0")
            if self.workers < 1:
                raise ValueError(f"workers={self.workers} must be >= 1")
            if self.n_features < 1:
                raise ValueError(f"n_features={self.n_features} must be >= 1")
            if self.data.source not in ("synthetic", "csv"):
                raise ValueError(f"data.source={self.data.source!r} must be 'synthetic' or 'csv'")
            if self.data.source == "csv" and not self.data.path:
                raise ValueError("data.path is required when data.source = csv")
            if self.data.window_len < 2 or self.data.horizon < 1:
                raise ValueError("data.window_len must be >= 2 and data.horizon >= 1")
            if len(self.data.splits) != 3 or min(self.data.splits) < 1:
                raise ValueError("data.splits must be three positive day counts")
            if self.diversity.metric not in METRICS:
                raise ValueError(f"diversity.metric={self.diversity.metric!r} must be one of {METRICS}")
            if not 0 < self.diversity.k_fraction <= 1:
                raise ValueError("diversity.k_fraction must lie in (0, 1]")
            if self.data.source == "synthetic":
                self.synth_config().validate()
            self.gp.validate()
            self.train.validate()
        except ValueError as exc:
            raise ConfigError(str(exc)) from None


# section name -> (RunConfig attribute, dataclass fields excluded from the file)
_SECTIONS = {
    "data": ("data", ()),
    "synthetic": ("synth", ("seed", "window_len", "horizon", "splits")),
    "gp": ("gp", ("seed",)),
    "adnn": ("train", ("seed",)),
    "kernel": ("kernel", ()),
    "diversity": ("diversity", ()),
}
_GLOBAL = ("seed", "workers")
_SCHEME = ("n_features",)
_OUTPUT = ("directory",)


def _format(value) -> str:
    if isinstance(value, tuple):
        return ",".join(str(v) for v in value)
    if isinstance(value, bool):
        return "true" if value else "false"
    return repr(value) if isinstance(value, float) else str(value)


def _parse(text: str, default, where: str):
    text = text.strip()
    try:
        if isinstance(default, bool):
            low = text.lower()
            if low not in ("true", "false", "1", "0", "yes", "no"):
                raise ValueError
            return low in ("true", "1", "yes")
        if isinstance(default, int):
            return int(text)
        if isinstance(default, float):
            return float(text)
        if isinstance(default, tuple):
            return tuple(int(v) for v in text.split(",") if v.strip())
    except ValueError:
        raise ConfigError(f"{where}: cannot parse {text!r} as {type(default).__name__}") from None
    return text


def _update(obj, items: dict[str, str], section: str, excluded=()):
    names = {f.name for f in fields(obj)} - set(excluded)
    changes = {}
    for key, text in items.items():
        if key not in names:
            raise ConfigError(f"[{section}] unknown key {key!r}; valid keys: {', '.join(sorted(names))}")
        changes[key] = _parse(text, getattr(obj, key), f"[{section}] {key}")
    return replace(obj, **changes)


def parse_config(text: str) -> RunConfig:
    parser = configparser.ConfigParser(interpolation=None, default_section="__none__")
    parser.optionxform = str
    try:
        parser.read_string(text)
    except configparser.Error as exc:
        raise ConfigError(f"malformed config: {exc}") from None
    cfg = RunConfig()
    known = {"global", "scheme", "output", *_SECTIONS}
    for section in parser.sections():
        if section not in known:
            raise ConfigError(f"unknown section [{section}]; valid sections: {', '.join(sorted(known))}")
        items = dict(parser.items(section))
        if section == "global":
            cfg = _update(cfg, items, section, excluded=[f.name for f in fields(cfg) if f.name not in _GLOBAL])
        elif section == "scheme":
            cfg = _update(cfg, items, section, excluded=[f.name for f in fields(cfg) if f.name not in _SCHEME])
        elif section == "output":
            extra = set(items) - set(_OUTPUT)
            if extra:
                raise ConfigError(f"[output] unknown key {sorted(extra)[0]!r}; valid keys: directory")
            if "directory" in items:
                cfg = replace(cfg, out=items["directory"].strip())
        else:
            attr, excluded = _SECTIONS[section]
            cfg = replace(cfg, **{attr: _update(getattr(cfg, attr), items, section, excluded)})
    return cfg


def load_config(path: str | Path | None) -> RunConfig:
    if path is None:
        return RunConfig()
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc.strerror}") from None
    return parse_config(text)


def dump_config(cfg: RunConfig) -> str:
    """Fully resolved INI text; ``parse_config`` of it gives back ``cfg``."""
    parser = configparser.ConfigParser(interpolation=None)
    parser.optionxform = str
    parser["global"] = {k: _format(getattr(cfg, k)) for k in _GLOBAL}
    for section, (attr, excluded) in _SECTIONS.items():
        obj = getattr(cfg, attr)
        parser[section] = {f.name: _format(getattr(obj, f.name)) for f in fields(obj) if f.name not in excluded}
    parser["scheme"] = {k: _format(getattr(cfg, k)) for k in _SCHEME}
    parser["output"] = {"directory": cfg.out}
    buf = io.StringIO()
    parser.write(buf)
    return buf.getvalue()
