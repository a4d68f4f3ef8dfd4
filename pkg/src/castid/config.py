"""Pipeline configuration: one YAML file, one section per module.

Example::

    seed: 0
    tracker:
      method: flow
      skip_window_frames: 4
    cluster:
      k_min: 8
      k_max: 15

Unknown sections or keys are errors. ``--set section.key=value`` on the
command line overrides single fields (the value is parsed as YAML).
"""

from __future__ import annotations

import dataclasses
import hashlib
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Iterable

import yaml

from .cluster import ClusterConfig
from .dictionary.edh import DedupConfig
from .errors import CastError, ConfigError
from .io import dumps
from .model import IngestConfig
from .negsample import MinSize
from .selfsup import RefineConfig
from .synthgen import SceneSpec
from .tracker import TrackerConfig


@dataclass(frozen=True)
class ShotsConfig:
    threshold: float = 0.35


@dataclass(frozen=True)
class TripletConfig:
    num_triplets: int = 10_000


@dataclass(frozen=True)
class DictionaryConfig:
    samples_per_entry: int = 5


@dataclass(frozen=True)
class ClassifyConfig:
    design: str = "per_character"
    reject_threshold: float = 0.5

    def __post_init__(self):
        if self.design not in ("per_character", "per_cluster"):
            raise ConfigError(f"unknown classifier design {self.design!r}")


SECTIONS: dict[str, type] = {
    "ingest": IngestConfig,
    "shots": ShotsConfig,
    "tracker": TrackerConfig,
    "triplets": TripletConfig,
    "refine": RefineConfig,
    "cluster": ClusterConfig,
    "dedup": DedupConfig,
    "dictionary": DictionaryConfig,
    "classify": ClassifyConfig,
    "negsample": MinSize,
    "synth": SceneSpec,
}


@dataclass(frozen=True)
class PipelineConfig:
    seed: int = 0
    sections: dict = field(default_factory=dict)

    def __getattr__(self, name: str) -> Any:
        sections = self.__dict__.get("sections", {})
        if name in sections:
            return sections[name]
        raise AttributeError(name)

    def as_dict(self) -> dict:
        out: dict[str, Any] = {"seed": self.seed}
        for name in SECTIONS:
            out[name] = _plain(dataclasses.asdict(self.sections[name]))
        return out

    def digest(self) -> str:
        return hashlib.sha256(dumps(self.as_dict()).encode("utf-8")).hexdigest()

    def section_digest(self, *names: str) -> str:
        payload = {"seed": self.seed, **{n: self.as_dict()[n] for n in names}}
        return hashlib.sha256(dumps(payload).encode("utf-8")).hexdigest()


def _plain(obj):
    if isinstance(obj, dict):
        return {k: _plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_plain(v) for v in obj]
    if hasattr(obj, "value"):
        return obj.value
    return obj


def _build(name: str, values: dict) -> Any:
    cls = SECTIONS[name]
    known = {f.name for f in dataclasses.fields(cls)}
    unknown = sorted(set(values) - known)
    if unknown:
        raise ConfigError(f"section {name!r}: unknown key(s) {', '.join(unknown)}")
    kwargs = dict(values)
    if "factor_weights" in kwargs and isinstance(kwargs["factor_weights"], list):
        kwargs["factor_weights"] = tuple(kwargs["factor_weights"])
    try:
        return cls(**kwargs)
    except ConfigError:
        raise
    except (CastError, TypeError, ValueError) as exc:
        raise ConfigError(f"section {name!r}: {exc}") from None


def build_config(data: dict | None, overrides: Iterable[str] = (), seed: int | None = None) -> PipelineConfig:
    """Validate a parsed config mapping, apply ``section.key=value`` overrides."""
    data = dict(data or {})
    if not isinstance(data, dict):
        raise ConfigError("config must be a mapping of sections")
    raw: dict[str, dict] = {}
    for key, value in data.items():
        if key == "seed":
            continue
        if key not in SECTIONS:
            raise ConfigError(f"unknown config section {key!r}")
        if value is None:
            value = {}
        if not isinstance(value, dict):
            raise ConfigError(f"section {key!r} must be a mapping")
        raw[key] = dict(value)
    for item in overrides:
        target, sep, text = item.partition("=")
        section, dot, key = target.partition(".")
        if not sep or not dot or not key:
            raise ConfigError(f"override {item!r} must look like section.key=value")
        if section not in SECTIONS:
            raise ConfigError(f"unknown config section {section!r}")
        try:
            raw.setdefault(section, {})[key] = yaml.safe_load(text)
        except yaml.YAMLError as exc:
            raise ConfigError(f"override {item!r}: {exc}") from None
    base_seed = data.get("seed", 0)
    if seed is not None:
        base_seed = seed
    if not isinstance(base_seed, int) or isinstance(base_seed, bool):
        raise ConfigError("seed must be an integer")
    sections = {name: _build(name, raw.get(name, {})) for name in SECTIONS}
    return PipelineConfig(int(base_seed), sections)


def load_config(path=None, overrides: Iterable[str] = (), seed: int | None = None) -> PipelineConfig:
    """Read a YAML config file (``None`` -> all defaults)."""
    data = None
    if path is not None:
        path = Path(path)
        if not path.exists():
            raise FileNotFoundError(f"config file not found: {path}")
        try:
            data = yaml.safe_load(path.read_text(encoding="utf-8"))
        except yaml.YAMLError as exc:
            raise ConfigError(f"{path}: {exc}") from None
        if data is not None and not isinstance(data, dict):
            raise ConfigError(f"{path}: top level must be a mapping")
    return build_config(data, overrides, seed)


def dump_config(config: PipelineConfig) -> str:
    return yaml.safe_dump(config.as_dict(), sort_keys=False)
