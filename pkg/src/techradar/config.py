"""Run configuration: one INI document covering every pipeline stage.

Every knob has a default; a config file only needs the sections it wants
to override. The parsed object is immutable and safe to share.
"""

from __future__ import annotations

import configparser
import os
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Sequence

DATA_DIR_ENV = "TECHRADAR_DATA_DIR"

_PKG_DATA = Path(__file__).parent / "data"


class ConfigError(ValueError):
    """Raised for unusable configuration values."""


@dataclass(frozen=True)
class RegistryConfig:
    # Upper edges of the first five age classes; the sixth is open-ended.
    age_class_edges: tuple[int, ...] = (2, 5, 10, 20, 50)
    sector_map_path: Path = _PKG_DATA / "nace_groups.csv"


@dataclass(frozen=True)
class FetcherConfig:
    max_depth: int = 2
    max_pages_per_site: int = 50
    per_host_delay_ms: int = 1000
    global_concurrency: int = 4
    obey_robots: bool = True
    timeout_ms: int = 10000


@dataclass(frozen=True)
class EmbedderConfig:
    d_text: int = 1792
    d_meta: int = 128
    provider: str = "hashed-ngram"  # or "external-service"
    ngram_min: int = 3
    ngram_max: int = 5
    hash_seed: int = 0
    endpoint: str = ""

    @property
    def dim(self) -> int:
        return self.d_text + self.d_meta

    def validate(self) -> "EmbedderConfig":
        if self.d_text < 8:
            raise ConfigError(f"embedder.d_text must be >= 8, got {self.d_text}")
        if self.d_meta < 0:
            raise ConfigError(f"embedder.d_meta must be >= 0, got {self.d_meta}")
        if not 1 <= self.ngram_min <= self.ngram_max:
            raise ConfigError(
                f"embedder n-gram range invalid: ({self.ngram_min}, {self.ngram_max})"
            )
        if self.provider not in ("hashed-ngram", "external-service"):
            raise ConfigError(f"unknown embedder provider {self.provider!r}")
        if self.provider == "external-service" and not self.endpoint:
            raise ConfigError("external-service provider requires embedder.endpoint")
        return self


@dataclass(frozen=True)
class ClassifierConfig:
    n_models: int = 10
    epochs: int = 200
    batch_size: int = 32
    hidden_grid: tuple[int, ...] = (0, 32, 64, 128)
    lr_grid: tuple[float, ...] = (1e-2, 1e-3)
    candidates_per_model: int = 2
    search_epochs: int = 50
    master_seed: int = 0


@dataclass(frozen=True)
class AggregatorConfig:
    min_confidence: float = 0.0
    innovation_threshold: float = 0.4


@dataclass(frozen=True)
class GeoConfig:
    hotspot_k: int = 10
    hotspot_min_total: int = 30
    heat_cell_deg: float = 0.01
    heat_bandwidth_deg: float = 0.02


@dataclass(frozen=True)
class PipelineConfig:
    data_dir: Path = Path("data")
    lexicon_path: Path = _PKG_DATA / "lexicon_default.csv"
    service_token: str = ""


@dataclass(frozen=True)
class Config:
    registry: RegistryConfig = field(default_factory=RegistryConfig)
    fetcher: FetcherConfig = field(default_factory=FetcherConfig)
    embedder: EmbedderConfig = field(default_factory=EmbedderConfig)
    classifier: ClassifierConfig = field(default_factory=ClassifierConfig)
    aggregator: AggregatorConfig = field(default_factory=AggregatorConfig)
    geo: GeoConfig = field(default_factory=GeoConfig)
    pipeline: PipelineConfig = field(default_factory=PipelineConfig)

    def snapshot(self) -> dict:
        """Flat, JSON-friendly dump used for manifest provenance."""
        out: dict[str, dict] = {}
        for section in (
            "registry", "fetcher", "embedder", "classifier",
            "aggregator", "geo", "pipeline",
        ):
            sub = getattr(self, section)
            out[section] = {
                k: (str(v) if isinstance(v, Path) else list(v) if isinstance(v, tuple) else v)
                for k, v in vars(sub).items()
            }
        return out


def _ints(raw: str) -> tuple[int, ...]:
    return tuple(int(x) for x in raw.replace(";", ",").split(",") if x.strip())


def _floats(raw: str) -> tuple[float, ...]:
    return tuple(float(x) for x in raw.replace(";", ",").split(",") if x.strip())


def load_config(path: str | Path | None = None, data_dir: str | Path | None = None) -> Config:
    """Build a Config from an optional INI file plus environment overrides.

    Precedence for the artifact root: explicit ``data_dir`` argument,
    then the ``TECHRADAR_DATA_DIR`` environment variable, then the
    ``[pipeline] data_dir`` key, then ``./data``.
    """
    cfg = Config()
    if path is not None:
        parser = configparser.ConfigParser()
        read = parser.read(str(path))
        if not read:
            raise ConfigError(f"config file not found: {path}")
        cfg = _apply_ini(cfg, parser)
    cfg.embedder.validate()
    env_dir = os.environ.get(DATA_DIR_ENV)
    if data_dir is not None:
        cfg = replace(cfg, pipeline=replace(cfg.pipeline, data_dir=Path(data_dir)))
    elif env_dir:
        cfg = replace(cfg, pipeline=replace(cfg.pipeline, data_dir=Path(env_dir)))
    return cfg


def _apply_ini(cfg: Config, p: configparser.ConfigParser) -> Config:
    def get(section: str, key: str, fallback):
        if not p.has_option(section, key):
            return fallback
        raw = p.get(section, key)
        if isinstance(fallback, bool):
            return p.getboolean(section, key)
        if isinstance(fallback, int):
            return int(raw)
        if isinstance(fallback, float):
            return float(raw)
        if isinstance(fallback, Path):
            return Path(raw)
        if isinstance(fallback, tuple):
            return _ints(raw) if all(isinstance(x, int) for x in fallback) else _floats(raw)
        return raw

    def section(name: str, obj):
        kwargs = {k: get(name, k, v) for k, v in vars(obj).items()}
        return type(obj)(**kwargs)

    return Config(
        registry=section("registry", cfg.registry),
        fetcher=section("fetcher", cfg.fetcher),
        embedder=section("embedder", cfg.embedder),
        classifier=section("classifier", cfg.classifier),
        aggregator=section("aggregator", cfg.aggregator),
        geo=section("geo", cfg.geo),
        pipeline=section("pipeline", cfg.pipeline),
    )
