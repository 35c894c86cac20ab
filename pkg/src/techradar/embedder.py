"""Semantic vectors: hashed character n-grams for the paragraph text plus
a fixed-layout one-hot block for company and page metadata, concatenated
into one fixed-dimension vector (default 1792 + 128 = 1920).

The hashed provider is fully deterministic (keyed blake2b, no process
salt); an external HTTP provider can be plugged in for callers that have
a neural sentence encoder available.

Meta block layout (offsets within the meta part, defaults d_meta=128):

    [ 0: 5)  size class     one-hot  [Micro, Small, Medium, Large, Unknown]
    [ 5:12)  age class      one-hot  [bucket 1..6, Unknown]
    [12:44)  sector group   one-hot  [group 1..31, Unknown]
    [44:48)  URL path depth one-hot  [0, 1, 2, >=3 segments]
    [48:53)  keyword source one-hot  [ASTM, VDI, Research, Consulting, Custom]
    [53:60)  zone           one-hot  [Content, Menu, Header, Footer, Signature, Script, Other]
    [60:..)  zero padding

The layout is frozen so trained models stay valid across runs.
"""

from __future__ import annotations

import datetime as dt
import hashlib
import json
from dataclasses import dataclass
from typing import Callable, Optional, Sequence
from urllib.parse import urlsplit

import numpy as np

from .config import ConfigError, EmbedderConfig
from .extractor import DataPoint, KeywordSource
from .pagetext import Zone
from .registry import CompanyRecord, age_class, sector_group, size_class, SectorMap, SizeClass

META_MIN_DIM = 60

_SIZE_ORDER = [SizeClass.MICRO, SizeClass.SMALL, SizeClass.MEDIUM, SizeClass.LARGE, SizeClass.UNKNOWN]
_SOURCE_ORDER = [
    KeywordSource.ASTM, KeywordSource.VDI, KeywordSource.RESEARCH,
    KeywordSource.CONSULTING, KeywordSource.CUSTOM,
]
_ZONE_ORDER = [
    Zone.CONTENT, Zone.MENU, Zone.HEADER, Zone.FOOTER,
    Zone.SIGNATURE, Zone.SCRIPT, Zone.OTHER,
]


@dataclass(frozen=True)
class SemanticVector:
    values: np.ndarray
    provenance: str

    def __post_init__(self) -> None:
        if not np.all(np.isfinite(self.values)):
            raise ValueError("semantic vector contains non-finite entries")


class DimensionMismatch(ValueError):
    def __init__(self, expected: int, got: int, origin: str = "embedding"):
        super().__init__(f"{origin}: expected dimension {expected}, got {got}")
        self.expected = expected
        self.got = got


def _ngrams(text: str, n_min: int, n_max: int) -> list[str]:
    text = text.lower()
    grams: list[str] = []
    for n in range(n_min, n_max + 1):
        if len(text) < n:
            break
        grams.extend(text[i : i + n] for i in range(len(text) - n + 1))
    if not grams and text:
        grams.append(text)  # shorter than n_min: whole text is the gram
    return grams


def embed_text(text: str, cfg: EmbedderConfig) -> np.ndarray:
    """Signed hashed n-gram vector, L2-normalized (zero only for empty text)."""
    if cfg.provider == "external-service":
        return embed_texts_external([text], cfg)[0]
    vec = np.zeros(cfg.d_text, dtype=np.float64)
    key = cfg.hash_seed.to_bytes(8, "little", signed=True)
    for gram in _ngrams(text, cfg.ngram_min, cfg.ngram_max):
        h = int.from_bytes(
            hashlib.blake2b(gram.encode("utf-8"), digest_size=8, key=key).digest(),
            "little",
        )
        bucket = h % cfg.d_text
        sign = 1.0 if (h >> 63) & 1 else -1.0
        vec[bucket] += sign
    norm = float(np.linalg.norm(vec))
    if norm > 0.0:
        vec /= norm
    return vec


PostFn = Callable[..., "object"]


def embed_texts_external(
    texts: Sequence[str], cfg: EmbedderConfig, post: Optional[PostFn] = None
) -> list[np.ndarray]:
    """One round trip to the external encoder service for a batch of texts.

    Protocol: POST {"texts": [...]} -> {"vectors": [[...], ...]}; every
    vector must have exactly d_text entries.
    """
    if post is None:
        import requests

        post = requests.post
    resp = post(cfg.endpoint, json={"texts": list(texts)}, timeout=60)
    if hasattr(resp, "raise_for_status"):
        resp.raise_for_status()
    payload = resp.json() if hasattr(resp, "json") else json.loads(resp)  # type: ignore[arg-type]
    vectors = payload["vectors"]
    if len(vectors) != len(texts):
        raise ValueError(f"encoder returned {len(vectors)} vectors for {len(texts)} texts")
    out: list[np.ndarray] = []
    for v in vectors:
        if len(v) != cfg.d_text:
            raise DimensionMismatch(cfg.d_text, len(v), "external encoder")
        out.append(np.asarray(v, dtype=np.float64))
    return out


def _url_path_depth(url: str) -> int:
    path = urlsplit(url).path
    return len([seg for seg in path.split("/") if seg])


def check_meta_dim(cfg: EmbedderConfig) -> None:
    if 0 < cfg.d_meta < META_MIN_DIM:
        raise ConfigError(
            f"embedder.d_meta={cfg.d_meta} is smaller than the fixed meta layout ({META_MIN_DIM})"
        )


def embed_meta(
    company: CompanyRecord,
    point: DataPoint,
    cfg: EmbedderConfig,
    sector_map: SectorMap,
    reference_date: dt.date,
    age_edges: Sequence[int] = (2, 5, 10, 20, 50),
    keyword_source: KeywordSource = KeywordSource.CUSTOM,
) -> np.ndarray:
    """Fixed-layout metadata one-hots; see the module docstring for the map."""
    check_meta_dim(cfg)
    if cfg.d_meta == 0:
        return np.zeros(0, dtype=np.float64)
    vec = np.zeros(cfg.d_meta, dtype=np.float64)

    vec[_SIZE_ORDER.index(size_class(company.employee_count))] = 1.0

    bucket = age_class(company.incorporation_date, reference_date, age_edges)
    vec[5 + (bucket - 1 if bucket is not None else 6)] = 1.0

    group = sector_group(company.sector_code, sector_map)
    vec[12 + (group.group_id - 1 if group is not None else 31)] = 1.0

    vec[44 + min(_url_path_depth(point.page_url), 3)] = 1.0

    vec[48 + _SOURCE_ORDER.index(keyword_source)] = 1.0

    vec[53 + _ZONE_ORDER.index(point.zone)] = 1.0
    return vec


class Embedder:
    """Binds the embedding config to the lookup tables it needs, so the
    pipeline can encode points with one call per point."""

    def __init__(
        self,
        cfg: EmbedderConfig,
        sector_map: SectorMap,
        reference_date: Optional[dt.date] = None,
        age_edges: Sequence[int] = (2, 5, 10, 20, 50),
        keyword_sources: Optional[dict[str, KeywordSource]] = None,
    ):
        cfg.validate()
        check_meta_dim(cfg)
        self.cfg = cfg
        self.sector_map = sector_map
        self.reference_date = reference_date or dt.date.today()
        self.age_edges = tuple(age_edges)
        self.keyword_sources = keyword_sources or {}
        self.provenance = f"{cfg.provider}/d{cfg.dim}/s{cfg.hash_seed}"

    def encode(self, point: DataPoint, company: CompanyRecord) -> SemanticVector:
        """Concatenated [text | meta] vector of dimension d_text + d_meta."""
        text_vec = embed_text(point.paragraph, self.cfg)
        meta_vec = embed_meta(
            company,
            point,
            self.cfg,
            self.sector_map,
            self.reference_date,
            self.age_edges,
            self.keyword_sources.get(point.keyword, KeywordSource.CUSTOM),
        )
        values = np.concatenate([text_vec, meta_vec])
        if values.shape[0] != self.cfg.dim:
            raise DimensionMismatch(self.cfg.dim, values.shape[0])
        return SemanticVector(values=values, provenance=self.provenance)
