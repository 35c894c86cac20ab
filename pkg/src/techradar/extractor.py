"""Keyword-in-context extraction: match the technology lexicon against
zoned paragraphs and emit data points, then prune boilerplate hits and
hits from keywords that were retired as too imprecise.

Matching is simultaneous multi-pattern (Aho-Corasick over a
length-preserving lowercase fold), case-insensitive, and boundary-
anchored: a hit flanked by a letter or digit is rejected.
"""

from __future__ import annotations

import csv
import hashlib
import random
from collections import deque
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Iterable, Optional, Sequence, TextIO

from .fetcher import WebPage
from .pagetext import Paragraph, Zone, extract_paragraphs as _zone_paragraphs


class KeywordStatus(str, Enum):
    ACTIVE = "Active"
    REMOVED = "Removed"


class KeywordSource(str, Enum):
    ASTM = "ASTM"
    VDI = "VDI"
    RESEARCH = "Research"
    CONSULTING = "Consulting"
    CUSTOM = "Custom"


@dataclass(frozen=True)
class Keyword:
    surface: str
    status: KeywordStatus = KeywordStatus.ACTIVE
    source: KeywordSource = KeywordSource.CUSTOM

    def __post_init__(self) -> None:
        if not self.surface:
            raise ValueError("keyword surface must be non-empty")


@dataclass(frozen=True)
class DataPoint:
    company_id: str
    page_url: str
    keyword: str
    paragraph: str
    zone: Zone
    paragraph_ordinal: int
    char_offset: int

    @property
    def point_id(self) -> str:
        key = "|".join(
            (
                self.company_id,
                self.page_url,
                str(self.paragraph_ordinal),
                str(self.char_offset),
                fold(self.keyword),
            )
        )
        return hashlib.sha1(key.encode("utf-8")).hexdigest()[:16]

    def to_json(self) -> dict:
        return {
            "point_id": self.point_id,
            "company_id": self.company_id,
            "page_url": self.page_url,
            "keyword": self.keyword,
            "paragraph": self.paragraph,
            "zone": self.zone.value,
            "paragraph_ordinal": self.paragraph_ordinal,
            "char_offset": self.char_offset,
        }

    @classmethod
    def from_json(cls, d: dict) -> "DataPoint":
        return cls(
            company_id=d["company_id"],
            page_url=d["page_url"],
            keyword=d["keyword"],
            paragraph=d["paragraph"],
            zone=Zone(d["zone"]),
            paragraph_ordinal=d["paragraph_ordinal"],
            char_offset=d["char_offset"],
        )


def fold(text: str) -> str:
    """Length-preserving lowercase fold (casefold would shift offsets)."""
    return "".join(c if len(low := c.lower()) != 1 else low for c in text)


def _is_word_char(c: str) -> bool:
    return c.isalnum()


def load_lexicon(source: str | Path | TextIO) -> list[Keyword]:
    """Read a lexicon CSV (surface,status,source); surfaces must be
    unique case-insensitively."""
    close = isinstance(source, (str, Path))
    fh = open(source, newline="", encoding="utf-8") if close else source
    try:
        keywords: list[Keyword] = []
        seen: set[str] = set()
        for row in csv.DictReader(fh):
            surface = row["surface"].strip()
            if not surface:
                raise ValueError("lexicon contains an empty keyword surface")
            folded = fold(surface)
            if folded in seen:
                raise ValueError(f"duplicate keyword (case-insensitive): {surface!r}")
            seen.add(folded)
            status = KeywordStatus((row.get("status") or "active").strip().capitalize())
            src = KeywordSource((row.get("source") or "Custom").strip() or "Custom")
            keywords.append(Keyword(surface, status, src))
        return keywords
    finally:
        if close:
            fh.close()


class KeywordMatcher:
    """Aho-Corasick automaton over folded keyword surfaces.

    Matches every lexicon entry (Active and Removed alike); status
    filtering is the caller's concern so that removal statistics stay
    observable.
    """

    def __init__(self, keywords: Sequence[Keyword]):
        if not keywords:
            raise ValueError("lexicon must be non-empty")
        self.keywords = list(keywords)
        self._goto: list[dict[str, int]] = [{}]
        self._fail: list[int] = [0]
        self._out: list[list[int]] = [[]]
        for index, kw in enumerate(self.keywords):
            self._insert(fold(kw.surface), index)
        self._build_failure_links()

    def _insert(self, pattern: str, index: int) -> None:
        state = 0
        for ch in pattern:
            nxt = self._goto[state].get(ch)
            if nxt is None:
                self._goto.append({})
                self._fail.append(0)
                self._out.append([])
                nxt = len(self._goto) - 1
                self._goto[state][ch] = nxt
            state = nxt
        self._out[state].append(index)

    def _build_failure_links(self) -> None:
        queue: deque[int] = deque()
        for state in self._goto[0].values():
            self._fail[state] = 0
            queue.append(state)
        while queue:
            state = queue.popleft()
            for ch, nxt in self._goto[state].items():
                queue.append(nxt)
                f = self._fail[state]
                while f and ch not in self._goto[f]:
                    f = self._fail[f]
                self._fail[nxt] = self._goto[f].get(ch, 0) if self._goto[f].get(ch, 0) != nxt else 0
                self._out[nxt] = self._out[nxt] + self._out[self._fail[nxt]]

    def scan(self, text: str) -> list[tuple[int, int]]:
        """All boundary-anchored occurrences as (keyword_index, start)."""
        folded = fold(text)
        hits: list[tuple[int, int]] = []
        state = 0
        for pos, ch in enumerate(folded):
            while state and ch not in self._goto[state]:
                state = self._fail[state]
            state = self._goto[state].get(ch, 0)
            for index in self._out[state]:
                start = pos - len(fold(self.keywords[index].surface)) + 1
                if start > 0 and _is_word_char(text[start - 1]):
                    continue
                if pos + 1 < len(text) and _is_word_char(text[pos + 1]):
                    continue
                hits.append((index, start))
        hits.sort(key=lambda t: (t[1], t[0]))
        return hits


def match_keywords(
    paragraphs: Iterable[Paragraph],
    lexicon: Sequence[Keyword],
    company_id: str = "",
    matcher: Optional[KeywordMatcher] = None,
) -> list[DataPoint]:
    """Scan paragraphs against the lexicon; only Active keywords emit
    data points. One point per (page, keyword, paragraph, offset)."""
    matcher = matcher or KeywordMatcher(lexicon)
    points: list[DataPoint] = []
    for para in paragraphs:
        seen: set[tuple[int, int]] = set()
        for index, start in matcher.scan(para.text):
            if (index, start) in seen:
                continue
            seen.add((index, start))
            kw = matcher.keywords[index]
            if kw.status is not KeywordStatus.ACTIVE:
                continue
            points.append(
                DataPoint(
                    company_id=company_id,
                    page_url=para.page_url,
                    keyword=kw.surface,
                    paragraph=para.text,
                    zone=para.zone,
                    paragraph_ordinal=para.ordinal,
                    char_offset=start,
                )
            )
    return points


def extract_page_paragraphs(page: WebPage) -> list[Paragraph]:
    """Zoned paragraphs for one fetched page."""
    return _zone_paragraphs(page.body, page.page_url)


def extract_page(
    page: WebPage,
    lexicon: Sequence[Keyword],
    matcher: Optional[KeywordMatcher] = None,
) -> list[DataPoint]:
    """Full extraction for one page: zoning plus keyword matching."""
    return match_keywords(
        extract_page_paragraphs(page), lexicon, company_id=page.company_id, matcher=matcher
    )


@dataclass
class FilterReport:
    kept: int = 0
    dropped_by_reason: dict = field(default_factory=dict)

    @property
    def dropped(self) -> int:
        return sum(self.dropped_by_reason.values())

    def to_json(self) -> dict:
        return {
            "kept": self.kept,
            "dropped": self.dropped,
            "dropped_by_reason": dict(self.dropped_by_reason),
        }


DROP_NON_CONTENT = "non-content"
DROP_KEYWORD_REMOVED = "keyword-removed"


def filter_data_points(
    points: Sequence[DataPoint], lexicon: Sequence[Keyword]
) -> tuple[list[DataPoint], list[DataPoint], FilterReport]:
    """Prune boilerplate-zone points and points whose keyword was retired.

    A point failing both checks counts once, under "non-content".
    """
    removed_surfaces = {
        fold(kw.surface) for kw in lexicon if kw.status is KeywordStatus.REMOVED
    }
    kept: list[DataPoint] = []
    dropped: list[DataPoint] = []
    report = FilterReport()
    for point in points:
        if point.zone is not Zone.CONTENT:
            reason = DROP_NON_CONTENT
        elif fold(point.keyword) in removed_surfaces:
            reason = DROP_KEYWORD_REMOVED
        else:
            kept.append(point)
            report.kept += 1
            continue
        dropped.append(point)
        report.dropped_by_reason[reason] = report.dropped_by_reason.get(reason, 0) + 1
    return kept, dropped, report


def sample_for_labeling(
    points: Sequence[DataPoint],
    n: int,
    seed: int,
    exclude: Optional[set[str]] = None,
) -> list[DataPoint]:
    """Uniform sample without replacement, reproducible from the seed and
    disjoint from already-used point ids."""
    exclude = exclude or set()
    candidates = [p for p in points if p.point_id not in exclude]
    if n > len(candidates):
        raise ValueError(
            f"cannot sample {n} points: only {len(candidates)} available after exclusions"
        )
    return random.Random(seed).sample(candidates, n)
