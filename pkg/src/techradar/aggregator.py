"""Company-level labeling and the descriptive tabulations.

A company's label is the highest-ranked label among its point-level
predictions (after an optional confidence floor); companies with no
surviving predictions are unengaged. Tabulations always carry explicit
Unknown rows; nothing is excluded silently.
"""

from __future__ import annotations

import csv
import datetime as dt
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping, Optional, Sequence

from .classifier import FINAL_LABELS, Prediction, label_rank
from .registry import (
    AGE_BUCKETS, CompanyRecord, SectorMap, SizeClass,
    age_class, sector_group, size_class,
)

UNKNOWN = "Unknown"


@dataclass(frozen=True)
class CompanyLabel:
    company_id: str
    label: str
    supporting_points: dict
    max_confidence: float
    n_pages: int = 0

    def to_json(self) -> dict:
        return {
            "company_id": self.company_id,
            "label": self.label,
            "supporting_points": dict(self.supporting_points),
            "max_confidence": self.max_confidence,
            "n_pages": self.n_pages,
        }

    @classmethod
    def from_json(cls, d: dict) -> "CompanyLabel":
        return cls(
            company_id=d["company_id"],
            label=d["label"],
            supporting_points=d.get("supporting_points", {}),
            max_confidence=d.get("max_confidence", 0.0),
            n_pages=d.get("n_pages", 0),
        )


def classify_company(
    predictions: Sequence[Prediction],
    min_confidence: float = 0.0,
    company_id: str = "",
    pages_by_point: Optional[Mapping[str, str]] = None,
) -> Optional[CompanyLabel]:
    """Rank-max aggregation of one company's point predictions.

    Returns None (unengaged) when no prediction survives the confidence
    floor. Order-invariant and monotone: adding predictions can only hold
    or raise the company's rank.
    """
    surviving = [p for p in predictions if p.confidence >= min_confidence]
    if not surviving:
        return None
    counts: dict[str, int] = {}
    for p in surviving:
        counts[p.label] = counts.get(p.label, 0) + 1
    best = min((p.label for p in surviving), key=label_rank)
    max_conf = max(p.confidence for p in surviving if p.label == best)
    n_pages = 0
    if pages_by_point is not None:
        n_pages = len({pages_by_point[p.point_id] for p in surviving if p.point_id in pages_by_point})
    return CompanyLabel(
        company_id=company_id,
        label=best,
        supporting_points=counts,
        max_confidence=max_conf,
        n_pages=n_pages,
    )


@dataclass
class ShareTable:
    rows: list  # (category, count, share)
    total: int

    def to_json(self) -> dict:
        return {
            "rows": [
                {"category": c, "count": n, "share": s} for c, n, s in self.rows
            ],
            "total": self.total,
        }

    def write_csv(self, path: str | Path) -> None:
        _write_csv(path, ["category", "count", "share"], self.rows)


def type_shares(labels: Sequence[CompanyLabel]) -> ShareTable:
    """Counts and shares per final label over engaged companies."""
    counts = {label: 0 for label in FINAL_LABELS}
    for cl in labels:
        counts[cl.label] = counts.get(cl.label, 0) + 1
    total = len(labels)
    rows = [
        (label, counts[label], counts[label] / total)
        for label in FINAL_LABELS
        if counts[label] > 0
    ]
    return ShareTable(rows=rows, total=total)


@dataclass
class CrossTab:
    attribute: str
    row_keys: list
    col_keys: list
    counts: list            # counts[row][col]
    row_shares: list        # per row, share across labels (sums to 1)
    engaged_share: list     # engaged in row / all registry firms in row
    row_totals_registry: list

    def write_csv(self, path: str | Path) -> None:
        header = (
            [self.attribute]
            + [str(c) for c in self.col_keys]
            + ["engaged_total", "registry_total", "engaged_share"]
        )
        rows = []
        for i, key in enumerate(self.row_keys):
            engaged_total = sum(self.counts[i])
            rows.append(
                [key, *self.counts[i], engaged_total, self.row_totals_registry[i],
                 self.engaged_share[i]]
            )
        _write_csv(path, header, rows)


def _attribute_value(
    company: CompanyRecord,
    attribute: str,
    sector_map: Optional[SectorMap],
    reference_date: dt.date,
    age_edges: Sequence[int],
) -> str:
    if attribute == "SizeClass":
        return size_class(company.employee_count).value
    if attribute == "AgeClass":
        bucket = age_class(company.incorporation_date, reference_date, age_edges)
        return UNKNOWN if bucket is None else f"Age{bucket}"
    if attribute == "SectorGroup":
        if sector_map is None:
            raise ValueError("SectorGroup cross-tab requires a sector map")
        group = sector_group(company.sector_code, sector_map)
        return UNKNOWN if group is None else group.name
    raise ValueError(f"unknown attribute {attribute!r}")


def _attribute_keys(attribute: str, sector_map: Optional[SectorMap]) -> list[str]:
    if attribute == "SizeClass":
        return [s.value for s in SizeClass]
    if attribute == "AgeClass":
        return [f"Age{b}" for b in AGE_BUCKETS] + [UNKNOWN]
    if attribute == "SectorGroup":
        assert sector_map is not None
        return [g.name for g in sector_map.groups] + [UNKNOWN]
    raise ValueError(f"unknown attribute {attribute!r}")


def cross_tab(
    labels: Sequence[CompanyLabel],
    attribute: str,
    companies: Sequence[CompanyRecord],
    sector_map: Optional[SectorMap] = None,
    reference_date: Optional[dt.date] = None,
    age_edges: Sequence[int] = (2, 5, 10, 20, 50),
) -> CrossTab:
    """Attribute x final-label count matrix over engaged companies,
    with registry-wide denominators for the engaged-share column.

    Every engaged company_id must resolve in the registry.
    """
    reference_date = reference_date or dt.date.today()
    by_id = {c.company_id: c for c in companies}
    missing = sorted({cl.company_id for cl in labels} - by_id.keys())
    if missing:
        raise ValueError(f"company ids not in registry: {', '.join(missing[:10])}")

    row_keys = _attribute_keys(attribute, sector_map)
    col_keys = list(FINAL_LABELS)
    index = {k: i for i, k in enumerate(row_keys)}
    counts = [[0] * len(col_keys) for _ in row_keys]
    for cl in labels:
        value = _attribute_value(by_id[cl.company_id], attribute, sector_map, reference_date, age_edges)
        counts[index[value]][label_rank(cl.label)] += 1

    registry_totals = [0] * len(row_keys)
    for company in companies:
        value = _attribute_value(company, attribute, sector_map, reference_date, age_edges)
        registry_totals[index[value]] += 1

    row_shares = []
    engaged_share = []
    for i in range(len(row_keys)):
        engaged_total = sum(counts[i])
        row_shares.append(
            [c / engaged_total for c in counts[i]] if engaged_total else [0.0] * len(col_keys)
        )
        engaged_share.append(
            engaged_total / registry_totals[i] if registry_totals[i] else 0.0
        )
    return CrossTab(
        attribute=attribute,
        row_keys=row_keys,
        col_keys=col_keys,
        counts=counts,
        row_shares=row_shares,
        engaged_share=engaged_share,
        row_totals_registry=registry_totals,
    )


@dataclass(frozen=True)
class InnovationRow:
    category: str
    n_scored: int
    n_innovative: int
    share: float
    n_unscored: int


def innovation_validation(
    labels: Sequence[CompanyLabel],
    companies: Sequence[CompanyRecord],
    threshold: float = 0.4,
) -> list[InnovationRow]:
    """Share of engaged companies per type whose externally supplied
    innovation score clears the threshold; unscored counted separately.
    Includes an "All" summary row.
    """
    if not 0.0 <= threshold <= 1.0:
        raise ValueError(f"threshold must be in [0, 1], got {threshold}")
    by_id = {c.company_id: c for c in companies}
    rows: list[InnovationRow] = []
    groups: dict[str, list[CompanyRecord]] = {label: [] for label in FINAL_LABELS}
    for cl in labels:
        company = by_id.get(cl.company_id)
        if company is not None:
            groups[cl.label].append(company)
    all_companies: list[CompanyRecord] = [c for g in groups.values() for c in g]
    for category, members in [("All", all_companies)] + [
        (label, groups[label]) for label in FINAL_LABELS
    ]:
        scored = [c for c in members if c.innovation_score is not None]
        innovative = [c for c in scored if c.innovation_score >= threshold]
        rows.append(
            InnovationRow(
                category=category,
                n_scored=len(scored),
                n_innovative=len(innovative),
                share=len(innovative) / len(scored) if scored else 0.0,
                n_unscored=len(members) - len(scored),
            )
        )
    return rows


def write_innovation_csv(rows: Iterable[InnovationRow], path: str | Path) -> None:
    _write_csv(
        path,
        ["category", "n_scored", "n_innovative", "share", "n_unscored"],
        [[r.category, r.n_scored, r.n_innovative, r.share, r.n_unscored] for r in rows],
    )


def _write_csv(path: str | Path, header: list, rows: Iterable[Iterable]) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        for row in rows:
            writer.writerow(list(row))
