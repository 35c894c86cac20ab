"""Firm registry: ingest the company population and derive categorical
attributes (size class, age class, sector group) used by every tabulation.

Input is a flat CSV (columns company_id,url,employees,incorporated,nace,
region_id,lat,lon,inno_score); unknown values stay None and are reported
as explicit "Unknown" rows downstream, never silently dropped.
"""

from __future__ import annotations

import csv
import datetime as dt
import io
import logging
from dataclasses import dataclass
from enum import Enum
from pathlib import Path
from typing import BinaryIO, Iterable, Optional, TextIO
from urllib.parse import urlsplit

log = logging.getLogger(__name__)

CSV_COLUMNS = [
    "company_id", "url", "employees", "incorporated", "nace",
    "region_id", "lat", "lon", "inno_score",
]


class IngestError(Exception):
    """Fatal problem with the registry source (unreadable, bad header)."""


@dataclass(frozen=True)
class RowError:
    row: int          # 1-based line number, header is row 1
    reason: str
    detail: str = ""


@dataclass(frozen=True)
class CompanyRecord:
    company_id: str
    url: str
    employee_count: Optional[int] = None
    incorporation_date: Optional[dt.date] = None
    sector_code: Optional[str] = None
    region_id: Optional[str] = None
    latitude: Optional[float] = None
    longitude: Optional[float] = None
    innovation_score: Optional[float] = None

    def to_json(self) -> dict:
        return {
            "company_id": self.company_id,
            "url": self.url,
            "employee_count": self.employee_count,
            "incorporation_date": (
                self.incorporation_date.isoformat() if self.incorporation_date else None
            ),
            "sector_code": self.sector_code,
            "region_id": self.region_id,
            "latitude": self.latitude,
            "longitude": self.longitude,
            "innovation_score": self.innovation_score,
        }

    @classmethod
    def from_json(cls, d: dict) -> "CompanyRecord":
        inc = d.get("incorporation_date")
        return cls(
            company_id=d["company_id"],
            url=d["url"],
            employee_count=d.get("employee_count"),
            incorporation_date=dt.date.fromisoformat(inc) if inc else None,
            sector_code=d.get("sector_code"),
            region_id=d.get("region_id"),
            latitude=d.get("latitude"),
            longitude=d.get("longitude"),
            innovation_score=d.get("innovation_score"),
        )


class SizeClass(str, Enum):
    MICRO = "Micro"      # 1-9 employees
    SMALL = "Small"      # 10-49
    MEDIUM = "Medium"    # 50-249
    LARGE = "Large"      # >=250
    UNKNOWN = "Unknown"  # absent or 0


# Age classes are ordinal buckets 1..6; None means unknown.
AgeBucket = Optional[int]
AGE_BUCKETS = (1, 2, 3, 4, 5, 6)


@dataclass(frozen=True)
class SectorGroup:
    group_id: int
    name: str


@dataclass(frozen=True)
class SectorMap:
    """Longest-prefix mapping of NACE-style codes onto aggregate groups."""

    groups: tuple[SectorGroup, ...]
    prefixes: tuple[tuple[str, int], ...]  # (prefix, group_id), longest first

    @classmethod
    def load(cls, path: str | Path) -> "SectorMap":
        groups: list[SectorGroup] = []
        prefixes: list[tuple[str, int]] = []
        with open(path, newline="", encoding="utf-8") as fh:
            for row in csv.DictReader(fh):
                gid = int(row["group_id"])
                groups.append(SectorGroup(gid, row["name"]))
                for p in row["prefixes"].split(";"):
                    p = _normalize_nace(p)
                    if p:
                        prefixes.append((p, gid))
        prefixes.sort(key=lambda t: (-len(t[0]), t[0]))
        return cls(tuple(groups), tuple(prefixes))

    def by_id(self, group_id: int) -> SectorGroup:
        for g in self.groups:
            if g.group_id == group_id:
                return g
        raise KeyError(group_id)


def _normalize_nace(code: str) -> str:
    return code.strip().upper().replace(".", "").replace(" ", "")


def size_class(employee_count: Optional[int]) -> SizeClass:
    """Bucket an employee count; 0 and absent both mean Unknown."""
    if employee_count is None or employee_count <= 0:
        return SizeClass.UNKNOWN
    if employee_count <= 9:
        return SizeClass.MICRO
    if employee_count <= 49:
        return SizeClass.SMALL
    if employee_count <= 249:
        return SizeClass.MEDIUM
    return SizeClass.LARGE


def age_class(
    incorporation_date: Optional[dt.date],
    reference_date: dt.date,
    edges: Iterable[int] = (2, 5, 10, 20, 50),
) -> AgeBucket:
    """Ordinal age bucket (1..len(edges)+1) or None when unknown.

    ``edges`` are the inclusive upper bounds of all but the last bucket,
    in whole years; the last bucket is open-ended.
    """
    edges = tuple(edges)
    if incorporation_date is None:
        return None
    if incorporation_date > reference_date:
        log.warning(
            "incorporation date %s is after reference date %s; treating as unknown",
            incorporation_date, reference_date,
        )
        return None
    age = reference_date.year - incorporation_date.year
    if (reference_date.month, reference_date.day) < (
        incorporation_date.month, incorporation_date.day
    ):
        age -= 1
    for i, edge in enumerate(edges, start=1):
        if age <= edge:
            return i
    return len(edges) + 1


def sector_group(sector_code: Optional[str], mapping: SectorMap) -> Optional[SectorGroup]:
    """Longest-prefix match of a NACE code; None when unmapped/absent."""
    if not sector_code:
        return None
    code = _normalize_nace(sector_code)
    for prefix, gid in mapping.prefixes:
        if code.startswith(prefix):
            return mapping.by_id(gid)
    return None


def _valid_url(url: str) -> Optional[str]:
    """Return an error reason for a bad URL, None when acceptable."""
    try:
        parts = urlsplit(url)
    except ValueError:
        return "url"
    if parts.scheme not in ("http", "https"):
        return "scheme"
    if not parts.netloc:
        return "url"
    return None


def load_registry(
    source: str | Path | TextIO | BinaryIO,
    delimiter: str = ",",
) -> tuple[list[CompanyRecord], list[RowError]]:
    """Parse the registry CSV; malformed rows become RowErrors, never drops.

    Returns records in input order plus one RowError per rejected row.
    Raises IngestError when the stream is unreadable or the header is
    missing required columns.
    """
    close = False
    if isinstance(source, (str, Path)):
        fh: TextIO = open(source, "r", encoding="utf-8", newline="")
        close = True
    elif isinstance(source, (io.RawIOBase, io.BufferedIOBase)) or (
        hasattr(source, "read") and isinstance(source.read(0), bytes)
    ):
        fh = io.TextIOWrapper(source, encoding="utf-8", newline="")
    else:
        fh = source  # already text

    try:
        reader = csv.reader(fh, delimiter=delimiter)
        try:
            header = next(reader)
        except StopIteration:
            raise IngestError("empty input: no header row") from None
        except (UnicodeDecodeError, csv.Error) as exc:
            raise IngestError(f"unreadable registry stream: {exc}") from exc
        header = [h.strip() for h in header]
        missing = [c for c in CSV_COLUMNS if c not in header]
        if missing:
            raise IngestError(f"header missing required columns: {', '.join(missing)}")
        idx = {c: header.index(c) for c in CSV_COLUMNS}

        records: list[CompanyRecord] = []
        errors: list[RowError] = []
        seen_ids: set[str] = set()
        for rownum, row in enumerate(reader, start=2):
            if not row or all(not c.strip() for c in row):
                continue
            err = _parse_row(row, idx, rownum, seen_ids)
            if isinstance(err, RowError):
                errors.append(err)
            else:
                seen_ids.add(err.company_id)
                records.append(err)
        return records, errors
    except UnicodeDecodeError as exc:
        raise IngestError(f"unreadable registry stream: {exc}") from exc
    finally:
        if close:
            fh.close()


def _parse_row(
    row: list[str], idx: dict[str, int], rownum: int, seen_ids: set[str]
) -> CompanyRecord | RowError:
    if len(row) < len(idx):
        return RowError(rownum, "fields", f"expected {len(idx)} columns, got {len(row)}")

    def cell(name: str) -> str:
        return row[idx[name]].strip()

    company_id = cell("company_id")
    if not company_id:
        return RowError(rownum, "company_id", "empty")
    if company_id in seen_ids:
        return RowError(rownum, "duplicate company_id", company_id)

    url = cell("url")
    url_err = _valid_url(url)
    if url_err:
        return RowError(rownum, url_err, url)

    employee_count: Optional[int] = None
    if cell("employees"):
        try:
            employee_count = int(cell("employees"))
        except ValueError:
            return RowError(rownum, "employees", cell("employees"))
        if employee_count < 0:
            return RowError(rownum, "employees", "negative")

    incorporation: Optional[dt.date] = None
    if cell("incorporated"):
        try:
            incorporation = dt.date.fromisoformat(cell("incorporated"))
        except ValueError:
            return RowError(rownum, "incorporated", cell("incorporated"))

    lat_s, lon_s = cell("lat"), cell("lon")
    latitude = longitude = None
    if bool(lat_s) != bool(lon_s):
        return RowError(rownum, "coordinates", "latitude/longitude must come together")
    if lat_s:
        try:
            latitude, longitude = float(lat_s), float(lon_s)
        except ValueError:
            return RowError(rownum, "coordinates", f"{lat_s},{lon_s}")
        if not -90.0 <= latitude <= 90.0:
            return RowError(rownum, "latitude", lat_s)
        if not -180.0 <= longitude <= 180.0:
            return RowError(rownum, "longitude", lon_s)

    innovation: Optional[float] = None
    if cell("inno_score"):
        try:
            innovation = float(cell("inno_score"))
        except ValueError:
            return RowError(rownum, "inno_score", cell("inno_score"))
        if not 0.0 <= innovation <= 1.0:
            return RowError(rownum, "inno_score", cell("inno_score"))

    return CompanyRecord(
        company_id=company_id,
        url=url,
        employee_count=employee_count,
        incorporation_date=incorporation,
        sector_code=cell("nace") or None,
        region_id=cell("region_id") or None,
        latitude=latitude,
        longitude=longitude,
        innovation_score=innovation,
    )
