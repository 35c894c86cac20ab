"""Regional engagement analytics: per-region intensity, top-k hotspot
ranking, kernel-density heat grids, and GeoJSON export.

Distances are computed in decimal degrees without projection; at city
scale the distortion is acceptable and keeps the module dependency-free.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping, Optional, Sequence

import numpy as np

from .aggregator import CompanyLabel
from .classifier import FINAL_LABELS
from .registry import CompanyRecord

log = logging.getLogger(__name__)

UNASSIGNED_REGION = "(unassigned)"


@dataclass(frozen=True)
class RegionStats:
    region_id: str
    total_firms: int
    engaged_firms: int
    per_type: dict  # final label -> count
    intensity: Optional[float]  # engaged/total; None when total is 0

    def to_json(self) -> dict:
        return {
            "region_id": self.region_id,
            "total_firms": self.total_firms,
            "engaged_firms": self.engaged_firms,
            "per_type": dict(self.per_type),
            "intensity": self.intensity,
        }


def regional_stats(
    companies: Sequence[CompanyRecord], labels: Sequence[CompanyLabel]
) -> list[RegionStats]:
    """One row per region present in the registry, sorted by region id.
    Companies without a region fall into the "(unassigned)" sentinel."""
    by_company = {cl.company_id: cl for cl in labels}
    totals: dict[str, int] = {}
    engaged: dict[str, int] = {}
    per_type: dict[str, dict[str, int]] = {}
    for company in companies:
        region = company.region_id or UNASSIGNED_REGION
        totals[region] = totals.get(region, 0) + 1
        cl = by_company.get(company.company_id)
        if cl is not None:
            engaged[region] = engaged.get(region, 0) + 1
            per_type.setdefault(region, {lab: 0 for lab in FINAL_LABELS})
            per_type[region][cl.label] += 1
    out: list[RegionStats] = []
    for region in sorted(totals):
        n_total = totals[region]
        n_engaged = engaged.get(region, 0)
        out.append(
            RegionStats(
                region_id=region,
                total_firms=n_total,
                engaged_firms=n_engaged,
                per_type=per_type.get(region, {lab: 0 for lab in FINAL_LABELS}),
                intensity=n_engaged / n_total if n_total else None,
            )
        )
    return out


def top_k_hotspots(
    stats: Sequence[RegionStats], k: int = 10, min_total: int = 30
) -> list[RegionStats]:
    """Regions ranked by relative intensity (then engaged count, then id),
    eligible only above the minimum firm count."""
    if k < 1:
        raise ValueError("k must be >= 1")
    eligible = [
        s for s in stats
        if s.total_firms >= min_total and s.intensity is not None
    ]
    eligible.sort(key=lambda s: (-s.intensity, -s.engaged_firms, s.region_id))
    return eligible[:k]


@dataclass
class HeatGrid:
    lat_min: float
    lon_min: float
    lat_max: float
    lon_max: float
    cell_deg: float
    values: np.ndarray  # [rows, cols], row 0 at lat_min; cell masses
    n_points: int = 0
    n_skipped: int = 0

    @property
    def shape(self) -> tuple[int, int]:
        return self.values.shape

    def cell_center(self, row: int, col: int) -> tuple[float, float]:
        return (
            self.lat_min + (row + 0.5) * self.cell_deg,
            self.lon_min + (col + 0.5) * self.cell_deg,
        )

    def write_csv(self, path: str | Path) -> None:
        """Row-major dump; the header comment names bbox and cell size."""
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(
                f"# bbox={self.lat_min},{self.lon_min},{self.lat_max},{self.lon_max}"
                f" cell_deg={self.cell_deg} rows={self.shape[0]} cols={self.shape[1]}"
                f" points={self.n_points} skipped={self.n_skipped}\n"
            )
            for row in self.values:
                fh.write(",".join(repr(float(v)) for v in row))
                fh.write("\n")


def heat_grid(
    points: Iterable[tuple[float, float]],
    bbox: tuple[float, float, float, float],
    cell_deg: float,
    bandwidth_deg: float,
) -> HeatGrid:
    """Gaussian kernel density on a regular grid, truncated at 3 sigma.

    Each in-box point deposits unit mass, renormalized over its truncated
    in-box window, so the grid total equals the in-box point count.
    Points outside the bbox are skipped and counted.
    """
    lat_min, lon_min, lat_max, lon_max = bbox
    if cell_deg <= 0 or bandwidth_deg <= 0:
        raise ValueError("cell_deg and bandwidth_deg must be positive")
    if not (lat_max > lat_min and lon_max > lon_min):
        raise ValueError("bbox is degenerate")
    rows = max(1, math.ceil((lat_max - lat_min) / cell_deg))
    cols = max(1, math.ceil((lon_max - lon_min) / cell_deg))
    values = np.zeros((rows, cols), dtype=np.float64)

    lat_centers = lat_min + (np.arange(rows) + 0.5) * cell_deg
    lon_centers = lon_min + (np.arange(cols) + 0.5) * cell_deg
    radius = 3.0 * bandwidth_deg
    inv_two_s2 = 1.0 / (2.0 * bandwidth_deg * bandwidth_deg)

    n_points = 0
    n_skipped = 0
    for lat, lon in points:
        if not (lat_min <= lat <= lat_max and lon_min <= lon <= lon_max):
            n_skipped += 1
            continue
        n_points += 1
        r0 = max(0, int(math.floor((lat - radius - lat_min) / cell_deg)))
        r1 = min(rows, int(math.ceil((lat + radius - lat_min) / cell_deg)) + 1)
        c0 = max(0, int(math.floor((lon - radius - lon_min) / cell_deg)))
        c1 = min(cols, int(math.ceil((lon + radius - lon_min) / cell_deg)) + 1)
        dlat = lat_centers[r0:r1] - lat
        dlon = lon_centers[c0:c1] - lon
        d2 = dlat[:, None] ** 2 + dlon[None, :] ** 2
        w = np.exp(-d2 * inv_two_s2)
        w[d2 > radius * radius] = 0.0
        total = w.sum()
        if total <= 0.0:
            # point's 3-sigma disc misses every in-window cell center:
            # drop the whole mass onto the nearest cell instead
            r = min(rows - 1, max(0, int((lat - lat_min) / cell_deg)))
            c = min(cols - 1, max(0, int((lon - lon_min) / cell_deg)))
            values[r, c] += 1.0
            continue
        values[r0:r1, c0:c1] += w / total
    if n_skipped:
        log.warning("heat_grid: %d points outside bbox skipped", n_skipped)
    grid = HeatGrid(lat_min, lon_min, lat_max, lon_max, cell_deg, values)
    grid.n_points = n_points
    grid.n_skipped = n_skipped
    return grid


# --- GeoJSON ----------------------------------------------------------


def load_region_geometries(path: str | Path) -> dict[str, dict]:
    """Region geometry file: GeoJSON FeatureCollection whose features
    carry a region_id property."""
    import json

    with open(path, encoding="utf-8") as fh:
        doc = json.load(fh)
    out: dict[str, dict] = {}
    for feature in doc.get("features", []):
        region_id = (feature.get("properties") or {}).get("region_id")
        if region_id and feature.get("geometry"):
            out[str(region_id)] = feature["geometry"]
    return out


def _feature(geometry: dict, properties: dict) -> dict:
    return {"type": "Feature", "geometry": geometry, "properties": properties}


def _collection(features: list[dict]) -> dict:
    return {"type": "FeatureCollection", "features": features}


def region_centroids(companies: Sequence[CompanyRecord]) -> dict[str, tuple[float, float]]:
    """Mean company coordinates per region; fallback geometry source."""
    sums: dict[str, list[float]] = {}
    for c in companies:
        if c.latitude is None or c.longitude is None:
            continue
        region = c.region_id or UNASSIGNED_REGION
        acc = sums.setdefault(region, [0.0, 0.0, 0.0])
        acc[0] += c.latitude
        acc[1] += c.longitude
        acc[2] += 1.0
    return {
        r: (acc[0] / acc[2], acc[1] / acc[2]) for r, acc in sums.items() if acc[2] > 0
    }


def regions_geojson(
    stats: Sequence[RegionStats],
    geometries: Mapping[str, dict],
    centroids: Optional[Mapping[str, tuple[float, float]]] = None,
) -> dict:
    """Choropleth layer: one feature per region with counts and intensity.
    Regions without any geometry are skipped with a warning."""
    features = []
    for s in stats:
        geometry = geometries.get(s.region_id)
        if geometry is None and centroids and s.region_id in centroids:
            lat, lon = centroids[s.region_id]
            geometry = {"type": "Point", "coordinates": [lon, lat]}
        if geometry is None:
            log.warning("region %s has no geometry; feature skipped", s.region_id)
            continue
        features.append(
            _feature(
                geometry,
                {
                    "region_id": s.region_id,
                    "total_firms": s.total_firms,
                    "engaged_firms": s.engaged_firms,
                    "intensity": s.intensity,
                    **{f"n_{label.lower()}": s.per_type.get(label, 0) for label in FINAL_LABELS},
                },
            )
        )
    return _collection(features)


def hotspots_geojson(
    hotspots: Sequence[RegionStats],
    geometries: Mapping[str, dict],
    centroids: Optional[Mapping[str, tuple[float, float]]] = None,
) -> dict:
    """Top-k layer with 1-based rank properties."""
    features = []
    for rank, s in enumerate(hotspots, start=1):
        geometry = geometries.get(s.region_id)
        if geometry is None and centroids and s.region_id in centroids:
            lat, lon = centroids[s.region_id]
            geometry = {"type": "Point", "coordinates": [lon, lat]}
        if geometry is None:
            log.warning("hotspot region %s has no geometry; feature skipped", s.region_id)
            continue
        features.append(
            _feature(
                geometry,
                {
                    "region_id": s.region_id,
                    "rank": rank,
                    "intensity": s.intensity,
                    "engaged_firms": s.engaged_firms,
                    "total_firms": s.total_firms,
                },
            )
        )
    return _collection(features)


def type_layer_geojson(
    label: str,
    companies: Sequence[CompanyRecord],
    labels: Sequence[CompanyLabel],
) -> dict:
    """Point layer of engaged companies carrying one final type."""
    by_id = {c.company_id: c for c in companies}
    features = []
    for cl in labels:
        if cl.label != label:
            continue
        company = by_id.get(cl.company_id)
        if company is None or company.latitude is None or company.longitude is None:
            continue
        features.append(
            _feature(
                {"type": "Point", "coordinates": [company.longitude, company.latitude]},
                {
                    "company_id": company.company_id,
                    "region_id": company.region_id,
                    "label": cl.label,
                    "confidence": cl.max_confidence,
                },
            )
        )
    return _collection(features)
