import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from techradar.aggregator import CompanyLabel
from techradar.geo import (
    HeatGrid, UNASSIGNED_REGION, heat_grid, hotspots_geojson, region_centroids,
    regional_stats, regions_geojson, top_k_hotspots, type_layer_geojson,
)
from techradar.registry import CompanyRecord


def company(company_id, region=None, lat=None, lon=None):
    return CompanyRecord(
        company_id=company_id, url="https://a.de", region_id=region,
        latitude=lat, longitude=lon,
    )


def label(company_id, lab="Service"):
    return CompanyLabel(company_id, lab, {lab: 1}, 1.0)


# --- regional stats -----------------------------------------------------


def test_simple_intensity():
    companies = [company(f"c{i}", region="R1") for i in range(10)]
    labels = [label("c0"), label("c1")]
    stats = regional_stats(companies, labels)
    assert len(stats) == 1
    assert stats[0].total_firms == 10 and stats[0].engaged_firms == 2
    assert stats[0].intensity == pytest.approx(0.2)


FIVE_REGION_FIXTURE = [
    # region, total, engaged (labels alternate Service/Manufacturer)
    ("R1", 10, 2),
    ("R2", 40, 2),
    ("R3", 35, 7),
    ("R4", 50, 10),
    ("R5", 30, 6),
]


def five_region_data():
    companies, labels = [], []
    i = 0
    for region, total, engaged in FIVE_REGION_FIXTURE:
        for j in range(total):
            cid = f"c{i:04d}"
            companies.append(company(cid, region=region))
            if j < engaged:
                labels.append(label(cid, "Service" if j % 2 else "Manufacturer"))
            i += 1
    return companies, labels


def test_five_region_fixture_exact():
    companies, labels = five_region_data()
    stats = {s.region_id: s for s in regional_stats(companies, labels)}
    # hand-computed table
    assert stats["R1"].intensity == pytest.approx(2 / 10)
    assert stats["R2"].intensity == pytest.approx(2 / 40)
    assert stats["R3"].intensity == pytest.approx(7 / 35)
    assert stats["R4"].intensity == pytest.approx(10 / 50)
    assert stats["R5"].intensity == pytest.approx(6 / 30)
    assert sum(s.engaged_firms for s in stats.values()) == len(labels)
    for s in stats.values():
        assert sum(s.per_type.values()) == s.engaged_firms
        assert s.engaged_firms <= s.total_firms
        assert 0.0 <= s.intensity <= 1.0


def test_unassigned_region_sentinel():
    companies = [company("c0"), company("c1", region="R1")]
    stats = {s.region_id: s for s in regional_stats(companies, [label("c0")])}
    assert stats[UNASSIGNED_REGION].engaged_firms == 1


def test_brute_force_recount_matches():
    import random

    rng = random.Random(3)
    companies = [company(f"c{i}", region=f"R{rng.randrange(6)}") for i in range(200)]
    labels = [label(c.company_id) for c in companies if rng.random() < 0.3]
    stats = regional_stats(companies, labels)
    engaged_ids = {l.company_id for l in labels}
    for s in stats:
        expected_total = sum(1 for c in companies if (c.region_id or UNASSIGNED_REGION) == s.region_id)
        expected_engaged = sum(
            1 for c in companies
            if (c.region_id or UNASSIGNED_REGION) == s.region_id and c.company_id in engaged_ids
        )
        assert (s.total_firms, s.engaged_firms) == (expected_total, expected_engaged)


# --- hotspots -------------------------------------------------------------


def region(region_id, total, engaged):
    from techradar.geo import RegionStats

    return RegionStats(
        region_id=region_id, total_firms=total, engaged_firms=engaged,
        per_type={}, intensity=engaged / total if total else None,
    )


def test_top_k_descending_intensity():
    stats = [region("A", 100, 10), region("B", 100, 30), region("C", 100, 20)]
    top = top_k_hotspots(stats, k=3, min_total=1)
    assert [s.region_id for s in top] == ["B", "C", "A"]


def test_top_k_tie_breaks_on_engaged_then_id():
    stats = [
        region("X", 100, 10),
        region("Y", 200, 20),  # same intensity 0.1, more engaged
        region("Z", 100, 10),  # ties X on both -> id order
    ]
    top = top_k_hotspots(stats, k=3, min_total=1)
    assert [s.region_id for s in top] == ["Y", "X", "Z"]


def test_top_k_longer_than_input_returns_all():
    stats = [region("A", 50, 5)]
    assert len(top_k_hotspots(stats, k=10, min_total=1)) == 1


def test_min_total_filters_small_regions():
    stats = [region("tiny", 3, 3), region("big", 100, 20)]
    top = top_k_hotspots(stats, k=10, min_total=30)
    assert [s.region_id for s in top] == ["big"]


def test_top_k_invariant_under_permutation():
    import random

    rng = random.Random(0)
    stats = [region(f"R{i}", 30 + i, rng.randrange(30)) for i in range(20)]
    shuffled = stats[:]
    rng.shuffle(shuffled)
    a = [s.region_id for s in top_k_hotspots(stats, k=10, min_total=30)]
    b = [s.region_id for s in top_k_hotspots(shuffled, k=10, min_total=30)]
    assert a == b


# --- heat grid --------------------------------------------------------------


BBOX = (48.0, 11.0, 48.2, 11.2)


def test_single_point_peaks_at_its_cell():
    grid = heat_grid([(48.105, 11.105)], BBOX, cell_deg=0.01, bandwidth_deg=0.01)
    r, c = np.unravel_index(np.argmax(grid.values), grid.values.shape)
    lat, lon = grid.cell_center(r, c)
    assert abs(lat - 48.105) < 0.01 and abs(lon - 11.105) < 0.01
    assert grid.values.sum() == pytest.approx(1.0, abs=1e-6)


def test_grid_deterministic():
    pts = [(48.05 + 0.001 * i, 11.05 + 0.002 * i) for i in range(50)]
    a = heat_grid(pts, BBOX, 0.01, 0.02)
    b = heat_grid(pts, BBOX, 0.01, 0.02)
    assert a.values.tobytes() == b.values.tobytes()


def test_mass_conservation_many_points():
    rng = np.random.default_rng(12)
    pts = list(zip(rng.uniform(48.0, 48.2, 500), rng.uniform(11.0, 11.2, 500)))
    grid = heat_grid(pts, BBOX, 0.01, 0.02)
    assert grid.values.sum() == pytest.approx(500.0, abs=1e-6)
    assert np.all(grid.values >= 0)


def test_out_of_bbox_points_skipped_and_counted():
    grid = heat_grid([(48.1, 11.1), (50.0, 11.1), (48.1, 13.0)], BBOX, 0.01, 0.02)
    assert grid.n_points == 1 and grid.n_skipped == 2
    assert grid.values.sum() == pytest.approx(1.0, abs=1e-9)


def test_uniform_points_wide_bandwidth_flat():
    rng = np.random.default_rng(99)
    pts = list(zip(rng.uniform(48.0, 48.2, 10_000), rng.uniform(11.0, 11.2, 10_000)))
    grid = heat_grid(pts, BBOX, 0.02, 0.05)
    interior = grid.values[2:-2, 2:-2]
    assert interior.max() / interior.min() < 3.0  # loose flatness bound


def test_grid_parameter_validation():
    with pytest.raises(ValueError):
        heat_grid([], BBOX, 0.0, 0.1)
    with pytest.raises(ValueError):
        heat_grid([], (48.2, 11.0, 48.0, 11.2), 0.01, 0.1)


def test_grid_csv_roundtrippable_header(tmp_path):
    grid = heat_grid([(48.1, 11.1)], BBOX, 0.01, 0.02)
    path = tmp_path / "heatmap.csv"
    grid.write_csv(path)
    lines = path.read_text().splitlines()
    assert lines[0].startswith("# bbox=48.0,11.0,48.2,11.2 cell_deg=0.01")
    data = np.array([[float(v) for v in line.split(",")] for line in lines[1:]])
    assert data.shape == grid.values.shape
    assert data.sum() == pytest.approx(1.0, abs=1e-9)


# --- geojson -----------------------------------------------------------------


GEOM = {"type": "Polygon", "coordinates": [[[11, 48], [11.1, 48], [11.1, 48.1], [11, 48.1], [11, 48]]]}


def test_empty_stats_empty_collection():
    doc = regions_geojson([], {})
    assert doc == {"type": "FeatureCollection", "features": []}


def test_single_region_feature_with_intensity():
    stats = [region("R1", 10, 2)]
    doc = regions_geojson(stats, {"R1": GEOM})
    assert len(doc["features"]) == 1
    feature = doc["features"][0]
    assert feature["properties"]["intensity"] == pytest.approx(0.2)
    assert feature["geometry"] == GEOM


def test_missing_geometry_skipped(caplog):
    stats = [region("R1", 10, 2), region("R2", 10, 1)]
    doc = regions_geojson(stats, {"R1": GEOM})
    assert len(doc["features"]) == 1


def test_centroid_fallback():
    stats = [region("R1", 10, 2)]
    doc = regions_geojson(stats, {}, centroids={"R1": (48.05, 11.05)})
    assert doc["features"][0]["geometry"]["type"] == "Point"
    assert doc["features"][0]["geometry"]["coordinates"] == [11.05, 48.05]


def test_top10_layer_ranks():
    stats = [region(f"R{i:02d}", 100, 100 - i) for i in range(15)]
    top = top_k_hotspots(stats, k=10, min_total=30)
    doc = hotspots_geojson(top, {f"R{i:02d}": GEOM for i in range(15)})
    assert [f["properties"]["rank"] for f in doc["features"]] == list(range(1, 11))
    assert len(doc["features"]) == 10


def test_type_layer_points():
    companies = [company("c0", region="R1", lat=48.0, lon=11.0), company("c1", region="R1", lat=48.1, lon=11.1)]
    labels = [label("c0", "Manufacturer"), label("c1", "Service")]
    doc = type_layer_geojson("Manufacturer", companies, labels)
    assert len(doc["features"]) == 1
    assert doc["features"][0]["properties"]["company_id"] == "c0"


def test_region_centroids_mean():
    companies = [company("c0", region="R1", lat=48.0, lon=11.0), company("c1", region="R1", lat=48.2, lon=11.2)]
    centroids = region_centroids(companies)
    assert centroids["R1"] == (pytest.approx(48.1), pytest.approx(11.1))
