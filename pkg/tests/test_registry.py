import datetime as dt
import io

import pytest
from hypothesis import given, strategies as st

from techradar.registry import (
    IngestError, SectorMap, SizeClass, age_class, load_registry, sector_group,
    size_class,
)

HEADER = "company_id,url,employees,incorporated,nace,region_id,lat,lon,inno_score"


def parse(text: str):
    return load_registry(io.StringIO(text))


def test_header_only_yields_nothing():
    records, errors = parse(HEADER + "\n")
    assert records == [] and errors == []


def test_bad_scheme_is_rejected_with_row_number():
    records, errors = parse(HEADER + "\nc1,ftp://x.de,,,,,,,\n")
    assert records == []
    assert len(errors) == 1
    assert errors[0].row == 2
    assert errors[0].reason == "scheme"


def test_fixture_with_one_bad_latitude():
    rows = [
        HEADER,
        "c1,https://a.de,5,2015-03-01,C26,R1,48.1,11.5,0.7",
        "c2,https://b.de,,,,R1,,,",
        "c3,https://c.de,12,2001-01-01,G46,R2,95,11.5,0.2",
        "c4,http://d.de,250,1999-12-31,C2211,R2,-48.0,-11.0,1.0",
    ]
    records, errors = parse("\n".join(rows) + "\n")
    assert [r.company_id for r in records] == ["c1", "c2", "c4"]
    assert len(errors) == 1
    assert errors[0].row == 4 and errors[0].reason == "latitude"


def test_duplicate_company_id_flags_later_row():
    text = HEADER + "\nc1,https://a.de,,,,,,,\nc1,https://b.de,,,,,,,\n"
    records, errors = parse(text)
    assert [r.company_id for r in records] == ["c1"]
    assert errors[0].row == 3 and errors[0].reason == "duplicate company_id"


def test_missing_header_columns_is_fatal():
    with pytest.raises(IngestError):
        parse("company_id,url\nc1,https://a.de\n")


def test_determinism_identical_bytes():
    text = HEADER + "\nc1,https://a.de,5,,C26,R1,48.1,11.5,0.5\nc2,ftp://x,,,,,,,\n"
    assert parse(text) == parse(text)


def test_out_of_range_inno_score_rejected():
    _, errors = parse(HEADER + "\nc1,https://a.de,,,,,,,1.5\n")
    assert errors[0].reason == "inno_score"


@pytest.mark.parametrize(
    "count,expected",
    [
        (0, SizeClass.UNKNOWN),
        (1, SizeClass.MICRO),
        (9, SizeClass.MICRO),
        (10, SizeClass.SMALL),
        (49, SizeClass.SMALL),
        (50, SizeClass.MEDIUM),
        (249, SizeClass.MEDIUM),
        (250, SizeClass.LARGE),
        (251, SizeClass.LARGE),
        (None, SizeClass.UNKNOWN),
    ],
)
def test_size_class_edges(count, expected):
    assert size_class(count) is expected


@given(st.integers(min_value=0, max_value=10**7))
def test_size_class_is_total(n):
    assert size_class(n) in set(SizeClass)


REF = dt.date(2021, 5, 1)


def test_age_zero_lands_in_youngest_bucket():
    assert age_class(REF, REF) == 1


def test_very_old_company_lands_in_open_bucket():
    assert age_class(dt.date(1821, 5, 1), REF) == 6


def test_absent_and_future_dates_are_unknown():
    assert age_class(None, REF) is None
    assert age_class(dt.date(2030, 1, 1), REF) is None


def test_age_edges_partition():
    # edges 2/5/10/20/50: each boundary age belongs to the lower bucket
    for age, bucket in [(2, 1), (3, 2), (5, 2), (6, 3), (10, 3), (11, 4), (20, 4), (21, 5), (50, 5), (51, 6)]:
        inc = dt.date(REF.year - age, 1, 1)
        assert age_class(inc, REF) == bucket, age


@pytest.fixture(scope="module")
def sector_map():
    from techradar.config import RegistryConfig

    return SectorMap.load(RegistryConfig().sector_map_path)


def test_sector_map_has_31_groups(sector_map):
    assert len(sector_map.groups) == 31


def test_c26_maps_to_electronics_optics(sector_map):
    group = sector_group("C26", sector_map)
    assert group is not None and group.name == "Electronics / optics"


def test_prefix_rule_c261_same_group_as_c26(sector_map):
    assert sector_group("C261", sector_map) == sector_group("C26", sector_map)
    assert sector_group("C26.1", sector_map) == sector_group("C26", sector_map)


def test_unmapped_code_is_unknown(sector_map):
    assert sector_group("ZZZ", sector_map) is None
    assert sector_group(None, sector_map) is None


def test_sector_group_is_pure(sector_map):
    assert sector_group("C2211", sector_map) == sector_group("C2211", sector_map)


def test_mapped_plus_unknown_covers_everything(sector_map):
    codes = ["C26", "C2211", "G46", "ZZZ", None, "A012", "S94"]
    mapped = [sector_group(c, sector_map) for c in codes]
    assert sum(g is not None for g in mapped) + sum(g is None for g in mapped) == len(codes)


def test_load_registry_accepts_byte_streams():
    raw = (HEADER + "\nc1,https://a.de,5,,C26,R1,48.1,11.5,0.5\n").encode("utf-8")
    records, errors = load_registry(io.BytesIO(raw))
    assert [r.company_id for r in records] == ["c1"] and errors == []


def test_load_registry_from_path(tmp_path):
    path = tmp_path / "reg.csv"
    path.write_text(HEADER + "\nc9,https://x.de,,,,,,,\n", encoding="utf-8")
    records, _ = load_registry(path)
    assert records[0].company_id == "c9"
