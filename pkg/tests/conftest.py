import json
import random
from pathlib import Path

import numpy as np
import pytest

from techradar.classifier import FINAL_LABELS, LabeledPoint


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    report = outcome.get_result()
    if report.when != "call":
        return
    marker = item.get_closest_marker("criterion")
    if marker:
        num, desc = marker.args
        status = "PASS" if report.passed else "FAIL"
        capman = item.config.pluginmanager.getplugin("capturemanager")
        if capman:
            with capman.global_and_fixture_disabled():
                print(f"[acceptance] criterion {num:02d} {status}: {desc}")
        else:
            print(f"[acceptance] criterion {num:02d} {status}: {desc}")


def make_blobs(
    n_per_class: int,
    d: int,
    informative: int = 16,
    seed: int = 0,
    centers_seed: int | None = None,
    separation: float = 6.0,
    id_prefix: str = "pt",
):
    """Well-separated Gaussian blobs, one per final label; the class
    signal lives in the first `informative` dimensions only. Pass the
    same centers_seed to draw train/test splits from one distribution."""
    rng = np.random.default_rng(seed)
    centers_rng = np.random.default_rng(seed if centers_seed is None else centers_seed)
    centers = centers_rng.normal(0.0, 1.0, size=(len(FINAL_LABELS), informative))
    centers *= separation / max(1e-9, np.linalg.norm(centers, axis=1).mean())
    points = []
    counter = 0
    for label_idx, label in enumerate(FINAL_LABELS):
        base = np.zeros(d)
        base[:informative] = centers[label_idx]
        for _ in range(n_per_class):
            vec = base + rng.normal(0.0, 1.0, size=d)
            points.append(
                LabeledPoint(
                    point_id=f"{id_prefix}{counter:06d}",
                    vector=vec,
                    initial_label=label,
                    final_label=label,
                )
            )
            counter += 1
    order = rng.permutation(len(points))
    return [points[i] for i in order]


@pytest.fixture
def blob_data():
    return make_blobs(200, 16, informative=16, seed=11)


PAGE_TEMPLATE = """<html><head><title>{name}</title></head><body>
<nav class="main-nav"><ul><li><a href="/">Home</a></li><li><a href="/leistungen.html">Leistungen</a></li></ul></nav>
<header><h1>{name}</h1></header>
{body}
<footer><p>Impressum · {name} · 3D-Druck</p></footer>
</body></html>"""


def build_archive_site(
    directory: Path,
    host: str,
    company_id: str,
    paragraphs_by_page: dict[str, list[str]],
    extra_entries: list[dict] | None = None,
) -> list[dict]:
    """Write one site's pages + manifest rows into an archive directory.

    paragraphs_by_page maps a path ("", "leistungen.html", ...) to the
    content paragraphs of that page. Every page links to every other
    page of the site.
    """
    entries = []
    pages = sorted(paragraphs_by_page)
    for path in pages:
        url = f"https://{host}/{path}"
        links = "".join(
            f'<p><a href="https://{host}/{other}">{other or "home"}</a></p>'
            for other in pages
            if other != path
        )
        body = "".join(f"<p>{p}</p>" for p in paragraphs_by_page[path]) + links
        html = PAGE_TEMPLATE.format(name=company_id, body=body)
        filename = f"{company_id}_{path.replace('/', '_') or 'index'}.html"
        (directory / filename).write_text(html, encoding="utf-8")
        entries.append({"url": url, "file": filename, "status": 200})
    if extra_entries:
        entries.extend(extra_entries)
    return entries


def write_archive(directory: Path, entries: list[dict]) -> Path:
    manifest = directory / "manifest.ndjson"
    with open(manifest, "w", encoding="utf-8") as fh:
        for entry in entries:
            fh.write(json.dumps(entry) + "\n")
    return manifest


KEYWORD_SNIPPETS = [
    "Wir bieten professionellen 3D-Druck für Prototypen und Kleinserien.",
    "Unsere additive Fertigung umfasst Lasersintern und Stereolithografie.",
    "Beratung und Schulung rund um additive manufacturing Verfahren.",
    "Verkauf von Materialien für powder bed fusion Anlagen.",
    "Aktuelle Informationen über 3D printing Technologien und Trends.",
    "Individuelle Fertigung im selektives Laserschmelzen Verfahren.",
]
PLAIN_SNIPPETS = [
    "Unser Unternehmen wurde vor vielen Jahren gegründet.",
    "Wir liefern zuverlässig in ganz Europa.",
    "Kontaktieren Sie unser Team für ein Angebot.",
    "Qualität und Präzision stehen bei uns an erster Stelle.",
]


@pytest.fixture
def fixture_corpus(tmp_path):
    """50 companies with archived 3-page sites; half mention keywords."""
    return build_fixture_corpus(tmp_path, n_sites=50, seed=5)


def build_fixture_corpus(base: Path, n_sites: int, seed: int) -> dict:
    rng = random.Random(seed)
    archive = base / "archive"
    archive.mkdir(parents=True, exist_ok=True)
    entries: list[dict] = []
    csv_rows = ["company_id,url,employees,incorporated,nace,region_id,lat,lon,inno_score"]
    nace_pool = ["C26", "C2221", "C28", "G46", "J62", "M71", "C25", "S94"]
    regions = ["R01", "R02", "R03", "R04", "R05"]
    for i in range(n_sites):
        company_id = f"co{i:03d}"
        host = f"www.firma{i:03d}.de"
        engaged = i % 2 == 0
        pages: dict[str, list[str]] = {}
        for page_idx, path in enumerate(["", "leistungen.html", "ueber-uns.html"]):
            paragraphs = [rng.choice(PLAIN_SNIPPETS)]
            if engaged and page_idx < 2:
                paragraphs.append(KEYWORD_SNIPPETS[(i + page_idx) % len(KEYWORD_SNIPPETS)])
            paragraphs.append(rng.choice(PLAIN_SNIPPETS))
            pages[path] = paragraphs
        entries.extend(build_archive_site(archive, host, company_id, pages))
        region = regions[i % len(regions)]
        lat = 48.0 + (i % 10) * 0.05 + rng.random() * 0.01
        lon = 11.0 + (i // 10) * 0.05 + rng.random() * 0.01
        employees = rng.choice([3, 12, 60, 300, ""])
        incorporated = rng.choice(["2018-04-01", "2005-06-15", "1995-01-20", ""])
        inno = round(rng.random(), 2)
        csv_rows.append(
            f"{company_id},https://{host}/,{employees},{incorporated},"
            f"{nace_pool[i % len(nace_pool)]},{region},{lat:.4f},{lon:.4f},{inno}"
        )
    write_archive(archive, entries)
    csv_path = base / "companies.csv"
    csv_path.write_text("\n".join(csv_rows) + "\n", encoding="utf-8")

    regions_geojson = {
        "type": "FeatureCollection",
        "features": [
            {
                "type": "Feature",
                "properties": {"region_id": r},
                "geometry": {
                    "type": "Polygon",
                    "coordinates": [[
                        [11.0 + j * 0.1, 48.0], [11.1 + j * 0.1, 48.0],
                        [11.1 + j * 0.1, 48.5], [11.0 + j * 0.1, 48.5],
                        [11.0 + j * 0.1, 48.0],
                    ]],
                },
            }
            for j, r in enumerate(regions)
        ],
    }
    regions_path = base / "regions.geojson"
    regions_path.write_text(json.dumps(regions_geojson), encoding="utf-8")
    return {
        "archive": archive,
        "csv": csv_path,
        "regions": regions_path,
        "n_sites": n_sites,
    }
