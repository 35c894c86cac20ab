"""Stage orchestration with a persisted run manifest.

Each stage reads and writes NDJSON/CSV/GeoJSON artifacts under the data
directory; the manifest records input/output digests, the config
snapshot, and seeds, so identical inputs are skippable on --resume and
every artifact is traceable to what produced it.
"""

from __future__ import annotations

import datetime as dt
import logging
import uuid
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Optional

import numpy as np

from . import aggregator, classifier, geo
from .config import Config
from .embedder import Embedder
from .extractor import (
    DataPoint, KeywordMatcher, extract_page, filter_data_points, load_lexicon,
)
from .fetcher import (
    ArchiveTransport, CrawlPolicy, HostThrottle, LiveTransport, Transport, crawl_site,
)
from .jsonio import (
    file_digest, obj_digest, read_ndjson, write_json_atomic, write_ndjson,
)
from .registry import CompanyRecord, SectorMap, load_registry

log = logging.getLogger(__name__)

MANIFEST_NAME = "manifest.json"

# artifact file -> stage that produces it (used for error messages)
PRODUCERS = {
    "registry.ndjson": "ingest",
    "pages.ndjson": "fetch",
    "points.ndjson": "extract",
    "model.json": "train",
    "predictions.ndjson": "predict",
    "company_labels.ndjson": "aggregate",
}

STAGE_ORDER = ["ingest", "fetch", "extract", "train", "predict", "aggregate", "geo"]


class PipelineError(Exception):
    pass


@dataclass
class RunContext:
    cfg: Config
    data_dir: Path
    csv_path: Optional[Path] = None
    archive_dir: Optional[Path] = None
    live: bool = False
    labels_path: Optional[Path] = None
    regions_path: Optional[Path] = None
    lexicon_path: Optional[Path] = None
    resume: bool = False
    reference_date: Optional[dt.date] = None
    vectors_path: Optional[Path] = None
    pages_in: Optional[Path] = None
    points_in: Optional[Path] = None
    points_out: Optional[Path] = None
    report_out: Optional[Path] = None
    model_file: Optional[Path] = None
    predictions_out: Optional[Path] = None
    company_labels_in: Optional[Path] = None
    registry_in: Optional[Path] = None
    maps_dir: Optional[Path] = None

    def artifact(self, name: str) -> Path:
        return self.data_dir / name

    def lexicon_file(self) -> Path:
        return self.lexicon_path or self.cfg.pipeline.lexicon_path


def _require(ctx: RunContext, *names: str) -> list[Path]:
    paths = []
    for name in names:
        path = ctx.artifact(name)
        if not path.exists():
            producer = PRODUCERS.get(name)
            hint = f" (produced by {producer})" if producer else ""
            raise PipelineError(f"requires {name}{hint}")
        paths.append(path)
    return paths


# --- manifest ---------------------------------------------------------


def _load_manifest(ctx: RunContext) -> dict:
    path = ctx.artifact(MANIFEST_NAME)
    if path.exists():
        import json

        with open(path, encoding="utf-8") as fh:
            return json.load(fh)
    return {"run_id": uuid.uuid4().hex, "created": _now(), "stages": []}


def _now() -> str:
    return dt.datetime.now(dt.timezone.utc).isoformat()


def _digests(paths: list[Path]) -> dict[str, str]:
    return {p.name: file_digest(p) for p in paths if p.exists()}


def _record_stage(
    ctx: RunContext,
    name: str,
    inputs: list[Path],
    outputs: list[Path],
    seeds: Optional[dict] = None,
    extra: Optional[dict] = None,
) -> None:
    manifest = _load_manifest(ctx)
    manifest["stages"] = [s for s in manifest["stages"] if s["stage"] != name]
    entry = {
        "stage": name,
        "finished": _now(),
        "inputs": _digests(inputs),
        "outputs": _digests(outputs),
        "config_digest": obj_digest(ctx.cfg.snapshot()),
        "seeds": seeds or {},
    }
    if extra:
        entry.update(extra)
    manifest["stages"].append(entry)
    write_json_atomic(ctx.artifact(MANIFEST_NAME), manifest)


def _can_skip(ctx: RunContext, name: str, inputs: list[Path], outputs: list[Path]) -> bool:
    if not ctx.resume:
        return False
    manifest = _load_manifest(ctx)
    for entry in manifest["stages"]:
        if entry["stage"] != name:
            continue
        if entry.get("config_digest") != obj_digest(ctx.cfg.snapshot()):
            return False
        if entry.get("inputs") != _digests(inputs):
            return False
        if not all(p.exists() for p in outputs):
            return False
        if entry.get("outputs") != _digests(outputs):
            return False
        return True
    return False


# --- stages -----------------------------------------------------------


def stage_ingest(ctx: RunContext) -> None:
    if ctx.csv_path is None or not Path(ctx.csv_path).exists():
        raise PipelineError("requires a registry CSV (--csv)")
    inputs = [Path(ctx.csv_path)]
    outputs = [ctx.artifact("registry.ndjson"), ctx.artifact("ingest_errors.ndjson")]
    if _can_skip(ctx, "ingest", inputs, outputs):
        log.info("ingest: unchanged, skipping")
        return
    records, errors = load_registry(ctx.csv_path)
    write_ndjson(outputs[0], (r.to_json() for r in records))
    write_ndjson(
        outputs[1],
        ({"row": e.row, "reason": e.reason, "detail": e.detail} for e in errors),
    )
    log.info("ingest: %d records, %d rejected rows", len(records), len(errors))
    _record_stage(ctx, "ingest", inputs, outputs, extra={"records": len(records), "errors": len(errors)})


def _transport(ctx: RunContext) -> Transport:
    if ctx.archive_dir is not None:
        return ArchiveTransport(ctx.archive_dir)
    if ctx.live:
        from . import __version__

        return LiveTransport(version=__version__)
    raise PipelineError("fetch needs --archive <dir> or --live")


def stage_fetch(ctx: RunContext) -> None:
    (registry_path,) = _require(ctx, "registry.ndjson")
    inputs = [registry_path]
    if ctx.archive_dir is not None:
        inputs.append(Path(ctx.archive_dir) / "manifest.ndjson")
    # the crawl log is diagnostics (wall-clock timings), not a tracked artifact
    outputs = [ctx.artifact("pages.ndjson")]
    log_path = ctx.artifact("crawl_log.ndjson")
    if _can_skip(ctx, "fetch", inputs, outputs):
        log.info("fetch: unchanged, skipping")
        return
    companies = [CompanyRecord.from_json(d) for d in read_ndjson(registry_path)]
    fc = ctx.cfg.fetcher
    policy = CrawlPolicy(
        max_depth=fc.max_depth,
        max_pages_per_site=fc.max_pages_per_site,
        per_host_delay_ms=fc.per_host_delay_ms if ctx.live else 0,
        global_concurrency=fc.global_concurrency,
        obey_robots=fc.obey_robots,
        timeout_ms=fc.timeout_ms,
    )
    transport = _transport(ctx)
    throttle = HostThrottle(policy.per_host_delay_ms)

    def crawl(company: CompanyRecord):
        return crawl_site(company, policy, transport, throttle)

    results = {}
    with ThreadPoolExecutor(max_workers=policy.global_concurrency) as pool:
        for company, (pages, crawl_log) in zip(companies, pool.map(crawl, companies)):
            results[company.company_id] = (pages, crawl_log)

    page_rows = []
    log_rows = []
    for company in sorted(companies, key=lambda c: c.company_id):
        pages, crawl_log = results[company.company_id]
        page_rows.extend(p.to_json() for p in pages)
        for e in crawl_log.entries:
            log_rows.append(
                {
                    "company_id": crawl_log.company_id,
                    "url": e.url,
                    "host": e.host,
                    "started_monotonic": e.started_monotonic,
                    "depth": e.depth,
                    "status": e.status,
                    "error": e.error,
                }
            )
        if crawl_log.site_error:
            log_rows.append(
                {"company_id": crawl_log.company_id, "site_error": crawl_log.site_error}
            )
    write_ndjson(outputs[0], page_rows)
    write_ndjson(log_path, log_rows)
    log.info("fetch: %d pages across %d companies", len(page_rows), len(companies))
    _record_stage(ctx, "fetch", inputs, outputs, extra={"pages": len(page_rows)})


def stage_extract(ctx: RunContext) -> None:
    if ctx.pages_in is not None:
        if not ctx.pages_in.exists():
            raise PipelineError(f"requires {ctx.pages_in} (produced by fetch)")
        pages_path = ctx.pages_in
    else:
        (pages_path,) = _require(ctx, "pages.ndjson")
    lexicon_path = ctx.lexicon_file()
    inputs = [pages_path, Path(lexicon_path)]
    points_out = ctx.points_out or ctx.artifact("points.ndjson")
    outputs = [
        points_out,
        points_out.with_name("dropped_" + points_out.name),
        ctx.report_out or ctx.artifact("filter_report.json"),
    ]
    if _can_skip(ctx, "extract", inputs, outputs):
        log.info("extract: unchanged, skipping")
        return
    from .fetcher import WebPage

    lexicon = load_lexicon(lexicon_path)
    matcher = KeywordMatcher(lexicon)
    all_points: list[DataPoint] = []
    n_pages = 0
    for row in read_ndjson(pages_path):
        page = WebPage.from_json(row)
        all_points.extend(extract_page(page, lexicon, matcher))
        n_pages += 1
    kept, dropped, report = filter_data_points(all_points, lexicon)
    write_ndjson(outputs[0], (p.to_json() for p in kept))
    write_ndjson(outputs[1], (p.to_json() for p in dropped))
    doc = report.to_json()
    doc["pages"] = n_pages
    doc["raw_points"] = len(all_points)
    write_json_atomic(outputs[2], doc)
    log.info(
        "extract: %d raw points -> %d kept, %d dropped", len(all_points), report.kept, report.dropped
    )
    _record_stage(ctx, "extract", inputs, outputs, extra={"kept": report.kept})


def _build_embedder(ctx: RunContext, lexicon_path: Path) -> Embedder:
    lexicon = load_lexicon(lexicon_path)
    sector_map = SectorMap.load(ctx.cfg.registry.sector_map_path)
    return Embedder(
        ctx.cfg.embedder,
        sector_map,
        reference_date=ctx.reference_date,
        age_edges=ctx.cfg.registry.age_class_edges,
        keyword_sources={kw.surface: kw.source for kw in lexicon},
    )


def _load_points(path: Path) -> dict[str, DataPoint]:
    return {row["point_id"]: DataPoint.from_json(row) for row in read_ndjson(path)}


def _load_companies(path: Path) -> dict[str, CompanyRecord]:
    return {row["company_id"]: CompanyRecord.from_json(row) for row in read_ndjson(path)}


def _encode_points(
    ctx: RunContext,
    point_ids: list[str],
    points: dict[str, DataPoint],
    companies: dict[str, CompanyRecord],
) -> np.ndarray:
    embedder = _build_embedder(ctx, ctx.lexicon_file())
    cache: dict[str, list[float]] = {}
    if ctx.vectors_path is not None and ctx.vectors_path.exists():
        for row in read_ndjson(ctx.vectors_path):
            if len(row["vector"]) == embedder.cfg.dim:
                cache[row["point_id"]] = row["vector"]
    vectors = np.empty((len(point_ids), embedder.cfg.dim), dtype=np.float64)
    fresh = 0
    for i, pid in enumerate(point_ids):
        if pid in cache:
            vectors[i] = cache[pid]
            continue
        point = points.get(pid)
        if point is None:
            raise PipelineError(f"point {pid} not found in points.ndjson")
        company = companies.get(point.company_id)
        if company is None:
            raise PipelineError(f"company {point.company_id} not found in registry.ndjson")
        vectors[i] = embedder.encode(point, company).values
        cache[pid] = vectors[i].tolist()
        fresh += 1
    if ctx.vectors_path is not None and fresh:
        write_ndjson(
            ctx.vectors_path,
            ({"point_id": pid, "vector": vec} for pid, vec in sorted(cache.items())),
        )
    return vectors


def stage_train(ctx: RunContext) -> None:
    points_path, registry_path = _require(ctx, "points.ndjson", "registry.ndjson")
    if ctx.labels_path is None or not Path(ctx.labels_path).exists():
        raise PipelineError("requires a labels NDJSON (--labels; export one with the round/serve workflow)")
    inputs = [Path(ctx.labels_path), points_path, registry_path, Path(ctx.lexicon_file())]
    outputs = [ctx.model_file or ctx.artifact("model.json")]
    if _can_skip(ctx, "train", inputs, outputs):
        log.info("train: unchanged, skipping")
        return
    rows = list(read_ndjson(ctx.labels_path))
    if not rows:
        raise PipelineError("labels file is empty")
    points = _load_points(points_path)
    companies = _load_companies(registry_path)

    labeled: list[classifier.LabeledPoint] = []
    point_ids = []
    metas = []
    for row in rows:
        initial = row.get("initial_label") or row.get("final_label")
        if not initial:
            raise PipelineError(f"label row without a label: {row}")
        final = classifier.map_initial_to_final(initial)
        if final is None:
            continue  # Others: dropped from training
        point_ids.append(row["point_id"])
        metas.append((initial, final, row.get("annotator_id", ""), int(row.get("round", 0))))
    vectors = _encode_points(ctx, point_ids, points, companies)
    for pid, vec, (initial, final, annotator, rnd) in zip(point_ids, vectors, metas):
        labeled.append(classifier.LabeledPoint(pid, vec, initial, final, annotator, rnd))

    cc = ctx.cfg.classifier
    ensemble = classifier.train_ensemble(labeled, cc)
    classifier.save_ensemble(ensemble, outputs[0])
    log.info("train: ensemble of %d models on %d points", ensemble.n_models, len(labeled))
    _record_stage(
        ctx, "train", inputs, outputs,
        seeds={"master_seed": cc.master_seed},
        extra={"training_points": len(labeled)},
    )


def stage_predict(ctx: RunContext) -> None:
    if ctx.model_file is not None:
        if not ctx.model_file.exists():
            raise PipelineError(f"requires {ctx.model_file} (produced by train)")
        model_path = ctx.model_file
        points_path, registry_path = _require(ctx, "points.ndjson", "registry.ndjson")
    else:
        model_path, points_path, registry_path = _require(
            ctx, "model.json", "points.ndjson", "registry.ndjson"
        )
    if ctx.points_in is not None:
        if not ctx.points_in.exists():
            raise PipelineError(f"requires {ctx.points_in} (produced by extract)")
        points_path = ctx.points_in
    inputs = [model_path, points_path, registry_path]
    outputs = [ctx.predictions_out or ctx.artifact("predictions.ndjson")]
    if _can_skip(ctx, "predict", inputs, outputs):
        log.info("predict: unchanged, skipping")
        return
    ensemble = classifier.load_ensemble(model_path)
    points = _load_points(points_path)
    companies = _load_companies(registry_path)
    point_ids = sorted(points.keys())
    rows = []
    if point_ids:
        vectors = _encode_points(ctx, point_ids, points, companies)
        predictions = classifier.predict_batch(ensemble, vectors, point_ids)
        for pred in predictions:
            point = points[pred.point_id]
            row = pred.to_json()
            row["company_id"] = point.company_id
            row["page_url"] = point.page_url
            rows.append(row)
    write_ndjson(outputs[0], rows)
    log.info("predict: %d predictions", len(rows))
    _record_stage(ctx, "predict", inputs, outputs, extra={"predictions": len(rows)})


def stage_aggregate(ctx: RunContext) -> None:
    predictions_path, registry_path = _require(ctx, "predictions.ndjson", "registry.ndjson")
    inputs = [predictions_path, registry_path]
    tables = ctx.artifact("tables")
    outputs = [
        ctx.artifact("company_labels.ndjson"),
        tables / "type_shares.csv",
        tables / "age_x_type.csv",
        tables / "size_x_type.csv",
        tables / "sector_x_type.csv",
        tables / "innovation_x_type.csv",
    ]
    if _can_skip(ctx, "aggregate", inputs, outputs):
        log.info("aggregate: unchanged, skipping")
        return
    companies = _load_companies(registry_path)
    by_company: dict[str, list[classifier.Prediction]] = {}
    pages_by_point: dict[str, str] = {}
    for row in read_ndjson(predictions_path):
        pred = classifier.Prediction(
            point_id=row["point_id"],
            votes=row.get("votes", {}),
            label=row["label"],
            confidence=row["confidence"],
        )
        by_company.setdefault(row["company_id"], []).append(pred)
        if "page_url" in row:
            pages_by_point[row["point_id"]] = row["page_url"]

    labels: list[aggregator.CompanyLabel] = []
    for company_id in sorted(by_company):
        cl = aggregator.classify_company(
            by_company[company_id],
            min_confidence=ctx.cfg.aggregator.min_confidence,
            company_id=company_id,
            pages_by_point=pages_by_point,
        )
        if cl is not None:
            labels.append(cl)
    write_ndjson(outputs[0], (cl.to_json() for cl in labels))

    sector_map = SectorMap.load(ctx.cfg.registry.sector_map_path)
    company_list = list(companies.values())
    ref = ctx.reference_date or dt.date.today()
    edges = ctx.cfg.registry.age_class_edges
    aggregator.type_shares(labels).write_csv(outputs[1])
    aggregator.cross_tab(labels, "AgeClass", company_list, sector_map, ref, edges).write_csv(outputs[2])
    aggregator.cross_tab(labels, "SizeClass", company_list, sector_map, ref, edges).write_csv(outputs[3])
    aggregator.cross_tab(labels, "SectorGroup", company_list, sector_map, ref, edges).write_csv(outputs[4])
    aggregator.write_innovation_csv(
        aggregator.innovation_validation(
            labels, company_list, ctx.cfg.aggregator.innovation_threshold
        ),
        outputs[5],
    )
    log.info("aggregate: %d engaged companies", len(labels))
    _record_stage(ctx, "aggregate", inputs, outputs, extra={"engaged": len(labels)})


def stage_geo(ctx: RunContext) -> None:
    if ctx.company_labels_in is not None or ctx.registry_in is not None:
        labels_path = ctx.company_labels_in or ctx.artifact("company_labels.ndjson")
        registry_path = ctx.registry_in or ctx.artifact("registry.ndjson")
        for path, producer in ((labels_path, "aggregate"), (registry_path, "ingest")):
            if not path.exists():
                raise PipelineError(f"requires {path} (produced by {producer})")
    else:
        labels_path, registry_path = _require(ctx, "company_labels.ndjson", "registry.ndjson")
    inputs = [labels_path, registry_path]
    if ctx.regions_path is not None:
        inputs.append(Path(ctx.regions_path))
    maps_dir = ctx.maps_dir or ctx.artifact("maps")
    outputs = [
        maps_dir / "regions.geojson",
        maps_dir / "hotspots.geojson",
        maps_dir / "heatmap.csv",
    ] + [maps_dir / f"type_{label.lower()}.geojson" for label in classifier.FINAL_LABELS]
    if _can_skip(ctx, "geo", inputs, outputs):
        log.info("geo: unchanged, skipping")
        return
    companies = list(_load_companies(registry_path).values())
    labels = [aggregator.CompanyLabel.from_json(d) for d in read_ndjson(labels_path)]

    stats = geo.regional_stats(companies, labels)
    geometries = (
        geo.load_region_geometries(ctx.regions_path) if ctx.regions_path else {}
    )
    centroids = geo.region_centroids(companies)
    gc = ctx.cfg.geo
    write_json_atomic(outputs[0], geo.regions_geojson(stats, geometries, centroids))
    hotspots = geo.top_k_hotspots(stats, gc.hotspot_k, gc.hotspot_min_total)
    write_json_atomic(outputs[1], geo.hotspots_geojson(hotspots, geometries, centroids))

    engaged_ids = {cl.company_id for cl in labels}
    coords = [
        (c.latitude, c.longitude)
        for c in companies
        if c.company_id in engaged_ids and c.latitude is not None and c.longitude is not None
    ]
    if coords:
        lats = [lat for lat, _ in coords]
        lons = [lon for _, lon in coords]
        pad = 2 * gc.heat_cell_deg
        bbox = (min(lats) - pad, min(lons) - pad, max(lats) + pad, max(lons) + pad)
        grid = geo.heat_grid(coords, bbox, gc.heat_cell_deg, gc.heat_bandwidth_deg)
    else:
        grid = geo.heat_grid([], (0.0, 0.0, 1.0, 1.0), 1.0, 0.5)
    grid.write_csv(outputs[2])

    for label, path in zip(classifier.FINAL_LABELS, outputs[3:]):
        write_json_atomic(path, geo.type_layer_geojson(label, companies, labels))
    log.info("geo: %d regions, %d hotspots, %d heat points", len(stats), len(hotspots), grid.n_points)
    _record_stage(ctx, "geo", inputs, outputs, extra={"regions": len(stats)})


def stage_report(ctx: RunContext) -> dict:
    """Condense manifest and key artifacts into one JSON summary."""
    manifest = _load_manifest(ctx)
    summary: dict = {"run_id": manifest.get("run_id"), "stages": {}}
    for entry in manifest["stages"]:
        summary["stages"][entry["stage"]] = {
            k: v for k, v in entry.items() if k not in ("inputs", "outputs", "stage")
        }
    report_path = ctx.artifact("report.json")
    tables = ctx.artifact("tables")
    shares_csv = tables / "type_shares.csv"
    if shares_csv.exists():
        summary["type_shares"] = shares_csv.read_text(encoding="utf-8").splitlines()
    write_json_atomic(report_path, summary)
    return summary


STAGES: dict[str, Callable[[RunContext], object]] = {
    "ingest": stage_ingest,
    "fetch": stage_fetch,
    "extract": stage_extract,
    "train": stage_train,
    "predict": stage_predict,
    "aggregate": stage_aggregate,
    "geo": stage_geo,
    "report": stage_report,
}


def run_stage(name: str, ctx: RunContext):
    if name not in STAGES:
        raise PipelineError(f"unknown stage {name!r}; stages: {', '.join(STAGES)}")
    ctx.data_dir.mkdir(parents=True, exist_ok=True)
    return STAGES[name](ctx)


def run_all(ctx: RunContext) -> None:
    for name in STAGE_ORDER:
        log.info("=== stage %s ===", name)
        run_stage(name, ctx)
