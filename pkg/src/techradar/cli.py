"""Command line: one verb per pipeline stage plus the labeling workflow.

    techradar ingest    --csv companies.csv
    techradar fetch     --archive sites/ | --live
    techradar extract   --lexicon keywords.csv
    techradar round     --n 750 --annotators a,b,c,d,e --seed 7
    techradar round     --export labels.ndjson
    techradar serve     --bind 127.0.0.1:8765
    techradar train     --labels labels.ndjson --out model.json --seed 7
    techradar predict   --model model.json
    techradar aggregate --min-confidence 0.5
    techradar geo       --regions regions.geojson --out-dir maps/
    techradar report
    techradar run-all   --csv ... --archive ... --labels ...

The artifact root comes from --data-dir, TECHRADAR_DATA_DIR, or ./data.
"""

from __future__ import annotations

import argparse
import logging
import sys
from dataclasses import replace
from pathlib import Path

from .config import Config, load_config
from .jsonio import read_ndjson, write_ndjson
from .pipeline import RunContext, run_all, run_stage


def _add_common(sub: argparse.ArgumentParser) -> None:
    sub.add_argument("--data-dir", help="artifact root (default: $TECHRADAR_DATA_DIR or ./data)")
    sub.add_argument("--config", help="INI config file")
    sub.add_argument("--resume", action="store_true", help="skip stages whose inputs are unchanged")


def _add_fetch_flags(sub: argparse.ArgumentParser) -> None:
    group = sub.add_mutually_exclusive_group()
    group.add_argument("--archive", help="page archive directory (offline mode)")
    group.add_argument("--live", action="store_true", help="crawl live over HTTP")
    sub.add_argument("--max-depth", type=int)
    sub.add_argument("--max-pages", type=int)
    sub.add_argument("--delay-ms", type=int)
    sub.add_argument("--concurrency", type=int)
    sub.add_argument("--no-robots", action="store_true")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="techradar", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    commands = parser.add_subparsers(dest="command", required=True)

    p = commands.add_parser("ingest", help="load the registry CSV")
    _add_common(p)
    p.add_argument("--csv", required=True, help="registry CSV file")

    p = commands.add_parser("fetch", help="crawl company websites")
    _add_common(p)
    _add_fetch_flags(p)

    p = commands.add_parser("extract", help="match the keyword lexicon against pages")
    _add_common(p)
    p.add_argument("--lexicon", help="lexicon CSV (surface,status,source)")
    p.add_argument("--in", dest="pages_in", help="pages NDJSON (default data/pages.ndjson)")
    p.add_argument("--out", dest="points_out", help="kept points NDJSON")
    p.add_argument("--report", dest="report_out", help="filter report JSON")

    p = commands.add_parser("round", help="create a labeling round / export labels")
    _add_common(p)
    p.add_argument("--n", type=int, help="number of points to sample")
    p.add_argument("--annotators", help="comma-separated annotator ids")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--export", metavar="OUT", help="export labeled tasks as training NDJSON")
    p.add_argument("--rounds", help="restrict --export to these rounds (comma-separated)")

    p = commands.add_parser("serve", help="run the labeling HTTP service")
    _add_common(p)
    p.add_argument("--bind", default="127.0.0.1:8765", help="host:port")
    p.add_argument("--static", help="frontend bundle directory to serve at /")
    p.add_argument("--token", default="", help="require X-Auth-Token header")

    p = commands.add_parser("train", help="train the voting ensemble")
    _add_common(p)
    p.add_argument("--labels", required=True, help="labeled points NDJSON")
    p.add_argument("--vectors", help="embedding cache NDJSON")
    p.add_argument("--out", dest="model_out", help="model file (default data/model.json)")
    p.add_argument("--seed", type=int, help="ensemble master seed")

    p = commands.add_parser("predict", help="label every data point with the ensemble")
    _add_common(p)
    p.add_argument("--model", help="model file (default data/model.json)")
    p.add_argument("--in", dest="points_in", help="points NDJSON (default data/points.ndjson)")
    p.add_argument("--out", dest="predictions_out", help="predictions NDJSON")
    p.add_argument("--vectors", help="embedding cache NDJSON")

    p = commands.add_parser("aggregate", help="company labels and tabulations")
    _add_common(p)
    p.add_argument("--min-confidence", type=float, help="confidence floor for predictions")

    p = commands.add_parser("geo", help="regional stats, hotspots, heatmap, GeoJSON")
    _add_common(p)
    p.add_argument("--labels", help="company labels NDJSON (default data/company_labels.ndjson)")
    p.add_argument("--registry", help="registry NDJSON (default data/registry.ndjson)")
    p.add_argument("--regions", help="region geometries GeoJSON")
    p.add_argument("--out-dir", dest="maps_dir", help="output directory (default data/maps)")

    p = commands.add_parser("report", help="summarize the run manifest")
    _add_common(p)

    p = commands.add_parser("run-all", help="ingest through geo in one go")
    _add_common(p)
    p.add_argument("--csv", required=True)
    _add_fetch_flags(p)
    p.add_argument("--lexicon")
    p.add_argument("--labels", required=True, help="labeled points NDJSON for training")
    p.add_argument("--regions")
    p.add_argument("--seed", type=int, help="ensemble master seed")
    p.add_argument("--min-confidence", type=float)

    return parser


def _context(args: argparse.Namespace) -> RunContext:
    cfg = load_config(getattr(args, "config", None), getattr(args, "data_dir", None))
    cfg = _apply_overrides(cfg, args)
    ctx = RunContext(cfg=cfg, data_dir=cfg.pipeline.data_dir, resume=getattr(args, "resume", False))
    for attr, field_name in [
        ("csv", "csv_path"), ("archive", "archive_dir"), ("labels", "labels_path"),
        ("regions", "regions_path"), ("lexicon", "lexicon_path"), ("vectors", "vectors_path"),
        ("pages_in", "pages_in"), ("points_out", "points_out"), ("report_out", "report_out"),
        ("predictions_out", "predictions_out"), ("maps_dir", "maps_dir"),
    ]:
        value = getattr(args, attr, None)
        if value:
            setattr(ctx, field_name, Path(value))
    if getattr(args, "live", False):
        ctx.live = True
    model = getattr(args, "model_out", None) or getattr(args, "model", None)
    if model:
        ctx.model_file = Path(model)
    if getattr(args, "command", "") == "geo":
        if getattr(args, "labels", None):
            ctx.company_labels_in = Path(args.labels)
            ctx.labels_path = None
        if getattr(args, "registry", None):
            ctx.registry_in = Path(args.registry)
    if getattr(args, "points_in", None):
        ctx.points_in = Path(args.points_in)
    return ctx


def _apply_overrides(cfg: Config, args: argparse.Namespace) -> Config:
    fetcher = cfg.fetcher
    for attr, key in [
        ("max_depth", "max_depth"), ("max_pages", "max_pages_per_site"),
        ("delay_ms", "per_host_delay_ms"), ("concurrency", "global_concurrency"),
    ]:
        value = getattr(args, attr, None)
        if value is not None:
            fetcher = replace(fetcher, **{key: value})
    if getattr(args, "no_robots", False):
        fetcher = replace(fetcher, obey_robots=False)
    cfg = replace(cfg, fetcher=fetcher)
    seed = getattr(args, "seed", None)
    if seed is not None and getattr(args, "command", "") in ("train", "run-all"):
        cfg = replace(cfg, classifier=replace(cfg.classifier, master_seed=seed))
    mc = getattr(args, "min_confidence", None)
    if mc is not None:
        cfg = replace(cfg, aggregator=replace(cfg.aggregator, min_confidence=mc))
    return cfg


def _cmd_round(args: argparse.Namespace, ctx: RunContext) -> int:
    from .extractor import DataPoint
    from .labeling import LabelStore

    store = LabelStore(ctx.data_dir / "labeling")
    if args.export:
        rounds = None
        if args.rounds:
            rounds = [int(r) for r in args.rounds.split(",")]
        rows = store.export_training_set(rounds)
        write_ndjson(args.export, rows)
        print(f"exported {len(rows)} labeled points to {args.export}")
        return 0
    if args.n is None or not args.annotators:
        print("round: need --n and --annotators (or --export OUT)", file=sys.stderr)
        return 2
    points_path = ctx.artifact("points.ndjson")
    if not points_path.exists():
        print(f"round: requires {points_path} (produced by extract)", file=sys.stderr)
        return 2
    points = [DataPoint.from_json(d) for d in read_ndjson(points_path)]
    annotators = [a.strip() for a in args.annotators.split(",") if a.strip()]
    tasks = store.create_round(points, args.n, annotators, args.seed)
    rnd = tasks[0].round if tasks else 0
    print(f"round {rnd}: {len(tasks)} tasks over {len(annotators)} annotators")
    return 0


def _cmd_serve(args: argparse.Namespace, ctx: RunContext) -> int:
    import uvicorn

    from .labeling import LabelStore
    from .service import create_app

    host, _, port = args.bind.rpartition(":")
    static = args.static
    if static is None:
        bundled = Path(__file__).resolve().parents[2] / "frontend" / "dist"
        static = str(bundled) if bundled.is_dir() else None
    store = LabelStore(ctx.data_dir / "labeling")
    app = create_app(store, static_dir=static, token=args.token or ctx.cfg.pipeline.service_token)
    uvicorn.run(app, host=host or "127.0.0.1", port=int(port), log_level="info")
    return 0


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.DEBUG if args.verbose else logging.INFO,
        format="%(levelname)s %(name)s: %(message)s",
    )
    ctx = _context(args)
    command = args.command
    try:
        if command == "round":
            return _cmd_round(args, ctx)
        if command == "serve":
            return _cmd_serve(args, ctx)
        if command == "report":
            summary = run_stage("report", ctx)
            import json

            print(json.dumps(summary, indent=2))
            return 0
        if command == "run-all":
            run_all(ctx)
            print(f"run complete; manifest at {ctx.artifact('manifest.json')}")
            return 0
        run_stage(command, ctx)
        return 0
    except Exception as exc:  # surfaced as exit code + message, not a traceback
        if args.verbose:
            raise
        print(f"techradar {command}: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
