# src/main.py
"""
Command-line entry point.

    python -m src.main parse  paper.md
    python -m src.main verify paper.tex --config run.json --out out/
    python -m src.main eval   --benchmark bench.csv --runs 3
    python -m src.main ablate --sources 30 --trials 7

Exit codes: 0 success, 1 configuration error, 2 partial failures, 3 fatal.
"""

import argparse
import asyncio
import csv
import json
import sys
from pathlib import Path
from typing import Any, Dict, List, Optional

from loguru import logger

from src.config import RunConfig, load_run_config
from src.core.errors import CiteGuardError, ConfigError
from src.core.gateway import ModelGateway
from src.core.log import configure_logging
from src.evaluation.ablation import committee_ablation, load_pool, synthetic_pool, write_table
from src.evaluation.benchmark import load_benchmark
from src.evaluation.runner import evaluate
from src.evaluation.scoring import average_runs
from src.parsing.loader import load_document
from src.services.metadata_service import FixtureMetadataClient, MetadataClient, OpenAlexClient
from src.verification.icsv.influence import ReferenceStats
from src.verification.pipeline import CitationVerifier
from src.verification.report import write_reports

EXIT_OK = 0
EXIT_CONFIG = 1
EXIT_PARTIAL = 2
EXIT_FATAL = 3


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="citeguard", description="Citation verification for scientific papers")
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="run configuration JSON")
    common.add_argument("--backend", help="gateway/backend configuration JSON")
    common.add_argument("--cache-dir", dest="cache_dir")
    common.add_argument("--out")
    common.add_argument("--seed", type=int)
    common.add_argument("--max-parallel", dest="max_parallel", type=int)
    common.add_argument("--log-level", dest="log_level")
    common.add_argument("--log-json", dest="log_json", action="store_true", default=None)

    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("parse", parents=[common], help="parse documents and report extraction anomalies")
    p.add_argument("inputs", nargs="+")
    p.add_argument("--bib", dest="bib_path")

    v = sub.add_parser("verify", parents=[common], help="verify every citation of the input papers")
    v.add_argument("inputs", nargs="+")
    v.add_argument("--bib", dest="bib_path")
    v.add_argument("--route", choices=["auto", "accessible", "inaccessible"])
    v.add_argument("--metadata-fixtures", dest="metadata_fixtures")
    v.add_argument("--reference-stats", dest="reference_stats")

    e = sub.add_parser("eval", parents=[common], help="Acc-pass@3 and Token Economy on a benchmark CSV")
    e.add_argument("--benchmark", required=True)
    e.add_argument("--sources-dir", dest="sources_dir")
    e.add_argument("--runs", type=int, default=1)
    e.add_argument("--numeric-check", dest="numeric_check", action="store_true")

    a = sub.add_parser("ablate", parents=[common], help="committee-size reliability table")
    a.add_argument("--pool", help="JSON pool of sources; synthetic when omitted")
    a.add_argument("--sources", type=int, default=30)
    a.add_argument("--trials", type=int, default=7)
    return parser


def config_from_args(args: argparse.Namespace) -> RunConfig:
    cli: Dict[str, Any] = {
        k: getattr(args, k, None)
        for k in ("cache_dir", "out", "seed", "max_parallel", "route", "log_level", "log_json", "bib_path")
    }
    cli["inputs"] = getattr(args, "inputs", None)
    if getattr(args, "metadata_fixtures", None):
        cli["metadata"] = {"kind": "fixture", "fixtures_dir": args.metadata_fixtures}
    if getattr(args, "reference_stats", None):
        cli["committee"] = {"reference_stats": args.reference_stats}
    return load_run_config(args.config, cli=cli, backend_path=args.backend)


def build_client(config: RunConfig) -> MetadataClient:
    if config.metadata.kind == "openalex":
        return OpenAlexClient(cache_root=config.cache_dir)
    return FixtureMetadataClient(config.metadata.fixtures_dir)


# ---------------------------------------------------------
# COMMANDS
# ---------------------------------------------------------

async def cmd_parse(config: RunConfig, gateway: ModelGateway) -> int:
    for path in config.inputs:
        loaded = await load_document(path, gateway, bib_path=config.bib_path, seed=config.seed)
        out = Path(config.out) / loaded.doc.doc_id
        out.mkdir(parents=True, exist_ok=True)
        (out / "parsed.json").write_text(
            json.dumps(loaded.doc.model_dump(mode="json"), indent=2, ensure_ascii=False) + "\n", encoding="utf-8"
        )
        (out / "anomalies.json").write_text(
            json.dumps([a.model_dump(mode="json") for a in loaded.anomalies], indent=2) + "\n", encoding="utf-8"
        )
        logger.info("{}: {} blocks, {} anomalies", loaded.doc.doc_id, len(loaded.doc.blocks), len(loaded.anomalies))
    return EXIT_OK


async def cmd_verify(config: RunConfig, gateway: ModelGateway) -> int:
    stats = ReferenceStats.from_csv(config.committee.reference_stats) if config.committee.reference_stats else None
    verifier = CitationVerifier(gateway, build_client(config), stats=stats, config=config.verification())
    errors = 0
    for path in config.inputs:
        loaded = await load_document(path, gateway, bib_path=config.bib_path, seed=config.seed)
        results = await verifier.verify_document(loaded.doc)
        summary = write_reports(config.out, loaded.doc.doc_id, results)
        errors += summary["errors"]
        logger.info("{}: {}", loaded.doc.doc_id, summary["verdicts"])
    return EXIT_PARTIAL if errors else EXIT_OK


async def cmd_eval(config: RunConfig, gateway: ModelGateway, args: argparse.Namespace) -> int:
    instances = load_benchmark(args.benchmark)
    runs: List[Dict[str, float]] = []
    for r in range(max(1, args.runs)):
        metrics = await evaluate(
            instances, gateway, sources_dir=args.sources_dir, funnel=config.funnel, labeler=config.labeler,
            base_seed=config.seed + 1000 * r, numeric_check=args.numeric_check,
        )
        logger.info("run {}: {}", r + 1, metrics)
        runs.append(metrics)
    final = average_runs(runs) if len(runs) > 1 else runs[0]

    out = Path(config.out)
    out.mkdir(parents=True, exist_ok=True)
    (out / "metrics.json").write_text(json.dumps({"runs": runs, "mean": final}, indent=2) + "\n", encoding="utf-8")
    with (out / "metrics.csv").open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["metric", "value"])
        for k, v in final.items():
            writer.writerow([k, v])
    return EXIT_OK


def cmd_ablate(config: RunConfig, args: argparse.Namespace) -> int:
    pool = load_pool(args.pool) if args.pool else synthetic_pool(n_sources=args.sources, seed=config.seed)
    rows = committee_ablation(pool, trials=args.trials, seed=config.seed, k_min=config.committee.k_min)
    write_table(rows, config.out)
    for r in rows:
        logger.info("n_voter={:>2} non-abstention={:.3f} acc={} conf={:.3f}", r.n_voter, r.non_abstention_rate,
                    "-" if r.conditional_accuracy is None else f"{r.conditional_accuracy:.3f}", r.mean_conf)
    return EXIT_OK


def main(argv: Optional[List[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        config = config_from_args(args)
    except ConfigError as e:
        configure_logging()
        logger.error("{}", e)
        return EXIT_CONFIG
    configure_logging(config.log_level, config.log_json)

    try:
        if args.command == "ablate":
            return cmd_ablate(config, args)
        gateway = ModelGateway(config.gateway_settings())
        if args.command == "parse":
            return asyncio.run(cmd_parse(config, gateway))
        if args.command == "verify":
            return asyncio.run(cmd_verify(config, gateway))
        return asyncio.run(cmd_eval(config, gateway, args))
    except CiteGuardError as e:
        logger.error("{}: {}", type(e).__name__, e)
        return EXIT_FATAL
    except Exception:
        logger.exception("fatal error")
        return EXIT_FATAL


if __name__ == "__main__":
    sys.exit(main())
