import argparse
from pathlib import Path

from rich.console import Console
from rich.table import Table

from flakidock.cli.common import EXIT_OK, emit, require_file, settings_from_args
from flakidock.core.config import Settings
from flakidock.schemas.dataset import DemonstrationRecord
from flakidock.services.dataset_service import (
    category_stats,
    load_store,
    save_store,
    sub_stats,
    suggest_build_iterations,
)
from flakidock.services.dockerfile_service import read_dockerfile
from flakidock.services.embedding_service import embed, embedding_provider
from flakidock.services.label_service import parse_label, suggest_label
from flakidock.services.llm_service import generation_provider
from flakidock.services.log_service import classify_failure_cause, load_cause_filters, load_rules, log_text, preprocess_log


def register(subparsers, parents) -> None:
    parser = subparsers.add_parser("dataset", parents=parents, help="inspect and extend the demonstration store")
    verbs = parser.add_subparsers(dest="verb", required=True)

    validate = verbs.add_parser("validate", parents=parents, help="check every record of a store")
    validate.add_argument("store", type=Path, nargs="?")
    validate.set_defaults(handler=run_validate, needs_lock=False)

    stats = verbs.add_parser("stats", parents=parents, help="category counts and the suggested build count")
    stats.add_argument("store", type=Path, nargs="?")
    stats.add_argument("--coverage", type=float, default=0.9, help="share of I_d values n must cover")
    stats.set_defaults(handler=run_stats, needs_lock=False)

    add = verbs.add_parser("add", parents=parents, help="add a demonstration to the state index")
    add.add_argument("--dockerfile", type=Path, required=True, help="the flaky Dockerfile (S)")
    add.add_argument("--log", type=Path, required=True, help="raw build log of the failure")
    add.add_argument("--repair", type=Path, action="append", required=True, help="repaired Dockerfile (repeatable)")
    add.add_argument("--iterations", type=int, action="append", help="builds each repair needed (repeatable)")
    add.add_argument("--category", help='e.g. "DEP / Versioning Issues"')
    add.add_argument("--label", action="store_true", help="ask the generation provider for the category")
    add.add_argument("--id", dest="record_id", help="record id (default: derived from the Dockerfile hash)")
    add.add_argument("--notes")
    add.add_argument("--force", action="store_true", help="add even when a non-flaky failure cause matches")
    add.set_defaults(handler=run_add, needs_lock=True)


def _store_path(args: argparse.Namespace, settings: Settings) -> Path:
    return require_file(args.store) if args.store else settings.demo_store_path


def run_validate(args: argparse.Namespace) -> int:
    settings = settings_from_args(args)
    path = _store_path(args, settings)
    index = load_store(path)
    payload = {"store": str(path), "valid": True, "records": len(index)}
    emit(args, payload, lambda console: console.print(f"[green]valid[/green]: {len(index)} records in {path}"))
    return EXIT_OK


def run_stats(args: argparse.Namespace) -> int:
    settings = settings_from_args(args)
    path = _store_path(args, settings)
    index = load_store(path)
    majors = category_stats(index)
    subs = sub_stats(index)
    payload = {
        "store": str(path),
        "records": len(index),
        "categories": {m.value: c.model_dump() for m, c in majors.items()},
        "subcategories": {name: c.model_dump() for name, c in subs.items()},
        "suggested_build_iterations": suggest_build_iterations(index, args.coverage) if len(index) else None,
    }

    def human(console: Console) -> None:
        table = Table(title=f"{len(index)} demonstrations")
        table.add_column("category")
        table.add_column("count", justify="right")
        table.add_column("share", justify="right")
        for name, count in payload["categories"].items():
            table.add_row(name, str(count["count"]), f"{count['fraction']:.2%}")
        for name, count in payload["subcategories"].items():
            table.add_row(f"  {name}", str(count["count"]), f"{count['fraction']:.2%}")
        console.print(table)
        console.print(f"suggested build iterations: {payload['suggested_build_iterations']}")

    emit(args, payload, human)
    return EXIT_OK


def run_add(args: argparse.Namespace) -> int:
    settings = settings_from_args(args)
    doc = read_dockerfile(require_file(args.dockerfile))
    log = require_file(args.log).read_text(encoding="utf-8", errors="replace")
    repairs = [read_dockerfile(require_file(p)).text for p in args.repair]
    iterations = args.iterations or [1] * len(repairs)

    preprocessed = preprocess_log(
        log, load_rules(settings.rules_path), doc, window=settings.ADJACENCY_WINDOW, cap=settings.EXCERPT_CAP
    )
    cause = classify_failure_cause(preprocessed, load_cause_filters())
    if cause is not None and not args.force:
        raise ValueError(f"failure looks like a {cause.value} problem, not flakiness (use --force to add anyway)")
    dynamic_part = log_text(log, preprocessed)

    if args.category:
        suggestion = parse_label(args.category)
        if suggestion.needs_review:
            raise ValueError(f"unknown category {args.category!r}")
    elif args.label:
        suggestion = suggest_label(doc.text, dynamic_part, generation_provider(settings))
    else:
        raise ValueError("give --category or --label")

    provider = embedding_provider(settings)
    target = settings.STATE_DIR / "index" / "records.jsonl"
    index = load_store(target if target.is_file() else settings.demo_store_path, provider)
    record = DemonstrationRecord(
        id=args.record_id or f"{suggestion.category.major.value.lower()}-{doc.digest[:10]}",
        static_part=doc.text,
        dynamic_part=dynamic_part,
        category=suggestion.category,
        repairs=repairs,
        iterations=iterations,
        notes=args.notes,
    )
    record = record.model_copy(update={"embedding": embed(record.combined_text, provider)})
    index.add(record)
    save_store(index, target)

    payload = {
        "store": str(target),
        "id": record.id,
        "category": str(record.category),
        "contributing_factors": suggestion.contributing_factors,
        "needs_review": suggestion.needs_review,
        "records": len(index),
    }
    emit(args, payload, lambda console: console.print(f"added [bold]{record.id}[/bold] ({record.category}) to {target}"))
    return EXIT_OK
