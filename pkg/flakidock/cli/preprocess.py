import argparse
from pathlib import Path

from rich.console import Console

from flakidock.cli.common import EXIT_OK, emit, require_file, settings_from_args
from flakidock.services.dockerfile_service import read_dockerfile
from flakidock.services.log_service import load_rules, preprocess_log


def register(subparsers, parents) -> None:
    parser = subparsers.add_parser("preprocess", parents=parents, help="print the error excerpt of a raw build log")
    parser.add_argument("log", type=Path)
    parser.add_argument("--dockerfile", type=Path, help="align stages with this Dockerfile")
    parser.set_defaults(handler=run, needs_lock=False)


def run(args: argparse.Namespace) -> int:
    settings = settings_from_args(args)
    log = require_file(args.log).read_text(encoding="utf-8", errors="replace")
    doc = read_dockerfile(require_file(args.dockerfile)) if args.dockerfile else None
    preprocessed = preprocess_log(
        log, load_rules(settings.rules_path), doc, window=settings.ADJACENCY_WINDOW, cap=settings.EXCERPT_CAP
    )
    payload = preprocessed.model_dump(mode="json")

    def human(console: Console) -> None:
        console.print(preprocessed.render(), markup=False, highlight=False)
        console.rule(f"{preprocessed.total_lines_out}/{preprocessed.total_lines_in} lines kept")

    emit(args, payload, human)
    return EXIT_OK
