import argparse
from pathlib import Path

from rich.console import Console
from rich.table import Table

from flakidock.cli.common import EXIT_FLAKY, EXIT_OK, emit, make_engine, require_file, settings_from_args
from flakidock.services.log_service import load_cause_filters, load_rules
from flakidock.services.monitor_service import load_manifest, run_monitor


def register(subparsers, parents) -> None:
    parser = subparsers.add_parser("monitor", parents=parents, help="rebuild a corpus of projects and record history")
    parser.add_argument("manifest", type=Path, help='JSON: {"projects": [{"name", "context_dir", ...}]}')
    parser.add_argument("--rounds", type=int, default=1, help="builds per project in this run")
    parser.set_defaults(handler=run, needs_lock=True)


def run(args: argparse.Namespace) -> int:
    settings = settings_from_args(args)
    manifest = load_manifest(require_file(args.manifest))
    report = run_monitor(
        manifest,
        args.rounds,
        make_engine(settings),
        settings.hygiene_policy(),
        load_rules(settings.rules_path),
        load_cause_filters(),
        settings.STATE_DIR,
        workers=settings.BUILD_WORKERS,
    )
    payload = {**report.model_dump(mode="json"), "flaky_candidates": report.flaky_candidates}

    def human(console: Console) -> None:
        table = Table(title=f"monitor: {report.rounds} round(s), {report.cleanups} cleanup(s)")
        for column in ("project", "builds", "failures", "excluded", "history", "flaky?"):
            table.add_column(column)
        for project in report.projects:
            excluded = ", ".join(f"{k}={v}" for k, v in project.excluded.items()) or "-"
            table.add_row(
                project.name,
                str(project.builds),
                str(project.failures),
                excluded,
                f"{project.history_failures}/{project.history_builds}",
                "[bold red]yes[/bold red]" if project.flaky_candidate else "no",
            )
        console.print(table)
        for project in report.projects:
            if project.error:
                console.print(f"[red]{project.name}:[/red] {project.error}", highlight=False)

    emit(args, payload, human)
    return EXIT_FLAKY if report.flaky_candidates else EXIT_OK
