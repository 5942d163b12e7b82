import argparse
from pathlib import Path

from rich.console import Console

from flakidock.cli.common import EXIT_FLAKY, EXIT_OK, emit, make_engine, require_file, settings_from_args
from flakidock.services.dockerfile_service import read_dockerfile
from flakidock.services.log_service import classify_failure_cause, load_cause_filters, load_rules, preprocess_log
from flakidock.services.repair_service import detect_flakiness


def register(subparsers, parents) -> None:
    parser = subparsers.add_parser("detect", parents=parents, help="build n times and report flakiness")
    parser.add_argument("dockerfile", type=Path)
    parser.add_argument("--context", type=Path, help="build context (default: the Dockerfile's directory)")
    parser.add_argument("--iterations", type=int, help="builds to run (default BUILD_ITERATIONS)")
    parser.set_defaults(handler=run, needs_lock=True)


def run(args: argparse.Namespace) -> int:
    settings = settings_from_args(args, BUILD_ITERATIONS=args.iterations)
    path = require_file(args.dockerfile)
    doc = read_dockerfile(path)
    context_dir = args.context or path.parent

    detection = detect_flakiness(
        doc, context_dir, settings.validation_policy(), make_engine(settings), settings.hygiene_policy()
    )
    payload = {
        "dockerfile": str(path),
        "verdict": "flaky" if detection.flaky else "non-flaky",
        "builds": [
            {"seq": r.seq, "status": r.status.value, "exit_code": r.exit_code, "duration": round(r.duration, 3)}
            for r in detection.records
        ],
    }
    failing = detection.first_failing
    if failing is not None:
        preprocessed = preprocess_log(
            failing.log,
            load_rules(settings.rules_path),
            doc,
            window=settings.ADJACENCY_WINDOW,
            cap=settings.EXCERPT_CAP,
        )
        cause = classify_failure_cause(preprocessed, load_cause_filters())
        payload["excerpt"] = preprocessed.render()
        payload["failure_cause"] = cause.value if cause else None

    def human(console: Console) -> None:
        style = "bold red" if detection.flaky else "bold green"
        console.print(f"[{style}]{payload['verdict']}[/{style}] after {len(detection.records)} build(s): {path}")
        for build in payload["builds"]:
            console.print(f"  {build['status']:<8} exit={build['exit_code']} {build['duration']}s")
        if "excerpt" in payload:
            console.rule("error excerpt")
            console.print(payload["excerpt"], markup=False, highlight=False)

    emit(args, payload, human)
    return EXIT_FLAKY if detection.flaky else EXIT_OK
