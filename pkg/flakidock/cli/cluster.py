import argparse
from pathlib import Path

from rich.console import Console
from rich.table import Table

from flakidock.cli.common import EXIT_OK, emit, settings_from_args
from flakidock.services.cluster_service import cluster_outputs, reduction_ratio
from flakidock.services.embedding_service import sentence_provider
from flakidock.services.log_service import load_rules, log_text, preprocess_log


def register(subparsers, parents) -> None:
    parser = subparsers.add_parser("cluster", parents=parents, help="group failing build outputs of one project")
    parser.add_argument("log_dir", type=Path)
    parser.add_argument("--pattern", default="*.log", help="glob for log files (default *.log)")
    parser.add_argument("--threshold", type=float, help="mean similarity needed to join a cluster")
    parser.set_defaults(handler=run, needs_lock=False)


def run(args: argparse.Namespace) -> int:
    settings = settings_from_args(args, CLUSTER_THRESHOLD=args.threshold)
    if not args.log_dir.is_dir():
        raise FileNotFoundError(f"no such directory: {args.log_dir}")
    files = sorted(p for p in args.log_dir.glob(args.pattern) if p.is_file())
    if not files:
        raise FileNotFoundError(f"no files matching {args.pattern} in {args.log_dir}")

    rules = load_rules(settings.rules_path)
    outputs = []
    for path in files:
        log = path.read_text(encoding="utf-8", errors="replace")
        preprocessed = preprocess_log(log, rules, window=settings.ADJACENCY_WINDOW, cap=settings.EXCERPT_CAP)
        outputs.append((path.name, log_text(log, preprocessed) or path.name))

    clusters = cluster_outputs(outputs, sentence_provider(settings), settings.CLUSTER_THRESHOLD)
    payload = {
        "inputs": len(outputs),
        "threshold": settings.CLUSTER_THRESHOLD,
        "clusters": [{"id": c.id, "size": c.size, "members": list(c.member_ids)} for c in clusters],
        "reduction": round(reduction_ratio(clusters), 6),
    }

    def human(console: Console) -> None:
        table = Table(title=f"{len(clusters)} clusters from {len(outputs)} outputs")
        table.add_column("id", justify="right")
        table.add_column("size", justify="right")
        table.add_column("members")
        for cluster in payload["clusters"]:
            table.add_row(str(cluster["id"]), str(cluster["size"]), ", ".join(cluster["members"]))
        console.print(table)
        console.print(f"reduction: {payload['reduction']:.1%}")

    emit(args, payload, human)
    return EXIT_OK
