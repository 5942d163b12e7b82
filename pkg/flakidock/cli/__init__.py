import argparse
import logging
import sys
from typing import Optional

from pydantic import ValidationError

from flakidock.cli import cluster, dataset, detect, monitor, preprocess, repair
from flakidock.cli.common import fail, global_options, settings_from_args
from flakidock.core.errors import FlakiDockError
from flakidock.core.locks import StateDirLock
from flakidock.core.logging import configure_logging

COMMANDS = (detect, repair, cluster, monitor, dataset, preprocess)


def build_parser() -> argparse.ArgumentParser:
    parents = [global_options()]
    parser = argparse.ArgumentParser(
        prog="flakidock",
        description="Detect and repair flaky Dockerfiles.",
        parents=parents,
    )
    subparsers = parser.add_subparsers(dest="command", required=True)
    for command in COMMANDS:
        command.register(subparsers, parents)
    return parser


def main(argv: Optional[list[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    level = getattr(args, "log_level", None) or ("INFO" if getattr(args, "verbose", False) else "WARNING")
    configure_logging(level)

    try:
        if not args.needs_lock:
            return args.handler(args)
        with StateDirLock(settings_from_args(args).STATE_DIR):
            return args.handler(args)
    except (FlakiDockError, ValidationError, ValueError, OSError) as exc:
        return fail(args, exc)
    except KeyboardInterrupt:
        logging.getLogger(__name__).warning("interrupted")
        return 130


if __name__ == "__main__":
    sys.exit(main())
