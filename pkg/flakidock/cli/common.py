import argparse
import json
import logging
from pathlib import Path
from typing import Any, Callable, Optional

from rich.console import Console
from rich.markup import escape

from flakidock.core.config import Settings, load_settings
from flakidock.core.logging import stderr_console
from flakidock.services.build_service import BuildEngine, build_driver

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_ERROR = 1
EXIT_FLAKY = 2
EXIT_UNRESOLVED = 3


def global_options() -> argparse.ArgumentParser:
    """Flags accepted before or after the sub-command; absent flags leave no attribute."""
    parent = argparse.ArgumentParser(add_help=False)
    parent.add_argument("--config", type=Path, default=argparse.SUPPRESS, help="key-value settings file")
    parent.add_argument("--state-dir", type=Path, default=argparse.SUPPRESS, help="where builds, sessions and history go")
    parent.add_argument(
        "--driver",
        default=argparse.SUPPRESS,
        help="'real' or 'simulated:<scenario.json>'",
    )
    parent.add_argument("--json", action="store_true", default=argparse.SUPPRESS, help="machine-readable output")
    parent.add_argument("--rules", type=Path, default=argparse.SUPPRESS, help="error rule file")
    parent.add_argument("--log-level", default=argparse.SUPPRESS, help="DEBUG, INFO, WARNING or ERROR")
    parent.add_argument("-v", "--verbose", action="store_true", default=argparse.SUPPRESS, help="same as --log-level INFO")
    return parent


def wants_json(args: argparse.Namespace) -> bool:
    return bool(getattr(args, "json", False))


def settings_from_args(args: argparse.Namespace, **overrides: Any) -> Settings:
    driver = getattr(args, "driver", None)
    if driver is not None:
        name, _, scenario = driver.partition(":")
        if name not in ("real", "simulated"):
            raise ValueError(f"unknown driver {driver!r}; use 'real' or 'simulated:<scenario.json>'")
        overrides["DRIVER"] = name
        if scenario:
            overrides["SCENARIO"] = Path(scenario)
    return load_settings(
        getattr(args, "config", None),
        STATE_DIR=getattr(args, "state_dir", None),
        RULES_PATH=getattr(args, "rules", None),
        **overrides,
    )


def make_engine(settings: Settings) -> BuildEngine:
    return BuildEngine(build_driver(settings), builds_dir=settings.STATE_DIR / "builds")


def emit(args: argparse.Namespace, payload: dict, human: Optional[Callable[[Console], None]] = None) -> None:
    """JSON on stdout with --json, rich text otherwise."""
    if wants_json(args):
        print(json.dumps(payload, indent=2, default=str))
        return
    console = Console()
    if human is None:
        console.print_json(data=payload, default=str)
    else:
        human(console)


def fail(args: argparse.Namespace, exc: BaseException) -> int:
    message = str(exc) or exc.__class__.__name__
    logger.debug("command failed", exc_info=exc)
    if wants_json(args):
        print(json.dumps({"error": message, "type": exc.__class__.__name__}))
    else:
        stderr_console.print(f"[bold red]error:[/bold red] {escape(message)}", highlight=False)
    return EXIT_ERROR


def require_file(path: Path) -> Path:
    if not Path(path).is_file():
        raise FileNotFoundError(f"no such file: {path}")
    return Path(path)
