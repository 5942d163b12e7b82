import json
import logging
import shlex
import subprocess
import tempfile
import threading
import time
from abc import ABC, abstractmethod
from dataclasses import dataclass
from datetime import datetime, timezone
from pathlib import Path
from typing import Callable, Optional

from flakidock.core.errors import EngineError, ScenarioError
from flakidock.core.locks import HOST_ENGINE_LOCK
from flakidock.schemas.build import BuildRecord, BuildStatus, HygienePolicy
from flakidock.schemas.dockerfile import DockerfileDoc
from flakidock.schemas.scenario import Scenario, ScriptEntry

logger = logging.getLogger(__name__)

# Output of the engine CLI that means the engine itself failed, not the build
ENGINE_FAILURE_MARKERS = (
    "Cannot connect to the Docker daemon",
    "error during connect",
    "no space left on device",
    "Is the docker daemon running",
)


@dataclass
class DriverResult:
    log: str
    exit_code: Optional[int]
    duration: float
    timed_out: bool = False


class BuildDriver(ABC):
    driver_id: str = "abstract"

    @abstractmethod
    def build(self, doc: DockerfileDoc, context_dir: Path, *, no_cache: bool, timeout: float) -> DriverResult:
        raise NotImplementedError

    @abstractmethod
    def prune(self) -> None:
        raise NotImplementedError


class DockerDriver(BuildDriver):
    """Shells out to the container engine CLI with a configurable command template."""

    driver_id = "docker"

    def __init__(self, build_command: str, cached_build_command: str, prune_commands: list[str]):
        self.build_command = build_command
        self.cached_build_command = cached_build_command
        self.prune_commands = prune_commands

    def build(self, doc: DockerfileDoc, context_dir: Path, *, no_cache: bool, timeout: float) -> DriverResult:
        template = self.build_command if no_cache else self.cached_build_command
        with tempfile.NamedTemporaryFile("wb", suffix=".Dockerfile", delete=False) as handle:
            handle.write(doc.raw_text)
            dockerfile_path = Path(handle.name)
        command = shlex.split(
            template.format(
                dockerfile=shlex.quote(str(dockerfile_path)),
                context=shlex.quote(str(context_dir)),
            )
        )
        started = time.monotonic()
        try:
            # stderr folded into stdout: engine progress interleaves both streams
            process = subprocess.run(
                command,
                stdout=subprocess.PIPE,
                stderr=subprocess.STDOUT,
                timeout=timeout,
                check=False,
            )
        except subprocess.TimeoutExpired as exc:
            partial = (exc.output or b"").decode("utf-8", errors="replace")
            return DriverResult(log=partial, exit_code=None, duration=time.monotonic() - started, timed_out=True)
        except OSError as exc:
            raise EngineError(f"could not run {command[0]}: {exc}") from exc
        finally:
            dockerfile_path.unlink(missing_ok=True)

        log = process.stdout.decode("utf-8", errors="replace")
        if process.returncode != 0 and any(marker in log for marker in ENGINE_FAILURE_MARKERS):
            raise EngineError(f"engine failure (exit {process.returncode}): {log.strip()[-300:]}")
        return DriverResult(log=log, exit_code=process.returncode, duration=time.monotonic() - started)

    def prune(self) -> None:
        for command in self.prune_commands:
            try:
                process = subprocess.run(
                    shlex.split(command), stdout=subprocess.PIPE, stderr=subprocess.STDOUT, check=False
                )
            except OSError as exc:
                raise EngineError(f"could not run {command!r}: {exc}") from exc
            if process.returncode != 0:
                output = process.stdout.decode("utf-8", errors="replace").strip()
                raise EngineError(f"{command!r} exited {process.returncode}: {output[-300:]}")


class SimulatedDriver(BuildDriver):
    """Replays scripted outcomes; a build is a pure function of (doc hash, outcome index)."""

    driver_id = "simulated"

    def __init__(self, scenario: Scenario, base_dir: Optional[Path] = None):
        self.scenario = scenario
        self.base_dir = base_dir
        self.prune_calls = 0
        self.builds: list[str] = []
        self._cursors: dict[str, int] = {}
        self._lock = threading.Lock()

    @classmethod
    def from_file(cls, path: Path) -> "SimulatedDriver":
        path = Path(path)
        try:
            scenario = Scenario.model_validate_json(path.read_text(encoding="utf-8"))
        except (OSError, ValueError) as exc:
            raise ScenarioError(f"cannot load scenario {path}: {exc}") from exc
        return cls(scenario, base_dir=path.parent)

    def _script_key(self, doc: DockerfileDoc) -> str:
        if doc.digest in self.scenario.builds:
            return doc.digest
        text = doc.text
        for key in self.scenario.builds:
            if key.startswith("contains:") and key[len("contains:"):] in text:
                return key
        if "*" in self.scenario.builds:
            return "*"
        raise ScenarioError(f"no build script matches Dockerfile {doc.digest[:12]}")

    def _entry_log(self, entry: ScriptEntry) -> str:
        if entry.log_file is None:
            return entry.log
        log_path = Path(entry.log_file)
        if not log_path.is_absolute() and self.base_dir is not None:
            log_path = self.base_dir / log_path
        return log_path.read_text(encoding="utf-8")

    def build(self, doc: DockerfileDoc, context_dir: Path, *, no_cache: bool, timeout: float) -> DriverResult:
        with self._lock:
            key = self._script_key(doc)
            script = self.scenario.builds[key]
            index = self._cursors.get(key, 0)
            self._cursors[key] = index + 1
            self.builds.append(doc.digest)
        entry = script[min(index, len(script) - 1)]

        if entry.status is BuildStatus.ENGINE_ERROR:
            raise EngineError(entry.log or "simulated engine failure")
        log = self._entry_log(entry)
        if entry.status is BuildStatus.TIMEOUT or entry.duration >= timeout:
            return DriverResult(log=log, exit_code=None, duration=max(entry.duration, timeout), timed_out=True)
        return DriverResult(log=log, exit_code=entry.exit_code, duration=entry.duration)

    def prune(self) -> None:
        with self._lock:
            self.prune_calls += 1


def _utcnow() -> datetime:
    return datetime.now(timezone.utc)


class BuildEngine:
    """Runs builds through a driver, applies the hygiene policy and persists records."""

    def __init__(
        self,
        driver: BuildDriver,
        builds_dir: Optional[Path] = None,
        clock: Callable[[], datetime] = _utcnow,
    ):
        self.driver = driver
        self.builds_dir = Path(builds_dir) if builds_dir is not None else None
        self.clock = clock
        self.cleanups = 0
        self._persist_lock = threading.Lock()

    def with_builds_dir(self, builds_dir: Optional[Path]) -> "BuildEngine":
        """Same driver and clock, records persisted somewhere else."""
        engine = BuildEngine(self.driver, builds_dir, self.clock)
        engine._persist_lock = self._persist_lock
        return engine

    def build_once(self, doc: DockerfileDoc, context_dir: Path, policy: HygienePolicy) -> BuildRecord:
        context_dir = Path(context_dir)
        if not context_dir.is_dir():
            raise EngineError(f"build context {context_dir} does not exist")

        started_at = self.clock()
        logger.info("build %s via %s started", doc.digest[:12], self.driver.driver_id)
        with HOST_ENGINE_LOCK.read():
            result = self.driver.build(doc, context_dir, no_cache=policy.no_cache, timeout=policy.timeout)

        if result.timed_out:
            status, exit_code = BuildStatus.TIMEOUT, None
            duration = max(result.duration, policy.timeout)
        elif result.exit_code == 0:
            status, exit_code, duration = BuildStatus.SUCCESS, 0, result.duration
        else:
            status, exit_code, duration = BuildStatus.FAILURE, result.exit_code or 1, result.duration

        record = BuildRecord(
            dockerfile_hash=doc.digest,
            log=result.log,
            status=status,
            exit_code=exit_code,
            duration=duration,
            started_at=started_at,
            driver_id=self.driver.driver_id,
        )
        record = self._persist(record)
        logger.info(
            "build %s finished: %s in %.1fs", doc.digest[:12], record.status.value, record.duration
        )
        return record

    def run_build_series(
        self,
        doc: DockerfileDoc,
        context_dir: Path,
        count: int,
        policy: HygienePolicy,
        stop_on_failure: bool = False,
    ) -> list[BuildRecord]:
        """Build `count` times in order, cleaning after every `clean_every` builds."""
        if count < 0:
            raise ValueError("count must be >= 0")
        records: list[BuildRecord] = []
        for n in range(1, count + 1):
            try:
                record = self.build_once(doc, context_dir, policy)
            except EngineError as exc:
                exc.records = records
                raise
            records.append(record)
            if n % policy.clean_every == 0:
                try:
                    self.clean_environment()
                except EngineError as exc:
                    logger.warning("cleanup after build %d failed: %s", n, exc)
            if stop_on_failure and not record.succeeded:
                break
        return records

    def clean_environment(self) -> None:
        """Prune build cache, dangling images and stopped containers."""
        with HOST_ENGINE_LOCK.write():
            self.driver.prune()
            self.cleanups += 1
        logger.info("engine cleanup done via %s", self.driver.driver_id)

    def _persist(self, record: BuildRecord) -> BuildRecord:
        if self.builds_dir is None:
            return record
        target = self.builds_dir / record.dockerfile_hash
        with self._persist_lock:
            target.mkdir(parents=True, exist_ok=True)
            seq = len(list(target.glob("*.json")))
            record = record.model_copy(update={"seq": seq})
            (target / f"{seq}.log").write_text(record.log, encoding="utf-8")
            payload = record.model_dump(mode="json", exclude={"log"})
            payload["log_file"] = f"{seq}.log"
            (target / f"{seq}.json").write_text(json.dumps(payload, indent=2), encoding="utf-8")
        return record


def load_build_records(builds_dir: Path, dockerfile_hash: str) -> list[BuildRecord]:
    target = Path(builds_dir) / dockerfile_hash
    records = []
    for path in sorted(target.glob("*.json"), key=lambda p: int(p.stem)):
        payload = json.loads(path.read_text(encoding="utf-8"))
        log_file = payload.pop("log_file", f"{path.stem}.log")
        payload["log"] = (target / log_file).read_text(encoding="utf-8")
        records.append(BuildRecord.model_validate(payload))
    return records


def build_driver(settings) -> BuildDriver:
    if settings.DRIVER == "simulated":
        return SimulatedDriver.from_file(settings.SCENARIO)
    return DockerDriver(settings.BUILD_COMMAND, settings.BUILD_COMMAND_CACHED, settings.PRUNE_COMMANDS)
