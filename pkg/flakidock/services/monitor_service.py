import json
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

from sqlalchemy.orm import Session

from flakidock import models
from flakidock.core.database import get_db
from flakidock.core.errors import EngineError, FlakiDockError
from flakidock.schemas.build import BuildRecord, HygienePolicy
from flakidock.schemas.monitor import Manifest, ManifestEntry, MonitorReport, ProjectReport
from flakidock.services.build_service import BuildEngine
from flakidock.services.dockerfile_service import read_dockerfile
from flakidock.services.log_service import FailureCause, RuleSet, classify_failure_cause, preprocess_log

logger = logging.getLogger(__name__)


def load_manifest(path: Path) -> Manifest:
    """A JSON manifest: {"projects": [{"name", "context_dir", "dockerfile"?, "baseline"?}]}."""
    path = Path(path)
    raw = json.loads(path.read_text(encoding="utf-8"))
    if isinstance(raw, list):
        raw = {"projects": raw}
    return Manifest.model_validate(raw).resolved(path.parent)


@dataclass
class _SeriesResult:
    entry: ManifestEntry
    records: list[BuildRecord] = field(default_factory=list)
    causes: list[Optional[FailureCause]] = field(default_factory=list)
    excerpts: list[Optional[str]] = field(default_factory=list)
    error: Optional[str] = None


def _build_project(
    entry: ManifestEntry,
    rounds: int,
    engine: BuildEngine,
    hygiene: HygienePolicy,
    rules: RuleSet,
    cause_filters: dict[FailureCause, RuleSet],
) -> _SeriesResult:
    result = _SeriesResult(entry=entry)
    try:
        doc = read_dockerfile(entry.context_dir / entry.dockerfile)
        result.records = engine.run_build_series(doc, entry.context_dir, rounds, hygiene)
    except EngineError as exc:
        result.records = list(exc.records)
        result.error = str(exc)
    except (OSError, FlakiDockError) as exc:
        result.error = str(exc)
    if result.error:
        logger.error("project %s: %s", entry.name, result.error)

    for record in result.records:
        if record.succeeded:
            result.causes.append(None)
            result.excerpts.append(None)
            continue
        preprocessed = preprocess_log(record.log, rules)
        result.causes.append(classify_failure_cause(preprocessed, cause_filters))
        result.excerpts.append(preprocessed.render())
    return result


def _get_or_create_project(db: Session, entry: ManifestEntry) -> models.Project:
    project = db.query(models.Project).filter(models.Project.name == entry.name).first()
    if project is None:
        project = models.Project(
            name=entry.name,
            context_dir=str(entry.context_dir),
            dockerfile=str(entry.dockerfile),
            baseline=entry.baseline,
        )
        db.add(project)
        db.commit()
        db.refresh(project)
    return project


def _record_series(db: Session, result: _SeriesResult) -> ProjectReport:
    project = _get_or_create_project(db, result.entry)
    last_round = max((attempt.round for attempt in project.attempts), default=0)
    for offset, (record, cause, excerpt) in enumerate(zip(result.records, result.causes, result.excerpts), 1):
        db.add(
            models.BuildAttempt(
                project_id=project.id,
                round=last_round + offset,
                dockerfile_hash=record.dockerfile_hash,
                status=record.status.value,
                exit_code=record.exit_code,
                duration=record.duration,
                started_at=record.started_at,
                failure_cause=cause.value if cause else None,
                excerpt=excerpt,
            )
        )
    db.commit()
    db.refresh(project)

    report = ProjectReport(name=result.entry.name, builds=len(result.records), error=result.error)
    for record, cause in zip(result.records, result.causes):
        if record.succeeded:
            continue
        if cause is None:
            report.failures += 1
        else:
            report.excluded[cause.value] = report.excluded.get(cause.value, 0) + 1

    history = project.attempts
    counted = [a for a in history if a.status != "success" and a.failure_cause is None]
    report.history_builds = len(history)
    report.history_failures = len(counted)
    # an unverified project first has to show it can build at all
    clean_start = project.baseline == "verified" or (bool(history) and history[0].status == "success")
    report.flaky_candidate = clean_start and bool(counted)
    return report


def run_monitor(
    manifest: Manifest,
    rounds: int,
    engine: BuildEngine,
    hygiene: HygienePolicy,
    rules: RuleSet,
    cause_filters: dict[FailureCause, RuleSet],
    state_dir: Path,
    workers: int = 4,
) -> MonitorReport:
    """Rebuild every listed project `rounds` times and append the outcomes to the history database.

    Projects run concurrently, each project's series is sequential. Failures
    matching a cause filter are stored but not counted as flaky.
    """
    if rounds < 0:
        raise ValueError("rounds must be >= 0")
    report = MonitorReport(rounds=rounds)
    if rounds == 0 or not manifest.projects:
        return report

    cleanups_before = engine.cleanups
    with ThreadPoolExecutor(max_workers=workers) as pool:
        results = list(
            pool.map(
                lambda entry: _build_project(entry, rounds, engine, hygiene, rules, cause_filters),
                manifest.projects,
            )
        )

    with get_db(state_dir) as db:
        for result in results:
            report.projects.append(_record_series(db, result))
    report.cleanups = engine.cleanups - cleanups_before
    logger.info(
        "monitor: %d projects, %d flaky candidates", len(report.projects), len(report.flaky_candidates)
    )
    return report
