import json
import logging
import math
from collections import Counter
from functools import lru_cache
from pathlib import Path
from typing import Optional

import numpy as np
from pydantic import ValidationError

from flakidock.core.config import DATA_DIR
from flakidock.core.errors import FlakiDockError, SchemaViolation, VersionMismatch
from flakidock.schemas.dataset import CategoryCount, DemonstrationRecord, FlakinessCategory, Major
from flakidock.schemas.embedding import EmbeddingVector
from flakidock.services.dockerfile_service import parse_dockerfile
from flakidock.services.embedding_service import EmbeddingProvider
from flakidock.services.index_service import VECTORS_FILE, DemoIndex, read_vectors, write_vectors

logger = logging.getLogger(__name__)

STORE_SCHEMA = "flakidock.demonstrations"
STORE_VERSION = 1
TAXONOMY_PATH = DATA_DIR / "taxonomy.json"


@lru_cache(maxsize=1)
def load_taxonomy() -> dict[Major, tuple[str, ...]]:
    raw = json.loads(TAXONOMY_PATH.read_text(encoding="utf-8"))
    return {Major(key): tuple(value["subcategories"]) for key, value in raw.items()}


def is_known(category: FlakinessCategory) -> bool:
    return category.sub is None or category.sub in load_taxonomy()[category.major]


def _canonical(payload: dict) -> str:
    return json.dumps(payload, sort_keys=True, separators=(",", ":"), ensure_ascii=False)


def _parse_record(line: str, lineno: int, path: Path) -> DemonstrationRecord:
    try:
        raw = json.loads(line)
    except json.JSONDecodeError as exc:
        raise SchemaViolation(None, f"line {lineno}", f"invalid JSON in {path}: {exc}") from exc
    record_id = raw.get("id") if isinstance(raw, dict) else None
    try:
        record = DemonstrationRecord.model_validate(raw)
    except ValidationError as exc:
        error = exc.errors()[0]
        field = ".".join(str(part) for part in error["loc"]) or "record"
        raise SchemaViolation(record_id, field, error["msg"]) from exc
    for n, repair in enumerate(record.repairs):
        try:
            parse_dockerfile(repair)
        except FlakiDockError as exc:
            raise SchemaViolation(record.id, f"repairs.{n}", f"not a parseable Dockerfile: {exc}") from exc
    return record


def read_store(path: Path) -> tuple[dict, list[DemonstrationRecord]]:
    """Header and validated records of a JSONL store, without vectors."""
    path = Path(path)
    lines = [(n, line) for n, line in enumerate(path.read_text(encoding="utf-8").splitlines(), 1) if line.strip()]
    if not lines:
        raise VersionMismatch(f"{path} has no schema header")
    try:
        header = json.loads(lines[0][1])
    except json.JSONDecodeError as exc:
        raise VersionMismatch(f"{path}: first line is not a schema header") from exc
    if not isinstance(header, dict) or header.get("schema") != STORE_SCHEMA:
        raise VersionMismatch(f"{path}: first line is not a {STORE_SCHEMA} header")
    if header.get("version") != STORE_VERSION:
        raise VersionMismatch(
            f"{path}: store version {header.get('version')!r}, this build reads version {STORE_VERSION}"
        )

    records: list[DemonstrationRecord] = []
    seen: set[str] = set()
    for lineno, line in lines[1:]:
        record = _parse_record(line, lineno, path)
        if record.id in seen:
            raise SchemaViolation(record.id, "id", "duplicate record id")
        seen.add(record.id)
        if not is_known(record.category):
            logger.warning(
                "record %s: unknown subcategory %r for %s, excluded from stats",
                record.id,
                record.category.sub,
                record.category.major.value,
            )
        records.append(record)
    return header, records


def load_store(path: Path, provider: Optional[EmbeddingProvider] = None) -> DemoIndex:
    """Load and validate a demonstration store.

    With a provider, vectors come from the sibling vectors file when it was
    written by the same provider, and are recomputed otherwise.
    """
    path = Path(path)
    header, records = read_store(path)
    if provider is None:
        return DemoIndex(records, provider_id=header.get("embedding_provider"))

    vectors_path = path.parent / VECTORS_FILE
    stored = None
    if header.get("embedding_provider") == provider.provider_id and vectors_path.is_file():
        stored = read_vectors(vectors_path)
        if stored.shape[0] != len(records):
            logger.warning("%s holds %d rows for %d records", vectors_path, stored.shape[0], len(records))
            stored = None

    if stored is not None:
        records = [
            record.model_copy(
                update={
                    "embedding": EmbeddingVector(
                        values=tuple(float(v) for v in row), dim=row.shape[0], provider_id=provider.provider_id
                    )
                }
            )
            for record, row in zip(records, stored)
        ]
        index = DemoIndex(records, provider_id=provider.provider_id)
    else:
        if records:
            logger.warning("recomputing %d vectors for %s with %s", len(records), path, provider.provider_id)
        vectors = provider.embed_many([record.combined_text for record in records])
        records = [record.model_copy(update={"embedding": vec}) for record, vec in zip(records, vectors)]
        index = DemoIndex(records, provider_id=provider.provider_id)
        index.recomputed = bool(records)
    logger.info("loaded %d demonstrations from %s", len(index), path)
    return index


def save_store(index: DemoIndex, path: Path) -> None:
    """Write canonical JSONL (sorted keys, compact separators) and, when every record has one, vectors."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    records = index.records
    with_vectors = bool(records) and all(record.embedding is not None for record in records)
    header = {
        "schema": STORE_SCHEMA,
        "version": STORE_VERSION,
        "embedding_provider": index.provider_id if with_vectors else None,
    }
    lines = [_canonical(header)]
    lines.extend(_canonical(record.model_dump(mode="json")) for record in records)
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")
    if with_vectors:
        write_vectors(path.parent / VECTORS_FILE, [record.embedding for record in records])


def category_stats(index: DemoIndex) -> dict[Major, CategoryCount]:
    """Count and fraction of records per major category."""
    counts = Counter(record.category.major for record in index.records)
    total = sum(counts.values())
    return {
        major: CategoryCount(count=counts[major], fraction=counts[major] / total)
        for major in Major
        if counts[major]
    }


def sub_stats(index: DemoIndex) -> dict[str, CategoryCount]:
    """Per-subcategory counts; fractions are relative to the records of the same major
    carrying a known subcategory."""
    known = [r.category for r in index.records if r.category.sub and is_known(r.category)]
    counts = Counter(known)
    per_major = Counter(category.major for category in known)
    return {
        str(category): CategoryCount(count=count, fraction=count / per_major[category.major])
        for category, count in sorted(counts.items(), key=lambda item: (item[0].major.value, item[0].sub))
    }


def suggest_build_iterations(index: DemoIndex, coverage: float = 0.9) -> int:
    """Smallest build count covering `coverage` of the recorded repair iteration counts."""
    if not 0.0 < coverage <= 1.0:
        raise ValueError("coverage must lie in (0, 1]")
    values = [count for record in index.records for count in record.iterations]
    if not values:
        raise ValueError("no iteration counts recorded")
    return max(1, math.ceil(float(np.quantile(values, coverage))))
