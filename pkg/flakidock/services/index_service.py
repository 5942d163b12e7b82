import logging
import struct
from pathlib import Path
from typing import Optional

import numpy as np

from flakidock.core.errors import DimensionMismatch, SchemaViolation
from flakidock.core.locks import ReadWriteLock
from flakidock.schemas.dataset import DemonstrationRecord
from flakidock.schemas.embedding import EmbeddingVector, RepairQuery
from flakidock.schemas.repair import RetrievedExample
from flakidock.services.embedding_service import EmbeddingProvider, embed

logger = logging.getLogger(__name__)

VECTORS_FILE = "vectors.bin"
_HEADER = struct.Struct("<II")


class DemoIndex:
    """In-memory demonstration records with their embeddings.

    Vectors are stacked into one row-normalized matrix, so a lookup is a
    single matrix-vector product over the whole store. Reads may run
    concurrently, inserts take the exclusive side of the lock.
    """

    def __init__(self, records: Optional[list[DemonstrationRecord]] = None, provider_id: Optional[str] = None):
        self._lock = ReadWriteLock()
        self._records: list[DemonstrationRecord] = []
        self._ids: set[str] = set()
        # unit rows in record order; None while any record lacks a vector
        self._matrix: Optional[np.ndarray] = None
        self.provider_id = provider_id
        # set when vectors had to be computed at load time instead of read from disk
        self.recomputed = False
        for record in records or []:
            self._append(record)
        self._stack()

    def __len__(self) -> int:
        with self._lock.read():
            return len(self._records)

    @property
    def records(self) -> list[DemonstrationRecord]:
        with self._lock.read():
            return list(self._records)

    def get(self, record_id: str) -> Optional[DemonstrationRecord]:
        with self._lock.read():
            return next((r for r in self._records if r.id == record_id), None)

    def _append(self, record: DemonstrationRecord) -> None:
        if record.id in self._ids:
            raise SchemaViolation(record.id, "id", "duplicate record id")
        if record.embedding is not None and self._records and self._records[0].embedding is not None:
            if record.embedding.dim != self._records[0].embedding.dim:
                raise DimensionMismatch(
                    f"record {record.id} has a {record.embedding.dim}-dim vector, index holds "
                    f"{self._records[0].embedding.dim}-dim vectors"
                )
        self._records.append(record)
        self._ids.add(record.id)

    def _stack(self) -> None:
        vectors = [r.embedding for r in self._records]
        if not vectors or any(v is None for v in vectors):
            self._matrix = None
            return
        matrix = np.asarray([v.values for v in vectors], dtype=np.float64)
        self._matrix = matrix / np.linalg.norm(matrix, axis=1, keepdims=True)

    def add(self, record: DemonstrationRecord) -> None:
        with self._lock.write():
            self._append(record)
            self._stack()
        logger.info("added demonstration %s (%s)", record.id, record.category)

    def similarities(self, vec: EmbeddingVector) -> list[tuple[DemonstrationRecord, float]]:
        """Cosine similarity of `vec` to every record, in store order."""
        with self._lock.read():
            records = list(self._records)
            matrix = self._matrix
        missing = [r.id for r in records if r.embedding is None]
        if missing:
            raise SchemaViolation(missing[0], "embedding", "record has no vector; load the store with a provider")
        if matrix is None:
            return []
        if vec.dim != matrix.shape[1]:
            raise DimensionMismatch(f"cannot compare a {vec.dim}-dim query with {matrix.shape[1]}-dim records")
        query = np.asarray(vec.values, dtype=np.float64)
        scores = np.clip(matrix @ (query / np.linalg.norm(query)), -1.0, 1.0)
        return [(record, float(score)) for record, score in zip(records, scores)]


def rank(scored: list[tuple[DemonstrationRecord, float]], k: int) -> list[RetrievedExample]:
    if k < 1:
        raise ValueError("k must be >= 1")
    ordered = sorted(scored, key=lambda pair: (-pair[1], pair[0].id))
    return [RetrievedExample(record=record, similarity=score) for record, score in ordered[:k]]


def retrieve_top_k(
    query: RepairQuery,
    index: DemoIndex,
    k: int,
    provider: EmbeddingProvider,
) -> list[RetrievedExample]:
    """The k demonstrations whose combined (S, D) text is nearest the query.

    Ordered by descending cosine similarity, ties by ascending record id.
    """
    if k < 1:
        raise ValueError("k must be >= 1")
    if len(index) == 0:
        return []
    query_vec = embed(query.combined_text, provider)
    results = rank(index.similarities(query_vec), k)
    logger.info(
        "retrieved %s", ", ".join(f"{ex.record.id}={ex.similarity:.3f}" for ex in results) or "nothing"
    )
    return results


def write_vectors(path: Path, vectors: list[EmbeddingVector]) -> None:
    dim = vectors[0].dim if vectors else 0
    matrix = np.asarray([v.values for v in vectors], dtype="<f4").reshape(len(vectors), dim)
    Path(path).write_bytes(_HEADER.pack(dim, len(vectors)) + matrix.tobytes(order="C"))


def read_vectors(path: Path) -> np.ndarray:
    """Rows of a vectors file as a (count, dim) float32 array."""
    data = Path(path).read_bytes()
    if len(data) < _HEADER.size:
        raise SchemaViolation(None, VECTORS_FILE, "file too short for its header")
    dim, count = _HEADER.unpack_from(data)
    expected = _HEADER.size + dim * count * 4
    if len(data) != expected:
        raise SchemaViolation(None, VECTORS_FILE, f"expected {expected} bytes for {count}x{dim}, found {len(data)}")
    return np.frombuffer(data, dtype="<f4", offset=_HEADER.size).reshape(count, dim)
