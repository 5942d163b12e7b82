import numpy as np
import pytest

from flakidock.core.errors import DimensionMismatch, SchemaViolation
from flakidock.schemas.dataset import DemonstrationRecord, FlakinessCategory, Major
from flakidock.schemas.embedding import EmbeddingVector, RepairQuery
from flakidock.services.embedding_service import cosine, embed
from flakidock.services.index_service import DemoIndex, rank, read_vectors, retrieve_top_k, write_vectors


def record(record_id: str, static: str = "FROM alpine\n", dynamic: str = "error", values=None) -> DemonstrationRecord:
    embedding = None
    if values is not None:
        embedding = EmbeddingVector(values=tuple(float(v) for v in values), dim=len(values), provider_id="test")
    return DemonstrationRecord(
        id=record_id,
        static_part=static,
        dynamic_part=dynamic,
        category=FlakinessCategory(major=Major.DEP, sub="Versioning Issues"),
        repairs=["FROM alpine:3.19\n"],
        iterations=[1],
        embedding=embedding,
    )


def embedded(record_id: str, static: str, dynamic: str, provider) -> DemonstrationRecord:
    base = record(record_id, static, dynamic)
    return base.model_copy(update={"embedding": embed(base.combined_text, provider)})


def test_retrieval_matches_brute_force():
    rng = np.random.default_rng(2024)
    matrix = rng.normal(size=(1000, 24))
    index = DemoIndex([record(f"r{n:04d}", values=row) for n, row in enumerate(matrix)], provider_id="test")
    for _ in range(5):
        query = rng.normal(size=24)
        got = rank(index.similarities(EmbeddingVector(values=tuple(query), dim=24, provider_id="test")), 3)

        scores = matrix @ query / (np.linalg.norm(matrix, axis=1) * np.linalg.norm(query))
        expected = sorted(range(1000), key=lambda n: (-scores[n], f"r{n:04d}"))[:3]
        assert [ex.record.id for ex in got] == [f"r{n:04d}" for n in expected]
        assert [ex.similarity for ex in got] == sorted((ex.similarity for ex in got), reverse=True)


def test_ties_break_by_id():
    index = DemoIndex([record(i, values=[1.0, 0.0]) for i in ("c", "a", "b")])
    got = rank(index.similarities(EmbeddingVector(values=(1.0, 0.0), dim=2, provider_id="test")), 3)
    assert [ex.record.id for ex in got] == ["a", "b", "c"]


def test_self_retrieval(hashing):
    records = [
        embedded("env", "FROM alpine\nRUN pip3 install x\n", "error: externally-managed-environment", hashing),
        embedded("con", "FROM debian\nRUN apt-get update\n", "Could not connect to deb.debian.org", hashing),
        embedded("sec", "FROM ubuntu\nRUN apt-key adv\n", "NO_PUBKEY F23C5A6CF475977595C89F51BA6932366A755776", hashing),
    ]
    index = DemoIndex(records, provider_id=hashing.provider_id)
    query = RepairQuery(static_part="FROM debian\nRUN apt-get update\n", dynamic_part="Could not connect to deb.debian.org")
    got = retrieve_top_k(query, index, 3, hashing)
    assert got[0].record.id == "con"
    assert got[0].similarity == pytest.approx(1.0, abs=1e-6)
    assert len(got) == 3


def test_k_larger_than_store(hashing):
    index = DemoIndex([embedded("only", "FROM alpine\n", "error", hashing)])
    assert len(retrieve_top_k(RepairQuery(static_part="FROM x\n", dynamic_part="y"), index, 3, hashing)) == 1


def test_empty_store(hashing):
    assert retrieve_top_k(RepairQuery(static_part="FROM x\n", dynamic_part="y"), DemoIndex(), 3, hashing) == []


def test_k_must_be_positive(hashing):
    with pytest.raises(ValueError):
        retrieve_top_k(RepairQuery(static_part="FROM x\n", dynamic_part="y"), DemoIndex(), 0, hashing)


def test_duplicate_id():
    index = DemoIndex([record("a")])
    with pytest.raises(SchemaViolation):
        index.add(record("a"))


def test_dimension_mismatch_on_add():
    index = DemoIndex([record("a", values=[1.0, 0.0])])
    with pytest.raises(DimensionMismatch):
        index.add(record("b", values=[1.0, 0.0, 0.0]))


def test_add_and_get():
    index = DemoIndex()
    index.add(record("x"))
    assert len(index) == 1
    assert index.get("x").id == "x"
    assert index.get("y") is None


def test_similarities_agree_with_cosine_after_add():
    index = DemoIndex([record("a", values=[3.0, 4.0, 0.0]), record("b", values=[0.0, -2.0, 1.0])])
    index.add(record("c", values=[1.0, 1.0, 1.0]))
    query = EmbeddingVector(values=(2.0, 1.0, -1.0), dim=3, provider_id="test")
    scored = index.similarities(query)
    assert [r.id for r, _ in scored] == ["a", "b", "c"]
    for r, score in scored:
        assert score == pytest.approx(cosine(query, r.embedding), abs=1e-12)


def test_query_dimension_mismatch():
    index = DemoIndex([record("a", values=[1.0, 0.0])])
    with pytest.raises(DimensionMismatch):
        index.similarities(EmbeddingVector(values=(1.0, 0.0, 0.0), dim=3, provider_id="test"))


def test_similarities_need_vectors():
    index = DemoIndex([record("a")])
    with pytest.raises(SchemaViolation):
        index.similarities(EmbeddingVector(values=(1.0,), dim=1, provider_id="test"))


def test_vectors_file_layout(tmp_path):
    vectors = [
        EmbeddingVector(values=(1.0, 0.5, 0.25), dim=3, provider_id="test"),
        EmbeddingVector(values=(0.0, -1.0, 2.0), dim=3, provider_id="test"),
    ]
    path = tmp_path / "vectors.bin"
    write_vectors(path, vectors)
    assert path.stat().st_size == 8 + 2 * 3 * 4
    assert read_vectors(path).tolist() == [[1.0, 0.5, 0.25], [0.0, -1.0, 2.0]]


def test_truncated_vectors_file(tmp_path):
    path = tmp_path / "vectors.bin"
    write_vectors(path, [EmbeddingVector(values=(1.0, 2.0), dim=2, provider_id="test")])
    path.write_bytes(path.read_bytes()[:-2])
    with pytest.raises(SchemaViolation):
        read_vectors(path)
