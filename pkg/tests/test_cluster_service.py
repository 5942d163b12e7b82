import random
import string

import pytest

from flakidock.schemas.embedding import EmbeddingVector
from flakidock.services.cluster_service import cluster_add, cluster_outputs, reduction_ratio


def vec(*values: float) -> EmbeddingVector:
    return EmbeddingVector(values=values, dim=len(values), provider_id="test")


def _template(seed: int) -> str:
    rng = random.Random(seed)
    words = ["".join(rng.choice(string.ascii_lowercase) for _ in range(rng.randint(3, 9))) for _ in range(60)]
    return " ".join(words)[:400]


def _template_outputs(templates: int = 10, per_template: int = 10) -> list[tuple[str, str]]:
    bases = [_template(seed) for seed in range(templates)]
    return [
        (f"t{t}-{n}", f"{bases[t]} exit code {n}")
        for n in range(per_template)
        for t in range(templates)
    ]


def test_first_output_opens_cluster_zero():
    state, cluster_id = cluster_add([], "a", vec(1.0, 0.0), 0.8)
    assert cluster_id == 0
    assert state[0].member_ids == ("a",)


def test_same_vector_joins():
    state, _ = cluster_add([], "a", vec(1.0, 0.0), 0.8)
    state, cluster_id = cluster_add(state, "b", vec(1.0, 0.0), 0.8)
    assert cluster_id == 0
    assert state[0].size == 2


def test_dissimilar_vector_opens_new_cluster():
    state, _ = cluster_add([], "a", vec(1.0, 0.0), 0.8)
    state, cluster_id = cluster_add(state, "b", vec(0.0, 1.0), 0.8)
    assert cluster_id == 1
    assert len(state) == 2


def test_join_uses_mean_member_similarity():
    # c is similar enough to b alone, not to the cluster on average
    state, _ = cluster_add([], "a", vec(1.0, 0.0), 0.6)
    state, _ = cluster_add(state, "b", vec(0.8, 0.6), 0.6)
    assert len(state) == 1
    state, cluster_id = cluster_add(state, "c", vec(0.0, 1.0), 0.6)
    assert cluster_id == 1


def test_input_state_is_not_modified():
    state, _ = cluster_add([], "a", vec(1.0, 0.0), 0.8)
    new_state, _ = cluster_add(state, "b", vec(1.0, 0.0), 0.8)
    assert state[0].size == 1
    assert new_state[0].size == 2


def test_centroid_is_normalized():
    state, _ = cluster_add([], "a", vec(1.0, 0.0), 0.5)
    state, _ = cluster_add(state, "b", vec(0.6, 0.8), 0.5)
    assert state[0].centroid.norm == pytest.approx(1.0)


@pytest.mark.parametrize("threshold", [0.0, 1.0, -0.5, 1.5])
def test_threshold_range(threshold):
    with pytest.raises(ValueError):
        cluster_add([], "a", vec(1.0), threshold)


def test_duplicate_output_id():
    state, _ = cluster_add([], "a", vec(1.0, 0.0), 0.8)
    with pytest.raises(ValueError):
        cluster_add(state, "a", vec(1.0, 0.0), 0.8)


def test_template_fixture_reduction(hashing):
    outputs = _template_outputs()
    clusters = cluster_outputs(outputs, hashing, 0.8)
    assert 10 <= len(clusters) <= 13
    assert reduction_ratio(clusters) >= 0.87
    members = [m for c in clusters for m in c.member_ids]
    assert sorted(members) == sorted(output_id for output_id, _ in outputs)
    for cluster in clusters:
        assert len({member.split("-")[0] for member in cluster.member_ids}) == 1


def test_clustering_is_deterministic(hashing):
    outputs = _template_outputs(templates=4, per_template=3)
    first = cluster_outputs(outputs, hashing, 0.8)
    second = cluster_outputs(outputs, hashing, 0.8)
    assert [c.member_ids for c in first] == [c.member_ids for c in second]


def test_reduction_ratio():
    assert reduction_ratio([]) == 0.0
    state, _ = cluster_add([], "only", vec(1.0), 0.8)
    assert reduction_ratio(state) == 0.0
    for n in range(9):
        state, _ = cluster_add(state, f"copy-{n}", vec(1.0), 0.8)
    assert reduction_ratio(state) == pytest.approx(0.9)
