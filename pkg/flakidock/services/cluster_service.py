import logging

import numpy as np

from flakidock.schemas.embedding import Cluster, EmbeddingVector
from flakidock.services.embedding_service import EmbeddingProvider, cosine, embed

logger = logging.getLogger(__name__)


def _centroid(vectors: tuple[EmbeddingVector, ...]) -> EmbeddingVector:
    mean = np.mean([v.values for v in vectors], axis=0)
    norm = np.linalg.norm(mean)
    if norm == 0.0:
        # opposite members cancel; keep the newest member as the summary
        return vectors[-1]
    first = vectors[0]
    return EmbeddingVector(values=tuple(float(x) for x in mean / norm), dim=first.dim, provider_id=first.provider_id)


def mean_similarity(cluster: Cluster, vec: EmbeddingVector) -> float:
    return float(np.mean([cosine(vec, member) for member in cluster.member_vectors]))


def cluster_add(
    state: list[Cluster],
    output_id: str,
    vec: EmbeddingVector,
    threshold: float,
) -> tuple[list[Cluster], int]:
    """Assign one output to the cluster it is on average most similar to.

    Joins the best cluster when its mean member similarity reaches
    `threshold`, otherwise opens a singleton. Returns a new state; the input
    list is not modified. Results depend on insertion order.
    """
    if not 0.0 < threshold < 1.0:
        raise ValueError("threshold must lie strictly between 0 and 1")
    if any(output_id in cluster.member_ids for cluster in state):
        raise ValueError(f"output {output_id!r} is already clustered")

    best_index, best_score = None, -1.0
    for index, cluster in enumerate(state):
        score = mean_similarity(cluster, vec)
        if score > best_score:
            best_index, best_score = index, score

    new_state = list(state)
    if best_index is not None and best_score >= threshold:
        current = state[best_index]
        members = current.member_vectors + (vec,)
        new_state[best_index] = Cluster(
            id=current.id,
            member_ids=current.member_ids + (output_id,),
            member_vectors=members,
            centroid=_centroid(members),
        )
        return new_state, current.id

    cluster_id = max((c.id for c in state), default=-1) + 1
    new_state.append(Cluster(id=cluster_id, member_ids=(output_id,), member_vectors=(vec,), centroid=vec))
    return new_state, cluster_id


def cluster_outputs(
    outputs: list[tuple[str, str]],
    provider: EmbeddingProvider,
    threshold: float,
) -> list[Cluster]:
    """Cluster (id, preprocessed text) pairs of one project in the given order."""
    state: list[Cluster] = []
    for output_id, text in outputs:
        state, cluster_id = cluster_add(state, output_id, embed(text, provider), threshold)
        logger.debug("output %s -> cluster %d", output_id, cluster_id)
    logger.info("clustered %d outputs into %d groups", len(outputs), len(state))
    return state


def reduction_ratio(clusters: list[Cluster]) -> float:
    inputs = sum(cluster.size for cluster in clusters)
    if inputs == 0:
        return 0.0
    return 1.0 - len(clusters) / inputs
