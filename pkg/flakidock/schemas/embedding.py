import math

from pydantic import BaseModel, ConfigDict, model_validator

from flakidock.core.errors import ZeroVector

STATIC_DELIMITER = "### DOCKERFILE ###"
DYNAMIC_DELIMITER = "### BUILD OUTPUT ###"


class EmbeddingVector(BaseModel):
    model_config = ConfigDict(frozen=True)

    values: tuple[float, ...]
    dim: int
    provider_id: str

    @model_validator(mode="after")
    def _shape_and_nonzero(self) -> "EmbeddingVector":
        if len(self.values) != self.dim:
            raise ValueError(f"expected {self.dim} values, got {len(self.values)}")
        if self.dim < 1:
            raise ValueError("dim must be positive")
        if not any(self.values):
            raise ZeroVector(f"provider {self.provider_id} produced the zero vector")
        return self

    @property
    def norm(self) -> float:
        return math.sqrt(sum(v * v for v in self.values))


def combine_parts(static_part: str, dynamic_part: str) -> str:
    return f"{STATIC_DELIMITER}\n{static_part}\n{DYNAMIC_DELIMITER}\n{dynamic_part}"


class RepairQuery(BaseModel):
    static_part: str
    dynamic_part: str

    @property
    def combined_text(self) -> str:
        return combine_parts(self.static_part, self.dynamic_part)


class Cluster(BaseModel):
    model_config = ConfigDict(frozen=True)

    id: int
    member_ids: tuple[str, ...]
    # member vectors are kept for mean-to-members similarity; centroid is a summary
    member_vectors: tuple[EmbeddingVector, ...]
    centroid: EmbeddingVector

    @model_validator(mode="after")
    def _members_consistent(self) -> "Cluster":
        if not self.member_ids:
            raise ValueError("a cluster needs at least one member")
        if len(self.member_ids) != len(self.member_vectors):
            raise ValueError("member_ids and member_vectors differ in length")
        return self

    @property
    def size(self) -> int:
        return len(self.member_ids)
