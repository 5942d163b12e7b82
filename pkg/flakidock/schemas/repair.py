from enum import Enum
from typing import Optional

from pydantic import BaseModel, Field, PrivateAttr, field_validator

from flakidock.schemas.build import BuildRecord
from flakidock.schemas.dataset import DemonstrationRecord, FlakinessCategory
from flakidock.schemas.embedding import EmbeddingVector, RepairQuery

UNPARSEABLE_FEEDBACK = "provider returned unparseable repair"


class ValidationPolicy(BaseModel):
    build_iterations: int = Field(default=2, ge=1)
    failure_threshold: int = Field(default=3, ge=1)
    max_total_attempts: int = Field(default=10, ge=1)
    feedback_similarity_threshold: float = Field(default=0.90, gt=0.0, lt=1.0)
    feedback_in_prompt: bool = True


class Verdict(str, Enum):
    IN_PROGRESS = "in_progress"
    REPAIRED = "repaired"
    UNRESOLVED = "unresolved"
    NON_FLAKY = "non_flaky"
    ENGINE_ABORTED = "engine_aborted"
    PROVIDER_ABORTED = "provider_aborted"


class Detection(BaseModel):
    flaky: bool
    records: list[BuildRecord] = Field(default_factory=list)

    @property
    def first_failing(self) -> Optional[BuildRecord]:
        return next((r for r in self.records if not r.succeeded), None)


class FeedbackEntry(BaseModel):
    false_repair: str
    failure_output: str
    attempt_index: int


class RetrievedExample(BaseModel):
    record: DemonstrationRecord
    similarity: float


class RepairSession(BaseModel):
    id: str
    query: RepairQuery
    retrieved: list[RetrievedExample] = Field(default_factory=list)
    feedback: list[FeedbackEntry] = Field(default_factory=list)
    verdict: Verdict = Verdict.IN_PROGRESS
    final_dockerfile: Optional[str] = None
    reason: Optional[str] = None
    attempts_used: int = 0
    category_guess: Optional[FlakinessCategory] = None

    # sentence vectors of feedback failure texts, keyed by attempt index
    _feedback_vectors: dict[int, EmbeddingVector] = PrivateAttr(default_factory=dict)

    @field_validator("feedback")
    @classmethod
    def _attempts_increasing(cls, value: list[FeedbackEntry]) -> list[FeedbackEntry]:
        indices = [entry.attempt_index for entry in value]
        if any(b <= a for a, b in zip(indices, indices[1:])):
            raise ValueError("feedback attempt indices must strictly increase")
        return value

    @property
    def is_terminal(self) -> bool:
        return self.verdict is not Verdict.IN_PROGRESS

    def summary(self) -> dict:
        return {
            "session": self.id,
            "verdict": self.verdict.value,
            "reason": self.reason,
            "attempts_used": self.attempts_used,
            "feedback_entries": len(self.feedback),
            "retrieved": [
                {"id": ex.record.id, "similarity": round(ex.similarity, 6)}
                for ex in self.retrieved
            ],
            "category_guess": str(self.category_guess) if self.category_guess else None,
        }


class OutcomeKind(str, Enum):
    REPAIR = "repair"
    FEEDBACK = "feedback"
    UNRESOLVED = "unresolved"


class ValidationOutcome(BaseModel):
    kind: OutcomeKind
    candidate: Optional[str] = None
    similar_failures: int = 0
    records: list[BuildRecord] = Field(default_factory=list)
