from enum import Enum
from typing import Optional

from pydantic import BaseModel, ConfigDict, Field, ValidationInfo, field_validator, model_validator

from flakidock.schemas.embedding import EmbeddingVector, combine_parts


class Major(str, Enum):
    DEP = "DEP"
    CON = "CON"
    SEC = "SEC"
    PMG = "PMG"
    ENV = "ENV"
    FS = "FS"
    MISC = "MISC"


class FlakinessCategory(BaseModel):
    model_config = ConfigDict(frozen=True, extra="forbid")

    major: Major
    sub: Optional[str] = None

    @model_validator(mode="after")
    def _misc_has_no_sub(self) -> "FlakinessCategory":
        if self.major is Major.MISC and self.sub:
            raise ValueError("MISC has no subcategories")
        return self

    def __str__(self) -> str:
        return f"{self.major.value} / {self.sub}" if self.sub else self.major.value


class DemonstrationRecord(BaseModel):
    """One demonstration: (S_d, D_d, C_d, R_d, I_d) plus its embedding."""

    model_config = ConfigDict(extra="forbid")

    id: str = Field(min_length=1)
    static_part: str
    dynamic_part: str
    category: FlakinessCategory
    repairs: list[str] = Field(min_length=1)
    iterations: list[int]
    notes: Optional[str] = None
    # persisted in vectors.bin, never in the JSONL line
    embedding: Optional[EmbeddingVector] = Field(default=None, exclude=True)

    @field_validator("iterations")
    @classmethod
    def _one_count_per_repair(cls, value: list[int], info: ValidationInfo) -> list[int]:
        repairs = info.data.get("repairs")
        if repairs is not None and len(value) != len(repairs):
            raise ValueError(
                f"{len(repairs)} repairs but {len(value)} iteration counts"
            )
        if any(count < 1 for count in value):
            raise ValueError("iteration counts must be >= 1")
        return value

    @property
    def combined_text(self) -> str:
        return combine_parts(self.static_part, self.dynamic_part)


class LabelSuggestion(BaseModel):
    category: FlakinessCategory
    contributing_factors: list[str] = Field(default_factory=list)
    # set when the provider answer could not be mapped and needs a human look
    raw_response: Optional[str] = None

    @property
    def needs_review(self) -> bool:
        return self.raw_response is not None


class CategoryCount(BaseModel):
    count: int
    fraction: float
