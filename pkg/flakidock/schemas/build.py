from datetime import datetime
from enum import Enum
from typing import Optional

from pydantic import BaseModel, Field, model_validator


class BuildStatus(str, Enum):
    SUCCESS = "success"
    FAILURE = "failure"
    TIMEOUT = "timeout"
    ENGINE_ERROR = "engine_error"


class BuildRecord(BaseModel):
    dockerfile_hash: str
    log: str
    status: BuildStatus
    exit_code: Optional[int] = None
    duration: float
    started_at: datetime
    driver_id: str
    seq: Optional[int] = None

    @model_validator(mode="after")
    def _status_consistent(self) -> "BuildRecord":
        if self.status is BuildStatus.SUCCESS and self.exit_code not in (0, None):
            raise ValueError("a successful build must have exit code 0")
        if self.status is BuildStatus.FAILURE and not self.exit_code:
            raise ValueError("a failed build needs a non-zero exit code")
        return self

    @property
    def succeeded(self) -> bool:
        return self.status is BuildStatus.SUCCESS

    def status_line(self) -> str:
        if self.status is BuildStatus.FAILURE:
            return f"build failed with exit code {self.exit_code}"
        if self.status is BuildStatus.TIMEOUT:
            return f"build timed out after {self.duration:.0f}s"
        return f"build {self.status.value}"


class HygienePolicy(BaseModel):
    clean_every: int = Field(default=4, ge=1)
    timeout: float = Field(default=1800.0, gt=0)
    no_cache: bool = True
