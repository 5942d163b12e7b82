from typing import Optional

from pydantic import BaseModel, Field, model_validator

from flakidock.schemas.build import BuildStatus


class ScriptEntry(BaseModel):
    """One scripted build outcome for the simulated driver."""

    status: BuildStatus = BuildStatus.SUCCESS
    exit_code: Optional[int] = None
    log: str = ""
    log_file: Optional[str] = None
    duration: float = Field(default=1.0, ge=0)

    @model_validator(mode="after")
    def _default_exit_code(self) -> "ScriptEntry":
        if self.exit_code is None:
            if self.status is BuildStatus.SUCCESS:
                self.exit_code = 0
            elif self.status is BuildStatus.FAILURE:
                self.exit_code = 1
        return self


class Scenario(BaseModel):
    """A replayable scenario: build scripts plus canned provider responses.

    Build script keys are a Dockerfile sha256 digest, `contains:<text>` (first
    script whose text occurs in the Dockerfile) or `*` for everything else.
    Each script is consumed one entry per build and its last entry repeats.
    """

    builds: dict[str, list[ScriptEntry]] = Field(default_factory=dict)
    responses: list[str] = Field(default_factory=list)

    @model_validator(mode="after")
    def _scripts_not_empty(self) -> "Scenario":
        for key, entries in self.builds.items():
            if not entries:
                raise ValueError(f"build script {key!r} is empty")
        return self
