from pathlib import Path
from typing import Literal, Optional

from pydantic import BaseModel, Field


class ManifestEntry(BaseModel):
    name: str = Field(min_length=1)
    context_dir: Path
    # relative to context_dir
    dockerfile: Path = Path("Dockerfile")
    baseline: Literal["verified", "unverified"] = "verified"


class Manifest(BaseModel):
    projects: list[ManifestEntry]

    def resolved(self, base_dir: Path) -> "Manifest":
        """Entries with context directories made absolute against the manifest location."""
        return Manifest(
            projects=[
                entry.model_copy(
                    update={"context_dir": entry.context_dir if entry.context_dir.is_absolute() else base_dir / entry.context_dir}
                )
                for entry in self.projects
            ]
        )


class ProjectReport(BaseModel):
    name: str
    builds: int = 0
    failures: int = 0
    excluded: dict[str, int] = Field(default_factory=dict)
    flaky_candidate: bool = False
    error: Optional[str] = None
    history_builds: int = 0
    history_failures: int = 0


class MonitorReport(BaseModel):
    rounds: int
    cleanups: int = 0
    projects: list[ProjectReport] = Field(default_factory=list)

    @property
    def flaky_candidates(self) -> list[str]:
        return [p.name for p in self.projects if p.flaky_candidate]
