from typing import Optional

from pydantic import BaseModel, Field, model_validator


class LogLine(BaseModel):
    text: str
    # seconds offset printed by the engine, when the line carries one
    timestamp: Optional[float] = None

    @property
    def bucket(self) -> Optional[int]:
        return None if self.timestamp is None else int(self.timestamp)


class StageSection(BaseModel):
    # -1 marks the preamble before the first stage banner
    stage_index: int
    header: str = ""
    lines: list[LogLine] = Field(default_factory=list)
    # (k, N) from a "[k/N]" or "Step k/N" banner
    step: Optional[tuple[int, int]] = None
    stage_name: Optional[str] = None
    command: Optional[str] = None
    # Dockerfile line of the instruction this stage executed, when aligned
    source_line: Optional[int] = None

    @property
    def is_preamble(self) -> bool:
        return self.stage_index < 0


class Excerpt(BaseModel):
    stage_index: int
    header: str = ""
    kept_lines: list[str] = Field(default_factory=list)
    source_line: Optional[int] = None


class PreprocessedLog(BaseModel):
    excerpts: list[Excerpt] = Field(default_factory=list)
    total_lines_in: int = 0
    total_lines_out: int = 0
    rule_hits: dict[str, int] = Field(default_factory=dict)

    @model_validator(mode="after")
    def _not_growing(self) -> "PreprocessedLog":
        if self.total_lines_out > self.total_lines_in:
            raise ValueError("an excerpt cannot hold more lines than its input")
        return self

    @property
    def is_empty(self) -> bool:
        return self.total_lines_out == 0

    def kept_lines(self) -> list[str]:
        return [line for excerpt in self.excerpts for line in excerpt.kept_lines]

    def render(self) -> str:
        """The dynamic text (D) handed to embedding and prompts.

        Stage banners precede their kept lines so re-segmenting the rendered
        text reproduces the same sections.
        """
        out: list[str] = []
        for excerpt in self.excerpts:
            if excerpt.header:
                out.append(excerpt.header)
            out.extend(excerpt.kept_lines)
        return "\n".join(out)
