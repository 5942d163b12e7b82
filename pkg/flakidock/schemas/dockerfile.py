import hashlib
from enum import Enum
from typing import Optional

from pydantic import BaseModel, ConfigDict, model_validator


class Keyword(str, Enum):
    FROM = "FROM"
    RUN = "RUN"
    COPY = "COPY"
    ADD = "ADD"
    WORKDIR = "WORKDIR"
    ENV = "ENV"
    ARG = "ARG"
    ENTRYPOINT = "ENTRYPOINT"
    CMD = "CMD"
    EXPOSE = "EXPOSE"
    LABEL = "LABEL"
    USER = "USER"
    VOLUME = "VOLUME"
    SHELL = "SHELL"
    HEALTHCHECK = "HEALTHCHECK"
    ONBUILD = "ONBUILD"
    STOPSIGNAL = "STOPSIGNAL"
    MAINTAINER = "MAINTAINER"
    COMMENT = "COMMENT"
    UNKNOWN = "UNKNOWN"


class Instruction(BaseModel):
    model_config = ConfigDict(frozen=True)

    keyword: Keyword
    arguments: str
    # 1-based, inclusive
    first_line: int
    last_line: int

    @model_validator(mode="after")
    def _span_ordered(self) -> "Instruction":
        if self.first_line > self.last_line:
            raise ValueError("first_line must not exceed last_line")
        return self

    @property
    def source_span(self) -> tuple[int, int]:
        return (self.first_line, self.last_line)

    @property
    def base_image(self) -> Optional[str]:
        if self.keyword is not Keyword.FROM:
            return None
        tokens = [t for t in self.arguments.split() if not t.startswith("--")]
        return tokens[0] if tokens else None

    @property
    def stage_name(self) -> Optional[str]:
        if self.keyword is not Keyword.FROM:
            return None
        tokens = self.arguments.split()
        for i, token in enumerate(tokens[:-1]):
            if token.upper() == "AS":
                return tokens[i + 1]
        return None


class DockerfileDoc(BaseModel):
    """A parsed build definition.

    `lines` are the decoded source lines with their original line endings;
    serializing joins them back (plus the byte-order mark when one was present).
    """

    model_config = ConfigDict(frozen=True)

    instructions: tuple[Instruction, ...]
    lines: tuple[str, ...]
    raw_text: bytes
    has_bom: bool = False

    @property
    def stage_count(self) -> int:
        return sum(1 for i in self.instructions if i.keyword is Keyword.FROM)

    @property
    def text(self) -> str:
        return "".join(self.lines)

    @property
    def digest(self) -> str:
        return hashlib.sha256(self.raw_text).hexdigest()

    def executed_instructions(self) -> list[Instruction]:
        return [i for i in self.instructions if i.keyword is not Keyword.COMMENT]


class EditOp(str, Enum):
    KEEP = "keep"
    ADD = "add"
    REMOVE = "remove"


class LineEdit(BaseModel):
    model_config = ConfigDict(frozen=True)

    op: EditOp
    text: str
