from pathlib import Path
from typing import Literal, Optional

from pydantic import Field, field_validator, model_validator
from pydantic_settings import BaseSettings, SettingsConfigDict

from flakidock.schemas.build import HygienePolicy
from flakidock.schemas.repair import ValidationPolicy

PACKAGE_DIR = Path(__file__).resolve().parent.parent
DATA_DIR = PACKAGE_DIR / "data"
TEMPLATES_DIR = PACKAGE_DIR / "templates"

DEFAULT_RULES_PATH = DATA_DIR / "rules" / "default.rules"
DEFAULT_DEMO_STORE = DATA_DIR / "demonstrations.jsonl"


class Settings(BaseSettings):
    # Loaded from FLAKIDOCK_* environment variables and a key-value .env file
    model_config = SettingsConfigDict(
        env_prefix="FLAKIDOCK_",
        env_file=".env",
        env_file_encoding="utf-8",
        extra="ignore",
    )

    STATE_DIR: Path = Path(".flakidock")

    # Build engine
    DRIVER: Literal["real", "simulated"] = "real"
    SCENARIO: Optional[Path] = None
    BUILD_COMMAND: str = "docker build --no-cache --progress=plain -f {dockerfile} {context}"
    BUILD_COMMAND_CACHED: str = "docker build --progress=plain -f {dockerfile} {context}"
    PRUNE_COMMANDS: list[str] = [
        "docker builder prune -af",
        "docker image prune -f",
        "docker container prune -f",
    ]
    BUILD_TIMEOUT: float = 1800.0
    CLEAN_EVERY: int = 4
    NO_CACHE: bool = True
    BUILD_WORKERS: int = 4

    # Log preprocessing
    RULES_PATH: Optional[Path] = None
    EXCERPT_CAP: int = 120
    ADJACENCY_WINDOW: int = 2

    # Similarity + retrieval
    CLUSTER_THRESHOLD: float = 0.80
    RETRIEVAL_K: int = 3
    DEMO_STORE: Optional[Path] = None
    HASHING_DIM: int = 256

    EMBEDDING_PROVIDER: Literal["hashing", "litellm"] = "hashing"
    EMBEDDING_MODEL: str = "text-embedding-ada-002"
    EMBEDDING_API_BASE: str = ""
    EMBEDDING_API_KEY_ENV: str = "OPENAI_API_KEY"
    EMBEDDING_MAX_TOKENS: int = 8191
    EMBEDDING_TIMEOUT: float = 60.0

    SENTENCE_PROVIDER: Literal["hashing", "sentence-transformers", "litellm"] = "hashing"
    SENTENCE_MODEL: str = "all-mpnet-base-v2"

    # Repair generation
    GENERATION_PROVIDER: Literal["litellm", "scripted"] = "litellm"
    GENERATION_MODEL: str = "gpt-4-0613"
    GENERATION_API_BASE: str = ""
    GENERATION_API_KEY_ENV: str = "OPENAI_API_KEY"
    GENERATION_MAX_TOKENS: int = 2048
    GENERATION_TIMEOUT: float = 120.0
    CONTEXT_BUDGET: int = 8192

    # Validation policy (n, T)
    BUILD_ITERATIONS: int = Field(default=2, ge=1)
    FAILURE_THRESHOLD: int = Field(default=3, ge=1)
    MAX_TOTAL_ATTEMPTS: int = Field(default=10, ge=1)
    FEEDBACK_SIMILARITY_THRESHOLD: float = 0.90
    FEEDBACK_IN_PROMPT: bool = True

    @field_validator("CLUSTER_THRESHOLD", "FEEDBACK_SIMILARITY_THRESHOLD")
    @classmethod
    def _open_unit_interval(cls, value: float) -> float:
        if not 0.0 < value < 1.0:
            raise ValueError("threshold must lie strictly between 0 and 1")
        return value

    @field_validator("RETRIEVAL_K", "CLEAN_EVERY", "BUILD_WORKERS", "EXCERPT_CAP", "HASHING_DIM")
    @classmethod
    def _positive(cls, value: int) -> int:
        if value < 1:
            raise ValueError("must be >= 1")
        return value

    @field_validator("BUILD_TIMEOUT")
    @classmethod
    def _positive_timeout(cls, value: float) -> float:
        if value <= 0:
            raise ValueError("timeout must be > 0")
        return value

    @model_validator(mode="after")
    def _referenced_paths_exist(self) -> "Settings":
        if self.RULES_PATH is not None and not self.RULES_PATH.is_file():
            raise ValueError(f"rules file not found: {self.RULES_PATH}")
        if self.DEMO_STORE is not None and not self.DEMO_STORE.is_file():
            raise ValueError(f"demonstration store not found: {self.DEMO_STORE}")
        if self.DRIVER == "simulated":
            if self.SCENARIO is None:
                raise ValueError("simulated driver needs a SCENARIO file")
            if not self.SCENARIO.is_file():
                raise ValueError(f"scenario file not found: {self.SCENARIO}")
        return self

    def hygiene_policy(self) -> HygienePolicy:
        return HygienePolicy(
            clean_every=self.CLEAN_EVERY,
            timeout=self.BUILD_TIMEOUT,
            no_cache=self.NO_CACHE,
        )

    def validation_policy(self) -> ValidationPolicy:
        return ValidationPolicy(
            build_iterations=self.BUILD_ITERATIONS,
            failure_threshold=self.FAILURE_THRESHOLD,
            max_total_attempts=self.MAX_TOTAL_ATTEMPTS,
            feedback_similarity_threshold=self.FEEDBACK_SIMILARITY_THRESHOLD,
            feedback_in_prompt=self.FEEDBACK_IN_PROMPT,
        )

    @property
    def rules_path(self) -> Path:
        return self.RULES_PATH or DEFAULT_RULES_PATH

    @property
    def demo_store_path(self) -> Path:
        """The state index when one was built, else the shipped fixture records."""
        if self.DEMO_STORE is not None:
            return self.DEMO_STORE
        state_index = self.STATE_DIR / "index" / "records.jsonl"
        if state_index.is_file():
            return state_index
        return DEFAULT_DEMO_STORE


def load_settings(config_path: Optional[Path] = None, **overrides) -> Settings:
    """Build Settings from an optional key-value file plus explicit overrides."""
    cleaned = {key: value for key, value in overrides.items() if value is not None}
    if config_path is not None:
        return Settings(_env_file=config_path, **cleaned)
    return Settings(**cleaned)
