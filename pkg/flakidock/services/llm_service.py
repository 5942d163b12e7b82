import logging
import math
import os
import re
import threading
from abc import ABC, abstractmethod
from pathlib import Path
from typing import Optional

from flakidock.core.errors import FlakiDockError, ProviderUnavailable, ScenarioError, UnparseableResponse
from flakidock.schemas.dockerfile import DockerfileDoc, Keyword
from flakidock.schemas.scenario import Scenario
from flakidock.services.dockerfile_service import parse_dockerfile

logger = logging.getLogger(__name__)

CODE_BLOCK = re.compile(r"```[^\n`]*\n(.*?)```", re.DOTALL)


class GenerationProvider(ABC):
    provider_id: str = "abstract"

    @abstractmethod
    def complete(self, prompt: str) -> str:
        raise NotImplementedError

    @abstractmethod
    def count_tokens(self, text: str) -> int:
        raise NotImplementedError


class LiteLLMGenerationProvider(GenerationProvider):
    """Chat-completion model reached through litellm; temperature is pinned to 0."""

    def __init__(
        self,
        model: str,
        api_base: str = "",
        api_key_env: str = "OPENAI_API_KEY",
        max_tokens: int = 2048,
        timeout: float = 120.0,
    ):
        self.model = model
        self.api_base = api_base or None
        self.api_key_env = api_key_env
        self.max_tokens = max_tokens
        self.timeout = timeout
        self.provider_id = f"litellm:{model}"

    def complete(self, prompt: str) -> str:
        import litellm

        logger.info("asking %s (%d chars)", self.model, len(prompt))
        try:
            response = litellm.completion(
                model=self.model,
                messages=[{"role": "user", "content": prompt}],
                temperature=0,
                max_tokens=self.max_tokens,
                api_base=self.api_base,
                api_key=os.environ.get(self.api_key_env),
                timeout=self.timeout,
            )
        except Exception as exc:
            raise ProviderUnavailable(f"completion call to {self.model} failed: {exc}") from exc
        return response.choices[0].message.content or ""

    def count_tokens(self, text: str) -> int:
        import litellm

        return litellm.token_counter(model=self.model, text=text)


class ScriptedGenerationProvider(GenerationProvider):
    """Replays canned responses in order and keeps every prompt it was given."""

    provider_id = "scripted"

    def __init__(self, responses: list[str]):
        self.responses = list(responses)
        self.prompts: list[str] = []
        self._lock = threading.Lock()

    @classmethod
    def from_file(cls, path: Path) -> "ScriptedGenerationProvider":
        try:
            scenario = Scenario.model_validate_json(Path(path).read_text(encoding="utf-8"))
        except (OSError, ValueError) as exc:
            raise ScenarioError(f"cannot load scenario {path}: {exc}") from exc
        return cls(scenario.responses)

    def complete(self, prompt: str) -> str:
        with self._lock:
            index = len(self.prompts)
            self.prompts.append(prompt)
        if index >= len(self.responses):
            raise ProviderUnavailable(f"scripted responses exhausted after {len(self.responses)} calls")
        return self.responses[index]

    def count_tokens(self, text: str) -> int:
        # roughly four characters per token
        return math.ceil(len(text) / 4)


def extract_code_block(response: str) -> str:
    match = CODE_BLOCK.search(response)
    if not match:
        raise UnparseableResponse("response has no fenced code block", response=response)
    return match.group(1)


def parse_repair(response: str) -> DockerfileDoc:
    """The candidate Dockerfile in a provider response: the first fenced block, with a FROM."""
    text = extract_code_block(response)
    if text and not text.endswith("\n"):
        text += "\n"
    try:
        doc = parse_dockerfile(text)
    except FlakiDockError as exc:
        raise UnparseableResponse(f"code block is not a Dockerfile: {exc}", response=response) from exc
    if not any(i.keyword is Keyword.FROM for i in doc.instructions):
        raise UnparseableResponse("code block has no FROM instruction", response=response)
    return doc


def generate_repair(prompt: str, provider: GenerationProvider) -> DockerfileDoc:
    return parse_repair(provider.complete(prompt))


def generation_provider(settings, scenario_path: Optional[Path] = None) -> GenerationProvider:
    if settings.GENERATION_PROVIDER == "scripted":
        path = scenario_path or settings.SCENARIO
        if path is None:
            raise ScenarioError("the scripted provider needs a SCENARIO file")
        return ScriptedGenerationProvider.from_file(path)
    return LiteLLMGenerationProvider(
        model=settings.GENERATION_MODEL,
        api_base=settings.GENERATION_API_BASE,
        api_key_env=settings.GENERATION_API_KEY_ENV,
        max_tokens=settings.GENERATION_MAX_TOKENS,
        timeout=settings.GENERATION_TIMEOUT,
    )
