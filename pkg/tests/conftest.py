from pathlib import Path

import pytest

from flakidock.schemas.build import BuildStatus, HygienePolicy
from flakidock.schemas.scenario import Scenario, ScriptEntry
from flakidock.services.build_service import BuildEngine, SimulatedDriver
from flakidock.services.dockerfile_service import read_dockerfile
from flakidock.services.embedding_service import HashingEmbeddingProvider
from flakidock.services.log_service import load_rules

FIXTURES = Path(__file__).parent / "fixtures"


def ok(log: str = "#1 DONE 0.1s\n") -> ScriptEntry:
    return ScriptEntry(status=BuildStatus.SUCCESS, log=log)


def failed(log: str, exit_code: int = 1) -> ScriptEntry:
    return ScriptEntry(status=BuildStatus.FAILURE, exit_code=exit_code, log=log)


def simulated_engine(builds: dict[str, list[ScriptEntry]], builds_dir: Path | None = None) -> BuildEngine:
    return BuildEngine(SimulatedDriver(Scenario(builds=builds)), builds_dir=builds_dir)


@pytest.fixture
def pep668():
    return read_dockerfile(FIXTURES / "pep668" / "Dockerfile")


@pytest.fixture
def pep668_repaired():
    return read_dockerfile(FIXTURES / "pep668" / "Dockerfile.repaired")


@pytest.fixture
def pep668_log() -> str:
    return (FIXTURES / "pep668" / "build.log").read_text(encoding="utf-8")


@pytest.fixture
def go_modules():
    return read_dockerfile(FIXTURES / "go_modules" / "Dockerfile")


@pytest.fixture
def go_modules_log() -> str:
    return (FIXTURES / "go_modules" / "build.log").read_text(encoding="utf-8")


@pytest.fixture
def rules():
    return load_rules()


@pytest.fixture
def hashing():
    return HashingEmbeddingProvider(256)


@pytest.fixture
def hygiene():
    return HygienePolicy(clean_every=4, timeout=30.0)


@pytest.fixture
def context_dir(tmp_path):
    path = tmp_path / "context"
    path.mkdir()
    return path
