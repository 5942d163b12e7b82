import itertools
import json

import pytest

from flakidock.core.config import DEFAULT_DEMO_STORE
from flakidock.core.errors import BudgetExhausted
from flakidock.schemas.build import BuildStatus
from flakidock.schemas.dataset import DemonstrationRecord, FlakinessCategory, Major
from flakidock.schemas.embedding import RepairQuery
from flakidock.schemas.repair import (
    UNPARSEABLE_FEEDBACK,
    FeedbackEntry,
    OutcomeKind,
    RepairSession,
    RetrievedExample,
    ValidationPolicy,
    Verdict,
)
from flakidock.schemas.scenario import ScriptEntry
from flakidock.services.build_service import load_build_records
from flakidock.services.dataset_service import load_store
from flakidock.services.dockerfile_service import parse_dockerfile
from flakidock.services.embedding_service import cosine, embed
from flakidock.services.index_service import DemoIndex
from flakidock.services.llm_service import ScriptedGenerationProvider
from flakidock.services.repair_service import (
    TRUNCATION_MARK,
    Providers,
    RepairPipeline,
    SessionRecorder,
    assemble_prompt,
    detect_flakiness,
    guess_category,
    record_failure,
    repair_flaky_dockerfile,
    validate_repair,
)

from .conftest import failed, ok, simulated_engine

ERRORS = {
    "X": "E: Failed to fetch http://deb.debian.org/debian/dists/buster/InRelease  Connection timed out [IP: 151.101.2.132 80]",
    "Y": "npm ERR! code EINTEGRITY: sha512 integrity checksum failed when using sha512 for left-pad-1.3.0.tgz",
    "Z": "fatal: unable to access 'https://github.com/armon/go-socks5/': Could not resolve host: github.com",
}

ORIGINAL = parse_dockerfile("FROM alpine:3.12\nRUN apk add --no-cache git\nRUN git clone https://github.com/armon/go-socks5\n")


def fenced(text: str) -> str:
    return f"The base image moved on; pin it.\n```dockerfile\n{text}```\n"


def candidate(k: int):
    return parse_dockerfile(f"FROM alpine:3.19\nRUN apk add --no-cache git\nRUN echo attempt-{k}\n")


def demo(record_id: str, major: Major = Major.DEP, sub: str | None = "Versioning Issues") -> DemonstrationRecord:
    return DemonstrationRecord(
        id=record_id,
        static_part=f"FROM alpine:3.12\nRUN echo {record_id}\n",
        dynamic_part=f"ERROR: {record_id} went wrong",
        category=FlakinessCategory(major=major, sub=sub),
        repairs=[f"FROM alpine:3.19\nRUN echo {record_id}\n"],
        iterations=[1],
    )


def new_session() -> RepairSession:
    return RepairSession(id="s", query=RepairQuery(static_part=ORIGINAL.text, dynamic_part="ERROR: first failure"))


# detection


@pytest.mark.parametrize("outcomes", list(itertools.product("SF", repeat=2)))
def test_detection_over_all_two_build_scripts(outcomes, context_dir, hygiene):
    entries = [ok() if o == "S" else failed(f"ERROR: build {n}") for n, o in enumerate(outcomes)]
    engine = simulated_engine({"*": entries})
    detection = detect_flakiness(ORIGINAL, context_dir, ValidationPolicy(build_iterations=2), engine, hygiene)
    assert detection.flaky == (outcomes != ("S", "S"))
    expected_builds = outcomes.index("F") + 1 if "F" in outcomes else 2
    assert len(detection.records) == expected_builds
    if detection.flaky:
        assert detection.first_failing is detection.records[-1]


# prompt assembly


def test_prompt_with_three_examples():
    session = new_session()
    session.retrieved = [RetrievedExample(record=demo(i), similarity=s) for i, s in (("a", 0.9), ("b", 0.8), ("c", 0.7))]
    prompt = assemble_prompt(session)
    assert prompt.count("### EXAMPLE ") == 3
    assert "### FAILED ATTEMPT" not in prompt
    positions = [
        prompt.index("You are an expert"),
        prompt.index("### GUIDANCE ###"),
        prompt.index("### EXAMPLE 1 ###"),
        prompt.index("### FLAKY DOCKERFILE ###"),
        prompt.index("### ANSWER ###"),
    ]
    assert positions == sorted(positions)
    assert prompt.index("RUN echo a") < prompt.index("RUN echo b") < prompt.index("RUN echo c")


def test_prompt_without_examples():
    prompt = assemble_prompt(new_session())
    assert "### EXAMPLE" not in prompt
    assert ORIGINAL.text.strip() in prompt
    assert "ERROR: first failure" in prompt


def test_feedback_blocks_in_attempt_order():
    session = new_session()
    session.feedback = [
        FeedbackEntry(false_repair="FROM alpine:3.18\n", failure_output=ERRORS["X"], attempt_index=1),
        FeedbackEntry(false_repair="FROM alpine:3.17\n", failure_output=ERRORS["Y"], attempt_index=2),
    ]
    prompt = assemble_prompt(session)
    first, second = prompt.index("### FAILED ATTEMPT 1 ###"), prompt.index("### FAILED ATTEMPT 2 ###")
    assert prompt.index("### FLAKY DOCKERFILE ###") < first < second < prompt.index("### ANSWER ###")
    assert first < prompt.index("FROM alpine:3.18") < second < prompt.index("FROM alpine:3.17")
    assert "### FAILED ATTEMPT" not in assemble_prompt(session, include_feedback=False)


def test_budget_drops_least_similar_example_first():
    session = new_session()
    session.retrieved = [RetrievedExample(record=demo(i), similarity=s) for i, s in (("a", 0.9), ("b", 0.8), ("c", 0.7))]
    trimmed = session.model_copy(update={"retrieved": session.retrieved[:2]})
    budget = len(assemble_prompt(trimmed))
    prompt = assemble_prompt(session, budget=budget, count_tokens=len)
    assert prompt == assemble_prompt(trimmed)
    assert "RUN echo c" not in prompt


def test_budget_truncates_build_output_tails():
    session = new_session()
    session.query = RepairQuery(
        static_part=ORIGINAL.text,
        dynamic_part="\n".join(f"#7 {n}.000 compiling unit {n}" for n in range(400)) + "\nERROR: exit code: 2",
    )
    full = assemble_prompt(session)
    prompt = assemble_prompt(session, budget=len(full) // 2, count_tokens=len)
    assert len(prompt) <= len(full) // 2
    assert TRUNCATION_MARK.strip() in prompt
    assert "ERROR: exit code: 2" in prompt
    assert "compiling unit 0\n" not in prompt


def test_budget_exhausted():
    with pytest.raises(BudgetExhausted):
        assemble_prompt(new_session(), budget=10, count_tokens=len)


# repair validation against a direct reading of the validation loop


def reference_loop(outcomes: list[str], threshold: int):
    """Each outcome lists the builds of one attempt: 'S' or an error type."""
    feedback: list[str] = []
    trace = []
    for builds in outcomes:
        if all(b == "S" for b in builds):
            trace.append(("repair", len(feedback)))
            return trace
        error = next(b for b in builds if b != "S")
        failures = sum(1 for seen in feedback if seen == error) + 1
        if failures >= threshold:
            trace.append(("unresolved", len(feedback)))
            return trace
        feedback.append(error)
        trace.append(("feedback", len(feedback)))
    return trace


ALPHABET = {1: ["S", "X", "Y", "Z"], 2: ["SS", "XS", "SY", "ZX"]}


def _sequences(n: int, threshold: int) -> list[tuple[str, ...]]:
    unique = set()
    for seq in itertools.product(ALPHABET[n], repeat=5):
        unique.add(seq[: len(reference_loop(list(seq), threshold))])
    return sorted(unique)


def _entry(build: str) -> ScriptEntry:
    return ok() if build == "S" else failed(ERRORS[build])


def _run(seq, n, threshold, context_dir, hygiene, rules, hashing):
    engine = simulated_engine({candidate(k).digest: [_entry(b) for b in builds] for k, builds in enumerate(seq, 1)})
    policy = ValidationPolicy(build_iterations=n, failure_threshold=threshold)
    session = new_session()
    trace = []
    for k, _ in enumerate(seq, 1):
        outcome = validate_repair(candidate(k), session, policy, context_dir, engine, hygiene, rules, hashing, k)
        if outcome.kind is OutcomeKind.REPAIR:
            assert all(r.succeeded for r in outcome.records) and len(outcome.records) == n
            trace.append(("repair", len(session.feedback)))
            break
        if outcome.kind is OutcomeKind.UNRESOLVED:
            trace.append(("unresolved", len(session.feedback)))
            break
        trace.append(("feedback", len(session.feedback)))
    return trace


@pytest.mark.parametrize("n", [1, 2])
@pytest.mark.parametrize("threshold", [2, 3])
def test_validation_matches_reference_loop(n, threshold, context_dir, hygiene, rules, hashing):
    for seq in _sequences(n, threshold):
        expected = reference_loop(list(seq), threshold)
        assert _run(seq, n, threshold, context_dir, hygiene, rules, hashing) == expected, seq


def test_error_texts_are_mutually_dissimilar(hashing):
    for a, b in itertools.combinations(ERRORS.values(), 2):
        assert cosine(embed(a, hashing), embed(b, hashing)) < 0.9


def test_feedback_grows_by_one(hashing):
    session = new_session()
    policy = ValidationPolicy()
    for k, error in enumerate(["X", "Y", "Z"], 1):
        outcome = record_failure(session, f"FROM alpine:{k}\n", ERRORS[error], k, policy, hashing)
        assert outcome.kind is OutcomeKind.FEEDBACK
        assert [e.attempt_index for e in session.feedback] == list(range(1, k + 1))


def test_two_similar_failures_then_unresolved(hashing):
    session = new_session()
    policy = ValidationPolicy(failure_threshold=3)
    record_failure(session, "FROM a\n", ERRORS["X"], 1, policy, hashing)
    record_failure(session, "FROM b\n", ERRORS["X"], 2, policy, hashing)
    outcome = record_failure(session, "FROM c\n", ERRORS["X"], 3, policy, hashing)
    assert outcome.kind is OutcomeKind.UNRESOLVED
    assert outcome.similar_failures == 3
    assert len(session.feedback) == 2


def test_attempt_indices_must_increase(hashing):
    session = new_session()
    record_failure(session, "FROM a\n", ERRORS["X"], 2, ValidationPolicy(), hashing)
    with pytest.raises(ValueError):
        record_failure(session, "FROM b\n", ERRORS["Y"], 2, ValidationPolicy(), hashing)


def test_terminal_session_is_not_validated(context_dir, hygiene, hashing, rules):
    session = new_session()
    session.verdict = Verdict.REPAIRED
    with pytest.raises(ValueError):
        validate_repair(candidate(1), session, ValidationPolicy(), context_dir, simulated_engine({"*": [ok()]}), hygiene, rules, hashing, 1)


def test_guess_category():
    assert guess_category([]) is None
    retrieved = [
        RetrievedExample(record=demo("a", Major.CON, "Timeout Issues"), similarity=0.9),
        RetrievedExample(record=demo("b", Major.DEP), similarity=0.8),
        RetrievedExample(record=demo("c", Major.DEP), similarity=0.7),
    ]
    assert str(guess_category(retrieved)) == "DEP / Versioning Issues"
    assert str(guess_category(retrieved[:2])) == "CON / Timeout Issues"


# whole pipeline


def make_pipeline(builds, responses, rules, hygiene, hashing, state_dir=None, index=None, **policy):
    generation = ScriptedGenerationProvider(responses)
    pipeline = RepairPipeline(
        engine=simulated_engine(builds),
        index=index if index is not None else DemoIndex(),
        providers=Providers(embedding=hashing, sentence=hashing, generation=generation),
        rules=rules,
        policy=ValidationPolicy(**policy),
        hygiene=hygiene,
        state_dir=state_dir,
    )
    return pipeline, generation


def test_one_shot_repair(context_dir, rules, hygiene, hashing):
    fix = candidate(1)
    pipeline, generation = make_pipeline(
        {ORIGINAL.digest: [failed(ERRORS["Z"])], fix.digest: [ok()]}, [fenced(fix.text)], rules, hygiene, hashing
    )
    session = repair_flaky_dockerfile(ORIGINAL, context_dir, pipeline)
    assert session.verdict is Verdict.REPAIRED
    assert session.attempts_used == 1
    assert session.final_dockerfile == fix.text
    assert session.feedback == []
    assert len(generation.prompts) == 1
    assert ERRORS["Z"] in session.query.dynamic_part


def test_non_flaky_skips_generation(context_dir, rules, hygiene, hashing):
    pipeline, generation = make_pipeline({"*": [ok()]}, [], rules, hygiene, hashing)
    session = repair_flaky_dockerfile(ORIGINAL, context_dir, pipeline)
    assert session.verdict is Verdict.NON_FLAKY
    assert generation.prompts == []
    assert session.attempts_used == 0


@pytest.mark.parametrize(("threshold", "attempts"), [(3, 3), (4, 4)])
def test_same_failure_threshold(threshold, attempts, context_dir, rules, hygiene, hashing):
    bad = candidate(1)
    pipeline, generation = make_pipeline(
        {ORIGINAL.digest: [failed(ERRORS["Z"])], bad.digest: [failed(ERRORS["X"])]},
        [fenced(bad.text)] * 6,
        rules,
        hygiene,
        hashing,
        failure_threshold=threshold,
    )
    session = repair_flaky_dockerfile(ORIGINAL, context_dir, pipeline)
    assert session.verdict is Verdict.UNRESOLVED
    assert session.attempts_used == attempts
    assert len(generation.prompts) == attempts
    assert len(session.feedback) == attempts - 1


def test_unparseable_responses_count_as_attempts(context_dir, rules, hygiene, hashing):
    pipeline, _ = make_pipeline(
        {ORIGINAL.digest: [failed(ERRORS["Z"])]}, ["no idea", "still no idea", "sorry"], rules, hygiene, hashing
    )
    session = repair_flaky_dockerfile(ORIGINAL, context_dir, pipeline)
    assert session.verdict is Verdict.UNRESOLVED
    assert session.attempts_used == 3
    assert [e.failure_output for e in session.feedback] == [UNPARSEABLE_FEEDBACK] * 2
    assert session.feedback[0].false_repair == "no idea"


def test_attempt_cap(context_dir, rules, hygiene, hashing):
    builds = {ORIGINAL.digest: [failed(ERRORS["Z"])]}
    responses = []
    for k, error in enumerate("XYZ", 1):
        builds[candidate(k).digest] = [failed(ERRORS[error])]
        responses.append(fenced(candidate(k).text))
    pipeline, _ = make_pipeline(builds, responses, rules, hygiene, hashing, max_total_attempts=3)
    session = repair_flaky_dockerfile(ORIGINAL, context_dir, pipeline)
    assert session.verdict is Verdict.UNRESOLVED
    assert session.reason == "attempt_cap"
    assert session.attempts_used == 3
    assert len(session.feedback) == 3


def test_engine_failure_aborts(context_dir, rules, hygiene, hashing):
    fix = candidate(1)
    pipeline, _ = make_pipeline(
        {ORIGINAL.digest: [failed(ERRORS["X"])], fix.digest: [ScriptEntry(status=BuildStatus.ENGINE_ERROR, log="daemon gone")]},
        [fenced(fix.text)],
        rules,
        hygiene,
        hashing,
    )
    session = repair_flaky_dockerfile(ORIGINAL, context_dir, pipeline)
    assert session.verdict is Verdict.ENGINE_ABORTED
    assert "daemon gone" in session.reason

    pipeline, _ = make_pipeline({"*": [ScriptEntry(status=BuildStatus.ENGINE_ERROR)]}, [], rules, hygiene, hashing)
    assert repair_flaky_dockerfile(ORIGINAL, context_dir, pipeline).verdict is Verdict.ENGINE_ABORTED


def test_provider_failure_aborts(context_dir, rules, hygiene, hashing):
    pipeline, _ = make_pipeline({ORIGINAL.digest: [failed(ERRORS["X"])]}, [], rules, hygiene, hashing)
    session = repair_flaky_dockerfile(ORIGINAL, context_dir, pipeline)
    assert session.verdict is Verdict.PROVIDER_ABORTED
    assert session.attempts_used == 0


def test_budget_exhaustion_is_unresolved(context_dir, rules, hygiene, hashing):
    pipeline, generation = make_pipeline({ORIGINAL.digest: [failed(ERRORS["X"])]}, [], rules, hygiene, hashing)
    pipeline.context_budget = 10
    session = repair_flaky_dockerfile(ORIGINAL, context_dir, pipeline)
    assert session.verdict is Verdict.UNRESOLVED
    assert session.reason.startswith("budget_exhausted")
    assert generation.prompts == []


def test_recorded_scenario_a_b_c(tmp_path, context_dir, pep668, pep668_log, pep668_repaired, rules, hygiene, hashing):
    a = parse_dockerfile("FROM alpine:latest\nRUN apk add --update python3 py3-pip\nRUN pip3 install --user -r requirements.txt\n")
    b = parse_dockerfile("FROM alpine:3.18\nRUN apk add --update python3 py3-pip\nRUN pip3 install -r requirements.txt\n")
    builds = {
        pep668.digest: [failed(pep668_log)],
        a.digest: [failed(ERRORS["X"])],
        b.digest: [failed(ERRORS["Y"])],
        pep668_repaired.digest: [ok()],
    }
    pipeline, _ = make_pipeline(
        builds,
        [fenced(a.text), fenced(b.text), fenced(pep668_repaired.text)],
        rules,
        hygiene,
        hashing,
        state_dir=tmp_path / "state",
        index=load_store(DEFAULT_DEMO_STORE, hashing),
    )
    session = repair_flaky_dockerfile(pep668, context_dir, pipeline)

    assert session.verdict is Verdict.REPAIRED
    assert session.attempts_used == 3
    assert [e.false_repair for e in session.feedback] == [a.text, b.text]
    assert session.final_dockerfile == pep668_repaired.text
    assert session.retrieved[0].record.id == "env-pep668"
    assert len(session.retrieved) == 3
    assert str(session.category_guess) == "ENV / Environment Management Issues"

    root = tmp_path / "state" / "sessions" / f"{pep668.digest[:12]}-1"
    first = (root / "prompt-1.txt").read_text()
    assert first.count("### EXAMPLE ") == 3
    assert "### FAILED ATTEMPT" not in first
    third = (root / "prompt-3.txt").read_text()
    one, two = third.index("### FAILED ATTEMPT 1 ###"), third.index("### FAILED ATTEMPT 2 ###")
    assert one < third.index(ERRORS["X"]) < two < third.index(ERRORS["Y"])
    assert (root / "response-3.txt").read_text() == fenced(pep668_repaired.text)

    verdict = json.loads((root / "verdict.json").read_text())
    assert verdict["verdict"] == "repaired"
    assert verdict["final_dockerfile"] == pep668_repaired.text
    assert json.loads((root / "query.json").read_text())["static_part"] == pep668.text

    final_builds = load_build_records(root / "builds", pep668_repaired.digest)
    assert len(final_builds) == 2
    assert all(r.succeeded for r in final_builds)
    assert len(load_build_records(root / "builds", pep668.digest)) == 1


def test_session_directories_do_not_collide(tmp_path):
    first = SessionRecorder.create(tmp_path, ORIGINAL)
    second = SessionRecorder.create(tmp_path, ORIGINAL)
    assert first.session_id.endswith("-1")
    assert second.session_id.endswith("-2")
