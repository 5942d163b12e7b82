import json
import logging
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Optional

from flakidock.core.errors import BudgetExhausted, EngineError, ProviderUnavailable, UnparseableResponse
from flakidock.core.templates import templates
from flakidock.schemas.build import HygienePolicy
from flakidock.schemas.dataset import FlakinessCategory
from flakidock.schemas.dockerfile import DockerfileDoc
from flakidock.schemas.embedding import DYNAMIC_DELIMITER, STATIC_DELIMITER, RepairQuery
from flakidock.schemas.repair import (
    UNPARSEABLE_FEEDBACK,
    Detection,
    FeedbackEntry,
    OutcomeKind,
    RepairSession,
    RetrievedExample,
    ValidationOutcome,
    ValidationPolicy,
    Verdict,
)
from flakidock.services.build_service import BuildEngine
from flakidock.services.embedding_service import EmbeddingProvider, cosine, embed
from flakidock.services.index_service import DemoIndex, retrieve_top_k
from flakidock.services.llm_service import GenerationProvider, parse_repair
from flakidock.services.log_service import RuleSet, failure_text, preprocess_log

logger = logging.getLogger(__name__)

TRUNCATION_MARK = "[... earlier output truncated ...]\n"
MIN_DYNAMIC_CHARS = 256


@dataclass
class Providers:
    embedding: EmbeddingProvider
    sentence: EmbeddingProvider
    generation: GenerationProvider


def detect_flakiness(
    doc: DockerfileDoc,
    context_dir: Path,
    policy: ValidationPolicy,
    engine: BuildEngine,
    hygiene: HygienePolicy,
) -> Detection:
    """Build up to n times; the first failure makes the Dockerfile a flaky candidate."""
    records = engine.run_build_series(doc, context_dir, policy.build_iterations, hygiene, stop_on_failure=True)
    detection = Detection(flaky=any(not r.succeeded for r in records), records=records)
    logger.info("%s is %s after %d builds", doc.digest[:12], "flaky" if detection.flaky else "non-flaky", len(records))
    return detection


def _tail(text: str, limit: Optional[int]) -> str:
    if limit is None or len(text) <= limit:
        return text
    return TRUNCATION_MARK + text[-limit:]


def _render_prompt(
    session: RepairSession,
    examples: list[RetrievedExample],
    include_feedback: bool,
    limit: Optional[int],
) -> str:
    return templates.get_template("repair_prompt.j2").render(
        static_delimiter=STATIC_DELIMITER,
        dynamic_delimiter=DYNAMIC_DELIMITER,
        examples=[
            {
                "static_part": ex.record.static_part,
                "dynamic_part": _tail(ex.record.dynamic_part, limit),
                "repair": ex.record.repairs[0].rstrip("\n"),
            }
            for ex in examples
        ],
        query={"static_part": session.query.static_part, "dynamic_part": _tail(session.query.dynamic_part, limit)},
        feedback=[
            {
                "attempt_index": entry.attempt_index,
                "false_repair": entry.false_repair.rstrip("\n"),
                "failure_output": _tail(entry.failure_output, limit),
            }
            for entry in (session.feedback if include_feedback else [])
        ],
    )


def assemble_prompt(
    session: RepairSession,
    budget: Optional[int] = None,
    count_tokens: Optional[Callable[[str], int]] = None,
    include_feedback: bool = True,
) -> str:
    """Task, guidance, retrieved examples, the query and one block per failed attempt.

    Over budget, the least similar examples go first, then build outputs are
    cut to their tails. BudgetExhausted when the bare query still does not fit.
    """
    examples = sorted(session.retrieved, key=lambda ex: (-ex.similarity, ex.record.id))
    prompt = _render_prompt(session, examples, include_feedback, None)
    if budget is None or count_tokens is None:
        return prompt

    while count_tokens(prompt) > budget and examples:
        dropped = examples.pop()
        logger.info("prompt over budget, dropping example %s", dropped.record.id)
        prompt = _render_prompt(session, examples, include_feedback, None)

    longest = max(
        [len(session.query.dynamic_part)] + [len(entry.failure_output) for entry in session.feedback]
    )
    limit = longest
    while count_tokens(prompt) > budget and limit > MIN_DYNAMIC_CHARS:
        limit = max(MIN_DYNAMIC_CHARS, limit // 2)
        prompt = _render_prompt(session, examples, include_feedback, limit)

    if count_tokens(prompt) > budget:
        raise BudgetExhausted(f"prompt needs {count_tokens(prompt)} tokens, budget is {budget}")
    return prompt


def _similar_failures(
    session: RepairSession, vec, provider: EmbeddingProvider, threshold: float
) -> int:
    count = 0
    for entry in session.feedback:
        known = session._feedback_vectors.get(entry.attempt_index)
        if known is None:
            known = embed(entry.failure_output, provider)
            session._feedback_vectors[entry.attempt_index] = known
        if cosine(vec, known) >= threshold:
            count += 1
    return count


def record_failure(
    session: RepairSession,
    false_repair: str,
    failure_output: str,
    attempt_index: int,
    policy: ValidationPolicy,
    provider: EmbeddingProvider,
    records: Optional[list] = None,
) -> ValidationOutcome:
    """Count earlier failures similar to this one; T of them end the session, else it becomes feedback."""
    if session.feedback and attempt_index <= session.feedback[-1].attempt_index:
        raise ValueError("attempt indices must strictly increase")
    vec = embed(failure_output, provider)
    similar = _similar_failures(session, vec, provider, policy.feedback_similarity_threshold) + 1
    if similar >= policy.failure_threshold:
        logger.info("attempt %d: failure seen %d times, giving up", attempt_index, similar)
        return ValidationOutcome(kind=OutcomeKind.UNRESOLVED, similar_failures=similar, records=records or [])

    session.feedback.append(
        FeedbackEntry(false_repair=false_repair, failure_output=failure_output, attempt_index=attempt_index)
    )
    session._feedback_vectors[attempt_index] = vec
    logger.info("attempt %d: false repair recorded (%d similar)", attempt_index, similar)
    return ValidationOutcome(
        kind=OutcomeKind.FEEDBACK, candidate=false_repair, similar_failures=similar, records=records or []
    )


def validate_repair(
    candidate: DockerfileDoc,
    session: RepairSession,
    policy: ValidationPolicy,
    context_dir: Path,
    engine: BuildEngine,
    hygiene: HygienePolicy,
    rules: RuleSet,
    provider: EmbeddingProvider,
    attempt_index: int,
    window: int = 2,
    cap: int = 120,
) -> ValidationOutcome:
    """Build the candidate n times: all green is a repair, otherwise feedback or give up."""
    if session.is_terminal:
        raise ValueError(f"session {session.id} already ended {session.verdict.value}")
    records = engine.run_build_series(candidate, context_dir, policy.build_iterations, hygiene)
    if all(record.succeeded for record in records):
        return ValidationOutcome(kind=OutcomeKind.REPAIR, candidate=candidate.text, records=records)

    failing = next(record for record in records if not record.succeeded)
    preprocessed = preprocess_log(failing.log, rules, candidate, window=window, cap=cap)
    return record_failure(
        session,
        candidate.text,
        failure_text(failing, preprocessed),
        attempt_index,
        policy,
        provider,
        records,
    )


def guess_category(retrieved: list[RetrievedExample]) -> Optional[FlakinessCategory]:
    """Majority category of the retrieved examples; ties go to the most similar one."""
    if not retrieved:
        return None
    counts = Counter(ex.record.category for ex in retrieved)
    best = max(counts.values())
    return next(ex.record.category for ex in retrieved if counts[ex.record.category] == best)


class SessionRecorder:
    """Writes every prompt, response, build and verdict of a session for audit and replay."""

    def __init__(self, root: Path):
        self.root = Path(root)
        self.root.mkdir(parents=True, exist_ok=True)

    @classmethod
    def create(cls, state_dir: Path, doc: DockerfileDoc) -> "SessionRecorder":
        sessions = Path(state_dir) / "sessions"
        sessions.mkdir(parents=True, exist_ok=True)
        n = 1
        while (sessions / f"{doc.digest[:12]}-{n}").exists():
            n += 1
        return cls(sessions / f"{doc.digest[:12]}-{n}")

    @property
    def session_id(self) -> str:
        return self.root.name

    @property
    def builds_dir(self) -> Path:
        return self.root / "builds"

    def write_query(self, query: RepairQuery) -> None:
        (self.root / "query.json").write_text(query.model_dump_json(indent=2), encoding="utf-8")

    def write_prompt(self, attempt: int, prompt: str) -> None:
        (self.root / f"prompt-{attempt}.txt").write_text(prompt, encoding="utf-8")

    def write_response(self, attempt: int, response: str) -> None:
        (self.root / f"response-{attempt}.txt").write_text(response, encoding="utf-8")

    def finish(self, session: RepairSession) -> None:
        verdict = {**session.summary(), "final_dockerfile": session.final_dockerfile}
        (self.root / "verdict.json").write_text(json.dumps(verdict, indent=2), encoding="utf-8")
        (self.root / "session.json").write_text(session.model_dump_json(indent=2), encoding="utf-8")


@dataclass
class RepairPipeline:
    engine: BuildEngine
    index: DemoIndex
    providers: Providers
    rules: RuleSet
    policy: ValidationPolicy = field(default_factory=ValidationPolicy)
    hygiene: HygienePolicy = field(default_factory=HygienePolicy)
    k: int = 3
    context_budget: Optional[int] = None
    window: int = 2
    cap: int = 120
    state_dir: Optional[Path] = None

    def _finish(self, session: RepairSession, verdict: Verdict, reason: Optional[str] = None) -> RepairSession:
        session.verdict = verdict
        session.reason = reason
        logger.info("session %s: %s%s", session.id, verdict.value, f" ({reason})" if reason else "")
        return session

    def prepare(
        self, doc: DockerfileDoc, context_dir: Path, recorder: Optional[SessionRecorder] = None
    ) -> RepairSession:
        """Detection, preprocessing and retrieval; the session is terminal unless there is something to repair."""
        engine = self.engine.with_builds_dir(recorder.builds_dir) if recorder else self.engine
        session_id = recorder.session_id if recorder else doc.digest[:12]
        session = RepairSession(id=session_id, query=RepairQuery(static_part=doc.text, dynamic_part=""))
        try:
            detection = detect_flakiness(doc, context_dir, self.policy, engine, self.hygiene)
        except EngineError as exc:
            return self._finish(session, Verdict.ENGINE_ABORTED, str(exc))
        if not detection.flaky:
            return self._finish(
                session, Verdict.NON_FLAKY, f"{len(detection.records)} consecutive successful builds"
            )

        failing = detection.first_failing
        preprocessed = preprocess_log(failing.log, self.rules, doc, window=self.window, cap=self.cap)
        session.query = RepairQuery(static_part=doc.text, dynamic_part=failure_text(failing, preprocessed))
        if recorder:
            recorder.write_query(session.query)
        try:
            session.retrieved = retrieve_top_k(session.query, self.index, self.k, self.providers.embedding)
        except ProviderUnavailable as exc:
            return self._finish(session, Verdict.PROVIDER_ABORTED, str(exc))
        session.category_guess = guess_category(session.retrieved)
        return session

    def run(self, doc: DockerfileDoc, context_dir: Path) -> RepairSession:
        recorder = SessionRecorder.create(self.state_dir, doc) if self.state_dir is not None else None
        session = self.prepare(doc, context_dir, recorder)
        if not session.is_terminal:
            self._repair_loop(session, context_dir, recorder)
        if recorder:
            recorder.finish(session)
        return session

    def _repair_loop(self, session: RepairSession, context_dir: Path, recorder: Optional[SessionRecorder]) -> None:
        engine = self.engine.with_builds_dir(recorder.builds_dir) if recorder else self.engine
        generation = self.providers.generation
        for attempt in range(1, self.policy.max_total_attempts + 1):
            try:
                prompt = assemble_prompt(
                    session,
                    budget=self.context_budget,
                    count_tokens=generation.count_tokens,
                    include_feedback=self.policy.feedback_in_prompt,
                )
            except BudgetExhausted as exc:
                self._finish(session, Verdict.UNRESOLVED, f"budget_exhausted: {exc}")
                return
            if recorder:
                recorder.write_prompt(attempt, prompt)

            try:
                response = generation.complete(prompt)
            except ProviderUnavailable as exc:
                self._finish(session, Verdict.PROVIDER_ABORTED, str(exc))
                return
            session.attempts_used = attempt
            if recorder:
                recorder.write_response(attempt, response)

            try:
                candidate = parse_repair(response)
            except UnparseableResponse as exc:
                logger.warning("attempt %d: %s", attempt, exc)
                outcome = record_failure(
                    session, response, UNPARSEABLE_FEEDBACK, attempt, self.policy, self.providers.sentence
                )
            else:
                try:
                    outcome = validate_repair(
                        candidate,
                        session,
                        self.policy,
                        context_dir,
                        engine,
                        self.hygiene,
                        self.rules,
                        self.providers.sentence,
                        attempt,
                        window=self.window,
                        cap=self.cap,
                    )
                except EngineError as exc:
                    self._finish(session, Verdict.ENGINE_ABORTED, str(exc))
                    return

            if outcome.kind is OutcomeKind.REPAIR:
                session.final_dockerfile = outcome.candidate
                self._finish(session, Verdict.REPAIRED)
                return
            if outcome.kind is OutcomeKind.UNRESOLVED:
                self._finish(
                    session, Verdict.UNRESOLVED, f"same failure {outcome.similar_failures} times"
                )
                return

        self._finish(session, Verdict.UNRESOLVED, "attempt_cap")


def repair_flaky_dockerfile(doc: DockerfileDoc, context_dir: Path, pipeline: RepairPipeline) -> RepairSession:
    return pipeline.run(doc, context_dir)
