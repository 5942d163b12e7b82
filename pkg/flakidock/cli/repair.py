import argparse
from pathlib import Path

from rich.console import Console

from flakidock.cli.common import EXIT_ERROR, EXIT_OK, EXIT_UNRESOLVED, emit, make_engine, require_file, settings_from_args
from flakidock.core.config import Settings
from flakidock.schemas.repair import Verdict
from flakidock.services.dataset_service import load_store
from flakidock.services.dockerfile_service import read_dockerfile
from flakidock.services.embedding_service import embedding_provider, sentence_provider
from flakidock.services.llm_service import generation_provider
from flakidock.services.log_service import load_rules
from flakidock.services.repair_service import Providers, RepairPipeline, assemble_prompt, repair_flaky_dockerfile

EXIT_CODES = {
    Verdict.REPAIRED: EXIT_OK,
    Verdict.NON_FLAKY: EXIT_OK,
    Verdict.UNRESOLVED: EXIT_UNRESOLVED,
    Verdict.ENGINE_ABORTED: EXIT_ERROR,
    Verdict.PROVIDER_ABORTED: EXIT_ERROR,
}


def register(subparsers, parents) -> None:
    parser = subparsers.add_parser("repair", parents=parents, help="detect, then repair a flaky Dockerfile")
    parser.add_argument("dockerfile", type=Path)
    parser.add_argument("--context", type=Path, help="build context (default: the Dockerfile's directory)")
    parser.add_argument("--store", type=Path, help="demonstration store (JSONL)")
    parser.add_argument("--generation", choices=["litellm", "scripted"], help="generation provider")
    parser.add_argument("--dry-run", action="store_true", help="print the first prompt instead of calling the provider")
    parser.add_argument("--no-feedback", action="store_true", help="leave false repairs out of the prompt")
    parser.set_defaults(handler=run, needs_lock=True)


def build_pipeline(settings: Settings) -> RepairPipeline:
    embedding = embedding_provider(settings)
    providers = Providers(
        embedding=embedding,
        sentence=sentence_provider(settings),
        generation=generation_provider(settings),
    )
    return RepairPipeline(
        engine=make_engine(settings),
        index=load_store(settings.demo_store_path, embedding),
        providers=providers,
        rules=load_rules(settings.rules_path),
        policy=settings.validation_policy(),
        hygiene=settings.hygiene_policy(),
        k=settings.RETRIEVAL_K,
        context_budget=settings.CONTEXT_BUDGET,
        window=settings.ADJACENCY_WINDOW,
        cap=settings.EXCERPT_CAP,
        state_dir=settings.STATE_DIR,
    )


def run(args: argparse.Namespace) -> int:
    overrides = {"DEMO_STORE": args.store, "GENERATION_PROVIDER": args.generation}
    if args.no_feedback:
        overrides["FEEDBACK_IN_PROMPT"] = False
    settings = settings_from_args(args, **overrides)
    path = require_file(args.dockerfile)
    doc = read_dockerfile(path)
    context_dir = args.context or path.parent
    pipeline = build_pipeline(settings)

    if args.dry_run:
        session = pipeline.prepare(doc, context_dir)
        payload = session.summary()
        if not session.is_terminal:
            payload["prompt"] = assemble_prompt(session, include_feedback=pipeline.policy.feedback_in_prompt)
        emit(args, payload, lambda console: console.print(payload.get("prompt", payload["verdict"]), markup=False))
        return EXIT_CODES.get(session.verdict, EXIT_OK)

    session = repair_flaky_dockerfile(doc, context_dir, pipeline)
    payload = session.summary()
    if session.verdict is Verdict.NON_FLAKY:
        payload["note"] = "non-flaky"
    if session.verdict is Verdict.REPAIRED:
        target = path.with_name(path.name + ".repaired")
        target.write_text(session.final_dockerfile, encoding="utf-8")
        payload["repaired_file"] = str(target)

    def human(console: Console) -> None:
        style = {Verdict.REPAIRED: "bold green", Verdict.NON_FLAKY: "green"}.get(session.verdict, "bold red")
        console.print(f"[{style}]{session.verdict.value}[/{style}] {path} after {session.attempts_used} attempt(s)")
        if session.reason:
            console.print(f"  reason: {session.reason}", markup=False)
        if session.retrieved:
            console.print("  retrieved: " + ", ".join(f"{ex.record.id} ({ex.similarity:.3f})" for ex in session.retrieved))
        if session.category_guess:
            console.print(f"  category guess: {session.category_guess}", markup=False)
        if "repaired_file" in payload:
            console.print(f"  written to {payload['repaired_file']}")

    emit(args, payload, human)
    return EXIT_CODES[session.verdict]
