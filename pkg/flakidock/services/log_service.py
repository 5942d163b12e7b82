import re
from dataclasses import dataclass
from enum import Enum
from pathlib import Path
from typing import Optional

from flakidock.core.config import DATA_DIR, DEFAULT_RULES_PATH
from flakidock.core.errors import InvalidRule
from flakidock.schemas.build import BuildRecord
from flakidock.schemas.dockerfile import DockerfileDoc
from flakidock.schemas.logs import Excerpt, LogLine, PreprocessedLog, StageSection

ANSI_ESCAPE = re.compile(r"\x1b\[[0-?]*[ -/]*[@-~]|\x1b\][^\x07]*\x07|\x1b[@-Z\\-_]")

# BuildKit "#9 [5/5] RUN ...", its error summary " > [build-env 4/4] RUN ...:"
# and plain "[2/2] RUN ..." banners
BRACKET_BANNER = re.compile(
    r"^\s*(?:#\d+\s+)?(?:>\s*)?\[(?:(?P<stage>[^\]\s]+)\s+)?(?P<k>\d+)/(?P<n>\d+)\]\s+(?P<cmd>.+?)\s*$"
)
CLASSIC_BANNER = re.compile(r"^Step\s+(?P<k>\d+)/(?P<n>\d+)\s*:\s*(?P<cmd>.+?)\s*$")

# "#9 12.34 text" (plain progress) or "12.345 text" (error summary)
BUILDKIT_TIMESTAMP = re.compile(r"^#\d+\s+(\d+\.\d+)(?:\s|$)")
SUMMARY_TIMESTAMP = re.compile(r"^(\d+\.\d{3})(?:\s|$)")

FAILURE_TAIL_LINES = 20


@dataclass(frozen=True)
class Rule:
    name: str
    pattern: re.Pattern
    exclude: bool = False

    def matches(self, text: str) -> bool:
        return self.pattern.search(text) is not None


@dataclass(frozen=True)
class RuleSet:
    rules: tuple[Rule, ...]

    def hits(self, text: str) -> list[str]:
        """Names of the rules a line matches; empty when an exclusion applies."""
        names = []
        for rule in self.rules:
            if rule.matches(text):
                if rule.exclude:
                    return []
                names.append(rule.name)
        return names

    def __len__(self) -> int:
        return sum(1 for r in self.rules if not r.exclude)


def parse_rules(text: str, source: str = "<rules>") -> RuleSet:
    rules = []
    for lineno, raw in enumerate(text.splitlines(), 1):
        if not raw.strip() or raw.lstrip().startswith("#"):
            continue
        line = raw.lstrip()
        exclude = line.startswith("!")
        if exclude:
            line = line[1:]
        kind, sep, pattern = line.partition(":")
        if not sep or kind not in ("substr", "regex"):
            raise InvalidRule(f"{source}:{lineno}: expected 'substr:' or 'regex:' prefix, got {raw!r}")
        if not pattern.strip():
            raise InvalidRule(f"{source}:{lineno}: empty pattern")
        try:
            compiled = re.compile(re.escape(pattern) if kind == "substr" else pattern, re.IGNORECASE)
        except re.error as exc:
            raise InvalidRule(f"{source}:{lineno}: bad regex {pattern!r}: {exc}") from exc
        rules.append(Rule(name=line, pattern=compiled, exclude=exclude))
    ruleset = RuleSet(tuple(rules))
    if len(ruleset) == 0:
        raise InvalidRule(f"{source}: no matching rules defined")
    return ruleset


def load_rules(path: Optional[Path] = None) -> RuleSet:
    path = Path(path) if path is not None else DEFAULT_RULES_PATH
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise InvalidRule(f"cannot read rules file {path}: {exc}") from exc
    return parse_rules(text, source=str(path))


def clean_log(log: str) -> list[str]:
    """Strip ANSI sequences and carriage-return progress redraws."""
    raw_lines = ANSI_ESCAPE.sub("", log).split("\n")
    if raw_lines[-1] == "":
        raw_lines.pop()
    lines = []
    for line in raw_lines:
        if "\r" in line:
            redraws = [part for part in line.split("\r") if part]
            line = redraws[-1] if redraws else ""
        lines.append(line)
    return lines


def _timestamp(text: str) -> Optional[float]:
    match = BUILDKIT_TIMESTAMP.match(text) or SUMMARY_TIMESTAMP.match(text)
    if not match:
        return None
    try:
        return float(match.group(1))
    except ValueError:
        return None


def _banner(text: str) -> Optional[re.Match]:
    return BRACKET_BANNER.match(text) or CLASSIC_BANNER.match(text)


def segment_stages(log: str) -> list[StageSection]:
    """Split a build log into stage sections, preceded by a preamble (stage_index -1)."""
    sections = [StageSection(stage_index=-1)]
    for text in clean_log(log):
        banner = _banner(text)
        if banner:
            groups = banner.groupdict()
            sections.append(
                StageSection(
                    stage_index=len(sections) - 1,
                    header=text,
                    step=(int(groups["k"]), int(groups["n"])),
                    stage_name=groups.get("stage"),
                    command=groups["cmd"].rstrip(":").strip(),
                )
            )
            continue
        sections[-1].lines.append(LogLine(text=text, timestamp=_timestamp(text)))
    return sections


def _normalize(text: str) -> str:
    return " ".join(text.split()).lower()


def align_sections(sections: list[StageSection], doc: DockerfileDoc) -> list[StageSection]:
    """Attach the Dockerfile line each stage executed, matched on instruction text.

    An exact match wins. Otherwise the longest instruction that is a prefix of
    the banner command, or that the (truncated) banner is a prefix of, is used.
    """
    candidates = [
        (_normalize(f"{i.keyword.value} {i.arguments}"), i.first_line) for i in doc.executed_instructions()
    ]
    for section in sections:
        if section.is_preamble or not section.command:
            continue
        command = _normalize(section.command)
        exact = [line for text, line in candidates if text == command]
        if exact:
            section.source_line = exact[0]
            continue
        partial = [
            (len(text), line)
            for text, line in candidates
            if text.startswith(command) or command.startswith(text)
        ]
        if partial:
            # first line among the longest on ties
            section.source_line = min(partial, key=lambda hit: (-hit[0], hit[1]))[1]
    return sections


def extract_error_context(
    sections: list[StageSection],
    rules: RuleSet,
    window: int = 2,
    cap: int = 120,
) -> PreprocessedLog:
    """Keep rule hits plus their neighbours in time (same second) or, without timestamps, position."""
    if len(rules) == 0:
        raise InvalidRule("extraction needs at least one rule")

    rule_hits: dict[str, int] = {}
    total_in = 0
    # (stage, line index, text, the matches that justify keeping it)
    kept: list[tuple[int, int, str, frozenset]] = []
    headers: dict[int, tuple[str, Optional[int]]] = {}

    for section in sections:
        total_in += len(section.lines) + (0 if section.is_preamble else 1)
        headers[section.stage_index] = (section.header, section.source_line)

        matches = []
        for j, line in enumerate(section.lines):
            names = rules.hits(line.text)
            for name in names:
                rule_hits[name] = rule_hits.get(name, 0) + 1
            if names:
                matches.append(j)
        if not matches:
            continue

        anchors: dict[int, set[int]] = {j: {j} for j in matches}
        if not section.is_preamble:
            by_bucket: dict[int, list[int]] = {}
            for j, line in enumerate(section.lines):
                if line.bucket is not None:
                    by_bucket.setdefault(line.bucket, []).append(j)
            for m in matches:
                bucket = section.lines[m].bucket
                if bucket is not None:
                    region = by_bucket[bucket]
                else:
                    region = range(max(0, m - window), min(len(section.lines), m + window + 1))
                for j in region:
                    anchors.setdefault(j, set()).add(m)
        stage = section.stage_index
        kept.extend(
            (stage, j, section.lines[j].text, frozenset((stage, m) for m in anchors[j])) for j in sorted(anchors)
        )

    if len(kept) > cap:
        head = cap // 2
        kept = kept[:head] + kept[len(kept) - (cap - head):]
        # a neighbour stays only while one of its matches does
        survivors = {(stage, j) for stage, j, _, _ in kept}
        kept = [entry for entry in kept if entry[3] & survivors]

    excerpts: list[Excerpt] = []
    for stage_index, _, text, _ in kept:
        if not excerpts or excerpts[-1].stage_index != stage_index:
            header, source_line = headers[stage_index]
            excerpts.append(Excerpt(stage_index=stage_index, header=header, source_line=source_line))
        excerpts[-1].kept_lines.append(text)

    result = PreprocessedLog(
        excerpts=excerpts,
        total_lines_in=total_in,
        total_lines_out=len(kept),
        rule_hits=rule_hits,
    )
    assert _is_subsequence(result.kept_lines(), [l.text for s in sections for l in s.lines])
    return result


def _is_subsequence(needle: list[str], haystack: list[str]) -> bool:
    remaining = iter(haystack)
    return all(any(item == candidate for candidate in remaining) for item in needle)


def preprocess_log(
    log: str,
    rules: RuleSet,
    doc: Optional[DockerfileDoc] = None,
    window: int = 2,
    cap: int = 120,
) -> PreprocessedLog:
    sections = segment_stages(log)
    if doc is not None:
        align_sections(sections, doc)
    return extract_error_context(sections, rules, window=window, cap=cap)


def log_text(log: str, preprocessed: PreprocessedLog, status_line: Optional[str] = None) -> str:
    """The excerpt, or the status line and raw log tail when no rule matched."""
    if not preprocessed.is_empty:
        return preprocessed.render()
    tail = [line for line in clean_log(log) if line.strip()][-FAILURE_TAIL_LINES:]
    return "\n".join([status_line, *tail] if status_line else tail)


def failure_text(record: BuildRecord, preprocessed: PreprocessedLog) -> str:
    """Dynamic text for a failed build; never empty."""
    return log_text(record.log, preprocessed, record.status_line())


class FailureCause(str, Enum):
    INFRASTRUCTURE = "infrastructure"
    DOCKER_SERVER = "docker_server"
    PROJECT_SOURCE = "project_source"


def load_cause_filters(rules_dir: Path = DATA_DIR / "rules") -> dict[FailureCause, RuleSet]:
    return {cause: load_rules(Path(rules_dir) / f"{cause.value}.rules") for cause in FailureCause}


def classify_failure_cause(
    preprocessed: PreprocessedLog, filters: dict[FailureCause, RuleSet]
) -> Optional[FailureCause]:
    """The non-flaky cause a failure is attributed to, or None for a genuine candidate."""
    lines = [excerpt.header for excerpt in preprocessed.excerpts if excerpt.header]
    lines.extend(preprocessed.kept_lines())
    for cause, ruleset in filters.items():
        if any(ruleset.hits(line) for line in lines):
            return cause
    return None
