import codecs
import re
from pathlib import Path

from flakidock.core.errors import EmptyDocument, MalformedEncoding
from flakidock.schemas.dockerfile import DockerfileDoc, EditOp, Instruction, Keyword, LineEdit

_KEYWORDS = {k.value for k in Keyword} - {"COMMENT", "UNKNOWN"}
_ESCAPE_DIRECTIVE = re.compile(r"^#\s*escape\s*=\s*(\S)\s*$", re.IGNORECASE)
_HEREDOC = re.compile(r"(?<!<)<<(?!<)-?\s*([\"']?)([A-Za-z_][\w.-]*)\1")
_HEREDOC_KEYWORDS = {Keyword.RUN, Keyword.COPY, Keyword.ADD}


def _strip_eol(line: str) -> str:
    return line.rstrip("\r\n")


def _continues(line: str, escape: str) -> bool:
    return _strip_eol(line).rstrip().endswith(escape)


def _escape_char(lines: list[str]) -> str:
    # Parser directives must precede any instruction, blank line or other comment
    for line in lines:
        body = _strip_eol(line).strip()
        match = _ESCAPE_DIRECTIVE.match(body)
        if match:
            return match.group(1)
        if not body.startswith("#") or "=" not in body:
            break
    return "\\"


def parse_dockerfile(text: bytes | str) -> DockerfileDoc:
    """Parse a build definition into line-spanned instructions.

    Continuation lines are merged into their owning instruction and heredoc
    bodies are kept as opaque argument text. Lines that are not covered by an
    instruction are blank.
    """
    if isinstance(text, str):
        raw = text.encode("utf-8")
    else:
        raw = bytes(text)
    has_bom = raw.startswith(codecs.BOM_UTF8)
    try:
        decoded = raw[len(codecs.BOM_UTF8):].decode("utf-8") if has_bom else raw.decode("utf-8")
    except UnicodeDecodeError as exc:
        raise MalformedEncoding(f"build definition is not valid UTF-8: {exc}") from exc

    lines = decoded.splitlines(keepends=True)
    escape = _escape_char(lines)
    instructions: list[Instruction] = []

    i = 0
    while i < len(lines):
        body = _strip_eol(lines[i]).strip()
        if not body:
            i += 1
            continue
        if body.startswith("#"):
            instructions.append(
                Instruction(keyword=Keyword.COMMENT, arguments=body, first_line=i + 1, last_line=i + 1)
            )
            i += 1
            continue

        first = i
        parts = [_strip_eol(lines[i])]
        pending = _continues(lines[i], escape)
        while pending and i + 1 < len(lines):
            i += 1
            parts.append(_strip_eol(lines[i]))
            # a comment inside a continued instruction does not end it
            if not _strip_eol(lines[i]).strip().startswith("#"):
                pending = _continues(lines[i], escape)
        i += 1

        logical = _join_continuation(parts, escape)
        pieces = logical.strip().split(None, 1)
        token = pieces[0] if pieces else ""
        arguments = pieces[1] if len(pieces) > 1 else ""
        keyword = Keyword(token.upper()) if token.upper() in _KEYWORDS else Keyword.UNKNOWN
        if keyword is Keyword.UNKNOWN:
            arguments = logical.strip()

        # Heredoc bodies run until their terminator line
        heredocs = _HEREDOC.finditer(logical) if keyword in _HEREDOC_KEYWORDS else ()
        for match in heredocs:
            terminator = match.group(2)
            body_lines = []
            while i < len(lines):
                current = _strip_eol(lines[i])
                i += 1
                if current.strip() == terminator:
                    body_lines.append(current)
                    break
                body_lines.append(current)
            arguments = arguments + "\n" + "\n".join(body_lines)

        instructions.append(
            Instruction(keyword=keyword, arguments=arguments.strip(), first_line=first + 1, last_line=i)
        )

    if not instructions:
        raise EmptyDocument("build definition contains no instructions")
    return DockerfileDoc(
        instructions=tuple(instructions),
        lines=tuple(lines),
        raw_text=raw,
        has_bom=has_bom,
    )


def _join_continuation(parts: list[str], escape: str) -> str:
    joined = []
    for n, part in enumerate(parts):
        # comment lines inside a continued instruction are dropped by the engine
        if n > 0 and part.strip().startswith("#"):
            continue
        stripped = part.rstrip()
        if stripped.endswith(escape):
            stripped = stripped[: -len(escape)]
        joined.append(stripped)
    return "".join(joined)


def read_dockerfile(path: Path) -> DockerfileDoc:
    return parse_dockerfile(Path(path).read_bytes())


def serialize(doc: DockerfileDoc) -> bytes:
    body = "".join(doc.lines).encode("utf-8")
    return codecs.BOM_UTF8 + body if doc.has_bom else body


def diff_docs(before: DockerfileDoc, after: DockerfileDoc) -> list[LineEdit]:
    """Line-level edit script, minimal under longest common subsequence."""
    return diff_lines(list(before.lines), list(after.lines))


def diff_lines(a: list[str], b: list[str]) -> list[LineEdit]:
    n, m = len(a), len(b)
    # lcs[i][j] = LCS length of a[i:] and b[j:]
    lcs = [[0] * (m + 1) for _ in range(n + 1)]
    for i in range(n - 1, -1, -1):
        for j in range(m - 1, -1, -1):
            if a[i] == b[j]:
                lcs[i][j] = lcs[i + 1][j + 1] + 1
            else:
                lcs[i][j] = max(lcs[i + 1][j], lcs[i][j + 1])

    edits: list[LineEdit] = []
    i = j = 0
    while i < n and j < m:
        if a[i] == b[j]:
            edits.append(LineEdit(op=EditOp.KEEP, text=a[i]))
            i += 1
            j += 1
        elif lcs[i + 1][j] >= lcs[i][j + 1]:
            edits.append(LineEdit(op=EditOp.REMOVE, text=a[i]))
            i += 1
        else:
            edits.append(LineEdit(op=EditOp.ADD, text=b[j]))
            j += 1
    edits.extend(LineEdit(op=EditOp.REMOVE, text=line) for line in a[i:])
    edits.extend(LineEdit(op=EditOp.ADD, text=line) for line in b[j:])
    return edits


def apply_edits(before: str, edits: list[LineEdit]) -> str:
    source = before.splitlines(keepends=True)
    out: list[str] = []
    pos = 0
    for edit in edits:
        if edit.op is EditOp.ADD:
            out.append(edit.text)
            continue
        if pos >= len(source) or source[pos] != edit.text:
            raise ValueError(f"edit script does not match line {pos + 1} of the source")
        if edit.op is EditOp.KEEP:
            out.append(source[pos])
        pos += 1
    if pos != len(source):
        raise ValueError("edit script leaves source lines unconsumed")
    return "".join(out)


def render_diff(edits: list[LineEdit], context: int | None = None) -> str:
    """`+`/`-` rendering; with `context`, unchanged runs are elided beyond that many lines."""
    marks = {EditOp.KEEP: "  ", EditOp.ADD: "+ ", EditOp.REMOVE: "- "}
    changed = [n for n, e in enumerate(edits) if e.op is not EditOp.KEEP]
    rendered = []
    elided = False
    for n, edit in enumerate(edits):
        if context is not None and edit.op is EditOp.KEEP:
            near = any(abs(n - c) <= context for c in changed)
            if not near:
                if not elided:
                    rendered.append("  ...")
                    elided = True
                continue
        elided = False
        rendered.append(marks[edit.op] + _strip_eol(edit.text))
    return "\n".join(rendered)
