import logging
import re
from typing import Optional

from flakidock.core.templates import templates
from flakidock.schemas.dataset import FlakinessCategory, LabelSuggestion, Major
from flakidock.schemas.embedding import DYNAMIC_DELIMITER, STATIC_DELIMITER
from flakidock.services.dataset_service import load_taxonomy
from flakidock.services.llm_service import GenerationProvider

logger = logging.getLogger(__name__)

MAJOR_TOKEN = re.compile(r"\b(DEP|CON|SEC|PMG|ENV|FS|MISC)\b(?:\s*/\s*(?P<sub>[^\n]+))?")
LABEL_LINE = re.compile(r"^\s*LABEL\s*:\s*(.+)$", re.MULTILINE | re.IGNORECASE)


def label_prompt(static_part: str, dynamic_part: str) -> str:
    return templates.get_template("label_prompt.j2").render(
        taxonomy=load_taxonomy(),
        static_delimiter=STATIC_DELIMITER,
        dynamic_delimiter=DYNAMIC_DELIMITER,
        static_part=static_part,
        dynamic_part=dynamic_part,
    )


def _known_sub(major: Major, text: Optional[str]) -> Optional[str]:
    if not text:
        return None
    wanted = text.strip().rstrip(".").lower()
    return next((sub for sub in load_taxonomy()[major] if sub.lower() == wanted), None)


def parse_label(response: str) -> LabelSuggestion:
    """Map a provider answer onto the taxonomy; anything unmappable becomes MISC for review."""
    label_line = LABEL_LINE.search(response)
    match = MAJOR_TOKEN.search(label_line.group(1) if label_line else response)
    factors = [line.strip()[2:].strip() for line in response.splitlines() if line.strip().startswith("- ")]

    if not match:
        logger.warning("label answer names no category, needs review")
        return LabelSuggestion(
            category=FlakinessCategory(major=Major.MISC), contributing_factors=factors, raw_response=response
        )

    major = Major(match.group(1))
    raw_sub = match.group("sub")
    sub = None if major is Major.MISC else _known_sub(major, raw_sub)
    if raw_sub and sub is None:
        logger.warning("label answer has unknown subcategory %r for %s", raw_sub.strip(), major.value)
        return LabelSuggestion(
            category=FlakinessCategory(major=major), contributing_factors=factors, raw_response=response
        )
    return LabelSuggestion(category=FlakinessCategory(major=major, sub=sub), contributing_factors=factors)


def suggest_label(static_part: str, dynamic_part: str, provider: GenerationProvider) -> LabelSuggestion:
    if not dynamic_part.strip():
        raise ValueError("cannot label a failure without build output")
    return parse_label(provider.complete(label_prompt(static_part, dynamic_part)))
