from jinja2 import Environment, FileSystemLoader, StrictUndefined

from flakidock.core.config import TEMPLATES_DIR

# Prompt templates are plain text, never HTML
templates = Environment(
    loader=FileSystemLoader(str(TEMPLATES_DIR)),
    undefined=StrictUndefined,
    autoescape=False,
    trim_blocks=True,
    lstrip_blocks=True,
    keep_trailing_newline=True,
)
