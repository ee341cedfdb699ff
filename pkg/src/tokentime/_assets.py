from __future__ import annotations

from functools import lru_cache
from pathlib import Path

PROMPT_DIR = Path(__file__).parent / "prompts"


class TemplateMissing(LookupError):
    pass


@lru_cache(maxsize=None)
def load_template(name: str, directory: str | None = None) -> str:
    path = Path(directory or PROMPT_DIR) / name
    try:
        return path.read_text(encoding="utf-8")
    except FileNotFoundError:
        raise TemplateMissing(f"prompt template not found: {path}") from None
