"""Prompt templates: plain-text files with ``{name}`` placeholders.

Defaults ship as package data; a config-supplied directory overrides any
file by name. Rendering substitutes only the keys provided, so literal
braces elsewhere in a template (JSON examples, say) pass through intact.
"""

from __future__ import annotations

import re
from functools import lru_cache
from importlib import resources
from pathlib import Path

TEMPLATE_NAMES = (
    "judge_cp",
    "judge_si",
    "judge_aa",
    "judge_fa_resp",
    "judge_kc",
    "judge_ad",
    "judge_fa_doc",
    "judge_score",
    "planner",
    "editor",
    "preference",
    "heuristic",
    "bench_reverse_query",
    "bench_annotate",
)

_PLACEHOLDER_RE = re.compile(r"\{([a-z_]+)\}")


@lru_cache(maxsize=None)
def load_template(name: str, prompt_dir: str | None = None) -> str:
    """Load a template by name, preferring ``prompt_dir`` when given."""
    filename = f"{name}.txt"
    if prompt_dir:
        override = Path(prompt_dir) / filename
        if override.exists():
            return override.read_text(encoding="utf-8")
    ref = resources.files("citelift").joinpath("prompts", filename)
    if not ref.is_file():
        raise FileNotFoundError(f"no prompt template named {name!r}")
    return ref.read_text(encoding="utf-8")


def render(template: str, mapping: dict[str, str]) -> str:
    """Substitute ``{key}`` for every key present in ``mapping``."""

    def sub(m: re.Match[str]) -> str:
        key = m.group(1)
        return str(mapping[key]) if key in mapping else m.group(0)

    return _PLACEHOLDER_RE.sub(sub, template)


def build(name: str, mapping: dict[str, str], prompt_dir: str | None = None) -> str:
    return render(load_template(name, prompt_dir), mapping)
