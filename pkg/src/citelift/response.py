"""Decompose a generated answer into sentences with resolved citations.

The citation grammar is numeric bracket markers in grouped, comma, and
range forms: ``[1]``, ``[1][3]``, ``[1,3]``, ``[1-3]``. Sentence splitting
is purely mechanical: terminal punctuation (``. ! ?`` and CJK equivalents)
outside brackets/quotes ends a sentence, newlines always end one, and
markdown headings, list items, and table rows each count as a single
sentence so layout-sensitive scoring sees them.

A "word" is a whitespace-delimited token containing at least one
alphanumeric character, counted after citation markers are stripped;
pure-punctuation leftovers do not count.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field
from typing import Any

SENTENCE_TERMINALS = ".!?。！？"

CITATION_RE = re.compile(r"\[\s*\d+(?:\s*[,\-–]\s*\d+)*\s*\]")

_HEADING_RE = re.compile(r"^\s{0,3}#{1,6}\s")
_LIST_ITEM_RE = re.compile(r"^\s*(?:[-*+•]|\(\d{1,3}\)|\d{1,3}[.)])\s+")
_TABLE_ROW_RE = re.compile(r"^\s*\|")
_BLOCKQUOTE_RE = re.compile(r"^\s*>\s?")

_OPENERS = "([{"
_CLOSERS = ")]}"
_QUOTES_OPEN = "“"
_QUOTES_CLOSE = "”"

# Range expansion guard: markers wider than this are reported unresolved
# rather than expanded.
_MAX_RANGE_SPAN = 200


@dataclass(frozen=True)
class Sentence:
    """One sentence of a response with its resolved citation set."""

    index: int
    text: str
    word_count: int
    citations: frozenset[int]

    def to_dict(self) -> dict[str, Any]:
        return {
            "index": self.index,
            "text": self.text,
            "word_count": self.word_count,
            "citations": sorted(self.citations),
        }


@dataclass(frozen=True)
class ParsedResponse:
    sentences: tuple[Sentence, ...]
    unresolved_markers: tuple[str, ...] = ()

    @property
    def m(self) -> int:
        return len(self.sentences)

    def to_dict(self) -> dict[str, Any]:
        return {
            "sentences": [s.to_dict() for s in self.sentences],
            "total_sentences": self.m,
            "unresolved_markers": list(self.unresolved_markers),
        }


def _is_structural_line(line: str) -> bool:
    return bool(
        _HEADING_RE.match(line)
        or _LIST_ITEM_RE.match(line)
        or _TABLE_ROW_RE.match(line)
        or _BLOCKQUOTE_RE.match(line)
    )


def _prose_spans(text: str, start: int, end: int) -> list[tuple[int, int]]:
    """Sentence spans within one prose line ``text[start:end]``."""
    spans: list[tuple[int, int]] = []
    i = start
    sent_start = start
    depth = 0
    in_quote = False
    while i < end:
        ch = text[i]
        if ch in _OPENERS or ch in _QUOTES_OPEN:
            depth += 1
        elif ch in _CLOSERS or ch in _QUOTES_CLOSE:
            depth = max(0, depth - 1)
        elif ch == '"':
            in_quote = not in_quote
        elif ch in SENTENCE_TERMINALS and depth == 0 and not in_quote:
            j = i + 1
            while j < end and text[j] in SENTENCE_TERMINALS:
                j += 1
            # a decimal like 3.5 is not a boundary
            if ch == "." and j - i == 1 and j < end and text[j].isdigit():
                i = j
                continue
            # trailing citation markers stay with the sentence they follow
            while True:
                m = CITATION_RE.match(text, j, end)
                if m is None:
                    break
                j = m.end()
            if j >= end or text[j].isspace():
                spans.append((sent_start, j))
                while j < end and text[j].isspace():
                    j += 1
                sent_start = j
                i = j
                continue
            i = j
            continue
        i += 1
    if sent_start < end:
        spans.append((sent_start, end))
    return spans


def _segment_spans(text: str) -> list[tuple[int, int]]:
    """Half-open sentence spans; gaps between spans are whitespace only."""
    spans: list[tuple[int, int]] = []
    pos = 0
    n = len(text)
    while pos <= n:
        nl = text.find("\n", pos)
        line_end = n if nl < 0 else nl
        # trim the line to its non-whitespace extent
        a, b = pos, line_end
        while a < b and text[a].isspace():
            a += 1
        while b > a and text[b - 1].isspace():
            b -= 1
        if a < b:
            if _is_structural_line(text[a:b]):
                spans.append((a, b))
            else:
                spans.extend(_prose_spans(text, a, b))
        if nl < 0:
            break
        pos = nl + 1
    return spans


def segment_sentences(text: str) -> list[str]:
    """Split a response into sentence strings in reading order."""
    return [text[a:b] for a, b in _segment_spans(text)]


def extract_citations(sentence_text: str, k: int) -> tuple[set[int], list[str]]:
    """Resolve bracket markers to ranks in ``1..k``.

    Returns the resolved rank set and the out-of-range / malformed markers
    in normalized ``[n]`` form, so every marker in the input is accounted
    for on one side or the other.
    """
    if k < 1:
        raise ValueError("k must be >= 1")
    ranks: set[int] = set()
    unresolved: list[str] = []

    def classify(r: int) -> None:
        if 1 <= r <= k:
            ranks.add(r)
        else:
            unresolved.append(f"[{r}]")

    for m in CITATION_RE.finditer(sentence_text):
        inner = m.group(0)[1:-1]
        for token in inner.split(","):
            token = token.strip().replace("–", "-")
            if "-" in token:
                lo_s, hi_s = token.split("-", 1)
                lo, hi = int(lo_s.strip()), int(hi_s.strip())
                if lo > hi or hi - lo > _MAX_RANGE_SPAN:
                    unresolved.append(f"[{token}]")
                    continue
                for r in range(lo, hi + 1):
                    classify(r)
            else:
                classify(int(token))
    return ranks, unresolved


def count_words(sentence_text: str) -> int:
    """Words left after stripping citation markers (alnum-bearing tokens)."""
    stripped = CITATION_RE.sub(" ", sentence_text)
    return sum(1 for tok in stripped.split() if any(c.isalnum() for c in tok))


def parse_response(text: str, k: int) -> ParsedResponse:
    """Segment, resolve citations, and count words for a whole response."""
    if k < 1:
        raise ValueError("k must be >= 1")
    sentences: list[Sentence] = []
    unresolved: list[str] = []
    for idx, raw in enumerate(segment_sentences(text), start=1):
        cits, bad = extract_citations(raw, k)
        unresolved.extend(bad)
        sentences.append(
            Sentence(index=idx, text=raw, word_count=count_words(raw), citations=frozenset(cits))
        )
    return ParsedResponse(sentences=tuple(sentences), unresolved_markers=tuple(unresolved))
