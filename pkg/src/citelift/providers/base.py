"""Port definitions, token accounting, and shared provider plumbing."""

from __future__ import annotations

import hashlib
import re
import threading
import time
from dataclasses import dataclass, field
from typing import Any, Callable, Protocol, runtime_checkable

from citelift.model import RetrievalList


class ProviderError(Exception):
    """Base class for failures crossing a provider boundary."""


class AuthError(ProviderError):
    """A required API key is missing or rejected."""


class RetryExhausted(ProviderError):
    """A transport kept failing past the configured retry budget."""


class ScriptDivergence(ProviderError):
    """A mock received a request its script has no entry for."""


@dataclass(frozen=True)
class ProviderReply:
    """Raw provider output plus the token usage it cost."""

    text: str
    tokens_in: int = 0
    tokens_out: int = 0


@dataclass(frozen=True)
class EngineRequest:
    """One answer-generation request against a frozen retrieval list."""

    engine_id: str
    query: str
    context_docs: RetrievalList
    instruction: str

    def __post_init__(self) -> None:
        if not self.context_docs.docs:
            raise ValueError("context_docs must be non-empty")


DEFAULT_CITE_INSTRUCTION = (
    "Answer using only the numbered sources above. Cite sources inline with "
    "bracketed source numbers such as [1] or [2][3]."
)


def build_engine_prompt(req: EngineRequest) -> str:
    """Render an engine request as a single prompt with numbered sources."""
    parts = [f"Sources for query {req.query!r}:"]
    for d in req.context_docs.docs:
        title = f" {d.title}" if d.title else ""
        parts.append(f"[{d.rank}]{title}\n{d.content}")
    parts.append(req.instruction)
    parts.append(f"Question: {req.query}")
    return "\n\n".join(parts)


@dataclass(frozen=True)
class TokenRecord:
    role: str
    tokens_in: int
    tokens_out: int

    def to_dict(self) -> dict[str, Any]:
        return {"role": self.role, "tokens_in": self.tokens_in, "tokens_out": self.tokens_out}


class TokenLedger:
    """Append-only, thread-safe log of per-call token usage."""

    def __init__(self) -> None:
        self._records: list[TokenRecord] = []
        self._lock = threading.Lock()

    def record(self, role: str, tokens_in: int, tokens_out: int) -> None:
        with self._lock:
            self._records.append(TokenRecord(role, tokens_in, tokens_out))

    @property
    def records(self) -> tuple[TokenRecord, ...]:
        with self._lock:
            return tuple(self._records)

    def totals(self) -> tuple[int, int]:
        recs = self.records
        return sum(r.tokens_in for r in recs), sum(r.tokens_out for r in recs)

    def total_tokens(self) -> int:
        tin, tout = self.totals()
        return tin + tout

    def __len__(self) -> int:
        return len(self.records)


@runtime_checkable
class EnginePort(Protocol):
    def generate(self, req: EngineRequest) -> ProviderReply: ...


@runtime_checkable
class SearchPort(Protocol):
    def search(self, query: str, top_n: int) -> RetrievalList: ...


@runtime_checkable
class LMPort(Protocol):
    def complete(self, prompt: str, role: str = "agent") -> ProviderReply: ...


_WS_RE = re.compile(r"\s+")


def canonicalize(text: str) -> str:
    """Collapse whitespace so script matching survives prompt reflows."""
    return _WS_RE.sub(" ", text).strip()


def request_digest(text: str) -> str:
    return hashlib.sha256(canonicalize(text).encode("utf-8")).hexdigest()


def with_retries(
    fn: Callable[[], ProviderReply],
    attempts: int = 3,
    backoff: float = 0.5,
    retry_on: tuple[type[Exception], ...] = (ProviderError,),
    sleep: Callable[[float], None] = time.sleep,
) -> ProviderReply:
    """Run ``fn`` with exponential backoff on transient provider failures."""
    last: Exception | None = None
    for attempt in range(attempts):
        try:
            return fn()
        except retry_on as exc:  # noqa: PERF203
            last = exc
            if attempt + 1 < attempts:
                sleep(backoff * (2**attempt))
    raise RetryExhausted(f"provider failed after {attempts} attempts: {last}") from last
