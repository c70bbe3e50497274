"""Deterministic scripted providers for offline runs and replay tests.

A script file holds one entry queue per port. In ``strict`` mode every
call must match the next unconsumed entry of its queue; in ``tolerant``
mode it may match any unconsumed entry. Matching is by substring of the
whitespace-collapsed request, or by its sha256 digest; an empty matcher
matches anything, so a purely positional script is just a list of replies.
"""

from __future__ import annotations

import json
import threading
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Callable

from citelift.model import Document, RetrievalList, content_id
from citelift.providers.base import (
    EngineRequest,
    ProviderError,
    ProviderReply,
    ScriptDivergence,
    TokenLedger,
    build_engine_prompt,
    canonicalize,
    request_digest,
)


@dataclass
class ScriptEntry:
    reply: str
    match: str = ""
    match_hash: str | None = None
    tokens_in: int = 0
    tokens_out: int = 0
    consumed: bool = False

    def matches(self, request_text: str) -> bool:
        canonical = canonicalize(request_text)
        if self.match_hash is not None:
            return request_digest(request_text) == self.match_hash
        if self.match:
            return canonicalize(self.match) in canonical
        return True

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> "ScriptEntry":
        return cls(
            reply=data.get("reply", ""),
            match=data.get("match", ""),
            match_hash=data.get("match_hash"),
            tokens_in=int(data.get("tokens_in", 0)),
            tokens_out=int(data.get("tokens_out", 0)),
        )


class ScriptQueue:
    """Ordered entries for one port; consumption is serialized."""

    def __init__(self, entries: list[ScriptEntry], mode: str = "strict", name: str = "") -> None:
        if mode not in ("strict", "tolerant"):
            raise ValueError(f"unknown script mode {mode!r}")
        self.entries = entries
        self.mode = mode
        self.name = name
        self._lock = threading.Lock()

    def take(self, request_text: str) -> ScriptEntry:
        with self._lock:
            if self.mode == "strict":
                entry = next((e for e in self.entries if not e.consumed), None)
                if entry is None:
                    raise ScriptDivergence(
                        f"script divergence: {self.name} queue exhausted for request "
                        f"{canonicalize(request_text)[:120]!r}"
                    )
                if not entry.matches(request_text):
                    raise ScriptDivergence(
                        f"script divergence: next {self.name} entry expects "
                        f"{entry.match!r}, got {canonicalize(request_text)[:120]!r}"
                    )
            else:
                entry = next(
                    (e for e in self.entries if not e.consumed and e.matches(request_text)),
                    None,
                )
                if entry is None:
                    raise ScriptDivergence(
                        f"script divergence: no unconsumed {self.name} entry matches "
                        f"{canonicalize(request_text)[:120]!r}"
                    )
            entry.consumed = True
            return entry

    def remaining(self) -> int:
        with self._lock:
            return sum(1 for e in self.entries if not e.consumed)


@dataclass
class ProviderScript:
    """Per-port entry queues loaded from one JSON document."""

    engine: ScriptQueue
    lm: ScriptQueue
    search: ScriptQueue

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> "ProviderScript":
        mode = data.get("mode", "strict")

        def queue(key: str) -> ScriptQueue:
            return ScriptQueue(
                [ScriptEntry.from_dict(e) for e in data.get(key, [])], mode=mode, name=key
            )

        return cls(engine=queue("engine"), lm=queue("lm"), search=queue("search"))

    @classmethod
    def load(cls, path: str | Path) -> "ProviderScript":
        with open(path, encoding="utf-8") as fh:
            return cls.from_dict(json.load(fh))


class MockEngine:
    def __init__(self, queue: ScriptQueue, ledger: TokenLedger | None = None) -> None:
        self.queue = queue
        self.ledger = ledger

    def generate(self, req: EngineRequest) -> ProviderReply:
        entry = self.queue.take(build_engine_prompt(req))
        if self.ledger is not None:
            self.ledger.record("engine", entry.tokens_in, entry.tokens_out)
        return ProviderReply(entry.reply, entry.tokens_in, entry.tokens_out)


class MockLM:
    def __init__(self, queue: ScriptQueue, ledger: TokenLedger | None = None) -> None:
        self.queue = queue
        self.ledger = ledger

    def complete(self, prompt: str, role: str = "agent") -> ProviderReply:
        if not prompt.strip():
            raise ProviderError("empty prompt")
        entry = self.queue.take(prompt)
        if self.ledger is not None:
            self.ledger.record(role, entry.tokens_in, entry.tokens_out)
        return ProviderReply(entry.reply, entry.tokens_in, entry.tokens_out)


def docs_from_payload(payload: Any, top_n: int, query: str) -> RetrievalList:
    """Build a rank-ordered retrieval list from a JSON doc array."""
    docs: list[Document] = []
    for i, item in enumerate(payload[:top_n], start=1):
        content = item.get("content", "")
        docs.append(
            Document(
                doc_id=item.get("doc_id") or content_id(content),
                content=content,
                rank=i,
                url=item.get("url"),
                title=item.get("title"),
            )
        )
    return RetrievalList(query_id="q-" + request_digest(query)[:12], docs=tuple(docs))


class MockSearch:
    """Scripted search: each entry's reply is a JSON array of documents."""

    def __init__(self, queue: ScriptQueue, ledger: TokenLedger | None = None) -> None:
        self.queue = queue
        self.ledger = ledger

    def search(self, query: str, top_n: int) -> RetrievalList:
        if top_n < 1:
            raise ValueError("top_n must be >= 1")
        entry = self.queue.take(query)
        if self.ledger is not None:
            self.ledger.record("search", entry.tokens_in, entry.tokens_out)
        payload = json.loads(entry.reply) if entry.reply else []
        return docs_from_payload(payload, top_n, query)


# --- callback-backed test doubles ------------------------------------------


class FunctionLM:
    """LM port backed by a plain function; handy for generated test runs."""

    def __init__(
        self,
        fn: Callable[[str], str],
        ledger: TokenLedger | None = None,
        tokens_in: int = 100,
        tokens_out: int = 50,
    ) -> None:
        self.fn = fn
        self.ledger = ledger
        self.tokens_in = tokens_in
        self.tokens_out = tokens_out

    def complete(self, prompt: str, role: str = "agent") -> ProviderReply:
        if not prompt.strip():
            raise ProviderError("empty prompt")
        text = self.fn(prompt)
        if self.ledger is not None:
            self.ledger.record(role, self.tokens_in, self.tokens_out)
        return ProviderReply(text, self.tokens_in, self.tokens_out)


class FunctionEngine:
    def __init__(
        self,
        fn: Callable[[EngineRequest], str],
        ledger: TokenLedger | None = None,
        tokens_in: int = 100,
        tokens_out: int = 50,
    ) -> None:
        self.fn = fn
        self.ledger = ledger
        self.tokens_in = tokens_in
        self.tokens_out = tokens_out

    def generate(self, req: EngineRequest) -> ProviderReply:
        text = self.fn(req)
        if self.ledger is not None:
            self.ledger.record("engine", self.tokens_in, self.tokens_out)
        return ProviderReply(text, self.tokens_in, self.tokens_out)


class FunctionSearch:
    def __init__(self, fn: Callable[[str, int], RetrievalList], ledger: TokenLedger | None = None) -> None:
        self.fn = fn
        self.ledger = ledger

    def search(self, query: str, top_n: int) -> RetrievalList:
        if top_n < 1:
            raise ValueError("top_n must be >= 1")
        result = self.fn(query, top_n)
        if self.ledger is not None:
            self.ledger.record("search", 0, 0)
        return result
