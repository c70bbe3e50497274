"""Live HTTP adapters: an OpenAI-style chat endpoint and a Tavily-style
search endpoint. Wire formats are adapter details, not a stable surface;
anything that needs exactness should run against the scripted mocks.
"""

from __future__ import annotations

import os
from dataclasses import dataclass

import requests

from citelift.model import RetrievalList
from citelift.providers.base import (
    AuthError,
    EngineRequest,
    ProviderError,
    ProviderReply,
    TokenLedger,
    build_engine_prompt,
    with_retries,
)
from citelift.providers.mock import docs_from_payload


@dataclass
class HttpConfig:
    base_url: str
    model: str = ""
    api_key_env: str = "ENGINE_API_KEY"
    timeout: float = 60.0
    retries: int = 3
    backoff: float = 0.5


def _require_key(env_name: str) -> str:
    key = os.environ.get(env_name, "")
    if not key:
        raise AuthError(f"missing API key: set {env_name}")
    return key


class HttpLM:
    """Chat-completions adapter usable as the shared LM/judge port."""

    def __init__(self, cfg: HttpConfig, ledger: TokenLedger | None = None) -> None:
        self.cfg = cfg
        self.ledger = ledger
        self._key = _require_key(cfg.api_key_env)
        self._session = requests.Session()

    def _post_chat(self, prompt: str) -> ProviderReply:
        try:
            resp = self._session.post(
                self.cfg.base_url.rstrip("/") + "/chat/completions",
                headers={"Authorization": f"Bearer {self._key}"},
                json={
                    "model": self.cfg.model,
                    "messages": [{"role": "user", "content": prompt}],
                    "temperature": 0,
                },
                timeout=self.cfg.timeout,
            )
            resp.raise_for_status()
            body = resp.json()
        except requests.RequestException as exc:
            raise ProviderError(f"chat transport failure: {exc}") from exc
        try:
            text = body["choices"][0]["message"]["content"]
        except (KeyError, IndexError, TypeError) as exc:
            raise ProviderError(f"malformed chat reply: {body!r:.200}") from exc
        usage = body.get("usage", {})
        return ProviderReply(
            text,
            int(usage.get("prompt_tokens", 0)),
            int(usage.get("completion_tokens", 0)),
        )

    def complete(self, prompt: str, role: str = "agent") -> ProviderReply:
        if not prompt.strip():
            raise ProviderError("empty prompt")
        reply = with_retries(
            lambda: self._post_chat(prompt), attempts=self.cfg.retries, backoff=self.cfg.backoff
        )
        if self.ledger is not None:
            self.ledger.record(role, reply.tokens_in, reply.tokens_out)
        return reply


class HttpEngine:
    """Answer engine driven through the same chat wire format."""

    def __init__(self, cfg: HttpConfig, ledger: TokenLedger | None = None) -> None:
        self._lm = HttpLM(cfg, ledger=None)
        self.ledger = ledger

    def generate(self, req: EngineRequest) -> ProviderReply:
        reply = self._lm.complete(build_engine_prompt(req), role="engine")
        if self.ledger is not None:
            self.ledger.record("engine", reply.tokens_in, reply.tokens_out)
        return reply


class HttpSearch:
    """POST {base_url}/search with {"query", "max_results"}."""

    def __init__(self, cfg: HttpConfig, ledger: TokenLedger | None = None) -> None:
        self.cfg = cfg
        self.ledger = ledger
        self._key = _require_key(cfg.api_key_env)
        self._session = requests.Session()

    def _post_search(self, query: str, top_n: int) -> list:
        try:
            resp = self._session.post(
                self.cfg.base_url.rstrip("/") + "/search",
                json={"api_key": self._key, "query": query, "max_results": top_n},
                timeout=self.cfg.timeout,
            )
            resp.raise_for_status()
            body = resp.json()
        except requests.RequestException as exc:
            raise ProviderError(f"search transport failure: {exc}") from exc
        return body.get("results", [])

    def search(self, query: str, top_n: int) -> RetrievalList:
        if top_n < 1:
            raise ValueError("top_n must be >= 1")

        def attempt() -> ProviderReply:
            # piggyback on the retry helper; payload carried out of band
            attempt.results = self._post_search(query, top_n)  # type: ignore[attr-defined]
            return ProviderReply("")

        with_retries(attempt, attempts=self.cfg.retries, backoff=self.cfg.backoff)
        results = getattr(attempt, "results", [])
        if self.ledger is not None:
            self.ledger.record("search", 0, 0)
        return docs_from_payload(results, top_n, query)
