"""Provider ports (engine / search / language model) and their adapters.

All nondeterminism in the system crosses one of these three boundaries,
so everything above them can be replayed exactly from a script file.
"""

from citelift.providers.base import (
    AuthError,
    DEFAULT_CITE_INSTRUCTION,
    EnginePort,
    EngineRequest,
    LMPort,
    ProviderError,
    ProviderReply,
    RetryExhausted,
    ScriptDivergence,
    SearchPort,
    TokenLedger,
    TokenRecord,
    build_engine_prompt,
    canonicalize,
    request_digest,
    with_retries,
)
from citelift.providers.mock import (
    FunctionEngine,
    FunctionLM,
    FunctionSearch,
    MockEngine,
    MockLM,
    MockSearch,
    ProviderScript,
    ScriptEntry,
    ScriptQueue,
)

__all__ = [
    "AuthError",
    "DEFAULT_CITE_INSTRUCTION",
    "EnginePort",
    "EngineRequest",
    "FunctionEngine",
    "FunctionLM",
    "FunctionSearch",
    "LMPort",
    "MockEngine",
    "MockLM",
    "MockSearch",
    "ProviderError",
    "ProviderReply",
    "ProviderScript",
    "RetryExhausted",
    "ScriptDivergence",
    "ScriptEntry",
    "ScriptQueue",
    "SearchPort",
    "TokenLedger",
    "TokenRecord",
    "build_engine_prompt",
    "canonicalize",
    "request_digest",
    "with_retries",
]
