"""Shared domain types for answer-engine visibility work.

Everything here is an immutable value object, safe to share across threads.
The canonical on-disk form is JSONL (one object per line, UTF-8); unknown
JSON fields survive a decode/encode round trip via the ``extra`` mapping
each type carries.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Iterable, Iterator


def content_id(content: str) -> str:
    """Mint a stable opaque id from document content.

    Used only at ingestion time for sources that arrive without an id; the
    id is then carried as identity even if the content is later edited.
    """
    return "doc-" + hashlib.sha256(content.encode("utf-8")).hexdigest()[:16]


def _split_extra(data: dict[str, Any], known: tuple[str, ...]) -> dict[str, Any]:
    return {k: v for k, v in data.items() if k not in known}


@dataclass(frozen=True)
class Document:
    """One entry of a retrieval list: extracted text plus its rank."""

    doc_id: str
    content: str
    rank: int
    url: str | None = None
    title: str | None = None
    extra: dict[str, Any] = field(default_factory=dict)

    _KNOWN = ("doc_id", "content", "rank", "url", "title")

    def to_dict(self) -> dict[str, Any]:
        out: dict[str, Any] = {"doc_id": self.doc_id, "content": self.content, "rank": self.rank}
        if self.url is not None:
            out["url"] = self.url
        if self.title is not None:
            out["title"] = self.title
        out.update(self.extra)
        return out

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> "Document":
        return cls(
            doc_id=data.get("doc_id") or content_id(data.get("content", "")),
            content=data.get("content", ""),
            rank=int(data.get("rank", 0)),
            url=data.get("url"),
            title=data.get("title"),
            extra=_split_extra(data, cls._KNOWN),
        )


@dataclass(frozen=True)
class RetrievalList:
    """A frozen, rank-ordered list of documents for one query."""

    query_id: str
    docs: tuple[Document, ...]
    extra: dict[str, Any] = field(default_factory=dict)

    _KNOWN = ("query_id", "docs")

    @property
    def k(self) -> int:
        return len(self.docs)

    def doc_at(self, rank: int) -> Document:
        for d in self.docs:
            if d.rank == rank:
                return d
        raise KeyError(f"no document at rank {rank}")

    def to_dict(self) -> dict[str, Any]:
        out: dict[str, Any] = {
            "query_id": self.query_id,
            "docs": [d.to_dict() for d in self.docs],
        }
        out.update(self.extra)
        return out

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> "RetrievalList":
        return cls(
            query_id=data.get("query_id", ""),
            docs=tuple(Document.from_dict(d) for d in data.get("docs", [])),
            extra=_split_extra(data, cls._KNOWN),
        )


@dataclass(frozen=True)
class Quadruple:
    """One benchmark instance: query, engine, frozen retrieval, target doc."""

    id: str
    query: str
    engine_id: str
    scenario: str
    intent: str
    complexity: str
    retrieval: RetrievalList
    target_index: int
    response: str | None = None
    extra: dict[str, Any] = field(default_factory=dict)

    _KNOWN = (
        "id",
        "query",
        "engine_id",
        "scenario",
        "intent",
        "complexity",
        "retrieval",
        "target_index",
        "response",
    )

    @property
    def target_doc(self) -> Document:
        return self.retrieval.doc_at(self.target_index)

    def to_dict(self) -> dict[str, Any]:
        out: dict[str, Any] = {
            "id": self.id,
            "query": self.query,
            "engine_id": self.engine_id,
            "scenario": self.scenario,
            "intent": self.intent,
            "complexity": self.complexity,
            "retrieval": self.retrieval.to_dict(),
            "target_index": self.target_index,
        }
        if self.response is not None:
            out["response"] = self.response
        out.update(self.extra)
        return out

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> "Quadruple":
        return cls(
            id=data.get("id", ""),
            query=data.get("query", ""),
            engine_id=data.get("engine_id", ""),
            scenario=data.get("scenario", ""),
            intent=data.get("intent", ""),
            complexity=data.get("complexity", ""),
            retrieval=RetrievalList.from_dict(data.get("retrieval", {})),
            target_index=int(data.get("target_index", 0)),
            response=data.get("response"),
            extra=_split_extra(data, cls._KNOWN),
        )


@dataclass(frozen=True)
class CandidateEdit:
    """One edited variant of a target document."""

    variant_id: str
    content: str
    strategy_id: str
    round: int
    extra: dict[str, Any] = field(default_factory=dict)

    _KNOWN = ("variant_id", "content", "strategy_id", "round")

    def to_dict(self) -> dict[str, Any]:
        out: dict[str, Any] = {
            "variant_id": self.variant_id,
            "content": self.content,
            "strategy_id": self.strategy_id,
            "round": self.round,
        }
        out.update(self.extra)
        return out

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> "CandidateEdit":
        return cls(
            variant_id=data.get("variant_id", ""),
            content=data.get("content", ""),
            strategy_id=data.get("strategy_id", ""),
            round=int(data.get("round", 0)),
            extra=_split_extra(data, cls._KNOWN),
        )


@dataclass(frozen=True)
class EngineProfile:
    """Observed presentation preferences of one answer engine.

    ``structural_stats`` is computed mechanically from response texts;
    the tendency/style summaries come from a language model digest.
    """

    engine_id: str
    formatting_tendencies: tuple[tuple[str, float], ...]
    evidence_style: str
    rhetorical_style: str
    structural_stats: dict[str, float]
    sample_count: int
    built_at: str
    extra: dict[str, Any] = field(default_factory=dict)

    _KNOWN = (
        "engine_id",
        "formatting_tendencies",
        "evidence_style",
        "rhetorical_style",
        "structural_stats",
        "sample_count",
        "built_at",
    )

    def to_dict(self) -> dict[str, Any]:
        out: dict[str, Any] = {
            "engine_id": self.engine_id,
            "formatting_tendencies": [[t, w] for t, w in self.formatting_tendencies],
            "evidence_style": self.evidence_style,
            "rhetorical_style": self.rhetorical_style,
            "structural_stats": dict(self.structural_stats),
            "sample_count": self.sample_count,
            "built_at": self.built_at,
        }
        out.update(self.extra)
        return out

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> "EngineProfile":
        return cls(
            engine_id=data.get("engine_id", ""),
            formatting_tendencies=tuple(
                (str(t), float(w)) for t, w in data.get("formatting_tendencies", [])
            ),
            evidence_style=data.get("evidence_style", ""),
            rhetorical_style=data.get("rhetorical_style", ""),
            structural_stats={k: float(v) for k, v in data.get("structural_stats", {}).items()},
            sample_count=int(data.get("sample_count", 0)),
            built_at=data.get("built_at", ""),
            extra=_split_extra(data, cls._KNOWN),
        )


# --- label taxonomy -------------------------------------------------------

# Five top-level everyday-life domains plus fifteen sub-categories; scenario
# labels may use either level. Ids are stable snake_case handles, overridable
# through config.
DEFAULT_SCENARIO_DOMAINS = (
    "health_wellbeing",
    "finance_economy",
    "education_growth",
    "life_consumption",
    "law_civic",
)

DEFAULT_SCENARIO_SUBCATEGORIES = (
    "health_physical",
    "health_mental",
    "health_nutrition",
    "finance_market_analysis",
    "finance_tax",
    "finance_personal_budgeting",
    "education_learning",
    "education_career",
    "education_parenting",
    "life_shopping",
    "life_travel",
    "life_home",
    "law_rights",
    "law_procedures",
    "civic_services",
)

DEFAULT_SCENARIOS = DEFAULT_SCENARIO_DOMAINS + DEFAULT_SCENARIO_SUBCATEGORIES

DEFAULT_INTENTS = (
    "guiding",
    "complex_reasoning",
    "fact_checking",
    "comparison",
    "exploration",
)

DEFAULT_COMPLEXITIES = ("simple", "moderate", "comprehensive")


@dataclass(frozen=True)
class LabelConfig:
    """Closed label sets used for mechanical validation and annotation."""

    scenarios: tuple[str, ...] = DEFAULT_SCENARIOS
    intents: tuple[str, ...] = DEFAULT_INTENTS
    complexities: tuple[str, ...] = DEFAULT_COMPLEXITIES
    max_k: int = 10


DEFAULT_LABELS = LabelConfig()


@dataclass(frozen=True)
class Violation:
    """One failed invariant, naming the field it was found on."""

    field: str
    invariant: str
    message: str

    def to_dict(self) -> dict[str, str]:
        return {"field": self.field, "invariant": self.invariant, "message": self.message}


def validate_quadruple(q: Quadruple, labels: LabelConfig = DEFAULT_LABELS) -> list[Violation]:
    """Check every structural invariant of a quadruple.

    Never raises; returns an empty list iff the instance is well formed.
    """
    out: list[Violation] = []
    if not q.id:
        out.append(Violation("id", "non_empty", "quadruple id is empty"))
    if not q.query.strip():
        out.append(Violation("query", "non_empty", "query text is empty"))
    if not q.engine_id:
        out.append(Violation("engine_id", "non_empty", "engine id is empty"))

    k = q.retrieval.k
    if not 1 <= k <= labels.max_k:
        out.append(
            Violation(
                "retrieval.docs",
                "k_range",
                f"retrieval list has {k} docs, expected 1..{labels.max_k}",
            )
        )
    ranks = [d.rank for d in q.retrieval.docs]
    if sorted(ranks) != list(range(1, k + 1)):
        seen: set[int] = set()
        dupes = sorted({r for r in ranks if r in seen or seen.add(r)})
        if dupes:
            out.append(
                Violation(
                    "retrieval.docs.rank",
                    "rank_uniqueness",
                    f"duplicate rank(s) {dupes} in retrieval list",
                )
            )
        else:
            out.append(
                Violation(
                    "retrieval.docs.rank",
                    "rank_contiguity",
                    f"ranks {sorted(ranks)} are not 1..{k} without gaps",
                )
            )
    for d in q.retrieval.docs:
        if not d.content.strip():
            out.append(
                Violation(
                    f"retrieval.docs[rank={d.rank}].content",
                    "content_non_empty",
                    "document content is empty",
                )
            )

    if not 1 <= q.target_index <= k:
        out.append(
            Violation(
                "target_index",
                "target_index_out_of_range",
                f"target_index={q.target_index} outside [1, {k}]",
            )
        )

    if q.scenario not in labels.scenarios:
        out.append(Violation("scenario", "closed_label_set", f"unknown scenario {q.scenario!r}"))
    if q.intent not in labels.intents:
        out.append(Violation("intent", "closed_label_set", f"unknown intent {q.intent!r}"))
    if q.complexity not in labels.complexities:
        out.append(
            Violation("complexity", "closed_label_set", f"unknown complexity {q.complexity!r}")
        )
    return out


# --- JSONL IO -------------------------------------------------------------


def dumps_canonical(obj: Any) -> str:
    """Serialize with stable key order so replays are byte-identical."""
    return json.dumps(obj, sort_keys=True, ensure_ascii=False)


def write_quadruples(path: str | Path, quadruples: Iterable[Quadruple]) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for q in quadruples:
            fh.write(dumps_canonical(q.to_dict()) + "\n")


def read_quadruples(path: str | Path) -> Iterator[Quadruple]:
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if line:
                yield Quadruple.from_dict(json.loads(line))
