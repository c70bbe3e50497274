"""Four-stage benchmark construction.

1. retrieve documents for a seed query, keep the top N, lock one source
   at a seeded-uniform rank, and reverse-generate a user query the
   locked source can answer;
2. validate the loop: re-search the generated query and keep the sample
   only if the locked source reappears in the top N (matched by URL,
   else by content hash);
3. label each validated sample (scenario / intent / complexity) against
   the closed label sets, with one retry before discarding;
4. rule-based bias filters (dedup, minimum length, scenario balance)
   plus a seeded human-audit sample.

Emitted quadruples all passed stage 2; their retrieval list is the
validation re-retrieval, so the query-document link is live by
construction. Processing is order-stable in seed order, and fixed seeds
plus scripted providers replay byte-identically.
"""

from __future__ import annotations

import hashlib
import logging
import random
import re
from dataclasses import dataclass, field
from typing import Any, Sequence

from citelift.model import (
    Document,
    LabelConfig,
    DEFAULT_LABELS,
    Quadruple,
    RetrievalList,
    content_id,
)
from citelift.prompts import build as build_prompt
from citelift.providers.base import LMPort, ProviderError, SearchPort

log = logging.getLogger(__name__)

PROVENANCES = ("authored", "generated")


@dataclass(frozen=True)
class SeedQuery:
    text: str
    target_scenario: str
    provenance: str = "authored"

    def __post_init__(self) -> None:
        if not self.text.strip():
            raise ValueError("seed query text is empty")
        if self.provenance not in PROVENANCES:
            raise ValueError(f"provenance must be one of {PROVENANCES}")

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> "SeedQuery":
        return cls(
            text=data["text"],
            target_scenario=data.get("target_scenario", ""),
            provenance=data.get("provenance", "authored"),
        )


@dataclass
class CandidateSample:
    """Pipeline state for one seed; discarded samples keep their reason."""

    seed: SeedQuery
    retrieval: RetrievalList | None = None
    locked_source_rank: int | None = None
    reverse_query: str | None = None
    validated: bool = False
    validation_retrieval: RetrievalList | None = None
    validation_rank: int | None = None
    labels: tuple[str, str, str] | None = None
    discarded_reason: str | None = None
    flags: list[str] = field(default_factory=list)

    @property
    def locked_doc(self) -> Document:
        if self.retrieval is None or self.locked_source_rank is None:
            raise ValueError("no locked source on this sample")
        return self.retrieval.doc_at(self.locked_source_rank)


def _same_doc(a: Document, b: Document) -> bool:
    if a.url and b.url:
        return a.url == b.url
    return content_id(a.content) == content_id(b.content)


def retrieve_and_lock(
    seed: SeedQuery, search_port: SearchPort, top_n: int, rng_seed: int
) -> CandidateSample:
    """Stage 1a-c: search, keep the top N, lock one source uniformly."""
    sample = CandidateSample(seed=seed)
    try:
        retrieval = search_port.search(seed.text, top_n)
    except ProviderError as exc:
        sample.discarded_reason = f"search failure: {exc}"
        return sample
    if not retrieval.docs:
        sample.discarded_reason = "empty search result"
        return sample
    sample.retrieval = retrieval
    sample.locked_source_rank = random.Random(rng_seed).randint(1, retrieval.k)
    return sample


def reverse_generate_query(
    sample: CandidateSample, lm_port: LMPort, prompt_dir: str | None = None
) -> str | None:
    """Stage 1d: generate a user query the locked source answers."""
    if sample.retrieval is None or sample.locked_source_rank is None:
        raise ValueError("sample has no locked source")
    try:
        reply = lm_port.complete(
            build_prompt("bench_reverse_query", {"source": sample.locked_doc.content}, prompt_dir),
            role="agent",
        )
    except ProviderError as exc:
        sample.discarded_reason = f"reverse generation failure: {exc}"
        return None
    query = reply.text.strip()
    if not query:
        sample.discarded_reason = "empty reverse query"
        return None
    if query.casefold() == sample.seed.text.casefold():
        sample.flags.append("reverse_query_identical_to_seed")
    sample.reverse_query = query
    return query


def closed_loop_validate(
    sample: CandidateSample, search_port: SearchPort, top_n: int
) -> bool:
    """Stage 2: the locked source must reappear in the re-retrieval."""
    if sample.reverse_query is None:
        raise ValueError("sample has no reverse query")
    src = sample.locked_doc
    retrieval = search_port.search(sample.reverse_query, top_n)
    for doc in retrieval.docs:
        if _same_doc(doc, src):
            sample.validated = True
            sample.validation_retrieval = retrieval
            sample.validation_rank = doc.rank
            return True
    sample.validated = False
    return False


_LABEL_LINE_RE = re.compile(r"^\s*([\w-]+)\s*/\s*([\w-]+)\s*/\s*([\w-]+)\s*$", re.MULTILINE)


def annotate_labels(
    sample: CandidateSample,
    lm_port: LMPort,
    labels: LabelConfig = DEFAULT_LABELS,
    prompt_dir: str | None = None,
) -> tuple[str, str, str]:
    """Stage 3: closed-set labels with one retry; off-enum output fails."""
    if not sample.validated or sample.reverse_query is None:
        raise ValueError("only validated samples can be labeled")
    prompt = build_prompt(
        "bench_annotate",
        {
            "query": sample.reverse_query,
            "scenario_options": ", ".join(labels.scenarios),
            "intent_options": ", ".join(labels.intents),
            "complexity_options": ", ".join(labels.complexities),
        },
        prompt_dir,
    )
    for _ in range(2):
        reply = lm_port.complete(prompt, role="agent")
        m = _LABEL_LINE_RE.search(reply.text)
        if m:
            scenario, intent, complexity = m.group(1), m.group(2), m.group(3)
            if (
                scenario in labels.scenarios
                and intent in labels.intents
                and complexity in labels.complexities
            ):
                sample.labels = (scenario, intent, complexity)
                return sample.labels
        log.warning("off-enum or unparseable labels %r; retrying once", reply.text[:80])
    raise ValueError("unlabelable: reply stayed off the closed label sets")


def _normalized_query(text: str) -> str:
    return " ".join(text.casefold().split())


def bias_filters(
    samples: Sequence[CandidateSample],
    min_query_chars: int = 10,
    scenario_cap: int | None = None,
    audit_rate: float = 0.05,
    rng_seed: int = 0,
) -> tuple[list[CandidateSample], dict[str, Any]]:
    """Stage 4: rule filters plus a seeded human-audit sample."""
    kept: list[CandidateSample] = []
    removals: list[dict[str, str]] = []
    seen_queries: set[str] = set()
    per_scenario: dict[str, int] = {}
    for s in samples:
        query = s.reverse_query or ""
        norm = hashlib.sha256(_normalized_query(query).encode("utf-8")).hexdigest()
        if norm in seen_queries:
            removals.append({"query": query, "reason": "duplicate_query"})
            continue
        if len(query) < min_query_chars:
            removals.append({"query": query, "reason": "query_too_short"})
            continue
        scenario = s.labels[0] if s.labels else s.seed.target_scenario
        if scenario_cap is not None and per_scenario.get(scenario, 0) >= scenario_cap:
            removals.append({"query": query, "reason": "scenario_balance_cap"})
            continue
        seen_queries.add(norm)
        per_scenario[scenario] = per_scenario.get(scenario, 0) + 1
        kept.append(s)

    audit_size = max(1, round(audit_rate * len(kept))) if kept else 0
    rng = random.Random(rng_seed)
    audit_indices = sorted(rng.sample(range(len(kept)), audit_size)) if kept else []
    report = {
        "input": len(samples),
        "kept": len(kept),
        "removals": removals,
        "audit_sample": [kept[i].reverse_query for i in audit_indices],
    }
    return kept, report


def build_benchmark(
    seeds: Sequence[SeedQuery],
    search_port: SearchPort,
    lm_port: LMPort,
    engine_id: str,
    top_n: int = 10,
    labels: LabelConfig = DEFAULT_LABELS,
    min_query_chars: int = 10,
    scenario_cap: int | None = None,
    audit_rate: float = 0.05,
    base_seed: int = 0,
    prompt_dir: str | None = None,
) -> tuple[list[Quadruple], dict[str, Any]]:
    """Run all four stages over a seed list; emit quadruples + audit report.

    Every emitted quadruple passed closed-loop validation; its retrieval
    list is the validation re-retrieval with the locked source as target.
    """
    discarded: list[dict[str, str]] = []
    validated: list[CandidateSample] = []
    for idx, seed in enumerate(seeds):
        sample = retrieve_and_lock(seed, search_port, top_n, rng_seed=base_seed + idx)
        if sample.discarded_reason:
            discarded.append({"seed": seed.text, "reason": sample.discarded_reason})
            continue
        if reverse_generate_query(sample, lm_port, prompt_dir) is None:
            discarded.append({"seed": seed.text, "reason": sample.discarded_reason or "no query"})
            continue
        try:
            ok = closed_loop_validate(sample, search_port, top_n)
        except ProviderError as exc:
            discarded.append({"seed": seed.text, "reason": f"validation search failure: {exc}"})
            continue
        if not ok:
            discarded.append({"seed": seed.text, "reason": "closed_loop_rejected"})
            continue
        try:
            annotate_labels(sample, lm_port, labels, prompt_dir)
        except (ValueError, ProviderError) as exc:
            discarded.append({"seed": seed.text, "reason": str(exc)})
            continue
        validated.append(sample)

    kept, filter_report = bias_filters(
        validated,
        min_query_chars=min_query_chars,
        scenario_cap=scenario_cap,
        audit_rate=audit_rate,
        rng_seed=base_seed,
    )

    quadruples: list[Quadruple] = []
    for s in kept:
        assert s.validation_retrieval is not None and s.validation_rank is not None
        assert s.labels is not None and s.reverse_query is not None
        qid = "bench-" + hashlib.sha256(
            (s.reverse_query + "|" + s.locked_doc.doc_id).encode("utf-8")
        ).hexdigest()[:12]
        quadruples.append(
            Quadruple(
                id=qid,
                query=s.reverse_query,
                engine_id=engine_id,
                scenario=s.labels[0],
                intent=s.labels[1],
                complexity=s.labels[2],
                retrieval=s.validation_retrieval,
                target_index=s.validation_rank,
                extra={"flags": list(s.flags)} if s.flags else {},
            )
        )

    report = {
        "seeds": len(seeds),
        "discarded": discarded,
        "validated": len(validated),
        "filters": filter_report,
        "emitted": len(quadruples),
    }
    return quadruples, report


def validate_corpus(
    quadruples: Sequence[Quadruple], search_port: SearchPort, top_n: int = 10
) -> dict[str, Any]:
    """Re-run stage 2 over an existing corpus; report per-id pass/fail."""
    results: list[dict[str, Any]] = []
    passed = 0
    for q in quadruples:
        target = q.target_doc
        try:
            retrieval = search_port.search(q.query, top_n)
        except ProviderError as exc:
            results.append({"id": q.id, "valid": False, "reason": f"search failure: {exc}"})
            continue
        rank = next((d.rank for d in retrieval.docs if _same_doc(d, target)), None)
        ok = rank is not None
        passed += ok
        results.append({"id": q.id, "valid": ok, "rank": rank})
    return {"total": len(quadruples), "passed": passed, "results": results}
