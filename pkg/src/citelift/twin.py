"""Twin-branch controlled runs: generate once from the frozen retrieval
list, once from the same list with the target document swapped in situ,
score both branches identically, and attribute the composite-score delta
to the edit.

Branch order is fixed (baseline first, then optimized; judge calls in
``metrics.JUDGED_KINDS`` order within each branch) so scripted providers
replay exactly.
"""

from __future__ import annotations

import dataclasses
import logging
from dataclasses import dataclass
from typing import Any

from citelift.metrics import MetricConfig, ScoreVector, compute_dpa, compute_wlv, score_response
from citelift.model import CandidateEdit, Quadruple, RetrievalList
from citelift.providers.base import (
    DEFAULT_CITE_INSTRUCTION,
    EnginePort,
    EngineRequest,
    LMPort,
    ProviderError,
)
from citelift.response import ParsedResponse, parse_response

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class BranchOutcome:
    response_text: str
    parsed: ParsedResponse
    scores: ScoreVector

    def to_dict(self) -> dict[str, Any]:
        return {
            "response_text": self.response_text,
            "parsed": self.parsed.to_dict(),
            "scores": self.scores.to_dict(),
        }


@dataclass(frozen=True)
class TwinResult:
    target_rank: int
    variant_id: str
    baseline: BranchOutcome | None = None
    optimized: BranchOutcome | None = None
    delta_dsvcf: float | None = None
    failure: str | None = None

    def to_dict(self) -> dict[str, Any]:
        return {
            "target_rank": self.target_rank,
            "variant_id": self.variant_id,
            "baseline": self.baseline.to_dict() if self.baseline else None,
            "optimized": self.optimized.to_dict() if self.optimized else None,
            "delta_dsvcf": self.delta_dsvcf,
            "failure": self.failure,
        }


def substitute_in_situ(
    rlist: RetrievalList, target_rank: int, variant: CandidateEdit
) -> RetrievalList:
    """Swap the content at ``target_rank``, keeping id/rank/url/title.

    The input list is untouched; every other position is shared by value.
    """
    if not any(d.rank == target_rank for d in rlist.docs):
        raise ValueError(f"no document at rank {target_rank}")
    docs = tuple(
        dataclasses.replace(d, content=variant.content) if d.rank == target_rank else d
        for d in rlist.docs
    )
    return RetrievalList(query_id=rlist.query_id, docs=docs, extra=dict(rlist.extra))


def run_twin(
    q: Quadruple,
    variant: CandidateEdit,
    engine_port: EnginePort,
    judge_port: LMPort,
    cfg: MetricConfig = MetricConfig(),
    instruction: str = DEFAULT_CITE_INSTRUCTION,
    prompt_dir: str | None = None,
) -> TwinResult:
    """Run both branches and score them against the baseline's surface
    values. On a branch failure the partial result is flagged and no
    delta is reported.
    """
    rank = q.target_index
    original = q.target_doc.content
    k = q.retrieval.k

    baseline: BranchOutcome | None = None
    optimized: BranchOutcome | None = None

    try:
        base_reply = engine_port.generate(
            EngineRequest(q.engine_id, q.query, q.retrieval, instruction)
        )
        base_parsed = parse_response(base_reply.text, k)
        base_wlv = compute_wlv(base_parsed, rank)
        base_dpa = compute_dpa(base_parsed, rank)
        base_scores = score_response(
            q.query,
            original,
            None,
            base_reply.text,
            base_parsed,
            rank,
            base_wlv,
            base_dpa,
            judge_port,
            cfg,
            prompt_dir,
        )
        baseline = BranchOutcome(base_reply.text, base_parsed, base_scores)
    except ProviderError as exc:
        log.warning("baseline branch failed: %s", exc)
        return TwinResult(
            target_rank=rank, variant_id=variant.variant_id, failure=f"baseline branch: {exc}"
        )

    try:
        new_list = substitute_in_situ(q.retrieval, rank, variant)
        opt_reply = engine_port.generate(EngineRequest(q.engine_id, q.query, new_list, instruction))
        opt_parsed = parse_response(opt_reply.text, k)
        opt_scores = score_response(
            q.query,
            original,
            variant.content,
            opt_reply.text,
            opt_parsed,
            rank,
            base_wlv,
            base_dpa,
            judge_port,
            cfg,
            prompt_dir,
        )
        optimized = BranchOutcome(opt_reply.text, opt_parsed, opt_scores)
    except ProviderError as exc:
        log.warning("optimized branch failed: %s", exc)
        return TwinResult(
            target_rank=rank,
            variant_id=variant.variant_id,
            baseline=baseline,
            failure=f"optimized branch: {exc}",
        )

    return TwinResult(
        target_rank=rank,
        variant_id=variant.variant_id,
        baseline=baseline,
        optimized=optimized,
        delta_dsvcf=optimized.scores.dsvcf - baseline.scores.dsvcf,
    )


_DELTA_KEYS = ("wlv", "dpa", "cp", "si", "aa", "fa_resp", "kc", "ad", "ssv_norm", "isi_norm", "dsvcf", "cf_ratio")


@dataclass(frozen=True)
class AttributionRecord:
    verdict: str  # improved | neutral | degraded
    deltas: dict[str, float]
    flags: tuple[str, ...]

    def to_dict(self) -> dict[str, Any]:
        return {"verdict": self.verdict, "deltas": dict(self.deltas), "flags": list(self.flags)}


def attribute_delta(result: TwinResult) -> AttributionRecord:
    """Per-sub-metric deltas plus an improved/neutral/degraded verdict."""
    if result.baseline is None or result.optimized is None or result.delta_dsvcf is None:
        raise ValueError("attribution needs a complete twin result")
    base = result.baseline.scores.to_dict()
    opt = result.optimized.scores.to_dict()
    deltas = {k: opt[k] - base[k] for k in _DELTA_KEYS}
    if result.delta_dsvcf > 0:
        verdict = "improved"
    elif result.delta_dsvcf < 0:
        verdict = "degraded"
    else:
        verdict = "neutral"
    flags = ("fidelity_regression",) if deltas["fa_resp"] < 0 else ()
    return AttributionRecord(verdict=verdict, deltas=deltas, flags=flags)
