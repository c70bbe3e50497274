"""The budgeted Generate-Evaluate-Select loop.

Each round: retrieve skill priors, plan a strategy, sample candidate
edits, fidelity-gate them against the ORIGINAL document, and accept the
best survivor only if its predicted score beats the best so far. Rounds
with no survivor or no improvement raise a stall counter; the run stops
at the round budget or after ``patience`` consecutive stalls (the
plateau signal). The external engine is not called inside the loop; one
twin-branch run at the end measures the realized effect of the winning
edit, and the session memory is consolidated into the skill bank exactly
once.

Also hosts the one-shot heuristic rewrite baselines and the cost-profile
comparison across None / heuristic / lite / full.
"""

from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field, replace
from typing import Any, Callable, Sequence

from citelift.agents import (
    AgentParseError,
    GateDecision,
    Strategy,
    gate_and_rank,
    generate_candidates,
    plan_strategy,
    predict_score,
)
from citelift.metrics import MetricConfig, UnscoreableError, compute_wlv
from citelift.model import CandidateEdit, EngineProfile, Quadruple
from citelift.providers.base import (
    DEFAULT_CITE_INSTRUCTION,
    EnginePort,
    EngineRequest,
    LMPort,
    ProviderError,
    ProviderReply,
    SearchPort,
    TokenLedger,
)
from citelift.response import parse_response
from citelift.skillbank import (
    SkillBankConfig,
    SkillBankStore,
    StepMemoryEntry,
    consolidate,
    record_step,
    retrieve_skills,
)
from citelift.twin import AttributionRecord, TwinResult, attribute_delta, run_twin

log = logging.getLogger(__name__)

PROFILE_POOL_SIZES = {"full": 3, "lite": 1}


@dataclass(frozen=True)
class LoopConfig:
    budget: int = 8
    patience: int = 2
    kappa: float = 7.0
    profile: str = "full"  # full | lite
    pool_size: int | None = None  # default derived from profile
    use_skills: bool = True
    use_profile: bool = True
    retrieve_limit: int = 3
    metric: MetricConfig = field(default_factory=MetricConfig)

    def __post_init__(self) -> None:
        if self.budget < 1 or self.patience < 1:
            raise ValueError("budget and patience must be >= 1")
        if self.profile not in PROFILE_POOL_SIZES:
            raise ValueError(f"profile must be one of {tuple(PROFILE_POOL_SIZES)}")

    @property
    def effective_pool_size(self) -> int:
        return self.pool_size if self.pool_size is not None else PROFILE_POOL_SIZES[self.profile]


@dataclass
class Ports:
    """Provider bundle for one run; ledger sees every call."""

    lm: LMPort
    engine: EnginePort | None = None
    search: SearchPort | None = None
    ledger: TokenLedger = field(default_factory=TokenLedger)


class TranscriptLM:
    """LM wrapper that logs every prompt/reply pair for audit."""

    def __init__(self, inner: LMPort) -> None:
        self.inner = inner
        self.transcript: list[dict[str, str]] = []

    def complete(self, prompt: str, role: str = "agent") -> ProviderReply:
        reply = self.inner.complete(prompt, role=role)
        self.transcript.append({"role": role, "prompt": prompt, "reply": reply.text})
        return reply


@dataclass
class RoundRecord:
    round: int
    strategy: Strategy | None
    skills_retrieved: list[str] | None  # None when skill use is disabled
    candidates: list[CandidateEdit]
    decisions: list[GateDecision]
    accepted_variant: str | None
    stalled: bool
    best_score_after: float
    stall_after: int
    failure: str | None = None

    def to_dict(self) -> dict[str, Any]:
        return {
            "round": self.round,
            "strategy": self.strategy.to_dict() if self.strategy else None,
            "skills_retrieved": self.skills_retrieved,
            "candidates": [c.to_dict() for c in self.candidates],
            "decisions": [d.to_dict() for d in self.decisions],
            "accepted_variant": self.accepted_variant,
            "stalled": self.stalled,
            "best_score_after": self.best_score_after,
            "stall_after": self.stall_after,
            "failure": self.failure,
        }


@dataclass
class OptimizationTrace:
    quadruple_id: str
    engine_id: str
    scenario: str
    profile_mode: str
    ablations: dict[str, bool]
    initial_score: float
    rounds: list[RoundRecord]
    best_variant_id: str | None
    best_doc: str
    best_score: float
    termination_reason: str  # budget | patience
    stall_history: list[int]
    memory: list[StepMemoryEntry]
    consolidated_skill_ids: list[str]
    realized: TwinResult | None
    attribution: AttributionRecord | None
    predicted_vs_realized: dict[str, float] | None
    token_totals: dict[str, int]
    ledger_records: list[dict[str, Any]]
    transcripts: list[dict[str, str]]

    def best_score_sequence(self) -> list[float]:
        return [self.initial_score] + [r.best_score_after for r in self.rounds]

    def to_dict(self) -> dict[str, Any]:
        return {
            "quadruple_id": self.quadruple_id,
            "engine_id": self.engine_id,
            "scenario": self.scenario,
            "profile_mode": self.profile_mode,
            "ablations": dict(self.ablations),
            "initial_score": self.initial_score,
            "rounds": [r.to_dict() for r in self.rounds],
            "best_variant_id": self.best_variant_id,
            "best_doc": self.best_doc,
            "best_score": self.best_score,
            "termination_reason": self.termination_reason,
            "stall_history": list(self.stall_history),
            "memory": [e.to_dict() for e in self.memory],
            "consolidated_skill_ids": list(self.consolidated_skill_ids),
            "realized": self.realized.to_dict() if self.realized else None,
            "attribution": self.attribution.to_dict() if self.attribution else None,
            "predicted_vs_realized": self.predicted_vs_realized,
            "token_totals": dict(self.token_totals),
            "ledger_records": list(self.ledger_records),
            "transcripts": list(self.transcripts),
        }


def optimize(
    q: Quadruple,
    ports: Ports,
    bank: SkillBankStore,
    cfg: LoopConfig = LoopConfig(),
    profile: EngineProfile | None = None,
    skill_cfg: SkillBankConfig = SkillBankConfig(),
    prompt_dir: str | None = None,
    instruction: str = DEFAULT_CITE_INSTRUCTION,
) -> tuple[str, OptimizationTrace]:
    """Run the full loop for one quadruple; returns (best document, trace)."""
    lm = TranscriptLM(ports.lm)
    ledger_start = len(ports.ledger)

    d0 = q.target_doc.content
    d_current = d0
    d_best = d0
    best_variant_id: str | None = None
    best_strategy_id: str | None = None
    memory: list[StepMemoryEntry] = []
    rounds: list[RoundRecord] = []
    stall_history: list[int] = []
    stall = 0
    t = 0

    best_score = predict_score(d0, d0, q.query, lm, prompt_dir)
    initial_score = best_score

    while t < cfg.budget and stall < cfg.patience:
        round_no = t + 1
        strategy: Strategy | None = None
        skills_retrieved: list[str] | None = None
        candidates: list[CandidateEdit] = []
        decisions: list[GateDecision] = []
        accepted: str | None = None
        failure: str | None = None
        stalled = False
        try:
            if cfg.use_skills:
                skills = retrieve_skills(bank, q.engine_id, q.scenario, cfg.retrieve_limit)
                skills_retrieved = [s.skill_id for s in skills]
            else:
                skills = []
            strategy = plan_strategy(
                q,
                d_current,
                {"predicted_best": best_score, "round": round_no},
                profile if cfg.use_profile else None,
                memory,
                skills,
                lm,
                prompt_dir,
                round_no=round_no,
            )
            candidates = generate_candidates(
                d_current, strategy, cfg.effective_pool_size, lm, round_no, prompt_dir
            )
            if candidates:
                decisions = gate_and_rank(
                    candidates,
                    d0,
                    q,
                    lm,
                    cfg.kappa,
                    cfg.metric,
                    current_best=best_score,
                    prompt_dir=prompt_dir,
                )
            for d in decisions:
                if not d.passed and d.reason == "below_fidelity_threshold":
                    record_step(
                        memory,
                        StepMemoryEntry(
                            tag="unsafe", round=round_no, strategy=strategy, variant_id=d.variant_id
                        ),
                    )
            survivors = [d for d in decisions if d.passed]
            if not survivors:
                stalled = True
                stall += 1
            else:
                best_decision = survivors[0]
                assert best_decision.predicted_score is not None
                if best_decision.predicted_score > best_score:
                    gain = best_decision.predicted_score - best_score
                    by_id = {c.variant_id: c for c in candidates}
                    d_current = by_id[best_decision.variant_id].content
                    d_best = d_current
                    best_variant_id = best_decision.variant_id
                    best_strategy_id = strategy.strategy_id
                    best_score = best_decision.predicted_score
                    record_step(
                        memory,
                        StepMemoryEntry(
                            tag="success",
                            round=round_no,
                            strategy=strategy,
                            variant_id=best_decision.variant_id,
                            score=best_score,
                            delta_metrics={"predicted_gain": gain},
                        ),
                    )
                    accepted = best_decision.variant_id
                    stall = 0
                else:
                    record_step(
                        memory,
                        StepMemoryEntry(tag="ineffective", round=round_no, strategy=strategy),
                    )
                    stalled = True
                    stall += 1
        except (ProviderError, AgentParseError, UnscoreableError) as exc:
            log.warning("round %d failed: %s", round_no, exc)
            failure = str(exc)
        rounds.append(
            RoundRecord(
                round=round_no,
                strategy=strategy,
                skills_retrieved=skills_retrieved,
                candidates=candidates,
                decisions=decisions,
                accepted_variant=accepted,
                stalled=stalled,
                best_score_after=best_score,
                stall_after=stall,
                failure=failure,
            )
        )
        stall_history.append(stall)
        t += 1

    termination = "patience" if stall >= cfg.patience else "budget"

    realized: TwinResult | None = None
    attribution: AttributionRecord | None = None
    predicted_vs_realized: dict[str, float] | None = None
    if ports.engine is not None and d_best != d0:
        variant = CandidateEdit(
            variant_id=best_variant_id or "best",
            content=d_best,
            strategy_id=best_strategy_id or "",
            round=len(rounds),
        )
        realized = run_twin(q, variant, ports.engine, lm, cfg.metric, instruction, prompt_dir)
        if realized.delta_dsvcf is not None:
            attribution = attribute_delta(realized)
            predicted_vs_realized = {
                "predicted_best": best_score,
                "realized_dsvcf": realized.optimized.scores.dsvcf,
                "realized_delta": realized.delta_dsvcf,
            }

    consolidated = consolidate(
        memory,
        q.engine_id,
        q.scenario,
        bank,
        skill_cfg,
        realized_deltas=attribution.deltas if attribution else None,
    )

    run_records = ports.ledger.records[ledger_start:]
    token_totals = {
        "tokens_in": sum(r.tokens_in for r in run_records),
        "tokens_out": sum(r.tokens_out for r in run_records),
        "calls": len(run_records),
    }
    trace = OptimizationTrace(
        quadruple_id=q.id,
        engine_id=q.engine_id,
        scenario=q.scenario,
        profile_mode=cfg.profile,
        ablations={"skills": cfg.use_skills, "profile": cfg.use_profile},
        initial_score=initial_score,
        rounds=rounds,
        best_variant_id=best_variant_id,
        best_doc=d_best,
        best_score=best_score,
        termination_reason=termination,
        stall_history=stall_history,
        memory=memory,
        consolidated_skill_ids=[s.skill_id for s in consolidated],
        realized=realized,
        attribution=attribution,
        predicted_vs_realized=predicted_vs_realized,
        token_totals=token_totals,
        ledger_records=[r.to_dict() for r in run_records],
        transcripts=lm.transcript,
    )
    return d_best, trace


# --- one-shot heuristic baselines -------------------------------------------

HEURISTIC_STRATEGIES: dict[str, str] = {
    "fluent": "Rewrite for smooth, fluent prose with natural transitions.",
    "unique_words": "Vary vocabulary; replace repeated words with precise synonyms.",
    "authoritative": "Adopt a confident, authoritative tone backed by the document's own facts.",
    "more_quotes": "Add direct quotations drawn from the document's existing content.",
    "citing_source": "Attribute key statements explicitly to credible named sources already present.",
    "simple_language": "Simplify wording so a general reader can follow every sentence.",
    "technical_terms": "Use precise domain terminology where the document already implies it.",
    "stats_optimization": "Surface concrete numbers and statistics already present in the document.",
    "seo_optimize": "Weave likely search keywords naturally into headings and lead sentences.",
}


def apply_heuristic_strategy(
    doc: str,
    strategy_name: str,
    lm_port: LMPort,
    prompt_dir: str | None = None,
) -> CandidateEdit:
    """One-shot rewrite with named strategies; ``a+b`` applies both in a
    single prompt. No loop, no fidelity gate."""
    names = [n.strip() for n in strategy_name.split("+") if n.strip()]
    unknown = [n for n in names if n not in HEURISTIC_STRATEGIES]
    if not names or unknown:
        raise ValueError(
            f"unknown strategy {'+'.join(unknown) or strategy_name!r}; "
            f"known: {', '.join(sorted(HEURISTIC_STRATEGIES))}"
        )
    directives = "\n".join(f"- {HEURISTIC_STRATEGIES[n]}" for n in names)
    from citelift.prompts import build as build_prompt

    reply = lm_port.complete(
        build_prompt("heuristic", {"directives": directives, "doc": doc}, prompt_dir),
        role="agent",
    )
    return CandidateEdit(
        variant_id=f"heuristic-{'+'.join(names)}",
        content=reply.text,
        strategy_id=f"heuristic:{'+'.join(names)}",
        round=0,
    )


# --- cost profile comparison --------------------------------------------------


def run_profile_comparison(
    quadruples: Sequence[Quadruple],
    ports_factory: Callable[[], Ports],
    cfg: LoopConfig = LoopConfig(),
    heuristic: str = "more_quotes",
    skill_cfg: SkillBankConfig = SkillBankConfig(),
    prompt_dir: str | None = None,
    instruction: str = DEFAULT_CITE_INSTRUCTION,
) -> dict[str, Any]:
    """Token / visibility / latency comparison across four methods.

    Every (method, quadruple) run gets fresh ports from the factory, so
    identical scripts replay identically and ledgers stay per-run.
    """
    if not quadruples:
        raise ValueError("need at least one quadruple")
    eps = cfg.metric.wlv_baseline_epsilon
    rows: list[dict[str, Any]] = []
    for method in ("none", f"heuristic:{heuristic}", "lite", "full"):
        tokens: list[int] = []
        ratios: list[float] = []
        latencies: list[float] = []
        for q in quadruples:
            ports = ports_factory()
            started = time.perf_counter()
            if method == "none":
                reply = ports.engine.generate(
                    EngineRequest(q.engine_id, q.query, q.retrieval, instruction)
                )
                parse_response(reply.text, q.retrieval.k)
                ratio = 1.0
            elif method.startswith("heuristic:"):
                variant = apply_heuristic_strategy(q.target_doc.content, heuristic, ports.lm, prompt_dir)
                twin = run_twin(q, variant, ports.engine, ports.lm, cfg.metric, instruction, prompt_dir)
                ratio = _wlv_ratio(twin, eps)
            else:
                run_cfg = replace(cfg, profile=method, pool_size=None)
                bank = SkillBankStore(
                    capacity_per_bucket=skill_cfg.capacity_per_bucket,
                    eviction_policy=skill_cfg.eviction_policy,
                )
                _, trace = optimize(
                    q, ports, bank, run_cfg, None, skill_cfg, prompt_dir, instruction
                )
                ratio = _wlv_ratio(trace.realized, eps) if trace.realized else 1.0
            latencies.append(time.perf_counter() - started)
            tokens.append(ports.ledger.total_tokens())
            ratios.append(ratio)
        rows.append(
            {
                "method": method,
                "avg_tokens": sum(tokens) / len(tokens),
                "avg_wlv_ratio": sum(ratios) / len(ratios),
                "avg_latency_s": round(sum(latencies) / len(latencies), 4),
                "runs": len(tokens),
            }
        )
    return {"methods": rows}


def _wlv_ratio(twin: TwinResult | None, eps: float) -> float:
    if twin is None or twin.baseline is None or twin.optimized is None:
        return 1.0
    base = compute_wlv(twin.baseline.parsed, twin.target_rank)
    opt = compute_wlv(twin.optimized.parsed, twin.target_rank)
    return opt / max(base, eps)
