"""The four roles of the editing workflow, each a thin prompt-mediated
call through the shared LM port with strictly parsed structured output:

* preference — profiles an engine's presentation habits from observed
  responses (mechanical counters plus an LM digest);
* planner — decides what to improve this round, folding in the profile,
  retrieved skills, and constraints learned earlier in the session;
* editor — produces candidate rewrites by independent sampling;
* evaluator — gates candidates on faithfulness to the ORIGINAL document
  and predicts each survivor's objective score without calling the
  external engine.

Structured replies use a fenced JSON block; every parse gets one retry.
"""

from __future__ import annotations

import json
import logging
import re
import time
from dataclasses import dataclass
from datetime import datetime, timezone
from typing import Any, Callable, Iterable, Sequence

from citelift.metrics import MetricConfig, UnscoreableError, parse_judge_score
from citelift.model import CandidateEdit, EngineProfile, Quadruple
from citelift.prompts import build as build_prompt
from citelift.providers.base import LMPort, ProviderError
from citelift.response import CITATION_RE, segment_sentences

log = logging.getLogger(__name__)

FOCUS_VALUES = ("structure", "evidence", "style", "safety", "formatting")

NO_PROFILE_MARKER = "none (profile disabled)"
NO_SKILLS_MARKER = "(none available)"


class AgentParseError(Exception):
    """An agent reply stayed unparseable after the retry."""


@dataclass(frozen=True)
class Strategy:
    """A round's revision plan: what to improve, not the edit itself."""

    strategy_id: str
    focus: str
    directives: tuple[str, ...]
    rationale: str
    skill_refs: tuple[str, ...] = ()

    def __post_init__(self) -> None:
        if self.focus not in FOCUS_VALUES:
            raise ValueError(f"focus must be one of {FOCUS_VALUES}, got {self.focus!r}")
        if not self.directives:
            raise ValueError("a strategy needs at least one directive")

    def to_dict(self) -> dict[str, Any]:
        return {
            "strategy_id": self.strategy_id,
            "focus": self.focus,
            "directives": list(self.directives),
            "rationale": self.rationale,
            "skill_refs": list(self.skill_refs),
        }


@dataclass(frozen=True)
class GateDecision:
    """Fidelity-gate outcome for one candidate."""

    variant_id: str
    fa_doc: float | None
    passed: bool
    predicted_score: float | None = None
    predicted_gain: float | None = None
    reason: str | None = None

    def to_dict(self) -> dict[str, Any]:
        return {
            "variant_id": self.variant_id,
            "fa_doc": self.fa_doc,
            "passed": self.passed,
            "predicted_score": self.predicted_score,
            "predicted_gain": self.predicted_gain,
            "reason": self.reason,
        }


# --- reply parsing ----------------------------------------------------------

_FENCE_RE = re.compile(r"```(?:json)?\s*(\{.*?\})\s*```", re.DOTALL)


def extract_json_block(reply: str) -> dict[str, Any] | None:
    """Pull a JSON object out of a fenced block, else the first {...}."""
    m = _FENCE_RE.search(reply)
    candidates = [m.group(1)] if m else []
    start = reply.find("{")
    if start >= 0:
        candidates.append(reply[start : reply.rfind("}") + 1])
    for blob in candidates:
        try:
            data = json.loads(blob)
        except json.JSONDecodeError:
            continue
        if isinstance(data, dict):
            return data
    return None


def _strip_outer_fence(reply: str) -> str:
    text = reply.strip()
    m = re.fullmatch(r"```[a-z]*\n(.*)\n```", text, re.DOTALL)
    return m.group(1) if m else text


# --- preference agent -------------------------------------------------------

_URL_RE = re.compile(r"https?://\S+")
_HEADING_RE = re.compile(r"^(#{1,6})\s", re.MULTILINE)


def structural_stats(responses: Sequence[str]) -> dict[str, float]:
    """Mechanical per-response counters, averaged over the corpus."""
    if not responses:
        return {}
    with_table = 0
    with_url = 0
    density_sum = 0.0
    depth_sum = 0.0
    for text in responses:
        lines = text.splitlines()
        if any(ln.strip().startswith("|") and ln.count("|") >= 2 for ln in lines):
            with_table += 1
        if _URL_RE.search(text):
            with_url += 1
        markers = len(CITATION_RE.findall(text))
        sentences = max(1, len(segment_sentences(text)))
        density_sum += markers / sentences
        depths = [len(m.group(1)) for m in _HEADING_RE.finditer(text)]
        depth_sum += max(depths) if depths else 0
    n = len(responses)
    return {
        "table_frequency": with_table / n,
        "url_frequency": with_url / n,
        "citation_marker_density": density_sum / n,
        "heading_depth": depth_sum / n,
    }


def build_preference_profile(
    quadruples: Sequence[Quadruple],
    lm_port: LMPort,
    prompt_dir: str | None = None,
    clock: Callable[[], float] = time.time,
    sample_excerpts: int = 3,
    excerpt_chars: int = 400,
) -> EngineProfile:
    """Profile one engine from quadruples that carry generated responses."""
    if not quadruples:
        raise ValueError("no quadruples to profile")
    engine_ids = {q.engine_id for q in quadruples}
    if len(engine_ids) != 1:
        raise ValueError(f"mixed engine ids: {sorted(engine_ids)}")
    engine_id = quadruples[0].engine_id
    responses = [q.response for q in quadruples if q.response]
    if not responses:
        raise ValueError("no responses to profile")

    stats = structural_stats(responses)
    samples = "\n---\n".join(r[:excerpt_chars] for r in responses[:sample_excerpts])
    prompt = build_prompt(
        "preference",
        {
            "engine_id": engine_id,
            "sample_count": str(len(responses)),
            "stats": json.dumps(stats, sort_keys=True),
            "samples": samples,
        },
        prompt_dir,
    )

    data: dict[str, Any] | None = None
    for _ in range(2):
        reply = lm_port.complete(prompt, role="agent")
        data = extract_json_block(reply.text)
        if data is not None:
            break
        log.warning("unparseable preference digest, retrying once")
    if data is None:
        raise AgentParseError("unparseable engine profile digest")

    tendencies = tuple(
        (str(tag), min(1.0, max(0.0, float(weight))))
        for tag, weight in data.get("formatting_tendencies", [])
    )
    built_at = datetime.fromtimestamp(clock(), tz=timezone.utc).isoformat()
    return EngineProfile(
        engine_id=engine_id,
        formatting_tendencies=tendencies,
        evidence_style=str(data.get("evidence_style", "")),
        rhetorical_style=str(data.get("rhetorical_style", "")),
        structural_stats=stats,
        sample_count=len(responses),
        built_at=built_at,
    )


# --- planner ----------------------------------------------------------------


def memory_constraints(entries: Iterable[Any]) -> list[str]:
    """Avoid-constraints derived from unsafe attempts this session."""
    out: list[str] = []
    for e in entries:
        if getattr(e, "tag", None) != "unsafe":
            continue
        strategy = getattr(e, "strategy", None)
        focus = getattr(strategy, "focus", "unknown")
        first = strategy.directives[0] if getattr(strategy, "directives", ()) else ""
        out.append(f"avoid repeating the unsafe {focus} edit: {first}".rstrip(": "))
    return out


def _format_skills(skills: Sequence[Any]) -> str:
    lines = []
    for s in skills:
        eff = getattr(s, "delta_metrics", {}) or {}
        eff_txt = ", ".join(f"{k}={v:+.3f}" for k, v in sorted(eff.items()))
        lines.append(f"- {s.skill_id} [{s.focus}] {s.prescription} ({eff_txt or 'no data'})")
    return "\n".join(lines)


def plan_strategy(
    q: Quadruple,
    current_doc: str,
    current_scores: dict[str, float] | None,
    profile: EngineProfile | None,
    step_memory: Sequence[Any],
    skills: Sequence[Any],
    lm_port: LMPort,
    prompt_dir: str | None = None,
    round_no: int = 1,
) -> Strategy:
    """Formulate this round's strategy; constraints from session memory
    are both shown to the planner and echoed into the final directives.
    """
    constraints = memory_constraints(step_memory)
    mapping = {
        "query": q.query,
        "scenario": q.scenario,
        "round": str(round_no),
        "doc": current_doc,
        "scores": json.dumps(current_scores or {}, sort_keys=True),
        "profile": json.dumps(profile.to_dict(), sort_keys=True) if profile else NO_PROFILE_MARKER,
        "skills": _format_skills(skills) if skills else NO_SKILLS_MARKER,
        "constraints": "\n".join(f"- {c}" for c in constraints) if constraints else "(none)",
    }
    prompt = build_prompt("planner", mapping, prompt_dir)

    data: dict[str, Any] | None = None
    for _ in range(2):
        reply = lm_port.complete(prompt, role="agent")
        data = extract_json_block(reply.text)
        if data is not None and data.get("focus") in FOCUS_VALUES and data.get("directives"):
            break
        data = None
        log.warning("unparseable strategy reply, retrying once")
    if data is None:
        raise AgentParseError("unparseable strategy")

    directives = [str(d) for d in data["directives"]]
    for c in constraints:
        if c not in directives:
            directives.append(c)
    return Strategy(
        strategy_id=f"s{round_no}",
        focus=str(data["focus"]),
        directives=tuple(directives),
        rationale=str(data.get("rationale", "")),
        skill_refs=tuple(getattr(s, "skill_id", str(s)) for s in skills),
    )


# --- editor -----------------------------------------------------------------


def generate_candidates(
    doc: str,
    strategy: Strategy,
    pool_size: int,
    lm_port: LMPort,
    round_no: int = 1,
    prompt_dir: str | None = None,
) -> list[CandidateEdit]:
    """Sample up to ``pool_size`` rewrites with independent LM calls."""
    if pool_size < 1:
        raise ValueError("pool_size must be >= 1")
    prompt = build_prompt(
        "editor",
        {
            "focus": strategy.focus,
            "directives": "\n".join(f"- {d}" for d in strategy.directives),
            "rationale": strategy.rationale,
            "doc": doc,
        },
        prompt_dir,
    )
    out: list[CandidateEdit] = []
    for i in range(1, pool_size + 1):
        try:
            reply = lm_port.complete(prompt, role="agent")
        except ProviderError as exc:
            log.warning("editor call %d/%d failed: %s", i, pool_size, exc)
            continue
        content = _strip_outer_fence(reply.text)
        if not content.strip():
            log.warning("editor call %d/%d returned empty content; dropped", i, pool_size)
            continue
        out.append(
            CandidateEdit(
                variant_id=f"r{round_no}c{i}",
                content=content,
                strategy_id=strategy.strategy_id,
                round=round_no,
            )
        )
    return out


# --- evaluator --------------------------------------------------------------


def _judge_number(
    template: str,
    mapping: dict[str, str],
    judge_port: LMPort,
    lo: float,
    hi: float,
    prompt_dir: str | None,
) -> float:
    prompt = build_prompt(template, mapping, prompt_dir)
    for _ in range(2):
        reply = judge_port.complete(prompt, role="judge")
        value = parse_judge_score(reply.text)
        if value is not None:
            if value < lo or value > hi:
                log.warning("%s reply %s outside [%s, %s]; clamping", template, value, lo, hi)
                value = min(hi, max(lo, value))
            return value
        log.warning("unparseable %s reply, retrying once", template)
    raise UnscoreableError(f"{template} reply had no numeric score")


def judge_fidelity(
    candidate: str,
    original_doc: str,
    query: str,
    judge_port: LMPort,
    cfg: MetricConfig = MetricConfig(),
    prompt_dir: str | None = None,
) -> float:
    """Document-level faithfulness of a candidate to the original."""
    return _judge_number(
        "judge_fa_doc",
        {"query": query, "source": original_doc, "candidate": candidate},
        judge_port,
        0.0,
        cfg.judge_scale_max,
        prompt_dir,
    )


def predict_score(
    candidate: str,
    original_doc: str,
    query: str,
    judge_port: LMPort,
    prompt_dir: str | None = None,
) -> float:
    """Evaluator's absolute internal objective prediction in [0, 1]."""
    return _judge_number(
        "judge_score",
        {"query": query, "source": original_doc, "candidate": candidate},
        judge_port,
        0.0,
        1.0,
        prompt_dir,
    )


def gate_and_rank(
    candidates: Sequence[CandidateEdit],
    original_doc: str,
    q: Quadruple,
    judge_port: LMPort,
    kappa: float,
    cfg: MetricConfig = MetricConfig(),
    current_best: float = 0.0,
    prompt_dir: str | None = None,
) -> list[GateDecision]:
    """Fidelity-gate every candidate against the ORIGINAL document, then
    rank survivors by predicted gain (ties keep candidate order). The
    gate reference never drifts to later revisions, so unfaithful content
    cannot launder itself in over rounds.

    Returns decisions for all candidates: ranked survivors first, then
    rejects in candidate order.
    """
    if not candidates:
        raise ValueError("candidates must be non-empty")
    passed: list[tuple[int, GateDecision]] = []
    rejected: list[GateDecision] = []
    for idx, cand in enumerate(candidates):
        try:
            fa = judge_fidelity(cand.content, original_doc, q.query, judge_port, cfg, prompt_dir)
        except (UnscoreableError, ProviderError) as exc:
            log.warning("fidelity judge failed for %s: %s", cand.variant_id, exc)
            rejected.append(
                GateDecision(cand.variant_id, None, False, reason="unscoreable")
            )
            continue
        if fa < kappa:
            rejected.append(
                GateDecision(cand.variant_id, fa, False, reason="below_fidelity_threshold")
            )
            continue
        try:
            score = predict_score(cand.content, original_doc, q.query, judge_port, prompt_dir)
        except (UnscoreableError, ProviderError) as exc:
            log.warning("gain judge failed for %s: %s", cand.variant_id, exc)
            rejected.append(GateDecision(cand.variant_id, fa, False, reason="unscoreable"))
            continue
        passed.append(
            (
                idx,
                GateDecision(
                    cand.variant_id,
                    fa,
                    True,
                    predicted_score=score,
                    predicted_gain=score - current_best,
                ),
            )
        )
    passed.sort(key=lambda item: (-(item[1].predicted_gain or 0.0), item[0]))
    return [d for _, d in passed] + rejected
