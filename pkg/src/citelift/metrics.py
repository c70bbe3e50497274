"""Visibility / fidelity scoring for generated answers.

Two deterministic surface measures work directly on a parsed response:

* ``wlv`` — attribution-share-weighted word count of the sentences that
  cite the target: sum of word_count / n_cited over target-citing
  sentences.
* ``dpa`` — the same sum with an exponential position decay
  ``exp(-(i-1)/m)`` so earlier sentences weigh more, modeling top-heavy
  reading. Position is normalized by response length; with a raw 1-based
  index the decay would zero out everything past the first few sentences.

Six judged sub-metrics (cp, si, aa, fa_resp, kc, ad) come back from a
language-model judge on a 0-10 scale. The composite objective is

    dsvcf = lam * ssv_norm + (1 - lam) * isi_norm - gamma * (1 - aa/10)

where ssv_norm averages the two surface measures (ratio-normalized
against the untouched baseline branch via r/(1+r)) with cp/10 and si/10,
and isi_norm averages the four judged impact scores over 10. The gamma
term penalizes imperfect attribution so exposure gains cannot ride on
miscitation.
"""

from __future__ import annotations

import logging
import math
import re
from dataclasses import dataclass, field
from typing import Any

from citelift.prompts import build as build_prompt
from citelift.providers.base import LMPort, ProviderError
from citelift.response import ParsedResponse

log = logging.getLogger(__name__)

JUDGED_KINDS = ("cp", "si", "aa", "fa_resp", "kc", "ad")


class UnscoreableError(Exception):
    """The judge produced no parseable score even after a retry."""


@dataclass(frozen=True)
class MetricConfig:
    lam: float = 0.5
    gamma: float = 0.5
    wlv_baseline_epsilon: float = 1e-9
    judge_scale_max: float = 10.0

    def __post_init__(self) -> None:
        if not 0.0 <= self.lam <= 1.0:
            raise ValueError("lam must be in [0, 1]")
        if self.gamma < 0.0:
            raise ValueError("gamma must be >= 0")
        if self.wlv_baseline_epsilon <= 0.0:
            raise ValueError("wlv_baseline_epsilon must be > 0")


@dataclass(frozen=True)
class RawScores:
    """Sub-metric values for one branch before aggregation."""

    wlv: float
    dpa: float
    cp: float
    si: float
    aa: float
    fa_resp: float
    kc: float
    ad: float
    claims_supported: int = 0
    claims_unsupported: int = 0


@dataclass(frozen=True)
class ScoreVector:
    """Full metric suite for one scored response."""

    wlv: float
    dpa: float
    cp: float
    si: float
    aa: float
    fa_resp: float
    kc: float
    ad: float
    ssv_norm: float
    isi_norm: float
    dsvcf: float
    cf_ratio: float

    def to_dict(self) -> dict[str, Any]:
        return {
            "wlv": self.wlv,
            "dpa": self.dpa,
            "cp": self.cp,
            "si": self.si,
            "aa": self.aa,
            "fa_resp": self.fa_resp,
            "kc": self.kc,
            "ad": self.ad,
            "ssv_norm": self.ssv_norm,
            "isi_norm": self.isi_norm,
            "dsvcf": self.dsvcf,
            "cf_ratio": self.cf_ratio,
        }

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> "ScoreVector":
        return cls(**{k: data[k] for k in cls.__dataclass_fields__})


# --- deterministic surface measures ----------------------------------------


def compute_wlv(parsed: ParsedResponse, target_rank: int) -> float:
    """Share-weighted word count of target-citing sentences."""
    if target_rank < 1:
        raise ValueError("target_rank must be >= 1")
    total = 0.0
    for s in parsed.sentences:
        if target_rank in s.citations:
            total += s.word_count / len(s.citations)
    return total


def compute_dpa(parsed: ParsedResponse, target_rank: int) -> float:
    """Like wlv, but decayed by normalized sentence position."""
    if target_rank < 1:
        raise ValueError("target_rank must be >= 1")
    m = parsed.m
    total = 0.0
    for s in parsed.sentences:
        if target_rank in s.citations:
            pos = (s.index - 1) / m
            total += s.word_count / (len(s.citations) * math.exp(pos))
    return total


# --- judged sub-metrics -----------------------------------------------------

_NUMBER_RE = re.compile(r"[-+]?\d+(?:\.\d+)?")
_SUPPORTED_RE = re.compile(r"(?<![a-z])supported\s*[=:]\s*(\d+)", re.IGNORECASE)
_UNSUPPORTED_RE = re.compile(r"unsupported\s*[=:]\s*(\d+)", re.IGNORECASE)


def parse_judge_score(text: str) -> float | None:
    """First numeric token in a judge reply, or None."""
    m = _NUMBER_RE.search(text)
    return float(m.group(0)) if m else None


def parse_claim_tally(text: str) -> tuple[int, int]:
    sup = _SUPPORTED_RE.search(text)
    unsup = _UNSUPPORTED_RE.search(text)
    return (int(sup.group(1)) if sup else 0, int(unsup.group(1)) if unsup else 0)


@dataclass(frozen=True)
class JudgeResult:
    score: float
    claims_supported: int = 0
    claims_unsupported: int = 0
    raw: str = ""


def _clamp(value: float, lo: float, hi: float, kind: str) -> float:
    if value < lo or value > hi:
        log.warning("judge score %s for %s outside [%s, %s]; clamping", value, kind, lo, hi)
        return min(hi, max(lo, value))
    return value


def judge_submetric(
    kind: str,
    query: str,
    target_doc: str,
    optimized_doc: str | None,
    response: str,
    judge_port: LMPort,
    cfg: MetricConfig = MetricConfig(),
    prompt_dir: str | None = None,
) -> JudgeResult:
    """Run one judged sub-metric through the LM port.

    ``target_doc`` is always the original document; ``optimized_doc`` is
    the branch's edited document when scoring the optimization branch
    (None on the baseline branch). Faithfulness kinds compare the edited
    document against the original; the other kinds judge the branch's own
    document as the source.
    """
    if kind not in JUDGED_KINDS:
        raise ValueError(f"unknown judged sub-metric {kind!r}")
    branch_doc = optimized_doc if optimized_doc is not None else target_doc
    mapping = {
        "query": query,
        "source": target_doc if kind == "fa_resp" else branch_doc,
        "candidate": branch_doc,
        "response": response,
    }
    prompt = build_prompt(f"judge_{kind}", mapping, prompt_dir)

    last_reply = ""
    for _ in range(2):
        reply = judge_port.complete(prompt, role="judge")
        last_reply = reply.text
        score = parse_judge_score(reply.text)
        if score is not None:
            score = _clamp(score, 0.0, cfg.judge_scale_max, kind)
            supported, unsupported = parse_claim_tally(reply.text) if kind == "aa" else (0, 0)
            return JudgeResult(score, supported, unsupported, raw=reply.text)
        log.warning("unparseable %s judge reply, retrying once: %r", kind, reply.text[:80])
    raise UnscoreableError(f"{kind} judge reply had no numeric score: {last_reply[:120]!r}")


# --- aggregation ------------------------------------------------------------


def ratio_norm(value: float, baseline: float, eps: float) -> float:
    """Map a baseline-relative ratio into [0, 1); ratio 1 lands at 0.5."""
    r = value / max(baseline, eps)
    return r / (1.0 + r)


def dsvcf_score(ssv_norm: float, isi_norm: float, aa: float, cfg: MetricConfig) -> float:
    """The composite objective on already-normalized axes."""
    return cfg.lam * ssv_norm + (1.0 - cfg.lam) * isi_norm - cfg.gamma * (1.0 - aa / cfg.judge_scale_max)


def compute_dsvcf(
    opt: RawScores,
    baseline_wlv: float,
    baseline_dpa: float,
    cfg: MetricConfig = MetricConfig(),
) -> ScoreVector:
    """Assemble the full score vector for one branch.

    ``baseline_wlv`` / ``baseline_dpa`` always come from the untouched
    baseline branch; scoring the baseline itself passes its own values,
    which pins its surface ratios at 0.5.
    """
    eps = cfg.wlv_baseline_epsilon
    scale = cfg.judge_scale_max
    ssv_parts = (
        ratio_norm(opt.wlv, baseline_wlv, eps),
        ratio_norm(opt.dpa, baseline_dpa, eps),
        opt.cp / scale,
        opt.si / scale,
    )
    isi_parts = (opt.aa, opt.fa_resp, opt.kc, opt.ad)
    ssv_norm = sum(ssv_parts) / len(ssv_parts)
    isi_norm = (sum(isi_parts) / len(isi_parts)) / scale
    total_claims = opt.claims_supported + opt.claims_unsupported
    cf_ratio = opt.claims_unsupported / total_claims if total_claims else 0.0
    return ScoreVector(
        wlv=opt.wlv,
        dpa=opt.dpa,
        cp=opt.cp,
        si=opt.si,
        aa=opt.aa,
        fa_resp=opt.fa_resp,
        kc=opt.kc,
        ad=opt.ad,
        ssv_norm=ssv_norm,
        isi_norm=isi_norm,
        dsvcf=dsvcf_score(ssv_norm, isi_norm, opt.aa, cfg),
        cf_ratio=cf_ratio,
    )


def score_response(
    query: str,
    target_doc: str,
    optimized_doc: str | None,
    response: str,
    parsed: ParsedResponse,
    target_rank: int,
    baseline_wlv: float | None,
    baseline_dpa: float | None,
    judge_port: LMPort,
    cfg: MetricConfig = MetricConfig(),
    prompt_dir: str | None = None,
) -> ScoreVector:
    """Score one branch end to end: surface measures, six judge calls,
    aggregation. Baseline surface values default to this branch's own.
    """
    wlv = compute_wlv(parsed, target_rank)
    dpa = compute_dpa(parsed, target_rank)
    judged: dict[str, JudgeResult] = {}
    for kind in JUDGED_KINDS:
        judged[kind] = judge_submetric(
            kind, query, target_doc, optimized_doc, response, judge_port, cfg, prompt_dir
        )
    raw = RawScores(
        wlv=wlv,
        dpa=dpa,
        cp=judged["cp"].score,
        si=judged["si"].score,
        aa=judged["aa"].score,
        fa_resp=judged["fa_resp"].score,
        kc=judged["kc"].score,
        ad=judged["ad"].score,
        claims_supported=judged["aa"].claims_supported,
        claims_unsupported=judged["aa"].claims_unsupported,
    )
    return compute_dsvcf(
        raw,
        baseline_wlv if baseline_wlv is not None else wlv,
        baseline_dpa if baseline_dpa is not None else dpa,
        cfg,
    )
