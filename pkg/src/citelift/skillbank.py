"""Session memory and the persistent skill bank.

Within one optimization session, every attempt lands in an append-only
step memory as a tagged summary (success / ineffective / unsafe); full
candidate texts stay in the run trace and are referenced by variant id.
At session end the success entries are consolidated: entries sharing an
edit focus and reaching the support threshold become (or update) a skill
in the bucket keyed by (engine_id, scenario). Buckets are capacity-bound
with LRU or LFU eviction; recency is a logical tick, not wall time, so
replays are exact.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import TYPE_CHECKING, Any, Iterable, Sequence

if TYPE_CHECKING:
    from citelift.agents import Strategy

MEMORY_TAGS = ("success", "ineffective", "unsafe")

SCHEMA_VERSION = 1


@dataclass(frozen=True)
class SkillBankConfig:
    capacity_per_bucket: int = 32
    eviction_policy: str = "lru"  # lru | lfu
    min_support: int = 2
    retrieve_limit: int = 3

    def __post_init__(self) -> None:
        if self.eviction_policy not in ("lru", "lfu"):
            raise ValueError(f"unknown eviction policy {self.eviction_policy!r}")
        if self.capacity_per_bucket < 1 or self.min_support < 1:
            raise ValueError("capacity_per_bucket and min_support must be >= 1")


@dataclass(frozen=True)
class StepMemoryEntry:
    """One session attempt, summarized."""

    tag: str
    round: int
    strategy: "Strategy"
    variant_id: str | None = None
    score: float | None = None
    delta_metrics: dict[str, float] = field(default_factory=dict)

    def __post_init__(self) -> None:
        if self.tag not in MEMORY_TAGS:
            raise ValueError(f"tag must be one of {MEMORY_TAGS}, got {self.tag!r}")
        if self.tag == "success" and self.score is None:
            raise ValueError("success entries must carry a score")
        if self.tag == "unsafe" and self.variant_id is None:
            raise ValueError("unsafe entries must carry the failing variant id")

    def to_dict(self) -> dict[str, Any]:
        return {
            "tag": self.tag,
            "round": self.round,
            "strategy": self.strategy.to_dict(),
            "variant_id": self.variant_id,
            "score": self.score,
            "delta_metrics": dict(self.delta_metrics),
        }


def record_step(memory: list[StepMemoryEntry], entry: StepMemoryEntry) -> list[StepMemoryEntry]:
    """Append-only session log; returns the same list for chaining."""
    memory.append(entry)
    return memory


@dataclass
class Skill:
    """A consolidated, reusable editing pattern for one engine/scenario."""

    skill_id: str
    engine_id: str
    scenario: str
    focus: str
    prescription: str
    digest: str
    delta_metrics: dict[str, float]
    support_count: int
    last_used: int
    use_count: int
    created_seq: int

    def effectiveness(self) -> float:
        if not self.delta_metrics:
            return 0.0
        return sum(self.delta_metrics.values()) / len(self.delta_metrics)

    def to_dict(self) -> dict[str, Any]:
        return {
            "skill_id": self.skill_id,
            "engine_id": self.engine_id,
            "scenario": self.scenario,
            "focus": self.focus,
            "prescription": self.prescription,
            "digest": self.digest,
            "delta_metrics": dict(self.delta_metrics),
            "support_count": self.support_count,
            "last_used": self.last_used,
            "use_count": self.use_count,
            "created_seq": self.created_seq,
        }

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> "Skill":
        return cls(
            skill_id=data["skill_id"],
            engine_id=data["engine_id"],
            scenario=data["scenario"],
            focus=data["focus"],
            prescription=data["prescription"],
            digest=data["digest"],
            delta_metrics={k: float(v) for k, v in data.get("delta_metrics", {}).items()},
            support_count=int(data["support_count"]),
            last_used=int(data.get("last_used", 0)),
            use_count=int(data.get("use_count", 0)),
            created_seq=int(data.get("created_seq", 0)),
        )


def prescription_digest(focus: str, prescription: str) -> str:
    normalized = focus + "|" + " ".join(prescription.lower().split())
    return hashlib.sha256(normalized.encode("utf-8")).hexdigest()[:16]


class SkillBankStore:
    """Buckets of skills keyed by (engine_id, scenario).

    Single-writer by convention: one optimization session mutates the
    store at a time; concurrent readers see the pre-session snapshot on
    disk. ``consolidations`` counts bank mutations per process, letting
    callers assert the consolidate-exactly-once discipline.
    """

    def __init__(
        self,
        capacity_per_bucket: int = 32,
        eviction_policy: str = "lru",
    ) -> None:
        if eviction_policy not in ("lru", "lfu"):
            raise ValueError(f"unknown eviction policy {eviction_policy!r}")
        self.capacity_per_bucket = capacity_per_bucket
        self.eviction_policy = eviction_policy
        self.buckets: dict[tuple[str, str], list[Skill]] = {}
        self.tick = 0
        self.seq = 0
        self.consolidations = 0  # runtime counter, not persisted

    def next_tick(self) -> int:
        self.tick += 1
        return self.tick

    def next_seq(self) -> int:
        self.seq += 1
        return self.seq

    def bucket(self, engine_id: str, scenario: str) -> list[Skill]:
        return self.buckets.setdefault((engine_id, scenario), [])

    # --- persistence --------------------------------------------------------

    def to_dict(self) -> dict[str, Any]:
        return {
            "schema_version": SCHEMA_VERSION,
            "capacity_per_bucket": self.capacity_per_bucket,
            "eviction_policy": self.eviction_policy,
            "tick": self.tick,
            "seq": self.seq,
            "buckets": [
                {
                    "engine_id": key[0],
                    "scenario": key[1],
                    "skills": [s.to_dict() for s in skills],
                }
                for key, skills in sorted(self.buckets.items())
            ],
        }

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> "SkillBankStore":
        version = data.get("schema_version")
        if version != SCHEMA_VERSION:
            raise ValueError(f"unsupported skill bank schema version {version!r}")
        store = cls(
            capacity_per_bucket=int(data.get("capacity_per_bucket", 32)),
            eviction_policy=data.get("eviction_policy", "lru"),
        )
        store.tick = int(data.get("tick", 0))
        store.seq = int(data.get("seq", 0))
        for bucket in data.get("buckets", []):
            key = (bucket["engine_id"], bucket["scenario"])
            store.buckets[key] = [Skill.from_dict(s) for s in bucket.get("skills", [])]
        return store

    def save(self, path: str | Path) -> None:
        Path(path).write_text(
            json.dumps(self.to_dict(), sort_keys=True, ensure_ascii=False, indent=2) + "\n",
            encoding="utf-8",
        )

    @classmethod
    def load(cls, path: str | Path) -> "SkillBankStore":
        with open(path, encoding="utf-8") as fh:
            return cls.from_dict(json.load(fh))

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, SkillBankStore):
            return NotImplemented
        return self.to_dict() == other.to_dict()


def _merge_running_mean(
    old: dict[str, float], old_weight: int, new: dict[str, float], new_weight: int
) -> dict[str, float]:
    out: dict[str, float] = {}
    for key in sorted(set(old) | set(new)):
        w_old = old_weight if key in old else 0
        w_new = new_weight if key in new else 0
        total = w_old + w_new
        out[key] = (old.get(key, 0.0) * w_old + new.get(key, 0.0) * w_new) / total
    return out


def _mean_deltas(entries: Sequence[StepMemoryEntry]) -> dict[str, float]:
    sums: dict[str, float] = {}
    counts: dict[str, int] = {}
    for e in entries:
        for k, v in e.delta_metrics.items():
            sums[k] = sums.get(k, 0.0) + v
            counts[k] = counts.get(k, 0) + 1
    return {k: sums[k] / counts[k] for k in sorted(sums)}


def consolidate(
    memory: Sequence[StepMemoryEntry],
    engine_id: str,
    scenario: str,
    store: SkillBankStore,
    cfg: SkillBankConfig = SkillBankConfig(),
    realized_deltas: dict[str, float] | None = None,
) -> list[Skill]:
    """Fold a finished session's successes into the bank.

    Success entries are grouped by strategy focus; a group reaching
    ``min_support`` becomes a skill whose prescription is the stable
    union of the group's directives. A group matching an existing
    skill's (focus, prescription digest) updates it in place: support
    accumulates and delta metrics merge as a support-weighted running
    mean. Unsafe and ineffective entries never seed skills. Capacity is
    re-enforced afterward.

    ``realized_deltas`` (per-sub-metric deltas measured by the final
    controlled run) are merged into each touched skill's delta metrics.
    """
    store.consolidations += 1
    successes = [e for e in memory if e.tag == "success"]

    groups: dict[str, list[StepMemoryEntry]] = {}
    for e in successes:
        groups.setdefault(e.strategy.focus, []).append(e)

    touched: list[Skill] = []
    bucket = store.bucket(engine_id, scenario)
    for focus, entries in groups.items():
        if len(entries) < cfg.min_support:
            continue
        directives: list[str] = []
        for e in entries:
            for d in e.strategy.directives:
                if d not in directives:
                    directives.append(d)
        prescription = "; ".join(directives)
        digest = prescription_digest(focus, prescription)
        batch_deltas = _mean_deltas(entries)
        if realized_deltas:
            for k, v in realized_deltas.items():
                batch_deltas.setdefault(k, v)

        existing = next(
            (s for s in bucket if s.focus == focus and s.digest == digest), None
        )
        if existing is not None:
            existing.delta_metrics = _merge_running_mean(
                existing.delta_metrics, existing.support_count, batch_deltas, len(entries)
            )
            existing.support_count += len(entries)
            touched.append(existing)
        else:
            skill = Skill(
                skill_id=f"skill-{engine_id}-{scenario}-{focus}-{digest[:8]}",
                engine_id=engine_id,
                scenario=scenario,
                focus=focus,
                prescription=prescription,
                digest=digest,
                delta_metrics=batch_deltas,
                support_count=len(entries),
                last_used=store.next_tick(),
                use_count=0,
                created_seq=store.next_seq(),
            )
            bucket.append(skill)
            touched.append(skill)

    evict(store, (engine_id, scenario), cfg)
    return touched


def retrieve_skills(
    store: SkillBankStore, engine_id: str, scenario: str, limit: int
) -> list[Skill]:
    """Exact-bucket lookup ranked by observed effectiveness.

    Never crosses buckets: a miss returns an empty list and the caller
    plans skill-free. Returned skills get their recency/usage marked.
    """
    bucket = store.buckets.get((engine_id, scenario), [])
    ranked = sorted(
        bucket, key=lambda s: (-s.effectiveness(), -s.support_count, s.skill_id)
    )[: max(0, limit)]
    for s in ranked:
        s.use_count += 1
        s.last_used = store.next_tick()
    return ranked


def evict(
    store: SkillBankStore,
    bucket_key: tuple[str, str],
    cfg: SkillBankConfig | None = None,
) -> list[str]:
    """Shrink one bucket back to capacity; returns evicted skill ids."""
    capacity = cfg.capacity_per_bucket if cfg else store.capacity_per_bucket
    policy = cfg.eviction_policy if cfg else store.eviction_policy
    bucket = store.buckets.get(bucket_key)
    if not bucket:
        return []
    evicted: list[str] = []
    while len(bucket) > capacity:
        if policy == "lru":
            victim = min(bucket, key=lambda s: (s.last_used, s.created_seq))
        else:
            victim = min(bucket, key=lambda s: (s.use_count, s.created_seq))
        bucket.remove(victim)
        evicted.append(victim.skill_id)
    return evicted
