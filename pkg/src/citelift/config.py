"""Run configuration: one JSON document, env overrides, flag overrides.

Precedence for any value is flag > environment > config file > default.
Environment names are ``CITELIFT_<FIELD>`` for scalars listed in
``ENV_FIELDS``; provider API keys keep their own dedicated variables
(ENGINE_API_KEY, SEARCH_API_KEY, JUDGE_API_KEY).
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

from citelift.metrics import MetricConfig
from citelift.model import (
    DEFAULT_COMPLEXITIES,
    DEFAULT_INTENTS,
    DEFAULT_SCENARIOS,
    LabelConfig,
)
from citelift.optimizer import LoopConfig
from citelift.skillbank import SkillBankConfig

DEFAULT_CONFIG_PATH = "citelift.json"

# scalar fields that honor CITELIFT_<NAME> env overrides
ENV_FIELDS = {
    "budget": int,
    "patience": int,
    "kappa": float,
    "lambda": float,
    "gamma": float,
    "top_n": int,
    "output_dir": str,
    "skills_path": str,
}


class ConfigError(Exception):
    """The config file is missing, malformed, or out of range."""


@dataclass
class ProviderEndpoint:
    kind: str = "http"
    base_url: str = ""
    model: str = ""
    api_key_env: str = ""


@dataclass
class RunConfig:
    engine: ProviderEndpoint = field(
        default_factory=lambda: ProviderEndpoint(api_key_env="ENGINE_API_KEY")
    )
    search: ProviderEndpoint = field(
        default_factory=lambda: ProviderEndpoint(api_key_env="SEARCH_API_KEY")
    )
    judge: ProviderEndpoint = field(
        default_factory=lambda: ProviderEndpoint(api_key_env="JUDGE_API_KEY")
    )
    retries: int = 3
    backoff: float = 0.5

    lam: float = 0.5
    gamma: float = 0.5
    wlv_baseline_epsilon: float = 1e-9

    budget: int = 8
    patience: int = 2
    kappa: float = 7.0
    pool_size_full: int = 3
    pool_size_lite: int = 1
    retrieve_limit: int = 3

    skills_path: str = "skills.json"
    capacity_per_bucket: int = 32
    eviction_policy: str = "lru"
    min_support: int = 2

    top_n: int = 10
    min_query_chars: int = 10
    scenario_cap: int | None = None
    audit_rate: float = 0.05
    scenarios: tuple[str, ...] = DEFAULT_SCENARIOS
    intents: tuple[str, ...] = DEFAULT_INTENTS
    complexities: tuple[str, ...] = DEFAULT_COMPLEXITIES

    prompt_dir: str | None = None
    output_dir: str = "runs"

    def metric_config(self) -> MetricConfig:
        return MetricConfig(
            lam=self.lam, gamma=self.gamma, wlv_baseline_epsilon=self.wlv_baseline_epsilon
        )

    def loop_config(self, profile: str = "full") -> LoopConfig:
        pool = self.pool_size_full if profile == "full" else self.pool_size_lite
        return LoopConfig(
            budget=self.budget,
            patience=self.patience,
            kappa=self.kappa,
            profile=profile,
            pool_size=pool,
            retrieve_limit=self.retrieve_limit,
            metric=self.metric_config(),
        )

    def skill_config(self) -> SkillBankConfig:
        return SkillBankConfig(
            capacity_per_bucket=self.capacity_per_bucket,
            eviction_policy=self.eviction_policy,
            min_support=self.min_support,
            retrieve_limit=self.retrieve_limit,
        )

    def label_config(self) -> LabelConfig:
        return LabelConfig(
            scenarios=self.scenarios,
            intents=self.intents,
            complexities=self.complexities,
            max_k=self.top_n,
        )

    def validate(self) -> None:
        if not 0.0 <= self.lam <= 1.0:
            raise ConfigError(f"lambda must be in [0,1], got {self.lam}")
        if self.gamma < 0:
            raise ConfigError(f"gamma must be >= 0, got {self.gamma}")
        if self.budget < 1 or self.patience < 1:
            raise ConfigError("budget and patience must be >= 1")
        if self.top_n < 1:
            raise ConfigError("top_n must be >= 1")
        if self.eviction_policy not in ("lru", "lfu"):
            raise ConfigError(f"unknown eviction_policy {self.eviction_policy!r}")
        if not 0.0 <= self.audit_rate <= 1.0:
            raise ConfigError(f"audit_rate must be in [0,1], got {self.audit_rate}")
        if self.prompt_dir is not None and not Path(self.prompt_dir).is_dir():
            raise ConfigError(f"prompt_dir does not exist: {self.prompt_dir}")


def _endpoint(data: dict[str, Any], default_env: str) -> ProviderEndpoint:
    return ProviderEndpoint(
        kind=data.get("kind", "http"),
        base_url=data.get("base_url", ""),
        model=data.get("model", ""),
        api_key_env=data.get("api_key_env", default_env),
    )


def load_config(path: str | None) -> RunConfig:
    """Read the config file (if any), then fold env overrides on top."""
    cfg = RunConfig()
    if path is not None:
        try:
            with open(path, encoding="utf-8") as fh:
                data = json.load(fh)
        except FileNotFoundError as exc:
            raise ConfigError(f"config file not found: {path}") from exc
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config file is not valid JSON: {exc}") from exc
        providers = data.get("providers", {})
        cfg.engine = _endpoint(providers.get("engine", {}), "ENGINE_API_KEY")
        cfg.search = _endpoint(providers.get("search", {}), "SEARCH_API_KEY")
        cfg.judge = _endpoint(providers.get("judge", {}), "JUDGE_API_KEY")
        cfg.retries = int(providers.get("retries", cfg.retries))
        cfg.backoff = float(providers.get("backoff", cfg.backoff))

        metrics = data.get("metrics", {})
        cfg.lam = float(metrics.get("lambda", cfg.lam))
        cfg.gamma = float(metrics.get("gamma", cfg.gamma))
        cfg.wlv_baseline_epsilon = float(
            metrics.get("wlv_baseline_epsilon", cfg.wlv_baseline_epsilon)
        )

        loop = data.get("loop", {})
        cfg.budget = int(loop.get("budget", cfg.budget))
        cfg.patience = int(loop.get("patience", cfg.patience))
        cfg.kappa = float(loop.get("kappa", cfg.kappa))
        cfg.pool_size_full = int(loop.get("pool_size_full", cfg.pool_size_full))
        cfg.pool_size_lite = int(loop.get("pool_size_lite", cfg.pool_size_lite))
        cfg.retrieve_limit = int(loop.get("retrieve_limit", cfg.retrieve_limit))

        bank = data.get("skill_bank", {})
        cfg.skills_path = bank.get("path", cfg.skills_path)
        cfg.capacity_per_bucket = int(bank.get("capacity_per_bucket", cfg.capacity_per_bucket))
        cfg.eviction_policy = bank.get("eviction_policy", cfg.eviction_policy)
        cfg.min_support = int(bank.get("min_support", cfg.min_support))

        bench = data.get("bench", {})
        cfg.top_n = int(bench.get("top_n", cfg.top_n))
        cfg.min_query_chars = int(bench.get("min_query_chars", cfg.min_query_chars))
        cap = bench.get("scenario_cap")
        cfg.scenario_cap = int(cap) if cap is not None else None
        cfg.audit_rate = float(bench.get("audit_rate", cfg.audit_rate))
        label_sets = bench.get("labels", {})
        cfg.scenarios = tuple(label_sets.get("scenarios", cfg.scenarios))
        cfg.intents = tuple(label_sets.get("intents", cfg.intents))
        cfg.complexities = tuple(label_sets.get("complexities", cfg.complexities))

        cfg.prompt_dir = data.get("prompt_dir", cfg.prompt_dir)
        cfg.output_dir = data.get("output_dir", cfg.output_dir)

    _apply_env(cfg)
    cfg.validate()
    return cfg


_ENV_TARGETS = {
    "budget": "budget",
    "patience": "patience",
    "kappa": "kappa",
    "lambda": "lam",
    "gamma": "gamma",
    "top_n": "top_n",
    "output_dir": "output_dir",
    "skills_path": "skills_path",
}


def _apply_env(cfg: RunConfig) -> None:
    for env_field, cast in ENV_FIELDS.items():
        raw = os.environ.get(f"CITELIFT_{env_field.upper()}")
        if raw is None:
            continue
        try:
            setattr(cfg, _ENV_TARGETS[env_field], cast(raw))
        except ValueError as exc:
            raise ConfigError(f"bad CITELIFT_{env_field.upper()}={raw!r}: {exc}") from exc


def apply_flag_overrides(cfg: RunConfig, **flags: Any) -> RunConfig:
    """Fold non-None CLI flag values over the config (highest precedence)."""
    for name, value in flags.items():
        if value is not None:
            setattr(cfg, name, value)
    cfg.validate()
    return cfg
