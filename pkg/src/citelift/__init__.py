"""citelift: optimize and evaluate document visibility in generative,
citation-grounded answer engines.

The public surface in one import:

* domain types and JSONL IO (``model``)
* response parsing (``response``)
* the metric suite and stats utilities (``metrics``, ``stats``)
* provider ports with scripted mocks (``providers``)
* the twin-branch controlled experiment (``twin``)
* the four-role editing workflow (``agents``)
* session memory and the skill bank (``skillbank``)
* the budgeted optimization loop and baselines (``optimizer``)
* benchmark construction (``bench``)
"""

from citelift.metrics import MetricConfig, RawScores, ScoreVector, compute_dpa, compute_dsvcf, compute_wlv
from citelift.model import (
    CandidateEdit,
    Document,
    EngineProfile,
    LabelConfig,
    Quadruple,
    RetrievalList,
    validate_quadruple,
)
from citelift.optimizer import LoopConfig, OptimizationTrace, Ports, optimize
from citelift.response import ParsedResponse, Sentence, parse_response
from citelift.skillbank import Skill, SkillBankConfig, SkillBankStore, StepMemoryEntry
from citelift.twin import TwinResult, attribute_delta, run_twin, substitute_in_situ

__version__ = "0.1.0"

__all__ = [
    "CandidateEdit",
    "Document",
    "EngineProfile",
    "LabelConfig",
    "LoopConfig",
    "MetricConfig",
    "OptimizationTrace",
    "ParsedResponse",
    "Ports",
    "Quadruple",
    "RawScores",
    "RetrievalList",
    "ScoreVector",
    "Sentence",
    "Skill",
    "SkillBankConfig",
    "SkillBankStore",
    "StepMemoryEntry",
    "TwinResult",
    "attribute_delta",
    "compute_dpa",
    "compute_dsvcf",
    "compute_wlv",
    "optimize",
    "parse_response",
    "run_twin",
    "substitute_in_situ",
    "validate_quadruple",
    "__version__",
]
