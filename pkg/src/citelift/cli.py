"""Command-line entry point.

Every subcommand accepts ``--mock <script.json>`` so the whole surface
runs offline against scripted providers; artifacts are written as JSON
with stable key order, so a mocked run replays byte-identically. Exit
codes: 0 success, 1 runtime failure, 2 usage, 3 invalid config, 4
provider auth failure.
"""

from __future__ import annotations

import argparse
import json
import sys
import time
from dataclasses import replace
from pathlib import Path
from typing import Any, Sequence

from citelift import bench as bench_mod
from citelift.agents import build_preference_profile
from citelift.config import ConfigError, RunConfig, apply_flag_overrides, load_config
from citelift.metrics import score_response
from citelift.model import (
    CandidateEdit,
    Quadruple,
    dumps_canonical,
    read_quadruples,
    validate_quadruple,
    write_quadruples,
)
from citelift.optimizer import (
    Ports,
    apply_heuristic_strategy,
    optimize,
    run_profile_comparison,
)
from citelift.providers.base import (
    DEFAULT_CITE_INSTRUCTION,
    AuthError,
    EngineRequest,
    ProviderError,
    TokenLedger,
)
from citelift.providers.http import HttpConfig, HttpEngine, HttpLM, HttpSearch
from citelift.providers.mock import MockEngine, MockLM, MockSearch, ProviderScript
from citelift.response import parse_response
from citelift.skillbank import SkillBankStore, evict
from citelift.twin import run_twin, substitute_in_situ

EXIT_OK = 0
EXIT_RUNTIME = 1
EXIT_USAGE = 2
EXIT_CONFIG = 3
EXIT_AUTH = 4


def _write_json(path: Path, payload: Any) -> Path:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(
        json.dumps(payload, sort_keys=True, ensure_ascii=False, indent=2) + "\n",
        encoding="utf-8",
    )
    return path


def _fail(kind: str, message: str, code: int) -> int:
    sys.stderr.write(dumps_canonical({"error": kind, "message": message}) + "\n")
    return code


class Runtime:
    """Providers + config resolved for one invocation."""

    def __init__(self, cfg: RunConfig, mock_script: str | None) -> None:
        self.cfg = cfg
        self.ledger = TokenLedger()
        self.mock = mock_script is not None
        self._script = ProviderScript.load(mock_script) if mock_script else None
        # pinned clock in mock mode keeps profile timestamps replayable
        self.clock = (lambda: 0.0) if self.mock else time.time

    def lm(self):
        if self._script is not None:
            return MockLM(self._script.lm, self.ledger)
        ep = self.cfg.judge
        return HttpLM(
            HttpConfig(ep.base_url, ep.model, ep.api_key_env, retries=self.cfg.retries,
                       backoff=self.cfg.backoff),
            self.ledger,
        )

    def engine(self):
        if self._script is not None:
            return MockEngine(self._script.engine, self.ledger)
        ep = self.cfg.engine
        return HttpEngine(
            HttpConfig(ep.base_url, ep.model, ep.api_key_env, retries=self.cfg.retries,
                       backoff=self.cfg.backoff),
            self.ledger,
        )

    def search(self):
        if self._script is not None:
            return MockSearch(self._script.search, self.ledger)
        ep = self.cfg.search
        return HttpSearch(
            HttpConfig(ep.base_url, ep.model, ep.api_key_env, retries=self.cfg.retries,
                       backoff=self.cfg.backoff),
            self.ledger,
        )

    def out_dir(self) -> Path:
        return Path(self.cfg.output_dir)


def _load_quadruples(path: str) -> list[Quadruple]:
    qs = list(read_quadruples(path))
    if not qs:
        raise ValueError(f"no quadruples in {path}")
    return qs


# --- subcommand handlers -----------------------------------------------------


def cmd_parse(args: argparse.Namespace, rt: Runtime) -> int:
    text = Path(args.text_file).read_text(encoding="utf-8")
    parsed = parse_response(text, args.k)
    out = _write_json(rt.out_dir() / "parsed.json", parsed.to_dict())
    print(f"parsed {parsed.m} sentences -> {out}")
    return EXIT_OK


def cmd_evaluate(args: argparse.Namespace, rt: Runtime) -> int:
    q = _load_quadruples(args.quadruples)[0]
    violations = validate_quadruple(q, rt.cfg.label_config())
    if violations:
        raise ValueError("invalid quadruple: " + "; ".join(v.message for v in violations))
    optimized = Path(args.optimized).read_text(encoding="utf-8") if args.optimized else None
    response = q.response
    if response is None:
        retrieval = q.retrieval
        if optimized is not None:
            retrieval = substitute_in_situ(
                retrieval, q.target_index, CandidateEdit("eval", optimized, "eval", 0)
            )
        response = rt.engine().generate(
            EngineRequest(q.engine_id, q.query, retrieval, DEFAULT_CITE_INSTRUCTION)
        ).text
    parsed = parse_response(response, q.retrieval.k)
    scores = score_response(
        q.query,
        q.target_doc.content,
        optimized,
        response,
        parsed,
        q.target_index,
        None,
        None,
        rt.lm(),
        rt.cfg.metric_config(),
        rt.cfg.prompt_dir,
    )
    out = _write_json(rt.out_dir() / f"score-{q.id}.json", scores.to_dict())
    print(f"dsvcf={scores.dsvcf:.4f} wlv={scores.wlv:.4f} -> {out}")
    return EXIT_OK


def cmd_twin_run(args: argparse.Namespace, rt: Runtime) -> int:
    q = _load_quadruples(args.quadruples)[0]
    variant = CandidateEdit.from_dict(json.loads(Path(args.variant).read_text(encoding="utf-8")))
    result = run_twin(
        q, variant, rt.engine(), rt.lm(), rt.cfg.metric_config(), prompt_dir=rt.cfg.prompt_dir
    )
    out = _write_json(rt.out_dir() / f"twin-{q.id}.json", result.to_dict())
    if result.failure:
        print(f"twin run incomplete: {result.failure} -> {out}")
    else:
        print(f"delta_dsvcf={result.delta_dsvcf:+.4f} -> {out}")
    return EXIT_OK


def cmd_optimize(args: argparse.Namespace, rt: Runtime) -> int:
    quadruples = _load_quadruples(args.quadruples)
    cfg = rt.cfg.loop_config(args.profile)
    cfg = replace(cfg, use_skills=not args.no_skills, use_profile=not args.no_profile)
    skill_cfg = rt.cfg.skill_config()
    skills_path = Path(rt.cfg.skills_path)
    bank = SkillBankStore.load(skills_path) if skills_path.exists() else SkillBankStore(
        capacity_per_bucket=skill_cfg.capacity_per_bucket,
        eviction_policy=skill_cfg.eviction_policy,
    )

    profile = None
    if not args.no_profile:
        engine_qs = [p for p in quadruples if p.engine_id == quadruples[0].engine_id and p.response]
        if engine_qs:
            profile = build_preference_profile(
                engine_qs, rt.lm(), rt.cfg.prompt_dir, clock=rt.clock
            )

    ports = Ports(lm=rt.lm(), engine=rt.engine(), ledger=rt.ledger)
    for q in quadruples:
        best_doc, trace = optimize(
            q, ports, bank, cfg, profile, skill_cfg, rt.cfg.prompt_dir
        )
        trace_path = _write_json(rt.out_dir() / f"trace-{q.id}.json", trace.to_dict())
        doc_path = rt.out_dir() / f"best-{q.id}.txt"
        doc_path.write_text(best_doc, encoding="utf-8")
        print(
            f"{q.id}: best_score={trace.best_score:.4f} rounds={len(trace.rounds)} "
            f"termination={trace.termination_reason} -> {trace_path}"
        )
    skills_path.parent.mkdir(parents=True, exist_ok=True)
    bank.save(skills_path)
    return EXIT_OK


def cmd_baseline(args: argparse.Namespace, rt: Runtime) -> int:
    q = _load_quadruples(args.quadruples)[0]
    variant = apply_heuristic_strategy(
        q.target_doc.content, args.strategy, rt.lm(), rt.cfg.prompt_dir
    )
    result = run_twin(
        q, variant, rt.engine(), rt.lm(), rt.cfg.metric_config(), prompt_dir=rt.cfg.prompt_dir
    )
    out = _write_json(rt.out_dir() / f"baseline-{args.strategy}-{q.id}.json", result.to_dict())
    delta = "n/a" if result.delta_dsvcf is None else f"{result.delta_dsvcf:+.4f}"
    print(f"strategy={args.strategy} delta_dsvcf={delta} -> {out}")
    return EXIT_OK


def cmd_compare_cost(args: argparse.Namespace, rt: Runtime) -> int:
    quadruples = _load_quadruples(args.quadruples)
    if not rt.mock:
        # live comparison reuses one runtime; mocked runs need fresh scripts
        ports_factory = lambda: Ports(lm=rt.lm(), engine=rt.engine(), ledger=TokenLedger())
    else:
        script_path = args.mock

        def ports_factory() -> Ports:
            script = ProviderScript.load(script_path)
            ledger = TokenLedger()
            return Ports(
                lm=MockLM(script.lm, ledger),
                engine=MockEngine(script.engine, ledger),
                ledger=ledger,
            )

    report = run_profile_comparison(
        quadruples,
        ports_factory,
        rt.cfg.loop_config("full"),
        heuristic=args.strategy,
        skill_cfg=rt.cfg.skill_config(),
        prompt_dir=rt.cfg.prompt_dir,
    )
    out = _write_json(rt.out_dir() / "cost-report.json", report)
    print(f"{'method':<24}{'avg_tokens':>12}{'wlv_ratio':>12}{'latency_s':>12}")
    for row in report["methods"]:
        print(
            f"{row['method']:<24}{row['avg_tokens']:>12.1f}"
            f"{row['avg_wlv_ratio']:>12.3f}{row['avg_latency_s']:>12.3f}"
        )
    print(f"-> {out}")
    return EXIT_OK


def cmd_bench_build(args: argparse.Namespace, rt: Runtime) -> int:
    seeds = []
    with open(args.seeds, encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if line:
                seeds.append(bench_mod.SeedQuery.from_dict(json.loads(line)))
    quadruples, report = bench_mod.build_benchmark(
        seeds,
        rt.search(),
        rt.lm(),
        engine_id=args.engine,
        top_n=rt.cfg.top_n,
        labels=rt.cfg.label_config(),
        min_query_chars=rt.cfg.min_query_chars,
        scenario_cap=rt.cfg.scenario_cap,
        audit_rate=rt.cfg.audit_rate,
        base_seed=args.seed,
        prompt_dir=rt.cfg.prompt_dir,
    )
    out_corpus = rt.out_dir() / "benchmark.jsonl"
    out_corpus.parent.mkdir(parents=True, exist_ok=True)
    write_quadruples(out_corpus, quadruples)
    out_report = _write_json(rt.out_dir() / "benchmark-report.json", report)
    print(f"emitted {len(quadruples)}/{len(seeds)} -> {out_corpus} (report {out_report})")
    return EXIT_OK


def cmd_bench_validate(args: argparse.Namespace, rt: Runtime) -> int:
    quadruples = _load_quadruples(args.quadruples)
    report = bench_mod.validate_corpus(quadruples, rt.search(), rt.cfg.top_n)
    out = _write_json(rt.out_dir() / "validate-report.json", report)
    print(f"{report['passed']}/{report['total']} still retrievable -> {out}")
    return EXIT_OK


def _load_bank(rt: Runtime) -> SkillBankStore:
    path = Path(rt.cfg.skills_path)
    if not path.exists():
        raise ValueError(f"no skill bank at {path}")
    return SkillBankStore.load(path)


def cmd_skills_list(args: argparse.Namespace, rt: Runtime) -> int:
    bank = _load_bank(rt)
    for (engine_id, scenario), skills in sorted(bank.buckets.items()):
        print(f"{engine_id}/{scenario}: {len(skills)} skill(s)")
        for s in sorted(skills, key=lambda s: (-s.effectiveness(), s.skill_id)):
            print(f"  {s.skill_id} [{s.focus}] support={s.support_count} uses={s.use_count}")
    return EXIT_OK


def cmd_skills_show(args: argparse.Namespace, rt: Runtime) -> int:
    bank = _load_bank(rt)
    for skills in bank.buckets.values():
        for s in skills:
            if s.skill_id == args.skill_id:
                print(json.dumps(s.to_dict(), sort_keys=True, indent=2))
                return EXIT_OK
    raise ValueError(f"no skill with id {args.skill_id!r}")


def cmd_skills_prune(args: argparse.Namespace, rt: Runtime) -> int:
    bank = _load_bank(rt)
    evicted: list[str] = []
    for key in sorted(bank.buckets):
        evicted.extend(evict(bank, key))
    bank.save(rt.cfg.skills_path)
    print(f"evicted {len(evicted)} skill(s)" + (": " + ", ".join(evicted) if evicted else ""))
    return EXIT_OK


_REPORT_COLUMNS = ("wlv", "dpa", "cp", "si", "aa", "fa_resp", "kc", "ad")
_REPORT_HEADERS = ("WLV", "DPA", "CP", "SI", "AA", "FA", "KC", "AD")


def _score_row(label: str, scores: dict[str, Any]) -> str:
    cells = "".join(f"{scores[c]:>8.3f}" for c in _REPORT_COLUMNS)
    return f"{label:<12}{cells}{scores['dsvcf']:>10.4f}"


def cmd_report(args: argparse.Namespace, rt: Runtime) -> int:
    data = json.loads(Path(args.report_file).read_text(encoding="utf-8"))
    if "rounds" in data:  # optimization trace
        twin = data.get("realized")
        if not twin:
            print("trace has no realized twin result; nothing to tabulate")
            return EXIT_OK
    elif "baseline" in data or "optimized" in data:  # twin result
        twin = data
    else:  # plain score vector
        twin = None
    header = f"{'method':<12}" + "".join(f"{h:>8}" for h in _REPORT_HEADERS) + f"{'DSV-CF':>10}"
    print(header)
    if twin is None:
        print(_score_row("scores", data))
        return EXIT_OK
    base = (twin.get("baseline") or {}).get("scores")
    opt = (twin.get("optimized") or {}).get("scores")
    if base:
        print(_score_row("baseline", base))
    if opt:
        print(_score_row("optimized", opt))
    if base and opt:
        delta = {k: opt[k] - base[k] for k in list(_REPORT_COLUMNS) + ["dsvcf"]}
        print(_score_row("delta", delta))
    return EXIT_OK


# --- parser -------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="citelift",
        description="Optimize and evaluate document visibility in citation-grounded answer engines.",
    )
    parser.add_argument("--config", help="config file (JSON)")
    parser.add_argument("--mock", help="provider script JSON; run fully offline")
    parser.add_argument("--out", help="output directory (overrides config)")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("parse", help="segment a response and resolve its citations")
    p.add_argument("text_file")
    p.add_argument("--k", type=int, default=10, help="retrieval list size")
    p.set_defaults(handler=cmd_parse)

    p = sub.add_parser("evaluate", help="score one quadruple's response")
    p.add_argument("quadruples")
    p.add_argument("--optimized", help="optimized document text file")
    p.set_defaults(handler=cmd_evaluate)

    p = sub.add_parser("twin-run", help="controlled baseline-vs-edited comparison")
    p.add_argument("quadruples")
    p.add_argument("variant", help="candidate edit JSON file")
    p.set_defaults(handler=cmd_twin_run)

    p = sub.add_parser("optimize", help="run the full optimization loop")
    p.add_argument("quadruples")
    p.add_argument("--profile", choices=("lite", "full"), default="full")
    p.add_argument("--no-skills", action="store_true", help="ablation: skip skill retrieval")
    p.add_argument("--no-profile", action="store_true", help="ablation: plan without a profile")
    p.add_argument("--budget", type=int)
    p.add_argument("--patience", type=int)
    p.add_argument("--kappa", type=float)
    p.add_argument("--skills-path", dest="skills_path")
    p.set_defaults(handler=cmd_optimize)

    p = sub.add_parser("baseline", help="one-shot heuristic rewrite + twin run")
    p.add_argument("quadruples")
    p.add_argument("--strategy", required=True)
    p.set_defaults(handler=cmd_baseline)

    p = sub.add_parser("compare-cost", help="token/visibility comparison across methods")
    p.add_argument("quadruples")
    p.add_argument("--strategy", default="more_quotes")
    p.set_defaults(handler=cmd_compare_cost)

    bench_p = sub.add_parser("bench", help="benchmark construction pipeline")
    bench_sub = bench_p.add_subparsers(dest="bench_command", required=True)
    p = bench_sub.add_parser("build", help="seeds JSONL -> validated quadruples JSONL")
    p.add_argument("seeds")
    p.add_argument("--engine", default="engine", help="engine id stamped on quadruples")
    p.add_argument("--seed", type=int, default=0, help="base RNG seed for source locking")
    p.set_defaults(handler=cmd_bench_build)
    p = bench_sub.add_parser("validate", help="re-check retrievability of a corpus")
    p.add_argument("quadruples")
    p.set_defaults(handler=cmd_bench_validate)

    skills_p = sub.add_parser("skills", help="inspect or prune the skill bank")
    skills_sub = skills_p.add_subparsers(dest="skills_command", required=True)
    p = skills_sub.add_parser("list")
    p.set_defaults(handler=cmd_skills_list)
    p = skills_sub.add_parser("show")
    p.add_argument("skill_id")
    p.set_defaults(handler=cmd_skills_show)
    p = skills_sub.add_parser("prune")
    p.set_defaults(handler=cmd_skills_prune)

    p = sub.add_parser("report", help="tabulate a score/twin/trace JSON")
    p.add_argument("report_file")
    p.set_defaults(handler=cmd_report)

    return parser


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        cfg = load_config(args.config)
        overrides = {
            name: getattr(args, name)
            for name in ("budget", "patience", "kappa", "skills_path")
            if hasattr(args, name)
        }
        if args.out is not None:
            overrides["output_dir"] = args.out
        apply_flag_overrides(cfg, **overrides)
    except ConfigError as exc:
        return _fail("config", str(exc), EXIT_CONFIG)

    rt = Runtime(cfg, args.mock)
    try:
        return args.handler(args, rt)
    except AuthError as exc:
        return _fail("auth", str(exc), EXIT_AUTH)
    except ProviderError as exc:
        return _fail("provider", str(exc), EXIT_RUNTIME)
    except (ValueError, OSError, json.JSONDecodeError) as exc:
        return _fail("runtime", str(exc), EXIT_RUNTIME)


if __name__ == "__main__":
    sys.exit(main())
