"""End-to-end orchestration: reports in, verified filtering rules out.

Per report the flow is ingest, entity extraction, concept enrichment,
concept-graph update, classification and rule-source generation, parse and
validation of the generated source (reports whose source fails validation
are recorded and skipped), engine execution, capability refinement, and
rendering plus independent syntax verification of every iptables command.

Report failures are isolated: one bad report never aborts the run.  With a
scripted-mock backend the whole run is offline and byte-reproducible; all
wall-clock numbers live in a separate timings file so the rest of the
output tree can be compared bit for bit.
"""

from __future__ import annotations

import hashlib
import json
import logging
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

from . import clipslang
from .extraction import (
    Augmentation,
    DecodingConfig,
    DomainEntity,
    EmptyAbstraction,
    GuardrailViolation,
    HttpLlmClient,
    LlmClient,
    PromptLibrary,
    PromptStrategy,
    ScriptedMock,
    SemanticConcept,
    StrategyKind,
    TranscriptMiss,
    generate_clips_source,
    stage1_extract_entities,
    stage2_abstract_concepts,
    stage3_classify,
)
from .ingest import (
    CtiReport,
    ParseError,
    Schema,
    Statement,
    Vocabulary,
    artifacts_to_json,
    load_corpus,
)
from .memory import ConceptGraph
from .refine import (
    CapabilityProvenance,
    CapabilityRegistry,
    SecurityCapability,
    refine,
    render_iptables,
    verify_syntax,
)

logger = logging.getLogger(__name__)

KG_CONTEXT_DEPTH = 1
KG_CONTEXT_LIMIT = 5


class ConfigError(Exception):
    pass


class PipelineError(Exception):
    pass


@dataclass
class PipelineConfig:
    corpus_path: str
    schema: Schema = Schema.DATASET_B
    strategy: PromptStrategy = PromptStrategy()
    backend: str = "scripted-mock"  # or "http"
    transcript_path: Optional[str] = None
    http_endpoint: Optional[str] = None
    http_model: Optional[str] = None
    decoding: DecodingConfig = DecodingConfig()
    registry_path: Optional[str] = None
    vocabulary_path: Optional[str] = None
    prompts_dir: Optional[str] = None
    kg_stability: float = 1.0
    kg_retention_floor: float = 0.01
    kg_context: bool = True
    offline: bool = True
    max_cycles: int = 200
    output_dir: str = "out"

    @classmethod
    def from_file(cls, path: str | Path, overrides: Optional[dict] = None) -> "PipelineConfig":
        try:
            raw = json.loads(Path(path).read_text(encoding="utf-8"))
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc
        return cls.from_dict(raw, overrides)

    @classmethod
    def from_dict(cls, raw: dict, overrides: Optional[dict] = None) -> "PipelineConfig":
        merged = dict(raw)
        for key, value in (overrides or {}).items():
            if value is not None:
                merged[key] = value
        strategy_raw = merged.get("strategy", {})
        decoding_raw = merged.get("decoding", {})
        kg_raw = merged.get("knowledge_graph", {})
        llm_raw = merged.get("llm", {})
        try:
            config = cls(
                corpus_path=merged["corpus"],
                schema=Schema(merged.get("schema", "b")),
                strategy=PromptStrategy(
                    kind=StrategyKind(strategy_raw.get("kind", "three-stage")),
                    augmentation=Augmentation(strategy_raw.get("augment", "none")),
                    threshold_percent=int(strategy_raw.get("threshold", 50)),
                ),
                backend=llm_raw.get("backend", "scripted-mock"),
                transcript_path=llm_raw.get("transcript"),
                http_endpoint=llm_raw.get("endpoint"),
                http_model=llm_raw.get("model"),
                decoding=DecodingConfig(
                    seed=int(decoding_raw.get("seed", 1234)),
                    greedy=bool(decoding_raw.get("greedy", True)),
                    max_tokens=int(decoding_raw.get("max_tokens", 256)),
                ),
                registry_path=merged.get("registry"),
                vocabulary_path=merged.get("vocabulary"),
                prompts_dir=merged.get("prompts"),
                kg_stability=float(kg_raw.get("stability", 1.0)),
                kg_retention_floor=float(kg_raw.get("retention_floor", 0.01)),
                kg_context=bool(kg_raw.get("context", True)),
                offline=bool(merged.get("offline", True)),
                max_cycles=int(merged.get("max_cycles", 200)),
                output_dir=merged.get("out", "out"),
            )
        except KeyError as exc:
            raise ConfigError(f"config is missing required key {exc}") from exc
        except (ValueError, TypeError) as exc:
            raise ConfigError(str(exc)) from exc
        return config

    def validate(self) -> None:
        if self.backend not in ("scripted-mock", "http"):
            raise ConfigError(f"unknown llm backend {self.backend!r}")
        if self.offline and self.backend != "scripted-mock":
            raise ConfigError("offline mode requires the scripted-mock backend")
        if self.backend == "scripted-mock" and not self.transcript_path:
            raise ConfigError("scripted-mock backend needs a transcript path")
        if self.backend == "http" and not (self.http_endpoint and self.http_model):
            raise ConfigError("http backend needs endpoint and model")
        for label, path in (
            ("corpus", self.corpus_path),
            ("transcript", self.transcript_path),
            ("registry", self.registry_path),
            ("vocabulary", self.vocabulary_path),
            ("prompts", self.prompts_dir),
        ):
            if path is not None and not Path(path).exists():
                raise ConfigError(f"{label} path does not exist: {path}")

    def resolved(self) -> dict:
        return {
            "corpus": str(self.corpus_path),
            "schema": self.schema.value,
            "strategy": {
                "kind": self.strategy.kind.value,
                "augment": self.strategy.augmentation.value,
                "threshold": self.strategy.threshold_percent,
            },
            "llm": {
                "backend": self.backend,
                "transcript": self.transcript_path,
                "endpoint": self.http_endpoint,
                "model": self.http_model,
            },
            "decoding": {
                "seed": self.decoding.seed,
                "greedy": self.decoding.greedy,
                "max_tokens": self.decoding.max_tokens,
            },
            "registry": self.registry_path,
            "vocabulary": self.vocabulary_path,
            "prompts": self.prompts_dir,
            "knowledge_graph": {
                "stability": self.kg_stability,
                "retention_floor": self.kg_retention_floor,
                "context": self.kg_context,
            },
            "offline": self.offline,
            "max_cycles": self.max_cycles,
        }

    def config_hash(self) -> str:
        canonical = json.dumps(self.resolved(), sort_keys=True)
        return hashlib.sha256(canonical.encode("utf-8")).hexdigest()

    def build_client(self) -> LlmClient:
        if self.backend == "scripted-mock":
            return ScriptedMock.load(self.transcript_path)
        return HttpLlmClient(self.http_endpoint, self.http_model)

    def build_vocabulary(self) -> Vocabulary:
        if self.vocabulary_path:
            return Vocabulary.from_path(self.vocabulary_path)
        return Vocabulary.bundled()

    def build_registry(self) -> CapabilityRegistry:
        if self.registry_path:
            return CapabilityRegistry.from_config(self.registry_path)
        return CapabilityRegistry.builtin()

    def build_prompts(self) -> PromptLibrary:
        if self.prompts_dir:
            return PromptLibrary.from_dir(self.prompts_dir)
        return PromptLibrary.bundled()


@dataclass
class ReportOutcome:
    report_id: str
    status: str = "ok"  # ok | failed
    failed_stage: Optional[str] = None
    error: Optional[str] = None
    statements: int = 0
    entities: int = 0
    concepts: int = 0
    predictions: int = 0
    clips_errors: int = 0
    clips_warnings: int = 0
    capabilities: int = 0
    rules_emitted: int = 0
    refinement_warnings: int = 0

    def to_json(self) -> dict:
        return {k: v for k, v in self.__dict__.items()}


@dataclass
class RunManifest:
    config_hash: str
    outcomes: list[ReportOutcome] = field(default_factory=list)
    corpus_errors: list[str] = field(default_factory=list)
    stage_seconds: dict[str, float] = field(default_factory=dict)

    @property
    def failed(self) -> list[ReportOutcome]:
        return [o for o in self.outcomes if o.status != "ok"]

    def to_json(self) -> dict:
        # timing lives in timings.json so manifests compare byte-for-byte
        return {
            "config_hash": self.config_hash,
            "reports": [o.to_json() for o in self.outcomes],
            "corpus_errors": self.corpus_errors,
        }


class _StageClock:
    def __init__(self):
        self.totals: dict[str, float] = {}

    def add(self, stage: str, seconds: float) -> None:
        self.totals[stage] = self.totals.get(stage, 0.0) + seconds


def _statement_id(report: CtiReport, index: int) -> str:
    return f"{report.id}#{index}"


def _entities_json(entities: Sequence[DomainEntity]) -> list[dict]:
    return [{"surface": e.surface, "span": list(e.span)} for e in entities]


def _concepts_json(concepts: Sequence[SemanticConcept]) -> list[dict]:
    return [
        {
            "entity": c.entity.surface,
            "hyponyms": sorted(c.hyponyms),
            "hypernyms": sorted(c.hypernyms),
            "confidence": c.confidence,
        }
        for c in concepts
    ]


def _write_json(path: Path, obj) -> None:
    path.write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def capabilities_from_trace(
    trace: clipslang.ExecutionTrace, report_id: str
) -> list[SecurityCapability]:
    out = []
    for cap in trace.capabilities:
        params = tuple((name, value) for name, value in cap.params)
        out.append(
            SecurityCapability(
                name=cap.name,
                parameters=params,
                provenance=CapabilityProvenance(rule_name=cap.rule_name, report_id=report_id),
            )
        )
    return out


def process_report(
    report: CtiReport,
    *,
    client: LlmClient,
    config: PipelineConfig,
    vocabulary: Vocabulary,
    registry: CapabilityRegistry,
    prompts: PromptLibrary,
    graph: ConceptGraph,
    tick: int,
    clock: Optional[_StageClock] = None,
    until: str = "full",
) -> tuple[ReportOutcome, dict]:
    """Run the flow for one report, optionally stopping after extraction.

    Returns the outcome plus an artifact bundle with keys ``predictions``
    (JSONL-ready dicts), ``statements`` (per-statement entities/concepts),
    ``program_source``, ``diagnostics``, ``trace``, ``rules`` and
    ``provenance`` (present as far as the report got).
    """
    outcome = ReportOutcome(report_id=report.id)
    artifacts: dict = {"predictions": [], "statements": []}
    clock = clock or _StageClock()

    def timed(stage: str, fn, *args, **kwargs):
        start = time.perf_counter()
        try:
            return fn(*args, **kwargs)
        finally:
            clock.add(stage, time.perf_counter() - start)

    statements = report.narrative_statements()
    outcome.statements = len(statements)

    context_provider = None
    if config.kg_context:
        def context_provider(surface: str) -> list[str]:
            if surface not in graph:
                return []
            rows = graph.retrieve(surface, KG_CONTEXT_DEPTH)
            return [label for label, dist, _ in rows if dist > 0][:KG_CONTEXT_LIMIT]

    all_concepts: list[SemanticConcept] = []
    try:
        for index, statement in enumerate(statements):
            entities = timed(
                "stage1", stage1_extract_entities, statement, client, config.decoding, prompts
            )
            outcome.entities += len(entities)
            if not entities:
                continue
            concepts = timed(
                "stage2",
                stage2_abstract_concepts,
                entities,
                client,
                config.decoding,
                prompts,
                context_provider,
            )
            outcome.concepts += len(concepts)
            all_concepts.extend(concepts)

            predictions = timed(
                "stage3",
                stage3_classify,
                concepts,
                vocabulary,
                config.strategy,
                client,
                config.decoding,
                prompts,
                statement.text,
            )
            outcome.predictions += len(predictions)
            artifacts["predictions"].append(
                {
                    "statement_id": _statement_id(report, index),
                    "gold": sorted(statement.gold_labels),
                    "predicted": [
                        {"label": p.label, "confidence": p.confidence} for p in predictions
                    ],
                }
            )
    except (GuardrailViolation, EmptyAbstraction, TranscriptMiss) as exc:
        outcome.status = "failed"
        outcome.failed_stage = "extraction"
        outcome.error = f"{type(exc).__name__}: {exc}"
        return outcome, artifacts

    # Concept-graph update: rehearse every term, wire taxonomy edges, decay.
    start = time.perf_counter()
    for concept in all_concepts:
        entity_label = concept.entity.surface.lower()
        graph.insert_concept(entity_label, tick)
        for hypernym in sorted(concept.hypernyms):
            graph.insert_concept(hypernym.lower(), tick)
            _safe_link(graph, entity_label, hypernym.lower())
        for hyponym in sorted(concept.hyponyms):
            graph.insert_concept(hyponym.lower(), tick)
            _safe_link(graph, hyponym.lower(), entity_label)
    graph.decay(tick)
    clock.add("knowledge_graph", time.perf_counter() - start)

    if not all_concepts:
        outcome.status = "failed"
        outcome.failed_stage = "extraction"
        outcome.error = "no concepts extracted"
        return outcome, artifacts

    try:
        source = timed(
            "generate",
            generate_clips_source,
            all_concepts,
            report.artifacts,
            client,
            config.decoding,
            prompts,
        )
    except (GuardrailViolation, TranscriptMiss, ValueError) as exc:
        outcome.status = "failed"
        outcome.failed_stage = "generate"
        outcome.error = f"{type(exc).__name__}: {exc}"
        return outcome, artifacts
    artifacts["program_source"] = source

    start = time.perf_counter()
    parse_result = clipslang.parse(source)
    diagnostics = list(parse_result.diagnostics)
    if parse_result.program is not None:
        diagnostics.extend(clipslang.validate(parse_result.program))
    clock.add("validate", time.perf_counter() - start)
    artifacts["diagnostics"] = [
        {
            "severity": d.severity.value,
            "code": d.code,
            "message": d.message,
            "line": d.span[0],
            "column": d.span[1],
        }
        for d in diagnostics
    ]
    outcome.clips_errors = sum(1 for d in diagnostics if d.is_error())
    outcome.clips_warnings = len(diagnostics) - outcome.clips_errors
    if outcome.clips_errors:
        outcome.status = "failed"
        outcome.failed_stage = "validate"
        outcome.error = f"{outcome.clips_errors} validation error(s)"
        return outcome, artifacts

    trace = timed("engine", clipslang.run, parse_result.program, (), config.max_cycles)
    artifacts["trace"] = trace.to_json()
    capabilities = capabilities_from_trace(trace, report.id)
    outcome.capabilities = len(capabilities)

    start = time.perf_counter()
    result = refine(capabilities, registry)
    rendered = [render_iptables(rule) for rule in result.rules]
    verification = [[e.code for e in verify_syntax(cmd)] for cmd in rendered]
    clock.add("refine", time.perf_counter() - start)

    outcome.rules_emitted = len(rendered)
    outcome.refinement_warnings = len(result.warnings)
    artifacts["rules"] = rendered
    artifacts["provenance"] = [
        {
            "command": cmd,
            "verified": not verification[i],
            "syntax_errors": verification[i],
            "capabilities": [
                {
                    "name": cap.name,
                    "params": {k: _plain(v) for k, v in cap.parameters},
                    "rule": cap.provenance.rule_name if cap.provenance else None,
                    "report_id": cap.provenance.report_id if cap.provenance else None,
                }
                for cap in result.sources[i]
            ],
        }
        for i, cmd in enumerate(rendered)
    ]
    artifacts["warnings"] = [
        {"code": w.code, "capability": w.capability, "message": w.message}
        for w in result.warnings
    ]
    if any(verification[i] for i in range(len(rendered))):
        outcome.status = "failed"
        outcome.failed_stage = "verify"
        outcome.error = "rendered command failed syntax verification"
    return outcome, artifacts


def _plain(value):
    from .clipslang.ast import Sym

    if isinstance(value, Sym):
        return value.name
    if isinstance(value, tuple):
        return [_plain(v) for v in value]
    return value


def _safe_link(graph: ConceptGraph, child: str, parent: str) -> None:
    from .memory import CycleError

    if child == parent:
        return
    try:
        graph.link(child, parent)
    except CycleError:
        logger.info("skipping taxonomy edge %r -> %r: would close a cycle", child, parent)


def run_pipeline(config: PipelineConfig) -> RunManifest:
    """Execute the full flow over the configured corpus.

    The output directory must not already contain a run; per-report
    failures are recorded in the manifest, and PipelineError is raised only
    when every report fails.
    """
    config.validate()
    out_dir = Path(config.output_dir)
    if out_dir.exists() and any(out_dir.iterdir()):
        raise ConfigError(f"output directory {out_dir} is not empty; refusing to mutate it")
    out_dir.mkdir(parents=True, exist_ok=True)

    clock = _StageClock()
    start_total = time.perf_counter()

    client = config.build_client()
    vocabulary = config.build_vocabulary()
    registry = config.build_registry()
    prompts = config.build_prompts()
    graph = ConceptGraph(
        stability=config.kg_stability, retention_floor=config.kg_retention_floor
    )

    load = load_corpus(config.corpus_path, config.schema, vocabulary)
    manifest = RunManifest(config_hash=config.config_hash())
    manifest.corpus_errors = [f"{name}: {err}" for name, err in load.errors]

    predictions_lines: list[str] = []
    reports_dir = out_dir / "reports"
    reports_dir.mkdir()

    for tick, report in enumerate(load.reports, 1):
        outcome, artifacts = process_report(
            report,
            client=client,
            config=config,
            vocabulary=vocabulary,
            registry=registry,
            prompts=prompts,
            graph=graph,
            tick=tick,
            clock=clock,
        )
        manifest.outcomes.append(outcome)

        report_dir = reports_dir / report.id
        report_dir.mkdir(parents=True)
        _write_json(report_dir / "report.json", {
            "id": report.id,
            "schema": report.source.value,
            "synopsis": report.synopsis,
            "statements": [
                {"text": s.text, "labels": sorted(s.gold_labels)} for s in report.statements
            ],
            "artifacts": artifacts_to_json(report.artifacts),
        })
        if "program_source" in artifacts:
            (report_dir / "program.clp").write_text(artifacts["program_source"], encoding="utf-8")
        if "diagnostics" in artifacts:
            _write_json(report_dir / "diagnostics.json", artifacts["diagnostics"])
        if "trace" in artifacts:
            _write_json(report_dir / "trace.json", artifacts["trace"])
        if "rules" in artifacts:
            (report_dir / "rules.txt").write_text(
                "".join(line + "\n" for line in artifacts["rules"]), encoding="utf-8"
            )
            _write_json(report_dir / "provenance.json", {
                "report_id": report.id,
                "rules": artifacts["provenance"],
                "warnings": artifacts["warnings"],
            })
        for line in artifacts["predictions"]:
            predictions_lines.append(json.dumps(line, sort_keys=True))

    (out_dir / "predictions.jsonl").write_text(
        "".join(line + "\n" for line in predictions_lines), encoding="utf-8"
    )
    graph.save(out_dir / "kg_snapshot.json")
    _write_json(out_dir / "manifest.json", manifest.to_json())

    clock.add("total", time.perf_counter() - start_total)
    manifest.stage_seconds = dict(clock.totals)
    _write_json(out_dir / "timings.json", {"stage_seconds": manifest.stage_seconds})

    if load.reports and not [o for o in manifest.outcomes if o.status == "ok"]:
        raise PipelineError("every report failed; see manifest for details")
    return manifest
