"""Staged semantic extraction against a pluggable language-model client.

The model is only ever consumed through a narrow record schema: completions
must be line-delimited ``name<TAB>confidence`` records, and anything that
does not parse is rejected at the boundary (the raw text is preserved on the
error for audit).  Raw model output never flows further down the pipeline.

Stages:

1. entity extraction from a statement (entities must be spans of it),
2. per-entity enrichment: narrower terms first, then broader terms,
3. technique classification over the enriched material, threshold-filtered,
plus generation of candidate rule-engine source text, whose validation
belongs to the ``clipslang`` package.
"""

from __future__ import annotations

import hashlib
import json
import logging
import re
import urllib.request
from dataclasses import dataclass
from enum import Enum
from importlib import resources
from pathlib import Path
from typing import Callable, Optional, Protocol, Sequence

from .ingest import Statement, Vocabulary, is_valid_technique_id
from .metrics import LabelPrediction

logger = logging.getLogger(__name__)


class GuardrailViolation(Exception):
    """Model output failed schema validation; offending text preserved."""

    def __init__(self, message: str, raw: str):
        super().__init__(message)
        self.raw = raw


class EmptyAbstraction(Exception):
    """No entity produced any broader term."""


class TranscriptMiss(Exception):
    """ScriptedMock has no completion recorded for a prompt."""


@dataclass(frozen=True)
class DecodingConfig:
    seed: int = 1234
    greedy: bool = True
    max_tokens: int = 256
    temperature: Optional[float] = None

    def __post_init__(self):
        if self.max_tokens < 1:
            raise ValueError("max_tokens must be positive")
        if self.greedy and self.temperature is not None:
            raise ValueError("greedy decoding forbids a sampling temperature")


class LlmClient(Protocol):
    def complete(self, prompt: str, decoding: DecodingConfig) -> str:
        ...


def prompt_digest(prompt: str) -> str:
    return hashlib.sha256(prompt.encode("utf-8")).hexdigest()


class ScriptedMock:
    """Transcript-replay client: prompt hash -> recorded completion.

    Identical (prompt, decoding) inputs always return byte-identical output.
    """

    def __init__(self, entries: Optional[Sequence[dict]] = None):
        self._completions: dict[str, str] = {}
        self.entries: list[dict] = []
        for entry in entries or []:
            self._add(entry["prompt_sha256"], entry["completion"], entry.get("prompt_preview", ""))

    def _add(self, digest: str, completion: str, preview: str) -> None:
        if digest in self._completions and self._completions[digest] != completion:
            raise ValueError(f"transcript lists hash {digest[:12]}... twice with different completions")
        if digest not in self._completions:
            self._completions[digest] = completion
            self.entries.append(
                {"prompt_sha256": digest, "completion": completion, "prompt_preview": preview}
            )

    def record(self, prompt: str, completion: str) -> None:
        self._add(prompt_digest(prompt), completion, prompt[:72])

    def complete(self, prompt: str, decoding: DecodingConfig) -> str:
        digest = prompt_digest(prompt)
        try:
            return self._completions[digest]
        except KeyError:
            raise TranscriptMiss(
                f"no completion for prompt hash {digest[:12]}... (prompt starts: {prompt[:60]!r})"
            ) from None

    def save(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps({"entries": self.entries}, indent=2) + "\n")

    @classmethod
    def load(cls, path: str | Path) -> "ScriptedMock":
        obj = json.loads(Path(path).read_text(encoding="utf-8"))
        return cls(obj["entries"])


class TranscriptRecorder:
    """Wraps any client and records its transcript for later replay."""

    def __init__(self, inner):
        self.inner = inner
        self.mock = ScriptedMock()

    def complete(self, prompt: str, decoding: DecodingConfig) -> str:
        completion = self.inner.complete(prompt, decoding)
        self.mock.record(prompt, completion)
        return completion


class HttpLlmClient:
    """Minimal JSON-over-HTTP client; never used in offline runs."""

    def __init__(self, endpoint: str, model: str, timeout: float = 60.0):
        self.endpoint = endpoint
        self.model = model
        self.timeout = timeout

    def complete(self, prompt: str, decoding: DecodingConfig) -> str:
        payload = json.dumps(
            {
                "model": self.model,
                "prompt": prompt,
                "seed": decoding.seed,
                "greedy": decoding.greedy,
                "max_tokens": decoding.max_tokens,
            }
        ).encode("utf-8")
        req = urllib.request.Request(
            self.endpoint, data=payload, headers={"Content-Type": "application/json"}
        )
        with urllib.request.urlopen(req, timeout=self.timeout) as resp:
            body = json.loads(resp.read().decode("utf-8"))
        return body["completion"]


# -- prompt templates ----------------------------------------------------

_PLACEHOLDER_RE = re.compile(
    r"\{(statement|entities|hyponyms|hypernyms|vocabulary|threshold|context|artifacts)\}"
)

PROMPT_NAMES = (
    "stage1_entities",
    "stage2_hyponyms",
    "stage2_hypernyms",
    "stage3_zero_shot",
    "stage3_few_shot",
    "stage3_cot",
    "stage3_three_stage",
    "clips_generation",
)


class PromptLibrary:
    def __init__(self, templates: dict[str, str]):
        missing = [n for n in PROMPT_NAMES if n not in templates]
        if missing:
            raise ValueError(f"missing prompt templates: {missing}")
        self._templates = templates

    def render(self, name: str, **fields: str) -> str:
        template = self._templates[name]

        def sub(match: re.Match) -> str:
            key = match.group(1)
            return str(fields.get(key, ""))

        return _PLACEHOLDER_RE.sub(sub, template)

    @classmethod
    def from_dir(cls, directory: str | Path) -> "PromptLibrary":
        directory = Path(directory)
        templates = {
            path.stem: path.read_text(encoding="utf-8") for path in directory.glob("*.txt")
        }
        return cls(templates)

    @classmethod
    def bundled(cls) -> "PromptLibrary":
        ref = resources.files("ctiforge.data").joinpath("prompts")
        with resources.as_file(ref) as directory:
            return cls.from_dir(directory)


# -- domain types ----------------------------------------------------------

@dataclass(frozen=True)
class DomainEntity:
    surface: str
    span: tuple[int, int]


@dataclass(frozen=True)
class SemanticConcept:
    entity: DomainEntity
    hyponyms: frozenset[str]
    hypernyms: frozenset[str]
    confidence: float


class StrategyKind(Enum):
    ZERO_SHOT = "zero-shot"
    FEW_SHOT = "few-shot"
    CHAIN_OF_THOUGHT = "cot"
    THREE_STAGE = "three-stage"


class Augmentation(Enum):
    NONE = "none"
    HYPONYMS = "hyponyms"
    HYPERNYMS = "hypernyms"


_STAGE3_TEMPLATES = {
    StrategyKind.ZERO_SHOT: "stage3_zero_shot",
    StrategyKind.FEW_SHOT: "stage3_few_shot",
    StrategyKind.CHAIN_OF_THOUGHT: "stage3_cot",
    StrategyKind.THREE_STAGE: "stage3_three_stage",
}


@dataclass(frozen=True)
class PromptStrategy:
    kind: StrategyKind = StrategyKind.THREE_STAGE
    augmentation: Augmentation = Augmentation.NONE
    threshold_percent: int = 50

    def __post_init__(self):
        if not 0 <= self.threshold_percent <= 100:
            raise ValueError("threshold_percent must lie in [0, 100]")

    def uses_hyponyms(self) -> bool:
        return self.kind is StrategyKind.THREE_STAGE or self.augmentation is Augmentation.HYPONYMS

    def uses_hypernyms(self) -> bool:
        return self.kind is StrategyKind.THREE_STAGE or self.augmentation is Augmentation.HYPERNYMS


# -- record schema ----------------------------------------------------------

def parse_records(completion: str) -> list[tuple[str, float]]:
    """Parse line-delimited ``name<TAB>confidence`` records.

    Lines without a tab are ignored; if nothing parses the completion is
    rejected wholesale.  Non-numeric or out-of-range confidences fall back
    to 0.0 with a warning.
    """
    records: list[tuple[str, float]] = []
    for line in completion.splitlines():
        line = line.strip()
        if not line or "\t" not in line:
            continue
        name, _, conf_text = line.partition("\t")
        name = name.strip()
        if not name:
            continue
        try:
            confidence = float(conf_text.strip())
        except ValueError:
            logger.warning("non-numeric confidence %r for %r; defaulting to 0", conf_text, name)
            confidence = 0.0
        if not 0.0 <= confidence <= 1.0:
            logger.warning("confidence %s for %r outside [0,1]; clamping", confidence, name)
            confidence = min(1.0, max(0.0, confidence))
        records.append((name, confidence))
    if not records:
        raise GuardrailViolation("completion contains no parseable records", raw=completion)
    return records


# -- stages -----------------------------------------------------------------

def stage1_extract_entities(
    statement: Statement,
    llm: LlmClient,
    cfg: DecodingConfig,
    prompts: Optional[PromptLibrary] = None,
) -> list[DomainEntity]:
    """Extract domain entities; every entity must resolve to a span of the
    statement, anything else is dropped."""
    if not statement.text.strip():
        raise ValueError("statement text is empty")
    prompts = prompts or PromptLibrary.bundled()
    prompt = prompts.render("stage1_entities", statement=statement.text)
    completion = llm.complete(prompt, cfg)
    records = parse_records(completion)

    entities: list[DomainEntity] = []
    seen: set[str] = set()
    lowered = statement.text.lower()
    for surface, _ in records:
        key = surface.lower()
        if key in seen:
            continue
        start = lowered.find(key)
        if start < 0:
            logger.warning("entity %r not found in statement; dropped", surface)
            continue
        seen.add(key)
        entities.append(DomainEntity(surface=statement.text[start : start + len(surface)], span=(start, start + len(surface))))
    return entities


def stage2_abstract_concepts(
    entities: Sequence[DomainEntity],
    llm: LlmClient,
    cfg: DecodingConfig,
    prompts: Optional[PromptLibrary] = None,
    context_provider: Optional[Callable[[str], Sequence[str]]] = None,
) -> list[SemanticConcept]:
    """Enrich entities with narrower and broader terms (in that order).

    Entities that yield no broader term are dropped; if every entity drops,
    EmptyAbstraction is raised.  A term listed under both relations is kept
    only as a broader term so the two sets stay disjoint.
    """
    if not entities:
        raise ValueError("no entities to abstract")
    prompts = prompts or PromptLibrary.bundled()
    concepts: list[SemanticConcept] = []
    for entity in entities:
        context = ""
        if context_provider is not None:
            neighbors = list(context_provider(entity.surface))
            if neighbors:
                context = "Known related concepts: " + ", ".join(neighbors)

        hypo_prompt = prompts.render("stage2_hyponyms", entities=entity.surface, context=context)
        hypo_records = _relation_records(llm.complete(hypo_prompt, cfg))
        hyper_prompt = prompts.render("stage2_hypernyms", entities=entity.surface, context=context)
        hyper_records = _relation_records(llm.complete(hyper_prompt, cfg))

        hypernyms = {name for name, _ in hyper_records}
        hyponyms = {name for name, _ in hypo_records}
        overlap = hyponyms & hypernyms
        if overlap:
            logger.info(
                "entity %r: %s listed as both narrower and broader; keeping broader only",
                entity.surface,
                sorted(overlap),
            )
            hyponyms -= overlap
        if not hypernyms:
            logger.warning("entity %r yielded no broader term; dropped", entity.surface)
            continue
        confidences = [c for name, c in hyper_records if name in hypernyms]
        confidence = sum(confidences) / len(confidences)
        concepts.append(
            SemanticConcept(
                entity=entity,
                hyponyms=frozenset(hyponyms),
                hypernyms=frozenset(hypernyms),
                confidence=min(1.0, max(0.0, confidence)),
            )
        )
    if not concepts:
        raise EmptyAbstraction("no entity yielded any broader term")
    return concepts


def _relation_records(completion: str) -> list[tuple[str, float]]:
    # Empty relation lists are expressed with the explicit marker record
    # "none<TAB>0"; a completion with no parseable record at all still
    # trips the guardrail.
    records = parse_records(completion)
    return [(n, c) for n, c in records if n.lower() != "none"]


def stage3_classify(
    concepts: Sequence[SemanticConcept],
    vocabulary: Vocabulary,
    strategy: PromptStrategy,
    llm: LlmClient,
    cfg: DecodingConfig,
    prompts: Optional[PromptLibrary] = None,
    statement_text: str = "",
) -> list[LabelPrediction]:
    """Rank technique labels for the statement behind ``concepts``.

    Candidates under the strategy threshold are filtered out; survivors are
    ranked by confidence descending with lexicographic tie-breaks.  Labels
    outside the vocabulary are dropped (and counted in the log).
    """
    if len(vocabulary) == 0:
        raise ValueError("vocabulary is empty")
    prompts = prompts or PromptLibrary.bundled()
    template = _STAGE3_TEMPLATES[strategy.kind]
    prompt = prompts.render(
        template,
        statement=statement_text,
        entities=", ".join(c.entity.surface for c in concepts),
        hyponyms=_relation_block(concepts, "hyponyms") if strategy.uses_hyponyms() else "",
        hypernyms=_relation_block(concepts, "hypernyms") if strategy.uses_hypernyms() else "",
        vocabulary="\n".join(f"{tid}\t{name}" for tid, name in sorted(vocabulary.items())),
        threshold=str(strategy.threshold_percent),
    )
    completion = llm.complete(prompt, cfg)
    records = parse_records(completion)

    dropped = 0
    candidates: list[tuple[str, float]] = []
    seen: set[str] = set()
    for label, confidence in records:
        label = label.strip()
        if not is_valid_technique_id(label) or label not in vocabulary:
            dropped += 1
            continue
        if label in seen:
            continue
        seen.add(label)
        candidates.append((label, confidence))
    if dropped:
        logger.warning("dropped %d prediction(s) outside the vocabulary", dropped)

    kept = [(label, conf) for label, conf in candidates if conf * 100 >= strategy.threshold_percent]
    kept.sort(key=lambda lc: (-lc[1], lc[0]))
    return [
        LabelPrediction(label=label, confidence=conf, rank=rank)
        for rank, (label, conf) in enumerate(kept, 1)
    ]


def _relation_block(concepts: Sequence[SemanticConcept], relation: str) -> str:
    lines = []
    for concept in concepts:
        terms = sorted(getattr(concept, relation))
        if terms:
            lines.append(f"{concept.entity.surface}: {', '.join(terms)}")
    return "\n".join(lines)


def semantic_only_predictions(
    concepts: Sequence[SemanticConcept],
    vocabulary: Vocabulary,
    threshold_percent: int,
) -> list[LabelPrediction]:
    """Label candidates from the enriched terms alone, no model call.

    A technique becomes a candidate when one of the concept's terms (entity,
    narrower or broader) matches its display name, case-insensitively, as an
    exact string or a contained phrase; the concept confidence carries over.
    """
    scores: dict[str, float] = {}
    for concept in concepts:
        terms = {concept.entity.surface} | set(concept.hyponyms) | set(concept.hypernyms)
        for tid, display in vocabulary.items():
            display_l = display.lower()
            for term in terms:
                term_l = term.lower()
                if term_l == display_l or term_l in display_l:
                    scores[tid] = max(scores.get(tid, 0.0), concept.confidence)
                    break
    kept = [(tid, conf) for tid, conf in scores.items() if conf * 100 >= threshold_percent]
    kept.sort(key=lambda lc: (-lc[1], lc[0]))
    return [
        LabelPrediction(label=tid, confidence=conf, rank=rank)
        for rank, (tid, conf) in enumerate(kept, 1)
    ]


def generate_clips_source(
    concepts: Sequence[SemanticConcept],
    artifacts: Sequence,
    llm: LlmClient,
    cfg: DecodingConfig,
    prompts: Optional[PromptLibrary] = None,
) -> str:
    """Ask the model for candidate rule-engine source text.

    The broader terms serve as the template-naming vocabulary in the prompt.
    The returned text is *unvalidated* source; callers must run it through
    the ``clipslang`` parser+validator before doing anything with it.
    """
    hypernyms = sorted({h for c in concepts for h in c.hypernyms})
    if not hypernyms:
        raise ValueError("need at least one concept with a broader term")
    prompts = prompts or PromptLibrary.bundled()
    artifact_lines = "\n".join(f"{a.kind.value}: {a.value}" for a in artifacts)
    prompt = prompts.render(
        "clips_generation",
        hypernyms=", ".join(hypernyms),
        entities=", ".join(c.entity.surface for c in concepts),
        artifacts=artifact_lines,
    )
    completion = llm.complete(prompt, cfg)
    if not completion.strip():
        raise GuardrailViolation("empty completion for source generation", raw=completion)
    return completion
