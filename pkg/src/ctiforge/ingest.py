"""Parsing of CTI report corpora and extraction of network indicators.

Two container schemas are supported, both JSON (one object per report):

* schema "a" — annotated statements: ``{"id", "statements": [{"text", "labels": []}]}``
* schema "b" — malware entries: ``{"id", "synopsis", "artifacts": ["..."]}``

Indicator extraction is pattern based.  Defanged notations (``hxxp``,
``[.]``, ``(.)``) are refanged and the original spelling is kept on the
artifact.
"""

from __future__ import annotations

import json
import logging
import re
from dataclasses import dataclass, field
from enum import Enum
from importlib import resources
from pathlib import Path
from typing import Iterable, Optional, Sequence

logger = logging.getLogger(__name__)

TECHNIQUE_ID_RE = re.compile(r"^T\d{4}(?:\.\d{3})?$")

# Defang conventions seen in shared CTI text.
_REFANG_SUBS = (
    (re.compile(r"hxxp", re.IGNORECASE), "http"),
    (re.compile(r"\[\.\]"), "."),
    (re.compile(r"\(\.\)"), "."),
    (re.compile(r"\[:\]"), ":"),
    (re.compile(r"\[://\]"), "://"),
)

_IPV4_OCTET = r"(?:25[0-5]|2[0-4]\d|1\d\d|[1-9]?\d)"
_IPV4_RE = re.compile(rf"\b{_IPV4_OCTET}(?:\.{_IPV4_OCTET}){{3}}\b")
_CIDR_RE = re.compile(rf"\b{_IPV4_OCTET}(?:\.{_IPV4_OCTET}){{3}}/(?:3[0-2]|[12]?\d)\b")
_URL_RE = re.compile(r"\bhttps?://[^\s\"'<>]+", re.IGNORECASE)
_DOMAIN_RE = re.compile(
    r"\b(?:[a-z0-9](?:[a-z0-9-]{0,61}[a-z0-9])?\.)+[a-z]{2,24}\b", re.IGNORECASE
)
_PORT_RE = re.compile(r"\bports?\s+(\d{1,5})\b|\b(?:tcp|udp)/(\d{1,5})\b", re.IGNORECASE)
_MD5_RE = re.compile(r"\b[a-f0-9]{32}\b", re.IGNORECASE)
_SHA256_RE = re.compile(r"\b[a-f0-9]{64}\b", re.IGNORECASE)

# Bare words that the domain regex would otherwise swallow ("gate.php" etc.).
_NON_DOMAIN_TLDS = {
    "php", "exe", "dll", "bat", "ps1", "vbs", "js", "py", "sh", "doc", "docx",
    "xls", "xlsx", "pdf", "zip", "rar", "txt", "html", "htm", "asp", "aspx",
    "jsp", "bin", "dat", "tmp", "log", "ini", "cfg", "json", "xml", "scr",
}


class Schema(Enum):
    """Corpus container schema."""

    DATASET_A = "a"
    DATASET_B = "b"


class ArtifactKind(Enum):
    IPV4 = "ipv4"
    IPV4_CIDR = "ipv4_cidr"
    DOMAIN = "domain"
    URL = "url"
    PORT = "port"
    HASH_MD5 = "hash_md5"
    HASH_SHA256 = "hash_sha256"


class ParseError(Exception):
    """Base class for report/corpus parse failures."""


class MalformedContainer(ParseError):
    """The raw text is not a valid JSON report object."""


class MissingNarrative(ParseError):
    """Report lacks the narrative its schema requires (synopsis/statements)."""


class IoFailure(ParseError):
    """Corpus path unreadable."""


@dataclass(frozen=True)
class NetworkArtifact:
    kind: ArtifactKind
    value: str
    defanged_original: Optional[str] = None


@dataclass(frozen=True)
class Statement:
    text: str
    gold_labels: frozenset[str] = frozenset()


@dataclass(frozen=True)
class CtiReport:
    id: str
    source: Schema
    statements: tuple[Statement, ...] = ()
    artifacts: tuple[NetworkArtifact, ...] = ()
    synopsis: Optional[str] = None

    def narrative_statements(self) -> tuple[Statement, ...]:
        """Statements to feed downstream; schema "b" wraps the synopsis."""
        if self.statements:
            return self.statements
        if self.synopsis:
            return (Statement(text=self.synopsis),)
        return ()


@dataclass
class LoadResult:
    """Aggregated corpus load: parsed reports plus per-file failures."""

    reports: list[CtiReport] = field(default_factory=list)
    errors: list[tuple[str, ParseError]] = field(default_factory=list)


class Vocabulary:
    """Technique vocabulary: id -> display name, loaded from a TSV file."""

    def __init__(self, entries: dict[str, str]):
        self._entries = dict(entries)

    def __contains__(self, technique_id: str) -> bool:
        return technique_id in self._entries

    def __len__(self) -> int:
        return len(self._entries)

    def __iter__(self):
        return iter(self._entries)

    def display_name(self, technique_id: str) -> str:
        return self._entries[technique_id]

    def ids(self) -> frozenset[str]:
        return frozenset(self._entries)

    def items(self):
        return self._entries.items()

    @classmethod
    def from_path(cls, path: str | Path) -> "Vocabulary":
        entries: dict[str, str] = {}
        for line_no, line in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), 1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            tid, _, name = line.partition("\t")
            tid = tid.strip()
            if not TECHNIQUE_ID_RE.match(tid):
                raise ValueError(f"{path}:{line_no}: bad technique id {tid!r}")
            entries[tid] = name.strip() or tid
        return cls(entries)

    @classmethod
    def bundled(cls) -> "Vocabulary":
        ref = resources.files("ctiforge.data").joinpath("mitre_techniques.tsv")
        with resources.as_file(ref) as path:
            return cls.from_path(path)


def is_valid_technique_id(value: str) -> bool:
    return bool(TECHNIQUE_ID_RE.match(value))


def refang(text: str) -> str:
    """Undo common defang conventions, returning plain indicator text."""
    for pattern, repl in _REFANG_SUBS:
        text = pattern.sub(repl, text)
    return text


def _valid_ipv4(value: str) -> bool:
    parts = value.split(".")
    return len(parts) == 4 and all(p.isdigit() and 0 <= int(p) <= 255 for p in parts)


def _domain_candidate(value: str) -> bool:
    tld = value.rsplit(".", 1)[-1].lower()
    return tld not in _NON_DOMAIN_TLDS and not _valid_ipv4(value)


def extract_iocs(text: str) -> list[NetworkArtifact]:
    """Extract network indicators from free text.

    Returns artifacts in first-occurrence order with duplicates collapsed.
    When the indicator was defanged in the input, ``defanged_original``
    preserves the source spelling.
    """
    clean = refang(text)
    was_refanged = clean != text

    found: list[tuple[int, NetworkArtifact]] = []
    claimed: list[tuple[int, int]] = []

    def overlaps(start: int, end: int) -> bool:
        return any(s < end and start < e for s, e in claimed)

    # URLs first: they subsume domains/IPs inside them.
    for m in _URL_RE.finditer(clean):
        value = m.group(0).rstrip(".,;)")
        found.append((m.start(), NetworkArtifact(ArtifactKind.URL, value)))
        claimed.append((m.start(), m.start() + len(value)))

    for m in _SHA256_RE.finditer(clean):
        if not overlaps(m.start(), m.end()):
            found.append((m.start(), NetworkArtifact(ArtifactKind.HASH_SHA256, m.group(0).lower())))
            claimed.append(m.span())
    for m in _MD5_RE.finditer(clean):
        if not overlaps(m.start(), m.end()):
            found.append((m.start(), NetworkArtifact(ArtifactKind.HASH_MD5, m.group(0).lower())))
            claimed.append(m.span())

    for m in _CIDR_RE.finditer(clean):
        if not overlaps(m.start(), m.end()):
            found.append((m.start(), NetworkArtifact(ArtifactKind.IPV4_CIDR, m.group(0))))
            claimed.append(m.span())
    for m in _IPV4_RE.finditer(clean):
        if not overlaps(m.start(), m.end()) and _valid_ipv4(m.group(0)):
            found.append((m.start(), NetworkArtifact(ArtifactKind.IPV4, m.group(0))))
            claimed.append(m.span())

    for m in _DOMAIN_RE.finditer(clean):
        if not overlaps(m.start(), m.end()) and _domain_candidate(m.group(0)):
            found.append((m.start(), NetworkArtifact(ArtifactKind.DOMAIN, m.group(0).lower())))
            claimed.append(m.span())

    for m in _PORT_RE.finditer(clean):
        port = m.group(1) or m.group(2)
        if 1 <= int(port) <= 65535:
            found.append((m.start(), NetworkArtifact(ArtifactKind.PORT, str(int(port)))))

    found.sort(key=lambda item: item[0])

    out: list[NetworkArtifact] = []
    seen: set[tuple[ArtifactKind, str]] = set()
    for pos, art in found:
        key = (art.kind, art.value)
        if key in seen:
            continue
        seen.add(key)
        if was_refanged:
            snippet = _original_spelling(text, art.value)
            if snippet is not None and snippet != art.value:
                art = NetworkArtifact(art.kind, art.value, defanged_original=snippet)
        out.append(art)
    return out


def _original_spelling(original: str, canonical: str) -> Optional[str]:
    """Locate the defanged spelling of ``canonical`` inside ``original``."""
    # Build a regex that tolerates each defang substitution in place.
    parts: list[str] = []
    i = 0
    low = canonical.lower()
    while i < len(canonical):
        if low.startswith("http", i):
            parts.append("h(?:tt|xx)p")
            i += 4
            continue
        c = canonical[i]
        if c == ".":
            parts.append(r"(?:\.|\[\.\]|\(\.\))")
        elif c == ":":
            parts.append(r"(?::|\[:\]|\[://\])")
        else:
            parts.append(re.escape(c))
        i += 1
    m = re.search("".join(parts), original, re.IGNORECASE)
    return m.group(0) if m else None


def parse_report(raw: str, schema: Schema, vocabulary: Optional[Vocabulary] = None) -> CtiReport:
    """Parse one JSON report container into a validated CtiReport.

    Unknown technique labels are dropped with a warning rather than failing
    the report.  Artifacts are collected from the ``artifacts`` list and
    additionally mined from the narrative text.

    Raises MalformedContainer or MissingNarrative.
    """
    vocabulary = vocabulary or Vocabulary.bundled()
    try:
        obj = json.loads(raw)
    except json.JSONDecodeError as exc:
        raise MalformedContainer(f"invalid JSON: {exc}") from exc
    if not isinstance(obj, dict):
        raise MalformedContainer("report container must be a JSON object")

    report_id = obj.get("id")
    if not isinstance(report_id, str) or not report_id.strip():
        raise MalformedContainer("report is missing a non-empty 'id'")
    report_id = report_id.strip()

    statements: list[Statement] = []
    synopsis: Optional[str] = None
    artifacts: list[NetworkArtifact] = []
    narrative_parts: list[str] = []

    if schema is Schema.DATASET_A:
        raw_statements = obj.get("statements")
        if not isinstance(raw_statements, list) or not raw_statements:
            raise MissingNarrative(f"report {report_id}: schema 'a' requires >=1 statement")
        for idx, st in enumerate(raw_statements):
            if not isinstance(st, dict) or not isinstance(st.get("text"), str):
                raise MalformedContainer(f"report {report_id}: statement {idx} malformed")
            text = " ".join(st["text"].split())
            if not text:
                raise MalformedContainer(f"report {report_id}: statement {idx} is empty")
            labels: set[str] = set()
            for label in st.get("labels", []) or []:
                label = str(label).strip()
                if is_valid_technique_id(label) and label in vocabulary:
                    labels.add(label)
                else:
                    logger.warning(
                        "report %s: dropping unknown technique label %r", report_id, label
                    )
            statements.append(Statement(text=text, gold_labels=frozenset(labels)))
            narrative_parts.append(text)
    else:
        synopsis_raw = obj.get("synopsis")
        if not isinstance(synopsis_raw, str) or not synopsis_raw.strip():
            raise MissingNarrative(f"report {report_id}: schema 'b' requires a synopsis")
        synopsis = " ".join(synopsis_raw.split())
        narrative_parts.append(synopsis)

    for entry in obj.get("artifacts", []) or []:
        artifacts.extend(extract_iocs(str(entry)))
    for part in narrative_parts:
        artifacts.extend(extract_iocs(part))

    deduped: list[NetworkArtifact] = []
    seen: set[tuple[ArtifactKind, str]] = set()
    for art in artifacts:
        key = (art.kind, art.value)
        if key not in seen:
            seen.add(key)
            deduped.append(art)

    return CtiReport(
        id=report_id,
        source=schema,
        statements=tuple(statements),
        artifacts=tuple(deduped),
        synopsis=synopsis,
    )


def load_corpus(
    path: str | Path, schema: Schema, vocabulary: Optional[Vocabulary] = None
) -> LoadResult:
    """Load a corpus from a directory of ``*.json`` files or a single file.

    Reports come back in lexicographic filename order.  Per-file parse
    failures are collected in the result; the call only raises when the path
    is unreadable or every single file fails.
    """
    path = Path(path)
    if not path.exists():
        raise IoFailure(f"corpus path does not exist: {path}")
    if path.is_dir():
        files: Sequence[Path] = sorted(p for p in path.iterdir() if p.suffix == ".json")
    else:
        files = [path]

    result = LoadResult()
    seen_ids: set[str] = set()
    for file in files:
        try:
            report = parse_report(file.read_text(encoding="utf-8"), schema, vocabulary)
            if report.id in seen_ids:
                raise MalformedContainer(f"duplicate report id {report.id!r}")
            seen_ids.add(report.id)
            result.reports.append(report)
        except ParseError as exc:
            logger.warning("failed to parse %s: %s", file.name, exc)
            result.errors.append((file.name, exc))
    if files and not result.reports:
        raise IoFailure(f"all {len(files)} report file(s) under {path} failed to parse")
    return result


def artifacts_to_json(artifacts: Iterable[NetworkArtifact]) -> list[dict]:
    return [
        {
            "kind": a.kind.value,
            "value": a.value,
            **({"defanged_original": a.defanged_original} if a.defanged_original else {}),
        }
        for a in artifacts
    ]


def artifact_from_json(obj: dict) -> NetworkArtifact:
    return NetworkArtifact(
        kind=ArtifactKind(obj["kind"]),
        value=obj["value"],
        defanged_original=obj.get("defanged_original"),
    )
