"""AST node types and diagnostics for the CLIPS subset.

Spans are carried on every node but excluded from equality, so structural
comparison of re-parsed programs ignores layout.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum
from typing import Union

Span = tuple[int, int]  # (line, column), 1-based
NO_SPAN: Span = (0, 0)


@dataclass(frozen=True)
class Sym:
    """A bare CLIPS symbol, distinct from a quoted string."""

    name: str

    def __repr__(self) -> str:
        return f"Sym({self.name!r})"


Value = Union[Sym, str, int, float]


class SlotKind(Enum):
    SINGLE = "slot"
    MULTI = "multislot"


class ValueType(Enum):
    SYMBOL = "SYMBOL"
    STRING = "STRING"
    INTEGER = "INTEGER"
    FLOAT = "FLOAT"
    ANY = "ANY"


class Severity(Enum):
    ERROR = "error"
    WARNING = "warning"


@dataclass(frozen=True)
class Diagnostic:
    severity: Severity
    code: str
    message: str
    span: Span

    def is_error(self) -> bool:
        return self.severity is Severity.ERROR


@dataclass(frozen=True)
class SlotDef:
    name: str
    kind: SlotKind = SlotKind.SINGLE
    value_type: ValueType = ValueType.ANY
    default: tuple[Value, ...] | None = None  # None means no default
    span: Span = field(default=NO_SPAN, compare=False)


@dataclass(frozen=True)
class TemplateDef:
    name: str
    slots: tuple[SlotDef, ...]
    span: Span = field(default=NO_SPAN, compare=False)

    def slot(self, name: str) -> SlotDef | None:
        for s in self.slots:
            if s.name == name:
                return s
        return None


@dataclass(frozen=True)
class FactAssertion:
    """``(template (slot v...)...)`` — slot values are raw token tuples."""

    template_name: str
    slot_values: tuple[tuple[str, tuple[Value, ...]], ...]
    span: Span = field(default=NO_SPAN, compare=False)


@dataclass(frozen=True)
class DeffactsBlock:
    name: str
    facts: tuple[FactAssertion, ...]
    span: Span = field(default=NO_SPAN, compare=False)


@dataclass(frozen=True)
class Variable:
    name: str


@dataclass(frozen=True)
class Wildcard:
    pass


WILDCARD = Wildcard()

Constraint = Union[Sym, str, int, float, Variable, Wildcard]
Term = Union[Sym, str, int, float, Variable]  # rhs slot/parameter values


@dataclass(frozen=True)
class Pattern:
    template_name: str
    constraints: tuple[tuple[str, Constraint], ...]
    span: Span = field(default=NO_SPAN, compare=False)


@dataclass(frozen=True)
class AssertAction:
    template_name: str
    slot_terms: tuple[tuple[str, tuple[Term, ...]], ...]
    span: Span = field(default=NO_SPAN, compare=False)


@dataclass(frozen=True)
class EmitAction:
    """Built-in ``emit-capability`` action: structured engine output."""

    capability: str
    params: tuple[tuple[str, Term], ...]
    span: Span = field(default=NO_SPAN, compare=False)


Action = Union[AssertAction, EmitAction]


@dataclass(frozen=True)
class RuleDef:
    name: str
    lhs: tuple[Pattern, ...]
    rhs: tuple[Action, ...]
    salience: int = 0
    span: Span = field(default=NO_SPAN, compare=False)


@dataclass
class ClipsProgram:
    templates: list[TemplateDef] = field(default_factory=list)
    fact_blocks: list[DeffactsBlock] = field(default_factory=list)
    rules: list[RuleDef] = field(default_factory=list)

    def template(self, name: str) -> TemplateDef | None:
        for t in self.templates:
            if t.name == name:
                return t
        return None

    def source_spans(self) -> dict[tuple[str, str], Span]:
        spans: dict[tuple[str, str], Span] = {}
        for t in self.templates:
            spans[("deftemplate", t.name)] = t.span
        for b in self.fact_blocks:
            spans[("deffacts", b.name)] = b.span
        for r in self.rules:
            spans[("defrule", r.name)] = r.span
        return spans

    def structurally_equal(self, other: "ClipsProgram") -> bool:
        return (
            self.templates == other.templates
            and self.fact_blocks == other.fact_blocks
            and self.rules == other.rules
        )
