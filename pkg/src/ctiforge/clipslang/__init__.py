"""A small CLIPS dialect: deftemplate / deffacts / defrule.

Facilities: lexer+parser to an AST, a semantic validator that reports all
violations without stopping early, a canonical pretty-printer whose output
re-parses to an equal AST, and a forward-chaining engine with salience,
recency and refraction.  The grammar is documented in docs/clips-subset.md.
"""

from .ast import (
    Action,
    AssertAction,
    ClipsProgram,
    Constraint,
    DeffactsBlock,
    Diagnostic,
    EmitAction,
    FactAssertion,
    Pattern,
    RuleDef,
    Severity,
    SlotDef,
    SlotKind,
    Sym,
    TemplateDef,
    ValueType,
    Variable,
    WILDCARD,
    Wildcard,
)
from .engine import EmittedCapability, ExecutionTrace, Firing, WorkingFact, run
from .parser import ParseResult, parse
from .printer import pretty_print
from .validator import validate

__all__ = [
    "Action",
    "AssertAction",
    "ClipsProgram",
    "Constraint",
    "DeffactsBlock",
    "Diagnostic",
    "EmitAction",
    "EmittedCapability",
    "ExecutionTrace",
    "FactAssertion",
    "Firing",
    "ParseResult",
    "Pattern",
    "RuleDef",
    "Severity",
    "SlotDef",
    "SlotKind",
    "Sym",
    "TemplateDef",
    "ValueType",
    "Variable",
    "WILDCARD",
    "Wildcard",
    "WorkingFact",
    "parse",
    "pretty_print",
    "run",
    "validate",
]
