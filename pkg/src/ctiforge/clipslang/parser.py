"""Recursive-descent parser producing a ClipsProgram plus diagnostics.

All problems are reported as diagnostics rather than exceptions; parsing a
construct continues past the first broken construct so that one pass reports
as much as possible.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Union

from .ast import (
    AssertAction,
    ClipsProgram,
    DeffactsBlock,
    Diagnostic,
    EmitAction,
    FactAssertion,
    Pattern,
    RuleDef,
    Severity,
    SlotDef,
    SlotKind,
    Span,
    Sym,
    TemplateDef,
    ValueType,
    Variable,
    WILDCARD,
)
from .lexer import TokKind, Token, tokenize

PARSE_ERROR_CODES = (
    "UnbalancedParens",
    "BadToken",
    "UnknownConstruct",
    "MissingName",
    "BadSlotSyntax",
    "DuplicateSlot",
    "EmptyTemplate",
    "BadFactSyntax",
    "BadPatternSyntax",
    "BadActionSyntax",
    "MissingArrow",
    "BadSalience",
    "DuplicateConstruct",
)

_LITERAL_KINDS = (TokKind.SYMBOL, TokKind.STRING, TokKind.INTEGER, TokKind.FLOAT)


@dataclass
class SList:
    items: list  # of SList | Token
    span: Span


SExp = Union[SList, Token]


@dataclass
class ParseResult:
    program: Optional[ClipsProgram]
    diagnostics: list[Diagnostic]

    @property
    def ok(self) -> bool:
        return self.program is not None


def parse(source: str) -> ParseResult:
    """Parse source text. ``program`` is None when any error was diagnosed."""
    diags: list[Diagnostic] = []
    tokens = tokenize(source)
    for tok in tokens:
        if tok.kind is TokKind.ERROR:
            diags.append(_err("BadToken", str(tok.value), tok.span))
    if diags:
        return ParseResult(None, diags)

    forms, reader_diags = _read_forms(tokens)
    diags.extend(reader_diags)

    program = ClipsProgram()
    seen: dict[tuple[str, str], Span] = {}
    for form in forms:
        if isinstance(form, Token):
            diags.append(_err("UnknownConstruct", f"unexpected top-level {form.text!r}", form.span))
            continue
        head = _head_symbol(form)
        if head == "deftemplate":
            parsed = _parse_template(form, diags)
            if parsed is not None:
                _check_duplicate(seen, "deftemplate", parsed.name, parsed.span, diags)
                program.templates.append(parsed)
        elif head == "deffacts":
            parsed = _parse_deffacts(form, diags)
            if parsed is not None:
                _check_duplicate(seen, "deffacts", parsed.name, parsed.span, diags)
                program.fact_blocks.append(parsed)
        elif head == "defrule":
            parsed = _parse_rule(form, diags)
            if parsed is not None:
                _check_duplicate(seen, "defrule", parsed.name, parsed.span, diags)
                program.rules.append(parsed)
        else:
            shown = head if head is not None else "(...)"
            diags.append(_err("UnknownConstruct", f"unknown construct {shown!r}", form.span))
    if any(d.is_error() for d in diags):
        return ParseResult(None, diags)
    return ParseResult(program, diags)


def _err(code: str, message: str, span: Span) -> Diagnostic:
    return Diagnostic(Severity.ERROR, code, message, span)


def _check_duplicate(seen, kind: str, name: str, span: Span, diags) -> None:
    key = (kind, name)
    if key in seen:
        diags.append(_err("DuplicateConstruct", f"{kind} {name!r} defined twice", span))
    else:
        seen[key] = span


def _read_forms(tokens: list[Token]) -> tuple[list[SExp], list[Diagnostic]]:
    forms: list[SExp] = []
    diags: list[Diagnostic] = []
    stack: list[SList] = []
    for tok in tokens:
        if tok.kind is TokKind.LPAREN:
            lst = SList([], tok.span)
            if stack:
                stack[-1].items.append(lst)
            else:
                forms.append(lst)
            stack.append(lst)
        elif tok.kind is TokKind.RPAREN:
            if not stack:
                diags.append(_err("UnbalancedParens", "unmatched ')'", tok.span))
            else:
                stack.pop()
        else:
            if stack:
                stack[-1].items.append(tok)
            else:
                forms.append(tok)
    if stack:
        diags.append(_err("UnbalancedParens", "unclosed '('", stack[-1].span))
    return forms, diags


def _head_symbol(form: SList) -> Optional[str]:
    if form.items and isinstance(form.items[0], Token) and form.items[0].kind is TokKind.SYMBOL:
        return form.items[0].value
    return None


def _name_of(form: SList, construct: str, diags) -> Optional[str]:
    if len(form.items) < 2 or not isinstance(form.items[1], Token) or form.items[1].kind is not TokKind.SYMBOL:
        diags.append(_err("MissingName", f"{construct} needs a symbol name", form.span))
        return None
    return form.items[1].value


def _literal(tok: Token) -> object:
    if tok.kind is TokKind.SYMBOL:
        return Sym(tok.value)
    return tok.value


# -- deftemplate -------------------------------------------------------------

def _parse_template(form: SList, diags) -> Optional[TemplateDef]:
    name = _name_of(form, "deftemplate", diags)
    if name is None:
        return None
    slots: list[SlotDef] = []
    names: set[str] = set()
    bad = False
    for item in form.items[2:]:
        slot = _parse_slot(item, diags)
        if slot is None:
            bad = True
            continue
        if slot.name in names:
            diags.append(_err("DuplicateSlot", f"slot {slot.name!r} defined twice", slot.span))
            bad = True
            continue
        names.add(slot.name)
        slots.append(slot)
    if not slots and not bad:
        diags.append(_err("EmptyTemplate", f"deftemplate {name!r} has no slots", form.span))
        return None
    if bad:
        return None
    return TemplateDef(name=name, slots=tuple(slots), span=form.span)


def _parse_slot(item: SExp, diags) -> Optional[SlotDef]:
    if not isinstance(item, SList) or not item.items:
        diags.append(_err("BadSlotSyntax", "slot definition must be (slot name ...)", item.span))
        return None
    head = _head_symbol(item)
    if head not in ("slot", "multislot"):
        diags.append(_err("BadSlotSyntax", f"expected slot/multislot, got {head!r}", item.span))
        return None
    if len(item.items) < 2 or not isinstance(item.items[1], Token) or item.items[1].kind is not TokKind.SYMBOL:
        diags.append(_err("BadSlotSyntax", "slot needs a symbol name", item.span))
        return None
    kind = SlotKind.SINGLE if head == "slot" else SlotKind.MULTI
    name = item.items[1].value
    value_type = ValueType.ANY
    default: tuple | None = None
    for attr in item.items[2:]:
        if not isinstance(attr, SList) or not attr.items:
            diags.append(_err("BadSlotSyntax", f"bad attribute in slot {name!r}", item.span))
            return None
        attr_head = _head_symbol(attr)
        if attr_head == "type":
            if len(attr.items) != 2 or not isinstance(attr.items[1], Token) or attr.items[1].kind is not TokKind.SYMBOL:
                diags.append(_err("BadSlotSyntax", f"bad (type ...) in slot {name!r}", attr.span))
                return None
            type_name = attr.items[1].value
            try:
                value_type = ValueType(type_name)
            except ValueError:
                diags.append(_err("BadSlotSyntax", f"unknown slot type {type_name!r}", attr.span))
                return None
        elif attr_head == "default":
            values = []
            for v in attr.items[1:]:
                if not isinstance(v, Token) or v.kind not in _LITERAL_KINDS:
                    diags.append(_err("BadSlotSyntax", f"default of slot {name!r} must be literal", attr.span))
                    return None
                values.append(_literal(v))
            default = tuple(values)
        else:
            diags.append(_err("BadSlotSyntax", f"unknown slot attribute {attr_head!r}", attr.span))
            return None
    return SlotDef(name=name, kind=kind, value_type=value_type, default=default, span=item.span)


# -- deffacts ----------------------------------------------------------------

def _parse_deffacts(form: SList, diags) -> Optional[DeffactsBlock]:
    name = _name_of(form, "deffacts", diags)
    if name is None:
        return None
    facts: list[FactAssertion] = []
    bad = False
    for item in form.items[2:]:
        fact = _parse_fact(item, diags)
        if fact is None:
            bad = True
        else:
            facts.append(fact)
    if bad:
        return None
    return DeffactsBlock(name=name, facts=tuple(facts), span=form.span)


def _parse_fact(item: SExp, diags) -> Optional[FactAssertion]:
    if not isinstance(item, SList) or _head_symbol(item) is None:
        span = item.span
        diags.append(_err("BadFactSyntax", "fact must be (template (slot value...)...)", span))
        return None
    template_name = _head_symbol(item)
    pairs: list[tuple[str, tuple]] = []
    for sv in item.items[1:]:
        if not isinstance(sv, SList) or not sv.items or _head_symbol(sv) is None:
            diags.append(_err("BadFactSyntax", f"bad slot value in fact {template_name!r}", item.span))
            return None
        slot_name = _head_symbol(sv)
        values = []
        for v in sv.items[1:]:
            if not isinstance(v, Token) or v.kind not in _LITERAL_KINDS:
                diags.append(_err("BadFactSyntax", f"slot {slot_name!r} values must be literals", sv.span))
                return None
            values.append(_literal(v))
        pairs.append((slot_name, tuple(values)))
    return FactAssertion(template_name=template_name, slot_values=tuple(pairs), span=item.span)


# -- defrule -----------------------------------------------------------------

def _parse_rule(form: SList, diags) -> Optional[RuleDef]:
    name = _name_of(form, "defrule", diags)
    if name is None:
        return None
    body = form.items[2:]
    salience = 0
    if body and isinstance(body[0], SList) and _head_symbol(body[0]) == "declare":
        salience = _parse_salience(body[0], diags)
        if salience is None:
            return None
        body = body[1:]

    arrow_at = None
    for idx, item in enumerate(body):
        if isinstance(item, Token) and item.kind is TokKind.SYMBOL and item.value == "=>":
            arrow_at = idx
            break
    if arrow_at is None:
        diags.append(_err("MissingArrow", f"defrule {name!r} has no =>", form.span))
        return None

    patterns: list[Pattern] = []
    bad = False
    for item in body[:arrow_at]:
        pat = _parse_pattern(item, diags)
        if pat is None:
            bad = True
        else:
            patterns.append(pat)
    actions: list = []
    for item in body[arrow_at + 1:]:
        act = _parse_action(item, diags)
        if act is None:
            bad = True
        else:
            actions.append(act)
    if bad:
        return None
    return RuleDef(name=name, lhs=tuple(patterns), rhs=tuple(actions), salience=salience, span=form.span)


def _parse_salience(decl: SList, diags) -> Optional[int]:
    items = decl.items[1:]
    if (
        len(items) == 1
        and isinstance(items[0], SList)
        and _head_symbol(items[0]) == "salience"
        and len(items[0].items) == 2
        and isinstance(items[0].items[1], Token)
        and items[0].items[1].kind is TokKind.INTEGER
    ):
        return items[0].items[1].value
    diags.append(_err("BadSalience", "declare must be (declare (salience <int>))", decl.span))
    return None


def _parse_pattern(item: SExp, diags) -> Optional[Pattern]:
    if not isinstance(item, SList) or _head_symbol(item) is None:
        diags.append(_err("BadPatternSyntax", "pattern must be (template (slot constraint)...)", item.span))
        return None
    template_name = _head_symbol(item)
    constraints: list[tuple[str, object]] = []
    for sc in item.items[1:]:
        if (
            not isinstance(sc, SList)
            or len(sc.items) != 2
            or _head_symbol(sc) is None
            or not isinstance(sc.items[1], Token)
        ):
            diags.append(_err("BadPatternSyntax", f"bad slot constraint in pattern {template_name!r}", item.span))
            return None
        tok = sc.items[1]
        if tok.kind is TokKind.WILDCARD:
            constraint: object = WILDCARD
        elif tok.kind is TokKind.VARIABLE:
            constraint = Variable(tok.value)
        elif tok.kind in _LITERAL_KINDS:
            constraint = _literal(tok)
        else:
            diags.append(_err("BadPatternSyntax", f"bad constraint token {tok.text!r}", tok.span))
            return None
        constraints.append((_head_symbol(sc), constraint))
    return Pattern(template_name=template_name, constraints=tuple(constraints), span=item.span)


def _parse_action(item: SExp, diags) -> Optional[object]:
    if not isinstance(item, SList):
        diags.append(_err("BadActionSyntax", "action must be a list", item.span))
        return None
    head = _head_symbol(item)
    if head == "assert":
        if len(item.items) != 2 or not isinstance(item.items[1], SList):
            diags.append(_err("BadActionSyntax", "assert takes exactly one fact", item.span))
            return None
        fact_form = item.items[1]
        template_name = _head_symbol(fact_form)
        if template_name is None:
            diags.append(_err("BadActionSyntax", "assert fact must name a template", fact_form.span))
            return None
        pairs: list[tuple[str, tuple]] = []
        for sv in fact_form.items[1:]:
            terms = _parse_terms(sv, "assert", diags)
            if terms is None:
                return None
            pairs.append(terms)
        return AssertAction(template_name=template_name, slot_terms=tuple(pairs), span=item.span)
    if head == "emit-capability":
        if len(item.items) < 2 or not isinstance(item.items[1], Token) or item.items[1].kind is not TokKind.SYMBOL:
            diags.append(_err("BadActionSyntax", "emit-capability needs a capability symbol", item.span))
            return None
        capability = item.items[1].value
        params: list[tuple[str, object]] = []
        for pv in item.items[2:]:
            terms = _parse_terms(pv, "emit-capability", diags)
            if terms is None:
                return None
            name, values = terms
            if len(values) != 1:
                diags.append(_err("BadActionSyntax", f"parameter {name!r} takes one value", item.span))
                return None
            params.append((name, values[0]))
        return EmitAction(capability=capability, params=tuple(params), span=item.span)
    diags.append(_err("BadActionSyntax", f"unknown action {head!r}", item.span))
    return None


def _parse_terms(sv: SExp, context: str, diags) -> Optional[tuple[str, tuple]]:
    """Parse ``(name term...)`` where terms are literals or variables."""
    if not isinstance(sv, SList) or not sv.items or _head_symbol(sv) is None:
        diags.append(_err("BadActionSyntax", f"bad slot form in {context}", sv.span))
        return None
    name = _head_symbol(sv)
    terms = []
    for v in sv.items[1:]:
        if isinstance(v, Token) and v.kind in _LITERAL_KINDS:
            terms.append(_literal(v))
        elif isinstance(v, Token) and v.kind is TokKind.VARIABLE:
            terms.append(Variable(v.value))
        else:
            text = v.text if isinstance(v, Token) else "(...)"
            diags.append(_err("BadActionSyntax", f"bad term {text!r} in {context}", sv.span))
            return None
    return name, tuple(terms)
