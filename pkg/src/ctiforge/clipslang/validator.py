"""Semantic validation of parsed programs.

Checks run in three passes mirroring how the engine instantiates a program:
templates, then facts against templates, then rules against both.  Every
violation is reported; nothing stops at the first error, so downstream error
propagation stays visible.
"""

from __future__ import annotations

from .ast import (
    AssertAction,
    ClipsProgram,
    Diagnostic,
    EmitAction,
    FactAssertion,
    Severity,
    SlotDef,
    SlotKind,
    Span,
    Sym,
    TemplateDef,
    ValueType,
    Variable,
    Wildcard,
)

VALIDATE_ERROR_CODES = (
    "UndefinedTemplate",
    "UnknownSlot",
    "MissingSlotValue",
    "SlotTypeMismatch",
    "SlotArityMismatch",
    "UnboundVariable",
    "EmptyLhs",
)


def _err(code: str, message: str, span: Span) -> Diagnostic:
    return Diagnostic(Severity.ERROR, code, message, span)


def _literal_matches(value, value_type: ValueType) -> bool:
    if value_type is ValueType.ANY:
        return True
    if value_type is ValueType.SYMBOL:
        return isinstance(value, Sym)
    if value_type is ValueType.STRING:
        return isinstance(value, str)
    if value_type is ValueType.INTEGER:
        return isinstance(value, int) and not isinstance(value, bool)
    if value_type is ValueType.FLOAT:
        # integer literals are acceptable in float slots (coerced at runtime)
        return isinstance(value, (int, float)) and not isinstance(value, bool)
    return False


def _check_slot_literals(
    slot: SlotDef, values: tuple, where: str, span: Span, diags: list[Diagnostic]
) -> None:
    if slot.kind is SlotKind.SINGLE and len(values) != 1:
        diags.append(
            _err(
                "SlotArityMismatch",
                f"{where}: slot {slot.name!r} takes exactly one value, got {len(values)}",
                span,
            )
        )
        return
    for value in values:
        if not _literal_matches(value, slot.value_type):
            diags.append(
                _err(
                    "SlotTypeMismatch",
                    f"{where}: slot {slot.name!r} expects {slot.value_type.value}, "
                    f"got {type(value).__name__}",
                    span,
                )
            )


def check_fact(
    fact: FactAssertion,
    templates: dict[str, TemplateDef],
    where: str,
    diags: list[Diagnostic],
) -> None:
    template = templates.get(fact.template_name)
    if template is None:
        diags.append(
            _err("UndefinedTemplate", f"{where}: no deftemplate {fact.template_name!r}", fact.span)
        )
        return
    provided: set[str] = set()
    for slot_name, values in fact.slot_values:
        slot = template.slot(slot_name)
        if slot is None:
            diags.append(
                _err("UnknownSlot", f"{where}: template {template.name!r} has no slot {slot_name!r}", fact.span)
            )
            continue
        provided.add(slot_name)
        _check_slot_literals(slot, values, where, fact.span, diags)
    for slot in template.slots:
        if slot.name not in provided and slot.default is None:
            diags.append(
                _err(
                    "MissingSlotValue",
                    f"{where}: slot {slot.name!r} of {template.name!r} has no value and no default",
                    fact.span,
                )
            )


def validate(program: ClipsProgram) -> list[Diagnostic]:
    """Return all diagnostics for the program (errors block execution)."""
    diags: list[Diagnostic] = []
    templates: dict[str, TemplateDef] = {}

    # Pass 1: templates. Structural slot checks happened at parse time; here
    # we only verify that declared defaults obey the slot's own type.
    for template in program.templates:
        templates[template.name] = template
        for slot in template.slots:
            if slot.default is not None:
                _check_slot_literals(
                    slot, slot.default, f"deftemplate {template.name!r} default", slot.span, diags
                )

    # Pass 2: facts against templates.
    for block in program.fact_blocks:
        for fact in block.facts:
            check_fact(fact, templates, f"deffacts {block.name!r}", diags)

    # Pass 3: rules against templates and bindings.
    for rule in program.rules:
        where = f"defrule {rule.name!r}"
        if not rule.lhs:
            diags.append(_err("EmptyLhs", f"{where}: left-hand side is empty", rule.span))
        bound: set[str] = set()
        for pattern in rule.lhs:
            template = templates.get(pattern.template_name)
            if template is None:
                diags.append(
                    _err("UndefinedTemplate", f"{where}: no deftemplate {pattern.template_name!r}", pattern.span)
                )
                continue
            for slot_name, constraint in pattern.constraints:
                slot = template.slot(slot_name)
                if slot is None:
                    diags.append(
                        _err("UnknownSlot", f"{where}: template {template.name!r} has no slot {slot_name!r}", pattern.span)
                    )
                    continue
                if isinstance(constraint, Variable):
                    bound.add(constraint.name)
                elif isinstance(constraint, Wildcard):
                    pass
                else:
                    _check_slot_literals(slot, (constraint,), where, pattern.span, diags)
        for action in rule.rhs:
            if isinstance(action, AssertAction):
                template = templates.get(action.template_name)
                if template is None:
                    diags.append(
                        _err("UndefinedTemplate", f"{where}: no deftemplate {action.template_name!r}", action.span)
                    )
                    continue
                provided: set[str] = set()
                for slot_name, terms in action.slot_terms:
                    slot = template.slot(slot_name)
                    if slot is None:
                        diags.append(
                            _err("UnknownSlot", f"{where}: template {template.name!r} has no slot {slot_name!r}", action.span)
                        )
                        continue
                    provided.add(slot_name)
                    for term in terms:
                        if isinstance(term, Variable):
                            if term.name not in bound:
                                diags.append(
                                    _err("UnboundVariable", f"{where}: ?{term.name} is not bound in the lhs", action.span)
                                )
                    literals = tuple(t for t in terms if not isinstance(t, Variable))
                    if len(literals) == len(terms):
                        _check_slot_literals(slot, literals, where, action.span, diags)
                    elif slot.kind is SlotKind.SINGLE and len(terms) != 1:
                        diags.append(
                            _err("SlotArityMismatch", f"{where}: slot {slot.name!r} takes exactly one value", action.span)
                        )
                    else:
                        for lit in literals:
                            if not _literal_matches(lit, slot.value_type):
                                diags.append(
                                    _err(
                                        "SlotTypeMismatch",
                                        f"{where}: slot {slot.name!r} expects {slot.value_type.value}",
                                        action.span,
                                    )
                                )
                for slot in template.slots:
                    if slot.name not in provided and slot.default is None:
                        diags.append(
                            _err(
                                "MissingSlotValue",
                                f"{where}: slot {slot.name!r} of {template.name!r} has no value and no default",
                                action.span,
                            )
                        )
            elif isinstance(action, EmitAction):
                for _, term in action.params:
                    if isinstance(term, Variable) and term.name not in bound:
                        diags.append(
                            _err("UnboundVariable", f"{where}: ?{term.name} is not bound in the lhs", action.span)
                        )
    return diags
