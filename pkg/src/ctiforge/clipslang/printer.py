"""Canonical text form for parsed programs; re-parsing the output yields an
AST structurally equal to the input."""

from __future__ import annotations

from .ast import (
    AssertAction,
    ClipsProgram,
    DeffactsBlock,
    EmitAction,
    FactAssertion,
    RuleDef,
    SlotDef,
    SlotKind,
    Sym,
    TemplateDef,
    ValueType,
    Variable,
    Wildcard,
)


def format_value(value) -> str:
    if isinstance(value, Sym):
        return value.name
    if isinstance(value, str):
        escaped = value.replace("\\", "\\\\").replace('"', '\\"')
        return f'"{escaped}"'
    if isinstance(value, bool):
        raise TypeError("booleans are not CLIPS literals")
    if isinstance(value, float):
        text = repr(value)
        return text if any(c in text for c in ".eE") else text + ".0"
    if isinstance(value, int):
        return str(value)
    if isinstance(value, Variable):
        return f"?{value.name}"
    if isinstance(value, Wildcard):
        return "?"
    raise TypeError(f"unprintable value {value!r}")


def _format_slot(slot: SlotDef) -> str:
    head = "slot" if slot.kind is SlotKind.SINGLE else "multislot"
    parts = [f"({head} {slot.name}"]
    if slot.value_type is not ValueType.ANY:
        parts.append(f" (type {slot.value_type.value})")
    if slot.default is not None:
        joined = " ".join(format_value(v) for v in slot.default)
        parts.append(f" (default{' ' if joined else ''}{joined})")
    parts.append(")")
    return "".join(parts)


def _format_template(template: TemplateDef) -> str:
    lines = [f"(deftemplate {template.name}"]
    for slot in template.slots:
        lines.append(f"  {_format_slot(slot)}")
    return "\n".join(lines) + ")"


def _format_fact(fact: FactAssertion) -> str:
    parts = [f"({fact.template_name}"]
    for name, values in fact.slot_values:
        joined = " ".join(format_value(v) for v in values)
        parts.append(f" ({name}{' ' if joined else ''}{joined})")
    parts.append(")")
    return "".join(parts)


def _format_deffacts(block: DeffactsBlock) -> str:
    lines = [f"(deffacts {block.name}"]
    for fact in block.facts:
        lines.append(f"  {_format_fact(fact)}")
    return "\n".join(lines) + ")"


def _format_rule(rule: RuleDef) -> str:
    lines = [f"(defrule {rule.name}"]
    if rule.salience != 0:
        lines.append(f"  (declare (salience {rule.salience}))")
    for pattern in rule.lhs:
        parts = [f"({pattern.template_name}"]
        for name, constraint in pattern.constraints:
            parts.append(f" ({name} {format_value(constraint)})")
        parts.append(")")
        lines.append("  " + "".join(parts))
    lines.append("  =>")
    for action in rule.rhs:
        if isinstance(action, AssertAction):
            inner = [f"({action.template_name}"]
            for name, terms in action.slot_terms:
                joined = " ".join(format_value(t) for t in terms)
                inner.append(f" ({name}{' ' if joined else ''}{joined})")
            inner.append(")")
            lines.append(f"  (assert {''.join(inner)})")
        elif isinstance(action, EmitAction):
            parts = [f"(emit-capability {action.capability}"]
            for name, term in action.params:
                parts.append(f" ({name} {format_value(term)})")
            parts.append(")")
            lines.append("  " + "".join(parts))
        else:
            raise TypeError(f"unknown action {action!r}")
    return "\n".join(lines) + ")"


def pretty_print(program: ClipsProgram) -> str:
    """Render the program in definition order; empty program -> empty string."""
    chunks: list[str] = []
    chunks.extend(_format_template(t) for t in program.templates)
    chunks.extend(_format_deffacts(b) for b in program.fact_blocks)
    chunks.extend(_format_rule(r) for r in program.rules)
    if not chunks:
        return ""
    return "\n\n".join(chunks) + "\n"
