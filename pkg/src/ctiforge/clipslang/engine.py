"""Agenda-based forward chaining over a validated program.

Match-resolve-act: each cycle all eligible activations are known, one fires.
Conflict resolution prefers higher salience, then the activation whose newest
matched fact is most recent, then earlier rule definition, then the raw fact
id tuple (a depth-style strategy made total).  Refraction: a (rule, fact
tuple) pair fires at most once.  Asserting a fact whose content already
exists in working memory is a no-op, matching default CLIPS behaviour.

The agenda is maintained incrementally: the rule set is joined once against
the initial memory, and each newly asserted fact seeds only the pattern
positions it can extend.  There is no retract in this dialect, so
activations never need revalidation.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, Optional, Sequence

from .ast import (
    AssertAction,
    ClipsProgram,
    EmitAction,
    FactAssertion,
    Pattern,
    RuleDef,
    SlotKind,
    Sym,
    TemplateDef,
    ValueType,
    Variable,
    Wildcard,
)
from .validator import check_fact, validate


class EngineError(Exception):
    pass


@dataclass(frozen=True)
class WorkingFact:
    fact_id: int
    template_name: str
    slots: tuple[tuple[str, object], ...]  # template slot order

    def slot(self, name: str) -> object:
        for n, v in self.slots:
            if n == name:
                return v
        raise KeyError(name)


@dataclass(frozen=True)
class Firing:
    cycle: int
    rule_name: str
    fact_ids: tuple[int, ...]


@dataclass(frozen=True)
class EmittedCapability:
    name: str
    params: tuple[tuple[str, object], ...]
    rule_name: str
    fact_ids: tuple[int, ...]

    def param_map(self) -> dict[str, object]:
        return dict(self.params)


@dataclass
class ExecutionTrace:
    firings: list[Firing] = field(default_factory=list)
    final_facts: list[WorkingFact] = field(default_factory=list)
    capabilities: list[EmittedCapability] = field(default_factory=list)
    cycle_limit_exceeded: bool = False

    def to_json(self) -> dict:
        return {
            "firings": [
                {"cycle": f.cycle, "rule": f.rule_name, "fact_ids": list(f.fact_ids)}
                for f in self.firings
            ],
            "final_facts": [
                {
                    "id": f.fact_id,
                    "template": f.template_name,
                    "slots": {n: _value_to_json(v) for n, v in f.slots},
                }
                for f in self.final_facts
            ],
            "capabilities": [
                {
                    "name": c.name,
                    "params": {n: _value_to_json(v) for n, v in c.params},
                    "rule": c.rule_name,
                    "fact_ids": list(c.fact_ids),
                }
                for c in self.capabilities
            ],
            "cycle_limit_exceeded": self.cycle_limit_exceeded,
        }


def _value_to_json(value):
    if isinstance(value, Sym):
        return {"symbol": value.name}
    if isinstance(value, tuple):
        return [_value_to_json(v) for v in value]
    return value


def _values_equal(a, b) -> bool:
    # Type-strict: 1 != 1.0, symbol != string of the same spelling.
    if isinstance(a, tuple) and isinstance(b, tuple):
        return len(a) == len(b) and all(_values_equal(x, y) for x, y in zip(a, b))
    return type(a) is type(b) and a == b


def _value_key(value):
    if isinstance(value, tuple):
        return ("multi", tuple(_value_key(v) for v in value))
    if isinstance(value, Sym):
        return ("sym", value.name)
    if isinstance(value, str):
        return ("str", value)
    if isinstance(value, float):
        return ("float", value)
    return ("int", value)


def _coerce(value, value_type: ValueType):
    if value_type is ValueType.FLOAT and isinstance(value, int):
        return float(value)
    return value


def content_key(template_name: str, slots: Iterable[tuple[str, object]]):
    return (template_name, tuple(sorted((n, _value_key(v)) for n, v in slots)))


def canonicalize_fact(template: TemplateDef, provided: dict[str, tuple]) -> tuple[tuple[str, object], ...]:
    """Fill defaults and shape values: scalars for single slots, tuples for multislots."""
    out: list[tuple[str, object]] = []
    for slot in template.slots:
        if slot.name in provided:
            raw = provided[slot.name]
        elif slot.default is not None:
            raw = slot.default
        else:
            raise EngineError(f"no value for slot {slot.name!r} of {template.name!r}")
        if slot.kind is SlotKind.SINGLE:
            if len(raw) != 1:
                raise EngineError(f"slot {slot.name!r} of {template.name!r} takes one value")
            value = _coerce(raw[0], slot.value_type)
        else:
            value = tuple(_coerce(v, slot.value_type) for v in raw)
        out.append((slot.name, value))
    return tuple(out)


@dataclass(frozen=True)
class _Activation:
    rule_index: int
    rule: RuleDef
    fact_ids: tuple[int, ...]
    bindings: tuple[tuple[str, object], ...]

    def sort_key(self):
        newest = max(self.fact_ids) if self.fact_ids else 0
        return (self.rule.salience, newest, -self.rule_index, self.fact_ids)


class _Memory:
    def __init__(self):
        self.facts: list[WorkingFact] = []
        self.by_template: dict[str, list[WorkingFact]] = {}
        self.keys: set = set()

    def assert_fact(self, template: TemplateDef, provided: dict[str, tuple]) -> Optional[WorkingFact]:
        slots = canonicalize_fact(template, provided)
        key = content_key(template.name, slots)
        if key in self.keys:
            return None
        fact = WorkingFact(fact_id=len(self.facts) + 1, template_name=template.name, slots=slots)
        self.facts.append(fact)
        self.by_template.setdefault(template.name, []).append(fact)
        self.keys.add(key)
        return fact


def _match_pattern(pattern: Pattern, fact: WorkingFact, template: TemplateDef, bindings: dict) -> Optional[dict]:
    new = bindings
    for slot_name, constraint in pattern.constraints:
        value = fact.slot(slot_name)
        if isinstance(constraint, Wildcard):
            continue
        if isinstance(constraint, Variable):
            if constraint.name in new:
                if not _values_equal(new[constraint.name], value):
                    return None
            else:
                if new is bindings:
                    new = dict(bindings)
                new[constraint.name] = value
            continue
        slot = template.slot(slot_name)
        literal = _coerce(constraint, slot.value_type if slot else ValueType.ANY)
        if slot is not None and slot.kind is SlotKind.MULTI:
            if not _values_equal((literal,), value):
                return None
        elif not _values_equal(literal, value):
            return None
    return new if new is not bindings else dict(bindings)


def _join(
    rule: RuleDef,
    templates: dict[str, TemplateDef],
    memory: _Memory,
    position: int,
    bindings: dict,
    chosen: list[WorkingFact],
    seed: Optional[tuple[int, WorkingFact]],
    out: list[tuple[tuple[int, ...], dict]],
) -> None:
    if position == len(rule.lhs):
        if seed is None or any(f is seed[1] for f in chosen):
            out.append((tuple(f.fact_id for f in chosen), bindings))
        return
    pattern = rule.lhs[position]
    template = templates[pattern.template_name]
    if seed is not None and position == seed[0]:
        candidates: Sequence[WorkingFact] = (
            [seed[1]] if seed[1].template_name == pattern.template_name else []
        )
    else:
        candidates = memory.by_template.get(pattern.template_name, ())
    for fact in candidates:
        next_bindings = _match_pattern(pattern, fact, template, bindings)
        if next_bindings is not None:
            chosen.append(fact)
            _join(rule, templates, memory, position + 1, next_bindings, chosen, seed, out)
            chosen.pop()


def _activations_for(
    rule_index: int,
    rule: RuleDef,
    templates: dict[str, TemplateDef],
    memory: _Memory,
    new_fact: Optional[WorkingFact],
) -> list[_Activation]:
    results: list[tuple[tuple[int, ...], dict]] = []
    if new_fact is None:
        _join(rule, templates, memory, 0, {}, [], None, results)
    else:
        for position, pattern in enumerate(rule.lhs):
            if pattern.template_name != new_fact.template_name:
                continue
            seeded: list[tuple[tuple[int, ...], dict]] = []
            _join(rule, templates, memory, 0, {}, [], (position, new_fact), seeded)
            results.extend(seeded)
    return [
        _Activation(
            rule_index=rule_index,
            rule=rule,
            fact_ids=fact_ids,
            bindings=tuple(sorted(bindings.items())),
        )
        for fact_ids, bindings in results
    ]


def _resolve_terms(terms: tuple, bindings: dict, multislot: bool) -> tuple:
    resolved: list = []
    for term in terms:
        value = bindings[term.name] if isinstance(term, Variable) else term
        if multislot and isinstance(value, tuple):
            resolved.extend(value)  # splice multifield bindings
        else:
            resolved.append(value)
    return tuple(resolved)


def run(
    program: ClipsProgram,
    extra_facts: Sequence[FactAssertion] = (),
    max_cycles: int = 1000,
) -> ExecutionTrace:
    """Execute the program until quiescence or ``max_cycles`` firings.

    The program must have no validation errors; extra facts are checked
    against the program's templates before assertion.
    """
    errors = [d for d in validate(program) if d.is_error()]
    if errors:
        raise EngineError(f"program has {len(errors)} validation error(s); first: {errors[0].message}")

    templates = {t.name: t for t in program.templates}
    trace = ExecutionTrace()
    memory = _Memory()

    initial: list[FactAssertion] = [f for block in program.fact_blocks for f in block.facts]
    extra_diags: list = []
    for fact in extra_facts:
        check_fact(fact, templates, "extra fact", extra_diags)
    bad = [d for d in extra_diags if d.is_error()]
    if bad:
        raise EngineError(f"bad extra fact: {bad[0].message}")
    initial.extend(extra_facts)
    for fact in initial:
        memory.assert_fact(templates[fact.template_name], dict(fact.slot_values))

    agenda: dict[tuple[int, tuple[int, ...]], _Activation] = {}
    fired: set[tuple[int, tuple[int, ...]]] = set()

    for rule_index, rule in enumerate(program.rules):
        for act in _activations_for(rule_index, rule, templates, memory, None):
            agenda[(act.rule_index, act.fact_ids)] = act

    cycle = 0
    while agenda:
        if cycle >= max_cycles:
            trace.cycle_limit_exceeded = True
            break
        cycle += 1
        best = max(agenda.values(), key=_Activation.sort_key)
        key = (best.rule_index, best.fact_ids)
        del agenda[key]
        fired.add(key)
        trace.firings.append(Firing(cycle=cycle, rule_name=best.rule.name, fact_ids=best.fact_ids))

        bindings = dict(best.bindings)
        fresh: list[WorkingFact] = []
        for action in best.rule.rhs:
            if isinstance(action, AssertAction):
                template = templates[action.template_name]
                provided = {
                    name: _resolve_terms(
                        terms, bindings, template.slot(name).kind is SlotKind.MULTI
                    )
                    for name, terms in action.slot_terms
                }
                fact = memory.assert_fact(template, provided)
                if fact is not None:
                    fresh.append(fact)
            elif isinstance(action, EmitAction):
                params = tuple(
                    (name, bindings[term.name] if isinstance(term, Variable) else term)
                    for name, term in action.params
                )
                trace.capabilities.append(
                    EmittedCapability(
                        name=action.capability,
                        params=params,
                        rule_name=best.rule.name,
                        fact_ids=best.fact_ids,
                    )
                )
        for fact in fresh:
            for rule_index, rule in enumerate(program.rules):
                for act in _activations_for(rule_index, rule, templates, memory, fact):
                    akey = (act.rule_index, act.fact_ids)
                    if akey not in fired and akey not in agenda:
                        agenda[akey] = act

    trace.final_facts = list(memory.facts)
    return trace
