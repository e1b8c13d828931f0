"""Map emitted security capabilities onto concrete iptables filtering rules.

The registry declares which capabilities the packet filter can actually
enforce and how their parameters turn into rule fields.  Rendering is bit
exact: flags always appear in the order
``-A <CHAIN> [-p] [-s] [-d] [--sport] [--dport] -j <TARGET>``.  A separate
verifier re-parses rendered commands against the same grammar without
sharing any renderer code, so a renderer regression cannot hide.
"""

from __future__ import annotations

import json
import re
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Optional, Sequence

from .clipslang.ast import Sym


class Chain(Enum):
    INPUT = "INPUT"
    OUTPUT = "OUTPUT"
    FORWARD = "FORWARD"


class Target(Enum):
    DROP = "DROP"
    REJECT = "REJECT"


class Protocol(Enum):
    TCP = "tcp"
    UDP = "udp"
    ICMP = "icmp"


class RefinementError(Exception):
    pass


class UnknownCapability(RefinementError):
    pass


@dataclass(frozen=True)
class CapabilityProvenance:
    rule_name: str
    report_id: str


@dataclass(frozen=True)
class SecurityCapability:
    name: str
    parameters: tuple[tuple[str, object], ...]
    provenance: Optional[CapabilityProvenance] = None

    def param(self, name: str) -> object:
        for n, v in self.parameters:
            if n == name:
                return v
        raise KeyError(name)

    def param_map(self) -> dict[str, object]:
        return dict(self.parameters)


@dataclass(frozen=True)
class RefinementWarning:
    code: str
    capability: str
    message: str
    provenance: Optional[CapabilityProvenance] = None


@dataclass(frozen=True)
class FilterRule:
    chain: Chain
    target: Target = Target.DROP
    protocol: Optional[Protocol] = None
    src: Optional[str] = None  # IPv4 CIDR
    dst: Optional[str] = None
    sport: Optional[int] = None
    dport: Optional[int] = None

    def __post_init__(self):
        if not any(v is not None for v in (self.protocol, self.src, self.dst, self.sport, self.dport)):
            raise ValueError("a filter rule needs at least one match criterion")
        if (self.sport is not None or self.dport is not None) and self.protocol not in (
            Protocol.TCP,
            Protocol.UDP,
        ):
            raise ValueError("port matches require protocol tcp or udp")
        for port in (self.sport, self.dport):
            if port is not None and not 1 <= port <= 65535:
                raise ValueError(f"port {port} out of range")
        for cidr in (self.src, self.dst):
            if cidr is not None and not _valid_cidr(cidr):
                raise ValueError(f"bad address {cidr!r}")


def _valid_cidr(value: str) -> bool:
    addr, slash, prefix = value.partition("/")
    parts = addr.split(".")
    if len(parts) != 4:
        return False
    for p in parts:
        if not p.isdigit() or (len(p) > 1 and p[0] == "0") or int(p) > 255:
            return False
    if slash:
        if not prefix.isdigit() or (len(prefix) > 1 and prefix[0] == "0"):
            return False
        if not 0 <= int(prefix) <= 32:
            return False
    return True


# -- registry ------------------------------------------------------------

_PARAM_KINDS = ("ipv4", "port", "protocol", "string")


@dataclass(frozen=True)
class CapabilitySpec:
    name: str
    required_params: tuple[tuple[str, str], ...]  # (param name, kind)
    chain: Chain
    target: Target
    role: str  # which rule field each capability drives: src | dst | dport | protocol


class CapabilityRegistry:
    """Known security capabilities and their rule templates."""

    def __init__(self, specs: Sequence[CapabilitySpec]):
        if not specs:
            raise ValueError("registry cannot be empty")
        self._specs = {s.name: s for s in specs}

    def __contains__(self, name: str) -> bool:
        return name in self._specs

    def spec(self, name: str) -> CapabilitySpec:
        try:
            return self._specs[name]
        except KeyError:
            raise UnknownCapability(name) from None

    def names(self) -> list[str]:
        return sorted(self._specs)

    @classmethod
    def builtin(cls) -> "CapabilityRegistry":
        return cls(
            [
                CapabilitySpec(
                    "filter-by-source-address",
                    (("ip", "ipv4"),),
                    Chain.INPUT,
                    Target.DROP,
                    "src",
                ),
                CapabilitySpec(
                    "filter-by-destination-address",
                    (("ip", "ipv4"),),
                    Chain.OUTPUT,
                    Target.DROP,
                    "dst",
                ),
                CapabilitySpec(
                    "filter-by-destination-port",
                    (("port", "port"), ("proto", "protocol")),
                    Chain.OUTPUT,
                    Target.DROP,
                    "dport",
                ),
                CapabilitySpec(
                    "filter-by-protocol",
                    (("proto", "protocol"),),
                    Chain.INPUT,
                    Target.DROP,
                    "protocol",
                ),
            ]
        )

    @classmethod
    def from_config(cls, path: str | Path) -> "CapabilityRegistry":
        """Load from JSON: name -> {required_params, chain, target, role}."""
        obj = json.loads(Path(path).read_text(encoding="utf-8"))
        specs = []
        for name, entry in obj.items():
            params = tuple((p["name"], p["kind"]) for p in entry["required_params"])
            for _, kind in params:
                if kind not in _PARAM_KINDS:
                    raise ValueError(f"capability {name!r}: unknown param kind {kind!r}")
            specs.append(
                CapabilitySpec(
                    name=name,
                    required_params=params,
                    chain=Chain(entry["chain"]),
                    target=Target(entry["target"]),
                    role=entry["role"],
                )
            )
        return cls(specs)


@dataclass
class RefinementResult:
    rules: list[FilterRule] = field(default_factory=list)
    warnings: list[RefinementWarning] = field(default_factory=list)
    sources: dict[int, list[SecurityCapability]] = field(default_factory=dict)

    def __iter__(self):
        # allow: rules, warnings = refine(...)
        return iter((self.rules, self.warnings))


def _as_text(value) -> str:
    if isinstance(value, Sym):
        return value.name
    return str(value)


def _coerce_param(value, kind: str):
    """Return the canonical parameter value, or None when not enforceable."""
    if kind == "ipv4":
        text = _as_text(value)
        if _valid_cidr(text) and "/" not in text:
            return text
        if _valid_cidr(text):
            return text.split("/")[0]
        return None
    if kind == "port":
        try:
            port = int(_as_text(value))
        except ValueError:
            return None
        return port if 1 <= port <= 65535 else None
    if kind == "protocol":
        try:
            return Protocol(_as_text(value).lower())
        except ValueError:
            return None
    return _as_text(value)


def refine(
    capabilities: Sequence[SecurityCapability], registry: CapabilityRegistry
) -> RefinementResult:
    """Translate capabilities into filter rules, collapsing duplicates.

    Capabilities whose parameters the packet filter cannot enforce (domain
    names, malformed addresses, out-of-range ports) produce warnings rather
    than rules.  Unknown capability names raise UnknownCapability.
    """
    result = RefinementResult()
    seen: dict[FilterRule, int] = {}
    for cap in capabilities:
        spec = registry.spec(cap.name)
        params = cap.param_map()
        missing = [name for name, _ in spec.required_params if name not in params]
        if missing:
            result.warnings.append(
                RefinementWarning(
                    code="MissingParameter",
                    capability=cap.name,
                    message=f"missing required parameter(s): {', '.join(missing)}",
                    provenance=cap.provenance,
                )
            )
            continue
        coerced: dict[str, object] = {}
        bad = None
        for name, kind in spec.required_params:
            value = _coerce_param(params[name], kind)
            if value is None:
                bad = (name, params[name], kind)
                break
            coerced[name] = value
        if bad is not None:
            name, raw, kind = bad
            code = (
                "NonEnforceableArtifact"
                if kind == "ipv4"
                else "InvalidParameterValue"
            )
            result.warnings.append(
                RefinementWarning(
                    code=code,
                    capability=cap.name,
                    message=f"parameter {name}={_as_text(raw)!r} cannot be enforced as {kind}",
                    provenance=cap.provenance,
                )
            )
            continue

        rule = _instantiate(spec, coerced)
        if rule in seen:
            result.sources[seen[rule]].append(cap)
            continue
        index = len(result.rules)
        seen[rule] = index
        result.rules.append(rule)
        result.sources[index] = [cap]
    return result


def _instantiate(spec: CapabilitySpec, params: dict[str, object]) -> FilterRule:
    if spec.role == "src":
        return FilterRule(chain=spec.chain, target=spec.target, src=f"{params['ip']}/32")
    if spec.role == "dst":
        return FilterRule(chain=spec.chain, target=spec.target, dst=f"{params['ip']}/32")
    if spec.role == "dport":
        return FilterRule(
            chain=spec.chain,
            target=spec.target,
            protocol=params["proto"],
            dport=params["port"],
        )
    if spec.role == "protocol":
        return FilterRule(chain=spec.chain, target=spec.target, protocol=params["proto"])
    raise RefinementError(f"registry role {spec.role!r} is not supported")


def render_iptables(rule: FilterRule) -> str:
    """Render one command with the canonical fixed flag order."""
    parts = ["iptables", "-A", rule.chain.value]
    if rule.protocol is not None:
        parts += ["-p", rule.protocol.value]
    if rule.src is not None:
        parts += ["-s", rule.src]
    if rule.dst is not None:
        parts += ["-d", rule.dst]
    if rule.sport is not None:
        parts += ["--sport", str(rule.sport)]
    if rule.dport is not None:
        parts += ["--dport", str(rule.dport)]
    parts += ["-j", rule.target.value]
    return " ".join(parts)


# -- independent syntax verifier ------------------------------------------
#
# Deliberately self-contained: its own tokenizer, its own address/port
# validation, no reuse of FilterRule or the renderer.

@dataclass(frozen=True)
class SyntaxError_:
    code: str
    message: str


_FLAG_ORDER = {"-p": 0, "-s": 1, "-d": 2, "--sport": 3, "--dport": 4, "-j": 5}
_CHAINS = ("INPUT", "OUTPUT", "FORWARD")
_TARGETS = ("DROP", "REJECT")
_PROTOCOLS = ("tcp", "udp", "icmp")
_ADDR_RE = re.compile(r"^(\d{1,3})\.(\d{1,3})\.(\d{1,3})\.(\d{1,3})(?:/(\d{1,2}))?$")


def verify_syntax(command: str) -> list[SyntaxError_]:
    """Re-parse a rendered command; an empty list means the command is valid."""
    errors: list[SyntaxError_] = []
    tokens = command.split()
    if len(tokens) < 2 or tokens[0] != "iptables" or tokens[1] != "-A":
        return [SyntaxError_("InvalidCommand", "command must start with 'iptables -A'")]
    if len(tokens) < 3:
        return [SyntaxError_("InvalidChain", "missing chain after -A")]
    chain = tokens[2]
    if chain not in _CHAINS:
        errors.append(SyntaxError_("InvalidChain", f"unknown chain {chain!r}"))

    idx = 3
    seen_flags: list[str] = []
    values: dict[str, str] = {}
    while idx < len(tokens):
        flag = tokens[idx]
        if flag not in _FLAG_ORDER:
            errors.append(SyntaxError_("UnknownFlag", f"unknown flag {flag!r}"))
            idx += 1
            continue
        if flag in values:
            errors.append(SyntaxError_("DuplicateFlag", f"flag {flag} given twice"))
        if seen_flags and _FLAG_ORDER[flag] < _FLAG_ORDER[seen_flags[-1]]:
            errors.append(
                SyntaxError_("FlagOrderViolation", f"flag {flag} out of canonical order")
            )
        seen_flags.append(flag)
        if idx + 1 >= len(tokens):
            errors.append(SyntaxError_("MissingValue", f"flag {flag} has no value"))
            idx += 1
            continue
        values[flag] = tokens[idx + 1]
        idx += 2

    if "-j" not in values:
        errors.append(SyntaxError_("MissingTarget", "no -j <TARGET> given"))
    elif values["-j"] not in _TARGETS:
        errors.append(SyntaxError_("InvalidTarget", f"unknown target {values['-j']!r}"))
    if seen_flags and seen_flags[-1] != "-j" and "-j" in values:
        errors.append(SyntaxError_("FlagOrderViolation", "-j must be the final flag"))

    if "-p" in values and values["-p"] not in _PROTOCOLS:
        errors.append(SyntaxError_("InvalidProtocol", f"unknown protocol {values['-p']!r}"))

    for flag in ("-s", "-d"):
        if flag in values:
            errors.extend(_check_address(values[flag], flag))
    for flag in ("--sport", "--dport"):
        if flag in values:
            errors.extend(_check_port(values[flag], flag))
            if values.get("-p") not in ("tcp", "udp"):
                errors.append(
                    SyntaxError_(
                        "MissingProtocol", f"{flag} requires -p tcp or -p udp earlier in the rule"
                    )
                )

    has_match = any(f in values for f in ("-p", "-s", "-d", "--sport", "--dport"))
    if not has_match:
        errors.append(SyntaxError_("NoMatchCriterion", "rule matches no traffic attribute"))
    return errors


def _check_address(value: str, flag: str) -> list[SyntaxError_]:
    m = _ADDR_RE.match(value)
    if not m:
        return [SyntaxError_("InvalidAddress", f"{flag} {value!r} is not an IPv4/CIDR")]
    octets = [m.group(i) for i in range(1, 5)]
    for octet in octets:
        if len(octet) > 1 and octet[0] == "0":
            return [SyntaxError_("InvalidAddress", f"{flag} {value!r} has a zero-padded octet")]
        if int(octet) > 255:
            return [SyntaxError_("InvalidAddress", f"{flag} {value!r} octet {octet} > 255")]
    prefix = m.group(5)
    if prefix is not None:
        if len(prefix) > 1 and prefix[0] == "0":
            return [SyntaxError_("InvalidAddress", f"{flag} {value!r} zero-padded prefix")]
        if int(prefix) > 32:
            return [SyntaxError_("InvalidAddress", f"{flag} {value!r} prefix {prefix} > 32")]
    return []


def _check_port(value: str, flag: str) -> list[SyntaxError_]:
    if not value.isdigit():
        return [SyntaxError_("PortOutOfRange", f"{flag} {value!r} is not a port number")]
    port = int(value)
    if not 1 <= port <= 65535:
        return [SyntaxError_("PortOutOfRange", f"{flag} {value} outside 1..65535")]
    return []
