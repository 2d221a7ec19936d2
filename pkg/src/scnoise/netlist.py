"""Phase-aware netlist and analysis-plan parsing.

Netlist grammar (one statement per line, ``#`` starts a comment, keywords
are case-insensitive, node and element names are case-sensitive)::

    .phases <N>
    .ground <node>
    C   <name> <n1> <n2> <value>
    R   <name> <n1> <n2> <value>
    SW  <name> <n1> <n2> ron=<value> closed=<p1>[,<p2>...]
    OTA <name> inp=<node> inn=<node> out=<node> gm=<value> gamma=<value>
    .port <name> <k> <l>

Values take the SPICE suffixes ``a f p n u m k meg g t`` (``m`` is milli).

The analysis plan is a JSON document::

    {
      "temperature_k": 300,
      "output_port": "out",
      "c_ref": "c2",                      # optional
      "contributions": [
        {"type": "direct", "phase": 2},
        {"type": "sampled_transfer", "sample_phase": 1,
         "capacitors": ["c1"], "inject_ota": "ota1", "transfer_phase": 2}
      ]
    }
"""

from __future__ import annotations

import json
import re
from dataclasses import dataclass, field, replace
from typing import Union

from .errors import (
    DuplicateElementName,
    EmptyContributions,
    MissingGround,
    NetlistSyntaxError,
    NonPositiveValue,
    PhaseOutOfRange,
    PlanError,
    UnknownPhase,
    UnresolvedName,
)

SI_SUFFIXES = {
    "a": 1e-18,
    "f": 1e-15,
    "p": 1e-12,
    "n": 1e-9,
    "u": 1e-6,
    "m": 1e-3,
    "k": 1e3,
    "meg": 1e6,
    "g": 1e9,
    "t": 1e12,
}

_VALUE_RE = re.compile(
    r"^([+-]?(?:\d+\.?\d*|\.\d+)(?:[eE][+-]?\d+)?)(meg|[afpnumkgt])?$", re.IGNORECASE
)


@dataclass(frozen=True)
class Capacitor:
    name: str
    n1: str
    n2: str
    value: float

    @property
    def nodes(self) -> tuple[str, ...]:
        return (self.n1, self.n2)


@dataclass(frozen=True)
class Resistor:
    name: str
    n1: str
    n2: str
    value: float

    @property
    def nodes(self) -> tuple[str, ...]:
        return (self.n1, self.n2)


@dataclass(frozen=True)
class Switch:
    name: str
    n1: str
    n2: str
    ron: float
    closed_in: frozenset[int]

    @property
    def nodes(self) -> tuple[str, ...]:
        return (self.n1, self.n2)

    def is_closed(self, phase: int) -> bool:
        return phase in self.closed_in


@dataclass(frozen=True)
class Ota:
    """Single-ended VCCS: current gm*(V(inp) - V(inn)) flows into ``out``."""

    name: str
    inp: str
    inn: str
    out: str
    gm: float
    gamma: float

    @property
    def nodes(self) -> tuple[str, ...]:
        return (self.inp, self.inn, self.out)


Element = Union[Capacitor, Resistor, Switch, Ota]

_KIND = {Capacitor: "C", Resistor: "R", Switch: "SW", Ota: "OTA"}


@dataclass(frozen=True)
class Circuit:
    ground: str
    n_phases: int
    elements: tuple[Element, ...]
    ports: tuple[tuple[str, str, str], ...] = ()
    nodes: frozenset[str] = field(default=frozenset())

    def __post_init__(self):
        found = {self.ground}
        for el in self.elements:
            found.update(el.nodes)
        for _, k, l in self.ports:
            found.update((k, l))
        object.__setattr__(self, "nodes", frozenset(found) | self.nodes)

    def of_kind(self, kind: type) -> list:
        return [el for el in self.elements if isinstance(el, kind)]

    @property
    def capacitors(self) -> list[Capacitor]:
        return self.of_kind(Capacitor)

    @property
    def otas(self) -> list[Ota]:
        return self.of_kind(Ota)

    def element(self, name: str, kind: type | None = None) -> Element:
        for el in self.elements:
            if el.name == name and (kind is None or isinstance(el, kind)):
                return el
        what = _KIND[kind] if kind else "element"
        raise UnresolvedName(f"no {what} named {name!r}")

    def port(self, name: str) -> tuple[str, str]:
        for pname, k, l in self.ports:
            if pname == name:
                return (k, l)
        raise UnresolvedName(f"no port named {name!r}")

    def with_value(self, element: str, param: str, value: float) -> "Circuit":
        """Copy of the circuit with one element parameter replaced (used by sweeps)."""
        el = self.element(element)
        if not hasattr(el, param) or param == "name":
            raise UnresolvedName(f"{_KIND[type(el)]} {element!r} has no parameter {param!r}")
        if param in ("value", "ron", "gm") and value <= 0:
            raise NonPositiveValue(f"{element}.{param} must be > 0, got {value:g}")
        if param == "gamma" and value < 0:
            raise NonPositiveValue(f"{element}.gamma must be >= 0, got {value:g}")
        elements = tuple(replace(e, **{param: float(value)}) if e is el else e for e in self.elements)
        return replace(self, elements=elements)


def parse_value(token: str) -> float:
    m = _VALUE_RE.match(token)
    if not m:
        raise ValueError(f"bad numeric value {token!r}")
    scale = SI_SUFFIXES[m.group(2).lower()] if m.group(2) else 1.0
    return float(m.group(1)) * scale


def _format_value(x: float) -> str:
    return repr(float(x))


class _Line:
    """Tokenizer state for one netlist line, tracking 1-based columns."""

    def __init__(self, text: str, lineno: int):
        self.lineno = lineno
        self.tokens = [(m.group(), m.start() + 1) for m in re.finditer(r"\S+", text)]

    def error(self, message: str, idx: int | None = None) -> NetlistSyntaxError:
        col = self.tokens[idx][1] if idx is not None and idx < len(self.tokens) else 1
        return NetlistSyntaxError(message, self.lineno, col)

    def value(self, idx: int, what: str) -> float:
        try:
            v = parse_value(self.tokens[idx][0])
        except IndexError:
            raise self.error(f"missing {what}") from None
        except ValueError as exc:
            raise self.error(str(exc), idx) from None
        return v

    def keywords(self, start: int, required: tuple[str, ...]) -> dict[str, tuple[str, int]]:
        out = {}
        for idx in range(start, len(self.tokens)):
            tok = self.tokens[idx][0]
            if "=" not in tok:
                raise self.error(f"expected key=value, got {tok!r}", idx)
            key, _, val = tok.partition("=")
            key = key.lower()
            if key not in required:
                raise self.error(f"unknown parameter {key!r}", idx)
            if key in out:
                raise self.error(f"parameter {key!r} given twice", idx)
            if not val:
                raise self.error(f"empty value for {key!r}", idx)
            out[key] = (val, idx)
        missing = [k for k in required if k not in out]
        if missing:
            raise self.error(f"missing parameter(s): {', '.join(missing)}")
        return out

    def keyword_value(self, kw: dict, key: str) -> float:
        val, idx = kw[key]
        try:
            return parse_value(val)
        except ValueError as exc:
            raise self.error(str(exc), idx) from None


def _positive(line: _Line, name: str, what: str, value: float, allow_zero: bool = False):
    if value < 0 or (value == 0 and not allow_zero):
        bound = ">= 0" if allow_zero else "> 0"
        raise NonPositiveValue(f"line {line.lineno}: {name}: {what} must be {bound}, got {value:g}")


def parse_netlist(text: str) -> Circuit:
    """Parse netlist text into a validated :class:`Circuit`."""
    n_phases = None
    ground = None
    elements: list[Element] = []
    ports: list[tuple[str, str, str]] = []
    seen: dict[tuple[str, str], int] = {}
    phase_refs: list[tuple[int, str, int]] = []

    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = _Line(raw.split("#", 1)[0], lineno)
        if not line.tokens:
            continue
        head = line.tokens[0][0].lower()
        ntok = len(line.tokens)

        if head == ".phases":
            if ntok != 2:
                raise line.error(".phases takes exactly one argument")
            if n_phases is not None:
                raise line.error(".phases given twice")
            try:
                n_phases = int(line.tokens[1][0])
            except ValueError:
                raise line.error("phase count must be an integer", 1) from None
            if n_phases < 1:
                raise line.error("phase count must be >= 1", 1)
        elif head == ".ground":
            if ntok != 2:
                raise line.error(".ground takes exactly one node")
            if ground is not None:
                raise line.error(".ground given twice")
            ground = line.tokens[1][0]
        elif head == ".port":
            if ntok != 4:
                raise line.error(".port takes <name> <k> <l>")
            name, k, l = (t for t, _ in line.tokens[1:])
            if ("port", name) in seen:
                raise DuplicateElementName(f"line {lineno}: duplicate port {name!r}")
            if k == l:
                raise line.error("port terminals must differ", 3)
            seen[("port", name)] = lineno
            ports.append((name, k, l))
        elif head in ("c", "r", "sw", "ota"):
            if ntok < 2:
                raise line.error("missing element name")
            name = line.tokens[1][0]
            kind = head.upper()
            if (kind, name) in seen:
                raise DuplicateElementName(
                    f"line {lineno}: duplicate {kind} name {name!r} (first on line {seen[(kind, name)]})"
                )
            seen[(kind, name)] = lineno
            if head in ("c", "r"):
                if ntok != 5:
                    raise line.error(f"{kind} takes <name> <n1> <n2> <value>")
                n1, n2 = line.tokens[2][0], line.tokens[3][0]
                value = line.value(4, "value")
                _positive(line, name, "value", value)
                cls = Capacitor if head == "c" else Resistor
                elements.append(cls(name, n1, n2, value))
            elif head == "sw":
                if ntok != 6:
                    raise line.error("SW takes <name> <n1> <n2> ron=<value> closed=<phases>")
                n1, n2 = line.tokens[2][0], line.tokens[3][0]
                kw = line.keywords(4, ("ron", "closed"))
                ron = line.keyword_value(kw, "ron")
                _positive(line, name, "ron", ron)
                closed_text, cidx = kw["closed"]
                phases = set()
                for part in closed_text.split(","):
                    try:
                        p = int(part)
                    except ValueError:
                        raise line.error(f"bad phase index {part!r}", cidx) from None
                    phases.add(p)
                    phase_refs.append((lineno, name, p))
                elements.append(Switch(name, n1, n2, ron, frozenset(phases)))
            else:
                kw = line.keywords(2, ("inp", "inn", "out", "gm", "gamma"))
                gm = line.keyword_value(kw, "gm")
                gamma = line.keyword_value(kw, "gamma")
                _positive(line, name, "gm", gm)
                _positive(line, name, "gamma", gamma, allow_zero=True)
                inp, inn, out = kw["inp"][0], kw["inn"][0], kw["out"][0]
                if inp == inn:
                    raise line.error("OTA inp and inn must be distinct nodes", kw["inn"][1])
                elements.append(Ota(name, inp, inn, out, gm, gamma))
        else:
            raise line.error(f"unknown statement {line.tokens[0][0]!r}", 0)

    if ground is None:
        raise MissingGround("netlist has no .ground directive")
    n_phases = 1 if n_phases is None else n_phases
    for lineno, name, p in phase_refs:
        if not 1 <= p <= n_phases:
            raise UnknownPhase(f"line {lineno}: switch {name!r} closes in phase {p}, "
                               f"but only {n_phases} phase(s) declared")
    referenced = any(ground in el.nodes for el in elements) or any(ground in (k, l) for _, k, l in ports)
    if not referenced:
        raise MissingGround(f"ground node {ground!r} is not referenced by any element or port")
    return Circuit(ground=ground, n_phases=n_phases, elements=tuple(elements), ports=tuple(ports))


def format_netlist(circuit: Circuit) -> str:
    """Canonical netlist text; ``parse_netlist(format_netlist(c)) == c``."""
    out = [f".phases {circuit.n_phases}", f".ground {circuit.ground}"]
    for el in circuit.elements:
        if isinstance(el, (Capacitor, Resistor)):
            out.append(f"{_KIND[type(el)]} {el.name} {el.n1} {el.n2} {_format_value(el.value)}")
        elif isinstance(el, Switch):
            phases = ",".join(str(p) for p in sorted(el.closed_in))
            out.append(f"SW {el.name} {el.n1} {el.n2} ron={_format_value(el.ron)} closed={phases}")
        else:
            out.append(
                f"OTA {el.name} inp={el.inp} inn={el.inn} out={el.out} "
                f"gm={_format_value(el.gm)} gamma={_format_value(el.gamma)}"
            )
    for name, k, l in circuit.ports:
        out.append(f".port {name} {k} {l}")
    return "\n".join(out) + "\n"


# -- analysis plan ----------------------------------------------------------

@dataclass(frozen=True)
class Direct:
    phase: int

    @property
    def label(self) -> str:
        return f"direct@phase{self.phase}"


@dataclass(frozen=True)
class SampledTransfer:
    sample_phase: int
    capacitors: tuple[str, ...]
    inject_ota: str
    transfer_phase: int

    @property
    def label(self) -> str:
        return (f"sampled[{','.join(self.capacitors)}]@phase{self.sample_phase}"
                f"->{self.inject_ota}@phase{self.transfer_phase}")


Contribution = Union[Direct, SampledTransfer]


@dataclass(frozen=True)
class NoiseBudget:
    temperature: float
    output_port: str
    contributions: tuple[Contribution, ...]
    c_ref: str | None = None

    @property
    def readout_phase(self) -> int:
        """Phase at whose end the output is read: the last direct entry's phase,
        else the last transfer phase."""
        for c in reversed(self.contributions):
            if isinstance(c, Direct):
                return c.phase
        return self.contributions[-1].transfer_phase


def _phase(value, circuit: Circuit, where: str) -> int:
    if isinstance(value, bool) or not isinstance(value, int):
        raise PlanError(f"{where}: phase must be an integer, got {value!r}")
    if not 1 <= value <= circuit.n_phases:
        raise PhaseOutOfRange(f"{where}: phase {value} outside 1..{circuit.n_phases}")
    return value


def _require(doc: dict, key: str, where: str):
    if key not in doc:
        raise PlanError(f"{where}: missing field {key!r}")
    return doc[key]


def budget_from_dict(doc: dict, circuit: Circuit) -> NoiseBudget:
    if not isinstance(doc, dict):
        raise PlanError("plan must be a JSON object")
    temp = _require(doc, "temperature_k", "plan")
    if isinstance(temp, bool) or not isinstance(temp, (int, float)) or not temp > 0:
        raise PlanError(f"temperature_k must be a number > 0, got {temp!r}")
    port = _require(doc, "output_port", "plan")
    circuit.port(port)
    c_ref = doc.get("c_ref")
    if c_ref is not None:
        circuit.element(c_ref, Capacitor)
    items = _require(doc, "contributions", "plan")
    if not isinstance(items, list):
        raise PlanError("contributions must be a list")
    if not items:
        raise EmptyContributions("plan has no contributions")

    contributions: list[Contribution] = []
    for i, item in enumerate(items):
        where = f"contributions[{i}]"
        if not isinstance(item, dict):
            raise PlanError(f"{where}: must be an object")
        kind = _require(item, "type", where)
        if kind == "direct":
            contributions.append(Direct(_phase(_require(item, "phase", where), circuit, where)))
        elif kind == "sampled_transfer":
            caps = _require(item, "capacitors", where)
            if not isinstance(caps, list) or not caps:
                raise PlanError(f"{where}: capacitors must be a non-empty list")
            for name in caps:
                circuit.element(name, Capacitor)
            ota = _require(item, "inject_ota", where)
            circuit.element(ota, Ota)
            contributions.append(SampledTransfer(
                sample_phase=_phase(_require(item, "sample_phase", where), circuit, where),
                capacitors=tuple(caps),
                inject_ota=ota,
                transfer_phase=_phase(_require(item, "transfer_phase", where), circuit, where),
            ))
        else:
            raise PlanError(f"{where}: unknown contribution type {kind!r}")
    return NoiseBudget(float(temp), port, tuple(contributions), c_ref)


def parse_plan(text: str, circuit: Circuit) -> NoiseBudget:
    """Parse a JSON plan document and resolve every name against ``circuit``."""
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise PlanError(f"plan is not valid JSON: {exc}") from None
    return budget_from_dict(doc, circuit)


def budget_to_dict(budget: NoiseBudget) -> dict:
    items = []
    for c in budget.contributions:
        if isinstance(c, Direct):
            items.append({"type": "direct", "phase": c.phase})
        else:
            items.append({
                "type": "sampled_transfer",
                "sample_phase": c.sample_phase,
                "capacitors": list(c.capacitors),
                "inject_ota": c.inject_ota,
                "transfer_phase": c.transfer_phase,
            })
    doc = {"temperature_k": budget.temperature, "output_port": budget.output_port, "contributions": items}
    if budget.c_ref is not None:
        doc["c_ref"] = budget.c_ref
    return doc
