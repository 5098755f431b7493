"""Line-oriented scenario / parameter files.

One directive per line, ``#`` starts a comment::

    param <field> <value>              chain parameter stored in genesis
    sim horizon|block_interval|seed|trust_gating <value>
    node <name> kind=NN [abilities=a,b] [energy=x] [cpu=y]
    node <name> kind=AS [ad=a,b] [rd=r] [rp=p,q]
    at <hour> <node> join
    at <hour> <node> renew
    at <hour> <node> blame <target> [reason=<code>]
    at <hour> <node> misbehave
    at <hour> <node> revoke
    at <hour> <node> fork <length> [depth=<blocks>]

The first ``node`` is the founder: it crafts the genesis block at hour 0 and
never issues ``join``.  A parameter file is a scenario with only ``param``
lines.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

from .errors import ScenarioInvalid
from .identity import NodeDescriptor, NodeKind
from .params import FIELDS, ChainParams, coerce

VERBS = ("join", "renew", "blame", "misbehave", "revoke", "fork")
BUNDLED = ("ban_recovery",)


@dataclass(frozen=True)
class Action:
    hour: int
    node: str
    verb: str
    target: str | None = None
    reason: int = 1
    length: int = 0
    depth: int = 2
    line: int | None = None


@dataclass
class Scenario:
    params: ChainParams = field(default_factory=ChainParams)
    nodes: list[NodeDescriptor] = field(default_factory=list)
    horizon: int = 100
    block_interval: int = 1
    seed: int = 0
    trust_gating: bool = True
    actions: list[Action] = field(default_factory=list)

    @property
    def founder(self) -> NodeDescriptor:
        return self.nodes[0]

    def node_names(self) -> list[str]:
        return [n.name for n in self.nodes]

    def validate(self) -> "Scenario":
        if self.horizon <= 0:
            raise ScenarioInvalid("horizon must be positive")
        if self.block_interval <= 0:
            raise ScenarioInvalid("block_interval must be positive")
        if not self.nodes:
            raise ScenarioInvalid("scenario declares no nodes")
        problems = self.params.violations()
        if problems:
            raise ScenarioInvalid("invalid parameters: " + "; ".join(problems))
        names = self.node_names()
        for a in self.actions:
            if not 0 <= a.hour < self.horizon:
                raise ScenarioInvalid(f"action hour {a.hour} outside [0, {self.horizon})", a.line)
            if a.node not in names:
                raise ScenarioInvalid(f"unknown node {a.node!r}", a.line)
            if a.target is not None and a.target not in names:
                raise ScenarioInvalid(f"unknown target {a.target!r}", a.line)
            if a.verb == "join" and a.node == self.founder.name:
                raise ScenarioInvalid("the founder is authenticated by the genesis block", a.line)
        return self


def _kv(tokens, line):
    out = {}
    for tok in tokens:
        key, sep, value = tok.partition("=")
        if not sep:
            raise ScenarioInvalid(f"expected key=value, got {tok!r}", line)
        out[key] = value
    return out


def _int(text, what, line):
    try:
        return int(text)
    except ValueError:
        raise ScenarioInvalid(f"{what} must be an integer, got {text!r}", line) from None


def _list(value: str) -> tuple[str, ...]:
    return tuple(v for v in value.split(",") if v)


def _node(tokens, line) -> NodeDescriptor:
    if not tokens:
        raise ScenarioInvalid("node needs a name", line)
    name, opts = tokens[0], _kv(tokens[1:], line)
    kind = opts.pop("kind", "NN")
    try:
        if kind == NodeKind.NN.value:
            desc = NodeDescriptor.node(
                name,
                _list(opts.pop("abilities", "")),
                float(opts.pop("energy", 0)),
                float(opts.pop("cpu", 0)),
            )
        elif kind == NodeKind.AS.value:
            desc = NodeDescriptor.service(
                name, _list(opts.pop("ad", "")), _list(opts.pop("rd", "")), _list(opts.pop("rp", ""))
            )
        else:
            raise ScenarioInvalid(f"node kind must be NN or AS, got {kind!r}", line)
    except ValueError as exc:
        raise ScenarioInvalid(str(exc), line) from None
    if opts:
        raise ScenarioInvalid(f"unknown node options: {', '.join(sorted(opts))}", line)
    return desc


def _action(tokens, line) -> Action:
    if len(tokens) < 3:
        raise ScenarioInvalid("expected: at <hour> <node> <verb> ...", line)
    hour = _int(tokens[0], "hour", line)
    node, verb, rest = tokens[1], tokens[2], tokens[3:]
    if verb not in VERBS:
        raise ScenarioInvalid(f"unknown action {verb!r}", line)
    if verb == "blame":
        if not rest:
            raise ScenarioInvalid("blame needs a target", line)
        opts = _kv(rest[1:], line)
        reason = _int(opts.pop("reason", "1"), "reason", line)
        if opts or not 0 <= reason < 2**16:
            raise ScenarioInvalid("blame accepts only reason=<u16>", line)
        return Action(hour, node, verb, target=rest[0], reason=reason, line=line)
    if verb == "fork":
        if not rest:
            raise ScenarioInvalid("fork needs a length", line)
        length = _int(rest[0], "fork length", line)
        opts = _kv(rest[1:], line)
        depth = _int(opts.pop("depth", "2"), "fork depth", line)
        if opts or length < 0 or depth < 0:
            raise ScenarioInvalid("fork takes a non-negative length and optional depth=<blocks>", line)
        return Action(hour, node, verb, length=length, depth=depth, line=line)
    if rest:
        raise ScenarioInvalid(f"{verb} takes no arguments", line)
    return Action(hour, node, verb, line=line)


def parse_scenario(text: str, validate: bool = True) -> Scenario:
    params = {}
    sc = Scenario()
    for lineno, raw in enumerate(text.splitlines(), start=1):
        tokens = raw.split("#", 1)[0].split()
        if not tokens:
            continue
        head, args = tokens[0], tokens[1:]
        if head == "param":
            if len(args) != 2:
                raise ScenarioInvalid("expected: param <name> <value>", lineno)
            if args[0] not in FIELDS:
                raise ScenarioInvalid(f"unknown parameter {args[0]!r}", lineno)
            try:
                params[args[0]] = coerce(args[0], args[1])
            except ValueError:
                raise ScenarioInvalid(f"bad value for {args[0]}: {args[1]!r}", lineno) from None
        elif head == "sim":
            if len(args) != 2:
                raise ScenarioInvalid("expected: sim <setting> <value>", lineno)
            key, value = args
            if key in ("horizon", "block_interval", "seed"):
                setattr(sc, key, _int(value, key, lineno))
            elif key == "trust_gating":
                if value not in ("on", "off"):
                    raise ScenarioInvalid("trust_gating is on or off", lineno)
                sc.trust_gating = value == "on"
            else:
                raise ScenarioInvalid(f"unknown sim setting {key!r}", lineno)
        elif head == "node":
            desc = _node(args, lineno)
            if desc.name in sc.node_names():
                raise ScenarioInvalid(f"duplicate node {desc.name!r}", lineno)
            sc.nodes.append(desc)
        elif head == "at":
            sc.actions.append(_action(args, lineno))
        else:
            raise ScenarioInvalid(f"unknown directive {head!r}", lineno)
    sc.params = dataclasses.replace(sc.params, **params)
    if sc.seed < 0:
        raise ScenarioInvalid("seed must be non-negative")
    return sc.validate() if validate else sc


def parse_params(text: str) -> ChainParams:
    """Read only the ``param`` lines of a parameter/scenario file (not validated)."""
    return parse_scenario(text, validate=False).params


def bundled_text(name: str) -> str:
    return resources.files("batm").joinpath("scenarios").joinpath(f"{name}.txt").read_text()


def load_scenario(source) -> Scenario:
    """Load a scenario from a path, or a bundled one by name (``ban_recovery``)."""
    if str(source) in BUNDLED and not Path(source).exists():
        return parse_scenario(bundled_text(str(source)))
    return parse_scenario(Path(source).read_text())
