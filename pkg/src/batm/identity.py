"""Node and service descriptors, node key material, and authentication state.

Authentication state is never stored: ``LedgerState`` folds confirmed blocks
into per-node records, and every status or key lookup is answered from that
fold.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field, replace

from .crypto import KeyPair, KeyRole, derive_subkeys, generate_master, sha256
from .errors import DuplicateService, NoSuchNode, NotAService, NoValidKey
from .params import ChainParams, decode_params
from .payloads import PayloadKind


class NodeKind(str, enum.Enum):
    NN = "NN"
    AS = "AS"


@dataclass(frozen=True)
class NodeDescriptor:
    """A network node (name, energy, cpu + abilities) or an available service
    (ability dependencies, resource dependencies, resources provided)."""

    kind: NodeKind
    name: str
    energy: float = 0.0
    cpu: float = 0.0
    abilities: tuple[str, ...] = ()
    ability_deps: tuple[str, ...] = ()
    resource_deps: tuple[str, ...] = ()
    resources: tuple[str, ...] = ()

    def __post_init__(self):
        if self.kind is NodeKind.NN and (self.ability_deps or self.resource_deps or self.resources):
            raise ValueError(f"NN {self.name!r} cannot carry service dependency vectors")
        if self.kind is NodeKind.AS and (self.abilities or self.energy or self.cpu):
            raise ValueError(f"AS {self.name!r} cannot carry node properties or abilities")

    @property
    def np(self) -> tuple:
        return (self.name, self.energy, self.cpu)

    @classmethod
    def node(cls, name, abilities=(), energy=0.0, cpu=0.0) -> "NodeDescriptor":
        return cls(NodeKind.NN, name, energy, cpu, tuple(abilities))

    @classmethod
    def service(cls, name, ability_deps=(), resource_deps=(), resources=()) -> "NodeDescriptor":
        return cls(NodeKind.AS, name, ability_deps=tuple(ability_deps),
                   resource_deps=tuple(resource_deps), resources=tuple(resources))


@dataclass(frozen=True)
class ServiceRegistry:
    services: tuple[NodeDescriptor, ...] = ()

    def names(self) -> list[str]:
        return [s.name for s in self.services]

    def __contains__(self, name) -> bool:
        return name in self.names()


def register_service(registry: ServiceRegistry, descriptor: NodeDescriptor) -> ServiceRegistry:
    if descriptor.kind is not NodeKind.AS:
        raise NotAService(f"{descriptor.name!r} is a {descriptor.kind.value}, not a service")
    if descriptor.name in registry:
        raise DuplicateService(descriptor.name)
    return ServiceRegistry(registry.services + (descriptor,))


@dataclass
class NodeIdentity:
    """Secret key material held by one node, with its current subkeys."""

    descriptor: NodeDescriptor
    params: ChainParams
    master: KeyPair
    signature_key: KeyPair
    encryption_key: KeyPair
    history: list[tuple[KeyPair, KeyPair]] = field(default_factory=list)
    staged: tuple[KeyPair, KeyPair] | None = None

    @classmethod
    def create(cls, descriptor: NodeDescriptor, params: ChainParams, now: int = 0, rng=None) -> "NodeIdentity":
        master = generate_master(now, params, rng)
        sig, enc = derive_subkeys(master, now, params, rng)
        return cls(descriptor, params, master, sig, enc)

    @property
    def node_id(self) -> bytes:
        return sha256(self.master.public)

    @property
    def name(self) -> str:
        return self.descriptor.name

    def stage(self, sig: KeyPair, enc: KeyPair) -> None:
        self.staged = (sig, enc)

    def keys(self):
        yield self.signature_key, self.encryption_key
        yield from self.history
        if self.staged:
            yield self.staged

    def key_by_public(self, public: bytes) -> KeyPair:
        for sig, _ in self.keys():
            if sig.public == public:
                return sig
        raise NoValidKey("this identity never held the requested signature key")

    def activate(self, signature_public: bytes) -> None:
        """Make the subkey pair whose signature key is ``signature_public`` current."""
        if self.signature_key.public == signature_public:
            return
        for pair in list(self.keys()):
            if pair[0].public == signature_public:
                self.history.append((self.signature_key, self.encryption_key))
                self.signature_key, self.encryption_key = pair
                if self.staged is pair:
                    self.staged = None
                return
        raise NoValidKey("unknown subkey")


# -- derived ledger state -----------------------------------------------------


@dataclass(frozen=True)
class AuthState:
    status: str  # unknown | pending | authenticated | banned | revoked
    authenticated_at: int | None = None
    banned_until: int | None = None

    @property
    def is_authenticated(self) -> bool:
        return self.status in ("authenticated", "banned")

    @property
    def is_banned(self) -> bool:
        return self.status == "banned"


@dataclass(frozen=True)
class SubkeyEntry:
    signature_public: bytes
    encryption_public: bytes
    valid_from: int
    valid_until: int
    effective_from: int  # timestamp of the block that announced the key


@dataclass(frozen=True)
class NodeRecord:
    node_id: bytes
    master_public: bytes
    master_valid_from: int
    master_valid_until: int
    cp_height: int
    authenticated_at: int | None
    keys: tuple[SubkeyEntry, ...]
    renews: tuple[int, ...] = ()
    bans: tuple[int, ...] = ()
    revoked_at: int | None = None


@dataclass(frozen=True)
class BlameRecord:
    blamer_id: bytes
    target_id: bytes
    at: int


class LedgerState:
    """Fold of a block prefix into node records and rate-limit bookkeeping.

    Instances are treated as immutable: ``applied`` and ``settled`` return
    new states.  Credentials and revokes from the most recently applied block
    stay *unsettled* until the timestamp of its successor is known, because
    that successor is what confirms them.
    """

    def __init__(self, params: ChainParams | None = None):
        self.params = params
        self.height = 0
        self.tip_timestamp: int | None = None
        self.last_ma_random = b""
        self.nodes: dict[bytes, NodeRecord] = {}
        self._last_blame: dict[tuple[bytes, bytes], int] = {}
        self._blames: dict[tuple[int, int], BlameRecord] = {}
        self._cited: frozenset = frozenset()
        self._unsettled: tuple[tuple[str, bytes], ...] = ()

    def _clone(self) -> "LedgerState":
        new = LedgerState.__new__(LedgerState)
        new.__dict__.update(self.__dict__)
        new.nodes = dict(self.nodes)
        new._last_blame = dict(self._last_blame)
        new._blames = dict(self._blames)
        return new

    def settled(self, successor_ts: int) -> "LedgerState":
        if not self._unsettled:
            return self
        new = self._clone()
        for what, node_id in self._unsettled:
            rec = new.nodes[node_id]
            if what == "auth":
                new.nodes[node_id] = replace(rec, authenticated_at=successor_ts)
            else:
                new.nodes[node_id] = replace(rec, revoked_at=successor_ts)
        new._unsettled = ()
        return new

    def applied(self, block) -> "LedgerState":
        """State after ``block`` (which must be the next block) is appended."""
        ts = block.header.timestamp
        new = self.settled(ts)._clone()
        k = self.height
        if block.params_record is not None:
            new.params = decode_params(block.params_record)
        unsettled = []
        for idx, p in enumerate(block.payloads):
            kind, body = p.kind, p.body
            if kind is PayloadKind.MINER_APPROVAL:
                new.last_ma_random = body.new_random
            elif kind is PayloadKind.CREDENTIALS:
                new.nodes[p.issuer_id] = _record_from_credentials(body, k, ts)
                unsettled.append(("auth", p.issuer_id))
            elif kind is PayloadKind.RENEW:
                rec = new.nodes[p.issuer_id]
                entry = SubkeyEntry(body.signature_public, body.encryption_public,
                                    body.subkey_valid_from, body.subkey_valid_until, ts)
                new.nodes[p.issuer_id] = replace(rec, keys=rec.keys + (entry,), renews=rec.renews + (ts,))
            elif kind is PayloadKind.BLAME:
                new._last_blame[(p.issuer_id, body.target_id)] = ts
                new._blames[(k, idx)] = BlameRecord(p.issuer_id, body.target_id, ts)
            elif kind is PayloadKind.BAN:
                rec = new.nodes[body.target_id]
                new.nodes[body.target_id] = replace(rec, bans=rec.bans + (ts,))
                new._cited = new._cited | frozenset(body.evidence)
            elif kind is PayloadKind.REVOKE:
                unsettled.append(("revoke", p.issuer_id))
                if body.replacement is not None:
                    rid = body.replacement.node_id
                    new.nodes[rid] = _record_from_credentials(body.replacement, k, ts)
                    unsettled.append(("auth", rid))
        new._unsettled = tuple(unsettled)
        new.height = k + 1
        new.tip_timestamp = ts
        return new

    # -- queries

    def knows(self, node_id: bytes) -> bool:
        return node_id in self.nodes

    def record(self, node_id: bytes) -> NodeRecord:
        try:
            return self.nodes[node_id]
        except KeyError:
            raise NoSuchNode(node_id.hex()) from None

    def status(self, node_id: bytes, at: int) -> AuthState:
        rec = self.nodes.get(node_id)
        if rec is None:
            return AuthState("unknown")
        if rec.revoked_at is not None and rec.revoked_at <= at:
            return AuthState("revoked", rec.authenticated_at)
        if rec.authenticated_at is None or rec.authenticated_at > at:
            return AuthState("pending")
        until = max((b + self.params.t_banrecover for b in rec.bans if b <= at), default=None)
        if until is not None and at < until:
            return AuthState("banned", rec.authenticated_at, until)
        return AuthState("authenticated", rec.authenticated_at)

    def key_for(self, node_id: bytes, role: KeyRole, at: int) -> bytes:
        rec = self.record(node_id)
        if role is KeyRole.MASTER:
            if rec.master_valid_from <= at < rec.master_valid_until:
                return rec.master_public
            raise NoValidKey(f"master key not valid at {at}")
        current = None
        for entry in rec.keys:
            if entry.effective_from <= at:
                current = entry
        if current is None:
            raise NoValidKey(f"no subkey announced by {at}")
        if not current.valid_from <= at < current.valid_until:
            raise NoValidKey(f"current subkey valid over [{current.valid_from}, {current.valid_until}), at={at}")
        return current.signature_public if role is KeyRole.SIGNATURE else current.encryption_public

    def renew_times(self, node_id: bytes) -> tuple[int, ...]:
        return self.nodes[node_id].renews if node_id in self.nodes else ()

    def last_blame(self, blamer_id: bytes, target_id: bytes) -> int | None:
        return self._last_blame.get((blamer_id, target_id))

    def blame_at(self, ref) -> BlameRecord | None:
        return self._blames.get(tuple(ref))

    def blames_on(self, target_id: bytes):
        """``(ref, BlameRecord)`` pairs for every confirmed blame on ``target_id``."""
        return [(ref, b) for ref, b in self._blames.items() if b.target_id == target_id]

    def is_cited(self, ref) -> bool:
        return tuple(ref) in self._cited

    def authenticated_ids(self, at: int) -> list[bytes]:
        return [nid for nid in self.nodes if self.status(nid, at).is_authenticated]


def _record_from_credentials(body, height: int, ts: int) -> NodeRecord:
    entry = SubkeyEntry(body.signature_public, body.encryption_public,
                        body.subkey_valid_from, body.subkey_valid_until, ts)
    return NodeRecord(
        node_id=body.node_id,
        master_public=body.master_public,
        master_valid_from=body.master_valid_from,
        master_valid_until=body.master_valid_until,
        cp_height=height,
        authenticated_at=None,
        keys=(entry,),
    )


def auth_state(node_id: bytes, chain, at: int) -> AuthState:
    """Authentication state of ``node_id`` at hour ``at`` from confirmed payloads.

    A node whose credentials sit in the unconfirmed tip block is ``pending``.
    """
    state = chain.confirmed_view().status(node_id, at)
    if state.status == "unknown" and any(
        p.issuer_id == node_id and p.kind is PayloadKind.CREDENTIALS for p in chain.tip.payloads
    ):
        return AuthState("pending")
    return state


def key_for(node_id: bytes, role: KeyRole, at: int, chain) -> bytes:
    return chain.confirmed_view().key_for(node_id, role, at)


def n_authenticated(chain, at: int) -> int:
    return len(chain.confirmed_view().authenticated_ids(at))
