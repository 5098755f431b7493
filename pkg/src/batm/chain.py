"""Blocks, proof-of-work, block validity, fork choice and the chain file.

Header layout (big-endian, 84 bytes)::

    version u32 | prev_header_hash 32 | merkle_root 32 | timestamp u32
    | difficulty_bits u32 | nonce u64

Block layout::

    header | has_params u8 | [u32 len | parameter record] | u32 count
    | (u32 len | payload)*

Chain file::

    "BATM" | format version u16 | block count u64 | (u32 len | block)*
"""

from __future__ import annotations

import hashlib
import struct
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path

from . import _codec as c
from .crypto import ZERO_DIGEST, KeyRole, Signature, merkle_root, sha256, verify
from .errors import (
    BlockTooLarge,
    CorruptFile,
    GenesisMismatch,
    InvalidBlock,
    MalformedBlock,
    MalformedPayload,
    MinerBanned,
    MinerNotAuthenticated,
    OutOfRange,
    SelfPayloadIncluded,
    ValidationFailed,
)
from .identity import LedgerState, NodeIdentity
from .params import ChainParams, decode_params, encode_params
from .payloads import (
    MinerApprovalBody,
    Payload,
    PayloadKind,
    Verdict,
    check_payload,
    decode_payload,
    issue_credentials,
    miner_approval,
    seal_payload,
)

BLOCK_VERSION = 1
FILE_MAGIC = b"BATM"
FILE_VERSION = 1

_HEADER = struct.Struct(">I32s32sIIQ")
HEADER_SIZE = _HEADER.size  # 84
_NONCE = struct.Struct(">Q")


@dataclass(frozen=True)
class BlockHeader:
    version: int = BLOCK_VERSION
    prev_header_hash: bytes = ZERO_DIGEST
    merkle_root: bytes = ZERO_DIGEST
    timestamp: int = 0
    difficulty_bits: int = 0
    nonce: int = 0


def encode_header(h: BlockHeader) -> bytes:
    return _HEADER.pack(h.version, h.prev_header_hash, h.merkle_root, h.timestamp, h.difficulty_bits, h.nonce)


def decode_header(data: bytes) -> BlockHeader:
    if len(data) != HEADER_SIZE:
        raise MalformedBlock(f"header must be {HEADER_SIZE} bytes, got {len(data)}")
    return BlockHeader(*_HEADER.unpack(data))


def header_hash(h: BlockHeader) -> bytes:
    return sha256(encode_header(h))


def meets_difficulty(digest: bytes, bits: int) -> bool:
    """True when ``digest`` has at least ``bits`` leading zero bits."""
    if bits <= 0:
        return True
    return int.from_bytes(digest, "big") >> (256 - bits) == 0


def solve(header: BlockHeader) -> BlockHeader:
    """Search nonces from 0 until the header hash meets its difficulty."""
    if header.difficulty_bits <= 0:
        return header
    prefix = encode_header(header)[:-8]
    target = (1 << (256 - header.difficulty_bits)).to_bytes(32, "big") if header.difficulty_bits < 256 else None
    s, pack = hashlib.sha256, _NONCE.pack
    nonce = 0
    while True:
        if s(prefix + pack(nonce)).digest() < target:
            return BlockHeader(header.version, header.prev_header_hash, header.merkle_root,
                               header.timestamp, header.difficulty_bits, nonce)
        nonce += 1


@dataclass(frozen=True)
class Block:
    header: BlockHeader
    payloads: tuple[Payload, ...]
    # canonical parameter record, genesis only
    params_record: bytes | None = None

    def leaves(self) -> list[bytes]:
        out = [self.params_record] if self.params_record is not None else []
        return out + [p.encode() for p in self.payloads]

    def encode(self) -> bytes:
        out = bytearray(encode_header(self.header))
        if self.params_record is None:
            out += c.u8(0)
        else:
            out += c.u8(1) + c.blob32(self.params_record)
        out += c.u32(len(self.payloads))
        for p in self.payloads:
            out += c.blob32(p.encode())
        return bytes(out)

    @cached_property
    def hash(self) -> bytes:
        return header_hash(self.header)

    @property
    def timestamp(self) -> int:
        return self.header.timestamp

    @property
    def miner_approvals(self) -> list[Payload]:
        return [p for p in self.payloads if p.kind is PayloadKind.MINER_APPROVAL]

    @property
    def miner_id(self) -> bytes | None:
        mas = self.miner_approvals
        return mas[0].issuer_id if len(mas) == 1 else None

    @property
    def params(self) -> ChainParams | None:
        return decode_params(self.params_record) if self.params_record is not None else None


def decode_block(data: bytes) -> Block:
    r = c.Reader(data)
    try:
        header = decode_header(r.take(HEADER_SIZE))
        flag = r.u8()
        if flag not in (0, 1):
            raise MalformedBlock(f"bad parameter flag {flag}")
        record = r.blob32() if flag else None
        payloads = tuple(decode_payload(r.blob32()) for _ in range(r.u32()))
    except c.Truncated as exc:
        raise MalformedBlock(f"truncated block: {exc}") from None
    except MalformedPayload as exc:
        raise MalformedBlock(str(exc)) from None
    if not r.done():
        raise MalformedBlock("trailing bytes after block")
    return Block(header, payloads, record)


# -- chain ------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class Chain:
    """Immutable block sequence from genesis; extending returns a new chain.

    Ledger states for every prefix are memoised and shared with derived
    chains, so repeated validation of a growing chain stays linear.
    """

    blocks: tuple[Block, ...]
    _states: list = field(default_factory=list, repr=False, compare=False)

    def __post_init__(self):
        if not self.blocks:
            raise ValueError("a chain holds at least its genesis block")

    def __len__(self) -> int:
        return len(self.blocks)

    def __eq__(self, other) -> bool:
        return isinstance(other, Chain) and [b.encode() for b in self.blocks] == [b.encode() for b in other.blocks]

    @property
    def genesis(self) -> Block:
        return self.blocks[0]

    @property
    def tip(self) -> Block:
        return self.blocks[-1]

    @property
    def height(self) -> int:
        return len(self.blocks) - 1

    @cached_property
    def params(self) -> ChainParams:
        return self.genesis.params

    def extend(self, block: Block) -> "Chain":
        return Chain(self.blocks + (block,), list(self._states))

    def append(self, block: Block) -> "Chain":
        verdict = validate_block(block, self.tip, self)
        if not verdict:
            raise InvalidBlock(verdict.reasons)
        return self.extend(block)

    def prefix(self, n: int) -> "Chain":
        """The first ``n`` blocks as a chain."""
        return Chain(self.blocks[:n], self._states[: n + 1])

    def index_of(self, block: Block) -> int:
        h = block.hash
        for i in range(len(self.blocks) - 1, -1, -1):
            if self.blocks[i].hash == h:
                return i
        raise OutOfRange("block is not part of this chain")

    def state_after(self, n: int) -> LedgerState:
        """Ledger state folded over ``blocks[:n]`` (last block unsettled)."""
        states = self._states
        if not states:
            states.append(LedgerState(self.params))
        while len(states) <= n:
            states.append(states[-1].applied(self.blocks[len(states) - 1]))
        return states[n]

    def view_at(self, n: int, ts: int) -> LedgerState:
        """State seen by a candidate block at position ``n`` stamped ``ts``."""
        return self.state_after(n).settled(ts)

    def next_view(self, ts: int) -> LedgerState:
        return self.view_at(len(self.blocks), ts)

    def confirmed_view(self) -> LedgerState:
        """Payloads of every block that has a successor, i.e. all but the tip."""
        if len(self.blocks) == 1:
            return self.state_after(0)
        return self.view_at(len(self.blocks) - 1, self.tip.timestamp)


# -- validity ---------------------------------------------------------------


def payload_slots(p: Payload) -> list[tuple]:
    """Keys that at most one payload per block may claim."""
    body = p.body
    if p.kind is PayloadKind.CREDENTIALS:
        return [("node", p.issuer_id)]
    if p.kind is PayloadKind.RENEW:
        return [("renew", p.issuer_id)]
    if p.kind is PayloadKind.BLAME:
        return [("blame", p.issuer_id, body.target_id)]
    if p.kind is PayloadKind.BAN:
        return [("ban", body.target_id)] + [("evidence", tuple(ref)) for ref in body.evidence]
    if p.kind is PayloadKind.REVOKE:
        slots = [("revoke", p.issuer_id)]
        if body.replacement is not None:
            slots.append(("node", body.replacement.node_id))
        return slots
    return [("ma",)]


def check_in_block(p: Payload, view: LedgerState, at: int, taken: set) -> str | None:
    """``check_payload`` plus the one-per-block rules; claims slots on success."""
    reason = check_payload(p, view, at)
    if reason:
        return reason
    slots = payload_slots(p)
    if any(s in taken for s in slots):
        return f"conflicts with another {p.kind.name} payload in the same block"
    taken.update(slots)
    return None


def block_size(block: Block) -> int:
    return len(block.encode())


def _structural(block: Block, prev: Block, params: ChainParams) -> list[str]:
    reasons = []
    h = block.header
    if h.prev_header_hash != prev.hash:
        reasons.append("prev_header_hash does not match the predecessor")
    if h.version != BLOCK_VERSION:
        reasons.append(f"unsupported block version {h.version}")
    if block.params_record is not None:
        reasons.append("parameter record outside the genesis block")
    if h.difficulty_bits != params.difficulty_bits:
        reasons.append(f"difficulty {h.difficulty_bits} differs from chain difficulty {params.difficulty_bits}")
    if h.timestamp < prev.timestamp:
        reasons.append("timestamp decreases")
    return reasons


def _payload_checks(block: Block, view: LedgerState) -> list[str]:
    reasons = []
    at = block.timestamp
    mas = block.miner_approvals
    if len(mas) != 1:
        return [f"block carries {len(mas)} miner approval payloads, expected exactly one"]
    # (2) miner approval
    reason = check_payload(mas[0], view, at)
    if reason:
        reasons.append(f"invalid miner approval: {reason}")
    miner = mas[0].issuer_id
    # (3) nothing issued by the miner itself
    if any(p.issuer_id == miner for p in block.payloads if p.kind is not PayloadKind.MINER_APPROVAL):
        reasons.append("block has a payload issued by its miner")
    # (4) every other payload
    taken = set()
    for i, p in enumerate(block.payloads):
        if p.kind is PayloadKind.MINER_APPROVAL:
            continue
        reason = check_in_block(p, view, at, taken)
        if reason:
            reasons.append(f"payload {i} ({p.kind.name}): {reason}")
    return reasons


def validate_block(block: Block, prev: Block, chain: Chain) -> Verdict:
    """Check ``block`` as the successor of ``prev`` within ``chain``.

    Covers proof-of-work, the miner approval, the no-self-payload rule,
    per-payload validity, the Merkle root and the size cap.
    """
    params = chain.params
    n = chain.index_of(prev) + 1
    reasons = _structural(block, prev, params)
    # (1) proof of work
    if not meets_difficulty(block.hash, params.difficulty_bits):
        reasons.append("header hash does not meet the difficulty target")
    reasons += _payload_checks(block, chain.view_at(n, block.timestamp))
    if block.header.merkle_root != merkle_root(block.leaves()):
        reasons.append("merkle root does not match payloads")
    if block_size(block) > params.max_block_bytes:
        reasons.append(f"block exceeds {params.max_block_bytes} bytes")
    return Verdict.of(reasons)


def validate_genesis(block: Block) -> Verdict:
    """Checks for block 0.

    Proof-of-work is not required; instead the nonce must be zero and the
    timestamp must match the signed founder payloads, so every header field
    is still bound to signed or recomputable content.
    """
    reasons = []
    h = block.header
    if h.prev_header_hash != ZERO_DIGEST:
        reasons.append("genesis must reference the zero digest")
    if h.version != BLOCK_VERSION:
        reasons.append(f"unsupported block version {h.version}")
    if block.params_record is None:
        return Verdict.of(reasons + ["genesis lacks the parameter record"])
    try:
        params = decode_params(block.params_record)
    except MalformedBlock as exc:
        return Verdict.of(reasons + [str(exc)])
    reasons += params.violations()
    if h.difficulty_bits != params.difficulty_bits:
        reasons.append("genesis difficulty differs from the parameter record")
    if h.merkle_root != merkle_root(block.leaves()):
        reasons.append("merkle root does not match payloads")
    if block_size(block) > params.max_block_bytes:
        reasons.append(f"block exceeds {params.max_block_bytes} bytes")

    kinds = sorted(p.kind for p in block.payloads)
    if kinds != [PayloadKind.MINER_APPROVAL, PayloadKind.CREDENTIALS]:
        return Verdict.of(reasons + ["genesis must hold exactly the founder credentials and one MA"])
    ma = block.miner_approvals[0]
    cp = next(p for p in block.payloads if p.kind is PayloadKind.CREDENTIALS)
    view = LedgerState(params)
    reason = check_payload(cp, view, h.timestamp)
    if reason:
        reasons.append(f"founder credentials: {reason}")
    if ma.issuer_id != cp.issuer_id:
        reasons.append("genesis MA not issued by the founder")
    if not ma.body.prev_random_signature.is_empty:
        reasons.append("genesis MA must not sign a previous random value")
    # genesis is not mined, so its header is pinned to signed content instead
    if h.nonce != 0:
        reasons.append("genesis nonce must be zero")
    if not ma.issued_at == cp.issued_at == h.timestamp:
        reasons.append("genesis timestamp must equal the issue time of the founder payloads")
    if not verify(cp.body.signature_public, sha256(ma.signing_bytes()), ma.signed_digest):
        reasons.append("genesis MA not signed by the founder's signature subkey")
    return Verdict.of(reasons)


def validate_chain(chain: Chain) -> Chain:
    """Revalidate every block; raise ``ValidationFailed`` at the first bad one."""
    verdict = validate_genesis(chain.genesis)
    if not verdict:
        raise ValidationFailed(0, verdict.reasons)
    built = Chain(chain.blocks[:1])
    for k in range(1, len(chain.blocks)):
        block = chain.blocks[k]
        verdict = validate_block(block, built.tip, built)
        if not verdict:
            raise ValidationFailed(k, verdict.reasons)
        built = built.extend(block)
    return built


# -- construction -------------------------------------------------------------


def make_genesis(params: ChainParams, founder: NodeIdentity, seed_random: bytes, now: int = 0) -> Block:
    """Block 0: parameter record, founder credentials and a seed MA."""
    params.validate()
    if len(seed_random) != 32:
        raise ValueError("seed_random must be 32 bytes")
    cp = issue_credentials(founder, now)
    ma = seal_payload(
        PayloadKind.MINER_APPROVAL,
        founder.node_id,
        now,
        MinerApprovalBody(seed_random, Signature.empty()),
        founder.signature_key,
    )
    record = encode_params(params)
    payloads = (ma, cp)
    root = merkle_root([record] + [p.encode() for p in payloads])
    header = BlockHeader(BLOCK_VERSION, ZERO_DIGEST, root, now, params.difficulty_bits, 0)
    return Block(header, payloads, record)


def seal_block(prev: Block, payloads, now: int, params: ChainParams, pow: bool = True) -> Block:
    """Assemble a block over ``payloads`` (no rule checks) and solve its proof-of-work."""
    payloads = tuple(payloads)
    root = merkle_root([p.encode() for p in payloads])
    header = BlockHeader(BLOCK_VERSION, prev.hash, root, now, params.difficulty_bits, 0)
    if pow:
        header = solve(header)
    return Block(header, payloads)


def mine_block(prev: Block, payloads, miner: NodeIdentity, now: int, chain: Chain, rng=None) -> Block:
    """Mine a block on top of ``prev`` holding ``payloads`` and a fresh MA.

    Raises before any hashing if the miner may not mine or the payload set
    would make the block invalid.
    """
    params = chain.params
    n = chain.index_of(prev) + 1
    view = chain.view_at(n, now)
    status = view.status(miner.node_id, now)
    if not status.is_authenticated:
        raise MinerNotAuthenticated(f"{miner.name} is {status.status}")
    if status.is_banned:
        raise MinerBanned(f"{miner.name} banned until {status.banned_until}")
    payloads = list(payloads)
    if any(p.issuer_id == miner.node_id for p in payloads):
        raise SelfPayloadIncluded(f"{miner.name} cannot include its own payloads")

    key = miner.key_by_public(view.key_for(miner.node_id, KeyRole.SIGNATURE, now))
    ma = miner_approval(miner, key, view.last_ma_random, now, rng)
    draft = seal_block(prev, [ma] + payloads, now, params, pow=False)
    if block_size(draft) > params.max_block_bytes:
        raise BlockTooLarge(f"{block_size(draft)} bytes exceeds {params.max_block_bytes}")
    reasons = _structural(draft, prev, params) + _payload_checks(draft, view)
    if reasons:
        raise InvalidBlock(reasons)
    return Block(solve(draft.header), draft.payloads)


# -- fork choice and confirmation ------------------------------------------


def select_chain(candidates) -> Chain:
    """Longest chain wins; equal lengths go to the smaller tip header hash."""
    candidates = list(candidates)
    if not candidates:
        raise ValueError("no candidate chains")
    genesis = candidates[0].genesis.hash
    if any(ch.genesis.hash != genesis for ch in candidates):
        raise GenesisMismatch("candidate chains start from different genesis blocks")
    return min(candidates, key=lambda ch: (-len(ch), ch.tip.hash))


def confirmed_payloads(chain: Chain, height: int) -> list[Payload]:
    """Payloads of blocks ``0 .. height-1``: those a block at ``height`` confirms."""
    if not 0 <= height < len(chain):
        raise OutOfRange(f"height {height} outside chain of length {len(chain)}")
    return [p for b in chain.blocks[:height] for p in b.payloads]


# -- persistence ------------------------------------------------------------


def encode_chain(chain: Chain) -> bytes:
    out = bytearray(FILE_MAGIC + c.u16(FILE_VERSION) + c.u64(len(chain.blocks)))
    for b in chain.blocks:
        out += c.blob32(b.encode())
    return bytes(out)


def decode_chain(data: bytes, validate: bool = True) -> Chain:
    if len(data) == 0:
        raise CorruptFile("empty chain file")
    r = c.Reader(data)
    try:
        if r.take(4) != FILE_MAGIC:
            raise CorruptFile("not a BATM chain file")
        version = r.u16()
        if version != FILE_VERSION:
            raise CorruptFile(f"unsupported chain file version {version}")
        count = r.u64()
    except c.Truncated:
        raise CorruptFile("truncated chain file header") from None
    if count == 0:
        raise CorruptFile("chain file holds no blocks")
    blocks = []
    for k in range(count):
        try:
            raw = r.blob32()
        except c.Truncated:
            raise CorruptFile(f"truncated before block {k}", height=k) from None
        try:
            blocks.append(decode_block(raw))
        except MalformedBlock as exc:
            raise CorruptFile(f"block {k}: {exc}", height=k) from None
    if not r.done():
        raise CorruptFile("trailing bytes after the last block")
    try:
        chain = Chain(tuple(blocks))
        if validate:
            chain = validate_chain(chain)
    except MalformedBlock as exc:
        raise ValidationFailed(0, [str(exc)]) from None
    return chain


def save_chain(chain: Chain, path) -> None:
    Path(path).write_bytes(encode_chain(chain))


def load_chain(path) -> Chain:
    return decode_chain(Path(path).read_bytes())
