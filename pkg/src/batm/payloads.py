"""The six payload kinds, their canonical encoding and their validity rules.

Canonical layout::

    tag u8 | issuer_id 32 | issued_at u64 | body | signed_digest

``signed_digest`` is a signature over SHA-256 of every preceding byte and
is encoded as ``signer_key_id 32 | u16 length | signature bytes``.  Revoke
payloads are signed with the issuer's master key, every other kind with the
issuer's current signature subkey.
"""

from __future__ import annotations

import enum
import os
from dataclasses import dataclass, field
from typing import TYPE_CHECKING, Union

from . import _codec as c
from .crypto import (
    DIGEST_SIZE,
    KeyPair,
    KeyRole,
    Signature,
    certification_message,
    derive_subkeys,
    sha256,
    sign,
    verify,
)
from .errors import KeyExpired, MalformedPayload, MissingKey, NoSuchNode, NoValidKey

if TYPE_CHECKING:
    from .identity import LedgerState, NodeIdentity


class PayloadKind(enum.IntEnum):
    MINER_APPROVAL = 0x01
    CREDENTIALS = 0x02
    RENEW = 0x03
    BLAME = 0x04
    BAN = 0x05
    REVOKE = 0x06


@dataclass(frozen=True)
class MinerApprovalBody:
    new_random: bytes
    prev_random_signature: Signature


@dataclass(frozen=True)
class CredentialsBody:
    master_public: bytes
    master_valid_from: int
    master_valid_until: int
    signature_public: bytes
    encryption_public: bytes
    subkey_valid_from: int
    subkey_valid_until: int
    signature_cert: Signature
    encryption_cert: Signature

    @property
    def node_id(self) -> bytes:
        return sha256(self.master_public)


@dataclass(frozen=True)
class RenewBody:
    signature_public: bytes
    encryption_public: bytes
    subkey_valid_from: int
    subkey_valid_until: int
    signature_cert: Signature
    encryption_cert: Signature


@dataclass(frozen=True)
class BlameBody:
    target_id: bytes
    reason_code: int = 0


@dataclass(frozen=True)
class BanBody:
    target_id: bytes
    # (block height, payload index) of confirmed Blame payloads on the target
    evidence: tuple[tuple[int, int], ...]


@dataclass(frozen=True)
class RevokeBody:
    revoked_master_id: bytes
    replacement: CredentialsBody | None = None


Body = Union[MinerApprovalBody, CredentialsBody, RenewBody, BlameBody, BanBody, RevokeBody]

_BODY_KIND = {
    MinerApprovalBody: PayloadKind.MINER_APPROVAL,
    CredentialsBody: PayloadKind.CREDENTIALS,
    RenewBody: PayloadKind.RENEW,
    BlameBody: PayloadKind.BLAME,
    BanBody: PayloadKind.BAN,
    RevokeBody: PayloadKind.REVOKE,
}


@dataclass(frozen=True)
class Payload:
    kind: PayloadKind
    issuer_id: bytes
    issued_at: int
    body: Body
    signed_digest: Signature = field(default_factory=Signature.empty)

    def signing_bytes(self) -> bytes:
        return (
            c.u8(self.kind)
            + self.issuer_id
            + c.u64(self.issued_at)
            + _encode_body(self.kind, self.body)
        )

    def encode(self) -> bytes:
        return self.signing_bytes() + _encode_sig(self.signed_digest)

    @property
    def digest(self) -> bytes:
        return sha256(self.encode())

    @property
    def target_id(self) -> bytes | None:
        return getattr(self.body, "target_id", None)


# -- codec -----------------------------------------------------------------


def _encode_sig(sig: Signature) -> bytes:
    return sig.signer_key_id + c.blob16(sig.value)


def _decode_sig(r: c.Reader) -> Signature:
    key_id = r.take(DIGEST_SIZE)
    return Signature(r.blob16(), key_id)


def _encode_credentials(b: CredentialsBody) -> bytes:
    return (
        c.blob16(b.master_public)
        + c.u64(b.master_valid_from)
        + c.u64(b.master_valid_until)
        + c.blob16(b.signature_public)
        + c.blob16(b.encryption_public)
        + c.u64(b.subkey_valid_from)
        + c.u64(b.subkey_valid_until)
        + _encode_sig(b.signature_cert)
        + _encode_sig(b.encryption_cert)
    )


def _decode_credentials(r: c.Reader) -> CredentialsBody:
    return CredentialsBody(
        master_public=r.blob16(),
        master_valid_from=r.u64(),
        master_valid_until=r.u64(),
        signature_public=r.blob16(),
        encryption_public=r.blob16(),
        subkey_valid_from=r.u64(),
        subkey_valid_until=r.u64(),
        signature_cert=_decode_sig(r),
        encryption_cert=_decode_sig(r),
    )


def _encode_body(kind: PayloadKind, body: Body) -> bytes:
    if _BODY_KIND.get(type(body)) is not kind:
        raise MalformedPayload(f"{type(body).__name__} cannot be carried by a {kind.name} payload")
    if kind is PayloadKind.MINER_APPROVAL:
        if len(body.new_random) != 32:
            raise MalformedPayload("MA random value must be 32 bytes")
        return body.new_random + _encode_sig(body.prev_random_signature)
    if kind is PayloadKind.CREDENTIALS:
        return _encode_credentials(body)
    if kind is PayloadKind.RENEW:
        return (
            c.blob16(body.signature_public)
            + c.blob16(body.encryption_public)
            + c.u64(body.subkey_valid_from)
            + c.u64(body.subkey_valid_until)
            + _encode_sig(body.signature_cert)
            + _encode_sig(body.encryption_cert)
        )
    if kind is PayloadKind.BLAME:
        return body.target_id + c.u16(body.reason_code)
    if kind is PayloadKind.BAN:
        out = body.target_id + c.u16(len(body.evidence))
        for height, index in body.evidence:
            out += c.u64(height) + c.u32(index)
        return out
    # REVOKE
    if body.replacement is None:
        return body.revoked_master_id + c.u8(0)
    return body.revoked_master_id + c.u8(1) + _encode_credentials(body.replacement)


def _decode_body(kind: PayloadKind, r: c.Reader) -> Body:
    if kind is PayloadKind.MINER_APPROVAL:
        return MinerApprovalBody(r.take(32), _decode_sig(r))
    if kind is PayloadKind.CREDENTIALS:
        return _decode_credentials(r)
    if kind is PayloadKind.RENEW:
        return RenewBody(
            signature_public=r.blob16(),
            encryption_public=r.blob16(),
            subkey_valid_from=r.u64(),
            subkey_valid_until=r.u64(),
            signature_cert=_decode_sig(r),
            encryption_cert=_decode_sig(r),
        )
    if kind is PayloadKind.BLAME:
        return BlameBody(r.take(DIGEST_SIZE), r.u16())
    if kind is PayloadKind.BAN:
        target = r.take(DIGEST_SIZE)
        n = r.u16()
        return BanBody(target, tuple((r.u64(), r.u32()) for _ in range(n)))
    revoked = r.take(DIGEST_SIZE)
    flag = r.u8()
    if flag not in (0, 1):
        raise MalformedPayload(f"bad replacement flag {flag}")
    return RevokeBody(revoked, _decode_credentials(r) if flag else None)


def encode_payload(p: Payload) -> bytes:
    return p.encode()


def decode_payload(data: bytes) -> Payload:
    r = c.Reader(data)
    try:
        tag = r.u8()
        try:
            kind = PayloadKind(tag)
        except ValueError:
            raise MalformedPayload(f"unknown payload tag 0x{tag:02x}") from None
        issuer = r.take(DIGEST_SIZE)
        issued_at = r.u64()
        body = _decode_body(kind, r)
        sig = _decode_sig(r)
    except c.Truncated as exc:
        raise MalformedPayload(f"truncated payload: {exc}") from None
    if not r.done():
        raise MalformedPayload(f"{r.remaining} trailing bytes after payload")
    return Payload(kind, issuer, issued_at, body, sig)


# -- issuing ---------------------------------------------------------------


def _usable(key: KeyPair | None, now: int, what: str) -> KeyPair:
    if key is None or key.secret is None:
        raise MissingKey(f"no secret {what} key available")
    if not key.is_valid_at(now):
        raise KeyExpired(f"{what} key valid over [{key.valid_from}, {key.valid_until}), now={now}")
    return key


def seal_payload(kind: PayloadKind, issuer_id: bytes, now: int, body: Body, key: KeyPair) -> Payload:
    """Build a payload and sign the digest of its canonical bytes with ``key``."""
    unsigned = Payload(kind, issuer_id, now, body)
    return Payload(kind, issuer_id, now, body, sign(key, sha256(unsigned.signing_bytes())))


def credentials_body(identity: "NodeIdentity") -> CredentialsBody:
    sig, enc = identity.signature_key, identity.encryption_key
    return CredentialsBody(
        master_public=identity.master.public,
        master_valid_from=identity.master.valid_from,
        master_valid_until=identity.master.valid_until,
        signature_public=sig.public,
        encryption_public=enc.public,
        subkey_valid_from=sig.valid_from,
        subkey_valid_until=sig.valid_until,
        signature_cert=sig.certificate,
        encryption_cert=enc.certificate,
    )


def issue_credentials(identity: "NodeIdentity", now: int) -> Payload:
    key = _usable(identity.signature_key, now, "signature")
    return seal_payload(PayloadKind.CREDENTIALS, identity.node_id, now, credentials_body(identity), key)


def issue_renew(identity: "NodeIdentity", now: int, rng=None) -> Payload:
    """Generate fresh subkeys and announce them, signed with the current subkey.

    The new keys are staged on ``identity``; call ``identity.activate`` once
    the renewal is part of the chain.
    """
    key = _usable(identity.signature_key, now, "signature")
    master = _usable(identity.master, now, "master")
    sig, enc = derive_subkeys(master, now, identity.params, rng)
    identity.stage(sig, enc)
    body = RenewBody(
        signature_public=sig.public,
        encryption_public=enc.public,
        subkey_valid_from=sig.valid_from,
        subkey_valid_until=sig.valid_until,
        signature_cert=sig.certificate,
        encryption_cert=enc.certificate,
    )
    return seal_payload(PayloadKind.RENEW, identity.node_id, now, body, key)


def issue_blame(identity: "NodeIdentity", target_id: bytes, reason: int, now: int) -> Payload:
    key = _usable(identity.signature_key, now, "signature")
    return seal_payload(PayloadKind.BLAME, identity.node_id, now, BlameBody(target_id, reason), key)


def issue_ban(identity: "NodeIdentity", target_id: bytes, evidence, now: int) -> Payload:
    key = _usable(identity.signature_key, now, "signature")
    body = BanBody(target_id, tuple((int(h), int(i)) for h, i in evidence))
    return seal_payload(PayloadKind.BAN, identity.node_id, now, body, key)


def issue_revoke(identity: "NodeIdentity", replacement: "NodeIdentity | None", now: int) -> Payload:
    master = _usable(identity.master, now, "master")
    body = RevokeBody(identity.node_id, credentials_body(replacement) if replacement is not None else None)
    return seal_payload(PayloadKind.REVOKE, identity.node_id, now, body, master)


def miner_approval(identity: "NodeIdentity", key: KeyPair, prev_random: bytes, now: int, rng=None) -> Payload:
    """MA payload: signs the previous block's random value and draws a new one."""
    key = _usable(key, now, "signature")
    new_random = rng.randbytes(32) if rng is not None else os.urandom(32)
    body = MinerApprovalBody(new_random, sign(key, prev_random))
    return seal_payload(PayloadKind.MINER_APPROVAL, identity.node_id, now, body, key)


# -- verification ----------------------------------------------------------


@dataclass(frozen=True)
class Verdict:
    """Boolean outcome plus the reasons behind a negative answer."""

    ok: bool
    reasons: tuple[str, ...] = ()

    def __bool__(self) -> bool:
        return self.ok

    @classmethod
    def of(cls, reasons) -> "Verdict":
        reasons = tuple(reasons)
        return cls(not reasons, reasons)


def _digest_ok(p: Payload, public: bytes) -> bool:
    return verify(public, sha256(p.signing_bytes()), p.signed_digest)


def check_credentials_body(body: CredentialsBody, at: int, view: "LedgerState") -> str | None:
    params = view.params
    if view.knows(body.node_id):
        return "credentials already registered for this master key"
    if body.master_valid_until - body.master_valid_from != params.t_masterkey:
        return "master validity window differs from t_masterkey"
    if not body.master_valid_from <= at < body.master_valid_until:
        return "master key not valid at inclusion time"
    return _check_subkey_window(body, body.master_public, at, params)


def _check_subkey_window(body, master_public: bytes, at: int, params) -> str | None:
    vf, vu = body.subkey_valid_from, body.subkey_valid_until
    if vu - vf != params.t_subkey:
        return "subkey validity window differs from t_subkey"
    if not vf <= at < vu:
        return "subkey not valid at inclusion time"
    for role, public, cert in (
        (KeyRole.SIGNATURE, body.signature_public, body.signature_cert),
        (KeyRole.ENCRYPTION, body.encryption_public, body.encryption_cert),
    ):
        if not verify(master_public, certification_message(role, public, vf, vu), cert):
            return f"{role.name.lower()} subkey not certified by the master key"
    return None


def check_payload(p: Payload, view: "LedgerState", at: int) -> str | None:
    """Why ``p`` may not enter a block stamped ``at`` on top of ``view``; None if it may.

    ``view`` is the ledger state in which every block before the candidate
    block counts as confirmed.
    """
    params = view.params
    if p.issued_at > at:
        return "payload issued after the block timestamp"

    if p.kind is PayloadKind.CREDENTIALS:
        if p.issuer_id != p.body.node_id:
            return "issuer id is not the hash of the master public key"
        reason = check_credentials_body(p.body, at, view)
        if reason:
            return reason
        if not _digest_ok(p, p.body.signature_public):
            return "signed digest does not verify under the announced signature subkey"
        return None

    status = view.status(p.issuer_id, at)
    if not status.is_authenticated:
        return f"issuer is {status.status}, not authenticated"

    role = KeyRole.MASTER if p.kind is PayloadKind.REVOKE else KeyRole.SIGNATURE
    try:
        public = view.key_for(p.issuer_id, role, at)
    except (NoSuchNode, NoValidKey) as exc:
        return f"no valid {role.name.lower()} key: {exc}"
    if not _digest_ok(p, public):
        return f"signed digest does not verify under the issuer's {role.name.lower()} key"

    body = p.body
    if p.kind is PayloadKind.MINER_APPROVAL:
        if status.is_banned:
            return f"miner banned until {status.banned_until}"
        if not verify(public, view.last_ma_random, body.prev_random_signature):
            return "MA does not sign the previous block's random value"
        return None

    if p.kind is PayloadKind.RENEW:
        reason = _check_subkey_window(body, view.key_for(p.issuer_id, KeyRole.MASTER, at), at, params)
        if reason:
            return reason
        renews = view.renew_times(p.issuer_id)
        if renews and at - renews[-1] < params.t_renew / 2:
            return f"renew {at - renews[-1]}h after the previous one, minimum is t_renew/2"
        if sum(1 for t in renews if at - t < params.t_renew) >= 2:
            return "already 2 renews within t_renew"
        return None

    if p.kind is PayloadKind.BLAME:
        if body.target_id == p.issuer_id:
            return "a node cannot blame itself"
        if not view.status(body.target_id, at).is_authenticated:
            return "blame target is not authenticated"
        last = view.last_blame(p.issuer_id, body.target_id)
        if last is not None and at - last < params.t_blame:
            return f"same blamer blamed this target {at - last}h ago, minimum is t_blame"
        return None

    if p.kind is PayloadKind.BAN:
        if not view.status(body.target_id, at).is_authenticated:
            return "ban target is not authenticated"
        refs = set(body.evidence)
        if len(refs) != len(body.evidence):
            return "duplicate ban evidence reference"
        if len(refs) < 2:
            return "a ban needs at least 2 confirmed blames as evidence"
        for ref in body.evidence:
            blame = view.blame_at(ref)
            if blame is None:
                return f"evidence {ref} is not a confirmed blame"
            if blame.target_id != body.target_id:
                return f"evidence {ref} blames another node"
            if view.is_cited(ref):
                return f"evidence {ref} already backs an earlier ban"
        return None

    # REVOKE
    if body.revoked_master_id != p.issuer_id:
        return "revoke names a master key other than the issuer's"
    if body.replacement is not None:
        return check_credentials_body(body.replacement, at, view)
    return None


def verify_payload(p: Payload, chain, at: int) -> Verdict:
    """Would ``p`` be valid in a block appended to ``chain`` at hour ``at``?

    Every block already in ``chain`` counts as confirmed, since the new block
    would be their successor.
    """
    reason = check_payload(p, chain.next_view(at), at)
    return Verdict.of([reason] if reason else [])
