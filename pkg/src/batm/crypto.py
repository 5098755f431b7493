"""Hashing, Merkle roots and the key/signature layer.

Keys and signatures are opaque byte strings to the rest of the package.
Signatures are Ed25519, encryption subkeys are X25519; both are created from
32 random bytes so a seeded generator gives reproducible identities.
"""

from __future__ import annotations

import enum
import hashlib
import os
import struct
from dataclasses import dataclass
from functools import lru_cache

from cryptography.exceptions import InvalidSignature
from cryptography.hazmat.primitives import serialization
from cryptography.hazmat.primitives.asymmetric.ed25519 import Ed25519PrivateKey, Ed25519PublicKey
from cryptography.hazmat.primitives.asymmetric.x25519 import X25519PrivateKey

from .errors import EmptyLeaves, MasterExpired
from .params import ChainParams

DIGEST_SIZE = 32
ZERO_DIGEST = bytes(DIGEST_SIZE)

_RAW = dict(encoding=serialization.Encoding.Raw, format=serialization.PublicFormat.Raw)


def sha256(data: bytes) -> bytes:
    return hashlib.sha256(data).digest()


def merkle_root(leaves) -> bytes:
    """Bitcoin-style binary Merkle root over raw leaf byte strings.

    Leaves are hashed first; an odd level duplicates its last digest.
    """
    level = [sha256(leaf) for leaf in leaves]
    if not level:
        raise EmptyLeaves("merkle_root needs at least one leaf")
    while len(level) > 1:
        if len(level) % 2:
            level.append(level[-1])
        level = [sha256(level[i] + level[i + 1]) for i in range(0, len(level), 2)]
    return level[0]


class KeyRole(enum.IntEnum):
    MASTER = 1
    SIGNATURE = 2
    ENCRYPTION = 3


@dataclass(frozen=True)
class Signature:
    value: bytes
    signer_key_id: bytes

    @classmethod
    def empty(cls) -> "Signature":
        return cls(b"", ZERO_DIGEST)

    @property
    def is_empty(self) -> bool:
        return not self.value


@dataclass(frozen=True)
class KeyPair:
    role: KeyRole
    public: bytes
    secret: bytes | None
    valid_from: int
    valid_until: int
    # master signature over certification_message(); None for master keys
    certificate: Signature | None = None

    def __post_init__(self):
        if not self.valid_from < self.valid_until:
            raise ValueError("key validity window is empty")

    @property
    def key_id(self) -> bytes:
        return sha256(self.public)

    def is_valid_at(self, t: int) -> bool:
        return self.valid_from <= t < self.valid_until

    def public_only(self) -> "KeyPair":
        return KeyPair(self.role, self.public, None, self.valid_from, self.valid_until, self.certificate)


def certification_message(role: KeyRole, public: bytes, valid_from: int, valid_until: int) -> bytes:
    return b"BATM-CERT" + struct.pack(">B", role) + public + struct.pack(">QQ", valid_from, valid_until)


def _seed_bytes(rng) -> bytes:
    return rng.randbytes(32) if rng is not None else os.urandom(32)


def _signing_keypair(role, valid_from, valid_until, rng) -> KeyPair:
    secret = _seed_bytes(rng)
    public = Ed25519PrivateKey.from_private_bytes(secret).public_key().public_bytes(**_RAW)
    return KeyPair(role, public, secret, valid_from, valid_until)


def generate_master(now: int, params: ChainParams, rng=None) -> KeyPair:
    """Create a master key valid for ``params.t_masterkey`` hours from ``now``.

    ``rng`` is any object with ``randbytes`` (e.g. ``random.Random``); when
    omitted the OS entropy source is used.
    """
    return _signing_keypair(KeyRole.MASTER, now, now + params.t_masterkey, rng)


def derive_subkeys(master: KeyPair, now: int, params: ChainParams, rng=None) -> tuple[KeyPair, KeyPair]:
    """Return ``(signature_subkey, encryption_subkey)`` certified by ``master``."""
    if master.role is not KeyRole.MASTER:
        raise ValueError("subkeys derive from a master key only")
    if now >= master.valid_until:
        raise MasterExpired(f"master key expired at {master.valid_until}, now={now}")
    if now < master.valid_from:
        raise MasterExpired(f"master key not valid before {master.valid_from}, now={now}")
    until = now + params.t_subkey

    sig = _signing_keypair(KeyRole.SIGNATURE, now, until, rng)
    enc_secret = _seed_bytes(rng)
    enc_public = X25519PrivateKey.from_private_bytes(enc_secret).public_key().public_bytes(**_RAW)

    out = []
    for role, public, secret in (
        (KeyRole.SIGNATURE, sig.public, sig.secret),
        (KeyRole.ENCRYPTION, enc_public, enc_secret),
    ):
        cert = sign(master, certification_message(role, public, now, until))
        out.append(KeyPair(role, public, secret, now, until, cert))
    return out[0], out[1]


@lru_cache(maxsize=1024)
def _private(secret: bytes) -> Ed25519PrivateKey:
    return Ed25519PrivateKey.from_private_bytes(secret)


def sign(key: KeyPair, data: bytes) -> Signature:
    if key.secret is None:
        raise ValueError("cannot sign with a public-only key")
    if key.role is KeyRole.ENCRYPTION:
        raise ValueError("encryption subkeys do not sign")
    return Signature(_private(key.secret).sign(data), key.key_id)


@lru_cache(maxsize=65536)
def _verify(public: bytes, data: bytes, value: bytes) -> bool:
    try:
        Ed25519PublicKey.from_public_bytes(public).verify(value, data)
    except (InvalidSignature, ValueError):
        return False
    return True


def verify(public: bytes, data: bytes, sig: Signature) -> bool:
    if sig.signer_key_id != sha256(public) or len(sig.value) != 64:
        return False
    return _verify(bytes(public), bytes(data), bytes(sig.value))
