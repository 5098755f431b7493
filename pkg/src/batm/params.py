"""Chain-wide protocol constants stored in the genesis block.

The parameter record is a sequence of ``name -> value`` entries in field
declaration order.  Each entry is ``u8 name length | ascii name | u8 type
| 8 byte big-endian value`` where type ``i`` is a signed 64-bit integer and
``f`` an IEEE-754 double.
"""

from __future__ import annotations

import dataclasses
import struct
from dataclasses import dataclass

from .errors import InvalidParams, MalformedBlock

RECORD_MAGIC = b"PRM1"


@dataclass(frozen=True)
class ChainParams:
    # reputation factors per event kind
    c_approval: int = 1
    c_auth: int = 8
    c_renew: int = 2
    c_blame: int = -8
    c_ban: int = -16
    # timers, hours
    t_renew: int = 168
    t_blame: int = 42
    t_banrecover: int = 84
    # key validity timeouts, hours
    t_subkey: int = 840
    t_masterkey: int = 16800
    a_app: float = 1.0
    decay_tau: float = 256.0
    difficulty_bits: int = 16
    max_block_bytes: int = 5 * 2**20
    echo_weight: float = 0.25

    def violations(self) -> list[str]:
        """Every broken invariant, worded after the rule it breaks."""
        out = []
        if not self.t_renew < self.t_subkey:
            out.append(f"t_subkey ({self.t_subkey}) must be greater than t_renew ({self.t_renew})")
        if not self.t_subkey < 50 * self.t_renew:
            out.append(f"t_subkey ({self.t_subkey}) must be less than 50 * t_renew ({50 * self.t_renew})")
        if not 10 * self.t_subkey < self.t_masterkey:
            out.append(
                f"t_masterkey ({self.t_masterkey}) must be greater than 10 * t_subkey ({10 * self.t_subkey})"
            )
        if not self.t_masterkey <= 50 * self.t_subkey:
            out.append(
                f"t_masterkey ({self.t_masterkey}) must be no more than 50 * t_subkey ({50 * self.t_subkey})"
            )
        if not self.decay_tau > 0:
            out.append("decay_tau must be positive")
        if not self.c_blame < 0:
            out.append("c_blame must be negative")
        if not self.c_ban < self.c_blame:
            out.append("c_ban must be less than c_blame")
        for name in ("t_renew", "t_blame", "t_banrecover"):
            if getattr(self, name) <= 0:
                out.append(f"{name} must be positive")
        if not 0 <= self.difficulty_bits <= 256:
            out.append("difficulty_bits must lie in [0, 256]")
        if self.max_block_bytes <= 0:
            out.append("max_block_bytes must be positive")
        return out

    def validate(self) -> "ChainParams":
        problems = self.violations()
        if problems:
            raise InvalidParams("; ".join(problems))
        return self

    def factor(self, kind: str) -> int:
        return getattr(self, f"c_{kind}")


FIELDS = tuple(f.name for f in dataclasses.fields(ChainParams))
_FLOAT_FIELDS = frozenset(f.name for f in dataclasses.fields(ChainParams) if f.type in ("float", float))


def coerce(name: str, raw: str):
    """Parse a textual value for field ``name`` (used by the scenario parser)."""
    if name not in FIELDS:
        raise KeyError(name)
    if name in _FLOAT_FIELDS:
        return float(raw)
    return int(raw)


def encode_params(params: ChainParams) -> bytes:
    out = bytearray(RECORD_MAGIC)
    out += struct.pack(">H", len(FIELDS))
    for name in FIELDS:
        value = getattr(params, name)
        raw = name.encode("ascii")
        out += struct.pack(">B", len(raw)) + raw
        if name in _FLOAT_FIELDS:
            out += b"f" + struct.pack(">d", float(value))
        else:
            out += b"i" + struct.pack(">q", int(value))
    return bytes(out)


def decode_params(data: bytes) -> ChainParams:
    if data[:4] != RECORD_MAGIC:
        raise MalformedBlock("parameter record magic mismatch")
    try:
        (count,) = struct.unpack_from(">H", data, 4)
        if count != len(FIELDS):
            raise MalformedBlock(f"parameter record holds {count} fields, expected {len(FIELDS)}")
        pos = 6
        values = {}
        for name in FIELDS:
            (n,) = struct.unpack_from(">B", data, pos)
            got = data[pos + 1 : pos + 1 + n].decode("ascii")
            pos += 1 + n
            if got != name:
                raise MalformedBlock(f"parameter record field {got!r} out of canonical order")
            tag = data[pos : pos + 1]
            if tag == b"f" and name in _FLOAT_FIELDS:
                (values[name],) = struct.unpack_from(">d", data, pos + 1)
            elif tag == b"i" and name not in _FLOAT_FIELDS:
                (values[name],) = struct.unpack_from(">q", data, pos + 1)
            else:
                raise MalformedBlock(f"bad type tag for parameter {name}")
            pos += 9
    except (struct.error, UnicodeDecodeError) as exc:
        raise MalformedBlock(f"truncated parameter record: {exc}") from exc
    if pos != len(data):
        raise MalformedBlock("trailing bytes after parameter record")
    return ChainParams(**values)
