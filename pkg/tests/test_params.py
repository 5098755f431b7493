import dataclasses

import pytest
from hypothesis import given, strategies as st

from batm.errors import InvalidParams, MalformedBlock
from batm.params import FIELDS, ChainParams, coerce, decode_params, encode_params


def test_defaults_are_the_published_constants():
    p = ChainParams()
    assert (p.c_approval, p.c_auth, p.c_renew, p.c_blame, p.c_ban) == (1, 8, 2, -8, -16)
    assert (p.t_renew, p.t_blame, p.t_banrecover) == (168, 42, 84)
    assert p.decay_tau == 256.0
    assert p.max_block_bytes == 5 * 2**20
    assert p.validate() is p


@pytest.mark.parametrize(
    "change,fragment",
    [
        (dict(t_subkey=168), "greater than t_renew"),
        (dict(t_subkey=50 * 168, t_masterkey=10 * 50 * 168 + 1), "less than 50 * t_renew"),
        (dict(t_masterkey=8400), "greater than 10 * t_subkey"),
        (dict(t_masterkey=42001), "no more than 50 * t_subkey"),
        (dict(decay_tau=0.0), "decay_tau"),
        (dict(c_blame=1), "c_blame"),
        (dict(c_ban=-8), "c_ban"),
        (dict(t_blame=0), "t_blame"),
        (dict(difficulty_bits=257), "difficulty_bits"),
    ],
)
def test_violations_name_the_rule(change, fragment):
    p = dataclasses.replace(ChainParams(), **change)
    with pytest.raises(InvalidParams) as err:
        p.validate()
    assert fragment in str(err.value)


def test_masterkey_boundaries():
    base = ChainParams()
    assert dataclasses.replace(base, t_masterkey=50 * base.t_subkey).violations() == []
    assert dataclasses.replace(base, t_masterkey=10 * base.t_subkey + 1).violations() == []
    assert dataclasses.replace(base, t_masterkey=10 * base.t_subkey).violations()


@given(
    st.integers(-(2**40), 2**40),
    st.floats(allow_nan=False, allow_infinity=False),
    st.integers(0, 256),
)
def test_record_round_trip(c_renew, tau, bits):
    p = dataclasses.replace(ChainParams(), c_renew=c_renew, decay_tau=tau, difficulty_bits=bits)
    assert decode_params(encode_params(p)) == p


def test_record_rejects_damage():
    raw = encode_params(ChainParams())
    with pytest.raises(MalformedBlock):
        decode_params(b"XXXX" + raw[4:])
    with pytest.raises(MalformedBlock):
        decode_params(raw[:-3])
    with pytest.raises(MalformedBlock):
        decode_params(raw + b"\x00")


def test_coerce_types():
    assert coerce("t_renew", "10") == 10
    assert coerce("decay_tau", "12") == 12.0 and isinstance(coerce("decay_tau", "12"), float)
    with pytest.raises(KeyError):
        coerce("nope", "1")
    assert "c_auth" in FIELDS
