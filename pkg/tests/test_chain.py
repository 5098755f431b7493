import dataclasses
import random

import pytest

from batm.chain import (
    HEADER_SIZE,
    Block,
    BlockHeader,
    Chain,
    confirmed_payloads,
    decode_block,
    decode_chain,
    decode_header,
    encode_chain,
    encode_header,
    header_hash,
    load_chain,
    make_genesis,
    meets_difficulty,
    mine_block,
    save_chain,
    select_chain,
    solve,
    validate_block,
    validate_chain,
    validate_genesis,
)
from batm.crypto import ZERO_DIGEST, sha256
from batm.errors import (
    BlockTooLarge,
    CorruptFile,
    GenesisMismatch,
    InvalidParams,
    MinerBanned,
    MinerNotAuthenticated,
    OutOfRange,
    SelfPayloadIncluded,
    ValidationFailed,
)
from batm.identity import NodeDescriptor, NodeIdentity
from batm.payloads import issue_ban, issue_blame, issue_credentials, issue_renew

from conftest import LOW, Net


def test_header_is_84_bytes_and_round_trips():
    h = BlockHeader(1, b"\x01" * 32, b"\x02" * 32, 123456, 16, 2**63 + 5)
    raw = encode_header(h)
    assert len(raw) == HEADER_SIZE == 84
    assert decode_header(raw) == h
    assert header_hash(h) == sha256(raw)


def test_header_field_offsets():
    h = BlockHeader(7, b"\xaa" * 32, b"\xbb" * 32, 0x01020304, 9, 0x1122334455667788)
    raw = encode_header(h)
    assert raw[:4] == b"\x00\x00\x00\x07"
    assert raw[4:36] == b"\xaa" * 32 and raw[36:68] == b"\xbb" * 32
    assert raw[68:72] == b"\x01\x02\x03\x04"
    assert raw[72:76] == b"\x00\x00\x00\x09"
    assert raw[76:] == bytes.fromhex("1122334455667788")


@pytest.mark.parametrize(
    "digest,bits,ok",
    [
        (b"\x00\x00\xff" + bytes(29), 16, True),
        (b"\x00\x01" + bytes(30), 16, False),
        (b"\x00\x01" + bytes(30), 15, True),
        (b"\xff" * 32, 0, True),
        (b"\x0f" + bytes(31), 4, True),
        (b"\x1f" + bytes(31), 4, False),
    ],
)
def test_meets_difficulty(digest, bits, ok):
    assert meets_difficulty(digest, bits) is ok


def test_solve_finds_smallest_nonce():
    h = BlockHeader(1, ZERO_DIGEST, b"\x05" * 32, 3, 8, 0)
    solved = solve(h)
    assert meets_difficulty(header_hash(solved), 8)
    for n in range(solved.nonce):
        assert not meets_difficulty(header_hash(dataclasses.replace(h, nonce=n)), 8)


def test_genesis_layout_and_gate():
    founder = NodeIdentity.create(NodeDescriptor.node("A"), LOW, 0, random.Random(1))
    g = make_genesis(LOW, founder, bytes(32), 0)
    assert g.header.prev_header_hash == ZERO_DIGEST
    assert g.params == LOW
    assert validate_genesis(g)
    assert g.miner_id == founder.node_id


def test_genesis_rejects_bad_params():
    founder = NodeIdentity.create(NodeDescriptor.node("A"), LOW, 0, random.Random(1))
    with pytest.raises(InvalidParams):
        make_genesis(dataclasses.replace(LOW, t_masterkey=10 * LOW.t_subkey), founder, bytes(32))


def test_block_codec_round_trip(net):
    for b in net.chain.blocks:
        assert decode_block(b.encode()) == b


def test_mined_chain_validates(net):
    assert validate_chain(net.chain) == net.chain
    assert net.chain.height == 2


def test_confirmation_rule(net):
    # B's credentials sit in block 1; block 2 confirms them at its timestamp
    view = net.chain.confirmed_view()
    assert view.status(net["B"].node_id, 2).is_authenticated
    assert view.status(net["B"].node_id, 2).authenticated_at == 2
    one = net.chain.prefix(2).confirmed_view()
    assert not one.status(net["B"].node_id, 1).is_authenticated


def test_confirmed_payloads(net):
    assert confirmed_payloads(net.chain, 0) == []
    kinds = [p.kind.name for p in confirmed_payloads(net.chain, 2)]
    assert kinds == ["MINER_APPROVAL", "CREDENTIALS", "MINER_APPROVAL", "CREDENTIALS", "CREDENTIALS"]
    with pytest.raises(OutOfRange):
        confirmed_payloads(net.chain, 3)


def test_mine_block_guards(net):
    stranger = NodeIdentity.create(NodeDescriptor.node("X"), LOW, 0, random.Random(9))
    with pytest.raises(MinerNotAuthenticated):
        mine_block(net.chain.tip, [], stranger, 3, net.chain)
    renew = issue_renew(net["B"], 3, net.rng)
    with pytest.raises(SelfPayloadIncluded):
        mine_block(net.chain.tip, [renew], net["B"], 3, net.chain)
    # block 1 of a two-node net holds one CP; cap the size just above it
    cap = len(Net(names=("A", "B")).chain.blocks[1].encode()) + 16
    tiny = Net(dataclasses.replace(LOW, max_block_bytes=cap), names=("A", "B"))
    joins = [issue_credentials(tiny.add(n, 3), 3) for n in ("D", "E")]
    with pytest.raises(BlockTooLarge):
        mine_block(tiny.chain.tip, joins, tiny["A"], 3, tiny.chain)


def test_banned_miner_cannot_mine(net):
    c = net["C"].node_id
    net.mine("C", [issue_blame(net["A"], c, 1, 3), issue_blame(net["B"], c, 1, 3)], 3)
    net.mine("A", [issue_ban(net["B"], c, [(3, 1), (3, 2)], 4)], 4)
    with pytest.raises(MinerBanned):
        mine_block(net.chain.tip, [], net["C"], 5, net.chain)
    # still banned one hour before recovery, free to mine at recovery
    with pytest.raises(MinerBanned):
        mine_block(net.chain.tip, [], net["C"], 4 + LOW.t_banrecover - 1, net.chain)
    net.mine("C", [], 4 + LOW.t_banrecover)


def test_select_chain_longest_then_smallest_hash(net):
    main = net.chain
    short = main.prefix(2)
    assert select_chain([short, main]) is main
    alt = main.prefix(2).extend(mine_block(short.tip, [], net["B"], 2, short, random.Random(5)))
    pick = select_chain([main, alt])
    assert pick.tip.hash == min(main.tip.hash, alt.tip.hash)
    assert select_chain([alt, main]).tip.hash == pick.tip.hash


def test_select_chain_genesis_mismatch(net):
    other = Net(seed=99)
    with pytest.raises(GenesisMismatch):
        select_chain([net.chain, other.chain])


def test_chain_file_round_trip(tmp_path, net):
    path = tmp_path / "c.batm"
    save_chain(net.chain, path)
    assert load_chain(path) == net.chain
    assert path.read_bytes()[:4] == b"BATM"


@pytest.mark.parametrize(
    "data",
    [b"", b"XXXX\x00\x01" + bytes(8), b"BATM\x00\x09" + bytes(8), b"BATM\x00\x01" + bytes(8), b"BATM\x00"],
)
def test_corrupt_framing(data):
    with pytest.raises(CorruptFile):
        decode_chain(data)


def test_trailing_bytes_rejected(net):
    with pytest.raises(CorruptFile):
        decode_chain(encode_chain(net.chain) + b"\x00")


def test_prev_hash_break_is_caught(net):
    blocks = list(net.chain.blocks)
    bad_header = dataclasses.replace(blocks[2].header, prev_header_hash=b"\x11" * 32)
    blocks[2] = Block(solve(bad_header), blocks[2].payloads)
    with pytest.raises(ValidationFailed) as err:
        validate_chain(Chain(tuple(blocks)))
    assert err.value.height == 2


def test_merkle_mismatch_is_caught(net):
    b = net.chain.tip
    swapped = Block(b.header, b.payloads + b.payloads)
    assert not validate_block(swapped, net.chain.blocks[1], net.chain)


def test_timestamp_may_not_decrease(net):
    b = mine_block(net.chain.tip, [], net["A"], 2, net.chain)
    block = Block(solve(dataclasses.replace(b.header, timestamp=1)), b.payloads)
    verdict = validate_block(block, net.chain.tip, net.chain)
    assert not verdict and any("timestamp" in r for r in verdict.reasons)


def test_difficulty_must_match_genesis(net):
    b = mine_block(net.chain.tip, [], net["A"], 3, net.chain)
    forged = Block(solve(dataclasses.replace(b.header, difficulty_bits=4)), b.payloads)
    assert not validate_block(forged, net.chain.tip, net.chain)


def test_genesis_header_pinned_to_founder_payloads():
    founder = NodeIdentity.create(NodeDescriptor.node("A"), LOW, 0, random.Random(1))
    g = make_genesis(LOW, founder, bytes(32), 5)
    assert validate_genesis(g)
    for change in (dict(nonce=1), dict(timestamp=6), dict(timestamp=4)):
        forged = Block(dataclasses.replace(g.header, **change), g.payloads, g.params_record)
        assert not validate_genesis(forged)
