"""Command-line front end: ``batm genesis|simulate|inspect|reputation|validate``.

Exit codes: 0 success, 2 domain error (bad parameters, invalid scenario,
corrupt or invalid chain, unknown node), 3 I/O error.
"""

from __future__ import annotations

import argparse
import csv
import random
import sys
from pathlib import Path

from .chain import Block, Chain, decode_chain, encode_chain, make_genesis
from .errors import BatmError, NotAuthenticated, OutOfRange
from .identity import NodeDescriptor, NodeIdentity
from .netsim import export_report, run
from .payloads import PayloadKind
from .scenario import load_scenario, parse_params
from .trust import format_reputation, reputation

EXIT_OK, EXIT_DOMAIN, EXIT_IO = 0, 2, 3


class _Fail(Exception):
    def __init__(self, code: int, message: str):
        self.code = code
        super().__init__(message)


def _read_text(path) -> str:
    try:
        return Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise _Fail(EXIT_IO, f"cannot read {path}: {exc.strerror or exc}") from None


def _load_chain(path) -> Chain:
    try:
        data = Path(path).read_bytes()
    except OSError as exc:
        raise _Fail(EXIT_IO, f"cannot read {path}: {exc.strerror or exc}") from None
    return decode_chain(data)


def _write_bytes(path, data: bytes) -> None:
    try:
        Path(path).write_bytes(data)
    except OSError as exc:
        raise _Fail(EXIT_IO, f"cannot write {path}: {exc.strerror or exc}") from None


# -- subcommands


def cmd_genesis(args, out) -> int:
    params = parse_params(_read_text(args.params)).validate()
    rng = random.Random(args.seed)
    founder = NodeIdentity.create(NodeDescriptor.node(args.founder), params, 0, rng)
    chain = Chain((make_genesis(params, founder, rng.randbytes(32), 0),))
    _write_bytes(args.out, encode_chain(chain))
    print(f"genesis {chain.genesis.hash.hex()} founder {founder.node_id.hex()}", file=out)
    return EXIT_OK


def cmd_simulate(args, out) -> int:
    source = args.scenario
    if str(source) != "ban_recovery" or Path(source).exists():
        _read_text(source)  # surface a missing file as an I/O error
    scenario = load_scenario(source)
    if args.seed is not None:
        scenario.seed = args.seed
    report = run(scenario)
    try:
        export_report(report, args.out)
    except OSError as exc:
        raise _Fail(EXIT_IO, f"cannot write report to {args.out}: {exc.strerror or exc}") from None
    for line in report.summary_lines():
        print(line, file=out)
    return EXIT_OK


def _kinds(block: Block) -> str:
    return ",".join(p.kind.name for p in block.payloads) or "-"


def _issuers(block: Block) -> str:
    return ",".join(p.issuer_id.hex()[:16] for p in block.payloads) or "-"


def _block_row(height: int, block: Block) -> tuple:
    miner = block.miner_id
    return (
        height,
        block.hash.hex(),
        block.timestamp,
        miner.hex() if miner else "",
        _kinds(block),
        _issuers(block),
    )


def _describe_body(p) -> list[str]:
    b = p.body
    if p.kind is PayloadKind.MINER_APPROVAL:
        return [f"new_random={b.new_random.hex()}"]
    if p.kind is PayloadKind.CREDENTIALS:
        return [
            f"master_public={b.master_public.hex()}",
            f"master_valid=[{b.master_valid_from},{b.master_valid_until})",
            f"signature_public={b.signature_public.hex()}",
            f"encryption_public={b.encryption_public.hex()}",
            f"subkey_valid=[{b.subkey_valid_from},{b.subkey_valid_until})",
        ]
    if p.kind is PayloadKind.RENEW:
        return [
            f"signature_public={b.signature_public.hex()}",
            f"encryption_public={b.encryption_public.hex()}",
            f"subkey_valid=[{b.subkey_valid_from},{b.subkey_valid_until})",
        ]
    if p.kind is PayloadKind.BLAME:
        return [f"target={b.target_id.hex()}", f"reason={b.reason_code}"]
    if p.kind is PayloadKind.BAN:
        refs = " ".join(f"{h}:{i}" for h, i in b.evidence)
        return [f"target={b.target_id.hex()}", f"evidence={refs}"]
    replacement = b.replacement.node_id.hex() if b.replacement else "none"
    return [f"revoked={b.revoked_master_id.hex()}", f"replacement={replacement}"]


def cmd_inspect(args, out) -> int:
    chain = _load_chain(args.chain)
    if args.block is not None:
        if not 0 <= args.block <= chain.height:
            raise OutOfRange(f"block {args.block} beyond tip {chain.height}")
        block = chain.blocks[args.block]
        h = block.header
        print(f"block {args.block} {block.hash.hex()}", file=out)
        print(f"  prev {h.prev_header_hash.hex()}", file=out)
        print(f"  merkle_root {h.merkle_root.hex()}", file=out)
        print(f"  timestamp {h.timestamp} difficulty_bits {h.difficulty_bits} nonce {h.nonce}", file=out)
        if block.params is not None:
            print("  params " + " ".join(f"{k}={v}" for k, v in vars(block.params).items()), file=out)
        for i, p in enumerate(block.payloads):
            print(f"  payload {i} {p.kind.name} issuer={p.issuer_id.hex()} issued_at={p.issued_at}", file=out)
            for line in _describe_body(p):
                print(f"    {line}", file=out)
        return EXIT_OK
    rows = [_block_row(k, b) for k, b in enumerate(chain.blocks)]
    if args.format == "csv":
        w = csv.writer(out, lineterminator="\n")
        w.writerow(("height", "hash", "timestamp", "miner", "payload_kinds", "issuers"))
        w.writerows(rows)
    else:
        for height, digest, ts, miner, kinds, _ in rows:
            print(f"{height} {digest} t={ts} miner={miner[:16] or '-'} payloads={kinds}", file=out)
    return EXIT_OK


def resolve_node(chain: Chain, text: str) -> bytes:
    """Full node id from a hex id or unique hex prefix."""
    text = text.lower()
    known = {p.issuer_id for b in chain.blocks for p in b.payloads}
    hits = sorted(n for n in known if n.hex().startswith(text))
    if not text or len(hits) != 1:
        what = "unknown" if not hits else "ambiguous"
        raise _Fail(EXIT_DOMAIN, f"{what} node id {text!r}")
    return hits[0]


def cmd_reputation(args, out) -> int:
    chain = _load_chain(args.chain)
    node = resolve_node(chain, args.node)
    try:
        value = reputation(chain, node, args.at)
    except NotAuthenticated:
        print("NotAuthenticated", file=out)
        return EXIT_DOMAIN
    print(format_reputation(value), file=out)
    return EXIT_OK


def cmd_validate(args, out) -> int:
    chain = _load_chain(args.chain)
    print(f"ok: {len(chain)} blocks, tip {chain.tip.hash.hex()}", file=out)
    return EXIT_OK


# -- entry point


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="batm", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("genesis", help="craft a one-block chain from a parameter file")
    p.add_argument("--params", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=0, help="seed for the founder keys")
    p.add_argument("--founder", default="founder", help="founder node name")
    p.set_defaults(func=cmd_genesis)

    p = sub.add_parser("simulate", help="run a scenario and write its report files")
    p.add_argument("--scenario", required=True, help="scenario file, or 'ban_recovery' for the bundled one")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--seed", type=int, default=None, help="override the scenario seed")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("inspect", help="summarise a chain file")
    p.add_argument("--chain", required=True)
    p.add_argument("--block", type=int, default=None, help="print full detail for one block")
    p.add_argument("--format", choices=("text", "csv"), default="text")
    p.set_defaults(func=cmd_inspect)

    p = sub.add_parser("reputation", help="reputation of a node at a given hour")
    p.add_argument("--chain", required=True)
    p.add_argument("--node", required=True, help="node id in hex (a unique prefix is enough)")
    p.add_argument("--at", type=int, required=True, help="hour")
    p.set_defaults(func=cmd_reputation)

    p = sub.add_parser("validate", help="fully validate a chain file")
    p.add_argument("--chain", required=True)
    p.set_defaults(func=cmd_validate)
    return parser


def main(argv=None, out=None) -> int:
    out = out or sys.stdout
    args = build_parser().parse_args(argv)
    if getattr(args, "seed", None) is not None and args.seed < 0:
        print("error: seed must be non-negative", file=sys.stderr)
        return EXIT_DOMAIN
    try:
        return args.func(args, out)
    except _Fail as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.code
    except BatmError as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_DOMAIN
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
