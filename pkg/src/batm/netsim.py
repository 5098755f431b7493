"""Deterministic discrete-event replay of a multi-node BATM network.

Each simulated hour runs, in order: scheduled forks, scripted actions, the
default ban policy, block production (every ``block_interval`` hours) and
one reputation sample per node.  All randomness (keys, MA random values)
comes from ``random.Random(seed)``, so a scenario and seed fix the run
down to the bytes of the exported files.

Block production is scheduled rather than raced.  The miner is picked
round-robin over nodes that are authenticated, not banned, not the target
of a pending ban and (with trust gating on) trusted for approvals; within
that order a node with none of its own payloads pending is preferred, so
pending payloads are not held back by the rule that miners cannot include
their own payloads.
"""

from __future__ import annotations

import io
import random
from collections import defaultdict
from dataclasses import dataclass
from pathlib import Path

from .chain import (
    Chain,
    check_in_block,
    encode_chain,
    make_genesis,
    mine_block,
    select_chain,
    validate_chain,
)
from .crypto import KeyRole
from .errors import BatmError, NoEligibleMiner, NotAuthenticated, ZeroCoefficient
from .identity import NodeIdentity
from .payloads import (
    Payload,
    PayloadKind,
    issue_ban,
    issue_blame,
    issue_credentials,
    issue_renew,
    issue_revoke,
)
from .scenario import Action, Scenario
from .trust import EventKind, ReputationSeries, permitted, reputation, write_series_csv

# headroom kept free in a block for its MA payload and framing
_MA_RESERVE = 1024


@dataclass
class Reorg:
    hour: int
    fork_base: int  # height of the last common block
    abandoned: int  # main-chain blocks dropped
    fork_length: int
    orphaned: list[bytes]  # digests of payloads returned to pending


@dataclass
class SimReport:
    seed: int
    horizon: int
    chain: Chain
    names: dict[bytes, str]
    series: dict[bytes, ReputationSeries]
    rows: list[tuple[int, bytes, float | None]]
    log: list[str]
    ban_intervals: dict[str, list[tuple[int, int]]]
    reorgs: list[Reorg]
    stalls: list[int]

    def csv_text(self) -> str:
        buf = io.StringIO()
        write_series_csv(self.rows, buf)
        return buf.getvalue()

    def log_text(self) -> str:
        return "\n".join(self.log) + "\n"

    def node_ids(self, name: str) -> list[bytes]:
        return [nid for nid, n in self.names.items() if n == name]

    def blocks_mined(self) -> dict[str, int]:
        out = defaultdict(int)
        for b in self.chain.blocks[1:]:
            out[self.names.get(b.miner_id, "?")] += 1
        return dict(out)

    def summary_lines(self) -> list[str]:
        mined = self.blocks_mined()
        lines = []
        for nid, name in self.names.items():
            series = self.series[nid]
            final = f"{series.samples[-1][1]:.6f}" if series.samples else "n/a"
            lines.append(
                f"{name} {nid.hex()[:16]} final_reputation={final} "
                f"bans={len(self.ban_intervals.get(name, []))} blocks_mined={mined.get(name, 0)}"
            )
        return lines


@dataclass
class _Pending:
    payload: Payload
    requeued: bool = False


@dataclass
class _Fork:
    node: str | None
    length: int
    depth: int


class Simulation:
    def __init__(self, scenario: Scenario):
        self.scenario = scenario.validate()
        self.params = scenario.params
        self.rng = random.Random(scenario.seed)
        self.order = scenario.node_names()
        self.descriptors = {d.name: d for d in scenario.nodes}
        # every identity a node name has held, newest last (revocations add one)
        self.held: dict[str, list[NodeIdentity]] = {}
        self.names: dict[bytes, str] = {}
        self.chain: Chain | None = None
        self.pending: list[_Pending] = []
        self.forks: dict[int, list[_Fork]] = defaultdict(list)
        self.log: list[str] = []
        self.reorgs: list[Reorg] = []
        self.stalls: list[int] = []
        self.rows: list[tuple[int, bytes, float | None]] = []
        self.series: dict[bytes, ReputationSeries] = {}
        self._last_miner = -1
        self._requeued: set[bytes] = set()
        for a in scenario.actions:
            if a.verb == "fork":
                inject_fork(self, a.hour, a.length, node=a.node, depth=a.depth)

    # -- helpers

    def _say(self, hour: int, text: str) -> None:
        self.log.append(f"{hour:>6} {text}")

    def _adopt(self, ident: NodeIdentity) -> None:
        self.held.setdefault(ident.name, []).append(ident)
        self.names[ident.node_id] = ident.name
        self.series[ident.node_id] = ReputationSeries(ident.node_id)

    def identity(self, name: str) -> NodeIdentity | None:
        """The identity the chain currently recognises for ``name``."""
        held = self.held.get(name)
        if not held:
            return None
        view = self.chain.next_view(self.chain.tip.timestamp)
        for ident in reversed(held):
            st = view.status(ident.node_id, self.chain.tip.timestamp)
            if st.status not in ("unknown", "revoked"):
                return ident
        return held[0]

    def _label(self, node_id: bytes) -> str:
        return self.names.get(node_id, node_id.hex()[:12])

    def _describe(self, p: Payload) -> str:
        text = f"{p.kind.name} from {self._label(p.issuer_id)}"
        if p.target_id is not None:
            text += f" on {self._label(p.target_id)}"
        return text

    def _submit(self, hour: int, p: Payload) -> None:
        self.pending.append(_Pending(p))
        self._say(hour, f"submit {self._describe(p)}")

    def _rotation(self) -> list[str]:
        k = self._last_miner + 1
        return self.order[k:] + self.order[:k]

    def _gate(self, ident: NodeIdentity, kind: EventKind, hour: int) -> bool:
        if not self.scenario.trust_gating:
            return True
        try:
            return permitted(self.chain, ident.node_id, kind, hour, self.params, include_tip=True)
        except ZeroCoefficient:
            # a zero factor defines no trust level for the action
            return True

    def _can_mine(self, ident: NodeIdentity, view, hour: int) -> bool:
        st = view.status(ident.node_id, hour)
        if not st.is_authenticated or st.is_banned:
            return False
        try:
            view.key_for(ident.node_id, KeyRole.SIGNATURE, hour)
        except BatmError:
            return False
        return self._gate(ident, EventKind.APPROVAL, hour)

    def _sync_keys(self) -> None:
        """Point every identity at the subkey the chain considers current."""
        at = self.chain.tip.timestamp
        view = self.chain.next_view(at)
        for held in self.held.values():
            for ident in held:
                rec = view.nodes.get(ident.node_id)
                if rec is None:
                    continue
                current = [e for e in rec.keys if e.effective_from <= at]
                if current:
                    try:
                        ident.activate(current[-1].signature_public)
                    except BatmError:
                        pass

    # -- actions

    def _act(self, hour: int, a: Action) -> None:
        if a.verb == "join":
            if self.held.get(a.node):
                self._say(hour, f"reject join by {a.node}: already joined")
                return
            ident = NodeIdentity.create(self.descriptors[a.node], self.params, hour, self.rng)
            self._adopt(ident)
            self._submit(hour, issue_credentials(ident, hour))
            return

        ident = self.identity(a.node)
        if ident is None:
            self._say(hour, f"reject {a.verb} by {a.node}: node never joined")
            return
        try:
            if a.verb == "renew":
                self._submit(hour, issue_renew(ident, hour, self.rng))
            elif a.verb == "blame":
                self._blame(hour, ident, a.target, a.reason)
            elif a.verb == "misbehave":
                self._say(hour, f"misbehave {a.node}")
                for name in self.order:
                    if name != a.node and self.identity(name) is not None:
                        self._blame(hour, self.identity(name), a.node, a.reason)
            elif a.verb == "revoke":
                fresh = NodeIdentity.create(self.descriptors[a.node], self.params, hour, self.rng)
                self._submit(hour, issue_revoke(ident, fresh, hour))
                self._adopt(fresh)
        except BatmError as exc:
            self._say(hour, f"reject {a.verb} by {a.node}: {exc}")

    def _blame(self, hour: int, blamer: NodeIdentity, target_name: str, reason: int) -> None:
        target = self.identity(target_name)
        if target is None:
            self._say(hour, f"reject blame by {blamer.name}: {target_name} never joined")
            return
        if not self.chain.next_view(hour).status(blamer.node_id, hour).is_authenticated:
            self._say(hour, f"reject blame by {blamer.name}: not authenticated")
            return
        if not self._gate(blamer, EventKind.BLAME, hour):
            self._say(hour, f"reject blame by {blamer.name}: below the blame trust level")
            return
        self._submit(hour, issue_blame(blamer, target.node_id, reason, hour))

    def _ban_policy(self, hour: int) -> None:
        """Ban any node with 2 uncited confirmed blames within t_banrecover."""
        view = self.chain.next_view(hour)
        window = self.params.t_banrecover
        pending_bans = {p.payload.body.target_id for p in self.pending if p.payload.kind is PayloadKind.BAN}
        for name in self.order:
            target = self.identity(name)
            if target is None or target.node_id in pending_bans:
                continue
            st = view.status(target.node_id, hour)
            if not st.is_authenticated or st.is_banned:
                continue
            refs = sorted(
                ref for ref, b in view.blames_on(target.node_id)
                if not view.is_cited(ref) and hour - b.at < window
            )
            if len(refs) < 2:
                continue
            issuers = [
                ident for n in self._rotation()
                if n != name and (ident := self.identity(n)) is not None
                and self._can_mine(ident, view, hour) and self._gate(ident, EventKind.BAN, hour)
            ]
            if not issuers:
                self._say(hour, f"ban on {name} deferred: no eligible issuer")
                continue
            self._submit(hour, issue_ban(issuers[0], target.node_id, refs, hour))

    # -- forks

    def _fork(self, hour: int, fork: _Fork) -> None:
        chain = self.chain
        base = max(0, chain.height - fork.depth)
        miner = self.identity(fork.node) if fork.node else None
        if miner is None:
            self._say(hour, f"reject fork by {fork.node}: node never joined")
            return
        branch = chain.prefix(base + 1)
        try:
            for _ in range(fork.length):
                branch = branch.extend(mine_block(branch.tip, [], miner, hour, branch, self.rng))
        except BatmError as exc:
            self._say(hour, f"reject fork by {fork.node}: {exc}")
            return
        winner = select_chain([chain, branch])
        if winner is chain:
            self._say(hour, f"fork of {fork.length} block(s) by {fork.node} from height {base} discarded")
            return
        kept = {p.digest for b in branch.blocks for p in b.payloads}
        orphans = [
            p for b in chain.blocks[base + 1:] for p in b.payloads
            if p.kind is not PayloadKind.MINER_APPROVAL and p.digest not in kept
        ]
        returned = [_Pending(p, requeued=True) for p in orphans if p.digest not in self._requeued]
        self._requeued.update(p.digest for p in orphans)
        self.pending = returned + self.pending
        self.chain = branch
        self.reorgs.append(Reorg(hour, base, chain.height - base, fork.length, [p.digest for p in orphans]))
        self._say(
            hour,
            f"reorg: fork of {fork.length} block(s) by {fork.node} from height {base} replaces "
            f"{chain.height - base} block(s); {len(returned)} payload(s) back to pending",
        )
        self._sync_keys()

    # -- block production

    def _produce(self, hour: int) -> None:
        chain = self.chain
        view = chain.next_view(hour)
        banned_targets = {p.payload.body.target_id for p in self.pending if p.payload.kind is PayloadKind.BAN}
        eligible = []
        for name in self._rotation():
            ident = self.identity(name)
            if ident is None or ident.node_id in banned_targets:
                continue
            if self._can_mine(ident, view, hour):
                eligible.append(ident)
        if not eligible:
            self.stalls.append(hour)
            self._say(hour, f"stall: {NoEligibleMiner.__name__}")
            return
        own = {item.payload.issuer_id for item in self.pending}
        miner = next((m for m in eligible if m.node_id not in own), eligible[0])

        may_authenticate = self._gate(miner, EventKind.AUTH, hour)
        taken, chosen, keep = set(), [], []
        budget = self.params.max_block_bytes - _MA_RESERVE
        for item in self.pending:
            p = item.payload
            if p.issuer_id == miner.node_id:
                keep.append(item)
                continue
            if p.kind is PayloadKind.CREDENTIALS and not may_authenticate:
                keep.append(item)
                continue
            reason = check_in_block(p, view, hour, taken)
            if reason:
                self._say(hour, f"drop {self._describe(p)}: {reason}")
                continue
            size = len(p.encode()) + 4
            if size > budget:
                keep.append(item)
                continue
            budget -= size
            chosen.append(p)

        block = mine_block(chain.tip, chosen, miner, hour, chain, self.rng)
        self.chain = chain.extend(block)
        self.pending = keep
        self._last_miner = self.order.index(miner.name)
        kinds = ", ".join(self._describe(p) for p in chosen) or "no payloads"
        self._say(hour, f"block {self.chain.height} by {miner.name}: {kinds}")
        self._sync_keys()

    def _sample(self, hour: int) -> None:
        view = self.chain.confirmed_view()
        for name in self.order:
            for ident in self.held.get(name, []):
                nid = ident.node_id
                value = None
                if view.status(nid, hour).is_authenticated:
                    try:
                        value = reputation(self.chain, nid, hour, self.params)
                    except NotAuthenticated:
                        value = None
                if value is not None:
                    self.series[nid].add(hour, value)
                self.rows.append((hour, nid, value))

    # -- main loop

    def run(self) -> SimReport:
        sc = self.scenario
        founder = NodeIdentity.create(sc.founder, self.params, 0, self.rng)
        self._adopt(founder)
        self.chain = Chain((make_genesis(self.params, founder, self.rng.randbytes(32), 0),))
        self._last_miner = 0
        self._say(0, f"genesis by {founder.name} seed={sc.seed}")

        by_hour = defaultdict(list)
        for a in sc.actions:
            if a.verb != "fork":
                by_hour[a.hour].append(a)

        for hour in range(sc.horizon):
            if hour > 0:
                for fork in self.forks.get(hour, []):
                    self._fork(hour, fork)
            for a in by_hour.get(hour, []):
                self._act(hour, a)
            if hour > 0:
                self._ban_policy(hour)
                if hour % sc.block_interval == 0:
                    self._produce(hour)
            self._sample(hour)

        validate_chain(self.chain)
        return SimReport(
            seed=sc.seed,
            horizon=sc.horizon,
            chain=self.chain,
            names=dict(self.names),
            series=self.series,
            rows=self.rows,
            log=self.log,
            ban_intervals=ban_intervals(self.chain, self.names),
            reorgs=self.reorgs,
            stalls=self.stalls,
        )


def inject_fork(sim: Simulation, at: int, length: int, node: str | None = None, depth: int = 2) -> None:
    """Schedule a competing branch of ``length`` blocks at hour ``at``.

    The branch forks ``depth`` blocks below the tip of the main chain and is
    mined by ``node`` (default: the founder).  The longer chain is then kept;
    payloads found only on a dropped branch go back to pending once.
    """
    if not 0 <= at < sim.scenario.horizon:
        raise ValueError(f"fork hour {at} outside the horizon")
    if length <= 0:
        return
    sim.forks[at].append(_Fork(node or sim.order[0], length, depth))


def run(scenario: Scenario) -> SimReport:
    return Simulation(scenario).run()


def ban_intervals(chain: Chain, names: dict[bytes, str]) -> dict[str, list[tuple[int, int]]]:
    out = defaultdict(list)
    t = chain.params.t_banrecover
    for b in chain.blocks[:-1]:
        for p in b.payloads:
            if p.kind is PayloadKind.BAN:
                out[names.get(p.body.target_id, p.body.target_id.hex())].append((b.timestamp, b.timestamp + t))
    return dict(out)


REPORT_FILES = ("reputation.csv", "actions.log", "chain.batm")


def export_report(report: SimReport, directory) -> list[Path]:
    """Write the reputation CSV, the action log and the chain file into ``directory``."""
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    paths = [d / name for name in REPORT_FILES]
    paths[0].write_text(report.csv_text(), encoding="utf-8", newline="")
    paths[1].write_text(report.log_text(), encoding="utf-8", newline="")
    paths[2].write_bytes(encode_chain(report.chain))
    return paths
