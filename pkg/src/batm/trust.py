"""HKT reputation: decaying sums of per-event factors read from the chain.

Reputation of node N at hour ``t_now``::

    C_auth + sum_{t = t_first}^{t_now} C_{N,t} * exp(-(t_now - t) / decay_tau)

where ``C_{N,t}`` is the sum of event factors for N in blocks stamped ``t``
and ``t_first`` is the timestamp of the block that confirmed N's
credentials.  The leading ``C_auth`` is the authentication reward; no
separate auth event is summed.
"""

from __future__ import annotations

import csv
import enum
import io
import math
from collections import defaultdict
from dataclasses import dataclass, field

from .errors import NotAuthenticated, ZeroCoefficient
from .params import ChainParams
from .payloads import PayloadKind


class EventKind(str, enum.Enum):
    APPROVAL = "approval"
    AUTH = "auth"
    RENEW = "renew"
    BLAME = "blame"
    BAN = "ban"


@dataclass(frozen=True)
class TrustEvent:
    kind: EventKind
    subject_id: bytes
    at: int


@dataclass
class ReputationSeries:
    node_id: bytes
    samples: list[tuple[int, float]] = field(default_factory=list)

    def add(self, hour: int, value: float) -> None:
        if self.samples and hour <= self.samples[-1][0]:
            raise ValueError("sample hours must strictly increase")
        self.samples.append((hour, value))

    def hours(self) -> list[int]:
        return [h for h, _ in self.samples]

    def values(self) -> list[float]:
        return [v for _, v in self.samples]

    def at(self, hour: int) -> float | None:
        for h, v in self.samples:
            if h == hour:
                return v
        return None


def factor(kind: EventKind, params: ChainParams) -> int:
    return params.factor(EventKind(kind).value)


def events_for(chain, node_id: bytes) -> list[TrustEvent]:
    """Trust events concerning ``node_id`` in confirmed blocks, oldest first."""
    return events_in(chain.blocks[:-1], node_id)


def events_in(blocks, node_id: bytes) -> list[TrustEvent]:
    out = []
    for block in blocks:
        ts = block.timestamp
        for p in block.payloads:
            kind = p.kind
            if kind is PayloadKind.MINER_APPROVAL or kind is PayloadKind.RENEW:
                if p.issuer_id == node_id:
                    ev = EventKind.APPROVAL if kind is PayloadKind.MINER_APPROVAL else EventKind.RENEW
                    out.append(TrustEvent(ev, node_id, ts))
            elif kind is PayloadKind.BLAME or kind is PayloadKind.BAN:
                if p.body.target_id == node_id:
                    ev = EventKind.BLAME if kind is PayloadKind.BLAME else EventKind.BAN
                    out.append(TrustEvent(ev, node_id, ts))
    return out


def block_coefficient(events, node_id: bytes, t: int, params: ChainParams) -> int:
    """Sum of event factors for ``node_id`` at hour ``t``."""
    return sum(factor(e.kind, params) for e in events if e.subject_id == node_id and e.at == t)


def reputation_from_events(events, t_first: int, t_now: int, params: ChainParams) -> float:
    per_hour = defaultdict(int)
    for e in events:
        if t_first <= e.at <= t_now:
            per_hour[e.at] += factor(e.kind, params)
    terms = [coef * math.exp(-(t_now - t) / params.decay_tau) for t, coef in per_hour.items() if coef]
    return params.c_auth + math.fsum(terms)


def _view_and_blocks(chain, include_tip: bool, at: int):
    if include_tip:
        return chain.next_view(at), chain.blocks
    return chain.confirmed_view(), chain.blocks[:-1]


def reputation(chain, node_id: bytes, t_now: int, params: ChainParams | None = None,
               *, include_tip: bool = False) -> float:
    """Reputation of ``node_id`` at hour ``t_now`` from confirmed payloads.

    With ``include_tip`` the tip block counts as confirmed too, i.e. the
    value a block appended at ``t_now`` would observe.
    """
    params = params or chain.params
    view, blocks = _view_and_blocks(chain, include_tip, t_now)
    state = view.status(node_id, t_now)
    if not state.is_authenticated:
        raise NotAuthenticated(f"{node_id.hex()[:16]} is {state.status} at {t_now}")
    return reputation_from_events(events_in(blocks, node_id), state.authenticated_at, t_now, params)


def trust_level(kind: EventKind, n_auth: int, params: ChainParams) -> float:
    """Minimum reputation to be trusted with ``kind`` when ``n_auth`` nodes are authenticated."""
    if n_auth < 1:
        raise ValueError("n_auth must be at least 1")
    coef = factor(kind, params)
    if coef == 0:
        raise ZeroCoefficient(f"C_{EventKind(kind).value} is zero")
    return coef + params.a_app * (n_auth - 1) / coef


def clears(rep: float, threshold: float) -> bool:
    return rep >= threshold


def permitted(chain, node_id: bytes, kind: EventKind, at: int, params: ChainParams | None = None,
              *, include_tip: bool = False) -> bool:
    """Is ``node_id``'s reputation at least the trust level for ``kind``?"""
    params = params or chain.params
    view, _ = _view_and_blocks(chain, include_tip, at)
    if not view.status(node_id, at).is_authenticated:
        return False
    n_auth = len(view.authenticated_ids(at))
    rep = reputation(chain, node_id, at, params, include_tip=include_tip)
    return clears(rep, trust_level(kind, n_auth, params))


def service_reputation_echo(chain, service_id: bytes, host_id: bytes, t_now: int,
                            params: ChainParams | None = None) -> float:
    """Host reputation shifted by the hosted service's deviation from ``C_auth``."""
    params = params or chain.params
    host = reputation(chain, host_id, t_now, params)
    service = reputation(chain, service_id, t_now, params)
    return host + params.echo_weight * (service - params.c_auth)


CSV_HEADER = ("hour", "node_id", "reputation")


def format_reputation(value: float | None) -> str:
    return "" if value is None else f"{value:.6f}"


def write_series_csv(rows, out) -> None:
    """Write ``(hour, node_id, value_or_None)`` rows; ``None`` leaves the field empty."""
    w = csv.writer(out, lineterminator="\n")
    w.writerow(CSV_HEADER)
    for hour, node_id, value in rows:
        w.writerow((hour, node_id.hex(), format_reputation(value)))


def read_series_csv(text: str) -> dict[str, list[tuple[int, float | None]]]:
    out = defaultdict(list)
    for row in csv.DictReader(io.StringIO(text)):
        value = float(row["reputation"]) if row["reputation"] else None
        out[row["node_id"]].append((int(row["hour"]), value))
    return dict(out)
