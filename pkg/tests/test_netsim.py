import pytest

from batm.chain import decode_chain, validate_chain
from batm.netsim import Simulation, export_report, inject_fork, run
from batm.payloads import PayloadKind
from batm.scenario import parse_scenario
from batm.trust import read_series_csv

BASE = """
param difficulty_bits 8
sim seed 11
sim trust_gating off
node A
node B
node C
at 0 B join
at 0 C join
"""


def sim(extra="", horizon=40):
    return parse_scenario(BASE + f"sim horizon {horizon}\n" + extra)


def ma_issuers(chain, names):
    return [(b.timestamp, names[b.miner_id]) for b in chain.blocks[1:]]


def test_single_node_without_events_stays_at_c_auth():
    sc = parse_scenario("param difficulty_bits 8\nparam c_approval 0\nsim horizon 100\nnode Solo\n")
    report = run(sc)
    (series,) = report.series.values()
    assert series.hours() == list(range(1, 100))
    assert set(series.values()) == {8.0}
    assert report.rows[0][2] is None  # genesis not yet confirmed at hour 0


def test_joins_authenticate_and_round_robin():
    report = run(sim(horizon=12))
    assert report.stalls == []
    miners = [name for _, name in ma_issuers(report.chain, report.names)]
    assert miners[:4] == ["A", "B", "C", "A"]
    # genesis is confirmed by block 1, the joins by block 2
    first = {name: report.series[nid].hours()[0] for nid, name in report.names.items()}
    assert first == {"A": 1, "B": 2, "C": 2}


def test_determinism():
    a, b = run(sim("at 5 C misbehave\n")), run(sim("at 5 C misbehave\n"))
    assert a.csv_text() == b.csv_text()
    assert a.chain == b.chain
    assert a.log == b.log
    c = run(parse_scenario(BASE.replace("seed 11", "seed 12") + "sim horizon 40\n"))
    assert c.chain != a.chain


def test_ban_policy_and_exclusion():
    report = run(sim("at 5 C misbehave\n", horizon=120))
    ((start, end),) = report.ban_intervals["C"]
    assert end - start == 84
    mined = [t for t, name in ma_issuers(report.chain, report.names) if name == "C"]
    assert not [t for t in mined if start <= t < end]
    assert any(t >= end for t in mined)
    bans = [p for b in report.chain.blocks for p in b.payloads if p.kind is PayloadKind.BAN]
    assert len(bans) == 1 and report.names[bans[0].issuer_id] != "C"
    assert len(bans[0].body.evidence) == 2


def test_single_blame_does_not_ban():
    report = run(sim("at 5 A blame C\n", horizon=30))
    assert report.ban_intervals == {}


def test_repeat_blame_inside_t_blame_is_dropped():
    report = run(sim("at 5 A blame C\nat 6 A blame C\nat 50 A blame C\n", horizon=60))
    blames = [(b.timestamp, p) for b in report.chain.blocks for p in b.payloads if p.kind is PayloadKind.BLAME]
    assert [t for t, _ in blames] == [5, 50]
    assert any("drop BLAME" in line and "t_blame" in line for line in report.log)


def test_third_renew_never_reaches_chain():
    report = run(sim("at 5 B renew\nat 90 B renew\nat 120 B renew\n", horizon=140))
    renews = [b.timestamp for b in report.chain.blocks for p in b.payloads if p.kind is PayloadKind.RENEW]
    assert renews == [5, 90]
    validate_chain(report.chain)


def test_revoke_switches_identity():
    report = run(sim("at 5 C revoke\nat 10 A blame C\n", horizon=20))
    ids = [nid for nid, n in report.names.items() if n == "C"]
    assert len(ids) == 2
    blame = next(p for b in report.chain.blocks for p in b.payloads if p.kind is PayloadKind.BLAME)
    assert blame.body.target_id == ids[1]
    assert report.series[ids[0]].samples[-1][0] < 19


def test_stall_when_no_one_clears_the_approval_level():
    sc = parse_scenario("param difficulty_bits 8\nparam a_app 100\nsim horizon 6\nnode A\nnode B\nat 0 B join\n")
    report = run(sc)
    assert report.chain.height == 1
    assert report.stalls == [2, 3, 4, 5]
    assert any("NoEligibleMiner" in line for line in report.log)


def test_shorter_fork_keeps_main():
    report = run(sim("at 10 A fork 1 depth=2\n", horizon=15))
    assert report.reorgs == []
    assert report.chain.height == 14
    assert any("discarded" in line for line in report.log)


def test_longer_fork_reorgs_and_requeues():
    report = run(sim("at 9 B renew\nat 10 A fork 3 depth=2\n", horizon=14))
    (reorg,) = report.reorgs
    assert (reorg.abandoned, reorg.fork_length) == (2, 3)
    assert len(reorg.orphaned) == 1
    where = [k for k, b in enumerate(report.chain.blocks) for p in b.payloads if p.digest in reorg.orphaned]
    fork_tip = reorg.fork_base + reorg.fork_length
    assert where and fork_tip < where[0] <= fork_tip + 2


def test_zero_length_fork_is_noop():
    s = Simulation(sim(horizon=10))
    inject_fork(s, 5, 0)
    assert not s.forks
    with pytest.raises(ValueError):
        inject_fork(s, 10, 1)


def test_export_report(tmp_path):
    report = run(sim("at 5 C misbehave\n", horizon=30))
    paths = export_report(report, tmp_path / "a")
    again = export_report(report, tmp_path / "b")
    for p, q in zip(paths, again):
        assert p.read_bytes() == q.read_bytes()
    csv = read_series_csv(paths[0].read_text())
    assert len(csv) == 3 and all(len(v) == 30 for v in csv.values())
    assert decode_chain(paths[2].read_bytes()) == report.chain
    assert "misbehave C" in paths[1].read_text()


def test_horizon_one():
    report = run(parse_scenario(BASE + "sim horizon 1\n"))
    lines = report.csv_text().splitlines()
    assert lines[0] == "hour,node_id,reputation"
    assert 1 < len(lines) <= 4


def test_trust_gating_blocks_low_reputation_blamer():
    sc = parse_scenario(BASE.replace("sim trust_gating off", "sim trust_gating on") + "sim horizon 30\nat 5 C misbehave\nat 20 C blame A\n")
    report = run(sc)
    assert any("reject blame by C: below the blame trust level" in line for line in report.log)
    assert report.ban_intervals["C"]
