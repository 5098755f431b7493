import random
import time

import pytest

from batm.chain import Chain, make_genesis, mine_block
from batm.identity import NodeDescriptor, NodeIdentity
from batm.params import ChainParams
from batm.payloads import issue_credentials

# cheap proof-of-work for unit tests
LOW = ChainParams(difficulty_bits=8)


class Net:
    """Small hand-driven network: founder A plus B and C authenticated at hour 2."""

    def __init__(self, params=LOW, seed=7, names=("A", "B", "C")):
        self.params = params
        self.rng = random.Random(seed)
        self.nodes = {}
        founder = self.add(names[0], 0)
        self.chain = Chain((make_genesis(params, founder, self.rng.randbytes(32), 0),))
        joins = [issue_credentials(self.add(n, 0), 0) for n in names[1:]]
        self.mine(names[0], joins, 1)
        self.mine(names[0], [], 2)

    def add(self, name, now):
        ident = NodeIdentity.create(NodeDescriptor.node(name), self.params, now, self.rng)
        self.nodes[name] = ident
        return ident

    def __getitem__(self, name):
        return self.nodes[name]

    def mine(self, name, payloads, now):
        block = mine_block(self.chain.tip, payloads, self.nodes[name], now, self.chain, self.rng)
        self.chain = self.chain.append(block)
        return block


@pytest.fixture
def net():
    return Net()


@pytest.fixture(scope="session")
def recovery_run():
    """The bundled scenario, run once per session: ``(report, seconds)``."""
    from batm.netsim import run
    from batm.scenario import load_scenario

    start = time.perf_counter()
    report = run(load_scenario("ban_recovery"))
    return report, time.perf_counter() - start


# -- acceptance summary: one PASS/FAIL line per criterion

_CRITERIA = {}


def pytest_runtest_logreport(report):
    name = report.nodeid.rsplit("::", 1)[-1]
    if not name.startswith("test_criterion_"):
        return
    number = int(name.split("_")[2])
    if report.when == "call" or report.failed:
        if report.failed or number not in _CRITERIA:
            _CRITERIA[number] = ("PASS" if report.passed else "FAIL", name)


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_CRITERIA):
        outcome, name = _CRITERIA[number]
        terminalreporter.write_line(f"criterion {number}: {outcome}  ({name})")
