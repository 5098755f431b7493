import pytest

from batm.errors import ScenarioInvalid
from batm.identity import NodeKind
from batm.scenario import load_scenario, parse_params, parse_scenario

GOOD = """
# comment line
param t_blame 40
param decay_tau 100
sim horizon 50
sim seed 9
sim trust_gating off
node A kind=NN abilities=camera,storage energy=5 cpu=2
node S kind=AS ad=camera rd=disk rp=video
at 0 S join
at 3 A blame S reason=4   # trailing comment
at 4 A fork 2 depth=1
at 5 S renew
"""


def test_parse_full_grammar():
    sc = parse_scenario(GOOD)
    assert sc.params.t_blame == 40 and sc.params.decay_tau == 100.0
    assert (sc.horizon, sc.seed, sc.trust_gating, sc.block_interval) == (50, 9, False, 1)
    assert sc.founder.name == "A" and sc.founder.abilities == ("camera", "storage")
    assert sc.nodes[1].kind is NodeKind.AS and sc.nodes[1].resources == ("video",)
    blame = sc.actions[1]
    assert (blame.hour, blame.node, blame.verb, blame.target, blame.reason) == (3, "A", "blame", "S", 4)
    fork = sc.actions[2]
    assert (fork.length, fork.depth) == (2, 1)


@pytest.mark.parametrize(
    "text,line",
    [
        ("node A\nbogus 1", 2),
        ("node A\nparam nope 1", 2),
        ("node A\nparam t_renew x", 2),
        ("node A\nat 1 A dance", 2),
        ("node A\nat x A renew", 2),
        ("node A\nat 1 A blame", 2),
        ("node A\nat 1 A blame Z", 2),
        ("node A\nat 1 Z renew", 2),
        ("node A\nat 100 A renew", 2),
        ("node A\nat 1 A join", 2),
        ("node A kind=XX", 1),
        ("node A kind=NN rp=x", 1),
        ("node A\nnode A", 2),
        ("node A\nsim trust_gating maybe", 2),
        ("node A\nat 1 A fork -1", 2),
        ("node A\nat 1 A renew now", 2),
    ],
)
def test_errors_carry_line_numbers(text, line):
    with pytest.raises(ScenarioInvalid) as err:
        parse_scenario(text)
    assert err.value.line == line
    assert str(err.value).startswith(f"line {line}:")


def test_scenario_level_errors():
    with pytest.raises(ScenarioInvalid):
        parse_scenario("param t_blame 1")  # no nodes
    with pytest.raises(ScenarioInvalid):
        parse_scenario("node A\nsim horizon 0")
    with pytest.raises(ScenarioInvalid, match="invalid parameters"):
        parse_scenario("node A\nparam t_masterkey 8400")


def test_params_file_reads_only_params():
    p = parse_params("param t_renew 100\nparam t_subkey 900\n")
    assert p.t_renew == 100 and p.t_subkey == 900


def test_bundled_ban_recovery():
    sc = load_scenario("ban_recovery")
    assert [n.name for n in sc.nodes] == ["A", "B", "C"]
    assert sc.horizon == 500 and sc.params.difficulty_bits == 16
    assert sc.params.t_banrecover == 84
    assert any(a.verb == "misbehave" and a.node == "C" for a in sc.actions)


def test_load_from_path(tmp_path):
    path = tmp_path / "s.txt"
    path.write_text("node Solo\nsim horizon 5\n")
    assert load_scenario(path).horizon == 5
