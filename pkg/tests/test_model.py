import numpy as np
import pytest

from conftest import data_path
from ludyn import kinematics, parse_model, random_tree, rnea, serial_chain
from ludyn.errors import ParseError, TopologyError
from ludyn.model import format_model, transform_to_base

LINK = "link {name} parent={parent} joint=revolute axis=0,0,1 xyz=1,0,0 mass=1 com=0.5,0,0"


def test_pendulum_fixture(pendulum):
    assert pendulum.n_links == 1
    assert pendulum.gravity == (0.0, -9.81, 0.0)
    assert pendulum.inertia(1).mass == 2.0


def test_branched_parent_map(branched7):
    assert {i: branched7.parent(i) for i in branched7.links()} == {1: 0, 2: 1, 3: 2, 4: 2, 5: 4, 6: 2, 7: 6}
    assert branched7.children(2) == (3, 4, 6)


def test_humanoid_feet_are_first_and_last(humanoid12):
    assert humanoid12.names[0] == "r_foot"
    assert humanoid12.names[-1] == "l_foot"
    assert humanoid12.children(humanoid12.index("pelvis")) == (5, 10)


def test_file_order_does_not_matter():
    text = "\n".join([LINK.format(name="c", parent="b"), LINK.format(name="a", parent="world"),
                      LINK.format(name="b", parent="a")])
    tree = parse_model(text)
    assert tree.names == ("a", "b", "c")
    assert tree.parents == (0, 1, 2)


def test_comments_and_gravity():
    tree = parse_model("# header\ngravity 0,0,-1.5  # weak\n" + LINK.format(name="a", parent="world"))
    assert tree.gravity == (0.0, 0.0, -1.5)


@pytest.mark.parametrize("text, fragment", [
    ("link a parent=world joint=helical axis=0,0,1", "joint must be"),
    ("link a parent=world joint=revolute axis=0,0", "expected 3"),
    ("link a parent=world joint=revolute axis=0,0,0", "zero joint axis"),
    ("link a parent=world joint=revolute", "missing axis"),
    ("link a parent=world joint=revolute axis=0,0,1 mass=x", "expected 1"),
    ("link a parent=world joint=revolute axis=0,0,1 bogus=1", "unexpected token"),
    ("joint a", "unknown statement"),
    ("", "no links"),
])
def test_parse_errors_carry_location(text, fragment):
    with pytest.raises(ParseError) as info:
        parse_model(text)
    assert fragment in str(info.value)
    assert info.value.line >= 1


@pytest.mark.parametrize("lines, fragment", [
    ([LINK.format(name="a", parent="world"), LINK.format(name="b", parent="ghost")], "orphan"),
    ([LINK.format(name="a", parent="b"), LINK.format(name="b", parent="a")], "no link is attached"),
    ([LINK.format(name="a", parent="world"), LINK.format(name="b", parent="world")], "exactly one"),
    ([LINK.format(name="a", parent="world"), LINK.format(name="a", parent="a")], "defined twice"),
])
def test_topology_errors(lines, fragment):
    with pytest.raises(TopologyError, match=fragment):
        parse_model("\n".join(lines))


def test_format_round_trip(branched7):
    again = parse_model(format_model(branched7))
    assert again.names == branched7.names and again.parents == branched7.parents
    for i in branched7.links():
        np.testing.assert_allclose(again.inertia(i).matrix(), branched7.inertia(i).matrix(), atol=1e-12)
        assert again.joint(i) == branched7.joint(i)


def test_renumbering_invariance(branched7, rng):
    """Shuffling the file lines leaves per-name torques unchanged."""
    lines = format_model(branched7).splitlines()
    shuffled = [lines[0]] + list(rng.permutation(lines[1:]))
    other = parse_model("\n".join(shuffled))
    q = {name: v for name, v in zip(branched7.names, rng.uniform(-1, 1, 7))}
    qd = {name: v for name, v in zip(branched7.names, rng.uniform(-1, 1, 7))}
    qdd = {name: v for name, v in zip(branched7.names, rng.uniform(-1, 1, 7))}

    def torques(tree):
        vec = lambda d: np.array([d[nm] for nm in tree.names])
        tau, _ = rnea(tree, vec(q), vec(qd), vec(qdd))
        return dict(zip(tree.names, tau))

    a, b = torques(branched7), torques(other)
    for name in a:
        assert abs(a[name] - b[name]) <= 1e-12 * max(1.0, abs(a[name]))


def test_kinematics_is_pure(branched7, rng):
    q, qd = rng.normal(size=7), rng.normal(size=7)
    k1, k2 = kinematics(branched7, q, qd), kinematics(branched7, q, qd)
    assert np.array_equal(k1.v, k2.v) and np.array_equal(k1.nu, k2.nu)


def test_prismatic_joint_translates_along_axis():
    tree = parse_model("link s parent=world joint=prismatic axis=1,0,0")
    kin = kinematics(tree, [0.25], [0.0])
    X = transform_to_base(tree, kin, 1)
    np.testing.assert_allclose(X.translation, [0.25, 0.0, 0.0])
    np.testing.assert_allclose(kin.S[1], [0, 0, 0, 1, 0, 0])


def test_generators(rng):
    chain = serial_chain(4)
    assert chain.parents == (0, 1, 2, 3)
    assert all(chain.joint(i).kind == "revolute" and chain.joint(i).axis == (0.0, 0.0, 1.0)
               for i in chain.links())
    assert all(chain.inertia(i).mass == 1.0 for i in chain.links())
    tree = random_tree(25, rng, branching=0.6)
    assert all(tree.parent(i) < i for i in tree.links())
    assert any(len(tree.children(i)) > 1 for i in tree.links())


def test_load_missing_file():
    from ludyn import load_model
    with pytest.raises(OSError):
        load_model(data_path("does-not-exist.model"))
