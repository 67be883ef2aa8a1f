import numpy as np
import pytest

from ludyn.errors import DuplicateId, MissingId
from ludyn.indexing import (ConstraintId, Permutation, VarId, base_constraints, fd_permutations,
                            id_permutations, permute_vector, unpermute_vector, variables)


@pytest.mark.parametrize("n", [1, 2, 7, 30])
def test_sizes(n):
    assert len(variables(n)) == 5 * n
    # 6 + 6 + 1 + 6 + 1 scalars per link
    assert Permutation(variables(n)).size == 20 * n
    assert len(base_constraints(n)) == 3 * n
    for p, q in (id_permutations(n), fd_permutations(n)):
        assert len(p) == len(q) == 5 * n
        assert p.size == q.size == 20 * n
        assert set(q.order) == set(variables(n))


@pytest.mark.parametrize("n", [1, 4, 9])
def test_id_positions(n):
    """1-based block positions: fx_i, qdd_i pairs, then a_i, then (f_i, tau_i) leaves first."""
    p, q = id_permutations(n)
    for i in range(1, n + 1):
        assert q.position(VarId("fx", i)) + 1 == 2 * i - 1
        assert q.position(VarId("qdd", i)) + 1 == 2 * i
        assert q.position(VarId("a", i)) + 1 == 2 * n + i
        assert q.position(VarId("f", i)) + 1 == 3 * n + 2 * (n - i) + 1
        assert q.position(VarId("tau", i)) + 1 == 3 * n + 2 * (n - i) + 2
    # each row block sits against the column block it solves for
    pairs = {"MEAS_fx": "fx", "MEAS_qdd": "qdd", "NE_a": "a", "NE_f": "f", "NE_tau": "tau"}
    for r, c in zip(p.order, q.order):
        assert pairs[r.kind] == c.kind and r.link == c.link


def test_fd_rows_face_their_columns():
    p, q = fd_permutations(3)
    pairs = {"MEAS_fx": "fx", "MEAS_tau": "tau", "NE_f": "f", "NE_a": "a", "NE_tau": "qdd"}
    for r, c in zip(p.order, q.order):
        assert pairs[r.kind] == c.kind and r.link == c.link


def test_offsets_and_slices():
    perm = Permutation([VarId("tau", 1), VarId("a", 1), VarId("qdd", 2)])
    assert perm.offsets.tolist() == [0, 1, 7, 8]
    assert perm.slice(VarId("a", 1)) == slice(1, 7)
    with pytest.raises(MissingId):
        perm.position(VarId("f", 1))
    with pytest.raises(DuplicateId):
        Permutation([VarId("a", 1), VarId("a", 1)])


def test_vector_round_trip(rng):
    p, q = id_permutations(3)
    data = {v: rng.normal(size=v.width) for v in q.order}
    x = permute_vector(data, q)
    back = unpermute_vector(x, q)
    assert all(np.array_equal(back[v], data[v]) for v in data)
    with pytest.raises(MissingId):
        permute_vector({VarId("a", 9): np.zeros(6)}, q)


def test_relative_and_scalar_maps(rng):
    p, q = id_permutations(2)
    natural = Permutation(variables(2))
    rel = q.relative_to(natural)
    assert [natural.order[k] for k in rel] == list(q.order)
    data = {v: rng.normal(size=v.width) for v in natural.order}
    idx = q.scalar_indices(natural)
    assert np.array_equal(permute_vector(data, natural)[idx], permute_vector(data, q))


def test_generic_row_width():
    assert ConstraintId("MEAS_generic", 3, 5).width == 5
    assert str(ConstraintId("NE_f", 2)) == "NE_f2"
