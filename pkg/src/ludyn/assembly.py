"""Block assembly of the Newton-Euler constraint system ``D d + b = 0``.

Sign convention: the external force ``fx_i`` acting on body ``i`` enters
the force balance of link ``i`` with a minus sign::

    f_i = I_i a_i + nu_i - fx_i + sum_{j in mu_i} ^iX*_j f_j

and is expressed in body ``i`` coordinates.
"""
from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np

from .errors import DimensionMismatch
from .indexing import (ConstraintId, Permutation, VarId, base_constraints, fd_permutations,
                       id_permutations, permute_blocks, permute_vector, variables)

EYE6 = np.eye(6)
ONE = np.ones((1, 1))


class NonSquareSystem(UserWarning):
    """An assembled system whose scalar row and column counts differ."""


# Selectors are written in angular-first order (n_x, n_y, n_z, f_x, f_y, f_z).
# Three-axis load cell: normal force and the two in-plane torques.
LOADCELL3_MEASURED = (5, 0, 1)
LOADCELL3_UNMEASURED = (3, 4, 2)
# Slippery contact: everything except the torque about the contact normal.
SLIPPERY_MEASURED = (3, 4, 5, 0, 1)
SLIPPERY_UNMEASURED = (2,)


def _selector(indices, width=6):
    sel = np.zeros((len(indices), width))
    sel[np.arange(len(indices)), list(indices)] = 1.0
    return sel


@dataclass(frozen=True)
class MeasurementEntry:
    """One measured quantity: ``selector @ d[target] = y[channel]``."""

    kind: str
    link: int
    target: VarId
    selector: np.ndarray
    channel: str

    @property
    def height(self):
        return self.selector.shape[0]


MEASUREMENT_KINDS = ("qdd", "fx", "tau", "f", "loadcell3", "slippery")


def measurement(kind, link, name=None):
    """Build a :class:`MeasurementEntry` for one of :data:`MEASUREMENT_KINDS`."""
    channel = f"{kind}:{name if name is not None else link}"
    if kind == "qdd":
        return MeasurementEntry(kind, link, VarId("qdd", link), ONE.copy(), channel)
    if kind == "tau":
        return MeasurementEntry(kind, link, VarId("tau", link), ONE.copy(), channel)
    if kind == "fx":
        return MeasurementEntry(kind, link, VarId("fx", link), EYE6.copy(), channel)
    if kind == "f":
        return MeasurementEntry(kind, link, VarId("f", link), EYE6.copy(), channel)
    if kind == "loadcell3":
        return MeasurementEntry(kind, link, VarId("fx", link), _selector(LOADCELL3_MEASURED), channel)
    if kind == "slippery":
        return MeasurementEntry(kind, link, VarId("fx", link), _selector(SLIPPERY_MEASURED), channel)
    raise ValueError(f"unknown measurement kind {kind!r}")


@dataclass(frozen=True)
class MeasurementSpec:
    entries: tuple

    @property
    def channels(self):
        return [e.channel for e in self.entries]

    @property
    def height(self):
        return sum(e.height for e in self.entries)

    def constraint_ids(self):
        """Row ids: plain kinds reuse the dedicated ids, structured selectors
        become ``MEAS_generic`` blocks numbered by entry position."""
        ids = []
        for k, e in enumerate(self.entries):
            if e.kind == "qdd":
                ids.append(ConstraintId("MEAS_qdd", e.link))
            elif e.kind == "tau":
                ids.append(ConstraintId("MEAS_tau", e.link))
            elif e.kind == "fx":
                ids.append(ConstraintId("MEAS_fx", e.link))
            else:
                ids.append(ConstraintId("MEAS_generic", k + 1, e.height))
        return ids


def id_spec(tree):
    entries = []
    for i in tree.links():
        name = tree.names[i - 1]
        entries += [measurement("qdd", i, name), measurement("fx", i, name)]
    return MeasurementSpec(tuple(entries))


def two_feet_spec(tree, foot_a, foot_b, kind="loadcell3", floating=True):
    """Inverse dynamics with unknown contact wrenches at two feet.

    All joint accelerations and the external wrenches on every other link
    are measured; the feet carry ``kind`` sensors.  With ``floating`` the
    wrench transmitted from the fixed base to link 1 is known (zero for a
    free-floating robot), which is what makes the problem determined.
    """
    entries = []
    for i in tree.links():
        name = tree.names[i - 1]
        entries.append(measurement("qdd", i, name))
        if i in (foot_a, foot_b):
            entries.append(measurement(kind, i, name))
        else:
            entries.append(measurement("fx", i, name))
    if floating:
        entries.append(measurement("f", 1, tree.names[0]))
    return MeasurementSpec(tuple(entries))


@dataclass
class ConstraintSystem:
    """Block-sparse ``D d + b = 0``: blocks keyed by ``(row id, var id)``."""

    vars: list
    cons: list
    blocks: dict = field(default_factory=dict)
    rhs: dict = field(default_factory=dict)

    @property
    def n_rows(self):
        return sum(c.width for c in self.cons)

    @property
    def n_cols(self):
        return sum(v.width for v in self.vars)

    @property
    def is_square(self):
        return self.n_rows == self.n_cols

    def row_perm(self):
        return Permutation(self.cons)

    def col_perm(self):
        return Permutation(self.vars)

    def set_block(self, c, d, B):
        B = np.atleast_2d(np.asarray(B, dtype=float))
        if B.shape != (c.width, d.width):
            raise DimensionMismatch(f"block ({c}, {d}) must be {c.width}x{d.width}, got {B.shape}")
        self.blocks[(c, d)] = B

    def row_blocks(self, c):
        return {d: B for (r, d), B in self.blocks.items() if r == c}

    def dense(self, row_perm=None, col_perm=None):
        return permute_blocks(self.blocks, row_perm or self.row_perm(), col_perm or self.col_perm())

    def rhs_vector(self, row_perm=None):
        row_perm = row_perm or self.row_perm()
        data = {c: self.rhs.get(c, np.zeros(c.width)) for c in row_perm.order}
        return permute_vector(data, row_perm)

    def coo(self, row_perm=None, col_perm=None):
        """Scalar triplets of every stored block entry (explicit zeros included)."""
        row_perm = row_perm or self.row_perm()
        col_perm = col_perm or self.col_perm()
        rows, cols, vals = [], [], []
        for (c, d), B in self.blocks.items():
            r0 = row_perm.offsets[row_perm.position(c)]
            c0 = col_perm.offsets[col_perm.position(d)]
            rr, cc = np.indices(B.shape)
            rows.append(rr.ravel() + r0)
            cols.append(cc.ravel() + c0)
            vals.append(B.ravel())
        if not rows:
            return np.zeros(0, int), np.zeros(0, int), np.zeros(0)
        return np.concatenate(rows), np.concatenate(cols), np.concatenate(vals)

    def residual(self, d, row_perm=None):
        """``D d + b`` for a variable map ``d``."""
        row_perm = row_perm or self.row_perm()
        col_perm = Permutation(self.vars)
        x = permute_vector(d, col_perm)
        return self.dense(row_perm, col_perm) @ x + self.rhs_vector(row_perm)

    def copy(self):
        return ConstraintSystem(list(self.vars), list(self.cons), dict(self.blocks), dict(self.rhs))


def assemble_ne(tree, kin):
    """Newton-Euler rows (``NE_a``, ``NE_f``, ``NE_tau`` per link)."""
    n = tree.n_links
    sys = ConstraintSystem(variables(n), base_constraints(n))
    a0 = tree.base_acceleration()
    for i in tree.links():
        lam = tree.parent(i)
        X = kin.X_lambda[i]
        S = kin.S[i].reshape(6, 1)
        ca, cf, ct = ConstraintId("NE_a", i), ConstraintId("NE_f", i), ConstraintId("NE_tau", i)
        sys.set_block(ca, VarId("a", i), -EYE6)
        if lam != 0:
            sys.set_block(ca, VarId("a", lam), X.matrix())
            sys.rhs[ca] = kin.c[i].copy()
        else:
            sys.rhs[ca] = X.apply_motion(a0) + kin.c[i]
        sys.set_block(ca, VarId("qdd", i), S)
        sys.set_block(cf, VarId("f", i), -EYE6)
        sys.set_block(cf, VarId("a", i), tree.inertia(i).matrix())
        sys.set_block(cf, VarId("fx", i), -EYE6)
        for j in tree.children(i):
            sys.set_block(cf, VarId("f", j), kin.X_lambda[j].matrix().T)
        sys.rhs[cf] = kin.nu[i].copy()
        sys.set_block(ct, VarId("tau", i), -ONE)
        sys.set_block(ct, VarId("f", i), S.T)
        sys.rhs[ct] = np.zeros(1)
    return sys


def _per_link(values, n, width, what):
    arr = np.asarray(values, dtype=float).reshape(n, width) if np.size(values) == n * width else None
    if arr is None:
        raise DimensionMismatch(f"{what}: expected {n}x{width} values, got shape {np.shape(values)}")
    return arr


def _append(sys, cid, var, block, y):
    sys.cons.append(cid)
    sys.set_block(cid, var, block)
    sys.rhs[cid] = -np.atleast_1d(np.asarray(y, dtype=float))


def extend_id(sys, y_qdd, y_fx):
    n = len(sys.vars) // 5
    y_qdd = _per_link(y_qdd, n, 1, "y_qdd")
    y_fx = _per_link(y_fx, n, 6, "y_fx")
    out = sys.copy()
    for i in range(1, n + 1):
        _append(out, ConstraintId("MEAS_qdd", i), VarId("qdd", i), ONE, y_qdd[i - 1])
        _append(out, ConstraintId("MEAS_fx", i), VarId("fx", i), EYE6, y_fx[i - 1])
    return out


def extend_fd(sys, y_tau, y_fx):
    n = len(sys.vars) // 5
    y_tau = _per_link(y_tau, n, 1, "y_tau")
    y_fx = _per_link(y_fx, n, 6, "y_fx")
    out = sys.copy()
    for i in range(1, n + 1):
        _append(out, ConstraintId("MEAS_tau", i), VarId("tau", i), ONE, y_tau[i - 1])
        _append(out, ConstraintId("MEAS_fx", i), VarId("fx", i), EYE6, y_fx[i - 1])
    return out


def extend_generic(sys, spec, y):
    """Append the rows of ``spec``; ``y`` maps channel names to values.

    A non-square result is returned as is (with a :class:`NonSquareSystem`
    warning); solvability is decided downstream.
    """
    out = sys.copy()
    for cid, e in zip(spec.constraint_ids(), spec.entries):
        if e.channel not in y:
            raise KeyError(f"no value for measurement channel {e.channel!r}")
        val = np.atleast_1d(np.asarray(y[e.channel], dtype=float))
        if val.shape != (e.height,):
            raise DimensionMismatch(f"channel {e.channel!r} expects {e.height} values, got {val.size}")
        _append(out, cid, e.target, e.selector, val)
    if not out.is_square:
        warnings.warn(f"assembled system is {out.n_rows}x{out.n_cols}", NonSquareSystem, stacklevel=2)
    return out


# ----------------------------------------------------------------------------
# worst-case sparsity

@dataclass(frozen=True)
class SparsityPattern:
    """Boolean pattern in the scalar coordinates of ``row_perm`` x ``col_perm``."""

    rows: int
    cols: int
    positions: frozenset
    row_perm: Permutation = None
    col_perm: Permutation = None

    @property
    def nnz(self):
        return len(self.positions)

    def arrays(self):
        if not self.positions:
            return np.zeros(0, int), np.zeros(0, int)
        rc = np.array(sorted(self.positions), dtype=int)
        return rc[:, 0], rc[:, 1]

    def dense(self):
        M = np.zeros((self.rows, self.cols), dtype=bool)
        r, c = self.arrays()
        M[r, c] = True
        return M

    def permuted(self, P, Q):
        """Pattern of ``A[P][:, Q]`` (row ``k`` of the result is row ``P[k]``)."""
        pinv, qinv = np.empty(len(P), int), np.empty(len(Q), int)
        pinv[np.asarray(P)] = np.arange(len(P))
        qinv[np.asarray(Q)] = np.arange(len(Q))
        return SparsityPattern(self.rows, self.cols,
                               frozenset((int(pinv[r]), int(qinv[c])) for r, c in self.positions))


def pattern_from_dense(M, row_perm=None, col_perm=None):
    r, c = np.nonzero(np.asarray(M))
    return SparsityPattern(M.shape[0], M.shape[1], frozenset(zip(r.tolist(), c.tolist())),
                           row_perm, col_perm)


def _motion_transform_pattern():
    P = np.zeros((6, 6), dtype=bool)
    P[:3, :3] = P[3:, 3:] = P[3:, :3] = True
    return P


def _joint_subspace_pattern(joint):
    P = np.zeros((6, 1), dtype=bool)
    off = 0 if joint.kind == "revolute" else 3
    k = joint.canonical_axis()
    if k is None:
        P[off:off + 3] = True
    else:
        P[off + k] = True
    return P


def block_patterns(tree, spec=None, problem="id"):
    """Worst-case boolean block map ``(row id, var id) -> pattern``."""
    eye = np.eye(6, dtype=bool)
    XP = _motion_transform_pattern()
    pats = {}
    for i in tree.links():
        lam = tree.parent(i)
        S = _joint_subspace_pattern(tree.joint(i))
        ca, cf, ct = ConstraintId("NE_a", i), ConstraintId("NE_f", i), ConstraintId("NE_tau", i)
        pats[(ca, VarId("a", i))] = eye
        if lam != 0:
            pats[(ca, VarId("a", lam))] = XP
        pats[(ca, VarId("qdd", i))] = S
        pats[(cf, VarId("f", i))] = eye
        pats[(cf, VarId("a", i))] = tree.inertia(i).matrix() != 0
        pats[(cf, VarId("fx", i))] = eye
        for j in tree.children(i):
            pats[(cf, VarId("f", j))] = XP.T
        pats[(ct, VarId("tau", i))] = np.ones((1, 1), dtype=bool)
        pats[(ct, VarId("f", i))] = S.T
    if spec is None:
        spec = {"id": id_spec(tree), "fd": fd_spec(tree)}[problem]
    for cid, e in zip(spec.constraint_ids(), spec.entries):
        pats[(cid, e.target)] = e.selector != 0
    return pats


def fd_spec(tree):
    entries = []
    for i in tree.links():
        name = tree.names[i - 1]
        entries += [measurement("tau", i, name), measurement("fx", i, name)]
    return MeasurementSpec(tuple(entries))


def default_orders(tree, problem, spec=None):
    """Block row/column orders used for planning each problem class."""
    n = tree.n_links
    if problem == "id":
        return id_permutations(n)
    if problem == "fd":
        return fd_permutations(n)
    p_id, q = id_permutations(n)
    base = [c for c in p_id.order if c.kind.startswith("NE_")]
    return Permutation(base + spec.constraint_ids()), q


def _positions(blocks, row_perm, col_perm):
    positions = set()
    for (c, d), P in blocks.items():
        r0 = row_perm.offsets[row_perm.position(c)]
        c0 = col_perm.offsets[col_perm.position(d)]
        rr, cc = np.nonzero(P)
        positions.update(zip((rr + r0).tolist(), (cc + c0).tolist()))
    return positions


def _resolve(tree, problem, spec, row_perm, col_perm):
    if problem == "generic" and spec is None:
        raise ValueError("generic problems need a MeasurementSpec")
    if problem in ("id", "fd") and spec is None:
        spec = id_spec(tree) if problem == "id" else fd_spec(tree)
    rp, cp = default_orders(tree, problem, spec)
    return spec, row_perm or rp, col_perm or cp


def worst_case_pattern(tree, problem="id", spec=None, row_perm=None, col_perm=None):
    """Union of the instance patterns over all configurations.

    Transform blocks keep only their structural zero 3x3 block; rotation and
    translation-coupled sub-blocks are marked dense.  Joint subspaces on a
    coordinate axis contribute a single entry.
    """
    spec, row_perm, col_perm = _resolve(tree, problem, spec, row_perm, col_perm)
    positions = _positions(block_patterns(tree, spec), row_perm, col_perm)
    return SparsityPattern(row_perm.size, col_perm.size, frozenset(positions), row_perm, col_perm)
