"""Dynamic-variable and constraint identifiers, block permutations.

Links are numbered from 1; the fixed base never appears as an id.
"""
from __future__ import annotations

from typing import NamedTuple

import numpy as np

from .errors import DuplicateId, MissingId

VAR_KINDS = ("a", "f", "tau", "fx", "qdd")
VAR_WIDTH = {"a": 6, "f": 6, "tau": 1, "fx": 6, "qdd": 1}
CON_KINDS = ("NE_a", "NE_f", "NE_tau", "MEAS_qdd", "MEAS_fx", "MEAS_tau", "MEAS_generic")
CON_HEIGHT = {"NE_a": 6, "NE_f": 6, "NE_tau": 1, "MEAS_qdd": 1, "MEAS_fx": 6, "MEAS_tau": 1}


class VarId(NamedTuple):
    kind: str
    link: int

    @property
    def width(self):
        return VAR_WIDTH[self.kind]

    def __str__(self):
        return f"{self.kind}{self.link}"


class ConstraintId(NamedTuple):
    """A block row.  ``height`` is only meaningful for ``MEAS_generic`` rows,
    whose ``link`` field is the measurement block index."""

    kind: str
    link: int
    height: int = 0

    @property
    def width(self):
        return self.height if self.kind == "MEAS_generic" else CON_HEIGHT[self.kind]

    def __str__(self):
        return f"{self.kind}{self.link}"


def variables(n_links):
    """𝒟 in natural order (all kinds of link 1, then link 2, ...)."""
    return [VarId(k, i) for i in range(1, n_links + 1) for k in VAR_KINDS]


def base_constraints(n_links):
    return [ConstraintId(k, i) for i in range(1, n_links + 1) for k in ("NE_a", "NE_f", "NE_tau")]


class Permutation:
    """An ordering of block ids with the scalar offset of each block.

    ``offsets[k]`` is the first scalar index of ``order[k]`` and
    ``offsets[-1]`` the total scalar size.
    """

    __slots__ = ("order", "offsets", "_pos")

    def __init__(self, order):
        order = tuple(order)
        pos = {}
        for k, ident in enumerate(order):
            if ident in pos:
                raise DuplicateId(f"{ident} appears twice in permutation")
            pos[ident] = k
        self.order = order
        self._pos = pos
        self.offsets = np.concatenate([[0], np.cumsum([ident.width for ident in order])]).astype(int)

    def __len__(self):
        return len(self.order)

    def __iter__(self):
        return iter(self.order)

    def __contains__(self, ident):
        return ident in self._pos

    def __eq__(self, other):
        return isinstance(other, Permutation) and self.order == other.order

    def __hash__(self):
        return hash(self.order)

    def __repr__(self):
        return "Permutation([" + ", ".join(map(str, self.order)) + "])"

    @property
    def size(self):
        return int(self.offsets[-1])

    def position(self, ident):
        try:
            return self._pos[ident]
        except KeyError:
            raise MissingId(f"{ident} not in permutation") from None

    def slice(self, ident):
        k = self.position(ident)
        return slice(int(self.offsets[k]), int(self.offsets[k + 1]))

    def relative_to(self, reference):
        """Index array ``p`` with ``self.order[k] == reference.order[p[k]]``."""
        if set(reference.order) != set(self.order):
            raise MissingId("permutations are over different id sets")
        return np.array([reference.position(ident) for ident in self.order], dtype=int)

    def scalar_indices(self, reference):
        """Scalar gather map: ``x_self = x_reference[idx]``."""
        parts = [np.arange(*reference.slice(ident).indices(reference.size)) for ident in self.order]
        return np.concatenate(parts) if parts else np.zeros(0, dtype=int)


def invert(p):
    p = np.asarray(p, dtype=int)
    inv = np.empty_like(p)
    inv[p] = np.arange(len(p))
    return inv


def compose(p, q):
    """``(p ∘ q)[k] = p[q[k]]``."""
    return np.asarray(p, dtype=int)[np.asarray(q, dtype=int)]


def id_permutations(n_links):
    """Row/column orders that make the inverse-dynamics system lower triangular."""
    n = n_links
    q = []
    p = []
    for i in range(1, n + 1):
        q += [VarId("fx", i), VarId("qdd", i)]
        p += [ConstraintId("MEAS_fx", i), ConstraintId("MEAS_qdd", i)]
    q += [VarId("a", i) for i in range(1, n + 1)]
    p += [ConstraintId("NE_a", i) for i in range(1, n + 1)]
    for i in range(n, 0, -1):
        q += [VarId("f", i), VarId("tau", i)]
        p += [ConstraintId("NE_f", i), ConstraintId("NE_tau", i)]
    return Permutation(p), Permutation(q)


def fd_permutations(n_links):
    """Row/column orders under which the staged ABA weights triangularize
    the forward-dynamics system.

    After the weighting, row ``NE_tau(i)`` solves for ``qdd_i`` and is
    therefore placed against that column.
    """
    n = n_links
    q = []
    p = []
    for i in range(1, n + 1):
        q += [VarId("fx", i), VarId("tau", i)]
        p += [ConstraintId("MEAS_fx", i), ConstraintId("MEAS_tau", i)]
    q += [VarId("f", i) for i in range(n, 0, -1)]
    p += [ConstraintId("NE_f", i) for i in range(n, 0, -1)]
    q += [VarId("a", i) for i in range(1, n + 1)]
    p += [ConstraintId("NE_a", i) for i in range(1, n + 1)]
    q += [VarId("qdd", i) for i in range(1, n + 1)]
    p += [ConstraintId("NE_tau", i) for i in range(1, n + 1)]
    return Permutation(p), Permutation(q)


def permute_vector(data, perm):
    """Stack ``data[id]`` in permutation order."""
    extra = set(data) - set(perm.order)
    if extra:
        raise MissingId(f"ids not covered by permutation: {sorted(map(str, extra))}")
    out = np.zeros(perm.size)
    for k, ident in enumerate(perm.order):
        if ident not in data:
            raise MissingId(f"no value for {ident}")
        val = np.atleast_1d(np.asarray(data[ident], dtype=float))
        if val.shape != (ident.width,):
            raise ValueError(f"{ident} expects width {ident.width}, got {val.shape}")
        out[perm.offsets[k]:perm.offsets[k + 1]] = val
    return out


def unpermute_vector(x, perm):
    return {ident: np.array(x[perm.offsets[k]:perm.offsets[k + 1]]) for k, ident in enumerate(perm.order)}


def permute_blocks(blocks, row_perm, col_perm):
    """Dense ``D_{p,q}`` from a map ``(row id, col id) -> block``."""
    D = np.zeros((row_perm.size, col_perm.size))
    for (r, c), B in blocks.items():
        D[row_perm.slice(r), col_perm.slice(c)] = B
    return D
