"""Recursive reference algorithms: RNEA, ABA, and the weighted matrix form of ABA."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.linalg import solve_triangular

from .assembly import assemble_ne, extend_fd
from .errors import DimensionMismatch, SingularJointInertia
from .flops import CROSS6, NULL, TRANSFORM_APPLY, FlopCount
from .indexing import ConstraintId, VarId, fd_permutations, permute_vector, unpermute_vector
from .model import kinematics

#: smallest admissible joint-space articulated inertia S^T I^A S
JOINT_INERTIA_TOL = 1e-12


def _external(fx, n):
    if fx is None:
        return np.zeros((n + 1, 6))
    fx = np.asarray(fx, dtype=float)
    if fx.size != 6 * n:
        raise DimensionMismatch(f"expected {n}x6 external wrenches, got shape {fx.shape}")
    out = np.zeros((n + 1, 6))
    out[1:] = fx.reshape(n, 6)
    return out


def _vector(x, n, what):
    x = np.asarray(x, dtype=float).reshape(-1)
    if x.shape != (n,):
        raise DimensionMismatch(f"{what}: expected {n} values, got {x.size}")
    return x


def _pack(tree, a, f, tau, fx, qdd):
    d = {}
    for i in tree.links():
        d[VarId("a", i)] = a[i].copy()
        d[VarId("f", i)] = f[i].copy()
        d[VarId("tau", i)] = np.array([tau[i - 1]])
        d[VarId("fx", i)] = fx[i].copy()
        d[VarId("qdd", i)] = np.array([qdd[i - 1]])
    return d


def rnea(tree, q, qd, qdd, fx=None, kin=None, counter=NULL):
    """Inverse dynamics.  Returns ``(tau, d)`` where ``d`` maps every VarId to its value.

    ``fx`` holds one wrench per link (in link coordinates).
    """
    n = tree.n_links
    qdd = _vector(qdd, n, "qdd")
    fxa = _external(fx, n)
    kin = kin or kinematics(tree, q, qd)
    a = np.zeros((n + 1, 6))
    a[0] = tree.base_acceleration()
    f = np.zeros((n + 1, 6))
    for i in tree.links():
        a[i] = kin.X_lambda[i].apply_motion(a[tree.parent(i)]) + kin.S[i] * qdd[i - 1] + kin.c[i]
        counter.tally(**TRANSFORM_APPLY)
        counter.tally(mul=6, add=12)
        f[i] = tree.inertia(i).matrix() @ a[i] + kin.nu[i] - fxa[i]
        counter.matmul(6, 6)
        counter.vadd(12)
    tau = np.zeros(n)
    for i in reversed(tree.links()):
        tau[i - 1] = kin.S[i] @ f[i]
        counter.matmul(1, 6)
        lam = tree.parent(i)
        if lam != 0:
            f[lam] += kin.X_lambda[i].apply_transpose(f[i])
            counter.tally(**TRANSFORM_APPLY)
            counter.vadd(6)
    return tau, _pack(tree, a, f, tau, fxa, qdd)


@dataclass(frozen=True)
class AbaState:
    """Articulated quantities indexed by link number (row 0 unused)."""

    IA: np.ndarray
    Ia: np.ndarray
    pA: np.ndarray
    U: np.ndarray
    D: np.ndarray
    dinv: np.ndarray


def aba_backward(tree, kin, tau, fx, counter=NULL):
    n = tree.n_links
    IA = np.zeros((n + 1, 6, 6))
    Ia = np.zeros((n + 1, 6, 6))
    pA = np.zeros((n + 1, 6))
    U = np.zeros((n + 1, 6))
    D = np.zeros(n + 1)
    dinv = np.zeros(n + 1)
    for i in tree.links():
        IA[i] = tree.inertia(i).matrix()
        pA[i] = kin.nu[i] - fx[i]
        counter.vadd(6)
    for i in reversed(tree.links()):
        S = kin.S[i]
        U[i] = IA[i] @ S
        D[i] = S @ U[i]
        counter.matmul(6, 6)
        counter.matmul(1, 6)
        if not D[i] > JOINT_INERTIA_TOL:
            raise SingularJointInertia(f"link {i}: S^T I^A S = {D[i]:g}")
        dinv[i] = 1.0 / D[i]
        counter.tally(div=1)
        u = tau[i - 1] - S @ pA[i]
        counter.matmul(1, 6)
        counter.vadd(1)
        Ud = U[i] * dinv[i]
        counter.tally(mul=6)
        Ia[i] = IA[i] - np.outer(Ud, U[i])
        counter.tally(mul=36, add=36)
        lam = tree.parent(i)
        if lam == 0:
            continue
        pa = pA[i] + Ia[i] @ kin.c[i] + Ud * u
        counter.matmul(6, 6)
        counter.tally(mul=6, add=12)
        X = kin.X_lambda[i]
        Xm = X.matrix()
        IA[lam] += Xm.T @ Ia[i] @ Xm
        counter.matmul(6, 6, 6)
        counter.matmul(6, 6, 6)
        counter.vadd(36)
        pA[lam] += X.apply_transpose(pa)
        counter.tally(**TRANSFORM_APPLY)
        counter.vadd(6)
    return AbaState(IA, Ia, pA, U, D, dinv)


def aba(tree, q, qd, tau, fx=None, kin=None, counter=NULL):
    """Forward dynamics.  Returns ``(qdd, d)``."""
    n = tree.n_links
    tau = _vector(tau, n, "tau")
    fxa = _external(fx, n)
    kin = kin or kinematics(tree, q, qd)
    st = aba_backward(tree, kin, tau, fxa, counter)
    a = np.zeros((n + 1, 6))
    a[0] = tree.base_acceleration()
    f = np.zeros((n + 1, 6))
    qdd = np.zeros(n)
    for i in tree.links():
        ap = kin.X_lambda[i].apply_motion(a[tree.parent(i)]) + kin.c[i]
        counter.tally(**TRANSFORM_APPLY)
        counter.vadd(6)
        u = tau[i - 1] - kin.S[i] @ st.pA[i]
        counter.matmul(1, 6)
        counter.vadd(1)
        qdd[i - 1] = (u - st.U[i] @ ap) * st.dinv[i]
        counter.matmul(1, 6)
        counter.tally(mul=1, add=1)
        a[i] = ap + kin.S[i] * qdd[i - 1]
        counter.tally(mul=6, add=6)
        f[i] = st.IA[i] @ a[i] + st.pA[i]
    return qdd, _pack(tree, a, f, tau, fxa, qdd)


def count_flops_classic(algo, tree):
    """Operation count of one ``rnea`` or ``aba`` solve (kinematic terms precomputed)."""
    n = tree.n_links
    kin = kinematics(tree, np.zeros(n), np.zeros(n))
    counter = FlopCount()
    if algo == "rnea":
        rnea(tree, None, None, np.zeros(n), kin=kin, counter=counter)
    elif algo == "aba":
        aba(tree, None, None, np.zeros(n), kin=kin, counter=counter)
    else:
        raise ValueError(f"unknown algorithm {algo!r}")
    return counter


# ----------------------------------------------------------------------------
# weighted (matrix) form of ABA

@dataclass(frozen=True)
class AbaWeights:
    """Non-identity blocks of the right weight ``W^R`` and of the four left
    stages ``W^{L,1..4}`` (``W^L = W^{L,4} W^{L,3} W^{L,2} W^{L,1}``).

    ``WL[1]`` replaces diagonal blocks; the other stages add off-diagonal
    blocks to an identity.  ``W^R`` trades ``f_i`` for the articulated bias
    force ``p_i = f_i - I^A_i a_i``, so the weighted system is solved for
    ``d'`` and mapped back with ``d = W^R d'``.
    """

    WR: dict
    WL: tuple


def aba_weights(tree, kin, state):
    WR, L1, L2, L3, L4 = {}, {}, {}, {}, {}
    for i in tree.links():
        if not state.D[i] > JOINT_INERTIA_TOL:
            raise SingularJointInertia(f"link {i}: S^T I^A S = {state.D[i]:g}")
        S = kin.S[i].reshape(6, 1)
        ca, cf, ct = ConstraintId("NE_a", i), ConstraintId("NE_f", i), ConstraintId("NE_tau", i)
        WR[(VarId("f", i), VarId("a", i))] = state.IA[i]
        L1[(ct, ca)] = S.T @ state.IA[i]
        L2[(ct, ct)] = np.array([[state.dinv[i]]])
        L3[(ca, ct)] = -S
        for j in tree.children(i):
            L4[(cf, ConstraintId("NE_a", j))] = kin.X_lambda[j].matrix().T @ state.IA[j]
    return AbaWeights(WR, (L1, L2, L3, L4))


def _weight_matrix(blocks, perm, replace_diagonal=False):
    W = np.eye(perm.size)
    for (r, c), B in blocks.items():
        W[perm.slice(r), perm.slice(c)] = B
    return W


def weighted_fd_system(tree, q, qd, tau, fx=None):
    """``(T, rhs, p_fd, q_fd, weights)`` with ``T = W^L D W^R`` and ``rhs = W^L b``
    in the forward-dynamics permutations."""
    n = tree.n_links
    tau = _vector(tau, n, "tau")
    fxa = _external(fx, n)
    kin = kinematics(tree, q, qd)
    st = aba_backward(tree, kin, tau, fxa)
    w = aba_weights(tree, kin, st)
    sys = extend_fd(assemble_ne(tree, kin), tau, fxa[1:])
    p, qp = fd_permutations(n)
    D = sys.dense(p, qp)
    b = sys.rhs_vector(p)
    WR = _weight_matrix(w.WR, qp)
    WL = np.eye(p.size)
    for stage in w.WL:
        WL = _weight_matrix(stage, p) @ WL
    return WL @ D @ WR, WL @ b, p, qp, w, WR


def cancellation_blocks(tree):
    """Above-diagonal blocks of ``W^L D W^R`` that vanish only through the
    articulated-inertia identity (value zero up to rounding).

    Besides the per-link blocks, the child coupling ``X_j^T I^A_j`` brought in
    by ``W^{L,4}`` cancels the child's ``a_j`` and ``qdd_j`` columns in the
    parent's force row.
    """
    out = set()
    for i in tree.links():
        cf = ConstraintId("NE_f", i)
        out.add((cf, VarId("a", i)))
        out.add((ConstraintId("NE_a", i), VarId("qdd", i)))
        for j in tree.children(i):
            out.add((cf, VarId("a", j)))
            out.add((cf, VarId("qdd", j)))
    return out


def upper_blocks(T, p, q):
    """Map of above-diagonal ``(row id, col id) -> block`` with any nonzero entry."""
    out = {}
    for r, rid in enumerate(p.order):
        for c in range(r + 1, len(q.order)):
            cid = q.order[c]
            B = T[p.slice(rid), q.slice(cid)]
            if np.any(B != 0):
                out[(rid, cid)] = B
    return out


def aba_matrix_form(tree, q, qd, tau, fx=None):
    """Forward dynamics by forward substitution on ``W^L D W^R``.

    Above-diagonal entries are treated as structural zeros.  Returns
    ``(qdd, d)``.
    """
    T, rhs, p, qp, w, WR = weighted_fd_system(tree, q, qd, tau, fx)
    dprime = solve_triangular(np.tril(T), -rhs, lower=True)
    d = unpermute_vector(WR @ dprime, qp)
    qdd = np.array([d[VarId("qdd", i)][0] for i in tree.links()])
    return qdd, d
