"""Two-phase solver: an offline plan from the worst-case pattern, online
numeric solves, and well-posedness checks for generic sensor sets.

Measured values are passed as a channel map ``{"<kind>:<link name>": values}``
(see :func:`ludyn.assembly.measurement`).  Inverse dynamics uses the
``qdd`` and ``fx`` channels of every link, forward dynamics ``tau`` and ``fx``.
"""
from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import null_space
from scipy.spatial.transform import Rotation

from .assembly import (LOADCELL3_UNMEASURED, SLIPPERY_UNMEASURED, NonSquareSystem, SparsityPattern,
                       assemble_ne, default_orders, extend_generic, fd_spec, id_spec,
                       worst_case_pattern)
from .errors import IllPosedProblem, NumericallySingularPivot, StructurallySingular
from .flops import FlopCount
from .indexing import ConstraintId, VarId
from .model import kinematics
from .sparse import (GROWTH_LIMIT, CscMatrix, analyze, analyze_values, check_structural, factorize,
                     factorize_or_reanalyze, growth_factor, plan_from_order, solve)
from .spatial import SpatialTransform, skew

log = logging.getLogger(__name__)

PROBLEMS = ("id", "fd", "generic")
#: numeric spot checks performed by :func:`check_wellposed`
NUMERIC_SAMPLES = 100
#: joint positions and velocities are sampled uniformly in [-Q_RANGE, Q_RANGE]
Q_RANGE = np.pi
#: a factorization whose smallest pivot is below this fraction of max|A| counts as singular
SINGULAR_PIVOT_RATIO = 1e-10
#: seed of the configuration used to pick rows of over-determined systems
SELECTION_SEED = 0
#: configurations on which a pattern-only order is checked before it is frozen
VALIDATION_SAMPLES = 3

WELL_POSED = "well-posed"
STRUCTURALLY_SINGULAR = "structurally-singular"
NUMERICALLY_SINGULAR = "numerically-singular-config"

_UNMEASURED = {"loadcell3": LOADCELL3_UNMEASURED, "slippery": SLIPPERY_UNMEASURED}
# angular-first (n, f) to linear-first (f, n) component order
_LINEAR_FIRST = [3, 4, 5, 0, 1, 2]


@dataclass(frozen=True)
class Wellposedness:
    verdict: str
    witness: object = None
    detail: str = ""
    samples: int = 0

    @property
    def ok(self):
        return self.verdict == WELL_POSED

    def describe(self):
        text = self.verdict
        if self.ok and self.samples:
            text += f" (numeric, {self.samples} samples)"
        if self.detail:
            text += f": {self.detail}"
        return text


@dataclass(frozen=True)
class SolverPlan:
    """Everything fixed before any configuration is known.

    ``row_select`` lists the scalar rows (in ``row_perm`` coordinates) kept
    when the sensor set over-determines the unknowns; it is ``None`` for
    square systems.
    """

    tree: object
    problem: str
    spec: object
    row_perm: object
    col_perm: object
    ordering: object = field(repr=False)
    row_select: np.ndarray = field(default=None, repr=False)
    wellposedness: Wellposedness = None

    @property
    def size(self):
        return self.col_perm.size

    @property
    def predicted_fill(self):
        return self.ordering.predicted_fill


@dataclass
class Solution:
    """Solved variable values keyed by :class:`~ludyn.indexing.VarId`."""

    tree: object
    values: dict
    flops: FlopCount
    reanalyzed: bool = False

    @property
    def tau(self):
        return np.array([self.values[VarId("tau", i)][0] for i in self.tree.links()])

    @property
    def qdd(self):
        return np.array([self.values[VarId("qdd", i)][0] for i in self.tree.links()])

    def wrench(self, kind):
        """``(N, 6)`` array of ``a``, ``f`` or ``fx`` values."""
        return np.array([self.values[VarId(kind, i)] for i in self.tree.links()])

    def by_link(self):
        """``{link name: {"tau", "qdd", "a", "f", "fx"}}``."""
        out = {}
        for i in self.tree.links():
            out[self.tree.names[i - 1]] = {
                "tau": float(self.values[VarId("tau", i)][0]),
                "qdd": float(self.values[VarId("qdd", i)][0]),
                "a": self.values[VarId("a", i)].copy(),
                "f": self.values[VarId("f", i)].copy(),
                "fx": self.values[VarId("fx", i)].copy(),
            }
        return out


def _spec_for(tree, problem, spec):
    if problem not in PROBLEMS:
        raise ValueError(f"unknown problem {problem!r}; expected one of {PROBLEMS}")
    if problem == "generic":
        if spec is None:
            raise ValueError("generic problems need a MeasurementSpec")
        return spec
    if spec is not None:
        raise ValueError(f"{problem} problems use the built-in measurement set")
    return id_spec(tree) if problem == "id" else fd_spec(tree)


def random_state(tree, rng, q_range=Q_RANGE):
    n = tree.n_links
    return rng.uniform(-q_range, q_range, n), rng.uniform(-q_range, q_range, n)


def _assemble(tree, spec, q, qd, y, row_perm, col_perm):
    kin = kinematics(tree, q, qd)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", NonSquareSystem)
        sys = extend_generic(assemble_ne(tree, kin), spec, y)
    r, c, v = sys.coo(row_perm, col_perm)
    return r, c, v, sys.rhs_vector(row_perm)


def zero_channels(spec):
    return {e.channel: np.zeros(e.height) for e in spec.entries}


#: measurement kinds kept first when an over-determined system is made square
PRIMARY_KINDS = ("qdd", "fx", "loadcell3", "slippery")


def _select_rows(tree, spec, row_perm, col_perm, tol=1e-8):
    """Scalar rows of an over-determined system that keep it uniquely solvable.

    Newton-Euler rows are always kept.  Measurement rows are visited with the
    primary kinds (accelerations, external wrenches, contact sensors) first,
    in spec order, and kept when they add rank modulo the rows already kept
    (Gram-Schmidt in the null space of the Newton-Euler rows).  The ranks are
    evaluated once, at a fixed pseudo-random configuration.
    """
    rng = np.random.default_rng(SELECTION_SEED)
    q, qd = random_state(tree, rng)
    r, c, v, _ = _assemble(tree, spec, q, qd, zero_channels(spec), row_perm, col_perm)
    D = np.zeros((row_perm.size, col_perm.size))
    np.add.at(D, (r, c), v)
    return _select_rows_of(D, spec, row_perm, col_perm, tol)


def _select_rows_of(D, spec, row_perm, col_perm, tol=1e-8):
    def rows_of(cid):
        return list(range(*row_perm.slice(cid).indices(row_perm.size)))

    ne_rows = [k for cid in row_perm.order if cid.kind.startswith("NE_") for k in rows_of(cid)]
    meas = list(zip(spec.constraint_ids(), spec.entries))
    meas.sort(key=lambda item: item[1].kind not in PRIMARY_KINDS)
    Z = null_space(D[ne_rows])
    need = col_perm.size - len(ne_rows)
    basis = np.zeros((0, Z.shape[1]))
    kept = []
    for cid, _entry in meas:
        for k in rows_of(cid):
            if len(kept) == need:
                break
            w = D[k] @ Z
            scale = np.linalg.norm(w)
            if scale == 0:
                continue
            w = w - basis.T @ (basis @ w)
            w = w - basis.T @ (basis @ w)
            if np.linalg.norm(w) > tol * scale:
                basis = np.vstack([basis, w / np.linalg.norm(w)])
                kept.append(k)
    if len(kept) < need:
        raise StructurallySingular(f"measurements determine only {len(kept)} of {need} "
                                   "remaining unknowns", rows=(), cols=())
    return np.sort(np.array(ne_rows + kept))


def _restrict(pattern, keep):
    new = {int(r): k for k, r in enumerate(keep)}
    pos = frozenset((new[r], c) for r, c in pattern.positions if r in new)
    return SparsityPattern(len(keep), pattern.cols, pos)


def _instance(tree, spec, row_perm, col_perm, keep, q, qd, y):
    r, c, v, rhs = _assemble(tree, spec, q, qd, y, row_perm, col_perm)
    n = col_perm.size
    if keep is not None:
        where = np.full(row_perm.size, -1)
        where[keep] = np.arange(len(keep))
        mask = where[r] >= 0
        r, c, v = where[r[mask]], c[mask], v[mask]
        rhs = rhs[keep]
    return CscMatrix.from_coo(n, n, r, c, v), rhs


def _fragile(ordering, samples):
    for A in samples:
        try:
            factors = factorize(A, ordering)
        except NumericallySingularPivot:
            return True
        if growth_factor(A, factors) > GROWTH_LIMIT:
            return True
    return False


def articulated_order(tree, row_perm, col_perm):
    """Scalar pivot order of the articulated-body elimination for forward dynamics.

    Measurement rows first, then from the leaves to the root: ``f_i`` against
    ``NE_f(i)`` and ``a_i`` against ``NE_a(i)`` (unit pivots), then ``qdd_i``
    against ``NE_tau(i)``, whose pivot is ``S_i^T I^A_i S_i > 0``.  No pivot
    depends on the configuration, unlike a pattern-only Markowitz order.
    """
    P, Q = [], []

    def pair(cid, vid):
        P.extend(range(*row_perm.slice(cid).indices(row_perm.size)))
        Q.extend(range(*col_perm.slice(vid).indices(col_perm.size)))

    for i in tree.links():
        pair(ConstraintId("MEAS_tau", i), VarId("tau", i))
        pair(ConstraintId("MEAS_fx", i), VarId("fx", i))
    for i in reversed(tree.links()):
        pair(ConstraintId("NE_f", i), VarId("f", i))
        pair(ConstraintId("NE_a", i), VarId("a", i))
        pair(ConstraintId("NE_tau", i), VarId("qdd", i))
    return P, Q


def _complete_pivoting(S):
    """Row and column order of Gaussian elimination with complete pivoting."""
    S = np.array(S, dtype=float)
    rows, cols = list(range(S.shape[0])), list(range(S.shape[1]))
    P, Q = [], []
    while rows:
        sub = np.abs(S[np.ix_(rows, cols)])
        i, j = np.unravel_index(np.argmax(sub), sub.shape)
        r, c = rows.pop(i), cols.pop(j)
        if S[r, c] != 0:
            S[np.ix_(rows, cols)] -= np.outer(S[rows, c], S[r, cols]) / S[r, c]
        P.append(r)
        Q.append(c)
    return P, Q


def embedded_id_order(tree, pattern, row_perm, col_perm, keep=None, sample=None):
    """Scalar pivot order that treats a generic problem as inverse dynamics.

    Measurement rows with a single entry pin their unknown first.  Then
    ``a_i`` is taken from ``NE_a(i)`` root to leaves, and ``f_i`` from
    ``NE_f(i)`` and ``tau_i`` from ``NE_tau(i)`` leaves to root, all on unit
    pivots.  Whatever is left (the unknowns the ID recursion cannot reach and
    the measurement rows that determine them) forms a small dense tail,
    ordered by complete pivoting on its Schur complement in ``sample``.
    """
    rows = np.arange(row_perm.size) if keep is None else np.asarray(keep)
    where = {int(r): k for k, r in enumerate(rows)}
    count = np.zeros(pattern.rows, int)
    only = {}
    for r, c in pattern.positions:
        count[r] += 1
        only[r] = c
    col_kind = {}
    for vid in col_perm.order:
        for c in range(*col_perm.slice(vid).indices(col_perm.size)):
            col_kind[c] = vid.kind
    P, Q, used_r, used_c = [], [], set(), set()

    def take(r, c):
        if r not in used_r and c not in used_c:
            P.append(r)
            Q.append(c)
            used_r.add(r)
            used_c.add(c)

    def block_rows(cid):
        return [where.get(k) for k in range(*row_perm.slice(cid).indices(row_perm.size))]

    def block_cols(vid):
        return list(range(*col_perm.slice(vid).indices(col_perm.size)))

    for cid in row_perm.order:
        if cid.kind.startswith("NE_"):
            continue
        for r in block_rows(cid):
            if r is not None and count[r] == 1 and col_kind[only[r]] not in ("a", "f"):
                take(r, only[r])
    for i in tree.links():
        for r, c in zip(block_rows(ConstraintId("NE_a", i)), block_cols(VarId("a", i))):
            take(r, c)
    for i in reversed(tree.links()):
        for r, c in zip(block_rows(ConstraintId("NE_f", i)), block_cols(VarId("f", i))):
            take(r, c)
        take(block_rows(ConstraintId("NE_tau", i))[0], block_cols(VarId("tau", i))[0])
    tail_r = [r for r in range(pattern.rows) if r not in used_r]
    tail_c = [c for c in range(pattern.cols) if c not in used_c]
    if tail_r:
        A = sample.to_dense()
        head = np.linalg.solve(A[np.ix_(P, Q)], A[np.ix_(P, tail_c)])
        S = A[np.ix_(tail_r, tail_c)] - A[np.ix_(tail_r, Q)] @ head
        tp, tq = _complete_pivoting(S)
        P += [tail_r[k] for k in tp]
        Q += [tail_c[k] for k in tq]
    return P, Q


def plan(tree, problem="id", spec=None, validation_samples=VALIDATION_SAMPLES):
    """Offline phase: worst-case pattern, optional row selection, Markowitz order.

    The Markowitz order sees only the pattern.  It is factorized at
    ``validation_samples`` seeded configurations; if it meets a numerically
    singular pivot or excessive growth there, it is replaced (still offline)
    by the articulated-body order for forward dynamics, or by value-aware
    threshold Markowitz at another seeded configuration otherwise.  Either
    replacement is compiled against the same worst-case pattern.
    """
    spec = _spec_for(tree, problem, spec)
    row_perm, col_perm = default_orders(tree, problem, spec)
    pattern = worst_case_pattern(tree, problem, spec, row_perm, col_perm)
    keep = None
    if pattern.rows < pattern.cols:
        raise StructurallySingular(
            f"{pattern.rows} equations for {pattern.cols} unknowns: under-determined",
            rows=(), cols=())
    if pattern.rows > pattern.cols:
        keep = _select_rows(tree, spec, row_perm, col_perm)
        log.info("over-determined by %d rows; keeping a square subset",
                 pattern.rows - pattern.cols)
        pattern = _restrict(pattern, keep)
    ordering = analyze(pattern)
    rng = np.random.default_rng(SELECTION_SEED + 1)
    y = zero_channels(spec)

    def sample():
        return _instance(tree, spec, row_perm, col_perm, keep, *random_state(tree, rng), y)[0]

    samples = [sample() for _ in range(validation_samples)]
    if _fragile(ordering, samples):
        if problem == "fd":
            log.info("Markowitz order is numerically fragile; using the articulated-body order")
            candidate = plan_from_order(pattern, *articulated_order(tree, row_perm, col_perm),
                                        method="articulated")
        else:
            log.info("Markowitz order is numerically fragile; trying the embedded ID order")
            candidate = plan_from_order(
                pattern, *embedded_id_order(tree, pattern, row_perm, col_perm, keep, sample()),
                method="embedded-id")
            if _fragile(candidate, samples):
                log.info("embedded ID order is fragile too; using a value-aware order")
                try:
                    candidate = analyze_values(sample(), pattern)
                except NumericallySingularPivot:
                    candidate = None
        if candidate is not None and not _fragile(candidate, samples):
            ordering = candidate
    verdict = contact_verdict(spec) or Wellposedness(WELL_POSED, detail="structural")
    return SolverPlan(tree, problem, spec, row_perm, col_perm, ordering, keep, verdict)


def _matrix(plan_, q, qd, y):
    return _instance(plan_.tree, plan_.spec, plan_.row_perm, plan_.col_perm, plan_.row_select,
                     q, qd, y)


def _reselect(plan_, q, qd, y):
    """Square instance whose measurement rows are chosen on this configuration."""
    r, c, v, rhs = _assemble(plan_.tree, plan_.spec, q, qd, y, plan_.row_perm, plan_.col_perm)
    D = np.zeros((plan_.row_perm.size, plan_.col_perm.size))
    np.add.at(D, (r, c), v)
    keep = _select_rows_of(D, plan_.spec, plan_.row_perm, plan_.col_perm)
    return CscMatrix.from_dense(D[keep]), rhs[keep]


def execute(plan_, q, qd, y):
    """Online phase: assemble at ``(q, qd)``, factorize with the frozen order, solve.

    Raises :class:`IllPosedProblem` for plans whose sensor set is not
    well-posed, and for configurations at which the instance is singular.
    When the rows kept from an over-determined sensor set happen to be
    singular at ``(q, qd)``, the selection is redone on the instance first.  A numerically singular pivot or excessive growth triggers one
    re-analysis on the instance (the plan itself is never modified).
    """
    if plan_.wellposedness is not None and not plan_.wellposedness.ok:
        raise IllPosedProblem(plan_.wellposedness)
    A, rhs = _matrix(plan_, q, qd, y)
    try:
        try:
            factors, used = factorize_or_reanalyze(A, plan_.ordering)
        except (NumericallySingularPivot, StructurallySingular):
            if plan_.row_select is None:
                raise
            log.info("selected rows are singular here; selecting again on the instance")
            A, rhs = _reselect(plan_, q, qd, y)
            used = analyze_values(A)
            factors = factorize(A, used)
    except (NumericallySingularPivot, StructurallySingular) as exc:
        raise IllPosedProblem(Wellposedness(
            NUMERICALLY_SINGULAR, witness=(np.array(q, dtype=float), np.array(qd, dtype=float)),
            detail=f"singular at this configuration ({exc})")) from exc
    flops = FlopCount() + factors.flops
    x = solve(factors, -rhs, counter=flops)
    values = {vid: x[plan_.col_perm.slice(vid)].copy() for vid in plan_.col_perm.order}
    return Solution(plan_.tree, values, flops, reanalyzed=used is not plan_.ordering)


# ----------------------------------------------------------------------------
# well-posedness

@dataclass(frozen=True)
class Certificate:
    """Outcome of :func:`feet_singularity_certificate`."""

    transform: SpatialTransform
    matrix: np.ndarray
    singular_values: np.ndarray
    rank: int
    message: str

    @property
    def min_singular_value(self):
        return float(self.singular_values.min()) if self.singular_values.size else 0.0

    @property
    def singular(self):
        return self.transform is not None


def _force_transform_linear_first(R, p):
    """``[[R, 0], [p x R, R]]``: force transform in (force, moment) order."""
    X = np.zeros((6, 6))
    X[:3, :3] = R
    X[3:, 3:] = R
    X[3:, :3] = skew(p) @ R
    return X


def _fmt(v):
    return "(" + ", ".join(f"{x:g}" for x in v) + ")"


def feet_singularity_certificate(Hf, Hmu, p=(1.0, 2.0, 3.0), tol=1e-12):
    """Witness that two feet with unmeasured wrench directions ``H`` are singular.

    ``H = [Hf; Hmu]`` spans the unmeasured force (``Hf``) and moment
    (``Hmu``) directions of one foot, in the same (force, moment) order as the
    returned matrix ``[H, X* H]``.  If ``Hf`` is square and singular, ``X*``
    uses ``R = 1`` and the translation ``p``: a force direction lost by ``Hf``
    reappears as the same pure moment in both feet, so the two blocks share a
    column.  Otherwise no witness is built and the rank at a generic
    transform is reported.
    """
    Hf = np.atleast_2d(np.asarray(Hf, dtype=float))
    Hmu = np.atleast_2d(np.asarray(Hmu, dtype=float))
    H = np.vstack([Hf, Hmu])
    if H.shape[0] != 6 or Hf.shape != Hmu.shape:
        raise ValueError("Hf and Hmu must both be 3 x k")
    square_singular = (Hf.shape[1] == 3
                       and np.linalg.svd(Hf, compute_uv=False).min() <= tol * max(1.0, np.abs(Hf).max()))
    if square_singular:
        R = np.eye(3)
        p = np.asarray(p, dtype=float)
        M = np.hstack([H, _force_transform_linear_first(R, p) @ H])
        sv = np.linalg.svd(M, compute_uv=False)
        # the force form of SpatialTransform(E, r) is [[E, -E r x], [0, E]] (moment first)
        X = SpatialTransform(R.T.copy(), -R.T @ p)
        rank = int(np.sum(sv > tol * sv.max()))
        return Certificate(X, M, sv, rank,
                           f"Hf singular: [H, X*H] at R = I, p = {_fmt(p)} has minimum "
                           f"singular value {sv.min():.3g}")
    rng = np.random.default_rng(SELECTION_SEED)
    R = Rotation.random(random_state=rng).as_matrix()
    M = np.hstack([H, _force_transform_linear_first(R, rng.normal(size=3)) @ H])
    sv = np.linalg.svd(M, compute_uv=False)
    rank = int(np.sum(sv > tol * sv.max()))
    return Certificate(None, M, sv, rank,
                       f"no singular witness constructed; rank {rank} of {M.shape[1]} "
                       "at a generic transform")


def contact_H(kind):
    """Unmeasured wrench directions of a contact sensor, split into (Hf, Hmu)."""
    idx = _UNMEASURED[kind]
    H = np.zeros((6, len(idx)))
    H[list(idx), np.arange(len(idx))] = 1.0
    H = H[_LINEAR_FIRST]
    return H[:3], H[3:]


def contact_verdict(spec):
    """Non-well-posed verdict from the contact certificate, or ``None``.

    Applies when exactly two links carry contact sensors of the same kind
    (the two-feet situation).
    """
    contacts = [e for e in spec.entries if e.kind in _UNMEASURED]
    if len(contacts) != 2 or contacts[0].kind != contacts[1].kind:
        return None
    cert = feet_singularity_certificate(*contact_H(contacts[0].kind))
    if not cert.singular:
        return None
    return Wellposedness(NUMERICALLY_SINGULAR, witness=cert,
                         detail=f"{contacts[0].kind} feet: {cert.message}")


def numeric_check(plan_, samples=NUMERIC_SAMPLES, rng=None):
    """Factorize at ``samples`` random configurations; the first singular one
    is returned as ``(q, qd)``, otherwise ``None``."""
    rng = rng if rng is not None else np.random.default_rng(1)
    y = zero_channels(plan_.spec)
    for _ in range(samples):
        q, qd = random_state(plan_.tree, rng)
        A, _ = _matrix(plan_, q, qd, y)
        try:
            factors, _ = factorize_or_reanalyze(A, plan_.ordering)
        except NumericallySingularPivot:
            return q, qd
        U = factors.U
        diag = U.data[U.indptr[1:] - 1]
        if np.abs(diag).min() < SINGULAR_PIVOT_RATIO * np.abs(A.data).max():
            return q, qd
    return None


def check_wellposed(target, samples=NUMERIC_SAMPLES, rng=None):
    """Verdict for a :class:`SolverPlan` or a bare :class:`SparsityPattern`.

    Patterns get the structural (perfect matching) test only.  Plans also
    get the contact certificate and ``samples`` numeric factorizations.
    """
    if isinstance(target, SparsityPattern):
        try:
            check_structural(target)
        except StructurallySingular as exc:
            return Wellposedness(STRUCTURALLY_SINGULAR, witness=(exc.rows, exc.cols), detail=str(exc))
        return Wellposedness(WELL_POSED, detail="structural")
    if target.wellposedness is not None and not target.wellposedness.ok:
        return target.wellposedness
    bad = numeric_check(target, samples, rng)
    if bad is not None:
        return Wellposedness(NUMERICALLY_SINGULAR, witness=bad,
                             detail="singular factorization at a sampled configuration")
    return Wellposedness(WELL_POSED, samples=samples)


def assess(tree, problem="id", spec=None, samples=NUMERIC_SAMPLES):
    """:func:`plan` followed by :func:`check_wellposed`, with structural
    failures reported as a verdict instead of an exception."""
    try:
        p = plan(tree, problem, spec)
    except StructurallySingular as exc:
        return Wellposedness(STRUCTURALLY_SINGULAR, witness=(exc.rows, exc.cols), detail=str(exc))
    return check_wellposed(p, samples)
