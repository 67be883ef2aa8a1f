"""Scalar sparse kernel: CSC storage, Markowitz ordering, frozen-pivot LU.

The ordering is computed once from a boolean pattern (``analyze``); the
numeric factorization (``factorize``) replays the recorded elimination with
no runtime pivoting.  Conventions: ``P A Q = L U`` with ``L`` unit lower
triangular and ``U`` carrying the pivots, where ``(P A Q)[k, l] =
A[P[k], Q[l]]``.
"""
from __future__ import annotations

import heapq
import logging
from dataclasses import dataclass, field

import numpy as np
from scipy.sparse import csr_matrix
from scipy.sparse.csgraph import maximum_bipartite_matching

from .errors import NumericallySingularPivot, StructurallySingular
from .flops import FlopCount

log = logging.getLogger(__name__)

#: a pivot is rejected when |pivot| < PIVOT_TOL * max |entry| of its column
PIVOT_TOL = 1e-12
#: element growth above which the frozen order is abandoned for re-analysis;
#: the factorization error ||PAQ - LU|| stays within about 1e-16 * growth * max|A|
GROWTH_LIMIT = 1e5


@dataclass(frozen=True)
class CscMatrix:
    nrows: int
    ncols: int
    indptr: np.ndarray
    indices: np.ndarray
    data: np.ndarray

    @property
    def nnz(self):
        return int(self.indptr[-1])

    @property
    def shape(self):
        return (self.nrows, self.ncols)

    @classmethod
    def from_coo(cls, nrows, ncols, rows, cols, vals):
        """Build from triplets; duplicates are summed, explicit zeros kept."""
        rows = np.asarray(rows, dtype=int)
        cols = np.asarray(cols, dtype=int)
        vals = np.asarray(vals, dtype=float)
        key = cols * nrows + rows
        order = np.argsort(key, kind="stable")
        key, vals = key[order], vals[order]
        uniq, start = np.unique(key, return_index=True)
        data = np.add.reduceat(vals, start) if len(vals) else vals
        ucols, urows = np.divmod(uniq, nrows)
        indptr = np.zeros(ncols + 1, dtype=int)
        np.add.at(indptr, ucols + 1, 1)
        return cls(nrows, ncols, np.cumsum(indptr), urows.astype(int), np.asarray(data, dtype=float))

    @classmethod
    def from_dense(cls, M):
        M = np.asarray(M, dtype=float)
        r, c = np.nonzero(M)
        return cls.from_coo(M.shape[0], M.shape[1], r, c, M[r, c])

    def coo(self):
        cols = np.repeat(np.arange(self.ncols), np.diff(self.indptr))
        return self.indices.copy(), cols, self.data.copy()

    def to_dense(self):
        M = np.zeros(self.shape)
        r, c, v = self.coo()
        M[r, c] = v
        return M

    def matvec(self, x):
        r, c, v = self.coo()
        y = np.zeros(self.nrows)
        np.add.at(y, r, v * np.asarray(x)[c])
        return y

    def norm_inf(self):
        r, _, v = self.coo()
        s = np.zeros(self.nrows)
        np.add.at(s, r, np.abs(v))
        return float(s.max()) if self.nrows else 0.0

    def permute(self, P, Q):
        """``A[P][:, Q]``."""
        r, c, v = self.coo()
        return CscMatrix.from_coo(self.nrows, self.ncols, _inverse(P)[r], _inverse(Q)[c], v)


def _inverse(p):
    p = np.asarray(p, dtype=int)
    inv = np.empty_like(p)
    inv[p] = np.arange(len(p))
    return inv


# ----------------------------------------------------------------------------
# Matrix Market

def write_matrix_market(fh, A, comment=None):
    """Coordinate real general; values written with ``repr`` (exact round trip)."""
    fh.write("%%MatrixMarket matrix coordinate real general\n")
    if comment:
        for line in comment.splitlines():
            fh.write(f"% {line}\n")
    r, c, v = A.coo()
    fh.write(f"{A.nrows} {A.ncols} {len(v)}\n")
    for i, j, x in zip(r, c, v):
        fh.write(f"{i + 1} {j + 1} {float(x)!r}\n")


def read_matrix_market(fh):
    header = fh.readline().split()
    if len(header) < 5 or header[0] != "%%MatrixMarket" or header[1] != "matrix" \
            or header[2] != "coordinate":
        raise ValueError("only MatrixMarket coordinate matrices are supported")
    field_, symmetry = header[3], header[4]
    if field_ not in ("real", "integer") or symmetry != "general":
        raise ValueError(f"unsupported MatrixMarket variant: {field_} {symmetry}")
    line = fh.readline()
    while line.startswith("%"):
        line = fh.readline()
    m, n, nnz = (int(x) for x in line.split())
    rows, cols, vals = np.zeros(nnz, int), np.zeros(nnz, int), np.zeros(nnz)
    for k in range(nnz):
        i, j, x = fh.readline().split()
        rows[k], cols[k], vals[k] = int(i) - 1, int(j) - 1, float(x)
    return CscMatrix.from_coo(m, n, rows, cols, vals)


# ----------------------------------------------------------------------------
# ordering

def _structure(pattern):
    rows = [set() for _ in range(pattern.rows)]
    cols = [set() for _ in range(pattern.cols)]
    for r, c in pattern.positions:
        rows[r].add(c)
        cols[c].add(r)
    return rows, cols


def check_structural(pattern):
    """Raise :class:`StructurallySingular` unless a perfect matching exists."""
    if pattern.rows != pattern.cols:
        raise ValueError(f"pattern is not square: {pattern.rows}x{pattern.cols}")
    r, c = pattern.arrays()
    M = csr_matrix((np.ones(len(r)), (r, c)), shape=(pattern.rows, pattern.cols))
    match = maximum_bipartite_matching(M, perm_type="column")
    bad_rows = np.flatnonzero(match < 0)
    if len(bad_rows):
        matched_cols = set(match[match >= 0].tolist())
        bad_cols = [j for j in range(pattern.cols) if j not in matched_cols]
        raise StructurallySingular(
            f"structural rank {pattern.rows - len(bad_rows)} < {pattern.rows}",
            bad_rows.tolist(), bad_cols)


class _Elimination:
    """Mutable row/column sets of the reduced pattern during ordering."""

    def __init__(self, pattern):
        self.rows, self.cols = _structure(pattern)
        self.row_active = [True] * pattern.rows
        self.col_active = [True] * pattern.cols
        self.single_rows = [r for r, s in enumerate(self.rows) if len(s) == 1]
        heapq.heapify(self.single_rows)
        self.single_cols = [(next(iter(s)), c) for c, s in enumerate(self.cols) if len(s) == 1]
        heapq.heapify(self.single_cols)
        self.pivots = []
        self.fill = []
        self.nnz = len(pattern.positions)
        self.active = pattern.rows

    def _top_single_row(self):
        h = self.single_rows
        while h and not (self.row_active[h[0]] and len(self.rows[h[0]]) == 1):
            heapq.heappop(h)
        return h[0] if h else None

    def _top_single_col(self):
        h = self.single_cols
        while h:
            r, c = h[0]
            if self.col_active[c] and len(self.cols[c]) == 1 and r in self.cols[c]:
                return r, c
            heapq.heappop(h)
        return None

    def zero_cost_pivot(self, rows_only=False):
        """Lowest (row, col) among entries of singleton rows or singleton columns."""
        r1 = self._top_single_row()
        rc = None if rows_only else self._top_single_col()
        if r1 is None and rc is None:
            return None
        if rc is None or (r1 is not None and r1 <= rc[0]):
            return r1, next(iter(self.rows[r1]))
        return rc

    def markowitz_pivot(self):
        best = None
        col_counts = [len(self.cols[c]) for c in range(len(self.cols)) if self.col_active[c]]
        if not col_counts:
            return None
        mcc = min(col_counts)
        for r, cs in enumerate(self.rows):
            if not self.row_active[r] or not cs:
                continue
            rc = len(cs) - 1
            if best is not None and rc * (mcc - 1) > best[0]:
                continue
            for c in cs:
                cost = rc * (len(self.cols[c]) - 1)
                cand = (cost, r, c)
                if best is None or cand < best:
                    best = cand
        return None if best is None else best[1:]

    def eliminate(self, r, c):
        rows, cols = self.rows, self.cols
        lrows = sorted(cols[c] - {r})
        ucols = sorted(rows[r] - {c})
        for i in lrows:
            ri = rows[i]
            for j in ucols:
                if j not in ri:
                    ri.add(j)
                    cols[j].add(i)
                    self.fill.append((i, j))
                    self.nnz += 1
        for j in rows[r]:
            cj = cols[j]
            cj.discard(r)
            if len(cj) == 1 and j != c:
                heapq.heappush(self.single_cols, (next(iter(cj)), j))
        for i in cols[c]:
            ri = rows[i]
            ri.discard(c)
            if len(ri) == 1 and i != r:
                heapq.heappush(self.single_rows, i)
        self.nnz -= len(rows[r]) + len(cols[c])
        rows[r] = set()
        cols[c] = set()
        self.row_active[r] = False
        self.col_active[c] = False
        self.active -= 1
        self.pivots.append((r, c))

    def is_dense(self):
        return self.nnz == self.active * self.active

    def finish_dense(self):
        """In a full reduced matrix every cost is equal, so the tie rule pairs
        the remaining rows and columns in index order and adds no fill."""
        rs = [r for r, a in enumerate(self.row_active) if a]
        cs = [c for c, a in enumerate(self.col_active) if a]
        self.pivots.extend(zip(rs, cs))
        self.active = 0


def markowitz_order(pattern):
    """Greedy Markowitz: minimize (row count - 1)(col count - 1) on the reduced
    pattern, ties to the lowest row then lowest column.  Returns
    ``(pivots, fill)``."""
    el = _Elimination(pattern)
    for step in range(pattern.rows):
        if el.active > 1 and el.is_dense():
            el.finish_dense()
            break
        piv = el.zero_cost_pivot() or el.markowitz_pivot()
        if piv is None:
            left_r = [r for r, a in enumerate(el.row_active) if a]
            left_c = [c for c, a in enumerate(el.col_active) if a]
            raise StructurallySingular(f"elimination ran out of entries at step {step}", left_r, left_c)
        el.eliminate(*piv)
    return el.pivots, el.fill


def peel_triangular(pattern):
    """Zero-fill order by repeatedly pivoting on a singleton row; ``None`` when
    the pattern is not triangularizable with permutations."""
    el = _Elimination(pattern)
    for _ in range(pattern.rows):
        piv = el.zero_cost_pivot(rows_only=True)
        if piv is None:
            return None
        el.eliminate(*piv)
    return el.pivots


def symbolic_lu(pattern, P, Q):
    """Fill positions (in original coordinates) of LU with the fixed order ``P``, ``Q``."""
    rows, cols = _structure(pattern)
    fill = []
    for r, c in zip(P, Q):
        if c not in rows[r]:
            raise StructurallySingular(f"planned pivot ({r}, {c}) is not in the pattern", [r], [c])
        lrows = cols[c] - {r}
        ucols = rows[r] - {c}
        for i in lrows:
            for j in ucols:
                if j not in rows[i]:
                    rows[i].add(j)
                    cols[j].add(i)
                    fill.append((i, j))
        for j in rows[r]:
            cols[j].discard(r)
        for i in cols[c]:
            rows[i].discard(c)
        rows[r] = set()
        cols[c] = set()
    return fill


@dataclass
class OrderingPlan:
    """Offline result of :func:`analyze`.

    ``steps[k]`` holds slot indices for pivot ``k``: ``(pivot, lower, upper,
    targets)`` where ``targets[a, b]`` is the slot updated by
    ``lower[a] * upper[b]``.  Slots enumerate the filled pattern.
    """

    n: int
    P: np.ndarray
    Q: np.ndarray
    predicted_fill: int
    method: str
    keys: np.ndarray                 # sorted r * n + c of every slot (original coordinates)
    steps: list = field(repr=False)
    l_rows: list = field(repr=False)  # per step, permuted row index of each lower slot
    u_cols: list = field(repr=False)  # per step, permuted col index of each upper slot
    n_pattern: int = 0

    @property
    def symbolic(self):
        """Per-step structure: permuted rows of L's column k and columns of U's row k."""
        return list(zip(self.l_rows, self.u_cols))

    @property
    def nnz_l(self):
        return self.n + sum(len(x) for x in self.l_rows)

    @property
    def nnz_u(self):
        return self.n + sum(len(x) for x in self.u_cols)


def _compile(pattern, pivots, fill, method):
    n = pattern.rows
    P = np.array([p[0] for p in pivots], dtype=int)
    Q = np.array([p[1] for p in pivots], dtype=int)
    pinv, qinv = _inverse(P), _inverse(Q)
    rc = np.array(sorted(set(pattern.positions) | set(fill)), dtype=np.int64).reshape(-1, 2)
    keys = rc[:, 0] * n + rc[:, 1]                    # sorted, slot = index
    pr, pc = pinv[rc[:, 0]], qinv[rc[:, 1]]

    def slots(rows, cols):
        return np.searchsorted(keys, P[rows] * n + Q[cols])

    low = pr > pc
    up = pr < pc
    l_rows = _group(pc[low], pr[low], n)
    u_cols = _group(pr[up], pc[up], n)
    steps = []
    for k in range(n):
        lr, uc = l_rows[k], u_cols[k]
        kk = np.array([k])
        steps.append((int(slots(kk, kk)[0]), slots(lr, np.full(len(lr), k)),
                      slots(np.full(len(uc), k), uc), slots(lr[:, None], uc[None, :])))
    return OrderingPlan(n, P, Q, len(fill), method, keys, steps, l_rows, u_cols,
                        n_pattern=len(pattern.positions))


def _group(owner, member, n):
    """Sorted ``member`` values grouped by ``owner`` in ``0..n-1``."""
    order = np.lexsort((member, owner))
    owner, member = owner[order], member[order]
    bounds = np.searchsorted(owner, np.arange(n + 1))
    return [member[bounds[k]:bounds[k + 1]].astype(int) for k in range(n)]


def analyze(pattern):
    """Fill-reducing pivot order for a square, structurally nonsingular pattern.

    Falls back to singleton peeling if Markowitz leaves fill on a pattern
    that turns out to be triangularizable.
    """
    check_structural(pattern)
    pivots, fill = markowitz_order(pattern)
    method = "markowitz"
    if fill:
        peeled = peel_triangular(pattern)
        if peeled is not None:
            log.warning("Markowitz left %d fill entries on a triangularizable pattern; "
                        "using singleton peeling instead", len(fill))
            pivots, fill, method = peeled, [], "peeling"
    return _compile(pattern, pivots, fill, method)


def plan_from_order(pattern, P, Q, method="given"):
    """Compile a caller-supplied pivot order (symbolic fill computed here)."""
    check_structural(pattern)
    P = [int(x) for x in P]
    Q = [int(x) for x in Q]
    if sorted(P) != list(range(pattern.rows)) or sorted(Q) != list(range(pattern.cols)):
        raise ValueError("P and Q must be permutations of the pattern's rows and columns")
    fill = symbolic_lu(pattern, P, Q)
    return _compile(pattern, list(zip(P, Q)), fill, method)


#: stability threshold of the value-aware re-analysis
REANALYSIS_THRESHOLD = 0.1


#: reduced-matrix density at which threshold Markowitz continues on a dense array
DENSE_SWITCH = 0.4


def _dense_threshold_finish(rows, row_ids, col_ids, threshold):
    """Threshold Markowitz on a small dense array holding the reduced matrix.

    Picks the lexicographically smallest ``(cost, row, column)`` among stable
    candidates at every step, as the sparse loop does.
    """
    col_pos = {c: k for k, c in enumerate(col_ids)}
    M = np.zeros((len(row_ids), len(col_ids)))
    for a, r in enumerate(row_ids):
        for c, v in rows[r].items():
            M[a, col_pos[c]] = v
    R, C = np.array(row_ids), np.array(col_ids)
    pivots = []
    while M.size:
        nz = M != 0
        absM = np.abs(M)
        stable = nz & (absM >= threshold * absM.max(axis=0))
        if not stable.any():
            raise NumericallySingularPivot(-1, -1, -1, 0.0)
        cost = np.outer(nz.sum(axis=1) - 1, nz.sum(axis=0) - 1).astype(float)
        cost[~stable] = np.inf
        a, b = np.unravel_index(np.argmin(cost), cost.shape)
        pivots.append((int(R[a]), int(C[b])))
        lower = M[:, b] / M[a, b]
        M = M - np.outer(lower, M[a])
        keep_r = np.arange(len(R)) != a
        keep_c = np.arange(len(C)) != b
        M, R, C = M[np.ix_(keep_r, keep_c)], R[keep_r], C[keep_c]
    return pivots


def threshold_markowitz_order(A, threshold=REANALYSIS_THRESHOLD):
    """Markowitz order on the values of ``A``.

    Same cost and tie rule as :func:`markowitz_order`, restricted to
    candidates with ``|a_rc| >= threshold * max |column c|`` of the reduced
    matrix.  Returns the pivot sequence.  Once the reduced matrix is at least
    :data:`DENSE_SWITCH` full, the search continues on a dense array.
    """
    n = A.nrows
    rows = [dict() for _ in range(n)]
    cols = [set() for _ in range(n)]
    for r, c, v in zip(*A.coo()):
        if v != 0:
            rows[r][c] = rows[r].get(c, 0.0) + v
            cols[c].add(r)
    row_active = [True] * n
    col_active = [True] * n
    single_cols = [(next(iter(s)), c) for c, s in enumerate(cols) if len(s) == 1]
    heapq.heapify(single_cols)
    single_rows = {r for r, d in enumerate(rows) if len(d) == 1}
    pivots = []

    def colmax(c, cache):
        if c not in cache:
            cache[c] = max(abs(rows[i][c]) for i in cols[c])
        return cache[c]

    def stable(r, c, cache):
        v = abs(rows[r][c])
        return v > 0 and v >= threshold * colmax(c, cache)

    nnz = sum(len(d) for d in rows)
    for step in range(n):
        m = n - step
        if m > 1 and nnz >= DENSE_SWITCH * m * m:
            row_ids = [r for r in range(n) if row_active[r]]
            col_ids = [c for c in range(n) if col_active[c]]
            return pivots + _dense_threshold_finish(rows, row_ids, col_ids, threshold)
        cache = {}
        best = None
        while single_cols:
            r, c = single_cols[0]
            if col_active[c] and len(cols[c]) == 1 and r in cols[c] and rows[r][c] != 0:
                best = (0, r, c)
                break
            heapq.heappop(single_cols)
        for r in sorted(single_rows):
            if best is not None and r >= best[1]:
                break
            if row_active[r] and len(rows[r]) == 1:
                c = next(iter(rows[r]))
                if stable(r, c, cache):
                    best = (0, r, c)
                    break
        if best is None:
            buckets = {}
            for r in range(n):
                if row_active[r] and rows[r]:
                    buckets.setdefault(len(rows[r]), []).append(r)
            mcc = min(len(cols[c]) for c in range(n) if col_active[c] and cols[c])
            for k in sorted(buckets):
                if best is not None and (k - 1) * (mcc - 1) > best[0]:
                    break
                for r in buckets[k]:
                    for c in rows[r]:
                        cand = ((k - 1) * (len(cols[c]) - 1), r, c)
                        if (best is None or cand < best) and stable(r, c, cache):
                            best = cand
        if best is None:
            raise NumericallySingularPivot(step, -1, -1, 0.0)
        _, r, c = best
        prow = rows[r]
        pval = prow[c]
        for i in cols[c]:
            if i == r:
                continue
            ri = rows[i]
            lval = ri.pop(c) / pval
            nnz -= 1
            for j, v in prow.items():
                if j == c:
                    continue
                if j in ri:
                    ri[j] -= lval * v
                else:
                    ri[j] = -lval * v
                    cols[j].add(i)
                    nnz += 1
            if len(ri) == 1:
                single_rows.add(i)
        for j in prow:
            if j != c:
                cj = cols[j]
                cj.discard(r)
                if len(cj) == 1:
                    heapq.heappush(single_cols, (next(iter(cj)), j))
        nnz -= len(prow)
        rows[r] = {}
        cols[c] = set()
        row_active[r] = col_active[c] = False
        single_rows.discard(r)
        pivots.append((r, c))
    return pivots


def analyze_values(A, pattern=None, threshold=REANALYSIS_THRESHOLD):
    """Value-aware analysis of a numeric instance.

    A purely structural order cannot see exact cancellation (for example a
    Schur-complement block made only of fill from one pivot is rank one), so
    this is the escape hatch after :class:`NumericallySingularPivot`.  The
    plan is compiled against ``pattern`` (default: the instance pattern),
    which must contain every nonzero of ``A``.
    """
    from .assembly import SparsityPattern

    if pattern is None:
        r, c, v = A.coo()
        nz = v != 0
        pattern = SparsityPattern(A.nrows, A.ncols, frozenset(zip(r[nz].tolist(), c[nz].tolist())))
    check_structural(pattern)
    pivots = threshold_markowitz_order(A, threshold)
    P = [p[0] for p in pivots]
    Q = [p[1] for p in pivots]
    fill = symbolic_lu(pattern, P, Q)
    return _compile(pattern, pivots, fill, "threshold-markowitz")


# ----------------------------------------------------------------------------
# numeric factorization and solve

@dataclass
class SparseLUFactors:
    L: CscMatrix
    U: CscMatrix
    P: np.ndarray
    Q: np.ndarray
    flops: FlopCount


def scatter(plan, rows, cols, vals):
    """Place triplet values into the plan's slot array.

    Zero entries outside the analyzed pattern are ignored; nonzero ones are
    an error (the pattern was not a worst case for this matrix).
    """
    x = np.zeros(len(plan.keys))
    key = np.asarray(rows, dtype=np.int64) * plan.n + np.asarray(cols, dtype=np.int64)
    pos = np.searchsorted(plan.keys, key)
    pos_c = np.minimum(pos, len(plan.keys) - 1)
    hit = plan.keys[pos_c] == key
    vals = np.asarray(vals, dtype=float)
    if np.any(vals[~hit] != 0):
        k = np.flatnonzero(~hit & (vals != 0))[0]
        raise ValueError(f"entry ({rows[k]}, {cols[k]}) = {vals[k]:g} lies outside the analyzed pattern")
    np.add.at(x, pos_c[hit], vals[hit])
    return x


def factorize_slots(plan, x):
    """Run the recorded elimination in place on slot values ``x``."""
    flops = FlopCount()
    for k, (piv, lower, upper, targets) in enumerate(plan.steps):
        p = x[piv]
        colmax = abs(p)
        if len(lower):
            colmax = max(colmax, float(np.abs(x[lower]).max()))
        if p == 0 or abs(p) < PIVOT_TOL * colmax:
            raise NumericallySingularPivot(k, int(plan.P[k]), int(plan.Q[k]), float(p))
        if len(lower):
            x[lower] /= p
            flops.div += len(lower)
            if len(upper):
                x[targets] -= np.outer(x[lower], x[upper])
                m = len(lower) * len(upper)
                flops.mul += m
                flops.add += m
    return flops


def _factors_from_slots(plan, x, flops):
    n = plan.n
    lr, lc, lv = [np.arange(n)], [np.arange(n)], [np.ones(n)]
    ur, uc, uv = [], [], []
    for k, (piv, lower, upper, _) in enumerate(plan.steps):
        lr.append(plan.l_rows[k])
        lc.append(np.full(len(lower), k))
        lv.append(x[lower])
        ur.append(np.full(len(upper) + 1, k))
        uc.append(np.concatenate([[k], plan.u_cols[k]]))
        uv.append(np.concatenate([[x[piv]], x[upper]]))
    L = CscMatrix.from_coo(n, n, np.concatenate(lr), np.concatenate(lc), np.concatenate(lv))
    U = CscMatrix.from_coo(n, n, np.concatenate(ur), np.concatenate(uc), np.concatenate(uv))
    return SparseLUFactors(L, U, plan.P.copy(), plan.Q.copy(), flops)


def factorize(A, plan):
    """Numeric LU of ``A`` following ``plan``; no pivoting at runtime."""
    if A.shape != (plan.n, plan.n):
        raise ValueError(f"matrix is {A.shape}, plan is for {plan.n}x{plan.n}")
    x = scatter(plan, *A.coo())
    flops = factorize_slots(plan, x)
    return _factors_from_slots(plan, x, flops)


def growth_factor(A, factors):
    """``max|L| max|U| / max|A|``: element growth of the elimination."""
    amax = float(np.abs(A.data).max()) if A.nnz else 0.0
    if amax == 0.0:
        return np.inf
    return float(np.abs(factors.L.data).max() * np.abs(factors.U.data).max()) / amax


def factorize_or_reanalyze(A, plan, growth_limit=GROWTH_LIMIT):
    """:func:`factorize`, retrying once with :func:`analyze_values` when the
    frozen order meets a numerically singular pivot or its element growth
    exceeds ``growth_limit``.  Returns ``(factors, plan_used)``."""
    try:
        factors = factorize(A, plan)
    except NumericallySingularPivot as exc:
        log.info("frozen plan hit %s; re-analyzing on the instance", exc)
    else:
        g = growth_factor(A, factors)
        if g <= growth_limit:
            return factors, plan
        log.info("frozen plan has element growth %.3g; re-analyzing on the instance", g)
    fresh = analyze_values(A)
    return factorize(A, fresh), fresh


def solve(factors, b, counter=None):
    """``x`` with ``A x = b`` where ``P A Q = L U``.

    Operation counts are added to ``counter`` when given.
    """
    L, U = factors.L, factors.U
    n = L.nrows
    b = np.asarray(b, dtype=float)
    if b.shape != (n,):
        raise ValueError(f"right-hand side must have length {n}")
    y = b[factors.P].copy()
    mul = add = div = 0
    for k in range(n):
        s, e = L.indptr[k], L.indptr[k + 1]
        idx, val = L.indices[s:e], L.data[s:e]
        mask = idx > k
        if mask.any():
            y[idx[mask]] -= val[mask] * y[k]
            m = int(mask.sum())
            mul += m
            add += m
    for k in range(n - 1, -1, -1):
        s, e = U.indptr[k], U.indptr[k + 1]
        idx, val = U.indices[s:e], U.data[s:e]
        # U columns are sorted, the diagonal is last
        y[k] /= val[-1]
        div += 1
        if e - s > 1:
            y[idx[:-1]] -= val[:-1] * y[k]
            mul += e - s - 1
            add += e - s - 1
    if counter is not None:
        counter.tally(mul=mul, add=add, div=div)
    x = np.empty(n)
    x[factors.Q] = y
    return x


def solve_flops(factors):
    """Operation count of one :func:`solve` with these factors."""
    strict_l = factors.L.nnz - factors.L.nrows
    strict_u = factors.U.nnz - factors.U.nrows
    return FlopCount(mul=strict_l + strict_u, add=strict_l + strict_u, div=factors.U.nrows)


def dense_lu_flops(n):
    """Counts of the same kernel on a fully dense ``n x n`` matrix (factor + solve)."""
    s1 = sum((n - k - 1) for k in range(n))
    s2 = sum((n - k - 1) ** 2 for k in range(n))
    tri = n * (n - 1) // 2
    return FlopCount(mul=s2 + 2 * tri, add=s2 + 2 * tri, div=s1 + n)
