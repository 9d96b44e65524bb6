"""Exact rational linear algebra and a two-phase simplex method.

Everything here works on ``fractions.Fraction`` so that feasibility verdicts
come with certificates that can be re-checked exactly:

* a feasible point for ``A x = b, x >= 0``, or
* a Farkas ray ``y`` with ``A^T y >= 0`` and ``b^T y < 0``.

Pivoting uses Bland's rule, so the method terminates on degenerate problems.
Problem sizes in this package are small (tens of rows), which is what a dense
tableau is good for.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from fractions import Fraction
from typing import Sequence

Matrix = list[list[Fraction]]

ZERO = Fraction(0)
ONE = Fraction(1)


def as_fraction(v) -> Fraction:
    if isinstance(v, Fraction):
        return v
    if isinstance(v, float):
        return Fraction(str(v))
    return Fraction(v)


def to_matrix(rows: Sequence[Sequence]) -> Matrix:
    return [[as_fraction(v) for v in r] for r in rows]


# ---------------------------------------------------------------------------
# Gaussian elimination
# ---------------------------------------------------------------------------

def rref(rows: Sequence[Sequence[Fraction]]) -> tuple[Matrix, list[int]]:
    """Reduced row echelon form and the list of pivot columns."""
    M = [list(r) for r in rows]
    if not M:
        return M, []
    n_rows, n_cols = len(M), len(M[0])
    pivots: list[int] = []
    r = 0
    for c in range(n_cols):
        if r == n_rows:
            break
        p = next((i for i in range(r, n_rows) if M[i][c] != 0), None)
        if p is None:
            continue
        M[r], M[p] = M[p], M[r]
        inv = ONE / M[r][c]
        M[r] = [v * inv for v in M[r]]
        for i in range(n_rows):
            if i != r and M[i][c] != 0:
                f = M[i][c]
                Mi, Mr = M[i], M[r]
                M[i] = [a - f * b for a, b in zip(Mi, Mr)]
        pivots.append(c)
        r += 1
    return M, pivots


def rank(rows: Sequence[Sequence[Fraction]]) -> int:
    return len(rref(rows)[1])


def independent_rows(rows: Sequence[Sequence[Fraction]]) -> list[int]:
    """Indices of a maximal linearly independent subset of ``rows`` (greedy, in order)."""
    chosen: list[int] = []
    basis: Matrix = []
    for i, r in enumerate(rows):
        trial = basis + [list(r)]
        if rank(trial) > len(basis):
            basis = trial
            chosen.append(i)
    return chosen


def nullspace(rows: Sequence[Sequence[Fraction]], n_cols: int | None = None) -> Matrix:
    """Basis of the right null space ``{x : rows @ x = 0}``."""
    if not rows:
        if n_cols is None:
            raise ValueError("n_cols required for an empty matrix")
        return [[ONE if i == j else ZERO for i in range(n_cols)] for j in range(n_cols)]
    R, piv = rref(rows)
    n = len(R[0])
    free = [j for j in range(n) if j not in piv]
    basis = []
    for f in free:
        v = [ZERO] * n
        v[f] = ONE
        for i, pc in enumerate(piv):
            v[pc] = -R[i][f]
        basis.append(v)
    return basis


def solve_square(A: Sequence[Sequence[Fraction]], b: Sequence[Fraction]) -> list[Fraction] | None:
    """Solve a square system exactly; ``None`` when singular."""
    n = len(A)
    aug = [list(A[i]) + [b[i]] for i in range(n)]
    R, piv = rref(aug)
    if piv[:n] != list(range(n)) or len(piv) > n:
        return None
    return [R[i][n] for i in range(n)]


def in_row_span(rows: Sequence[Sequence[Fraction]], v: Sequence[Fraction]) -> list[Fraction] | None:
    """Coefficients ``c`` with ``sum_i c_i rows_i == v`` or ``None``."""
    if not rows:
        return [] if all(x == 0 for x in v) else None
    # Solve rows^T c = v.
    n = len(rows)
    aug = [[rows[i][j] for i in range(n)] + [v[j]] for j in range(len(v))]
    R, piv = rref(aug)
    if n in piv:
        return None
    c = [ZERO] * n
    for i, pc in enumerate(piv):
        c[pc] = R[i][n]
    return c


# ---------------------------------------------------------------------------
# Simplex
# ---------------------------------------------------------------------------

class LPError(RuntimeError):
    pass


@dataclass
class LPResult:
    status: str  # "optimal" | "infeasible" | "unbounded"
    x: list[Fraction] | None = None
    objective: Fraction | None = None
    dual: list[Fraction] | None = None
    farkas: list[Fraction] | None = None
    pivots: int = 0
    meta: dict = field(default_factory=dict)

    @property
    def feasible(self) -> bool:
        return self.status != "infeasible"


class _Tableau:
    """Dense tableau for ``max c x, A x = b, x >= 0`` with ``b >= 0``.

    Columns ``n .. n+m-1`` are the artificial identity block; they are kept
    through phase two so that ``B^{-1}`` (and hence the duals) stay readable.
    """

    def __init__(self, A: Matrix, b: list[Fraction]):
        self.m = len(A)
        self.n = len(A[0]) if A else 0
        m, n = self.m, self.n
        self.rows = [A[i] + [ONE if k == i else ZERO for k in range(m)] + [b[i]] for i in range(m)]
        self.basis = [n + i for i in range(m)]
        self.pivots = 0
        self.obj: list[Fraction] | None = None  # reduced costs of the running objective

    def pivot(self, r: int, c: int) -> None:
        row = self.rows[r]
        inv = ONE / row[c]
        row = [v * inv if v else v for v in row]
        self.rows[r] = row
        nz = [j for j, v in enumerate(row) if v]
        for i in range(self.m):
            if i != r:
                other = self.rows[i]
                f = other[c]
                if f != 0:
                    for j in nz:
                        other[j] = other[j] - f * row[j]
        if self.obj is not None:
            f = self.obj[c]
            if f != 0:
                for j in nz:
                    self.obj[j] = self.obj[j] - f * row[j]
        self.basis[r] = c
        self.pivots += 1

    def duals(self, cost: list[Fraction]) -> list[Fraction]:
        n, m = self.n, self.m
        cb = [cost[j] for j in self.basis]
        return [sum((cb[k] * self.rows[k][n + i] for k in range(m)), ZERO) for i in range(m)]

    def run(self, cost: list[Fraction], allowed: int, max_pivots: int = 100_000) -> str:
        """Maximise ``cost`` over columns ``< allowed``; Bland's rule."""
        m = self.m
        cb = [cost[j] for j in self.basis]
        width = len(self.rows[0]) - 1 if m else 0
        self.obj = [cost[j] - sum((cb[k] * self.rows[k][j] for k in range(m) if cb[k]), ZERO) for j in range(width)] + [ZERO]
        while True:
            in_basis = set(self.basis)
            enter = next((j for j in range(allowed) if j not in in_basis and self.obj[j] > 0), None)
            if enter is None:
                self.obj = None
                return "optimal"
            best = None
            for k in range(m):
                a = self.rows[k][enter]
                if a > 0:
                    ratio = self.rows[k][-1] / a
                    key = (ratio, self.basis[k])
                    if best is None or key < best[0]:
                        best = (key, k)
            if best is None:
                self.obj = None
                return "unbounded"
            self.pivot(best[1], enter)
            if self.pivots > max_pivots:
                raise LPError("pivot limit exceeded")

    def solution(self) -> list[Fraction]:
        x = [ZERO] * (self.n + self.m)
        for k, j in enumerate(self.basis):
            x[j] = self.rows[k][-1]
        return x


def _standardise(A_eq: Matrix, b_eq: list[Fraction]) -> tuple[Matrix, list[Fraction], list[int]]:
    signs = []
    A, b = [], []
    for row, rhs in zip(A_eq, b_eq):
        s = -1 if rhs < 0 else 1
        signs.append(s)
        A.append([v * s for v in row] if s < 0 else list(row))
        b.append(rhs * s)
    return A, b, signs


def solve_standard(c: Sequence, A_eq: Sequence[Sequence], b_eq: Sequence, *, max_pivots: int = 100_000) -> LPResult:
    """``max c x  s.t.  A_eq x = b_eq, x >= 0`` in exact arithmetic.

    On infeasibility ``farkas`` holds ``y`` with ``A^T y >= 0, b^T y < 0``.
    On optimality ``dual`` holds ``y`` with ``A^T y >= c, b^T y = c x``.
    """
    A0 = to_matrix(A_eq)
    b0 = [as_fraction(v) for v in b_eq]
    c0 = [as_fraction(v) for v in c]
    n = len(c0)
    if not A0:
        if any(v > 0 for v in c0):
            return LPResult("unbounded", x=[ZERO] * n)
        return LPResult("optimal", x=[ZERO] * n, objective=ZERO, dual=[])
    if any(len(r) != n for r in A0):
        raise ValueError("constraint rows must match the cost vector length")
    A, b, signs = _standardise(A0, b0)
    m = len(A)
    T = _Tableau(A, b)

    phase1 = [ZERO] * n + [-ONE] * m
    T.run(phase1, allowed=n, max_pivots=max_pivots)
    infeas = sum((T.rows[k][-1] for k in range(m) if T.basis[k] >= n), ZERO)
    if infeas > 0:
        y = T.duals(phase1)
        # Phase-one optimality already gives A^T y >= 0, b^T y < 0 on the
        # sign-normalised rows; undo the row flips.
        y = [yi * s for yi, s in zip(y, signs)]
        return LPResult("infeasible", farkas=y, pivots=T.pivots)

    # Drive zero-level artificials out of the basis where possible.
    for k in range(m):
        if T.basis[k] >= n:
            j = next((j for j in range(n) if T.rows[k][j] != 0 and j not in T.basis), None)
            if j is not None:
                T.pivot(k, j)

    cost = c0 + [ZERO] * m
    status = T.run(cost, allowed=n, max_pivots=max_pivots)
    x = T.solution()[:n]
    if status == "unbounded":
        return LPResult("unbounded", x=x, pivots=T.pivots)
    y = T.duals(cost)
    y = [yi * s for yi, s in zip(y, signs)]
    obj = sum((ci * xi for ci, xi in zip(c0, x)), ZERO)
    return LPResult("optimal", x=x, objective=obj, dual=y, pivots=T.pivots)


def solve_lp(
    c: Sequence,
    A_ub: Sequence[Sequence] = (),
    b_ub: Sequence = (),
    A_eq: Sequence[Sequence] = (),
    b_eq: Sequence = (),
    free: Sequence[int] = (),
) -> LPResult:
    """``max c x`` with ``A_ub x <= b_ub``, ``A_eq x = b_eq``; ``x >= 0`` except ``free``.

    Free variables are split into positive and negative parts; inequality rows
    get slacks. ``x`` is reported in the original variables and ``dual`` in
    the order ``[ub rows..., eq rows...]`` (ub duals are ``>= 0``).
    """
    c = [as_fraction(v) for v in c]
    n = len(c)
    free = sorted(set(free))
    n_ub = len(A_ub)
    cols = n + len(free) + n_ub
    rows: Matrix = []
    rhs: list[Fraction] = []

    def expand(row, slack_at=None):
        row = [as_fraction(v) for v in row]
        out = row + [-row[j] for j in free] + [ZERO] * n_ub
        if slack_at is not None:
            out[n + len(free) + slack_at] = ONE
        return out

    for i, (r, bi) in enumerate(zip(A_ub, b_ub)):
        rows.append(expand(r, slack_at=i))
        rhs.append(as_fraction(bi))
    for r, bi in zip(A_eq, b_eq):
        rows.append(expand(r))
        rhs.append(as_fraction(bi))
    cost = c + [-c[j] for j in free] + [ZERO] * n_ub
    res = solve_standard(cost, rows, rhs) if rows else solve_standard(cost, [], [])
    if res.x is not None:
        xs = res.x
        x = list(xs[:n])
        for k, j in enumerate(free):
            x[j] = x[j] - xs[n + k]
        res.x = x
        res.meta["columns"] = cols
    return res


# ---------------------------------------------------------------------------
# Certificates
# ---------------------------------------------------------------------------

def check_farkas(A: Sequence[Sequence[Fraction]], b: Sequence[Fraction], y: Sequence[Fraction]) -> bool:
    """``A^T y >= 0`` and ``b^T y < 0``: proof that ``A x = b, x >= 0`` is empty."""
    if len(y) != len(A):
        return False
    n = len(A[0]) if A else 0
    for j in range(n):
        if sum((y[i] * A[i][j] for i in range(len(A))), ZERO) < 0:
            return False
    return sum((yi * bi for yi, bi in zip(y, b)), ZERO) < 0


def check_feasible(A: Sequence[Sequence[Fraction]], b: Sequence[Fraction], x: Sequence[Fraction], lower: Fraction = ZERO) -> bool:
    if any(v < lower for v in x):
        return False
    return all(sum((a * v for a, v in zip(row, x)), ZERO) == bi for row, bi in zip(A, b))


def feasibility(A: Sequence[Sequence], b: Sequence, lower: Sequence | Fraction = ZERO) -> LPResult:
    """Decide ``A x = b, x >= lower`` and return a point or a Farkas ray.

    The ray refers to the shifted system ``A w = b - A lower`` with ``w >= 0``,
    which is the same ``y``: ``A^T y >= 0`` and ``(b - A lower)^T y < 0``.
    """
    A = to_matrix(A)
    b = [as_fraction(v) for v in b]
    n = len(A[0]) if A else 0
    lo = [as_fraction(lower)] * n if not isinstance(lower, (list, tuple)) else [as_fraction(v) for v in lower]
    shifted = [bi - sum((a * l for a, l in zip(row, lo)), ZERO) for row, bi in zip(A, b)]
    res = solve_standard([ZERO] * n, A, shifted)
    if res.x is not None:
        res.x = [w + l for w, l in zip(res.x, lo)]
    res.meta["shifted_rhs"] = shifted
    return res
