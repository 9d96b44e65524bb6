from fractions import Fraction as F

import numpy as np
from hypothesis import given, settings, strategies as st
from scipy.optimize import linprog

from rvp import lp


def test_rank_and_nullspace():
    rows = [[1, 2, 3], [2, 4, 6], [0, 1, 1]]
    assert lp.rank(lp.to_matrix(rows)) == 2
    ns = lp.nullspace(lp.to_matrix(rows), 3)
    assert len(ns) == 1
    v = ns[0]
    for r in rows:
        assert sum(F(a) * b for a, b in zip(r, v)) == 0
    assert lp.independent_rows(lp.to_matrix(rows)) == [0, 2]


def test_solve_and_span():
    A = lp.to_matrix([[2, 1], [1, 3]])
    assert lp.solve_square(A, [F(3), F(5)]) == [F(4, 5), F(7, 5)]
    assert lp.solve_square(lp.to_matrix([[1, 1], [2, 2]]), [F(1), F(2)]) is None
    coef = lp.in_row_span(lp.to_matrix([[1, 0, 1], [0, 1, 1]]), [F(2), F(3), F(5)])
    assert coef == [F(2), F(3)]
    assert lp.in_row_span(lp.to_matrix([[1, 0, 1]]), [F(0), F(1), F(0)]) is None


def test_small_lp_optimum():
    # max x + y  s.t. x + 2y <= 4, 3x + y <= 6
    res = lp.solve_lp([1, 1], A_ub=[[1, 2], [3, 1]], b_ub=[4, 6])
    assert res.status == "optimal"
    assert res.x == [F(8, 5), F(6, 5)]
    assert res.objective == F(14, 5)
    assert all(y >= 0 for y in res.dual[:2])


def test_unbounded_and_free():
    assert lp.solve_lp([1, 0], A_ub=[[-1, 1]], b_ub=[1]).status == "unbounded"
    # a free variable can go negative: max -x with x >= -2
    res = lp.solve_lp([-1], A_ub=[[-1]], b_ub=[2], free=[0])
    assert res.status == "optimal" and res.x == [F(-2)]


def test_farkas_certificate():
    A = lp.to_matrix([[1, 1]])
    b = [F(-1)]
    res = lp.feasibility(A, b)
    assert res.status == "infeasible"
    assert lp.check_farkas(A, b, res.farkas)
    ok = lp.feasibility(A, [F(1)])
    assert ok.feasible and lp.check_feasible(A, [F(1)], ok.x)


def test_feasibility_with_lower_bound():
    A = lp.to_matrix([[1, 1, 1]])
    res = lp.feasibility(A, [F(1)], F(1, 3))
    assert res.x == [F(1, 3)] * 3
    bad = lp.feasibility(A, [F(1)], F(1, 2))
    assert bad.status == "infeasible"
    assert lp.check_farkas(A, bad.meta["shifted_rhs"], bad.farkas)


small = st.integers(min_value=-4, max_value=4)


@settings(max_examples=150, deadline=None)
@given(
    st.lists(st.lists(small, min_size=3, max_size=3), min_size=1, max_size=3),
    st.lists(st.integers(min_value=0, max_value=6), min_size=3, max_size=3),
    st.lists(small, min_size=3, max_size=3),
)
def test_matches_scipy_highs(A, b, c):
    b = b[: len(A)]
    # bound the region so both solvers see a finite optimum or infeasibility
    A_ub = A + [[1, 1, 1]]
    b_ub = b + [10]
    res = lp.solve_lp(c, A_ub=A_ub, b_ub=b_ub)
    ref = linprog(-np.array(c, float), A_ub=np.array(A_ub, float), b_ub=np.array(b_ub, float), method="highs")
    assert res.status == "optimal" and ref.status == 0
    assert abs(float(res.objective) + ref.fun) < 1e-9
