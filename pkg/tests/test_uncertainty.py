from fractions import Fraction as F

import pytest
from hypothesis import given, settings, strategies as st

from rvp.uncertainty import (
    Claim,
    Prior,
    PriorSet,
    ScenarioTree,
    canonical_reference_measure,
    capacity_norm,
    generate_prior_set,
    load_prior_spec,
    mixture_sandwich,
    parse_claim,
    polar_leaves,
    quasi_sure_eq,
    quasi_sure_geq,
    redundant_priors,
    upper_expectation,
)


def one_step():
    tree = ScenarioTree.for_grid(1, [1, 2])
    return tree, generate_prior_set(tree, (1, 2), (1, 2))


def test_tree_invariants():
    tree = ScenarioTree.for_grid(2, [1, 2])
    assert tree.node_noise[0] == 0 and tree.node_qv[0] == 0
    for leaf in tree.leaves:
        path = tree.path(leaf)
        assert path[0] == 0
        qv = [tree.node_qv[n] for n in path]
        assert qv == sorted(qv)
    assert len(set(tree.leaves)) == tree.n_leaves == 16


def test_one_step_priors_disjoint():
    tree, ps = one_step()
    assert len(ps) == 2
    p1, p2 = ps.constant(1), ps.constant(2)
    assert set(p1.mass.values()) == {F(1, 2)} == set(p2.mass.values())
    assert {tree.node_noise[tree.leaves[i]] for i in p1.support} == {1, -1}
    assert {tree.node_noise[tree.leaves[i]] for i in p2.support} == {2, -2}
    assert not p1.support & p2.support


def test_two_step_count_matches_enumeration():
    # sigma at the root times sigma at whichever second-level node is reached
    tree = ScenarioTree.for_grid(2, [1, 2])
    ps = generate_prior_set(tree, (1, 2), (1, 2))
    assert len(ps) == 2 * 2 * 2
    assert len({p.key() for p in ps}) == len(ps)


def test_singleton_grid_is_binomial():
    for depth in (1, 2, 3):
        tree = ScenarioTree.for_grid(depth, [1])
        ps = generate_prior_set(tree, (1, 1), (1,))
        assert len(ps) == 1
        assert len(ps.priors[0].support) == 2**depth


def test_generate_errors():
    tree = ScenarioTree.for_grid(1, [1, 2])
    with pytest.raises(ValueError):
        generate_prior_set(tree, (1, 2), ())
    with pytest.raises(ValueError):
        generate_prior_set(tree, (1, 2), (3,))
    with pytest.raises(ValueError):
        generate_prior_set(ScenarioTree.for_grid(1, [1]), (1, 2), (2,))


def test_upper_expectation_examples():
    tree, ps = one_step()
    c = Claim.constant(tree, F(7, 3))
    assert upper_expectation(c, ps).value == F(7, 3)
    B2 = Claim.from_expr(tree, "B**2")
    r = upper_expectation(B2, ps)
    assert r.value == 4 and r.attained == ("P2",)
    assert upper_expectation(-B2, ps).value == -1
    assert upper_expectation(Claim.constant(tree, 1), ps).attained == ("P1", "P2")


def test_capacity_norm_examples():
    tree, ps = one_step()
    assert capacity_norm(Claim.constant(tree, -3), ps).value == 3
    r = capacity_norm(Claim.from_expr(tree, "B"), ps)
    assert r.value == 2 and r.radicand == 4
    # two Dirac priors
    t2 = ScenarioTree.build(1, [1, -1])
    dirac = PriorSet(t2, (Prior("u", {0: 1}), Prior("d", {1: 1})))
    assert capacity_norm(Claim((F(1), F(2))), dirac).value == 2
    r = capacity_norm(Claim.from_expr(tree, "B + 1"), ps)
    assert r.radicand == 5 and abs(r.value - 5**0.5) < 1e-15


def test_quasi_sure_order():
    tree, ps = one_step()
    X = Claim.from_expr(tree, "QV - 1")
    assert quasi_sure_geq(X, Claim.constant(tree, 0), ps)
    assert quasi_sure_geq(X, X, ps)
    t = ScenarioTree.for_grid(1, [1, 2], extra=(0,))
    pst = generate_prior_set(t, (1, 2), (1, 2))
    (polar,) = polar_leaves(pst)
    Y = Claim.constant(t, 0)
    Z = Claim(tuple(F(5) if i == polar else F(0) for i in range(t.n_leaves)))
    assert quasi_sure_eq(Y, Z, pst)


def test_polar_leaves_examples():
    tree, ps = one_step()
    single = ps.subset(["P1"])
    assert polar_leaves(single) == frozenset(range(tree.n_leaves)) - single.priors[0].support
    assert polar_leaves(ps) == frozenset()
    t = ScenarioTree.for_grid(1, [1, 2], extra=(0,))
    pst = generate_prior_set(t, (1, 2), (1, 2))
    assert len(polar_leaves(pst)) == 1
    assert t.node_noise[t.leaves[next(iter(polar_leaves(pst)))]] == 0


def test_reference_measure():
    tree, ps = one_step()
    ref = canonical_reference_measure(ps, [F(1, 3), F(2, 3)])
    # leaf order is +1, -1, +2, -2
    assert [ref.mass[i] for i in range(4)] == [F(1, 6), F(1, 6), F(1, 3), F(1, 3)]
    single = ps.subset(["P2"])
    assert canonical_reference_measure(single, [1]).mass == single.priors[0].mass
    assert canonical_reference_measure(ps, [F(1, 2), F(1, 2)]).support == ps.union_support()
    with pytest.raises(ValueError):
        canonical_reference_measure(ps, [0, 1])
    with pytest.raises(ValueError):
        canonical_reference_measure(ps, [F(1, 2), F(1, 3)])


def test_redundancy_check():
    tree, ps = one_step()
    basis = [Claim.constant(tree, 1), Claim.from_expr(tree, "B")]
    red = redundant_priors(basis, ps)
    assert red == ()
    red = redundant_priors([Claim.from_expr(tree, "B")], ps)
    assert red == ("P1",)
    kept = ps.subset(["P2"])
    assert capacity_norm(basis[1], kept) == capacity_norm(basis[1], ps)


def test_prior_spec_and_claims():
    ps = load_prior_spec({"depth": 1, "sigma_grid": [1, 2], "branch_prob": "1/3"})
    p = ps.constant(2)
    assert sorted(p.mass.values()) == [F(1, 3), F(2, 3)]
    c = parse_claim(ps.tree, [1, 2, 3, 4])
    assert c.values == (F(1), F(2), F(3), F(4))
    with pytest.raises(ValueError):
        parse_claim(ps.tree, [1, 2])


def test_prior_mass_checks():
    with pytest.raises(ValueError):
        Prior("x", {0: F(1, 2)})
    with pytest.raises(ValueError):
        Prior("x", {0: F(3, 2), 1: F(-1, 2)})


claims = st.lists(st.fractions(min_value=-10, max_value=10, max_denominator=8), min_size=4, max_size=4).map(tuple)


@settings(max_examples=200, deadline=None)
@given(claims, claims, st.fractions(min_value=0, max_value=5, max_denominator=6))
def test_upper_expectation_sublinear(x, y, lam):
    tree, ps = one_step()
    X, Y = Claim(x), Claim(y)
    E = lambda Z: upper_expectation(Z, ps).value
    assert E(X + Y) <= E(X) + E(Y)
    assert E(X * lam) == lam * E(X)
    assert mixture_sandwich(X, ps, [F(1, 4), F(3, 4)])
    bump = Claim(tuple(abs(v) for v in y))
    assert E(X + bump) >= E(X)


@settings(max_examples=100, deadline=None)
@given(claims)
def test_norm_zero_iff_vanishes_quasi_surely(x):
    t = ScenarioTree.for_grid(1, [1, 2], extra=(0,))
    ps = generate_prior_set(t, (1, 2), (1, 2))
    vals = list(x) + [F(3)]
    polar = next(iter(polar_leaves(ps)))
    vals[polar], vals[-1] = vals[-1], vals[polar]
    X = Claim(tuple(vals))
    zero_qs = all(X[i] == 0 for i in ps.union_support())
    assert (capacity_norm(X, ps).radicand == 0) == zero_qs
