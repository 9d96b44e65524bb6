import random
from fractions import Fraction as F

import pytest
from hypothesis import given, settings, strategies as st

from rvp.instances import random_claim, random_density, random_gamma, random_prior_set
from rvp.pricing import (
    InfeasibleExtension,
    Leaf,
    LinearPriceSystem,
    Mix,
    PricingError,
    Sup,
    consolidate,
    evaluate_gamma,
    extend,
    gamma_to_json,
    is_strictly_positive,
    is_viable,
    linear_functional,
    load_price_spec,
    parse_gamma,
    positivity_report,
    restriction_report,
    sup_of_all,
    upper_expectation_functional,
)
from rvp.uncertainty import Claim, Prior, PriorSet, ScenarioTree, generate_prior_set, upper_expectation


def one_step():
    tree = ScenarioTree.for_grid(1, [1, 2])
    return tree, generate_prior_set(tree, (1, 2), (1, 2))


def constants_only(ps):
    one = Claim.constant(ps.tree, 1)
    return {P.id: LinearPriceSystem(P, (one,), (1,)) for P in ps}


def four_priors():
    """Three constant-volatility priors plus a fourth charging the flat branch only."""
    tree = ScenarioTree.for_grid(1, [1, 2, 3], extra=(0,))
    base = generate_prior_set(tree, (1, 3), (1, 2, 3))
    flat = next(i for i, leaf in enumerate(tree.leaves) if tree.node_noise[leaf] == 0)
    priors = tuple(base.constant(s) for s in (1, 2, 3))
    ids = [p.id for p in priors]
    P = tuple(Prior(f"P{k + 1}", dict(p.mass)) for k, p in enumerate(priors)) + (Prior("P4", {flat: F(1)}),)
    assert ids == ["P1", "P2", "P3"]
    return tree, PriorSet(tree, P), flat


def test_single_component_is_linear():
    tree, ps = one_step()
    P = ps.priors[0]
    psi = linear_functional(P, tree)
    X = Claim.from_expr(tree, "B**3 + QV")
    assert psi(X) == P.expect(X)
    assert psi(Claim.constant(tree, 5)) == 5


def test_sup_of_unit_densities_is_upper_expectation():
    tree, ps = one_step()
    psi = consolidate(sup_of_all(ps), {P.id: (P, (F(1),) * tree.n_leaves) for P in ps}, tree)
    for expr in ("B**2", "-B**2", "max(B, 0)", "QV - 2*B"):
        X = Claim.from_expr(tree, expr)
        assert psi(X) == upper_expectation(X, ps).value == upper_expectation_functional(ps)(X)


def test_mix_then_sup_has_two_components():
    tree, ps, _ = four_priors()
    gamma = Sup((Mix((F(1, 2), F(1, 2)), (Leaf("P1"), Leaf("P2"))), Leaf("P3")))
    one = (F(1),) * tree.n_leaves
    psi = consolidate(gamma, {p.id: (p, one) for p in ps}, tree)
    assert len(psi.components) == 2
    mixed = psi.components[0]
    assert mixed.total_mass() == 1
    X = Claim.from_expr(tree, "B**2")
    # half of 1 plus half of 4 against 9
    assert mixed.expect(X) == F(5, 2)
    assert psi(X) == 9
    assert psi(-X) == F(-5, 2)


def test_deficit_mix_scales_constants():
    tree, ps = one_step()
    gamma = Mix((F(1, 4), F(1, 4)), (Leaf("P1"), Leaf("P2")))
    one = (F(1),) * tree.n_leaves
    psi = consolidate(gamma, {p.id: (p, one) for p in ps}, tree)
    assert psi(Claim.constant(tree, 4)) == 2


def test_gamma_json_roundtrip_and_errors():
    g = parse_gamma({"sup": [{"mix": {"weights": ["1/2", "1/2"], "of": ["P1", "P2"]}}, "P3"]})
    assert parse_gamma(gamma_to_json(g)) == g
    assert parse_gamma({"wedge": ["P1"]}) == Sup((Leaf("P1"),))
    with pytest.raises(PricingError):
        Mix((F(-1), F(2)), (Leaf("a"), Leaf("b")))
    with pytest.raises(PricingError):
        Mix((F(3, 4), F(1, 2)), (Leaf("a"), Leaf("b")))
    with pytest.raises(PricingError):
        parse_gamma(7)
    with pytest.raises(PricingError):
        Sup(())


def test_extend_constants_only():
    tree, ps = one_step()
    ext = extend(constants_only(ps), sup_of_all(ps), prior_set=ps)
    for d in ext.densities.values():
        assert sum(d.lp.x[:-1]) > 0
        assert ps.get(d.prior_id).expect(Claim(d.density)) == 1


def test_extend_qv_priced_at_four():
    tree, ps = one_step()
    P2 = ps.constant(2)
    qv = Claim.from_expr(tree, "QV")
    sys = {P2.id: LinearPriceSystem(P2, (Claim.constant(tree, 1), qv), (1, 4))}
    ext = extend(sys, Leaf(P2.id), prior_set=ps)
    Z = ext.densities[P2.id].density
    assert all(Z[i] == 1 for i in P2.support)


def test_extend_qv_priced_at_five_is_infeasible():
    tree, ps = one_step()
    P2 = ps.constant(2)
    qv = Claim.from_expr(tree, "QV")
    sys = {P2.id: LinearPriceSystem(P2, (Claim.constant(tree, 1), qv), (1, 5))}
    with pytest.raises(InfeasibleExtension) as exc:
        extend(sys, Leaf(P2.id), prior_set=ps)
    assert exc.value.verify()
    v = is_viable(sys, Leaf(P2.id), ps)
    assert not v.viable and v.certificate.verify()


def test_extend_needs_all_systems():
    tree, ps = one_step()
    with pytest.raises(PricingError):
        extend({}, Leaf("P1"), prior_set=ps)
    with pytest.raises(PricingError):
        extend(constants_only(ps), Leaf("P1"))


def test_positivity_examples():
    tree, ps = one_step()
    assert is_strictly_positive(upper_expectation_functional(ps), ps)
    dirac = linear_functional(ps.constant(1), tree)
    assert not is_strictly_positive(dirac, ps)


def test_four_prior_layout_reports_both_verdicts():
    tree, ps, flat = four_priors()
    gamma = Sup((Mix((F(1, 2), F(1, 2)), (Leaf("P1"), Leaf("P2"))), Leaf("P3")))
    systems = constants_only(ps)
    ext = extend(systems, gamma, strict=True, prior_set=ps)
    rep = positivity_report(ext.functional, ps)
    assert not rep.full and rep.relative
    assert rep.failing_full == (flat,)
    assert not is_viable(systems, gamma, ps).viable
    ok = is_viable(systems, gamma, ps, relative=True)
    assert ok.viable
    X = Claim.from_expr(tree, "B")
    assert ok.preference(0, X) == -ok.witness(-X)


def test_planted_arbitrage_not_viable():
    tree, ps = one_step()
    P1 = ps.constant(1)
    leaf = min(P1.support)
    m = Claim.indicator(tree, [leaf])
    sys = constants_only(ps)
    sys[P1.id] = LinearPriceSystem(P1, (Claim.constant(tree, 1), m), (1, 0))
    v = is_viable(sys, sup_of_all(ps), ps)
    assert not v.viable and v.certificate.strict
    # the non-strict extension still exists
    extend(sys, sup_of_all(ps), prior_set=ps)


def test_restriction_on_joint_basis():
    tree, ps = one_step()
    B = Claim.from_expr(tree, "B")
    one = Claim.constant(tree, 1)
    sys = {P.id: LinearPriceSystem(P, (one, B), (1, 0)) for P in ps}
    ext = extend(sys, sup_of_all(ps), strict=True, prior_set=ps)
    assert restriction_report(ext.functional, sys, sup_of_all(ps), ps).ok


def test_load_price_spec_defaults():
    spec = {"priors": {"depth": 1, "sigma_grid": [1, 2]}, "systems": {"P2": {"marketed_basis": ["1", "QV"], "prices": [1, 4]}}}
    ps = load_price_spec(spec)
    assert set(ps.systems) == {"P1", "P2"}
    assert ps.systems["P1"].prices == (1,)
    assert is_viable(ps.systems, ps.gamma, ps.prior_set).viable
    with pytest.raises(PricingError):
        load_price_spec({**spec, "systems": {"P9": {"marketed_basis": ["1"], "prices": [1]}}})


@settings(max_examples=80, deadline=None)
@given(st.integers(min_value=0, max_value=10**6))
def test_consolidated_functional_is_coherent(seed):
    rng = random.Random(seed)
    ps = random_prior_set(rng, max_depth=2, max_grid=2, max_priors=4)
    tree = ps.tree
    gamma = random_gamma(rng, ps.ids)
    base = {P.id: (P, random_density(rng, P, tree.n_leaves)) for P in ps}
    psi = consolidate(gamma, base, tree)
    comps = {pid: c for pid, c in ((pid, consolidate(Leaf(pid), base, tree).components[0]) for pid in ps.ids)}
    X, Y = random_claim(rng, tree), random_claim(rng, tree)
    lam = F(rng.randint(0, 8), 3)
    c = F(rng.randint(-6, 6), 5)
    assert psi(X + Y) <= psi(X) + psi(Y)
    assert psi(X * lam) == lam * psi(X)
    assert psi(X + Claim(tuple(abs(v) for v in Y))) >= psi(X)
    assert psi(X + Claim.constant(tree, c)) == psi(X) + c
    assert psi(X) == evaluate_gamma(gamma, comps, X)
    # Lipschitz bound in the capacity norm of the difference
    D = X - Y
    bound = psi.lipschitz_constant() * float(upper_expectation(D.square(), ps).value) ** 0.5
    assert abs(float(psi(X) - psi(Y))) <= bound + 1e-12
