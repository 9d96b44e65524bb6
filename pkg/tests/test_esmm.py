import json
import random
from fractions import Fraction as F

import pytest
from hypothesis import given, settings, strategies as st

from rvp.esmm import (
    EsMMError,
    EsMMMember,
    EsMMSet,
    check_corollary,
    density_vertices,
    esmm_from_extension,
    extension_from_esmm,
    load_esmm,
    raw_system,
    same_components,
    verify_esmm,
)
from rvp.instances import random_claim, random_market
from rvp.market import (
    Market,
    find_arbitrage,
    is_symmetric_martingale,
    market_systems,
    portfolio_value,
    strategy_from_gains,
)
from rvp.pricing import Leaf, Mix, Sup, extend, linear_functional, sup_of_all, upper_expectation_functional
from rvp.uncertainty import Claim, Prior, PriorSet, ScenarioTree, generate_prior_set


def binomial(S):
    tree = ScenarioTree.for_grid(1, [1])
    return Market(tree, tree.node_values(S), generate_prior_set(tree, (1, 1), (1,)))


def grid_market(depth=1, S="1 + B/4"):
    tree = ScenarioTree.for_grid(depth, [1, 2])
    return Market(tree, tree.node_values(S), generate_prior_set(tree, (1, 2), (1, 2)))


def four_prior_market():
    tree = ScenarioTree.for_grid(1, [1, 2, 3], extra=(0,))
    base = generate_prior_set(tree, (1, 3), (1, 2, 3))
    flat = next(i for i, leaf in enumerate(tree.leaves) if tree.node_noise[leaf] == 0)
    priors = tuple(Prior(f"P{k + 1}", dict(base.constant(s).mass)) for k, s in enumerate((1, 2, 3)))
    ps = PriorSet(tree, priors + (Prior("P4", {flat: F(1)}),))
    return Market(tree, tree.node_values("1 + B/4"), ps)


def unit_members(m):
    one = (F(1),) * m.tree.n_leaves
    return EsMMSet(m.tree, tuple(EsMMMember(P, one, P.id) for P in m.priors))


def test_verify_examples():
    m = binomial("2 + B/2")
    assert verify_esmm(unit_members(m), m).ok
    drift = binomial("2 + B/2 + t/4")
    rep = verify_esmm(unit_members(drift), drift)
    assert not rep.ok and rep.failures[0]["node"] == 0
    # risk-neutral weights 1/4 up and 3/4 down
    P = drift.priors.priors[0]
    up = next(i for i, leaf in enumerate(drift.tree.leaves) if drift.tree.node_noise[leaf] > 0)
    Z = tuple(F(1, 2) if i == up else F(3, 2) for i in range(2))
    assert verify_esmm(EsMMSet(drift.tree, (EsMMMember(P, Z, P.id),)), drift).ok
    g = grid_market(2, "B")
    assert verify_esmm(unit_members(g), g).ok


def test_verify_rejects_degenerate_members():
    m = binomial("2 + B/2")
    P = m.priors.priors[0]
    assert not verify_esmm(EsMMSet(m.tree, (EsMMMember(P, (F(0), F(2)), P.id),)), m).equivalence
    assert not verify_esmm(EsMMSet(m.tree, (EsMMMember(P, (F(1), F(2)), P.id),)), m).normalised


def test_dirac_extension_gives_classical_measure():
    m = binomial("2 + B/2 + t/4")
    P = m.priors.priors[0]
    ext = extend(market_systems(m), Leaf(P.id), strict=True, prior_set=m.priors)
    Q = esmm_from_extension(ext.functional, m)
    assert len(Q.members) == 1
    assert sorted(Q.members[0].density) == [F(1, 2), F(3, 2)]


def test_sup_of_all_on_driftless_market_has_unit_densities():
    m = grid_market(1)
    ext = extend(market_systems(m), sup_of_all(m.priors), strict=True, prior_set=m.priors)
    Q = esmm_from_extension(ext.functional, m)
    for mm in Q.members:
        assert all(mm.density[i] == 1 for i in mm.base.support)
    assert same_components(extension_from_esmm(Q, m), ext.functional)


def test_mixture_layout_gives_two_members():
    m = four_prior_market()
    gamma = Sup((Mix((F(1, 2), F(1, 2)), (Leaf("P1"), Leaf("P2"))), Leaf("P3")))
    R = [m.priors.get(p) for p in ("P1", "P2", "P3")]
    ext = extend(market_systems(m, R), gamma, strict=True, prior_set=m.priors)
    Q = esmm_from_extension(ext.functional, m)
    assert len(Q.members) == 2
    assert not isinstance(Q.members[0].label, str) and Q.members[1].label == "P3"
    back = extension_from_esmm(Q, m)
    assert same_components(back, ext.functional)
    X = Claim.from_expr(m.tree, "B**2")
    assert back(X) == max(F(5, 2), F(9))


def test_extension_requires_positivity_and_no_arbitrage():
    m = grid_market(1)
    with pytest.raises(EsMMError):
        esmm_from_extension(linear_functional(Prior("x", {0: F(1)}), m.tree), m)
    q = grid_market(1, "1 + QV - t")
    with pytest.raises(EsMMError):
        esmm_from_extension(upper_expectation_functional(q.priors), q)


def test_consequence_examples():
    rep = check_corollary(binomial("2 + B/2"))
    assert rep.ok and rep.esmm_found and rep.viable
    (entry,) = rep.completeness.values()
    assert entry["complete"] and entry["vertices"] == 1

    tree = ScenarioTree.build(1, [1, 0, -1])
    P = Prior("P1", {0: F(1, 3), 1: F(1, 3), 2: F(1, 3)})
    tri = Market(tree, tree.node_values("2 + B/2"), PriorSet(tree, (P,)))
    rep = check_corollary(tri)
    assert rep.ok and rep.esmm_found
    assert not rep.completeness["P1"]["complete"] and rep.completeness["P1"]["vertices"] >= 2
    assert len(density_vertices(raw_system(tri, P), 3)) == 2

    qv = grid_market(1, "1 + QV - t")
    rep = check_corollary(qv)
    assert rep.ok and rep.arbitrage and not rep.esmm_found and not rep.viable
    assert rep.certificate.verify()


def test_load_esmm_roundtrip():
    m = grid_market(1)
    Q = unit_members(m)
    back = load_esmm(json.loads(Q.dumps()), m.priors)
    assert back.dumps() == Q.dumps()
    with pytest.raises(EsMMError):
        load_esmm({"members": [{"prior": {"mix": []}, "density": []}]}, m.priors)


@settings(max_examples=40, deadline=None)
@given(st.integers(min_value=0, max_value=10**6), st.booleans(), st.booleans())
def test_consequence_battery(seed, incomplete, planted):
    rng = random.Random(seed)
    m = random_market(rng, incomplete=incomplete, arbitrage=planted)
    rep = check_corollary(m)
    assert rep.ok
    if rep.esmm_found:
        assert not find_arbitrage(m)
        measures = PriorSet(m.tree, tuple(rep.esmm.measures()))
        pos = {n: F(rng.randint(-3, 3), 2) for n in m.trading_nodes()}
        eta = strategy_from_gains(m, F(rng.randint(-2, 2)), pos)
        V = portfolio_value(eta, m)
        assert is_symmetric_martingale(V, measures)
        psi = extension_from_esmm(rep.esmm, m)
        assert psi(Claim.constant(m.tree, 3)) == 3
        assert psi(random_claim(rng, m.tree)) is not None
