import random
from fractions import Fraction as F

import pytest
from hypothesis import given, settings, strategies as st

from rvp.instances import random_claim, random_market
from rvp.market import (
    Market,
    MarketError,
    NotPastingStable,
    Strategy,
    conditional_at,
    conditional_sublinear_expectation,
    control_closure,
    esssup_by_priors,
    find_arbitrage,
    is_complete,
    is_pasting_stable,
    is_self_financing,
    is_symmetric_martingale,
    load_market,
    marketed_space,
    pasting_closure,
    portfolio_value,
    strategy_from_gains,
    symmetric_martingale_report,
    terminal_value,
)
from rvp.uncertainty import Claim, PriorSet, ScenarioTree, generate_prior_set


def grid_market(depth, S, extra=()):
    tree = ScenarioTree.for_grid(depth, [1, 2], extra=extra)
    ps = generate_prior_set(tree, (1, 2), (1, 2))
    return Market(tree, tree.node_values(S), ps)


def binomial(S="2 + B/2"):
    tree = ScenarioTree.for_grid(1, [1])
    return Market(tree, tree.node_values(S), generate_prior_set(tree, (1, 1), (1,)))


def test_self_financing_examples():
    m = grid_market(2, "3 + B")
    assert is_self_financing(Strategy.buy_and_hold(m.tree, 1, 2), m)
    lvl1 = m.tree.nodes_at(1)
    hold = {0: (1, 1)}
    hold.update({n: (1, 2) for n in lvl1})
    assert not is_self_financing(Strategy(hold), m)


def test_violation_on_polar_node_is_ignored():
    m = grid_market(2, "3 + B", extra=(0,))
    flat = next(n for n in m.tree.nodes_at(1) if m.tree.increment[n] == 0)
    assert not any(P.charges(m.tree, flat) for P in m.priors)
    hold = {n: (F(1), F(1)) for n in m.tree.internal_nodes()}
    hold[flat] = (F(1), F(5))
    eta = Strategy(hold)
    assert is_self_financing(eta, m)


def test_portfolio_value_examples():
    m = grid_market(2, "3 + B")
    assert set(portfolio_value(Strategy.buy_and_hold(m.tree, 1, 0), m)) == {1}
    assert portfolio_value(Strategy.buy_and_hold(m.tree, 0, 1), m) == m.S
    eta = Strategy.buy_and_hold(m.tree, -m.S[0], 1)
    assert terminal_value(eta, m) == m.terminal() - Claim.constant(m.tree, m.S[0])
    bad = Strategy({0: (0, 1), **{n: (0, 2) for n in m.tree.nodes_at(1)}})
    with pytest.raises(MarketError):
        portfolio_value(bad, m)


def test_no_arbitrage_for_martingale_binomial():
    m = binomial()
    for method in ("local", "lp"):
        assert not find_arbitrage(m, method=method)


def test_qv_arbitrage_example():
    m = grid_market(1, "1 + QV - t")
    for method in ("local", "lp"):
        scan = find_arbitrage(m, method=method)
        assert scan.found and scan.capital <= 0
        P1, P2 = m.priors.constant(1), m.priors.constant(2)
        assert all(scan.payoff[i] == 0 for i in P1.support)
        assert all(scan.payoff[i] > 0 for i in P2.support)
        assert scan.profit_prior == P2.id
        assert not find_arbitrage(m, [P1], method=method)


def test_marketed_space_examples():
    m = grid_market(1, "1")
    s = marketed_space(m, m.priors.constant(1))
    assert len(s.basis) == 1 and s.prices == (1,)
    b = binomial()
    sb = marketed_space(b, b.priors.priors[0])
    assert len(sb.basis) == 2 and is_complete(sb)
    q = grid_market(1, "1 + QV - t")
    with pytest.raises(MarketError) as exc:
        marketed_space(q, q.priors.constant(2))
    assert exc.value.scan.found


def test_pasting_examples():
    tree = ScenarioTree.for_grid(2, [1, 2])
    full = generate_prior_set(tree, (1, 2), (1, 2))
    assert is_pasting_stable(full)
    assert len(pasting_closure(full)) == len(full)
    pair = full.subset([full.constant(1).id, full.constant(2).id])
    single = full.subset([full.constant(1).id])
    assert len(pasting_closure(single)) == 1
    # the two constants never share a charged node below the root
    assert len(pasting_closure(pair)) == 2
    closed = control_closure(pair)
    assert len(closed) == 8
    assert {p.key() for p in closed} == {p.key() for p in full}


def test_conditional_expectation_examples():
    tree = ScenarioTree.for_grid(2, [1, 2])
    ps = generate_prior_set(tree, (1, 2), (1, 2))
    v = conditional_sublinear_expectation(Claim.constant(tree, 3), ps)
    assert set(v) == {3}
    v = conditional_sublinear_expectation(Claim.from_expr(tree, "B**2"), ps)
    assert v[0] == 8
    v = conditional_sublinear_expectation(Claim.from_expr(tree, "B"), ps)
    assert list(v) == list(tree.node_noise)


def test_unstable_sets_are_refused():
    tree = ScenarioTree.for_grid(2, [1, 2])
    full = generate_prior_set(tree, (1, 2), (1, 2))
    c1 = full.constant(1)
    # same root volatility as c1, then volatility 2 everywhere on the second step
    late = next(p for p in full if p.control[0] == 1 and all(v == 2 for n, v in p.control.items() if n != 0))
    ps = PriorSet(tree, (c1, late))
    assert not is_pasting_stable(ps)
    with pytest.raises(NotPastingStable):
        conditional_sublinear_expectation(Claim.constant(tree, 1), ps)
    conditional_sublinear_expectation(Claim.constant(tree, 1), ps, close=True)


def test_symmetric_martingale_examples():
    tree = ScenarioTree.for_grid(2, [1, 2])
    ps = generate_prior_set(tree, (1, 2), (1, 2))
    assert is_symmetric_martingale(tree.node_noise, ps)
    rep = symmetric_martingale_report(tree.node_qv, ps)
    assert not rep.symmetric
    root = [f for f in rep.failures if f[0] == 0]
    assert sorted(f[2] for f in root) == [1, 4]
    assert is_symmetric_martingale([F(2)] * tree.n_nodes, ps)


def test_load_market_from_config():
    m = load_market("configs/market_driftless.json")
    assert len(m.priors) == 8
    assert not find_arbitrage(m)
    assert find_arbitrage(load_market("configs/market_qv.json"))
    with pytest.raises(MarketError):
        load_market({"priors": {"depth": 1, "sigma_grid": [1]}, "S": "1", "S0": 2})


@settings(max_examples=40, deadline=None)
@given(st.integers(min_value=0, max_value=10**6), st.booleans(), st.booleans())
def test_arbitrage_routes_agree(seed, incomplete, planted):
    rng = random.Random(seed)
    m = random_market(rng, incomplete=incomplete, arbitrage=planted)
    a = find_arbitrage(m, method="local")
    b = find_arbitrage(m, method="lp")
    assert a.found == b.found
    if planted:
        assert a.found
    for scan in (a, b):
        if scan.found:
            assert all(scan.payoff[i] >= 0 for P in m.priors for i in P.support)
            assert any(P.expect(scan.payoff) > 0 for P in m.priors)
            assert scan.capital <= 0
    if not a.found:
        for P in m.priors:
            assert not find_arbitrage(m, [P])


@settings(max_examples=40, deadline=None)
@given(st.integers(min_value=0, max_value=10**6))
def test_tower_property_and_enumeration(seed):
    rng = random.Random(seed)
    tree = ScenarioTree.for_grid(2, [1, 2])
    ps = generate_prior_set(tree, (1, 2), (1, 2))
    X = random_claim(rng, tree)
    full = conditional_sublinear_expectation(X, ps)
    assert full == esssup_by_priors(X, ps)
    inner = conditional_at(X, ps, 1)
    assert conditional_sublinear_expectation(inner, ps)[0] == full[0]


@settings(max_examples=30, deadline=None)
@given(st.integers(min_value=0, max_value=10**6))
def test_symmetric_asset_gives_linear_wealth(seed):
    # a driftless asset is symmetric, so every self-financing wealth is too
    rng = random.Random(seed)
    m = grid_market(2, "2 + B")
    pos = {n: F(rng.randint(-4, 4), 2) for n in m.trading_nodes()}
    eta = strategy_from_gains(m, F(rng.randint(-3, 3)), pos)
    V = portfolio_value(eta, m)
    assert is_symmetric_martingale(V, m.priors)
    assert conditional_sublinear_expectation(terminal_value(eta, m), m.priors) == V
