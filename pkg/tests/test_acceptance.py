"""Acceptance criteria C1..C9, each printed as one PASS/FAIL line.

Thresholds, instance counts and time budgets are pinned below rather than
read from the library defaults, so a change there cannot loosen a check.
"""

import pytest

from rvp import acceptance as acc

TOL = acc.Tolerances(
    pde_rel=1e-3,
    order_min=1.0,
    noise_rel=1e-3,
    girsanov_abs=5e-3,
    normalisation_abs=1e-3,
    convex_rel=1e-3,
    butterfly_abs=1e-3,
    n_coherence=1000,
    n_price=200,
    n_market=200,
    n_arbitrage=60,
    budget_coherence=60.0,
    budget_price=120.0,
    budget_market=120.0,
    budget_bs=10.0,
    budget_noise=30.0,
    budget_girsanov=60.0,
    budget_super=60.0,
)
SEED = 0


def report(r: acc.CriterionResult):
    print()
    print(r.line())
    assert r.passed, r.details
    assert r.seconds <= r.budget, f"{r.key} took {r.seconds:.1f}s, budget {r.budget:.0f}s"


@pytest.fixture(scope="module")
def coherence_pair():
    return acc.criterion_coherence_and_tower(TOL, SEED)


@pytest.fixture(scope="module")
def market_pair():
    return acc.criterion_roundtrip(TOL, SEED)


def test_c1_coherence_of_consolidated_functionals(coherence_pair):
    report(coherence_pair[0])


def test_c2_viability_iff_strict_extension():
    report(acc.criterion_viability(TOL, SEED))


def test_c3_extension_esmm_roundtrip(market_pair):
    report(market_pair[0])


def test_c4_consequence_battery(market_pair):
    report(market_pair[1])


def test_c5_degenerate_band_matches_black_scholes():
    report(acc.criterion_bs(TOL))


def test_c6_extremal_noise_identities():
    report(acc.criterion_noise(TOL))


def test_c7_girsanov_drift_removal():
    report(acc.criterion_girsanov(TOL))


def test_c8_superreplication():
    report(acc.criterion_super(TOL))


def test_c9_tower_and_symmetric_characterisation(coherence_pair):
    report(coherence_pair[1])
