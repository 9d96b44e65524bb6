"""Random finite instances: prior sets, consolidations, claims, price systems
and markets. Everything is rational and driven by ``random.Random`` so
instances are reproducible from a seed."""

from __future__ import annotations

import random
from dataclasses import dataclass
from fractions import Fraction
from typing import Sequence

from .market import Market
from .pricing import Gamma, Leaf, LinearPriceSystem, Mix, Sup
from .uncertainty import (
    ONE,
    ZERO,
    Claim,
    Prior,
    PriorSet,
    ScenarioTree,
    generate_prior_set,
    sample_controls,
)

SIGMAS = (Fraction(1), Fraction(2), Fraction(3))
PROBS = (Fraction(1, 2), Fraction(1, 3), Fraction(2, 3), Fraction(1, 4))


def rand_fraction(rng: random.Random, lo: int = -5, hi: int = 5, den: int = 4) -> Fraction:
    return Fraction(rng.randint(lo * den, hi * den), den)


def random_weights(rng: random.Random, k: int, total: Fraction = ONE) -> tuple[Fraction, ...]:
    raw = [rng.randint(1, 6) for _ in range(k)]
    s = sum(raw)
    return tuple(Fraction(r, s) * total for r in raw)


def random_prior_set(rng: random.Random, max_depth: int = 3, max_grid: int = 3, max_priors: int = 6) -> PriorSet:
    depth = rng.randint(1, max_depth)
    grid = sorted(rng.sample(SIGMAS, rng.randint(1, max_grid)))
    tree = ScenarioTree.for_grid(depth, grid)
    p = rng.choice(PROBS)
    if depth <= 2 and len(grid) <= 2 and rng.random() < 0.5:
        return generate_prior_set(tree, (grid[0], grid[-1]), grid, p)
    return sample_controls(tree, grid, rng.randint(1, max_priors), rng, p)


def random_gamma(rng: random.Random, ids: Sequence[str], depth: int = 2, deficit: bool = False) -> Gamma:
    """Random expression over ``ids``; MIX weights sum to one unless ``deficit``."""
    ids = list(ids)
    if depth == 0 or len(ids) == 1 or rng.random() < 0.25:
        return Leaf(rng.choice(ids))
    k = rng.randint(2, min(3, len(ids)) if len(ids) >= 2 else 2)
    children = tuple(random_gamma(rng, ids, depth - 1, deficit) for _ in range(k))
    if rng.random() < 0.5:
        return Sup(children)
    total = Fraction(rng.randint(1, 3), 4) if deficit and rng.random() < 0.5 else ONE
    return Mix(random_weights(rng, k, total), children)


def covering_gamma(rng: random.Random, ids: Sequence[str]) -> Gamma:
    """Random expression in which every prior appears."""
    ids = list(ids)
    rng.shuffle(ids)
    groups: list[Gamma] = []
    i = 0
    while i < len(ids):
        k = rng.randint(1, 3)
        chunk = ids[i : i + k]
        i += k
        if len(chunk) == 1:
            groups.append(Leaf(chunk[0]))
        elif rng.random() < 0.5:
            groups.append(Mix(random_weights(rng, len(chunk)), tuple(Leaf(c) for c in chunk)))
        else:
            groups.append(Sup(tuple(Leaf(c) for c in chunk)))
    return groups[0] if len(groups) == 1 else Sup(tuple(groups))


def random_claim(rng: random.Random, tree: ScenarioTree, lo: int = -5, hi: int = 5) -> Claim:
    return Claim(tuple(rand_fraction(rng, lo, hi) for _ in range(tree.n_leaves)))


def random_density(rng: random.Random, P: Prior, n_leaves: int, zeros: bool = False) -> tuple[Fraction, ...]:
    """Nonnegative density with ``E^P[Z] = 1`` (strictly positive unless ``zeros``)."""
    raw = [Fraction(rng.randint(0 if zeros else 1, 6)) for _ in range(n_leaves)]
    if all(raw[i] == 0 for i in P.mass):
        raw[next(iter(P.mass))] = ONE
    s = sum((m * raw[i] for i, m in P.mass.items()), ZERO)
    return tuple(v / s for v in raw)


# ---------------------------------------------------------------------------
# Price systems
# ---------------------------------------------------------------------------

@dataclass
class PriceInstance:
    prior_set: PriorSet
    systems: dict[str, LinearPriceSystem]
    gamma: Gamma
    kind: str


def random_price_instance(rng: random.Random) -> PriceInstance:
    """Mix of viable, boundary (density forced to vanish) and inconsistent systems."""
    ps = random_prior_set(rng, max_depth=2, max_grid=2, max_priors=4)
    tree = ps.tree
    kind = rng.choice(["viable", "viable", "boundary", "arbitrage", "random"])
    systems = {}
    bad = rng.choice(ps.ids)
    for P in ps:
        basis = [Claim.constant(tree, 1)] + [random_claim(rng, tree, -3, 3) for _ in range(rng.randint(0, 2))]
        mode = kind if P.id == bad else "viable"
        if mode == "viable":
            Z = random_density(rng, P, tree.n_leaves)
            prices = [sum((m * Z[i] * c[i] for i, m in P.mass.items()), ZERO) for c in basis]
        elif mode == "boundary":
            leaf = rng.choice(sorted(P.support))
            ind = Claim.indicator(tree, [leaf])
            basis.append(ind)
            Z = list(random_density(rng, P, tree.n_leaves))
            Z[leaf] = ZERO
            s = sum((m * Z[i] for i, m in P.mass.items()), ZERO)
            if s == 0:
                Z = [ONE] * tree.n_leaves
                Z[leaf] = ZERO
                s = sum((m * Z[i] for i, m in P.mass.items()), ZERO) or ONE
            Z = [z / s for z in Z]
            prices = [sum((m * Z[i] * c[i] for i, m in P.mass.items()), ZERO) for c in basis]
        elif mode == "arbitrage":
            leaf = rng.choice(sorted(P.support))
            basis.append(Claim.indicator(tree, [leaf]) * rng.randint(1, 3))
            Z = random_density(rng, P, tree.n_leaves)
            prices = [sum((m * Z[i] * c[i] for i, m in P.mass.items()), ZERO) for c in basis[:-1]] + [ZERO]
        else:
            prices = [ONE] + [rand_fraction(rng, -2, 2) for _ in basis[1:]]
        systems[P.id] = LinearPriceSystem(P, tuple(basis), tuple(prices))
    return PriceInstance(ps, systems, covering_gamma(rng, ps.ids), kind)


# ---------------------------------------------------------------------------
# Markets
# ---------------------------------------------------------------------------

def prior_from_kernels(tree: ScenarioTree, kernels: dict[int, Sequence[Fraction]], pid: str) -> Prior:
    """Leaf masses from one-step kernels (over ``tree.children[n]``) at reachable nodes."""
    mass: dict[int, Fraction] = {}

    def walk(n, w):
        if not tree.children[n]:
            mass[tree.leaf_position(n)] = w
            return
        for c, k in zip(tree.children[n], kernels[n]):
            if k:
                walk(c, w * k)

    walk(0, ONE)
    return Prior(pid, mass)


def _straddling_asset(rng: random.Random, tree: ScenarioTree, arbitrage_nodes: set[int] = frozenset()) -> list[Fraction]:
    S = [ZERO] * tree.n_nodes
    S[0] = Fraction(rng.randint(2, 6))
    for n in range(tree.n_nodes):
        if not tree.children[n]:
            continue
        up = Fraction(rng.randint(1, 4), 4)
        dn = Fraction(rng.randint(1, 4), 4)
        incs = [tree.increment[c] for c in tree.children[n]]
        smallest = min(abs(d) for d in incs if d != 0)
        for c, d in zip(tree.children[n], incs):
            if n in arbitrage_nodes:
                S[c] = S[n] + abs(d) * up  # every branch gains: a sure profit at this node
            elif d > 0:
                S[c] = S[n] + d * up
            elif d < 0:
                S[c] = S[n] + d * dn
            else:
                r = Fraction(rng.randint(-3, 3), 8)
                S[c] = S[n] + r * smallest * min(up, dn)
    return S


def random_market(rng: random.Random, incomplete: bool = False, arbitrage: bool = False) -> Market:
    """Binary (complete) or trinomial (incomplete) market under a random prior set.

    The asset straddles its current value at every node under every prior's
    branches unless ``arbitrage`` plants a node where all branches gain.
    """
    depth = rng.randint(1, 2)
    grid = sorted(rng.sample(SIGMAS[:2] if incomplete else SIGMAS, rng.randint(1, 2)))
    if not incomplete:
        tree = ScenarioTree.for_grid(depth, grid)
        p = rng.choice(PROBS)
        ps = generate_prior_set(tree, (grid[0], grid[-1]), grid, p) if depth == 1 or len(grid) == 1 else sample_controls(tree, grid, rng.randint(1, 4), rng, p)
    else:
        tree = ScenarioTree.for_grid(depth, grid, extra=(0,))
        priors = []
        seen = set()
        for j in range(rng.randint(1, 3)):
            kern = {}
            for n in tree.internal_nodes():
                s = rng.choice(grid)
                kk = []
                raw = [rng.randint(1, 4) for _ in range(3)]
                tot = sum(raw)
                w = {s: Fraction(raw[0], tot), -s: Fraction(raw[2], tot), 0: Fraction(raw[1], tot)}
                for c in tree.children[n]:
                    kk.append(w.get(tree.increment[c], ZERO))
                kern[n] = kk
            pr = prior_from_kernels(tree, kern, f"P{len(priors) + 1}")
            if pr.key() not in seen:
                seen.add(pr.key())
                priors.append(pr)
        ps = PriorSet(tree, tuple(priors))
    arb: set[int] = set()
    if arbitrage:
        charged = [n for n in tree.internal_nodes() if any(P.charges(tree, n) for P in ps)]
        arb = {rng.choice(charged)}
    S = _straddling_asset(rng, tree, arb)
    return Market(tree, tuple(S), ps)
