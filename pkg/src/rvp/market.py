"""Dynamic market on a scenario tree.

Simple self-financing strategies, arbitrage search against a set of priors,
prior-wise marketed spaces, and the conditional sublinear expectation
computed by backward recursion over the one-step kernels seen at each node.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from fractions import Fraction
from pathlib import Path
from typing import Iterable, Mapping, Sequence

from . import lp
from .expr import exact
from .lp import as_fraction
from .pricing import LinearPriceSystem
from .uncertainty import (
    ONE,
    ZERO,
    Claim,
    Prior,
    PriorSet,
    ScenarioTree,
    _enumerate_controls,
    as_claim,
    load_prior_spec,
    prior_from_control,
)


class MarketError(ValueError):
    pass


class NotPastingStable(MarketError):
    pass


def _priors(R) -> list[Prior]:
    return list(R.priors) if isinstance(R, PriorSet) else list(R)


def _charged_nodes(tree: ScenarioTree, priors: Iterable[Prior]) -> set[int]:
    leaves = set()
    for p in priors:
        leaves |= p.support
    out = set()
    for pos in leaves:
        n = tree.leaves[pos]
        while n >= 0:
            if n in out:
                break
            out.add(n)
            n = tree.parent[n]
    return out


# ---------------------------------------------------------------------------
# Market and strategies
# ---------------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class Market:
    """Riskless asset ``S0 = 1`` and an adapted risky asset ``S`` on a tree.

    ``rebalance_levels`` are the tree levels at which holdings may change;
    level 0 is always included.
    """

    tree: ScenarioTree
    S: tuple[Fraction, ...]
    priors: PriorSet
    rebalance_levels: tuple[int, ...] | None = None

    def __post_init__(self):
        S = tuple(as_fraction(v) for v in self.S)
        if len(S) != self.tree.n_nodes:
            raise MarketError("S must have one value per node")
        object.__setattr__(self, "S", S)
        if not self.priors.tree.same_as(self.tree):
            raise MarketError("prior set lives on a different tree")
        lv = sorted(set(self.rebalance_levels or range(self.tree.depth)) | {0})
        if any(not 0 <= k < max(self.tree.depth, 1) for k in lv):
            raise MarketError("rebalance levels must lie in [0, depth)")
        object.__setattr__(self, "rebalance_levels", tuple(lv))

    @property
    def S0(self) -> tuple[Fraction, ...]:
        return (ONE,) * self.tree.n_nodes

    def terminal(self) -> Claim:
        return Claim.from_nodes(self.tree, self.S)

    def block_end(self, level: int) -> int:
        """Level at which a position opened at ``level`` is next revised."""
        for k in self.rebalance_levels:
            if k > level:
                return k
        return self.tree.depth

    def trading_nodes(self) -> list[int]:
        """Internal nodes at rebalance levels (where holdings are chosen)."""
        lv = set(self.rebalance_levels)
        return [n for n in self.tree.internal_nodes() if self.tree.level[n] in lv]

    def gains(self, node: int) -> Claim:
        """Terminal payoff of one unit of ``S`` bought at ``node`` and held to the next rebalance, zero cost."""
        t = self.tree
        end = self.block_end(t.level[node])
        a, b = t.leaf_range[node]
        vals = [ZERO] * t.n_leaves
        for pos in range(a, b):
            anc = t.ancestor_at(t.leaves[pos], end)
            vals[pos] = self.S[anc] - self.S[node]
        return Claim(tuple(vals))


@dataclass(frozen=True)
class Strategy:
    """Holdings ``(eta0, eta1)`` per internal node, kept over the next step."""

    holdings: Mapping[int, tuple[Fraction, Fraction]]

    def __post_init__(self):
        object.__setattr__(
            self, "holdings", {int(n): (as_fraction(a), as_fraction(b)) for n, (a, b) in self.holdings.items()}
        )

    @classmethod
    def buy_and_hold(cls, tree: ScenarioTree, eta0, eta1) -> "Strategy":
        return cls({n: (eta0, eta1) for n in tree.internal_nodes()})

    def at(self, node: int) -> tuple[Fraction, Fraction]:
        return self.holdings.get(node, (ZERO, ZERO))

    def to_json(self) -> dict:
        return {str(n): [str(a), str(b)] for n, (a, b) in sorted(self.holdings.items())}


def is_simple(eta: Strategy, m: Market, nodes: set[int] | None = None) -> bool:
    """Holdings change only at rebalance levels (checked on ``nodes``)."""
    t = m.tree
    lv = set(m.rebalance_levels)
    for n in t.internal_nodes():
        if n == 0 or t.level[n] in lv or (nodes is not None and n not in nodes):
            continue
        if eta.at(n) != eta.at(t.parent[n]):
            return False
    return True


def self_financing_violations(eta: Strategy, m: Market, priors=None) -> list[int]:
    t = m.tree
    charged = _charged_nodes(t, _priors(priors if priors is not None else m.priors))
    bad = []
    for n in t.internal_nodes():
        if n == 0 or n not in charged:
            continue
        a0, a1 = eta.at(t.parent[n])
        b0, b1 = eta.at(n)
        if a0 + a1 * m.S[n] != b0 + b1 * m.S[n]:
            bad.append(n)
    return bad


def is_self_financing(eta: Strategy, m: Market, priors=None) -> bool:
    """Rebalancing identity on every non-polar interior node, and holdings piecewise constant."""
    charged = _charged_nodes(m.tree, _priors(priors if priors is not None else m.priors))
    return not self_financing_violations(eta, m, priors) and is_simple(eta, m, charged)


def portfolio_value(eta: Strategy, m: Market, level: int | None = None) -> tuple[Fraction | None, ...]:
    """Node-indexed value ``eta0 + eta1 S`` at the given level (or everywhere when ``None``)."""
    if not is_self_financing(eta, m):
        raise MarketError("portfolio value requires a self-financing strategy")
    t = m.tree
    out: list[Fraction | None] = [None] * t.n_nodes
    for n in range(t.n_nodes):
        if level is not None and t.level[n] != level:
            continue
        e0, e1 = eta.at(n) if t.children[n] else eta.at(t.parent[n])
        out[n] = e0 + e1 * m.S[n]
    return tuple(out)


def terminal_value(eta: Strategy, m: Market) -> Claim:
    v = portfolio_value(eta, m, m.tree.depth)
    return Claim(tuple(v[leaf] for leaf in m.tree.leaves))


def strategy_from_gains(m: Market, capital, positions: Mapping[int, Fraction]) -> Strategy:
    """Self-financing strategy with initial capital and risky positions at trading nodes."""
    t = m.tree
    lv = set(m.rebalance_levels)
    hold: dict[int, tuple[Fraction, Fraction]] = {}
    wealth = {0: as_fraction(capital)}
    for n in range(t.n_nodes):
        if not t.children[n]:
            continue
        if n == 0 or t.level[n] in lv:
            h = as_fraction(positions.get(n, ZERO))
        else:
            h = hold[t.parent[n]][1]
        if n != 0:
            p0, p1 = hold[t.parent[n]]
            wealth[n] = p0 + p1 * m.S[n]
        hold[n] = (wealth[n] - h * m.S[n], h)
    return Strategy(hold)


# ---------------------------------------------------------------------------
# Arbitrage
# ---------------------------------------------------------------------------

@dataclass
class ProfitLP:
    prior_id: str
    value: Fraction
    dual: list[Fraction] | None


@dataclass
class ArbitrageScan:
    found: bool
    witness: Strategy | None
    profit_prior: str | None
    payoff: Claim | None
    capital: Fraction | None
    per_prior: list[ProfitLP]
    constraints: dict = field(default_factory=dict)

    def __bool__(self) -> bool:  # truthy iff an arbitrage was found
        return self.found


def find_arbitrage(m: Market, R=None, method: str = "local") -> ArbitrageScan:
    """Search for a zero-cost strategy with payoff ``>= 0`` q.s. under ``R`` and a gain under some prior.

    ``method="lp"``: one LP per candidate profit prior maximises
    ``E^P[V_T]`` over capital ``x <= 0`` and risky positions at trading
    nodes, with ``0 <= V_T <= 1`` on the leaves charged by ``R``. The
    optimum is positive iff an arbitrage exists; otherwise the LP dual
    certifies its absence.

    ``method="local"``: with a single risky asset a global arbitrage exists
    iff some charged trading node has one-period gains of one sign on its
    charged leaves, not all zero. The certificate of absence lists, per
    node, a gaining and a losing leaf (or marks the node flat).
    """
    R = _priors(R if R is not None else m.priors)
    if not R:
        raise MarketError("empty prior subset")
    if method == "local":
        return _local_arbitrage(m, R)
    if method != "lp":
        raise MarketError(f"unknown method {method!r}")
    t = m.tree
    support = sorted(set().union(*(p.support for p in R)))
    charged = _charged_nodes(t, R)
    nodes = [n for n in m.trading_nodes() if n in charged]
    g = [m.gains(n) for n in nodes]
    # variables: [x', h_1..h_k], capital x = -x' with x' >= 0, h free
    k = len(nodes)
    A_ub, b_ub = [], []
    for i in support:
        row = [ONE] + [-gj[i] for gj in g]  # -(V_i) <= 0 where V_i = -x' + sum h g
        A_ub.append(row)
        b_ub.append(ZERO)
        A_ub.append([-ONE] + [gj[i] for gj in g])  # V_i <= 1
        b_ub.append(ONE)
    per: list[ProfitLP] = []
    for P in R:
        c = [-ONE] + [P.expect(gj) for gj in g]
        res = lp.solve_lp(c, A_ub, b_ub, free=list(range(1, k + 1)))
        if res.status != "optimal":  # pragma: no cover - the payoff box keeps it bounded
            raise lp.LPError("arbitrage LP did not reach an optimum")
        per.append(ProfitLP(P.id, res.objective, res.dual))
        if res.objective > 0:
            xprime, h = res.x[0], res.x[1:]
            eta = strategy_from_gains(m, -xprime, dict(zip(nodes, h)))
            payoff = Claim(tuple(-xprime + sum((hj * gj[i] for hj, gj in zip(h, g)), ZERO) for i in range(t.n_leaves)))
            cons = {
                q.id: {
                    "nonnegative": all(payoff[i] >= 0 for i in q.support),
                    "expected_gain": str(q.expect(payoff)),
                }
                for q in R
            }
            return ArbitrageScan(True, eta, P.id, payoff, -xprime, per, cons)
    return ArbitrageScan(False, None, None, None, None, per)


def _local_arbitrage(m: Market, R: Sequence[Prior]) -> ArbitrageScan:
    t = m.tree
    support = set().union(*(p.support for p in R))
    charged = _charged_nodes(t, R)
    straddles: dict[int, object] = {}
    for n in m.trading_nodes():
        if n not in charged:
            continue
        g = m.gains(n)
        a, b = t.leaf_range[n]
        live = [i for i in range(a, b) if i in support]
        up = next((i for i in live if g[i] > 0), None)
        dn = next((i for i in live if g[i] < 0), None)
        if up is not None and dn is not None:
            straddles[n] = (up, dn)
            continue
        if up is None and dn is None:
            straddles[n] = "flat"
            continue
        h = ONE if dn is None else -ONE
        payoff = g * h
        gain = up if dn is None else dn
        P = next(p for p in R if gain in p.support)
        cons = {
            q.id: {"nonnegative": all(payoff[i] >= 0 for i in q.support), "expected_gain": str(q.expect(payoff))}
            for q in R
        }
        cons["node"] = n
        eta = strategy_from_gains(m, ZERO, {n: h})
        return ArbitrageScan(True, eta, P.id, payoff, ZERO, [], cons)
    return ArbitrageScan(False, None, None, None, None, [], {"straddles": straddles})


# ---------------------------------------------------------------------------
# Marketed spaces
# ---------------------------------------------------------------------------

def marketed_generators(m: Market) -> tuple[list[Claim], list[Fraction]]:
    """Spanning payoffs of simple strategies and their initial costs."""
    claims = [Claim.constant(m.tree, 1)]
    prices = [ONE]
    for n in m.trading_nodes():
        claims.append(m.gains(n))
        prices.append(ZERO)
    return claims, prices


def marketed_space(m: Market, P: Prior) -> LinearPriceSystem:
    """Basis of ``M_P`` on ``supp P`` with prices from initial capital.

    Refuses with the witness when ``P`` admits an arbitrage, since prices
    would not be well defined.
    """
    scan = find_arbitrage(m, [P])
    if scan.found:
        err = MarketError(f"prior {P.id} admits an arbitrage; marketed prices are not well defined")
        err.scan = scan
        raise err
    claims, prices = marketed_generators(m)
    sup = sorted(P.support)
    rows = [[c[i] for i in sup] for c in claims]
    aug = [r + [p] for r, p in zip(rows, prices)]
    assert lp.rank(aug) == lp.rank(rows), "two hedges of one claim with different capital"
    keep = lp.independent_rows(rows)
    basis = []
    basis_prices = []
    for k in keep:
        basis.append(claims[k])
        basis_prices.append(prices[k])
    return LinearPriceSystem(P, tuple(basis), tuple(basis_prices))


def market_systems(m: Market, R=None) -> dict[str, LinearPriceSystem]:
    return {P.id: marketed_space(m, P) for P in _priors(R if R is not None else m.priors)}


def is_complete(system: LinearPriceSystem) -> bool:
    return lp.rank(system.restricted()) == len(system.prior.support)


# ---------------------------------------------------------------------------
# Pasting
# ---------------------------------------------------------------------------

def node_kernels(prior_set: PriorSet | Sequence[Prior], tree: ScenarioTree) -> dict[int, list[tuple[Fraction, ...]]]:
    """Distinct one-step kernels at each internal node, from the priors charging it."""
    out: dict[int, list[tuple[Fraction, ...]]] = {}
    for n in tree.internal_nodes():
        ks: list[tuple[Fraction, ...]] = []
        for p in prior_set:
            if p.charges(tree, n):
                k = p.kernel(tree, n)
                if k not in ks:
                    ks.append(k)
        if ks:
            out[n] = ks
    return out


def _hull_count(tree: ScenarioTree, K: Mapping[int, list], n: int) -> int:
    if not tree.children[n]:
        return 1
    total = 0
    for kap in K[n]:
        prod = 1
        for c, w in zip(tree.children[n], kap):
            if w != 0:
                prod *= _hull_count(tree, K, c)
        total += prod
    return total


def _distinct(priors: Iterable[Prior]) -> list[Prior]:
    seen: dict[tuple, Prior] = {}
    for p in priors:
        seen.setdefault(p.key(), p)
    return list(seen.values())


def is_pasting_stable(prior_set: PriorSet) -> bool:
    """Every measure assembled from the kernels the set uses at each node is already a member."""
    tree = prior_set.tree
    K = node_kernels(prior_set, tree)
    if tree.depth == 0:
        return True
    return _hull_count(tree, K, 0) == len(_distinct(prior_set))


def _hull_measures(tree: ScenarioTree, K: Mapping[int, list], n: int) -> list[dict[int, Fraction]]:
    if not tree.children[n]:
        return [{tree.leaf_position(n): ONE}]
    out = []
    for kap in K[n]:
        parts = []
        for c, w in zip(tree.children[n], kap):
            if w != 0:
                parts.append([(w, sub) for sub in _hull_measures(tree, K, c)])
        combos = [{}]
        for choices in parts:
            nxt = []
            for base in combos:
                for w, sub in choices:
                    d = dict(base)
                    for i, v in sub.items():
                        d[i] = w * v
                    nxt.append(d)
            combos = nxt
        out += combos
    return out


def pasting_closure(prior_set: PriorSet, limit: int = 100_000) -> PriorSet:
    """Smallest node-wise pasting-stable superset.

    Each member is cut at a node it charges and continued with the kernel
    of any other member charging that node; the fixpoint is the set of all
    measures whose kernel at each charged node is one seen there.
    """
    tree = prior_set.tree
    K = node_kernels(prior_set, tree)
    if tree.depth == 0 or _hull_count(tree, K, 0) == len(_distinct(prior_set)):
        return prior_set
    if _hull_count(tree, K, 0) > limit:
        raise MarketError("pasting closure too large to materialise")
    known = {p.key(): p for p in prior_set}
    out = list(prior_set.priors)
    k = 0
    for mass in _hull_measures(tree, K, 0):
        p = Prior("tmp", mass)
        if p.key() in known:
            continue
        k += 1
        q = Prior(f"paste{k}", mass)
        known[q.key()] = q
        out.append(q)
    return PriorSet(tree, tuple(out))


def control_closure(prior_set: PriorSet, branch_prob=Fraction(1, 2)) -> PriorSet:
    """Close a control-generated set under re-using, at every node of a level, any volatility some member uses at that level.

    For a constant-control family this yields every adapted control over
    the union of the constants.
    """
    tree = prior_set.tree
    menus: dict[int, set[Fraction]] = {k: set() for k in range(tree.depth)}
    for p in prior_set:
        if p.control is None:
            raise MarketError(f"prior {p.id} carries no control")
        for n, s in p.control.items():
            menus[tree.level[n]].add(s)
    controls = _enumerate_controls(tree, {k: sorted(v) for k, v in menus.items()})
    known = {p.key(): p for p in prior_set}
    out = list(prior_set.priors)
    j = 0
    for c in controls:
        q = prior_from_control(tree, c, "tmp", branch_prob)
        if q.key() in known:
            continue
        j += 1
        q = prior_from_control(tree, c, f"C{j}", branch_prob)
        known[q.key()] = q
        out.append(q)
    return PriorSet(tree, tuple(out))


# ---------------------------------------------------------------------------
# Conditional sublinear expectation
# ---------------------------------------------------------------------------

def conditional_sublinear_expectation(X, prior_set: PriorSet, close: bool = False) -> tuple[Fraction | None, ...]:
    """Node-indexed ``E_t(X)``: the max over node kernels of the expected continuation.

    Polar nodes carry ``None``. An unstable set is refused unless ``close``,
    in which case the recursion runs on its pasting closure.
    """
    tree = prior_set.tree
    if not close and not is_pasting_stable(prior_set):
        raise NotPastingStable("prior set is not stable under pasting; close it first")
    X = as_claim(X)
    K = node_kernels(prior_set, tree)
    charged = _charged_nodes(tree, prior_set)
    val: list[Fraction | None] = [None] * tree.n_nodes
    for n in reversed(range(tree.n_nodes)):
        if n not in charged:
            continue
        if not tree.children[n]:
            val[n] = X[tree.leaf_position(n)]
            continue
        best = None
        for kap in K[n]:
            v = sum((w * val[c] for c, w in zip(tree.children[n], kap) if w != 0), ZERO)
            best = v if best is None or v > best else best
        val[n] = best
    return tuple(val)


def conditional_at(X, prior_set: PriorSet, level: int, close: bool = False) -> Claim:
    """``E_t(X)`` as an ``F_t``-measurable claim (polar leaves get 0)."""
    v = conditional_sublinear_expectation(X, prior_set, close)
    tree = prior_set.tree
    out = []
    for leaf in tree.leaves:
        a = v[tree.ancestor_at(leaf, level)]
        out.append(ZERO if a is None else a)
    return Claim(tuple(out))


def esssup_by_priors(X, prior_set: PriorSet) -> tuple[Fraction | None, ...]:
    """Per-node max over members of ``E^P[X | node]`` (reference for the recursion)."""
    tree = prior_set.tree
    X = as_claim(X)
    out: list[Fraction | None] = [None] * tree.n_nodes
    for n in range(tree.n_nodes):
        vals = []
        for p in prior_set:
            tot = p.node_mass(tree, n)
            if tot == 0:
                continue
            a, b = tree.leaf_range[n]
            vals.append(sum((m * X[i] for i, m in p.mass.items() if a <= i < b), ZERO) / tot)
        if vals:
            out[n] = max(vals)
    return tuple(out)


@dataclass
class SymmetryReport:
    symmetric: bool
    failures: list[tuple[int, tuple[Fraction, ...], Fraction, Fraction]]  # node, kernel, kernel value, process value


def symmetric_martingale_report(process: Sequence, prior_set: PriorSet) -> SymmetryReport:
    """Every kernel at every non-polar node reproduces the process value one step back."""
    tree = prior_set.tree
    M = [None if v is None else as_fraction(v) for v in process]
    K = node_kernels(prior_set, tree)
    fails = []
    for n, ks in K.items():
        for kap in ks:
            v = sum((w * M[c] for c, w in zip(tree.children[n], kap) if w != 0), ZERO)
            if v != M[n]:
                fails.append((n, kap, v, M[n]))
    return SymmetryReport(not fails, fails)


def is_symmetric_martingale(process: Sequence, prior_set: PriorSet) -> bool:
    return symmetric_martingale_report(process, prior_set).symmetric


# ---------------------------------------------------------------------------
# JSON ingestion
# ---------------------------------------------------------------------------

def asset_from_spec(tree: ScenarioTree, spec) -> tuple[Fraction, ...]:
    """Node values from an array, an expression in ``B, QV, t``, or an Euler recursion.

    The recursion form is ``{"euler": {"s0": 1, "mu": "...", "V": "..."}}``
    with ``S' = S + mu(t, S) dQV + V(t, S) dB`` in exact arithmetic.
    """
    if isinstance(spec, str):
        return tree.node_values(spec)
    if isinstance(spec, Mapping) and "euler" in spec:
        e = spec["euler"]
        mu = exact(str(e.get("mu", "0")), ("t", "S"))
        V = exact(str(e.get("V", "1")), ("t", "S"))
        S = [ZERO] * tree.n_nodes
        S[0] = as_fraction(e.get("s0", 1))
        for n in range(1, tree.n_nodes):
            p = tree.parent[n]
            t = tree.date(p)
            dB = tree.increment[n]
            S[n] = S[p] + as_fraction(mu(t=t, S=S[p])) * dB * dB + as_fraction(V(t=t, S=S[p])) * dB
        return tuple(S)
    vals = tuple(as_fraction(v) for v in spec)
    if len(vals) != tree.n_nodes:
        raise MarketError(f"S has {len(vals)} values, tree has {tree.n_nodes} nodes")
    return vals


def load_market(spec: Mapping | str | Path) -> Market:
    """``{"priors": {...}, "S": ..., "S0": 1, "rebalance_dates": [...]}``; dates are tree levels."""
    if not isinstance(spec, Mapping):
        spec = json.loads(Path(spec).read_text())
    ps = load_prior_spec(spec["priors"])
    if "S0" in spec and any(as_fraction(v) != 1 for v in (spec["S0"] if isinstance(spec["S0"], list) else [spec["S0"]])):
        raise MarketError("the riskless asset must be identically 1 (zero interest)")
    S = asset_from_spec(ps.tree, spec["S"])
    return Market(ps.tree, S, ps, tuple(spec["rebalance_dates"]) if "rebalance_dates" in spec else None)


def select_priors(m: Market, which) -> list[Prior]:
    """``"all"``, a comma-separated id list, or a list of ids."""
    if which in (None, "all"):
        return list(m.priors.priors)
    ids = which.split(",") if isinstance(which, str) else list(which)
    return [m.priors.get(i.strip()) for i in ids]
