"""Finite uncertainty model: scenario trees, priors from volatility controls,
upper expectation, capacity norm and the quasi-sure order.

All quantities are exact rationals. A tree is stored level by level with
children in branch order, so the leaves below any node form a contiguous
range; claims are tuples indexed by leaf position.
"""

from __future__ import annotations

import itertools
import json
import math
from dataclasses import dataclass, field
from fractions import Fraction
from pathlib import Path
from typing import Iterable, Iterator, Mapping, NamedTuple, Sequence

from .expr import exact
from .lp import as_fraction

ZERO = Fraction(0)
ONE = Fraction(1)


def exact_sqrt(q: Fraction) -> Fraction | None:
    """Rational square root of ``q`` if one exists."""
    q = Fraction(q)
    if q < 0:
        return None
    n, d = math.isqrt(q.numerator), math.isqrt(q.denominator)
    if n * n == q.numerator and d * d == q.denominator:
        return Fraction(n, d)
    return None


# ---------------------------------------------------------------------------
# Tree
# ---------------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class ScenarioTree:
    """Finite path tree of the canonical noise ``B`` and its quadratic variation.

    ``branch_values[n]`` lists the increments available at node ``n``; the
    increments actually stored on children are already scaled by the square
    root of the step length.
    """

    depth: int
    dates: tuple[Fraction, ...]
    parent: tuple[int, ...]
    level: tuple[int, ...]
    children: tuple[tuple[int, ...], ...]
    increment: tuple[Fraction, ...]
    node_noise: tuple[Fraction, ...]
    node_qv: tuple[Fraction, ...]
    branch_values: tuple[tuple[Fraction, ...], ...]
    leaves: tuple[int, ...]
    leaf_range: tuple[tuple[int, int], ...] = field(repr=False)

    @classmethod
    def build(cls, depth: int, branches: Sequence, dates: Sequence | None = None) -> "ScenarioTree":
        """Full path tree with the same unit-step branch set at every node.

        ``branches`` are increments per unit time; on a step of length ``dt``
        they are scaled by ``sqrt(dt)``, which must be rational.
        """
        if depth < 0:
            raise ValueError("depth must be nonnegative")
        units = tuple(as_fraction(b) for b in branches)
        if not units:
            raise ValueError("at least one branch value is required")
        if len(set(units)) != len(units):
            raise ValueError("branch values must be distinct")
        if dates is None:
            dts = tuple(Fraction(k) for k in range(depth + 1))
        else:
            dts = tuple(as_fraction(t) for t in dates)
            if len(dts) != depth + 1 or dts[0] != 0 or any(b <= a for a, b in zip(dts, dts[1:])):
                raise ValueError("dates must be 0 = t0 < ... < tN with N = depth")
        scale = []
        for a, b in zip(dts, dts[1:]):
            r = exact_sqrt(b - a)
            if r is None:
                raise ValueError(f"step {b - a} has no rational square root; increments cannot be embedded exactly")
            scale.append(r)

        parent, level, incr, noise, qv = [-1], [0], [ZERO], [ZERO], [ZERO]
        children: list[list[int]] = [[]]
        frontier = [0]
        for k in range(depth):
            nxt = []
            for n in frontier:
                for u in units:
                    d = u * scale[k]
                    idx = len(parent)
                    parent.append(n)
                    level.append(k + 1)
                    incr.append(d)
                    noise.append(noise[n] + d)
                    qv.append(qv[n] + d * d)
                    children.append([])
                    children[n].append(idx)
                    nxt.append(idx)
            frontier = nxt
        leaves = tuple(frontier)
        pos = {leaf: i for i, leaf in enumerate(leaves)}
        lr = [(0, 0)] * len(parent)
        for n in reversed(range(len(parent))):
            if not children[n]:
                lr[n] = (pos[n], pos[n] + 1)
            else:
                lr[n] = (lr[children[n][0]][0], lr[children[n][-1]][1])
        bvals = tuple(tuple(incr[c] for c in children[n]) for n in range(len(parent)))
        return cls(
            depth=depth,
            dates=dts,
            parent=tuple(parent),
            level=tuple(level),
            children=tuple(tuple(c) for c in children),
            increment=tuple(incr),
            node_noise=tuple(noise),
            node_qv=tuple(qv),
            branch_values=bvals,
            leaves=leaves,
            leaf_range=tuple(lr),
        )

    @classmethod
    def for_grid(cls, depth: int, sigma_grid: Sequence, dates: Sequence | None = None, extra: Sequence = ()) -> "ScenarioTree":
        """Tree carrying ``+-sigma`` branches for every grid value (plus ``extra`` increments)."""
        units: list[Fraction] = []
        for s in sigma_grid:
            s = as_fraction(s)
            if s <= 0:
                raise ValueError("volatility values must be positive")
            units += [s, -s]
        for e in extra:
            e = as_fraction(e)
            if e not in units:
                units.append(e)
        return cls.build(depth, units, dates)

    # -- navigation ---------------------------------------------------------
    @property
    def n_nodes(self) -> int:
        return len(self.parent)

    @property
    def n_leaves(self) -> int:
        return len(self.leaves)

    @property
    def root(self) -> int:
        return 0

    def nodes_at(self, k: int) -> tuple[int, ...]:
        return tuple(n for n in range(self.n_nodes) if self.level[n] == k)

    def internal_nodes(self) -> tuple[int, ...]:
        return tuple(n for n in range(self.n_nodes) if self.children[n])

    def path(self, node: int) -> list[int]:
        out = [node]
        while self.parent[out[-1]] >= 0:
            out.append(self.parent[out[-1]])
        return out[::-1]

    def leaf_position(self, leaf: int) -> int:
        return self.leaf_range[leaf][0]

    def leaves_below(self, node: int) -> range:
        a, b = self.leaf_range[node]
        return range(a, b)

    def ancestor_at(self, node: int, k: int) -> int:
        while self.level[node] > k:
            node = self.parent[node]
        return node

    def date(self, node: int) -> Fraction:
        return self.dates[self.level[node]]

    def same_as(self, other: "ScenarioTree") -> bool:
        return self is other or (
            self.parent == other.parent and self.increment == other.increment and self.dates == other.dates
        )

    def node_values(self, expr: str, S: Sequence | None = None) -> tuple[Fraction, ...]:
        """Evaluate an expression in ``B``, ``QV``, ``t`` (and ``S``) at every node."""
        names = ("B", "QV", "t") + (("S",) if S is not None else ())
        e = exact(expr, names)
        out = []
        for n in range(self.n_nodes):
            vals = {"B": self.node_noise[n], "QV": self.node_qv[n], "t": self.date(n)}
            if S is not None:
                vals["S"] = S[n]
            out.append(as_fraction(e(**vals)))
        return tuple(out)


# ---------------------------------------------------------------------------
# Claims
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Claim:
    """Terminal payoff indexed by leaf position."""

    values: tuple[Fraction, ...]

    def __post_init__(self):
        object.__setattr__(self, "values", tuple(as_fraction(v) for v in self.values))

    @classmethod
    def constant(cls, tree: ScenarioTree, c) -> "Claim":
        return cls((as_fraction(c),) * tree.n_leaves)

    @classmethod
    def indicator(cls, tree: ScenarioTree, positions: Iterable[int]) -> "Claim":
        pos = set(positions)
        return cls(tuple(ONE if i in pos else ZERO for i in range(tree.n_leaves)))

    @classmethod
    def from_expr(cls, tree: ScenarioTree, expr: str, S: Sequence | None = None) -> "Claim":
        vals = tree.node_values(expr, S)
        return cls(tuple(vals[leaf] for leaf in tree.leaves))

    @classmethod
    def from_nodes(cls, tree: ScenarioTree, node_values: Sequence) -> "Claim":
        return cls(tuple(node_values[leaf] for leaf in tree.leaves))

    def __len__(self) -> int:
        return len(self.values)

    def __iter__(self) -> Iterator[Fraction]:
        return iter(self.values)

    def __getitem__(self, i: int) -> Fraction:
        return self.values[i]

    def __add__(self, other) -> "Claim":
        if isinstance(other, Claim):
            return Claim(tuple(a + b for a, b in zip(self.values, other.values)))
        c = as_fraction(other)
        return Claim(tuple(a + c for a in self.values))

    __radd__ = __add__

    def __neg__(self) -> "Claim":
        return Claim(tuple(-a for a in self.values))

    def __sub__(self, other) -> "Claim":
        return self + (-other if isinstance(other, Claim) else -as_fraction(other))

    def __rsub__(self, other) -> "Claim":
        return (-self) + other

    def __mul__(self, other) -> "Claim":
        if isinstance(other, Claim):
            return Claim(tuple(a * b for a, b in zip(self.values, other.values)))
        c = as_fraction(other)
        return Claim(tuple(a * c for a in self.values))

    __rmul__ = __mul__

    def square(self) -> "Claim":
        return self * self


def as_claim(X) -> Claim:
    return X if isinstance(X, Claim) else Claim(tuple(X))


# ---------------------------------------------------------------------------
# Priors
# ---------------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class Prior:
    """Probability measure on the leaves of a tree, stored by leaf masses.

    ``mass`` only lists charged leaves. ``control`` maps the nodes reachable
    under the prior to the volatility chosen there; ``recipe`` records how a
    mixture prior was formed as ``((weight, prior_id), ...)``.
    """

    id: str
    mass: Mapping[int, Fraction]
    control: Mapping[int, Fraction] | None = None
    recipe: tuple | None = None
    total: Fraction = ONE

    def __post_init__(self):
        clean = {int(k): as_fraction(v) for k, v in self.mass.items() if as_fraction(v) != 0}
        if any(v < 0 for v in clean.values()):
            raise ValueError(f"prior {self.id}: negative mass")
        s = sum(clean.values(), ZERO)
        if s != self.total:
            raise ValueError(f"prior {self.id}: masses sum to {s}, expected {self.total}")
        object.__setattr__(self, "mass", dict(sorted(clean.items())))

    @property
    def support(self) -> frozenset[int]:
        return frozenset(self.mass)

    def expect(self, X) -> Fraction:
        vals = X.values if isinstance(X, Claim) else X
        return sum((m * vals[i] for i, m in self.mass.items()), ZERO)

    def node_mass(self, tree: ScenarioTree, node: int) -> Fraction:
        a, b = tree.leaf_range[node]
        return sum((m for i, m in self.mass.items() if a <= i < b), ZERO)

    def charges(self, tree: ScenarioTree, node: int) -> bool:
        a, b = tree.leaf_range[node]
        return any(a <= i < b for i in self.mass)

    def kernel(self, tree: ScenarioTree, node: int) -> tuple[Fraction, ...]:
        """Conditional one-step law over ``tree.children[node]``."""
        total = self.node_mass(tree, node)
        if total == 0:
            raise ValueError(f"prior {self.id} does not charge node {node}")
        return tuple(self.node_mass(tree, c) / total for c in tree.children[node])

    def same_measure(self, other: "Prior") -> bool:
        return self.mass == other.mass

    def key(self) -> tuple:
        return tuple(self.mass.items())


@dataclass(frozen=True, eq=False)
class PriorSet:
    tree: ScenarioTree
    priors: tuple[Prior, ...]

    def __post_init__(self):
        if not self.priors:
            raise ValueError("a prior set must be nonempty")
        ids = [p.id for p in self.priors]
        if len(set(ids)) != len(ids):
            raise ValueError("prior ids must be unique")
        n = self.tree.n_leaves
        for p in self.priors:
            if any(not 0 <= i < n for i in p.mass):
                raise ValueError(f"prior {p.id} charges a leaf outside the tree")

    def __iter__(self) -> Iterator[Prior]:
        return iter(self.priors)

    def __len__(self) -> int:
        return len(self.priors)

    @property
    def ids(self) -> tuple[str, ...]:
        return tuple(p.id for p in self.priors)

    def get(self, pid: str) -> Prior:
        for p in self.priors:
            if p.id == pid:
                return p
        raise KeyError(pid)

    def subset(self, ids: Iterable[str]) -> "PriorSet":
        return PriorSet(self.tree, tuple(self.get(i) for i in ids))

    def union_support(self) -> frozenset[int]:
        out: set[int] = set()
        for p in self.priors:
            out |= p.support
        return frozenset(out)

    def constant(self, sigma) -> Prior:
        """The prior generated by the constant control ``sigma``."""
        s = as_fraction(sigma)
        for p in self.priors:
            if p.control is not None and p.control and all(v == s for v in p.control.values()):
                return p
        raise KeyError(f"no constant-control prior with sigma={s}")


def mixture(priors: Sequence[Prior], weights: Sequence, pid: str | None = None) -> Prior:
    """``sum_i w_i P_i`` with strictly positive weights summing to one."""
    w = [as_fraction(x) for x in weights]
    if len(w) != len(priors):
        raise ValueError("one weight per prior")
    if any(x <= 0 for x in w):
        raise ValueError("mixture weights must be strictly positive")
    if sum(w, ZERO) != 1:
        raise ValueError("mixture weights must sum to 1")
    mass: dict[int, Fraction] = {}
    for p, x in zip(priors, w):
        for i, m in p.mass.items():
            mass[i] = mass.get(i, ZERO) + x * m
    recipe = tuple((x, p.recipe if p.recipe else p.id) for p, x in zip(priors, w))
    name = pid or "mix(" + ",".join(f"{x}*{p.id}" for p, x in zip(priors, w)) + ")"
    return Prior(name, mass, recipe=recipe)


def recipe_priors(recipe, prior_set: PriorSet | None = None) -> list[str]:
    """Flatten a mixture recipe into the ids of its constituent priors."""
    if isinstance(recipe, str):
        return [recipe]
    out: list[str] = []
    for _, sub in recipe:
        out += recipe_priors(sub)
    return out


# ---------------------------------------------------------------------------
# Prior generation from volatility controls
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class VolatilityControl:
    values: Mapping[int, Fraction]
    band: tuple[Fraction, Fraction]

    def __post_init__(self):
        lo, hi = self.band
        if not 0 < lo <= hi:
            raise ValueError("band must satisfy 0 < sigma_low <= sigma_high")
        for v in self.values.values():
            if not lo <= v <= hi:
                raise ValueError(f"control value {v} outside band [{lo}, {hi}]")


def _unit_scale(tree: ScenarioTree, node: int) -> Fraction:
    k = tree.level[node]
    return exact_sqrt(tree.dates[k + 1] - tree.dates[k])


def _sigma_children(tree: ScenarioTree, node: int, sigma: Fraction) -> tuple[int, int]:
    d = sigma * _unit_scale(tree, node)
    up = dn = None
    for c in tree.children[node]:
        if tree.increment[c] == d:
            up = c
        elif tree.increment[c] == -d:
            dn = c
    if up is None or dn is None:
        raise ValueError(f"tree has no +-{sigma} branches at node {node}")
    return up, dn


def prior_from_control(tree: ScenarioTree, control: Mapping[int, Fraction], pid: str, branch_prob=Fraction(1, 2)) -> Prior:
    p_up = as_fraction(branch_prob)
    mass: dict[int, Fraction] = {}
    used: dict[int, Fraction] = {}

    def walk(node, w):
        if not tree.children[node]:
            mass[tree.leaf_position(node)] = w
            return
        s = as_fraction(control[node])
        used[node] = s
        up, dn = _sigma_children(tree, node, s)
        walk(up, w * p_up)
        walk(dn, w * (1 - p_up))

    walk(0, ONE)
    return Prior(pid, mass, control=used)


def _enumerate_controls(tree: ScenarioTree, menus: Mapping[int, Sequence[Fraction]] | Sequence[Fraction]) -> list[dict[int, Fraction]]:
    """All adapted controls; ``menus`` is a global grid or per-level choices."""

    def menu(node):
        if isinstance(menus, Mapping):
            return menus[tree.level[node]]
        return menus

    def rec(node) -> list[dict[int, Fraction]]:
        if not tree.children[node]:
            return [{}]
        out = []
        for s in menu(node):
            up, dn = _sigma_children(tree, node, s)
            for a in rec(up):
                for b in rec(dn):
                    d = {node: s}
                    d.update(a)
                    d.update(b)
                    out.append(d)
        return out

    return rec(0)


def generate_prior_set(tree: ScenarioTree, band: Sequence, grid: Sequence, branch_prob=Fraction(1, 2)) -> PriorSet:
    """One prior per adapted control with values in ``grid``.

    Each prior puts ``branch_prob`` on ``+sigma_node`` and the rest on
    ``-sigma_node``. Priors from distinct constant controls have disjoint
    supports; this is checked.
    """
    lo, hi = (as_fraction(b) for b in band)
    if not 0 < lo <= hi:
        raise ValueError("band must satisfy 0 < sigma_low <= sigma_high")
    g = sorted({as_fraction(s) for s in grid})
    if not g:
        raise ValueError("volatility grid is empty")
    for s in g:
        if not lo <= s <= hi:
            raise ValueError(f"grid value {s} outside band [{lo}, {hi}]")
    p = as_fraction(branch_prob)
    if not 0 < p < 1:
        raise ValueError("branch probability must lie in (0, 1)")
    for n in tree.internal_nodes():
        for s in g:
            _sigma_children(tree, n, s)
    controls = _enumerate_controls(tree, g)
    priors = tuple(prior_from_control(tree, c, f"P{i + 1}", p) for i, c in enumerate(controls))
    ps = PriorSet(tree, priors)
    if tree.depth > 0:
        consts = [pr for pr in priors if len(set(pr.control.values())) == 1]
        for a, b in itertools.combinations(consts, 2):
            assert not (a.support & b.support), "constant-control priors must be mutually singular"
    return ps


def sample_controls(tree: ScenarioTree, grid: Sequence, k: int, rng, branch_prob=Fraction(1, 2), prefix: str = "P") -> PriorSet:
    """``k`` distinct random adapted controls (for trees too large to enumerate)."""
    g = [as_fraction(s) for s in grid]
    seen: dict[tuple, Prior] = {}
    tries = 0
    while len(seen) < k and tries < 50 * k:
        tries += 1
        ctrl: dict[int, Fraction] = {}

        def walk(node):
            if not tree.children[node]:
                return
            s = g[rng.randrange(len(g))]
            ctrl[node] = s
            for c in _sigma_children(tree, node, s):
                walk(c)

        walk(0)
        pr = prior_from_control(tree, ctrl, f"{prefix}{len(seen) + 1}", branch_prob)
        seen.setdefault(pr.key(), pr)
    return PriorSet(tree, tuple(seen.values()))


# ---------------------------------------------------------------------------
# Sublinear expectation and order
# ---------------------------------------------------------------------------

class SupResult(NamedTuple):
    value: Fraction
    attained: tuple[str, ...]


def upper_expectation(X, priors: PriorSet | Iterable[Prior]) -> SupResult:
    """``max_P E^P[X]`` with every maximising prior (no tie-breaking)."""
    X = as_claim(X)
    vals = [(p.id, p.expect(X)) for p in priors]
    best = max(v for _, v in vals)
    return SupResult(best, tuple(i for i, v in vals if v == best))


class NormResult(NamedTuple):
    value: float
    radicand: Fraction


def capacity_norm(X, priors: PriorSet | Iterable[Prior]) -> NormResult:
    X = as_claim(X)
    r = upper_expectation(X.square(), priors).value
    root = exact_sqrt(r)
    return NormResult(float(root) if root is not None else math.sqrt(r), r)


def polar_leaves(prior_set: PriorSet) -> frozenset[int]:
    return frozenset(range(prior_set.tree.n_leaves)) - prior_set.union_support()


def quasi_sure_geq(X, Y, prior_set: PriorSet) -> bool:
    X, Y = as_claim(X), as_claim(Y)
    return all(X[i] >= Y[i] for i in prior_set.union_support())


def quasi_sure_eq(X, Y, prior_set: PriorSet) -> bool:
    return quasi_sure_geq(X, Y, prior_set) and quasi_sure_geq(Y, X, prior_set)


def canonical_reference_measure(prior_set: PriorSet, weights: Sequence | None = None) -> Prior:
    """``sum_n a_n P_n``; its null leaves coincide with the polar leaves."""
    if weights is None:
        weights = [Fraction(1, len(prior_set))] * len(prior_set)
    w = [as_fraction(x) for x in weights]
    if len(w) != len(prior_set) or any(x <= 0 for x in w) or sum(w, ZERO) != 1:
        raise ValueError("need one strictly positive weight per prior, summing to 1")
    ref = mixture(list(prior_set.priors), w, pid="reference")
    null = frozenset(range(prior_set.tree.n_leaves)) - ref.support
    assert null == polar_leaves(prior_set)
    return ref


def redundant_priors(claims: Sequence, prior_set: PriorSet) -> tuple[str, ...]:
    """Priors attaining the capacity norm of no claim in ``claims``.

    Dropping them leaves ``capacity_norm`` unchanged on the list, which is
    the finite form of the countable reduction.
    """
    attaining: set[str] = set()
    for X in claims:
        attaining |= set(upper_expectation(as_claim(X).square(), prior_set).attained)
    return tuple(p.id for p in prior_set if p.id not in attaining)


def mixture_sandwich(X, prior_set: PriorSet, weights: Sequence) -> bool:
    """Check ``E^P[X] <= sup`` for each member and for the given mixture."""
    sup = upper_expectation(X, prior_set).value
    mix = mixture(list(prior_set.priors), weights)
    return all(p.expect(X) <= sup for p in prior_set) and mix.expect(X) <= sup


# ---------------------------------------------------------------------------
# JSON ingestion
# ---------------------------------------------------------------------------

def load_prior_spec(spec: Mapping | str | Path) -> PriorSet:
    """Build a tree and its grid-generated prior set from a JSON document.

    Fields: ``depth``, ``dates`` (optional), ``sigma_grid``, ``sigma_band``
    (optional, defaults to the grid hull), ``branch_prob`` (optional),
    ``extra_branches`` (optional increments nobody charges).
    """
    if not isinstance(spec, Mapping):
        spec = json.loads(Path(spec).read_text())
    grid = [as_fraction(s) for s in spec["sigma_grid"]]
    band = spec.get("sigma_band") or [min(grid), max(grid)]
    tree = ScenarioTree.for_grid(int(spec["depth"]), grid, spec.get("dates"), spec.get("extra_branches", ()))
    return generate_prior_set(tree, band, grid, as_fraction(spec.get("branch_prob", Fraction(1, 2))))


def parse_claim(tree: ScenarioTree, spec, S: Sequence | None = None) -> Claim:
    """A claim from an expression string or a leaf-indexed array."""
    if isinstance(spec, str):
        return Claim.from_expr(tree, spec, S)
    vals = [as_fraction(v) for v in spec]
    if len(vals) != tree.n_leaves:
        raise ValueError(f"claim has {len(vals)} values, tree has {tree.n_leaves} leaves")
    return Claim(tuple(vals))
