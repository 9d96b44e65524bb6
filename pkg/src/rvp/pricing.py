"""Coherent sublinear price functionals built from prior-wise linear prices.

A functional is a finite list of components ``(Q, Z)`` and evaluates as
``max_c E^Q[Z X]``. Consolidation expressions combine per-prior functionals
by weighted mixing and pointwise maxima; extension finds densities that
reprice each marketed basis exactly by linear programming.
"""

from __future__ import annotations

import itertools
import json
from dataclasses import dataclass
from fractions import Fraction
from pathlib import Path
from typing import Mapping, Sequence, Union

from . import lp
from .lp import as_fraction
from .uncertainty import (
    ONE,
    ZERO,
    Claim,
    Prior,
    PriorSet,
    ScenarioTree,
    as_claim,
    load_prior_spec,
    parse_claim,
)


class PricingError(ValueError):
    pass


class InfeasibleExtension(PricingError):
    """No admissible density reprices the marketed basis of ``prior_id``."""

    def __init__(self, prior_id: str, certificate: Sequence[Fraction], strict: bool, epsilon: Fraction, system=None):
        self.prior_id = prior_id
        self.certificate = list(certificate)
        self.strict = strict
        self.epsilon = epsilon
        self.system = system
        kind = f"Z >= {epsilon}" if strict else "Z >= 0"
        super().__init__(f"no density with {kind} reprices the marketed basis of {prior_id}")

    def verify(self) -> bool:
        """Re-check the Farkas ray against the density system it refutes."""
        A, b, _ = self.system
        return lp.check_farkas(A, b, self.certificate)


# ---------------------------------------------------------------------------
# Linear price systems
# ---------------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class LinearPriceSystem:
    """Marketed basis under one prior and the linear price of each basis claim."""

    prior: Prior
    basis: tuple[Claim, ...]
    prices: tuple[Fraction, ...]

    def __post_init__(self):
        object.__setattr__(self, "basis", tuple(as_claim(m) for m in self.basis))
        object.__setattr__(self, "prices", tuple(as_fraction(p) for p in self.prices))
        if len(self.basis) != len(self.prices):
            raise PricingError(f"{self.prior.id}: one price per basis claim")

    def support(self) -> list[int]:
        return sorted(self.prior.support)

    def restricted(self) -> list[list[Fraction]]:
        sup = self.support()
        return [[m[i] for i in sup] for m in self.basis]

    def is_independent(self) -> bool:
        return lp.rank(self.restricted()) == len(self.basis)

    def price_of(self, X) -> Fraction | None:
        """``pi_P(X)`` if ``X`` is marketed ``P``-a.s. and the price is well defined."""
        X = as_claim(X)
        sup = self.support()
        coef = lp.in_row_span(self.restricted(), [X[i] for i in sup])
        if coef is None:
            return None
        return sum((c * p for c, p in zip(coef, self.prices)), ZERO)

    def density_system(self) -> tuple[list[list[Fraction]], list[Fraction], list[int]]:
        """Rows ``E^P[Z m] = pi(m)`` in the unknowns ``Z`` on ``supp P``."""
        sup = self.support()
        A = [[self.prior.mass[i] * m[i] for i in sup] for m in self.basis]
        return A, list(self.prices), sup


# ---------------------------------------------------------------------------
# Consolidation expressions
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Leaf:
    prior_id: str


@dataclass(frozen=True)
class Mix:
    weights: tuple[Fraction, ...]
    children: tuple["Gamma", ...]

    def __post_init__(self):
        w = tuple(as_fraction(x) for x in self.weights)
        object.__setattr__(self, "weights", w)
        if len(w) != len(self.children) or not w:
            raise PricingError("MIX needs one weight per child")
        if any(x <= 0 for x in w):
            raise PricingError("MIX weights must be strictly positive")
        if sum(w, ZERO) > 1:
            raise PricingError("MIX weights must sum to at most 1")


@dataclass(frozen=True)
class Sup:
    children: tuple["Gamma", ...]

    def __post_init__(self):
        if not self.children:
            raise PricingError("SUP needs at least one child")


Gamma = Union[Leaf, Mix, Sup]


def relevant_priors(gamma: Gamma) -> tuple[str, ...]:
    """Priors the expression does not ignore, in first-appearance order."""
    out: list[str] = []

    def rec(g):
        if isinstance(g, Leaf):
            if g.prior_id not in out:
                out.append(g.prior_id)
        else:
            for c in g.children:
                rec(c)

    rec(gamma)
    return tuple(out)


def parse_gamma(spec) -> Gamma:
    """``"P1"`` | ``{"sup": [...]}`` | ``{"mix": {"weights": [...], "of": [...]}}``;
    ``"inf"``/``"wedge"`` are accepted as aliases of ``sup``."""
    if isinstance(spec, (Leaf, Mix, Sup)):
        return spec
    if isinstance(spec, str):
        return Leaf(spec)
    if isinstance(spec, Mapping) and len(spec) == 1:
        (k, v), = spec.items()
        if k in ("sup", "wedge", "inf"):
            return Sup(tuple(parse_gamma(c) for c in v))
        if k == "mix":
            return Mix(tuple(as_fraction(w) for w in v["weights"]), tuple(parse_gamma(c) for c in v["of"]))
    raise PricingError(f"cannot parse consolidation {spec!r}")


def gamma_to_json(g: Gamma):
    if isinstance(g, Leaf):
        return g.prior_id
    if isinstance(g, Sup):
        return {"sup": [gamma_to_json(c) for c in g.children]}
    return {"mix": {"weights": [str(w) for w in g.weights], "of": [gamma_to_json(c) for c in g.children]}}


def sup_of_all(prior_set: PriorSet) -> Sup:
    return Sup(tuple(Leaf(p.id) for p in prior_set))


# ---------------------------------------------------------------------------
# Functionals
# ---------------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class Component:
    """A measure ``Q`` (a member or a normalised mixture) and a density ``Z``."""

    prior: Prior
    density: tuple[Fraction, ...]
    label: object

    def __post_init__(self):
        z = tuple(as_fraction(v) for v in self.density)
        object.__setattr__(self, "density", z)
        if any(z[i] < 0 for i in self.prior.mass):
            raise PricingError(f"component {self.label}: density negative on the support")

    def expect(self, X) -> Fraction:
        X = as_claim(X)
        return sum((m * self.density[i] * X[i] for i, m in self.prior.mass.items()), ZERO)

    def total_mass(self) -> Fraction:
        return sum((m * self.density[i] for i, m in self.prior.mass.items()), ZERO)

    def measure(self) -> dict[int, Fraction]:
        """Leaf masses of ``Z . Q``."""
        return {i: m * self.density[i] for i, m in self.prior.mass.items() if m * self.density[i] != 0}

    def l2_norm_sq(self) -> Fraction:
        return sum((m * self.density[i] ** 2 for i, m in self.prior.mass.items()), ZERO)

    def to_json(self) -> dict:
        return {"prior": _label_json(self.label), "density": [str(v) for v in self.density]}


def _label_json(label):
    if isinstance(label, str):
        return label
    return {"mix": [[str(w), _label_json(sub)] for w, sub in label]}


class EvalResult(tuple):
    """``(value, attaining component indices)``."""

    __slots__ = ()

    def __new__(cls, value, attained):
        return super().__new__(cls, (value, attained))

    @property
    def value(self) -> Fraction:
        return self[0]

    @property
    def attained(self) -> tuple[int, ...]:
        return self[1]


@dataclass(frozen=True, eq=False)
class PriceFunctional:
    tree: ScenarioTree
    components: tuple[Component, ...]
    provenance: Gamma | None = None

    def __post_init__(self):
        if not self.components:
            raise PricingError("a price functional needs at least one component")
        n = self.tree.n_leaves
        if any(len(c.density) != n for c in self.components):
            raise PricingError("densities must be indexed by the leaves of the tree")

    def evaluate(self, X) -> EvalResult:
        vals = [c.expect(X) for c in self.components]
        best = max(vals)
        return EvalResult(best, tuple(i for i, v in enumerate(vals) if v == best))

    def __call__(self, X) -> Fraction:
        return self.evaluate(X).value

    def preference(self, x, X) -> Fraction:
        """Canonical supporting utility ``x - Psi(-X)`` of a bundle ``(x, X)``."""
        return as_fraction(x) - self(-as_claim(X))

    def lipschitz_constant(self) -> float:
        """``max_c ||Z_c||_{L2(Q_c)}``, bounding ``|Psi(X)-Psi(Y)| / c2(X-Y)``."""
        return max(float(c.l2_norm_sq()) ** 0.5 for c in self.components)

    def to_json(self) -> dict:
        out = {"components": [c.to_json() for c in self.components]}
        if self.provenance is not None:
            out["gamma"] = gamma_to_json(self.provenance)
        return out


def evaluate(psi: PriceFunctional, X) -> EvalResult:
    return psi.evaluate(X)


def linear_functional(prior: Prior, tree: ScenarioTree, density: Sequence | None = None) -> PriceFunctional:
    z = tuple(density) if density is not None else (ONE,) * tree.n_leaves
    return PriceFunctional(tree, (Component(prior, z, prior.id),), Leaf(prior.id))


def upper_expectation_functional(prior_set: PriorSet) -> PriceFunctional:
    one = (ONE,) * prior_set.tree.n_leaves
    return PriceFunctional(prior_set.tree, tuple(Component(p, one, p.id) for p in prior_set), sup_of_all(prior_set))


# ---------------------------------------------------------------------------
# Consolidation
# ---------------------------------------------------------------------------

def _mix_components(weights: Sequence[Fraction], parts: Sequence[Component]) -> Component:
    """Component of ``sum_i w_i E^{P_i}[Z_i .]`` as a single ``(Q, Z)``.

    ``Q`` is the normalised mixture of the ``P_i``; the density is the
    Radon-Nikodym combination ``sum_i w_i P_i Z_i / Q`` and absorbs any
    deficit of the weights below one.
    """
    raw: dict[int, Fraction] = {}
    weighted: dict[int, Fraction] = {}
    for w, c in zip(weights, parts):
        for i, m in c.prior.mass.items():
            raw[i] = raw.get(i, ZERO) + w * m
            weighted[i] = weighted.get(i, ZERO) + w * m * c.density[i]
    total = sum(raw.values(), ZERO)
    mass = {i: m / total for i, m in raw.items()}
    n = len(parts[0].density)
    z = [ZERO] * n
    for i, m in mass.items():
        z[i] = weighted[i] / m
    label = tuple((w, c.label) for w, c in zip(weights, parts))
    name = "mix(" + ",".join(f"{w}*{_label_name(c.label)}" for w, c in zip(weights, parts)) + ")"
    return Component(Prior(name, mass, recipe=label), tuple(z), label)


def _label_name(label) -> str:
    if isinstance(label, str):
        return label
    return "mix(" + ",".join(f"{w}*{_label_name(s)}" for w, s in label) + ")"


def consolidate(gamma: Gamma, systems: Mapping[str, tuple[Prior, Sequence]] | Mapping[str, PriceFunctional], tree: ScenarioTree) -> PriceFunctional:
    """Apply a consolidation expression to per-prior linear functionals.

    ``systems[pid]`` is either ``(P, Z)`` or a one-component functional.
    MIX over children with several components expands to the product of
    their component lists, matching the recursive evaluation exactly.
    """
    base: dict[str, Component] = {}
    for pid, s in systems.items():
        if isinstance(s, PriceFunctional):
            if len(s.components) != 1:
                raise PricingError(f"{pid}: per-prior input must be linear")
            base[pid] = s.components[0]
        else:
            P, Z = s
            if len(Z) != tree.n_leaves:
                raise PricingError(f"{pid}: density does not match the tree")
            base[pid] = Component(P, tuple(Z), P.id)

    def rec(g) -> list[Component]:
        if isinstance(g, Leaf):
            if g.prior_id not in base:
                raise PricingError(f"no price system for prior {g.prior_id}")
            return [base[g.prior_id]]
        if isinstance(g, Sup):
            out: list[Component] = []
            for c in g.children:
                out += rec(c)
            return out
        parts = [rec(c) for c in g.children]
        return [_mix_components(g.weights, combo) for combo in itertools.product(*parts)]

    return PriceFunctional(tree, tuple(rec(gamma)), gamma)


def evaluate_gamma(gamma: Gamma, base: Mapping[str, Component], X) -> Fraction:
    """Recursive evaluation of the expression on ``X`` (the reference semantics)."""
    if isinstance(gamma, Leaf):
        return base[gamma.prior_id].expect(X)
    vals = [evaluate_gamma(c, base, X) for c in gamma.children]
    if isinstance(gamma, Sup):
        return max(vals)
    return sum((w * v for w, v in zip(gamma.weights, vals)), ZERO)


def aggregate_prices(gamma: Gamma, prices: Mapping[str, Fraction]) -> Fraction | None:
    """Consolidated price ``Gamma(pi_P(X))`` from per-prior prices (None if any is missing)."""
    if isinstance(gamma, Leaf):
        return prices.get(gamma.prior_id)
    vals = [aggregate_prices(c, prices) for c in gamma.children]
    if any(v is None for v in vals):
        return None
    if isinstance(gamma, Sup):
        return max(vals)
    return sum((w * v for w, v in zip(gamma.weights, vals)), ZERO)


# ---------------------------------------------------------------------------
# Extension
# ---------------------------------------------------------------------------

def strict_epsilon(prior_set: PriorSet | Sequence[Prior]) -> Fraction:
    """Strictness margin: a millionth of the smallest positive prior mass."""
    masses = [m for p in prior_set for m in p.mass.values()]
    return min(masses) / 10**6


@dataclass
class DensitySolution:
    prior_id: str
    density: tuple[Fraction, ...]
    margin: Fraction  # min_{supp P} Z
    lp: lp.LPResult


def solve_density(system: LinearPriceSystem, n_leaves: int, strict: bool, epsilon: Fraction) -> DensitySolution:
    """Max-min density: maximise ``t`` s.t. ``E^P[Z m] = pi(m)``, ``Z >= t``, ``t <= 1``.

    The verdict is ``t* >= epsilon`` (strict) or feasibility (non-strict).
    On failure a Farkas ray for ``{A Z = b, Z >= lower}`` is attached.
    """
    A, b, sup = system.density_system()
    k = len(sup)
    c = [ZERO] * k + [ONE]
    A_ub = []
    for j in range(k):
        row = [ZERO] * (k + 1)
        row[j] = -ONE
        row[k] = ONE
        A_ub.append(row)
    A_ub.append([ZERO] * k + [ONE])
    b_ub = [ZERO] * k + [ONE]
    A_eq = [row + [ZERO] for row in A]
    res = lp.solve_lp(c, A_ub, b_ub, A_eq, b, free=[k])
    lower = epsilon if strict else ZERO
    if res.status != "optimal" or (strict and res.objective < epsilon):
        cert = lp.feasibility(A, b, lower)
        if cert.status != "infeasible":  # pragma: no cover - both routes must agree
            raise lp.LPError(f"{system.prior.id}: density LP routes disagree")
        raise InfeasibleExtension(system.prior.id, cert.farkas, strict, epsilon, (A, cert.meta["shifted_rhs"], sup))
    z = [ZERO] * n_leaves
    for j, i in enumerate(sup):
        z[i] = res.x[j]
    return DensitySolution(system.prior.id, tuple(z), res.objective, res)


@dataclass
class Extension:
    functional: PriceFunctional
    densities: dict[str, DensitySolution]
    epsilon: Fraction
    strict: bool

    @property
    def witness(self) -> PriceFunctional:
        return self.functional


def extend(
    systems: Mapping[str, LinearPriceSystem],
    gamma: Gamma,
    strict: bool = False,
    prior_set: PriorSet | None = None,
    epsilon: Fraction | None = None,
) -> Extension:
    """Extend prior-wise linear prices to a coherent functional and consolidate.

    Raises :class:`InfeasibleExtension` (with a certificate) when some
    relevant prior admits no admissible density.
    """
    ids = relevant_priors(gamma)
    missing = [i for i in ids if i not in systems]
    if missing:
        raise PricingError(f"no price system for priors {missing}")
    if prior_set is None:
        raise PricingError("extend needs the prior set for its tree")
    tree = prior_set.tree
    if epsilon is None:
        epsilon = strict_epsilon(prior_set)
    dens = {}
    for pid in ids:
        dens[pid] = solve_density(systems[pid], tree.n_leaves, strict, epsilon)
    psi = consolidate(gamma, {pid: (systems[pid].prior, d.density) for pid, d in dens.items()}, tree)
    for pid in ids:
        s = systems[pid]
        for m, p in zip(s.basis, s.prices):
            got = Component(s.prior, dens[pid].density, pid).expect(m)
            assert got == p, f"{pid}: density misprices a basis claim"
    return Extension(psi, dens, epsilon, strict)


# ---------------------------------------------------------------------------
# Positivity and viability
# ---------------------------------------------------------------------------

@dataclass
class PositivityReport:
    full: bool
    relative: bool
    failing_full: tuple[int, ...]
    failing_relative: tuple[int, ...]


def positivity_report(psi: PriceFunctional, prior_set: PriorSet, relevant: Sequence[str] | None = None) -> PositivityReport:
    """Evaluate ``Psi`` on every charged leaf indicator, against all priors and against ``relevant``."""
    tree = prior_set.tree
    if relevant is None and psi.provenance is not None:
        relevant = relevant_priors(psi.provenance)
    rel_support: set[int] = set()
    for pid in relevant or prior_set.ids:
        rel_support |= prior_set.get(pid).support
    fail = []
    for i in sorted(prior_set.union_support()):
        if psi(Claim.indicator(tree, [i])) <= 0:
            fail.append(i)
    fail_rel = tuple(i for i in fail if i in rel_support)
    return PositivityReport(not fail, not fail_rel, tuple(fail), fail_rel)


def is_strictly_positive(psi: PriceFunctional, prior_set: PriorSet) -> bool:
    return positivity_report(psi, prior_set).full


@dataclass
class Viability:
    viable: bool
    witness: PriceFunctional | None
    certificate: InfeasibleExtension | None
    positivity: PositivityReport | None
    extension: Extension | None = None

    def preference(self, x, X) -> Fraction:
        if self.witness is None:
            raise PricingError("no supporting preference for a non-viable system")
        return self.witness.preference(x, X)


def is_viable(systems: Mapping[str, LinearPriceSystem], gamma: Gamma, prior_set: PriorSet, relative: bool = False) -> Viability:
    """Strict extension exists and the result is strictly positive.

    Positivity is judged against the whole prior set unless ``relative``,
    in which case only leaves charged by the priors in ``gamma`` count.
    """
    try:
        ext = extend(systems, gamma, strict=True, prior_set=prior_set)
    except InfeasibleExtension as exc:
        return Viability(False, None, exc, None)
    rep = positivity_report(ext.functional, prior_set)
    ok = rep.relative if relative else rep.full
    return Viability(ok, ext.functional if ok else None, None, rep, ext)


# ---------------------------------------------------------------------------
# Joint marketed space
# ---------------------------------------------------------------------------

@dataclass
class MarketedUnion:
    """Span of the union of the marketed bases, restricted to non-polar leaves."""

    support: tuple[int, ...]
    members: tuple[tuple[str, int], ...]  # (prior id, basis index) of each joint basis claim
    basis: tuple[Claim, ...]

    def contains(self, X) -> bool:
        X = as_claim(X)
        rows = [[m[i] for i in self.support] for m in self.basis]
        return lp.in_row_span(rows, [X[i] for i in self.support]) is not None


def marketed_union(systems: Mapping[str, LinearPriceSystem], gamma: Gamma, prior_set: PriorSet) -> MarketedUnion:
    ids = relevant_priors(gamma)
    support = tuple(sorted(prior_set.union_support()))
    tags, claims = [], []
    for pid in ids:
        for k, m in enumerate(systems[pid].basis):
            tags.append((pid, k))
            claims.append(m)
    keep = lp.independent_rows([[m[i] for i in support] for m in claims]) if claims else []
    return MarketedUnion(support, tuple(tags[k] for k in keep), tuple(claims[k] for k in keep))


def consolidated_price(X, systems: Mapping[str, LinearPriceSystem], gamma: Gamma) -> Fraction | None:
    """``Gamma(pi_P(X))`` when ``X`` is marketed under every relevant prior."""
    prices = {}
    for pid in relevant_priors(gamma):
        v = systems[pid].price_of(X)
        if v is not None:
            prices[pid] = v
    return aggregate_prices(gamma, prices)


@dataclass
class RestrictionReport:
    checked: int
    skipped: int
    mismatches: list

    @property
    def ok(self) -> bool:
        return not self.mismatches


def restriction_report(psi: PriceFunctional, systems: Mapping[str, LinearPriceSystem], gamma: Gamma, prior_set: PriorSet) -> RestrictionReport:
    """Compare ``Psi`` with the consolidated price on the joint marketed basis.

    Also checks each relevant prior's own basis: the component of that
    prior reprices it, so ``Psi(m) >= pi_P(m)`` whenever ``P`` enters only
    through maxima.
    """
    mu = marketed_union(systems, gamma, prior_set)
    checked = skipped = 0
    bad = []
    for X in mu.basis:
        target = consolidated_price(X, systems, gamma)
        if target is None:
            skipped += 1
            continue
        checked += 1
        if psi(X) != target:
            bad.append((X, psi(X), target))
    return RestrictionReport(checked, skipped, bad)


# ---------------------------------------------------------------------------
# JSON ingestion
# ---------------------------------------------------------------------------

@dataclass
class PriceSpec:
    prior_set: PriorSet
    systems: dict[str, LinearPriceSystem]
    gamma: Gamma


def load_price_spec(spec: Mapping | str | Path, prior_set: PriorSet | None = None) -> PriceSpec:
    """``{"priors": {...}, "systems": {pid: {"marketed_basis": [...], "prices": [...]}}, "gamma": ...}``.

    Priors without an explicit system get the constants-only system at price one.
    """
    if not isinstance(spec, Mapping):
        spec = json.loads(Path(spec).read_text())
    ps = prior_set or load_prior_spec(spec["priors"])
    tree = ps.tree
    systems = {}
    raw = spec.get("systems", {})
    for p in ps:
        entry = raw.get(p.id, {"marketed_basis": ["1"], "prices": [1]})
        basis = tuple(parse_claim(tree, m) for m in entry["marketed_basis"])
        systems[p.id] = LinearPriceSystem(p, basis, tuple(as_fraction(v) for v in entry["prices"]))
    unknown = set(raw) - set(ps.ids)
    if unknown:
        raise PricingError(f"systems for unknown priors {sorted(unknown)}")
    gamma = parse_gamma(spec["gamma"]) if "gamma" in spec else sup_of_all(ps)
    for pid in relevant_priors(gamma):
        if pid not in systems:
            raise PricingError(f"consolidation refers to unknown prior {pid}")
    return PriceSpec(ps, systems, gamma)
