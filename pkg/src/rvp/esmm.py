"""Equivalent symmetric martingale measure sets.

A member is a base measure ``P`` (a prior or a normalised mixture) with a
density ``Z > 0`` on ``supp P`` and ``E^P[Z] = 1``. A set qualifies when the
risky asset is a symmetric martingale under the upper expectation of the
measures ``Z P``. Sets and strictly positive extensions are converted both
ways; the finite-scale consequences (viability, completeness, absence of
arbitrage) are checked constructively.
"""

from __future__ import annotations

import itertools
import json
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Mapping, Sequence

from . import lp
from .lp import as_fraction
from .market import (
    Market,
    _charged_nodes,
    _priors,
    find_arbitrage,
    is_complete,
    marketed_generators,
)
from .pricing import (
    Component,
    Gamma,
    LinearPriceSystem,
    PriceFunctional,
    _label_json,
    consolidate,
    is_viable,
    positivity_report,
    relevant_priors,
    Sup,
    Leaf,
)
from .uncertainty import ONE, ZERO, Claim, Prior, PriorSet, ScenarioTree, upper_expectation


class EsMMError(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class EsMMMember:
    base: Prior
    density: tuple[Fraction, ...]
    label: object

    def __post_init__(self):
        object.__setattr__(self, "density", tuple(as_fraction(v) for v in self.density))

    def measure(self) -> Prior:
        """``Q = Z P`` as a measure on the leaves."""
        name = self.base.id if isinstance(self.label, str) else "Q:" + self.base.id
        return Prior(name, {i: m * self.density[i] for i, m in self.base.mass.items()})

    def reciprocal(self) -> dict[int, Fraction]:
        """``dP/dQ`` on the common support."""
        return {i: 1 / self.density[i] for i in self.base.mass}


@dataclass(frozen=True, eq=False)
class EsMMSet:
    tree: ScenarioTree
    members: tuple[EsMMMember, ...]

    def measures(self) -> list[Prior]:
        return [mm.measure() for mm in self.members]

    def to_json(self) -> dict:
        return {
            "members": [
                {"prior": _label_json(mm.label), "density": [str(v) for v in mm.density]} for mm in self.members
            ]
        }

    def dumps(self) -> str:
        return json.dumps(self.to_json(), sort_keys=True)


# ---------------------------------------------------------------------------
# Verification
# ---------------------------------------------------------------------------

@dataclass
class EsMMReport:
    ok: bool
    equivalence: bool
    normalised: bool
    reciprocal_l2: list[Fraction]
    martingale: bool
    failures: list[dict] = field(default_factory=list)


def _martingale_failures(S: Sequence[Fraction], m: Market, measures: Sequence[Prior]) -> list[dict]:
    """Nodes where some member's conditional mean of the next rebalanced ``S`` differs from ``S``."""
    t = m.tree
    fails = []
    for n in m.trading_nodes():
        end = m.block_end(t.level[n])
        a, b = t.leaf_range[n]
        vals = []
        for q in measures:
            tot = q.node_mass(t, n)
            if tot == 0:
                continue
            num = sum((w * S[t.ancestor_at(t.leaves[i], end)] for i, w in q.mass.items() if a <= i < b), ZERO)
            vals.append((q.id, num / tot))
        if vals:
            lo = min(v for _, v in vals)
            hi = max(v for _, v in vals)
            if lo != S[n] or hi != S[n]:
                fails.append({"node": n, "S": S[n], "lower": lo, "upper": hi, "kernels": vals})
    return fails


def verify_esmm(Q: EsMMSet, m: Market) -> EsMMReport:
    """Equivalence, normalisation, finite reciprocal, and the symmetric martingale property of ``S``."""
    if not Q.tree.same_as(m.tree):
        raise EsMMError("EsMM set lives on a different tree")
    equiv = all(mm.density[i] > 0 for mm in Q.members for i in mm.base.mass)
    norm = all(sum((w * mm.density[i] for i, w in mm.base.mass.items()), ZERO) == 1 for mm in Q.members)
    recip = []
    if equiv:
        for mm in Q.members:
            # E^Q[(dP/dQ)^2] = E^P[1/Z]
            recip.append(sum((w / mm.density[i] for i, w in mm.base.mass.items()), ZERO))
    fails = _martingale_failures(m.S, m, Q.measures()) if equiv and norm else []
    mart = equiv and norm and not fails
    return EsMMReport(equiv and norm and mart, equiv, norm, recip, mart, fails)


# ---------------------------------------------------------------------------
# Bijection with strictly positive extensions
# ---------------------------------------------------------------------------

def esmm_from_extension(psi: PriceFunctional, m: Market, check_arbitrage: bool = True) -> EsMMSet:
    """Read an EsMM set off the components of a normalised strictly positive extension."""
    ps = PriorSet(m.tree, tuple(_component_priors(psi, m)))
    rep = positivity_report(psi, ps)
    if not rep.relative:
        raise EsMMError(f"functional is not strictly positive on leaves {list(rep.failing_relative)}")
    for c in psi.components:
        if c.total_mass() != 1:
            raise EsMMError(f"component {c.label} does not price the unit bond at 1")
    if check_arbitrage:
        scan = find_arbitrage(m, ps)
        if scan.found:
            raise EsMMError(f"market admits an arbitrage under prior {scan.profit_prior}")
    Q = EsMMSet(m.tree, tuple(EsMMMember(c.prior, c.density, c.label) for c in psi.components))
    rep2 = verify_esmm(Q, m)
    if not rep2.ok:
        raise EsMMError(f"constructed set fails verification: {rep2.failures[:3]}")
    return Q


def _component_priors(psi: PriceFunctional, m: Market) -> list[Prior]:
    ids = relevant_priors(psi.provenance) if psi.provenance is not None else []
    out = []
    for pid in ids:
        try:
            out.append(m.priors.get(pid))
        except KeyError:
            pass
    if not out:
        out = [c.prior for c in psi.components]
    return out


def extension_from_esmm(Q: EsMMSet, m: Market | None = None) -> PriceFunctional:
    if m is not None:
        rep = verify_esmm(Q, m)
        if not rep.ok:
            raise EsMMError(f"EsMM verification failed: {rep.failures[:3]}")
    comps = tuple(Component(mm.base, mm.density, mm.label) for mm in Q.members)
    prov = Sup(tuple(Leaf(mm.base.id) for mm in Q.members if mm.base.recipe is None)) if any(
        mm.base.recipe is None for mm in Q.members
    ) else None
    return PriceFunctional(Q.tree, comps, prov)


def same_components(a: PriceFunctional, b: PriceFunctional) -> bool:
    def key(c: Component):
        return (tuple(c.prior.mass.items()), tuple(c.density[i] for i in c.prior.mass))

    return sorted(map(key, a.components)) == sorted(map(key, b.components))


# ---------------------------------------------------------------------------
# Density polytopes
# ---------------------------------------------------------------------------

def raw_system(m: Market, P: Prior) -> LinearPriceSystem:
    """Spanning strategy payoffs and costs under ``P``, without the no-arbitrage precondition."""
    claims, prices = marketed_generators(m)
    return LinearPriceSystem(P, tuple(claims), tuple(prices))


def density_vertices(system: LinearPriceSystem, n_leaves: int, limit: int = 200_000) -> list[tuple[Fraction, ...]]:
    """Vertices of ``{Z >= 0 on supp P : E^P[Z m] = pi(m)}`` by basic-solution enumeration."""
    A, b, sup = system.density_system()
    if A and lp.rank([row + [bi] for row, bi in zip(A, b)]) != lp.rank(A):
        return []
    keep = lp.independent_rows(A) if A else []
    A = [A[i] for i in keep]
    b = [b[i] for i in keep]
    r = len(A)
    k = len(sup)
    verts: list[tuple[Fraction, ...]] = []
    seen = set()
    count = 0
    for cols in itertools.combinations(range(k), r):
        count += 1
        if count > limit:
            raise EsMMError("too many bases to enumerate density vertices")
        sq = [[row[j] for j in cols] for row in A]
        sol = lp.solve_square(sq, b) if r else []
        if sol is None or any(v < 0 for v in sol):
            continue
        z = [ZERO] * n_leaves
        for j, v in zip(cols, sol):
            z[sup[j]] = v
        z = tuple(z)
        if z not in seen:
            seen.add(z)
            verts.append(z)
    return verts


def interior_density(verts: Sequence[tuple[Fraction, ...]], support: Sequence[int]) -> tuple[Fraction, ...] | None:
    """Barycentre of the vertices, returned only if it is strictly positive on the support."""
    if not verts:
        return None
    n = len(verts[0])
    z = tuple(sum((v[i] for v in verts), ZERO) / len(verts) for i in range(n))
    if all(z[i] > 0 for i in support):
        return z
    return None


# ---------------------------------------------------------------------------
# Consequences battery
# ---------------------------------------------------------------------------

@dataclass
class CorollaryReport:
    viable: bool
    esmm_found: bool
    item1_consistent: bool
    completeness: dict[str, dict]
    item2_consistent: bool
    arbitrage: bool
    item3_consistent: bool
    positive_value_strategy: bool
    item4_consistent: bool
    esmm: EsMMSet | None = None
    certificate: object = None

    @property
    def ok(self) -> bool:
        return self.item1_consistent and self.item2_consistent and self.item3_consistent and self.item4_consistent


def _positive_value_lp(m: Market, R: Sequence[Prior]) -> bool:
    """Zero-cost strategy, nonnegative q.s., positive upper expectation (one LP on the averaged gain)."""
    t = m.tree
    support = sorted(set().union(*(p.support for p in R)))
    charged = _charged_nodes(t, R)
    nodes = [n for n in m.trading_nodes() if n in charged]
    g = [m.gains(n) for n in nodes]
    A_ub, b_ub = [], []
    for i in support:
        A_ub.append([-gj[i] for gj in g])
        b_ub.append(ZERO)
        A_ub.append([gj[i] for gj in g])
        b_ub.append(ONE)
    c = [sum((p.expect(gj) for p in R), ZERO) for gj in g]
    if not g:
        return False
    res = lp.solve_lp(c, A_ub, b_ub, free=list(range(len(g))))
    if res.objective is None or res.objective <= 0:
        return False
    payoff = Claim(tuple(sum((h * gj[i] for h, gj in zip(res.x, g)), ZERO) for i in range(t.n_leaves)))
    return upper_expectation(payoff, R).value > 0


def search_esmm(m: Market, R: Sequence[Prior], gamma: Gamma) -> tuple[EsMMSet | None, dict]:
    """EsMM set from barycentric densities of each relevant prior's polytope, paired through ``gamma``."""
    t = m.tree
    dens = {}
    info = {}
    for P in R:
        sysP = raw_system(m, P)
        verts = density_vertices(sysP, t.n_leaves)
        z = interior_density(verts, sorted(P.support))
        info[P.id] = {"vertices": len(verts), "interior": z is not None}
        dens[P.id] = (P, z)
    if any(z is None for _, z in dens.values()):
        return None, info
    psi = consolidate(gamma, dens, t)
    Q = EsMMSet(t, tuple(EsMMMember(c.prior, c.density, c.label) for c in psi.components))
    rep = verify_esmm(Q, m)
    return (Q if rep.ok else None), info


def check_corollary(m: Market, R=None, gamma: Gamma | None = None) -> CorollaryReport:
    R = _priors(R if R is not None else m.priors)
    gamma = gamma or Sup(tuple(Leaf(p.id) for p in R))
    ps = PriorSet(m.tree, tuple(R))
    systems = {P.id: raw_system(m, P) for P in R}
    via = is_viable(systems, gamma, ps)
    Q, info = search_esmm(m, R, gamma)
    item1 = via.viable == (Q is not None)

    comp: dict[str, dict] = {}
    item2 = True
    for P in R:
        complete = is_complete(systems[P.id])
        nv = info[P.id]["vertices"]
        entry = {"complete": complete, "vertices": nv, "rank": lp.rank(systems[P.id].restricted()), "support": len(P.support)}
        if nv and info[P.id]["interior"]:
            entry["consistent"] = complete == (nv == 1)
            item2 = item2 and entry["consistent"]
        comp[P.id] = entry

    scan = find_arbitrage(m, R)
    item3 = not (Q is not None and scan.found)
    pos = _positive_value_lp(m, R)
    item4 = (not pos) or scan.found
    cert = via.certificate if not via.viable else None
    return CorollaryReport(via.viable, Q is not None, item1, comp, item2, scan.found, item3, pos, item4, Q, cert)


def load_esmm(spec: Mapping, prior_set: PriorSet) -> EsMMSet:
    """Inverse of :meth:`EsMMSet.to_json` for members whose base is a plain prior id."""
    members = []
    for entry in spec["members"]:
        if not isinstance(entry["prior"], str):
            raise EsMMError("only plain prior ids can be loaded")
        P = prior_set.get(entry["prior"])
        members.append(EsMMMember(P, tuple(as_fraction(v) for v in entry["density"]), P.id))
    return EsMMSet(prior_set.tree, tuple(members))
