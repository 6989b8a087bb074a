"""Quadratic-form variances for Horvitz-Thompson statistics under stratified interference.

Within a cluster the estimator of a component is a sum over "slots" (distinct
key sets g) of a weight W_g(A) times a pooled outcome. W_g is nonzero only on
the slot's event E_g (the admissible-set constraint for g), and the pooled
outcome is constant on E_g when interference is stratified. For any linear
combination of such statistics the variance is X' Q X per cluster, with

    Q[u, v] = E_f[W_u W_v] - 1,   E_f[W_u W_v] = sum_{A in E_u & E_v} pi_u(A) pi_v(A) / f(A) / (pi_u(E_u) pi_v(E_v)).

The Horvitz-Thompson plug-in replaces X_u X_v by 1(E_u & E_v)/f(E_u & E_v) times
the observed product. Pairs whose events cannot happen together get the
bound |Q| (U_u^2 + U_v^2)/2 for unknown*unknown products; products involving
known counts (the D blocks of Hajek denominators) stay unbiased.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import lru_cache
from typing import Sequence

import numpy as np

from ..design import (
    AssignmentDistribution,
    Bernoulli,
    KeyProportion,
    KeyTreated,
    make_event,
    support_within,
)
from ..errors import AssumptionError, NonMeasurableDesignError
from ..frame import ExperimentFrame, Observed

_ANY = {}


def _bernoulli_half(n: int) -> Bernoulli:
    if n not in _ANY:
        _ANY[n] = Bernoulli.uniform(n, 0.5)
    return _ANY[n]


@lru_cache(maxsize=1 << 18)
def moment_ratio(p: AssignmentDistribution, q: AssignmentDistribution, f: AssignmentDistribution, event) -> float:
    """Sum over assignments in ``event`` of p(A) q(A) / f(A).

    Supports of p and q are assumed to lie inside the support of f.
    """
    event = make_event(event)
    if p == f:
        return q.prob(event)
    if q == f:
        return p.prob(event)
    up, uq, uf = p.uniform_mass, q.uniform_mass, f.uniform_mass
    if up is not None and uq is not None and uf is not None:
        if support_within(p, q):
            return uq / uf * p.prob(event)
        if support_within(q, p):
            return up / uf * q.prob(event)
    if all(isinstance(d, Bernoulli) for d in (p, q, f)):
        fixed = {}
        ok = True
        for c in event:
            if len(c.units) != 1:
                ok = False
                break
            (i,) = c.units
            if fixed.get(i, c.count) != c.count or c.count not in (0, 1):
                return 0.0
            fixed[i] = c.count
        if ok:
            out = 1.0
            for i in range(f.n):
                terms = []
                for x in ((fixed[i],) if i in fixed else (0, 1)):
                    px = p.p[i] if x else 1 - p.p[i]
                    qx = q.p[i] if x else 1 - q.p[i]
                    fx = f.p[i] if x else 1 - f.p[i]
                    terms.append(px * qx / fx if fx > 0 else 0.0)
                out *= sum(terms)
            return out
    vectors, pf = f.support()
    keep = np.ones(len(vectors), dtype=bool)
    for c in event:
        keep &= c.holds(vectors)
    v = vectors[keep]
    return float(np.sum(p.pmf_many(v) * q.pmf_many(v) / pf[keep]))


# ---------------------------------------------------------------------------
# Plans
# ---------------------------------------------------------------------------


@dataclass(eq=False)
class ClusterPlan:
    n_slots: int
    comp: np.ndarray  # component index per slot
    key_set: np.ndarray  # distinct key set index per slot
    membership: np.ndarray  # (slots, n)
    counts: np.ndarray  # (slots,)
    f_single: np.ndarray  # f(E_u)
    f_pair: np.ndarray  # f(E_u & E_v)
    Q: np.ndarray  # E[W_u W_v] - 1
    structural: np.ndarray  # events incompatible for every assignment
    unmeasurable: np.ndarray  # compatible events the design never realizes jointly
    size_s: int
    set_sizes: np.ndarray  # targets per distinct key set


@dataclass(eq=False)
class VariancePlan:
    clusters: list[ClusterPlan]
    n_components: int
    K: int
    unmeasurable_pairs: int = 0


@dataclass
class VarianceValue:
    value: float
    conservative: bool = False
    flags: list[str] = field(default_factory=list)
    per_cluster: np.ndarray | None = None


def _slot_rule_ok(rule) -> bool:
    return isinstance(rule, (KeyTreated, KeyProportion))


def _cluster_plan(cluster, k, design, components) -> ClusterPlan:
    sets = cluster.distinct_key_sets
    slot_comp, slot_set, laws, events, masses = [], [], [], [], []
    for ci, comp in enumerate(components):
        iv = comp.intervention
        if not _slot_rule_ok(iv.admissible):
            raise AssumptionError(
                "stratified-interference variance needs key-unit admissible sets (key_treated or key_proportion)"
            )
        law = iv.laws[k]
        for g, ks in enumerate(sets):
            c = iv.admissible.constraint(ks, cluster)
            ev = make_event(c)
            if design.prob(ev) <= 0.0:
                raise NonMeasurableDesignError(
                    f"cluster {cluster.cluster_id}: the design never realizes the admissible set of key set {list(ks)}"
                )
            slot_comp.append(ci)
            slot_set.append(g)
            laws.append(law)
            events.append(ev)
            masses.append(law.prob(ev))
    S = len(slot_comp)
    membership = np.zeros((S, cluster.n))
    counts = np.zeros(S)
    for u, ev in enumerate(events):
        (c,) = ev
        membership[u, list(c.units)] = 1
        counts[u] = c.count
    f_single = np.array([design.prob(ev) for ev in events])
    f_pair = np.zeros((S, S))
    Q = np.zeros((S, S))
    structural = np.zeros((S, S), dtype=bool)
    half = _bernoulli_half(cluster.n)
    for u in range(S):
        for v in range(u, S):
            joint = make_event(events[u] + events[v])
            fp = design.prob(joint)
            if fp > 0.0 or laws[u].prob(joint) > 0.0 and laws[v].prob(joint) > 0.0:
                eww = moment_ratio(laws[u], laws[v], design, joint) / (masses[u] * masses[v])
            else:
                eww = 0.0
            f_pair[u, v] = f_pair[v, u] = fp
            Q[u, v] = Q[v, u] = eww - 1.0
            structural[u, v] = structural[v, u] = half.prob(joint) == 0.0
    unmeasurable = (f_pair == 0.0) & ~structural & (Q != 0.0)
    set_sizes = np.bincount(cluster.key_set_index, minlength=len(sets)).astype(float)
    return ClusterPlan(
        S,
        np.array(slot_comp),
        np.array(slot_set),
        membership,
        counts,
        f_single,
        f_pair,
        Q,
        structural,
        unmeasurable,
        cluster.size_s,
        set_sizes,
    )


@lru_cache(maxsize=64)
def build_plan(frame: ExperimentFrame, designs: tuple, components: tuple) -> VariancePlan:
    plans = [_cluster_plan(c, k, designs[k], components) for k, c in enumerate(frame)]
    bad = sum(int(p.unmeasurable.sum()) for p in plans)
    return VariancePlan(plans, len(components), frame.K, bad)


# ---------------------------------------------------------------------------
# Evaluation
# ---------------------------------------------------------------------------

# A term is (component index, "y" or "d", coefficient). "y" uses pooled
# outcomes, "d" the known number of targets in the slot (Hajek denominators).
Term = tuple[int, str, float]


def _slot_values(cp: ClusterPlan, terms: Sequence[Term], pooled_by_comp) -> tuple[np.ndarray, np.ndarray]:
    unknown = np.zeros(cp.n_slots)
    known = np.zeros(cp.n_slots)
    for ci, what, gamma in terms:
        sel = cp.comp == ci
        if what == "y":
            unknown[sel] += gamma * pooled_by_comp[ci][cp.key_set[sel]]
        else:
            known[sel] += gamma * cp.set_sizes[cp.key_set[sel]]
    return unknown, known


def exact_variance(plan: VariancePlan, terms: Sequence[Term], pooled) -> VarianceValue:
    """Variance from pooled potential outcomes; ``pooled[c][k]`` is indexed by distinct key set."""
    per = np.zeros(plan.K)
    for k, cp in enumerate(plan.clusters):
        unknown, known = _slot_values(cp, terms, [pooled[c][k] for c in range(plan.n_components)])
        x = unknown + known
        per[k] = float(x @ cp.Q @ x) / (plan.K**2 * cp.size_s**2)
    return VarianceValue(float(per.sum()), per_cluster=per)


def estimate_variance(
    plan: VariancePlan,
    terms: Sequence[Term],
    frame: ExperimentFrame,
    observed: Observed,
    on_unmeasurable: str = "error",
) -> VarianceValue:
    """Horvitz-Thompson plug-in of the quadratic form, conservative on incompatible pairs."""
    flags: list[str] = []
    if plan.unmeasurable_pairs:
        if on_unmeasurable == "error":
            raise NonMeasurableDesignError(
                f"{plan.unmeasurable_pairs} slot pairs have zero joint design probability; "
                "their cross products cannot be estimated"
            )
        flags.append("non_measurable_pairs_bounded")
    per = np.zeros(plan.K)
    conservative = False
    for k, (cp, cluster) in enumerate(zip(plan.clusters, frame)):
        a = observed.assignments[k]
        pooled = cluster.pool_by_key_set(observed.outcomes[k])
        unknown, known = _slot_values(cp, terms, [pooled] * plan.n_components)
        ind = (cp.membership @ a == cp.counts).astype(float)
        inv_single = ind / cp.f_single
        ok = cp.f_pair > 0
        inv_pair = np.divide(np.outer(ind, ind), cp.f_pair, out=np.zeros_like(cp.f_pair), where=ok)
        x = unknown + known
        total = float(np.sum(inv_pair * cp.Q * np.outer(x, x)))
        if not ok.all():
            Qz = np.where(ok, 0.0, cp.Q)
            if np.any((Qz != 0) & (unknown[:, None] != 0) & (unknown[None, :] != 0)):
                conservative = True
            aq = np.abs(Qz)
            sq = inv_single * unknown**2
            total += 0.5 * float(np.sum(aq * (sq[:, None] + sq[None, :])))
            total += float(np.sum(Qz * (np.outer(inv_single * unknown, known) + np.outer(known, inv_single * unknown))))
            total += 0.5 * float(np.sum(Qz * (inv_single[:, None] + inv_single[None, :]) * np.outer(known, known)))
        per[k] = total / (plan.K**2 * cp.size_s**2)
    if conservative:
        flags.append("conservative_cross_terms")
    return VarianceValue(float(per.sum()), conservative, flags, per)


def ht_terms(components) -> list[Term]:
    return [(ci, "y", float(c.sign)) for ci, c in enumerate(components)]


def hajek_terms(components, hajek_means: Sequence[float]) -> list[Term]:
    """Linearization at (mu_hajek, 1): coefficient sign on the numerator, -sign*mu on the denominator."""
    out: list[Term] = []
    for ci, (c, mu) in enumerate(zip(components, hajek_means)):
        out.append((ci, "y", float(c.sign)))
        out.append((ci, "d", -float(c.sign) * mu))
    return out


def plan_for(frame, designs, components) -> VariancePlan:
    return build_plan(frame, tuple(designs), tuple(components))


__all__ = [
    "VariancePlan",
    "VarianceValue",
    "build_plan",
    "estimate_variance",
    "exact_variance",
    "hajek_terms",
    "ht_terms",
    "moment_ratio",
    "plan_for",
]
