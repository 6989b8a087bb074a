"""Horvitz-Thompson and Hajek point estimators.

Every estimand is a signed list of components. A component is one
intervention (per-cluster base laws plus an admissible-set rule) and its
Horvitz-Thompson estimate is

    (1/K) sum_k (1/|S_k|) sum_j  pi_kj(A_k) / f_k(A_k) * Y_kj

with pi_kj the base law restricted to target j's admissible set.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import lru_cache
from typing import Sequence

import numpy as np

from .design import (
    AssignmentDistribution,
    CountConstraint,
    Intervention,
    KeyProportion,
    KeyTreated,
    check_overlap,
)
from .errors import IntegrityError, SchemaError, UndefinedEstimateError
from .frame import ClusterFrame, ExperimentFrame, Observed

ESTIMAND_KINDS = ("tau", "mu", "de", "ie", "te", "tau_multi")


@dataclass(frozen=True)
class Component:
    sign: int
    intervention: Intervention


@dataclass(frozen=True)
class Estimand:
    """What to estimate. ``pi``/``pi_tilde`` carry per-cluster laws (and a rule for ``tau``)."""

    kind: str
    pi: Intervention | None = None
    pi_tilde: Intervention | None = None
    a: int | None = None
    p_star: float | None = None

    def __post_init__(self):
        if self.kind not in ESTIMAND_KINDS:
            raise SchemaError(f"unknown estimand kind {self.kind!r}")
        if self.kind in ("mu", "ie") and self.a not in (0, 1):
            raise SchemaError(f"{self.kind} needs an arm a in {{0, 1}}")
        if self.kind in ("ie", "te") and self.pi_tilde is None:
            raise SchemaError(f"{self.kind} needs a second intervention")
        if self.kind != "tau_multi" and self.pi is None:
            raise SchemaError(f"{self.kind} needs an intervention")
        if self.kind == "tau_multi" and (self.p_star is None or not 0.0 <= self.p_star <= 1.0):
            raise SchemaError("tau_multi needs p_star in [0, 1]")

    # constructors
    @classmethod
    def tau(cls, intervention: Intervention) -> "Estimand":
        return cls("tau", pi=intervention)

    @classmethod
    def mu(cls, laws: Sequence[AssignmentDistribution], a: int) -> "Estimand":
        return cls("mu", pi=Intervention(tuple(laws)), a=a)

    @classmethod
    def de(cls, laws) -> "Estimand":
        return cls("de", pi=Intervention(tuple(laws)))

    @classmethod
    def ie(cls, laws, laws_tilde, a: int) -> "Estimand":
        return cls("ie", pi=Intervention(tuple(laws)), pi_tilde=Intervention(tuple(laws_tilde)), a=a)

    @classmethod
    def te(cls, laws, laws_tilde) -> "Estimand":
        return cls("te", pi=Intervention(tuple(laws)), pi_tilde=Intervention(tuple(laws_tilde)))

    @classmethod
    def tau_multi(cls, p_star: float) -> "Estimand":
        return cls("tau_multi", p_star=p_star)

    def components(self, designs: Sequence[AssignmentDistribution]) -> tuple[Component, ...]:
        k = self.kind
        if k == "tau":
            return (Component(1, self.pi),)
        if k == "tau_multi":
            return (Component(1, Intervention(tuple(designs), KeyProportion(self.p_star))),)
        laws = self.pi.laws
        if k == "mu":
            return (Component(1, Intervention(laws, KeyTreated(self.a))),)
        if k == "de":
            return (Component(1, Intervention(laws, KeyTreated(1))), Component(-1, Intervention(laws, KeyTreated(0))))
        tilde = self.pi_tilde.laws
        if k == "ie":
            return (
                Component(1, Intervention(laws, KeyTreated(self.a))),
                Component(-1, Intervention(tilde, KeyTreated(self.a))),
            )
        return (Component(1, Intervention(laws, KeyTreated(1))), Component(-1, Intervention(tilde, KeyTreated(0))))

    def to_dict(self) -> dict:
        out: dict = {"kind": self.kind}
        if self.a is not None:
            out["a"] = self.a
        if self.p_star is not None:
            out["p_star"] = self.p_star
        if self.kind == "tau":
            out["admissible"] = self.pi.admissible.to_dict()
        return out


# ---------------------------------------------------------------------------
# Weights
# ---------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class WeightPlan:
    """Per key set: constraint membership matrix, required count and admissible-set mass under the law."""

    law: AssignmentDistribution
    membership: np.ndarray  # (G, n) 0/1, rows of unrestricted sets are all zero
    counts: np.ndarray  # (G,)
    restricted: np.ndarray  # (G,) bool
    mass: np.ndarray  # (G,)
    constraints: tuple


@lru_cache(maxsize=4096)
def weight_plan(cluster: ClusterFrame, k: int, design: AssignmentDistribution, intervention: Intervention) -> WeightPlan:
    law = intervention.laws[k]
    if law.n != cluster.n:
        raise SchemaError(f"cluster {cluster.cluster_id}: intervention law over {law.n} units, roster has {cluster.n}")
    sets = cluster.distinct_key_sets
    membership = np.zeros((len(sets), cluster.n))
    counts = np.zeros(len(sets))
    restricted = np.zeros(len(sets), dtype=bool)
    mass = np.ones(len(sets))
    constraints = []
    for g, ks in enumerate(sets):
        c: CountConstraint | None = intervention.admissible.constraint(ks, cluster)
        constraints.append(c)
        check_overlap(law.restrict(c), design)
        if c is not None:
            membership[g, list(c.units)] = 1
            counts[g] = c.count
            restricted[g] = True
            mass[g] = law.prob((c,))
    return WeightPlan(law, membership, counts, restricted, mass, tuple(constraints))


def key_set_weights(cluster, k, design, intervention, a) -> np.ndarray:
    """pi_kj(a)/f_k(a) for each distinct key set of the cluster."""
    a = np.asarray(a)
    f = design.pmf(a)
    if f <= 0.0:
        raise IntegrityError(f"cluster {cluster.cluster_id}: realized assignment has zero design probability")
    plan = weight_plan(cluster, k, design, intervention)
    base = plan.law.pmf(a)
    inside = np.where(plan.restricted, plan.membership @ a == plan.counts, True)
    return inside * base / (plan.mass * f)


def unit_weights(cluster, k, design, intervention, a) -> np.ndarray:
    return key_set_weights(cluster, k, design, intervention, a)[cluster.key_set_index]


# ---------------------------------------------------------------------------
# Point estimates
# ---------------------------------------------------------------------------


@dataclass
class ComponentEstimate:
    sign: int
    ht: float
    denominator: float
    cluster_ht: np.ndarray
    cluster_den: np.ndarray

    @property
    def hajek(self) -> float:
        if self.denominator == 0.0:
            raise UndefinedEstimateError("Hajek denominator is zero: no target unit falls in its admissible set")
        return self.ht / self.denominator


@dataclass
class PointEstimate:
    estimand: Estimand
    components: list[ComponentEstimate]
    ht: float
    hajek: float | None = field(default=None)

    def value(self, estimator: str) -> float:
        if estimator == "ht":
            return self.ht
        if self.hajek is None:
            raise UndefinedEstimateError("Hajek estimate undefined (zero denominator)")
        return self.hajek


def component_estimate(frame: ExperimentFrame, designs, comp: Component, observed: Observed) -> ComponentEstimate:
    K = frame.K
    num = np.zeros(K)
    den = np.zeros(K)
    for k, cluster in enumerate(frame):
        w = unit_weights(cluster, k, designs[k], comp.intervention, observed.assignments[k])
        num[k] = float(w @ observed.outcomes[k]) / cluster.size_s
        den[k] = float(w.sum()) / cluster.size_s
    return ComponentEstimate(comp.sign, float(num.sum() / K), float(den.sum() / K), num / K, den / K)


def point_estimate(frame: ExperimentFrame, designs, estimand: Estimand, observed: Observed) -> PointEstimate:
    observed.validate(frame)
    if len(designs) != frame.K:
        raise SchemaError("one design per cluster is required")
    comps = [component_estimate(frame, designs, c, observed) for c in estimand.components(designs)]
    ht = _signed_sum(c.sign * c.ht for c in comps)
    try:
        hajek = _signed_sum(c.sign * c.hajek for c in comps)
    except UndefinedEstimateError:
        hajek = None
    return PointEstimate(estimand, comps, ht, hajek)


def _signed_sum(values) -> float:
    values = list(values)
    out = values[0]
    for v in values[1:]:
        out = out + v
    return float(out)


def ht_estimate(frame, designs, estimand: Estimand, observed: Observed) -> float:
    return point_estimate(frame, designs, estimand, observed).ht


def hajek_estimate(frame, designs, estimand: Estimand, observed: Observed) -> float:
    return point_estimate(frame, designs, estimand, observed).value("hajek")
