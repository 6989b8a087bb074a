"""Ground truth by exhaustive enumeration.

Potential outcomes are held as one function per cluster mapping assignment
vectors (rows) to target outcomes. Estimands are computed by averaging those
outcomes under each target's restricted intervention law; estimator moments
by running the production estimators on every assignment of the (product)
design support.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass
from typing import Callable, Mapping, Sequence

import numpy as np

from .design import DEFAULT_SUPPORT_CAP, AssignmentDistribution, make_event
from .errors import EnumerationInfeasible, IntegrityError, SchemaError
from .estimators import Estimand
from .frame import ClusterFrame, ExperimentFrame, Observed

PRODUCT_CAP = 2**22

OutcomeFn = Callable[[np.ndarray], np.ndarray]  # (N, n) assignments -> (N, |S|) outcomes


@dataclass(eq=False)
class PotentialOutcomeTable:
    """Per-cluster potential outcome functions, vectorized over assignment rows."""

    functions: list[OutcomeFn]
    form: str = "arbitrary"

    def outcomes(self, k: int, vectors) -> np.ndarray:
        v = np.atleast_2d(np.asarray(vectors, dtype=np.int8))
        return np.asarray(self.functions[k](v), dtype=float)

    def observed(self, assignments: Sequence[np.ndarray]) -> Observed:
        return Observed(list(assignments), [self.outcomes(k, a)[0] for k, a in enumerate(assignments)])

    # constructors -----------------------------------------------------------
    @classmethod
    def tabulated(cls, frame: ExperimentFrame, tables: Sequence[Mapping[tuple, Sequence[float]]]) -> "PotentialOutcomeTable":
        """Explicit rows: ``tables[k][assignment tuple]`` is the outcome vector of cluster k's targets."""
        fns = []
        for c, table in zip(frame, tables):
            lookup = {tuple(int(x) for x in key): np.asarray(val, dtype=float) for key, val in table.items()}
            for key, val in lookup.items():
                if len(key) != c.n or val.shape != (c.size_s,):
                    raise SchemaError(f"cluster {c.cluster_id}: malformed potential outcome row")

            def fn(v, lookup=lookup, cid=c.cluster_id):
                try:
                    return np.stack([lookup[tuple(int(x) for x in row)] for row in v])
                except KeyError as exc:
                    raise IntegrityError(f"cluster {cid}: no potential outcomes for assignment {exc.args[0]}") from None

            fns.append(fn)
        return cls(fns, "arbitrary")

    @classmethod
    def stratified(cls, frame: ExperimentFrame, fn: Callable) -> "PotentialOutcomeTable":
        """Y_kj = fn(k, j, a_key, proportion treated) for single-key clusters."""
        fns = []
        for k, c in enumerate(frame):
            keys = c.key_index

            def f(v, k=k, keys=keys, n=c.n):
                prop = v.sum(axis=1) / n
                out = np.empty((len(v), len(keys)))
                for j, i in enumerate(keys):
                    for r in range(len(v)):
                        out[r, j] = fn(k, j, int(v[r, i]), float(prop[r]))
                return out

            fns.append(f)
        return cls(fns, "stratified")

    @classmethod
    def stratified_fixed(cls, frame: ExperimentFrame, values: Sequence[np.ndarray]) -> "PotentialOutcomeTable":
        """Fixed-proportion stratified outcomes: ``values[k][j, a]`` is Y_kj when its key unit is in arm a."""
        fns = []
        for c, val in zip(frame, values):
            val = np.asarray(val, dtype=float)
            if val.shape != (c.size_s, 2):
                raise SchemaError(f"cluster {c.cluster_id}: stratified values need shape ({c.size_s}, 2)")
            keys = c.key_index
            cols = np.arange(c.size_s)
            fns.append(lambda v, keys=keys, val=val, cols=cols: val[cols[None, :], v[:, keys]])
        return cls(fns, "stratified")

    @classmethod
    def multi_key(cls, frame: ExperimentFrame, values: Sequence[np.ndarray]) -> "PotentialOutcomeTable":
        """Outcomes depend on how many of the target's key units are treated: ``values[k][j, count]``."""
        fns = []
        for c, val in zip(frame, values):
            val = np.asarray(val, dtype=float)
            width = max(len(ks) for ks in c.key_sets) + 1
            if val.shape != (c.size_s, width):
                raise SchemaError(f"cluster {c.cluster_id}: multi-key values need shape ({c.size_s}, {width})")
            member = np.zeros((c.n, c.size_s))
            for j, ks in enumerate(c.key_sets):
                member[list(ks), j] = 1
            cols = np.arange(c.size_s)
            fns.append(lambda v, member=member, val=val, cols=cols: val[cols[None, :], (v @ member).astype(int)])
        return cls(fns, "multi_key")

    @classmethod
    def additive(cls, frame: ExperimentFrame, betas: Sequence[np.ndarray]) -> "PotentialOutcomeTable":
        """Y_kj(A) = beta_kj[0] + sum_i beta_kj[i+1] A_i."""
        fns = []
        for c, beta in zip(frame, betas):
            beta = np.asarray(beta, dtype=float)
            if beta.shape != (c.size_s, c.n + 1):
                raise SchemaError(f"cluster {c.cluster_id}: coefficients need shape ({c.size_s}, {c.n + 1})")
            fns.append(lambda v, beta=beta: beta[:, 0][None, :] + v @ beta[:, 1:].T)
        return cls(fns, "additive")

    @classmethod
    def from_functions(cls, fns: Sequence[OutcomeFn]) -> "PotentialOutcomeTable":
        return cls(list(fns), "arbitrary")


# ---------------------------------------------------------------------------
# Estimands
# ---------------------------------------------------------------------------


def _target_means(cluster: ClusterFrame, k: int, law: AssignmentDistribution, rule, table, cap) -> np.ndarray:
    """E_{pi_j}[Y_j] for every target of the cluster."""
    vectors, probs = law.support(cap)
    Y = table.outcomes(k, vectors)
    out = np.empty(cluster.size_s)
    for j, ks in enumerate(cluster.key_sets):
        c = rule.constraint(ks, cluster)
        w = probs.copy()
        for con in make_event(c):
            w = w * con.holds(vectors)
        mass = w.sum()
        if mass <= 0:
            raise IntegrityError(f"cluster {cluster.cluster_id}: admissible set of target {cluster.target_units[j]} is empty")
        out[j] = float(w @ Y[:, j]) / mass
    return out


def exact_estimand(
    frame: ExperimentFrame,
    estimand: Estimand,
    table: PotentialOutcomeTable,
    designs: Sequence[AssignmentDistribution] | None = None,
    cap: int = DEFAULT_SUPPORT_CAP,
) -> float:
    """Average over clusters, targets and each target's restricted intervention law."""
    if estimand.kind == "tau_multi" and designs is None:
        raise SchemaError("tau_multi averages over the design; pass designs")
    total = 0.0
    for comp in estimand.components(designs):
        iv = comp.intervention
        value = 0.0
        for k, c in enumerate(frame):
            value += float(np.mean(_target_means(c, k, iv.laws[k], iv.admissible, table, cap)))
        total += comp.sign * value / frame.K
    return total


# ---------------------------------------------------------------------------
# Moments
# ---------------------------------------------------------------------------


@dataclass
class Moments:
    mean: np.ndarray | float
    covariance: np.ndarray | float
    support_size: int

    @property
    def variance(self):
        return np.diag(self.covariance) if np.ndim(self.covariance) == 2 else self.covariance


def _summarize(values: np.ndarray, probs: np.ndarray, support: int, scalar: bool) -> Moments:
    mean = probs @ values
    centered = values - mean
    cov = (centered * probs[:, None]).T @ centered
    if scalar:
        return Moments(float(mean[0]), float(cov[0, 0]), support)
    return Moments(mean, cov, support)


def exact_moments(
    frame: ExperimentFrame,
    designs: Sequence[AssignmentDistribution],
    table: PotentialOutcomeTable,
    statistic: Callable[[Observed], float | Sequence[float]],
    cap: int = PRODUCT_CAP,
) -> Moments:
    """Mean and (co)variance of ``statistic`` over the joint design support, by brute force."""
    sizes = [d.support_size() for d in designs]
    total = math.prod(sizes)
    if total > cap:
        raise EnumerationInfeasible(f"joint support of {total} assignments exceeds cap {cap}")
    supports = [d.support() for d in designs]
    ys = [table.outcomes(k, s[0]) for k, s in enumerate(supports)]
    values, probs = [], []
    scalar = True
    for idx in itertools.product(*(range(len(s[1])) for s in supports)):
        obs = Observed([supports[k][0][i] for k, i in enumerate(idx)], [ys[k][i] for k, i in enumerate(idx)])
        val = statistic(obs)
        scalar = scalar and np.ndim(val) == 0
        values.append(np.atleast_1d(np.asarray(val, dtype=float)))
        probs.append(math.prod(float(supports[k][1][i]) for k, i in enumerate(idx)))
    return _summarize(np.array(values), np.array(probs), total, scalar)


def exact_moments_by_cluster(
    frame: ExperimentFrame,
    designs: Sequence[AssignmentDistribution],
    table: PotentialOutcomeTable,
    cluster_statistic: Callable[[int, np.ndarray, np.ndarray], float],
    cap: int = PRODUCT_CAP,
) -> Moments:
    """Moments of sum_k g_k(A_k, Y_k) using independence across clusters."""
    mean = var = 0.0
    size = 0
    for k, d in enumerate(designs):
        vectors, probs = d.support(cap)
        Y = table.outcomes(k, vectors)
        vals = np.array([cluster_statistic(k, v, y) for v, y in zip(vectors, Y)], dtype=float)
        m = float(probs @ vals)
        mean += m
        var += float(probs @ (vals - m) ** 2)
        size += len(vectors)
    return Moments(mean, var, size)


def check_conservative(
    frame: ExperimentFrame,
    designs: Sequence[AssignmentDistribution],
    table: PotentialOutcomeTable,
    estimator: Callable[[Observed], float],
    variance_estimator: Callable[[Observed], float],
    cap: int = PRODUCT_CAP,
) -> float:
    """E[variance estimator] - Var[estimator]; nonnegative for conservative estimators."""
    m = exact_moments(frame, designs, table, lambda o: (estimator(o), variance_estimator(o)), cap)
    return float(m.mean[1] - m.covariance[0, 0])


def pooled_potentials(frame: ExperimentFrame, table: PotentialOutcomeTable, designs, rule) -> list[np.ndarray]:
    """Pooled outcomes under an admissible rule (``KeyTreated`` or ``KeyProportion``).

    Single-key clusters get a length-n vector indexed by intervention unit
    (zero for units keying no target); multi-key clusters one value per
    distinct key set. Outcomes are read at the first design-support
    assignment inside the key set's admissible set, which is exact for
    stratified or multi-key tables.
    """
    out = []
    for k, (c, d) in enumerate(zip(frame, designs)):
        vectors, _ = d.support()
        Y = table.outcomes(k, vectors)
        pooled = np.zeros(len(c.distinct_key_sets))
        for g, ks in enumerate(c.distinct_key_sets):
            cols = np.flatnonzero(c.key_set_index == g)
            hit = np.flatnonzero(rule.constraint(ks, c).holds(vectors))
            if len(hit):
                pooled[g] = Y[hit[0], cols].sum()
        if c.is_single_key:
            by_unit = np.zeros(c.n)
            by_unit[[ks[0] for ks in c.distinct_key_sets]] = pooled
            pooled = by_unit
        out.append(pooled)
    return out
