"""Variances when outcomes are additive in the cluster's treatment vector.

Each target follows Y_j(A) = (1, A') beta_j. The HT statistic of a cluster is
then a known function of the coefficients, so its variance is a quadratic form
in them. Two evaluation routes are provided:

* ``"zeta"``: enumerate the design support and take the variance of
  zeta(A) = sum_u gamma_u W_u(A) (1, A') B_u directly;
* ``"lambda"``: sum second-moment matrices over the joint admissible events of
  every slot pair, minus products of the conditional means.

Plugging in the pseudoinverse coefficient fit gives conservative estimates.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from ..design import DEFAULT_SUPPORT_CAP, AssignmentDistribution, Intervention, as_rng, make_event
from ..errors import EnumerationInfeasible, IntegrityError, SchemaError
from ..estimators import Component, Estimand, point_estimate
from ..frame import ClusterFrame, ExperimentFrame, Observed
from .engine import Term, VarianceValue, hajek_terms, ht_terms

PINV_RTOL = 1e-10
_CHUNK = 1 << 14


# ---------------------------------------------------------------------------
# Coefficient fit
# ---------------------------------------------------------------------------


def moment_matrix(design: AssignmentDistribution) -> np.ndarray:
    """E[(1, A)(1, A)'] from marginals and pairwise joints."""
    n = design.n
    M = np.empty((n + 1, n + 1))
    M[0, 0] = 1.0
    for i in range(n):
        M[0, i + 1] = M[i + 1, 0] = M[i + 1, i + 1] = design.marginal(i, 1)
        for j in range(i + 1, n):
            M[i + 1, j + 1] = M[j + 1, i + 1] = design.pairwise_joint(i, j, 1, 1)
    return M


@dataclass(eq=False)
class AdditiveFit:
    """Per-cluster coefficient estimates; ``beta[j]`` belongs to target j."""

    moment: np.ndarray
    pinv: np.ndarray
    rank: int
    beta: np.ndarray


def _pinv(M: np.ndarray) -> tuple[np.ndarray, int]:
    P = np.linalg.pinv(M, rcond=PINV_RTOL, hermitian=True)
    rank = int(np.linalg.matrix_rank(M, tol=PINV_RTOL * np.linalg.norm(M, 2), hermitian=True))
    return P, rank


def fit_additive_coefficients(design: AssignmentDistribution, a, y) -> AdditiveFit:
    """beta_hat_j = M^+ (1, A) Y_j for every target outcome in ``y``."""
    a = np.asarray(a, dtype=float)
    if a.shape != (design.n,):
        raise IntegrityError(f"assignment of length {a.shape[0]} for a design over {design.n} units")
    M = moment_matrix(design)
    P, rank = _pinv(M)
    at = np.concatenate(([1.0], a))
    y = np.atleast_1d(np.asarray(y, dtype=float))
    beta = np.outer(y, P @ at)
    return AdditiveFit(M, P, rank, beta)


def fit_frame(frame: ExperimentFrame, designs, observed: Observed) -> list[np.ndarray]:
    return [fit_additive_coefficients(designs[k], observed.assignments[k], observed.outcomes[k]).beta for k in range(frame.K)]


# ---------------------------------------------------------------------------
# Slots
# ---------------------------------------------------------------------------


@dataclass(eq=False)
class _Slot:
    comp: int
    law: AssignmentDistribution
    event: tuple
    mass: float
    targets: np.ndarray


def _slots(cluster: ClusterFrame, k: int, components: Sequence[Component]) -> list[_Slot]:
    out = []
    for ci, comp in enumerate(components):
        law = comp.intervention.laws[k]
        for g, ks in enumerate(cluster.distinct_key_sets):
            c = comp.intervention.admissible.constraint(ks, cluster)
            ev = make_event(c)
            out.append(_Slot(ci, law, ev, law.prob(ev), np.flatnonzero(cluster.key_set_index == g)))
    return out


def _slot_coefficients(slots, beta: np.ndarray, terms: Sequence[Term], n: int) -> np.ndarray:
    """Column u holds sum over terms of gamma times the slot's pooled coefficient vector."""
    B = np.zeros((n + 1, len(slots)))
    for u, s in enumerate(slots):
        for ci, what, gamma in terms:
            if ci != s.comp:
                continue
            if what == "y":
                B[:, u] += gamma * beta[s.targets].sum(axis=0)
            else:
                B[0, u] += gamma * len(s.targets)
    return B


def _weights(slots, vectors: np.ndarray, pf: np.ndarray) -> np.ndarray:
    W = np.zeros((len(vectors), len(slots)))
    cache: dict = {}
    for u, s in enumerate(slots):
        if s.law not in cache:
            cache[s.law] = s.law.pmf_many(vectors)
        inside = np.ones(len(vectors), dtype=bool)
        for c in s.event:
            inside &= c.holds(vectors)
        W[:, u] = inside * cache[s.law] / (s.mass * pf)
    return W


def _check_beta(cluster: ClusterFrame, beta) -> np.ndarray:
    beta = np.asarray(beta, dtype=float)
    if beta.shape != (cluster.size_s, cluster.n + 1):
        raise SchemaError(
            f"cluster {cluster.cluster_id}: coefficients of shape {beta.shape}, expected {(cluster.size_s, cluster.n + 1)}"
        )
    return beta


# ---------------------------------------------------------------------------
# Routes
# ---------------------------------------------------------------------------


def _zeta_cluster(cluster, k, design, components, terms, beta, cap, mc_draws, rng) -> float:
    slots = _slots(cluster, k, components)
    B = _slot_coefficients(slots, beta, terms, cluster.n)
    if design.support_size() <= cap:
        vectors, pf = design.support(cap)
        probs = pf
    elif mc_draws:
        vectors = np.stack([design.sample(rng) for _ in range(mc_draws)])
        pf = design.pmf_many(vectors)
        probs = np.full(len(vectors), 1.0 / len(vectors))
    else:
        raise EnumerationInfeasible(
            f"cluster {cluster.cluster_id}: design support of {design.support_size()} vectors exceeds cap {cap}; "
            "pass mc_draws to approximate"
        )
    first = second = 0.0
    for lo in range(0, len(vectors), _CHUNK):
        v = vectors[lo : lo + _CHUNK]
        W = _weights(slots, v, pf[lo : lo + _CHUNK])
        at = np.hstack([np.ones((len(v), 1)), v])
        zeta = np.einsum("nu,nu->n", W, at @ B)
        p = probs[lo : lo + _CHUNK]
        first += float(p @ zeta)
        second += float(p @ zeta**2)
    return second - first**2


def _lambda_cluster(cluster, k, design, components, terms, beta, cap) -> float:
    slots = _slots(cluster, k, components)
    B = _slot_coefficients(slots, beta, terms, cluster.n)
    means = []
    for s in slots:
        law = s.law.restrict(s.event)
        vectors, p = law.support(cap)
        at = np.hstack([np.ones((len(vectors), 1)), vectors])
        means.append(p @ at)
    total = 0.0
    for u, su in enumerate(slots):
        for v, sv in enumerate(slots):
            if not B[:, u].any() or not B[:, v].any():
                continue
            joint = make_event(su.event + sv.event)
            inner = su.law.restrict(joint) if su.law.prob(joint) > 0 else None
            second = 0.0
            if inner is not None and sv.law.prob(joint) > 0:
                vectors, _ = inner.support(cap)
                w = su.law.pmf_many(vectors) * sv.law.pmf_many(vectors) / design.pmf_many(vectors)
                at = np.hstack([np.ones((len(vectors), 1)), vectors])
                G = (at * w[:, None]).T @ at
                second = float(B[:, u] @ G @ B[:, v]) / (su.mass * sv.mass)
            total += second - float(means[u] @ B[:, u]) * float(means[v] @ B[:, v])
    return total


def additive_variance(
    frame: ExperimentFrame,
    designs,
    components: Sequence[Component],
    terms: Sequence[Term],
    betas: Sequence[np.ndarray],
    route: str = "zeta",
    cap: int = DEFAULT_SUPPORT_CAP,
    mc_draws: int | None = None,
    seed=None,
) -> VarianceValue:
    """Variance of sum_terms gamma * (component statistic) given per-target coefficients."""
    rng = as_rng(seed) if mc_draws else None
    per = np.zeros(frame.K)
    for k, cluster in enumerate(frame):
        beta = _check_beta(cluster, betas[k])
        if route == "zeta":
            v = _zeta_cluster(cluster, k, designs[k], components, terms, beta, cap, mc_draws, rng)
        elif route == "lambda":
            v = _lambda_cluster(cluster, k, designs[k], components, terms, beta, cap)
        else:
            raise SchemaError(f"unknown additive route {route!r}")
        per[k] = v / (frame.K**2 * cluster.size_s**2)
    flags = ["monte_carlo_support"] if mc_draws and any(d.support_size() > cap for d in designs) else []
    return VarianceValue(float(per.sum()), True, flags, per)


# ---------------------------------------------------------------------------
# Public forms
# ---------------------------------------------------------------------------


def var_estimand_additive(frame, designs, estimand: Estimand, betas, route: str = "zeta", **kw) -> float:
    comps = estimand.components(designs)
    return additive_variance(frame, designs, comps, ht_terms(comps), betas, route, **kw).value


def var_mu_additive(frame, designs, laws, a: int, betas, route: str = "lambda", **kw) -> float:
    return var_estimand_additive(frame, designs, Estimand.mu(laws, a), betas, route, **kw)


def var_tau_additive(frame, designs, intervention: Intervention, betas, route: str = "zeta", **kw) -> float:
    return var_estimand_additive(frame, designs, Estimand.tau(intervention), betas, route, **kw)


def var_de_additive(frame, designs, laws, betas, route: str = "lambda", **kw) -> float:
    return var_estimand_additive(frame, designs, Estimand.de(laws), betas, route, **kw)


def var_ie_additive(frame, designs, laws, laws_tilde, a: int, betas, route: str = "lambda", **kw) -> float:
    return var_estimand_additive(frame, designs, Estimand.ie(laws, laws_tilde, a), betas, route, **kw)


def variance_additive_hat(
    frame: ExperimentFrame,
    designs,
    estimand: Estimand,
    observed: Observed,
    estimator: str = "ht",
    route: str = "zeta",
    **kw,
) -> VarianceValue:
    """Plug the pseudoinverse coefficient fit into the variance; conservative in expectation."""
    comps = estimand.components(designs)
    if estimator == "ht":
        terms = ht_terms(comps)
    elif estimator == "hajek":
        pe = point_estimate(frame, designs, estimand, observed)
        terms = hajek_terms(comps, [c.hajek for c in pe.components])
    else:
        raise SchemaError(f"unknown estimator {estimator!r}")
    betas = fit_frame(frame, designs, observed)
    return additive_variance(frame, designs, comps, terms, betas, route, **kw)


def var_mu_additive_hat(frame, designs, laws, a: int, observed: Observed, **kw) -> float:
    return variance_additive_hat(frame, designs, Estimand.mu(laws, a), observed, **kw).value


def var_de_additive_hat(frame, designs, laws, observed: Observed, **kw) -> float:
    return variance_additive_hat(frame, designs, Estimand.de(laws), observed, **kw).value


def var_ie_additive_hat(frame, designs, laws, laws_tilde, a: int, observed: Observed, **kw) -> float:
    return variance_additive_hat(frame, designs, Estimand.ie(laws, laws_tilde, a), observed, **kw).value


def var_tau_additive_hat(frame, designs, intervention: Intervention, observed: Observed, **kw) -> float:
    return variance_additive_hat(frame, designs, Estimand.tau(intervention), observed, **kw).value
