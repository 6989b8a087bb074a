"""Variances under stratified interference: exact forms and their plug-in estimators.

Pooled potentials are given per cluster. For single-key clusters pass a
length-n vector indexed by intervention unit (sum of the targets' potentials
over targets keyed to that unit); for multi-key clusters pass one value per
distinct key set, in ``ClusterFrame.distinct_key_sets`` order.
"""

from __future__ import annotations

from typing import Sequence

import numpy as np

from ..design import AssignmentDistribution
from ..errors import SchemaError
from ..estimators import Estimand, point_estimate
from ..frame import ExperimentFrame, Observed
from .engine import VarianceValue, estimate_variance, exact_variance, hajek_terms, ht_terms, plan_for


def pool_outcomes(frame: ExperimentFrame, potentials: Sequence[np.ndarray]) -> list[np.ndarray]:
    """Per-unit sums of target potentials (single-key clusters)."""
    return [c.pool(y) for c, y in zip(frame, potentials)]


def _by_key_set(frame: ExperimentFrame, pooled: Sequence[np.ndarray]) -> list[np.ndarray]:
    out = []
    for c, y in zip(frame, pooled):
        y = np.asarray(y, dtype=float)
        G = len(c.distinct_key_sets)
        if c.is_single_key and y.shape == (c.n,):
            if np.any(y[c.D == 0] != 0):
                raise SchemaError(f"cluster {c.cluster_id}: units keying no target must have zero pooled outcome")
            out.append(y[[ks[0] for ks in c.distinct_key_sets]])
        elif y.shape == (G,):
            out.append(y)
        else:
            raise SchemaError(f"cluster {c.cluster_id}: pooled potentials of length {y.shape[0]}")
    return out


def _exact(frame, designs, estimand: Estimand, pooled_by_component) -> float:
    comps = estimand.components(designs)
    plan = plan_for(frame, designs, comps)
    pooled = [_by_key_set(frame, p) for p in pooled_by_component]
    return exact_variance(plan, ht_terms(comps), pooled).value


def var_mu_stratified(frame: ExperimentFrame, designs, laws, a: int, pooled) -> float:
    """Var of the Horvitz-Thompson mean outcome under ``laws`` with key units in arm ``a``."""
    return _exact(frame, designs, Estimand.mu(laws, a), [pooled])


def var_de_stratified(frame: ExperimentFrame, designs, laws, pooled1, pooled0) -> float:
    return _exact(frame, designs, Estimand.de(laws), [pooled1, pooled0])


def var_ie_stratified(frame: ExperimentFrame, designs, laws, laws_tilde, a: int, pooled) -> float:
    """Both interventions share the arm-``a`` pooled potentials."""
    return _exact(frame, designs, Estimand.ie(laws, laws_tilde, a), [pooled, pooled])


def var_te_stratified(frame: ExperimentFrame, designs, laws, laws_tilde, pooled1, pooled0) -> float:
    return _exact(frame, designs, Estimand.te(laws, laws_tilde), [pooled1, pooled0])


def var_tau_multi(frame: ExperimentFrame, designs, p_star: float, pooled) -> float:
    """Var of the key-proportion estimator with the design as base law; ``pooled`` per distinct key set."""
    return _exact(frame, designs, Estimand.tau_multi(p_star), [pooled])


def variance_hat(
    frame: ExperimentFrame,
    designs: Sequence[AssignmentDistribution],
    estimand: Estimand,
    observed: Observed,
    estimator: str = "ht",
    on_unmeasurable: str | None = None,
) -> VarianceValue:
    """Plug-in variance estimate of the HT or linearized Hajek estimator."""
    comps = estimand.components(designs)
    plan = plan_for(frame, designs, comps)
    if on_unmeasurable is None:
        on_unmeasurable = "conservative" if estimand.kind == "tau_multi" else "error"
    if estimator == "ht":
        terms = ht_terms(comps)
    elif estimator == "hajek":
        pe = point_estimate(frame, designs, estimand, observed)
        terms = hajek_terms(comps, [c.hajek for c in pe.components])
    else:
        raise SchemaError(f"unknown estimator {estimator!r}")
    return estimate_variance(plan, terms, frame, observed, on_unmeasurable)


def var_mu_stratified_hat(frame, designs, laws, a: int, observed: Observed) -> float:
    return variance_hat(frame, designs, Estimand.mu(laws, a), observed).value


def var_de_stratified_hat(frame, designs, laws, observed: Observed) -> float:
    """Conservative: cross terms between arms are bounded by the squared terms."""
    return variance_hat(frame, designs, Estimand.de(laws), observed).value


def var_ie_stratified_hat(frame, designs, laws, laws_tilde, a: int, observed: Observed) -> float:
    return variance_hat(frame, designs, Estimand.ie(laws, laws_tilde, a), observed).value


def var_te_stratified_hat(frame, designs, laws, laws_tilde, observed: Observed) -> float:
    return variance_hat(frame, designs, Estimand.te(laws, laws_tilde), observed).value


def var_tau_multi_hat(frame, designs, p_star: float, observed: Observed) -> VarianceValue:
    return variance_hat(frame, designs, Estimand.tau_multi(p_star), observed)


def var_hajek_hat(frame, designs, estimand: Estimand, observed: Observed) -> float:
    return variance_hat(frame, designs, estimand, observed, "hajek").value


def var_hajek_linearized(frame, designs, estimand: Estimand, pooled_by_component, means: Sequence[float]) -> float:
    """Exact variance of the Hajek linearization at the given component means."""
    comps = estimand.components(designs)
    plan = plan_for(frame, designs, comps)
    pooled = [_by_key_set(frame, p) for p in pooled_by_component]
    return exact_variance(plan, hajek_terms(comps, means), pooled).value
