"""Closed forms when the design and the intervention are the same complete randomization.

With pi = f = CR(n, n_1) and single key units the Horvitz-Thompson variances
reduce to finite-population sampling expressions in the pooled outcomes.
"""

from __future__ import annotations

from typing import Sequence

import numpy as np

from ..design import CompleteRandomization
from ..errors import AssumptionError, UndefinedEstimateError
from ..frame import ExperimentFrame, Observed


def _check(frame: ExperimentFrame, designs, laws=None) -> None:
    if laws is not None and tuple(laws) != tuple(designs):
        raise AssumptionError("closed forms need the intervention law to equal the design")
    for c, f in zip(frame, designs):
        if not isinstance(f, CompleteRandomization):
            raise AssumptionError(f"cluster {c.cluster_id}: closed forms need complete randomization")
        if not c.is_single_key:
            raise AssumptionError(f"cluster {c.cluster_id}: closed forms need one key unit per target")
        if f.n < 2:
            raise AssumptionError(f"cluster {c.cluster_id}: need at least two intervention units")


def _arm_size(f: CompleteRandomization, a: int) -> int:
    return f.n_treated if a == 1 else f.n - f.n_treated


def var_mu_cr(frame: ExperimentFrame, designs, a: int, pooled: Sequence[np.ndarray]) -> float:
    """sum_k (n/|S|)^2 (1 - n_a/n) V_a^2 / n_a over K^2, V_a^2 the n-1 denominator spread of pooled outcomes."""
    _check(frame, designs)
    total = 0.0
    for c, f, y in zip(frame, designs, pooled):
        n, na = f.n, _arm_size(f, a)
        if na == 0:
            raise AssumptionError(f"cluster {c.cluster_id}: no unit is ever in arm {a}")
        v2 = float(np.var(np.asarray(y, dtype=float), ddof=1))
        total += (n / c.size_s) ** 2 * (1 - na / n) * v2 / na
    return total / frame.K**2


def var_de_cr(frame: ExperimentFrame, designs, pooled1, pooled0) -> float:
    _check(frame, designs)
    total = 0.0
    for c, f, y1, y0 in zip(frame, designs, pooled1, pooled0):
        n, n1 = f.n, f.n_treated
        n0 = n - n1
        if n1 == 0 or n0 == 0:
            raise AssumptionError(f"cluster {c.cluster_id}: both arms must be non-empty")
        y1, y0 = np.asarray(y1, dtype=float), np.asarray(y0, dtype=float)
        v1, v0, v01 = np.var(y1, ddof=1), np.var(y0, ddof=1), np.var(y1 - y0, ddof=1)
        total += (n / c.size_s) ** 2 * (v1 / n1 + v0 / n0 - v01 / n)
    return float(total) / frame.K**2


def _arm_spread(pooled_obs: np.ndarray, mask: np.ndarray, cluster_id) -> float:
    if mask.sum() < 2:
        raise UndefinedEstimateError(f"cluster {cluster_id}: fewer than two units in an arm, spread undefined")
    return float(np.var(pooled_obs[mask], ddof=1))


def var_mu_cr_hat(frame: ExperimentFrame, designs, a: int, observed: Observed) -> float:
    """Same form with the within-arm sample variance (n_a - 1 denominator); unbiased."""
    _check(frame, designs)
    total = 0.0
    for c, f, A, y in zip(frame, designs, observed.assignments, observed.outcomes):
        n, na = f.n, _arm_size(f, a)
        s2 = _arm_spread(c.pool(y), A == a, c.cluster_id)
        total += (n / c.size_s) ** 2 * (1 - na / n) * s2 / na
    return total / frame.K**2


def var_de_cr_hat(frame: ExperimentFrame, designs, observed: Observed) -> float:
    """Neyman-type bound: drops the unidentified effect-spread term."""
    _check(frame, designs)
    total = 0.0
    for c, f, A, y in zip(frame, designs, observed.assignments, observed.outcomes):
        n, n1 = f.n, f.n_treated
        pooled = c.pool(y)
        s1 = _arm_spread(pooled, A == 1, c.cluster_id)
        s0 = _arm_spread(pooled, A == 0, c.cluster_id)
        total += (n / c.size_s) ** 2 * (s1 / n1 + s0 / (n - n1))
    return total / frame.K**2
