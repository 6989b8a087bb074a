"""Partial identification of Var(mu_hat_a) under complete randomization with pi = f.

If outcomes move by at most C(n) * d(s, s') when the non-key assignment s
changes, the unidentified spread terms of the variance are bounded by sums of
squared distances over the conditional supports. The remaining terms are
sums of (products of) potential outcomes over those supports, which have
unbiased Horvitz-Thompson estimators.

Per cluster, with B1 = C(n-1, n_a-1), B2 = C(n-2, n_a-2) and p = n_a / n:

* spread: C^2/(2 B1^2) * D1 * (|S| + #same-key ordered pairs)
          + C^2/(2 B2^2) * D2 * #distinct-key ordered pairs,
  D1, D2 the double sums of d^2 over the one- and two-unit-fixed supports;
* squares: (1-p)/(p B1) * sum_j sum_s Y_j(a, s)^2;
* same-key pairs: (1-p)/(p B1) * sum_s Y_j(a, s) Y_j'(a, s);
* distinct-key pairs: (1/(p B1) - 1/B2) * sum_s Y_j(a, a, s) Y_j'(a, a, s).

When only one unit is ever in arm a (n_a = 1) no two distinct key units share
the arm, so -mean(Y_j) mean(Y_j') is bounded by (sum_s Y_j^2 + Y_j'^2) / (2 B1)
for each distinct-key ordered pair instead.

A boundary term of order C(n) * M in the distinct-key pairs is dropped, so the
bound is guaranteed only asymptotically.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass
from typing import Callable, Mapping, Sequence

import numpy as np

from ..design import DEFAULT_SUPPORT_CAP, CompleteRandomization, _combination_rows
from ..errors import AssumptionError, SchemaError
from ..frame import ClusterFrame, ExperimentFrame, Observed


@dataclass(frozen=True)
class LipschitzSpec:
    """C(n) = c / sqrt(n) unless a table {n: C} is given; distance ``"l1"`` or a callable on two vectors."""

    c: float = 1.0
    table: Mapping[int, float] | None = None
    distance: str | Callable = "l1"
    outcome_bound: float = math.inf

    def __post_init__(self):
        if self.table is None and not self.c > 0:
            raise SchemaError("Lipschitz constant must be positive")
        if not self.outcome_bound > 0:
            raise SchemaError("outcome bound must be positive")
        if isinstance(self.distance, str) and self.distance != "l1":
            raise SchemaError(f"unknown distance {self.distance!r}; use 'l1' or pass a callable")

    def constant(self, n: int) -> float:
        if self.table is not None:
            if n not in self.table:
                raise SchemaError(f"no Lipschitz constant tabulated for n={n}")
            return float(self.table[n])
        return self.c / math.sqrt(n)


def squared_distance_sum(length: int, ones: int, distance: str | Callable = "l1", cap: int = DEFAULT_SUPPORT_CAP) -> float:
    """Sum over ordered pairs s != s' of d(s, s')^2, s ranging over length-``length`` vectors with ``ones`` ones."""
    if ones < 0 or ones > length:
        return 0.0
    if distance == "l1":
        total = 0
        for h in range(1, min(ones, length - ones) + 1):
            total += math.comb(length, ones) * math.comb(ones, h) * math.comb(length - ones, h) * (2 * h) ** 2
        return float(total)
    size = math.comb(length, ones)
    if size * size > cap:
        from ..errors import EnumerationInfeasible

        raise EnumerationInfeasible(f"{size}^2 support pairs exceed cap {cap}")
    rows = _combination_rows(length, ones)
    return float(sum(distance(s, t) ** 2 for i, s in enumerate(rows) for j, t in enumerate(rows) if i != j))


@dataclass
class _Constants:
    b1: float
    b2: float
    p: float
    spread: float
    c_sq: float
    c_same: float
    c_distinct: float
    c_cross_sq: float = 0.0


def _constants(cluster: ClusterFrame, design: CompleteRandomization, a: int, spec: LipschitzSpec) -> _Constants:
    n = design.n
    na = design.n_treated if a == 1 else n - design.n_treated
    if na < 1:
        raise AssumptionError(f"cluster {cluster.cluster_id}: arm {a} is empty under the design")
    ones_others = design.n_treated - a  # treated among the other units once the key unit is fixed at a
    b1 = math.comb(n - 1, na - 1)
    b2 = math.comb(n - 2, na - 2) if na >= 2 and n >= 2 else 0
    p = na / n
    C = spec.constant(n)
    d1 = squared_distance_sum(n - 1, ones_others, spec.distance)
    keys = cluster.key_index
    counts = np.bincount(keys, minlength=n)
    same = float(np.sum(counts * (counts - 1)))
    size = cluster.size_s
    distinct = float(size * (size - 1)) - same
    spread = C**2 / (2 * b1**2) * d1 * (size + same)
    if b2 and distinct:
        d2 = squared_distance_sum(n - 2, design.n_treated - 2 * a, spec.distance)
        spread += C**2 / (2 * b2**2) * d2 * distinct
    c_sq = (1 - p) / (p * b1)
    c_distinct = (1 / (b1 * p) - 1 / b2) if b2 else 0.0
    # n_a = 1: Young and Jensen bound the unidentified cross products by squares
    c_cross_sq = 1 / b1 if not b2 and distinct else 0.0
    return _Constants(b1, b2, p, spread, c_sq, c_sq, c_distinct, c_cross_sq)


def _check(frame: ExperimentFrame, designs, laws) -> None:
    if laws is not None and tuple(laws) != tuple(designs):
        raise AssumptionError("Lipschitz bound needs the intervention law to equal the design")
    for c, f in zip(frame, designs):
        if not isinstance(f, CompleteRandomization):
            raise AssumptionError(f"cluster {c.cluster_id}: Lipschitz bound needs complete randomization")
        if not c.is_single_key:
            raise AssumptionError(f"cluster {c.cluster_id}: Lipschitz bound needs one key unit per target")


def _pair_terms(y: np.ndarray, ind: np.ndarray, keys: np.ndarray, n: int, k: _Constants) -> np.ndarray:
    """Row-wise squares plus same-key and distinct-key pair sums, for outcome rows ``y`` (rows x targets)."""
    z = y * ind
    sq = np.sum(z**2, axis=1)
    pooled = np.zeros((len(y), n))
    for j, i in enumerate(keys):
        pooled[:, i] += z[:, j]
    pooled_sq = np.sum(pooled**2, axis=1)
    total_sq = np.sum(z, axis=1) ** 2
    out = k.c_sq * sq + k.c_same * (pooled_sq - sq) + k.c_distinct * (total_sq - pooled_sq)
    if k.c_cross_sq:
        counts = np.bincount(keys, minlength=n)
        others = len(keys) - counts[keys]  # targets keyed elsewhere
        out = out + k.c_cross_sq * (z**2 @ others)
    return out


def _warn_bound(values: np.ndarray, spec: LipschitzSpec, where: str) -> list[str]:
    if np.isfinite(spec.outcome_bound) and np.any(np.abs(values) > spec.outcome_bound):
        msg = f"{where}: outcomes exceed the declared bound {spec.outcome_bound}"
        warnings.warn(msg, stacklevel=3)
        return [msg]
    return []


def lipschitz_bound(
    frame: ExperimentFrame, designs, a: int, potentials: Sequence[np.ndarray], spec: LipschitzSpec, laws=None
) -> float:
    """Upper bound from full potentials; ``potentials[k]`` has one row per vector of ``designs[k].support()``."""
    _check(frame, designs, laws)
    total = 0.0
    for c, f, Y in zip(frame, designs, potentials):
        k = _constants(c, f, a, spec)
        vectors, _ = f.support()
        Y = np.asarray(Y, dtype=float)
        if Y.shape != (len(vectors), c.size_s):
            raise SchemaError(f"cluster {c.cluster_id}: potentials of shape {Y.shape}")
        _warn_bound(Y, spec, f"cluster {c.cluster_id}")
        keys = c.key_index
        ind = (vectors[:, keys] == a).astype(float)
        # each support vector appears once, so plain sums over rows are the sums over s
        total += (k.spread + float(np.sum(_pair_terms(Y, ind, keys, c.n, k)))) / c.size_s**2
    return total / frame.K**2


@dataclass
class LipschitzEstimate:
    upper: float
    per_cluster: np.ndarray
    warnings: list[str]

    @property
    def interval(self) -> tuple[float, float]:
        return (0.0, self.upper)


def lipschitz_bound_hat(
    frame: ExperimentFrame, designs, a: int, observed: Observed, spec: LipschitzSpec, laws=None
) -> LipschitzEstimate:
    """HT plug-in of the bound; its expectation equals the bound."""
    _check(frame, designs, laws)
    per = np.zeros(frame.K)
    notes: list[str] = []
    for idx, (c, f) in enumerate(zip(frame, designs)):
        k = _constants(c, f, a, spec)
        A = observed.assignments[idx]
        y = observed.outcomes[idx]
        notes += _warn_bound(y, spec, f"cluster {c.cluster_id}")
        keys = c.key_index
        ind = (A[keys] == a).astype(float)
        fa = f.pmf(A)
        est = float(_pair_terms(y[None, :], ind[None, :], keys, c.n, k)[0]) / fa
        per[idx] = (k.spread + est) / (c.size_s**2 * frame.K**2)
    return LipschitzEstimate(float(per.sum()), per, notes)
