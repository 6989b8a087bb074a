"""Experiment structure: clusters, unit rosters, key-unit map and observed data."""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property
from typing import Any, Mapping, Sequence

import numpy as np

from .errors import IntegrityError, SchemaError


@dataclass(frozen=True, eq=False)
class ClusterFrame:
    """One cluster. ``key_sets[j]`` holds roster indices of target j's key units."""

    cluster_id: str
    intervention_units: tuple[str, ...]
    non_intervention_units: tuple[str, ...]
    target_units: tuple[str, ...]
    key_sets: tuple[tuple[int, ...], ...]
    covariates: Mapping[str, Mapping[str, Any]] = field(default_factory=dict)

    def __post_init__(self):
        for name in ("intervention_units", "non_intervention_units", "target_units"):
            object.__setattr__(self, name, tuple(str(u) for u in getattr(self, name)))
        object.__setattr__(self, "key_sets", tuple(tuple(sorted(set(int(i) for i in ks))) for ks in self.key_sets))
        if self.n < 1:
            raise SchemaError(f"cluster {self.cluster_id} has no intervention units")
        overlap = set(self.intervention_units) & set(self.non_intervention_units)
        if overlap:
            raise IntegrityError(f"cluster {self.cluster_id}: units {sorted(overlap)} listed as both eligible and ineligible")
        roster = set(self.intervention_units) | set(self.non_intervention_units)
        stray = [u for u in self.target_units if u not in roster]
        if stray:
            raise IntegrityError(f"cluster {self.cluster_id}: target units {stray} not on the roster")
        if len(set(self.target_units)) != len(self.target_units):
            raise IntegrityError(f"cluster {self.cluster_id}: duplicate target units")
        if len(self.key_sets) != len(self.target_units):
            raise IntegrityError(f"cluster {self.cluster_id}: {len(self.key_sets)} key sets for {len(self.target_units)} targets")
        for j, ks in enumerate(self.key_sets):
            if not ks:
                raise IntegrityError(f"cluster {self.cluster_id}: target {self.target_units[j]} has no key unit")
            if ks[0] < 0 or ks[-1] >= self.n:
                raise IntegrityError(f"cluster {self.cluster_id}: key index out of range for {self.target_units[j]}")

    @classmethod
    def single_key(cls, cluster_id, n: int, keys: Sequence[int], covariates=None, prefix: str = "i"):
        """Bipartite cluster: n intervention units and one ineligible target per entry of ``keys``."""
        units = tuple(f"{prefix}{i}" for i in range(n))
        targets = tuple(f"o{j}" for j in range(len(keys)))
        return cls(str(cluster_id), units, targets, targets, tuple((int(k),) for k in keys), covariates or {})

    @property
    def n(self) -> int:
        return len(self.intervention_units)

    @property
    def m(self) -> int:
        return len(self.non_intervention_units)

    @property
    def size_s(self) -> int:
        return len(self.target_units)

    @cached_property
    def is_single_key(self) -> bool:
        return all(len(ks) == 1 for ks in self.key_sets)

    @cached_property
    def key_index(self) -> np.ndarray:
        if not self.is_single_key:
            raise SchemaError(f"cluster {self.cluster_id} has targets with several key units")
        return np.array([ks[0] for ks in self.key_sets], dtype=np.intp)

    @cached_property
    def D(self) -> np.ndarray:
        """Number of targets whose key set contains each intervention unit."""
        out = np.zeros(self.n)
        for ks in self.key_sets:
            for i in ks:
                out[i] += 1
        return out

    @cached_property
    def distinct_key_sets(self) -> tuple[tuple[int, ...], ...]:
        seen: dict[tuple[int, ...], None] = {}
        for ks in self.key_sets:
            seen.setdefault(ks, None)
        return tuple(seen)

    @cached_property
    def key_set_index(self) -> np.ndarray:
        pos = {ks: g for g, ks in enumerate(self.distinct_key_sets)}
        return np.array([pos[ks] for ks in self.key_sets], dtype=np.intp)

    def pool(self, values) -> np.ndarray:
        """Sum target-level values over targets sharing a key unit (single-key maps)."""
        return np.bincount(self.key_index, weights=np.asarray(values, dtype=float), minlength=self.n)

    def pool_by_key_set(self, values) -> np.ndarray:
        """Sum target-level values over targets sharing the same key set."""
        return np.bincount(
            self.key_set_index, weights=np.asarray(values, dtype=float), minlength=len(self.distinct_key_sets)
        )

    def covariate(self, name: str) -> list:
        out = []
        for u in self.intervention_units:
            row = self.covariates.get(u, {})
            if name not in row:
                raise SchemaError(f"cluster {self.cluster_id}: unit {u} lacks covariate {name!r}")
            out.append(row[name])
        return out

    def group_members(self, name: str) -> tuple[int, ...]:
        flags = self.covariate(name)
        return tuple(i for i, v in enumerate(flags) if _truthy(v))


def _truthy(v) -> bool:
    if isinstance(v, str):
        return v.strip().lower() in ("1", "true", "yes")
    return bool(v) and v == v


@dataclass(frozen=True, eq=False)
class ExperimentFrame:
    clusters: tuple[ClusterFrame, ...]

    def __post_init__(self):
        object.__setattr__(self, "clusters", tuple(self.clusters))
        if not self.clusters:
            raise SchemaError("an experiment needs at least one cluster")
        ids = [c.cluster_id for c in self.clusters]
        if len(set(ids)) != len(ids):
            raise IntegrityError("duplicate cluster identifiers")

    @property
    def K(self) -> int:
        return len(self.clusters)

    def __iter__(self):
        return iter(self.clusters)

    def __len__(self):
        return len(self.clusters)

    def __getitem__(self, k: int) -> ClusterFrame:
        return self.clusters[k]


@dataclass(eq=False)
class Observed:
    """Realized assignment (roster order) and target outcomes per cluster."""

    assignments: list[np.ndarray]
    outcomes: list[np.ndarray]

    def __post_init__(self):
        self.assignments = [np.asarray(a, dtype=np.int8) for a in self.assignments]
        self.outcomes = [np.asarray(y, dtype=float) for y in self.outcomes]

    def validate(self, frame: ExperimentFrame) -> None:
        if len(self.assignments) != frame.K or len(self.outcomes) != frame.K:
            raise IntegrityError("observed data must cover every cluster")
        for c, a, y in zip(frame, self.assignments, self.outcomes):
            if a.shape != (c.n,):
                raise IntegrityError(f"cluster {c.cluster_id}: assignment length {a.shape[0]} != {c.n}")
            if not np.all((a == 0) | (a == 1)):
                raise IntegrityError(f"cluster {c.cluster_id}: assignment entries must be 0/1")
            if y.shape != (c.size_s,):
                raise IntegrityError(f"cluster {c.cluster_id}: {y.shape[0]} outcomes for {c.size_s} targets")
            if not np.all(np.isfinite(y)):
                raise IntegrityError(f"cluster {c.cluster_id}: missing or non-finite outcomes")
