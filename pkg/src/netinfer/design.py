"""Probability laws over the binary assignment vector of one cluster.

Every law answers the same questions: the pmf of a vector, the probability of
an event built from count constraints, support enumeration and sampling.
Complete, stratified and Bernoulli laws use closed forms. Restricted and
explicit laws go through enumeration or the base law's closed forms.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from fractions import Fraction
from functools import lru_cache
from typing import ClassVar, Iterator, Mapping, Sequence

import numpy as np

from .errors import (
    DegenerateConditioningError,
    EnumerationInfeasible,
    OverlapError,
    SchemaError,
    StructuralError,
)

DEFAULT_SUPPORT_CAP = 2**20


def target_count(size: int, proportion: float) -> int:
    """Nearest integer to size * proportion, ties rounded away from zero."""
    q = Fraction(str(proportion)) * size
    if q < 0:
        return -math.floor(-q + Fraction(1, 2))
    return math.floor(q + Fraction(1, 2))


def as_rng(seed) -> np.random.Generator:
    if isinstance(seed, np.random.Generator):
        return seed
    return np.random.default_rng(seed)


# ---------------------------------------------------------------------------
# Events
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class CountConstraint:
    """Exactly ``count`` units among ``units`` are treated."""

    units: tuple[int, ...]
    count: int

    def __post_init__(self):
        units = tuple(sorted(set(int(u) for u in self.units)))
        if not units:
            raise StructuralError("count constraint over an empty unit set")
        object.__setattr__(self, "units", units)
        object.__setattr__(self, "count", int(self.count))

    @classmethod
    def fixed(cls, i: int, a: int) -> "CountConstraint":
        return cls((i,), a)

    def holds(self, vectors: np.ndarray) -> np.ndarray:
        vectors = np.atleast_2d(vectors)
        return vectors[:, list(self.units)].sum(axis=1) == self.count


Event = tuple[CountConstraint, ...]


def make_event(constraints) -> Event:
    if constraints is None:
        return ()
    if isinstance(constraints, CountConstraint):
        constraints = (constraints,)
    return tuple(sorted(set(constraints), key=lambda c: (c.units, c.count)))


def fixed_event(values: Mapping[int, int]) -> Event:
    return make_event(CountConstraint.fixed(i, a) for i, a in values.items())


def _singleton_values(event: Event) -> dict[int, int] | None:
    """Fixed values when every constraint pins a single unit; None otherwise.

    Returns an empty dict with key -1 set when the pins contradict each other.
    """
    values: dict[int, int] = {}
    for c in event:
        if len(c.units) != 1:
            return None
        (i,) = c.units
        if c.count not in (0, 1) or values.get(i, c.count) != c.count:
            return {-1: -1}
        values[i] = c.count
    return values


def _atoms(event: Event) -> tuple[tuple[tuple[int, ...], ...], list[list[int]]]:
    """Split the units touched by ``event`` into atoms of equal membership."""
    groups: dict[tuple[bool, ...], list[int]] = {}
    touched = sorted(set().union(*(c.units for c in event)))
    for u in touched:
        sig = tuple(u in c.units for c in event)
        groups.setdefault(sig, []).append(u)
    sigs = list(groups)
    atoms = tuple(tuple(groups[s]) for s in sigs)
    membership = [[k for k, s in enumerate(sigs) if s[ci]] for ci in range(len(event))]
    return atoms, membership


def _event_from_law(law: dict, membership: list[list[int]], event: Event) -> float:
    total = 0.0
    for counts, p in law.items():
        if all(sum(counts[k] for k in mem) == c.count for mem, c in zip(membership, event)):
            total += p
    return total


def _cr_count_law(sizes: Sequence[int], n: int, m: int) -> dict[tuple[int, ...], float]:
    rest = n - sum(sizes)
    denom = math.comb(n, m)
    law = {}
    for counts in itertools.product(*(range(s + 1) for s in sizes)):
        left = m - sum(counts)
        if left < 0 or left > rest:
            continue
        ways = math.comb(rest, left)
        for s, x in zip(sizes, counts):
            ways *= math.comb(s, x)
        if ways:
            law[counts] = ways / denom
    return law


def _convolve(a: dict, b: dict) -> dict:
    out: dict[tuple[int, ...], float] = {}
    for ka, pa in a.items():
        for kb, pb in b.items():
            key = tuple(x + y for x, y in zip(ka, kb))
            out[key] = out.get(key, 0.0) + pa * pb
    return out


# ---------------------------------------------------------------------------
# Laws
# ---------------------------------------------------------------------------


class AssignmentDistribution:
    """Common interface; concrete laws are frozen dataclasses."""

    kind: ClassVar[str] = "abstract"
    n: int

    # -- evaluation ---------------------------------------------------------
    def _check_vector(self, a) -> np.ndarray:
        v = np.asarray(a)
        if v.ndim != 1 or v.shape[0] != self.n:
            raise StructuralError(f"assignment of length {v.shape[0] if v.ndim else 0}, expected {self.n}")
        if not np.all((v == 0) | (v == 1)):
            raise StructuralError("assignment entries must be 0 or 1")
        return v.astype(np.int8)

    def pmf(self, a) -> float:
        v = self._check_vector(a)
        return float(self.pmf_many(v[None, :])[0])

    def pmf_many(self, vectors: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def prob(self, event) -> float:
        """P(all constraints in ``event`` hold)."""
        event = make_event(event)
        if not event:
            return 1.0
        for c in event:
            if max(c.units) >= self.n:
                raise StructuralError(f"unit index {max(c.units)} out of range for n={self.n}")
        return _prob_cached(self, event)

    def _prob(self, event: Event) -> float:
        atoms, membership = _atoms(event)
        return _event_from_law(self.count_law(atoms), membership, event)

    def count_law(self, atoms) -> dict[tuple[int, ...], float]:
        """Joint law of treated counts over disjoint unit sets (by enumeration)."""
        vectors, probs = self.support()
        law: dict[tuple[int, ...], float] = {}
        sums = np.stack([vectors[:, list(a)].sum(axis=1) for a in atoms], axis=1)
        for row, p in zip(map(tuple, sums.tolist()), probs):
            law[row] = law.get(row, 0.0) + float(p)
        return law

    def marginal(self, i: int, a: int) -> float:
        self._check_index(i)
        return self.prob(fixed_event({i: a}))

    def pairwise_joint(self, i: int, j: int, a: int, b: int) -> float:
        self._check_index(i)
        self._check_index(j)
        if i == j:
            raise StructuralError("pairwise_joint needs two distinct units")
        return self.prob(fixed_event({i: a, j: b}))

    def conditional_pmf(self, rest: Mapping[int, int], given: Mapping[int, int]) -> float:
        """P(A_rest = rest | A_given = given); the two index sets must partition the units."""
        idx_r, idx_g = set(rest), set(given)
        if idx_r & idx_g or idx_r | idx_g != set(range(self.n)):
            raise StructuralError("rest and given must partition the unit indices")
        p_given = self.prob(fixed_event(given))
        if p_given <= 0.0:
            raise DegenerateConditioningError("conditioning event has probability zero")
        full = np.zeros(self.n, dtype=np.int8)
        for i, a in {**rest, **given}.items():
            full[i] = a
        return self.pmf(full) / p_given

    def _check_index(self, i: int) -> None:
        if not 0 <= i < self.n:
            raise StructuralError(f"unit index {i} out of range for n={self.n}")

    # -- support ------------------------------------------------------------
    def support_size(self) -> int:
        raise NotImplementedError

    def _support(self) -> tuple[np.ndarray, np.ndarray]:
        raise NotImplementedError

    def support(self, cap: int = DEFAULT_SUPPORT_CAP) -> tuple[np.ndarray, np.ndarray]:
        """All support vectors (rows) and their probabilities."""
        size = self.support_size()
        if size > cap:
            raise EnumerationInfeasible(f"support of {size} vectors exceeds cap {cap}")
        return _support_cached(self)

    def enumerate_support(self, cap: int = DEFAULT_SUPPORT_CAP) -> Iterator[tuple[np.ndarray, float]]:
        vectors, probs = self.support(cap)
        for v, p in zip(vectors, probs):
            yield v.copy(), float(p)

    def sample(self, seed) -> np.ndarray:
        raise NotImplementedError

    # -- structure ----------------------------------------------------------
    @property
    def fixed_total(self) -> int | None:
        """Treated count shared by every support vector, if there is one."""
        return None

    @property
    def uniform_mass(self) -> float | None:
        """Common probability of support vectors when the law is uniform on its support."""
        return None

    def restrict(self, constraints) -> "AssignmentDistribution":
        law = self
        for c in make_event(constraints):
            law = law if _restricted_by(law, c) else Restricted(law, c)
        return law


@lru_cache(maxsize=1 << 16)
def _prob_cached(dist: AssignmentDistribution, event: Event) -> float:
    return dist._prob(event)


@lru_cache(maxsize=256)
def _support_cached(dist: AssignmentDistribution) -> tuple[np.ndarray, np.ndarray]:
    vectors, probs = dist._support()
    vectors.setflags(write=False)
    probs.setflags(write=False)
    return vectors, probs


def _restricted_by(law, c: CountConstraint) -> bool:
    while isinstance(law, Restricted):
        if law.constraint == c:
            return True
        law = law.base
    return False


def _combination_rows(n: int, m: int) -> np.ndarray:
    rows = np.zeros((math.comb(n, m), n), dtype=np.int8)
    for r, idx in enumerate(itertools.combinations(range(n), m)):
        rows[r, list(idx)] = 1
    return rows


@dataclass(frozen=True)
class CompleteRandomization(AssignmentDistribution):
    """Uniform over vectors with exactly ``n_treated`` ones."""

    n: int
    n_treated: int
    kind: ClassVar[str] = "complete"

    def __post_init__(self):
        if self.n < 1 or not 0 <= self.n_treated <= self.n:
            raise SchemaError(f"complete randomization needs 0 <= n_treated <= n, got {self.n_treated}/{self.n}")

    def pmf_many(self, vectors):
        vectors = np.atleast_2d(vectors)
        ok = vectors.sum(axis=1) == self.n_treated
        return np.where(ok, 1.0 / math.comb(self.n, self.n_treated), 0.0)

    def _prob(self, event):
        fixed = _singleton_values(event)
        if fixed is None:
            return super()._prob(event)
        if -1 in fixed:
            return 0.0
        u = sum(fixed.values())
        v = len(fixed) - u
        left = self.n_treated - u
        if left < 0 or left > self.n - u - v:
            return 0.0
        return math.comb(self.n - u - v, left) / math.comb(self.n, self.n_treated)

    def marginal(self, i, a):
        self._check_index(i)
        p = self.n_treated / self.n
        return p if a == 1 else 1.0 - p

    def count_law(self, atoms):
        return _cr_count_law([len(a) for a in atoms], self.n, self.n_treated)

    def support_size(self):
        return math.comb(self.n, self.n_treated)

    def _support(self):
        rows = _combination_rows(self.n, self.n_treated)
        return rows, np.full(len(rows), 1.0 / len(rows))

    def sample(self, seed):
        rng = as_rng(seed)
        out = np.zeros(self.n, dtype=np.int8)
        out[rng.permutation(self.n)[: self.n_treated]] = 1
        return out

    @property
    def fixed_total(self):
        return self.n_treated

    @property
    def uniform_mass(self):
        return 1.0 / math.comb(self.n, self.n_treated)


@dataclass(frozen=True)
class StratifiedRandomization(AssignmentDistribution):
    """Independent complete randomization inside each stratum."""

    labels: tuple[str, ...]
    n_treated: tuple[tuple[str, int], ...]
    kind: ClassVar[str] = "stratified"
    n: int = field(init=False)

    def __post_init__(self):
        labels = tuple(str(x) for x in self.labels)
        treated = tuple(sorted((str(k), int(v)) for k, v in dict(self.n_treated).items()))
        object.__setattr__(self, "labels", labels)
        object.__setattr__(self, "n_treated", treated)
        object.__setattr__(self, "n", len(labels))
        counts = dict(treated)
        for lab, idx in self.strata.items():
            if lab not in counts:
                raise SchemaError(f"no treated count given for stratum {lab!r}")
            if not 0 <= counts[lab] <= len(idx):
                raise SchemaError(f"stratum {lab!r} has {len(idx)} units, cannot treat {counts[lab]}")
        if self.n < 1:
            raise SchemaError("stratified design over zero units")

    @classmethod
    def build(cls, labels: Sequence, n_treated: Mapping) -> "StratifiedRandomization":
        return cls(tuple(str(x) for x in labels), tuple((str(k), int(v)) for k, v in n_treated.items()))

    @property
    def strata(self) -> dict[str, tuple[int, ...]]:
        return _strata(self.labels)

    @property
    def _counts(self) -> dict[str, int]:
        return dict(self.n_treated)

    def pmf_many(self, vectors):
        vectors = np.atleast_2d(vectors)
        ok = np.ones(len(vectors), dtype=bool)
        for lab, idx in self.strata.items():
            ok &= vectors[:, list(idx)].sum(axis=1) == self._counts[lab]
        return np.where(ok, self.uniform_mass, 0.0)

    def _prob(self, event):
        fixed = _singleton_values(event)
        if fixed is None:
            return super()._prob(event)
        if -1 in fixed:
            return 0.0
        counts = self._counts
        p = 1.0
        for lab, idx in self.strata.items():
            inside = [fixed[i] for i in idx if i in fixed]
            if not inside:
                continue
            u = sum(inside)
            v = len(inside) - u
            left = counts[lab] - u
            if left < 0 or left > len(idx) - u - v:
                return 0.0
            p *= math.comb(len(idx) - u - v, left) / math.comb(len(idx), counts[lab])
        return p

    def count_law(self, atoms):
        law = {tuple(0 for _ in atoms): 1.0}
        counts = self._counts
        for lab, idx in self.strata.items():
            members = set(idx)
            sizes = [len(members.intersection(a)) for a in atoms]
            law = _convolve(law, _cr_count_law(sizes, len(idx), counts[lab]))
        return law

    def support_size(self):
        counts = self._counts
        return math.prod(math.comb(len(idx), counts[lab]) for lab, idx in self.strata.items())

    def _support(self):
        counts = self._counts
        blocks = []
        for lab, idx in self.strata.items():
            blocks.append((idx, _combination_rows(len(idx), counts[lab])))
        total = self.support_size()
        rows = np.zeros((total, self.n), dtype=np.int8)
        for r, combo in enumerate(itertools.product(*(range(len(b)) for _, b in blocks))):
            for (idx, b), c in zip(blocks, combo):
                rows[r, list(idx)] = b[c]
        return rows, np.full(total, 1.0 / total)

    def sample(self, seed):
        rng = as_rng(seed)
        out = np.zeros(self.n, dtype=np.int8)
        counts = self._counts
        for lab, idx in self.strata.items():
            pick = rng.permutation(len(idx))[: counts[lab]]
            out[np.asarray(idx)[pick]] = 1
        return out

    @property
    def fixed_total(self):
        return sum(self._counts[lab] for lab in self.strata)

    @property
    def uniform_mass(self):
        return 1.0 / self.support_size()


@lru_cache(maxsize=4096)
def _strata(labels: tuple[str, ...]) -> dict[str, tuple[int, ...]]:
    out: dict[str, list[int]] = {}
    for i, lab in enumerate(labels):
        out.setdefault(lab, []).append(i)
    return {k: tuple(v) for k, v in sorted(out.items())}


@dataclass(frozen=True)
class Bernoulli(AssignmentDistribution):
    """Independent treatment of unit i with probability p[i]."""

    p: tuple[float, ...]
    kind: ClassVar[str] = "bernoulli"
    n: int = field(init=False)

    def __post_init__(self):
        p = tuple(float(x) for x in self.p)
        if not p or any(not 0.0 <= x <= 1.0 for x in p):
            raise SchemaError("bernoulli probabilities must lie in [0, 1]")
        object.__setattr__(self, "p", p)
        object.__setattr__(self, "n", len(p))

    @classmethod
    def uniform(cls, n: int, p: float) -> "Bernoulli":
        return cls(tuple([float(p)] * n))

    def pmf_many(self, vectors):
        vectors = np.atleast_2d(vectors)
        p = np.asarray(self.p)
        probs = np.where(vectors == 1, p, 1.0 - p)
        return probs.prod(axis=1)

    def _prob(self, event):
        fixed = _singleton_values(event)
        if fixed is None:
            return super()._prob(event)
        if -1 in fixed:
            return 0.0
        out = 1.0
        for i, a in fixed.items():
            out *= self.p[i] if a == 1 else 1.0 - self.p[i]
        return out

    def count_law(self, atoms):
        law = {(): 1.0}
        for atom in atoms:
            dist = np.array([1.0])
            for i in atom:
                dist = np.convolve(dist, [1.0 - self.p[i], self.p[i]])
            law = {k + (x,): pk * float(px) for k, pk in law.items() for x, px in enumerate(dist) if px > 0}
        return law

    @property
    def _free(self) -> list[int]:
        return [i for i, x in enumerate(self.p) if 0.0 < x < 1.0]

    def support_size(self):
        return 2 ** len(self._free)

    def _support(self):
        free = self._free
        rows = np.zeros((2 ** len(free), self.n), dtype=np.int8)
        rows[:, [i for i, x in enumerate(self.p) if x == 1.0]] = 1
        for r, bits in enumerate(itertools.product((0, 1), repeat=len(free))):
            rows[r, free] = bits
        return rows, self.pmf_many(rows)

    def sample(self, seed):
        rng = as_rng(seed)
        return (rng.random(self.n) < np.asarray(self.p)).astype(np.int8)

    @property
    def fixed_total(self):
        return int(sum(self.p)) if not self._free else None

    @property
    def uniform_mass(self):
        free = [self.p[i] for i in self._free]
        return 0.5 ** len(free) if all(x == 0.5 for x in free) else None


@dataclass(frozen=True)
class Explicit(AssignmentDistribution):
    """A user-supplied table of (vector, probability) pairs."""

    table: tuple[tuple[tuple[int, ...], float], ...]
    kind: ClassVar[str] = "explicit"
    n: int = field(init=False)

    def __post_init__(self):
        rows = tuple((tuple(int(x) for x in v), float(p)) for v, p in self.table)
        if not rows:
            raise SchemaError("explicit design needs at least one row")
        n = len(rows[0][0])
        seen = set()
        for v, p in rows:
            if len(v) != n or any(x not in (0, 1) for x in v):
                raise SchemaError("explicit design rows must be binary vectors of one length")
            if p < 0:
                raise SchemaError("explicit design probabilities must be nonnegative")
            if v in seen:
                raise SchemaError(f"duplicate row {v} in explicit design")
            seen.add(v)
        if abs(sum(p for _, p in rows) - 1.0) > 1e-12:
            raise SchemaError("explicit design probabilities must sum to 1")
        object.__setattr__(self, "table", rows)
        object.__setattr__(self, "n", n)

    @classmethod
    def from_mapping(cls, table: Mapping) -> "Explicit":
        return cls(tuple((tuple(k), v) for k, v in table.items()))

    def pmf_many(self, vectors):
        lookup = dict(self.table)
        return np.array([lookup.get(tuple(int(x) for x in row), 0.0) for row in np.atleast_2d(vectors)])

    def support_size(self):
        return sum(1 for _, p in self.table if p > 0)

    def _support(self):
        rows = [(v, p) for v, p in self.table if p > 0]
        return np.array([v for v, _ in rows], dtype=np.int8), np.array([p for _, p in rows])

    def sample(self, seed):
        rng = as_rng(seed)
        vectors, probs = self.support()
        return vectors[rng.choice(len(vectors), p=probs / probs.sum())].copy()

    @property
    def fixed_total(self):
        totals = {sum(v) for v, p in self.table if p > 0}
        return totals.pop() if len(totals) == 1 else None

    @property
    def uniform_mass(self):
        probs = {p for _, p in self.table if p > 0}
        return probs.pop() if len(probs) == 1 else None


@dataclass(frozen=True)
class Restricted(AssignmentDistribution):
    """The base law conditioned on one count constraint."""

    base: AssignmentDistribution
    constraint: CountConstraint
    kind: ClassVar[str] = "restricted"
    n: int = field(init=False)
    mass: float = field(init=False, compare=False, repr=False)

    def __post_init__(self):
        object.__setattr__(self, "n", self.base.n)
        mass = self.base.prob((self.constraint,))
        if mass <= 0.0:
            raise OverlapError(
                f"restriction to {len(self.constraint.units)} unit(s) with {self.constraint.count} treated is empty"
            )
        object.__setattr__(self, "mass", mass)

    def pmf_many(self, vectors):
        vectors = np.atleast_2d(vectors)
        return self.base.pmf_many(vectors) * self.constraint.holds(vectors) / self.mass

    def _prob(self, event):
        return self.base.prob(event + (self.constraint,)) / self.mass

    def support_size(self):
        if self.base.uniform_mass is not None:
            return int(round(self.mass * self.base.support_size()))
        return int(self.constraint.holds(self.base.support()[0]).sum())

    def _support(self):
        vectors, probs = self.base.support(max(self.base.support_size(), 1))
        keep = self.constraint.holds(vectors)
        return vectors[keep].copy(), probs[keep] / self.mass

    def sample(self, seed):
        rng = as_rng(seed)
        if self.mass > 1e-3:
            for _ in range(50_000):
                v = self.base.sample(rng)
                if self.constraint.holds(v)[0]:
                    return v
        vectors, probs = self.support()
        return vectors[rng.choice(len(vectors), p=probs / probs.sum())].copy()

    @property
    def fixed_total(self):
        return self.base.fixed_total

    @property
    def uniform_mass(self):
        u = self.base.uniform_mass
        return None if u is None else u / self.mass


# ---------------------------------------------------------------------------
# Support relations
# ---------------------------------------------------------------------------


def support_within(p: AssignmentDistribution, q: AssignmentDistribution) -> bool | None:
    """True when supp(p) is contained in supp(q); None when it cannot be decided cheaply."""
    if p == q:
        return True
    if isinstance(q, Bernoulli) and not any(x in (0.0, 1.0) for x in q.p):
        return True
    if isinstance(q, CompleteRandomization) and p.fixed_total == q.n_treated:
        return True
    if isinstance(p, Restricted):
        inner = support_within(p.base, q)
        if inner:
            return True
        if isinstance(q, Restricted) and q.constraint == p.constraint:
            return support_within(p.base, q.base)
    if isinstance(p, Explicit):
        vectors, _ = p.support()
        return bool(np.all(q.pmf_many(vectors) > 0))
    return None


def check_overlap(law: AssignmentDistribution, design: AssignmentDistribution, cap: int = DEFAULT_SUPPORT_CAP) -> None:
    """Raise OverlapError unless every vector the law can produce has positive design probability."""
    if law.n != design.n:
        raise StructuralError(f"intervention over {law.n} units but design over {design.n}")
    verdict = support_within(law, design)
    if verdict is None:
        try:
            vectors, _ = law.support(cap)
        except EnumerationInfeasible as exc:
            raise OverlapError("could not verify that the intervention support lies inside the design support") from exc
        verdict = bool(np.all(design.pmf_many(vectors) > 0))
    if not verdict:
        raise OverlapError("intervention puts mass on assignments the design never produces")


# ---------------------------------------------------------------------------
# Admissible sets and interventions
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Unrestricted:
    kind: ClassVar[str] = "unrestricted"

    def constraint(self, keys: Sequence[int], cluster=None) -> CountConstraint | None:
        return None

    def to_dict(self) -> dict:
        return {"kind": self.kind}


@dataclass(frozen=True)
class KeyTreated:
    """All of a unit's key units sit in arm ``a``."""

    a: int
    kind: ClassVar[str] = "key_treated"

    def __post_init__(self):
        if self.a not in (0, 1):
            raise SchemaError("key_treated arm must be 0 or 1")

    def constraint(self, keys, cluster=None):
        return CountConstraint(tuple(keys), self.a * len(keys))

    def to_dict(self):
        return {"kind": self.kind, "a": self.a}


@dataclass(frozen=True)
class KeyProportion:
    """A share ``p_star`` of a unit's key units is treated (count rounded half away from zero)."""

    p_star: float
    kind: ClassVar[str] = "key_proportion"

    def __post_init__(self):
        if not 0.0 <= self.p_star <= 1.0:
            raise SchemaError("p_star must lie in [0, 1]")

    def constraint(self, keys, cluster=None):
        return CountConstraint(tuple(keys), target_count(len(keys), self.p_star))

    def to_dict(self):
        return {"kind": self.kind, "p_star": self.p_star}


@dataclass(frozen=True)
class GroupProportion:
    """A share ``alpha`` of the units flagged by ``group_field`` is treated."""

    group_field: str
    alpha: float
    kind: ClassVar[str] = "group_proportion"

    def __post_init__(self):
        if not 0.0 <= self.alpha <= 1.0:
            raise SchemaError("alpha must lie in [0, 1]")

    def constraint(self, keys, cluster=None):
        if cluster is None:
            raise StructuralError("group_proportion needs the cluster roster")
        members = cluster.group_members(self.group_field)
        if not members:
            if self.alpha == 0:
                return None
            raise OverlapError(f"group {self.group_field!r} is empty in cluster {cluster.cluster_id}")
        return CountConstraint(members, target_count(len(members), self.alpha))

    def to_dict(self):
        return {"kind": self.kind, "group_field": self.group_field, "alpha": self.alpha}


AdmissibleRule = Unrestricted | KeyTreated | KeyProportion | GroupProportion


@dataclass(frozen=True)
class Intervention:
    """Per-cluster base laws together with the admissible-set rule applied to each target unit."""

    laws: tuple[AssignmentDistribution, ...]
    admissible: AdmissibleRule = Unrestricted()

    def __post_init__(self):
        object.__setattr__(self, "laws", tuple(self.laws))

    def unit_law(self, k: int, cluster, keys: Sequence[int]) -> AssignmentDistribution:
        c = self.admissible.constraint(keys, cluster)
        return self.laws[k].restrict(c)

    def with_rule(self, rule: AdmissibleRule) -> "Intervention":
        return Intervention(self.laws, rule)
