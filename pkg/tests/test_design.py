import itertools
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from netinfer.design import (
    Bernoulli,
    CompleteRandomization,
    CountConstraint,
    Explicit,
    GroupProportion,
    Intervention,
    KeyProportion,
    KeyTreated,
    StratifiedRandomization,
    check_overlap,
    target_count,
)
from netinfer.errors import DegenerateConditioningError, EnumerationInfeasible, OverlapError, StructuralError
from netinfer.frame import ClusterFrame


def brute(design):
    """Support and probabilities over the full cube, from pmf alone."""
    cube = np.array(list(itertools.product((0, 1), repeat=design.n)), dtype=np.int8)
    p = design.pmf_many(cube)
    return cube[p > 0], p[p > 0]


# -- pmf / marginals / joints ------------------------------------------------


def test_pmf_examples():
    cr = CompleteRandomization(4, 2)
    assert cr.pmf((1, 1, 0, 0)) == pytest.approx(1 / 6)
    assert cr.pmf((1, 1, 1, 0)) == 0
    assert Bernoulli.uniform(3, 0.5).pmf((1, 0, 1)) == pytest.approx(0.125)


def test_pmf_length_mismatch():
    with pytest.raises(StructuralError):
        CompleteRandomization(4, 2).pmf((1, 0))


def test_marginals_and_joints():
    cr = CompleteRandomization(4, 2)
    assert cr.marginal(0, 1) == pytest.approx(0.5)
    assert Bernoulli.uniform(5, 0.3).marginal(3, 1) == pytest.approx(0.3)
    assert Explicit.from_mapping({(1, 0): 0.7, (0, 1): 0.3}).marginal(0, 1) == pytest.approx(0.7)
    assert cr.pairwise_joint(0, 1, 1, 1) == pytest.approx(1 / 6)
    assert cr.pairwise_joint(0, 1, 1, 0) == pytest.approx(1 / 3)
    assert Bernoulli.uniform(2, 0.5).pairwise_joint(0, 1, 1, 1) == pytest.approx(0.25)
    with pytest.raises(StructuralError):
        cr.pairwise_joint(2, 2, 1, 1)


def test_conditionals():
    assert CompleteRandomization(2, 1).conditional_pmf({1: 0}, {0: 1}) == pytest.approx(1.0)
    assert CompleteRandomization(4, 2).conditional_pmf({1: 0, 2: 1, 3: 0}, {0: 1}) == pytest.approx(1 / 3)
    assert Bernoulli.uniform(3, 0.5).conditional_pmf({1: 0, 2: 1}, {0: 1}) == pytest.approx(0.25)
    with pytest.raises(DegenerateConditioningError):
        CompleteRandomization(2, 0).conditional_pmf({1: 0}, {0: 1})


def test_support_enumeration():
    v, p = CompleteRandomization(4, 2).support()
    assert len(v) == 6 and np.allclose(p, 1 / 6)
    v, p = Bernoulli.uniform(3, 0.5).support()
    assert len(v) == 8 and np.allclose(p, 0.125)
    with pytest.raises(EnumerationInfeasible):
        CompleteRandomization(25, 12).support()


def test_sampling_is_seeded():
    d = CompleteRandomization(2, 1)
    a = d.sample(7)
    assert tuple(a) in {(1, 0), (0, 1)}
    assert np.array_equal(a, d.sample(7))


def test_sampling_frequencies():
    d = CompleteRandomization(4, 2)
    rng = np.random.default_rng(123)
    counts = {}
    for _ in range(100_000):
        key = tuple(d.sample(rng))
        counts[key] = counts.get(key, 0) + 1
    assert len(counts) == 6
    for c in counts.values():
        assert abs(c / 100_000 - 1 / 6) <= 0.005


# -- restriction and rules -----------------------------------------------------


def test_restrict_examples():
    r = CompleteRandomization(2, 1).restrict(CountConstraint.fixed(0, 1))
    v, p = r.support()
    assert [tuple(x) for x in v] == [(1, 0)] and p[0] == pytest.approx(1.0)

    r = CompleteRandomization(4, 2).restrict(KeyProportion(0.5).constraint((0, 1)))
    v, p = r.support()
    assert len(v) == 4 and np.allclose(p, 0.25)
    assert all(x[0] + x[1] == 1 for x in v)

    r = Bernoulli.uniform(2, 0.5).restrict(CountConstraint.fixed(0, 1))
    v, p = r.support()
    assert sorted(map(tuple, v)) == [(1, 0), (1, 1)] and np.allclose(p, 0.5)


def test_empty_restriction_is_overlap_error():
    with pytest.raises(OverlapError):
        CompleteRandomization(2, 1).restrict(CountConstraint((0, 1), 2))


def test_key_proportion_rounding():
    assert target_count(3, 0.5) == 2
    assert target_count(4, 0.5) == 2
    assert target_count(3, 1 / 3) == 1


def test_key_proportion_impossible_under_design():
    cluster = ClusterFrame("c", ("i1", "i2"), ("o",), ("o",), ((0, 1),))
    iv = Intervention((CompleteRandomization(2, 1),), KeyProportion(1.0))
    with pytest.raises(OverlapError):
        iv.unit_law(0, cluster, (0, 1))


def test_group_proportion_empty_group():
    c = ClusterFrame("c", ("i0", "i1"), (), ("i0",), ((0,),), {"i0": {"g": 0}, "i1": {"g": 0}})
    with pytest.raises(OverlapError):
        GroupProportion("g", 0.5).constraint((0,), c)
    assert GroupProportion("g", 0.0).constraint((0,), c) is None


def test_overlap_check():
    check_overlap(CompleteRandomization(4, 2), Bernoulli.uniform(4, 0.5))
    with pytest.raises(OverlapError):
        check_overlap(Bernoulli.uniform(4, 0.5), CompleteRandomization(4, 2))


def test_stratified_support():
    d = StratifiedRandomization.build(["a", "a", "b", "b", "b"], {"a": 1, "b": 2})
    v, p = d.support()
    assert len(v) == 2 * 3 and np.allclose(p, 1 / 6)
    assert all(x[0] + x[1] == 1 and x[2:].sum() == 2 for x in v)


# -- properties ----------------------------------------------------------------

designs = st.one_of(
    st.integers(1, 6).flatmap(lambda n: st.integers(0, n).map(lambda m: CompleteRandomization(n, m))),
    st.lists(st.floats(0.05, 0.95), min_size=1, max_size=6).map(lambda p: Bernoulli(tuple(p))),
    st.lists(st.sampled_from("ab"), min_size=2, max_size=6).flatmap(
        lambda lab: st.fixed_dictionaries({s: st.integers(0, lab.count(s)) for s in set(lab)}).map(
            lambda c, lab=lab: StratifiedRandomization.build(lab, c)
        )
    ),
)


@given(designs)
@settings(max_examples=60, deadline=None)
def test_support_matches_pmf(d):
    v, p = d.support()
    bv, bp = brute(d)
    assert math.isclose(p.sum(), 1.0, rel_tol=1e-12)
    assert sorted(map(tuple, v)) == sorted(map(tuple, bv))
    assert d.support_size() == len(v)


@given(designs, st.data())
@settings(max_examples=60, deadline=None)
def test_marginals_match_enumeration(d, data):
    v, p = brute(d)
    i = data.draw(st.integers(0, d.n - 1))
    assert d.marginal(i, 1) == pytest.approx(float(p[v[:, i] == 1].sum()), abs=1e-12)
    if d.n >= 2:
        j = data.draw(st.integers(0, d.n - 1).filter(lambda x: x != i))
        a, b = data.draw(st.integers(0, 1)), data.draw(st.integers(0, 1))
        expect = float(p[(v[:, i] == a) & (v[:, j] == b)].sum())
        assert d.pairwise_joint(i, j, a, b) == pytest.approx(expect, abs=1e-12)


@given(designs, st.integers(0, 2**31))
@settings(max_examples=60, deadline=None)
def test_samples_lie_in_support(d, seed):
    assert d.pmf(d.sample(seed)) > 0


@given(designs, st.data())
@settings(max_examples=60, deadline=None)
def test_restriction_is_conditioning(d, data):
    i = data.draw(st.integers(0, d.n - 1))
    a = data.draw(st.integers(0, 1))
    c = CountConstraint.fixed(i, a)
    mass = d.marginal(i, a)
    if mass == 0:
        with pytest.raises(OverlapError):
            d.restrict(c)
        return
    r = d.restrict(c)
    v, p = brute(d)
    keep = v[:, i] == a
    assert np.allclose(r.pmf_many(v[keep]), p[keep] / mass)
    assert np.all(r.pmf_many(v[~keep]) == 0)
    assert d.prob(KeyTreated(a).constraint((i,))) == pytest.approx(mass)
