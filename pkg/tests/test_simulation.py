import csv
import json

import numpy as np
import pytest

from netinfer.errors import SchemaError, UndefinedEstimateError
from netinfer.estimators import Estimand, point_estimate
from netinfer.simulation import (
    RESULT_COLUMNS,
    SimConfig,
    aggregate,
    generate_population,
    load_grid,
    outcome,
    run,
    run_replication,
    write_plot_data,
    write_results,
)
from netinfer.simulation import _draw, _observed

SMALL = SimConfig(K=4, n_k=8, m_k=10, reps=6, seed=5)


def test_outcome_models():
    assert outcome("M1", 1, 0.0, 0.0, 0) == pytest.approx(2.25)
    w1, w2, w3 = np.array([0.0, 0.0]), np.array([0.0, 0.0]), np.array([1, 0])
    for a in (0, 1):
        assert np.array_equal(outcome("M1", a, w1, w2, w3), outcome("M2", a, w1, w2, w3))


def test_config_validation():
    with pytest.raises(SchemaError):
        SimConfig(model="M3")
    with pytest.raises(SchemaError):
        SimConfig(n_k=6)


def test_population_truth_is_exact():
    pop = generate_population(SimConfig(K=4, n_k=8, m_k=10, reps=6, seed=5, intervention="pi2"))
    assert len(pop.frame) == 4 and all(c.n == 8 and c.size_s == 10 for c in pop.frame)
    mu1 = np.mean([y[:, 1].mean() for y in pop.potentials])
    assert pop.truth["mu1"] == pytest.approx(mu1)
    # stratified intervention: half of each W3 stratum treated
    for law, c in zip(pop.laws, pop.frame):
        a = law.sample(1)
        w3 = np.array([c.covariates[u]["W3"] for u in c.intervention_units])
        assert a[w3 == 1].sum() == 2 and a[w3 == 0].sum() == 2


def test_pi1_needs_no_redraws():
    pop, reps = run(SMALL)
    assert all(r.ok and r.redraws == 0 for r in reps)


def test_replay_is_deterministic():
    pop = generate_population(SMALL)
    assert run_replication(pop, 3).estimates == run_replication(pop, 3).estimates
    other = generate_population(SimConfig(K=4, n_k=8, m_k=10, reps=6, seed=6))
    assert not np.allclose(pop.potentials[0], other.potentials[0])


def test_zero_spread_flagged():
    pop = generate_population(SMALL)
    rep = run_replication(pop, 0)
    rows = aggregate(pop, [rep, rep])
    assert all(r.emp_se == 0 and r.flags == "zero_se" for r in rows)


def test_all_failed():
    pop = generate_population(SMALL)
    from netinfer.simulation import Replication

    with pytest.raises(UndefinedEstimateError):
        aggregate(pop, [Replication(0, 5, False, {})])


def test_grid_and_outputs(tmp_path):
    cfg = tmp_path / "grid.json"
    cfg.write_text(json.dumps({"K": [2, 3], "n_k": 8, "m_k": 4, "model": ["M1", "M2"], "reps": 3}))
    configs = load_grid(cfg, seed=1)
    assert len(configs) == 4 and {c.K for c in configs} == {2, 3}
    results = []
    rows = []
    for c in configs[:2]:
        pop, reps = run(c)
        agg = aggregate(pop, reps)
        rows += agg
        results.append((pop, reps, agg))
    write_results(rows, tmp_path / "r.csv")
    with open(tmp_path / "r.csv") as fh:
        data = list(csv.reader(fh))
    assert tuple(data[0]) == RESULT_COLUMNS and len(data) == 1 + 8
    write_plot_data(results, tmp_path / "plot")
    assert (tmp_path / "plot" / "metrics_long.csv").exists()
    with open(tmp_path / "plot" / "replications.csv") as fh:
        assert sum(1 for _ in fh) == 1 + 2 * 3 * 4


def test_unknown_grid_field(tmp_path):
    cfg = tmp_path / "g.json"
    cfg.write_text(json.dumps({"K": 2, "bogus": 1}))
    with pytest.raises(SchemaError):
        load_grid(cfg)


def test_hajek_consistency_direction():
    """Hajek error shrinks like 1/sqrt(K) and its denominator averages one."""
    rmse = {}
    for K in (50, 200):
        pop = generate_population(SimConfig(K=K, intervention="pi2", seed=11))
        est = Estimand.mu(pop.laws, 1)
        errs, lam = [], []
        for r in range(1000):
            pe = point_estimate(pop.frame, pop.designs, est, _observed(pop, _draw(pop, r, 0)))
            errs.append(pe.hajek - pop.truth["mu1"])
            lam.append(pe.components[0].denominator)
        rmse[K] = float(np.sqrt(np.mean(np.square(errs))))
        if K == 200:
            assert abs(np.mean(lam) - 1) <= 0.02
    assert rmse[200] <= 1.2 * rmse[50] * np.sqrt(50 / 200)
