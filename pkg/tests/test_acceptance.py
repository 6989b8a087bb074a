"""Acceptance criteria 1-8, each checked at its stated tolerance.

Every test prints one PASS/FAIL line; the lines are repeated in the pytest
summary. Run as a script (``PYTHONPATH=tests python tests/test_acceptance.py``)
to print the lines without pytest. Criterion 6 runs the full Monte Carlo study
and takes a few minutes.
"""

from __future__ import annotations

import csv
import itertools
import json
import sys
import time
from pathlib import Path

import numpy as np
import pytest

from corpus import (
    DESIGN_KINDS,
    RULE_KINDS,
    additive_betas,
    arbitrary_table,
    cli_args,
    multi_key_table,
    overlaps,
    random_case,
    random_law,
    single_key_case,
    stratified_table,
    write_fixture,
)
from netinfer.cli import main
from netinfer.design import Bernoulli, CompleteRandomization, Intervention, KeyProportion, KeyTreated, StratifiedRandomization
from netinfer.errors import NonMeasurableDesignError
from netinfer.estimators import Estimand, point_estimate
from netinfer.frame import Observed
from netinfer.oracle import PotentialOutcomeTable, check_conservative, exact_estimand, exact_moments, pooled_potentials
from netinfer.report import analyze
from netinfer.simulation import SimConfig, aggregate, run
from netinfer.variance import additive as ad
from netinfer.variance import cr_special as cr
from netinfer.variance import stratified as sv
from netinfer.variance.lipschitz import LipschitzSpec, lipschitz_bound, lipschitz_bound_hat


def _ht_variance(frame, designs, estimand, table) -> float:
    return exact_moments(frame, designs, table, lambda o: point_estimate(frame, designs, estimand, o).ht).variance


def _two_law_case(rng, kind):
    """Key-treated case plus a second base law, both overlapping the design in each arm."""
    while True:
        c = random_case(rng, kind, "key_treated")
        laws2 = tuple(random_law(rng, kind, d, cl) for d, cl in zip(c.designs, c.frame))
        if all(overlaps(c.frame, c.designs, Intervention(L, KeyTreated(a))) for L in (c.laws, laws2) for a in (0, 1)):
            return c, laws2


# ---------------------------------------------------------------------------
# Criteria
# ---------------------------------------------------------------------------


def criterion_1(n_cases: int = 200, tol: float = 1e-10, limit: float = 60.0):
    """Oracle mean of the HT estimator equals the exact estimand."""
    rng = np.random.default_rng(101)
    t0 = time.perf_counter()
    combos = list(itertools.product(DESIGN_KINDS, RULE_KINDS))
    worst = 0.0
    for i in range(n_cases):
        dk, rk = combos[i % len(combos)]
        c = random_case(rng, dk, rk)
        table = arbitrary_table(rng, c.frame, c.designs)
        est = Estimand.tau(c.intervention)
        truth = exact_estimand(c.frame, est, table, c.designs)
        mean = exact_moments(c.frame, c.designs, table, lambda o: point_estimate(c.frame, c.designs, est, o).ht).mean
        worst = max(worst, abs(mean - truth))
    dt = time.perf_counter() - t0
    return worst <= tol and dt <= limit, f"{n_cases} cases, max |E[HT] - estimand| = {worst:.2e} (tol {tol:g}), {dt:.1f} s (limit {limit:g} s)"


def criterion_2(n_cases: int = 200, n_multi: int = 100, tol: float = 1e-9, limit: float = 120.0):
    """Closed-form variances agree with the oracle variance of the estimator."""
    rng = np.random.default_rng(202)
    t0 = time.perf_counter()
    worst: dict[str, float] = {}

    def upd(name, formula, oracle):
        worst[name] = max(worst.get(name, 0.0), abs(formula - oracle))

    for i in range(n_cases):
        c, laws2 = _two_law_case(rng, DESIGN_KINDS[i % 3])
        F, D, L = c.frame, c.designs, c.laws
        tab = stratified_table(rng, F)
        p1 = pooled_potentials(F, tab, D, KeyTreated(1))
        p0 = pooled_potentials(F, tab, D, KeyTreated(0))
        upd("mu", sv.var_mu_stratified(F, D, L, 1, p1), _ht_variance(F, D, Estimand.mu(L, 1), tab))
        upd("de", sv.var_de_stratified(F, D, L, p1, p0), _ht_variance(F, D, Estimand.de(L), tab))
        upd("ie", sv.var_ie_stratified(F, D, L, laws2, 0, p0), _ht_variance(F, D, Estimand.ie(L, laws2, 0), tab))
        upd("te", sv.var_te_stratified(F, D, L, laws2, p1, p0), _ht_variance(F, D, Estimand.te(L, laws2), tab))
        betas = additive_betas(rng, F)
        at = PotentialOutcomeTable.additive(F, betas)
        upd("additive_mu", ad.var_mu_additive(F, D, L, 1, betas), _ht_variance(F, D, Estimand.mu(L, 1), at))
        upd("additive_de", ad.var_de_additive(F, D, L, betas), _ht_variance(F, D, Estimand.de(L), at))
        ie_oracle = _ht_variance(F, D, Estimand.ie(L, laws2, 1), at)
        upd("additive_ie", ad.var_ie_additive(F, D, L, laws2, 1, betas), ie_oracle)
        upd("additive_ie_zeta", ad.var_ie_additive(F, D, L, laws2, 1, betas, route="zeta"), ie_oracle)
    for i in range(n_multi):
        c = random_case(rng, DESIGN_KINDS[i % 3], "key_proportion")
        ps = c.rule.p_star
        if not overlaps(c.frame, c.designs, Intervention(c.designs, KeyProportion(ps))):
            continue
        tab = multi_key_table(rng, c.frame)
        pm = pooled_potentials(c.frame, tab, c.designs, KeyProportion(ps))
        upd("multi_key", sv.var_tau_multi(c.frame, c.designs, ps, pm), _ht_variance(c.frame, c.designs, Estimand.tau_multi(ps), tab))
    dt = time.perf_counter() - t0
    top = max(worst.values())
    parts = ", ".join(f"{k} {v:.1e}" for k, v in worst.items())
    return top <= tol and dt <= limit, f"max error {top:.2e} (tol {tol:g}) [{parts}], {dt:.1f} s (limit {limit:g} s)"


def criterion_3(n_cases: int = 150, n_lip: int = 50, tol: float = 1e-9, limit: float = 180.0):
    """Exact expectations of the variance estimators against the true variance."""
    rng = np.random.default_rng(303)
    t0 = time.perf_counter()
    margins: dict[str, list[float]] = {}
    skipped = 0
    done = 0

    def margin(F, D, est, tab, vhat):
        return check_conservative(F, D, tab, lambda o: point_estimate(F, D, est, o).ht, vhat)

    while done < n_cases:
        c, laws2 = _two_law_case(rng, DESIGN_KINDS[done % 3])
        F, D, L = c.frame, c.designs, c.laws
        tab, teq = stratified_table(rng, F), stratified_table(rng, F, equal_arms=True)
        betas = additive_betas(rng, F)
        at = PotentialOutcomeTable.additive(F, betas)
        try:
            row = {
                "mu": margin(F, D, Estimand.mu(L, 1), tab, lambda o: sv.var_mu_stratified_hat(F, D, L, 1, o)),
                "de": margin(F, D, Estimand.de(L), tab, lambda o: sv.var_de_stratified_hat(F, D, L, o)),
                "de_equal_arms": margin(F, D, Estimand.de(L), teq, lambda o: sv.var_de_stratified_hat(F, D, L, o)),
                "additive_mu": margin(F, D, Estimand.mu(L, 1), at, lambda o: ad.var_mu_additive_hat(F, D, L, 1, o)),
                "additive_de": margin(F, D, Estimand.de(L), at, lambda o: ad.var_de_additive_hat(F, D, L, o)),
                "additive_ie": margin(F, D, Estimand.ie(L, laws2, 0), at, lambda o: ad.var_ie_additive_hat(F, D, L, laws2, 0, o)),
            }
        except NonMeasurableDesignError:
            skipped += 1
            continue
        for k, v in row.items():
            margins.setdefault(k, []).append(v)
        done += 1
    lip = 0.0
    for _ in range(n_lip):
        c = single_key_case(rng, "cr")
        F, D = c.frame, c.designs
        tab = arbitrary_table(rng, F, D)
        spec = LipschitzSpec(c=float(rng.uniform(0.5, 3.0)))
        pots = [tab.outcomes(k, d.support()[0]) for k, d in enumerate(D)]
        for a in (0, 1):
            bound = lipschitz_bound(F, D, a, pots, spec)
            m = exact_moments(F, D, tab, lambda o: lipschitz_bound_hat(F, D, a, o, spec).upper)
            lip = max(lip, abs(m.mean - bound))
    dt = time.perf_counter() - t0
    mu_ok = max(abs(x) for x in margins["mu"]) <= tol
    de_ok = min(margins["de"]) >= -tol and max(abs(x) for x in margins["de_equal_arms"]) <= tol
    add_ok = all(min(margins[k]) >= -tol for k in ("additive_mu", "additive_de", "additive_ie"))
    ok = mu_ok and de_ok and add_ok and lip <= tol and dt <= limit
    detail = (
        f"{n_cases} cases ({skipped} non-measurable draws skipped): "
        f"mu max|margin| {max(abs(x) for x in margins['mu']):.1e}, de min margin {min(margins['de']):.2e}, "
        f"de equal-arms max|margin| {max(abs(x) for x in margins['de_equal_arms']):.1e}, "
        f"additive min margins mu {min(margins['additive_mu']):.2e} de {min(margins['additive_de']):.2e} "
        f"ie {min(margins['additive_ie']):.2e}; Lipschitz |E[hat] - terms| {lip:.1e} on {n_lip} CR cases; "
        f"tol {tol:g}, {dt:.1f} s (limit {limit:g} s)"
    )
    return ok, detail


def criterion_4(n_cases: int = 50, tol: float = 1e-12, limit: float = 10.0):
    """Complete-randomization closed forms equal the general variance expressions."""
    rng = np.random.default_rng(404)
    t0 = time.perf_counter()
    worst = 0.0
    for _ in range(n_cases):
        c = single_key_case(rng, "cr")
        F, D = c.frame, c.designs
        tab = stratified_table(rng, F)
        p1 = pooled_potentials(F, tab, D, KeyTreated(1))
        p0 = pooled_potentials(F, tab, D, KeyTreated(0))
        for a, p in ((1, p1), (0, p0)):
            worst = max(worst, abs(cr.var_mu_cr(F, D, a, p) - sv.var_mu_stratified(F, D, D, a, p)))
        worst = max(worst, abs(cr.var_de_cr(F, D, p1, p0) - sv.var_de_stratified(F, D, D, p1, p0)))
    dt = time.perf_counter() - t0
    return worst <= tol and dt <= limit, f"{n_cases} CR instances, max |closed form - general| = {worst:.2e} (tol {tol:g}), {dt:.2f} s"


def criterion_5(tol: float = 1e-10, n_designs: int = 30):
    """Additive coefficient fit: unbiasedness, in-sample reproduction and rank."""
    rng = np.random.default_rng(505)

    def check(design):
        vectors, probs = design.support()
        beta = rng.normal(0, 1.5, design.n + 1)
        y = beta[0] + vectors @ beta[1:]
        fits = [ad.fit_additive_coefficients(design, v, [yv]) for v, yv in zip(vectors, y)]
        bhat = np.array([f.beta[0] for f in fits])
        unbiased = float(np.abs(probs @ bhat - beta).max())
        refit = np.array([b[0] + v @ b[1:] for b, v in zip(bhat, vectors)])
        return fits[0].rank, unbiased, float(np.abs(refit - y).max())

    bern, strat, crd = [], [], []
    for _ in range(n_designs):
        n = int(rng.integers(1, 6))
        bern.append((n, *check(Bernoulli(tuple(rng.uniform(0.1, 0.9, n))))))
        n = int(rng.integers(2, 7))
        labels = [str(i % 2) for i in range(n)]
        counts = {s: int(rng.integers(0, labels.count(s) + 1)) for s in sorted(set(labels))}
        strat.append((n, len(counts), *check(StratifiedRandomization.build(labels, counts))))
        m = int(rng.integers(1, n))
        crd.append((n, *check(CompleteRandomization(n, m))))
    bern_rank_ok = all(r == n + 1 for n, r, _, _ in bern)
    bern_unbiased = max(u for _, _, u, _ in bern)
    strat_full = sum(r == n + 1 for n, _, r, _, _ in strat)
    strat_unbiased = max(u for *_, u, _ in strat)
    cr_rank_ok = all(r == n for n, r, _, _ in crd)
    repro = max(e for *_, e in bern + strat + crd)
    ok = bern_rank_ok and bern_unbiased <= tol and strat_full == len(strat) and strat_unbiased <= tol and cr_rank_ok and repro <= tol
    detail = (
        f"Bernoulli full rank {bern_rank_ok}, max |E[beta_hat] - beta| {bern_unbiased:.1e}; "
        f"stratified full rank in {strat_full}/{len(strat)} designs (rank = n + 1 - #strata), "
        f"max |E[beta_hat] - beta| {strat_unbiased:.2f}; CR rank = n in all {len(crd)}: {cr_rank_ok}; "
        f"max |(1,A) beta_hat - Y_obs| {repro:.2f} (fitted values are Y_obs times (1,A)' M^+ (1,A), not Y_obs)"
    )
    return ok, detail


def criterion_6(reps: int = 1000, seed: int = 2024, limit: float = 900.0):
    """Monte Carlo study: bias, coverage and empirical SE bands."""
    t0 = time.perf_counter()
    rows = {}
    for model in ("M1", "M2"):
        for iv in ("pi1", "pi2"):
            pop, res = run(SimConfig(K=50, n_k=32, m_k=50, model=model, intervention=iv, reps=reps, seed=seed))
            for r in aggregate(pop, res):
                rows[(model, iv, r.estimand, r.estimator)] = r
    dt = time.perf_counter() - t0
    bias_ratio = max(abs(r.bias) / r.mc_se for r in rows.values())
    cov = {m: rows[(m, "pi1", "mu1", "ht")].coverage for m in ("M1", "M2")}
    de_cov = {e: rows[("M2", "pi1", "DE", e)].coverage for e in ("ht", "hajek")}
    se_pairs = {
        (m, e): (rows[(m, "pi2", e, "hajek")].emp_se, rows[(m, "pi2", e, "ht")].emp_se) for m in ("M1", "M2") for e in ("mu1", "DE")
    }
    ok_a = bias_ratio <= 3
    ok_b = all(0.93 <= c <= 0.97 for c in cov.values())
    ok_c = all(c >= 0.95 for c in de_cov.values())
    ok_d = all(h <= t for h, t in se_pairs.values())
    detail = (
        f"(a) max |bias|/MCSE {bias_ratio:.2f} <= 3: {ok_a}; "
        f"(b) HT mu1 coverage under pi1 M1 {cov['M1']:.3f} M2 {cov['M2']:.3f}: {ok_b}; "
        f"(c) M2/pi1 DE coverage HT {de_cov['ht']:.3f} Hajek {de_cov['hajek']:.3f}: {ok_c}; "
        f"(d) pi2 emp SE Hajek/HT "
        + " ".join(f"{m}-{e} {h:.3f}/{t:.3f}" for (m, e), (h, t) in se_pairs.items())
        + f": {ok_d}; {reps} reps x 4 configs, {dt:.0f} s (limit {limit:g} s)"
    )
    return ok_a and ok_b and ok_c and ok_d and dt <= limit, detail


def _write_potentials(path: Path, files: dict, rng) -> None:
    design = CompleteRandomization(4, 2)
    vectors, _ = design.support()
    units = list(csv.DictReader(open(files["units"])))
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["cluster_id", "unit_id", "assignment", "y"])
        for r in units:
            for v in vectors:
                w.writerow([r["cluster_id"], r["unit_id"], "".join(str(int(x)) for x in v), repr(float(np.round(rng.normal(), 6)))])


def criterion_7(workdir: Path):
    """Every subcommand run twice with the same seed gives byte-identical output."""
    rng = np.random.default_rng(707)
    files = write_fixture(workdir / "data", rng, K=2, n=4, n_treated=2, n_other=2)
    _write_potentials(workdir / "potentials.csv", files, rng)
    (workdir / "grid.json").write_text(json.dumps({"K": 3, "n_k": 8, "m_k": 6, "model": ["M1", "M2"], "reps": 4}))
    commands = {
        "estimate": ["estimate", *cli_args(files, "--estimand", "de", "--estimator", "both")],
        "oracle": ["oracle", "--units", str(files["units"]), "--keymap", str(files["keymap"]), "--design", files["design"],
                   "--estimand", "mu", "--table", str(workdir / "potentials.csv")],
        "sweep": ["sweep", *cli_args(files, "--group-field", "ref", "--estimator", "both")],
        "simulate": ["simulate", "--config", str(workdir / "grid.json")],
        "validate": ["validate", *cli_args(files)],
    }
    same, failed = [], []
    for name, argv in commands.items():
        outs = []
        for i in range(2):
            out = workdir / f"{name}{i}.out"
            extra = ["--plot-data", str(workdir / f"plot{i}")] if name == "simulate" else []
            code = main([*argv, *extra, "--seed", "17", "--deterministic", "--out", str(out)])
            blob = out.read_bytes() if code == 0 else b""
            if name == "simulate" and code == 0:
                blob += b"".join(p.read_bytes() for p in sorted((workdir / f"plot{i}").iterdir()))
            outs.append((code, blob))
        (same if outs[0] == outs[1] and outs[0][0] == 0 and outs[0][1] else failed).append(name)
    return not failed, f"byte-identical: {', '.join(same) or 'none'}" + (f"; differing or failed: {', '.join(failed)}" if failed else "")


def criterion_8(n_fixtures: int = 20, tol: float = 1e-12):
    """Singleton key sets with p* = 1 reproduce the single-key treated-mean pipeline."""
    rng = np.random.default_rng(808)
    worst = {"point": 0.0, "variance": 0.0}
    done = skipped = 0
    while done < n_fixtures:
        c = single_key_case(rng, DESIGN_KINDS[done % 3])
        F, D = c.frame, c.designs
        if not overlaps(F, D, Intervention(D, KeyTreated(1))):
            continue
        obs = Observed([d.sample(rng) for d in D], [rng.normal(1, 2, cl.size_s) for cl in F])
        try:
            pairs = [
                (analyze(F, D, Estimand.tau_multi(1.0), obs, est), analyze(F, D, Estimand.mu(D, 1), obs, est))
                for est in ("ht", "hajek")
                if est == "ht" or point_estimate(F, D, Estimand.mu(D, 1), obs).hajek is not None
            ]
        except NonMeasurableDesignError:
            skipped += 1
            continue
        for multi, single in pairs:
            worst["point"] = max(worst["point"], abs(multi.point - single.point))
            worst["variance"] = max(worst["variance"], abs(multi.variance - single.variance))
        done += 1
    top = max(worst.values())
    return top <= tol, (
        f"{n_fixtures} fixtures ({skipped} non-measurable draws skipped), max |point diff| {worst['point']:.1e}, "
        f"max |variance diff| {worst['variance']:.1e} (tol {tol:g})"
    )


# ---------------------------------------------------------------------------
# pytest wrappers
# ---------------------------------------------------------------------------


def test_criterion_1_ht_unbiased(acceptance):
    ok, detail = criterion_1()
    acceptance(1, ok, detail)
    assert ok, detail


def test_criterion_2_variance_formulas(acceptance):
    ok, detail = criterion_2()
    acceptance(2, ok, detail)
    assert ok, detail


def test_criterion_3_variance_estimators(acceptance):
    ok, detail = criterion_3()
    acceptance(3, ok, detail)
    assert ok, detail


def test_criterion_4_cr_closed_forms(acceptance):
    ok, detail = criterion_4()
    acceptance(4, ok, detail)
    assert ok, detail


@pytest.mark.xfail(
    strict=True,
    reason="fitted values (1,A) beta_hat differ from Y_obs, and stratified designs are rank deficient; see README",
)
def test_criterion_5_additive_fit(acceptance):
    ok, detail = criterion_5()
    acceptance(5, ok, detail)
    assert ok, detail


def test_criterion_6_simulation(acceptance):
    ok, detail = criterion_6()
    acceptance(6, ok, detail)
    assert ok, detail


def test_criterion_7_determinism(acceptance, tmp_path):
    ok, detail = criterion_7(tmp_path)
    acceptance(7, ok, detail)
    assert ok, detail


def test_criterion_8_multi_key_reduction(acceptance):
    ok, detail = criterion_8()
    acceptance(8, ok, detail)
    assert ok, detail


if __name__ == "__main__":
    import tempfile

    chosen = [int(x) for x in sys.argv[1:]] or list(range(1, 9))
    for number in chosen:
        fn = globals()[f"criterion_{number}"]
        if number == 7:
            with tempfile.TemporaryDirectory() as d:
                ok, detail = fn(Path(d))
        else:
            ok, detail = fn()
        print(f"criterion {number}: {'PASS' if ok else 'FAIL'} | {detail}", flush=True)
