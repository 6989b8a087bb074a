"""Monte Carlo study: bipartite clusters, two outcome models, two stochastic interventions.

Intervention units carry covariates W1, W2 ~ N(0, 1) and a binary W3 equal to
one for exactly half of each cluster. Every non-intervention unit is a target
keyed to one intervention unit drawn uniformly at random. Outcomes follow

    M1: Y(a) = 5 - 2.5 a - 1.5 p + W1 - 0.5 W2 + 3 W3 + a p
    M2: M1 + 2 (W1 + W2) a

with W taken from the key unit and p = 0.5. The design is complete
randomization with equal allocation; ``pi1`` is the design itself and
``pi2`` is equal allocation within W3 strata.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from statistics import NormalDist
from typing import Iterable, Sequence

import numpy as np

from .design import CompleteRandomization, StratifiedRandomization
from .errors import SchemaError, UndefinedEstimateError
from .estimators import Estimand, point_estimate
from .frame import ClusterFrame, ExperimentFrame, Observed
from .report import format_float
from .variance.engine import estimate_variance, hajek_terms, ht_terms, plan_for

MODELS = ("M1", "M2")
INTERVENTIONS = ("pi1", "pi2")
ESTIMANDS = ("mu1", "DE")
ESTIMATORS = ("ht", "hajek")
RESULT_COLUMNS = (
    "K",
    "m_k",
    "model",
    "intervention",
    "estimand",
    "estimator",
    "bias",
    "emp_se",
    "mean_se_hat",
    "coverage",
    "ci_length",
    "reps_ok",
    "reps_failed",
)
PROPORTION = 0.5


@dataclass(frozen=True)
class SimConfig:
    K: int = 50
    n_k: int = 32
    m_k: int = 50
    model: str = "M1"
    intervention: str = "pi1"
    reps: int = 1000
    seed: int = 0
    alpha: float = 0.05
    rerandomize_cap: int = 1000

    def __post_init__(self):
        if self.model not in MODELS:
            raise SchemaError(f"model must be one of {MODELS}")
        if self.intervention not in INTERVENTIONS:
            raise SchemaError(f"intervention must be one of {INTERVENTIONS}")
        if self.K < 1 or self.m_k < 1 or self.reps < 1:
            raise SchemaError("K, m_k and reps must be positive")
        if self.n_k < 4 or self.n_k % 4:
            raise SchemaError("n_k must be a positive multiple of 4 (equal allocation within halves)")
        if not 0 < self.alpha < 1:
            raise SchemaError("alpha must lie in (0, 1)")


def load_grid(path: str | Path, **overrides) -> list[SimConfig]:
    """Read a JSON config; list-valued K, m_k, model or intervention fields expand into a grid."""
    raw = json.loads(Path(path).read_text())
    raw.update({k: v for k, v in overrides.items() if v is not None})
    axes = {k: raw[k] if isinstance(raw.get(k), list) else [raw[k]] for k in ("K", "m_k", "model", "intervention") if k in raw}
    base = {k: v for k, v in raw.items() if k not in axes}
    unknown = set(base) - set(SimConfig.__dataclass_fields__)
    if unknown:
        raise SchemaError(f"unknown simulation fields {sorted(unknown)}")
    configs = [{}]
    for name, values in axes.items():
        configs = [dict(c, **{name: v}) for c in configs for v in values]
    return [SimConfig(**base, **c) for c in configs]


def stream(seed: int, *key: int) -> np.random.Generator:
    """Counter-based generator for one (purpose, replication, cluster, ...) stream."""
    return np.random.Generator(np.random.Philox(np.random.SeedSequence(seed, spawn_key=tuple(key))))


# ---------------------------------------------------------------------------
# Population
# ---------------------------------------------------------------------------


def outcome(model: str, a, w1, w2, w3, p: float = PROPORTION):
    y = 5 - 2.5 * a - 1.5 * p + w1 - 0.5 * w2 + 3 * w3 + a * p
    if model == "M2":
        y = y + 2 * (w1 + w2) * a
    return y


@dataclass(eq=False)
class Population:
    config: SimConfig
    frame: ExperimentFrame
    designs: tuple
    laws: tuple
    potentials: list[np.ndarray]  # per cluster (m_k, 2): outcome with key unit in arm 0 / 1
    truth: dict = field(default_factory=dict)


def generate_population(config: SimConfig, seed: int | None = None) -> Population:
    seed = config.seed if seed is None else seed
    n, m = config.n_k, config.m_k
    clusters, potentials, strata = [], [], []
    for k in range(config.K):
        rng = stream(seed, 0, k)
        w1 = rng.standard_normal(n)
        w2 = rng.standard_normal(n)
        w3 = np.zeros(n, dtype=int)
        w3[rng.permutation(n)[: n // 2]] = 1
        keys = rng.integers(0, n, size=m)
        covs = {f"i{i}": {"W1": float(w1[i]), "W2": float(w2[i]), "W3": int(w3[i])} for i in range(n)}
        clusters.append(ClusterFrame.single_key(f"k{k}", n, keys, covs))
        y = np.stack([outcome(config.model, a, w1[keys], w2[keys], w3[keys]) for a in (0, 1)], axis=1)
        potentials.append(y)
        strata.append(w3)
    frame = ExperimentFrame(clusters)
    design = CompleteRandomization(n, n // 2)
    designs = (design,) * config.K
    if config.intervention == "pi1":
        laws = designs
    else:
        laws = tuple(StratifiedRandomization.build([str(v) for v in w3], {"0": n // 4, "1": n // 4}) for w3 in strata)
    # every law fixes the treated share at one half, so each target's mean is its outcome at its key arm
    mu1 = float(np.mean([y[:, 1].mean() for y in potentials]))
    mu0 = float(np.mean([y[:, 0].mean() for y in potentials]))
    return Population(config, frame, designs, laws, potentials, {"mu1": mu1, "DE": mu1 - mu0})


# ---------------------------------------------------------------------------
# Replications
# ---------------------------------------------------------------------------


@dataclass
class Replication:
    rep: int
    redraws: int
    ok: bool
    estimates: dict  # (estimand, estimator) -> (point, se)


def _draw(pop: Population, rep: int, attempt: int) -> list[np.ndarray]:
    out = []
    for k, d in enumerate(pop.designs):
        out.append(d.sample(stream(pop.config.seed, 1, rep, attempt, k)))
    return out


def _observed(pop: Population, assignments) -> Observed:
    ys = []
    for c, y, a in zip(pop.frame, pop.potentials, assignments):
        ys.append(y[np.arange(c.size_s), a[c.key_index]])
    return Observed(assignments, ys)


def run_replication(pop: Population, rep: int) -> Replication:
    """Draw f, redrawing all clusters jointly while every Hajek denominator is zero."""
    cfg = pop.config
    estimands = {"mu1": Estimand.mu(pop.laws, 1), "DE": Estimand.de(pop.laws)}
    for attempt in range(cfg.rerandomize_cap + 1):
        obs = _observed(pop, _draw(pop, rep, attempt))
        points = {name: point_estimate(pop.frame, pop.designs, est, obs) for name, est in estimands.items()}
        if all(p.hajek is not None for p in points.values()):
            break
    else:
        return Replication(rep, cfg.rerandomize_cap, False, {})
    results = {}
    for name, est in estimands.items():
        comps = est.components(pop.designs)
        plan = plan_for(pop.frame, pop.designs, comps)
        pe = points[name]
        v_ht = estimate_variance(plan, ht_terms(comps), pop.frame, obs).value
        results[(name, "ht")] = (pe.ht, math.sqrt(max(v_ht, 0.0)))
        try:
            means = [c.hajek for c in pe.components]
        except UndefinedEstimateError:
            continue
        v_h = estimate_variance(plan, hajek_terms(comps, means), pop.frame, obs).value
        results[(name, "hajek")] = (pe.hajek, math.sqrt(max(v_h, 0.0)))
    return Replication(rep, attempt, True, results)


def run(config: SimConfig, progress=None) -> tuple[Population, list[Replication]]:
    pop = generate_population(config)
    reps = []
    for r in range(config.reps):
        reps.append(run_replication(pop, r))
        if progress:
            progress(r)
    return pop, reps


# ---------------------------------------------------------------------------
# Aggregation
# ---------------------------------------------------------------------------


@dataclass
class SimResultRow:
    K: int
    m_k: int
    model: str
    intervention: str
    estimand: str
    estimator: str
    bias: float
    emp_se: float
    mean_se_hat: float
    coverage: float
    ci_length: float
    reps_ok: int
    reps_failed: int
    mc_se: float = float("nan")
    flags: str = ""


def aggregate(pop: Population, reps: Sequence[Replication]) -> list[SimResultRow]:
    cfg = pop.config
    ok = [r for r in reps if r.ok]
    failed = len(reps) - len(ok)
    if not ok:
        raise UndefinedEstimateError("every replication failed")
    z = NormalDist().inv_cdf(1 - cfg.alpha / 2)
    rows = []
    for name in ESTIMANDS:
        truth = pop.truth[name]
        for est in ESTIMATORS:
            vals = [r.estimates[(name, est)] for r in ok if (name, est) in r.estimates]
            if len(vals) < 2:
                raise UndefinedEstimateError(f"fewer than two usable replications for {name}/{est}")
            pts = np.array([v[0] for v in vals])
            ses = np.array([v[1] for v in vals])
            sd = float(np.std(pts, ddof=1))
            cover = np.abs(pts - truth) <= z * ses
            rows.append(
                SimResultRow(
                    cfg.K,
                    cfg.m_k,
                    cfg.model,
                    cfg.intervention,
                    name,
                    est,
                    float(pts.mean() - truth),
                    sd,
                    float(ses.mean()),
                    float(cover.mean()),
                    float(np.mean(2 * z * ses)),
                    len(vals),
                    failed + len(ok) - len(vals),
                    sd / math.sqrt(len(vals)),
                    "zero_se" if sd == 0 else "",
                )
            )
    return rows


def _cell(v) -> str:
    if isinstance(v, bool):
        return "1" if v else "0"
    if isinstance(v, float):
        return format_float(v)
    return str(v)


def write_results(rows: Iterable[SimResultRow], path: str | Path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(RESULT_COLUMNS)
        for r in rows:
            d = asdict(r)
            w.writerow([_cell(d[c]) for c in RESULT_COLUMNS])


def write_plot_data(results: Sequence[tuple[Population, list[Replication], list[SimResultRow]]], outdir: str | Path) -> None:
    """Long-format metrics and per-replication estimates, ready for plotting."""
    outdir = Path(outdir)
    outdir.mkdir(parents=True, exist_ok=True)
    keys = ("K", "m_k", "model", "intervention", "estimand", "estimator")
    with open(outdir / "metrics_long.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(keys + ("metric", "value"))
        for _, _, rows in results:
            for r in rows:
                d = asdict(r)
                for metric in ("bias", "emp_se", "mean_se_hat", "coverage", "ci_length", "mc_se"):
                    w.writerow([_cell(d[k]) for k in keys] + [metric, _cell(d[metric])])
    with open(outdir / "replications.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(keys + ("rep", "redraws", "truth", "estimate", "se_hat"))
        for pop, reps, _ in results:
            cfg = pop.config
            for r in reps:
                for (name, est), (pt, se) in sorted(r.estimates.items()):
                    w.writerow(
                        [cfg.K, cfg.m_k, cfg.model, cfg.intervention, name, est, r.rep, r.redraws]
                        + [_cell(pop.truth[name]), _cell(pt), _cell(se)]
                    )
