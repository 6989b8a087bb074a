"""CSV/JSON ingestion, validation and serialization.

Tables (headers are exact; extra units.csv columns are covariates):

    units.csv       cluster_id,unit_id,eligible,in_target[,...]
    keymap.csv      cluster_id,unit_id,key_unit_id     (one row per key unit)
    assignment.csv  cluster_id,unit_id,a               (eligible units)
    outcomes.csv    cluster_id,unit_id,y               (target units)
    potentials.csv  cluster_id,unit_id,assignment,y    (oracle: assignment is a 0/1 string over eligible units)

Designs are JSON objects ``{"type": "complete", "n_treated": 3}``,
``{"type": "stratified", "stratum_field": "W3", "n_treated_per_stratum": {"0": 2, "1": 2}}``
or ``{"type": "bernoulli", "p": 0.5}``; a list of such objects with
``cluster_id`` keys gives one per cluster. Interventions are
``{"base": <design or "design">, "admissible": {"kind": ...}}``.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Sequence

import numpy as np

from .design import (
    AssignmentDistribution,
    Bernoulli,
    CompleteRandomization,
    GroupProportion,
    Intervention,
    KeyProportion,
    KeyTreated,
    StratifiedRandomization,
    Unrestricted,
)
from .errors import DesignMismatchError, IntegrityError, NetInferError, OverlapError, SchemaError
from .frame import ClusterFrame, ExperimentFrame, Observed

UNITS_HEADER = ("cluster_id", "unit_id", "eligible", "in_target")
KEYMAP_HEADER = ("cluster_id", "unit_id", "key_unit_id")
ASSIGNMENT_HEADER = ("cluster_id", "unit_id", "a")
OUTCOMES_HEADER = ("cluster_id", "unit_id", "y")
POTENTIALS_HEADER = ("cluster_id", "unit_id", "assignment", "y")


class Issues:
    """Collects violations and raises the first one's class with every message attached."""

    def __init__(self):
        self.items: list[tuple[type[NetInferError], str]] = []

    def add(self, kind: type[NetInferError], message: str) -> None:
        self.items.append((kind, message))

    def raise_if_any(self) -> None:
        if self.items:
            kind = self.items[0][0]
            err = kind("; ".join(m for _, m in self.items))
            err.issues = [{"code": k.code, "message": m} for k, m in self.items]
            raise err


def read_csv(path: str | Path, header: Sequence[str], extra: bool = False) -> tuple[list[str], list[dict]]:
    try:
        with open(path, newline="", encoding="utf-8") as fh:
            reader = csv.reader(fh)
            try:
                head = [h.strip() for h in next(reader)]
            except StopIteration:
                raise SchemaError(f"{path}: empty file") from None
            ok = head[: len(header)] == list(header) and (extra or len(head) == len(header))
            if not ok:
                raise SchemaError(f"{path}: header {','.join(head)} != {','.join(header)}{',...' if extra else ''}")
            if len(set(head)) != len(head):
                raise SchemaError(f"{path}: duplicate column names")
            rows = []
            for line, rec in enumerate(reader, start=2):
                if not rec or all(not x.strip() for x in rec):
                    continue
                if len(rec) != len(head):
                    raise SchemaError(f"{path}:{line}: expected {len(head)} fields, found {len(rec)}")
                row = {h: v.strip() for h, v in zip(head, rec)}
                row["_line"] = line
                rows.append(row)
    except FileNotFoundError:
        raise SchemaError(f"{path}: file not found") from None
    except UnicodeDecodeError:
        raise SchemaError(f"{path}: not UTF-8") from None
    return head, rows


def _flag(value: str, where: str) -> int:
    if value not in ("0", "1"):
        raise SchemaError(f"{where}: expected 0 or 1, found {value!r}")
    return int(value)


def _number(value: str, where: str) -> float:
    try:
        x = float(value)
    except ValueError:
        raise SchemaError(f"{where}: not a number: {value!r}") from None
    return x


def _covariate(value: str) -> Any:
    try:
        x = float(value)
    except ValueError:
        return value
    return int(x) if x.is_integer() and "." not in value and "e" not in value.lower() else x


# ---------------------------------------------------------------------------
# Bundle
# ---------------------------------------------------------------------------


@dataclass(eq=False)
class DatasetBundle:
    frame: ExperimentFrame
    observed: Observed | None
    designs: tuple[AssignmentDistribution, ...] | None = None
    intervention: Intervention | None = None
    intervention_tilde: Intervention | None = None
    covariate_names: tuple[str, ...] = ()
    design_spec: Any = None
    intervention_spec: Any = None
    intervention_tilde_spec: Any = None
    warnings: list[str] = field(default_factory=list)


def load_frame(units_path, keymap_path) -> tuple[ExperimentFrame, tuple[str, ...]]:
    head, rows = read_csv(units_path, UNITS_HEADER, extra=True)
    cov_names = tuple(head[len(UNITS_HEADER) :])
    issues = Issues()
    order: dict[str, list[dict]] = {}
    seen: set[tuple[str, str]] = set()
    for r in rows:
        where = f"{units_path}:{r['_line']}"
        key = (r["cluster_id"], r["unit_id"])
        if not r["cluster_id"] or not r["unit_id"]:
            issues.add(SchemaError, f"{where}: empty identifier")
            continue
        if key in seen:
            issues.add(IntegrityError, f"{where}: duplicate unit {r['unit_id']} in cluster {r['cluster_id']}")
            continue
        seen.add(key)
        try:
            r["eligible"] = _flag(r["eligible"], where + " eligible")
            r["in_target"] = _flag(r["in_target"], where + " in_target")
        except SchemaError as exc:
            issues.add(SchemaError, str(exc))
            continue
        order.setdefault(r["cluster_id"], []).append(r)
    issues.raise_if_any()
    _, krows = read_csv(keymap_path, KEYMAP_HEADER)
    keys: dict[tuple[str, str], list[str]] = {}
    for r in krows:
        where = f"{keymap_path}:{r['_line']}"
        cid, uid, kid = r["cluster_id"], r["unit_id"], r["key_unit_id"]
        if (cid, uid) not in seen:
            issues.add(IntegrityError, f"{where}: unknown unit {uid} in cluster {cid}")
            continue
        if (cid, kid) not in seen:
            issues.add(IntegrityError, f"{where}: unknown key unit {kid} in cluster {cid}")
            continue
        lst = keys.setdefault((cid, uid), [])
        if kid in lst:
            issues.add(IntegrityError, f"{where}: repeated key unit {kid} for unit {uid}")
            continue
        lst.append(kid)
    clusters = []
    for cid, urows in order.items():
        elig = [r["unit_id"] for r in urows if r["eligible"]]
        inel = [r["unit_id"] for r in urows if not r["eligible"]]
        targets = [r["unit_id"] for r in urows if r["in_target"]]
        pos = {u: i for i, u in enumerate(elig)}
        key_sets = []
        for u in targets:
            ks = keys.get((cid, u))
            if not ks:
                issues.add(IntegrityError, f"cluster {cid}: target unit {u} has no key unit")
                key_sets.append((0,))
                continue
            bad = [k for k in ks if k not in pos]
            if bad:
                issues.add(IntegrityError, f"cluster {cid}: key units {bad} of {u} are not eligible")
                key_sets.append((0,))
                continue
            key_sets.append(tuple(pos[k] for k in ks))
        for (kc, ku) in keys:
            if kc == cid and ku not in targets:
                issues.add(IntegrityError, f"cluster {cid}: keymap lists {ku}, which is not a target unit")
        if not elig:
            issues.add(SchemaError, f"cluster {cid}: no eligible units")
            continue
        if not targets:
            issues.add(SchemaError, f"cluster {cid}: empty target population")
            continue
        covs = {r["unit_id"]: {n: _covariate(r[n]) for n in cov_names} for r in urows}
        clusters.append((cid, elig, inel, targets, key_sets, covs))
    issues.raise_if_any()
    return ExperimentFrame([ClusterFrame(*c) for c in clusters]), cov_names


def load_observed(frame: ExperimentFrame, assignment_path, outcomes_path) -> Observed:
    issues = Issues()
    _, arows = read_csv(assignment_path, ASSIGNMENT_HEADER)
    _, yrows = read_csv(outcomes_path, OUTCOMES_HEADER)
    index = {c.cluster_id: k for k, c in enumerate(frame)}
    A = [np.full(c.n, -1, dtype=np.int64) for c in frame]
    Y = [np.full(c.size_s, np.nan) for c in frame]
    for r in arows:
        where = f"{assignment_path}:{r['_line']}"
        k = index.get(r["cluster_id"])
        if k is None:
            issues.add(IntegrityError, f"{where}: unknown cluster {r['cluster_id']}")
            continue
        c = frame[k]
        try:
            i = c.intervention_units.index(r["unit_id"])
        except ValueError:
            known = r["unit_id"] in c.non_intervention_units
            issues.add(IntegrityError, f"{where}: {'ineligible' if known else 'unknown'} unit {r['unit_id']} has an assignment")
            continue
        if A[k][i] != -1:
            issues.add(IntegrityError, f"{where}: duplicate assignment for unit {r['unit_id']}")
            continue
        try:
            A[k][i] = _flag(r["a"], where + " a")
        except SchemaError as exc:
            issues.add(SchemaError, str(exc))
    for r in yrows:
        where = f"{outcomes_path}:{r['_line']}"
        k = index.get(r["cluster_id"])
        if k is None:
            issues.add(IntegrityError, f"{where}: unknown cluster {r['cluster_id']}")
            continue
        c = frame[k]
        try:
            j = c.target_units.index(r["unit_id"])
        except ValueError:
            issues.add(IntegrityError, f"{where}: outcome for unit {r['unit_id']}, which is not a target unit")
            continue
        if not math.isnan(Y[k][j]):
            issues.add(IntegrityError, f"{where}: duplicate outcome for unit {r['unit_id']}")
            continue
        try:
            y = _number(r["y"], where + " y")
        except SchemaError as exc:
            issues.add(SchemaError, str(exc))
            continue
        if not math.isfinite(y):
            issues.add(IntegrityError, f"{where}: non-finite outcome")
            continue
        Y[k][j] = y
    for k, c in enumerate(frame):
        miss = [c.intervention_units[i] for i in np.flatnonzero(A[k] < 0)]
        if miss:
            issues.add(IntegrityError, f"cluster {c.cluster_id}: no assignment for units {miss}")
        miss = [c.target_units[j] for j in np.flatnonzero(np.isnan(Y[k]))]
        if miss:
            issues.add(IntegrityError, f"cluster {c.cluster_id}: missing outcomes for target units {miss}")
    issues.raise_if_any()
    return Observed(A, Y)


# ---------------------------------------------------------------------------
# Designs and interventions
# ---------------------------------------------------------------------------


def read_json(path_or_text) -> Any:
    if isinstance(path_or_text, (dict, list)):
        return path_or_text
    p = Path(str(path_or_text))
    try:
        text = p.read_text(encoding="utf-8") if p.exists() else str(path_or_text)
        return json.loads(text)
    except json.JSONDecodeError as exc:
        raise SchemaError(f"{path_or_text}: invalid JSON ({exc.msg})") from None


def build_design(spec: dict, cluster: ClusterFrame) -> AssignmentDistribution:
    if not isinstance(spec, dict) or "type" not in spec:
        raise SchemaError("design needs a 'type'")
    kind = spec["type"]
    n = cluster.n
    try:
        if kind == "complete":
            m = spec["n_treated"]
            if not isinstance(m, int) or not 0 <= m <= n:
                raise SchemaError(f"cluster {cluster.cluster_id}: n_treated must be an integer in [0, {n}]")
            return CompleteRandomization(n, m)
        if kind == "stratified":
            labels = [str(v) for v in cluster.covariate(spec["stratum_field"])]
            counts = {str(k): v for k, v in spec["n_treated_per_stratum"].items()}
            return StratifiedRandomization.build(labels, counts)
        if kind == "bernoulli":
            p = spec["p"]
            if isinstance(p, list):
                if len(p) != n:
                    raise SchemaError(f"cluster {cluster.cluster_id}: {len(p)} Bernoulli probabilities for {n} units")
                return Bernoulli(tuple(float(x) for x in p))
            return Bernoulli.uniform(n, float(p))
    except KeyError as exc:
        raise SchemaError(f"design of type {kind!r} lacks field {exc.args[0]!r}") from None
    raise SchemaError(f"unknown design type {kind!r}")


def build_designs(spec, frame: ExperimentFrame) -> tuple[AssignmentDistribution, ...]:
    spec = read_json(spec)
    if isinstance(spec, dict):
        return tuple(build_design(spec, c) for c in frame)
    if not isinstance(spec, list):
        raise SchemaError("design must be an object or a list of objects")
    by_id = {}
    for item in spec:
        if not isinstance(item, dict) or "cluster_id" not in item:
            raise SchemaError("per-cluster designs need a 'cluster_id'")
        by_id[str(item["cluster_id"])] = item
    missing = [c.cluster_id for c in frame if c.cluster_id not in by_id]
    if missing:
        raise SchemaError(f"no design for clusters {missing}")
    return tuple(build_design(by_id[c.cluster_id], c) for c in frame)


def build_rule(spec: dict | None):
    if spec is None:
        return Unrestricted()
    kind = spec.get("kind")
    try:
        if kind == "unrestricted":
            return Unrestricted()
        if kind == "key_treated":
            return KeyTreated(int(spec["a"]))
        if kind == "key_proportion":
            return KeyProportion(float(spec["p_star"]))
        if kind == "group_proportion":
            return GroupProportion(str(spec["group_field"]), float(spec["alpha"]))
    except KeyError as exc:
        raise SchemaError(f"admissible rule {kind!r} lacks field {exc.args[0]!r}") from None
    raise SchemaError(f"unknown admissible rule {kind!r}")


def build_intervention(spec, frame: ExperimentFrame, designs) -> Intervention:
    spec = read_json(spec)
    if not isinstance(spec, dict):
        raise SchemaError("intervention must be a JSON object")
    base = spec.get("base", "design")
    laws = tuple(designs) if base == "design" else build_designs(base, frame)
    return Intervention(laws, build_rule(spec.get("admissible")))


def check_realized(frame: ExperimentFrame, designs, observed: Observed) -> None:
    issues = Issues()
    for c, d, a in zip(frame, designs, observed.assignments):
        if d.pmf(a) <= 0:
            extra = ""
            if isinstance(d, CompleteRandomization):
                extra = f" ({int(a.sum())} treated, design fixes {d.n_treated})"
            issues.add(DesignMismatchError, f"cluster {c.cluster_id}: realized assignment is impossible under the design{extra}")
    issues.raise_if_any()


def load_bundle(
    units,
    keymap,
    assignment=None,
    outcomes=None,
    design=None,
    intervention=None,
    intervention_tilde=None,
) -> DatasetBundle:
    frame, cov = load_frame(units, keymap)
    observed = load_observed(frame, assignment, outcomes) if assignment and outcomes else None
    if observed is not None:
        observed.validate(frame)
    bundle = DatasetBundle(frame, observed, covariate_names=cov)
    if design is not None:
        bundle.design_spec = read_json(design)
        bundle.designs = build_designs(bundle.design_spec, frame)
        if observed is not None:
            check_realized(frame, bundle.designs, observed)
        if intervention is not None:
            bundle.intervention_spec = read_json(intervention)
            bundle.intervention = build_intervention(bundle.intervention_spec, frame, bundle.designs)
        if intervention_tilde is not None:
            bundle.intervention_tilde_spec = read_json(intervention_tilde)
            bundle.intervention_tilde = build_intervention(bundle.intervention_tilde_spec, frame, bundle.designs)
    return bundle


# ---------------------------------------------------------------------------
# Serialization
# ---------------------------------------------------------------------------


def _fmt(v) -> str:
    if isinstance(v, bool):
        return "1" if v else "0"
    if isinstance(v, float):
        return format(v, ".17g")
    return str(v)


def write_bundle(bundle: DatasetBundle, outdir: str | Path) -> dict[str, Path]:
    """Write the four tables back out; reloading gives a structurally identical bundle."""
    outdir = Path(outdir)
    outdir.mkdir(parents=True, exist_ok=True)
    paths = {name: outdir / f"{name}.csv" for name in ("units", "keymap", "assignment", "outcomes")}
    cov = list(bundle.covariate_names)
    with open(paths["units"], "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(list(UNITS_HEADER) + cov)
        for c in bundle.frame:
            targets = set(c.target_units)
            for u in c.intervention_units + c.non_intervention_units:
                row = c.covariates.get(u, {})
                w.writerow([c.cluster_id, u, 1 if u in c.intervention_units else 0, int(u in targets)] + [_fmt(row.get(n, "")) for n in cov])
    with open(paths["keymap"], "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(KEYMAP_HEADER)
        for c in bundle.frame:
            for u, ks in zip(c.target_units, c.key_sets):
                for i in ks:
                    w.writerow([c.cluster_id, u, c.intervention_units[i]])
    if bundle.observed is not None:
        with open(paths["assignment"], "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(ASSIGNMENT_HEADER)
            for c, a in zip(bundle.frame, bundle.observed.assignments):
                for u, x in zip(c.intervention_units, a):
                    w.writerow([c.cluster_id, u, int(x)])
        with open(paths["outcomes"], "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(OUTCOMES_HEADER)
            for c, y in zip(bundle.frame, bundle.observed.outcomes):
                for u, x in zip(c.target_units, y):
                    w.writerow([c.cluster_id, u, _fmt(float(x))])
    return paths


def load_potentials(path, frame: ExperimentFrame):
    """Potential-outcome table from ``potentials.csv``."""
    from .oracle import PotentialOutcomeTable

    _, rows = read_csv(path, POTENTIALS_HEADER)
    index = {c.cluster_id: k for k, c in enumerate(frame)}
    tables: list[dict] = [dict() for _ in frame]
    issues = Issues()
    for r in rows:
        where = f"{path}:{r['_line']}"
        k = index.get(r["cluster_id"])
        if k is None:
            issues.add(IntegrityError, f"{where}: unknown cluster {r['cluster_id']}")
            continue
        c = frame[k]
        bits = r["assignment"]
        if len(bits) != c.n or set(bits) - {"0", "1"}:
            issues.add(SchemaError, f"{where}: assignment must be a 0/1 string of length {c.n}")
            continue
        try:
            j = c.target_units.index(r["unit_id"])
        except ValueError:
            issues.add(IntegrityError, f"{where}: {r['unit_id']} is not a target unit")
            continue
        try:
            y = _number(r["y"], where + " y")
        except SchemaError as exc:
            issues.add(SchemaError, str(exc))
            continue
        row = tables[k].setdefault(tuple(int(b) for b in bits), np.full(c.size_s, np.nan))
        row[j] = y
    for k, c in enumerate(frame):
        for key, row in tables[k].items():
            if np.isnan(row).any():
                issues.add(IntegrityError, f"cluster {c.cluster_id}: incomplete potentials for assignment {''.join(map(str, key))}")
    issues.raise_if_any()
    return PotentialOutcomeTable.tabulated(frame, tables)


def reject_overlap(frame: ExperimentFrame, designs, intervention: Intervention) -> None:
    """Raise OverlapError if some target's restricted law leaves the design support."""
    from .design import check_overlap

    for k, c in enumerate(frame):
        for ks in c.distinct_key_sets:
            law = intervention.unit_law(k, c, ks)
            try:
                check_overlap(law, designs[k])
            except OverlapError as exc:
                raise OverlapError(f"cluster {c.cluster_id}, key set {[c.intervention_units[i] for i in ks]}: {exc}") from None
