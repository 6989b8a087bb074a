"""Point estimate + variance + interval, packaged for output."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from statistics import NormalDist
from typing import Any, Sequence

import numpy as np

from .design import GroupProportion, Intervention, KeyProportion, KeyTreated
from .errors import AssumptionError, SchemaError
from .estimators import Estimand, point_estimate
from .frame import ExperimentFrame, Observed
from .variance import additive, cr_special, lipschitz, stratified

METHODS = ("stratified", "additive", "lipschitz", "cr-special")


@dataclass
class EstimateReport:
    estimand: dict
    estimator: str
    point: float
    variance: float | tuple[float, float]
    variance_raw: float
    se: float
    ci: tuple[float, float]
    method: str
    diagnostics: dict = field(default_factory=dict)
    warnings: list[str] = field(default_factory=list)

    def to_dict(self) -> dict:
        var = {"lo": self.variance[0], "hi": self.variance[1]} if isinstance(self.variance, tuple) else self.variance
        return {
            "estimand": self.estimand,
            "estimator": self.estimator,
            "point": self.point,
            "variance": var,
            "variance_raw": self.variance_raw,
            "se": self.se,
            "ci": list(self.ci),
            "method": self.method,
            "diagnostics": self.diagnostics,
            "warnings": list(self.warnings),
        }

    def to_json(self) -> str:
        return dumps(self.to_dict())


def format_float(x: float) -> str:
    return format(float(x), ".17g")


def _encode(obj: Any) -> str:
    if isinstance(obj, (bool, np.bool_)):
        return "1" if obj else "0"
    if isinstance(obj, (int, np.integer)):
        return str(int(obj))
    if isinstance(obj, (float, np.floating)):
        return format_float(obj) if math.isfinite(obj) else "null"
    if isinstance(obj, str):
        return json.dumps(obj)
    if isinstance(obj, dict):
        return "{" + ", ".join(f"{json.dumps(str(k))}: {_encode(v)}" for k, v in obj.items()) + "}"
    if isinstance(obj, (list, tuple, np.ndarray)):
        return "[" + ", ".join(_encode(v) for v in obj) + "]"
    if obj is None:
        return "null"
    raise TypeError(f"cannot serialize {type(obj).__name__}")


def dumps(obj: Any) -> str:
    """JSON with 17 significant digits for floats and 0/1 for booleans."""
    return _encode(obj)


def z_quantile(alpha: float) -> float:
    if not 0.0 < alpha < 1.0:
        raise SchemaError("alpha must lie in (0, 1)")
    return NormalDist().inv_cdf(1.0 - alpha / 2.0)


def default_method(estimand: Estimand) -> str:
    if estimand.kind == "tau" and not isinstance(estimand.pi.admissible, (KeyTreated, KeyProportion)):
        return "additive"
    return "stratified"


def _variance(frame, designs, estimand, observed, estimator, method, lip_spec, mc_draws, seed):
    """Returns (value or interval, raw value, flags, per-cluster contributions)."""
    if method == "stratified":
        v = stratified.variance_hat(frame, designs, estimand, observed, estimator)
        return v.value, v.value, v.flags, v.per_cluster
    if method == "additive":
        v = additive.variance_additive_hat(frame, designs, estimand, observed, estimator, mc_draws=mc_draws, seed=seed)
        return v.value, v.value, v.flags, v.per_cluster
    if estimator != "ht":
        raise AssumptionError(f"variance method {method!r} is available for the HT estimator only")
    if method == "cr-special":
        if estimand.kind == "mu":
            val = cr_special.var_mu_cr_hat(frame, designs, estimand.a, observed)
        elif estimand.kind == "de":
            val = cr_special.var_de_cr_hat(frame, designs, observed)
        else:
            raise AssumptionError("closed-form variances cover mu and de only")
        if estimand.pi.laws != tuple(designs):
            raise AssumptionError("closed forms need the intervention law to equal the design")
        return val, val, [], None
    if method == "lipschitz":
        if estimand.kind != "mu":
            raise AssumptionError("the Lipschitz bound covers mu only")
        if lip_spec is None:
            raise SchemaError("Lipschitz variance needs a LipschitzSpec")
        est = lipschitz.lipschitz_bound_hat(frame, designs, estimand.a, observed, lip_spec, estimand.pi.laws)
        return est.interval, est.upper, list(est.warnings), est.per_cluster
    raise SchemaError(f"unknown variance method {method!r}; choose from {', '.join(METHODS)}")


def analyze(
    frame: ExperimentFrame,
    designs: Sequence,
    estimand: Estimand,
    observed: Observed,
    estimator: str = "ht",
    method: str | None = None,
    alpha: float = 0.05,
    lipschitz_spec: lipschitz.LipschitzSpec | None = None,
    mc_draws: int | None = None,
    seed=None,
) -> EstimateReport:
    """Estimate, variance and normal interval for one estimand."""
    if estimator not in ("ht", "hajek"):
        raise SchemaError(f"unknown estimator {estimator!r}")
    designs = tuple(designs)
    method = method or default_method(estimand)
    pe = point_estimate(frame, designs, estimand, observed)
    point = pe.value(estimator)
    var, raw, flags, per = _variance(frame, designs, estimand, observed, estimator, method, lipschitz_spec, mc_draws, seed)
    notes = list(flags)
    upper = var[1] if isinstance(var, tuple) else var
    if upper < 0:
        notes.append("negative_variance_clamped")
        upper = 0.0
        var = (0.0, 0.0) if isinstance(var, tuple) else 0.0
    se = math.sqrt(upper)
    z = z_quantile(alpha)
    diagnostics: dict = {
        "alpha": alpha,
        "components": [
            {
                "sign": c.sign,
                "ht": c.ht,
                "denominator": c.denominator,
                "cluster_ht": c.cluster_ht.tolist(),
                "cluster_denominator": c.cluster_den.tolist(),
            }
            for c in pe.components
        ],
    }
    if per is not None:
        diagnostics["cluster_variance"] = np.asarray(per).tolist()
    if estimator == "hajek":
        diagnostics["hajek_means"] = [c.hajek for c in pe.components]
    if method == "lipschitz":
        notes.append("variance_bound_is_asymptotic")
    return EstimateReport(
        estimand=estimand.to_dict(),
        estimator=estimator,
        point=point,
        variance=var,
        variance_raw=raw,
        se=se,
        ci=(point - z * se, point + z * se),
        method=method,
        diagnostics=diagnostics,
        warnings=notes,
    )


# ---------------------------------------------------------------------------
# Named entry points
# ---------------------------------------------------------------------------


def estimate_tau_ht(frame, designs, intervention: Intervention, observed, **kw) -> EstimateReport:
    return analyze(frame, designs, Estimand.tau(intervention), observed, "ht", **kw)


def estimate_tau_hajek(frame, designs, intervention: Intervention, observed, **kw) -> EstimateReport:
    return analyze(frame, designs, Estimand.tau(intervention), observed, "hajek", **kw)


def estimate_mu_ht(frame, designs, laws, a: int, observed, **kw) -> EstimateReport:
    return analyze(frame, designs, Estimand.mu(laws, a), observed, "ht", **kw)


def estimate_mu_hajek(frame, designs, laws, a: int, observed, **kw) -> EstimateReport:
    return analyze(frame, designs, Estimand.mu(laws, a), observed, "hajek", **kw)


def _effect(kind: str, laws, laws_tilde, a) -> Estimand:
    if kind == "de":
        return Estimand.de(laws)
    if kind == "ie":
        return Estimand.ie(laws, laws_tilde, a)
    if kind == "te":
        return Estimand.te(laws, laws_tilde)
    raise SchemaError(f"unknown effect {kind!r}")


def estimate_effect_ht(kind: str, frame, designs, laws, observed, laws_tilde=None, a=None, **kw) -> EstimateReport:
    return analyze(frame, designs, _effect(kind, laws, laws_tilde, a), observed, "ht", **kw)


def estimate_effect_hajek(kind: str, frame, designs, laws, observed, laws_tilde=None, a=None, **kw) -> EstimateReport:
    return analyze(frame, designs, _effect(kind, laws, laws_tilde, a), observed, "hajek", **kw)


def estimate_tau_multi_ht(frame, designs, p_star: float, observed, **kw) -> EstimateReport:
    return analyze(frame, designs, Estimand.tau_multi(p_star), observed, "ht", **kw)


def estimate_tau_multi_hajek(frame, designs, p_star: float, observed, **kw) -> EstimateReport:
    return analyze(frame, designs, Estimand.tau_multi(p_star), observed, "hajek", **kw)


def group_intervention(designs, group_field: str, alpha: float) -> Intervention:
    """Base laws equal to the design, restricted so a share ``alpha`` of the group is treated."""
    return Intervention(tuple(designs), GroupProportion(group_field, alpha))
