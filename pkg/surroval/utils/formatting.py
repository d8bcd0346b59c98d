"""
Rendering of fit and surrogacy results.

JSON keeps full precision and is the single source of truth; the text
summary is formatted from the JSON dictionaries only, rounded to the
requested number of decimals.
"""

import json
import logging
import math
from pathlib import Path

import numpy as np
import pandas as pd

from ..optimize import FitResult, wald_table
from ..utils.parallel import thread_count

logger = logging.getLogger(__name__)

SIGNIF_LEGEND = "Signif. codes: 0 '***' 0.001 '**' 0.01 '*' 0.05 '.' 0.1 ' ' 1"
STRENGTH_LEGEND = "Correlation strength: <= 0.49 'Low'; ]0.49 - 0.72[ 'Medium'; >= 0.72 'High'"

# fixed treatment effects reported as hazard ratios
HR_PARAMETERS = ("beta_zs", "beta_zt")


def significance_code(p: float | None) -> str:
    if p is None or not np.isfinite(p):
        return ""
    for cutoff, code in ((0.001, "***"), (0.01, "**"), (0.05, "*"), (0.1, ".")):
        if p < cutoff:
            return code
    return ""


def _clean(value):
    """JSON-safe scalars: numpy types unwrapped, NaN/inf become null."""
    if isinstance(value, dict):
        return {str(k): _clean(v) for k, v in value.items()}
    if isinstance(value, list | tuple):
        return [_clean(v) for v in value]
    if isinstance(value, np.ndarray):
        return [_clean(v) for v in value.tolist()]
    if isinstance(value, np.bool_ | bool):
        return bool(value)
    if isinstance(value, np.integer):
        return int(value)
    if isinstance(value, np.floating | float):
        value = float(value)
        return value if math.isfinite(value) else None
    if isinstance(value, Path):
        return str(value)
    return value


def write_json(path, data: dict) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(_clean(data), indent=2))
    return path


def fit_to_dict(fit: FitResult, level: float = 0.05) -> dict:
    """Convergence summary, Wald table and hazard ratios of a fit."""
    out = {
        "converged": fit.converged,
        "n_iter": fit.n_iter,
        "criteria": {"parameters": fit.criteria[0], "likelihood": fit.criteria[1], "gradient": fit.criteria[2]},
        "loglik_penalized": fit.loglik_pen,
        "loglik": fit.loglik,
        "lcv": fit.lcv,
        "kappa": None,
        "parameters": [],
        "hazard_ratios": [],
    }
    if fit.kappa_used is not None:
        out["kappa"] = {"surrogate": fit.kappa_used.kappa_s, "final": fit.kappa_used.kappa_t}
    if fit.vcov is None:
        logger.warning("No covariance matrix; Wald table omitted")
        return out
    table = wald_table(fit, level)
    for name, row in table.iterrows():
        out["parameters"].append({"name": name, **row.to_dict(), "signif": significance_code(row["p"])})
        if name in HR_PARAMETERS or name.startswith(("beta_t:", "beta_s[", "beta_t[")):
            out["hazard_ratios"].append(
                {
                    "name": name,
                    "hr": math.exp(row["estimate"]),
                    "lower": math.exp(row["lower"]),
                    "upper": math.exp(row["upper"]),
                }
            )
    return out


def _fmt(value, decimals: int) -> str:
    if value is None:
        return "--"
    return f"{value:.{decimals}f}"


def summary_text(fit_json: dict, surrogacy_json: dict | None = None, decimals: int = 4, curves: pd.DataFrame | None = None) -> str:
    """Plain-text summary built from the JSON dictionaries."""
    lines = []
    crit = fit_json["criteria"]
    lines.append(f"Convergence: {'yes' if fit_json['converged'] else 'NO'} after {fit_json['n_iter']} iterations")
    lines.append(
        "Convergence criteria: Parameters = {} Likelihood = {} Gradient = {}".format(
            *(f"{crit[k]:.3g}" if crit[k] is not None else "--" for k in ("parameters", "likelihood", "gradient"))
        )
    )
    lines.append(f"Penalized marginal log-likelihood = {_fmt(fit_json['loglik_penalized'], 2)}")
    if fit_json.get("lcv") is not None:
        lines.append(f"LCV = the approximate likelihood cross-validation criterion = {_fmt(fit_json['lcv'], 3)}")
    if fit_json.get("kappa"):
        k = fit_json["kappa"]
        lines.append(f"Smoothing parameters: surrogate = {k['surrogate']:g}, final = {k['final']:g}")

    if fit_json["parameters"]:
        lines.append("")
        lines.append(f"{'':<24}{'Estimate':>12}{'Std Error':>12}{'z':>10}{'P':>12}")
        for row in fit_json["parameters"]:
            lines.append(
                f"{row['name']:<24}{_fmt(row['estimate'], decimals):>12}{_fmt(row['se'], decimals):>12}"
                f"{_fmt(row['z'], 3):>10}{_fmt(row['p'], decimals):>12} {row['signif']}"
            )
        lines.append("---")
        lines.append(SIGNIF_LEGEND)
    if fit_json["hazard_ratios"]:
        lines.append("")
        lines.append("Hazard ratios (HR) and 95% confidence intervals:")
        for row in fit_json["hazard_ratios"]:
            lines.append(
                f"{row['name']:<24}{_fmt(row['hr'], decimals):>12}"
                f"  ({_fmt(row['lower'], decimals)} ; {_fmt(row['upper'], decimals)})"
            )

    if surrogacy_json:
        lines.append("")
        lines.append("Surrogacy evaluation criterion")
        lines.append(f"{'':<8}{'Level':<12}{'Estimate':>10}{'Std Err':>10}{'CI lower':>10}{'CI upper':>10}{'Strength':>10}")
        tau = surrogacy_json.get("ktau")
        if tau:
            ci = tau.get("ci_boot") or [None, None]
            lines.append(
                f"{'Ktau':<8}{'Individual':<12}{_fmt(tau['value'], 3):>10}{'--':>10}"
                f"{_fmt(ci[0], 3):>10}{_fmt(ci[1], 3):>10}"
            )
        r2 = surrogacy_json.get("r2_trial")
        if r2:
            ci = r2["ci_delta"]
            lines.append(
                f"{'R2trial':<8}{'Trial':<12}{_fmt(r2['reported'], 3):>10}{_fmt(r2['se_delta'], 3):>10}"
                f"{_fmt(ci[0], 3):>10}{_fmt(ci[1], 3):>10}{r2['strength']:>10}"
            )
            if r2.get("ci_boot"):
                boot = r2["ci_boot"]
                lines.append(
                    f"{'R2.boot':<8}{'Trial':<12}{_fmt(r2['reported'], 3):>10}{'--':>10}"
                    f"{_fmt(boot[0], 3):>10}{_fmt(boot[1], 3):>10}"
                )
        lines.append("---")
        lines.append(STRENGTH_LEGEND)
        threshold = surrogacy_json.get("ste")
        if threshold:
            lines.append(
                f"Surrogate threshold effect (STE) : {_fmt(threshold['value'], 3)} (HR = {_fmt(threshold['hr'], 3)} )"
            )
        for flag in surrogacy_json.get("flags", []):
            lines.append(f"Note: {flag.replace('_', ' ')}")

    if curves is not None and len(curves):
        lines.append("")
        lines.append(f"{'Time':>10}{'PTE':>10}{'TTE':>10}{'NDE':>10}{'NIE':>10}")
        for row in curves.itertuples(index=False):
            flag = " (unstable)" if row.tte_near_zero else ""
            lines.append(
                f"{row.time:>10.3f}{_fmt(row.pte, 3):>10}{_fmt(row.tte, 3):>10}"
                f"{_fmt(row.nde, 3):>10}{_fmt(row.nie, 3):>10}{flag}"
            )
    return "\n".join(lines) + "\n"


def manifest(config: dict, seed: int, version: str, wall_time: float, outputs: list[str]) -> dict:
    """Everything needed to repeat a run: the validated config echo, seed, version and timing."""
    return {
        "version": version,
        "seed": seed,
        "threads": thread_count(),
        "wall_time_seconds": wall_time,
        "config": config,
        "outputs": sorted(outputs),
    }
