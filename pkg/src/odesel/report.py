"""JSON and markdown rendering of fits, tests, tournaments and studies.

JSON keeps full precision; markdown prints 6 significant digits. Both are
built from the same dictionaries so they always agree.
"""

from __future__ import annotations

import json
import math
from importlib.resources import files
from typing import Any, Optional

import numpy as np

from . import __version__

SCHEMA_VERSION = "1.0"


def _clean(obj: Any) -> Any:
    """Convert numpy values to JSON types; non-finite floats become null."""
    if isinstance(obj, dict):
        return {str(k): _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _clean(obj.tolist())
    if isinstance(obj, (np.bool_, bool)):
        return bool(obj)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        v = float(obj)
        return v if math.isfinite(v) else None
    return obj


def fit_dict(fit) -> dict:
    out = fit.summary()
    out["theta_names"] = list(fit.theta_names)
    out["H_hat"] = fit.H_hat
    out["V_hat"] = fit.V_hat
    out["n"] = fit.n
    return out


def build_report(config: dict, fits=(), tests=(), study=None, extra: Optional[dict] = None) -> dict:
    rep = {
        "version": {"odesel": __version__, "schema": SCHEMA_VERSION},
        "config": config,
        "fits": [fit_dict(f) for f in fits],
        "tests": [t if isinstance(t, dict) else t.as_dict() for t in tests],
        "study": None if study is None else study.as_dict(),
    }
    if extra:
        rep.update(extra)
    return _clean(rep)


def to_json(report: dict) -> str:
    return json.dumps(report, indent=2, sort_keys=True, allow_nan=False) + "\n"


def load_schema() -> dict:
    return json.loads((files("odesel") / "data" / "report.schema.json").read_text(encoding="utf-8"))


def _g(v) -> str:
    if v is None:
        return "nan"
    if isinstance(v, float):
        return f"{v:.6g}"
    return str(v)


def _table(header, rows) -> list[str]:
    lines = ["| " + " | ".join(header) + " |", "|" + "|".join("---" for _ in header) + "|"]
    lines += ["| " + " | ".join(_g(c) for c in r) + " |" for r in rows]
    return lines


def to_markdown(report: dict) -> str:
    lines = [f"# odesel report ({report['config'].get('command', '')})", ""]
    for fit in report["fits"]:
        lines.append(f"## Fit: {fit['model']}")
        lines.append("")
        lines += _table(["parameter", "estimate", "free"],
                        [(k, v, k in fit["free"]) for k, v in fit["theta"].items()])
        lines.append("")
        lines.append(f"- total log-likelihood: {_g(fit['total_loglik'])}")
        lines.append(f"- residual sum of squares: {_g(fit['rss'])}")
        lines.append(f"- converged: {fit['converged']} ({fit['message']}); iterations {fit['iterations']}, "
                     f"scaled gradient {_g(fit['grad_norm'])}, starts {fit['starts']} ({fit['starts_failed']} failed)")
        lines.append("")
    if report["tests"]:
        lines.append("## Pairwise tests")
        lines.append("")
        rows = []
        for t in report["tests"]:
            favor = {"FavorA": t["model_a"], "FavorB": t["model_b"]}.get(t["decision"], "-")
            rows.append((t["model_a"], t["model_b"], t["t_stat"], favor, t["h_n"], t["lr_tilde"], t["sigma_tilde2"]))
        lines += _table(["Model A", "Model B", "S-W statistic", "In favor", "h_n", "LR~", "sigma~^2"], rows)
        lines.append("")
        alpha = report["tests"][0]["alpha"]
        lines.append(f"alpha = {_g(alpha)}")
        tour = report.get("tournament")
        if tour and tour.get("adjusted_alpha") is not None:
            lines.append(f"Bonferroni-adjusted alpha = {_g(tour['adjusted_alpha'])}; adjusted decisions: "
                         + ", ".join(f"({r['model_a']}, {r['model_b']}) {r['adjusted_decision']}" for r in tour["rows"]))
        flagged = [t for t in report["tests"] if t["diagnostics"]["fallbacks"]]
        for t in flagged:
            lines.append(f"- ({t['model_a']}, {t['model_b']}): " + "; ".join(t["diagnostics"]["fallbacks"]))
        lines.append("")
    tour = report.get("tournament")
    if tour:
        if tour["excluded"]:
            lines.append("Excluded models: " + "; ".join(f"{k} ({v})" for k, v in tour["excluded"].items()))
        lines.append("Ranking (presentation only): " + ", ".join(tour["ranking"]))
        lines.append("")
    study = report.get("study")
    if study:
        lines.append(f"## {study['kind'].capitalize()} study")
        lines.append("")
        g = study["grid_name"]
        lines += _table([g, "reps", "events", "rate", "MC s.e.", "favor A", "favor B", "failures"],
                        [(c[g], c["replications"], c["rejections"], c["rate"], c["mc_se"],
                          c["favor_a"], c["favor_b"], c["failures"]) for c in study["cells"]])
        lines.append("")
        lines.append(f"event: {study['settings'].get('event', '')}; alpha = {_g(study['alpha'])}")
        lines.append("")
    lines.append("## Configuration")
    lines.append("")
    lines.append("```json")
    lines.append(json.dumps(report["config"], indent=2, sort_keys=True))
    lines.append("```")
    return "\n".join(lines) + "\n"
