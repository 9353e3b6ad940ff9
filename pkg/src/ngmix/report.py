"""Result serialization: params JSON, summary tables, figures.

``params.json`` round-trips the fitted model to full float precision
together with the observed information, standard errors and p-value
bounds; ``fixed_effects.csv`` carries exactly the columns term,
Estimate, SE, p-lower, p-upper; ``trace.csv`` holds the natural-scale
optimization history.  Figures are rendered headlessly (Agg) next to
the tables they illustrate.
"""

from __future__ import annotations

import json
import logging
from pathlib import Path

import numpy as np
import pandas as pd

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402  (backend must be set first)

from .data import write_table
from .errors import ConfigError
from .fem import OperatorSpec
from .mixtures import NvmSpec
from .model import ModelParams

__all__ = [
    "params_to_dict",
    "params_from_dict",
    "write_results",
    "read_params",
    "write_prediction",
    "render_trace_figure",
    "render_prediction_figure",
    "render_tv_figure",
]

logger = logging.getLogger(__name__)

RESULTS_SCHEMA_VERSION = 1


def _spec_to_dict(spec: NvmSpec | None):
    if spec is None:
        return None
    mu = np.asarray(spec.mu, dtype=float)
    return {"family": spec.family, "nu": spec.nu,
            "mu": mu.tolist() if mu.ndim else float(mu)}


def _spec_from_dict(doc) -> NvmSpec | None:
    if doc is None:
        return None
    return NvmSpec(doc["family"], nu=doc.get("nu"), mu=doc.get("mu", 0.0))


def params_to_dict(params: ModelParams) -> dict:
    """JSON-ready representation of a full parameter point."""
    return {
        "beta": params.beta.tolist(),
        "sigma": float(params.sigma),
        "noise": _spec_to_dict(params.noise_spec),
        "noise_scope": params.noise_scope,
        "Sigma": None if params.Sigma is None else params.Sigma.tolist(),
        "random_effects": _spec_to_dict(params.re_spec),
        "process": _spec_to_dict(params.proc_spec),
        "operator": None if params.operator is None else {
            "kind": params.operator.kind,
            "kappa": float(params.operator.kappa),
        },
    }


def params_from_dict(doc: dict) -> ModelParams:
    op = doc.get("operator")
    return ModelParams(
        beta=np.asarray(doc["beta"], dtype=float),
        sigma=float(doc["sigma"]),
        noise_spec=_spec_from_dict(doc["noise"]),
        Sigma=None if doc.get("Sigma") is None else np.asarray(doc["Sigma"],
                                                               dtype=float),
        re_spec=_spec_from_dict(doc.get("random_effects")),
        proc_spec=_spec_from_dict(doc.get("process")),
        operator=None if op is None else OperatorSpec(op["kind"],
                                                      float(op["kappa"])),
        noise_scope=doc.get("noise_scope", "per-observation"),
    )


def _maybe(arr):
    return None if arr is None else np.asarray(arr).tolist()


def write_results(result, outdir, terms=None, fixed=None, random=None) -> dict:
    """Write params.json, fixed_effects.csv and trace.csv; return paths.

    ``terms`` names the fixed-effect rows (defaults to the estimator's
    beta labels); ``fixed``/``random`` formula lists are stored in the
    JSON so later prediction runs can rebuild designs without the
    original configuration.
    """
    out = Path(outdir)
    out.mkdir(parents=True, exist_ok=True)
    p = result.theta_hat.beta.size
    if terms is None:
        terms = [n for n in result.names if n.startswith("beta")][:p] or [
            f"beta[{i}]" for i in range(p)
        ]
    if len(terms) != p:
        raise ConfigError(f"{p} fixed effects but {len(terms)} term names")

    doc = {
        "schema_version": RESULTS_SCHEMA_VERSION,
        "params": params_to_dict(result.theta_hat),
        "names": list(result.names),
        "terms": list(terms),
        "fixed": None if fixed is None else list(fixed),
        "random": None if random is None else list(random),
        "observed_fim": _maybe(result.observed_fim),
        "std_errors": _maybe(result.std_errors),
        "mc_se": _maybe(result.mc_se),
        "p_lower": _maybe(result.p_lower),
        "p_upper": _maybe(result.p_upper),
        "grid_nodes": None if getattr(result, "disc", None) is None
        else result.disc.nodes.tolist(),
    }
    params_path = out / "params.json"
    params_path.write_text(json.dumps(doc, indent=2) + "\n", encoding="utf-8")

    dim = len(result.names)
    se = result.std_errors if result.std_errors is not None else np.full(dim, np.nan)
    plo = result.p_lower if result.p_lower is not None else np.full(dim, np.nan)
    phi = result.p_upper if result.p_upper is not None else np.full(dim, np.nan)
    table = pd.DataFrame({
        "term": list(terms),
        "Estimate": result.theta_hat.beta,
        "SE": se[:p],
        "p-lower": plo[:p],
        "p-upper": phi[:p],
    })
    fixed_path = out / "fixed_effects.csv"
    write_table(table, fixed_path)

    trace_path = out / "trace.csv"
    trace = pd.DataFrame({k: result.trace[k] for k in result.trace})
    write_table(trace, trace_path)
    logger.info("wrote %s, %s, %s", params_path, fixed_path, trace_path)
    return {"params": params_path, "fixed_effects": fixed_path,
            "trace": trace_path}


def read_params(path) -> tuple[ModelParams, dict]:
    """Load a params.json written by write_results."""
    try:
        doc = json.loads(Path(path).read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON ({exc})") from exc
    if doc.get("schema_version") != RESULTS_SCHEMA_VERSION:
        raise ConfigError(
            f"{path}: schema_version must be {RESULTS_SCHEMA_VERSION}, got "
            f"{doc.get('schema_version')!r}"
        )
    return params_from_dict(doc["params"]), doc


def write_prediction(summary, subject_id, path) -> None:
    """Prediction table: one row per horizon time."""
    frame = pd.DataFrame({
        "subject_id": [subject_id] * summary.times.size,
        "time": summary.times,
        "mode": [summary.mode] * summary.times.size,
        "mean": summary.mean,
        "median": summary.median,
        "q05": summary.q05,
        "q95": summary.q95,
        "excursion_prob": summary.excursion_prob,
    })
    write_table(frame, path)


def render_trace_figure(result, path) -> None:
    """Small-multiple traces of every scalar parameter."""
    names = [k for k in result.trace if k != "iteration"]
    iters = result.trace.get("iteration", np.arange(len(next(iter(
        result.trace.values())))))
    ncol = min(3, max(1, len(names)))
    nrow = (len(names) + ncol - 1) // ncol
    fig, axes = plt.subplots(nrow, ncol, figsize=(4 * ncol, 2.2 * nrow),
                             squeeze=False)
    for ax, name in zip(axes.ravel(), names):
        ax.plot(iters, result.trace[name], lw=0.7)
        ax.set_title(name, fontsize=9)
        ax.tick_params(labelsize=7)
    for ax in axes.ravel()[len(names):]:
        ax.set_axis_off()
    fig.suptitle("parameter traces (natural scale)", fontsize=10)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def render_prediction_figure(summary, subject, path) -> None:
    """Observed series with the predictive band and decline probability."""
    has_prob = np.any(np.isfinite(summary.excursion_prob))
    nrows = 2 if has_prob else 1
    fig, axes = plt.subplots(nrows, 1, figsize=(7, 3 * nrows), sharex=True,
                             squeeze=False)
    ax = axes[0, 0]
    ax.fill_between(summary.times, summary.q05, summary.q95, alpha=0.25,
                    label="central 90%")
    ax.plot(summary.times, summary.mean, lw=1.2, label="predictive mean")
    if subject is not None and subject.n:
        ax.plot(subject.times, subject.y, "o", ms=4, label="observed")
    ax.set_ylabel("outcome")
    ax.legend(fontsize=8)
    ax.set_title(f"{summary.mode} prediction", fontsize=10)
    if has_prob:
        ax2 = axes[1, 0]
        ax2.plot(summary.times, summary.excursion_prob, lw=1.2)
        ax2.set_ylim(-0.02, 1.02)
        ax2.set_ylabel("P(decline)")
        ax2.set_xlabel("time")
    else:
        ax.set_xlabel("time")
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def render_tv_figure(frame: pd.DataFrame, path) -> None:
    """Distance-to-limit curves against the tail parameter."""
    fig, ax = plt.subplots(figsize=(6, 4))
    ax.loglog(frame["nu"], frame["tv_normal"], label="to nearest Gaussian")
    ax.loglog(frame["nu"], frame["tv_cauchy"], label="to nearest Cauchy")
    ax.set_xlabel("tail parameter")
    ax.set_ylabel("total variation distance")
    ax.legend(fontsize=8)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
