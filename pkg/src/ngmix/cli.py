"""Command-line interface: simulate, fit, predict, tv, egfr.

Each subcommand reads CSV/JSON inputs, runs the corresponding library
pipeline and writes CSV/JSON outputs (figures alongside, rendered
headlessly).  Errors exit 1 with a single machine-parsable line on
stderr; unknown flags exit 2 with usage.
"""

from __future__ import annotations

import argparse
import logging
import os
import sys
from pathlib import Path
from types import SimpleNamespace

import numpy as np

from .config import load_config
from .data import ingest, subjects_to_frame, write_table
from .errors import ConfigError, DataError, NgmixError
from .estimator import fit as run_fit
from .fem import default_grid
from .model import SubjectRecord, simulate as simulate_model
from .predict import DeclineCriterion, PredictRequest, egfr_from_scr
from .predict import predict as run_predict
from .report import (
    read_params,
    render_prediction_figure,
    render_trace_figure,
    render_tv_figure,
    write_prediction,
    write_results,
)
from .tvswitch import tv_to_nearest_cauchy, tv_to_nearest_gaussian

__all__ = ["build_parser", "run_command", "main"]

logger = logging.getLogger(__name__)

_THREAD_LIMITS = []  # keeps threadpoolctl handles alive for the process


def _cap_threads(requested) -> None:
    n = requested if requested is not None else os.environ.get("NGMIX_THREADS")
    if n is None:
        return
    try:
        count = int(n)
    except ValueError:
        raise ConfigError(f"thread count must be an integer, got {n!r}")
    if count < 1:
        raise ConfigError(f"thread count must be positive, got {count}")
    import threadpoolctl

    _THREAD_LIMITS.append(threadpoolctl.threadpool_limits(count))
    logger.info("capped linear-algebra pools at %d thread(s)", count)


def _parse_range(text: str, name: str, spacing: str) -> np.ndarray:
    """lo:hi:count range (linear or geometric) or a comma list."""
    if ":" in text:
        parts = text.split(":")
        if len(parts) != 3:
            raise ConfigError(f"{name} range must be lo:hi:count, got {text!r}")
        try:
            lo, hi, count = float(parts[0]), float(parts[1]), int(parts[2])
        except ValueError:
            raise ConfigError(f"{name} range must be numeric lo:hi:count, "
                              f"got {text!r}")
        if count < 1:
            raise ConfigError(f"{name} range needs count >= 1, got {count}")
        if count == 1:
            return np.array([lo])
        if spacing == "geometric":
            if lo <= 0 or hi <= lo:
                raise ConfigError(f"{name} range needs 0 < lo < hi for a "
                                  f"geometric grid, got {text!r}")
            return np.geomspace(lo, hi, count)
        if hi <= lo:
            raise ConfigError(f"{name} range needs lo < hi, got {text!r}")
        return np.linspace(lo, hi, count)
    try:
        return np.asarray([float(v) for v in text.split(",") if v.strip()])
    except ValueError:
        raise ConfigError(f"could not parse {name} list {text!r}")


def _shared_grid(cfg, times) -> np.ndarray:
    if cfg.grid_nodes is not None:
        return cfg.grid_nodes
    return default_grid(times, max_nodes=cfg.grid_max_nodes, pad=cfg.grid_pad)


def _covariate_triples(fixed, random, covariates):
    triples = []
    for name in covariates:
        if name in fixed:
            triples.append((name, "x", fixed.index(name)))
        else:
            triples.append((name, "d", random.index(name)))
    return triples


def _cmd_simulate(args) -> int:
    cfg = load_config(args.config)
    m = args.subjects if args.subjects is not None else cfg.simulate.subjects
    seed = args.seed if args.seed is not None else cfg.seed
    rng = np.random.default_rng(seed)
    sim = cfg.simulate
    n = sim.obs_per_subject
    width = len(str(max(m - 1, 1)))
    p, q = len(cfg.fixed), len(cfg.random)

    designs = []
    for i in range(m):
        if sim.schedule == "regular":
            times = np.linspace(sim.t_max / n, sim.t_max, n)
        else:
            times = np.sort(rng.uniform(0.0, sim.t_max, n))
        values = {"1": np.ones(n), "time": times}
        for name in cfg.covariates:
            values[name] = np.full(n, rng.standard_normal())
        x = (np.column_stack([values[t] for t in cfg.fixed])
             if p else np.zeros((n, 0)))
        d = (np.column_stack([values[t] for t in cfg.random])
             if q else np.zeros((n, 0)))
        designs.append(SubjectRecord(id=f"s{i:0{width}d}", times=times,
                                     y=np.zeros(n), x=x, d=d))

    grid = None
    if cfg.params0.has_process:
        grid = _shared_grid(cfg, np.concatenate([s.times for s in designs]))
    subjects = simulate_model(cfg.params0, designs, rng, grid=grid)

    out = Path(args.out) if args.out else Path(cfg.output or ".") / "simulated.csv"
    out.parent.mkdir(parents=True, exist_ok=True)
    frame = subjects_to_frame(
        subjects, _covariate_triples(cfg.fixed, cfg.random, cfg.covariates))
    write_table(frame, out)
    print(f"wrote {out} ({m} subjects, {len(frame)} rows)")
    return 0


def _cmd_fit(args) -> int:
    cfg = load_config(args.config)
    subjects = ingest(args.data, cfg)
    settings = cfg.settings
    if args.seed is not None:
        import dataclasses

        settings = dataclasses.replace(settings, seed=args.seed)
    grid = None
    if cfg.params0.has_process:
        grid = _shared_grid(cfg, np.concatenate([s.times for s in subjects]))
    result = run_fit(subjects, cfg.params0, settings, grid=grid)

    outdir = Path(args.out) if args.out else Path(cfg.output or "results")
    paths = write_results(result, outdir, terms=cfg.fixed, fixed=cfg.fixed,
                          random=cfg.random)
    render_trace_figure(result, outdir / "trace.png")
    from .gradients import ParamLayout

    natural = ParamLayout.from_params(result.theta_hat).natural(result.theta_hat)
    se = result.std_errors
    for i, name in enumerate(result.names):
        tail = "" if se is None else f"  (SE {se[i]:.4g})"
        print(f"{name}: {natural[i]:.6g}{tail}")
    print(f"wrote {paths['params']}, {paths['fixed_effects']}, "
          f"{paths['trace']}, {outdir / 'trace.png'}")
    return 0


def _horizon_designs_from_terms(sub, fixed, random, horizon):
    """CLI fill rule: intercept -> 1, time -> horizon, else last value."""
    out = []
    for terms, attr in ((fixed, "x"), (random, "d")):
        mat = getattr(sub, attr)
        cols = []
        for j, term in enumerate(terms):
            if term == "1":
                cols.append(np.ones(horizon.size))
            elif term == "time":
                cols.append(horizon)
            else:
                if sub.n and not np.all(mat[:, j] == mat[-1, j]):
                    logger.info(
                        "using the last observed value of %r for horizon "
                        "rows of subject %s", term, sub.id)
                cols.append(np.full(horizon.size,
                                    mat[-1, j] if sub.n else 0.0))
        out.append(np.column_stack(cols) if cols
                   else np.zeros((horizon.size, 0)))
    return out[0], out[1]


def _cmd_predict(args) -> int:
    params, doc = read_params(args.params)
    fixed, random = doc.get("fixed"), doc.get("random")
    if fixed is None or random is None:
        raise ConfigError(f"{args.params} does not record the model formulas")
    subjects = ingest(args.data, SimpleNamespace(fixed=fixed, random=random))
    by_id = {s.id: s for s in subjects}
    if args.subject not in by_id:
        raise DataError(
            f"subject {args.subject!r} not in {args.data} "
            f"({len(by_id)} subjects present)"
        )
    sub = by_id[args.subject]

    horizon = (_parse_range(args.horizon, "horizon", "linear")
               if args.horizon else sub.times.copy())
    xh, dh = _horizon_designs_from_terms(sub, fixed, random, horizon)
    criterion = None if args.no_criterion else DeclineCriterion(
        threshold=args.threshold, window=args.window)
    request = PredictRequest(mode=args.mode, horizon=horizon,
                             subject_id=sub.id, criterion=criterion,
                             draws=args.draws, burn=args.burn, x=xh, d=dh)
    stored = doc.get("grid_nodes")
    grid = None if stored is None else np.asarray(stored, dtype=float)
    summary = run_predict(params, sub, request, grid=grid, rng=args.seed)

    outdir = Path(args.out or ".")
    outdir.mkdir(parents=True, exist_ok=True)
    csv_path = outdir / "prediction.csv"
    fig_path = outdir / "prediction.png"
    write_prediction(summary, sub.id, csv_path)
    render_prediction_figure(summary, sub, fig_path)
    print(f"wrote {csv_path}, {fig_path}")
    return 0


def _cmd_tv(args) -> int:
    if args.family != "nig":
        raise ConfigError(
            f"tv curves are available for the nig family only, got "
            f"{args.family!r}"
        )
    grid = _parse_range(args.grid, "grid", "geometric")
    if np.any(grid <= 0):
        raise ConfigError("tail parameters must be positive")
    rows = {"nu": [], "tv_normal": [], "normal_scale": [], "tv_cauchy": [],
            "cauchy_scale": []}
    for a in grid:
        tvn, sn = tv_to_nearest_gaussian(float(a))
        tvc, sc = tv_to_nearest_cauchy(float(a))
        rows["nu"].append(float(a))
        rows["tv_normal"].append(tvn)
        rows["normal_scale"].append(sn)
        rows["tv_cauchy"].append(tvc)
        rows["cauchy_scale"].append(sc)
    import pandas as pd

    frame = pd.DataFrame(rows)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    write_table(frame, out)
    fig_path = out.with_suffix(".png")
    render_tv_figure(frame, fig_path)
    print(f"wrote {out} ({len(frame)} rows), {fig_path}")
    return 0


def _cmd_egfr(args) -> int:
    value = egfr_from_scr(args.scr, args.age, female=args.female,
                          black=args.black)
    print(f"{value:.6g}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="ngmix",
        description="Mixed models with normal variance-mean mixture "
                    "components for longitudinal data.",
    )
    parser.add_argument("--threads", type=int, default=None,
                        help="cap linear-algebra thread pools "
                             "(or set NGMIX_THREADS)")
    sub = parser.add_subparsers(dest="command", required=True)

    p_sim = sub.add_parser("simulate", help="draw a synthetic dataset")
    p_sim.add_argument("--config", required=True)
    p_sim.add_argument("--subjects", type=int, default=None)
    p_sim.add_argument("--seed", type=int, default=None)
    p_sim.add_argument("--out", default=None, help="output CSV path")
    p_sim.set_defaults(func=_cmd_simulate)

    p_fit = sub.add_parser("fit", help="fit the model to a dataset")
    p_fit.add_argument("--config", required=True)
    p_fit.add_argument("--data", required=True)
    p_fit.add_argument("--out", default=None, help="output directory")
    p_fit.add_argument("--seed", type=int, default=None)
    p_fit.set_defaults(func=_cmd_fit)

    p_pred = sub.add_parser("predict", help="subject-level prediction")
    p_pred.add_argument("--params", required=True,
                        help="params.json from a fit run")
    p_pred.add_argument("--data", required=True)
    p_pred.add_argument("--subject", required=True)
    p_pred.add_argument("--mode", default="nowcast",
                        choices=["nowcast", "smooth", "forecast"])
    p_pred.add_argument("--horizon", default=None,
                        help="times as lo:hi:count or a comma list "
                             "(default: the subject's own times)")
    p_pred.add_argument("--draws", type=int, default=2000)
    p_pred.add_argument("--burn", type=int, default=200)
    p_pred.add_argument("--threshold", type=float, default=0.05,
                        help="decline rate per year for the excursion rule")
    p_pred.add_argument("--window", type=float, default=1.0,
                        help="trailing window (years) for the excursion rule")
    p_pred.add_argument("--no-criterion", action="store_true")
    p_pred.add_argument("--seed", type=int, default=0)
    p_pred.add_argument("--out", default=None, help="output directory")
    p_pred.set_defaults(func=_cmd_predict)

    p_tv = sub.add_parser("tv", help="distance-to-limit curves")
    p_tv.add_argument("--family", default="nig")
    p_tv.add_argument("--grid", required=True,
                      help="tail parameters as lo:hi:count (geometric) "
                           "or a comma list")
    p_tv.add_argument("--out", required=True, help="output CSV path")
    p_tv.set_defaults(func=_cmd_tv)

    p_eg = sub.add_parser("egfr", help="creatinine to eGFR transform")
    p_eg.add_argument("--scr", type=float, required=True,
                      help="serum creatinine, µmol/L")
    p_eg.add_argument("--age", type=float, required=True)
    p_eg.add_argument("--female", action="store_true")
    p_eg.add_argument("--black", action="store_true")
    p_eg.set_defaults(func=_cmd_egfr)
    return parser


def run_command(argv) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code) if exc.code else 0
    command = args.command
    try:
        _cap_threads(args.threads)
        return args.func(args)
    except NgmixError as exc:
        message = " ".join(str(exc).split())
        print(f"ngmix {command}: error: {message}", file=sys.stderr)
        return 1
    except OSError as exc:
        message = " ".join(str(exc).split())
        print(f"ngmix {command}: error: {message}", file=sys.stderr)
        return 1


def main() -> None:
    logging.basicConfig(level=logging.INFO,
                        format="%(levelname)s %(name)s: %(message)s")
    sys.exit(run_command(sys.argv[1:]))


if __name__ == "__main__":
    main()
