"""Subject-level predictive distributions and decline-criterion probabilities.

Given fitted parameters, draws of the noise-free signal Y* = xβ + dU + AW
are produced by Gibbs sampling the latent variables conditional on a
mode-dependent data window: nowcasting conditions each horizon time on the
subject's past and current observations, forecasting on strictly past
observations, smoothing on the full record.  Summaries (mean, median,
central 90% interval) come from the empirical draw distribution, and the
clinical decline rule — a relative loss of at least ``threshold`` per year
sustained over a trailing ``window`` — is evaluated per draw as a
log-scale slope criterion.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, DataError, DomainError
from .fem import assemble, default_grid, observation_matrix
from .gibbs import GibbsConfig, initial_state, sweep
from .model import ModelParams, SubjectRecord, sample_latent_prior

__all__ = [
    "DeclineCriterion",
    "PredictRequest",
    "PredictiveSummary",
    "predict",
    "excursion_probability",
    "egfr_from_scr",
]

logger = logging.getLogger(__name__)

_MODES = ("nowcast", "smooth", "forecast")
_TIME_TOL = 1e-9


@dataclass(frozen=True)
class DeclineCriterion:
    """Decline rule: relative loss of at least ``threshold`` per year.

    On the log-outcome scale the rule is a slope condition over the
    trailing ``window`` (years): (Y*(t) - Y*(t-window))/window <=
    log(1 - threshold).
    """

    threshold: float = 0.05
    window: float = 1.0

    def __post_init__(self):
        if not 0.0 < self.threshold < 1.0:
            raise ConfigError(
                f"threshold must be a relative rate in (0, 1), got {self.threshold}"
            )
        if not self.window > 0.0:
            raise ConfigError(f"window must be positive, got {self.window}")

    @property
    def log_drop(self) -> float:
        return math.log1p(-self.threshold)


@dataclass(frozen=True)
class PredictRequest:
    """What to predict: mode, horizon times, decline rule, draw budget.

    ``x`` and ``d`` give fixed/random design rows at the horizon times.
    When omitted, rows are reused from observation times that match a
    horizon time exactly, and columns that are constant across the
    subject's record are carried over; anything else needs explicit rows.
    """

    mode: str
    horizon: np.ndarray
    subject_id: str | None = None
    criterion: DeclineCriterion | None = field(default_factory=DeclineCriterion)
    draws: int = 2000
    burn: int = 200
    x: np.ndarray | None = None
    d: np.ndarray | None = None
    keep_draws: bool = False

    def __post_init__(self):
        if self.mode not in _MODES:
            raise ConfigError(
                f"mode must be one of {_MODES}, got {self.mode!r}"
            )
        horizon = np.atleast_1d(np.asarray(self.horizon, dtype=float))
        if horizon.ndim != 1 or horizon.size == 0:
            raise ConfigError("horizon must be a nonempty vector of times")
        if not np.all(np.isfinite(horizon)):
            raise ConfigError("horizon times must be finite")
        order = np.argsort(horizon, kind="stable")
        horizon = horizon[order]
        if np.any(np.diff(horizon) == 0):
            raise ConfigError("horizon times must be distinct")
        object.__setattr__(self, "horizon", horizon)
        if int(self.draws) != self.draws or self.draws < 1:
            raise ConfigError(f"draws must be a positive integer, got {self.draws}")
        object.__setattr__(self, "draws", int(self.draws))
        if int(self.burn) != self.burn or self.burn < 0:
            raise ConfigError(f"burn must be a nonnegative integer, got {self.burn}")
        object.__setattr__(self, "burn", int(self.burn))
        for name in ("x", "d"):
            val = getattr(self, name)
            if val is not None:
                val = np.atleast_2d(np.asarray(val, dtype=float))
                if val.shape[0] != horizon.size:
                    raise ConfigError(
                        f"{name} must have one row per horizon time, got "
                        f"{val.shape[0]} rows for {horizon.size} times"
                    )
                object.__setattr__(self, name, val[order])


@dataclass(frozen=True)
class PredictiveSummary:
    """Per-time empirical summaries of the noise-free signal Y*."""

    times: np.ndarray
    mode: str
    mean: np.ndarray
    median: np.ndarray
    q05: np.ndarray
    q95: np.ndarray
    excursion_prob: np.ndarray
    mean_mc_se: np.ndarray
    draws: np.ndarray | None = None


def excursion_probability(times, draws, criterion: DeclineCriterion) -> np.ndarray:
    """Fraction of draws meeting the decline rule at each time.

    ``draws`` has one trajectory per row, evaluated at ``times``; the
    value at t - window is linearly interpolated on that grid.  Times
    whose trailing window reaches before the first grid point get NaN.
    """
    times = np.asarray(times, dtype=float)
    draws = np.atleast_2d(np.asarray(draws, dtype=float))
    if draws.shape[1] != times.size:
        raise DataError(
            f"draws have {draws.shape[1]} columns but {times.size} times given"
        )
    if np.any(np.diff(times) <= 0):
        raise DataError("times must be strictly increasing")
    out = np.full(times.size, np.nan)
    for k, t in enumerate(times):
        t0 = t - criterion.window
        if t0 < times[0] - _TIME_TOL:
            continue
        j = int(np.clip(np.searchsorted(times, t0, side="right") - 1, 0,
                        times.size - 2))
        frac = (t0 - times[j]) / (times[j + 1] - times[j])
        past = (1.0 - frac) * draws[:, j] + frac * draws[:, j + 1]
        slope = (draws[:, k] - past) / criterion.window
        out[k] = float(np.mean(slope <= criterion.log_drop))
    return out


def egfr_from_scr(scr, age, female=False, black=False):
    """Estimated glomerular filtration rate from serum creatinine (µmol/L)."""
    scr = np.asarray(scr, dtype=float)
    age = np.asarray(age, dtype=float)
    if np.any(scr <= 0) or np.any(age <= 0):
        raise DomainError("scr and age must be positive")
    out = (175.0 * (scr / 88.4) ** (-1.154) * age ** (-0.203)
           * np.where(female, 0.742, 1.0) * np.where(black, 1.21, 1.0))
    return out if out.ndim else float(out)


def _horizon_designs(subject: SubjectRecord, horizon, x, d):
    """Design rows at horizon times, filled from the record when possible."""
    out = []
    for name, given, obs in (("x", x, subject.x), ("d", d, subject.d)):
        if given is not None:
            if given.shape[1] != obs.shape[1]:
                raise ConfigError(
                    f"horizon {name} has {given.shape[1]} columns, record has "
                    f"{obs.shape[1]}"
                )
            out.append(given)
            continue
        if obs.shape[1] == 0:
            out.append(np.zeros((horizon.size, 0)))
            continue
        rows = np.empty((horizon.size, obs.shape[1]))
        constant = np.all(obs == obs[:1], axis=0) if subject.n else np.zeros(0)
        for k, t in enumerate(horizon):
            match = np.flatnonzero(np.abs(subject.times - t) <= _TIME_TOL)
            if match.size:
                rows[k] = obs[match[0]]
            elif subject.n and np.all(constant):
                rows[k] = obs[0]
            else:
                bad = "the record is empty" if not subject.n else (
                    f"columns {np.flatnonzero(~constant).tolist()} vary"
                )
                raise DataError(
                    f"horizon time {t} matches no observation and {bad}; "
                    f"pass explicit {name} rows in the request"
                )
        out.append(rows)
    return out[0], out[1]


def _cover_horizon(grid, lo, hi):
    """Extend a node grid so [lo, hi] is inside it, keeping the spacing."""
    grid = np.asarray(grid, dtype=float)
    step = float(np.median(np.diff(grid)))
    added = 0
    while grid[0] > lo:
        grid = np.concatenate([[grid[0] - step], grid])
        added += 1
    while grid[-1] < hi:
        grid = np.concatenate([grid, [grid[-1] + step]])
        added += 1
    if added:
        logger.info("extended process grid by %d nodes to cover the horizon",
                    added)
    return grid


def _sub_record(subject: SubjectRecord, mask) -> SubjectRecord:
    return SubjectRecord(id=subject.id, times=subject.times[mask],
                         y=subject.y[mask], x=subject.x[mask],
                         d=subject.d[mask])


def _conditioning_masks(times_obs, horizon, mode):
    """One boolean observation mask per horizon time, grouped when equal.

    Returns a list of (mask, horizon index array) pairs.  Nowcasting keeps
    observations at or before each horizon time, forecasting strictly
    before, smoothing the whole record for every time.
    """
    if mode == "smooth":
        return [(np.ones(times_obs.size, dtype=bool), np.arange(horizon.size))]
    groups: list[tuple[np.ndarray, list[int]]] = []
    for k, t in enumerate(horizon):
        if mode == "nowcast":
            mask = times_obs <= t + _TIME_TOL
        else:
            mask = times_obs < t - _TIME_TOL
        for got, idx in groups:
            if np.array_equal(got, mask):
                idx.append(k)
                break
        else:
            groups.append((mask, [k]))
    return [(mask, np.asarray(idx)) for mask, idx in groups]


def _column_se(col) -> float:
    """Batch-means standard error for one chain of draws."""
    n = col.size
    if n < 4:
        return 0.0
    nb = max(2, int(math.sqrt(n)))
    size = n // nb
    means = col[: nb * size].reshape(nb, size).mean(axis=1)
    return float(means.std(ddof=1) / math.sqrt(nb))


def predict(theta_hat: ModelParams, subject: SubjectRecord,
            request: PredictRequest, grid=None, rng=None) -> PredictiveSummary:
    """Predictive summaries of Y* = xβ + dU + AW at the horizon times.

    ``grid`` fixes the process nodes (extended if the horizon runs past
    it); by default one is built from the record and horizon together.
    A horizon time with no usable conditioning observations falls back
    to the prior predictive with a warning.
    """
    if request.subject_id is not None and request.subject_id != subject.id:
        raise DataError(
            f"request targets subject {request.subject_id!r} but record is "
            f"{subject.id!r}"
        )
    rng = np.random.default_rng(rng)
    horizon = request.horizon
    xh, dh = _horizon_designs(subject, horizon, request.x, request.d)

    disc = None
    amat = np.zeros((horizon.size, 0))
    if theta_hat.has_process:
        all_t = np.concatenate([subject.times, horizon])
        if grid is None:
            nodes = default_grid(all_t)
        else:
            nodes = _cover_horizon(grid, float(all_t.min()), float(all_t.max()))
        disc = assemble(theta_hat.operator, nodes)
        amat = observation_matrix(disc.nodes, horizon)

    fixed = xh @ theta_hat.beta
    d_draws = request.draws
    draws = np.empty((d_draws, horizon.size))
    se = np.empty(horizon.size)
    prob = np.full(horizon.size, np.nan)
    cfg = GibbsConfig(sweeps_per_step=1)

    for mask, idx in _conditioning_masks(subject.times, horizon, request.mode):
        group = np.empty((d_draws, horizon.size))
        if not mask.any():
            logger.warning(
                "subject %s has no observations in the %s window; using the "
                "prior predictive", subject.id, request.mode)
            for t in range(d_draws):
                st = sample_latent_prior(theta_hat, subject, rng, disc)
                group[t] = fixed + dh @ st.u + amat @ st.w
        else:
            cond = _sub_record(subject, mask)
            st = initial_state(theta_hat, cond, rng, disc)
            st = sweep(theta_hat, cond, disc, st, cfg, rng, request.burn)
            for t in range(d_draws):
                st = sweep(theta_hat, cond, disc, st, cfg, rng)
                group[t] = fixed + dh @ st.u + amat @ st.w
        draws[:, idx] = group[:, idx]
        for k in idx:
            se[k] = _column_se(group[:, k])
        if request.criterion is not None:
            prob[idx] = excursion_probability(horizon, group,
                                              request.criterion)[idx]

    q05, med, q95 = np.quantile(draws, [0.05, 0.5, 0.95], axis=0)
    return PredictiveSummary(
        times=horizon, mode=request.mode, mean=draws.mean(axis=0),
        median=med, q05=q05, q95=q95, excursion_prob=prob, mean_mc_se=se,
        draws=draws if request.keep_draws else None,
    )
