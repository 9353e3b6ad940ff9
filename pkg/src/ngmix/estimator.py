"""Stochastic-gradient maximum likelihood for the mixed model.

The marginal likelihood has no closed form once any component leaves the
Gaussian family, but Fisher's identity turns posterior draws of the
variance components into unbiased gradient estimates.  This module owns
the optimization loop around that idea: step-size schedules, subject
sub-sampling (including the design-aware grouped sampler that keeps the
fixed-effect gradient identifiable in every draw), the preconditioned
ascent iteration with Polyak averaging, Louis-identity standard errors
and Monte-Carlo-aware p-value bounds.
"""

from __future__ import annotations

import dataclasses
import logging
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import cho_solve
from scipy.stats import norm as _norm

from .engine import (
    batch_cfim,
    batch_hessians,
    batch_scores,
    build_batches,
    draw_gaussian_batch,
    operator_trace,
    stack_states,
    sweep_batch,
)
from .errors import (
    ConfigError,
    DataError,
    DivergenceError,
    DomainError,
    FactorizationError,
    ParameterError,
    RangeError,
)
from .fem import assemble, default_grid
from .gibbs import initial_state
from .gradients import ParamLayout
from .model import ModelParams
from .tvswitch import SwitchRule, apply_switch

__all__ = [
    "StepSchedule",
    "SubsamplePlan",
    "FitSettings",
    "FitResult",
    "form_groups",
    "build_plan",
    "draw_subsample",
    "fit",
    "louis_observed_fim",
    "p_bounds",
]

logger = logging.getLogger(__name__)

_STRATEGIES = ("full", "bernoulli", "grouped")

# Iterations spent calibrating scaled-identity preconditioners for blocks
# whose expected curvature has no closed form (the operator parameter, and
# skew blocks under Gamma/inverse-Gamma mixing).  Those blocks hold their
# initial values while the calibration window runs.
_WARMUP_ITERS = 20
_SCALE_FLOOR = 1e-8
_DIVERGENCE_NORM = 1e8


@dataclass(frozen=True)
class StepSchedule:
    """Robbins-Monro step sizes alpha_n = alpha0 / (1 + n/n0)^gamma.

    gamma in (0.5, 1] guarantees that the step series diverges while its
    squares converge, the standard conditions for almost-sure convergence
    of the stochastic iteration.
    """

    alpha0: float = 1.0
    n0: float = 2000.0
    gamma: float = 0.6
    burn_in: int = 10000
    total_iters: int = 20000

    def __post_init__(self):
        if not (np.isfinite(self.alpha0) and self.alpha0 > 0):
            raise ConfigError(f"alpha0 must be positive, got {self.alpha0}")
        if not (np.isfinite(self.n0) and self.n0 > 0):
            raise ConfigError(f"n0 must be positive, got {self.n0}")
        if not (0.5 < self.gamma <= 1.0):
            raise ConfigError(f"gamma must lie in (0.5, 1], got {self.gamma}")
        if int(self.total_iters) < 1:
            raise ConfigError(f"total_iters must be positive, got {self.total_iters}")
        if not (0 <= int(self.burn_in) < int(self.total_iters)):
            raise ConfigError(
                f"burn_in must lie in [0, total_iters), got {self.burn_in}"
            )
        object.__setattr__(self, "burn_in", int(self.burn_in))
        object.__setattr__(self, "total_iters", int(self.total_iters))

    def alpha(self, n: int) -> float:
        return self.alpha0 / (1.0 + n / self.n0) ** self.gamma


def form_groups(designs) -> tuple[list[list[int]], list[int]]:
    """Partition subjects into groups with full-rank stacked designs.

    Greedy construction: grow a group one subject at a time, keeping a
    candidate only when it raises the rank of the accumulated Gram matrix
    sum_i x_i^T x_i, and close the group as soon as the rank reaches p.
    Subjects skipped while building one group stay available for later
    ones; when the remaining pool cannot reach full rank it becomes the
    leftover pool G_0.  Deterministic given the input order.

    Returns ``(groups, leftover)`` where each group is a list of subject
    indices into ``designs``.
    """
    xs = [np.atleast_2d(np.asarray(x, dtype=float)) for x in designs]
    if not xs:
        raise DataError("at least one subject is required to form groups")
    p = xs[0].shape[1]
    for i, x in enumerate(xs):
        if x.shape[1] != p:
            raise DataError(
                f"design {i} has {x.shape[1]} columns, expected {p}"
            )

    def create_group(pool):
        lead = pool[0]
        gram = xs[lead].T @ xs[lead]
        rank = np.linalg.matrix_rank(gram)
        group, skipped = [lead], []
        pos = 1
        while rank < p and pos < len(pool):
            cand = pool[pos]
            pos += 1
            trial = gram + xs[cand].T @ xs[cand]
            trial_rank = np.linalg.matrix_rank(trial)
            if trial_rank > rank:
                group.append(cand)
                gram, rank = trial, trial_rank
            else:
                skipped.append(cand)
        return group, skipped + list(pool[pos:]), rank

    remaining = list(range(len(xs)))
    groups: list[list[int]] = []
    leftover: list[int] = []
    while remaining:
        group, rest, rank = create_group(remaining)
        if rank == p:
            groups.append(group)
            remaining = rest
        else:
            leftover = remaining
            remaining = []
    return groups, leftover


@dataclass(frozen=True)
class SubsamplePlan:
    """A validated sub-sampling strategy over ``n_subjects`` subjects.

    ``weights`` returned by :func:`draw_subsample` are inverse inclusion
    probabilities, which makes the weighted-gradient estimator unbiased
    for every strategy (group members carry k/r, leftover-pool members
    carry |G_0| over the number drawn, Bernoulli survivors carry s).
    """

    strategy: str
    n_subjects: int
    groups: tuple[tuple[int, ...], ...] = ()
    leftover: tuple[int, ...] = ()
    m_target: int | None = None
    r: int | None = None
    s: float | None = None

    def __post_init__(self):
        if self.strategy not in _STRATEGIES:
            raise ConfigError(f"unknown subsample strategy {self.strategy!r}")
        if self.n_subjects < 1:
            raise ConfigError("a subsample plan needs at least one subject")


def build_plan(designs, strategy: str = "full", M: int | None = None,
               r: int | None = None, s: float | None = None) -> SubsamplePlan:
    """Validate a sub-sampling configuration against the study designs.

    ``designs`` is the list of per-subject fixed-effect matrices; only the
    grouped strategy inspects them.  A grouped request that cannot build
    any full-rank group degrades to the full strategy with a warning, so
    a fit never silently drops the fixed-effect gradient.
    """
    m = len(designs)
    if strategy == "full":
        return SubsamplePlan("full", m)
    if strategy == "bernoulli":
        if s is None or not np.isfinite(s) or s < 1.0:
            raise ConfigError(
                f"bernoulli sub-sampling needs a rate parameter s >= 1, got {s}"
            )
        return SubsamplePlan("bernoulli", m, s=float(s))
    if strategy != "grouped":
        raise ConfigError(f"unknown subsample strategy {strategy!r}")

    groups, leftover = form_groups(designs)
    if not groups:
        logger.warning(
            "no full-rank subject group could be formed; "
            "falling back to full sub-sampling"
        )
        return SubsamplePlan("full", m)
    if M is None or r is None:
        raise ConfigError("grouped sub-sampling needs both M and r")
    M, r = int(M), int(r)
    largest = max(len(g) for g in groups)
    if M < largest:
        raise ConfigError(
            f"subsample size M={M} is smaller than the largest group ({largest})"
        )
    if not (1 <= r <= len(groups)):
        raise ConfigError(
            f"r must lie in [1, {len(groups)}] (the number of groups), got {r}"
        )
    return SubsamplePlan(
        "grouped", m,
        groups=tuple(tuple(g) for g in groups),
        leftover=tuple(leftover),
        m_target=M, r=r,
    )


def draw_subsample(plan: SubsamplePlan, rng) -> tuple[np.ndarray, np.ndarray]:
    """Draw one iteration's subject set and inverse-probability weights.

    Grouped draws select r of the k groups uniformly, then top the sample
    up to about M subjects from the leftover pool; at least one leftover
    is always drawn when the pool is non-empty, since a pool that can
    never be visited would bias the gradient.  A Bernoulli draw may be
    empty, in which case the caller skips the update.
    """
    m = plan.n_subjects
    if plan.strategy == "full":
        return np.arange(m), np.ones(m)
    if plan.strategy == "bernoulli":
        keep = rng.random(m) < 1.0 / plan.s
        idx = np.flatnonzero(keep)
        return idx, np.full(idx.size, plan.s)

    k = len(plan.groups)
    chosen = rng.choice(k, size=plan.r, replace=False)
    idx_parts = [np.asarray(plan.groups[g], dtype=np.int64) for g in chosen]
    selected = sum(part.size for part in idx_parts)
    weight_parts = [np.full(selected, k / plan.r)]
    if plan.leftover:
        pool = np.asarray(plan.leftover, dtype=np.int64)
        drawn = min(pool.size, max(1, plan.m_target - selected))
        picks = rng.choice(pool.size, size=drawn, replace=False)
        idx_parts.append(pool[picks])
        weight_parts.append(np.full(drawn, pool.size / drawn))
    return np.concatenate(idx_parts), np.concatenate(weight_parts)


@dataclass(frozen=True)
class FitSettings:
    """Everything the optimizer needs besides the data and start point.

    ``n0`` and ``burn_in`` default to iters/10 and iters/2; ``se_draws``
    is the Gibbs sample size for the Louis information at the estimate
    (0 skips standard errors entirely).
    """

    iters: int = 20000
    burn_in: int | None = None
    alpha0: float = 1.0
    gamma: float = 0.6
    n0: float | None = None
    strategy: str = "full"
    M: int | None = None
    r: int | None = None
    s: float | None = None
    sweeps: int = 5
    seed: int | None = 0
    se_draws: int = 400
    max_nodes: int = 200
    switch_rule: SwitchRule = field(default_factory=SwitchRule)

    def schedule(self) -> StepSchedule:
        burn = self.iters // 2 if self.burn_in is None else self.burn_in
        n0 = self.iters / 10.0 if self.n0 is None else self.n0
        return StepSchedule(self.alpha0, n0, self.gamma, burn, self.iters)


@dataclass
class FitResult:
    """Estimate, uncertainty and diagnostics from one optimizer run.

    ``names`` orders every vector and the FIM rows; all values are on the
    natural scale.  ``trace`` maps each scalar parameter name (plus
    "iteration") to its per-iteration history.
    """

    theta_hat: ModelParams
    observed_fim: np.ndarray | None
    std_errors: np.ndarray | None
    mc_se: np.ndarray
    p_lower: np.ndarray | None
    p_upper: np.ndarray | None
    trace: dict[str, np.ndarray]
    names: list[str]
    disc: object | None = None


def _apply_switches(params: ModelParams, rule: SwitchRule) -> tuple[ModelParams, bool]:
    noise = apply_switch(rule, params.noise_spec)
    re_spec = apply_switch(rule, params.re_spec) if params.re_spec is not None else None
    proc = apply_switch(rule, params.proc_spec) if params.proc_spec is not None else None
    changed = (noise.family != params.noise_spec.family
               or (re_spec is not None and re_spec.family != params.re_spec.family)
               or (proc is not None and proc.family != params.proc_spec.family))
    if not changed:
        return params, False
    return dataclasses.replace(
        params, noise_spec=noise, re_spec=re_spec, proc_spec=proc
    ), True


def _opt_from_natural(layout: ParamLayout, nat: np.ndarray) -> np.ndarray:
    out = np.asarray(nat, dtype=float).copy()
    for b in layout.blocks:
        if b.log:
            out[layout.offset(b.name)] = np.log(out[layout.offset(b.name)])
    return out


def _batch_means_se(rows: np.ndarray) -> np.ndarray:
    """Monte Carlo SE of column means by the batch-means estimator."""
    n = rows.shape[0]
    if n < 4:
        return np.zeros(rows.shape[1])
    nb = max(2, int(np.sqrt(n)))
    size = n // nb
    trimmed = rows[n - nb * size:]
    means = trimmed.reshape(nb, size, -1).mean(axis=1)
    return np.std(means, axis=0, ddof=1) / np.sqrt(nb)


def _merge_info(acc, piece):
    if acc is None or piece is None:
        return None
    return acc + piece


def fit(dataset, params0: ModelParams, settings: FitSettings | None = None,
        grid=None) -> FitResult:
    """Maximize the marginal likelihood by preconditioned stochastic ascent.

    Each iteration draws a weighted subject subsample, refreshes the
    per-subject Gibbs chains (warm-started across iterations), averages
    the complete-data scores over the sweeps, and takes the step
    alpha_n * P^-1 g on the optimization scale, where P is the weighted
    complete-data Fisher information.  Blocks without an explicit
    curvature use a scaled identity calibrated from the gradient's mean
    square over a 20-iteration warm-up during which they hold still.
    Near-Gaussian or near-Cauchy NIG components are collapsed to the
    boundary family as soon as they cross the switch rule's thresholds.

    The estimate is the average of the post-burn-in natural-scale
    iterates (restarted after a family switch), with batch-means Monte
    Carlo standard errors; parameter standard errors come from the
    Louis-identity observed information at the estimate.

    Raises
    ------
    DivergenceError
        When the natural parameter vector leaves [-1e8, 1e8] or turns
        non-finite; the partial trace rides along on the exception.
    """
    settings = settings or FitSettings()
    subjects = list(dataset)
    if not subjects:
        raise DataError("cannot fit an empty dataset")
    m = len(subjects)
    rng = np.random.default_rng(settings.seed)
    # a start point already past a switch threshold collapses immediately
    params, _ = _apply_switches(params0, settings.switch_rule)

    disc = None
    if params.has_process:
        if grid is None:
            pooled = np.concatenate([s.times for s in subjects])
            grid = default_grid(pooled, max_nodes=settings.max_nodes)
        disc = assemble(params.operator, np.asarray(grid, dtype=float))

    plan = build_plan([s.x for s in subjects], settings.strategy,
                      M=settings.M, r=settings.r, s=settings.s)
    schedule = settings.schedule()
    layout = ParamLayout.from_params(params)

    batches = build_batches(subjects, params, disc)
    states = [
        stack_states([initial_state(params, subj, rng, disc)
                      for subj in batch.subjects])
        for batch in batches
    ]
    batch_of = np.empty(m, dtype=np.int64)
    row_of = np.empty(m, dtype=np.int64)
    for bi, batch in enumerate(batches):
        batch_of[batch.indices] = bi
        row_of[batch.indices] = np.arange(batch.size)

    init_names = layout.names()
    col_of = {name: j for j, name in enumerate(init_names)}
    trace_rows = np.full((schedule.total_iters, len(init_names)), np.nan)

    def record(it: int, params: ModelParams, layout: ParamLayout) -> np.ndarray:
        nat = layout.natural(params)
        for name, val in zip(layout.names(), nat):
            trace_rows[it, col_of[name]] = val
        return nat

    def trace_dict(upto: int, layout: ParamLayout) -> dict[str, np.ndarray]:
        cols = [col_of[name] for name in layout.names()]
        out = {"iteration": np.arange(upto)}
        for name, c in zip(layout.names(), cols):
            out[name] = trace_rows[:upto, c].copy()
        return out

    theta = layout.pack(params)
    warm_sq: dict[str, float] = {}
    warm_count = 0
    scale_of: dict[str, float] = {}
    avg_start = 0

    for it in range(schedule.total_iters):
        idx, wts = draw_subsample(plan, rng)
        if idx.size:
            sumw = float(np.sum(wts))
            ghat = np.zeros(layout.dim)
            info = {b.name: np.zeros((b.size, b.size)) for b in layout.blocks}
            trace_term = operator_trace(disc) if layout.has("kappa") else None
            for bi in np.unique(batch_of[idx]):
                mask = batch_of[idx] == bi
                rows = row_of[idx[mask]]
                w_rows = wts[mask]
                sub = batches[bi].take(rows)
                st = states[bi].take(rows)
                acc = np.zeros((rows.size, layout.dim))
                for _ in range(settings.sweeps):
                    st = sweep_batch(params, sub, st, disc, rng, 1)
                    acc += batch_scores(params, sub, st, disc, layout, trace_term)
                states[bi].put(rows, st)
                ghat += (w_rows / settings.sweeps) @ acc
                for name, piece in batch_cfim(params, sub, w_rows, disc, layout).items():
                    info[name] = _merge_info(info[name], piece)

            if warm_count < _WARMUP_ITERS:
                gbar = ghat / sumw
                for b in layout.blocks:
                    if b.size:
                        block = gbar[layout.offset(b.name)]
                        warm_sq[b.name] = warm_sq.get(b.name, 0.0) \
                            + float(np.mean(block * block))
                warm_count += 1
                if warm_count == _WARMUP_ITERS:
                    scale_of = {name: max(val / warm_count, _SCALE_FLOOR)
                                for name, val in warm_sq.items()}
                calibrated = warm_count == _WARMUP_ITERS
            else:
                calibrated = True

            step = np.zeros(layout.dim)
            alpha = schedule.alpha(it)
            for b in layout.blocks:
                sl = layout.offset(b.name)
                piece = info[b.name]
                if piece is not None:
                    try:
                        chol = np.linalg.cholesky(0.5 * (piece + piece.T))
                        step[sl] = alpha * cho_solve((chol, True), ghat[sl])
                        continue
                    except np.linalg.LinAlgError:
                        pass
                if not calibrated or b.name not in scale_of:
                    continue  # hold until the warm-up scale exists
                step[sl] = alpha * ghat[sl] / (scale_of[b.name] * sumw)

            # A step leaving the valid region (non-PD Sigma, overflowing
            # exponentials) is halved until it fits; a vanishing step
            # keeps the previous point.
            while np.any(step):
                try:
                    params = layout.unpack(params, theta + step)
                    theta = theta + step
                    break
                except (FactorizationError, ParameterError, DomainError, RangeError):
                    step *= 0.5
                    if float(np.max(np.abs(step))) < 1e-12:
                        break
            if layout.has("kappa"):
                disc = disc.with_kappa(params.operator.kappa)

        nat = record(it, params, layout)
        if not np.all(np.isfinite(nat)) or float(np.max(np.abs(nat))) > _DIVERGENCE_NORM:
            raise DivergenceError(
                f"parameters diverged at iteration {it}",
                trace=trace_dict(it + 1, layout),
            )

        params, switched = _apply_switches(params, settings.switch_rule)
        if switched:
            layout = ParamLayout.from_params(params)
            theta = layout.pack(params)
            avg_start = it + 1
            record(it, params, layout)

    window = max(schedule.burn_in, avg_start)
    cols = [col_of[name] for name in layout.names()]
    post = trace_rows[window:, cols]
    if post.shape[0] == 0:
        post = trace_rows[-1:, cols]
    theta_bar = post.mean(axis=0)
    mc_se = _batch_means_se(post)
    theta_hat = layout.unpack(params, _opt_from_natural(layout, theta_bar))
    if layout.has("kappa"):
        disc = disc.with_kappa(theta_hat.operator.kappa)

    observed_fim = std_errors = p_lo = p_hi = None
    if settings.se_draws >= 2:
        observed_fim = louis_observed_fim(
            theta_hat, subjects, settings.se_draws, disc=disc, rng=rng,
            states=states,
        )
        std_errors = _se_from_fim(observed_fim)
        p_lo, p_hi = p_bounds(layout.natural(theta_hat), std_errors, mc_se)

    return FitResult(
        theta_hat=theta_hat,
        observed_fim=observed_fim,
        std_errors=std_errors,
        mc_se=mc_se,
        p_lower=p_lo,
        p_upper=p_hi,
        trace=trace_dict(schedule.total_iters, layout),
        names=layout.names(),
        disc=disc,
    )


def _se_from_fim(fim: np.ndarray) -> np.ndarray:
    """Standard errors from an observed information matrix.

    A PD matrix inverts exactly; otherwise the pseudo-inverse is used and
    a conditioning warning logged.
    """
    try:
        chol = np.linalg.cholesky(fim)
        inv = cho_solve((chol, True), np.eye(fim.shape[0]))
    except np.linalg.LinAlgError:
        logger.warning(
            "observed information is not positive definite; "
            "standard errors use its pseudo-inverse"
        )
        # Moore-Penrose inverse of the PSD part: negative eigendirections
        # are unreliable Monte Carlo artifacts and are dropped like the
        # null space, so variances stay nonnegative.
        vals, vecs = np.linalg.eigh(fim)
        keep = vals > max(vals.max(), 0.0) * 1e-12
        inv = (vecs[:, keep] / vals[keep]) @ vecs[:, keep].T
    return np.sqrt(np.clip(np.diag(inv), 0.0, None))


def louis_observed_fim(theta_hat: ModelParams, dataset, mc_draws: int,
                       disc=None, rng=None, burn: int = 100,
                       max_nodes: int = 200, states=None) -> np.ndarray:
    """Observed information at ``theta_hat`` on the natural scale.

    Louis's identity writes the observed information as the posterior
    mean of the complete-data information minus the posterior covariance
    of the complete-data score; both terms are estimated from ``mc_draws``
    Gibbs draws per subject at the fixed estimate.  When every component
    is Gaussian the variance components are degenerate and each draw is
    an exact independent sample, so no burn-in is spent.  ``states``
    optionally warm-starts the chains (stacked per batch, as produced by
    a fit on the same subjects); otherwise chains start cold and spend
    ``burn`` sweeps equilibrating.
    """
    if mc_draws < 2:
        raise ConfigError(f"mc_draws must be at least 2, got {mc_draws}")
    subjects = list(dataset)
    if not subjects:
        raise DataError("cannot compute information for an empty dataset")
    rng = np.random.default_rng(rng) if not isinstance(rng, np.random.Generator) else rng
    params = theta_hat
    if params.has_process and disc is None:
        pooled = np.concatenate([s.times for s in subjects])
        disc = assemble(params.operator, default_grid(pooled, max_nodes=max_nodes))

    layout = ParamLayout.from_params(params)
    dim = layout.dim
    jac = layout.jacobian(params)
    logmask = np.zeros(dim)
    for b in layout.blocks:
        if b.log:
            logmask[layout.offset(b.name)] = 1.0
    jouter = np.outer(jac, jac)
    diag_idx = np.arange(dim)

    exact = (
        params.noise_spec.family == "normal"
        and (params.re_spec is None or params.re_spec.family == "normal")
        and (params.proc_spec is None or params.proc_spec.family == "normal")
    )

    batches = build_batches(subjects, params, disc)
    total = np.zeros((dim, dim))
    trace_term = trace_h2 = None
    if layout.has("kappa"):
        trace_term = operator_trace(disc)
        kinv = disc.solve(np.eye(disc.size))
        ck = disc.h[:, None] * kinv
        trace_h2 = float(np.sum(ck * ck.T))

    for bi, batch in enumerate(batches):
        if states is not None:
            state = states[bi]
        else:
            state = stack_states(
                [initial_state(params, subj, rng, disc) for subj in batch.subjects]
            )
        if not exact:
            state = sweep_batch(params, batch, state, disc, rng, burn)
        b = batch.size
        s_sum = np.zeros((b, dim))
        ss_sum = np.zeros((b, dim, dim))
        h_sum = np.zeros((b, dim, dim))
        for _ in range(mc_draws):
            if exact:
                draw = draw_gaussian_batch(params, batch, state, disc, rng)
                state.u = draw[:, :batch.q]
                state.w = draw[:, batch.q:]
            else:
                state = sweep_batch(params, batch, state, disc, rng, 1)
            s_opt = batch_scores(params, batch, state, disc, layout, trace_term)
            h_opt = batch_hessians(params, batch, state, disc, layout,
                                   trace_term, trace_h2)
            s_nat = s_opt / jac
            h_opt[:, diag_idx, diag_idx] -= s_opt * logmask
            h_nat = h_opt / jouter
            s_sum += s_nat
            ss_sum += s_nat[:, :, None] * s_nat[:, None, :]
            h_sum += h_nat
        s_bar = s_sum / mc_draws
        cov = ss_sum / mc_draws - s_bar[:, :, None] * s_bar[:, None, :]
        total -= np.sum(h_sum, axis=0) / mc_draws + np.sum(cov, axis=0)

    return 0.5 * (total + total.T)


def p_bounds(theta_hat, std_errors, mc_se, mc_se_of_se=0.0):
    """Wald p-value bounds acknowledging Monte Carlo error in (est, SE).

    The optimistic corner shifts the estimate two Monte Carlo SEs away
    from zero and shrinks the standard error; the pessimistic corner does
    the opposite (with the shifted estimate floored at zero).  With no
    Monte Carlo error both bounds collapse to the usual Wald p-value.
    """
    th = np.abs(np.atleast_1d(np.asarray(theta_hat, dtype=float)))
    se = np.atleast_1d(np.asarray(std_errors, dtype=float))
    mc = np.broadcast_to(np.asarray(mc_se, dtype=float), th.shape)
    mc_of_se = np.broadcast_to(np.asarray(mc_se_of_se, dtype=float), th.shape)

    with np.errstate(divide="ignore", invalid="ignore"):
        den_best = se - 2.0 * mc_of_se
        z_best = np.where(den_best > 0, (th + 2.0 * mc) / den_best, np.inf)
        den_worst = se + 2.0 * mc_of_se
        z_worst = np.where(den_worst > 0,
                           np.maximum(th - 2.0 * mc, 0.0) / den_worst, np.inf)
    p_lower = 2.0 * _norm.sf(z_best)
    p_upper = 2.0 * _norm.sf(z_worst)
    return p_lower, p_upper
