"""Gibbs sweep over the latent variables of one subject.

The hierarchy is conditionally Gaussian: given the variance components
V = (V^Z, V^U, V^W), the joint law of (U, W) given the data is Gaussian,
and given (U, W) every variance component is GIG.  One sweep alternates
these two blocks.

Conditional laws, with e = y - x beta - d U - A W:

    (U, W) | V, Y   Gaussian with precision
                    blockdiag(Sigma^{-1}/V^U, K^T diag(V^W)^{-1} K)
                    + C^T diag(sigma^2 V^Z)^{-1} C,   C = [d, A]
    V^U | U         GIG(p0 - q/2, a0 + mu^T Sigma^{-1} mu,
                        b0 + (U + mu)^T Sigma^{-1} (U + mu))
    V^Z_j | e_j     GIG(p0 - 1/2, a0, b0 + e_j^2 / sigma^2)   elementwise
                    (per-subject scope pools: GIG(p0 - n/2, a0,
                     b0 + sum_j e_j^2 / sigma^2))
    V^W_k | W       GIG(p0_k - 1/2, a0_k + mu_w^2, b0_k + (K W + h mu_w)_k^2)

where (p0, a0, b0) are the prior GIG parameters of the component and the
a-shift vanishes for the symmetric noise.  Gaussian components keep their
variance components pinned (V^Z = 1, V^U = 1, V^W = h).
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass

import numpy as np
from scipy.linalg import cho_solve, solve_triangular

from .errors import ConfigError, DataError, DomainError, FactorizationError, NumericalError
from .fem import Discretization, observation_matrix, process_prior_arrays
from .gig import gig_mean, gig_sample_many, GigParams
from .kernels import spd_factor
from .mixtures import NvmSpec
from .model import LatentState, ModelParams, SubjectRecord, residuals

__all__ = [
    "GibbsConfig",
    "initial_state",
    "draw_gaussian_block",
    "draw_v_u",
    "draw_v_z",
    "draw_v_w",
    "sweep",
]


@dataclass(frozen=True)
class GibbsConfig:
    """Sweep count per optimizer step and warm-start behaviour."""

    sweeps_per_step: int = 5
    warm_start: bool = True

    def __post_init__(self):
        if int(self.sweeps_per_step) != self.sweeps_per_step or self.sweeps_per_step < 1:
            raise ConfigError(
                f"sweeps_per_step must be a positive integer, got {self.sweeps_per_step}"
            )
        object.__setattr__(self, "sweeps_per_step", int(self.sweeps_per_step))


def _prior_center(p, a, b) -> np.ndarray:
    """Elementwise prior mean of a GIG law, or its mode where the mean is unbounded."""
    p, a, b = np.broadcast_arrays(
        np.asarray(p, dtype=float), np.asarray(a, dtype=float), np.asarray(b, dtype=float)
    )
    out = np.empty(p.shape)
    for idx in np.ndindex(p.shape):
        mean = gig_mean(GigParams(p[idx], a[idx], b[idx]))
        if np.isfinite(mean):
            out[idx] = mean
        elif a[idx] > 0:
            out[idx] = ((p[idx] - 1.0) + np.hypot(p[idx] - 1.0, np.sqrt(a[idx] * b[idx]))) / a[idx]
        else:
            out[idx] = b[idx] / (2.0 * (1.0 - p[idx]))
    return out


def _center_scalar(spec: NvmSpec) -> float:
    mix = spec.mixing()
    if mix is None:
        return 1.0
    return float(_prior_center(mix.p, mix.a, mix.b)[()])


def draw_gaussian_block(params: ModelParams, subject: SubjectRecord,
                        disc: Discretization | None, v: LatentState, rng):
    """Exact draw of (U, W) from their joint Gaussian full conditional.

    ``v`` supplies the variance components; its u/w entries are ignored.
    Returns the pair (U, W) with U of length q and W of length K (either
    may be empty when the model omits that component).
    """
    if subject.y is None:
        raise DataError(f"subject {subject.id} has no outcome vector")
    if params.sigma <= 0:
        raise DomainError("draw_gaussian_block requires sigma > 0")
    q = params.q
    nk = disc.size if params.has_process else 0
    m = q + nk
    if m == 0:
        return np.zeros(0), np.zeros(0)

    cols = []
    if q:
        cols.append(subject.d)
    if nk:
        cols.append(observation_matrix(disc.nodes, subject.times))
    c = np.hstack(cols)

    quad = np.zeros((m, m))
    lin = np.zeros(m)
    # non-finite intermediates (degenerate variance components) fall through
    # to the positive-definiteness check below
    with np.errstate(over="ignore", invalid="ignore", divide="ignore"):
        if q:
            sig_chol = spd_factor(params.Sigma)
            sig_inv = cho_solve((sig_chol, True), np.eye(q))
            quad[:q, :q] = sig_inv / v.v_u
            lin[:q] = sig_inv @ params.mu_u * ((v.v_u - 1.0) / v.v_u)
        if nk:
            k = disc.kmat
            quad[q:, q:] = k.T @ (k / v.v_w[:, None])
            lin[q:] = k.T @ (params.mu_w * (v.v_w - disc.h) / v.v_w)

        w_z = 1.0 / (np.float64(params.sigma) ** 2 * v.v_z)
        quad += c.T @ (w_z[:, None] * c)
        lin += c.T @ (w_z * (subject.y - subject.x @ params.beta))

    try:
        chol = spd_factor(quad)
    except FactorizationError as exc:
        raise NumericalError(
            f"singular conditional precision for (U, W) of subject {subject.id}"
        ) from exc
    draw = cho_solve((chol, True), lin) + solve_triangular(
        chol.T, rng.standard_normal(m), lower=False
    )
    return draw[:q], draw[q:]


def draw_v_u(params: ModelParams, u, rng) -> float:
    """One GIG draw of the random-effect variance component given U."""
    if params.q == 0:
        return 1.0
    mix = params.re_spec.mixing()
    if mix is None:
        return 1.0
    u = np.asarray(u, dtype=float)
    mu = params.mu_u
    chol = spd_factor(params.Sigma)
    half_r = solve_triangular(chol, u + mu, lower=True)
    half_mu = solve_triangular(chol, mu, lower=True)
    return float(
        gig_sample_many(
            mix.p - 0.5 * params.q,
            mix.a + half_mu @ half_mu,
            mix.b + half_r @ half_r,
            rng,
        )[()]
    )


def draw_v_z(params: ModelParams, resid, rng) -> np.ndarray:
    """GIG draws of the noise variance components given the residuals.

    Elementwise for per-observation scope; the per-subject scope pools the
    quadratic terms into a single draw, broadcast back to length n.
    """
    e = np.atleast_1d(np.asarray(resid, dtype=float))
    if not np.all(np.isfinite(e)):
        raise DomainError("residuals must be finite")
    mix = params.noise_spec.mixing()
    if mix is None:
        return np.ones(e.size)
    if params.sigma <= 0:
        raise DomainError("draw_v_z requires sigma > 0")
    quad = e**2 / params.sigma**2
    if params.noise_scope == "per-subject":
        draw = gig_sample_many(mix.p - 0.5 * e.size, mix.a, mix.b + quad.sum(), rng)
        return np.full(e.size, float(draw[()]))
    return gig_sample_many(mix.p - 0.5, mix.a, mix.b + quad, rng)


def draw_v_w(params: ModelParams, disc: Discretization | None, w, rng) -> np.ndarray:
    """Elementwise GIG draws of the process variance components given W."""
    if not params.has_process:
        return np.zeros(0)
    prior = process_prior_arrays(params.proc_spec.family, params.proc_spec.nu, disc.h)
    if prior is None:
        return disc.h.copy()
    p0, a0, b0 = prior
    w = np.asarray(w, dtype=float)
    e = disc.kmat @ w + params.mu_w * disc.h
    return gig_sample_many(p0 - 0.5, a0 + params.mu_w**2, b0 + e * e, rng)


def initial_state(params: ModelParams, subject: SubjectRecord, rng,
                  disc: Discretization | None = None) -> LatentState:
    """Cold start: variance components at their prior centers, then one
    Gaussian block draw of (U, W)."""
    n = subject.n
    v_z = np.full(n, _center_scalar(params.noise_spec))
    v_u = _center_scalar(params.re_spec) if params.q else 1.0
    if params.has_process:
        prior = process_prior_arrays(params.proc_spec.family, params.proc_spec.nu, disc.h)
        v_w = disc.h.copy() if prior is None else _prior_center(*prior)
    else:
        v_w = np.zeros(0)
    state = LatentState(u=np.zeros(params.q), w=np.zeros(v_w.size), v_z=v_z, v_u=v_u, v_w=v_w)
    u, w = draw_gaussian_block(params, subject, disc, state, rng)
    return dataclasses.replace(state, u=u, w=w)


def sweep(params: ModelParams, subject: SubjectRecord, disc: Discretization | None,
          state: LatentState, cfg: GibbsConfig, rng, n_sweeps: int | None = None) -> LatentState:
    """Run ``cfg.sweeps_per_step`` alternations of the two Gibbs blocks.

    ``n_sweeps`` overrides the configured count (0 returns the state
    unchanged), which the optimizer uses for schedule experiments.
    """
    count = cfg.sweeps_per_step if n_sweeps is None else int(n_sweeps)
    if count < 0:
        raise ConfigError(f"sweep count must be nonnegative, got {n_sweeps}")
    for _ in range(count):
        u, w = draw_gaussian_block(params, subject, disc, state, rng)
        interim = dataclasses.replace(state, u=u, w=w)
        e = residuals(params, subject, interim, disc)
        state = LatentState(
            u=u,
            w=w,
            v_z=draw_v_z(params, e, rng),
            v_u=draw_v_u(params, u, rng),
            v_w=draw_v_w(params, disc, w, rng),
        )
    return state
