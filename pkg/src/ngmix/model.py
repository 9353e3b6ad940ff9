"""Data model, parameter set, complete-data likelihood and simulation.

The observation model for subject i is

    Y_i = x_i beta + d_i U_i + A_i W_i + Z_i,

with random effects U_i, a continuous-time process W_i evaluated through
the FEM observation matrix A_i, and measurement noise Z_i.  Each of the
three stochastic components is a normal variance-mean mixture whose
mixing variables V enter the conditionally Gaussian hierarchy:

    Y_i | U_i, W_i, V_i^Z ~ N(x_i beta + d_i U_i + A_i W_i, sigma^2 diag(V_i^Z))
    U_i | V_i^U          ~ N(mu_u (V_i^U - 1), V_i^U Sigma)
    K W_i | V_i^W        ~ N(-mu_w h + mu_w V_i^W, diag(V_i^W)).
"""

import dataclasses
import math
from dataclasses import dataclass

import numpy as np

from .errors import DataError, DomainError, ParameterError
from .fem import (
    Discretization,
    OperatorSpec,
    assemble,
    conditional_w_law,
    default_grid,
    observation_matrix,
    process_prior_arrays,
)
from .gig import GigParams, gig_logpdf, gig_sample, gig_sample_many
from .kernels import spd_factor
from .mixtures import NvmSpec

__all__ = [
    "SubjectRecord",
    "ModelParams",
    "LatentState",
    "residuals",
    "complete_loglik",
    "marginal_gaussian_cov",
    "marginal_loglik_gaussian",
    "sample_latent_prior",
    "simulate",
]

NOISE_SCOPES = ("per-observation", "per-subject")

_LOG_2PI = math.log(2.0 * math.pi)


@dataclass(frozen=True)
class SubjectRecord:
    """One subject's outcome vector and design matrices.

    ``y`` may be None for design-only records fed to ``simulate``.
    """

    id: str
    times: np.ndarray
    y: np.ndarray | None
    x: np.ndarray
    d: np.ndarray

    def __post_init__(self):
        times = np.atleast_1d(np.asarray(self.times, dtype=float))
        x = np.asarray(self.x, dtype=float)
        d = np.asarray(self.d, dtype=float)
        if times.ndim != 1 or times.size == 0:
            raise DataError(f"subject {self.id}: times must be a non-empty vector")
        if np.any(np.diff(times) <= 0):
            raise DataError(f"subject {self.id}: times must be strictly increasing")
        n = times.size
        if x.ndim != 2 or x.shape[0] != n:
            raise DataError(f"subject {self.id}: x must be {n} x p, got {x.shape}")
        if d.ndim != 2 or d.shape[0] != n:
            raise DataError(f"subject {self.id}: d must be {n} x q, got {d.shape}")
        y = self.y
        if y is not None:
            y = np.asarray(y, dtype=float)
            if y.shape != (n,):
                raise DataError(f"subject {self.id}: y must have length {n}")
            if not np.all(np.isfinite(y)):
                raise DataError(f"subject {self.id}: y contains non-finite values")
        for name, arr in (("times", times), ("x", x), ("d", d)):
            if not np.all(np.isfinite(arr)):
                raise DataError(f"subject {self.id}: {name} contains non-finite values")
        object.__setattr__(self, "times", times)
        object.__setattr__(self, "y", y)
        object.__setattr__(self, "x", x)
        object.__setattr__(self, "d", d)

    @property
    def n(self) -> int:
        return self.times.size

    @property
    def p(self) -> int:
        return self.x.shape[1]

    @property
    def q(self) -> int:
        return self.d.shape[1]


@dataclass(frozen=True)
class ModelParams:
    """Complete parameter set for the three-component model.

    Skew parameters live inside the component specs (``re_spec.mu`` is the
    random-effect skew vector, ``proc_spec.mu`` the process skew scalar);
    the measurement noise is always symmetric.  A model may omit the
    random effects (``Sigma`` None) and/or the process (``operator``
    None).
    """

    beta: np.ndarray
    sigma: float
    noise_spec: NvmSpec
    Sigma: np.ndarray | None = None
    re_spec: NvmSpec | None = None
    proc_spec: NvmSpec | None = None
    operator: OperatorSpec | None = None
    noise_scope: str = "per-observation"

    def __post_init__(self):
        beta = np.atleast_1d(np.asarray(self.beta, dtype=float))
        if beta.ndim != 1 or not np.all(np.isfinite(beta)):
            raise ParameterError("beta must be a finite vector")
        object.__setattr__(self, "beta", beta)
        if not (np.isfinite(self.sigma) and self.sigma >= 0):
            raise ParameterError(f"sigma must be nonnegative, got {self.sigma}")
        if np.any(np.asarray(self.noise_spec.mu) != 0.0):
            raise ParameterError("measurement noise must be symmetric (mu = 0)")
        if self.noise_scope not in NOISE_SCOPES:
            raise ParameterError(f"unknown noise scope {self.noise_scope!r}")
        if (self.Sigma is None) != (self.re_spec is None):
            raise ParameterError("Sigma and re_spec must be given together")
        if self.Sigma is not None:
            sig = np.asarray(self.Sigma, dtype=float)
            spd_factor(sig)  # raises unless symmetric positive definite
            object.__setattr__(self, "Sigma", sig)
            mu = np.asarray(self.re_spec.mu, dtype=float)
            if mu.ndim > 1 or (mu.ndim == 1 and mu.size not in (1, sig.shape[0])):
                raise ParameterError(
                    f"re_spec.mu must broadcast to length {sig.shape[0]}"
                )
        if (self.operator is None) != (self.proc_spec is None):
            raise ParameterError("operator and proc_spec must be given together")
        if self.proc_spec is not None and np.asarray(self.proc_spec.mu).ndim > 0:
            raise ParameterError("proc_spec.mu must be a scalar")
        if self.proc_spec is not None and self.proc_spec.family == "t":
            raise ParameterError("the t family is not available for the process")

    @property
    def q(self) -> int:
        return 0 if self.Sigma is None else self.Sigma.shape[0]

    @property
    def mu_u(self) -> np.ndarray:
        if self.Sigma is None:
            return np.zeros(0)
        return np.broadcast_to(
            np.asarray(self.re_spec.mu, dtype=float), (self.q,)
        ).astype(float)

    @property
    def mu_w(self) -> float:
        return 0.0 if self.proc_spec is None else float(self.proc_spec.mu)

    @property
    def has_process(self) -> bool:
        return self.operator is not None


@dataclass(frozen=True)
class LatentState:
    """Per-subject latent variables: effects, weights and variances.

    Deterministic components use fixed placeholders (V ≡ 1 for Gaussian
    noise or effects, V ≡ h for a Gaussian process) so the conditional
    Gaussian layers read uniformly.
    """

    u: np.ndarray
    w: np.ndarray
    v_z: np.ndarray
    v_u: float
    v_w: np.ndarray

    def __post_init__(self):
        u = np.atleast_1d(np.asarray(self.u, dtype=float))
        w = np.atleast_1d(np.asarray(self.w, dtype=float))
        v_z = np.atleast_1d(np.asarray(self.v_z, dtype=float))
        v_w = np.atleast_1d(np.asarray(self.v_w, dtype=float))
        if not (np.all(np.isfinite(u)) and np.all(np.isfinite(w))):
            raise DomainError("latent effects must be finite")
        if not (np.all(np.isfinite(v_z)) and np.all(v_z > 0)):
            raise DomainError("noise variance components must be positive")
        if not (np.isfinite(self.v_u) and self.v_u > 0):
            raise DomainError("random-effect variance component must be positive")
        if not (np.all(np.isfinite(v_w)) and np.all(v_w > 0)):
            raise DomainError("process variance components must be positive")
        object.__setattr__(self, "u", u)
        object.__setattr__(self, "w", w)
        object.__setattr__(self, "v_z", v_z)
        object.__setattr__(self, "v_u", float(self.v_u))
        object.__setattr__(self, "v_w", v_w)


def _gig_logpdf_sum(p, a, b, x) -> float:
    """Sum of GIG log densities with per-element parameters."""
    return sum(
        gig_logpdf(GigParams(float(pk), float(ak), float(bk)), float(xk))
        for pk, ak, bk, xk in zip(
            np.broadcast_to(p, np.shape(x)),
            np.broadcast_to(a, np.shape(x)),
            np.broadcast_to(b, np.shape(x)),
            x,
        )
    )


def residuals(params: ModelParams, subject: SubjectRecord, latent: LatentState,
              disc: Discretization | None = None) -> np.ndarray:
    """e = y - x beta - d U - A W, the noise-layer residual."""
    e = subject.y - subject.x @ params.beta
    if params.q:
        e = e - subject.d @ latent.u
    if params.has_process:
        e = e - observation_matrix(disc.nodes, subject.times) @ latent.w
    return e


def complete_loglik(params: ModelParams, subject: SubjectRecord,
                    latent: LatentState, disc: Discretization | None = None) -> float:
    """Joint log density of (y, U, W, V) for one subject.

    Sums the three conditional Gaussian layers and the GIG log densities
    of whichever variance components are stochastic.
    """
    if subject.y is None:
        raise DataError(f"subject {subject.id} has no outcome vector")
    if params.has_process and disc is None:
        raise DomainError("a Discretization is required when the model has a process")
    if params.sigma <= 0:
        raise DomainError("complete_loglik requires sigma > 0")

    e = residuals(params, subject, latent, disc)
    s2v = params.sigma**2 * latent.v_z
    total = -0.5 * float(np.sum(np.log(2.0 * np.pi * s2v) + e**2 / s2v))

    noise_mix = params.noise_spec.mixing()
    if noise_mix is not None:
        if params.noise_scope == "per-subject":
            if np.ptp(latent.v_z) != 0.0:
                raise DomainError(
                    "per-subject noise scope requires a single shared V"
                )
            total += float(gig_logpdf(noise_mix, latent.v_z[0]))
        else:
            total += float(np.sum(gig_logpdf(noise_mix, latent.v_z)))
    elif np.any(latent.v_z != 1.0):
        raise DomainError("Gaussian noise requires V_z fixed at 1")

    if params.q:
        mu = params.mu_u
        r = latent.u - mu * (latent.v_u - 1.0)
        chol = spd_factor(params.Sigma)
        half = np.linalg.solve(chol, r)
        logdet_sigma = 2.0 * float(np.sum(np.log(np.diag(chol))))
        total += -0.5 * (
            params.q * (np.log(2.0 * np.pi * latent.v_u))
            + logdet_sigma
            + float(half @ half) / latent.v_u
        )
        re_mix = params.re_spec.mixing()
        if re_mix is not None:
            total += float(gig_logpdf(re_mix, latent.v_u))
        elif latent.v_u != 1.0:
            raise DomainError("Gaussian random effects require V_u fixed at 1")

    if params.has_process:
        h = disc.h
        rw = disc.kmat @ latent.w - params.mu_w * (latent.v_w - h)
        total += -0.5 * float(
            np.sum(np.log(2.0 * np.pi * latent.v_w) + rw**2 / latent.v_w)
        )
        total += disc.logdet
        prior = process_prior_arrays(params.proc_spec.family, params.proc_spec.nu, h)
        if prior is not None:
            total += _gig_logpdf_sum(*prior, latent.v_w)
        elif np.any(latent.v_w != h):
            raise DomainError("a Gaussian process requires V_w fixed at h")

    if not np.isfinite(total):
        raise DomainError("complete log-likelihood is not finite")
    return float(total)


def marginal_gaussian_cov(params: ModelParams, subject: SubjectRecord,
                          disc: Discretization | None = None) -> np.ndarray:
    """Marginal covariance d Sigma d^T + A K^{-1} diag(h) K^{-T} A^T + sigma^2 I."""
    n = subject.n
    cov = params.sigma**2 * np.eye(n)
    if params.q:
        cov += subject.d @ params.Sigma @ subject.d.T
    if params.has_process:
        a = observation_matrix(disc.nodes, subject.times)
        s_w = conditional_w_law(disc, disc.h, 0.0).cov()
        cov += a @ s_w @ a.T
    return cov


def marginal_loglik_gaussian(params: ModelParams, subject: SubjectRecord,
                             disc: Discretization | None = None) -> float:
    """Closed-form marginal log likelihood; all specs must be Gaussian."""
    for name, spec in (("noise", params.noise_spec), ("random-effect", params.re_spec),
                       ("process", params.proc_spec)):
        if spec is not None and spec.family != "normal":
            raise ParameterError(
                f"marginal_loglik_gaussian requires Gaussian components; "
                f"{name} is {spec.family!r}"
            )
    if params.has_process and disc is None:
        raise DomainError("a Discretization is required when the model has a process")
    r = subject.y - subject.x @ params.beta
    cov = marginal_gaussian_cov(params, subject, disc)
    chol = spd_factor(cov)
    half = np.linalg.solve(chol, r)
    logdet = 2.0 * float(np.sum(np.log(np.diag(chol))))
    return -0.5 * (subject.n * _LOG_2PI + logdet + float(half @ half))


def sample_latent_prior(params: ModelParams, subject: SubjectRecord, rng,
                        disc: Discretization | None = None) -> LatentState:
    """Draw (V, U, W) from the prior hierarchy for one subject."""
    n = subject.n
    noise_mix = params.noise_spec.mixing()
    if noise_mix is None:
        v_z = np.ones(n)
    elif params.noise_scope == "per-subject":
        v_z = np.full(n, gig_sample(noise_mix, rng))
    else:
        v_z = gig_sample(noise_mix, rng, size=n)

    if params.q:
        re_mix = params.re_spec.mixing()
        v_u = 1.0 if re_mix is None else float(gig_sample(re_mix, rng))
        chol = spd_factor(params.Sigma)
        u = params.mu_u * (v_u - 1.0) + math.sqrt(v_u) * (
            chol @ rng.standard_normal(params.q)
        )
    else:
        v_u, u = 1.0, np.zeros(0)

    if params.has_process:
        prior = process_prior_arrays(params.proc_spec.family, params.proc_spec.nu, disc.h)
        if prior is None:
            v_w = disc.h.copy()
        else:
            v_w = gig_sample_many(*prior, rng)
        w = conditional_w_law(disc, v_w, params.mu_w).sample(rng)
    else:
        v_w, w = np.zeros(0), np.zeros(0)
    return LatentState(u=u, w=w, v_z=v_z, v_u=v_u, v_w=v_w)


def simulate(params: ModelParams, designs, rng, grid=None, max_nodes: int = 200,
             pad: float = 0.05) -> list[SubjectRecord]:
    """Generate outcomes for design-only records by sampling the hierarchy.

    ``rng`` may be a Generator or a seed.  ``grid`` fixes a shared FEM
    grid; by default each subject gets its own observation-padded grid.
    """
    if not isinstance(rng, np.random.Generator):
        rng = np.random.default_rng(rng)
    out = []
    for subject in designs:
        disc = None
        if params.has_process:
            nodes = grid if grid is not None else default_grid(
                subject.times, max_nodes=max_nodes, pad=pad
            )
            disc = assemble(params.operator, nodes)
        latent = sample_latent_prior(params, subject, rng, disc)
        y = subject.x @ params.beta
        if params.q:
            y = y + subject.d @ latent.u
        if params.has_process:
            y = y + observation_matrix(disc.nodes, subject.times) @ latent.w
        y = y + params.sigma * np.sqrt(latent.v_z) * rng.standard_normal(subject.n)
        out.append(dataclasses.replace(subject, y=y))
    return out
