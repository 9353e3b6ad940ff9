"""Finite-element discretization of the latent continuous-time process.

The process W(t) solves an SPDE driven by (possibly non-Gaussian) noise.
On a grid s_1 < ... < s_K it is expanded in piecewise-linear hat
functions, W(t) = sum_k phi_k(t) W_k, and the Galerkin system is

    K W = L,        L_k = <phi_k, dL>,

where L_k are treated as independent with E-scale h_k = <phi_k, 1>.
Two operators are supported:

* ``exponential``: D = kappa + d/dt, giving K = kappa * C + B with the
  lumped mass matrix C = diag(h) and convection matrix
  B[k, k'] = <phi_k, phi'_k'> (tridiagonal, natural Neumann ends).
  Its Gaussian solution has the exponential covariance
  exp(-kappa |t - t'|) / (2 kappa), up to discretization error.
* ``irw``: integrated random walk, K = G, the stiffness matrix
  G[k, k'] = <phi'_k, phi'_k'>.  G annihilates constants, so the first
  node is pinned by adding 1e8 to K[0, 0].

The first-order exponential form keeps K tridiagonal and the W | V
conditional exactly Gaussian.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import solve_banded

from .errors import DomainError, NumericalError, ParameterError
from .gig import GigParams

OPERATOR_KINDS = ("exponential", "irw")

#: value added to K[0, 0] to pin the integrated-random-walk null space
IRW_PIN = 1e8

#: above this grid size, solves go through the banded factorization
#: rather than dense inverses
DENSE_SOLVE_LIMIT = 64


@dataclass(frozen=True)
class OperatorSpec:
    """Which differential operator drives the process."""

    kind: str
    kappa: float | None = None

    def __post_init__(self):
        if self.kind not in OPERATOR_KINDS:
            raise ParameterError(
                f"unknown operator kind {self.kind!r}, expected one of {OPERATOR_KINDS}"
            )
        if self.kind == "exponential":
            if self.kappa is None or not (np.isfinite(self.kappa) and self.kappa > 0):
                raise ParameterError(
                    f"exponential operator requires kappa > 0, got {self.kappa}"
                )

    def with_kappa(self, kappa: float) -> "OperatorSpec":
        return OperatorSpec(self.kind, kappa)


def check_grid(nodes) -> np.ndarray:
    nodes = np.asarray(nodes, dtype=float)
    if nodes.ndim != 1 or nodes.size < 2:
        raise DomainError("grid needs at least two nodes")
    if not np.all(np.isfinite(nodes)) or np.any(np.diff(nodes) <= 0):
        raise DomainError("grid nodes must be finite and strictly increasing")
    return nodes


def element_weights(nodes) -> np.ndarray:
    """h_k = <phi_k, 1>: half the length of the elements touching node k."""
    nodes = check_grid(nodes)
    d = np.diff(nodes)
    h = np.zeros(nodes.size)
    h[:-1] += d / 2.0
    h[1:] += d / 2.0
    return h


def convection_matrix(nodes) -> np.ndarray:
    """B[k, k'] = <phi_k, phi'_k'> (dense tridiagonal)."""
    nodes = check_grid(nodes)
    n = nodes.size
    b = np.zeros((n, n))
    idx = np.arange(n - 1)
    b[idx, idx + 1] = 0.5
    b[idx + 1, idx] = -0.5
    b[0, 0] = -0.5
    b[-1, -1] = 0.5
    return b


def stiffness_matrix(nodes) -> np.ndarray:
    """G[k, k'] = <phi'_k, phi'_k'> (dense tridiagonal)."""
    nodes = check_grid(nodes)
    n = nodes.size
    inv_d = 1.0 / np.diff(nodes)
    g = np.zeros((n, n))
    idx = np.arange(n - 1)
    g[idx, idx + 1] = -inv_d
    g[idx + 1, idx] = -inv_d
    g[idx, idx] += inv_d
    g[idx + 1, idx + 1] += inv_d
    return g


def _to_banded(k: np.ndarray) -> np.ndarray:
    """(3, n) banded storage of a tridiagonal matrix for solve_banded."""
    n = k.shape[0]
    ab = np.zeros((3, n))
    ab[0, 1:] = np.diagonal(k, 1)
    ab[1] = np.diagonal(k)
    ab[2, :-1] = np.diagonal(k, -1)
    return ab


@dataclass(frozen=True)
class Discretization:
    """Assembled FEM system for one grid and operator."""

    nodes: np.ndarray
    kind: str
    kappa: float | None
    h: np.ndarray
    kmat: np.ndarray
    logdet: float = field(default=math.nan)

    @property
    def size(self) -> int:
        return self.nodes.size

    def with_kappa(self, kappa: float) -> "Discretization":
        if self.kind != "exponential":
            return self
        return assemble(OperatorSpec("exponential", kappa), self.nodes)

    def solve(self, rhs) -> np.ndarray:
        """K^{-1} rhs (rhs may be a matrix of columns)."""
        if self.size <= DENSE_SOLVE_LIMIT:
            return np.linalg.solve(self.kmat, rhs)
        return solve_banded((1, 1), _to_banded(self.kmat), rhs)

    def solve_t(self, rhs) -> np.ndarray:
        """K^{-T} rhs."""
        if self.size <= DENSE_SOLVE_LIMIT:
            return np.linalg.solve(self.kmat.T, rhs)
        return solve_banded((1, 1), _to_banded(self.kmat.T), rhs)


def assemble(spec: OperatorSpec, nodes) -> Discretization:
    """Build the operator matrix K, element weights and log|det K|."""
    nodes = check_grid(nodes)
    h = element_weights(nodes)
    if spec.kind == "exponential":
        kmat = spec.kappa * np.diag(h) + convection_matrix(nodes)
    else:
        kmat = stiffness_matrix(nodes)
        kmat[0, 0] += IRW_PIN
    sign, logdet = np.linalg.slogdet(kmat)
    if sign <= 0 or not np.isfinite(logdet):
        raise NumericalError(
            f"singular operator matrix for kind {spec.kind!r} on this grid"
        )
    return Discretization(nodes, spec.kind, spec.kappa, h, kmat, logdet)


def basis_eval(nodes, t: float) -> np.ndarray:
    """Hat-function values phi_k(t) as a K-vector (at most two nonzeros)."""
    nodes = np.asarray(nodes, dtype=float)
    if t < nodes[0] or t > nodes[-1]:
        raise DomainError(
            f"evaluation point {t} outside the grid range [{nodes[0]}, {nodes[-1]}]"
        )
    out = np.zeros(nodes.size)
    if t == nodes[-1]:
        out[-1] = 1.0
        return out
    k = int(np.searchsorted(nodes, t, side="right") - 1)
    w = (t - nodes[k]) / (nodes[k + 1] - nodes[k])
    out[k] = 1.0 - w
    out[k + 1] = w
    return out


def observation_matrix(nodes, times) -> np.ndarray:
    """Rows phi(t_j)^T for each observation time; rows sum to one."""
    times = np.atleast_1d(np.asarray(times, dtype=float))
    return np.vstack([basis_eval(nodes, t) for t in times])


def default_grid(times, max_nodes: int = 200, pad: float = 0.05) -> np.ndarray:
    """Observation times unioned with a uniform mesh, padded 5% per side.

    The total node count is capped at ``max_nodes``; when the distinct
    observation times alone exceed the cap, a plain uniform mesh is used
    and observations land between nodes.
    """
    times = np.asarray(times, dtype=float)
    if times.size == 0:
        raise DomainError("default_grid needs at least one observation time")
    tmin, tmax = times.min(), times.max()
    span = tmax - tmin
    if span == 0.0:
        span = max(1.0, abs(tmin))
    lo, hi = tmin - pad * span, tmax + pad * span
    uniq = np.unique(times)
    n_mesh = max_nodes - uniq.size
    if n_mesh >= 2:
        mesh = np.linspace(lo, hi, n_mesh)
        # drop mesh points that nearly coincide with observation nodes
        near = np.min(np.abs(mesh[:, None] - uniq[None, :]), axis=1)
        mesh = mesh[near > (hi - lo) * 1e-9]
        nodes = np.unique(np.concatenate([mesh, uniq]))
    else:
        nodes = np.linspace(lo, hi, max_nodes)
    return nodes


def process_v_prior(disc: Discretization, nu: float) -> list[GigParams]:
    """NIG per-element variance priors GIG(-1/2, nu, h_k^2 nu), E[V_k] = h_k."""
    if not (np.isfinite(nu) and nu > 0):
        raise DomainError(f"process_v_prior requires nu > 0, got {nu}")
    return [GigParams(-0.5, nu, hk * hk * nu) for hk in disc.h]


def process_prior_arrays(family: str, nu, h):
    """(p, a, b) arrays of the per-element mixing priors; None for normal.

    Each form is the increment law of the corresponding subordinator over an
    element of weight h_k: NIG keeps E[V_k] = h_k, GAL becomes
    Gamma(h_k nu, nu) with mean h_k, and Cauchy uses the 1/2-stable increment
    GIG(-1/2, 0, 3 h_k^2) whose driving noise has scale proportional to h_k
    (b = 3 at unit weight, matching the unit-mode noise convention).
    """
    h = np.asarray(h, dtype=float)
    if family == "normal":
        return None
    if family == "nig":
        return (np.full_like(h, -0.5), np.full_like(h, nu), h * h * nu)
    if family == "gal":
        return (h * nu, np.full_like(h, 2.0 * nu), np.zeros_like(h))
    if family == "cauchy":
        return (np.full_like(h, -0.5), np.zeros_like(h), 3.0 * h * h)
    raise DomainError(f"family {family!r} is not available for the process component")


@dataclass(frozen=True)
class WLaw:
    """Gaussian law of W given the variance draws: N(mean, K^-1 diag(v) K^-T)."""

    disc: Discretization
    mean: np.ndarray
    v: np.ndarray

    def sample(self, rng, size: int | None = None) -> np.ndarray:
        n = 1 if size is None else int(size)
        z = rng.standard_normal((self.disc.size, n)) * np.sqrt(self.v)[:, None]
        draws = (self.mean[:, None] + self.disc.solve(z)).T
        return draws[0] if size is None else draws

    def cov(self) -> np.ndarray:
        kinv_d = self.disc.solve(np.diag(self.v))
        out = self.disc.solve(kinv_d.T)
        return 0.5 * (out + out.T)


def conditional_w_law(disc: Discretization, v, mu_w: float, delta_w: float | None = None) -> WLaw:
    """W | V=v ~ N(K^{-1}(delta_w h + mu_w v), K^{-1} diag(v) K^{-T}).

    ``delta_w`` defaults to -mu_w (zero-centering).
    """
    v = np.asarray(v, dtype=float)
    if v.shape != (disc.size,):
        raise DomainError(f"v has shape {v.shape}, expected ({disc.size},)")
    if np.any(v <= 0):
        raise DomainError("variance draws must be positive")
    if delta_w is None:
        delta_w = -mu_w
    mean = disc.solve(delta_w * disc.h + mu_w * v)
    return WLaw(disc, mean, v)
