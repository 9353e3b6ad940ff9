"""Normal variance-mean mixture families.

A variance-mean mixture with mixing variable V and structure matrix
Sigma = L L^T has the representation

    X = delta + mu * V + sqrt(V) * L Z,      Z ~ N(0, I),

with V following a GIG law.  Families are keyed by the mixing law:

    normal  V == 1                      (degenerate)
    nig     V ~ GIG(-1/2, nu, nu)       unit mean
    gal     V ~ Gamma(nu, nu)           unit mean
    t       V ~ InvGamma(nu/2, nu/2)
    cauchy  V ~ InvGamma(1/2, 3/2)      unit mode

The NIG and GAL constraints pin E[V] = 1 so the component's scale
matrix keeps its usual variance interpretation; Cauchy has no mean, so
its mixing law is pinned at unit mode instead; the t family keeps the
classical inverse-gamma mixing verbatim (its sigma^2 is the noise
variance only for nu > 2).  Asymmetry enters through mu; zero-centering
uses delta = -mu, which requires a finite mixing mean, so only the NIG
and GAL families accept mu != 0.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.special import gammaln

from .errors import DomainError, ParameterError
from .gig import GigParams, gig_sample
from .kernels import log_bessel_k

FAMILIES = ("normal", "nig", "gal", "t", "cauchy")

#: families whose unit-constrained mixing law has mean exactly one
UNIT_MEAN_FAMILIES = ("normal", "nig", "gal")

#: families that admit an asymmetry parameter
SKEW_FAMILIES = ("nig", "gal")

#: fixed Cauchy mixing "b" giving mode(V) = 1
CAUCHY_B = 3.0


def constrain_unit(family: str, nu: float | None = None) -> GigParams | None:
    """Mixing law of the constrained family; ``None`` means V == 1.

    NIG and GAL are pinned to unit mean, Cauchy to unit mode; the t
    family keeps its classical InvGamma(nu/2, nu/2) mixing.
    """
    if family not in FAMILIES:
        raise DomainError(f"unknown family {family!r}, expected one of {FAMILIES}")
    if family == "normal":
        return None
    if family == "cauchy":
        return GigParams(-0.5, 0.0, CAUCHY_B)
    if nu is None or not (np.isfinite(nu) and nu > 0):
        raise DomainError(f"family {family!r} requires a positive shape nu, got {nu}")
    if family == "nig":
        return GigParams(-0.5, nu, nu)
    if family == "gal":
        return GigParams(nu, 2.0 * nu, 0.0)
    # t
    return GigParams(-nu / 2.0, 0.0, nu)


@dataclass(frozen=True)
class NvmSpec:
    """One mixture component: family, shape and asymmetry.

    ``mu`` may be a scalar or a vector (for multivariate random
    effects); the centering offset is always ``delta = -mu``.
    """

    family: str
    nu: float | None = None
    mu: object = 0.0

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise ParameterError(f"unknown family {self.family!r}")
        if self.family in ("nig", "gal", "t"):
            if self.nu is None or not (np.isfinite(self.nu) and self.nu > 0):
                raise ParameterError(
                    f"family {self.family!r} requires nu > 0, got {self.nu}"
                )
        mu = np.asarray(self.mu, dtype=float)
        if not np.all(np.isfinite(mu)):
            raise ParameterError("mu must be finite")
        if self.family not in SKEW_FAMILIES and np.any(mu != 0.0):
            raise ParameterError(
                f"family {self.family!r} is symmetric-only; mu must be 0"
            )

    @property
    def delta(self):
        return -np.asarray(self.mu, dtype=float)

    def mixing(self) -> GigParams | None:
        return constrain_unit(self.family, self.nu)

    def ev(self) -> float:
        """E[V] under the constrained mixing law (inf when unbounded)."""
        if self.family in UNIT_MEAN_FAMILIES:
            return 1.0
        if self.family == "t":
            return self.nu / (self.nu - 2.0) if self.nu > 2.0 else math.inf
        return math.inf  # cauchy

    def einv(self) -> float:
        """E[1/V] under the constrained mixing law (inf when unbounded)."""
        if self.family == "normal":
            return 1.0
        if self.family == "nig":
            return 1.0 + 1.0 / self.nu
        if self.family == "gal":
            return self.nu / (self.nu - 1.0) if self.nu > 1.0 else math.inf
        if self.family == "t":
            return 1.0
        return 1.0 / CAUCHY_B  # cauchy

    def with_nu(self, nu: float) -> "NvmSpec":
        return NvmSpec(self.family, nu, self.mu)


def nvm_sample(spec: NvmSpec, cov_factor, rng, size: int | None = None):
    """Draw X = delta + mu V + sqrt(V) L Z with V from the constrained law.

    ``cov_factor`` is the lower-triangular factor L of the structure
    matrix (a scalar for one-dimensional components).  Returns an array
    of shape ``(size, d)`` (or ``(d,)`` when size is None); d = 1 inputs
    with scalar ``cov_factor`` give scalars/1-d output.
    """
    ell = np.atleast_2d(np.asarray(cov_factor, dtype=float))
    d = ell.shape[0]
    mu = np.broadcast_to(np.atleast_1d(np.asarray(spec.mu, dtype=float)), (d,))
    n = 1 if size is None else int(size)
    mix = spec.mixing()
    if mix is None:
        v = np.ones(n)
    else:
        v = gig_sample(mix, rng, size=n)
    z = rng.standard_normal((n, d))
    x = -mu + mu * v[:, None] + np.sqrt(v)[:, None] * (z @ ell.T)
    if np.isscalar(cov_factor) or np.asarray(cov_factor).ndim == 0:
        x = x[:, 0]
    return x[0] if size is None else x


def _mixture_logpdf_interior(p, a, b, sigma, x):
    """Symmetric GIG-mixture log density for a > 0, b > 0."""
    bprime = b + (x / sigma) ** 2
    omega = math.sqrt(a * b)
    return (
        -0.5 * math.log(2.0 * math.pi * sigma * sigma)
        + 0.5 * p * (math.log(a) - math.log(b))
        - log_bessel_k(p, omega)
        + 0.5 * (p - 0.5) * (np.log(bprime) - math.log(a))
        + log_bessel_k(p - 0.5, np.sqrt(a * bprime))
    )


def nvm_logpdf_1d(spec: NvmSpec, sigma: float, x):
    """Closed-form log density of the symmetric scalar mixture sigma*sqrt(V)*Z.

    Used for measurement-noise marginals and the total-variation
    computations.  Requires mu = 0.  Vectorized over x.
    """
    if np.any(np.asarray(spec.mu) != 0.0):
        raise ParameterError("nvm_logpdf_1d requires a symmetric component (mu = 0)")
    if not (np.isfinite(sigma) and sigma > 0):
        raise DomainError(f"sigma must be positive, got {sigma}")
    xarr = np.asarray(x, dtype=float)
    scalar = xarr.ndim == 0
    xarr = np.atleast_1d(xarr)

    fam = spec.family
    if fam == "normal":
        out = -0.5 * np.log(2 * np.pi * sigma**2) - 0.5 * (xarr / sigma) ** 2
    elif fam == "nig":
        out = _mixture_logpdf_interior(-0.5, spec.nu, spec.nu, sigma, xarr)
    elif fam == "t":
        nu = spec.nu
        out = (
            gammaln((nu + 1) / 2)
            - gammaln(nu / 2)
            - 0.5 * np.log(nu * np.pi * sigma**2)
            - 0.5 * (nu + 1) * np.log1p(xarr**2 / (nu * sigma**2))
        )
    elif fam == "cauchy":
        gam = math.sqrt(CAUCHY_B) * sigma
        out = math.log(gam) - math.log(math.pi) - np.log(gam**2 + xarr**2)
    else:  # gal
        nu = spec.nu
        a = 2.0 * nu
        out = np.empty_like(xarr)
        zero = xarr == 0.0
        if np.any(~zero):
            xs = xarr[~zero]
            bprime = (xs / sigma) ** 2
            out[~zero] = (
                -0.5 * math.log(2 * math.pi * sigma**2)
                + nu * math.log(a / 2.0)
                - gammaln(nu)
                + math.log(2.0)
                + 0.5 * (nu - 0.5) * (np.log(bprime) - math.log(a))
                + log_bessel_k(nu - 0.5, np.sqrt(a * bprime))
            )
        if np.any(zero):
            if nu > 0.5:
                # finite limit of the Bessel form as x -> 0
                out[zero] = (
                    -0.5 * math.log(2 * math.pi * sigma**2)
                    + gammaln(nu - 0.5)
                    - gammaln(nu)
                    + 0.5 * math.log(nu)
                )
            else:
                # density diverges at the origin for nu <= 1/2
                out[zero] = np.inf
    return float(out[0]) if scalar else out
