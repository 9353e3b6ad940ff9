"""Generalized inverse Gaussian (GIG) distribution.

Density on x > 0:

    f(x; p, a, b) = (a/b)^{p/2} / (2 K_p(sqrt(ab))) * x^{p-1}
                    * exp(-(a x + b / x) / 2)

with the boundary branches

    b = 0  ->  Gamma(p, rate a/2)            (requires p > 0)
    a = 0  ->  InverseGamma(-p, scale b/2)   (requires p < 0)

Every variance component in the model — mixing variables for random
effects, measurement noise and the driving noise of the stochastic
process — is GIG, as are all of their full conditionals, so this module
carries the sampling load of the whole fitting procedure.  The sampler
follows Devroye's two-sided exponential-envelope rejection scheme for
the two-parameter form, which keeps the expected number of rejection
rounds uniformly bounded over the entire parameter range (in particular
for small sqrt(ab) with small |p|, where mode-shifted
ratio-of-uniforms degenerates), and is vectorized over parameter
arrays.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.special import gammaln

from .errors import DomainError, NumericalError, ParameterError
from .kernels import log_bessel_k

#: Below this, a zero-ish GIG "b" parameter falls back to the Gamma branch
#: (or is floored when p <= 0 keeps the Gamma branch invalid).
TINY_PARAM = 1e-300


@dataclass(frozen=True)
class GigParams:
    """Parameter triple (p, a, b) of a GIG law.

    Valid combinations: a > 0 and b > 0 with any real p; b = 0 with
    p > 0 (Gamma); a = 0 with p < 0 (inverse Gamma).
    """

    p: float
    a: float
    b: float

    def __post_init__(self):
        p, a, b = self.p, self.a, self.b
        if not (np.isfinite(p) and np.isfinite(a) and np.isfinite(b)):
            raise ParameterError(f"non-finite GIG parameters ({p}, {a}, {b})")
        if a < 0 or b < 0:
            raise ParameterError(f"GIG requires a, b >= 0, got ({a}, {b})")
        if a == 0 and b == 0:
            raise ParameterError("GIG requires a > 0 or b > 0")
        if b == 0 and p <= 0:
            raise ParameterError(f"GIG with b = 0 requires p > 0, got p = {p}")
        if a == 0 and p >= 0:
            raise ParameterError(f"GIG with a = 0 requires p < 0, got p = {p}")


def gig_lognorm(params: GigParams) -> float:
    """log of the normalizing constant, log c with f = c * x^{p-1} e^{-(ax+b/x)/2}."""
    p, a, b = params.p, params.a, params.b
    if a > 0 and b > 0:
        omega = math.sqrt(a * b)
        return 0.5 * p * (math.log(a) - math.log(b)) - math.log(2.0) - log_bessel_k(p, omega)
    if b == 0:
        return p * math.log(a / 2.0) - gammaln(p)
    return -p * math.log(b / 2.0) - gammaln(-p)


def gig_logpdf(params: GigParams, x):
    """Log density at x (scalar or array); -inf for x <= 0."""
    xarr = np.asarray(x, dtype=float)
    out = np.full(xarr.shape, -np.inf)
    pos = xarr > 0
    p, a, b = params.p, params.a, params.b
    c = gig_lognorm(params)
    if xarr.ndim:
        if np.any(pos):
            out[pos] = c + (p - 1.0) * np.log(xarr[pos]) - 0.5 * (
                a * xarr[pos] + b / xarr[pos]
            )
        return out
    if not pos:
        return -np.inf
    return c + (p - 1.0) * math.log(float(xarr)) - 0.5 * (a * float(xarr) + b / float(xarr))


def gig_moment(params: GigParams, k: int) -> float:
    """E[V^k] for integer k; returns ``math.inf`` when the moment is unbounded.

    With a, b > 0 all moments exist:
    E[V^k] = (b/a)^{k/2} K_{p+k}(sqrt(ab)) / K_p(sqrt(ab)).
    On the Gamma boundary, moments with p + k <= 0 are unbounded; on the
    inverse-Gamma boundary, moments with k >= -p are unbounded.
    """
    p, a, b = params.p, params.a, params.b
    k = int(k)
    if k == 0:
        return 1.0
    if a > 0 and b > 0:
        omega = math.sqrt(a * b)
        return math.exp(
            0.5 * k * (math.log(b) - math.log(a))
            + log_bessel_k(p + k, omega)
            - log_bessel_k(p, omega)
        )
    if b == 0:  # Gamma(p, rate a/2)
        if p + k <= 0:
            return math.inf
        return math.exp(gammaln(p + k) - gammaln(p) - k * math.log(a / 2.0))
    # a == 0: InverseGamma(-p, scale b/2)
    if -p - k <= 0:
        return math.inf
    return math.exp(gammaln(-p - k) - gammaln(-p) + k * math.log(b / 2.0))


def gig_mean(params: GigParams) -> float:
    return gig_moment(params, 1)


# ---------------------------------------------------------------------------
# sampling


def _psi(x, alpha, lam):
    return -alpha * (np.cosh(x) - 1.0) - lam * (np.expm1(x) - x)


def _dpsi(x, alpha, lam):
    return -alpha * np.sinh(x) - lam * np.expm1(x)


def _sample_two_param(lam, omega, rng):
    """Draw from the two-parameter GIG(lam, omega), lam >= 0, omega > 0.

    Density proportional to x^{lam-1} exp(-omega (x + 1/x) / 2).
    All inputs are same-shape arrays; one draw per element.
    """
    lam = np.asarray(lam, dtype=float)
    omega = np.asarray(omega, dtype=float)
    shape = lam.shape

    # alpha = sqrt(omega^2 + lam^2) - lam, written to avoid cancellation
    hyp = np.hypot(lam, omega)
    alpha = omega * omega / (hyp + lam)

    # right-tail construction point t
    x1 = -_psi(np.ones(shape), alpha, lam)
    t = np.ones(shape)
    hi = x1 > 2.0
    lo = x1 < 0.5
    t[hi] = np.sqrt(2.0 / (alpha[hi] + lam[hi]))
    t[lo] = np.log(4.0 / (alpha[lo] + 2.0 * lam[lo]))

    # left-tail construction point s
    x2 = -_psi(-np.ones(shape), alpha, lam)
    s = np.ones(shape)
    hi = x2 > 2.0
    lo = x2 < 0.5
    s[hi] = np.sqrt(4.0 / (alpha[hi] * np.cosh(1.0) + lam[hi]))
    if np.any(lo):
        with np.errstate(divide="ignore"):
            log_term = np.log(
                1.0 + 1.0 / alpha[lo] + np.sqrt(1.0 / alpha[lo] ** 2 + 2.0 / alpha[lo])
            )
            inv_lam = np.where(lam[lo] > 0, 1.0 / np.where(lam[lo] > 0, lam[lo], 1.0), np.inf)
        s[lo] = np.minimum(inv_lam, log_term)

    eta = -_psi(t, alpha, lam)
    zeta = -_dpsi(t, alpha, lam)
    theta = -_psi(-s, alpha, lam)
    xi = _dpsi(-s, alpha, lam)
    pp = 1.0 / xi
    r = 1.0 / zeta
    td = t - r * eta
    sd = s - pp * theta
    q = td + sd

    out = np.empty(shape)
    active = np.ones(shape, dtype=bool)
    for _ in range(300):
        idx = np.nonzero(active)
        n = idx[0].size if idx else active.sum()
        if n == 0:
            break
        u = rng.random(n)
        v = 1.0 - rng.random(n)  # in (0, 1], keeps log finite
        w = 1.0 - rng.random(n)
        qa, ra, pa = q[idx], r[idx], pp[idx]
        tot = pa + qa + ra
        cand = np.where(
            u < qa / tot,
            -sd[idx] + qa * v,
            np.where(u < (qa + ra) / tot, td[idx] - ra * np.log(v), -sd[idx] + pa * np.log(v)),
        )
        f1 = np.exp(-eta[idx] - zeta[idx] * (cand - t[idx]))
        f2 = np.exp(-theta[idx] + xi[idx] * (cand + s[idx]))
        env = np.where(
            (cand >= -sd[idx]) & (cand <= td[idx]),
            1.0,
            np.where(cand > td[idx], f1, f2),
        )
        ok = w * env <= np.exp(_psi(cand, alpha[idx], lam[idx]))
        if np.any(ok):
            sel = tuple(ix[ok] for ix in idx)
            out[sel] = cand[ok]
            active[sel] = False
    else:
        raise NumericalError("GIG rejection sampler failed to accept in 300 rounds")
    return out


def gig_sample_many(p, a, b, rng) -> np.ndarray:
    """Vectorized GIG draws, one per element of the broadcast (p, a, b).

    Boundary parameters route to the Gamma / inverse-Gamma branches;
    a "b" below 1e-300 with p > 0 falls back to the Gamma branch, and is
    floored at 1e-300 otherwise so the general branch stays valid.
    """
    p, a, b = np.broadcast_arrays(
        np.asarray(p, dtype=float), np.asarray(a, dtype=float), np.asarray(b, dtype=float)
    )
    p = p.copy()
    a = a.copy()
    b = b.copy()
    out = np.empty(p.shape)

    gamma_mask = (b <= TINY_PARAM) & (p > 0)
    inv_mask = (a <= TINY_PARAM) & (p < 0)
    # keep the general branch well defined for whatever remains near zero
    b_floor = (b <= TINY_PARAM) & ~gamma_mask & ~inv_mask
    a_floor = (a <= TINY_PARAM) & ~gamma_mask & ~inv_mask
    b[b_floor] = TINY_PARAM
    a[a_floor] = TINY_PARAM
    general = ~gamma_mask & ~inv_mask

    if np.any(gamma_mask):
        out[gamma_mask] = rng.gamma(p[gamma_mask], 2.0 / a[gamma_mask])
    if np.any(inv_mask):
        out[inv_mask] = 1.0 / rng.gamma(-p[inv_mask], 2.0 / b[inv_mask])
    if np.any(general):
        pg, ag, bg = p[general], a[general], b[general]
        lam = np.abs(pg)
        omega = np.sqrt(ag * bg)
        x = _sample_two_param(lam, omega, rng)
        scale_top = lam + np.hypot(lam, omega)
        pos = pg >= 0
        val = np.empty_like(x)
        val[pos] = np.exp(x[pos]) * scale_top[pos] / ag[pos]
        val[~pos] = np.exp(-x[~pos]) * bg[~pos] / scale_top[~pos]
        out[general] = val
    return out


def gig_sample(params: GigParams, rng, size=None):
    """Draw from the GIG law; scalar when ``size`` is None."""
    shape = () if size is None else (size if isinstance(size, tuple) else (size,))
    draws = gig_sample_many(
        np.full(shape or (1,), params.p),
        np.full(shape or (1,), params.a),
        np.full(shape or (1,), params.b),
        rng,
    )
    if size is None:
        return float(draws[0])
    return draws.reshape(shape)
