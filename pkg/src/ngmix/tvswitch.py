"""Total-variation distances between marginal laws and NIG switching rules.

The NIG family becomes numerically unstable (and practically
unidentifiable) at the edges of its parameter space, where it approaches
either a Gaussian or a Cauchy law.  This module measures how close the
unit-constrained NIG marginal is to its nearest Gaussian / Cauchy
neighbour in total variation and applies the conservative replacement
rule at fixed tail-parameter thresholds.
"""

import heapq
from dataclasses import dataclass

import numpy as np
from scipy.optimize import minimize_scalar
from scipy.stats import cauchy as _cauchy
from scipy.stats import norm as _norm

from .errors import DomainError, NumericalError
from .mixtures import NvmSpec, nvm_logpdf_1d

__all__ = [
    "SwitchRule",
    "tv_distance",
    "tv_to_nearest_gaussian",
    "tv_to_nearest_cauchy",
    "apply_switch",
]

# 15/29-point Gauss-Legendre pair shared by every panel
_XLO, _WLO = np.polynomial.legendre.leggauss(15)
_XHI, _WHI = np.polynomial.legendre.leggauss(29)

_TAIL_MASS = 1e-9
_MAX_PANELS = 20_000


@dataclass(frozen=True)
class SwitchRule:
    """Tail-parameter thresholds for leaving the NIG family.

    Above ``to_gaussian_above`` the fitted NIG is replaced by a Gaussian,
    below ``to_cauchy_below`` by a Cauchy; both replacements are within
    total variation 0.002 of the NIG they replace.
    """

    to_gaussian_above: float = 250.0
    to_cauchy_below: float = 0.001

    def __post_init__(self):
        if not (np.isfinite(self.to_gaussian_above) and self.to_gaussian_above > 0):
            raise DomainError(
                f"to_gaussian_above must be positive, got {self.to_gaussian_above}"
            )
        if not (np.isfinite(self.to_cauchy_below) and self.to_cauchy_below > 0):
            raise DomainError(
                f"to_cauchy_below must be positive, got {self.to_cauchy_below}"
            )
        if self.to_cauchy_below >= self.to_gaussian_above:
            raise DomainError(
                "to_cauchy_below must lie below to_gaussian_above, got "
                f"{self.to_cauchy_below} >= {self.to_gaussian_above}"
            )


def _panel_pair(fun, lo, hi):
    """Return (refined integral, error estimate) of ``fun`` over [lo, hi]."""
    mid, half = 0.5 * (lo + hi), 0.5 * (hi - lo)
    coarse = half * (_WLO @ fun(mid + half * _XLO))
    fine = half * (_WHI @ fun(mid + half * _XHI))
    return fine, abs(fine - coarse)


def _initial_edges(pdf_f, pdf_g):
    """Geometric panel edges covering all but ~1e-9 of both laws' mass.

    The heavier tail decides the extent: edges are pushed outward until
    the outermost panel carries less than ``_TAIL_MASS`` of f + g on each
    side, which Cauchy-like tails may postpone until |x| ~ 1e9.
    """
    both = lambda x: pdf_f(x) + pdf_g(x)
    edges = [0.0, 0.25, 0.5, 1.0]
    while True:
        hi = edges[-1]
        tail, _ = _panel_pair(both, hi, 2.0 * hi)
        # a crude bound for the remaining mass beyond 2*hi: geometric decay
        # at the observed rate, or the Cauchy envelope c/x
        if tail < 0.5 * _TAIL_MASS and 2.0 * hi * both(np.array([2.0 * hi]))[0] < _TAIL_MASS:
            edges.append(2.0 * hi)
            break
        edges.append(2.0 * hi)
        if hi > 1e12:
            break
    right = np.asarray(edges[1:])
    return np.concatenate([-right[::-1], edges[:1], right])


def tv_distance(pdf_f, pdf_g, tol: float = 1e-6) -> float:
    """Total-variation distance (1/2)∫|f − g| between two densities.

    Both arguments must be vectorized densities on the real line.  The
    quadrature domain is grown adaptively until the uncovered tail mass
    is below 1e-9, then panels are bisected until the absolute error
    estimate falls under ``tol``; failure to converge raises
    NumericalError with the achieved tolerance attached.
    """
    absdiff = lambda x: np.abs(pdf_f(x) - pdf_g(x))
    edges = _initial_edges(pdf_f, pdf_g)
    heap = []
    total_err = total_val = 0.0
    for lo, hi in zip(edges[:-1], edges[1:]):
        val, err = _panel_pair(absdiff, lo, hi)
        heapq.heappush(heap, (-err, lo, hi, val))
        total_err += err
        total_val += val
    target = 0.25 * tol  # conservative budget for the ∫|f−g| error estimate
    while total_err > target:
        if len(heap) >= _MAX_PANELS:
            raise NumericalError(
                "total-variation quadrature did not reach the requested "
                f"tolerance {tol:g}",
                achieved=0.5 * total_err,
            )
        neg_err, lo, hi, val = heapq.heappop(heap)
        total_err += neg_err
        total_val -= val
        mid = 0.5 * (lo + hi)
        for a, b in ((lo, mid), (mid, hi)):
            val, err = _panel_pair(absdiff, a, b)
            heapq.heappush(heap, (-err, a, b, val))
            total_err += err
            total_val += val
    return min(1.0, 0.5 * total_val)


def _unit_nig_pdf(a: float):
    spec = NvmSpec("nig", nu=float(a))
    return lambda x: np.exp(nvm_logpdf_1d(spec, 1.0, x))


def _minimize_log_scale(objective, lo: float, hi: float):
    res = minimize_scalar(
        objective,
        bounds=(np.log(lo), np.log(hi)),
        method="bounded",
        options={"xatol": 1e-7},
    )
    if not res.success:
        raise NumericalError(f"scale search failed: {res.message}")
    # a minimizer jammed against the bracket means the bracket missed it
    span = np.log(hi) - np.log(lo)
    if min(res.x - np.log(lo), np.log(hi) - res.x) < 1e-4 * span:
        raise NumericalError(
            f"scale search hit the bracket edge at log-scale {res.x:.4g}"
        )
    return res


def tv_to_nearest_gaussian(a: float) -> tuple[float, float]:
    """Minimized TV between the unit NIG with tail parameter ``a`` and a
    Gaussian, over the Gaussian's standard deviation.

    Returns ``(tv, best_sd)``.  The unit NIG has variance one, so the
    optimum always lies near sd = 1.
    """
    if not (np.isfinite(a) and a > 0):
        raise DomainError(f"tail parameter a must be positive, got {a}")
    f = _unit_nig_pdf(a)
    objective = lambda s: tv_distance(f, lambda x: _norm.pdf(x, scale=np.exp(s)))
    res = _minimize_log_scale(objective, 0.05, 20.0)
    return float(res.fun), float(np.exp(res.x))


def tv_to_nearest_cauchy(a: float, b_nig: float = 1.0) -> tuple[float, float]:
    """Minimized TV between the NIG with tail parameter ``a`` and a Cauchy,
    over the Cauchy's GIG scale parameter b.

    Computed with the NIG scale fixed to one; by the scaling proposition
    the distance does not depend on ``b_nig``, and the best Cauchy
    parameter is simply rescaled by it.  Returns ``(tv, best_b)``.
    """
    if not (np.isfinite(a) and a > 0):
        raise DomainError(f"tail parameter a must be positive, got {a}")
    if not (np.isfinite(b_nig) and b_nig > 0):
        raise DomainError(f"b_nig must be positive, got {b_nig}")
    f = _unit_nig_pdf(a)
    # the Cauchy with mixing GIG(-1/2, 0, b) has scale sqrt(b)
    objective = lambda s: tv_distance(
        f, lambda x: _cauchy.pdf(x, scale=np.exp(0.5 * s))
    )
    res = _minimize_log_scale(objective, min(1e-6, a / 10.0), 50.0)
    return float(res.fun), float(np.exp(res.x)) * b_nig


def apply_switch(rule: SwitchRule, spec: NvmSpec) -> NvmSpec:
    """Collapse an edge-of-parameter-space NIG spec to Gaussian or Cauchy.

    Non-NIG specs pass through unchanged, which makes the rule
    idempotent.  Switching drops the skew parameter: the replacement
    families are symmetric.
    """
    if spec.family != "nig":
        return spec
    if spec.nu > rule.to_gaussian_above:
        return NvmSpec("normal")
    if spec.nu < rule.to_cauchy_below:
        return NvmSpec("cauchy")
    return spec
