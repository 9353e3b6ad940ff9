"""Scalar special functions and small-matrix utilities.

These are the numeric primitives everything else builds on: the modified
Bessel function of the third kind (plus a log variant that stays finite
where K itself over- or underflows), half-vectorization bookkeeping for
symmetric matrices, and an SPD factorization that reports the failing
pivot instead of a bare LAPACK error.
"""

from __future__ import annotations

import numpy as np
from scipy import special
from scipy.linalg.lapack import dpotrf

from .errors import DomainError, FactorizationError, RangeError, ShapeError

#: Largest Bessel order accepted by :func:`bessel_k`.
MAX_BESSEL_ORDER = 500.0


def bessel_k(order: float, x):
    """Modified Bessel function of the third kind, K_order(x).

    Parameters
    ----------
    order : float
        Real order with ``|order| <= 500``.
    x : float or ndarray
        Strictly positive argument(s).

    Returns
    -------
    float or ndarray
        K_order(x), always positive.

    Raises
    ------
    DomainError
        If ``x <= 0`` or the order is out of range.
    RangeError
        If the result overflows double precision (use
        :func:`log_bessel_k` instead in that regime).
    """
    if abs(order) > MAX_BESSEL_ORDER:
        raise DomainError(f"Bessel order {order} exceeds |order| <= {MAX_BESSEL_ORDER}")
    xarr = np.asarray(x, dtype=float)
    if np.any(xarr <= 0.0) or not np.all(np.isfinite(xarr)):
        raise DomainError("bessel_k requires strictly positive finite x")
    out = special.kv(order, xarr)
    if np.any(~np.isfinite(out)):
        raise RangeError(
            f"K_{order}(x) overflows double precision for some x; "
            "use log_bessel_k"
        )
    return out if out.ndim else float(out)


def _log_bessel_k_mpmath(order: float, x: np.ndarray) -> np.ndarray:
    """Arbitrary-precision fallback for regions where kve over/underflows."""
    import mpmath as mp

    out = np.empty(x.shape, dtype=float)
    flat = x.ravel()
    res = out.ravel()
    with mp.workdps(30):
        for i, xi in enumerate(flat):
            res[i] = float(mp.log(mp.besselk(mp.mpf(order), mp.mpf(xi))))
    return out


def log_bessel_k(order: float, x):
    """log K_order(x), finite wherever the true value is representable in logs.

    The direct route uses the exponentially scaled ``kve`` and subtracts x.
    Where ``kve`` itself leaves double range (very large order against a
    small argument, as happens in generalized inverse Gaussian normalizing
    constants with shape parameters up to 1e4), an arbitrary-precision
    evaluation takes over, so the result never silently saturates.
    """
    xarr = np.asarray(x, dtype=float)
    if np.any(xarr <= 0.0) or not np.all(np.isfinite(xarr)):
        raise DomainError("log_bessel_k requires strictly positive finite x")
    order = float(abs(order))  # K_{-p} = K_p
    scaled = special.kve(order, xarr)
    with np.errstate(divide="ignore"):
        out = np.log(scaled) - xarr
    bad = ~np.isfinite(out)
    if np.any(bad):
        out = np.atleast_1d(out)
        xb = np.atleast_1d(xarr)
        out[np.atleast_1d(bad)] = _log_bessel_k_mpmath(order, xb[np.atleast_1d(bad)])
        out = out.reshape(xarr.shape)
    return out if out.ndim else float(out)


def vech(m) -> np.ndarray:
    """Half-vectorize a symmetric matrix.

    Stacks the upper-including-diagonal entries column by column, so a
    ``d x d`` input becomes a vector of length ``d(d+1)/2``:
    ``(m[0,0], m[0,1], m[1,1], m[0,2], m[1,2], m[2,2], ...)``.
    """
    m = np.asarray(m, dtype=float)
    if m.ndim != 2 or m.shape[0] != m.shape[1]:
        raise ShapeError(f"vech requires a square matrix, got shape {m.shape}")
    d = m.shape[0]
    return np.concatenate([m[: j + 1, j] for j in range(d)])


def unvech(v) -> np.ndarray:
    """Inverse of :func:`vech`: rebuild the symmetric matrix."""
    v = np.asarray(v, dtype=float)
    if v.ndim != 1:
        raise ShapeError("unvech requires a vector")
    d = round_dim(v.size)
    m = np.zeros((d, d))
    k = 0
    for j in range(d):
        m[: j + 1, j] = v[k : k + j + 1]
        k += j + 1
    return m + np.triu(m, 1).T


def round_dim(size: int) -> int:
    """Matrix dimension d with d(d+1)/2 == size."""
    d = int((np.sqrt(8 * size + 1) - 1) / 2)
    if d * (d + 1) // 2 != size:
        raise ShapeError(f"length {size} is not a triangular number")
    return d


def duplication_matrix(d: int) -> np.ndarray:
    """0/1 matrix D with ``D @ vech(A) == vec(A)`` for symmetric A.

    ``vec`` stacks columns (Fortran order); the vech ordering matches
    :func:`vech`. Shape is ``(d*d, d*(d+1)/2)``.
    """
    if d < 1:
        raise DomainError("duplication_matrix requires d >= 1")
    t = d * (d + 1) // 2
    dup = np.zeros((d * d, t))
    idx = 0
    for j in range(d):
        for i in range(j + 1):
            dup[j * d + i, idx] = 1.0
            dup[i * d + j, idx] = 1.0
            idx += 1
    return dup


def spd_factor(m) -> np.ndarray:
    """Lower Cholesky factor of a symmetric positive-definite matrix.

    Raises
    ------
    FactorizationError
        If a pivot is non-positive; the error carries the one-based pivot
        index in its ``pivot`` attribute.
    """
    m = np.asarray(m, dtype=float)
    if m.ndim != 2 or m.shape[0] != m.shape[1]:
        raise ShapeError(f"spd_factor requires a square matrix, got {m.shape}")
    if not np.all(np.isfinite(m)):
        raise FactorizationError("matrix contains non-finite entries", pivot=0)
    if not np.allclose(m, m.T, rtol=1e-10, atol=1e-12):
        raise ShapeError("spd_factor requires a symmetric matrix")
    c, info = dpotrf(m, lower=1, overwrite_a=0)
    if info != 0:
        raise FactorizationError(
            f"matrix is not positive definite (pivot {info})", pivot=int(info)
        )
    return np.tril(c)
