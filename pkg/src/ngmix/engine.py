"""Stacked-subject engine behind the stochastic optimizer.

The per-subject conditional draws in :mod:`ngmix.gibbs` and the score
operations in :mod:`ngmix.gradients` are the reference implementations,
but they loop in Python; a fit touches hundreds of subjects for
thousands of iterations, so the optimizer runs on this module instead.
Subjects sharing an observation count are stacked into contiguous
``(B, n, .)`` arrays and every conditional draw / score evaluation runs
for the whole stack at once.  Tests pin each stacked operation to its
per-subject counterpart; nothing here introduces new math.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from scipy.linalg import cho_solve
from scipy.special import digamma, polygamma

from .errors import DataError, NumericalError, ShapeError
from .fem import Discretization, observation_matrix, process_prior_arrays
from .gig import gig_sample_many
from .gradients import ParamLayout, _info_block
from .kernels import duplication_matrix, spd_factor
from .model import LatentState, ModelParams, SubjectRecord

__all__ = [
    "SubjectBatch",
    "BatchState",
    "build_batches",
    "stack_states",
    "draw_gaussian_batch",
    "sweep_batch",
    "batch_scores",
    "batch_cfim",
    "batch_hessians",
]


@dataclass(frozen=True)
class SubjectBatch:
    """Subjects with a common observation count, stacked for vector ops."""

    subjects: tuple[SubjectRecord, ...]
    indices: np.ndarray  # positions in the originating subject list
    x: np.ndarray        # (B, n, p)
    y: np.ndarray        # (B, n)
    cmat: np.ndarray     # (B, n, q + nk): [d, A] per subject
    q: int
    nk: int

    @property
    def size(self) -> int:
        return self.y.shape[0]

    @property
    def n(self) -> int:
        return self.y.shape[1]

    @property
    def m(self) -> int:
        return self.q + self.nk

    def take(self, rows) -> "SubjectBatch":
        rows = np.asarray(rows)
        return SubjectBatch(
            subjects=tuple(self.subjects[i] for i in rows),
            indices=self.indices[rows],
            x=self.x[rows],
            y=self.y[rows],
            cmat=self.cmat[rows],
            q=self.q,
            nk=self.nk,
        )


@dataclass
class BatchState:
    """Latent arrays for one batch; rows align with the batch subjects."""

    u: np.ndarray    # (B, q)
    w: np.ndarray    # (B, nk)
    v_z: np.ndarray  # (B, n)
    v_u: np.ndarray  # (B,)
    v_w: np.ndarray  # (B, nk)

    def take(self, rows) -> "BatchState":
        rows = np.asarray(rows)
        return BatchState(self.u[rows], self.w[rows], self.v_z[rows],
                          self.v_u[rows], self.v_w[rows])

    def put(self, rows, other: "BatchState") -> None:
        rows = np.asarray(rows)
        self.u[rows] = other.u
        self.w[rows] = other.w
        self.v_z[rows] = other.v_z
        self.v_u[rows] = other.v_u
        self.v_w[rows] = other.v_w

    def latents(self) -> list[LatentState]:
        return [
            LatentState(u=self.u[i], w=self.w[i], v_z=self.v_z[i],
                        v_u=float(self.v_u[i]), v_w=self.v_w[i])
            for i in range(self.u.shape[0])
        ]


def stack_states(states) -> BatchState:
    states = list(states)
    return BatchState(
        u=np.array([s.u for s in states], dtype=float),
        w=np.array([s.w for s in states], dtype=float),
        v_z=np.array([s.v_z for s in states], dtype=float),
        v_u=np.array([s.v_u for s in states], dtype=float),
        v_w=np.array([s.v_w for s in states], dtype=float),
    )


def build_batches(subjects, params: ModelParams,
                  disc: Discretization | None = None) -> list[SubjectBatch]:
    """Bucket subjects by observation count and stack their arrays.

    All subjects share the discretization grid, so within a bucket only
    the design matrices and observation times vary.
    """
    subjects = list(subjects)
    p = params.beta.size
    q = params.q
    nk = disc.size if params.has_process else 0
    groups: dict[int, list[int]] = {}
    for i, s in enumerate(subjects):
        if s.y is None:
            raise DataError(f"subject {s.id} has no outcome vector")
        if s.x.shape[1] != p or s.d.shape[1] != q:
            raise ShapeError(
                f"subject {s.id}: design shapes {s.x.shape}/{s.d.shape} do not "
                f"match the model (p={p}, q={q})"
            )
        groups.setdefault(s.n, []).append(i)

    out = []
    for n in sorted(groups):
        idx = np.asarray(groups[n])
        members = [subjects[i] for i in idx]
        cmats = []
        for s in members:
            cols = []
            if q:
                cols.append(s.d)
            if nk:
                cols.append(observation_matrix(disc.nodes, s.times))
            cmats.append(np.hstack(cols) if cols else np.zeros((n, 0)))
        out.append(SubjectBatch(
            subjects=tuple(members),
            indices=idx,
            x=np.array([s.x for s in members], dtype=float),
            y=np.array([s.y for s in members], dtype=float),
            cmat=np.array(cmats, dtype=float),
            q=q,
            nk=nk,
        ))
    return out


def _sig_inv(params: ModelParams) -> np.ndarray:
    chol = spd_factor(params.Sigma)
    return cho_solve((chol, True), np.eye(params.q))


_dup = lru_cache(maxsize=8)(duplication_matrix)


def gaussian_system(params: ModelParams, batch: SubjectBatch, state: BatchState,
                    disc: Discretization | None):
    """Stacked precision matrices and linear terms of (U, W) | V, Y."""
    b, n, m, q = batch.size, batch.n, batch.m, batch.q
    quad = np.zeros((b, m, m))
    lin = np.zeros((b, m))
    with np.errstate(over="ignore", invalid="ignore", divide="ignore"):
        if q:
            sig_inv = _sig_inv(params)
            quad[:, :q, :q] = sig_inv[None] / state.v_u[:, None, None]
            lin[:, :q] = (sig_inv @ params.mu_u)[None] \
                * ((state.v_u - 1.0) / state.v_u)[:, None]
        if batch.nk:
            k = disc.kmat
            nk = batch.nk
            scaled = (np.broadcast_to(k.T, (b, nk, nk)) / state.v_w[:, None, :])
            quad[:, q:, q:] = (scaled.reshape(b * nk, nk) @ k).reshape(b, nk, nk)
            lin[:, q:] = (params.mu_w * (state.v_w - disc.h) / state.v_w) @ k
        w_z = 1.0 / (np.float64(params.sigma) ** 2 * state.v_z)
        quad += batch.cmat.transpose(0, 2, 1) @ (batch.cmat * w_z[:, :, None])
        lin += np.einsum("bnj,bn->bj", batch.cmat, w_z * (batch.y - batch.x @ params.beta))
    return quad, lin


def draw_gaussian_batch(params: ModelParams, batch: SubjectBatch, state: BatchState,
                        disc: Discretization | None, rng) -> np.ndarray:
    """Exact stacked draws of (U, W); returns a (B, q + nk) array."""
    if batch.m == 0:
        return np.zeros((batch.size, 0))
    quad, lin = gaussian_system(params, batch, state, disc)
    if not np.all(np.isfinite(quad)):
        raise NumericalError("singular conditional precision in stacked draw")
    quad = 0.5 * (quad + quad.transpose(0, 2, 1))
    try:
        chol = np.linalg.cholesky(quad)
    except np.linalg.LinAlgError as exc:
        raise NumericalError("singular conditional precision in stacked draw") from exc
    mean = np.linalg.solve(quad, lin[..., None])[..., 0]
    z = rng.standard_normal((batch.size, batch.m))
    noise = np.linalg.solve(chol.transpose(0, 2, 1), z[..., None])[..., 0]
    return mean + noise


def draw_vz_batch(params: ModelParams, resid: np.ndarray, rng) -> np.ndarray:
    mix = params.noise_spec.mixing()
    if mix is None:
        return np.ones_like(resid)
    quad = resid * resid / params.sigma**2
    if params.noise_scope == "per-subject":
        pooled = gig_sample_many(
            mix.p - 0.5 * resid.shape[1], mix.a, mix.b + quad.sum(axis=1), rng
        )
        return np.broadcast_to(pooled[:, None], resid.shape).copy()
    return gig_sample_many(mix.p - 0.5, mix.a, mix.b + quad, rng)


def draw_vu_batch(params: ModelParams, u: np.ndarray, rng) -> np.ndarray:
    b = u.shape[0]
    if params.q == 0:
        return np.ones(b)
    mix = params.re_spec.mixing()
    if mix is None:
        return np.ones(b)
    sig_inv = _sig_inv(params)
    up = u + params.mu_u
    bq = mix.b + np.einsum("bi,ij,bj->b", up, sig_inv, up)
    aq = mix.a + float(params.mu_u @ sig_inv @ params.mu_u)
    return gig_sample_many(np.full(b, mix.p - 0.5 * params.q), aq, bq, rng)


def draw_vw_batch(params: ModelParams, disc: Discretization | None,
                  w: np.ndarray, rng) -> np.ndarray:
    if not params.has_process:
        return np.zeros((w.shape[0], 0))
    prior = process_prior_arrays(params.proc_spec.family, params.proc_spec.nu, disc.h)
    if prior is None:
        return np.tile(disc.h, (w.shape[0], 1))
    p0, a0, b0 = prior
    e = w @ disc.kmat.T + params.mu_w * disc.h
    return gig_sample_many(p0 - 0.5, a0 + params.mu_w**2, b0 + e * e, rng)


def sweep_batch(params: ModelParams, batch: SubjectBatch, state: BatchState,
                disc: Discretization | None, rng, n_sweeps: int = 1) -> BatchState:
    """Stacked Gibbs sweeps; same conditional laws as :func:`ngmix.gibbs.sweep`."""
    for _ in range(n_sweeps):
        draw = draw_gaussian_batch(params, batch, state, disc, rng)
        u, w = draw[:, :batch.q], draw[:, batch.q:]
        resid = batch.y - batch.x @ params.beta \
            - (batch.cmat @ draw[..., None])[..., 0]
        state = BatchState(
            u=u,
            w=w,
            v_z=draw_vz_batch(params, resid, rng),
            v_u=draw_vu_batch(params, u, rng),
            v_w=draw_vw_batch(params, disc, w, rng),
        )
    return state


def operator_trace(disc: Discretization) -> float:
    """h^T diag(K^-1), the operator score's trace term for one subject."""
    try:
        kinv = disc.solve(np.eye(disc.size))
    except np.linalg.LinAlgError as exc:
        raise NumericalError("singular operator matrix") from exc
    trace_term = float(disc.h @ np.diag(kinv))
    if not np.isfinite(trace_term):
        raise NumericalError("singular operator matrix")
    return trace_term


def _nu_score_terms(family: str, nu: float, x: np.ndarray, h) -> np.ndarray:
    """Per-subject tail-weight score summed over the trailing element axis."""
    if family == "nig":
        vals = 1.0 / (2.0 * nu) + h - x / 2.0 - h * h / (2.0 * x)
    elif family == "gal":
        vals = h * np.log(nu) + h - h * digamma(h * nu) + h * np.log(x) - x
    else:  # t
        vals = (0.5 * np.log(nu / 2.0) + 0.5 - 0.5 * digamma(nu / 2.0)
                - 0.5 * np.log(x) - 1.0 / (2.0 * x))
    return np.sum(vals, axis=-1)


def batch_scores(params: ModelParams, batch: SubjectBatch, state: BatchState,
                 disc: Discretization | None, layout: ParamLayout,
                 trace_term: float | None = None) -> np.ndarray:
    """Per-subject complete-data scores on the optimization scale, (B, dim).

    Row i equals ``gradients.complete_score`` for batch subject i.
    ``trace_term`` lets callers reuse h^T diag(K^-1) across sweeps at a
    fixed parameter point.
    """
    b, n, q = batch.size, batch.n, batch.q
    out = np.zeros((b, layout.dim))
    uw = np.concatenate([state.u, state.w], axis=1)
    e = batch.y - batch.x @ params.beta - (batch.cmat @ uw[..., None])[..., 0]
    s2 = params.sigma**2

    if layout.has("beta"):
        out[:, layout.offset("beta")] = np.einsum("bnp,bn->bp", batch.x, e / state.v_z) / s2
    out[:, layout.offset("sigma")] = (
        -float(n) + np.sum(e * e / state.v_z, axis=1) / s2
    )[:, None]

    if layout.has("Sigma"):
        sig_inv = _sig_inv(params)
        r = state.u - params.mu_u * (state.v_u - 1.0)[:, None]
        t = r @ sig_inv
        m_mat = t[:, :, None] * t[:, None, :] / state.v_u[:, None, None]
        inner = m_mat - sig_inv[None]
        vecf = inner.transpose(0, 2, 1).reshape(b, q * q)
        out[:, layout.offset("Sigma")] = 0.5 * vecf @ _dup(q)
        if layout.has("mu_u"):
            out[:, layout.offset("mu_u")] = ((state.v_u - 1.0) / state.v_u)[:, None] * t

    if layout.has("kappa") or layout.has("mu_w"):
        h = disc.h
        rw = state.w @ disc.kmat.T - params.mu_w * (state.v_w - h)
        if layout.has("kappa"):
            if trace_term is None:
                trace_term = operator_trace(disc)
            g_nat = trace_term - np.sum((h * state.w) * (rw / state.v_w), axis=1)
            out[:, layout.offset("kappa")] = (params.operator.kappa * g_nat)[:, None]
        if layout.has("mu_w"):
            g = np.sum((state.v_w - h) * rw / state.v_w, axis=1)
            out[:, layout.offset("mu_w")] = g[:, None]

    if layout.has("nu_noise"):
        nu = params.noise_spec.nu
        x = state.v_z[:, :1] if params.noise_scope == "per-subject" else state.v_z
        g = _nu_score_terms(params.noise_spec.family, nu, x, 1.0)
        out[:, layout.offset("nu_noise")] = (nu * g)[:, None]
    if layout.has("nu_re"):
        nu = params.re_spec.nu
        g = _nu_score_terms(params.re_spec.family, nu, state.v_u[:, None], 1.0)
        out[:, layout.offset("nu_re")] = (nu * g)[:, None]
    if layout.has("nu_proc"):
        nu = params.proc_spec.nu
        g = _nu_score_terms(params.proc_spec.family, nu, state.v_w, disc.h)
        out[:, layout.offset("nu_proc")] = (nu * g)[:, None]
    return out


def batch_cfim(params: ModelParams, batch: SubjectBatch, weights,
               disc: Discretization | None, layout: ParamLayout) -> dict:
    """Weighted expected-information blocks for one batch (optimization scale).

    Within a batch the per-subject information differs only through the
    fixed-effect design, so the remaining blocks reuse the per-subject
    computation scaled by the total weight.
    """
    weights = np.asarray(weights, dtype=float)
    jac = layout.jacobian(params)
    out = {}
    for blk in layout.blocks:
        if blk.name == "beta":
            einv = params.noise_spec.einv()
            if not np.isfinite(einv):
                out[blk.name] = None
                continue
            piece = einv / params.sigma**2 * np.einsum(
                "b,bnp,bnr->pr", weights, batch.x, batch.x
            )
        else:
            base = _info_block(params, batch.subjects[0], disc, blk.name)
            if base is None:
                out[blk.name] = None
                continue
            piece = float(np.sum(weights)) * base
        j = jac[layout.offset(blk.name)]
        out[blk.name] = piece * np.outer(j, j)
    return out


def batch_hessians(params: ModelParams, batch: SubjectBatch, state: BatchState,
                   disc: Discretization | None, layout: ParamLayout,
                   trace_term: float | None = None,
                   trace_h2: float | None = None) -> np.ndarray:
    """Per-subject complete-data Hessians on the optimization scale, (B, dim, dim).

    Slice i equals ``gradients.complete_hessian`` for batch subject i.
    ``trace_term`` and ``trace_h2`` cache h^T diag(K^-1) and the squared
    trace term sum((h K^-1) * (h K^-1)^T), both constant across draws at
    a fixed parameter point.
    """
    b, n, q = batch.size, batch.n, batch.q
    hess = np.zeros((b, layout.dim, layout.dim))

    def put(n1, n2, val):
        s1, s2 = layout.offset(n1), layout.offset(n2)
        hess[:, s1, s2] = val
        if n1 != n2:
            hess[:, s2, s1] = np.transpose(val, (0, 2, 1))

    uw = np.concatenate([state.u, state.w], axis=1)
    e = batch.y - batch.x @ params.beta - (batch.cmat @ uw[..., None])[..., 0]
    s2 = params.sigma**2
    t1 = np.sum(e * e / state.v_z, axis=1) / s2
    if layout.has("beta"):
        xw = batch.x / state.v_z[:, :, None]
        put("beta", "beta", -(batch.x.transpose(0, 2, 1) @ xw) / s2)
        put("beta", "sigma",
            (-2.0 / s2 * np.einsum("bnp,bn->bp", batch.x, e / state.v_z))[:, :, None])
    put("sigma", "sigma", (-2.0 * t1)[:, None, None])

    if layout.has("Sigma"):
        sig_inv = _sig_inv(params)
        dup = _dup(q)
        c = state.v_u - 1.0
        r = state.u - params.mu_u * c[:, None]
        s_mat = r[:, :, None] * r[:, None, :] / state.v_u[:, None, None]
        sis = sig_inv @ s_mat @ sig_inv
        kron_si = np.einsum("bij,kl->bikjl", sis, sig_inv).reshape(b, q * q, q * q)
        kron_is = np.einsum("ij,bkl->bikjl", sig_inv, sis).reshape(b, q * q, q * q)
        inner = 0.5 * np.kron(sig_inv, sig_inv)[None] - 0.5 * (kron_si + kron_is)
        put("Sigma", "Sigma", dup.T @ inner @ dup)
        if layout.has("mu_u"):
            t = r @ sig_inv
            put("mu_u", "mu_u", -(c * c / state.v_u)[:, None, None] * sig_inv[None])
            cross = np.einsum("bj,kl->bkjl", t, sig_inv).reshape(b, q, q * q) @ dup
            put("mu_u", "Sigma", -(c / state.v_u)[:, None, None] * cross)

    if layout.has("kappa") or layout.has("mu_w"):
        h = disc.h
        vw = state.v_w
        rw = state.w @ disc.kmat.T - params.mu_w * (vw - h)
        cw = h[None, :] * state.w
        if layout.has("kappa"):
            if trace_term is None or trace_h2 is None:
                try:
                    kinv = disc.solve(np.eye(disc.size))
                except np.linalg.LinAlgError as exc:
                    raise NumericalError("singular operator matrix") from exc
                ckinv = h[:, None] * kinv
                trace_term = float(h @ np.diag(kinv))
                trace_h2 = float(np.sum(ckinv * ckinv.T))
            g_nat = trace_term - np.sum(cw * (rw / vw), axis=1)
            h_nat = -trace_h2 - np.sum(cw * cw / vw, axis=1)
            kap = params.operator.kappa
            put("kappa", "kappa", (kap * kap * h_nat + kap * g_nat)[:, None, None])
            if layout.has("mu_w"):
                cross = -kap * np.sum(cw * ((h - vw) / vw), axis=1)
                put("kappa", "mu_w", cross[:, None, None])
        if layout.has("mu_w"):
            put("mu_w", "mu_w", (-np.sum((h - vw) ** 2 / vw, axis=1))[:, None, None])

    for name, component in (("nu_noise", "noise"), ("nu_re", "re"),
                            ("nu_proc", "process")):
        if not layout.has(name):
            continue
        spec = {"noise": params.noise_spec, "re": params.re_spec,
                "process": params.proc_spec}[component]
        nu = spec.nu
        if component == "noise":
            x = state.v_z[:, :1] if params.noise_scope == "per-subject" else state.v_z
            hs = np.ones(x.shape[1])
        elif component == "re":
            x = state.v_u[:, None]
            hs = np.ones(1)
        else:
            x = state.v_w
            hs = disc.h
        g_nat = _nu_score_terms(spec.family, nu, x, hs)
        if spec.family == "nig":
            h_nat = -hs.size / (2.0 * nu * nu)
        elif spec.family == "gal":
            h_nat = float(np.sum(hs / nu - hs * hs * polygamma(1, hs * nu)))
        else:
            h_nat = hs.size * (0.5 / nu - 0.25 * polygamma(1, nu / 2.0))
        put(name, name, (nu * nu * h_nat + nu * g_nat)[:, None, None])

    return hess
