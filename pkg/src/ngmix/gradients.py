"""Complete-data scores, expected information and gradient assembly.

Every parameter block of the model has a complete-data score (the
gradient of ``complete_loglik`` holding the latent draws fixed) and,
where the relevant mixing moments are bounded, an expected information
matrix that serves as a Newton-style preconditioner.  The marginal
gradient estimate follows Fisher's identity: averaging complete-data
scores over conditional draws of the latents gives the gradient of the
observed-data likelihood.

Positivity-constrained parameters (sigma, kappa, the nu's) are optimized
on the log scale; ``ParamLayout`` fixes the block order, applies the
change of variables and maps flat vectors back to ``ModelParams``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.special import digamma, polygamma

from .errors import ConfigError, DomainError, NumericalError, ParameterError, ShapeError
from .fem import Discretization
from .kernels import duplication_matrix, spd_factor, unvech, vech
from .mixtures import NvmSpec
from .model import LatentState, ModelParams, SubjectRecord, residuals

__all__ = [
    "ScoreBlock",
    "ParamLayout",
    "score_beta",
    "score_sigma_noise",
    "score_sigma_matrix",
    "score_mu_u",
    "score_operator",
    "score_mu_w",
    "score_nu",
    "complete_score",
    "complete_hessian",
    "cfim_blocks",
    "assemble_gradient",
]

#: families carrying a skew parameter / a tail-weight parameter
SKEW_FAMILIES = ("nig", "gal")
NU_FAMILIES = ("nig", "gal", "t")

_COMPONENT_BLOCKS = {"noise": "nu_noise", "re": "nu_re", "process": "nu_proc"}


@dataclass(frozen=True)
class ScoreBlock:
    """One parameter block's gradient and (negated) expected Hessian.

    ``expected_hessian`` stores -E[d^2 loglik], a positive-semidefinite
    information matrix, or None when the required mixing moments are
    unbounded for the component's family.
    """

    name: str
    gradient: np.ndarray
    expected_hessian: np.ndarray | None

    def __post_init__(self):
        g = np.atleast_1d(np.asarray(self.gradient, dtype=float))
        if not np.all(np.isfinite(g)):
            raise DomainError(f"score block {self.name!r} has a non-finite gradient")
        object.__setattr__(self, "gradient", g)
        if self.expected_hessian is not None:
            h = np.atleast_2d(np.asarray(self.expected_hessian, dtype=float))
            if h.shape != (g.size, g.size):
                raise ShapeError(
                    f"score block {self.name!r}: hessian shape {h.shape} "
                    f"does not match gradient length {g.size}"
                )
            if not np.allclose(h, h.T, rtol=1e-9, atol=1e-12):
                raise ShapeError(f"score block {self.name!r}: hessian is not symmetric")
            object.__setattr__(self, "expected_hessian", 0.5 * (h + h.T))


@dataclass(frozen=True)
class BlockInfo:
    name: str
    size: int
    log: bool


@dataclass(frozen=True)
class ParamLayout:
    """Flat packing of the free parameters, log scale where positive."""

    blocks: tuple[BlockInfo, ...]

    @classmethod
    def from_params(cls, params: ModelParams) -> "ParamLayout":
        blocks = []
        if params.beta.size:
            blocks.append(BlockInfo("beta", params.beta.size, False))
        blocks.append(BlockInfo("sigma", 1, True))
        q = params.q
        if q:
            blocks.append(BlockInfo("Sigma", q * (q + 1) // 2, False))
            if params.re_spec.family in SKEW_FAMILIES:
                blocks.append(BlockInfo("mu_u", q, False))
        if params.has_process:
            if params.operator.kind == "exponential":
                blocks.append(BlockInfo("kappa", 1, True))
            if params.proc_spec.family in SKEW_FAMILIES:
                blocks.append(BlockInfo("mu_w", 1, False))
        if params.noise_spec.family in NU_FAMILIES:
            blocks.append(BlockInfo("nu_noise", 1, True))
        if q and params.re_spec.family in NU_FAMILIES:
            blocks.append(BlockInfo("nu_re", 1, True))
        if params.has_process and params.proc_spec.family in NU_FAMILIES:
            blocks.append(BlockInfo("nu_proc", 1, True))
        return cls(tuple(blocks))

    @property
    def dim(self) -> int:
        return sum(b.size for b in self.blocks)

    def offset(self, name: str) -> slice:
        start = 0
        for b in self.blocks:
            if b.name == name:
                return slice(start, start + b.size)
            start += b.size
        raise ParameterError(f"layout has no block {name!r}")

    def has(self, name: str) -> bool:
        return any(b.name == name for b in self.blocks)

    def names(self) -> list[str]:
        out = []
        for b in self.blocks:
            if b.name == "beta":
                out.extend(f"beta[{i}]" for i in range(b.size))
            elif b.name == "Sigma":
                q = round((math.sqrt(8 * b.size + 1) - 1) / 2)
                out.extend(f"Sigma[{i}][{j}]" for j in range(q) for i in range(j + 1))
            elif b.name == "mu_u":
                out.extend(f"mu_u[{i}]" for i in range(b.size))
            else:
                out.append(b.name)
        return out

    def _natural_block(self, params: ModelParams, name: str) -> np.ndarray:
        if name == "beta":
            return params.beta
        if name == "sigma":
            return np.array([params.sigma])
        if name == "Sigma":
            return vech(params.Sigma)
        if name == "mu_u":
            return params.mu_u
        if name == "kappa":
            return np.array([params.operator.kappa])
        if name == "mu_w":
            return np.array([params.mu_w])
        if name == "nu_noise":
            return np.array([params.noise_spec.nu])
        if name == "nu_re":
            return np.array([params.re_spec.nu])
        if name == "nu_proc":
            return np.array([params.proc_spec.nu])
        raise ParameterError(f"unknown block {name!r}")

    def natural(self, params: ModelParams) -> np.ndarray:
        """Flat parameter vector on the natural scale (trace units)."""
        return np.concatenate([self._natural_block(params, b.name) for b in self.blocks])

    def pack(self, params: ModelParams) -> np.ndarray:
        """Flat vector on the optimization scale (logs applied)."""
        parts = []
        for b in self.blocks:
            vals = self._natural_block(params, b.name)
            parts.append(np.log(vals) if b.log else vals)
        return np.concatenate(parts)

    def jacobian(self, params: ModelParams) -> np.ndarray:
        """d(natural)/d(optimization) as a diagonal, evaluated at params."""
        out = np.ones(self.dim)
        for b in self.blocks:
            if b.log:
                out[self.offset(b.name)] = self._natural_block(params, b.name)
        return out

    def unpack(self, params: ModelParams, vector) -> ModelParams:
        """Rebuild a ModelParams with this layout's values substituted."""
        vector = np.asarray(vector, dtype=float)
        if vector.shape != (self.dim,):
            raise ShapeError(f"expected a vector of length {self.dim}, got {vector.shape}")
        vals = {}
        for b in self.blocks:
            v = vector[self.offset(b.name)]
            vals[b.name] = np.exp(v) if b.log else v

        beta = vals.get("beta", params.beta)
        sigma = float(vals["sigma"][0])
        sig = unvech(vals["Sigma"]) if "Sigma" in vals else params.Sigma
        re_spec = params.re_spec
        if re_spec is not None:
            re_mu = vals["mu_u"] if "mu_u" in vals else np.asarray(re_spec.mu)
            re_nu = float(vals["nu_re"][0]) if "nu_re" in vals else re_spec.nu
            re_spec = NvmSpec(re_spec.family, nu=re_nu, mu=re_mu)
        proc_spec = params.proc_spec
        operator = params.operator
        if proc_spec is not None:
            pr_mu = float(vals["mu_w"][0]) if "mu_w" in vals else proc_spec.mu
            pr_nu = float(vals["nu_proc"][0]) if "nu_proc" in vals else proc_spec.nu
            proc_spec = NvmSpec(proc_spec.family, nu=pr_nu, mu=pr_mu)
            if "kappa" in vals:
                operator = operator.with_kappa(float(vals["kappa"][0]))
        noise_spec = params.noise_spec
        if "nu_noise" in vals:
            noise_spec = noise_spec.with_nu(float(vals["nu_noise"][0]))
        return ModelParams(
            beta=beta, sigma=sigma, noise_spec=noise_spec, Sigma=sig,
            re_spec=re_spec, proc_spec=proc_spec, operator=operator,
            noise_scope=params.noise_scope,
        )


# ---------------------------------------------------------------------------
# per-block scores


def _as_lists(subjects, latents, discs):
    subjects = list(subjects)
    latents = list(latents)
    if len(subjects) != len(latents):
        raise ShapeError("subjects and latents must align")
    if discs is None or isinstance(discs, Discretization):
        discs = [discs] * len(subjects)
    else:
        discs = list(discs)
        if len(discs) != len(subjects):
            raise ShapeError("discs must align with subjects")
    return subjects, latents, discs


def score_beta(params: ModelParams, subjects, latents, discs=None) -> ScoreBlock:
    """Fixed-effect score (1/sigma^2) sum x^T (e / V_z) with information
    E[1/V] sum x^T x / sigma^2."""
    subjects, latents, discs = _as_lists(subjects, latents, discs)
    p = params.beta.size
    g = np.zeros(p)
    xtx = np.zeros((p, p))
    for subject, latent, disc in zip(subjects, latents, discs):
        e = residuals(params, subject, latent, disc)
        g += subject.x.T @ (e / latent.v_z)
        xtx += subject.x.T @ subject.x
    s2 = params.sigma**2
    einv = params.noise_spec.einv()
    info = einv / s2 * xtx if math.isfinite(einv) else None
    return ScoreBlock("beta", g / s2, info)


def score_sigma_noise(params: ModelParams, subjects, latents, discs=None) -> ScoreBlock:
    """Noise-scale score -sum n_i/sigma + sum (e/V)^T e / sigma^3."""
    subjects, latents, discs = _as_lists(subjects, latents, discs)
    total_n = 0
    quad = 0.0
    for subject, latent, disc in zip(subjects, latents, discs):
        e = residuals(params, subject, latent, disc)
        quad += float(e @ (e / latent.v_z))
        total_n += subject.n
    sig = params.sigma
    g = -total_n / sig + quad / sig**3
    return ScoreBlock("sigma", np.array([g]), np.array([[2.0 * total_n / sig**2]]))


def score_sigma_matrix(params: ModelParams, latents) -> ScoreBlock:
    """Score of vech(Sigma): (1/2) D^T (S^-1 o S^-1) vec(sum M_i/V_i - N S)."""
    if params.q == 0:
        raise ParameterError("model has no random effects")
    latents = list(latents)
    q = params.q
    chol = spd_factor(params.Sigma)
    sig_inv = np.linalg.solve(chol.T, np.linalg.solve(chol, np.eye(q)))
    mu = params.mu_u
    acc = np.zeros((q, q))
    for latent in latents:
        r = latent.u - mu * (latent.v_u - 1.0)
        acc += np.outer(r, r) / latent.v_u
    dup = duplication_matrix(q)
    inner = sig_inv @ acc @ sig_inv - len(latents) * sig_inv
    g = 0.5 * dup.T @ inner.ravel(order="F")
    info = 0.5 * len(latents) * dup.T @ np.kron(sig_inv, sig_inv) @ dup
    return ScoreBlock("Sigma", g, info)


def score_mu_u(params: ModelParams, latents) -> ScoreBlock:
    """Random-effect skew score sum ((V-1)/V) Sigma^-1 r."""
    if params.q == 0:
        raise ParameterError("model has no random effects")
    latents = list(latents)
    q = params.q
    chol = spd_factor(params.Sigma)
    sig_inv = np.linalg.solve(chol.T, np.linalg.solve(chol, np.eye(q)))
    mu = params.mu_u
    g = np.zeros(q)
    for latent in latents:
        r = latent.u - mu * (latent.v_u - 1.0)
        g += ((latent.v_u - 1.0) / latent.v_u) * (sig_inv @ r)
    ev = params.re_spec.ev()
    einv = params.re_spec.einv()
    if math.isfinite(ev) and math.isfinite(einv):
        info = len(latents) * (ev * ev * einv - ev) * sig_inv
    else:
        info = None
    return ScoreBlock("mu_u", g, info)


def _kinv(disc: Discretization) -> np.ndarray:
    return disc.solve(np.eye(disc.size))


def score_operator(params: ModelParams, disc: Discretization, latents) -> ScoreBlock:
    """Score of the operator parameter kappa for the exponential kind.

    dK/dkappa is the lumped mass matrix diag(h); the expected Hessian is
    unavailable (its assembly cost is out of proportion for a
    preconditioner, so the optimizer calibrates a scaled identity).
    """
    if not params.has_process:
        raise ParameterError("model has no process component")
    if params.operator.kind != "exponential":
        raise ParameterError(
            f"operator kind {params.operator.kind!r} has no free parameter"
        )
    latents = list(latents)
    h = disc.h
    try:
        kinv = _kinv(disc)
    except np.linalg.LinAlgError as exc:
        raise NumericalError("singular operator matrix") from exc
    trace_term = float(h @ np.diag(kinv))
    if not np.isfinite(trace_term):
        raise NumericalError("singular operator matrix")
    mu = params.mu_w
    g = 0.0
    for latent in latents:
        rw = disc.kmat @ latent.w - mu * (latent.v_w - h)
        g += trace_term - float((h * latent.w) @ (rw / latent.v_w))
    return ScoreBlock("kappa", np.array([g]), None)


def score_mu_w(params: ModelParams, disc: Discretization, latents) -> ScoreBlock:
    """Process skew score sum (V-h)^T diag(V)^-1 (KW + h mu - V mu)."""
    if not params.has_process:
        raise ParameterError("model has no process component")
    latents = list(latents)
    h = disc.h
    mu = params.mu_w
    g = 0.0
    for latent in latents:
        rw = disc.kmat @ latent.w - mu * (latent.v_w - h)
        g += float((latent.v_w - h) @ (rw / latent.v_w))
    info = _info_mu_w(params, disc)
    if info is not None:
        info = len(latents) * info
    return ScoreBlock("mu_w", np.array([g]), info)


def _info_mu_w(params: ModelParams, disc: Discretization) -> np.ndarray | None:
    """Per-subject E[(V-h)^2/V] summed over elements, from prior moments.

    The two mixing families with a skew both have closed-form moments:
    the half-integer Bessel ratios collapse E[V] - 2h + h^2 E[1/V] to
    1/nu per element (nig) and h/(h nu - 1) (gal, unbounded at h nu <= 1).
    """
    family = params.proc_spec.family
    h = disc.h
    if family == "normal":
        return np.zeros((1, 1))
    if family == "nig":
        return np.array([[h.size / params.proc_spec.nu]])
    if family == "gal":
        hnu = h * params.proc_spec.nu
        if np.min(hnu) <= 1.0:
            return None
        return np.array([[float(np.sum(h / (hnu - 1.0)))]])
    return None  # cauchy: E[V] is unbounded


def _nu_elements(params: ModelParams, latent: LatentState, component: str,
                 disc: Discretization | None):
    """(values, weights) of the GIG-distributed elements for a component."""
    if component == "noise":
        if params.noise_scope == "per-subject":
            x = latent.v_z[:1]
        else:
            x = latent.v_z
        return x, np.ones(x.size)
    if component == "re":
        return np.array([latent.v_u]), np.ones(1)
    if component == "process":
        if disc is None:
            raise DomainError("the process nu score requires a Discretization")
        return latent.v_w, disc.h
    raise ParameterError(f"unknown component {component!r}")


def _component_spec(params: ModelParams, component: str) -> NvmSpec:
    spec = {"noise": params.noise_spec, "re": params.re_spec,
            "process": params.proc_spec}.get(component)
    if spec is None:
        raise ParameterError(f"model has no {component} component")
    return spec


def score_nu(params: ModelParams, latents, component: str,
             disc: Discretization | None = None) -> ScoreBlock:
    """Tail-weight score for one component's mixing parameter.

    The NIG case is d/dnu of the GIG(-1/2, nu, h^2 nu) log prior summed
    over elements; GAL and t follow from their Gamma / inverse-Gamma
    mixing densities by the same pattern.
    """
    spec = _component_spec(params, component)
    family = spec.family
    if family not in NU_FAMILIES:
        raise ParameterError(f"family {family!r} has no tail-weight parameter")
    nu = spec.nu
    latents = list(latents)
    g = 0.0
    info = 0.0
    for latent in latents:
        x, h = _nu_elements(params, latent, component, disc)
        if family == "nig":
            g += float(np.sum(1.0 / (2.0 * nu) + h - x / 2.0 - h * h / (2.0 * x)))
            info += x.size / (2.0 * nu * nu)
        elif family == "gal":
            g += float(np.sum(h * math.log(nu) + h - h * digamma(h * nu)
                              + h * np.log(x) - x))
            info += float(np.sum(h * h * polygamma(1, h * nu) - h / nu))
        else:  # t
            g += float(np.sum(0.5 * math.log(nu / 2.0) + 0.5
                              - 0.5 * digamma(nu / 2.0) - 0.5 * np.log(x)
                              - 1.0 / (2.0 * x)))
            info += x.size * (0.25 * polygamma(1, nu / 2.0) - 0.5 / nu)
    return ScoreBlock(_COMPONENT_BLOCKS[component], np.array([g]),
                      np.array([[float(info)]]))


# ---------------------------------------------------------------------------
# flat assembly


def _block_score(params: ModelParams, subject: SubjectRecord, state: LatentState,
                 disc: Discretization | None, name: str) -> np.ndarray:
    if name == "beta":
        return score_beta(params, [subject], [state], disc).gradient
    if name == "sigma":
        g = score_sigma_noise(params, [subject], [state], disc).gradient
        return params.sigma * g
    if name == "Sigma":
        return score_sigma_matrix(params, [state]).gradient
    if name == "mu_u":
        return score_mu_u(params, [state]).gradient
    if name == "kappa":
        g = score_operator(params, disc, [state]).gradient
        return params.operator.kappa * g
    if name == "mu_w":
        return score_mu_w(params, disc, [state]).gradient
    if name == "nu_noise":
        return params.noise_spec.nu * score_nu(params, [state], "noise").gradient
    if name == "nu_re":
        return params.re_spec.nu * score_nu(params, [state], "re").gradient
    if name == "nu_proc":
        return params.proc_spec.nu * score_nu(params, [state], "process", disc).gradient
    raise ParameterError(f"unknown block {name!r}")


def complete_score(params: ModelParams, subject: SubjectRecord, state: LatentState,
                   disc: Discretization | None = None,
                   layout: ParamLayout | None = None) -> np.ndarray:
    """One subject's complete-data score on the optimization scale."""
    layout = layout or ParamLayout.from_params(params)
    return np.concatenate(
        [_block_score(params, subject, state, disc, b.name) for b in layout.blocks]
    )


def _info_block(params: ModelParams, subject: SubjectRecord,
                disc: Discretization | None, name: str) -> np.ndarray | None:
    """Per-subject expected information on the natural scale; None when
    the required moments are unbounded (or deliberately not assembled)."""
    if name == "beta":
        einv = params.noise_spec.einv()
        if not math.isfinite(einv):
            return None
        return einv / params.sigma**2 * (subject.x.T @ subject.x)
    if name == "sigma":
        return np.array([[2.0 * subject.n / params.sigma**2]])
    if name == "Sigma":
        q = params.q
        chol = spd_factor(params.Sigma)
        sig_inv = np.linalg.solve(chol.T, np.linalg.solve(chol, np.eye(q)))
        dup = duplication_matrix(q)
        return 0.5 * dup.T @ np.kron(sig_inv, sig_inv) @ dup
    if name == "mu_u":
        ev = params.re_spec.ev()
        einv = params.re_spec.einv()
        if not (math.isfinite(ev) and math.isfinite(einv)):
            return None
        chol = spd_factor(params.Sigma)
        sig_inv = np.linalg.solve(chol.T, np.linalg.solve(chol, np.eye(params.q)))
        return (ev * ev * einv - ev) * sig_inv
    if name == "kappa":
        return None
    if name == "mu_w":
        return _info_mu_w(params, disc)
    if name in ("nu_noise", "nu_re", "nu_proc"):
        component = {v: k for k, v in _COMPONENT_BLOCKS.items()}[name]
        spec = _component_spec(params, component)
        nu = spec.nu
        if component == "noise":
            count = 1 if params.noise_scope == "per-subject" else subject.n
            h = np.ones(count)
        elif component == "re":
            h = np.ones(1)
        else:
            h = disc.h
        if spec.family == "nig":
            return np.array([[h.size / (2.0 * nu * nu)]])
        if spec.family == "gal":
            return np.array([[float(np.sum(h * h * polygamma(1, h * nu) - h / nu))]])
        return np.array([[h.size * (0.25 * polygamma(1, nu / 2.0) - 0.5 / nu)]])
    raise ParameterError(f"unknown block {name!r}")


def cfim_blocks(params: ModelParams, subjects, weights=None, discs=None,
                layout: ParamLayout | None = None) -> dict:
    """Weighted per-block expected information on the optimization scale.

    Blocks whose moments are unbounded (and the operator block, whose
    information is never assembled) map to None.
    """
    layout = layout or ParamLayout.from_params(params)
    subjects = list(subjects)
    if weights is None:
        weights = np.ones(len(subjects))
    weights = np.asarray(weights, dtype=float)
    if discs is None or isinstance(discs, Discretization):
        discs = [discs] * len(subjects)
    out = {}
    jac = layout.jacobian(params)
    for b in layout.blocks:
        total = np.zeros((b.size, b.size))
        for subject, w, disc in zip(subjects, weights, discs):
            piece = _info_block(params, subject, disc, b.name)
            if piece is None:
                total = None
                break
            total = total + w * piece
        if total is not None:
            j = jac[layout.offset(b.name)]
            total = total * np.outer(j, j)
        out[b.name] = total
    return out


def assemble_gradient(params: ModelParams, subjects, draws, weights,
                      discs=None) -> tuple[np.ndarray, np.ndarray]:
    """Weighted Monte-Carlo gradient estimate and its preconditioner.

    ``draws[i]`` holds the retained Gibbs states of subject i; the
    per-subject score is the average over them, weighted per the
    sub-sampling plan.  The preconditioner is the block-diagonal expected
    information with identity fallback for unavailable blocks.
    """
    subjects = list(subjects)
    weights = np.asarray(weights, dtype=float)
    if len(subjects) != len(draws) or weights.shape != (len(subjects),):
        raise ShapeError("subjects, draws and weights must align")
    if np.any(weights <= 0) or not np.all(np.isfinite(weights)):
        raise ConfigError("sub-sample weights must be positive and finite")
    if any(len(d) == 0 for d in draws):
        raise ConfigError("every subject needs at least one Gibbs draw")
    if discs is None or isinstance(discs, Discretization):
        discs = [discs] * len(subjects)

    layout = ParamLayout.from_params(params)
    grad = np.zeros(layout.dim)
    for subject, states, w, disc in zip(subjects, draws, weights, discs):
        acc = np.zeros(layout.dim)
        for state in states:
            acc += complete_score(params, subject, state, disc, layout)
        grad += (w / len(states)) * acc

    info = cfim_blocks(params, subjects, weights, discs, layout)
    if all(v is None for v in info.values()):
        raise ConfigError("no parameter block has an available preconditioner")
    precond = np.eye(layout.dim)
    for b in layout.blocks:
        if info[b.name] is not None:
            sl = layout.offset(b.name)
            precond[sl, sl] = info[b.name]
    return grad, precond


# ---------------------------------------------------------------------------
# complete-data Hessian (for Louis-identity standard errors)


def complete_hessian(params: ModelParams, subject: SubjectRecord, state: LatentState,
                     disc: Discretization | None = None,
                     layout: ParamLayout | None = None) -> np.ndarray:
    """One subject's complete-data Hessian on the optimization scale.

    Log-scale blocks use the chain rule H_log = theta^2 H + theta g.
    Cross terms exist only inside layers: (beta, sigma) in the noise
    layer, (Sigma, mu_u) in the random-effect layer, (kappa, mu_w) in the
    process layer; the nu blocks are diagonal.
    """
    layout = layout or ParamLayout.from_params(params)
    hess = np.zeros((layout.dim, layout.dim))

    def put(n1, n2, val):
        s1, s2 = layout.offset(n1), layout.offset(n2)
        hess[s1, s2] = val
        if n1 != n2:
            hess[s2, s1] = np.transpose(val)

    sig = params.sigma
    e = residuals(params, subject, state, disc)
    v = state.v_z
    t1 = float(e @ (e / v)) / sig**2
    if layout.has("beta"):
        x = subject.x
        put("beta", "beta", -(x.T @ (x / v[:, None])) / sig**2)
        put("beta", "sigma", (-2.0 / sig**2 * x.T @ (e / v))[:, None])
    put("sigma", "sigma", np.array([[-2.0 * t1]]))

    if layout.has("Sigma"):
        q = params.q
        chol = spd_factor(params.Sigma)
        sig_inv = np.linalg.solve(chol.T, np.linalg.solve(chol, np.eye(q)))
        dup = duplication_matrix(q)
        c = state.v_u - 1.0
        r = state.u - params.mu_u * c
        s_mat = np.outer(r, r) / state.v_u
        sis = sig_inv @ s_mat @ sig_inv
        h_ss = dup.T @ (
            0.5 * np.kron(sig_inv, sig_inv)
            - 0.5 * (np.kron(sis, sig_inv) + np.kron(sig_inv, sis))
        ) @ dup
        put("Sigma", "Sigma", h_ss)
        if layout.has("mu_u"):
            put("mu_u", "mu_u", -(c * c / state.v_u) * sig_inv)
            cross = -(c / state.v_u) * (np.kron((sig_inv @ r)[None, :], sig_inv) @ dup)
            put("mu_u", "Sigma", cross)

    if layout.has("kappa") or layout.has("mu_w"):
        h = disc.h
        vw = state.v_w
        rw = disc.kmat @ state.w - params.mu_w * (vw - h)
        cw = h * state.w
        if layout.has("kappa"):
            kinv = _kinv(disc)
            trace_term = float(h @ np.diag(kinv))
            ckinv = h[:, None] * kinv
            g_nat = trace_term - float(cw @ (rw / vw))
            h_nat = -float(np.sum(ckinv * ckinv.T)) - float(cw @ (cw / vw))
            kap = params.operator.kappa
            put("kappa", "kappa", np.array([[kap * kap * h_nat + kap * g_nat]]))
            if layout.has("mu_w"):
                cross = -kap * float(cw @ ((h - vw) / vw))
                put("kappa", "mu_w", np.array([[cross]]))
        if layout.has("mu_w"):
            put("mu_w", "mu_w", np.array([[-float((h - vw) @ ((h - vw) / vw))]]))

    for name, component in (("nu_noise", "noise"), ("nu_re", "re"),
                            ("nu_proc", "process")):
        if not layout.has(name):
            continue
        spec = _component_spec(params, component)
        nu = spec.nu
        xs, hs = _nu_elements(params, state, component, disc)
        g_nat = float(score_nu(params, [state], component, disc).gradient[0])
        if spec.family == "nig":
            h_nat = -xs.size / (2.0 * nu * nu)
        elif spec.family == "gal":
            h_nat = float(np.sum(hs / nu - hs * hs * polygamma(1, hs * nu)))
        else:
            h_nat = xs.size * (0.5 / nu - 0.25 * polygamma(1, nu / 2.0))
        put(name, name, np.array([[nu * nu * h_nat + nu * g_nat]]))

    return hess
