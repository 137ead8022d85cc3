"""Target models: the conjugate Dirichlet-multinomial and a sparse gamma DEF.

Both expose a ModelSpec (latent layout + log-joint + hand-derived latent
gradient). The conjugate model additionally carries an exact posterior and an
analytic objective gradient, which is what makes it the oracle for estimator
unbiasedness and end-to-end convergence checks.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .distributions import DirichletParams
from .exceptions import DomainError
from .mathcore import RandomStream, digamma, finite_diff_grad, log_gamma_fn, trigamma
from .rejection import make_sampler_bank

__all__ = [
    "LatentBlock",
    "ModelSpec",
    "ConjugateModel",
    "conjugate_log_joint",
    "conjugate_grad",
    "conjugate_exact_elbo_grad",
    "conjugate_elbo_exact",
    "conjugate_model_spec",
    "SparseGammaDEF",
    "def_log_joint",
    "def_grad",
    "def_model_spec",
    "make_synthetic_def_data",
]

POISSON_RATE_FLOOR = 1e-10

_FAMILIES = ("gamma_mean_shape", "dirichlet")


@dataclass(frozen=True)
class LatentBlock:
    name: str
    family: str
    dim: int


class ModelSpec:
    """A model as the estimators see it.

    `log_joint` maps the flat latent vector (blocks concatenated in layout
    order; Dirichlet blocks hold the simplex coordinates) to log p(x, z), and
    `grad_latents` returns d log p / d z of the same shape. Both must accept
    points slightly off the simplex: finite differences and the
    normalization chain rule probe there.
    """

    def __init__(
        self,
        latent_layout: Sequence[LatentBlock],
        log_joint: Callable[[np.ndarray], float],
        grad_latents: Callable[[np.ndarray], np.ndarray],
        log_joint_batch: Callable[[np.ndarray], np.ndarray] | None = None,
    ):
        layout = tuple(latent_layout)
        if not layout:
            raise DomainError("ModelSpec needs at least one latent block")
        names = [b.name for b in layout]
        if len(set(names)) != len(names):
            raise DomainError(f"duplicate latent block names: {names}")
        for b in layout:
            if b.family not in _FAMILIES:
                raise DomainError(f"unknown latent family {b.family!r}")
            if b.dim < 1 or (b.family == "dirichlet" and b.dim < 2):
                raise DomainError(f"bad dimension for block {b.name!r}: {b.dim}")
        self.latent_layout = layout
        self.log_joint = log_joint
        self.grad_latents = grad_latents
        # optional row-wise evaluation over an (n, n_latents) matrix
        self.log_joint_batch = log_joint_batch

    @property
    def n_latents(self) -> int:
        return sum(b.dim for b in self.latent_layout)

    def latent_slices(self) -> dict:
        out = {}
        start = 0
        for b in self.latent_layout:
            out[b.name] = slice(start, start + b.dim)
            start += b.dim
        return out

    def random_interior_point(self, stream: RandomStream) -> np.ndarray:
        """A strictly interior latent point (used by the gradient self-check)."""
        z = np.empty(self.n_latents)
        for b, sl in zip(self.latent_layout, self.latent_slices().values()):
            u = stream.uniforms_open(b.dim)
            if b.family == "dirichlet":
                w = 0.2 + u
                z[sl] = w / w.sum()
            else:
                z[sl] = 0.3 + 2.0 * u
        return z

    def self_check(self, stream: RandomStream, n_points: int = 20, rel_tol: float = 1e-4, h: float = 1e-6) -> float:
        """Analytic-vs-finite-difference gradient check at random points.

        Error metric per point: max_i |g_i - fd_i| / max(1, max_i |fd_i|).
        Raises DomainError if any point exceeds rel_tol; returns the worst
        error seen.
        """
        worst = 0.0
        for _ in range(n_points):
            z = self.random_interior_point(stream)
            g = np.asarray(self.grad_latents(z), dtype=float)
            fd = finite_diff_grad(self.log_joint, z, h)
            err = float(np.max(np.abs(g - fd)) / max(1.0, float(np.max(np.abs(fd)))))
            worst = max(worst, err)
        if worst > rel_tol:
            raise DomainError(f"gradient self-check failed: rel err {worst:.3e} > {rel_tol:.1e}")
        return worst


# --- conjugate Dirichlet-multinomial -------------------------------------------


@dataclass(frozen=True)
class ConjugateModel:
    """Multinomial counts with a Dirichlet prior (exact posterior available)."""

    prior: np.ndarray
    counts: np.ndarray

    def __post_init__(self):
        prior = np.asarray(self.prior, dtype=float)
        counts = np.asarray(self.counts)
        if prior.ndim != 1 or prior.size < 2:
            raise DomainError("prior must be a 1-d vector with K >= 2")
        if not (np.all(np.isfinite(prior)) and np.all(prior > 0.0)):
            raise DomainError("prior concentrations must be positive")
        if counts.shape != prior.shape:
            raise DomainError("counts must match the prior's shape")
        if not (np.all(counts == np.floor(counts)) and np.all(counts >= 0)):
            raise DomainError("counts must be non-negative integers")
        counts = counts.astype(np.int64)
        prior = prior.copy()
        prior.flags.writeable = False
        counts.flags.writeable = False
        object.__setattr__(self, "prior", prior)
        object.__setattr__(self, "counts", counts)

    @property
    def dim(self) -> int:
        return self.prior.size

    @property
    def n_trials(self) -> int:
        return int(self.counts.sum())

    def exact_posterior(self) -> DirichletParams:
        return DirichletParams(self.prior + self.counts)

    def log_marginal_likelihood(self) -> float:
        """ln p(x) of the multinomial-Dirichlet (closed form)."""
        a0 = float(self.prior.sum())
        n = self.n_trials
        return (
            log_gamma_fn(n + 1.0)
            - float(np.sum(log_gamma_fn(self.counts + 1.0)))
            + log_gamma_fn(a0)
            - log_gamma_fn(a0 + n)
            + float(np.sum(log_gamma_fn(self.prior + self.counts)))
            - float(np.sum(log_gamma_fn(self.prior)))
        )


def _conjugate_coeffs(m: ConjugateModel) -> np.ndarray:
    return m.prior + m.counts - 1.0


def _conjugate_const(m: ConjugateModel) -> float:
    n = m.n_trials
    return (
        log_gamma_fn(n + 1.0)
        - float(np.sum(log_gamma_fn(m.counts + 1.0)))
        + log_gamma_fn(float(m.prior.sum()))
        - float(np.sum(log_gamma_fn(m.prior)))
    )


def conjugate_log_joint(m: ConjugateModel, z) -> float:
    """f(z) = sum_k (prior_k + n_k - 1) ln z_k + normalizing constants.

    Defined for any strictly positive z (it extends smoothly off the
    simplex, which the finite-difference checks rely on).
    """
    z = np.asarray(z, dtype=float)
    if z.shape != (m.dim,):
        raise DomainError(f"z must have shape ({m.dim},)")
    if not (np.all(np.isfinite(z)) and np.all(z > 0.0)):
        raise DomainError("conjugate_log_joint needs strictly positive z")
    return float(np.dot(_conjugate_coeffs(m), np.log(z))) + _conjugate_const(m)


def conjugate_grad(m: ConjugateModel, z_tilde) -> np.ndarray:
    """Gradient of f(z_tilde / sum z_tilde) with respect to the auxiliary gammas.

    With c_k = prior_k + n_k - 1 this is c_k / z_tilde_k - (sum_j c_j) / S.
    """
    zt = np.asarray(z_tilde, dtype=float)
    if zt.shape != (m.dim,):
        raise DomainError(f"z_tilde must have shape ({m.dim},)")
    if not (np.all(np.isfinite(zt)) and np.all(zt > 0.0)):
        raise DomainError("conjugate_grad needs strictly positive z_tilde")
    c = _conjugate_coeffs(m)
    return c / zt - float(c.sum()) / float(zt.sum())


def conjugate_exact_elbo_grad(m: ConjugateModel, q: DirichletParams) -> np.ndarray:
    """Analytic gradient of the variational objective at q.

    The objective is ln p(x) - KL(q || posterior); with a = prior + counts,
    d/d theta_k = (a_k - theta_k) psi'(theta_k) - psi'(theta_0) sum_j (a_j - theta_j).
    """
    if q.dim != m.dim:
        raise DomainError("parameter dimension mismatch")
    a = m.prior + m.counts
    th = q.conc
    diff = a - th
    return diff * trigamma(th) - trigamma(float(th.sum())) * float(diff.sum())


def conjugate_elbo_exact(m: ConjugateModel, q: DirichletParams) -> float:
    """Exact objective value E_q[f] + H[q] via special functions."""
    if q.dim != m.dim:
        raise DomainError("parameter dimension mismatch")
    from .distributions import dirichlet_entropy

    th = q.conc
    elog = digamma(th) - digamma(float(th.sum()))
    return float(np.dot(_conjugate_coeffs(m), elog)) + _conjugate_const(m) + dirichlet_entropy(q)


def conjugate_model_spec(m: ConjugateModel) -> ModelSpec:
    layout = (LatentBlock("z", "dirichlet", m.dim),)
    c = _conjugate_coeffs(m)
    const = _conjugate_const(m)

    def log_joint(z):
        z = np.asarray(z, dtype=float)
        if np.any(z <= 0.0):
            raise DomainError("log-joint needs strictly positive z")
        return float(np.dot(c, np.log(z))) + const

    def grad_latents(z):
        z = np.asarray(z, dtype=float)
        if np.any(z <= 0.0):
            raise DomainError("gradient needs strictly positive z")
        return c / z

    def log_joint_batch(zmat):
        zmat = np.asarray(zmat, dtype=float)
        if np.any(zmat <= 0.0):
            raise DomainError("log-joint needs strictly positive z")
        return np.log(zmat) @ c + const

    return ModelSpec(layout, log_joint, grad_latents, log_joint_batch=log_joint_batch)


# --- sparse gamma deep exponential family ---------------------------------------


@dataclass(frozen=True)
class SparseGammaDEF:
    """Layered gamma latents with Poisson observations.

    layer_sizes orders layers bottom-up: layer 1 (size K_1) drives the
    observations, the last layer is the top. Weights w[0] (K_1 x D) connect
    layer 1 to the data; w[l] (K_l x K_{l+1}) couples adjacent layers. Each
    non-top latent is Gam(alpha_z, alpha_z / (w z_above)), so the prior mean
    of a latent is its weighted parent sum.
    """

    layer_sizes: tuple
    data: np.ndarray
    alpha_z: float = 0.1
    weight_prior: tuple = (0.1, 0.3)
    top_prior: tuple = (0.1, 0.1)

    def __post_init__(self):
        sizes = tuple(int(k) for k in self.layer_sizes)
        if not sizes or any(k < 1 for k in sizes):
            raise DomainError("layer sizes must be positive integers")
        data = np.asarray(self.data)
        if data.ndim != 2 or data.size == 0:
            raise DomainError("data must be a non-empty (n_obs, n_dim) matrix")
        if not (np.all(data == np.floor(data)) and np.all(data >= 0)):
            raise DomainError("data must hold non-negative integer counts")
        for name in ("alpha_z",):
            if not (float(getattr(self, name)) > 0.0):
                raise DomainError(f"{name} must be positive")
        for pair_name in ("weight_prior", "top_prior"):
            a, b = getattr(self, pair_name)
            if not (a > 0.0 and b > 0.0):
                raise DomainError(f"{pair_name} must be positive (shape, rate)")
        data = data.astype(np.int64)
        data.flags.writeable = False
        object.__setattr__(self, "layer_sizes", sizes)
        object.__setattr__(self, "data", data)
        object.__setattr__(self, "alpha_z", float(self.alpha_z))
        object.__setattr__(self, "weight_prior", (float(self.weight_prior[0]), float(self.weight_prior[1])))
        object.__setattr__(self, "top_prior", (float(self.top_prior[0]), float(self.top_prior[1])))
        object.__setattr__(
            self, "_poisson_const", -float(np.sum(log_gamma_fn(data.astype(float) + 1.0)))
        )
        object.__setattr__(self, "_lg_alpha_z", log_gamma_fn(self.alpha_z))
        object.__setattr__(self, "_lg_top", log_gamma_fn(self.top_prior[0]))
        object.__setattr__(self, "_lg_weight", log_gamma_fn(self.weight_prior[0]))

    @property
    def n_obs(self) -> int:
        return self.data.shape[0]

    @property
    def n_dim(self) -> int:
        return self.data.shape[1]

    @property
    def n_layers(self) -> int:
        return len(self.layer_sizes)

    def weight_shapes(self) -> list:
        shapes = [(self.layer_sizes[0], self.n_dim)]
        for l in range(self.n_layers - 1):
            shapes.append((self.layer_sizes[l], self.layer_sizes[l + 1]))
        return shapes


def _check_def_latents(m: SparseGammaDEF, z_layers, weights):
    if len(z_layers) != m.n_layers:
        raise DomainError(f"expected {m.n_layers} latent layers")
    if len(weights) != m.n_layers:
        raise DomainError(f"expected {m.n_layers} weight matrices")
    zs, ws = [], []
    for l, z in enumerate(z_layers):
        z = np.asarray(z, dtype=float)
        if z.shape != (m.n_obs, m.layer_sizes[l]):
            raise DomainError(f"layer {l + 1} latents must be {(m.n_obs, m.layer_sizes[l])}")
        if not (np.all(np.isfinite(z)) and np.all(z > 0.0)):
            raise DomainError(f"layer {l + 1} latents must be strictly positive")
        zs.append(z)
    for l, (w, shape) in enumerate(zip(weights, m.weight_shapes())):
        w = np.asarray(w, dtype=float)
        if w.shape != shape:
            raise DomainError(f"weight matrix {l} must have shape {shape}")
        if not (np.all(np.isfinite(w)) and np.all(w > 0.0)):
            raise DomainError(f"weight matrix {l} must be strictly positive")
        ws.append(w)
    return zs, ws


def _gamma_logpdf_stack(z: np.ndarray, shape: float, rate, lg_shape: float) -> np.ndarray:
    """Per-draw sum of elementwise log Gam(z; shape, rate) over a stack.

    z has a leading draw axis; rate may be a broadcastable array. Returns
    one total per draw.
    """
    per_elem = (shape - 1.0) * np.log(z) - rate * z + shape * np.log(rate) - lg_shape
    return per_elem.reshape(z.shape[0], -1).sum(axis=1)


def _def_log_joint_stack(m: SparseGammaDEF, zs, ws) -> np.ndarray:
    """Batched log p(x, z, w); zs[l] is (n, n_obs, K_l), ws[l] is (n, ...)."""
    x = m.data.astype(float)
    lam = np.matmul(zs[0], ws[0])
    bad = ((lam == 0.0) & (x > 0)).any(axis=(1, 2))
    lam_safe = np.maximum(lam, POISSON_RATE_FLOOR)
    total = (x * np.log(lam_safe) - lam).reshape(lam.shape[0], -1).sum(axis=1) + m._poisson_const
    for l in range(m.n_layers - 1):
        mean = np.matmul(zs[l + 1], np.swapaxes(ws[l + 1], -1, -2))
        rate = m.alpha_z / mean
        total += _gamma_logpdf_stack(zs[l], m.alpha_z, rate, m._lg_alpha_z)
    ta, tb = m.top_prior
    total += _gamma_logpdf_stack(zs[-1], ta, tb, m._lg_top)
    wa, wb = m.weight_prior
    for w in ws:
        total += _gamma_logpdf_stack(w, wa, wb, m._lg_weight)
    if bad.any():
        total = np.where(bad, -np.inf, total)
    return total


def def_log_joint(m: SparseGammaDEF, z_layers, weights) -> float:
    """log p(x, z, w): Poisson likelihood + layer conditionals + priors.

    Poisson rates are floored at POISSON_RATE_FLOOR inside the log; an
    exactly zero rate against a positive count returns -inf.
    """
    zs, ws = _check_def_latents(m, z_layers, weights)
    return float(_def_log_joint_stack(m, [z[None] for z in zs], [w[None] for w in ws])[0])


def def_grad(m: SparseGammaDEF, z_layers, weights):
    """Hand-derived gradients of def_log_joint for every latent and weight."""
    zs, ws = _check_def_latents(m, z_layers, weights)
    gz = [np.zeros_like(z) for z in zs]
    gw = [np.zeros_like(w) for w in ws]
    x = m.data.astype(float)
    lam = zs[0] @ ws[0]
    lam_safe = np.maximum(lam, POISSON_RATE_FLOOR)
    resid = x / lam_safe - 1.0
    gz[0] += resid @ ws[0].T
    gw[0] += zs[0].T @ resid
    az = m.alpha_z
    for l in range(m.n_layers - 1):
        mean = zs[l + 1] @ ws[l + 1].T
        rate = az / mean
        gz[l] += (az - 1.0) / zs[l] - rate
        # d/d mean of [az ln(az/mean) - (az/mean) z] = az (z - mean) / mean^2
        dmean = az * (zs[l] - mean) / (mean * mean)
        gz[l + 1] += dmean @ ws[l + 1]
        gw[l + 1] += dmean.T @ zs[l + 1]
    ta, tb = m.top_prior
    gz[-1] += (ta - 1.0) / zs[-1] - tb
    wa, wb = m.weight_prior
    for l in range(m.n_layers):
        gw[l] += (wa - 1.0) / ws[l] - wb
    return gz, gw


def def_model_spec(m: SparseGammaDEF) -> ModelSpec:
    """Flat-vector adapter; blocks ordered z1..zL then w0..w(L-1)."""
    layout = []
    for l, k in enumerate(m.layer_sizes):
        layout.append(LatentBlock(f"z{l + 1}", "gamma_mean_shape", m.n_obs * k))
    for l, shape in enumerate(m.weight_shapes()):
        layout.append(LatentBlock(f"w{l}", "gamma_mean_shape", shape[0] * shape[1]))
    spec_layout = tuple(layout)

    def unpack(v):
        v = np.asarray(v, dtype=float)
        zs, ws = [], []
        pos = 0
        for l, k in enumerate(m.layer_sizes):
            size = m.n_obs * k
            zs.append(v[pos : pos + size].reshape(m.n_obs, k))
            pos += size
        for shape in m.weight_shapes():
            size = shape[0] * shape[1]
            ws.append(v[pos : pos + size].reshape(shape))
            pos += size
        return zs, ws

    def log_joint(v):
        zs, ws = unpack(v)
        return def_log_joint(m, zs, ws)

    def grad_latents(v):
        zs, ws = unpack(v)
        gz, gw = def_grad(m, zs, ws)
        return np.concatenate([g.ravel() for g in gz] + [g.ravel() for g in gw])

    def unpack_stack(vmat):
        n = vmat.shape[0]
        zs, ws = [], []
        pos = 0
        for l, k in enumerate(m.layer_sizes):
            size = m.n_obs * k
            zs.append(vmat[:, pos : pos + size].reshape(n, m.n_obs, k))
            pos += size
        for shape in m.weight_shapes():
            size = shape[0] * shape[1]
            ws.append(vmat[:, pos : pos + size].reshape(n, *shape))
            pos += size
        return zs, ws

    def log_joint_batch(vmat):
        vmat = np.asarray(vmat, dtype=float)
        if np.any(vmat <= 0.0):
            raise DomainError("log-joint needs strictly positive latents")
        zs, ws = unpack_stack(vmat)
        return _def_log_joint_stack(m, zs, ws)

    return ModelSpec(spec_layout, log_joint, grad_latents, log_joint_batch=log_joint_batch)


def _poisson_draw(lam: float, stream: RandomStream) -> int:
    """Exact Poisson count via unit-exponential arrivals (any finite rate)."""
    if lam <= 0.0:
        return 0
    k = 0
    t = -math.log(stream.uniform_open())
    while t <= lam:
        k += 1
        t += -math.log(stream.uniform_open())
    return k


def make_synthetic_def_data(
    layer_sizes,
    n_obs: int,
    n_dim: int,
    stream: RandomStream,
    alpha_z: float = 0.1,
    weight_prior=(0.1, 0.3),
    top_prior=(0.1, 0.1),
    weights=None,
):
    """Ancestral draw from the generative model itself.

    Returns (counts matrix, dict of generating latents). `weights`, when
    given, overrides the prior draws (entries may be zero; useful for
    degenerate fixtures).
    """
    sizes = tuple(int(k) for k in layer_sizes)
    if not sizes or any(k < 1 for k in sizes) or n_obs < 1 or n_dim < 1:
        raise DomainError("layer sizes, n_obs and n_dim must be positive")
    wa, wb = weight_prior
    shapes = [(sizes[0], n_dim)]
    for l in range(len(sizes) - 1):
        shapes.append((sizes[l], sizes[l + 1]))
    if weights is None:
        ws = []
        for shape in shapes:
            bank = make_sampler_bank(np.full(shape[0] * shape[1], float(wa)), float(wb), 0, memo=False)
            ws.append(bank.draw(stream).z.reshape(shape))
    else:
        ws = [np.asarray(w, dtype=float) for w in weights]
        for w, shape in zip(ws, shapes):
            if w.shape != shape or np.any(w < 0.0):
                raise DomainError(f"override weights must be non-negative with shape {shape}")
    ta, tb = top_prior
    zs = [None] * len(sizes)
    bank = make_sampler_bank(np.full(n_obs * sizes[-1], float(ta)), float(tb), 0, memo=False)
    zs[-1] = bank.draw(stream).z.reshape(n_obs, sizes[-1])
    for l in range(len(sizes) - 2, -1, -1):
        mean = zs[l + 1] @ ws[l + 1].T
        mean = np.maximum(mean, POISSON_RATE_FLOOR)
        rates = (alpha_z / mean).ravel()
        bank = make_sampler_bank(np.full(rates.size, float(alpha_z)), rates, 0, memo=False)
        zs[l] = bank.draw(stream).z.reshape(n_obs, sizes[l])
    lam = zs[0] @ ws[0]
    counts = np.empty((n_obs, n_dim), dtype=np.int64)
    for i in range(n_obs):
        for j in range(n_dim):
            counts[i, j] = _poisson_draw(float(lam[i, j]), stream)
    latents = {f"z{l + 1}": zs[l] for l in range(len(sizes))}
    latents.update({f"w{l}": ws[l] for l in range(len(ws))})
    return counts, latents
