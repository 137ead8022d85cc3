"""Monte Carlo gradient estimators for the variational objective.

Three estimators share one parameter layout: the decomposed pathwise
estimator (a reparameterization term from the accepted proposal plus a
correction term for the target/proposal mismatch plus the analytic entropy
gradient), the plain score-function estimator, and an importance-weighted
variant that skips the accept step and weights by the target/proposal ratio.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from .distributions import DirichletParams, dirichlet_entropy, dirichlet_entropy_grad
from .exceptions import ContractError, DomainError
from .mathcore import RandomStream, digamma, log_gamma_fn, trigamma
from .models import ModelSpec
from .rejection import BankDraw, dh_dalpha, make_sampler_bank

__all__ = [
    "EstimatorConfig",
    "GradientEstimate",
    "VarianceProfile",
    "ParamBlock",
    "param_layout",
    "default_theta_init",
    "grad_log_ratio_gamma",
    "estimate_gradient",
    "estimate_gradient_score",
    "estimate_gradient_importance",
    "estimate",
    "variance_profile",
    "estimate_elbo",
    "entropy_total",
]

ESTIMATOR_KINDS = ("rsvi", "score_function", "importance")


@dataclass(frozen=True)
class EstimatorConfig:
    """Which estimator to run, with B augmentation steps and S draws.

    A single draw per estimate (draws=1) is the default; averaging S draws
    divides the variance by roughly S.
    """

    kind: str = "rsvi"
    aug_b: int = 1
    draws: int = 1

    def __post_init__(self):
        if self.kind not in ESTIMATOR_KINDS:
            raise ContractError(f"unknown estimator kind {self.kind!r}")
        if int(self.aug_b) < 0:
            raise ContractError("aug_b must be >= 0")
        if int(self.draws) < 1:
            raise ContractError("draws per estimate must be >= 1")
        object.__setattr__(self, "aug_b", int(self.aug_b))
        object.__setattr__(self, "draws", int(self.draws))

    @property
    def label(self) -> str:
        return f"{self.kind}(B={self.aug_b})" if self.kind != "score_function" else self.kind


@dataclass(frozen=True)
class GradientEstimate:
    """Per-parameter estimate split into its three components.

    total is exactly g_rep + g_cor + g_entropy, kept separate so the
    correction term can be profiled on its own.
    """

    g_rep: np.ndarray
    g_cor: np.ndarray
    g_entropy: np.ndarray
    total: np.ndarray
    draws: int
    trials: int


@dataclass(frozen=True)
class VarianceProfile:
    variances: np.ndarray
    vmin: float
    vmedian: float
    vmax: float
    label: str
    sample_count: int


@dataclass(frozen=True)
class ParamBlock:
    name: str
    family: str
    dim: int
    latent_slice: slice
    theta_slice: slice


def param_layout(model: ModelSpec) -> tuple[list[ParamBlock], int]:
    """Map each latent block to its slice of the variational parameter vector.

    gamma_mean_shape blocks pack [shapes..., means...] (2*dim entries);
    dirichlet blocks pack their concentration vector (dim entries).
    """
    blocks = []
    lat = 0
    par = 0
    for lb in model.latent_layout:
        width = 2 * lb.dim if lb.family == "gamma_mean_shape" else lb.dim
        blocks.append(
            ParamBlock(
                name=lb.name,
                family=lb.family,
                dim=lb.dim,
                latent_slice=slice(lat, lat + lb.dim),
                theta_slice=slice(par, par + width),
            )
        )
        lat += lb.dim
        par += width
    return blocks, par


def default_theta_init(model: ModelSpec) -> np.ndarray:
    """Deterministic initialization: gamma shape 0.5 / mean 1.0, Dirichlet 1."""
    blocks, n = param_layout(model)
    theta = np.empty(n)
    for pb in blocks:
        if pb.family == "gamma_mean_shape":
            theta[pb.theta_slice.start : pb.theta_slice.start + pb.dim] = 0.5
            theta[pb.theta_slice.start + pb.dim : pb.theta_slice.stop] = 1.0
        else:
            theta[pb.theta_slice] = 1.0
    return theta


def _check_theta(theta, n_params) -> np.ndarray:
    theta = np.asarray(theta, dtype=float)
    if theta.shape != (n_params,):
        raise ContractError(f"theta must have shape ({n_params},), got {theta.shape}")
    if not (np.all(np.isfinite(theta)) and np.all(theta > 0.0)):
        raise DomainError("variational parameters must be positive and finite")
    return theta


def _block_params(theta: np.ndarray, pb: ParamBlock):
    seg = theta[pb.theta_slice]
    if pb.family == "gamma_mean_shape":
        return seg[: pb.dim], seg[pb.dim :]
    return seg


def grad_log_ratio_gamma(eps, alpha):
    """d/d alpha of the target/proposal log-ratio at the accepted eps.

    Sum of the target-density derivative ln h + (alpha-1) h_a / h - h_a
    - psi(alpha) and the Jacobian derivative 1/(2(alpha - 1/3))
    - 9 eps / ((1 + eps/s)(9 alpha - 3)^(3/2)); h_a is dh/dalpha. Drops to
    zero as alpha grows, which is exactly why the correction term vanishes
    for well-behaved shapes.
    """
    scalar = np.ndim(eps) == 0 and np.ndim(alpha) == 0
    eps = np.asarray(eps, dtype=float)
    alpha = np.asarray(alpha, dtype=float)
    if not (np.all(np.isfinite(alpha)) and np.all(alpha >= 1.0)):
        raise DomainError("grad_log_ratio_gamma requires alpha >= 1")
    s2 = 9.0 * alpha - 3.0
    s = np.sqrt(s2)
    y = 1.0 + eps / s
    if not np.all(np.isfinite(eps)) or np.any(y <= 0.0):
        raise DomainError("grad_log_ratio_gamma: eps outside the transform support")
    d = alpha - 1.0 / 3.0
    h = d * (y * y * y)
    ha = y * y * (y - 1.5 * (eps / s))
    dlogq = np.log(h) + (alpha - 1.0) * ha / h - ha - digamma(alpha)
    dlogjac = 0.5 / d - 9.0 * eps / (y * s2 * s)
    out = dlogq + dlogjac
    return float(out) if scalar else out


def _entropy_parts(blocks, theta):
    """Analytic entropy value and per-parameter gradient (memoized on theta)."""
    layout_key = tuple((pb.family, pb.dim) for pb in blocks)
    return _entropy_parts_cached(layout_key, tuple(float(t) for t in theta))


@lru_cache(maxsize=1024)
def _entropy_parts_cached(layout_key, theta_key):
    theta = np.array(theta_key)
    n = theta.size
    grad = np.zeros(n)
    value = 0.0
    pos = 0
    for family, dim in layout_key:
        if family == "gamma_mean_shape":
            shapes = theta[pos : pos + dim]
            means = theta[pos + dim : pos + 2 * dim]
            value += float(
                np.sum(
                    shapes
                    - np.log(shapes / means)
                    + _lgamma_vec(shapes)
                    + (1.0 - shapes) * digamma(shapes)
                )
            )
            grad[pos : pos + dim] = 1.0 + (1.0 - shapes) * trigamma(shapes) - 1.0 / shapes
            grad[pos + dim : pos + 2 * dim] = 1.0 / means
            pos += 2 * dim
        else:
            p = DirichletParams(theta[pos : pos + dim])
            value += dirichlet_entropy(p)
            grad[pos : pos + dim] = dirichlet_entropy_grad(p)
            pos += dim
    grad.flags.writeable = False
    return value, grad


@lru_cache(maxsize=1024)
def _score_consts_cached(layout_key, theta_key):
    """theta-only pieces of the score vectors, one entry per block."""
    theta = np.array(theta_key)
    consts = []
    pos = 0
    for family, dim in layout_key:
        if family == "gamma_mean_shape":
            shapes = theta[pos : pos + dim]
            means = theta[pos + dim : pos + 2 * dim]
            consts.append((np.log(shapes / means) - digamma(shapes), shapes, means))
            pos += 2 * dim
        else:
            conc = theta[pos : pos + dim]
            consts.append((digamma(float(conc.sum())) - digamma(conc), None, None))
            pos += dim
    return consts


def _lgamma_vec(x):
    return log_gamma_fn(np.asarray(x, dtype=float))


def _glr_psi(eps, alpha, psi_alpha):
    """grad_log_ratio_gamma with psi(alpha) supplied (bank-cached)."""
    s2 = 9.0 * alpha - 3.0
    s = np.sqrt(s2)
    y = 1.0 + eps / s
    d = alpha - 1.0 / 3.0
    h = d * (y * y * y)
    ha = y * y * (y - 1.5 * (eps / s))
    return np.log(h) + (alpha - 1.0) * ha / h - ha - psi_alpha + 0.5 / d - 9.0 * eps / (y * s2 * s)


def _sample_blocks(blocks, theta, cfg, stream):
    """Draw one z per latent via the rejection banks; returns materials."""
    mats = []
    for pb in blocks:
        if pb.family == "gamma_mean_shape":
            shapes, means = _block_params(theta, pb)
            bank = make_sampler_bank(shapes, shapes / means, cfg.aug_b)
        else:
            bank = make_sampler_bank(_block_params(theta, pb), 1.0, cfg.aug_b)
        mats.append((pb, bank, bank.draw(stream)))
    return mats


def _latents_from_mats(mats, n_latents):
    z_full = np.empty(n_latents)
    for pb, _bank, bd in mats:
        if pb.family == "gamma_mean_shape":
            z_full[pb.latent_slice] = bd.z
        else:
            z_full[pb.latent_slice] = bd.z1 / bd.z1.sum()
    return z_full


def _eval_model(model, z_full):
    f = float(model.log_joint(z_full))
    if not math.isfinite(f):
        raise DomainError(f"estimate rejected: log-joint is non-finite ({f!r}) at z = {z_full!r}")
    gf = np.asarray(model.grad_latents(z_full), dtype=float)
    if gf.shape != z_full.shape or not np.all(np.isfinite(gf)):
        raise DomainError("estimate rejected: latent gradient is non-finite or mis-shaped")
    return f, gf


def _pathwise_terms(pb, bank, bd, theta, gf_block, weight=None):
    """g_rep contributions for one block: grad f dot d z / d theta.

    The shape path runs through the transform (dh/dalpha), the augmentation
    uniforms' exponents, and -- for mean-shape blocks -- the rate shape/mean;
    the mean path is the deterministic scale z1/shape. Dirichlet blocks route
    through the simplex normalization.
    """
    eff = bank.eff_shapes
    dz1_da = dh_dalpha(bd.eps, eff) * bd.prod_u + bd.h * bd.prod_u * bd.aug_dsum
    if pb.family == "gamma_mean_shape":
        shapes, means = _block_params(theta, pb)
        scale = means / shapes
        dz_da = scale * (dz1_da - bd.z1 / shapes)
        dz_dmu = bd.z1 / shapes
        rep_a = gf_block * dz_da
        rep_mu = gf_block * dz_dmu
        if weight is not None:
            rep_a = rep_a * weight
            rep_mu = rep_mu * weight
        return np.concatenate([rep_a, rep_mu])
    total = bd.z1.sum()
    z = bd.z1 / total
    gtilde = (gf_block - float(np.dot(gf_block, z))) / total
    rep = gtilde * dz1_da
    if weight is not None:
        rep = rep * weight
    return rep


def _one_draw_rsvi(model, blocks, n_latents, theta, cfg, stream):
    mats = _sample_blocks(blocks, theta, cfg, stream)
    z_full = _latents_from_mats(mats, n_latents)
    f, gf = _eval_model(model, z_full)
    n_params = blocks[-1].theta_slice.stop
    g_rep = np.zeros(n_params)
    g_cor = np.zeros(n_params)
    trials = 0
    for pb, bank, bd in mats:
        trials += int(bd.trials.sum())
        gf_block = gf[pb.latent_slice]
        g_rep[pb.theta_slice] = _pathwise_terms(pb, bank, bd, theta, gf_block)
        glr = _glr_psi(bd.eps, bank.eff_shapes, bank.psi_eff)
        if pb.family == "gamma_mean_shape":
            g_cor[pb.theta_slice.start : pb.theta_slice.start + pb.dim] = f * glr
        else:
            g_cor[pb.theta_slice] = f * glr
    return g_rep, g_cor, trials


def _one_draw_score(model, blocks, n_latents, theta, cfg, stream):
    mats = _sample_blocks(blocks, theta, cfg, stream)
    z_full = _latents_from_mats(mats, n_latents)
    f, _ = _eval_model(model, z_full)
    n_params = blocks[-1].theta_slice.stop
    g_cor = np.zeros(n_params)
    trials = 0
    layout_key = tuple((pb.family, pb.dim) for pb in blocks)
    consts = _score_consts_cached(layout_key, tuple(float(t) for t in theta))
    for (pb, _bank, bd), (const, shapes, means) in zip(mats, consts):
        trials += int(bd.trials.sum())
        if pb.family == "gamma_mean_shape":
            z = bd.z
            d_rate = means - z  # shape/rate - z with rate = shape/mean
            d_a = const + np.log(z) + d_rate / means
            d_mu = d_rate * (-shapes / (means * means))
            g_cor[pb.theta_slice] = f * np.concatenate([d_a, d_mu])
        else:
            z = z_full[pb.latent_slice]
            g_cor[pb.theta_slice] = f * (np.log(z) + const)
    return np.zeros(n_params), g_cor, trials


def _one_draw_importance(model, blocks, n_latents, theta, cfg, stream):
    """Propose eps ~ s directly and weight both terms by prod q/r.

    Proposals past the transform boundary carry weight zero (the target
    density vanishes there), which zeroes the whole product weight.
    """
    mats = []
    log_w = 0.0
    valid = True
    for pb in blocks:
        if pb.family == "gamma_mean_shape":
            shapes, means = _block_params(theta, pb)
            bank = make_sampler_bank(shapes, shapes / means, cfg.aug_b)
        else:
            bank = make_sampler_bank(_block_params(theta, pb), 1.0, cfg.aug_b)
        eps = stream.std_normals(pb.dim)
        eff = bank.eff_shapes
        s = np.sqrt(9.0 * eff - 3.0)
        y = 1.0 + eps / s
        if np.any(y <= 0.0):
            valid = False
        h = (eff - 1.0 / 3.0) * np.where(y > 0.0, y, 1.0) ** 3
        prod_u = np.ones(pb.dim)
        aug_dsum = np.zeros(pb.dim)
        aug_u = np.empty((bank.max_b, pb.dim))
        for j in range(bank.max_b):
            uj = stream.uniforms_open(pb.dim)
            aug_u[j] = uj
            live = j < bank.b_steps
            denom = bank.shapes + j
            prod_u = np.where(live, prod_u * uj ** (1.0 / denom), prod_u)
            aug_dsum = np.where(live, aug_dsum - np.log(uj) / (denom * denom), aug_dsum)
        if valid:
            log_w += float(np.sum(_log_ratio_vec(eps, eff)))
        mats.append((pb, bank, eps, h, prod_u, aug_dsum))
    n_params = blocks[-1].theta_slice.stop
    g_rep = np.zeros(n_params)
    g_cor = np.zeros(n_params)
    n_proposals = sum(pb.dim for pb in blocks)
    if not valid:
        return g_rep, g_cor, n_proposals
    weight = math.exp(log_w)
    z_full = np.empty(n_latents)
    z1_by_block = {}
    for pb, bank, eps, h, prod_u, aug_dsum in mats:
        z1 = h * prod_u
        z1_by_block[pb.name] = z1
        if pb.family == "gamma_mean_shape":
            shapes, means = _block_params(theta, pb)
            z_full[pb.latent_slice] = z1 * (means / shapes)
        else:
            z_full[pb.latent_slice] = z1 / z1.sum()
    f, gf = _eval_model(model, z_full)
    for pb, bank, eps, h, prod_u, aug_dsum in mats:
        bd = BankDraw(
            eps=eps,
            h=h,
            prod_u=prod_u,
            aug_dsum=aug_dsum,
            z1=z1_by_block[pb.name],
            z=z_full[pb.latent_slice],
            trials=np.ones(pb.dim, dtype=np.int64),
            aug_u=np.empty((0, pb.dim)),
        )
        g_rep[pb.theta_slice] = _pathwise_terms(pb, bank, bd, theta, gf[pb.latent_slice], weight=weight)
        glr = _glr_psi(eps, bank.eff_shapes, bank.psi_eff)
        wf = weight * f
        if pb.family == "gamma_mean_shape":
            g_cor[pb.theta_slice.start : pb.theta_slice.start + pb.dim] = wf * glr
        else:
            g_cor[pb.theta_slice] = wf * glr
    return g_rep, g_cor, n_proposals


def _log_ratio_vec(eps, alpha):
    """Vectorized target/proposal log-ratio at the effective shapes."""
    d = alpha - 1.0 / 3.0
    s = np.sqrt(9.0 * alpha - 3.0)
    y = 1.0 + eps / s
    v = y * y * y
    # log_M + (log_ratio - log_M): mode value plus the Marsaglia-Tsang kernel
    mode = (alpha - 0.5) * np.log(d) - d + 0.9189385332046727 - _lgamma_vec(alpha)
    return mode + 0.5 * eps * eps + d * (1.0 - v + 3.0 * np.log(y))


_DRAW_FNS = {
    "rsvi": _one_draw_rsvi,
    "score_function": _one_draw_score,
    "importance": _one_draw_importance,
}


def _run_estimator(model, theta, cfg, stream, kind):
    blocks, n_params = param_layout(model)
    theta = _check_theta(theta, n_params)
    _, g_entropy = _entropy_parts(blocks, theta)
    rep_acc = np.zeros(n_params)
    cor_acc = np.zeros(n_params)
    trials = 0
    draw_fn = _DRAW_FNS[kind]
    for _ in range(cfg.draws):
        g_rep, g_cor, t = draw_fn(model, blocks, model.n_latents, theta, cfg, stream)
        rep_acc += g_rep
        cor_acc += g_cor
        trials += t
    g_rep = rep_acc / cfg.draws
    g_cor = cor_acc / cfg.draws
    total = g_rep + g_cor + g_entropy
    if not np.all(np.isfinite(total)):
        raise DomainError("estimate rejected: non-finite gradient component")
    return GradientEstimate(
        g_rep=g_rep,
        g_cor=g_cor,
        g_entropy=g_entropy,
        total=total,
        draws=cfg.draws,
        trials=trials,
    )


def estimate_gradient(model, theta, cfg: EstimatorConfig, stream: RandomStream) -> GradientEstimate:
    """Decomposed pathwise estimator (one accepted eps per latent).

    g_rep and g_cor come from the same draw; the entropy gradient is
    analytic. Unbiased for the gradient of E_q[f] + H[q].
    """
    if cfg.kind != "rsvi":
        raise ContractError(f"estimate_gradient runs kind='rsvi', got {cfg.kind!r}")
    return _run_estimator(model, theta, cfg, stream, "rsvi")


def estimate_gradient_score(model, theta, cfg, stream) -> GradientEstimate:
    """Score-function estimator: f(z) * grad log q(z) + analytic entropy grad.

    The score term is stored in the g_cor field (g_rep is zero); no control
    variates are applied.
    """
    if cfg.kind != "score_function":
        raise ContractError("estimate_gradient_score runs kind='score_function'")
    return _run_estimator(model, theta, cfg, stream, "score_function")


def estimate_gradient_importance(model, theta, cfg, stream) -> GradientEstimate:
    """Importance-weighted estimator with weights prod q/r over all latents."""
    if cfg.kind != "importance":
        raise ContractError("estimate_gradient_importance runs kind='importance'")
    return _run_estimator(model, theta, cfg, stream, "importance")


def estimate(model, theta, cfg: EstimatorConfig, stream: RandomStream) -> GradientEstimate:
    """Dispatch on cfg.kind."""
    return _run_estimator(model, theta, cfg, stream, cfg.kind)


def variance_profile(model, theta, cfg, G: int, stream: RandomStream) -> VarianceProfile:
    """Per-parameter sample variance over G independent estimates.

    Replicate g uses the child stream stream.child(g), so profiles are
    reproducible and replicates could run in parallel.
    """
    G = int(G)
    if G < 2:
        raise ContractError("variance_profile needs G >= 2 replicates")
    blocks, n_params = param_layout(model)
    totals = np.empty((G, n_params))
    for g in range(G):
        totals[g] = estimate(model, theta, cfg, stream.child(g)).total
    variances = totals.var(axis=0, ddof=1)
    # identical replicates have zero variance by definition, not roundoff dust
    variances[np.ptp(totals, axis=0) == 0.0] = 0.0
    return VarianceProfile(
        variances=variances,
        vmin=float(variances.min()),
        vmedian=float(np.median(variances)),
        vmax=float(variances.max()),
        label=cfg.label,
        sample_count=G,
    )


def entropy_total(model, theta) -> float:
    """Analytic entropy of the full variational distribution at theta."""
    blocks, n_params = param_layout(model)
    value, _ = _entropy_parts(blocks, _check_theta(theta, n_params))
    return value


def estimate_elbo(model, theta, n_draws: int, stream: RandomStream) -> float:
    """Monte Carlo E_q[f] over fresh draws plus the analytic entropy."""
    n_draws = int(n_draws)
    if n_draws < 1:
        raise ContractError("estimate_elbo needs n_draws >= 1")
    blocks, n_params = param_layout(model)
    theta = _check_theta(theta, n_params)
    z_all = np.empty((n_draws, model.n_latents))
    for pb in blocks:
        if pb.family == "gamma_mean_shape":
            shapes, means = _block_params(theta, pb)
            bank = make_sampler_bank(shapes, shapes / means, 0)
            z_all[:, pb.latent_slice] = bank.draw_batch(stream, n_draws).z
        else:
            bank = make_sampler_bank(_block_params(theta, pb), 1.0, 0)
            z1 = bank.draw_batch(stream, n_draws).z
            z_all[:, pb.latent_slice] = z1 / z1.sum(axis=1, keepdims=True)
    value, _ = _entropy_parts(blocks, theta)
    batch_fn = getattr(model, "log_joint_batch", None)
    if batch_fn is not None:
        fbar = float(np.mean(batch_fn(z_all)))
    else:
        fbar = sum(float(model.log_joint(z_all[i])) for i in range(n_draws)) / n_draws
    return fbar + value
