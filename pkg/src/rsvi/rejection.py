"""Reparameterized rejection sampling for gamma-family distributions.

The sampler targets Gam(alpha, 1) with alpha >= 1 through the smooth cube
transform of Marsaglia & Tsang (2000),

    z = h(eps, alpha) = (alpha - 1/3) * (1 + eps / sqrt(9 alpha - 3))^3,

with standard-normal proposals eps. The accepted eps keeps an analytic,
differentiable marginal density s(eps) * q(h(eps)) / r(h(eps)), which is what
the gradient estimators differentiate through. Shapes below one and variance
reduction both go through shape augmentation: a Gam(alpha, 1) variable equals
h(eps, alpha + B) * prod_i u_i^(1/(alpha + i - 1)) with B extra uniforms.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from .distributions import DirichletParams, GammaParams, gamma_log_pdf
from .exceptions import DomainError, SamplerStallError
from .mathcore import RandomStream, _ppnd_array as _ppnd, digamma, log_gamma_fn

__all__ = [
    "DEFAULT_TRIAL_BUDGET",
    "AcceptedDraw",
    "GammaSampler",
    "SamplerBank",
    "BankDraw",
    "BatchDraw",
    "h_gam",
    "dh_deps",
    "dh_dalpha",
    "log_ratio_q_over_r",
    "envelope_log_M",
    "make_gamma_sampler",
    "sample_gamma_eps",
    "make_sampler_bank",
    "sample_dirichlet_eps",
    "extras_transform",
]

DEFAULT_TRIAL_BUDGET = 10**6

_LN_SQRT_2PI = 0.9189385332046727


def _check_shape_ge_one(alpha, name="alpha"):
    arr = np.asarray(alpha, dtype=float)
    if arr.size == 0 or not (np.all(np.isfinite(arr)) and np.all(arr >= 1.0)):
        raise DomainError(f"{name} must be >= 1 for the cube transform, got {alpha!r}")


def h_gam(eps, alpha):
    """Cube transform (alpha - 1/3)(1 + eps/sqrt(9 alpha - 3))^3, alpha >= 1.

    Raises DomainError when eps is at or below -sqrt(9 alpha - 3), where the
    cube leaves the gamma support; the sampling loop treats that region as an
    automatic rejection instead of calling in here.
    """
    _check_shape_ge_one(alpha)
    scalar = np.ndim(eps) == 0 and np.ndim(alpha) == 0
    eps = np.asarray(eps, dtype=float)
    alpha = np.asarray(alpha, dtype=float)
    if not np.all(np.isfinite(eps)):
        raise DomainError("h_gam: non-finite eps")
    y = 1.0 + eps / np.sqrt(9.0 * alpha - 3.0)
    if np.any(y <= 0.0):
        raise DomainError("h_gam: eps at or below the support boundary -sqrt(9 alpha - 3)")
    out = (alpha - 1.0 / 3.0) * (y * y * y)
    return float(out) if scalar else out


def dh_deps(eps, alpha):
    """d h / d eps = 3 (alpha - 1/3)(1 + eps/sqrt(9a-3))^2 / sqrt(9a-3)."""
    _check_shape_ge_one(alpha)
    scalar = np.ndim(eps) == 0 and np.ndim(alpha) == 0
    eps = np.asarray(eps, dtype=float)
    alpha = np.asarray(alpha, dtype=float)
    s = np.sqrt(9.0 * alpha - 3.0)
    y = 1.0 + eps / s
    if np.any(y <= 0.0):
        raise DomainError("dh_deps: eps outside the transform support")
    out = 3.0 * (alpha - 1.0 / 3.0) * (y * y) / s
    return float(out) if scalar else out


def dh_dalpha(eps, alpha):
    """d h / d alpha = (1 + eps/s)^3 - (3/2) (eps/s) (1 + eps/s)^2, s = sqrt(9a-3).

    Equivalently y^3 - (3/2) c eps y^2 with c = 1/s; the second term carries
    the derivative of c through the cube.
    """
    _check_shape_ge_one(alpha)
    scalar = np.ndim(eps) == 0 and np.ndim(alpha) == 0
    eps = np.asarray(eps, dtype=float)
    alpha = np.asarray(alpha, dtype=float)
    s = np.sqrt(9.0 * alpha - 3.0)
    y = 1.0 + eps / s
    if np.any(y <= 0.0):
        raise DomainError("dh_dalpha: eps outside the transform support")
    out = y * y * (y - 1.5 * (eps / s))
    return float(out) if scalar else out


def log_ratio_q_over_r(eps, alpha) -> float:
    """ln q(h(eps); alpha, 1) - ln r(h(eps); alpha) for the cube transform.

    The proposal density on z-space is r(z) = s(eps)/|dh/deps|, so the ratio
    is ln q(h) + ln dh/deps + eps^2/2 + ln(sqrt(2 pi)). Marginalizing the
    accept variable leaves the accepted eps distributed as
    pi(eps) = s(eps) exp(log_ratio), which integrates to one.
    """
    eps = float(eps)
    alpha = float(alpha)
    _check_shape_ge_one(alpha)
    if not math.isfinite(eps):
        raise DomainError("log_ratio_q_over_r: non-finite eps")
    s = math.sqrt(9.0 * alpha - 3.0)
    y = 1.0 + eps / s
    if y <= 0.0:
        raise DomainError("log_ratio_q_over_r: eps outside the transform support")
    z = (alpha - 1.0 / 3.0) * (y * y * y)
    jac = 3.0 * (alpha - 1.0 / 3.0) * (y * y) / s
    return (
        gamma_log_pdf(z, GammaParams(alpha, 1.0))
        + math.log(jac)
        + 0.5 * eps * eps
        + _LN_SQRT_2PI
    )


def _log_m_at_mode(alpha):
    """Envelope constant evaluated at the log-ratio mode eps = 0.

    For the cube transform the log-ratio derivative vanishes at eps = 0 and
    the ratio-minus-mode difference d [3 ln v - v^3 + 1 + 4.5 (v-1)^2] is
    non-positive for every v = 1 + c eps > 0, so the supremum is exactly the
    value at zero: (alpha - 1/2) ln(alpha - 1/3) - (alpha - 1/3)
    + ln(sqrt(2 pi)) - ln Gamma(alpha).
    """
    d = np.asarray(alpha, dtype=float) - 1.0 / 3.0
    out = (np.asarray(alpha, dtype=float) - 0.5) * np.log(d) - d + _LN_SQRT_2PI - log_gamma_fn(alpha)
    return float(out) if np.ndim(alpha) == 0 else out


_INVPHI = (math.sqrt(5.0) - 1.0) / 2.0


@lru_cache(maxsize=4096)
def envelope_log_M(alpha: float) -> float:
    """ln M = sup over eps of the target/proposal log-ratio, alpha >= 1.

    Found by golden-section search (tolerance 1e-10 in eps) on the unimodal
    log-ratio; exp(-log_M) is the sampler's acceptance probability.
    """
    alpha = float(alpha)
    _check_shape_ge_one(alpha)
    s = math.sqrt(9.0 * alpha - 3.0)
    a, b = -0.999999 * s, 8.0

    def fn(e):
        return log_ratio_q_over_r(e, alpha)

    c = b - _INVPHI * (b - a)
    d_ = a + _INVPHI * (b - a)
    fc, fd = fn(c), fn(d_)
    for _ in range(400):
        if b - a <= 1e-10:
            break
        if fc >= fd:
            b, d_, fd = d_, c, fc
            c = b - _INVPHI * (b - a)
            fc = fn(c)
        else:
            a, c, fc = c, d_, fd
            d_ = a + _INVPHI * (b - a)
            fd = fn(d_)
    else:  # pragma: no cover - the bracket shrinks geometrically
        raise RuntimeError("golden-section search failed to converge")
    return fn(0.5 * (a + b))


@dataclass(frozen=True)
class AcceptedDraw:
    """One accepted run of the rejection sampler.

    `epsilon` is the accepted proposal, `z` the rate- and augmentation-
    adjusted gamma draw, `trials` the number of propose/test rounds, and
    `aug_uniforms` the uniforms consumed by shape augmentation (in the order
    they multiply into z).
    """

    epsilon: float
    z: float
    trials: int
    aug_uniforms: tuple


@dataclass(frozen=True)
class GammaSampler:
    """Precomputed rejection sampler for one gamma target.

    `effective_shape` = target shape + `aug_B` is what the cube transform
    runs at (augmentation guarantees it is >= 1); `log_M` is the envelope
    constant at the effective shape.
    """

    target: GammaParams
    aug_B: int
    effective_shape: float
    log_M: float

    def recompute_z(self, epsilon: float, aug_uniforms) -> float:
        """Rebuild z from an accepted epsilon and its augmentation uniforms.

        Applies the exact operation order of the sampling loop, so the
        result is bit-identical to the stored draw.
        """
        z = h_gam(epsilon, self.effective_shape)
        a = self.target.shape
        for j, u in enumerate(aug_uniforms):
            z *= u ** (1.0 / (a + j))
        return z / self.target.rate


def make_gamma_sampler(p: GammaParams, B: int = 0) -> GammaSampler:
    """Build a sampler for Gam(shape, rate) with B shape-augmentation steps.

    Shapes below one force at least one augmentation step (z = u^(1/shape) *
    z~ with z~ one shape higher is the B = 1 special case), so the transform
    always runs at effective shape >= 1.
    """
    if not isinstance(p, GammaParams):
        raise DomainError("make_gamma_sampler expects GammaParams")
    B = int(B)
    if B < 0:
        raise DomainError("augmentation steps B must be >= 0")
    if p.shape < 1.0:
        B = max(B, 1)
    eff = p.shape + B
    return GammaSampler(target=p, aug_B=B, effective_shape=eff, log_M=envelope_log_M(eff))


def sample_gamma_eps(
    sampler: GammaSampler,
    stream: RandomStream,
    max_trials: int = DEFAULT_TRIAL_BUDGET,
) -> AcceptedDraw:
    """One accepted draw via propose/accept at the effective shape.

    The acceptance test runs in log space: accept iff ln u < log_ratio(eps)
    - log_M, which for the cube transform reduces to
    ln u < eps^2/2 + d (1 - v + ln v) with d = eff - 1/3, v = (1 + eps/s)^3.
    Proposals with 1 + eps/s <= 0 auto-reject.
    """
    eff = sampler.effective_shape
    d = eff - 1.0 / 3.0
    s = math.sqrt(9.0 * eff - 3.0)
    trials = 0
    while trials < max_trials:
        trials += 1
        eps = stream.std_normal()
        u = stream.uniform_open()
        y = 1.0 + eps / s
        if y <= 0.0:
            continue
        v = y * y * y
        if math.log(u) < 0.5 * eps * eps + d * (1.0 - v + 3.0 * math.log(y)):
            z = d * v
            a = sampler.target.shape
            aug = []
            for j in range(sampler.aug_B):
                uj = stream.uniform_open()
                aug.append(uj)
                z *= uj ** (1.0 / (a + j))
            return AcceptedDraw(
                epsilon=eps,
                z=z / sampler.target.rate,
                trials=trials,
                aug_uniforms=tuple(aug),
            )
    raise SamplerStallError(eff, sampler.log_M, trials)


# --- vectorized sampling -------------------------------------------------------


@dataclass(frozen=True)
class SamplerBank:
    """A vector of gamma rejection samplers with elementwise parameters.

    Heterogeneous shapes/rates share the stream in round-major order: each
    rejection round draws one proposal normal and one acceptance uniform for
    every still-active element, then augmentation draws `max_b` rows of
    uniforms for all elements (rows past an element's own step count are
    discarded). Deterministic for a given stream, but a different
    consumption order than repeated scalar `sample_gamma_eps` calls.
    """

    shapes: np.ndarray
    rates: np.ndarray
    b_steps: np.ndarray
    eff_shapes: np.ndarray
    log_M: np.ndarray
    psi_eff: np.ndarray

    @property
    def size(self) -> int:
        return self.shapes.size

    @property
    def max_b(self) -> int:
        return int(self.b_steps.max()) if self.size else 0

    def draw(self, stream: RandomStream, max_trials: int = DEFAULT_TRIAL_BUDGET) -> "BankDraw":
        eps, trials = _rejection_rounds(self.eff_shapes, stream, max_trials)
        s = np.sqrt(9.0 * self.eff_shapes - 3.0)
        y = 1.0 + eps / s
        h = (self.eff_shapes - 1.0 / 3.0) * (y * y * y)
        prod_u = np.ones_like(h)
        aug_dsum = np.zeros_like(h)
        max_b = self.max_b
        aug_u = stream.uniforms_open(max_b * self.size).reshape(max_b, self.size)
        for j in range(max_b):
            uj = aug_u[j]
            live = j < self.b_steps
            denom = self.shapes + j
            prod_u = np.where(live, prod_u * uj ** (1.0 / denom), prod_u)
            aug_dsum = np.where(live, aug_dsum - np.log(uj) / (denom * denom), aug_dsum)
        z1 = h * prod_u
        return BankDraw(
            eps=eps,
            h=h,
            prod_u=prod_u,
            aug_dsum=aug_dsum,
            z1=z1,
            z=z1 / self.rates,
            trials=trials,
            aug_u=aug_u,
        )

    def draw_batch(
        self, stream: RandomStream, n: int, max_trials: int = DEFAULT_TRIAL_BUDGET
    ) -> "BatchDraw":
        """n independent draws per element, flattened into (n, size) arrays."""
        n = int(n)
        if n < 0:
            raise DomainError("draw_batch needs n >= 0")
        if n == 0:
            empty = np.empty((0, self.size))
            return BatchDraw(eps=empty, z=empty, trials=np.empty((0, self.size), dtype=np.int64))
        eff = np.tile(self.eff_shapes, n)
        eps, trials = _rejection_rounds(eff, stream, max_trials)
        s = np.sqrt(9.0 * eff - 3.0)
        y = 1.0 + eps / s
        z = (eff - 1.0 / 3.0) * (y * y * y)
        shapes = np.tile(self.shapes, n)
        b_steps = np.tile(self.b_steps, n)
        max_b = self.max_b
        aug = stream.uniforms_open(max_b * shapes.size).reshape(max_b, shapes.size)
        for j in range(max_b):
            live = j < b_steps
            z = np.where(live, z * aug[j] ** (1.0 / (shapes + j)), z)
        z = z / np.tile(self.rates, n)
        return BatchDraw(
            eps=eps.reshape(n, self.size),
            z=z.reshape(n, self.size),
            trials=trials.reshape(n, self.size),
        )


@dataclass(frozen=True)
class BankDraw:
    """One draw per bank element plus the pieces the chain rule needs.

    `h` is the raw cube-transform value at the effective shape, `prod_u` the
    augmentation product, `aug_dsum` = sum_j (-ln u_j)/(shape + j)^2 (the
    derivative of ln prod_u in the shape), `z1` = h * prod_u ~ Gam(shape, 1),
    and `z` = z1 / rate.
    """

    eps: np.ndarray
    h: np.ndarray
    prod_u: np.ndarray
    aug_dsum: np.ndarray
    z1: np.ndarray
    z: np.ndarray
    trials: np.ndarray
    aug_u: np.ndarray


@dataclass(frozen=True)
class BatchDraw:
    eps: np.ndarray
    z: np.ndarray
    trials: np.ndarray


def _rejection_rounds(eff_shapes: np.ndarray, stream: RandomStream, max_trials: int):
    """Vectorized propose/accept rounds; one accepted eps per element."""
    k = eff_shapes.size
    d = eff_shapes - 1.0 / 3.0
    s = np.sqrt(9.0 * eff_shapes - 3.0)
    eps = np.empty(k)
    trials = np.zeros(k, dtype=np.int64)
    active = np.arange(k)
    rounds = 0
    while active.size:
        rounds += 1
        if rounds > max_trials:
            raise SamplerStallError(float(eff_shapes[active[0]]), None, rounds)
        m = active.size
        blk = stream.uniforms_open(2 * m)
        e = _ppnd(blk[:m])
        u = blk[m:]
        y = 1.0 + e / s[active]
        ok = y > 0.0
        ysafe = np.where(ok, y, 1.0)
        v = ysafe * ysafe * ysafe
        accept = ok & (
            np.log(u) < 0.5 * e * e + d[active] * (1.0 - v + 3.0 * np.log(ysafe))
        )
        trials[active] += 1
        eps[active[accept]] = e[accept]
        active = active[~accept]
    return eps, trials


def _as_param_tuple(values, k: int, name: str) -> tuple:
    arr = np.asarray(values, dtype=float)
    if arr.ndim == 0:
        arr = np.full(k, float(arr))
    if arr.shape != (k,):
        raise DomainError(f"{name} must be scalar or length-{k}, got shape {arr.shape}")
    if not (np.all(np.isfinite(arr)) and np.all(arr > 0.0)):
        raise DomainError(f"{name} must be positive and finite")
    return tuple(float(v) for v in arr)


def _build_bank(shapes: np.ndarray, rates: np.ndarray, B: int) -> SamplerBank:
    b_steps = np.maximum(B, (shapes < 1.0).astype(np.int64))
    eff = shapes + b_steps
    log_m = np.atleast_1d(np.asarray(_log_m_at_mode(eff), dtype=float))
    psi_eff = np.atleast_1d(np.asarray(digamma(eff), dtype=float))
    for arr in (shapes, rates, b_steps, eff, log_m, psi_eff):
        arr.flags.writeable = False
    return SamplerBank(
        shapes=shapes, rates=rates, b_steps=b_steps, eff_shapes=eff, log_M=log_m, psi_eff=psi_eff
    )


@lru_cache(maxsize=256)
def _bank_cached(shape_key: tuple, rate_key: tuple, B: int) -> SamplerBank:
    return _build_bank(np.array(shape_key), np.array(rate_key), B)


def make_sampler_bank(shapes, rates=1.0, B: int = 0, memo: bool = True) -> SamplerBank:
    """Vectorized sampler construction, memoized on the parameter values.

    Each element gets the same per-element bump rule as make_gamma_sampler
    (shape < 1 forces at least one augmentation step). The envelope constants
    come from the closed mode evaluation, which the test suite pins against
    the golden-section search. Pass memo=False for one-off banks with large
    parameter vectors that should not occupy the cache.
    """
    shapes = np.atleast_1d(np.asarray(shapes, dtype=float))
    k = shapes.size
    if k == 0:
        raise DomainError("make_sampler_bank needs at least one shape")
    B = int(B)
    if B < 0:
        raise DomainError("augmentation steps B must be >= 0")
    shape_t = _as_param_tuple(shapes, k, "shapes")
    rate_t = _as_param_tuple(rates, k, "rates")
    if memo:
        return _bank_cached(shape_t, rate_t, B)
    return _build_bank(np.array(shape_t), np.array(rate_t), B)


def sample_dirichlet_eps(p: DirichletParams, B: int, stream: RandomStream):
    """Dirichlet draw via K independent rate-1 gamma samplers.

    Returns (per-coordinate AcceptedDraws, simplex point); the AcceptedDraws
    retain everything gradient estimation needs to differentiate through the
    normalization.
    """
    bank = make_sampler_bank(p.conc, 1.0, B)
    bd = bank.draw(stream)
    total = float(bd.z1.sum())
    simplex = bd.z1 / total
    draws = []
    for i in range(bank.size):
        nb = int(bank.b_steps[i])
        draws.append(
            AcceptedDraw(
                epsilon=float(bd.eps[i]),
                z=float(bd.z1[i]),
                trials=int(bd.trials[i]),
                aug_uniforms=tuple(float(u) for u in bd.aug_u[:nb, i]),
            )
        )
    return draws, simplex


# --- additional reparameterizable transforms -----------------------------------


def extras_transform(family: str, eps: float, theta) -> float:
    """Transforms for two further rejection-sampler families.

    truncated_normal_tail: h = sqrt(a^2 - 2 ln eps) with eps ~ U(0, 1] maps to
    the N(0,1) tail beyond a > 0. von_mises: the Best-Fisher (1979)
    wrapped-Cauchy proposal angle, sign(eps) * arccos((1 + c cos(pi eps)) /
    (c + cos(pi eps))) for eps ~ U[-1, 1]; output lies in [-pi, pi]. Provided
    as bare transforms (no tuned envelopes or accept loops).
    """
    theta = np.atleast_1d(np.asarray(theta, dtype=float))
    eps = float(eps)
    if family == "truncated_normal_tail":
        if theta.size != 1 or not (np.isfinite(theta[0]) and theta[0] > 0.0):
            raise DomainError("truncated_normal_tail needs one parameter a > 0")
        if not (0.0 < eps <= 1.0):
            raise DomainError("truncated_normal_tail needs eps in (0, 1]")
        a = float(theta[0])
        return math.sqrt(a * a - 2.0 * math.log(eps))
    if family == "von_mises":
        if theta.size != 1 or not (np.isfinite(theta[0]) and theta[0] > 0.0):
            raise DomainError("von_mises needs one concentration parameter kappa > 0")
        if not (-1.0 <= eps <= 1.0):
            raise DomainError("von_mises needs eps in [-1, 1]")
        kappa = float(theta[0])
        r = 1.0 + math.sqrt(1.0 + 4.0 * kappa * kappa)
        rho = (r - math.sqrt(2.0 * r)) / (2.0 * kappa)
        c = (1.0 + rho * rho) / (2.0 * rho)
        w = math.cos(math.pi * eps)
        f = (1.0 + c * w) / (c + w)
        f = min(1.0, max(-1.0, f))
        return math.copysign(math.acos(f), eps) if eps != 0.0 else 0.0
    raise DomainError(f"unknown extras family {family!r}")
