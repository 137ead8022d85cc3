"""Gamma and Dirichlet densities, entropies, scores, and derived transforms.

The two gamma parameterizations are distinct types on purpose: shape/rate is
the natural density parameterization, shape/mean is what the layered count
models optimize in, and the chain rules differ between them.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .exceptions import ContractError, DomainError
from .mathcore import digamma, log_gamma_fn, trigamma

__all__ = [
    "GammaParams",
    "GammaMeanShapeParams",
    "DirichletParams",
    "gamma_log_pdf",
    "gamma_entropy",
    "gamma_entropy_grad",
    "gamma_entropy_mean_shape",
    "gamma_entropy_grad_mean_shape",
    "gamma_score_shape_rate",
    "gamma_score_mean_shape",
    "dirichlet_log_pdf",
    "dirichlet_entropy",
    "dirichlet_entropy_grad",
    "dirichlet_kl",
    "dirichlet_score",
    "derived_transform",
]

_SIMPLEX_TOL = 1e-9


def _require_positive_scalar(value, name):
    v = float(value)
    if not (math.isfinite(v) and v > 0.0):
        raise DomainError(f"{name} must be a positive finite real, got {value!r}")
    return v


@dataclass(frozen=True)
class GammaParams:
    """Gamma distribution with shape `shape` and rate `rate`."""

    shape: float
    rate: float

    def __post_init__(self):
        object.__setattr__(self, "shape", _require_positive_scalar(self.shape, "shape"))
        object.__setattr__(self, "rate", _require_positive_scalar(self.rate, "rate"))


@dataclass(frozen=True)
class GammaMeanShapeParams:
    """Gamma distribution given by shape and mean (rate = shape / mean)."""

    shape: float
    mean: float

    def __post_init__(self):
        object.__setattr__(self, "shape", _require_positive_scalar(self.shape, "shape"))
        object.__setattr__(self, "mean", _require_positive_scalar(self.mean, "mean"))

    def as_shape_rate(self) -> GammaParams:
        return GammaParams(self.shape, self.shape / self.mean)


@dataclass(frozen=True)
class DirichletParams:
    """Dirichlet distribution with concentration vector `conc` (K >= 2)."""

    conc: np.ndarray

    def __post_init__(self):
        conc = np.asarray(self.conc, dtype=float)
        if conc.ndim != 1 or conc.size < 2:
            raise DomainError("Dirichlet needs a 1-d concentration vector with K >= 2")
        if not (np.all(np.isfinite(conc)) and np.all(conc > 0.0)):
            raise DomainError("Dirichlet concentrations must be positive and finite")
        conc = conc.copy()
        conc.flags.writeable = False
        object.__setattr__(self, "conc", conc)

    @property
    def dim(self) -> int:
        return self.conc.size


def gamma_log_pdf(z, p: GammaParams):
    """log Gamma(z; shape, rate); -inf for z outside the support (z <= 0)."""
    a, b = p.shape, p.rate
    norm = a * math.log(b) - log_gamma_fn(a)
    if np.ndim(z) == 0:
        z = float(z)
        if not math.isfinite(z):
            raise DomainError(f"gamma_log_pdf: non-finite z {z!r}")
        if z <= 0.0:
            return -math.inf
        return (a - 1.0) * math.log(z) - b * z + norm
    z = np.asarray(z, dtype=float)
    if not np.all(np.isfinite(z)):
        raise DomainError("gamma_log_pdf: non-finite entries in z")
    out = np.full(z.shape, -np.inf)
    ok = z > 0.0
    out[ok] = (a - 1.0) * np.log(z[ok]) - b * z[ok] + norm
    return out


def gamma_entropy(p: GammaParams) -> float:
    """H = shape - ln rate + ln Gamma(shape) + (1 - shape) psi(shape)."""
    a, b = p.shape, p.rate
    return a - math.log(b) + log_gamma_fn(a) + (1.0 - a) * digamma(a)


def gamma_entropy_grad(p: GammaParams) -> tuple[float, float]:
    """(dH/dshape, dH/drate) = (1 + (1 - shape) psi'(shape), -1/rate)."""
    a, b = p.shape, p.rate
    return 1.0 + (1.0 - a) * trigamma(a), -1.0 / b


def gamma_entropy_mean_shape(p: GammaMeanShapeParams) -> float:
    return gamma_entropy(p.as_shape_rate())


def gamma_entropy_grad_mean_shape(p: GammaMeanShapeParams) -> tuple[float, float]:
    """(dH/dshape, dH/dmean) at fixed mean resp. fixed shape.

    With rate = shape/mean the rate path contributes -1/shape to the shape
    component and +1/mean to the mean component.
    """
    a, mu = p.shape, p.mean
    return 1.0 + (1.0 - a) * trigamma(a) - 1.0 / a, 1.0 / mu


def gamma_score_shape_rate(z: float, p: GammaParams) -> tuple[float, float]:
    """Gradient of log Gamma(z; shape, rate) in (shape, rate)."""
    z = float(z)
    if z <= 0.0:
        raise DomainError("score undefined outside the support (z <= 0)")
    a, b = p.shape, p.rate
    return math.log(b) + math.log(z) - digamma(a), a / b - z


def gamma_score_mean_shape(z: float, p: GammaMeanShapeParams) -> tuple[float, float]:
    """Gradient of log Gamma(z; shape, shape/mean) in (shape, mean)."""
    a, mu = p.shape, p.mean
    b = a / mu
    d_a, d_b = gamma_score_shape_rate(z, GammaParams(a, b))
    # rate = shape/mean: d rate/d shape = 1/mean, d rate/d mean = -shape/mean^2
    return d_a + d_b / mu, d_b * (-a / (mu * mu))


def _check_simplex(z) -> np.ndarray:
    z = np.asarray(z, dtype=float)
    if z.ndim != 1 or z.size < 2:
        raise DomainError("simplex point must be a 1-d vector with K >= 2")
    if not np.all(np.isfinite(z)):
        raise DomainError("simplex point has non-finite entries")
    if abs(float(z.sum()) - 1.0) > _SIMPLEX_TOL:
        raise DomainError(
            f"point is off the simplex: sum = {float(z.sum())!r} (tolerance {_SIMPLEX_TOL})"
        )
    return z


def dirichlet_log_pdf(z, p: DirichletParams) -> float:
    """log Dir(z; conc); -inf on the boundary, DomainError off the simplex."""
    z = _check_simplex(z)
    a = p.conc
    if z.size != a.size:
        raise DomainError(f"dimension mismatch: z has {z.size}, params {a.size}")
    if np.any(z <= 0.0) or np.any(z >= 1.0):
        return -math.inf
    norm = log_gamma_fn(float(a.sum())) - float(np.sum(log_gamma_fn(a)))
    return float(np.dot(a - 1.0, np.log(z))) + norm


def dirichlet_entropy(p: DirichletParams) -> float:
    a = p.conc
    a0 = float(a.sum())
    k = a.size
    return (
        float(np.sum(log_gamma_fn(a)))
        - log_gamma_fn(a0)
        + (a0 - k) * digamma(a0)
        - float(np.dot(a - 1.0, digamma(a)))
    )


def dirichlet_entropy_grad(p: DirichletParams) -> np.ndarray:
    a = p.conc
    a0 = float(a.sum())
    k = a.size
    return (a0 - k) * trigamma(a0) - (a - 1.0) * trigamma(a)


def dirichlet_kl(p: DirichletParams, q: DirichletParams) -> float:
    """KL(p || q); >= 0 with equality iff the parameters coincide."""
    if p.dim != q.dim:
        raise DomainError("dirichlet_kl: dimension mismatch")
    ap, aq = p.conc, q.conc
    a0 = float(ap.sum())
    elog = digamma(ap) - digamma(a0)
    return (
        log_gamma_fn(a0)
        - float(np.sum(log_gamma_fn(ap)))
        - log_gamma_fn(float(aq.sum()))
        + float(np.sum(log_gamma_fn(aq)))
        + float(np.dot(ap - aq, elog))
    )


def dirichlet_score(z, p: DirichletParams) -> np.ndarray:
    """Gradient of log Dir(z; conc) with respect to conc."""
    z = _check_simplex(z)
    a = p.conc
    if np.any(z <= 0.0):
        raise DomainError("score undefined on the simplex boundary")
    return np.log(z) - digamma(a) + digamma(float(a.sum()))


# --- distributions derived from auxiliary gamma draws -------------------------

_DERIVED_ARITY = {
    "beta": (2, 2),  # (n aux, n params)
    "dirichlet": (None, None),  # K aux, K params, K >= 2
    "student_t": (2, 1),
    "chi_squared": (1, 1),
    "f_dist": (2, 2),
    "nakagami": (1, 2),
}


def derived_transform(family: str, aux, theta):
    """Map auxiliary draws to a draw from the derived family.

    The recipes: beta = z1/(z1+z2) from Gam(a,1), Gam(b,1); dirichlet is the
    normalized vector of Gam(a_k,1) draws; student_t = sqrt(nu/(2 z1)) * z2
    with z1 ~ Gam(nu/2,1) and z2 standard normal; chi_squared(k) = 2 z with
    z ~ Gam(k/2,1); f_dist = (d2 z1)/(d1 z2); nakagami = sqrt(omega z / m).
    """
    if family not in _DERIVED_ARITY:
        raise ContractError(f"unknown derived family {family!r}")
    aux = np.atleast_1d(np.asarray(aux, dtype=float))
    theta = np.atleast_1d(np.asarray(theta, dtype=float))
    n_aux, n_par = _DERIVED_ARITY[family]
    if family == "dirichlet":
        if aux.size < 2 or aux.size != theta.size:
            raise ContractError(
                "dirichlet transform needs K >= 2 auxiliary gammas and K parameters"
            )
    else:
        if aux.size != n_aux:
            raise ContractError(f"{family} transform needs {n_aux} auxiliary draws, got {aux.size}")
        if theta.size != n_par:
            raise ContractError(f"{family} takes {n_par} parameters, got {theta.size}")
    if not (np.all(np.isfinite(theta)) and np.all(theta > 0.0)):
        raise DomainError(f"{family} parameters must be positive, got {theta!r}")

    # every recipe except student_t consumes strictly positive gamma draws
    gamma_aux = aux if family != "student_t" else aux[:1]
    if not (np.all(np.isfinite(gamma_aux)) and np.all(gamma_aux > 0.0)):
        raise DomainError(f"{family}: auxiliary gamma draws must be positive")

    if family == "beta":
        return float(aux[0] / (aux[0] + aux[1]))
    if family == "dirichlet":
        return aux / float(aux.sum())
    if family == "student_t":
        if not math.isfinite(aux[1]):
            raise DomainError("student_t: non-finite normal auxiliary")
        return float(math.sqrt(theta[0] / (2.0 * aux[0])) * aux[1])
    if family == "chi_squared":
        return float(2.0 * aux[0])
    if family == "f_dist":
        return float((theta[1] * aux[0]) / (theta[0] * aux[1]))
    # nakagami(m, omega)
    return float(math.sqrt(theta[1] * aux[0] / theta[0]))
