"""Reparameterization gradients through rejection samplers.

Gamma and Dirichlet variational families sampled by the smooth cube
transform with shape augmentation, a gradient estimator decomposed into
pathwise + correction + entropy terms, a score-function and an
importance-weighted baseline, and a stochastic-ascent engine with an
adaptive step-size schedule.
"""

from .distributions import (
    DirichletParams,
    GammaMeanShapeParams,
    GammaParams,
    derived_transform,
    dirichlet_entropy,
    dirichlet_entropy_grad,
    dirichlet_kl,
    dirichlet_log_pdf,
    gamma_entropy,
    gamma_entropy_grad,
    gamma_log_pdf,
)
from .engine import RunConfig, TraceRecord, run_rsvi, softplus, softplus_inv, step_size
from .estimators import (
    EstimatorConfig,
    GradientEstimate,
    VarianceProfile,
    default_theta_init,
    estimate,
    estimate_elbo,
    estimate_gradient,
    estimate_gradient_importance,
    estimate_gradient_score,
    grad_log_ratio_gamma,
    variance_profile,
)
from .exceptions import ContractError, DomainError, OptimizerAbortError, SamplerStallError
from .mathcore import RandomStream, digamma, finite_diff_grad, log_gamma_fn, trigamma
from .models import (
    ConjugateModel,
    LatentBlock,
    ModelSpec,
    SparseGammaDEF,
    make_synthetic_def_data,
)
from .rejection import (
    AcceptedDraw,
    GammaSampler,
    dh_dalpha,
    dh_deps,
    envelope_log_M,
    extras_transform,
    h_gam,
    log_ratio_q_over_r,
    make_gamma_sampler,
    sample_dirichlet_eps,
    sample_gamma_eps,
)

__version__ = "0.1.0"
