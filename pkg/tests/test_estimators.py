import math

import numpy as np
import pytest

from rsvi.estimators import (
    EstimatorConfig,
    entropy_total,
    estimate,
    estimate_elbo,
    estimate_gradient,
    estimate_gradient_importance,
    estimate_gradient_score,
    grad_log_ratio_gamma,
    param_layout,
    variance_profile,
)
from rsvi.exceptions import ContractError, DomainError
from rsvi.mathcore import RandomStream, finite_diff_grad, trigamma
from rsvi.models import LatentBlock, ModelSpec, conjugate_elbo_exact, conjugate_exact_elbo_grad
from rsvi.rejection import log_ratio_q_over_r


def flat_model(k=5):
    return ModelSpec(
        (LatentBlock("z", "dirichlet", k),),
        lambda z: 0.0,
        lambda z: np.zeros(k),
    )


def gamma_toy_model(c1, c2):
    """Independent gamma latents with f = sum c1 ln z - c2 z (exact oracle)."""
    c1 = np.asarray(c1, dtype=float)
    c2 = np.asarray(c2, dtype=float)

    def log_joint(z):
        return float(np.dot(c1, np.log(z)) - np.dot(c2, z))

    def grad(z):
        return c1 / z - c2

    return ModelSpec((LatentBlock("z", "gamma_mean_shape", c1.size),), log_joint, grad)


def gamma_toy_exact_grad(c1, c2, shapes, means):
    """d/d(shape, mean) of c1 E[ln z] - c2 E[z] + H, all analytic."""
    d_shape = c1 * (trigamma(shapes) - 1.0 / shapes) + (
        1.0 + (1.0 - shapes) * trigamma(shapes) - 1.0 / shapes
    )
    d_mean = c1 / means - c2 + 1.0 / means
    return np.concatenate([d_shape, d_mean])


class TestConfigAndLayout:
    def test_config_validation(self):
        with pytest.raises(ContractError):
            EstimatorConfig(kind="nope")
        with pytest.raises(ContractError):
            EstimatorConfig(aug_b=-1)
        with pytest.raises(ContractError):
            EstimatorConfig(draws=0)

    def test_kind_guards(self, conj5_spec, theta5):
        stream = RandomStream(0, 0)
        with pytest.raises(ContractError):
            estimate_gradient(conj5_spec, theta5, EstimatorConfig("score_function"), stream)
        with pytest.raises(ContractError):
            estimate_gradient_score(conj5_spec, theta5, EstimatorConfig("rsvi"), stream)
        with pytest.raises(ContractError):
            estimate_gradient_importance(conj5_spec, theta5, EstimatorConfig("rsvi"), stream)

    def test_param_layout_mixed(self, def_small_spec):
        blocks, n = param_layout(def_small_spec)
        assert n == 2 * def_small_spec.n_latents  # all gamma mean-shape blocks
        assert blocks[0].theta_slice.start == 0
        assert blocks[-1].theta_slice.stop == n

    def test_theta_validation(self, conj5_spec):
        with pytest.raises(DomainError):
            estimate(conj5_spec, np.array([1.0, -1.0, 1.0, 1.0, 1.0]), EstimatorConfig(), RandomStream(0, 0))
        with pytest.raises(ContractError):
            estimate(conj5_spec, np.ones(4), EstimatorConfig(), RandomStream(0, 0))


class TestStructuralIdentities:
    def test_decomposition_identity(self, conj5_spec, theta5):
        for kind in ("rsvi", "score_function", "importance"):
            est = estimate(conj5_spec, theta5, EstimatorConfig(kind, aug_b=2, draws=3), RandomStream(8, 1))
            assert np.array_equal(est.total, est.g_rep + est.g_cor + est.g_entropy)
            assert np.all(np.isfinite(est.total))

    def test_flat_model_reduces_to_entropy_gradient(self, theta5):
        spec = flat_model()
        for kind in ("rsvi", "score_function", "importance"):
            est = estimate(spec, theta5, EstimatorConfig(kind, aug_b=1), RandomStream(3, 0))
            assert np.array_equal(est.total, est.g_entropy)
            assert np.all(est.g_rep == 0.0) and np.all(est.g_cor == 0.0)

    def test_determinism(self, conj5_spec, theta5):
        a = estimate(conj5_spec, theta5, EstimatorConfig("rsvi", 1), RandomStream(42, 7))
        b = estimate(conj5_spec, theta5, EstimatorConfig("rsvi", 1), RandomStream(42, 7))
        assert np.array_equal(a.total, b.total) and a.trials == b.trials

    def test_meta_fields(self, conj5_spec, theta5):
        est = estimate(conj5_spec, theta5, EstimatorConfig("rsvi", 1, draws=4), RandomStream(1, 0))
        assert est.draws == 4
        assert est.trials >= 4 * 5  # at least one trial per latent per draw


class TestGradLogRatio:
    def test_matches_finite_differences(self):
        stream = RandomStream(12, 0)
        worst = 0.0
        for _ in range(50):
            a = 1.0 + 25.0 * stream.uniform()
            e = -2.0 + 4.0 * stream.uniform()
            fd = finite_diff_grad(lambda v: log_ratio_q_over_r(e, v), a, 1e-4)
            worst = max(worst, abs(fd - grad_log_ratio_gamma(e, a)) / max(1.0, abs(fd)))
        assert worst <= 1e-5

    def test_magnitude_decreases_with_shape(self):
        vals = [abs(grad_log_ratio_gamma(0.0, a)) for a in (1.0, 2.0, 10.0, 100.0)]
        assert all(b < a for a, b in zip(vals, vals[1:]))

    def test_vanishes_in_large_shape_limit(self):
        assert abs(grad_log_ratio_gamma(0.0, 1e6)) < 1e-4

    def test_domain(self):
        with pytest.raises(DomainError):
            grad_log_ratio_gamma(0.0, 0.5)
        with pytest.raises(DomainError):
            grad_log_ratio_gamma(-5.0, 1.0)


class TestUnbiasedness:
    """Each estimator's mean over many one-sample estimates hits the oracle."""

    @pytest.mark.parametrize("kind,B", [("rsvi", 1), ("rsvi", 0), ("score_function", 0), ("importance", 1)])
    def test_conjugate_model(self, conj5, conj5_spec, theta5, q5, kind, B):
        exact = conjugate_exact_elbo_grad(conj5, q5)
        cfg = EstimatorConfig(kind=kind, aug_b=B)
        root = RandomStream(100 + B, 0)
        n = 8000
        totals = np.empty((n, 5))
        for i in range(n):
            totals[i] = estimate(conj5_spec, theta5, cfg, root.child(i)).total
        se = totals.std(axis=0, ddof=1) / math.sqrt(n)
        assert np.all(np.abs(totals.mean(axis=0) - exact) <= 4.0 * se), kind

    @pytest.mark.parametrize("B", [0, 2])
    def test_gamma_mean_shape_chain_rule(self, B):
        # shapes below one force augmentation; B=2 exercises the exponent path
        c1 = np.array([3.0, 1.5])
        c2 = np.array([2.0, 0.7])
        shapes = np.array([0.8, 2.5])
        means = np.array([1.3, 0.6])
        theta = np.concatenate([shapes, means])
        spec = gamma_toy_model(c1, c2)
        exact = gamma_toy_exact_grad(c1, c2, shapes, means)
        cfg = EstimatorConfig("rsvi", aug_b=B)
        root = RandomStream(55 + B, 0)
        n = 20000
        totals = np.empty((n, 4))
        for i in range(n):
            totals[i] = estimate(spec, theta, cfg, root.child(i)).total
        se = totals.std(axis=0, ddof=1) / math.sqrt(n)
        assert np.all(np.abs(totals.mean(axis=0) - exact) <= 4.0 * se)

    def test_gamma_mean_shape_score_and_importance(self):
        c1 = np.array([2.0])
        c2 = np.array([1.1])
        shapes = np.array([1.6])
        means = np.array([0.9])
        theta = np.concatenate([shapes, means])
        spec = gamma_toy_model(c1, c2)
        exact = gamma_toy_exact_grad(c1, c2, shapes, means)
        for kind in ("score_function", "importance"):
            cfg = EstimatorConfig(kind, aug_b=1)
            root = RandomStream(77, 0)
            n = 20000
            totals = np.empty((n, 2))
            for i in range(n):
                totals[i] = estimate(spec, theta, cfg, root.child(i)).total
            se = totals.std(axis=0, ddof=1) / math.sqrt(n)
            assert np.all(np.abs(totals.mean(axis=0) - exact) <= 4.0 * se), kind


class TestCorrectionTerm:
    def test_gcor_shrinks_with_shape(self, conj5, conj5_spec):
        means = []
        for shape in (1.0, 2.0, 10.0, 100.0):
            theta = np.full(5, shape)
            root = RandomStream(31, int(shape))
            acc = 0.0
            n = 2500
            for i in range(n):
                est = estimate(conj5_spec, theta, EstimatorConfig("rsvi", 0), root.child(i))
                acc += float(np.mean(np.abs(est.g_cor)))
            means.append(acc / n)
        assert all(b < a for a, b in zip(means, means[1:])), means


class TestVarianceProfile:
    def test_zero_variance_for_flat_model(self, theta5):
        prof = variance_profile(flat_model(), theta5, EstimatorConfig("rsvi", 1), 50, RandomStream(1, 0))
        assert prof.vmax == 0.0

    def test_requires_two_replicates(self, conj5_spec, theta5):
        with pytest.raises(ContractError):
            variance_profile(conj5_spec, theta5, EstimatorConfig(), 1, RandomStream(0, 0))

    def test_deterministic(self, conj5_spec, theta5):
        a = variance_profile(conj5_spec, theta5, EstimatorConfig("rsvi", 1), 60, RandomStream(9, 4))
        b = variance_profile(conj5_spec, theta5, EstimatorConfig("rsvi", 1), 60, RandomStream(9, 4))
        assert np.array_equal(a.variances, b.variances)
        assert a.vmin <= a.vmedian <= a.vmax

    def test_averaging_draws_divides_variance(self, conj5_spec, theta5):
        g = 1000
        v1 = variance_profile(conj5_spec, theta5, EstimatorConfig("rsvi", 1, draws=1), g, RandomStream(2, 0))
        v10 = variance_profile(conj5_spec, theta5, EstimatorConfig("rsvi", 1, draws=10), g, RandomStream(2, 1))
        ratio = v1.vmedian / v10.vmedian
        assert 10.0 / 1.2 <= ratio <= 10.0 * 1.2


class TestElbo:
    def test_matches_exact_conjugate_value(self, conj5, conj5_spec, theta5, q5):
        exact = conjugate_elbo_exact(conj5, q5)
        vals = [estimate_elbo(conj5_spec, theta5, 500, RandomStream(71, i)) for i in range(20)]
        se = np.std(vals, ddof=1) / math.sqrt(len(vals))
        assert abs(np.mean(vals) - exact) <= 4.0 * se

    def test_batch_and_loop_paths_agree(self, conj5_spec, theta5):
        # strip the batch evaluator to force the row loop
        loop_spec = ModelSpec(
            conj5_spec.latent_layout, conj5_spec.log_joint, conj5_spec.grad_latents
        )
        a = estimate_elbo(conj5_spec, theta5, 64, RandomStream(5, 5))
        b = estimate_elbo(loop_spec, theta5, 64, RandomStream(5, 5))
        assert a == pytest.approx(b, rel=1e-12)

    def test_entropy_total_matches_dirichlet(self, conj5_spec, theta5, q5):
        from rsvi.distributions import dirichlet_entropy

        assert entropy_total(conj5_spec, theta5) == pytest.approx(dirichlet_entropy(q5), rel=1e-12)
