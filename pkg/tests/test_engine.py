import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from rsvi.distributions import DirichletParams, dirichlet_kl
from rsvi.engine import (
    OptimizerState,
    RunConfig,
    TraceRecord,
    init_optimizer,
    run_rsvi,
    softplus,
    softplus_inv,
    softplus_jacobian,
    step_size,
    trace_stability,
)
from rsvi.estimators import EstimatorConfig, default_theta_init
from rsvi.exceptions import DomainError, OptimizerAbortError
from rsvi.mathcore import RandomStream, finite_diff_grad
from rsvi.models import LatentBlock, ModelSpec


class TestSoftplus:
    def test_frozen_values(self):
        assert softplus(0.0) == pytest.approx(math.log(2.0), rel=1e-15)
        assert softplus_inv(softplus(50.0)) == pytest.approx(50.0, abs=1e-10)

    @pytest.mark.parametrize("theta", [1e-6, 1e-3, 0.1, 1.0, 10.0, 1e3, 1e6])
    def test_mutually_inverse(self, theta):
        assert softplus(softplus_inv(theta)) == pytest.approx(theta, rel=1e-10)

    @given(st.floats(min_value=-40.0, max_value=40.0))
    def test_jacobian_matches_finite_differences(self, x):
        fd = finite_diff_grad(lambda v: softplus(v), x, 1e-6)
        assert abs(softplus_jacobian(x) - fd) <= 1e-8

    def test_positivity_is_structural(self):
        x = np.linspace(-700.0, 700.0, 101)
        assert np.all(softplus(x) > 0.0)

    def test_inverse_domain(self):
        with pytest.raises(DomainError):
            softplus_inv(0.0)
        with pytest.raises(DomainError):
            softplus_inv(-1.0)


class TestStepSize:
    def test_first_step_example(self):
        state = init_optimizer(1.0, 1)
        rho, nxt = step_size(state, np.array([3.0]))
        assert rho[0] == pytest.approx(0.25, rel=1e-12)  # 1 * 1 * (1 + 3)^-1
        assert nxt.s[0] == 9.0 and nxt.n == 2

    def test_zero_gradient_gives_pure_schedule(self):
        state = init_optimizer(0.5, 2)
        for n in range(1, 6):
            rho, state = step_size(state, np.zeros(2))
            assert np.allclose(rho, 0.5 * n ** (-0.5 + 1e-16))

    def test_schedule_decays(self):
        state = init_optimizer(1.0, 1)
        rhos = []
        for _ in range(200):
            rho, state = step_size(state, np.array([1.0]))
            rhos.append(rho[0])
        assert rhos[-1] < rhos[10] < rhos[1]
        assert rhos[-1] == pytest.approx(1.0 * 200**-0.5 / (1.0 + 1.0), rel=0.05)

    def test_rejects_non_finite(self):
        state = init_optimizer(1.0, 2)
        with pytest.raises(DomainError):
            step_size(state, np.array([1.0, float("nan")]))
        assert state.n == 1  # untouched

    def test_second_moment_recursion(self):
        state = OptimizerState(n=2, s=np.array([4.0]), eta=1.0)
        rho, nxt = step_size(state, np.array([2.0]))
        assert nxt.s[0] == pytest.approx(0.1 * 4.0 + 0.9 * 4.0)


class TestRunRsvi:
    def test_zero_iterations(self, conj5_spec):
        theta0 = default_theta_init(conj5_spec)
        cfg = RunConfig(max_iters=0, stop_tol=None)
        theta, trace = run_rsvi(conj5_spec, theta0, cfg, RandomStream(0, 0))
        assert trace == []
        assert np.allclose(theta, theta0, rtol=1e-12)

    def test_determinism(self, conj5_spec):
        theta0 = default_theta_init(conj5_spec)
        cfg = RunConfig(estimator=EstimatorConfig("rsvi", 1), eta=1.0, max_iters=40, elbo_draws=10, stop_tol=None)
        t1, tr1 = run_rsvi(conj5_spec, theta0, cfg, RandomStream(7, 0))
        t2, tr2 = run_rsvi(conj5_spec, theta0, cfg, RandomStream(7, 0))
        assert np.array_equal(t1, t2)
        assert [r.elbo for r in tr1] == [r.elbo for r in tr2]
        assert [r.grad_norm for r in tr1] == [r.grad_norm for r in tr2]

    def test_trace_fields(self, conj5_spec):
        theta0 = default_theta_init(conj5_spec)
        cfg = RunConfig(max_iters=5, elbo_draws=5, stop_tol=None)
        _, trace = run_rsvi(conj5_spec, theta0, cfg, RandomStream(3, 0))
        assert [r.iteration for r in trace] == [1, 2, 3, 4, 5]
        for r in trace:
            assert isinstance(r, TraceRecord)
            assert r.trials >= 5 and 0.0 < r.accept_rate <= 1.0
            assert r.wall_clock >= 0.0

    def test_positivity_every_iterate(self, conj5_spec):
        theta0 = default_theta_init(conj5_spec)
        cfg = RunConfig(estimator=EstimatorConfig("rsvi", 1), eta=5.0, max_iters=60, elbo_draws=5, stop_tol=None)
        theta, trace = run_rsvi(conj5_spec, theta0, cfg, RandomStream(11, 0))
        assert np.all(theta > 0.0)

    def test_improves_objective(self, conj5, conj5_spec):
        theta0 = default_theta_init(conj5_spec)
        post = conj5.exact_posterior()
        kl0 = dirichlet_kl(DirichletParams(theta0), post)
        cfg = RunConfig(estimator=EstimatorConfig("rsvi", 1), eta=2.0, max_iters=600, elbo_draws=5, stop_tol=None)
        theta, _ = run_rsvi(conj5_spec, theta0, cfg, RandomStream(1, 0))
        kl1 = dirichlet_kl(DirichletParams(theta), post)
        assert kl1 < kl0 / 4.0

    def test_early_stop_triggers(self, conj5_spec):
        theta0 = default_theta_init(conj5_spec)
        cfg = RunConfig(max_iters=400, elbo_draws=5, stop_tol=1e9, stop_window=20)
        _, trace = run_rsvi(conj5_spec, theta0, cfg, RandomStream(2, 0))
        assert len(trace) == 40  # stops at the first comparison with a huge tolerance

    def test_abort_after_three_failures(self):
        calls = {"n": 0}

        def log_joint(z):
            calls["n"] += 1
            return float("nan")

        spec = ModelSpec(
            (LatentBlock("z", "gamma_mean_shape", 1),), log_joint, lambda z: np.zeros(1)
        )
        cfg = RunConfig(max_iters=50, elbo_draws=5, stop_tol=None)
        with pytest.raises(OptimizerAbortError) as err:
            run_rsvi(spec, np.array([1.0, 1.0]), cfg, RandomStream(0, 0))
        assert err.value.trace == []
        assert np.allclose(err.value.theta, [1.0, 1.0])

    def test_bad_init_rejected(self, conj5_spec):
        with pytest.raises(DomainError):
            run_rsvi(conj5_spec, np.array([1.0, -1.0, 1.0, 1.0, 1.0]), RunConfig(), RandomStream(0, 0))


class TestTraceStability:
    @staticmethod
    def _trace(values):
        return [
            TraceRecord(i + 1, float(v), 0.0, 0.0, 0.0, 1, 1.0) for i, v in enumerate(values)
        ]

    def test_increasing_is_stable(self):
        values = np.linspace(-100.0, -50.0, 1200) + 0.01 * np.sin(np.arange(1200))
        assert trace_stability(self._trace(values), window=100, span=1000)

    def test_collapse_fails(self):
        values = np.concatenate([np.full(600, -50.0), np.linspace(-50.0, -300.0, 600)])
        values = values + 0.01 * np.cos(np.arange(1200))
        assert not trace_stability(self._trace(values), window=100, span=1000)

    def test_short_trace_fails(self):
        assert not trace_stability(self._trace(np.zeros(500)), window=100, span=1000)

    def test_window_must_divide_span(self):
        with pytest.raises(DomainError):
            trace_stability(self._trace(np.zeros(1200)), window=300, span=1000)
