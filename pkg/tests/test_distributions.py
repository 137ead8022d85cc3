import math

import numpy as np
import pytest
from hypothesis import given, strategies as st
from scipy import integrate, stats

from rsvi.distributions import (
    DirichletParams,
    GammaMeanShapeParams,
    GammaParams,
    derived_transform,
    dirichlet_entropy,
    dirichlet_entropy_grad,
    dirichlet_kl,
    dirichlet_log_pdf,
    dirichlet_score,
    gamma_entropy,
    gamma_entropy_grad,
    gamma_entropy_grad_mean_shape,
    gamma_log_pdf,
    gamma_score_mean_shape,
    gamma_score_shape_rate,
)
from rsvi.exceptions import ContractError, DomainError
from rsvi.mathcore import RandomStream, finite_diff_grad
from rsvi.rejection import make_sampler_bank

pos = st.floats(min_value=0.2, max_value=25.0)


class TestParams:
    def test_validation(self):
        for bad in [(0.0, 1.0), (1.0, -2.0), (float("nan"), 1.0)]:
            with pytest.raises(DomainError):
                GammaParams(*bad)
        with pytest.raises(DomainError):
            DirichletParams(np.array([1.0]))
        with pytest.raises(DomainError):
            DirichletParams(np.array([1.0, -1.0]))

    def test_mean_shape_conversion(self):
        p = GammaMeanShapeParams(2.0, 4.0).as_shape_rate()
        assert p.shape == 2.0 and p.rate == 0.5


class TestGammaLogPdf:
    def test_frozen_values(self):
        assert gamma_log_pdf(1.0, GammaParams(1.0, 1.0)) == pytest.approx(-1.0, abs=1e-14)
        assert gamma_log_pdf(2.0, GammaParams(2.0, 1.0)) == pytest.approx(math.log(2.0) - 2.0, abs=1e-13)

    def test_out_of_support_is_neg_inf(self):
        assert gamma_log_pdf(0.0, GammaParams(2.0, 1.0)) == -math.inf
        assert gamma_log_pdf(-3.0, GammaParams(2.0, 1.0)) == -math.inf
        arr = gamma_log_pdf(np.array([-1.0, 1.0]), GammaParams(1.0, 1.0))
        assert arr[0] == -math.inf and np.isfinite(arr[1])

    @pytest.mark.parametrize("a,b", [(2.0, 1.0), (0.7, 2.5), (10.0, 0.5)])
    def test_normalization_by_quadrature(self, a, b):
        hi = stats.gamma.ppf(1.0 - 1e-10, a, scale=1.0 / b)
        val, _ = integrate.quad(
            lambda z: math.exp(gamma_log_pdf(z, GammaParams(a, b))), 0.0, hi, limit=300
        )
        assert val == pytest.approx(1.0, abs=1e-6)


class TestGammaEntropy:
    def test_frozen_values(self):
        assert gamma_entropy(GammaParams(1.0, 1.0)) == pytest.approx(1.0, abs=1e-13)
        assert gamma_entropy(GammaParams(1.0, math.e)) == pytest.approx(0.0, abs=1e-13)

    @given(pos, pos)
    def test_grad_matches_finite_differences(self, a, b):
        fd = finite_diff_grad(
            lambda v: gamma_entropy(GammaParams(v[0], v[1])), np.array([a, b]), 1e-6
        )
        an = np.array(gamma_entropy_grad(GammaParams(a, b)))
        assert np.max(np.abs(an - fd) / np.maximum(1.0, np.abs(fd))) <= 1e-6

    @given(pos, pos)
    def test_mean_shape_grad_matches_finite_differences(self, a, mu):
        fd = finite_diff_grad(
            lambda v: gamma_entropy(GammaMeanShapeParams(v[0], v[1]).as_shape_rate()),
            np.array([a, mu]),
            1e-6,
        )
        an = np.array(gamma_entropy_grad_mean_shape(GammaMeanShapeParams(a, mu)))
        assert np.max(np.abs(an - fd) / np.maximum(1.0, np.abs(fd))) <= 1e-6


class TestGammaScores:
    @given(pos, pos, st.floats(min_value=0.05, max_value=20.0))
    def test_score_is_logpdf_gradient(self, a, b, z):
        fd = finite_diff_grad(
            lambda v: gamma_log_pdf(z, GammaParams(v[0], v[1])), np.array([a, b]), 1e-6
        )
        an = np.array(gamma_score_shape_rate(z, GammaParams(a, b)))
        assert np.max(np.abs(an - fd) / np.maximum(1.0, np.abs(fd))) <= 1e-5

    @given(pos, pos, st.floats(min_value=0.05, max_value=20.0))
    def test_mean_shape_score(self, a, mu, z):
        fd = finite_diff_grad(
            lambda v: gamma_log_pdf(z, GammaMeanShapeParams(v[0], v[1]).as_shape_rate()),
            np.array([a, mu]),
            1e-6,
        )
        an = np.array(gamma_score_mean_shape(z, GammaMeanShapeParams(a, mu)))
        assert np.max(np.abs(an - fd) / np.maximum(1.0, np.abs(fd))) <= 1e-5


class TestDirichlet:
    def test_uniform_density_is_log_factorial(self):
        for k in (2, 3, 5):
            p = DirichletParams(np.ones(k))
            z = np.full(k, 1.0 / k)
            assert dirichlet_log_pdf(z, p) == pytest.approx(math.lgamma(k), abs=1e-12)

    def test_off_simplex_rejected(self):
        p = DirichletParams(np.array([2.0, 3.0]))
        with pytest.raises(DomainError):
            dirichlet_log_pdf(np.array([0.6, 0.6]), p)

    def test_boundary_is_neg_inf(self):
        p = DirichletParams(np.array([2.0, 3.0]))
        assert dirichlet_log_pdf(np.array([0.0, 1.0]), p) == -math.inf

    def test_normalization_by_quadrature(self):
        p = DirichletParams(np.array([2.0, 3.0, 4.0]))

        def density(z1, z2):
            z3 = 1.0 - z1 - z2
            if z3 <= 1e-12:
                return 0.0
            return math.exp(dirichlet_log_pdf(np.array([z1, z2, z3]), p))

        val, _ = integrate.dblquad(
            lambda z2, z1: density(z1, z2), 0.0, 1.0, 0.0, lambda z1: 1.0 - z1
        )
        assert val == pytest.approx(1.0, abs=1e-6)

    def test_entropy_grad_matches_finite_differences(self):
        conc = np.array([2.0, 3.0, 4.0])
        fd = finite_diff_grad(lambda v: dirichlet_entropy(DirichletParams(v)), conc, 1e-6)
        an = dirichlet_entropy_grad(DirichletParams(conc))
        assert np.max(np.abs(an - fd) / np.maximum(1.0, np.abs(fd))) <= 1e-6

    def test_entropy_matches_reference(self):
        conc = np.array([0.6, 2.0, 5.5])
        assert dirichlet_entropy(DirichletParams(conc)) == pytest.approx(
            stats.dirichlet.entropy(conc), abs=1e-10
        )

    def test_score_is_logpdf_gradient(self):
        conc = np.array([2.0, 1.3, 4.0])
        z = np.array([0.2, 0.5, 0.3])
        fd = finite_diff_grad(lambda v: dirichlet_log_pdf(z, DirichletParams(v)), conc, 1e-6)
        an = dirichlet_score(z, DirichletParams(conc))
        assert np.max(np.abs(an - fd)) <= 1e-6


class TestDirichletKl:
    def test_identity_is_zero(self):
        p = DirichletParams(np.array([2.0, 3.0, 4.0]))
        assert dirichlet_kl(p, p) == pytest.approx(0.0, abs=1e-12)

    @given(
        st.lists(st.floats(min_value=0.3, max_value=8.0), min_size=3, max_size=3),
        st.lists(st.floats(min_value=0.3, max_value=8.0), min_size=3, max_size=3),
    )
    def test_non_negative(self, a, b):
        p, q = DirichletParams(np.array(a)), DirichletParams(np.array(b))
        assert dirichlet_kl(p, q) >= -1e-12

    def test_matches_monte_carlo(self):
        p = DirichletParams(np.array([2.0, 5.0, 3.0]))
        q = DirichletParams(np.array([1.0, 1.0, 1.0]))
        rng = np.random.default_rng(0)
        zs = rng.dirichlet(p.conc, size=200000)
        mc = np.mean(stats.dirichlet.logpdf(zs.T, p.conc) - stats.dirichlet.logpdf(zs.T, q.conc))
        assert dirichlet_kl(p, q) == pytest.approx(mc, abs=4.0 * 0.01)


class TestDerivedTransforms:
    def test_frozen_values(self):
        assert derived_transform("beta", [1.0, 1.0], [2.0, 3.0]) == 0.5
        assert derived_transform("chi_squared", [3.0], [4.0]) == 6.0
        assert derived_transform("nakagami", [2.0], [2.0, 8.0]) == pytest.approx(math.sqrt(8.0))
        assert derived_transform("f_dist", [1.0, 2.0], [2.0, 6.0]) == pytest.approx(1.5)
        out = derived_transform("dirichlet", [1.0, 3.0], [1.0, 1.0])
        assert np.allclose(out, [0.25, 0.75])

    def test_arity_contract(self):
        with pytest.raises(ContractError):
            derived_transform("beta", [1.0], [2.0, 3.0])
        with pytest.raises(ContractError):
            derived_transform("student_t", [1.0, 0.5, 0.2], [3.0])
        with pytest.raises(ContractError):
            derived_transform("no_such_family", [1.0], [1.0])

    def test_domains(self):
        with pytest.raises(DomainError):
            derived_transform("beta", [-1.0, 1.0], [2.0, 3.0])
        with pytest.raises(DomainError):
            derived_transform("nakagami", [1.0], [-2.0, 8.0])

    def test_beta_moments_via_gamma_draws(self):
        a, b, n = 2.0, 3.0, 10**5
        bank = make_sampler_bank(np.array([a, b]), 1.0, 0)
        draws = bank.draw_batch(RandomStream(31, 0), n).z
        beta_draws = draws[:, 0] / draws.sum(axis=1)
        mean = a / (a + b)
        sd = math.sqrt(a * b / ((a + b) ** 2 * (a + b + 1.0)))
        assert abs(beta_draws.mean() - mean) <= 4.0 * sd / math.sqrt(n)

    @pytest.mark.parametrize(
        "family,theta,moments",
        [
            ("chi_squared", (6.0,), (6.0, 12.0)),
            ("nakagami", (1.5, 2.0), (None, None)),
            ("student_t", (7.0,), (0.0, 7.0 / 5.0)),
        ],
    )
    def test_sampling_moments(self, family, theta, moments):
        n = 10**5
        stream = RandomStream(57, hash(family) % 1000)
        if family == "chi_squared":
            bank = make_sampler_bank(np.array([theta[0] / 2.0]), 1.0, 0)
            aux = bank.draw_batch(stream, n).z
            draws = 2.0 * aux[:, 0]
        elif family == "nakagami":
            m, omega = theta
            bank = make_sampler_bank(np.array([m]), 1.0, 0)
            aux = bank.draw_batch(stream, n).z
            draws = np.sqrt(omega * aux[:, 0] / m)
        else:
            nu = theta[0]
            bank = make_sampler_bank(np.array([nu / 2.0]), 1.0, 0)
            aux = bank.draw_batch(stream, n).z
            normals = stream.std_normals(n)
            draws = np.sqrt(nu / (2.0 * aux[:, 0])) * normals
        if family == "nakagami":
            m, omega = theta
            ref_mean = math.exp(math.lgamma(m + 0.5) - math.lgamma(m)) * math.sqrt(omega / m)
            ref_var = omega - ref_mean**2
        else:
            ref_mean, ref_var = moments
        se_mean = math.sqrt(draws.var() / n)
        assert abs(draws.mean() - ref_mean) <= 4.0 * se_mean
        se_var = math.sqrt(max(np.var((draws - draws.mean()) ** 2), 1e-12) / n)
        assert abs(draws.var() - ref_var) <= 4.0 * se_var
