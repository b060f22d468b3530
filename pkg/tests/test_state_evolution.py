"""State-evolution recursion: factorized moments, spectral part, fixed points."""

import numpy as np
import pytest

from vampse.engine import lmmse_step
from vampse.ensembles import (
    SpectralMeasure,
    marchenko_pastur_measure,
    row_orthogonal_measure,
    sample_row_orthogonal,
    spectral_expectation,
)
from vampse.errors import (
    DegenerateDivergenceError,
    IndefinitePrecisionError,
    NegativeConjugateVarianceError,
)
from vampse.models import (
    ScalarModelPair,
    bernoulli_gauss_prior,
    gaussian_channel_map_denoiser,
    gaussian_channel_mmse_denoiser,
    gaussian_noise_channel,
    gaussian_prior,
    gaussian_prior_denoiser,
    ising_denoiser,
    laplace_map_denoiser,
    probit_theta_denoiser,
    random_label_channel,
    sign_channel,
)
from vampse.state_evolution import (
    MacroState,
    SEModel,
    default_init,
    rs_saddle_residual,
    se_factorized_x,
    se_factorized_z,
    se_fixed_point,
    se_gaussian_part,
    se_message_pass,
    se_trajectory,
)


def sparse_sign_models(gamma=0.01, rho=0.1):
    return ScalarModelPair(bernoulli_gauss_prior(rho), sign_channel(),
                           laplace_map_denoiser(gamma),
                           gaussian_channel_map_denoiser(1.0))


def matched_gaussian_models():
    return ScalarModelPair(gaussian_prior(1.0), gaussian_noise_channel(1.0),
                           gaussian_prior_denoiser(1.0),
                           gaussian_channel_mmse_denoiser(1.0))


def perceptron_models():
    return ScalarModelPair(gaussian_prior(1.0), random_label_channel(),
                           ising_denoiser(), probit_theta_denoiser())


class TestFactorizedX:
    def test_linear_gaussian_closed_form(self):
        models = matched_gaussian_models()
        m1x, chi1x, q1x, chix2 = se_factorized_x(models, 0.0, 1.0, 1.0)
        assert m1x == pytest.approx(0.0, abs=1e-14)
        assert chi1x == pytest.approx(0.5, abs=1e-14)
        assert q1x == pytest.approx(0.25, abs=1e-12)
        assert chix2 == pytest.approx(0.25, abs=1e-14)

    def test_ising_degenerate_noise(self):
        models = perceptron_models()
        m1x, chi1x, q1x, _ = se_factorized_x(models, 0.0, 0.0, 1.0)
        assert m1x == 0.0
        assert q1x == 0.0
        assert chi1x == pytest.approx(1.0)

    def test_monte_carlo_oracle_soft_threshold(self):
        # BG prior with the MAP soft threshold at a generic probe point
        models = sparse_sign_models(gamma=0.2, rho=0.1)
        mh, ch, qh = 0.7, 0.31, 0.9
        m1x, chi1x, q1x, chix2 = se_factorized_x(models, mh, ch, qh)
        rng = np.random.default_rng(0)
        n = 2_000_000
        x0 = models.actual_prior.sample(n, rng)
        h = mh * x0 + np.sqrt(ch) * rng.standard_normal(n)
        g = models.x_denoiser.g(h, qh)
        dg = models.x_denoiser.dg(h, qh)
        for exact, sample in [(m1x, x0 * g), (chi1x, dg), (q1x, g * g),
                              (chix2, dg * dg)]:
            se = sample.std() / np.sqrt(n)
            assert abs(exact - sample.mean()) < 3 * se


class TestFactorizedZ:
    def test_sign_channel_half_normal(self):
        models = sparse_sign_models()
        t_z = 0.1
        m1z, chi1z, q1z, chiz2 = se_factorized_z(models, t_z, 0.0, 0.0, 1.0)
        assert m1z == pytest.approx(np.sqrt(2 * t_z / np.pi) / 2, abs=1e-12)
        assert chi1z == pytest.approx(0.5)
        assert q1z == pytest.approx(0.25, abs=1e-12)
        assert chiz2 == pytest.approx(0.25)

    def test_random_labels_kill_overlap(self):
        # y independent of z0: with no incoming overlap none is generated,
        # and the SE keeps every overlap at zero along the trajectory
        models = perceptron_models()
        m1z, _, _, _ = se_factorized_z(models, 1.0, 0.0, 0.5, 1.0)
        assert m1z == pytest.approx(0.0, abs=1e-12)
        se = SEModel(models=models, measure=marchenko_pastur_measure(0.8), delta=0.8)
        for st in se_trajectory(se, t_iter=5):
            assert abs(st.m1z) < 1e-12 and abs(st.m1x) < 1e-12
            assert abs(st.mh1z) < 1e-12 and abs(st.mh1x) < 1e-12

    def test_monte_carlo_oracle_probit(self):
        models = perceptron_models()
        t_z, mh, ch, qh = 1.0, 0.0, 0.8, 1.3
        m1z, chi1z, q1z, chiz2 = se_factorized_z(models, t_z, mh, ch, qh)
        rng = np.random.default_rng(1)
        n = 2_000_000
        z0 = rng.standard_normal(n) * np.sqrt(t_z)
        y = models.actual_channel.sample(z0, rng)
        h = mh * z0 + np.sqrt(ch) * rng.standard_normal(n)
        g = models.z_denoiser.g(h, qh, y)
        dg = models.z_denoiser.dg(h, qh, y)
        for exact, sample in [(m1z, z0 * g), (chi1z, dg), (q1z, g * g),
                              (chiz2, dg * dg)]:
            se = sample.std() / np.sqrt(n)
            assert abs(exact - sample.mean()) < 3 * se

    def test_monte_carlo_oracle_sign_channel(self):
        models = sparse_sign_models(gamma=0.05)
        t_z, mh, ch, qh = 0.1, 1.4, 0.27, 0.8
        m1z, chi1z, q1z, chiz2 = se_factorized_z(models, t_z, mh, ch, qh)
        rng = np.random.default_rng(2)
        n = 2_000_000
        z0 = rng.standard_normal(n) * np.sqrt(t_z)
        y = models.actual_channel.sample(z0, rng)
        h = mh * z0 + np.sqrt(ch) * rng.standard_normal(n)
        g = models.z_denoiser.g(h, qh, y)
        for exact, sample in [(m1z, z0 * g), (q1z, g * g)]:
            se = sample.std() / np.sqrt(n)
            assert abs(exact - sample.mean()) < 3 * se


class TestGaussianPart:
    MEAS = SpectralMeasure(atoms=((1.0, 0.4), (0.0, 0.6)))

    def test_atom_arithmetic(self):
        m2x, chi2x, q2x, m2z, chi2z, q2z = se_gaussian_part(
            self.MEAS, 1.0, 0.4, mh2x=1.0, mh2z=0.0, ch2x=0.0, ch2z=0.0,
            qh2x=1.0, qh2z=1.0)
        assert m2x == pytest.approx(0.8)
        assert chi2x == pytest.approx(0.8)
        assert q2x == pytest.approx(0.7)
        assert chi2z == pytest.approx(0.5)

    def test_indefinite_denominator(self):
        with pytest.raises(IndefinitePrecisionError):
            se_gaussian_part(self.MEAS, 1.0, 0.4, 0.0, 0.0, 0.0, 0.0, -0.5, 1.0)

    def test_finite_n_synthetic_field_oracle(self):
        # sampled row-orthogonal matrices with synthetic Gaussian fields
        t_x, delta = 1.0, 0.5
        mh2x, mh2z, ch2x, ch2z, qh2x, qh2z = 0.6, 0.3, 0.4, 0.7, 0.9, 1.1
        meas = row_orthogonal_measure(delta)
        want = se_gaussian_part(meas, t_x, delta, mh2x, mh2z, ch2x, ch2z, qh2x, qh2z)
        rng = np.random.default_rng(3)
        n, m, trials = 512, 256, 120
        got = np.zeros((trials, 6))
        for k in range(trials):
            a = sample_row_orthogonal(m, n, rng=rng)
            x0 = rng.standard_normal(n) * np.sqrt(t_x)
            z0 = a.entries @ x0
            h2x = mh2x * x0 + np.sqrt(ch2x) * rng.standard_normal(n)
            h2z = mh2z * z0 + np.sqrt(ch2z) * rng.standard_normal(m)
            x2, z2, chi2x, chi2z = lmmse_step(h2x, h2z, qh2x, qh2z, a)
            got[k] = [x0 @ x2 / n, chi2x, x2 @ x2 / n,
                      z0 @ z2 / m, chi2z, z2 @ z2 / m]
        mean = got.mean(axis=0)
        stderr = got.std(axis=0, ddof=1) / np.sqrt(trials)
        for i, (w, g, s) in enumerate(zip(want, mean, stderr)):
            assert abs(g - w) < max(3 * s, 1e-12), f"component {i}"


class TestMessagePass:
    def test_ftog_examples(self):
        # overlap-bearing state (q1x chosen Cauchy-Schwarz feasible)
        macro = MacroState(chi1x=0.5, qh1x=1.0, m1x=0.2, mh1x=0.0, q1x=0.7,
                           ch1x=1.0, chi1z=0.5, qh1z=1.0, m1z=0.0, mh1z=0.0,
                           q1z=0.25, ch1z=1.0, t_x=0.1, t_z=0.1)
        out = se_message_pass("ftog", macro)
        assert out.qh2x == pytest.approx(1.0)         # 1/0.5 - 1
        assert out.mh2x == pytest.approx(4.0)         # 0.2/(0.1*0.5)
        assert out.ch2x == pytest.approx(0.2)         # 2.8 - 1.6 - 1
        # zero-overlap state: chihat2x = 0.25/0.25 - 0 - 1 = 0 exactly
        macro2 = MacroState(chi1x=0.5, qh1x=1.0, m1x=0.0, mh1x=0.0, q1x=0.25,
                            ch1x=1.0, chi1z=0.5, qh1z=1.0, m1z=0.0, mh1z=0.0,
                            q1z=0.25, ch1z=1.0, t_x=0.1, t_z=0.1)
        out2 = se_message_pass("ftog", macro2)
        assert out2.ch2x == 0.0

    def test_chi_floor_guard(self):
        macro = MacroState(chi1x=1e-13, q1x=0.1, t_x=1.0, t_z=1.0, chi1z=0.5)
        with pytest.raises(DegenerateDivergenceError):
            se_message_pass("ftog", macro)

    def test_negative_chihat_aborts(self):
        macro = MacroState(chi1x=0.5, qh1x=1.0, m1x=0.2, mh1x=0.0, q1x=0.25,
                           ch1x=1.0, chi1z=0.5, qh1z=1.0, m1z=0.0, mh1z=0.0,
                           q1z=0.25, ch1z=1.0, t_x=0.1, t_z=0.1)
        with pytest.raises(NegativeConjugateVarianceError):
            se_message_pass("ftog", macro)

    def test_direction_validation(self):
        with pytest.raises(ValueError):
            se_message_pass("sideways", MacroState())


class TestDrivers:
    def se_model(self, models, measure, delta):
        return SEModel(models=models, measure=measure, delta=delta)

    def test_matched_gaussian_fixed_point_is_analytic(self):
        se = self.se_model(matched_gaussian_models(),
                           marchenko_pastur_measure(0.75), 0.75)
        fp = se_fixed_point(se)
        assert fp.converged
        st = fp.state
        m_exact = spectral_expectation(se.measure, lambda l: l / (1 + l))
        chi_exact = spectral_expectation(se.measure, lambda l: 1 / (1 + l))
        assert st.m1x == pytest.approx(m_exact, abs=1e-8)
        assert st.q1x == pytest.approx(m_exact, abs=1e-8)
        assert st.chi1x == pytest.approx(chi_exact, abs=1e-8)
        mz_exact = spectral_expectation(se.measure, lambda l: l * l / (1 + l)) / 0.75
        chiz_exact = spectral_expectation(se.measure, lambda l: l / (1 + l)) / 0.75
        assert st.m1z == pytest.approx(mz_exact, abs=1e-8)
        assert st.q1z == pytest.approx(mz_exact, abs=1e-8)
        assert st.chi1z == pytest.approx(chiz_exact, abs=1e-8)

    def test_trajectory_constant_from_fixed_point(self):
        se = self.se_model(matched_gaussian_models(),
                           marchenko_pastur_measure(0.75), 0.75)
        fp = se_fixed_point(se, tol=1e-13)
        states = se_trajectory(se, init=fp.state, t_iter=3, check_first=False)
        for st in states:
            assert st.m1x == pytest.approx(fp.state.m1x, abs=1e-9)
            assert st.q1x == pytest.approx(fp.state.q1x, abs=1e-9)
            assert st.qh1x == pytest.approx(fp.state.qh1x, abs=1e-9)

    def test_trajectory_deterministic_replay(self):
        se = self.se_model(sparse_sign_models(), row_orthogonal_measure(0.4), 0.4)
        t1 = se_trajectory(se, t_iter=8)
        t2 = se_trajectory(se, t_iter=8)
        for a, b in zip(t1, t2):
            assert a == b

    def test_sparse_sign_trajectory_sane(self):
        se = self.se_model(sparse_sign_models(), row_orthogonal_measure(0.4), 0.4)
        states = se_trajectory(se, t_iter=25)
        for st in states:
            assert np.isfinite(st.m1x) and np.isfinite(st.q1x)
            # Cauchy-Schwarz on the overlaps
            assert st.q1x >= st.m1x ** 2 / st.t_x - 1e-10
        # settles towards a fixed point
        assert abs(states[-1].m1x - states[-2].m1x) < 1e-4

    def test_fixed_point_matches_trajectory_limit(self):
        se = self.se_model(sparse_sign_models(), row_orthogonal_measure(0.4), 0.4)
        states = se_trajectory(se, t_iter=200, check_first=False)
        fp = se_fixed_point(se, tol=1e-12)
        assert fp.converged
        assert fp.state.m1x == pytest.approx(states[-1].m1x, abs=1e-6)
        assert fp.state.q1x == pytest.approx(states[-1].q1x, abs=1e-6)

    def test_perceptron_fixed_point_region(self):
        se = self.se_model(perceptron_models(), marchenko_pastur_measure(0.5), 0.5)
        fp = se_fixed_point(se)
        assert fp.converged
        from vampse.state_evolution import se_chi2_moments
        chix2, chiz2 = se_chi2_moments(se, fp.state)
        assert chix2 >= fp.state.chi1x ** 2  # Jensen
        assert chiz2 >= fp.state.chi1z ** 2
        assert 0 < chix2 < 1 and 0 < chiz2 < 1

    def test_fixed_point_conjugate_symmetry(self):
        # at the fixed point both passes compose: 1/chi = Qh1 + Qh2,
        # m/(T chi) = mh1 + mh2
        se = self.se_model(sparse_sign_models(), row_orthogonal_measure(0.4), 0.4)
        st = se_fixed_point(se, tol=1e-12).state
        assert 1 / st.chi1x == pytest.approx(st.qh1x + st.qh2x, abs=1e-9)
        assert 1 / st.chi1z == pytest.approx(st.qh1z + st.qh2z, abs=1e-9)
        assert st.m1x / (st.t_x * st.chi1x) == pytest.approx(
            st.mh1x + st.mh2x, abs=1e-9)
        assert st.m1z / (st.t_z * st.chi1z) == pytest.approx(
            st.mh1z + st.mh2z, abs=1e-9)

    def test_non_convergence_is_reported_not_raised(self):
        se = self.se_model(sparse_sign_models(), row_orthogonal_measure(0.4), 0.4)
        fp = se_fixed_point(se, max_iter=2)
        assert not fp.converged
        assert fp.residual > 0


class TestSaddleResidual:
    def se_model(self):
        return SEModel(models=sparse_sign_models(), measure=row_orthogonal_measure(0.4),
                       delta=0.4)

    def test_fixed_point_residual_small(self):
        se = self.se_model()
        fp = se_fixed_point(se, tol=1e-12)
        assert rs_saddle_residual(fp.state, se) < 1e-9

    def test_perturbation_sensitivity(self):
        from dataclasses import replace
        se = self.se_model()
        st = se_fixed_point(se, tol=1e-12).state
        bumped = replace(st, qh1x=st.qh1x + 1e-3)
        assert rs_saddle_residual(bumped, se) >= 1e-4

    def test_generic_state_large_residual(self):
        se = self.se_model()
        st = default_init(se.t_x, se.t_z)
        assert rs_saddle_residual(st, se) > 0.01


class TestQuadratureConvergence:
    def test_node_doubling_at_probe_points(self):
        # all SE outputs move < 1e-8 when the node count doubles
        for models, t_z, probe in [
            (sparse_sign_models(), 0.1, (0.3, 0.2, 0.8)),
            (perceptron_models(), 1.0, (0.0, 0.7, 1.2)),
        ]:
            mh, ch, qh = probe
            a = se_factorized_x(models, mh, ch, qh, n_nodes=121, check=False)
            b = se_factorized_x(models, mh, ch, qh, n_nodes=243, check=False)
            assert max(abs(u - v) for u, v in zip(a, b)) < 1e-8
            a = se_factorized_z(models, t_z, mh, ch, qh, n_nodes=121, check=False)
            b = se_factorized_z(models, t_z, mh, ch, qh, n_nodes=243, check=False)
            assert max(abs(u - v) for u, v in zip(a, b)) < 1e-8
