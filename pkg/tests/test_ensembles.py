"""Matrix ensembles and spectral measures."""

import numpy as np
import pytest
from scipy import integrate

from vampse.ensembles import (
    MeasurementMatrix,
    SpectralMeasure,
    empirical_spectrum,
    marchenko_pastur_measure,
    row_orthogonal_measure,
    sample_haar_with_spectrum,
    sample_iid_gaussian,
    sample_row_orthogonal,
    spectral_expectation,
)
from vampse.errors import (
    InvalidAspectError,
    InvalidMeasureError,
    InvalidParameterError,
    SpectralEvaluationError,
)


class TestRowOrthogonal:
    def test_small_exact_rows(self):
        a = sample_row_orthogonal(2, 5, rng=np.random.default_rng(0))
        np.testing.assert_allclose(a.entries @ a.entries.T, np.eye(2), atol=1e-14)

    def test_aat_identity_and_spectrum_counts(self):
        a = sample_row_orthogonal(410, 1024, rng=np.random.default_rng(1))
        gram = a.entries @ a.entries.T
        assert np.max(np.abs(gram - np.eye(410))) < 1e-10
        lam = empirical_spectrum(a).samples
        assert np.sum(np.abs(lam - 1.0) < 1e-10) == 410
        assert np.sum(np.abs(lam) < 1e-10) == 614

    def test_square_case_is_orthogonal(self):
        a = sample_row_orthogonal(4, 4, rng=np.random.default_rng(2))
        np.testing.assert_allclose(a.entries.T @ a.entries, np.eye(4), atol=1e-13)
        np.testing.assert_allclose(empirical_spectrum(a).samples, np.ones(4),
                                   atol=1e-13)

    def test_aspect_error(self):
        with pytest.raises(InvalidAspectError):
            sample_row_orthogonal(6, 5, rng=np.random.default_rng(0))

    def test_scale(self):
        a = sample_row_orthogonal(3, 8, scale=2.0, rng=np.random.default_rng(3))
        np.testing.assert_allclose(a.entries @ a.entries.T, 4.0 * np.eye(3),
                                   atol=1e-12)

    def test_svd_cache_invariants(self):
        a = sample_row_orthogonal(13, 40, rng=np.random.default_rng(4))
        a.validate()


class TestIidGaussian:
    def test_mean_eigenvalue_matches_trace_identity(self):
        # E tr(A^T A)/N = M/N; Monte-Carlo oracle on one large draw
        a = sample_iid_gaussian(1000, 1000, rng=np.random.default_rng(5))
        assert abs(np.mean(empirical_spectrum(a).samples) - 1.0) < 0.05

    def test_rank_deficiency(self):
        a = sample_iid_gaussian(400, 1000, rng=np.random.default_rng(6))
        lam = empirical_spectrum(a).samples
        assert np.sum(lam < 1e-20) == 600

    def test_seed_determinism(self):
        a = sample_iid_gaussian(2, 2, rng=np.random.default_rng(7))
        b = sample_iid_gaussian(2, 2, rng=np.random.default_rng(7))
        assert np.array_equal(a.entries, b.entries)

    def test_svd_cache_invariants(self):
        a = sample_iid_gaussian(24, 50, rng=np.random.default_rng(8))
        a.validate()


class TestHaarWithSpectrum:
    def test_atom_resolution(self):
        meas = SpectralMeasure(atoms=((1.0, 0.4), (0.0, 0.6)))
        a = sample_haar_with_spectrum(meas, 4, 10, rng=np.random.default_rng(9))
        np.testing.assert_allclose(np.sort(a.svd_s), np.ones(4), atol=1e-14)
        a.validate()

    def test_single_atom_square_is_haar_orthogonal(self):
        meas = SpectralMeasure(atoms=((1.0, 1.0),))
        a = sample_haar_with_spectrum(meas, 6, 6, rng=np.random.default_rng(10))
        np.testing.assert_allclose(a.entries.T @ a.entries, np.eye(6), atol=1e-12)

    def test_eigenvalues_from_atoms(self):
        meas = SpectralMeasure(atoms=((2.0, 0.5), (0.0, 0.5)))
        a = sample_haar_with_spectrum(meas, 8, 8, rng=np.random.default_rng(11))
        lam = np.sort(empirical_spectrum(a).samples)
        np.testing.assert_allclose(lam, [0, 0, 0, 0, 2, 2, 2, 2], atol=1e-12)

    def test_bad_mass_rejected_at_construction(self):
        with pytest.raises(InvalidMeasureError):
            SpectralMeasure(atoms=((1.0, 0.5), (0.0, 0.2)))

    def test_rank_overflow_rejected(self):
        meas = SpectralMeasure(atoms=((1.0, 0.9), (0.0, 0.1)))
        with pytest.raises(InvalidMeasureError):
            sample_haar_with_spectrum(meas, 4, 10, rng=np.random.default_rng(12))


class TestSpectralExpectation:
    def test_atom_sums(self):
        meas = SpectralMeasure(atoms=((1.0, 0.4), (0.0, 0.6)))
        assert spectral_expectation(meas, lambda l: l) == pytest.approx(0.4, abs=1e-15)
        assert spectral_expectation(meas, lambda l: 1 / (1 + l)) == pytest.approx(
            0.8, abs=1e-15)

    def test_mp_first_moment(self):
        # MP first moment equals delta by the trace identity
        for delta in (0.25, 0.4, 1.0, 1.015, 2.0):
            meas = marchenko_pastur_measure(delta)
            assert spectral_expectation(meas, lambda l: l) == pytest.approx(
                delta, abs=1e-8)

    def test_nonfinite_detected_with_offending_lambda(self):
        meas = SpectralMeasure(atoms=((1.0, 0.4), (0.0, 0.6)))
        with np.errstate(divide="ignore"), pytest.raises(SpectralEvaluationError) as err:
            spectral_expectation(meas, lambda l: 1.0 / l)
        assert err.value.lam == 0.0

    def test_empirical_is_plain_mean(self):
        lam = np.array([0.0, 1.0, 3.0, 4.0])
        meas = SpectralMeasure(samples=lam)
        f = lambda l: 1.0 / (1.0 + l)
        assert spectral_expectation(meas, f) == np.mean(f(lam))


class TestMarchenkoPastur:
    def test_atom_weight_below_one(self):
        meas = marchenko_pastur_measure(0.25)
        assert meas.atoms == ((0.0, 0.75),)

    def test_no_atom_at_one(self):
        meas = marchenko_pastur_measure(1.0)
        assert meas.atoms == ()
        assert meas.density.support == (0.0, 4.0)

    def test_invalid_delta(self):
        with pytest.raises(InvalidParameterError):
            marchenko_pastur_measure(0.0)

    def test_density_against_quadpack(self):
        # independent adaptive-quadrature oracle for a non-polynomial f
        meas = marchenko_pastur_measure(0.7)
        f = lambda l: np.exp(-l)
        oracle, _ = integrate.quad(lambda l: np.exp(-l) * meas.density.pdf(np.array(l)),
                                   *meas.density.support, limit=300)
        oracle += 0.3 * 1.0  # atom at zero
        assert spectral_expectation(meas, f) == pytest.approx(oracle, abs=1e-9)

    def test_empirical_histogram_matches_density(self):
        # Kolmogorov distance between sampled eigenvalues and the MP law
        a = sample_iid_gaussian(2048, 2048, rng=np.random.default_rng(13))
        lam = np.sort(empirical_spectrum(a).samples)
        meas = marchenko_pastur_measure(1.0)
        grid = np.linspace(1e-4, 4.0, 2000)
        pdf = meas.density.pdf(grid)
        cdf = np.concatenate([[0.0], np.cumsum((pdf[1:] + pdf[:-1]) / 2
                                               * np.diff(grid))])
        cdf_at = np.interp(lam, grid, cdf)
        emp = np.arange(1, lam.size + 1) / lam.size
        assert np.max(np.abs(emp - cdf_at)) < 0.05


class TestSerialization:
    def test_measure_json_roundtrip_atoms(self):
        meas = SpectralMeasure(atoms=((1.0, 0.4), (0.0, 0.6)))
        again = SpectralMeasure.from_json(meas.to_json())
        assert again.atoms == meas.atoms

    def test_measure_json_roundtrip_mp(self):
        meas = marchenko_pastur_measure(0.8)
        again = SpectralMeasure.from_json(meas.to_json())
        assert again.density.delta == 0.8
        assert again.atoms == meas.atoms

    def test_measure_json_roundtrip_empirical(self):
        meas = SpectralMeasure(samples=np.array([0.0, 1.0, 2.0]))
        again = SpectralMeasure.from_json(meas.to_json())
        np.testing.assert_array_equal(again.samples, meas.samples)

    def test_matrix_npz_roundtrip(self, tmp_path):
        a = sample_iid_gaussian(6, 9, rng=np.random.default_rng(14),
                                provenance="seed=14")
        path = tmp_path / "a.npz"
        a.save(path)
        b = MeasurementMatrix.load(path)
        assert np.array_equal(a.entries, b.entries)
        assert np.array_equal(a.svd_s, b.svd_s)
        assert b.provenance == "seed=14"
        b.validate()


class TestRowOrthogonalMeasure:
    def test_two_atoms(self):
        meas = row_orthogonal_measure(0.4)
        assert meas.atoms == ((1.0, 0.4), (0.0, 0.6))

    def test_square_single_atom(self):
        assert row_orthogonal_measure(1.0).atoms == ((1.0, 1.0),)

    def test_scale_squares_into_eigenvalue(self):
        meas = row_orthogonal_measure(0.5, scale=2.0)
        assert meas.atoms == ((4.0, 0.5), (0.0, 0.5))
