#!/usr/bin/env python3
"""
Tests for dense spectra, condition numbers and slope fits.
"""

import sys
from pathlib import Path

import numpy as np
import pytest

# Add the parent directory to the path so we can import pytrimlab
sys.path.insert(0, str(Path(__file__).parent.parent))

from pytrimlab.errors import (
    DenseCapExceeded,
    GeneralizedNotSPD,
    NonpositiveSample,
    ParameterOutOfRange,
    PrecisionLimited,
)
from pytrimlab.preconditioners import (
    BlockStrategy,
    SchwarzBlocks,
    build_jacobi,
    deflation_build,
    scaled_matrix,
    schwarz_build,
    sipic_build,
)
from pytrimlab.spectra import (
    dense_spectrum,
    graded_smallest,
    preconditioned_spectrum,
    slope_fit,
    unscaled_spectrum,
)


def _spd(n, seed=0):
    rng = np.random.default_rng(seed)
    B = rng.standard_normal((n, n))
    return B @ B.T + 0.1 * np.eye(n)


class TestDenseSpectrum:
    """Standard and generalized eigenvalues."""

    def test_condition_number(self):
        report = dense_spectrum(np.diag([4.0, 1.0, 2.0]))
        np.testing.assert_allclose(report.eigenvalues, [1.0, 2.0, 4.0])
        assert report.kappa == pytest.approx(4.0)
        assert not report.nullity_mismatch

    def test_declared_zero_skipped(self):
        laplacian = np.array([[1.0, -1.0, 0.0], [-1.0, 2.0, -1.0], [0.0, -1.0, 1.0]])
        report = dense_spectrum(laplacian, zero_count=1)
        assert report.lambda_min == pytest.approx(1.0)
        assert report.kappa == pytest.approx(3.0)
        assert report.numerical_nullity() == 1
        assert not report.nullity_mismatch

    def test_nullity_mismatch_flagged(self):
        report = dense_spectrum(np.diag([0.0, 1.0, 2.0]), zero_count=0)
        assert report.nullity_mismatch

    def test_generalized(self):
        A = np.diag([2.0, 6.0])
        B = np.diag([1.0, 2.0])
        report = dense_spectrum(A, B)
        np.testing.assert_allclose(report.eigenvalues, [2.0, 3.0])
        assert report.method == "dense-generalized"

    def test_generalized_needs_spd(self):
        with pytest.raises(GeneralizedNotSPD):
            dense_spectrum(np.eye(2), np.diag([1.0, -1.0]))

    def test_dense_cap(self):
        with pytest.raises(DenseCapExceeded):
            dense_spectrum(np.eye(5), dense_cap=4)

    def test_effective_kappa_and_first(self):
        report = dense_spectrum(np.diag([1e-8, 1.0, 2.0, 10.0]))
        assert report.kappa_eff(1) == pytest.approx(10.0)
        np.testing.assert_allclose(report.first(2), [1e-8, 1.0])

    def test_effective_kappa_never_exceeds_kappa(self):
        report = dense_spectrum(_spd(12, seed=5))
        kappas = [report.kappa_eff(r) for r in range(6)]
        assert kappas[0] == pytest.approx(report.kappa)
        assert all(k <= report.kappa for k in kappas)
        assert all(a >= b for a, b in zip(kappas, kappas[1:]))


class TestPrecisionLimit:
    """Condition numbers whose smallest eigenvalue is rounding noise."""

    def test_resolved_smallest(self):
        report = dense_spectrum(np.diag([1e-12, 0.5, 1.0]))
        assert not report.precision_limited
        assert report.kappa == pytest.approx(1e12)

    @pytest.mark.parametrize("smallest", [-3e-17, 0.0, 1e-16])
    def test_unresolved_smallest_raises(self, smallest):
        report = dense_spectrum(np.diag([smallest, 0.5, 1.0]))
        assert report.precision_limited
        with pytest.raises(PrecisionLimited) as info:
            report.kappa
        assert info.value.lambda_min == pytest.approx(smallest)
        assert info.value.floor == pytest.approx(report.precision_floor)

    def test_effective_kappa_below_floor(self):
        report = dense_spectrum(np.diag([1e-17, 1e-16, 1.0, 2.0]))
        with pytest.raises(PrecisionLimited):
            report.kappa_eff(1)
        assert report.kappa_eff(2) == pytest.approx(2.0)

    def test_graded_value_not_limited(self):
        """A positive graded smallest eigenvalue below the floor still gives a condition number."""
        D = np.array([1.0, 1.0, 1e-9])
        A_hat = np.array([[1.0, 0.5, 0.0], [0.5, 1.0, 0.5], [0.0, 0.5, 1.0]])
        A = D[:, None] * A_hat * D[None, :]
        report = unscaled_spectrum(A, A_hat, D)
        assert report.lambda_min < report.precision_floor
        assert not report.precision_limited
        assert report.kappa > 1e16

    def test_nonpositive_graded_value_limited(self):
        report = dense_spectrum(np.diag([1.0, 2.0]))
        report.smallest_override = -1e-20
        assert report.precision_limited
        with pytest.raises(PrecisionLimited):
            report.kappa


class TestUnscaled:
    """Smallest eigenvalue through the Jacobi-scaled matrix."""

    def test_graded_matches_dense(self):
        A = _spd(8, seed=1)
        jacobi = build_jacobi(A)
        A_hat = scaled_matrix(A, jacobi)
        assert graded_smallest(A_hat, jacobi) == pytest.approx(np.linalg.eigvalsh(A)[0], rel=1e-10)

    def test_strongly_graded_matrix(self):
        """A diagonal scaling of 1e-9 is invisible to the graded value."""
        D = np.array([1.0, 1.0, 1e-9])
        A_hat = np.array([[1.0, 0.5, 0.0], [0.5, 1.0, 0.5], [0.0, 0.5, 1.0]])
        A = D[:, None] * A_hat * D[None, :]
        report = unscaled_spectrum(A, A_hat, D)
        assert report.method == "dense-graded"
        expected = 1.0 / np.linalg.eigvalsh(np.linalg.inv(A_hat) / np.outer(D, D))[-1]
        assert report.lambda_min == pytest.approx(expected, rel=1e-8)
        assert report.lambda_min > 0.0

    def test_singular_keeps_dense_value(self):
        K = np.array([[1.0, -1.0], [-1.0, 1.0]])
        jacobi = build_jacobi(K)
        report = unscaled_spectrum(K, scaled_matrix(K, jacobi), jacobi, zero_count=1)
        assert report.smallest_override is None
        assert report.lambda_min == pytest.approx(2.0)


class TestPreconditioned:
    """Spectra of the preconditioned operators."""

    @pytest.fixture
    def A_hat(self):
        A = _spd(10, seed=2)
        return scaled_matrix(A, build_jacobi(A))

    def test_jacobi_is_scaled_matrix(self, A_hat):
        report = preconditioned_spectrum(A_hat, build_jacobi(A_hat))
        np.testing.assert_allclose(report.eigenvalues, np.linalg.eigvalsh(A_hat), atol=1e-12)

    def test_exact_schwarz_gives_identity(self, A_hat):
        S = schwarz_build(A_hat, SchwarzBlocks([np.arange(10)], BlockStrategy.CUT_ELEMENTS))
        report = preconditioned_spectrum(A_hat, S)
        np.testing.assert_allclose(report.eigenvalues, np.ones(10), atol=1e-9)
        assert report.kappa == pytest.approx(1.0, abs=1e-8)

    def test_sipic_similarity(self, A_hat):
        transform = sipic_build(A_hat, zeta=0.3)
        report = preconditioned_spectrum(A_hat, transform)
        T = transform.T.toarray()
        expected = np.linalg.eigvalsh(T.T @ A_hat @ T)
        np.testing.assert_allclose(report.eigenvalues, expected, rtol=1e-8, atol=1e-12)

    def test_deflation_declares_rank_zeros(self, A_hat):
        space = deflation_build(A_hat, [2, 3, 7])
        report = preconditioned_spectrum(A_hat, deflation=space)
        assert report.zero_count == 3
        assert not report.nullity_mismatch
        original = np.linalg.eigvalsh(A_hat)
        assert report.lambda_min >= original[0] * (1.0 - 1e-10)
        assert report.lambda_max <= original[-1] * (1.0 + 1e-10)


class TestSlopeFit:
    """Log-log least squares."""

    def test_exact_power_law(self):
        xs = np.logspace(-4, -1, 10)
        fit = slope_fit(xs, 3.0 * xs**-2)
        assert fit.slope == pytest.approx(-2.0)
        assert fit.max_deviation < 1e-10
        assert fit.points == 10

    def test_last_decade(self):
        xs = np.logspace(-4, 0, 17)
        ys = np.where(xs <= 1.5e-3, xs**-3, xs**-1)
        fit = slope_fit(xs, ys, last_decade=True)
        assert fit.points == 5
        assert fit.slope == pytest.approx(-3.0)

    def test_nonpositive_sample(self):
        with pytest.raises(NonpositiveSample) as info:
            slope_fit([1.0, 2.0, 0.0, 4.0], [1.0, 1.0, 1.0, 1.0])
        assert info.value.index == 2

    def test_too_few_samples(self):
        with pytest.raises(ParameterOutOfRange):
            slope_fit([1.0, 2.0, 3.0], [1.0, 2.0, 3.0])


if __name__ == "__main__":
    pytest.main([__file__, "-v"])
