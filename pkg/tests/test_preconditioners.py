#!/usr/bin/env python3
"""
Tests for the Jacobi, SIPIC, additive Schwarz and deflation preconditioners.
"""

import sys
from pathlib import Path

import numpy as np
import pytest
import scipy.sparse as sp

# Add the parent directory to the path so we can import pytrimlab
sys.path.insert(0, str(Path(__file__).parent.parent))

from pytrimlab.assembly import DofMap, SymmetricSparseMatrix
from pytrimlab.catalog import catalog
from pytrimlab.errors import (
    BlockFactorizationFailure,
    CoarseFactorizationFailure,
    NonpositiveDiagonal,
    ParameterOutOfRange,
    SipicNoConvergence,
)
from pytrimlab.preconditioners import (
    BlockStrategy,
    SchwarzBlocks,
    build_jacobi,
    deflation_build,
    project,
    rank_reduce,
    recover,
    scaled_matrix,
    schwarz_build,
    select_blocks,
    sipic_build,
    weak_support_set,
)
from pytrimlab.spline_basis import BasisSpec, build_tensor_basis


def _spd(n, seed=0):
    rng = np.random.default_rng(seed)
    B = rng.standard_normal((n, n))
    return B @ B.T + n * np.eye(n)


@pytest.fixture
def line_setup():
    """Trimmed line on 8 elements; element 6 keeps a quarter, element 7 is outside."""

    def build(kind):
        geometry = catalog("trimmed_line", delta=0.25, delta_in_h=True, subdivisions=8)
        classification = geometry.classify()
        basis = build_tensor_basis(BasisSpec(kind, (2,)), geometry.mesh)
        dofmap = DofMap.from_classification(basis, classification)
        return basis, classification, dofmap

    return build


class TestJacobi:
    """Diagonal scaling."""

    def test_scaled_matrix_has_unit_diagonal(self):
        A = _spd(6)
        jacobi = build_jacobi(A)
        np.testing.assert_allclose(jacobi.D, np.sqrt(np.diag(A)))
        A_hat = scaled_matrix(A, jacobi)
        np.testing.assert_array_equal(np.diag(A_hat), np.ones(6))
        np.testing.assert_allclose(A_hat, A / np.outer(jacobi.D, jacobi.D))

    def test_symmetric_storage_kept(self):
        A = SymmetricSparseMatrix.from_full(_spd(5, seed=2))
        A_hat = scaled_matrix(A, build_jacobi(A))
        assert isinstance(A_hat, SymmetricSparseMatrix)
        np.testing.assert_allclose(A_hat.diagonal(), np.ones(5))

    def test_nonpositive_diagonal(self):
        with pytest.raises(NonpositiveDiagonal) as info:
            build_jacobi(np.diag([1.0, 0.0, 2.0]))
        assert info.value.index == 1

    def test_rhs_and_solution_scaling(self):
        A = _spd(4, seed=3)
        jacobi = build_jacobi(A)
        b = np.arange(1.0, 5.0)
        x_hat = np.linalg.solve(scaled_matrix(A, jacobi), jacobi.scale_rhs(b))
        np.testing.assert_allclose(jacobi.unscale_solution(x_hat), np.linalg.solve(A, b))


class TestSipic:
    """Energy orthonormalization of strongly coupled groups."""

    def test_nothing_flagged_below_threshold(self):
        c = 1.0 / np.sqrt(2.0)
        G = np.array([[1.0, c, 0.0], [c, 1.0, c], [0.0, c, 1.0]])
        transform = sipic_build(G, zeta=0.9)
        assert transform.converged
        assert transform.sweeps == 0
        np.testing.assert_allclose(transform.T.toarray(), np.eye(3))

    def test_flagged_pair_becomes_orthonormal(self):
        A_hat = np.array([[1.0, 0.99, 0.1], [0.99, 1.0, 0.0], [0.1, 0.0, 1.0]])
        transform = sipic_build(A_hat, zeta=0.9)
        assert transform.converged
        assert transform.sweeps == 1
        T = transform.T.toarray()
        transformed = T.T @ A_hat @ T
        np.testing.assert_allclose(np.diag(transformed), np.ones(3), atol=1e-12)
        assert abs(transformed[0, 1]) < 1e-12
        assert np.abs(transformed - np.eye(3)).max() <= 0.9

    def test_apply_matches_dense(self):
        A_hat = np.array([[1.0, 0.95], [0.95, 1.0]])
        transform = sipic_build(A_hat)
        r = np.array([1.0, -2.0])
        np.testing.assert_allclose(transform.apply(r), transform.to_dense() @ r)

    def test_solve_transformed(self):
        A_hat = np.array([[1.0, 0.95, 0.0], [0.95, 1.0, 0.2], [0.0, 0.2, 1.0]])
        transform = sipic_build(A_hat)
        b = np.array([1.0, 2.0, 3.0])
        np.testing.assert_allclose(transform.solve_transformed(b), np.linalg.solve(A_hat, b))

    def test_sweep_limit_reported(self):
        A_hat = np.array([[1.0, 0.99], [0.99, 1.0]])
        transform = sipic_build(A_hat, max_sweeps=0)
        assert not transform.converged
        assert transform.report()["sweeps"] == 0

    def test_sweep_limit_strict(self):
        A_hat = np.array([[1.0, 0.99], [0.99, 1.0]])
        with pytest.raises(SipicNoConvergence) as info:
            sipic_build(A_hat, max_sweeps=0, strict=True)
        assert info.value.flagged == 1

    @pytest.mark.parametrize("zeta", [0.0, 1.0, 1.5])
    def test_zeta_range(self, zeta):
        with pytest.raises(ParameterOutOfRange):
            sipic_build(np.eye(2), zeta=zeta)


class TestSchwarzBlocks:
    """Block selection on the trimmed line."""

    def test_cut_elements(self, line_setup):
        blocks = select_blocks(BlockStrategy.CUT_ELEMENTS, *line_setup("bspline"))
        assert [b.tolist() for b in blocks.blocks[:1]] == [[6, 7, 8]]
        assert blocks.n_singletons == 6
        assert blocks.covered(9).all()

    def test_support_intersection(self, line_setup):
        blocks = select_blocks("support_intersection", *line_setup("bspline"))
        real = [b.tolist() for b in blocks.blocks[: len(blocks) - blocks.n_singletons]]
        assert real == [[4, 5, 6, 7, 8], [5, 6, 7, 8], [6, 7, 8]]
        assert blocks.n_singletons == 4

    def test_support_containment(self, line_setup):
        blocks = select_blocks(BlockStrategy.SUPPORT_CONTAINMENT, *line_setup("bspline"))
        real = [b.tolist() for b in blocks.blocks[: len(blocks) - blocks.n_singletons]]
        assert real == [[6, 7, 8], [7, 8], [8]]


class TestSchwarzPreconditioner:
    """Application of the block inverses."""

    def test_single_block_is_exact_inverse(self):
        A = _spd(5, seed=4)
        blocks = SchwarzBlocks([np.arange(5)], BlockStrategy.CUT_ELEMENTS)
        S = schwarz_build(A, blocks)
        np.testing.assert_allclose(S.to_dense() @ A, np.eye(5), atol=1e-12)

    def test_singletons_are_jacobi(self):
        A_hat = scaled_matrix(_spd(4, seed=5), build_jacobi(_spd(4, seed=5)))
        blocks = SchwarzBlocks([np.array([i]) for i in range(4)], BlockStrategy.CUT_ELEMENTS, 4)
        S = schwarz_build(A_hat, blocks)
        np.testing.assert_allclose(S.to_dense(), np.eye(4))

    def test_overlapping_blocks_add(self):
        A = sp.csr_matrix(_spd(4, seed=6))
        blocks = SchwarzBlocks([np.array([0, 1]), np.array([1, 2, 3])], BlockStrategy.SUPPORT_INTERSECTION)
        S = schwarz_build(A, blocks)
        dense = A.toarray()
        expected = np.zeros((4, 4))
        for block in blocks.blocks:
            expected[np.ix_(block, block)] += np.linalg.inv(dense[np.ix_(block, block)])
        np.testing.assert_allclose(S.to_dense(), expected, atol=1e-12)
        np.testing.assert_allclose(S @ np.ones(4), expected @ np.ones(4), atol=1e-12)

    def test_singular_block_truncated(self):
        A = np.array([[1.0, 1.0, 0.0], [1.0, 1.0, 0.0], [0.0, 0.0, 1.0]])
        blocks = SchwarzBlocks([np.array([0, 1]), np.array([2])], BlockStrategy.CUT_ELEMENTS, 1)
        S = schwarz_build(A, blocks)
        assert S.truncated == 1
        np.testing.assert_allclose(S.to_dense()[:2, :2], np.full((2, 2), 0.25), atol=1e-12)

    def test_negative_block_fails(self):
        A = -np.eye(2)
        blocks = SchwarzBlocks([np.array([0, 1])], BlockStrategy.CUT_ELEMENTS)
        with pytest.raises(BlockFactorizationFailure):
            schwarz_build(A, blocks)


class TestWeakSupport:
    """Weakly supported functions and rank reduction."""

    def test_untrimmed_is_empty(self):
        geometry = catalog("stretched_square", delta=1.0, delta_in_h=True, subdivisions=4)
        classification = geometry.classify()
        basis = build_tensor_basis(BasisSpec("bspline", (2, 2)), geometry.mesh)
        dofmap = DofMap.from_classification(basis, classification)
        # side 0.5 + h lands on a grid line, so nothing is cut
        assert classification.counts()["cut"] == 0
        assert len(weak_support_set(basis, classification, dofmap)) == 0

    def test_line_bspline_has_one(self, line_setup):
        assert weak_support_set(*line_setup("bspline")).tolist() == [8]

    def test_line_lagrange(self, line_setup):
        assert weak_support_set(*line_setup("lagrange")).tolist() == [13, 14]

    def test_pair_sharing_cut_element_kept(self, line_setup):
        basis, classification, dofmap = line_setup("lagrange")
        kept = rank_reduce([13, 14], 0.5, basis, classification, dofmap)
        assert kept.tolist() == [13, 14]

    def test_small_tau_removes_pair(self, line_setup):
        basis, classification, dofmap = line_setup("lagrange")
        assert len(rank_reduce([13, 14], 0.1, basis, classification, dofmap)) == 0

    def test_isolated_function_removed(self, line_setup):
        basis, classification, dofmap = line_setup("bspline")
        assert len(rank_reduce([8], 1.0, basis, classification, dofmap)) == 0

    def test_partner_reaching_inside_does_not_count(self, line_setup):
        basis, classification, dofmap = line_setup("bspline")
        assert len(rank_reduce([6, 7, 8], 1.0, basis, classification, dofmap)) == 0

    def test_tau_range(self, line_setup):
        with pytest.raises(ParameterOutOfRange):
            rank_reduce([6, 7], 0.0, *line_setup("bspline"))

    def test_ridge_corner_reduction(self):
        """Cubic splines on the corner ridge: only the functions on the tip triangles survive."""
        geometry = catalog("ridge")
        classification = geometry.classify()
        basis = build_tensor_basis(BasisSpec("bspline", (3, 3)), geometry.mesh)
        dofmap = DofMap.from_classification(basis, classification)
        weak = weak_support_set(basis, classification, dofmap)
        assert len(weak) == 24
        kept = rank_reduce(weak, 0.1, basis, classification, dofmap)
        assert len(kept) == 5
        boxes = np.array([basis.support_box(g) for g in dofmap.to_global(kept)])
        assert (boxes[:, 1, 0] == 12).all()
        assert sorted(boxes[:, 0, 0].tolist()) == [4, 5, 6, 7, 8]
        assert len(rank_reduce(weak, 1.0, basis, classification, dofmap)) > 5


class TestDeflation:
    """Projection onto the complement of the coarse space."""

    @pytest.fixture
    def system(self):
        A = _spd(6, seed=7)
        return A, deflation_build(A, [1, 4])

    def test_projection_annihilates_coarse_columns(self, system):
        A, space = system
        for column in (1, 4):
            np.testing.assert_allclose(project(space, A[:, column]), 0.0, atol=1e-12)

    def test_projected_dense(self, system):
        A, space = system
        P = np.column_stack([space.project(e) for e in np.eye(6)])
        np.testing.assert_allclose(space.projected_dense(), P @ A, atol=1e-12)

    def test_recover_solves_original_system(self, system):
        A, space = system
        b = np.linspace(-1.0, 2.0, 6)
        PA = space.projected_dense()
        x_tilde = np.linalg.lstsq(PA, space.project(b), rcond=None)[0]
        np.testing.assert_allclose(recover(space, x_tilde, b), np.linalg.solve(A, b), atol=1e-10)

    def test_empty_space_is_identity(self):
        A = _spd(3)
        space = deflation_build(A, [])
        v = np.array([1.0, 2.0, 3.0])
        assert space.rank == 0
        np.testing.assert_array_equal(space.project(v), v)
        np.testing.assert_array_equal(space.recover(v, v), v)

    def test_duplicate_indices(self):
        with pytest.raises(ParameterOutOfRange):
            deflation_build(_spd(3), [1, 1])

    def test_index_out_of_range(self):
        with pytest.raises(ParameterOutOfRange):
            deflation_build(_spd(3), [3])

    def test_indefinite_coarse_matrix(self):
        A = np.diag([1.0, -1.0, 1.0])
        with pytest.raises(CoarseFactorizationFailure):
            deflation_build(A, [1])

    def test_singular_coarse_matrix_truncated(self):
        """Two identical deflation columns leave a rank-one coarse matrix."""
        A = np.array(
            [
                [1.0, 1.0, 0.1, 0.0],
                [1.0, 1.0, 0.1, 0.0],
                [0.1, 0.1, 1.0, 0.2],
                [0.0, 0.0, 0.2, 1.0],
            ]
        )
        space = deflation_build(A, [0, 1])
        assert space.dropped == 1
        assert space.report()["dropped"] == 1
        np.testing.assert_allclose(project(space, A[:, 0]), 0.0, atol=1e-12)
        np.testing.assert_allclose(space.projected_dense()[:, [0, 1]], 0.0, atol=1e-12)

    def test_zero_coarse_matrix(self):
        A = np.zeros((3, 3))
        A[2, 2] = 1.0
        with pytest.raises(CoarseFactorizationFailure):
            deflation_build(A, [0])


class TestProjectorProperties:
    """Algebraic properties of P = I - A Z E^{-1} Z^T."""

    @pytest.fixture(params=[(8, [0, 5], 1), (12, [1, 2, 3, 9], 2), (20, [4, 7, 11, 13, 19], 3)])
    def space(self, request):
        n, indices, seed = request.param
        A = _spd(n, seed=seed)
        return A, deflation_build(A, indices)

    def _P(self, space):
        return np.column_stack([space.project(e) for e in np.eye(space.n)])

    def test_idempotent(self, space):
        _, deflation = space
        P = self._P(deflation)
        np.testing.assert_allclose(P @ P, P, atol=1e-8)

    def test_pa_equals_a_pt(self, space):
        A, deflation = space
        P = self._P(deflation)
        np.testing.assert_allclose(P @ A, A @ P.T, atol=1e-8)

    def test_pa_semidefinite_with_rank_nullity(self, space):
        A, deflation = space
        PA = deflation.projected_dense()
        eigenvalues = np.linalg.eigvalsh((PA + PA.T) / 2.0)
        scale = eigenvalues[-1]
        assert eigenvalues[0] >= -1e-10 * scale
        assert (np.abs(eigenvalues) <= 1e-10 * scale).sum() == deflation.rank

    def test_deflated_eigenvectors_become_zero(self):
        """Coordinate eigenvectors in the coarse space take their eigenvalues to zero."""
        rest = _spd(6, seed=11)
        A = np.zeros((8, 8))
        A[0, 0], A[7, 7] = 1e-6, 3e-7
        A[1:7, 1:7] = rest
        space = deflation_build(A, [0, 7])
        eigenvalues = np.linalg.eigvalsh(space.projected_dense())
        np.testing.assert_allclose(eigenvalues[:2], 0.0, atol=1e-10)
        np.testing.assert_allclose(eigenvalues[2:], np.linalg.eigvalsh(rest), rtol=1e-10)


if __name__ == "__main__":
    pytest.main([__file__, "-v"])
