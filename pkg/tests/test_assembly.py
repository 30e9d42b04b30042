#!/usr/bin/env python3
"""
Tests for matrix and load assembly on trimmed domains.
"""

import sys
from pathlib import Path

import numpy as np
import pytest
import scipy.io

# Add the parent directory to the path so we can import pytrimlab
sys.path.insert(0, str(Path(__file__).parent.parent))

from pytrimlab.assembly import (
    DofMap,
    MatrixKind,
    SymmetricSparseMatrix,
    apply_strong_dirichlet,
    assemble,
    assemble_load,
    assemble_matrices,
    boundary_dofs,
    combine,
    evaluate_field,
    export_matrix,
    l2_rhs,
    manufactured_rhs,
    manufactured_solution,
)
from pytrimlab.catalog import catalog
from pytrimlab.errors import DimensionMismatch, NonInterpolatoryDof, ParameterOutOfRange
from pytrimlab.spline_basis import BasisSpec, build_tensor_basis
from pytrimlab.trim_geometry import HalfSpace, TensorMesh, TrimmedDomain, classify


def _ones(points):
    return np.ones(len(points))


def _untrimmed(spec, subdivisions, dim=2):
    mesh = TensorMesh.uniform([0.0] * dim, [1.0] * dim, subdivisions)
    domain = TrimmedDomain([0.0] * dim, [1.0] * dim, HalfSpace([1.0] * dim, 10.0))
    classification = classify(mesh, domain)
    basis = build_tensor_basis(spec.with_dim(dim), mesh)
    return basis, classification


class TestUntrimmed:
    """Matrices on the full box."""

    @pytest.fixture
    def system(self):
        basis, classification = _untrimmed(BasisSpec("bspline", (2,)), 4)
        dofmap = DofMap.from_classification(basis, classification)
        mass, stiffness = assemble_matrices(basis, classification, dofmap)
        return basis, classification, dofmap, mass, stiffness

    def test_all_functions_active(self, system):
        basis, _, dofmap, _, _ = system
        assert len(dofmap) == basis.n == 36

    def test_mass_total_is_area(self, system):
        *_, mass, _ = system
        assert mass.full.sum() == pytest.approx(1.0, abs=1e-13)

    def test_stiffness_kills_constants(self, system):
        *_, stiffness = system
        assert np.abs(stiffness @ np.ones(stiffness.dim)).max() < 1e-12

    def test_symmetric_storage(self, system):
        *_, mass, _ = system
        dense = mass.toarray()
        np.testing.assert_allclose(dense, dense.T)
        assert (mass.upper.tocoo().row <= mass.upper.tocoo().col).all()
        np.testing.assert_allclose(mass.diagonal(), np.diag(dense))

    def test_assemble_by_kind(self, system):
        basis, classification, dofmap, mass, stiffness = system
        picked = assemble(MatrixKind.STIFFNESS, basis, classification, dofmap)
        np.testing.assert_allclose(picked.toarray(), stiffness.toarray())
        picked = assemble("mass", basis, classification, dofmap)
        np.testing.assert_allclose(picked.toarray(), mass.toarray())


class TestTrimmed:
    """Integration over the inside part only."""

    @pytest.fixture
    def ridge(self):
        geometry = catalog("ridge", delta=0.1, delta_in_h=True)
        classification = geometry.classify()
        basis = build_tensor_basis(BasisSpec("bspline", (2, 2)), geometry.mesh)
        return geometry, basis, classification

    def test_inactive_functions_dropped(self, ridge):
        _, basis, classification = ridge
        dofmap = DofMap.from_classification(basis, classification)
        assert 0 < len(dofmap) < basis.n
        assert (dofmap.to_active(dofmap.active) == np.arange(len(dofmap))).all()

    def test_mass_total_is_domain_area(self, ridge):
        geometry, basis, classification = ridge
        mass, _ = assemble_matrices(basis, classification)
        assert mass.full.sum() == pytest.approx(geometry.analytic_area, abs=1e-12)

    def test_load_of_one_is_area(self, ridge):
        geometry, basis, classification = ridge
        b = assemble_load(_ones, basis, classification)
        assert b.sum() == pytest.approx(geometry.analytic_area, abs=1e-12)
        np.testing.assert_array_equal(l2_rhs(_ones, basis, classification), b)

    def test_active_diagonals_positive(self, ridge):
        _, basis, classification = ridge
        mass, stiffness = assemble_matrices(basis, classification)
        assert (mass.diagonal() > 0.0).all()
        assert (stiffness.diagonal() > 0.0).all()


class TestCombine:
    """a1 M + a2 K."""

    def test_linear_combination(self):
        mass = SymmetricSparseMatrix.from_full(np.array([[2.0, 1.0], [1.0, 2.0]]))
        stiffness = SymmetricSparseMatrix.from_full(np.array([[1.0, -1.0], [-1.0, 1.0]]))
        A = combine(0.5, mass, 2.0, stiffness)
        np.testing.assert_allclose(A.toarray(), [[3.0, -1.5], [-1.5, 3.0]])

    def test_negative_coefficient(self):
        mass = SymmetricSparseMatrix.from_full(np.eye(2))
        with pytest.raises(ParameterOutOfRange):
            combine(-1.0, mass, 1.0, mass)

    def test_both_zero(self):
        mass = SymmetricSparseMatrix.from_full(np.eye(2))
        with pytest.raises(ParameterOutOfRange):
            combine(0.0, mass, 0.0, mass)

    def test_shape_mismatch(self):
        with pytest.raises(DimensionMismatch):
            combine(
                1.0,
                SymmetricSparseMatrix.from_full(np.eye(2)),
                1.0,
                SymmetricSparseMatrix.from_full(np.eye(3)),
            )


class TestDirichlet:
    """Strong elimination of interpolatory boundary functions."""

    def test_one_dimensional_poisson_is_nodally_exact(self):
        """-u'' = 1 with u(0) = 0 and u'(1) = 0 gives u = x - x^2/2."""
        basis, classification = _untrimmed(BasisSpec("lagrange", (1,)), 4, dim=1)
        dofmap = DofMap.from_classification(basis, classification)
        _, stiffness = assemble_matrices(basis, classification, dofmap)
        b = assemble_load(_ones, basis, classification, dofmap)
        dofs = boundary_dofs(basis, dofmap, ["left"])
        assert dofs.tolist() == [0]
        reduced = apply_strong_dirichlet(stiffness, b, dofs, basis=basis, dofmap=dofmap)
        u = reduced.expand(np.linalg.solve(reduced.matrix.toarray(), reduced.rhs))
        x = np.linspace(0.0, 1.0, 5)
        np.testing.assert_allclose(u, x - x**2 / 2.0, atol=1e-13)

    def test_nonzero_values_lift_rhs(self):
        K = SymmetricSparseMatrix.from_full(np.array([[2.0, -1.0], [-1.0, 2.0]]))
        reduced = apply_strong_dirichlet(K, np.zeros(2), [0], values=3.0)
        np.testing.assert_allclose(reduced.rhs, [3.0])
        np.testing.assert_allclose(reduced.expand([1.5]), [3.0, 1.5])

    def test_interior_dof_rejected(self):
        basis, classification = _untrimmed(BasisSpec("bspline", (2,)), 4)
        dofmap = DofMap.from_classification(basis, classification)
        mass, _ = assemble_matrices(basis, classification, dofmap)
        interior = dofmap.to_active([basis.flat_index((2, 2))])
        with pytest.raises(NonInterpolatoryDof):
            apply_strong_dirichlet(mass, np.zeros(mass.dim), interior, basis=basis, dofmap=dofmap)

    def test_dof_on_other_side_rejected(self):
        """A function interpolatory on the right side cannot be fixed as a left-side dof."""
        basis, classification = _untrimmed(BasisSpec("bspline", (2,)), 4)
        dofmap = DofMap.from_classification(basis, classification)
        mass, _ = assemble_matrices(basis, classification, dofmap)
        left = boundary_dofs(basis, dofmap, ["left"])
        right = boundary_dofs(basis, dofmap, ["right"])
        reduced = apply_strong_dirichlet(mass, np.zeros(mass.dim), left, basis=basis, dofmap=dofmap, sides=["left"])
        assert len(reduced.free) == mass.dim - len(left)
        with pytest.raises(NonInterpolatoryDof) as info:
            apply_strong_dirichlet(
                mass, np.zeros(mass.dim), np.concatenate([left, right[:1]]),
                basis=basis, dofmap=dofmap, sides=["left"],
            )
        assert info.value.dofs == right[:1].tolist()
        apply_strong_dirichlet(
            mass, np.zeros(mass.dim), np.concatenate([left, right[:1]]), basis=basis, dofmap=dofmap
        )

    def test_sides_of_square(self):
        basis, classification = _untrimmed(BasisSpec("bspline", (2,)), 4)
        dofmap = DofMap.from_classification(basis, classification)
        assert len(boundary_dofs(basis, dofmap, ["bottom"])) == 6
        assert len(boundary_dofs(basis, dofmap, ["left", "right"])) == 12
        with pytest.raises(ParameterOutOfRange):
            boundary_dofs(basis, dofmap, ["front"])


class TestFieldsAndExport:
    """Evaluation and Matrix Market output."""

    def test_evaluate_greville_coefficients(self):
        basis, classification = _untrimmed(BasisSpec("bspline", (3,)), 3)
        dofmap = DofMap.from_classification(basis, classification)
        anchors = basis.greville()[dofmap.active]
        points = np.array([[0.1, 0.2], [0.55, 0.9], [1.0, 1.0]])
        values = evaluate_field(basis, dofmap, anchors[:, 0] + 2.0 * anchors[:, 1], points)
        np.testing.assert_allclose(values, points[:, 0] + 2.0 * points[:, 1], atol=1e-13)

    def test_nan_outside_domain(self):
        geometry = catalog("stretched_square", delta=0.5, delta_in_h=True)
        classification = geometry.classify()
        basis = build_tensor_basis(BasisSpec("bspline", (2, 2)), geometry.mesh)
        dofmap = DofMap.from_classification(basis, classification)
        values = evaluate_field(
            basis, dofmap, np.ones(len(dofmap)), [[0.1, 0.1], [0.9, 0.9]], geometry.domain
        )
        assert values[0] == pytest.approx(1.0)
        assert np.isnan(values[1])

    def test_export_matrix(self, tmp_path):
        A = SymmetricSparseMatrix.from_full(np.array([[4.0, 1.0, 0.0], [1.0, 3.0, 0.5], [0.0, 0.5, 2.0]]))
        path = tmp_path / "matrix.mtx"
        export_matrix(A, path, comment="test")
        np.testing.assert_allclose(scipy.io.mmread(str(path)).toarray(), A.toarray())

    def test_manufactured_rhs_is_minus_laplacian(self):
        points = np.array([[0.3, 0.4], [0.71, 0.2]])
        step = 1e-4
        laplacian = -4.0 * manufactured_solution(points)
        for d in range(2):
            for sign in (1.0, -1.0):
                shifted = points.copy()
                shifted[:, d] += sign * step
                laplacian += manufactured_solution(shifted)
        np.testing.assert_allclose(-laplacian / step**2, manufactured_rhs(points), rtol=1e-5, atol=1e-3)


if __name__ == "__main__":
    pytest.main([__file__, "-v"])
