"""Mass, stiffness and load assembly over the active part of a trimmed domain."""

import enum
import logging
from dataclasses import dataclass

import numpy as np
import scipy.io
import scipy.sparse as sp

from .errors import DimensionMismatch, EmptyActiveSet, NonInterpolatoryDof, ParameterOutOfRange

logger = logging.getLogger(__name__)

SIDES = {"left": (0, 0), "right": (0, -1), "bottom": (1, 0), "top": (1, -1)}


class MatrixKind(str, enum.Enum):
    MASS = "mass"
    STIFFNESS = "stiffness"


class DofMap:
    """Active basis functions and the map between global and active numbering.

    ``active[a]`` is the global index of active dof ``a``; ``local[g]`` is the
    active index of global function ``g`` or -1 when it is inactive.
    """

    def __init__(self, n_global, active, constrained=()):
        self.n_global = int(n_global)
        self.active = np.asarray(active, dtype=int)
        self.local = np.full(self.n_global, -1, dtype=int)
        self.local[self.active] = np.arange(len(self.active))
        self.constrained = np.asarray(sorted(constrained), dtype=int)

    def __len__(self):
        return len(self.active)

    def __repr__(self):
        return (
            f"DofMap(active={len(self.active)}/{self.n_global}, "
            f"constrained={len(self.constrained)})"
        )

    @property
    def free(self):
        return np.setdiff1d(np.arange(len(self.active)), self.constrained)

    def to_active(self, global_indices):
        return self.local[np.asarray(global_indices, dtype=int)]

    def to_global(self, active_indices):
        return self.active[np.asarray(active_indices, dtype=int)]

    def with_constraints(self, constrained):
        return DofMap(self.n_global, self.active, constrained)

    @classmethod
    def from_classification(cls, basis, classification):
        measure = support_measures(basis, classification)
        active = np.nonzero(measure > 0.0)[0]
        if not len(active):
            raise EmptyActiveSet()
        logger.debug("%d of %d functions active", len(active), basis.n)
        return cls(basis.n, active)


def support_measures(basis, classification):
    """Measure of supp(phi_i) inside the domain for every global function."""
    measure = np.zeros(basis.n)
    mesh = classification.mesh
    for e in classification.active_elements:
        functions = basis.element_functions(mesh.element_multi(e))
        measure[functions] += classification.measure[e]
    return measure


class SymmetricSparseMatrix:
    """Symmetric sparse matrix stored as its upper triangle with sorted rows."""

    def __init__(self, upper):
        upper = sp.csr_matrix(sp.triu(upper))
        upper.sum_duplicates()
        upper.sort_indices()
        self.upper = upper

    @classmethod
    def from_full(cls, matrix):
        return cls(sp.triu(sp.csr_matrix(matrix)))

    def __repr__(self):
        return f"SymmetricSparseMatrix(dim={self.dim}, nnz={self.upper.nnz})"

    @property
    def dim(self):
        return self.upper.shape[0]

    @property
    def shape(self):
        return self.upper.shape

    @property
    def full(self):
        strict = sp.triu(self.upper, k=1)
        return sp.csr_matrix(self.upper + strict.T)

    def diagonal(self):
        return self.upper.diagonal()

    def toarray(self):
        return self.full.toarray()

    def __matmul__(self, other):
        return self.full @ other

    def scaled(self, factor):
        return SymmetricSparseMatrix(factor * self.upper)

    def submatrix(self, rows):
        rows = np.asarray(rows, dtype=int)
        return SymmetricSparseMatrix(self.full[rows][:, rows])


def _element_rule(classification, quadrature, element):
    return (quadrature or classification.quadrature).rule(element)


def assemble_matrices(basis, classification, dofmap=None, quadrature=None):
    """
    Assemble mass and stiffness matrices in one pass over the active elements.

    Parameters
    ----------
    basis : TensorBasis
        Background basis on the mesh of ``classification``.

    classification : CutClassification
        Element statuses; its quadrature is used unless ``quadrature`` is given.

    dofmap : DofMap, optional
        Active numbering; built from the classification if omitted.

    quadrature : CutQuadrature, optional
        Rules per element.

    Returns
    -------
    mass, stiffness : SymmetricSparseMatrix
        Matrices over the active dofs.
    """
    if dofmap is None:
        dofmap = DofMap.from_classification(basis, classification)
    mesh = classification.mesh
    rows, cols, mass_values, stiff_values = [], [], [], []

    for e in classification.active_elements:
        rule = _element_rule(classification, quadrature, e)
        if not len(rule.weights):
            continue
        functions, values, gradients = basis.evaluate(
            mesh.element_multi(e), rule.points, deriv=True
        )
        local = dofmap.to_active(functions)
        weighted = values * rule.weights[:, None]
        element_mass = weighted.T @ values
        element_stiff = np.einsum(
            "qid,qjd->ij", gradients * rule.weights[:, None, None], gradients
        )
        r, c = np.meshgrid(local, local, indexing="ij")
        upper = r <= c
        rows.append(r[upper])
        cols.append(c[upper])
        mass_values.append(element_mass[upper])
        stiff_values.append(element_stiff[upper])

    n = len(dofmap)
    if not rows:
        raise EmptyActiveSet()
    rows, cols = np.concatenate(rows), np.concatenate(cols)
    mass = sp.coo_matrix((np.concatenate(mass_values), (rows, cols)), shape=(n, n))
    stiffness = sp.coo_matrix((np.concatenate(stiff_values), (rows, cols)), shape=(n, n))
    mass, stiffness = SymmetricSparseMatrix(mass), SymmetricSparseMatrix(stiffness)
    logger.info("assembled %d active dofs, nnz(upper) = %d", n, mass.upper.nnz)
    return mass, stiffness


def assemble(kind, basis, classification, dofmap=None, quadrature=None):
    mass, stiffness = assemble_matrices(basis, classification, dofmap, quadrature)
    return mass if MatrixKind(kind) is MatrixKind.MASS else stiffness


def combine(a1, mass, a2, stiffness):
    """A = a1 M + a2 K."""
    if mass.shape != stiffness.shape:
        raise DimensionMismatch(mass.shape, stiffness.shape)
    if a1 < 0 or a2 < 0 or a1 + a2 <= 0:
        raise ParameterOutOfRange("(a1, a2)", (a1, a2), "a1, a2 >= 0 and a1 + a2 > 0")
    return SymmetricSparseMatrix(a1 * mass.upper + a2 * stiffness.upper)


def assemble_load(f, basis, classification, dofmap=None, quadrature=None):
    """b_i = integral of f phi_i over the domain; ``f`` maps (npts, dim) points to values."""
    if dofmap is None:
        dofmap = DofMap.from_classification(basis, classification)
    mesh = classification.mesh
    load = np.zeros(len(dofmap))
    for e in classification.active_elements:
        rule = _element_rule(classification, quadrature, e)
        if not len(rule.weights):
            continue
        functions, values = basis.evaluate(mesh.element_multi(e), rule.points)
        fx = np.asarray(f(rule.points), dtype=float)
        np.add.at(load, dofmap.to_active(functions), values.T @ (fx * rule.weights))
    return load


l2_rhs = assemble_load


def boundary_dofs(basis, dofmap, sides):
    """Active indices of the functions interpolatory on the named box sides."""
    multi = basis.multi_index(dofmap.active)
    chosen = np.zeros(len(dofmap), dtype=bool)
    for side in sides:
        if side not in SIDES:
            raise ParameterOutOfRange("side", side, sorted(SIDES))
        direction, end = SIDES[side]
        if direction >= basis.dim:
            raise ParameterOutOfRange("side", side, "a side of the box")
        index = 0 if end == 0 else basis.shape[direction] - 1
        chosen |= multi[direction] == index
    return np.nonzero(chosen)[0]


@dataclass
class ReducedSystem:
    """System on the free dofs after eliminating strongly constrained ones."""

    matrix: SymmetricSparseMatrix
    rhs: np.ndarray
    free: np.ndarray
    constrained: np.ndarray
    values: np.ndarray

    def expand(self, solution):
        full = np.zeros(len(self.free) + len(self.constrained))
        full[self.free] = solution
        full[self.constrained] = self.values
        return full


def apply_strong_dirichlet(matrix, vector, dofs, values=0.0, basis=None, dofmap=None, sides=None):
    """
    Eliminate the rows and columns of ``dofs`` and lift the right-hand side.

    When ``basis`` and ``dofmap`` are given, every constrained function must be
    interpolatory on one of ``sides``, or on any side of the box when ``sides``
    is None.
    """
    dofs = np.asarray(sorted(set(np.asarray(dofs, dtype=int).tolist())), dtype=int)
    values = np.broadcast_to(np.asarray(values, dtype=float), dofs.shape).copy()
    if basis is not None and dofmap is not None and sides is not None:
        stray = np.setdiff1d(dofs, boundary_dofs(basis, dofmap, sides))
        if len(stray):
            raise NonInterpolatoryDof(stray.tolist())
    elif basis is not None and dofmap is not None:
        multi = basis.multi_index(dofmap.to_global(dofs))
        on_side = np.zeros(len(dofs), dtype=bool)
        for d in range(basis.dim):
            on_side |= (multi[d] == 0) | (multi[d] == basis.shape[d] - 1)
        if not on_side.all():
            raise NonInterpolatoryDof(dofs[~on_side].tolist())

    free = np.setdiff1d(np.arange(matrix.dim), dofs)
    full = matrix.full
    rhs = np.asarray(vector, dtype=float)[free] - full[free][:, dofs] @ values
    reduced = SymmetricSparseMatrix(full[free][:, free])
    return ReducedSystem(reduced, rhs, free, dofs, values)


def evaluate_field(basis, dofmap, coefficients, points, domain=None):
    """Values of sum_a c_a phi_a at points; NaN where ``domain`` excludes the point."""
    points = np.atleast_2d(np.asarray(points, dtype=float))
    full = np.zeros(basis.n)
    full[dofmap.active] = coefficients
    located = np.stack(
        [b.locate(points[:, d]) for d, b in enumerate(basis.bases)], axis=1
    )
    out = np.zeros(len(points))
    groups = np.unique(located, axis=0, return_inverse=True)
    elements, inverse = groups[0], np.ravel(groups[1])
    for k, element in enumerate(elements):
        mask = inverse == k
        functions, values = basis.evaluate(tuple(element), points[mask])
        out[mask] = values @ full[functions]
    if domain is not None:
        out[~domain.contains(points)] = np.nan
    return out


def export_matrix(matrix, path, comment=""):
    """Write a matrix in Matrix Market coordinate format with symmetric storage."""
    scipy.io.mmwrite(str(path), matrix.full.tocoo(), comment=comment, symmetry="symmetric")
    logger.info("wrote %s (%d x %d)", path, *matrix.shape)


# Manufactured Poisson problem on the slot plate: u = g(x) sin(pi y)
# with g = x(1-x) sin^2(3 pi x).


def manufactured_solution(points):
    x, y = points[:, 0], points[:, 1]
    return x * (1.0 - x) * np.sin(3.0 * np.pi * x) ** 2 * np.sin(np.pi * y)


def manufactured_rhs(points):
    """-Laplacian of the manufactured solution."""
    x, y = points[:, 0], points[:, 1]
    s = (1.0 - np.cos(6.0 * np.pi * x)) / 2.0
    g = x * (1.0 - x) * s
    g2 = (
        -2.0 * s
        + 2.0 * (1.0 - 2.0 * x) * 3.0 * np.pi * np.sin(6.0 * np.pi * x)
        + (x - x**2) * 18.0 * np.pi**2 * np.cos(6.0 * np.pi * x)
    )
    return (np.pi**2 * g - g2) * np.sin(np.pi * y)
