"""Jacobi, SIPIC, additive Schwarz and deflation preconditioners.

All preconditioners after Jacobi act on the Jacobi-scaled matrix
A_hat = D^{-1} A D^{-1}, which has unit diagonal.
"""

import enum
import logging
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg as la
import scipy.sparse as sp
import scipy.sparse.linalg as spla
from scipy.sparse.csgraph import connected_components

from .assembly import SymmetricSparseMatrix
from .errors import (
    BlockFactorizationFailure,
    CoarseFactorizationFailure,
    NonpositiveDiagonal,
    ParameterOutOfRange,
    SipicNoConvergence,
)
from .trim_geometry import Status

logger = logging.getLogger(__name__)


def as_operator_matrix(A):
    """Full (not triangular) sparse or dense form of a matrix argument."""
    if isinstance(A, SymmetricSparseMatrix):
        return A.full
    if sp.issparse(A):
        return sp.csr_matrix(A)
    return np.asarray(A, dtype=float)


def _dense(A):
    A = as_operator_matrix(A)
    return A.toarray() if sp.issparse(A) else A


def _principal(A, indices):
    """Dense principal submatrix A[I, I]."""
    sub = A[indices][:, indices]
    return sub.toarray() if sp.issparse(sub) else np.array(sub, dtype=float)


def _columns(A, indices):
    cols = A[:, indices]
    return cols.toarray() if sp.issparse(cols) else np.asarray(cols, dtype=float)


# Jacobi


@dataclass
class JacobiScaling:
    """Diagonal D = sqrt(diag(A)); A_hat = D^{-1} A D^{-1}."""

    D: np.ndarray

    def scale_rhs(self, b):
        return np.asarray(b) / self.D

    def unscale_solution(self, x_hat):
        return np.asarray(x_hat) / self.D

    def report(self):
        return {"kind": "jacobi", "min_D": float(self.D.min()), "max_D": float(self.D.max())}


def build_jacobi(A):
    diagonal = A.diagonal() if hasattr(A, "diagonal") else np.diag(A)
    diagonal = np.asarray(diagonal, dtype=float)
    bad = np.nonzero(~(diagonal > 0.0))[0]
    if len(bad):
        raise NonpositiveDiagonal(int(bad[0]), float(diagonal[bad[0]]))
    return JacobiScaling(np.sqrt(diagonal))


def scaled_matrix(A, D):
    """A_hat = D^{-1} A D^{-1} with the diagonal set to exactly one."""
    D = D.D if isinstance(D, JacobiScaling) else np.asarray(D, dtype=float)
    inverse = 1.0 / D
    if isinstance(A, SymmetricSparseMatrix):
        upper = sp.diags(inverse) @ A.upper @ sp.diags(inverse)
        upper = sp.csr_matrix(upper)
        upper.setdiag(1.0)
        return SymmetricSparseMatrix(upper)
    if sp.issparse(A):
        scaled = sp.csr_matrix(sp.diags(inverse) @ A @ sp.diags(inverse))
        scaled.setdiag(1.0)
        return scaled
    scaled = inverse[:, None] * np.asarray(A, dtype=float) * inverse[None, :]
    np.fill_diagonal(scaled, 1.0)
    return scaled


# SIPIC


def _energy_gram_schmidt(G):
    """Coefficients C with C^T G C = I by modified Gram-Schmidt, ascending order."""
    m = G.shape[0]
    C = np.eye(m)
    for k in range(m):
        v = C[:, k].copy()
        for j in range(k):
            v -= (C[:, j] @ G @ v) * C[:, j]
        norm2 = v @ G @ v
        if norm2 <= np.finfo(float).eps * G[k, k]:
            # numerically dependent: keep the unit vector
            logger.debug("SIPIC column %d numerically dependent (%.3e)", k, norm2)
            C[:, k] = np.eye(m)[:, k] / np.sqrt(G[k, k])
            continue
        C[:, k] = v / np.sqrt(norm2)
    return C


@dataclass
class SipicTransform:
    """Sparse transform T with T^T A_hat T having unit diagonal.

    ``components`` holds the flagged connected components of every sweep.
    """

    T: sp.csr_matrix
    matrix: sp.csr_matrix
    components: list
    sweeps: int
    converged: bool
    zeta: float

    def apply(self, r):
        """H^{-1} r = T T^T r."""
        return self.T @ (self.T.T @ r)

    def to_dense(self):
        T = self.T.toarray()
        return T @ T.T

    def solve_transformed(self, b_hat, solver=None):
        """Solve T^T A_hat T y = T^T b_hat and return x_hat = T y."""
        rhs = self.T.T @ b_hat
        y = (solver or spla.spsolve)(sp.csc_matrix(self.matrix), rhs)
        return self.T @ y

    def report(self):
        return {
            "kind": "sipic",
            "zeta": self.zeta,
            "sweeps": self.sweeps,
            "converged": self.converged,
            "largest_component": max((len(c) for s in self.components for c in s), default=0),
        }


def _flagged_pairs(matrix, zeta):
    off = sp.csr_matrix(matrix, copy=True)
    off.setdiag(0.0)
    off.eliminate_zeros()
    flagged = abs(off) > zeta
    return sp.csr_matrix(flagged)


def sipic_build(A_hat, zeta=0.9, max_sweeps=10, strict=False):
    """
    Symmetric incomplete permuted inverse Cholesky on a unit-diagonal matrix.

    Each sweep flags pairs with |A_ij| > zeta, orthonormalizes every connected
    component of the flag graph in the energy inner product, then rescales to
    unit diagonal. Sweeps repeat until nothing is flagged or ``max_sweeps`` is
    reached; in the latter case the transform is returned with
    ``converged=False``, or SipicNoConvergence is raised when ``strict``.
    """
    if not 0.0 < zeta < 1.0:
        raise ParameterOutOfRange("zeta", zeta, "(0, 1)")
    current = sp.csr_matrix(as_operator_matrix(A_hat))
    n = current.shape[0]
    T = sp.identity(n, format="csr")
    history = []
    sweeps = 0
    converged = False

    while True:
        flagged = _flagged_pairs(current, zeta)
        if flagged.nnz == 0:
            converged = True
            break
        if sweeps == max_sweeps:
            if strict:
                raise SipicNoConvergence(sweeps, flagged.nnz // 2)
            logger.warning(
                "SIPIC still flags %d pairs after %d sweeps", flagged.nnz // 2, sweeps
            )
            break
        _, labels = connected_components(flagged, directed=False)
        sizes = np.bincount(labels)
        components = [np.nonzero(labels == c)[0] for c in np.nonzero(sizes > 1)[0]]
        components.sort(key=lambda c: c[0])

        step = sp.lil_matrix((n, n))
        step.setdiag(1.0)
        for comp in components:
            C = _energy_gram_schmidt(_principal(current, comp))
            step[np.ix_(comp, comp)] = C
        step = sp.csr_matrix(step)

        current = sp.csr_matrix(step.T @ current @ step)
        scale = sp.diags(1.0 / np.sqrt(current.diagonal()))
        current = sp.csr_matrix(scale @ current @ scale)
        current.setdiag(1.0)
        T = sp.csr_matrix(T @ step @ scale)
        history.append(components)
        sweeps += 1
        logger.debug("SIPIC sweep %d: %d components", sweeps, len(components))

    return SipicTransform(T, current, history, sweeps, converged, zeta)


# Additive Schwarz


class BlockStrategy(str, enum.Enum):
    CUT_ELEMENTS = "cut_elements"
    SUPPORT_CONTAINMENT = "support_containment"
    SUPPORT_INTERSECTION = "support_intersection"


@dataclass
class SchwarzBlocks:
    blocks: list
    strategy: BlockStrategy
    n_singletons: int = 0

    def __len__(self):
        return len(self.blocks)

    def covered(self, n):
        mask = np.zeros(n, dtype=bool)
        for block in self.blocks:
            mask[block] = True
        return mask


def support_incidence(basis, classification, dofmap):
    """Sparse (active dofs x active elements) incidence of active supports.

    Column order follows ``classification.active_elements``.
    """
    mesh = classification.mesh
    rows, cols = [], []
    for k, e in enumerate(classification.active_elements):
        local = dofmap.to_active(basis.element_functions(mesh.element_multi(e)))
        rows.append(local)
        cols.append(np.full(len(local), k))
    rows, cols = np.concatenate(rows), np.concatenate(cols)
    shape = (len(dofmap), len(classification.active_elements))
    return sp.csr_matrix((np.ones(len(rows)), (rows, cols)), shape=shape)


def select_blocks(strategy, basis, classification, dofmap):
    """Index blocks for additive Schwarz, completed by singletons."""
    strategy = BlockStrategy(strategy)
    F = support_incidence(basis, classification, dofmap)
    active_elements = classification.active_elements
    is_cut = classification.status[active_elements] == Status.CUT
    blocks = []

    if strategy is BlockStrategy.CUT_ELEMENTS:
        Fc = sp.csc_matrix(F[:, np.nonzero(is_cut)[0]])
        for k in range(Fc.shape[1]):
            blocks.append(np.sort(Fc.indices[Fc.indptr[k] : Fc.indptr[k + 1]]))
    else:
        trimmed = np.nonzero(np.asarray(F[:, is_cut].sum(axis=1)).ravel() > 0)[0]
        overlap = sp.csr_matrix(F @ F.T)
        sizes = np.asarray(F.sum(axis=1)).ravel()
        for i in trimmed:
            start, end = overlap.indptr[i], overlap.indptr[i + 1]
            partners, counts = overlap.indices[start:end], overlap.data[start:end]
            if strategy is BlockStrategy.SUPPORT_CONTAINMENT:
                partners = partners[counts == sizes[partners]]
            blocks.append(np.sort(partners))

    unique = {tuple(b.tolist()): b for b in blocks}
    blocks = [unique[key] for key in sorted(unique)]
    covered = np.zeros(len(dofmap), dtype=bool)
    for block in blocks:
        covered[block] = True
    singletons = [np.array([i]) for i in np.nonzero(~covered)[0]]
    logger.debug("%s: %d blocks + %d singletons", strategy.value, len(blocks), len(singletons))
    return SchwarzBlocks(blocks + singletons, strategy, len(singletons))


class SchwarzPreconditioner(spla.LinearOperator):
    """Additive Schwarz S = sum_i P_i (P_i^T A_hat P_i)^{-1} P_i^T over possibly overlapping blocks."""

    def __init__(self, A_hat, blocks, drop_tol=1e-14):
        A_hat = as_operator_matrix(A_hat)
        n = A_hat.shape[0]
        super().__init__(dtype=float, shape=(n, n))
        self.blocks = blocks
        self.drop_tol = drop_tol
        self.truncated = 0
        self.factors = []
        self._singles = []
        self._single_values = []
        for index, block in enumerate(blocks.blocks):
            sub = _principal(A_hat, block)
            if len(block) == 1:
                self._singles.append(block[0])
                self._single_values.append(1.0 / sub[0, 0])
                continue
            self.factors.append((block, self._factor(index, sub)))
        self._singles = np.array(self._singles, dtype=int)
        self._single_values = np.array(self._single_values)
        if self.truncated:
            logger.warning("%d Schwarz blocks truncated at relative tolerance %.1e",
                           self.truncated, drop_tol)

    def _factor(self, index, sub):
        try:
            return ("cholesky", la.cho_factor(sub))
        except la.LinAlgError:
            pass
        try:
            values, vectors = la.eigh(sub)
        except la.LinAlgError as exc:
            raise BlockFactorizationFailure(index, str(exc)) from exc
        keep = values > self.drop_tol * values[-1]
        if values[-1] <= 0 or not keep.any():
            raise BlockFactorizationFailure(index, "no eigenvalue above the drop tolerance")
        self.truncated += 1
        return ("eigen", (vectors[:, keep], 1.0 / values[keep]))

    def _matvec(self, x):
        x = np.ravel(x)
        y = np.zeros(self.shape[0])
        np.add.at(y, self._singles, self._single_values * x[self._singles])
        for block, (kind, factor) in self.factors:
            if kind == "cholesky":
                y[block] += la.cho_solve(factor, x[block])
            else:
                vectors, inverse = factor
                y[block] += vectors @ (inverse * (vectors.T @ x[block]))
        return y

    def _rmatvec(self, x):
        return self._matvec(x)

    def apply(self, r):
        return self._matvec(r)

    def to_dense(self):
        return np.column_stack([self._matvec(e) for e in np.eye(self.shape[0])])

    def report(self):
        return {
            "kind": "schwarz",
            "strategy": self.blocks.strategy.value,
            "blocks": len(self.blocks) - self.blocks.n_singletons,
            "singletons": self.blocks.n_singletons,
            "largest_block": max(len(b) for b in self.blocks.blocks),
            "truncated": self.truncated,
            "drop_tol": self.drop_tol,
            "drop_tol_scale": "relative",
        }


def schwarz_build(A_hat, blocks, drop_tol=1e-14):
    return SchwarzPreconditioner(A_hat, blocks, drop_tol)


# Deflation


def weak_support_set(basis, classification, dofmap):
    """Active dofs whose active support has no uncut element."""
    F = support_incidence(basis, classification, dofmap)
    inside = classification.status[classification.active_elements] == Status.INSIDE
    strong = np.asarray(F[:, inside].sum(axis=1)).ravel() > 0
    return np.nonzero(~strong)[0]


def rank_reduce(indices, tau, basis, classification, dofmap):
    """
    Keep the weakly supported functions that nearly share their active support.

    phi_i is kept if some other phi_j of the set has an active support that
    meets supp(phi_i) in positive measure, and the union of the two supports
    is at most ``tau`` times the union of their cut regions.
    """
    if not 0.0 < tau <= 1.0:
        raise ParameterOutOfRange("tau", tau, "(0, 1]")
    indices = np.asarray(indices, dtype=int)
    if len(indices) < 2:
        return indices[:0]
    mesh = classification.mesh
    measure = classification.measure
    full = mesh.element_measures
    cut = classification.status == Status.CUT

    supports, regions, box_measure = [], [], []
    for g in dofmap.to_global(indices):
        elements = mesh.box_elements(basis.support_box(g))
        supports.append(elements[measure[elements] > 0.0])
        regions.append(elements[cut[elements]])
        box_measure.append(full[elements].sum())

    keep = np.zeros(len(indices), dtype=bool)
    for a in range(len(indices)):
        for b in range(len(indices)):
            if a == b:
                continue
            shared = np.intersect1d(supports[a], supports[b], assume_unique=True)
            if measure[shared].sum() <= 1e-14 * box_measure[a]:
                continue
            union = np.union1d(supports[a], supports[b])
            region = np.union1d(regions[a], regions[b])
            if measure[union].sum() <= tau * full[region].sum():
                keep[a] = True
                break
    logger.info("rank reduction tau=%g: %d -> %d", tau, len(indices), int(keep.sum()))
    return indices[keep]


@dataclass
class DeflationSpace:
    """Deflation by identity columns Z = I[:, indices] with coarse matrix E = A[I, I]."""

    A: object
    indices: np.ndarray
    E: np.ndarray
    factor: tuple = None
    tau: float = None
    _AZ: np.ndarray = field(default=None, repr=False)
    dropped: int = 0

    @property
    def rank(self):
        return len(self.indices)

    @property
    def n(self):
        return self.A.shape[0]

    def coarse_solve(self, v_coarse):
        if not self.rank:
            return np.zeros(0)
        kind, data = self.factor
        if kind == "cholesky":
            return la.cho_solve(data, v_coarse)
        vectors, inverse = data
        if np.ndim(v_coarse) == 1:
            return vectors @ (inverse * (vectors.T @ v_coarse))
        return vectors @ (inverse[:, None] * (vectors.T @ v_coarse))

    def project(self, v):
        """P v = v - A Z E^{-1} Z^T v."""
        if not self.rank:
            return np.array(v, dtype=float)
        return v - self._AZ @ self.coarse_solve(v[self.indices])

    def project_transpose(self, v):
        """P^T v = v - Z E^{-1} Z^T A v."""
        out = np.array(v, dtype=float)
        if self.rank:
            out[self.indices] -= self.coarse_solve((self.A @ v)[self.indices])
        return out

    def coarse_correction(self, b):
        """Z E^{-1} Z^T b."""
        out = np.zeros(self.n)
        if self.rank:
            out[self.indices] = self.coarse_solve(np.asarray(b)[self.indices])
        return out

    def recover(self, x_tilde, b):
        return self.coarse_correction(b) + self.project_transpose(x_tilde)

    def projected_dense(self):
        """Dense P A."""
        A = _dense(self.A)
        if not self.rank:
            return A
        return A - self._AZ @ self.coarse_solve(self._AZ.T)

    def report(self):
        return {"kind": "deflation", "rank": self.rank, "tau": self.tau, "dropped": self.dropped}


def _coarse_factor(E, drop_tol):
    """Cholesky factor of E, or its eigenpairs above drop_tol relative to the largest.

    When Cholesky fails the truncated eigendecomposition serves as a
    pseudo-inverse. A nonpositive diagonal or spectrum is a genuine rank loss.
    """
    diagonal = np.diag(E)
    if not np.isfinite(E).all() or (diagonal <= 0.0).any():
        raise CoarseFactorizationFailure(len(E), "nonpositive or non-finite diagonal")
    try:
        return ("cholesky", la.cho_factor(E)), 0
    except la.LinAlgError as exc:
        reason = str(exc)
    values, vectors = la.eigh(E)
    keep = values > drop_tol * values[-1]
    if values[-1] <= 0.0 or not keep.any():
        raise CoarseFactorizationFailure(len(E), reason)
    dropped = int((~keep).sum())
    logger.warning(
        "coarse matrix of rank %d not positive definite in floating point (%s); "
        "%d eigenvalues below %.1e relative dropped",
        len(E), reason, dropped, drop_tol,
    )
    return ("eigen", (vectors[:, keep], 1.0 / values[keep])), dropped


def deflation_build(A_hat, indices, tau=None, drop_tol=1e-14):
    A = as_operator_matrix(A_hat)
    indices = np.asarray(indices, dtype=int)
    if len(np.unique(indices)) != len(indices):
        raise ParameterOutOfRange("indices", "duplicates", "distinct indices")
    if len(indices) and (indices.min() < 0 or indices.max() >= A.shape[0]):
        raise ParameterOutOfRange("indices", (indices.min(), indices.max()), f"[0, {A.shape[0]})")
    E = _principal(A, indices)
    factor = None
    AZ = None
    dropped = 0
    if len(indices):
        factor, dropped = _coarse_factor(E, drop_tol)
        AZ = _columns(A, indices)
    logger.debug("deflation rank %d", len(indices))
    return DeflationSpace(A, indices, E, factor, tau, AZ, dropped)


def project(space, v):
    return space.project(v)


def recover(space, x_tilde, b):
    return space.recover(x_tilde, b)
