"""Univariate and tensor-product Lagrange and B-spline bases.

B-splines are evaluated with the triangular (Cox-de Boor) recurrence after a
binary-search knot-span lookup, see Algorithms A2.1-A2.3 in:

   - L. Piegl and W. Tiller. The NURBS Book, 2nd ed., Springer, 1997.

Lagrange bases are C0 and element-local; their interpolation points come from a
reference node rule mapped onto every element.

All basis objects are immutable after construction.
"""

import enum
import logging
from dataclasses import dataclass

import numpy as np

from .errors import (
    DuplicateNodes,
    InvalidContinuity,
    NonMonotoneBreakpoints,
    OutOfDomain,
    ParameterOutOfRange,
    SingularCollocation,
)

logger = logging.getLogger(__name__)

MAX_DEGREE = 6


class BasisKind(str, enum.Enum):
    LAGRANGE = "lagrange"
    BSPLINE = "bspline"


class NodeRule(str, enum.Enum):
    EQUISPACED = "equispaced"
    GAUSS_LOBATTO = "gauss_lobatto"


@dataclass(frozen=True)
class BasisSpec:
    """Kind, degree and continuity of a tensor-product basis.

    ``continuities`` defaults to maximal smoothness p-1 for B-splines and is
    always 0 for Lagrange bases.
    """

    kind: BasisKind
    degrees: tuple
    continuities: tuple = None
    nodes: NodeRule = NodeRule.EQUISPACED

    def __post_init__(self):
        kind = BasisKind(self.kind)
        degrees = tuple(int(p) for p in np.atleast_1d(self.degrees))
        for p in degrees:
            if not 1 <= p <= MAX_DEGREE:
                raise ParameterOutOfRange("degree", p, f"1..{MAX_DEGREE}")

        if kind is BasisKind.LAGRANGE:
            continuities = (0,) * len(degrees)
        elif self.continuities is None:
            continuities = tuple(p - 1 for p in degrees)
        else:
            continuities = tuple(int(k) for k in np.atleast_1d(self.continuities))
            if len(continuities) == 1 and len(degrees) > 1:
                continuities = continuities * len(degrees)
        if len(continuities) != len(degrees):
            raise ParameterOutOfRange("continuities", continuities, "one per direction")
        for p, k in zip(degrees, continuities):
            if not 0 <= k <= p - 1:
                raise InvalidContinuity(p, k)

        object.__setattr__(self, "kind", kind)
        object.__setattr__(self, "degrees", degrees)
        object.__setattr__(self, "continuities", continuities)
        object.__setattr__(self, "nodes", NodeRule(self.nodes))

    @property
    def dim(self):
        return len(self.degrees)

    def with_dim(self, dim):
        """Broadcast a single-direction spec to ``dim`` directions."""
        if self.dim == dim:
            return self
        if self.dim != 1:
            raise ParameterOutOfRange("dimension", self.dim, f"1 or {dim}")
        return BasisSpec(self.kind, self.degrees * dim, self.continuities * dim, self.nodes)

    def bernstein(self):
        """The C0 B-spline (Bernstein) spec with the same degrees."""
        return BasisSpec(BasisKind.BSPLINE, self.degrees, (0,) * self.dim)


@dataclass(frozen=True, eq=False)
class KnotVector:
    values: np.ndarray
    degree: int

    @property
    def n(self):
        """Number of basis functions."""
        return len(self.values) - self.degree - 1

    @property
    def domain(self):
        return float(self.values[0]), float(self.values[-1])


def _check_breakpoints(breakpoints):
    breakpoints = np.asarray(breakpoints, dtype=float)
    if breakpoints.ndim != 1 or len(breakpoints) < 2:
        raise NonMonotoneBreakpoints(0)
    bad = np.nonzero(np.diff(breakpoints) <= 0.0)[0]
    if len(bad):
        raise NonMonotoneBreakpoints(int(bad[0]) + 1)
    return breakpoints


def build_knot_vector(p, breakpoints, k):
    """
    Open knot vector with interior multiplicity p-k.

    Parameters
    ----------
    p : int
        Polynomial degree.

    breakpoints : array_like
        Strictly increasing element boundaries.

    k : int
        Inter-element continuity, 0 <= k <= p-1.

    Returns
    -------
    KnotVector
        Knots of length n+p+1 with n = N_s*(p-k) + k + 1.
    """
    if not 1 <= p <= MAX_DEGREE:
        raise ParameterOutOfRange("degree", p, f"1..{MAX_DEGREE}")
    if not 0 <= k <= p - 1:
        raise InvalidContinuity(p, k)
    breakpoints = _check_breakpoints(breakpoints)
    values = np.concatenate(
        [
            np.full(p + 1, breakpoints[0]),
            np.repeat(breakpoints[1:-1], p - k),
            np.full(p + 1, breakpoints[-1]),
        ]
    )
    return KnotVector(values, p)


def find_span(kv, x):
    """Knot span index s with t[s] <= x < t[s+1]; the right end maps to the last span."""
    t = kv.values
    lower, upper = kv.domain
    if not lower <= x <= upper:
        raise OutOfDomain(x, lower, upper)
    span = int(np.searchsorted(t, x, side="right")) - 1
    return min(max(span, kv.degree), kv.n - 1)


def _triangle(knots, spans, x, degree):
    # Values of the degree+1 B-splines spans-degree..spans at x (Algorithm A2.2,
    # vectorized over points).
    npts = x.shape[0]
    values = np.ones((npts, 1))
    left = np.zeros((npts, degree + 1))
    right = np.zeros((npts, degree + 1))
    for j in range(1, degree + 1):
        left[:, j] = x - knots[spans + 1 - j]
        right[:, j] = knots[spans + j] - x
        saved = np.zeros(npts)
        new = np.empty((npts, j + 1))
        for r in range(j):
            temp = values[:, r] / (right[:, r + 1] + left[:, j - r])
            new[:, r] = saved + right[:, r + 1] * temp
            saved = left[:, j - r] * temp
        new[:, j] = saved
        values = new
    return values


def _triangle_derivative(knots, spans, x, degree):
    lower = _triangle(knots, spans, x, degree - 1)
    out = np.zeros((x.shape[0], degree + 1))
    for r in range(degree + 1):
        g = spans - degree + r
        if r >= 1:
            out[:, r] += degree * lower[:, r - 1] / (knots[g + degree] - knots[g])
        if r <= degree - 1:
            out[:, r] -= degree * lower[:, r] / (knots[g + degree + 1] - knots[g + 1])
    return out


def bspline_eval(kv, x, deriv=0):
    """
    Evaluate the p+1 B-splines that may be nonzero at x.

    Parameters
    ----------
    kv : KnotVector
        Open knot vector.

    x : float
        Evaluation point inside the knot range.

    deriv : int
        0 for values, 1 for first derivatives.

    Returns
    -------
    first : int
        Global index of the first returned function.

    values : numpy.ndarray
        Array of length p+1.
    """
    span = find_span(kv, float(x))
    spans = np.array([span])
    xs = np.array([float(x)])
    if deriv == 0:
        values = _triangle(kv.values, spans, xs, kv.degree)[0]
    elif deriv == 1:
        values = _triangle_derivative(kv.values, spans, xs, kv.degree)[0]
    else:
        raise ParameterOutOfRange("deriv", deriv, "0 or 1")
    return span - kv.degree, values


def reference_nodes(p, rule=NodeRule.EQUISPACED):
    """Interpolation points on [0, 1], endpoints included."""
    rule = NodeRule(rule)
    if rule is NodeRule.EQUISPACED:
        return np.linspace(0.0, 1.0, p + 1)
    interior = np.sort(np.polynomial.legendre.Legendre.basis(p).deriv().roots().real)
    return (np.concatenate([[-1.0], interior, [1.0]]) + 1.0) / 2.0


def _lagrange_table(nodes, x, deriv):
    m = len(nodes)
    diff = x[:, None] - nodes[None, :]
    weights = np.array(
        [1.0 / np.prod(nodes[i] - np.delete(nodes, i)) for i in range(m)]
    )
    out = np.zeros((x.shape[0], m))
    for i in range(m):
        others = [j for j in range(m) if j != i]
        if deriv == 0:
            out[:, i] = weights[i] * np.prod(diff[:, others], axis=1)
        else:
            for skip in others:
                rest = [j for j in others if j != skip]
                out[:, i] += weights[i] * np.prod(diff[:, rest], axis=1)
    return out


def _check_nodes(nodes):
    nodes = np.asarray(nodes, dtype=float)
    gaps = np.diff(np.sort(nodes))
    if len(gaps) and gaps.min() <= 1e-14 * max(1.0, np.ptp(nodes)):
        raise DuplicateNodes(nodes)
    return nodes


def lagrange_eval(element, nodes, x, deriv=0):
    """Values (or derivatives) of the Lagrange polynomials on ``nodes`` at x."""
    a, b = element
    nodes = _check_nodes(nodes)
    if not a <= x <= b:
        raise OutOfDomain(x, a, b)
    if deriv not in (0, 1):
        raise ParameterOutOfRange("deriv", deriv, "0 or 1")
    return _lagrange_table(nodes, np.array([float(x)]), deriv)[0]


class UnivariateBasis:
    """One direction of a tensor-product basis.

    Function i is nonzero exactly on elements ``support[i, 0] .. support[i, 1]``;
    element e carries the p+1 functions ``first[e] .. first[e] + p``.
    """

    def __init__(self, kind, degree, continuity, breakpoints, nodes=NodeRule.EQUISPACED):
        self.kind = BasisKind(kind)
        self.degree = int(degree)
        self.breakpoints = _check_breakpoints(breakpoints)
        self.n_elements = len(self.breakpoints) - 1
        p = self.degree

        if self.kind is BasisKind.BSPLINE:
            self.continuity = int(continuity)
            self.knots = build_knot_vector(p, self.breakpoints, self.continuity)
            self.ref_nodes = None
            self.n = self.knots.n
            # Span of element e is the last knot equal to its left breakpoint.
            self.spans = (
                np.searchsorted(self.knots.values, self.breakpoints[:-1], side="right") - 1
            )
            self.first = self.spans - p
        else:
            self.continuity = 0
            self.knots = None
            self.ref_nodes = reference_nodes(p, nodes)
            _check_nodes(self.ref_nodes)
            self.n = self.n_elements * p + 1
            self.spans = None
            self.first = np.arange(self.n_elements) * p

        support = np.empty((self.n, 2), dtype=int)
        for i in range(self.n):
            elements = np.nonzero((self.first <= i) & (i <= self.first + p))[0]
            support[i] = elements[0], elements[-1]
        self.support = support

    def __repr__(self):
        return (
            f"UnivariateBasis({self.kind.value}, p={self.degree}, k={self.continuity}, "
            f"elements={self.n_elements}, n={self.n})"
        )

    def element_nodes(self, element):
        a, b = self.breakpoints[element], self.breakpoints[element + 1]
        return a + (b - a) * self.ref_nodes

    def evaluate(self, element, x, deriv=False):
        """Local values (and derivatives) at points x inside ``element``.

        Returns ``(first, values)`` or ``(first, values, derivatives)``, each
        table of shape (len(x), p+1).
        """
        x = np.atleast_1d(np.asarray(x, dtype=float))
        p = self.degree
        if self.kind is BasisKind.BSPLINE:
            spans = np.full(x.shape[0], self.spans[element])
            values = _triangle(self.knots.values, spans, x, p)
            if deriv:
                return (
                    self.first[element],
                    values,
                    _triangle_derivative(self.knots.values, spans, x, p),
                )
            return self.first[element], values

        nodes = self.element_nodes(element)
        values = _lagrange_table(nodes, x, 0)
        if deriv:
            return self.first[element], values, _lagrange_table(nodes, x, 1)
        return self.first[element], values

    def locate(self, x):
        """Element index containing each x (right end folded into the last element)."""
        e = np.searchsorted(self.breakpoints, x, side="right") - 1
        return np.clip(e, 0, self.n_elements - 1)

    def greville(self):
        """Anchor point of every function."""
        if self.kind is BasisKind.BSPLINE:
            t = self.knots.values
            p = self.degree
            return np.array([t[i + 1 : i + p + 1].mean() for i in range(self.n)])
        anchors = np.empty(self.n)
        for e in range(self.n_elements):
            anchors[self.first[e] : self.first[e] + self.degree + 1] = self.element_nodes(e)
        return anchors


class TensorBasis:
    """Tensor product of univariate bases with C-ordered flat indices."""

    def __init__(self, spec, bases):
        self.spec = spec
        self.bases = tuple(bases)
        self.dim = len(self.bases)
        self.shape = tuple(b.n for b in self.bases)
        self.n = int(np.prod(self.shape))
        self.element_shape = tuple(b.n_elements for b in self.bases)
        self.n_elements = int(np.prod(self.element_shape))

        multi = self.multi_index(np.arange(self.n))
        self.support_boxes = np.stack(
            [b.support[m] for b, m in zip(self.bases, multi)], axis=1
        )

    def __repr__(self):
        return f"TensorBasis({self.spec.kind.value}, shape={self.shape}, n={self.n})"

    @property
    def local_size(self):
        return int(np.prod([b.degree + 1 for b in self.bases]))

    def flat_index(self, multi):
        return np.ravel_multi_index(tuple(multi), self.shape)

    def multi_index(self, flat):
        return np.unravel_index(flat, self.shape)

    def support_box(self, i):
        """Inclusive element-index ranges, shape (dim, 2)."""
        return self.support_boxes[i]

    def element_functions(self, element):
        """Flat indices of the functions living on an element (multi-index)."""
        ranges = [
            b.first[e] + np.arange(b.degree + 1) for b, e in zip(self.bases, element)
        ]
        grids = np.meshgrid(*ranges, indexing="ij")
        return np.ravel_multi_index(tuple(g.ravel() for g in grids), self.shape)

    def evaluate(self, element, points, deriv=False):
        """
        Evaluate the local functions of an element at arbitrary points in it.

        Parameters
        ----------
        element : tuple of int
            Element multi-index.

        points : array_like
            Coordinates of shape (npts, dim).

        deriv : bool
            Also return gradients.

        Returns
        -------
        indices : numpy.ndarray
            Flat indices of the local functions.

        values : numpy.ndarray
            Shape (npts, nloc).

        gradients : numpy.ndarray, optional
            Shape (npts, nloc, dim).
        """
        points = np.atleast_2d(np.asarray(points, dtype=float))
        npts = points.shape[0]
        tables = [
            b.evaluate(e, points[:, d], deriv=deriv)
            for d, (b, e) in enumerate(zip(self.bases, element))
        ]

        def product(factors):
            out = factors[0]
            for f in factors[1:]:
                out = (out[:, :, None] * f[:, None, :]).reshape(npts, -1)
            return out

        indices = self.element_functions(element)
        values = product([t[1] for t in tables])
        if not deriv:
            return indices, values
        gradients = np.empty(values.shape + (self.dim,))
        for d in range(self.dim):
            factors = [t[2] if c == d else t[1] for c, t in enumerate(tables)]
            gradients[:, :, d] = product(factors)
        return indices, values, gradients

    def greville(self):
        """Anchor coordinates of all functions, shape (n, dim)."""
        anchors = [b.greville() for b in self.bases]
        grids = np.meshgrid(*anchors, indexing="ij")
        return np.stack([g.ravel() for g in grids], axis=1)


def build_tensor_basis(spec, mesh):
    """Tensor basis on per-direction breakpoints (a sequence or an object with ``breakpoints``)."""
    breakpoints = getattr(mesh, "breakpoints", mesh)
    if isinstance(breakpoints, np.ndarray) and breakpoints.ndim == 1:
        breakpoints = [breakpoints]
    spec = spec.with_dim(len(breakpoints))
    bases = [
        UnivariateBasis(spec.kind, p, k, b, spec.nodes)
        for p, k, b in zip(spec.degrees, spec.continuities, breakpoints)
    ]
    basis = TensorBasis(spec, bases)
    logger.debug("built %r", basis)
    return basis


def _collocation_1d(lagrange, bernstein):
    A = np.zeros((lagrange.n, bernstein.n))
    for e in range(lagrange.n_elements):
        local = lagrange.element_nodes(e)
        first, values = bernstein.evaluate(e, local)
        rows = lagrange.first[e] + np.arange(lagrange.degree + 1)
        A[np.ix_(rows, first + np.arange(bernstein.degree + 1))] = values
    return A


def bernstein_collocation(spec_lagrange, mesh, active=None):
    """
    Values of the C0 B-spline (Bernstein) basis at the Lagrange nodes.

    Row j holds every Bernstein function at node j, so the Lagrange Gram matrix
    equals C^T G_B C with C = A^{-1}. The tensor matrix is the Kronecker
    product of the per-direction factors.

    With ``active`` only the principal submatrix on those flat indices is
    formed, entry by entry from the factors.
    """
    if BasisKind(spec_lagrange.kind) is not BasisKind.LAGRANGE:
        raise ParameterOutOfRange("kind", spec_lagrange.kind, "lagrange")
    lagrange = build_tensor_basis(spec_lagrange, mesh)
    bernstein = build_tensor_basis(spec_lagrange.bernstein(), mesh)

    factors = []
    for lb, bb in zip(lagrange.bases, bernstein.bases):
        factor = _collocation_1d(lb, bb)
        rank = np.linalg.matrix_rank(factor)
        if rank < factor.shape[0]:
            raise SingularCollocation(rank, factor.shape[0])
        factors.append(factor)

    if active is not None:
        multi = lagrange.multi_index(np.asarray(active, dtype=int))
        A = np.ones((len(multi[0]), len(multi[0])))
        for factor, m in zip(factors, multi):
            A *= factor[np.ix_(m, m)]
        return A
    A = np.ones((1, 1))
    for factor in factors:
        A = np.kron(A, factor)
    return A


def lagrange_pair(collocation, scaling=None):
    """Right-hand matrix (DA)^T (DA) of the generalized pair for Lagrange spectra.

    With D = diag(G_L)^{1/2} passed as ``scaling``, the pair (G_B, (DA)^T (DA))
    has the spectrum of the Jacobi-scaled D^{-1} G_L D^{-1}.
    """
    A = np.asarray(collocation)
    if scaling is not None:
        A = np.asarray(scaling)[:, None] * A
    return A.T @ A
