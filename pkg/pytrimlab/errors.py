"""Exceptions raised by pytrimlab.

Every error keeps the values that triggered it as attributes so callers (and the
sweep drivers, which record failures per row) can inspect them.
"""


class TrimLabError(Exception):
    """Base class for all pytrimlab errors."""


# Bases


class InvalidContinuity(TrimLabError):
    def __init__(self, degree, continuity):
        self.degree = degree
        self.continuity = continuity

    def __str__(self):
        return (
            f"Continuity k={self.continuity} is invalid for degree p={self.degree}; "
            f"need 0 <= k <= {self.degree - 1}"
        )


class NonMonotoneBreakpoints(TrimLabError):
    def __init__(self, position):
        self.position = position

    def __str__(self):
        return f"Breakpoints are not strictly increasing at position {self.position}"


class OutOfDomain(TrimLabError):
    def __init__(self, x, lower, upper):
        self.x = x
        self.lower = lower
        self.upper = upper

    def __str__(self):
        return f"Point {self.x!r} lies outside [{self.lower}, {self.upper}]"


class DuplicateNodes(TrimLabError):
    def __init__(self, nodes):
        self.nodes = nodes

    def __str__(self):
        return f"Interpolation nodes are not distinct: {list(self.nodes)}"


class SingularCollocation(TrimLabError):
    def __init__(self, rank, size):
        self.rank = rank
        self.size = size

    def __str__(self):
        return f"Collocation matrix is rank deficient ({self.rank} < {self.size})"


# Geometry


class DegenerateDomain(TrimLabError):
    def __init__(self, description=""):
        self.description = description

    def __str__(self):
        return f"Domain has no element with positive measure {self.description}".rstrip()


class DepthExceeded(TrimLabError):
    def __init__(self, element, depth, area_error, area_tol):
        self.element = element
        self.depth = depth
        self.area_error = area_error
        self.area_tol = area_tol

    def __str__(self):
        return (
            f"Quadtree on element {self.element} reached depth {self.depth} with area "
            f"error {self.area_error:.3e} > tolerance {self.area_tol:.3e}"
        )


# Assembly


class EmptyActiveSet(TrimLabError):
    def __str__(self):
        return "No basis function has positive active support"


class DimensionMismatch(TrimLabError):
    def __init__(self, left, right):
        self.left = left
        self.right = right

    def __str__(self):
        return f"Dimension mismatch: {self.left} vs {self.right}"


class NonInterpolatoryDof(TrimLabError):
    def __init__(self, dofs):
        self.dofs = list(dofs)

    def __str__(self):
        return f"Dofs {self.dofs} are not interpolatory on the constrained box sides"


# Preconditioners


class NonpositiveDiagonal(TrimLabError):
    def __init__(self, index, value):
        self.index = index
        self.value = value

    def __str__(self):
        return f"Diagonal entry {self.index} is not positive ({self.value!r})"


class SipicNoConvergence(TrimLabError):
    def __init__(self, sweeps, flagged):
        self.sweeps = sweeps
        self.flagged = flagged

    def __str__(self):
        return (
            f"SIPIC still flags {self.flagged} pairs after {self.sweeps} sweeps"
        )


class BlockFactorizationFailure(TrimLabError):
    def __init__(self, block_index, reason):
        self.block_index = block_index
        self.reason = reason

    def __str__(self):
        return f"Schwarz block {self.block_index} could not be factored: {self.reason}"


class CoarseFactorizationFailure(TrimLabError):
    def __init__(self, rank, reason):
        self.rank = rank
        self.reason = reason

    def __str__(self):
        return (
            f"Coarse matrix of rank {self.rank} could not be factored ({self.reason}); "
            "consider removing dofs with empty support"
        )


# Solvers


class Breakdown(TrimLabError):
    def __init__(self, iteration, curvature):
        self.iteration = iteration
        self.curvature = curvature

    def __str__(self):
        return (
            f"CG breakdown at iteration {self.iteration}: p.Ap = {self.curvature:.3e}"
        )


class BoundViolation(TrimLabError):
    def __init__(self, iteration, error, bound):
        self.iteration = iteration
        self.error = error
        self.bound = bound

    def __str__(self):
        return (
            f"Error bound violated at iteration {self.iteration}: "
            f"{self.error:.6e} > {self.bound:.6e}"
        )


# Spectra


class DenseCapExceeded(TrimLabError):
    def __init__(self, size, cap):
        self.size = size
        self.cap = cap

    def __str__(self):
        return f"Dense eigensolve of size {self.size} exceeds the cap {self.cap}"


class GeneralizedNotSPD(TrimLabError):
    def __str__(self):
        return "Right-hand matrix of the generalized eigenproblem is not SPD"


class PrecisionLimited(TrimLabError):
    def __init__(self, lambda_min, lambda_max, floor):
        self.lambda_min = lambda_min
        self.lambda_max = lambda_max
        self.floor = floor

    def __str__(self):
        return (
            f"Smallest eigenvalue {self.lambda_min:.3e} is not resolved above the rounding "
            f"floor {self.floor:.3e} of lambda_max = {self.lambda_max:.3e}"
        )


class NonpositiveSample(TrimLabError):
    def __init__(self, index, x, y):
        self.index = index
        self.x = x
        self.y = y

    def __str__(self):
        return f"Sample {self.index} = ({self.x!r}, {self.y!r}) is not positive"


# Catalog


class UnknownGeometry(TrimLabError):
    def __init__(self, name, known):
        self.name = name
        self.known = sorted(known)

    def __str__(self):
        return f"Unknown geometry {self.name!r}; known: {', '.join(self.known)}"


class ParameterOutOfRange(TrimLabError):
    def __init__(self, name, value, allowed):
        self.name = name
        self.value = value
        self.allowed = allowed

    def __str__(self):
        return f"Parameter {self.name}={self.value!r} outside {self.allowed}"


# Experiments


class StepSolveFailure(TrimLabError):
    def __init__(self, step, termination, iterations):
        self.step = step
        self.termination = termination
        self.iterations = iterations

    def __str__(self):
        return (
            f"Time step {self.step} solve ended with {self.termination} "
            f"after {self.iterations} iterations"
        )
