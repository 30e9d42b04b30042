"""Dense spectral diagnostics: eigenvalues, condition numbers and slope fits."""

import logging
from dataclasses import dataclass

import numpy as np
import scipy.linalg as la

from .errors import (
    DenseCapExceeded,
    GeneralizedNotSPD,
    NonpositiveSample,
    ParameterOutOfRange,
    PrecisionLimited,
)
from .preconditioners import JacobiScaling, as_operator_matrix

logger = logging.getLogger(__name__)

DENSE_CAP = 4000

# Relative size below which a dense eigenvalue carries no significant digits.
PRECISION_FLOOR = 64.0 * np.finfo(float).eps


@dataclass
class SpectrumReport:
    """Ascending eigenvalues with a declared count of zero eigenvalues."""

    eigenvalues: np.ndarray
    zero_count: int = 0
    method: str = "dense"
    threshold: float = 0.0
    nullity_mismatch: bool = False
    smallest_override: float = None

    @property
    def n(self):
        return len(self.eigenvalues)

    @property
    def lambda_max(self):
        return float(self.eigenvalues[-1])

    @property
    def lambda_min(self):
        """Smallest eigenvalue after the declared zeros."""
        if self.smallest_override is not None:
            return self.smallest_override
        return float(self.eigenvalues[self.zero_count])

    @property
    def precision_floor(self):
        """Eigenvalues at or below this are rounding noise of the largest one."""
        return PRECISION_FLOOR * abs(self.lambda_max)

    @property
    def precision_limited(self):
        """True if the smallest eigenvalue is not resolved above the precision floor.

        A graded smallest eigenvalue is accurate below that floor and only
        counts as limited when it is not positive.
        """
        if self.smallest_override is not None:
            return not self.smallest_override > 0.0
        return not self.lambda_min > self.precision_floor

    @property
    def kappa(self):
        if self.precision_limited:
            raise PrecisionLimited(self.lambda_min, self.lambda_max, self.precision_floor)
        return self.lambda_max / self.lambda_min

    def kappa_eff(self, r):
        smallest = float(self.eigenvalues[r])
        if not smallest > self.precision_floor:
            raise PrecisionLimited(smallest, self.lambda_max, self.precision_floor)
        return self.lambda_max / smallest

    def numerical_nullity(self):
        return int((self.eigenvalues <= self.threshold).sum())

    def first(self, count=300):
        return self.eigenvalues[:count]


def _dense_matrix(A, dense_cap):
    A = as_operator_matrix(A)
    n = A.shape[0]
    if n > dense_cap:
        raise DenseCapExceeded(n, dense_cap)
    return A.toarray() if hasattr(A, "toarray") else np.array(A, dtype=float)


def _report(values, zero_count, method, smallest_override=None):
    values = np.sort(values)
    n = len(values)
    threshold = n * np.finfo(float).eps * abs(values[-1]) * 10.0 if n else 0.0
    report = SpectrumReport(values, zero_count, method, threshold, False, smallest_override)
    found = report.numerical_nullity()
    if found != zero_count:
        report.nullity_mismatch = True
        logger.warning("declared nullity %d, found %d eigenvalues below %.3e",
                       zero_count, found, threshold)
    return report


def dense_spectrum(A, B=None, zero_count=0, dense_cap=DENSE_CAP):
    """
    Standard or generalized symmetric eigenvalues.

    For Lagrange spectra the caller passes the Bernstein Gram matrix and the
    right-hand matrix of ``spline_basis.lagrange_pair``.
    """
    A = _dense_matrix(A, dense_cap)
    if B is None:
        return _report(la.eigvalsh(A), zero_count, "dense")
    B = _dense_matrix(B, dense_cap)
    try:
        la.cholesky(B)
    except la.LinAlgError as exc:
        raise GeneralizedNotSPD() from exc
    return _report(la.eigh(A, B, eigvals_only=True), zero_count, "dense-generalized")


def graded_smallest(A_hat, scaling, dense_cap=DENSE_CAP):
    """Smallest eigenvalue of A = D A_hat D as 1 / lambda_max(D^{-1} A_hat^{-1} D^{-1}).

    Stays accurate when A is far beyond 1/eps in condition but A_hat is not.
    """
    A_hat = _dense_matrix(A_hat, dense_cap)
    D = scaling.D if isinstance(scaling, JacobiScaling) else np.asarray(scaling)
    inverse = la.cho_solve(la.cho_factor(A_hat), np.eye(len(D)))
    inverse = inverse / D[:, None] / D[None, :]
    inverse = (inverse + inverse.T) / 2.0
    n = len(D)
    top = la.eigvalsh(inverse, subset_by_index=[n - 1, n - 1])[0]
    return 1.0 / top


def unscaled_spectrum(A, A_hat, scaling, zero_count=0, dense_cap=DENSE_CAP):
    """Spectrum of the unpreconditioned A with the graded smallest eigenvalue.

    Singular matrices (``zero_count`` > 0) keep the dense smallest nonzero value.
    """
    report = dense_spectrum(A, zero_count=zero_count, dense_cap=dense_cap)
    if zero_count:
        return report
    try:
        smallest = graded_smallest(A_hat, scaling, dense_cap)
    except la.LinAlgError:
        logger.warning("graded smallest eigenvalue unavailable, using dense value")
        return report
    report.smallest_override = float(smallest)
    report.method = "dense-graded"
    return report


def _symmetric_sqrt(H):
    values, vectors = la.eigh((H + H.T) / 2.0)
    values = np.clip(values, 0.0, None)
    return (vectors * np.sqrt(values)) @ vectors.T, values


def preconditioned_spectrum(
    A_hat, preconditioner=None, deflation=None, base_nullity=0, dense_cap=DENSE_CAP
):
    """
    Spectrum of a symmetric representative of the preconditioned operator.

    Jacobi is the identity on A_hat. Any other preconditioner must provide
    ``to_dense()`` returning H^{-1}; the representative is
    H^{-1/2} X H^{-1/2} with X = A_hat or P A_hat. The declared zero count is
    the deflation rank plus ``base_nullity`` plus the null directions of H^{-1}.
    """
    if deflation is not None and deflation.rank:
        X = deflation.projected_dense()
        if X.shape[0] > dense_cap:
            raise DenseCapExceeded(X.shape[0], dense_cap)
        zero_count = deflation.rank + base_nullity
    else:
        X = _dense_matrix(A_hat, dense_cap)
        zero_count = base_nullity
    X = (X + X.T) / 2.0

    if preconditioner is None or isinstance(preconditioner, JacobiScaling):
        return _report(la.eigvalsh(X), zero_count, "dense")
    root, values = _symmetric_sqrt(preconditioner.to_dense())
    singular = int((values <= len(values) * np.finfo(float).eps * values[-1] * 10.0).sum())
    representative = root @ X @ root
    representative = (representative + representative.T) / 2.0
    return _report(la.eigvalsh(representative), zero_count + singular, "dense")


@dataclass
class SlopeFit:
    slope: float
    intercept: float
    max_deviation: float
    points: int


def slope_fit(xs, ys, last_decade=False):
    """Least-squares slope of log(ys) against log(xs).

    With ``last_decade`` only samples with x within a factor 10 of the smallest
    x are fitted.
    """
    xs = np.asarray(xs, dtype=float)
    ys = np.asarray(ys, dtype=float)
    for i, (x, y) in enumerate(zip(xs, ys)):
        if not (x > 0 and y > 0):
            raise NonpositiveSample(i, float(x), float(y))
    if last_decade:
        mask = xs <= 10.0 * xs.min() * (1.0 + 1e-12)
        xs, ys = xs[mask], ys[mask]
    if len(xs) < 4:
        raise ParameterOutOfRange("samples", len(xs), ">= 4")
    lx, ly = np.log(xs), np.log(ys)
    slope, intercept = np.polyfit(lx, ly, 1)
    fitted = np.exp(intercept + slope * lx)
    deviation = float(np.max(np.abs(ys / fitted - 1.0)))
    return SlopeFit(float(slope), float(intercept), deviation, len(xs))
