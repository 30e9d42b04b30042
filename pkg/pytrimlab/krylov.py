"""Preconditioned and deflated preconditioned conjugate gradients.

pcg and dpcg share one CG loop; pcg is dpcg with the identity projector.
The stopping rule compares the preconditioned residual against
``tol * sqrt(lambda) * ||P b||_{H^{-1}}``, where lambda is an estimate of the
smallest nonzero eigenvalue of H^{-1} P A taken from the CG coefficients
themselves (Lanczos connection).
"""

import enum
import logging
from dataclasses import dataclass, field, replace

import numpy as np
import scipy.linalg as la
import scipy.sparse.linalg as spla

from .errors import Breakdown, BoundViolation, ParameterOutOfRange
from .preconditioners import as_operator_matrix

logger = logging.getLogger(__name__)

DRIFT_TOL = 1e-8


class StoppingMode(str, enum.Enum):
    PRECONDITIONED_RELATIVE = "preconditioned_relative"
    DEFLATED_CRITERION = "deflated_criterion"


class Termination(str, enum.Enum):
    CONVERGED = "converged"
    MAX_ITERATIONS = "max_iterations"
    BREAKDOWN = "breakdown"


@dataclass
class SolverConfig:
    tol: float = 1e-9
    max_iterations: int = 1000
    recompute_interval: int = 50
    stopping: StoppingMode = StoppingMode.DEFLATED_CRITERION
    estimate_at: int = 20
    strict: bool = False

    def __post_init__(self):
        if not self.tol > 0:
            raise ParameterOutOfRange("tol", self.tol, "> 0")
        if self.max_iterations < 1:
            raise ParameterOutOfRange("max_iterations", self.max_iterations, ">= 1")
        self.stopping = StoppingMode(self.stopping)


@dataclass
class SolveReport:
    """History of one (deflated) PCG run.

    ``residuals[j]`` is ||r_j||_{H^{-1}} for j = 0..iterations; ``errors[j]``
    is the A-norm error of the recovered iterate when a reference was given.
    """

    x: np.ndarray
    termination: Termination
    residuals: list
    rhs_norm: float
    errors: list = None
    reference_norm: float = None
    lambda_estimate: float = None
    alphas: list = field(default_factory=list)
    betas: list = field(default_factory=list)
    residual_gaps: list = field(default_factory=list)
    drift: bool = False
    deflation_rank: int = 0

    @property
    def iterations(self):
        return len(self.alphas)

    @property
    def converged(self):
        return self.termination is Termination.CONVERGED

    def relative_residuals(self):
        return np.asarray(self.residuals) / self.rhs_norm if self.rhs_norm else np.zeros(len(self.residuals))

    def relative_errors(self):
        if self.errors is None:
            return None
        scale = self.reference_norm or 1.0
        return np.asarray(self.errors) / scale

    def history_rows(self):
        """(iteration, relative residual, relative error or None) per iterate."""
        errors = self.relative_errors()
        return [
            (j, float(res), None if errors is None else float(errors[j]))
            for j, res in enumerate(self.relative_residuals())
        ]

    def summary(self):
        return {
            "termination": self.termination.value,
            "iterations": self.iterations,
            "lambda_estimate": self.lambda_estimate,
            "drift": self.drift,
            "deflation_rank": self.deflation_rank,
        }


def _matvec_of(A):
    if isinstance(A, spla.LinearOperator):
        return A.matvec
    M = as_operator_matrix(A)
    return lambda v: M @ v


def _applier_of(H):
    if H is None:
        return lambda r: r
    if isinstance(H, spla.LinearOperator):
        return H.matvec
    if hasattr(H, "apply"):
        return H.apply
    if callable(H):
        return H
    M = as_operator_matrix(H)
    return lambda r: M @ r


def ritz_from_cg(alphas, betas):
    """Eigenvalues of the Lanczos tridiagonal implied by CG coefficients.

    T_jj = 1/a_j + b_{j-1}/a_{j-1},  T_{j,j+1} = sqrt(b_j)/a_j.
    """
    a = np.asarray(alphas, dtype=float)
    b = np.asarray(betas, dtype=float)[: len(a) - 1]
    if not len(a):
        return np.zeros(0)
    diagonal = 1.0 / a
    diagonal[1:] += b / a[:-1]
    off = np.sqrt(np.abs(b)) / a[:-1]
    if len(a) == 1:
        return diagonal
    return la.eigh_tridiagonal(diagonal, off, eigvals_only=True)


def _cg(A, b, H, deflation, config, x0, reference):
    matvec = _matvec_of(A)
    apply_H = _applier_of(H)
    if deflation is not None and deflation.rank:
        project = deflation.project
    else:
        deflation = None

        def project(v):
            return v

    b = np.asarray(b, dtype=float)
    x = np.zeros_like(b) if x0 is None else np.array(x0, dtype=float)
    Pb = project(b)
    rhs_norm = float(np.sqrt(max(Pb @ apply_H(Pb), 0.0)))
    b_norm = float(np.linalg.norm(b))

    def recovered(iterate):
        return deflation.recover(iterate, b) if deflation is not None else iterate

    errors, reference_norm = None, None
    if reference is not None:
        reference = np.asarray(reference, dtype=float)
        reference_norm = float(np.sqrt(max(reference @ project(matvec(reference)), 0.0)))
        errors = []

    def record_error(iterate):
        if errors is not None:
            e = reference - recovered(iterate)
            errors.append(float(np.sqrt(max(e @ matvec(e), 0.0))))

    r = project(b - matvec(x))
    z = apply_H(r)
    rho = float(r @ z)
    residuals = [float(np.sqrt(max(rho, 0.0)))]
    record_error(x)
    p = z.copy()
    alphas, betas, gaps = [], [], []
    lam = None if config.stopping is StoppingMode.DEFLATED_CRITERION else 1.0
    drift = False
    termination = Termination.MAX_ITERATIONS

    def satisfied(factor):
        return residuals[-1] <= config.tol * np.sqrt(factor) * rhs_norm

    if rhs_norm == 0.0 or residuals[0] == 0.0:
        termination = Termination.CONVERGED
    else:
        for j in range(config.max_iterations):
            Ap = project(matvec(p))
            curvature = float(p @ Ap)
            if curvature <= np.finfo(float).eps * np.linalg.norm(p) * np.linalg.norm(Ap):
                if config.strict:
                    raise Breakdown(j, curvature)
                logger.warning("CG breakdown at iteration %d (p.Ap = %.3e)", j, curvature)
                termination = Termination.BREAKDOWN
                break
            alpha = rho / curvature
            x += alpha * p
            r -= alpha * Ap
            z = apply_H(r)
            rho_next = float(r @ z)
            beta = rho_next / rho
            alphas.append(alpha)
            betas.append(beta)
            residuals.append(float(np.sqrt(max(rho_next, 0.0))))
            record_error(x)

            if config.recompute_interval and (j + 1) % config.recompute_interval == 0:
                gap = float(np.linalg.norm(r - project(b - matvec(x))))
                gaps.append((j + 1, gap))
                if gap > DRIFT_TOL * b_norm and not drift:
                    drift = True
                    logger.warning(
                        "recursive residual drifted by %.3e at iteration %d", gap, j + 1
                    )

            if lam is None and (j + 1 == config.estimate_at or satisfied(1.0)):
                ritz = ritz_from_cg(alphas, betas)
                lam = float(ritz.min()) if len(ritz) and ritz.min() > 0 else 1.0
                logger.debug("lambda estimate %.3e after %d iterations", lam, j + 1)
            if lam is not None and satisfied(lam):
                termination = Termination.CONVERGED
                break
            if rho_next == 0.0:
                termination = Termination.CONVERGED
                break
            p = z + beta * p
            rho = rho_next

    x = recovered(x)
    logger.info(
        "%s: %s after %d iterations", "dpcg" if deflation else "pcg",
        termination.value, len(alphas),
    )
    return SolveReport(
        x=x,
        termination=termination,
        residuals=residuals,
        rhs_norm=rhs_norm,
        errors=errors,
        reference_norm=reference_norm,
        lambda_estimate=lam,
        alphas=alphas,
        betas=betas,
        residual_gaps=gaps,
        drift=drift,
        deflation_rank=deflation.rank if deflation is not None else 0,
    )


def pcg(A, b, H=None, config=None, x0=None, reference=None):
    """
    Preconditioned conjugate gradients.

    Parameters
    ----------
    A : SymmetricSparseMatrix, sparse matrix, ndarray or LinearOperator
        Symmetric positive (semi)definite operator.

    b : numpy.ndarray
        Right-hand side, consistent with A.

    H : optional
        Preconditioner applier H^{-1}: None (identity), a LinearOperator, an
        object with ``apply`` or a callable.

    config : SolverConfig, optional

    x0 : numpy.ndarray, optional
        Start vector, zero by default.

    reference : numpy.ndarray, optional
        Exact solution; enables the A-norm error history.

    Returns
    -------
    SolveReport
    """
    return _cg(A, b, H, None, config or SolverConfig(), x0, reference)


def dpcg(A, b, H=None, deflation=None, config=None, x0=None, reference=None):
    """Deflated PCG: CG on P A x = P b followed by x = Z E^{-1} Z^T b + P^T x."""
    return _cg(A, b, H, deflation, config or SolverConfig(), x0, reference)


class EigMode(str, enum.Enum):
    SMALLEST_NONZERO = "smallest_nonzero"
    LARGEST = "largest"


@dataclass
class EigenEstimate:
    value: float
    mode: EigMode
    iterations: int
    low_confidence: bool
    history: list


def estimate_extreme_eigs(operator, n, mode=EigMode.LARGEST, iters=50, zero_count=0, seed=0):
    """
    Coarse extreme eigenvalue of a symmetric operator by Lanczos.

    Full reorthogonalization keeps the Ritz values clean at these small
    iteration counts. For the smallest nonzero eigenvalue the start vector is
    the operator applied to a random vector, so the Krylov space stays in the
    range and the ``zero_count`` known null directions are ignored.
    """
    mode = EigMode(mode)
    apply = _applier_of(operator)
    rng = np.random.default_rng(seed)
    v = rng.standard_normal(n)
    if mode is EigMode.SMALLEST_NONZERO:
        v = apply(v)
    steps = max(1, min(iters, n - (zero_count if mode is EigMode.SMALLEST_NONZERO else 0)))

    V = np.zeros((steps, n))
    V[0] = v / np.linalg.norm(v)
    a = np.zeros(steps)
    b = np.zeros(max(steps - 1, 0))
    history = []
    m = steps
    for j in range(steps):
        w = apply(V[j])
        a[j] = w @ V[j]
        w = w - V[: j + 1].T @ (V[: j + 1] @ w)
        w = w - V[: j + 1].T @ (V[: j + 1] @ w)
        ritz = la.eigvalsh(np.diag(a[: j + 1]) + np.diag(b[:j], 1) + np.diag(b[:j], -1))
        if mode is EigMode.LARGEST:
            history.append(float(ritz[-1]))
        else:
            positive = ritz[ritz > 1e-12 * max(abs(ritz[-1]), 1e-300)]
            history.append(float(positive[0]) if len(positive) else float(ritz[-1]))
        if j == steps - 1:
            break
        norm = np.linalg.norm(w)
        if norm <= 1e-12 * max(abs(a[: j + 1]).max(), 1e-300):
            m = j + 1
            break
        b[j] = norm
        V[j + 1] = w / norm

    recent = history[-5:]
    low = m >= 5 and abs(recent[-1] - recent[0]) > 0.1 * abs(recent[-1])
    if low:
        logger.warning("Lanczos %s estimate not settled: %s", mode.value, recent)
    return EigenEstimate(history[-1], mode, len(history), low, history)


@dataclass
class BoundCheck:
    kappa: float
    relative_errors: np.ndarray
    bounds: np.ndarray

    @property
    def worst_ratio(self):
        mask = self.bounds > 0
        if not mask.any():
            return 0.0
        return float((self.relative_errors[mask] / self.bounds[mask]).max())


def _preconditioned_kappa(A, H, deflation):
    A_dense = as_operator_matrix(A)
    A_dense = A_dense.toarray() if hasattr(A_dense, "toarray") else np.asarray(A_dense)
    n = A_dense.shape[0]
    apply_H = _applier_of(H)
    H_dense = np.column_stack([apply_H(e) for e in np.eye(n)])
    operator = deflation.projected_dense() if deflation is not None and deflation.rank else A_dense
    values = np.sort(np.real(la.eigvals(H_dense @ operator)))
    zeros = deflation.rank if deflation is not None else 0
    return float(values[-1] / values[zeros])


def verify_error_bounds(report, reference, A, H=None, deflation=None, kappa=None, slack=1e-8):
    """
    Check the relative error against sqrt(kappa) times the relative
    preconditioned residual at every iterate.

    kappa is kappa(H^{-1} A), or kappa_eff(H^{-1} P A) with deflation; it is
    computed densely when not supplied.
    """
    if report.errors is None:
        raise ParameterOutOfRange("report", "no error history", "a run with a reference")
    matvec = _matvec_of(A)
    reference = np.asarray(reference, dtype=float)
    Ax = matvec(reference)
    if deflation is not None and deflation.rank:
        Ax = deflation.project(Ax)
    checked = replace(report, reference_norm=float(np.sqrt(max(reference @ Ax, 0.0))))
    if kappa is None:
        kappa = _preconditioned_kappa(A, H, deflation)
    errors = checked.relative_errors()
    residuals = checked.relative_residuals()
    bounds = np.sqrt(kappa) * residuals[: len(errors)]
    for j, (error, bound) in enumerate(zip(errors, bounds)):
        if error > bound * (1.0 + slack) + slack:
            raise BoundViolation(j, float(error), float(bound))
    return BoundCheck(kappa, np.asarray(errors), bounds)
