"""
Experiment drivers: parameter sweeps, spectra, solver histories, L2
projections and a wave propagation run.

Every driver reads an :class:`~pytrimlab.config.ExperimentConfig`, writes
CSV tables headed by the config hash and the full parameter echo, and a
``manifest.json`` naming the files it produced. Floats are written with a
fixed format so identical configs give byte-identical tables.
"""

import concurrent.futures
import csv
import json
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import scipy.linalg as la
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from . import __version__
from .assembly import (
    DofMap,
    apply_strong_dirichlet,
    assemble_load,
    assemble_matrices,
    boundary_dofs,
    combine,
    evaluate_field,
    export_matrix,
    manufactured_rhs,
)
from .catalog import REGISTRY, catalog
from .config import PRECONDITIONER_NAMES, MatrixConfig
from .errors import (
    BoundViolation,
    DenseCapExceeded,
    ParameterOutOfRange,
    PrecisionLimited,
    StepSolveFailure,
    TrimLabError,
)
from .krylov import EigMode, dpcg, estimate_extreme_eigs, pcg, verify_error_bounds
from .preconditioners import (
    BlockStrategy,
    SchwarzBlocks,
    build_jacobi,
    deflation_build,
    rank_reduce,
    scaled_matrix,
    schwarz_build,
    select_blocks,
    sipic_build,
    weak_support_set,
)
from .spectra import (
    PRECISION_FLOOR,
    dense_spectrum,
    preconditioned_spectrum,
    slope_fit,
    unscaled_spectrum,
)
from .spline_basis import BasisKind, bernstein_collocation, build_tensor_basis, lagrange_pair

logger = logging.getLogger(__name__)

CSV_SCHEMA_VERSION = 1
PROJECTION_NOTE = "angle sweep of the rotated square with a hole stands in for a rotated lattice"


def projection_target(points):
    """f = prod_d sin(4 pi x_d), the function projected in L2."""
    return np.prod(np.sin(4.0 * np.pi * np.asarray(points)), axis=1)


def _load_function(config, dim):
    if config.matrix.kind == "M" or dim != 2:
        return projection_target
    return manufactured_rhs


# Problems


@dataclass
class Problem:
    """One assembled, Jacobi-scaled system on a catalog geometry.

    ``matrix`` acts on the unknowns: the active functions minus the strongly
    constrained ones; ``free[k]`` is the active index of unknown ``k``.
    """

    geometry: object
    spec: object
    classification: object
    basis: object
    dofmap: DofMap
    mass: object
    stiffness: object
    matrix: object
    free: np.ndarray
    nullity: int
    scaling: object
    A_hat: object

    @property
    def n(self):
        return self.matrix.dim

    @property
    def eta(self):
        return self.classification.eta

    def to_unknowns(self, active):
        """Unknown positions of active indices; constrained ones are dropped."""
        position = np.full(len(self.dofmap), -1, dtype=int)
        position[self.free] = np.arange(len(self.free))
        mapped = position[np.asarray(active, dtype=int)]
        return mapped[mapped >= 0]

    def load(self, f):
        return assemble_load(f, self.basis, self.classification, self.dofmap)[self.free]

    def schwarz_blocks(self, strategy):
        blocks = select_blocks(strategy, self.basis, self.classification, self.dofmap)
        if not len(self.dofmap.constrained):
            return blocks
        unique = {}
        for block in blocks.blocks:
            mapped = self.to_unknowns(block)
            if len(mapped):
                unique[tuple(mapped.tolist())] = mapped
        restricted = [unique[key] for key in sorted(unique)]
        singletons = sum(1 for block in restricted if len(block) == 1)
        return SchwarzBlocks(restricted, blocks.strategy, singletons)


def _select_matrix(matrix_config, mass, stiffness):
    if matrix_config.kind == "M":
        return mass
    if matrix_config.kind == "K":
        return stiffness
    return combine(matrix_config.a1, mass, matrix_config.a2, stiffness)


def geometry_for(config, **overrides):
    """Catalog geometry of the config with some parameters replaced."""
    params = {**config.geometry.params, **overrides}
    _, defaults = REGISTRY.get(config.geometry.name, (None, {}))
    if "seed" in defaults:
        params.setdefault("seed", config.seed)
    return catalog(config.geometry.name, **params)


def build_problem(config, geometry, matrix=None):
    """Classify, assemble, constrain and scale the system of ``geometry``."""
    matrix_config = matrix or config.matrix
    mesh = geometry.mesh
    spec = config.basis.spec(mesh.dim)
    q = config.quadrature
    order = q.gauss_order or max(spec.degrees) + 1
    classification = geometry.classify(
        q.samples_per_axis, order, q.max_depth, q.area_tol, q.curved
    )
    basis = build_tensor_basis(spec, mesh)
    dofmap = DofMap.from_classification(basis, classification)
    mass, stiffness = assemble_matrices(basis, classification, dofmap)
    A = _select_matrix(matrix_config, mass, stiffness)

    constrained = np.zeros(0, dtype=int)
    if matrix_config.kind != "M" and matrix_config.dirichlet and geometry.dirichlet_sides:
        constrained = boundary_dofs(basis, dofmap, geometry.dirichlet_sides)
    if len(constrained):
        reduced = apply_strong_dirichlet(
            A, np.zeros(A.dim), constrained, 0.0, basis, dofmap, geometry.dirichlet_sides
        )
        A, free = reduced.matrix, reduced.free
        dofmap = dofmap.with_constraints(constrained)
    else:
        free = np.arange(A.dim)

    nullity = 0
    if matrix_config.kind == "K":
        nullity = 0 if len(constrained) else 1

    scaling = build_jacobi(A)
    A_hat = scaled_matrix(A, scaling)
    logger.info(
        "%s: %d unknowns (%d constrained), eta = %.3e",
        geometry.name, A.dim, len(constrained), classification.eta,
    )
    return Problem(
        geometry, spec, classification, basis, dofmap, mass, stiffness,
        A, free, nullity, scaling, A_hat,
    )


# Preconditioners


def preconditioner_labels(settings):
    """Column labels in schema order; Schwarz expands per block strategy."""
    labels = []
    for name in PRECONDITIONER_NAMES:
        if name not in settings.names:
            continue
        if name == "schwarz":
            labels.extend(f"schwarz_{BlockStrategy(s).value}" for s in settings.block_strategies)
        else:
            labels.append(name)
    return labels


class PreconditionerSet:
    """The configured preconditioners of one problem, built on first use."""

    def __init__(self, problem, settings):
        self.problem = problem
        self.settings = settings
        self.labels = preconditioner_labels(settings)
        self._built = {}
        self._weak = None

    def __getitem__(self, label):
        if label not in self._built:
            self._built[label] = self._build(label)
        return self._built[label]

    def weak_set(self):
        """Active indices of the unconstrained weakly supported functions."""
        if self._weak is None:
            p = self.problem
            weak = weak_support_set(p.basis, p.classification, p.dofmap)
            self._weak = np.setdiff1d(weak, p.dofmap.constrained)
        return self._weak

    def _build(self, label):
        p, s = self.problem, self.settings
        if label in ("none", "jacobi"):
            return None
        if label == "sipic":
            return sipic_build(p.A_hat, s.zeta, s.max_sweeps)
        if label.startswith("schwarz_"):
            strategy = BlockStrategy(label[len("schwarz_"):])
            return schwarz_build(p.A_hat, p.schwarz_blocks(strategy), s.drop_tol)
        if label == "deflation":
            return deflation_build(p.A_hat, p.to_unknowns(self.weak_set()))
        if label == "deflation_reduced":
            kept = rank_reduce(self.weak_set(), s.tau, p.basis, p.classification, p.dofmap)
            return deflation_build(p.A_hat, p.to_unknowns(kept), s.tau)
        raise ParameterOutOfRange("preconditioner", label, self.labels)

    def reports(self):
        out = {}
        for label, built in self._built.items():
            if built is not None and hasattr(built, "report"):
                out[label] = built.report()
        return out


def _is_deflation(label):
    return label in ("deflation", "deflation_reduced")


def _bernstein_pair_spectrum(problem, config):
    """Jacobi-scaled Lagrange spectrum through the Bernstein matrix and the collocation pair."""
    mesh = problem.geometry.mesh
    bernstein = build_tensor_basis(problem.spec.bernstein(), mesh)
    mass, stiffness = assemble_matrices(bernstein, problem.classification, problem.dofmap)
    left = _select_matrix(config.matrix, mass, stiffness)
    collocation = bernstein_collocation(problem.spec, mesh, problem.dofmap.active)
    right = lagrange_pair(collocation, problem.scaling.D)
    return dense_spectrum(left, right, problem.nullity, config.dense_cap)


def spectrum_of(label, problem, preconditioners, config):
    """Spectrum of the operator preconditioned by ``label``."""
    cap = config.dense_cap
    if label == "none":
        return unscaled_spectrum(problem.matrix, problem.A_hat, problem.scaling, problem.nullity, cap)
    if label == "jacobi":
        if (
            problem.spec.kind is BasisKind.LAGRANGE
            and config.basis.bernstein_pair
            and not len(problem.dofmap.constrained)
        ):
            return _bernstein_pair_spectrum(problem, config)
        return preconditioned_spectrum(problem.A_hat, None, None, problem.nullity, cap)
    built = preconditioners[label]
    if _is_deflation(label):
        return preconditioned_spectrum(problem.A_hat, None, built, problem.nullity, cap)
    return preconditioned_spectrum(problem.A_hat, built, None, problem.nullity, cap)


def _lanczos_kappa(label, problem, preconditioners, seed):
    A = problem.A_hat.full
    zero_count = problem.nullity
    operator = A
    if _is_deflation(label):
        space = preconditioners[label]
        zero_count += space.rank

        def operator(v):
            return space.project(A @ v)

    top = estimate_extreme_eigs(operator, problem.n, EigMode.LARGEST, seed=seed)
    bottom = estimate_extreme_eigs(
        operator, problem.n, EigMode.SMALLEST_NONZERO, zero_count=zero_count, seed=seed
    )
    if not bottom.value > PRECISION_FLOOR * abs(top.value):
        raise PrecisionLimited(bottom.value, top.value, PRECISION_FLOOR * abs(top.value))
    return top.value / bottom.value


def kappa_of(label, problem, preconditioners, config):
    """Condition number; Jacobi and deflation fall back to Lanczos beyond the dense cap."""
    try:
        report = spectrum_of(label, problem, preconditioners, config)
    except DenseCapExceeded:
        if label != "jacobi" and not _is_deflation(label):
            raise
        logger.info("%s: %d unknowns beyond dense cap, Lanczos estimate", label, problem.n)
        return _lanczos_kappa(label, problem, preconditioners, config.seed), False
    return report.kappa, report.nullity_mismatch


def solve_with(label, problem, preconditioners, b, config, reference_hat=None, x0_hat=None):
    """(Deflated) PCG on the scaled system, or plain CG on the unscaled one for ``none``."""
    settings = config.solver.solver_config()
    scaling = problem.scaling
    if label == "none":
        reference = None if reference_hat is None else scaling.unscale_solution(reference_hat)
        x0 = None if x0_hat is None else scaling.unscale_solution(x0_hat)
        return pcg(problem.matrix, b, None, settings, x0=x0, reference=reference)
    b_hat = scaling.scale_rhs(b)
    if label == "jacobi":
        return pcg(problem.A_hat, b_hat, None, settings, x0=x0_hat, reference=reference_hat)
    built = preconditioners[label]
    if _is_deflation(label):
        return dpcg(problem.A_hat, b_hat, None, built, settings, x0=x0_hat, reference=reference_hat)
    return pcg(problem.A_hat, b_hat, built, settings, x0=x0_hat, reference=reference_hat)


def direct_oracle(problem, b_hat, dense_cap):
    """Dense Cholesky solution of the scaled system, or None when unavailable."""
    if problem.n > dense_cap:
        logger.warning("direct oracle skipped: %d unknowns > %d", problem.n, dense_cap)
        return None
    try:
        factor = la.cho_factor(problem.A_hat.toarray())
    except la.LinAlgError as exc:
        logger.warning("direct oracle failed (%s), reporting residuals only", exc)
        return None
    return la.cho_solve(factor, b_hat)


# Tables


def _format(value):
    if value is None:
        return ""
    if isinstance(value, (bool, np.bool_)):
        return str(bool(value)).lower()
    if isinstance(value, (float, np.floating)):
        return f"{float(value):.12e}"
    return str(value)


def write_table(path, header_lines, columns, rows):
    """CSV with ``# ``-prefixed header lines before the column row."""
    with open(path, "w", newline="", encoding="utf-8") as handle:
        for line in header_lines:
            handle.write(f"# {line}\n")
        writer = csv.DictWriter(
            handle, fieldnames=columns, extrasaction="ignore", lineterminator="\n"
        )
        writer.writeheader()
        for row in rows:
            writer.writerow({column: _format(row.get(column)) for column in columns})
    logger.info("wrote %s (%d rows)", path, len(rows))
    return Path(path)


def table_header(config, kind, *notes):
    return [
        f"pytrimlab {kind} schema {CSV_SCHEMA_VERSION}",
        f"config_hash = {config.config_hash()}",
        *notes,
        *config.echo(),
    ]


def write_manifest(out_dir, config, command, outputs, flags=None):
    document = {
        "command": command,
        "config_hash": config.config_hash(),
        "version": __version__,
        "outputs": sorted(Path(p).name for p in outputs),
        "flags": flags or {},
    }
    path = Path(out_dir) / "manifest.json"
    path.write_text(json.dumps(document, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    return path


def _output_dir(config):
    out = Path(config.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    return out


@dataclass
class RunResult:
    rows: list
    outputs: list
    reports: dict = field(default_factory=dict)


# Sweeps


def sweep_columns(config, parameter, solve):
    """Versioned column schema of sweep and projection tables."""
    settings = config.preconditioners
    schwarz = [
        f"kappa_schwarz_{BlockStrategy(s).value}" for s in settings.block_strategies
    ] if "schwarz" in settings.names else []
    columns = [parameter, "eta", "kappa_none", "kappa_jacobi", "kappa_sipic", *schwarz,
               "kappa_deflation", "kappa_deflation_reduced", "rank_full", "rank_reduced"]
    if solve:
        columns.extend(f"iters_{label}" for label in preconditioner_labels(settings))
    columns.extend(["dofs", "nullity_mismatch", "precision_limited", "error"])
    return columns


def evaluate_point(config, parameter, index, value, solve):
    """One table row: eta, kappa per preconditioner, deflation ranks and iterations.

    Failures are recorded in the ``error`` column; the remaining columns of
    the row are still filled where possible.
    """
    row = {"index": index, parameter: float(value)}
    errors, mismatched, limited = [], [], []
    overrides = {parameter: value}
    if parameter == "delta":
        overrides["delta_in_h"] = config.sweep.delta_in_h
    try:
        geometry = geometry_for(config, **overrides)
        problem = build_problem(config, geometry)
    except TrimLabError as exc:
        logger.warning("%s = %g failed: %s", parameter, value, exc)
        row["error"] = str(exc)
        return row
    row.update(eta=problem.eta, dofs=problem.n)
    preconditioners = PreconditionerSet(problem, config.preconditioners)

    for label in preconditioners.labels:
        try:
            kappa, mismatch = kappa_of(label, problem, preconditioners, config)
        except PrecisionLimited as exc:
            logger.warning("%s = %g, %s: kappa left empty: %s", parameter, value, label, exc)
            limited.append(label)
            continue
        except (TrimLabError, la.LinAlgError) as exc:
            errors.append(f"{label}: {exc}")
            continue
        row[f"kappa_{label}"] = kappa
        if mismatch:
            mismatched.append(label)
        if label == "deflation":
            row["rank_full"] = preconditioners[label].rank
        elif label == "deflation_reduced":
            row["rank_reduced"] = preconditioners[label].rank

    if solve:
        if problem.nullity:
            errors.append("iterations skipped for a singular matrix")
        else:
            b = problem.load(_load_function(config, problem.geometry.mesh.dim))
            for label in preconditioners.labels:
                try:
                    report = solve_with(label, problem, preconditioners, b, config)
                except TrimLabError as exc:
                    errors.append(f"{label}: {exc}")
                    continue
                row[f"iters_{label}"] = report.iterations

    row["nullity_mismatch"] = "|".join(mismatched)
    row["precision_limited"] = "|".join(limited)
    row["error"] = "; ".join(errors)
    logger.info("point %d: %s = %.3e, eta = %.3e", index, parameter, value, problem.eta)
    return row


def _point_task(task):
    return evaluate_point(*task)


def run_points(config, parameter, values, solve):
    """Rows in sweep order, computed in a process pool when ``jobs`` > 1."""
    tasks = [(config, parameter, i, v, solve) for i, v in enumerate(values)]
    if config.jobs > 1 and len(tasks) > 1:
        with concurrent.futures.ProcessPoolExecutor(max_workers=config.jobs) as pool:
            return list(pool.map(_point_task, tasks))
    return [_point_task(task) for task in tasks]


def _numeric(value):
    return isinstance(value, (int, float, np.integer, np.floating)) and not isinstance(value, bool)


def summary_rows(rows, parameter, columns):
    """Slope fits of every kappa column and its max/min ratio over the sweep.

    Points without a positive value in a column are left out of its fits
    with a warning.
    """
    kappas = [c for c in columns if c.startswith("kappa_")]
    fits = [("slope_vs_eta", "eta", False), ("slope_vs_eta_last_decade", "eta", True)]
    if parameter == "delta":
        fits.append(("slope_vs_delta", "delta", False))
    evaluated = [r for r in rows if _numeric(r.get("eta"))]
    samples = {}
    for column in kappas:
        label = column[len("kappa_"):]
        requested = any(
            column in r or label in str(r.get("precision_limited", "")).split("|") for r in evaluated
        )
        usable = [r for r in evaluated if _numeric(r.get(column)) and float(r[column]) > 0.0]
        dropped = [r.get("index") for r in evaluated if not any(r is u for u in usable)]
        if requested and dropped:
            logger.warning("%s: points %s left out of the slope fits", column, dropped)
        samples[column] = usable

    out = []
    for name, x, last in fits:
        summary = {parameter: name}
        for column in kappas:
            pairs = [(r[x], r[column]) for r in samples[column] if _numeric(r.get(x))]
            if len(pairs) < 4:
                continue
            xs, ys = zip(*pairs)
            try:
                summary[column] = slope_fit(xs, ys, last_decade=last).slope
            except TrimLabError as exc:
                logger.warning("no %s for %s: %s", name, column, exc)
        out.append(summary)

    ratio = {parameter: "max_over_min"}
    for column in kappas + ["rank_full", "rank_reduced"]:
        values = [float(r[column]) for r in samples.get(column, rows) if _numeric(r.get(column))]
        if values and min(values) > 0:
            ratio[column] = max(values) / min(values)
    out.append(ratio)
    return out


def run_sweep(config):
    """Sweep one geometry parameter; one row per point plus summary rows."""
    out = _output_dir(config)
    parameter = config.sweep.parameter
    rows = run_points(config, parameter, config.sweep.points(), config.solve_points)
    columns = sweep_columns(config, parameter, config.solve_points)
    rows = rows + summary_rows(rows, parameter, columns)
    path = write_table(
        out / f"sweep_{config.geometry.name}.csv",
        table_header(config, "sweep", f"basis = {config.basis.label}"),
        columns,
        rows,
    )
    outputs = [path]
    outputs.append(write_manifest(out, config, "sweep", outputs, {"jobs": config.jobs}))
    return RunResult(rows, outputs)


def run_projection(config):
    """L2 projection of sin(4 pi x) sin(4 pi y) over the angle sweep of a rotated geometry."""
    if config.matrix.kind != "M":
        raise ParameterOutOfRange("matrix.kind", config.matrix.kind, "M")
    _, defaults = REGISTRY.get(config.geometry.name, (None, {}))
    if "angle" not in defaults:
        raise ParameterOutOfRange("geometry.name", config.geometry.name, "a geometry with an angle")
    out = _output_dir(config)
    rows = run_points(config, "angle", config.projection.angle_values(), solve=True)
    columns = sweep_columns(config, "angle", solve=True)
    rows = rows + summary_rows(rows, "angle", columns)
    path = write_table(
        out / f"projection_{config.geometry.name}.csv",
        table_header(config, "projection", PROJECTION_NOTE),
        columns,
        rows,
    )
    outputs = [path]
    outputs.append(write_manifest(out, config, "project", outputs, {"jobs": config.jobs}))
    return RunResult(rows, outputs)


# Single-geometry runs


def _export(problem, out, config):
    comment = f"pytrimlab config {config.config_hash()}"
    paths = [out / "matrix.mtx", out / "matrix_scaled.mtx"]
    export_matrix(problem.matrix, paths[0], comment)
    export_matrix(problem.A_hat, paths[1], comment)
    return paths


def run_spectrum(config):
    """Leading eigenvalues per preconditioner plus a summary table."""
    out = _output_dir(config)
    problem = build_problem(config, geometry_for(config))
    preconditioners = PreconditionerSet(problem, config.preconditioners)
    header = table_header(config, "spectrum", f"eta = {problem.eta:.12e}")
    outputs, rows = [], []
    for label in preconditioners.labels:
        row = {"preconditioner": label}
        try:
            report = spectrum_of(label, problem, preconditioners, config)
        except (TrimLabError, la.LinAlgError) as exc:
            row["error"] = str(exc)
            rows.append(row)
            continue
        row.update(
            kappa=None if report.precision_limited else report.kappa,
            precision_limited=report.precision_limited,
            lambda_min=report.lambda_min,
            lambda_max=report.lambda_max,
            zero_count=report.zero_count,
            numerical_nullity=report.numerical_nullity(),
            method=report.method,
        )
        rows.append(row)
        values = [{"index": i, "eigenvalue": v} for i, v in enumerate(report.first(config.spectrum_count))]
        outputs.append(write_table(out / f"spectrum_{label}.csv", header, ["index", "eigenvalue"], values))

    columns = ["preconditioner", "kappa", "precision_limited", "lambda_min", "lambda_max", "zero_count",
               "numerical_nullity", "method", "error"]
    outputs.append(write_table(out / "spectrum_summary.csv", header, columns, rows))
    if config.export_matrices:
        outputs.extend(_export(problem, out, config))
    outputs.append(write_manifest(out, config, "spectrum", outputs,
                                  {"export_matrices": config.export_matrices}))
    return RunResult(rows, outputs, preconditioners.reports())


def run_solve(config):
    """Solve once per preconditioner against a dense direct oracle; write error histories."""
    out = _output_dir(config)
    problem = build_problem(config, geometry_for(config))
    if problem.nullity:
        raise ParameterOutOfRange("matrix", "singular stiffness", "a Dirichlet or mass system")
    preconditioners = PreconditionerSet(problem, config.preconditioners)
    b = problem.load(_load_function(config, problem.geometry.mesh.dim))
    reference_hat = direct_oracle(problem, problem.scaling.scale_rhs(b), config.dense_cap)
    header = table_header(config, "solve", f"eta = {problem.eta:.12e}")

    outputs, rows, reports = [], [], {}
    for label in preconditioners.labels:
        row = {"preconditioner": label}
        rows.append(row)
        try:
            report = solve_with(label, problem, preconditioners, b, config, reference_hat)
        except TrimLabError as exc:
            row["error"] = str(exc)
            continue
        reports[label] = report
        errors = report.relative_errors()
        row.update(
            termination=report.termination.value,
            iterations=report.iterations,
            relative_residual=float(report.relative_residuals()[-1]),
            relative_error=None if errors is None else float(errors[-1]),
            lambda_estimate=report.lambda_estimate,
            deflation_rank=report.deflation_rank,
            drift=report.drift,
        )
        if errors is not None and label != "none" and problem.n <= config.dense_cap:
            row["bound_ratio"] = _bound_ratio(label, problem, preconditioners, report, reference_hat, row, config.dense_cap)
        history = [{"iteration": j, "residual": res, "error": err} for j, res, err in report.history_rows()]
        outputs.append(write_table(out / f"history_{label}.csv", header,
                                   ["iteration", "residual", "error"], history))

    columns = ["preconditioner", "termination", "iterations", "relative_residual",
               "relative_error", "lambda_estimate", "deflation_rank", "drift",
               "bound_ratio", "error"]
    outputs.append(write_table(out / "solve_summary.csv", header, columns, rows))
    if config.export_matrices:
        outputs.extend(_export(problem, out, config))
    outputs.append(write_manifest(out, config, "solve", outputs,
                                  {"oracle": reference_hat is not None}))
    return RunResult(rows, outputs, reports)


def _bound_ratio(label, problem, preconditioners, report, reference_hat, row, dense_cap):
    built = None if label == "jacobi" else preconditioners[label]
    H, deflation = (None, built) if _is_deflation(label) else (built, None)
    try:
        spectrum = preconditioned_spectrum(problem.A_hat, H, deflation, problem.nullity, dense_cap)
        check = verify_error_bounds(report, reference_hat, problem.A_hat, H, deflation, spectrum.kappa)
    except BoundViolation as exc:
        row["error"] = str(exc)
        return None
    except TrimLabError as exc:
        logger.info("no bound check for %s: %s", label, exc)
        return None
    return check.worst_ratio


# Wave propagation


@dataclass
class WaveResult:
    times: np.ndarray
    iterations: list
    energies: list
    u: np.ndarray
    snapshots: dict
    outputs: list
    problem: Problem = None


def _initial_state(wave, points):
    if wave.initial_state == "constant":
        return np.ones(len(points))
    return np.exp(-(((points[:, 0] - wave.x_center) / wave.sigma) ** 2))


def _snapshot_points(mesh, count):
    axes = [np.linspace(lo, hi, count) for lo, hi in zip(mesh.lower, mesh.upper)]
    grids = np.meshgrid(*axes, indexing="ij")
    return np.stack([g.ravel() for g in grids], axis=1)


def run_wave(config):
    """
    Scalar wave equation M u'' + K u = 0 with homogeneous Neumann conditions.

    Trapezoidal Newmark in acceleration form: every step solves
    (M + dt^2/4 K) a_{n+1} = -K (u_n + dt v_n + dt^2/4 a_n). The initial
    state is a quasi-interpolant at the Greville points and v_0 = 0. Step
    solves use DPCG on the Jacobi-scaled matrix (or a sparse LU with
    ``step_solver = "direct"``), warm-started from the previous acceleration.
    """
    wave = config.wave
    out = _output_dir(config)
    dt = wave.final_time / wave.steps
    step_matrix = MatrixConfig(kind="A", a1=1.0, a2=dt * dt / 4.0, dirichlet=False)
    problem = build_problem(config, geometry_for(config), matrix=step_matrix)
    M, K = problem.mass.full, problem.stiffness.full
    scaling = problem.scaling

    anchors = problem.basis.greville()[problem.dofmap.active]
    u = _initial_state(wave, anchors)
    v = np.zeros_like(u)
    a = spla.factorized(sp.csc_matrix(M))(-(K @ u))

    preconditioners = PreconditionerSet(problem, config.preconditioners)
    deflation = None
    if wave.step_solver == "direct":
        direct = spla.factorized(sp.csc_matrix(problem.matrix.full))
    else:
        names = config.preconditioners.names
        label = "deflation_reduced" if "deflation_reduced" in names else "deflation"
        if label in names:
            deflation = preconditioners[label]
    settings = config.solver.solver_config()

    points = _snapshot_points(problem.geometry.mesh, wave.snapshot_grid)
    snapshot_steps = {}
    for t in wave.snapshot_times:
        if 0.0 <= t <= wave.final_time * (1.0 + 1e-12):
            snapshot_steps[int(round(t / dt))] = t
    snapshots = {}
    steps = [{"step": 0, "time": 0.0, "iterations": 0, "termination": "initial",
              "energy": 0.5 * u @ (K @ u)}]

    def record_snapshot(n):
        if n in snapshot_steps:
            snapshots[snapshot_steps[n]] = evaluate_field(
                problem.basis, problem.dofmap, u, points, problem.geometry.domain
            )

    try:
        record_snapshot(0)
        for n in range(wave.steps):
            predictor = u + dt * v + dt * dt / 4.0 * a
            rhs = -(K @ predictor)
            if wave.step_solver == "direct":
                a_next, iterations, termination = direct(rhs), 0, "direct"
            else:
                b_hat = scaling.scale_rhs(rhs)
                x0 = scaling.D * a
                if deflation is not None:
                    report = dpcg(problem.A_hat, b_hat, None, deflation, settings, x0=x0)
                else:
                    report = pcg(problem.A_hat, b_hat, None, settings, x0=x0)
                if not report.converged:
                    raise StepSolveFailure(n + 1, report.termination.value, report.iterations)
                a_next = scaling.unscale_solution(report.x)
                iterations, termination = report.iterations, report.termination.value
            u = predictor + dt * dt / 4.0 * a_next
            v = v + dt / 2.0 * (a + a_next)
            a = a_next
            steps.append({
                "step": n + 1,
                "time": (n + 1) * dt,
                "iterations": iterations,
                "termination": termination,
                "energy": 0.5 * v @ (M @ v) + 0.5 * u @ (K @ u),
            })
            logger.debug("step %d: %d iterations", n + 1, iterations)
            record_snapshot(n + 1)
    finally:
        outputs = _write_wave(out, config, steps, snapshots, points)

    return WaveResult(
        times=np.array([s["time"] for s in steps]),
        iterations=[s["iterations"] for s in steps[1:]],
        energies=[s["energy"] for s in steps],
        u=u,
        snapshots=snapshots,
        outputs=outputs,
        problem=problem,
    )


def _write_wave(out, config, steps, snapshots, points):
    header = table_header(config, "wave")
    outputs = [write_table(out / "wave_steps.csv", header,
                           ["step", "time", "iterations", "termination", "energy"], steps)]
    names = ["x", "y", "z"][: points.shape[1]]
    rows = []
    for time in sorted(snapshots):
        for point, value in zip(points, snapshots[time]):
            rows.append({"time": time, **dict(zip(names, map(float, point))), "u": float(value)})
    outputs.append(write_table(out / "wave_snapshots.csv", header, ["time", *names, "u"], rows))
    outputs.append(write_manifest(out, config, "wave", outputs,
                                  {"complete": len(steps) == config.wave.steps + 1}))
    return outputs


RUNNERS = {
    "sweep": run_sweep,
    "spectrum": run_spectrum,
    "solve": run_solve,
    "project": run_projection,
    "wave": run_wave,
}
