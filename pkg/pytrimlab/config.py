"""
Experiment configuration documents.

A configuration is a JSON object validated by :class:`ExperimentConfig`.
Unknown keys are rejected at every level, so a typo fails at load time
instead of silently running the default experiment. Example::

    {
      "experiment": "sweep",
      "geometry": {"name": "ridge", "params": {"variant": "decentered"}},
      "basis": {"kind": "lagrange", "degrees": [3]},
      "matrix": {"kind": "M"},
      "preconditioners": {"names": ["none", "jacobi", "deflation"]},
      "sweep": {"start": 1e-4, "stop": 1e-1, "count": 20}
    }
"""

import hashlib
import json
import logging
from pathlib import Path
from typing import Literal, Optional

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator, model_validator

from .errors import ParameterOutOfRange
from .krylov import SolverConfig, StoppingMode
from .preconditioners import BlockStrategy
from .spline_basis import MAX_DEGREE, BasisKind, BasisSpec, NodeRule

logger = logging.getLogger(__name__)

PRECONDITIONER_NAMES = ("none", "jacobi", "sipic", "schwarz", "deflation", "deflation_reduced")


class _Strict(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)


class GeometryRef(_Strict):
    """Catalog name plus builder parameters (the swept one is filled per point)."""

    name: str = "trimmed_line"
    params: dict = Field(default_factory=dict)


class BasisConfig(_Strict):
    kind: BasisKind = BasisKind.BSPLINE
    degrees: list[int] = Field(default_factory=lambda: [2])
    continuities: Optional[list[int]] = None
    nodes: NodeRule = NodeRule.EQUISPACED
    # Lagrange spectra through the Bernstein Gram matrix and collocation pair
    bernstein_pair: bool = False

    @field_validator("degrees")
    @classmethod
    def _degrees_in_range(cls, value):
        if not value:
            raise ValueError("at least one degree is required")
        for p in value:
            if not 1 <= p <= MAX_DEGREE:
                raise ValueError(f"degree {p} outside 1..{MAX_DEGREE}")
        return value

    def spec(self, dim):
        """The :class:`BasisSpec` broadcast to ``dim`` directions."""
        continuities = None if self.continuities is None else tuple(self.continuities)
        spec = BasisSpec(self.kind, tuple(self.degrees), continuities, self.nodes)
        return spec.with_dim(dim)

    @property
    def label(self):
        degree = "x".join(str(p) for p in self.degrees)
        if self.kind is BasisKind.LAGRANGE:
            return f"lagrange_p{degree}"
        smooth = "max" if self.continuities is None else "x".join(str(k) for k in self.continuities)
        return f"bspline_p{degree}_C{smooth}"


class MatrixConfig(_Strict):
    """M, K or the combination a1*M + a2*K."""

    kind: Literal["M", "K", "A"] = "M"
    a1: float = 1.0
    a2: float = 1.0
    # strong Dirichlet conditions on the catalog's sides, stiffness-type matrices only
    dirichlet: bool = True

    @model_validator(mode="after")
    def _coefficients(self):
        if self.kind == "A" and (self.a1 < 0 or self.a2 < 0 or self.a1 + self.a2 == 0):
            raise ValueError("a1, a2 must be nonnegative and not both zero")
        return self


class PreconditionerConfig(_Strict):
    names: list[Literal[PRECONDITIONER_NAMES]] = Field(
        default_factory=lambda: ["none", "jacobi", "sipic", "schwarz", "deflation"]
    )
    zeta: float = Field(0.9, gt=0.0, lt=1.0)
    max_sweeps: int = Field(10, ge=1)
    tau: float = Field(0.25, gt=0.0, le=1.0)
    block_strategies: list[BlockStrategy] = Field(
        default_factory=lambda: [BlockStrategy.SUPPORT_INTERSECTION]
    )
    drop_tol: float = Field(1e-14, gt=0.0)


class SweepConfig(_Strict):
    """A logarithmic or explicit list of values for one geometry parameter."""

    parameter: str = "delta"
    values: Optional[list[float]] = None
    start: float = 1e-4
    stop: float = 1e-1
    count: int = Field(20, ge=1)
    delta_in_h: bool = True

    @model_validator(mode="after")
    def _positive_range(self):
        if self.values is None and not (0 < self.start and 0 < self.stop):
            raise ValueError("logarithmic sweeps need positive start and stop")
        return self

    def points(self):
        if self.values is not None:
            return [float(v) for v in self.values]
        return [float(v) for v in np.logspace(np.log10(self.start), np.log10(self.stop), self.count)]


class SolverSettings(_Strict):
    tol: float = Field(1e-9, gt=0.0)
    max_iterations: int = Field(1000, ge=1)
    recompute_interval: int = Field(50, ge=0)
    stopping: StoppingMode = StoppingMode.DEFLATED_CRITERION
    estimate_at: int = Field(20, ge=1)

    def solver_config(self):
        return SolverConfig(
            tol=self.tol,
            max_iterations=self.max_iterations,
            recompute_interval=self.recompute_interval,
            stopping=self.stopping,
            estimate_at=self.estimate_at,
        )


class QuadratureConfig(_Strict):
    samples_per_axis: int = Field(4, ge=2)
    # None means degree + 1 points per direction
    gauss_order: Optional[int] = Field(None, ge=1)
    max_depth: int = Field(12, ge=1)
    area_tol: float = Field(1e-3, gt=0.0)
    # "arc" integrates disk cuts exactly, "quadtree" refines them
    curved: Literal["arc", "quadtree"] = "arc"


class WaveConfig(_Strict):
    x_center: float = 0.4844
    sigma: float = Field(0.1, gt=0.0)
    final_time: float = Field(0.4, gt=0.0)
    steps: int = Field(600, ge=1)
    snapshot_times: list[float] = Field(default_factory=lambda: [0.0, 0.1, 0.2, 0.3, 0.4])
    snapshot_grid: int = Field(61, ge=2)
    step_solver: Literal["dpcg", "direct"] = "dpcg"
    # "gaussian" is the pulse above, "constant" a flat state of value 1
    initial_state: Literal["gaussian", "constant"] = "gaussian"


class ProjectionConfig(_Strict):
    angles: Optional[list[float]] = None
    count: int = Field(20, ge=1)
    max_angle: float = float(np.pi / 2)

    def angle_values(self):
        if self.angles is not None:
            return [float(a) for a in self.angles]
        return [float(a) for a in np.linspace(0.0, self.max_angle, self.count, endpoint=False)]


class ExperimentConfig(_Strict):
    experiment: Literal["sweep", "spectrum", "solve", "project", "wave"] = "sweep"
    geometry: GeometryRef = Field(default_factory=GeometryRef)
    basis: BasisConfig = Field(default_factory=BasisConfig)
    matrix: MatrixConfig = Field(default_factory=MatrixConfig)
    preconditioners: PreconditionerConfig = Field(default_factory=PreconditionerConfig)
    sweep: SweepConfig = Field(default_factory=SweepConfig)
    solver: SolverSettings = Field(default_factory=SolverSettings)
    quadrature: QuadratureConfig = Field(default_factory=QuadratureConfig)
    wave: WaveConfig = Field(default_factory=WaveConfig)
    projection: ProjectionConfig = Field(default_factory=ProjectionConfig)
    output_dir: str = "results"
    seed: int = 0
    dense_cap: int = Field(4000, ge=1)
    jobs: int = Field(1, ge=1)
    solve_points: bool = False
    spectrum_count: int = Field(300, ge=1)
    export_matrices: bool = False

    @classmethod
    def load(cls, path):
        """Read and validate a JSON configuration file."""
        path = Path(path)
        text = path.read_text(encoding="utf-8")
        try:
            document = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ParameterOutOfRange("config", str(path), f"valid JSON ({exc})") from exc
        return cls.from_dict(document, source=str(path))

    @classmethod
    def from_dict(cls, document, source="<dict>"):
        try:
            config = cls.model_validate(document)
        except ValidationError as exc:
            problems = "; ".join(
                f"{'.'.join(str(p) for p in err['loc'])}: {err['msg']}" for err in exc.errors()
            )
            raise ParameterOutOfRange("config", source, problems) from exc
        logger.debug("loaded config %s (hash %s)", source, config.config_hash())
        return config

    def with_overrides(self, **overrides):
        """Copy with the non-None overrides applied and revalidated."""
        update = {key: value for key, value in overrides.items() if value is not None}
        if not update:
            return self
        return type(self).from_dict({**self.model_dump(mode="json"), **update}, source="overrides")

    def canonical_json(self):
        return json.dumps(self.model_dump(mode="json"), sort_keys=True, separators=(",", ":"))

    def config_hash(self):
        return hashlib.blake2b(self.canonical_json().encode("utf-8"), digest_size=16).hexdigest()

    def echo(self):
        """Flattened ``key = value`` lines of every parameter."""
        lines = []

        def walk(prefix, value):
            if isinstance(value, dict):
                for key in sorted(value):
                    walk(f"{prefix}.{key}" if prefix else key, value[key])
            else:
                lines.append(f"{prefix} = {json.dumps(value)}")

        walk("", self.model_dump(mode="json"))
        return lines
