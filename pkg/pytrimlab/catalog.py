"""Named trimmed geometries used by the experiments.

Every geometry is rebuilt from its name and parameters alone. ``delta`` is the
trim offset in box units unless ``delta_in_h`` is set, in which case it is a
multiple of the mesh size h.
"""

import logging
from dataclasses import dataclass

import numpy as np
import shapely

from .errors import ParameterOutOfRange, UnknownGeometry
from .trim_geometry import (
    Complement,
    ConvexPolygon,
    Disk,
    HalfSpace,
    Intersection,
    TensorMesh,
    TrimmedDomain,
    Union,
    classify,
)

logger = logging.getLogger(__name__)

ROOF_SLOPE = 0.7
# Roof half-width and wall offset, in elements.
ROOF_HALF_WIDTH = 5


@dataclass
class CatalogGeometry:
    name: str
    params: dict
    domain: TrimmedDomain
    mesh: TensorMesh
    dirichlet_sides: tuple = ()
    description: str = ""

    @property
    def h(self):
        return self.mesh.h

    @property
    def analytic_area(self):
        return self.domain.analytic_area

    @property
    def stiffness_nullity(self):
        """Number of zero eigenvalues of the stiffness matrix (constants under pure Neumann)."""
        return 0 if self.dirichlet_sides else 1

    def classify(
        self, samples_per_axis=4, gauss_order=3, max_depth=12, area_tol=1e-3, curved="arc"
    ):
        return classify(
            self.mesh, self.domain, samples_per_axis, gauss_order, max_depth, area_tol, curved
        )

    def to_dict(self):
        return {
            "name": self.name,
            "params": self.params,
            "description": self.description,
            "dirichlet_sides": list(self.dirichlet_sides),
            "mesh": {
                "shape": list(self.mesh.shape),
                "lower": self.mesh.lower.tolist(),
                "upper": self.mesh.upper.tolist(),
            },
            "polygonal": self.domain.polygonal,
            "domain": self.domain.to_dict(),
        }


def _rectangle(x0, y0, x1, y1):
    return ConvexPolygon([(x0, y0), (x1, y0), (x1, y1), (x0, y1)])


def _check_delta(delta, upper, name="delta"):
    if not 0.0 < delta <= upper:
        raise ParameterOutOfRange(name, delta, f"(0, {upper:g}]")


def trimmed_line(delta, subdivisions=128, delta_in_h=False):
    """Omega = (0, 0.75 + delta) in the unit interval, Dirichlet at x = 0."""
    h = 1.0 / subdivisions
    delta = delta * h if delta_in_h else delta
    _check_delta(delta, h)
    mesh = TensorMesh.uniform([0.0], [1.0], subdivisions)
    right = 0.75 + delta
    domain = TrimmedDomain([0.0], [1.0], HalfSpace([1.0], right), analytic_area=right)
    return mesh, domain, ("left",), "trimmed 1D line"


def stretched_square(delta, subdivisions=16, delta_in_h=False):
    """Square of side 0.5 + delta with its lower left corner at the origin."""
    h = 1.0 / subdivisions
    delta = delta * h if delta_in_h else delta
    _check_delta(delta, h)
    side = 0.5 + delta
    mesh = TensorMesh.uniform([0.0, 0.0], [1.0, 1.0], subdivisions)
    domain = TrimmedDomain(
        [0.0, 0.0], [1.0, 1.0], _rectangle(0.0, 0.0, side, side), analytic_area=side**2
    )
    return mesh, domain, (), "stretched square"


def _house(tips_x, tip_y, h):
    """Base rectangle on y = 0 with one roof tent per tip; walls 5h outside the outer tips."""
    half = ROOF_HALF_WIDTH * h
    eave = tip_y - ROOF_SLOPE * half
    left, right = min(tips_x) - half, max(tips_x) + half
    tents = [
        ConvexPolygon([(x - half, eave), (x + half, eave), (x, tip_y)]) for x in tips_x
    ]
    base = _rectangle(left, 0.0, right, eave)
    tree = Union([base, *tents])
    return tree, eave, (left, right)


def _house_area(tips_x, tip_y, h):
    tree, _, _ = _house(tips_x, tip_y, h)
    shape = shapely.union_all([shapely.Polygon(c.vertices) for c in tree.children])
    return float(shape.area)


RIDGE_SHIFTS = {"corner": 0.0, "centered": 0.5, "decentered": 0.6}


def ridge(delta, variant="corner", subdivisions=16, delta_in_h=False):
    """House with one ridge; the variant shifts it horizontally by 0, h/2 or 0.6h."""
    if variant not in RIDGE_SHIFTS:
        raise ParameterOutOfRange("variant", variant, sorted(RIDGE_SHIFTS))
    h = 1.0 / subdivisions
    delta = delta * h if delta_in_h else delta
    _check_delta(delta, h)
    tip_x = 0.5 + RIDGE_SHIFTS[variant] * h
    tip_y = 0.75 + delta
    tree, _, _ = _house([tip_x], tip_y, h)
    mesh = TensorMesh.uniform([0.0, 0.0], [1.0, 1.0], subdivisions)
    domain = TrimmedDomain(
        [0.0, 0.0], [1.0, 1.0], tree, analytic_area=_house_area([tip_x], tip_y, h)
    )
    return mesh, domain, (), f"ridge ({variant})"


def ridge_perturbed(delta, seed=0, subdivisions=16, delta_in_h=False):
    """Corner ridge with the interior vertical grid lines randomly moved by up to h/4.

    Grid lines on the walls of the house stay in place.
    """
    h = 1.0 / subdivisions
    delta = delta * h if delta_in_h else delta
    _check_delta(delta, h)
    mesh, domain, sides, _ = ridge(delta, "corner", subdivisions)
    xs = mesh.breakpoints[0].copy()
    _, _, walls = _house([0.5], 0.75 + delta, h)
    rng = np.random.default_rng(seed)
    moved = np.ones(len(xs), dtype=bool)
    moved[[0, -1]] = False
    for wall in walls:
        moved &= ~np.isclose(xs, wall)
    xs[moved] += rng.uniform(-0.25 * h, 0.25 * h, size=moved.sum())
    mesh = TensorMesh([xs, mesh.breakpoints[1]])
    return mesh, domain, sides, "ridge on a perturbed grid"


def two_ridges(delta, smoothness="C0", subdivisions=24, delta_in_h=False):
    """Two ridges h (C0) or 3h (Cmax) apart, tips at element centers; Dirichlet at the base."""
    separations = {"C0": 1, "Cmax": 3}
    if smoothness not in separations:
        raise ParameterOutOfRange("smoothness", smoothness, sorted(separations))
    h = 1.0 / subdivisions
    delta = delta * h if delta_in_h else delta
    _check_delta(delta, h)
    gap = separations[smoothness] * h
    tips = [0.5 - gap / 2.0, 0.5 + gap / 2.0]
    tip_y = 0.75 + delta
    tree, _, _ = _house(tips, tip_y, h)
    mesh = TensorMesh.uniform([0.0, 0.0], [1.0, 1.0], subdivisions)
    domain = TrimmedDomain([0.0, 0.0], [1.0, 1.0], tree, _house_area(tips, tip_y, h))
    return mesh, domain, ("bottom",), f"two ridges ({smoothness})"


def three_ridges(delta, subdivisions=24, delta_in_h=False):
    """Three ridges 3h apart with tips at element centers; Dirichlet at the base."""
    h = 1.0 / subdivisions
    delta = delta * h if delta_in_h else delta
    _check_delta(delta, h)
    tips = [0.5 + h / 2.0 + k * 3.0 * h for k in (-1, 0, 1)]
    tip_y = 0.75 + delta
    tree, _, _ = _house(tips, tip_y, h)
    mesh = TensorMesh.uniform([0.0, 0.0], [1.0, 1.0], subdivisions)
    domain = TrimmedDomain([0.0, 0.0], [1.0, 1.0], tree, _house_area(tips, tip_y, h))
    return mesh, domain, ("bottom",), "three ridges"


# Outer square of square_with_hole: edges of slope 1/2 and -2 through mesh
# vertices, so its own cuts keep fractions of at least 1/4 when the
# subdivisions are a multiple of 8.
GRID_ANGLE = float(np.arctan(0.5))
GRID_SIDE = float(np.sqrt(5.0) / 4.0)


def square_with_hole(delta, angle=GRID_ANGLE, subdivisions=16, side=GRID_SIDE, delta_in_h=False):
    """Rotated square with a central hole of radius sqrt(5) h - delta centered on a grid vertex.

    At the default angle and side only the hole produces small cut fractions;
    other angles also cut slivers off the outer square.
    """
    h = 1.0 / subdivisions
    delta = delta * h if delta_in_h else delta
    _check_delta(delta, h)
    center = np.array([0.5, 0.5])
    radius = np.sqrt(5.0) * h - delta
    c, s = np.cos(angle), np.sin(angle)
    rotation = np.array([[c, -s], [s, c]])
    corners = np.array([[-1, -1], [1, -1], [1, 1], [-1, 1]]) * side / 2.0
    square = ConvexPolygon(center + corners @ rotation.T)
    tree = Intersection([square, Complement(Disk(center, radius))])
    mesh = TensorMesh.uniform([0.0, 0.0], [1.0, 1.0], subdivisions)
    area = side**2 - np.pi * radius**2
    domain = TrimmedDomain([0.0, 0.0], [1.0, 1.0], tree, analytic_area=area)
    return mesh, domain, (), "rotated square with a hole"


def slot_plate(delta, subdivisions=56, delta_in_h=False):
    """Unit plate minus a slot of two arcs of radius sqrt(5) h - delta joined by vertical lines.

    Dirichlet on the left and right edges.
    """
    h = 1.0 / subdivisions
    delta = delta * h if delta_in_h else delta
    _check_delta(delta, h)
    radius = np.sqrt(5.0) * h - delta
    slot = Union(
        [
            Disk([0.5, 0.25], radius),
            Disk([0.5, 0.75], radius),
            _rectangle(0.5 - radius, 0.25, 0.5 + radius, 0.75),
        ]
    )
    tree = Complement(slot)
    mesh = TensorMesh.uniform([0.0, 0.0], [1.0, 1.0], subdivisions)
    area = 1.0 - np.pi * radius**2 - 2.0 * radius * 0.5
    domain = TrimmedDomain([0.0, 0.0], [1.0, 1.0], tree, analytic_area=area)
    return mesh, domain, ("left", "right"), "plate with a slot"


def waveguide(delta, n_spikes=6, delta_in_h=False):
    """Channel [0, 1.5] x [0.5, 1] with spikes hanging down to y = 0.5 - 4h.

    Each spike narrows from 2h at the channel to delta at its tip line and
    ends in a delta x delta square centered in the element below. Tips are 3h
    apart. Mesh 48 x 32, h = 1/32.
    """
    h = 1.0 / 32.0
    delta = delta * h if delta_in_h else delta
    _check_delta(delta, h)
    if not 1 <= n_spikes <= 10:
        raise ParameterOutOfRange("n_spikes", n_spikes, "[1, 10]")
    top = 0.5
    line = top - 4.0 * h
    pieces = [_rectangle(0.0, top, 1.5, 1.0)]
    area = 1.5 * 0.5
    for k in range(n_spikes):
        x = (16.5 + 3.0 * k) * h
        pieces.append(
            ConvexPolygon(
                [(x - delta / 2, line), (x + delta / 2, line), (x + h, top), (x - h, top)]
            )
        )
        pieces.append(_rectangle(x - delta / 2, line - delta, x + delta / 2, line))
        area += (2.0 * h + delta) / 2.0 * (top - line) + delta**2
    mesh = TensorMesh.uniform([0.0, 0.0], [1.5, 1.0], [48, 32])
    domain = TrimmedDomain([0.0, 0.0], [1.5, 1.0], Union(pieces), analytic_area=area)
    return mesh, domain, (), "spiky waveguide"


# name -> (builder, default parameters)
REGISTRY = {
    "trimmed_line": (trimmed_line, {"delta": 0.5, "delta_in_h": True, "subdivisions": 128}),
    "stretched_square": (stretched_square, {"delta": 0.1, "delta_in_h": True, "subdivisions": 16}),
    "ridge": (ridge, {"delta": 0.05, "delta_in_h": True, "variant": "corner", "subdivisions": 16}),
    "ridge_perturbed": (ridge_perturbed, {"delta": 0.05, "delta_in_h": True, "seed": 0, "subdivisions": 16}),
    "two_ridges": (two_ridges, {"delta": 0.1, "delta_in_h": True, "smoothness": "C0", "subdivisions": 24}),
    "three_ridges": (three_ridges, {"delta": 0.1, "delta_in_h": True, "subdivisions": 24}),
    "square_with_hole": (
        square_with_hole,
        {"delta": 0.1, "delta_in_h": True, "angle": GRID_ANGLE, "subdivisions": 16},
    ),
    "slot_plate": (slot_plate, {"delta": 0.01, "delta_in_h": False, "subdivisions": 56}),
    "waveguide": (waveguide, {"delta": 0.01, "delta_in_h": True, "n_spikes": 6}),
}


def catalog_names():
    return sorted(REGISTRY)


def catalog(name, **params):
    """Build a named geometry; unspecified parameters take their defaults."""
    if name not in REGISTRY:
        raise UnknownGeometry(name, REGISTRY)
    builder, defaults = REGISTRY[name]
    unknown = set(params) - set(defaults)
    if unknown:
        raise ParameterOutOfRange("parameters", sorted(unknown), sorted(defaults))
    merged = {**defaults, **params}
    mesh, domain, sides, description = builder(**merged)
    logger.debug("catalog %s %s -> %r", name, merged, mesh)
    return CatalogGeometry(name, merged, domain, mesh, tuple(sides), description)
