"""Trimmed domains inside a fictitious box, element classification and cut-cell quadrature.

A TrimmedDomain is a membership tree of primitives (half-spaces, convex polygons,
disks) combined by union, intersection and complement. Every node can test points
and classify whole axis-aligned boxes as inside, outside or mixed; the same
three-valued classification drives both element classification and quadtree
refinement.

Quadrature on an element follows its status:

   - Inside: tensor Gauss rule.
   - Cut, 1D: exact sub-intervals with Gauss rules.
   - Cut, polygonal boundary: exact clipping with shapely, constrained Delaunay
     triangulation of the clipped piece and collapsed Gauss rules on the triangles.
   - Cut, disk in the tree: the disk is replaced by a polygon through its
     crossings with the element boundary, the piece is triangulated as above,
     and the thin bands between the polygon edges and the arcs get polar Gauss
     rules. Slivers of any size are measured to rounding.
   - Cut, disk in the tree, quadtree option: refinement until the mixed leaves
     are small against the inside part; leaves fully inside get Gauss rules,
     boundary leaves get membership-weighted Gauss rules.
"""

import enum
import logging
from dataclasses import dataclass
from functools import cached_property

import numpy as np
import shapely

from .errors import DegenerateDomain, DepthExceeded, ParameterOutOfRange

logger = logging.getLogger(__name__)

# Fractions closer than this to 0 or 1 are snapped to Outside/Inside.
CLASSIFICATION_TOL = 1e-12

# Minimum number of chords per arc inside an element, and their widest angle.
ARC_PIECES = 8
ARC_STEP = 0.05

CURVED_METHODS = ("arc", "quadtree")


class Status(enum.IntEnum):
    OUTSIDE = 0
    INSIDE = 1
    CUT = 2


class TensorMesh:
    """Axis-aligned tensor mesh given by per-direction breakpoints.

    Elements are numbered in C order of their multi-index.
    """

    def __init__(self, breakpoints):
        self.breakpoints = [np.asarray(b, dtype=float) for b in breakpoints]
        self.dim = len(self.breakpoints)
        self.shape = tuple(len(b) - 1 for b in self.breakpoints)
        self.n_elements = int(np.prod(self.shape))
        self.lower = np.array([b[0] for b in self.breakpoints])
        self.upper = np.array([b[-1] for b in self.breakpoints])

    @classmethod
    def uniform(cls, lower, upper, subdivisions):
        lower = np.atleast_1d(np.asarray(lower, dtype=float))
        upper = np.atleast_1d(np.asarray(upper, dtype=float))
        subdivisions = np.broadcast_to(np.atleast_1d(subdivisions), lower.shape)
        return cls(
            [np.linspace(a, b, int(n) + 1) for a, b, n in zip(lower, upper, subdivisions)]
        )

    def __repr__(self):
        return f"TensorMesh(shape={self.shape}, box={self.lower.tolist()}..{self.upper.tolist()})"

    @property
    def h(self):
        """Largest element width over all directions."""
        return max(float(np.diff(b).max()) for b in self.breakpoints)

    def element_multi(self, flat):
        return np.unravel_index(flat, self.shape)

    def element_flat(self, multi):
        return np.ravel_multi_index(tuple(multi), self.shape)

    def element_box(self, flat):
        multi = self.element_multi(flat)
        lo = np.array([b[m] for b, m in zip(self.breakpoints, multi)])
        hi = np.array([b[m + 1] for b, m in zip(self.breakpoints, multi)])
        return lo, hi

    @cached_property
    def element_boxes(self):
        """Lower and upper corners of all elements, each of shape (n_elements, dim)."""
        multi = self.element_multi(np.arange(self.n_elements))
        lo = np.stack([b[m] for b, m in zip(self.breakpoints, multi)], axis=1)
        hi = np.stack([b[m + 1] for b, m in zip(self.breakpoints, multi)], axis=1)
        return lo, hi

    @cached_property
    def element_measures(self):
        lo, hi = self.element_boxes
        return np.prod(hi - lo, axis=1)

    def box_elements(self, box):
        """Flat indices of the elements in an inclusive multi-index range box (dim, 2)."""
        ranges = [np.arange(lo, hi + 1) for lo, hi in np.asarray(box)]
        grids = np.meshgrid(*ranges, indexing="ij")
        return np.ravel_multi_index(tuple(g.ravel() for g in grids), self.shape)


# Membership tree


def _combine_union(codes):
    codes = np.asarray(codes)
    any_in = (codes == Status.INSIDE).any(axis=0)
    all_out = (codes == Status.OUTSIDE).all(axis=0)
    return np.where(any_in, Status.INSIDE, np.where(all_out, Status.OUTSIDE, Status.CUT))


def _combine_intersection(codes):
    codes = np.asarray(codes)
    any_out = (codes == Status.OUTSIDE).any(axis=0)
    all_in = (codes == Status.INSIDE).all(axis=0)
    return np.where(any_out, Status.OUTSIDE, np.where(all_in, Status.INSIDE, Status.CUT))


def _box_polygon(lo, hi):
    return shapely.box(lo[0], lo[1], hi[0], hi[1])


class Region:
    """Node of a membership tree."""

    kind = None
    polygonal = True

    def contains(self, points):
        raise NotImplementedError

    def classify_boxes(self, lo, hi):
        raise NotImplementedError

    def to_shapely(self, lo, hi, polarity=1):
        """Part of the box [lo, hi] inside the region as a shapely geometry.

        Disks reached through an odd number of complements (polarity -1) are
        replaced by a circumscribed polygon, the others by an inscribed one,
        so the piece always lies inside the region.
        """
        raise NotImplementedError

    def curved_cut(self, lo, hi):
        """True if a curved boundary passes through the box [lo, hi]."""
        return False

    def disks(self, polarity=1):
        """Yield (disk, polarity) for every disk of the tree."""
        yield from ()

    def breakpoints_1d(self):
        raise NotImplementedError

    def to_dict(self):
        raise NotImplementedError

    def __or__(self, other):
        return Union([self, other])

    def __and__(self, other):
        return Intersection([self, other])

    def __invert__(self):
        return Complement(self)


class HalfSpace(Region):
    """Points x with normal . x <= offset."""

    kind = "halfspace"

    def __init__(self, normal, offset):
        self.normal = np.atleast_1d(np.asarray(normal, dtype=float))
        self.offset = float(offset)

    def contains(self, points):
        return np.atleast_2d(points) @ self.normal <= self.offset

    def classify_boxes(self, lo, hi):
        a, b = lo * self.normal, hi * self.normal
        smallest = np.minimum(a, b).sum(axis=1)
        largest = np.maximum(a, b).sum(axis=1)
        return np.where(
            largest <= self.offset,
            Status.INSIDE,
            np.where(smallest > self.offset, Status.OUTSIDE, Status.CUT),
        )

    def to_shapely(self, lo, hi, polarity=1):
        norm = np.linalg.norm(self.normal)
        n = self.normal / norm
        tangent = np.array([-n[1], n[0]])
        anchor = n * self.offset / norm
        reach = 4.0 * (np.linalg.norm(lo) + np.linalg.norm(hi) + np.linalg.norm(anchor) + 1.0)
        corners = [
            anchor + reach * tangent,
            anchor - reach * tangent,
            anchor - reach * tangent - reach * n,
            anchor + reach * tangent - reach * n,
        ]
        return shapely.intersection(shapely.Polygon(corners), _box_polygon(lo, hi))

    def breakpoints_1d(self):
        return [self.offset / self.normal[0]]

    def to_dict(self):
        return {"type": self.kind, "normal": self.normal.tolist(), "offset": self.offset}


class ConvexPolygon(Region):
    """Convex polygon with counter-clockwise vertices; the boundary counts as inside."""

    kind = "polygon"

    def __init__(self, vertices):
        vertices = np.asarray(vertices, dtype=float)
        twice_area = np.sum(
            vertices[:, 0] * np.roll(vertices[:, 1], -1)
            - np.roll(vertices[:, 0], -1) * vertices[:, 1]
        )
        if twice_area < 0:
            vertices = vertices[::-1]
        self.vertices = vertices
        self.edges = np.roll(vertices, -1, axis=0) - vertices

    def _sides(self, points):
        # (npts, nedges) cross products; >= 0 means left of (inside) the edge.
        rel = points[:, None, :] - self.vertices[None, :, :]
        return self.edges[None, :, 0] * rel[:, :, 1] - self.edges[None, :, 1] * rel[:, :, 0]

    def contains(self, points):
        return (self._sides(np.atleast_2d(points)) >= 0.0).all(axis=1)

    def classify_boxes(self, lo, hi):
        m = lo.shape[0]
        corners = np.stack(
            [lo, np.c_[hi[:, 0], lo[:, 1]], hi, np.c_[lo[:, 0], hi[:, 1]]], axis=1
        )
        sides = self._sides(corners.reshape(-1, 2)).reshape(m, 4, -1)
        all_in = (sides >= 0.0).all(axis=(1, 2))
        separated = (sides < 0.0).all(axis=1).any(axis=1)
        vx, vy = self.vertices[:, 0], self.vertices[:, 1]
        separated |= (vx.max() < lo[:, 0]) | (vx.min() > hi[:, 0])
        separated |= (vy.max() < lo[:, 1]) | (vy.min() > hi[:, 1])
        return np.where(all_in, Status.INSIDE, np.where(separated, Status.OUTSIDE, Status.CUT))

    def to_shapely(self, lo, hi, polarity=1):
        return shapely.intersection(shapely.Polygon(self.vertices), _box_polygon(lo, hi))

    def area(self):
        return float(shapely.Polygon(self.vertices).area)

    def to_dict(self):
        return {"type": self.kind, "vertices": self.vertices.tolist()}


class Disk(Region):
    kind = "disk"
    polygonal = False

    def __init__(self, center, radius):
        self.center = np.atleast_1d(np.asarray(center, dtype=float))
        self.radius = float(radius)

    def contains(self, points):
        d = np.atleast_2d(points) - self.center
        return np.einsum("ij,ij->i", d, d) <= self.radius**2

    def classify_boxes(self, lo, hi):
        nearest = np.clip(self.center, lo, hi) - self.center
        farthest = np.maximum(np.abs(lo - self.center), np.abs(hi - self.center))
        near2 = np.einsum("ij,ij->i", nearest, nearest)
        far2 = np.einsum("ij,ij->i", farthest, farthest)
        r2 = self.radius**2
        return np.where(far2 <= r2, Status.INSIDE, np.where(near2 > r2, Status.OUTSIDE, Status.CUT))

    def on_circle(self, angles):
        angles = np.asarray(angles, dtype=float)
        return self.center + self.radius * np.stack([np.cos(angles), np.sin(angles)], axis=-1)

    def arc_intervals(self, lo, hi, pieces=ARC_PIECES, max_step=ARC_STEP):
        """
        Angle intervals covering the arcs of the circle inside the box [lo, hi].

        Interval ends include every crossing of the circle with the box
        boundary, and each arc between crossings is split into at least
        ``pieces`` intervals no wider than ``max_step`` radians.

        Returns
        -------
        numpy.ndarray
            (n, 2) array of increasing angle pairs.
        """
        crossings = []
        for axis in (0, 1):
            other = 1 - axis
            for value in (lo[axis], hi[axis]):
                gap = value - self.center[axis]
                if abs(gap) > self.radius:
                    continue
                half = np.sqrt(self.radius**2 - gap**2)
                for along in (self.center[other] - half, self.center[other] + half):
                    if lo[other] <= along <= hi[other]:
                        offset = np.empty(2)
                        offset[axis], offset[other] = gap, along - self.center[other]
                        crossings.append(np.arctan2(offset[1], offset[0]))
        if crossings:
            angles = np.unique(np.mod(crossings, 2.0 * np.pi))
            edges = np.append(angles, angles[0] + 2.0 * np.pi)
        else:
            edges = np.array([0.0, 2.0 * np.pi])

        slack = 1e-12 * float(np.max(hi - lo))
        intervals = []
        for a, b in zip(edges[:-1], edges[1:]):
            if b <= a:
                continue
            middle = self.on_circle((a + b) / 2.0)
            if not ((middle >= lo - slack) & (middle <= hi + slack)).all():
                continue
            n = max(pieces, int(np.ceil((b - a) / max_step)))
            ticks = np.linspace(a, b, n + 1)
            intervals.append(np.stack([ticks[:-1], ticks[1:]], axis=1))
        if not intervals:
            return np.zeros((0, 2))
        return np.concatenate(intervals)

    def to_shapely(self, lo, hi, polarity=1):
        code = self.classify_boxes(lo[None, :], hi[None, :])[0]
        box = _box_polygon(lo, hi)
        if code == Status.INSIDE:
            return box
        if code == Status.OUTSIDE:
            return shapely.Polygon()

        intervals = self.arc_intervals(lo, hi)
        corners = np.array([lo, [hi[0], lo[1]], hi, [lo[0], hi[1]]])
        core = [corners[self.contains(corners)], self.on_circle(np.unique(intervals.ravel()))]
        inscribed = shapely.MultiPoint(np.concatenate(core)).convex_hull
        if polarity > 0 or not len(intervals):
            return shapely.intersection(inscribed, box)

        # tangent triangles over every chord cover the arcs from outside
        half = (intervals[:, 1] - intervals[:, 0]) / 2.0
        apex = self.center + (self.radius / np.cos(half))[:, None] * np.stack(
            [np.cos(intervals.mean(axis=1)), np.sin(intervals.mean(axis=1))], axis=1
        )
        starts, ends = self.on_circle(intervals[:, 0]), self.on_circle(intervals[:, 1])
        triangles = shapely.polygons(np.stack([starts, apex, ends, starts], axis=1))
        return shapely.intersection(shapely.union_all([inscribed, *triangles]), box)

    def curved_cut(self, lo, hi):
        return self.classify_boxes(lo[None, :], hi[None, :])[0] == Status.CUT

    def disks(self, polarity=1):
        yield self, polarity

    def breakpoints_1d(self):
        return [self.center[0] - self.radius, self.center[0] + self.radius]

    def area(self):
        return np.pi * self.radius**2

    def to_dict(self):
        return {"type": self.kind, "center": self.center.tolist(), "radius": self.radius}


class Union(Region):
    kind = "union"

    def __init__(self, children):
        self.children = list(children)
        self.polygonal = all(c.polygonal for c in self.children)

    def contains(self, points):
        return np.any([c.contains(points) for c in self.children], axis=0)

    def classify_boxes(self, lo, hi):
        return _combine_union([c.classify_boxes(lo, hi) for c in self.children])

    def to_shapely(self, lo, hi, polarity=1):
        return shapely.union_all([c.to_shapely(lo, hi, polarity) for c in self.children])

    def curved_cut(self, lo, hi):
        return any(c.curved_cut(lo, hi) for c in self.children)

    def disks(self, polarity=1):
        for c in self.children:
            yield from c.disks(polarity)

    def breakpoints_1d(self):
        return [x for c in self.children for x in c.breakpoints_1d()]

    def to_dict(self):
        return {"type": self.kind, "children": [c.to_dict() for c in self.children]}


class Intersection(Union):
    kind = "intersection"

    def contains(self, points):
        return np.all([c.contains(points) for c in self.children], axis=0)

    def classify_boxes(self, lo, hi):
        return _combine_intersection([c.classify_boxes(lo, hi) for c in self.children])

    def to_shapely(self, lo, hi, polarity=1):
        return shapely.intersection_all([c.to_shapely(lo, hi, polarity) for c in self.children])


class Complement(Region):
    kind = "complement"

    def __init__(self, child):
        self.child = child
        self.polygonal = child.polygonal

    def contains(self, points):
        return ~self.child.contains(points)

    def classify_boxes(self, lo, hi):
        codes = self.child.classify_boxes(lo, hi)
        swapped = np.where(codes == Status.INSIDE, Status.OUTSIDE, Status.INSIDE)
        return np.where(codes == Status.CUT, Status.CUT, swapped)

    def to_shapely(self, lo, hi, polarity=1):
        return shapely.difference(_box_polygon(lo, hi), self.child.to_shapely(lo, hi, -polarity))

    def curved_cut(self, lo, hi):
        return self.child.curved_cut(lo, hi)

    def disks(self, polarity=1):
        yield from self.child.disks(-polarity)

    def breakpoints_1d(self):
        return self.child.breakpoints_1d()

    def to_dict(self):
        return {"type": self.kind, "child": self.child.to_dict()}


def region_from_dict(data):
    kind = data["type"]
    if kind == "halfspace":
        return HalfSpace(data["normal"], data["offset"])
    if kind == "polygon":
        return ConvexPolygon(data["vertices"])
    if kind == "disk":
        return Disk(data["center"], data["radius"])
    if kind == "union":
        return Union([region_from_dict(c) for c in data["children"]])
    if kind == "intersection":
        return Intersection([region_from_dict(c) for c in data["children"]])
    if kind == "complement":
        return Complement(region_from_dict(data["child"]))
    raise ParameterOutOfRange("type", kind, "halfspace/polygon/disk/union/intersection/complement")


class TrimmedDomain:
    """Physical domain: the part of the fictitious box where the tree says inside."""

    def __init__(self, lower, upper, tree, analytic_area=None):
        self.lower = np.atleast_1d(np.asarray(lower, dtype=float))
        self.upper = np.atleast_1d(np.asarray(upper, dtype=float))
        self.tree = tree
        self.analytic_area = analytic_area

    @property
    def dim(self):
        return len(self.lower)

    @property
    def polygonal(self):
        return self.tree.polygonal

    def contains(self, points):
        points = np.atleast_2d(points)
        in_box = ((points >= self.lower) & (points <= self.upper)).all(axis=1)
        return in_box & self.tree.contains(points)

    def classify_boxes(self, lo, hi):
        return np.asarray(self.tree.classify_boxes(lo, hi), dtype=int)

    def clip(self, lo, hi):
        """The part of the box [lo, hi] inside the domain as a shapely geometry."""
        return self.tree.to_shapely(np.asarray(lo, dtype=float), np.asarray(hi, dtype=float))

    def to_dict(self):
        return {
            "lower": self.lower.tolist(),
            "upper": self.upper.tolist(),
            "tree": self.tree.to_dict(),
            "analytic_area": self.analytic_area,
        }

    @classmethod
    def from_dict(cls, data):
        return cls(
            data["lower"], data["upper"], region_from_dict(data["tree"]), data.get("analytic_area")
        )


# Quadrature rules


@dataclass
class ElementRule:
    points: np.ndarray
    weights: np.ndarray
    exactness: int
    area_error: float = 0.0
    method: str = "gauss"

    @property
    def measure(self):
        return float(self.weights.sum())

    @classmethod
    def empty(cls, dim):
        return cls(np.zeros((0, dim)), np.zeros(0), 0, method="empty")


def gauss_legendre(q):
    """q-point Gauss-Legendre rule on [0, 1]."""
    x, w = np.polynomial.legendre.leggauss(q)
    return (x + 1.0) / 2.0, w / 2.0


def tensor_gauss(lo, hi, q):
    """Tensor Gauss rule on one box, exact to degree 2q-1 per direction."""
    lo = np.atleast_1d(lo)
    hi = np.atleast_1d(hi)
    x, w = gauss_legendre(q)
    axes = [a + (b - a) * x for a, b in zip(lo, hi)]
    grids = np.meshgrid(*axes, indexing="ij")
    weights = np.prod(hi - lo) * np.prod(np.meshgrid(*([w] * len(lo)), indexing="ij"), axis=0)
    return np.stack([g.ravel() for g in grids], axis=1), weights.ravel()


def boxes_gauss(lo, hi, q):
    """Tensor Gauss rules on many boxes at once, points stacked box-major."""
    x, w = gauss_legendre(q)
    dim = lo.shape[1]
    ref = np.stack(
        [g.ravel() for g in np.meshgrid(*([x] * dim), indexing="ij")], axis=1
    )
    ref_w = np.prod(np.meshgrid(*([w] * dim), indexing="ij"), axis=0).ravel()
    size = hi - lo
    points = lo[:, None, :] + size[:, None, :] * ref[None, :, :]
    weights = np.prod(size, axis=1)[:, None] * ref_w[None, :]
    return points.reshape(-1, dim), weights.ravel()


def triangle_rule(vertices, q):
    """Collapsed Gauss rule on a triangle, exact to degree 2q-1, all points interior."""
    v0, v1, v2 = np.asarray(vertices, dtype=float)[:3]
    u, wu = gauss_legendre(q + 1)
    v, wv = gauss_legendre(q)
    U, V = np.meshgrid(u, v, indexing="ij")
    a, b = v1 - v0, v2 - v1
    points = v0 + U[..., None] * a + (U * V)[..., None] * b
    jacobian = abs(a[0] * b[1] - a[1] * b[0]) * U
    return points.reshape(-1, 2), (np.outer(wu, wv) * jacobian).ravel()


def _interval_rule(lo, hi, domain, q):
    a, b = float(lo[0]), float(hi[0])
    cuts = sorted({x for x in domain.tree.breakpoints_1d() if a < x < b})
    edges = [a, *cuts, b]
    points, weights = [], []
    for left, right in zip(edges[:-1], edges[1:]):
        if domain.contains(np.array([[(left + right) / 2.0]]))[0]:
            p, w = tensor_gauss([left], [right], q)
            points.append(p)
            weights.append(w)
    if not points:
        return ElementRule.empty(1)
    return ElementRule(
        np.concatenate(points), np.concatenate(weights), 2 * q - 1, method="interval"
    )


def _polygon_rule(lo, hi, domain, q, piece=None):
    piece = domain.clip(lo, hi) if piece is None else piece
    points, weights = [], []
    for part in shapely.get_parts(piece):
        if part.geom_type != "Polygon" or part.area <= 0.0:
            continue
        for tri in shapely.get_parts(shapely.constrained_delaunay_triangles(part)):
            coords = np.asarray(tri.exterior.coords)
            if tri.area <= 0.0:
                continue
            p, w = triangle_rule(coords, q)
            points.append(p)
            weights.append(w)
    if not points:
        return ElementRule.empty(2)
    return ElementRule(
        np.concatenate(points), np.concatenate(weights), 2 * q - 1, method="polygon"
    )


def _arc_band(disk, a, b, pivot, foot, outside, q):
    """Gauss rule between the circle and straight edges, angle by angle.

    For angles in [a, b] the edge sits at distance foot / cos(angle - pivot)
    from the center; ``outside`` says whether it lies beyond the circle.
    """
    x, w = gauss_legendre(q)
    theta = a[:, None] + (b - a)[:, None] * x[None, :]
    edge = foot[:, None] / np.cos(theta - pivot[:, None])
    circle = np.full_like(edge, disk.radius)
    inner, outer = (circle, edge) if outside else (edge, circle)
    depth = outer - inner
    rho = inner[..., None] + depth[..., None] * x[None, None, :]
    weights = (
        (b - a)[:, None, None] * w[None, :, None] * w[None, None, :] * depth[..., None] * rho
    )
    direction = np.stack([np.cos(theta), np.sin(theta)], axis=-1)
    points = disk.center + rho[..., None] * direction[:, :, None, :]
    return points.reshape(-1, 2), weights.ravel()


def _arc_rule(lo, hi, domain, q):
    piece = domain.clip(lo, hi)
    base = _polygon_rule(lo, hi, domain, q, piece)
    points, weights = [base.points], [base.weights]
    for disk, polarity in domain.tree.disks():
        intervals = disk.arc_intervals(lo, hi)
        if not len(intervals):
            continue
        a, b = intervals[:, 0], intervals[:, 1]
        middle = (a + b) / 2.0
        if polarity > 0:
            # circular segments between chords and arcs
            bands = [_arc_band(disk, a, b, middle, disk.radius * np.cos((b - a) / 2.0), False, q)]
        else:
            # between arcs and the two tangents of every chord
            foot = np.full_like(a, disk.radius)
            bands = [
                _arc_band(disk, a, middle, a, foot, True, q),
                _arc_band(disk, middle, b, b, foot, True, q),
            ]
        for p, w in bands:
            keep = ((p >= lo) & (p <= hi)).all(axis=1) & domain.contains(p) & (w > 0.0)
            keep &= ~shapely.contains_xy(piece, p[:, 0], p[:, 1])
            points.append(p[keep])
            weights.append(w[keep])
    return ElementRule(
        np.concatenate(points), np.concatenate(weights), 2 * q - 1, method="arc"
    )


def _subdivide(lo, hi):
    mid = (lo + hi) / 2.0
    dim = lo.shape[1]
    children_lo, children_hi = [], []
    for corner in np.ndindex(*([2] * dim)):
        pick = np.array(corner, dtype=bool)
        children_lo.append(np.where(pick, mid, lo))
        children_hi.append(np.where(pick, hi, mid))
    return np.concatenate(children_lo), np.concatenate(children_hi)


def _quadtree_rule(lo, hi, domain, q, max_depth, area_tol):
    cells_lo, cells_hi = lo[None, :].copy(), hi[None, :].copy()
    full_lo, full_hi = [], []
    inside = 0.0
    for depth in range(max_depth + 1):
        codes = domain.classify_boxes(cells_lo, cells_hi)
        full_lo.append(cells_lo[codes == Status.INSIDE])
        full_hi.append(cells_hi[codes == Status.INSIDE])
        inside += float(np.prod(full_hi[-1] - full_lo[-1], axis=1).sum())
        mixed = codes == Status.CUT
        cells_lo, cells_hi = cells_lo[mixed], cells_hi[mixed]
        if not len(cells_lo) or depth == max_depth:
            break
        # mixed leaves must be small against the inside part, not the element
        if np.prod(cells_hi - cells_lo, axis=1).sum() <= area_tol * inside:
            break
        cells_lo, cells_hi = _subdivide(cells_lo, cells_hi)

    full_lo, full_hi = np.concatenate(full_lo), np.concatenate(full_hi)
    points, weights = boxes_gauss(full_lo, full_hi, q)

    area_error = 0.0
    if len(cells_lo):
        leaf_points, leaf_weights = boxes_gauss(cells_lo, cells_hi, q)
        inside = domain.contains(leaf_points)
        per_leaf = inside.reshape(len(cells_lo), -1)
        fraction = (per_leaf * leaf_weights.reshape(len(cells_lo), -1)).sum(axis=1)
        fraction /= np.prod(cells_hi - cells_lo, axis=1)
        area_error = float(
            (np.prod(cells_hi - cells_lo, axis=1) * np.minimum(fraction, 1.0 - fraction)).sum()
        )
        points = np.concatenate([points, leaf_points[inside]])
        weights = np.concatenate([weights, leaf_weights[inside]])
    return ElementRule(points, weights, 2 * q - 1, area_error, "quadtree"), depth


def cut_quadrature(
    element, domain, gauss_order, max_depth=12, area_tol=1e-3, strict=False, curved="arc"
):
    """
    Quadrature rule on the part of one element inside the domain.

    Parameters
    ----------
    element : tuple of numpy.ndarray
        Lower and upper corners of the element.

    domain : TrimmedDomain
        Physical domain.

    gauss_order : int
        Points per direction of the Gauss rules.

    max_depth : int
        Quadtree depth cap for trees with disks.

    area_tol : float
        Accepted quadtree area error, relative to the measure of the inside part.

    strict : bool
        Raise DepthExceeded instead of logging when area_tol is not met.

    curved : str
        "arc" clips disks along their exact box crossings and integrates the
        bands between chords and arcs; "quadtree" refines the element instead.

    Returns
    -------
    ElementRule
        Points inside the domain and positive weights; empty if the element is
        outside.
    """
    if curved not in CURVED_METHODS:
        raise ParameterOutOfRange("curved", curved, CURVED_METHODS)
    lo, hi = (np.atleast_1d(np.asarray(c, dtype=float)) for c in element)
    code = domain.classify_boxes(lo[None, :], hi[None, :])[0]
    if code == Status.OUTSIDE:
        return ElementRule.empty(len(lo))
    if code == Status.INSIDE:
        points, weights = tensor_gauss(lo, hi, gauss_order)
        return ElementRule(points, weights, 2 * gauss_order - 1)
    if len(lo) == 1:
        return _interval_rule(lo, hi, domain, gauss_order)
    if not domain.tree.curved_cut(lo, hi):
        return _polygon_rule(lo, hi, domain, gauss_order)
    if curved == "arc":
        return _arc_rule(lo, hi, domain, gauss_order)

    rule, depth = _quadtree_rule(lo, hi, domain, gauss_order, max_depth, area_tol)
    limit = area_tol * rule.measure
    if rule.area_error > limit:
        if strict:
            raise DepthExceeded((lo.tolist(), hi.tolist()), depth, rule.area_error, limit)
        logger.warning(
            "quadtree area error %.3e above %.3e on element %s", rule.area_error, limit, lo
        )
    return rule


class CutQuadrature:
    """Quadrature rules for all active elements of a classification.

    Rules on inside elements are built on demand; clipped polygon and interval
    rules are cached; quadtree rules are rebuilt on every request.
    """

    def __init__(
        self, mesh, domain, gauss_order, max_depth=12, area_tol=1e-3, strict=False, curved="arc"
    ):
        self.mesh = mesh
        self.domain = domain
        self.gauss_order = gauss_order
        self.max_depth = max_depth
        self.area_tol = area_tol
        self.strict = strict
        self.curved = curved
        self.status = None
        self._cache = {}

    def compute(self, element):
        return cut_quadrature(
            self.mesh.element_box(element),
            self.domain,
            self.gauss_order,
            self.max_depth,
            self.area_tol,
            self.strict,
            self.curved,
        )

    def rule(self, element):
        status = self.status[element] if self.status is not None else Status.CUT
        if status == Status.OUTSIDE:
            return ElementRule.empty(self.mesh.dim)
        if status == Status.INSIDE:
            points, weights = tensor_gauss(*self.mesh.element_box(element), self.gauss_order)
            return ElementRule(points, weights, 2 * self.gauss_order - 1)
        if element in self._cache:
            return self._cache[element]
        rule = self.compute(element)
        if rule.method != "quadtree":
            self._cache[element] = rule
        return rule


@dataclass
class CutClassification:
    """Per-element status, active measure and volume fraction."""

    mesh: TensorMesh
    status: np.ndarray
    measure: np.ndarray
    fraction: np.ndarray
    eta: float
    quadrature: CutQuadrature

    @property
    def active_elements(self):
        return np.nonzero(self.status != Status.OUTSIDE)[0]

    @property
    def cut_elements(self):
        return np.nonzero(self.status == Status.CUT)[0]

    def counts(self):
        return {s.name.lower(): int((self.status == s).sum()) for s in Status}


def _sample_points(lo, hi, samples_per_axis):
    ticks = (np.arange(samples_per_axis) + 0.5) / samples_per_axis
    dim = lo.shape[1]
    ref = np.stack([g.ravel() for g in np.meshgrid(*([ticks] * dim), indexing="ij")], axis=1)
    return lo[:, None, :] + (hi - lo)[:, None, :] * ref[None, :, :]


def classify(
    mesh, domain, samples_per_axis=4, gauss_order=3, max_depth=12, area_tol=1e-3, curved="arc"
):
    """
    Classify every element of the mesh against the domain.

    Box classification of the membership tree gives a first status; sample
    points inside every element must agree with it, otherwise the element is
    treated as cut. Cut candidates are then measured with their quadrature
    rule, and fractions within CLASSIFICATION_TOL of 0 or 1 are snapped to
    Outside or Inside.
    """
    lo, hi = mesh.element_boxes
    status = domain.classify_boxes(lo, hi).astype(int)

    samples = _sample_points(lo, hi, samples_per_axis)
    member = domain.contains(samples.reshape(-1, mesh.dim)).reshape(samples.shape[:2])
    disagree = ((status == Status.INSIDE) & ~member.all(axis=1)) | (
        (status == Status.OUTSIDE) & member.any(axis=1)
    )
    if disagree.any():
        logger.debug("%d elements disagree with box classification", int(disagree.sum()))
        status[disagree] = Status.CUT

    quadrature = CutQuadrature(mesh, domain, gauss_order, max_depth, area_tol, curved=curved)
    element_measure = mesh.element_measures
    measure = np.where(status == Status.INSIDE, element_measure, 0.0)

    for e in np.nonzero(status == Status.CUT)[0]:
        rule = quadrature.compute(e)
        m = rule.measure
        frac = m / element_measure[e]
        if frac < CLASSIFICATION_TOL:
            status[e] = Status.OUTSIDE
            measure[e] = 0.0
        elif frac > 1.0 - CLASSIFICATION_TOL:
            status[e] = Status.INSIDE
            measure[e] = element_measure[e]
        else:
            measure[e] = m
            if rule.method != "quadtree":
                quadrature._cache[int(e)] = rule

    quadrature.status = status
    fraction = measure / element_measure
    positive = fraction > 0.0
    if not positive.any():
        raise DegenerateDomain(f"on mesh {mesh.shape}")
    eta = float(fraction[positive].min())
    result = CutClassification(mesh, status, measure, fraction, eta, quadrature)
    logger.info("classified %s, eta = %.3e", result.counts(), eta)
    return result


def active_support_measure(support_box, classification):
    """Measure of supp(phi) inside the domain and of the cut region in the box.

    The cut region counts the full measure of every cut element in the box.
    """
    elements = classification.mesh.box_elements(support_box)
    supp = float(classification.measure[elements].sum())
    cut = classification.status[elements] == Status.CUT
    region = float(classification.mesh.element_measures[elements][cut].sum())
    return supp, region
