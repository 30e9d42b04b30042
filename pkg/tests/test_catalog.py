#!/usr/bin/env python3
"""
Tests for the named geometry catalog.
"""

import sys
from pathlib import Path

import numpy as np
import pytest

# Add the parent directory to the path so we can import pytrimlab
sys.path.insert(0, str(Path(__file__).parent.parent))

from pytrimlab.catalog import REGISTRY, RIDGE_SHIFTS, catalog, catalog_names
from pytrimlab.errors import ParameterOutOfRange, UnknownGeometry
from pytrimlab.trim_geometry import Disk, TrimmedDomain

POLYGONAL = ["trimmed_line", "stretched_square", "ridge", "ridge_perturbed", "two_ridges", "three_ridges", "waveguide"]
CURVED = ["square_with_hole", "slot_plate"]


class TestRegistry:
    """Names, defaults and parameter checking."""

    def test_names(self):
        assert catalog_names() == sorted(POLYGONAL + CURVED)
        assert set(REGISTRY) == set(POLYGONAL + CURVED)

    def test_unknown_name(self):
        with pytest.raises(UnknownGeometry):
            catalog("teapot")

    def test_unknown_parameter(self):
        with pytest.raises(ParameterOutOfRange):
            catalog("ridge", radius=0.1)

    @pytest.mark.parametrize("delta", [0.0, -0.1, 2.0])
    def test_delta_range(self, delta):
        with pytest.raises(ParameterOutOfRange):
            catalog("stretched_square", delta=delta, delta_in_h=True)

    def test_defaults_recorded(self):
        geometry = catalog("ridge", delta=0.02)
        assert geometry.params["delta"] == 0.02
        assert geometry.params["variant"] == "corner"
        assert geometry.to_dict()["params"] == geometry.params

    def test_bad_choices(self):
        with pytest.raises(ParameterOutOfRange):
            catalog("ridge", variant="sideways")
        with pytest.raises(ParameterOutOfRange):
            catalog("two_ridges", smoothness="C2")
        with pytest.raises(ParameterOutOfRange):
            catalog("waveguide", n_spikes=11)


class TestBoundaryConditions:
    """Dirichlet sides and the resulting stiffness nullity."""

    @pytest.mark.parametrize(
        "name, sides",
        [
            ("trimmed_line", ("left",)),
            ("two_ridges", ("bottom",)),
            ("three_ridges", ("bottom",)),
            ("slot_plate", ("left", "right")),
            ("ridge", ()),
            ("waveguide", ()),
        ],
    )
    def test_sides(self, name, sides):
        geometry = catalog(name)
        assert geometry.dirichlet_sides == sides
        assert geometry.stiffness_nullity == (0 if sides else 1)


class TestAreas:
    """Cut measures against the analytic areas."""

    @pytest.mark.parametrize("name", POLYGONAL)
    def test_polygonal_exact(self, name):
        geometry = catalog(name)
        result = geometry.classify()
        assert result.measure.sum() == pytest.approx(geometry.analytic_area, abs=1e-11)
        assert 0.0 < result.eta <= 1.0

    @pytest.mark.parametrize("name", CURVED)
    def test_curved_within_tolerance(self, name):
        geometry = catalog(name)
        result = geometry.classify()
        assert result.measure.sum() == pytest.approx(geometry.analytic_area, abs=1e-7)

    @pytest.mark.parametrize("name", CURVED)
    def test_quadtree_within_tolerance(self, name):
        geometry = catalog(name)
        result = geometry.classify(area_tol=1e-3, curved="quadtree")
        assert abs(result.measure.sum() - geometry.analytic_area) <= 10 * 1e-3

    def test_trimmed_line_eta_is_delta_over_h(self):
        for delta in (0.5, 0.1, 0.01):
            result = catalog("trimmed_line", delta=delta, delta_in_h=True).classify()
            assert result.eta == pytest.approx(delta, rel=1e-10)

    def test_dict_round_trip(self):
        geometry = catalog("square_with_hole")
        rebuilt = TrimmedDomain.from_dict(geometry.domain.to_dict())
        points = np.random.default_rng(0).uniform(0.0, 1.0, (500, 2))
        np.testing.assert_array_equal(rebuilt.contains(points), geometry.domain.contains(points))
        assert rebuilt.analytic_area == geometry.analytic_area


class TestLayouts:
    """Placement details of individual geometries."""

    def test_ridge_variants(self):
        h = 1.0 / 16
        for variant, shift in RIDGE_SHIFTS.items():
            domain = catalog("ridge", variant=variant).domain
            tip = np.array([[0.5 + shift * h, 0.75 + 0.05 * h - 1e-9]])
            assert domain.contains(tip)[0]
            assert not domain.contains(tip + [[0.0, 2e-9]])[0]

    def test_perturbed_grid(self):
        base = catalog("ridge").mesh.breakpoints[0]
        first = catalog("ridge_perturbed", seed=1).mesh.breakpoints[0]
        again = catalog("ridge_perturbed", seed=1).mesh.breakpoints[0]
        other = catalog("ridge_perturbed", seed=2).mesh.breakpoints[0]
        np.testing.assert_array_equal(first, again)
        assert not np.array_equal(first, other)
        assert np.all(np.diff(first) > 0.0)
        assert np.abs(first - base).max() <= 0.25 / 16 + 1e-15
        # house walls stay on their grid lines
        for wall in (0.5 - 5.0 / 16, 0.5 + 5.0 / 16):
            assert np.isclose(first, wall).any()

    def test_slot_arcs_on_grid_nodes(self):
        geometry = catalog("slot_plate", delta=0.001)
        h = geometry.h
        disks = [c for c in geometry.domain.tree.child.children if isinstance(c, Disk)]
        assert len(disks) == 2
        for disk in disks:
            np.testing.assert_allclose(disk.center / h, np.round(disk.center / h), atol=1e-9)
            assert disk.radius == pytest.approx(np.sqrt(5.0) * h - 0.001)

    def test_hole_radius(self):
        geometry = catalog("square_with_hole", delta=0.5, delta_in_h=True)
        h = geometry.h
        hole = geometry.domain.tree.children[1].child
        assert hole.radius == pytest.approx((np.sqrt(5.0) - 0.5) * h)
        np.testing.assert_allclose(hole.center, [0.5, 0.5])

    def test_outer_square_corners_on_nodes(self):
        geometry = catalog("square_with_hole")
        h = geometry.h
        square = geometry.domain.tree.children[0]
        np.testing.assert_allclose(square.vertices / h, np.round(square.vertices / h), atol=1e-9)
        edges = np.abs(square.edges)
        slopes = np.sort(np.minimum(edges[:, 0], edges[:, 1]) / np.maximum(edges[:, 0], edges[:, 1]))
        np.testing.assert_allclose(slopes, 0.5)

    def test_waveguide_mesh(self):
        geometry = catalog("waveguide")
        assert geometry.mesh.shape == (48, 32)
        assert geometry.h == pytest.approx(1.0 / 32)


if __name__ == "__main__":
    pytest.main([__file__, "-v"])
