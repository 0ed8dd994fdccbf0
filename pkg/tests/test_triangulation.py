"""Tests for bearing triangulation and resolution by triangulation"""
import math
import os
import sys

import numpy as np
import pytest

sys.path.insert(0, os.path.dirname(os.path.dirname(os.path.abspath(__file__))))

from core.geometry import AmbiguousBearing, ArrayGeometry, make_pair, reflect
from core.triangulation import (
    Bearing,
    Node,
    SourceLocation,
    TriangulationError,
    bearing_to_source,
    ottoy_resolve,
    triangulate,
)
from core.utils import wrap_angle


def _aimed(sensors, source):
    """Bearings from each sensor pointing exactly at source"""
    return [Bearing(q, bearing_to_source(q, source)) for q in sensors]


def _rotate(point, theta):
    c, s = math.cos(theta), math.sin(theta)
    return (c * point[0] - s * point[1], s * point[0] + c * point[1])


@pytest.fixture
def three_nodes():
    """Nodes at (0,0), (100,0) and (0,100) observing a source at (40,30)

    Node n offers the true angle and its mirror across an axis at n·60°;
    node 1 carries the true angle as φ″.
    """
    source = (40.0, 30.0)
    nodes = []
    for n, q in enumerate([(0.0, 0.0), (100.0, 0.0), (0.0, 100.0)]):
        true = bearing_to_source(q, source)
        mirror = reflect(true, math.radians(60.0 * n + 10.0))
        nodes.append(Node(q, mirror, true) if n == 1 else Node(q, true, mirror))
    return source, nodes


class TestTriangulate:
    """Test least-squares bearing intersection"""

    def test_two_bearings(self):
        """Test 45° from (0,0) and 135° from (1,0) meet at (0.5, 0.5)"""
        location = triangulate([Bearing((0, 0), math.radians(45)), Bearing((1, 0), math.radians(135))])
        assert location.position == pytest.approx((0.5, 0.5), abs=1e-12)
        assert location.residual_norm == pytest.approx(0.0, abs=1e-12)

    def test_three_bearings(self):
        """Test three bearings aimed at (3, 4) recover it"""
        location = triangulate(_aimed([(0, 0), (10, 0), (0, 10)], (3.0, 4.0)))
        assert location.position == pytest.approx((3.0, 4.0), abs=1e-9)
        assert location.residual_norm < 1e-9

    def test_random_exact(self):
        """Test noise-free bearings reproduce random sources"""
        rng = np.random.default_rng(0)
        for _ in range(100):
            count = rng.integers(2, 7)
            angles = rng.uniform(0, 2 * math.pi, count)
            sensors = [(50 * math.cos(a), 50 * math.sin(a)) for a in angles]
            source = tuple(rng.uniform(-20, 20, 2))
            location = triangulate(_aimed(sensors, source))
            assert location.position == pytest.approx(source, abs=1e-8)
            assert location.residual_norm < 1e-8

    def test_parallel(self):
        """Test two vertical bearings raise degenerate_system"""
        with pytest.raises(TriangulationError) as exc:
            triangulate([Bearing((0, 0), math.pi / 2), Bearing((1, 0), math.pi / 2)])
        assert exc.value.error_type == "degenerate_system"

    def test_too_few(self):
        """Test one bearing is rejected"""
        with pytest.raises(TriangulationError) as exc:
            triangulate([Bearing((0, 0), 1.0)])
        assert exc.value.error_type == "too_few_bearings"

    def test_invalid_method(self):
        """Test an unknown method is rejected"""
        with pytest.raises(TriangulationError) as exc:
            triangulate(_aimed([(0, 0), (1, 0)], (0, 1)), method="polar")
        assert exc.value.error_type == "invalid_method"

    def test_residual_is_perpendicular_distance(self):
        """Test the residual of a sincos solve is measured in meters"""
        bearings = [Bearing((0, 0), 0.0), Bearing((0, 0), math.pi / 2), Bearing((0, 2), 0.0)]
        location = triangulate(bearings)
        # y = 0 and y = 2 compromise at y = 1, each line 1 m away
        assert location.position == pytest.approx((0.0, 1.0), abs=1e-12)
        assert location.residual_norm == pytest.approx(math.sqrt(2.0))

    def test_translation_equivariance(self):
        """Test shifting sensors and source shifts the solution"""
        sensors, source, shift = [(0, 0), (10, 0), (0, 10)], (3.0, 4.0), (-250.0, 75.0)
        moved = [(x + shift[0], y + shift[1]) for x, y in sensors]
        location = triangulate(_aimed(moved, (source[0] + shift[0], source[1] + shift[1])))
        assert location.position == pytest.approx((3.0 + shift[0], 4.0 + shift[1]), abs=1e-9)

    def test_rotation_equivariance(self):
        """Test rotating the scene rotates the solution"""
        theta = 0.9
        sensors = [_rotate(q, theta) for q in [(0, 0), (10, 0), (0, 10)]]
        location = triangulate(_aimed(sensors, _rotate((3.0, 4.0), theta)))
        assert location.position == pytest.approx(_rotate((3.0, 4.0), theta), abs=1e-9)

    def test_tan_matches_sincos(self):
        """Test both forms agree away from vertical bearings"""
        bearings = _aimed([(0, 0), (10, 0), (5, -8)], (4.0, 1.0))
        tan = triangulate(bearings, method="tan")
        sincos = triangulate(bearings)
        assert tan.position == pytest.approx(sincos.position, abs=1e-9)

    def test_tan_vertical_bearing(self):
        """Test the tan form cannot represent a vertical bearing"""
        bearings = [Bearing((0, 0), math.pi / 2), Bearing((1, 0), math.radians(135))]
        with pytest.raises(TriangulationError):
            triangulate(bearings, method="tan")
        assert triangulate(bearings).position == pytest.approx((0.0, 1.0), abs=1e-12)

    def test_to_dict(self):
        """Test the record form"""
        assert SourceLocation((1.0, 2.0), 0.5).to_dict() == {"x": 1.0, "y": 2.0, "residual_norm": 0.5}


class TestBearingToSource:
    """Test the sensor-to-source angle"""

    def test_examples(self):
        """Test the reference directions"""
        assert bearing_to_source((0, 0), (1, 0)) == 0.0
        assert bearing_to_source((0, 0), (0, -1)) == pytest.approx(3 * math.pi / 2)
        assert bearing_to_source((2, 2), (1, 1)) == pytest.approx(5 * math.pi / 4)

    def test_bearing_wraps(self):
        """Test Bearing wraps its angle"""
        assert Bearing((0, 0), -math.pi / 2).angle == pytest.approx(3 * math.pi / 2)


class TestOttoyResolve:
    """Test ambiguity resolution by triangulating every candidate choice"""

    def test_recovers_source(self, three_nodes):
        """Test the winning mask picks the true angles and locates the source"""
        source, nodes = three_nodes
        result = ottoy_resolve(nodes)
        assert result.mask == 0b010
        assert result.location.position == pytest.approx(source, abs=1e-6)
        assert result.error == pytest.approx(0.0, abs=1e-9)

    def test_workers_and_method(self, three_nodes):
        """Test the result does not depend on the worker count or equation form"""
        _, nodes = three_nodes
        reference = ottoy_resolve(nodes)
        assert ottoy_resolve(nodes, workers=4) == reference
        assert ottoy_resolve(nodes, method="tan").mask == reference.mask

    def test_equal_candidates(self):
        """Test coincident candidates give the same position for every mask"""
        source = (40.0, 30.0)
        nodes = [Node(q, bearing_to_source(q, source), bearing_to_source(q, source))
                 for q in [(0.0, 0.0), (100.0, 0.0), (0.0, 100.0)]]
        result = ottoy_resolve(nodes)
        assert result.mask == 0
        assert result.location.position == pytest.approx(source, abs=1e-6)

    def test_all_degenerate(self):
        """Test collinear nodes with parallel candidates raise all_degenerate"""
        nodes = [Node((x, 0.0), math.pi / 2, 3 * math.pi / 2) for x in (0.0, 1.0, 2.0)]
        with pytest.raises(TriangulationError) as exc:
            ottoy_resolve(nodes)
        assert exc.value.error_type == "all_degenerate"

    def test_too_few_nodes(self):
        """Test two nodes are rejected"""
        with pytest.raises(TriangulationError) as exc:
            ottoy_resolve([Node((0, 0), 0.1, 0.2), Node((1, 0), 0.3, 0.4)])
        assert exc.value.error_type == "too_few_bearings"

    def test_too_many_nodes(self, three_nodes):
        """Test the node limit"""
        _, nodes = three_nodes
        with pytest.raises(TriangulationError) as exc:
            ottoy_resolve(nodes + [Node((50, 50), 0.0, 1.0)], max_nodes=3)
        assert exc.value.error_type == "too_many_nodes"

    def test_accepts_ambiguous_bearings(self):
        """Test pair bearings are taken as nodes at their pair midpoints"""
        source = (40.0, 30.0)
        bearings = []
        for q in [(0.0, 0.0), (100.0, 0.0), (0.0, 100.0)]:
            geometry = ArrayGeometry(((q[0] - 0.5, q[1]), (q[0] + 0.5, q[1]), (q[0], q[1] + 1.0)))
            pair = make_pair(geometry, 0, 1)
            true = bearing_to_source(pair.midpoint, source)
            bearings.append(AmbiguousBearing(pair, true, wrap_angle(reflect(true, pair.axis_angle))))
        result = ottoy_resolve(bearings)
        assert result.mask == 0
        assert result.location.position == pytest.approx(source, abs=1e-6)
