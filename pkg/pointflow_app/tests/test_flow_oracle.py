import numpy as np
from django.test import SimpleTestCase
from numpy.testing import assert_allclose

from utils.exceptions import DomainError

from pointflow_app.flow_oracle import Geometry, Obstacle, oracle_fields, potential_flow_cylinder, reynolds


class ReynoldsTests(SimpleTestCase):
    def test_value(self):
        self.assertAlmostEqual(reynolds(1.0, 1.0, 0.05, 1.0), 20.0)

    def test_non_positive_inputs(self):
        for args in ((0.0, 1.0, 0.05, 1.0), (1.0, -1.0, 0.05, 1.0), (1.0, 1.0, 0.0, 1.0), (1.0, 1.0, 0.05, 0.0)):
            with self.assertRaises(DomainError):
                reynolds(*args)

    def test_length_scale_is_radius_or_minor_axis(self):
        self.assertEqual(Obstacle("circle", (0, 0), 0.5).length_scale, 0.5)
        self.assertEqual(Obstacle("ellipse", (0, 0), 1.0, 0.25).length_scale, 0.25)


class PotentialFlowTests(SimpleTestCase):
    def test_free_stream_far_away(self):
        fields = potential_flow_cylinder((0, 0), 0.5, 2.0, 1.0, 3.0, np.array([[1e6, 0.0]]))
        assert_allclose(fields[0], [2.0, 0.0, 3.0], atol=1e-6)

    def test_stagnation_and_shoulder_points(self):
        points = np.array([[-1.0, 0.0], [0.0, 1.0]])
        fields = potential_flow_cylinder((0, 0), 1.0, 1.0, 1.0, 0.0, points)
        assert_allclose(fields[0], [0.0, 0.0, 0.5], atol=1e-12)
        assert_allclose(fields[1], [2.0, 0.0, -1.5], atol=1e-12)

    def test_surface_velocity_is_tangential(self):
        t = np.linspace(0, 2 * np.pi, 17)
        points = np.stack([0.7 * np.cos(t), 0.7 * np.sin(t)], axis=1) + [0.2, -0.1]
        fields = potential_flow_cylinder((0.2, -0.1), 0.7, 1.0, 1.0, 0.0, points)
        normal = np.stack([np.cos(t), np.sin(t)], axis=1)
        assert_allclose(np.sum(fields[:, :2] * normal, axis=1), 0.0, atol=1e-12)

    def test_points_inside_are_rejected(self):
        with self.assertRaises(DomainError):
            potential_flow_cylinder((0, 0), 1.0, 1.0, 1.0, 0.0, np.array([[0.1, 0.1], [3.0, 0.0]]))

    def test_oracle_covers_single_circles_only(self):
        geometry = Geometry((Obstacle("ellipse", (0, 0), 1.0, 0.5),))
        with self.assertRaises(DomainError):
            oracle_fields(geometry, np.array([[3.0, 0.0]]), 1.0, 1.0, 0.0)


class GeometryTests(SimpleTestCase):
    def test_offset_curve_lies_on_the_surface(self):
        obstacle = Obstacle("ellipse", (1.0, 2.0), 1.5, 0.5, angle=0.3)
        points = obstacle.offset_curve(40)
        assert_allclose(obstacle.level(points), 0.0, atol=1e-12)
        self.assertTrue(obstacle.on_surface(points).all())

    def test_positive_offset_lies_outside(self):
        obstacle = Obstacle("ellipse", (0.0, 0.0), 1.5, 0.5, angle=1.0)
        self.assertFalse(obstacle.inside(obstacle.offset_curve(40, offset=0.1)).any())
        self.assertTrue((obstacle.level(obstacle.offset_curve(40, offset=0.1)) > 0).all())

    def test_dict_round_trip(self):
        geometry = Geometry((Obstacle("circle", (0, 0), 0.5), Obstacle("ellipse", (3, 0), 1.0, 0.2, 0.4)))
        self.assertEqual(Geometry.from_dict(geometry.to_dict()), geometry)

    def test_circle_perimeter(self):
        self.assertAlmostEqual(Obstacle("circle", (0, 0), 2.0).perimeter, 4 * np.pi)


class PolygonTests(SimpleTestCase):
    def test_perimeters(self):
        self.assertAlmostEqual(Obstacle("square", (0, 0), 0.5).perimeter, 4.0)
        self.assertAlmostEqual(Obstacle("rectangle", (0, 0), 1.0, 0.25).perimeter, 5.0)
        self.assertAlmostEqual(Obstacle("hexagon", (0, 0), 0.7).perimeter, 4.2)
        self.assertAlmostEqual(Obstacle("triangle", (0, 0), 1.0).perimeter, 3 * np.sqrt(3))

    def test_length_scales(self):
        self.assertEqual(Obstacle("rectangle", (0, 0), 1.0, 0.25).length_scale, 0.25)
        self.assertEqual(Obstacle("square", (0, 0), 0.4).length_scale, 0.4)
        self.assertEqual(Obstacle("pentagon", (0, 0), 0.6, 0.1).length_scale, 0.6)
        self.assertEqual(Obstacle("pentagon", (0, 0), 0.6, 0.1).b, 0.6)

    def test_surface_points_and_corners(self):
        for kind in ("square", "triangle", "pentagon", "hexagon"):
            obstacle = Obstacle(kind, (1.0, -0.5), 0.8, angle=0.4)
            points = obstacle.offset_curve(60)
            self.assertTrue(obstacle.on_surface(points).all(), kind)
            corners = obstacle._to_global(obstacle.vertices())
            self.assertTrue(obstacle.on_surface(corners).all(), kind)
            self.assertTrue(obstacle.inside(np.array([obstacle.center])).all(), kind)

    def test_offset_curve_keeps_its_distance_around_corners(self):
        square = Obstacle("square", (0, 0), 1.0)
        points = square.offset_curve(200, offset=0.2, phase=0.3)
        distance = np.linalg.norm(np.maximum(np.abs(points) - 1.0, 0.0), axis=1)
        assert_allclose(distance, 0.2, rtol=1e-12)
        corner = (np.abs(points) > 1.0).all(axis=1)
        self.assertTrue(corner.any())

    def test_offset_points_are_evenly_spaced(self):
        points = Obstacle("rectangle", (0, 0), 1.0, 0.5).offset_curve(120, offset=0.1)
        gaps = np.linalg.norm(np.diff(np.vstack([points, points[:1]]), axis=0), axis=1)
        expected = (6.0 + 2 * np.pi * 0.1) / 120
        assert_allclose(gaps, expected, rtol=0.05)

    def test_per_point_offsets(self):
        hexagon = Obstacle("hexagon", (0, 0), 1.0, angle=0.2)
        offsets = np.linspace(0.1, 0.3, 36)
        points = hexagon.offset_curve(36, offset=offsets)
        self.assertFalse(hexagon.inside(points).any())
        self.assertFalse(hexagon.on_surface(points).any())

    def test_polygon_dict_round_trip_and_oracle(self):
        geometry = Geometry((Obstacle("triangle", (0, 0), 0.5, angle=0.1), Obstacle("rectangle", (3, 0), 1.0, 0.2)))
        self.assertEqual(Geometry.from_dict(geometry.to_dict()), geometry)
        with self.assertRaises(DomainError):
            oracle_fields(Geometry((Obstacle("square", (0, 0), 0.5),)), np.array([[2.0, 0.0]]), 1.0, 1.0, 0.0)

    def test_unknown_kind(self):
        with self.assertRaises(DomainError):
            Obstacle("star", (0, 0), 1.0)
