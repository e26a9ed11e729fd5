import numpy as np
from django.test import SimpleTestCase
from numpy.testing import assert_array_equal
from threadpoolctl import threadpool_limits

from pointflow_app import network
from pointflow_app.critical_points import analyze, critical_frame, critical_points
from pointflow_app.flow_oracle import Geometry
from pointflow_app.sampling import Grading, PointCloud, sample_cloud


class Latent:
    def __init__(self, argmax_indices):
        self.argmax_indices = np.asarray(argmax_indices)


class CriticalPointTests(SimpleTestCase):
    def test_indices_are_deduplicated_and_sorted(self):
        cloud = PointCloud(coords=np.random.default_rng(0).normal(size=(6, 2)))
        indices, covered = critical_points(Latent([4, 1, 4, 0, 1]), cloud)
        assert_array_equal(indices, [0, 1, 4])
        self.assertIsNone(covered)

    def test_coverage_flag(self):
        cloud = PointCloud(coords=np.zeros((5, 2)) + np.arange(5)[:, None], surface_mask=[1, 1, 0, 0, 0])
        self.assertTrue(critical_points(Latent([0, 1, 3]), cloud)[1])
        self.assertFalse(critical_points(Latent([0, 3]), cloud)[1])

    def test_analyze_sampled_cloud(self):
        cloud = sample_cloud(Geometry.circle(0.5), 64, Grading(n_surface=16), seed=2)
        params = network.build(network.ModelConfig(n_points=64, input_dim=2, n_cfd=3, global_feature_size=32), seed=0)
        with threadpool_limits(limits=1):
            report, latent = analyze(params, cloud)
        self.assertEqual(report.n_points, 64)
        self.assertEqual(report.global_feature_size, 32)
        self.assertEqual(report.surface_points, 16)
        self.assertLessEqual(report.count, 32)
        self.assertEqual(report.boundary_covered, report.surface_critical == 16)
        assert_array_equal(report.indices, latent.critical_set)

    def test_frame_flags(self):
        cloud = PointCloud(coords=np.arange(8.0).reshape(4, 2))
        frame = critical_frame(cloud, np.array([1, 3]))
        self.assertEqual(list(frame.columns), ["x", "y", "is_critical"])
        self.assertEqual(frame["is_critical"].tolist(), [0, 1, 0, 1])
