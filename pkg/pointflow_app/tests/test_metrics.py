import numpy as np
from django.test import SimpleTestCase
from numpy.testing import assert_allclose

from utils.exceptions import DataError, ShapeError

from pointflow_app.metrics import error_frame, pointwise_errors, summarize_errors
from pointflow_app.sampling import PointCloud


class PointwiseErrorTests(SimpleTestCase):
    def setUp(self):
        self.truth = np.array([[3.0, 0.0, 1.0], [4.0, 0.0, -1.0]])
        self.pred = np.array([[3.0, 1.0, 1.5], [1.0, -1.0, -1.0]])

    def test_norm_variants(self):
        report = pointwise_errors(self.truth, self.pred)
        self.assertAlmostEqual(report.euclidean["u"], 3.0)
        self.assertAlmostEqual(report.rms["u"], 3.0 / np.sqrt(2))
        self.assertAlmostEqual(report.relative["u"], 3.0 / 5.0)
        self.assertAlmostEqual(report.euclidean["p"], 0.5)
        assert_allclose(report.abs_errors, [[0.0, 1.0, 0.5], [3.0, 1.0, 0.0]])
        self.assertEqual(report.headline(), report.euclidean)

    def test_relative_error_is_undefined_for_zero_truth(self):
        report = pointwise_errors(self.truth, self.pred)
        self.assertIsNone(report.relative["v"])
        self.assertEqual(report.undefined, ["v"])
        self.assertAlmostEqual(report.euclidean["v"], np.sqrt(2))

    def test_accepts_a_cloud(self):
        cloud = PointCloud(coords=np.zeros((2, 2)), fields=self.truth)
        self.assertEqual(pointwise_errors(cloud, self.truth).euclidean["u"], 0.0)

    def test_shape_mismatch(self):
        with self.assertRaises(ShapeError):
            pointwise_errors(self.truth, self.pred[:1])

    def test_cloud_without_fields(self):
        with self.assertRaises(DataError):
            pointwise_errors(PointCloud(coords=np.zeros((2, 2))), self.pred)


class SummaryTests(SimpleTestCase):
    def test_summary_and_extremes(self):
        truth = np.ones((4, 3))
        reports = [pointwise_errors(truth, truth + shift) for shift in (0.5, 0.1, 0.3)]
        frame = error_frame(reports, ["a.csv", "b.csv", "c.csv"])
        self.assertEqual(len(frame), 3)
        self.assertIn("relative_p", frame.columns)
        summary, extremes = summarize_errors(frame)
        self.assertEqual(list(summary.columns), ["u", "v", "p"])
        self.assertAlmostEqual(summary.loc["Maximum", "u"], 1.0)
        self.assertAlmostEqual(summary.loc["Minimum", "u"], 0.2)
        self.assertAlmostEqual(summary.loc["Average", "u"], 0.6)
        self.assertEqual(extremes["u"], {"max": "a.csv", "min": "b.csv"})

    def test_undefined_relative_errors_are_skipped(self):
        truth = np.zeros((3, 3))
        frame = error_frame([pointwise_errors(truth, truth + 1)], ["a.csv"])
        summary, extremes = summarize_errors(frame, variant="relative")
        self.assertTrue(summary.isna().all().all())
        self.assertEqual(extremes, {})
