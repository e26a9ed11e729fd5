import os
import tempfile
import unittest
from pathlib import Path

import numpy as np
import pandas as pd
from django.test import SimpleTestCase
from numpy.testing import assert_allclose, assert_array_equal

from utils.exceptions import ConfigError, NumericalError, ShapeError

from pointflow_app import network
from pointflow_app.checkpoint import load_checkpoint
from pointflow_app.flow_oracle import Geometry, oracle_fields
from pointflow_app.metrics import pointwise_errors
from pointflow_app.normalization import NormStats, from_targets, to_targets
from pointflow_app.residuals import network_gradient_residuals
from pointflow_app.sampling import Grading, PointCloud, sample_cloud
from pointflow_app.training import (
    INFEASIBLE,
    AdamState,
    TrainConfig,
    adam_step,
    evaluate_loss,
    fit,
    grid_search,
    minibatches,
    mse_loss,
)

SLOW = os.environ.get("POINTFLOW_SLOW_TESTS") == "1"
# Relative L2 limits on the held-out radius; re-pin at twice the values of the first passing run.
HELD_OUT_RELATIVE_L2 = {"u": 0.25, "v": 0.75, "p": 0.75}


def oracle_arrays(radii, n_points, seed=0):
    clouds = []
    for i, radius in enumerate(radii):
        geometry = Geometry.circle(radius)
        cloud = sample_cloud(geometry, n_points, Grading(n_surface=16), seed=seed + i)
        cloud.fields = oracle_fields(geometry, cloud.coords, 1.0, 1.0, 0.0)
        clouds.append(cloud)
    stats = NormStats.from_training([c.fields for c in clouds], 1.0, 1.0, 0.0)
    coords = np.stack([c.coords for c in clouds])
    targets = np.stack([to_targets(c.fields, stats) for c in clouds])
    return coords, targets, stats


def tiny_model(n_points=32, g=16):
    return network.ModelConfig(n_points=n_points, input_dim=2, n_cfd=3, global_feature_size=g, tail_mlp=(32, 16))


class LossTests(SimpleTestCase):
    def test_mse_of_arrays(self):
        self.assertAlmostEqual(mse_loss(np.zeros((2, 3)), np.ones((2, 3))), 1.0)

    def test_mismatched_shapes(self):
        with self.assertRaises(ShapeError):
            mse_loss(np.zeros((2, 3)), np.zeros((3, 3)))


class AdamTests(SimpleTestCase):
    def setUp(self):
        self.params = network.build(tiny_model(), seed=0)
        self.config = TrainConfig()

    def test_first_step_by_hand(self):
        key, tensor = next(self.params.trainable())
        before = tensor.data.copy()
        state = AdamState.create(self.params)
        adam_step(self.params, {key: np.ones_like(before)}, state, self.config)
        expected = before - self.config.learning_rate / (1 + self.config.epsilon)
        assert_allclose(tensor.data, expected, rtol=0, atol=1e-15)
        self.assertEqual(state.t, 1)

    def test_zero_gradients_leave_parameters_unchanged(self):
        before = {key: t.data.copy() for key, t in self.params.trainable()}
        state = AdamState.create(self.params)
        adam_step(self.params, {}, state, self.config)
        for key, tensor in self.params.trainable():
            assert_array_equal(tensor.data, before[key])

    def test_zero_gradient_after_momentum_still_moves(self):
        key, tensor = next(self.params.trainable())
        state = AdamState.create(self.params)
        adam_step(self.params, {key: np.ones_like(tensor.data)}, state, self.config)
        before = tensor.data.copy()
        adam_step(self.params, {}, state, self.config)
        self.assertTrue((tensor.data < before).all())
        self.assertEqual(state.t, 2)

    def test_non_finite_gradient_names_the_layer(self):
        key, tensor = next(self.params.trainable())
        state = AdamState.create(self.params)
        grad = np.zeros_like(tensor.data)
        grad.flat[0] = np.nan
        with self.assertRaisesRegex(NumericalError, key.rsplit("/", 1)[0]):
            adam_step(self.params, {key: grad}, state, self.config)
        self.assertEqual(state.t, 0)

    def test_invalid_configuration(self):
        with self.assertRaises(ConfigError):
            TrainConfig(batch_size=1).validate()
        with self.assertRaises(ConfigError):
            TrainConfig(beta1=1.0).validate()


class MinibatchTests(SimpleTestCase):
    def test_last_single_sample_batch_is_dropped(self):
        batches = minibatches(9, 4, np.random.default_rng(0))
        self.assertEqual([len(b) for b in batches], [4, 4])

    def test_every_sample_once(self):
        batches = minibatches(10, 4, np.random.default_rng(0))
        self.assertEqual(sorted(np.concatenate(batches).tolist()), list(range(10)))


class FitTests(SimpleTestCase):
    def setUp(self):
        self.tmp = tempfile.TemporaryDirectory()
        self.root = Path(self.tmp.name)
        coords, targets, self.stats = oracle_arrays([0.4, 0.5, 0.6, 0.7, 0.8, 0.9], 32)
        self.train = (coords[:4], targets[:4])
        self.val = (coords[4:], targets[4:])

    def tearDown(self):
        self.tmp.cleanup()

    def run_fit(self, name, epochs=5):
        config = TrainConfig(batch_size=2, epochs=epochs, seed=3, learning_rate=1e-3)
        params = network.build(tiny_model(), seed=config.seed)
        return fit(params, self.train, self.val, config, self.root / name, {"norm_stats": self.stats.to_dict()})

    def test_loss_decreases_and_best_checkpoint_is_saved(self):
        best, report = self.run_fit("a.pcfn", epochs=20)
        frame = report.to_frame()
        self.assertEqual(list(frame["epoch"]), list(range(21)))
        self.assertLess(frame["train_loss"].iloc[-1], frame["train_loss"].iloc[1])
        loaded, metadata = load_checkpoint(self.root / "a.pcfn")
        self.assertEqual(metadata["epoch"], report.best_epoch)
        self.assertIn("norm_stats", metadata)
        self.assertAlmostEqual(evaluate_loss(loaded, *self.val), report.best_val_loss, places=12)

    def test_identical_runs_are_bit_identical(self):
        _, first = self.run_fit("a.pcfn")
        _, second = self.run_fit("b.pcfn")
        pd.testing.assert_frame_equal(
            first.to_frame().drop(columns="seconds"), second.to_frame().drop(columns="seconds"), check_exact=True,
        )
        self.assertEqual((self.root / "a.pcfn").read_bytes(), (self.root / "b.pcfn").read_bytes())

    @unittest.skipUnless(SLOW, "set POINTFLOW_SLOW_TESTS=1 for the overfit suite")
    def test_overfit_eight_samples(self):
        radii = [0.4, 0.5, 0.6, 0.7, 0.8, 0.9, 1.0, 1.1]
        coords, targets, stats = oracle_arrays(radii, 256)
        config = TrainConfig(batch_size=4, epochs=2000, seed=0, log_every=100)
        params = network.build(network.ModelConfig(n_points=256, input_dim=2, n_cfd=3, global_feature_size=128), seed=0)
        best, report = fit(params, (coords, targets), None, config)
        self.assertLess(min(row["train_loss"] for row in report.history[1:]), 1e-4)

        critical, non_critical = 0.0, 0.0
        for radius, points in zip(radii, coords):
            cloud = PointCloud(coords=points, geometry=Geometry.circle(radius))
            result = network_gradient_residuals(best, cloud, stats, mu=0.05)
            merged = np.sort(np.concatenate([result.critical_interior, result.non_critical_interior]))
            assert_array_equal(merged, result.interior)
            if result.critical.empty or result.non_critical.empty:
                continue
            critical += sum(result.critical.averaged.values())
            non_critical += sum(result.non_critical.averaged.values())
        self.assertGreaterEqual(critical, non_critical)

    @unittest.skipUnless(SLOW, "set POINTFLOW_SLOW_TESTS=1 for the generalization run")
    def test_held_out_radius(self):
        coords, targets, stats = oracle_arrays([0.4, 0.6, 0.8, 1.2], 256)
        config = TrainConfig(batch_size=2, epochs=500, seed=0, log_every=100)
        params = network.build(network.ModelConfig(n_points=256, input_dim=2, n_cfd=3, global_feature_size=128), seed=0)
        best, _ = fit(params, (coords, targets), None, config)

        geometry = Geometry.circle(1.0)
        cloud = sample_cloud(geometry, 256, Grading(n_surface=16), seed=99)
        cloud.fields = oracle_fields(geometry, cloud.coords, 1.0, 1.0, 0.0)
        normalized, _ = network.forward(best, cloud)
        errors = pointwise_errors(cloud, from_targets(normalized, stats))
        for name, limit in HELD_OUT_RELATIVE_L2.items():
            self.assertLess(errors.relative[name], limit, name)


class GridSearchTests(SimpleTestCase):
    def setUp(self):
        self.tmp = tempfile.TemporaryDirectory()
        self.root = Path(self.tmp.name)
        coords, targets, _ = oracle_arrays([0.4, 0.5, 0.6, 0.7, 0.8, 0.9], 32)
        self.data = {"train": (coords[:4], targets[:4]), "val": (coords[4:5], targets[4:5]), "test": (coords[5:], targets[5:])}

    def tearDown(self):
        self.tmp.cleanup()

    def test_grid_marks_infeasible_cells_and_resumes(self):
        config = TrainConfig(epochs=2, seed=0)
        model = tiny_model(g=16)
        table = grid_search(self.data, model, config, [16, 32], [2, 8], self.root, memory_limit_mb=2048)
        self.assertEqual(len(table), 4)
        infeasible = table[table["batch_size"] == 8]
        self.assertTrue((infeasible["train_loss"] == INFEASIBLE).all())
        self.assertTrue((infeasible["seconds"] == INFEASIBLE).all())
        self.assertTrue((self.root / "G16_B2.pcfn").exists())

        before = (self.root / "grid.csv").read_bytes()
        again = grid_search(self.data, model, config, [16, 32], [2, 8], self.root, memory_limit_mb=2048)
        self.assertEqual(len(again), 4)
        self.assertEqual((self.root / "grid.csv").read_bytes(), before)

    def test_memory_limit(self):
        config = TrainConfig(epochs=1, seed=0)
        table = grid_search(self.data, tiny_model(), config, [16], [2], self.root, memory_limit_mb=1e-6)
        self.assertEqual(table.iloc[0]["feasible"], "no")
