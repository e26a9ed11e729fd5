import numpy as np
from django.test import SimpleTestCase
from numpy.testing import assert_allclose, assert_array_equal

from utils.exceptions import ContractViolation, DegenerateBatchError, NumericalError, ShapeError

from pointflow_app import tensor_core as tc


def check_gradients(test, loss_fn, leaves, tolerance=1e-6):
    with tc.Tape() as tape:
        grads = tape.backward(loss_fn())
    for leaf in leaves:
        numeric = tc.finite_difference_gradient(lambda: float(loss_fn().data), leaf.data, relative_step=1e-6)
        indices = list(numeric)
        analytic = grads[leaf].reshape(-1)[indices]
        error = tc.max_relative_error(analytic, [numeric[i] for i in indices], floor=1e-6)
        test.assertLess(error, tolerance)


class TapeTests(SimpleTestCase):
    def test_gradient_of_product_accumulates_both_paths(self):
        x = tc.Tensor(np.array([1.0, -2.0, 3.0]), requires_grad=True)
        with tc.Tape() as tape:
            loss = tc.sum_all(tc.mul(x, x))
            grads = tape.backward(loss)
        assert_array_equal(grads[x], 2 * x.data)
        assert_array_equal(x.grad, 2 * x.data)

    def test_nothing_recorded_outside_a_tape(self):
        x = tc.Tensor(np.ones(3), requires_grad=True)
        y = tc.relu(x)
        self.assertFalse(y.requires_grad)
        with tc.Tape() as tape:
            z = tc.relu(x)
        self.assertEqual(len(tape), 1)
        self.assertTrue(z.requires_grad)

    def test_non_scalar_root_is_rejected(self):
        x = tc.Tensor(np.ones(3), requires_grad=True)
        with tc.Tape() as tape:
            y = tc.scale(x, 2.0)
            with self.assertRaises(ShapeError):
                tape.backward(y)

    def test_root_from_another_tape_is_rejected(self):
        x = tc.Tensor(np.ones(3), requires_grad=True)
        with tc.Tape():
            loss = tc.sum_all(x)
        with tc.Tape() as other:
            with self.assertRaises(ContractViolation):
                other.backward(loss)

    def test_add_requires_equal_shapes(self):
        with self.assertRaises(ShapeError):
            tc.add(tc.Tensor(np.ones((2, 3))), tc.Tensor(np.ones(3)))


class PrimitiveGradientTests(SimpleTestCase):
    def setUp(self):
        self.rng = np.random.default_rng(0)

    def test_affine_gradients(self):
        x = tc.Tensor(self.rng.normal(size=(5, 3)), requires_grad=True)
        W = tc.Tensor(self.rng.normal(size=(4, 3)), requires_grad=True)
        b = tc.Tensor(self.rng.normal(size=4), requires_grad=True)
        check_gradients(self, lambda: tc.sum_all(tc.square(tc.affine(x, W, b))), [x, W, b])

    def test_train_mode_batch_norm_gradients(self):
        x = tc.Tensor(self.rng.normal(size=(6, 4)), requires_grad=True)
        state = tc.BNState.create(4)
        state.gamma.data = self.rng.uniform(0.5, 1.5, size=4)
        weights = tc.Tensor(self.rng.normal(size=(6, 4)))

        def loss():
            return tc.sum_all(tc.mul(tc.batch_norm(x, state, tc.TRAIN), weights))

        check_gradients(self, loss, [x, state.gamma, state.beta])

    def test_sigmoid_and_bmm_gradients(self):
        a = tc.Tensor(self.rng.normal(size=(2, 5, 3)), requires_grad=True)
        m = tc.Tensor(self.rng.normal(size=(2, 3, 3)), requires_grad=True)
        check_gradients(self, lambda: tc.mean_all(tc.sigmoid(tc.bmm(a, m))), [a, m])

    def test_shape_operations_gradients(self):
        local = tc.Tensor(self.rng.normal(size=(2, 4, 3)), requires_grad=True)
        pooled = tc.Tensor(self.rng.normal(size=(2, 2)), requires_grad=True)

        def loss():
            features = tc.concat_last(local, tc.tile_points(pooled, 4))
            picked = tc.take_columns(tc.reshape(features, (8, 5)), [0, 4, 4])
            return tc.sum_all(tc.square(picked))

        check_gradients(self, loss, [local, pooled])


class MaxPoolTests(SimpleTestCase):
    def test_ties_resolve_to_lowest_index(self):
        x = tc.Tensor(np.array([[1.0, 5.0], [3.0, 5.0], [3.0, 0.0]]))
        pooled, indices = tc.max_pool_points(x)
        assert_array_equal(pooled.data, [3.0, 5.0])
        assert_array_equal(indices, [1, 0])

    def test_gradient_goes_to_argmax_rows_only(self):
        x = tc.Tensor(np.array([[[0.0, 2.0], [1.0, -1.0], [0.5, 3.0]]]), requires_grad=True)
        with tc.Tape() as tape:
            pooled, _ = tc.max_pool_points(x)
            grads = tape.backward(tc.sum_all(pooled))
        assert_array_equal(grads[x], [[[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]]])

    def test_empty_point_axis(self):
        with self.assertRaises(ShapeError):
            tc.max_pool_points(tc.Tensor(np.zeros((0, 3))))


class ActivationTests(SimpleTestCase):
    def test_sigmoid_is_finite_for_large_inputs(self):
        out = tc.sigmoid(tc.Tensor(np.array([-1000.0, 0.0, 1000.0])))
        assert_allclose(out.data, [0.0, 0.5, 1.0])
        self.assertTrue(np.all(np.isfinite(out.data)))

    def test_relu_subgradient_at_zero(self):
        x = tc.Tensor(np.array([-1.0, 0.0, 2.0]), requires_grad=True)
        with tc.Tape() as tape:
            grads = tape.backward(tc.sum_all(tc.relu(x)))
        assert_array_equal(grads[x], [0.0, 0.0, 1.0])


class BatchNormTests(SimpleTestCase):
    def test_single_row_train_batch_is_degenerate(self):
        with self.assertRaises(DegenerateBatchError):
            tc.batch_norm(tc.Tensor(np.ones((1, 3))), tc.BNState.create(3), tc.TRAIN)

    def test_running_statistics_follow_the_momentum(self):
        state = tc.BNState.create(2)
        x = tc.Tensor(np.array([[1.0, 2.0], [3.0, 6.0]]))
        tc.batch_norm(x, state, tc.TRAIN)
        assert_allclose(state.running_mean, 0.1 * np.array([2.0, 4.0]))
        assert_allclose(state.running_var, 0.9 + 0.1 * np.array([1.0, 4.0]))

    def test_infer_mode_uses_running_statistics(self):
        state = tc.BNState.create(2)
        state.running_mean = np.array([1.0, -1.0])
        state.running_var = np.array([4.0, 1.0])
        out = tc.batch_norm(tc.Tensor(np.array([[3.0, 0.0]])), state, tc.INFER)
        assert_allclose(out.data, [[2.0 / np.sqrt(4.0 + tc.BN_EPSILON), 1.0 / np.sqrt(1.0 + tc.BN_EPSILON)]])


class ConstantModel:
    mode = tc.TRAIN

    def __call__(self, X):
        return X


def squares(X):
    return tc.square(tc.take_columns(X, [0, 1, 0]))


class InputDerivativeTests(SimpleTestCase):
    def test_first_and_second_derivatives_of_squares(self):
        coords = np.random.default_rng(3).uniform(-1, 1, size=(20, 2))
        result = tc.input_derivatives(squares, coords, order=2)
        assert_allclose(result.values[:, 0], coords[:, 0] ** 2)
        assert_allclose(result.first[0, :, 0], 2 * coords[:, 0])
        assert_allclose(result.first[1, :, 1], 2 * coords[:, 1])
        assert_allclose(result.first[0, :, 1], 0.0)
        assert_allclose(result.second[0, :, 0], 2.0, rtol=1e-6)
        assert_allclose(result.second[1, :, 1], 2.0, rtol=1e-6)
        assert_allclose(result.second[0, :, 1], 0.0, atol=1e-6)

    def test_train_mode_model_is_rejected(self):
        with self.assertRaises(ContractViolation):
            tc.input_derivatives(ConstantModel(), np.zeros((4, 2)))

    def test_train_mode_batch_norm_inside_derivatives_is_rejected(self):
        state = tc.BNState.create(2)

        def model(X):
            rows = tc.batch_norm(tc.reshape(X, (X.shape[1], 2)), state, tc.TRAIN)
            return tc.reshape(rows, X.shape)

        with self.assertRaises(ContractViolation):
            tc.input_derivatives(model, np.random.default_rng(0).normal(size=(5, 2)))

    def test_point_spacing_is_nearest_neighbour_distance(self):
        coords = np.array([[0.0, 0.0], [1.0, 0.0], [3.0, 0.0]])
        assert_allclose(tc.point_spacing(coords), [1.0, 1.0, 2.0])


class DebugCheckTests(SimpleTestCase):
    def tearDown(self):
        tc.enable_debug_checks(False)

    def test_non_finite_affine_output(self):
        x = tc.Tensor(np.array([[np.inf, 1.0]]))
        W = tc.Tensor(np.ones((2, 2)))
        b = tc.Tensor(np.zeros(2))
        self.assertFalse(np.isfinite(tc.affine(x, W, b).data).all())
        tc.enable_debug_checks()
        with self.assertRaises(NumericalError):
            tc.affine(x, W, b)
