import threading
import unittest

import numpy as np

from seqwm.autodiff import checkpoint
from seqwm.autodiff import tensor as T
from seqwm.autodiff.nn import Mlp, MlpSpec, init_params, mlp_forward, mlp_predict
from seqwm.autodiff.optim import Adam, AdamState, adam_step, clip_grad_norm
from seqwm.autodiff.tensor import Parameter, Tensor, no_grad, stop_gradient
from seqwm.exceptions import ConfigError, NonFiniteError, ShapeMismatchError, TraceError, WireFormatError
from seqwm.types import OutputActivation

from helpers import assert_grad_close


class TestTensorOps(unittest.TestCase):
    def setUp(self):
        self.rng = np.random.default_rng(0)

    def test_elementwise_gradients(self):
        a = Parameter(self.rng.normal(size=(3, 4)), name="a")
        b = Parameter(self.rng.uniform(0.5, 2.0, size=(4,)), name="b")

        def loss():
            return ((a * b + a / b - T.exp(a * 0.3) + T.log(b)) ** 2).sum() + T.tanh(a).mean()

        assert_grad_close(self, loss, [a, b])

    def test_activation_gradients(self):
        x = Parameter(self.rng.normal(size=(5,)) * 2, name="x")

        def loss():
            return (T.mish(x) * T.sigmoid(x) + T.softplus(x) + T.soft_clamp(x, -5.0, 2.0)).sum()

        assert_grad_close(self, loss, [x])

    def test_matmul_concat_take_gradients(self):
        x = Parameter(self.rng.normal(size=(2, 3, 4)), name="x")
        w = Parameter(self.rng.normal(size=(6, 2)), name="w")

        def loss():
            joined = T.concat([x[:, 0], x[:, 2, :2]], axis=-1)
            return ((joined @ w) ** 2).sum() + x[:, 1].sum() * 0.5

        assert_grad_close(self, loss, [x, w])

    def test_fancy_index_accumulates_repeats(self):
        x = Parameter(np.arange(4.0), name="x")
        y = x[np.array([0, 0, 3])].sum()
        y.backward()
        np.testing.assert_allclose(x.grad, [2.0, 0.0, 0.0, 1.0])

    def test_softmax_and_layer_norm_gradients(self):
        x = Parameter(self.rng.normal(size=(3, 5)), name="x")
        gain = Parameter(self.rng.uniform(0.5, 1.5, size=(5,)), name="gain")
        bias = Parameter(self.rng.normal(size=(5,)), name="bias")
        target = self.rng.normal(size=(3, 5))

        def loss():
            h = T.layer_norm(x, gain, bias)
            return (T.softmax(h) * target).sum() + (T.log_softmax(x) * target).sum()

        assert_grad_close(self, loss, [x, gain, bias])

    def test_reduction_gradients(self):
        x = Parameter(self.rng.normal(size=(2, 3, 4)), name="x")

        def loss():
            return (x.sum(axis=1) ** 2).mean() + x.mean(axis=(0, 2)).sum() + x.reshape(6, 4)[1:3].sum()

        assert_grad_close(self, loss, [x])

    def test_mish_value(self):
        self.assertAlmostEqual(T.mish(Tensor(1.0)).item(), 0.8650983882673103, places=9)
        self.assertAlmostEqual(T.mish(Tensor(0.0)).item(), 0.0)

    def test_stop_gradient_blocks_flow(self):
        x = Parameter(np.array([2.0]), name="x")
        y = (x * stop_gradient(x * 3.0)).sum()
        y.backward()
        np.testing.assert_allclose(x.grad, [6.0])

    def test_no_grad_records_nothing(self):
        x = Parameter(np.ones(3))
        with no_grad():
            y = (x * 2.0).sum()
        self.assertFalse(y.requires_grad)
        with self.assertRaises(TraceError):
            y.backward()
        self.assertTrue((x * 2.0).requires_grad)

    def test_no_grad_is_thread_local(self):
        seen = {}
        x = Parameter(np.ones(2))

        def worker():
            seen["worker"] = (x * 2.0).requires_grad

        with no_grad():
            thread = threading.Thread(target=worker)
            thread.start()
            thread.join()
            seen["main"] = (x * 2.0).requires_grad
        self.assertTrue(seen["worker"])
        self.assertFalse(seen["main"])

    def test_second_backward_is_an_error(self):
        x = Parameter(np.ones(2))
        y = (x * x).sum()
        y.backward()
        with self.assertRaises(TraceError):
            y.backward()

    def test_backward_needs_scalar_finite_loss(self):
        x = Parameter(np.ones(2))
        with self.assertRaises(ShapeMismatchError):
            (x * 2.0).backward()
        with self.assertRaises(NonFiniteError):
            (T.log(x - 1.0)).sum().backward()

    def test_gradients_accumulate_until_zeroed(self):
        x = Parameter(np.array([1.0, 2.0]))
        (x * 3.0).sum().backward()
        (x * 3.0).sum().backward()
        np.testing.assert_allclose(x.grad, [6.0, 6.0])
        x.zero_grad()
        np.testing.assert_allclose(x.grad, [0.0, 0.0])

    def test_matmul_shape_check(self):
        with self.assertRaises(ShapeMismatchError):
            Tensor(np.ones((2, 3))) @ Tensor(np.ones((4, 2)))


class TestMlp(unittest.TestCase):
    def test_param_shapes_and_count(self):
        spec = MlpSpec(input_dim=3, hidden_dim=5, num_layers=2, output_dim=4)
        shapes = dict(spec.param_shapes())
        self.assertEqual(shapes["0.weight"], (3, 5))
        self.assertEqual(shapes["1.weight"], (5, 5))
        self.assertEqual(shapes["out.weight"], (5, 4))
        self.assertEqual(spec.param_count(), (15 + 5 + 10) + (25 + 5 + 10) + (20 + 4))

    def test_invalid_specs(self):
        with self.assertRaises(ConfigError):
            MlpSpec(input_dim=0, hidden_dim=5, num_layers=1, output_dim=4)
        with self.assertRaises(ConfigError):
            MlpSpec(input_dim=3, hidden_dim=5, num_layers=1, output_dim=12,
                    output_activation=OutputActivation.sem_norm, simplex_dim=8)

    def test_forward_gradient(self):
        rng = np.random.default_rng(1)
        spec = MlpSpec(input_dim=3, hidden_dim=4, num_layers=2, output_dim=2, output_activation=OutputActivation.tanh)
        params = init_params(spec, rng)
        x = rng.normal(size=(5, 3))
        assert_grad_close(self, lambda: (mlp_forward(spec, params, x) ** 2).sum(), params[:6] + params[-2:])

    def test_plain_predict_matches_traced_forward(self):
        rng = np.random.default_rng(4)
        for activation in OutputActivation:
            for layer_norm in (True, False):
                spec = MlpSpec(input_dim=5, hidden_dim=6, num_layers=2, output_dim=4, output_activation=activation,
                               use_layer_norm=layer_norm, simplex_dim=2)
                params = init_params(spec, rng)
                x = rng.normal(size=(7, 5))
                np.testing.assert_allclose(mlp_predict(spec, params, x), mlp_forward(spec, params, x).data,
                                           rtol=1e-10, atol=1e-10, err_msg=activation.value)

    def test_shared_part_needs_no_tiling(self):
        rng = np.random.default_rng(5)
        mlp = Mlp(MlpSpec(input_dim=5, hidden_dim=6, num_layers=1, output_dim=3), rng)
        rows, shared = rng.normal(size=(4, 3)), rng.normal(size=2)
        tiled = np.concatenate([rows, np.tile(shared, (4, 1))], axis=1)
        np.testing.assert_allclose(mlp.predict([rows, shared, None]), mlp(tiled).data, rtol=1e-10, atol=1e-10)
        with self.assertRaises(ShapeMismatchError):
            mlp.predict([rows, shared[:1]])

    def test_wrong_input_width(self):
        mlp = Mlp(MlpSpec(input_dim=3, hidden_dim=4, num_layers=1, output_dim=2), np.random.default_rng(0))
        with self.assertRaises(ShapeMismatchError):
            mlp(np.ones((2, 5)))

    def test_zero_output_layer(self):
        mlp = Mlp(MlpSpec(input_dim=3, hidden_dim=4, num_layers=1, output_dim=2), np.random.default_rng(0),
                  zero_output=True)
        np.testing.assert_array_equal(mlp(np.ones((2, 3))).data, np.zeros((2, 2)))

    def test_frozen_forward_passes_input_gradient_only(self):
        mlp = Mlp(MlpSpec(input_dim=3, hidden_dim=4, num_layers=1, output_dim=1), np.random.default_rng(0))
        x = Parameter(np.ones((2, 3)))
        mlp(x, frozen=True).sum().backward()
        self.assertTrue(np.any(x.grad != 0))
        for param in mlp.params:
            np.testing.assert_array_equal(param.grad, 0)

    def test_state_roundtrip(self):
        spec = MlpSpec(input_dim=3, hidden_dim=4, num_layers=1, output_dim=2)
        a = Mlp(spec, np.random.default_rng(0), name="head")
        b = Mlp(spec, np.random.default_rng(1), name="head")
        b.load_state(a.state())
        x = np.random.default_rng(2).normal(size=(3, 3))
        np.testing.assert_array_equal(a(x).data, b(x).data)
        with self.assertRaises(ShapeMismatchError):
            b.load_state({})


class TestAdam(unittest.TestCase):
    def test_first_step_moves_by_learning_rate(self):
        p = Parameter(np.array([1.0, -1.0]))
        state = AdamState.for_params([p], learning_rate=0.1)
        self.assertTrue(adam_step([p], [np.array([0.5, -2.0])], state))
        np.testing.assert_allclose(p.data, [0.9, -0.9], atol=1e-6)

    def test_non_finite_gradient_skips_step(self):
        p = Parameter(np.array([1.0, 2.0]))
        state = AdamState.for_params([p])
        self.assertFalse(adam_step([p], [np.array([np.nan, 1.0])], state))
        np.testing.assert_array_equal(p.data, [1.0, 2.0])
        np.testing.assert_array_equal(state.first_moment[0], 0)
        self.assertEqual(state.step_count, 0)
        self.assertEqual(state.skipped_steps, 1)

    def test_bad_gradient_shape_changes_nothing(self):
        first, second = Parameter(np.array([1.0, 2.0])), Parameter(np.array([3.0]))
        state = AdamState.for_params([first, second], learning_rate=0.1)
        with self.assertRaises(ValueError):
            adam_step([first, second], [np.array([0.5, 0.5]), np.array([1.0, 1.0])], state)
        np.testing.assert_array_equal(first.data, [1.0, 2.0])
        np.testing.assert_array_equal(state.first_moment[0], 0)
        np.testing.assert_array_equal(state.second_moment[0], 0)
        self.assertEqual(state.step_count, 0)

    def test_lr_scale(self):
        state = AdamState.for_params([Parameter(np.zeros(1))], learning_rate=5e-4, lr_scale=0.3)
        self.assertAlmostEqual(state.effective_lr, 1.5e-4)

    def test_clip_grad_norm(self):
        p = Parameter(np.zeros(2))
        p.grad = np.array([3.0, 4.0])
        self.assertAlmostEqual(clip_grad_norm([p], 1.0), 5.0)
        self.assertAlmostEqual(float(np.linalg.norm(p.grad)), 1.0, places=6)

    def test_minimizes_quadratic(self):
        p = Parameter(np.array([3.0, -2.0]))
        opt = Adam([p], learning_rate=0.1)
        for _ in range(300):
            opt.zero_grad()
            ((p - 1.0) ** 2).sum().backward()
            opt.step()
        np.testing.assert_allclose(p.data, [1.0, 1.0], atol=5e-2)


class TestCheckpoint(unittest.TestCase):
    def test_roundtrip(self):
        arrays = {"a/w": np.arange(6.0).reshape(2, 3), "b": np.array(3.5)}
        loaded, metadata = checkpoint.loads(checkpoint.dumps(arrays, {"step": 7}))
        self.assertEqual(metadata, {"step": 7})
        np.testing.assert_array_equal(loaded["a/w"], arrays["a/w"])
        self.assertEqual(loaded["b"].shape, ())

    def test_rejects_garbage(self):
        with self.assertRaises(WireFormatError):
            checkpoint.loads(b"abc")
        blob = checkpoint.dumps({"x": np.ones(4)})
        with self.assertRaises(WireFormatError):
            checkpoint.loads(b"X" + blob[1:])
        with self.assertRaises(WireFormatError):
            checkpoint.loads(blob[:-8])


if __name__ == "__main__":
    unittest.main()
