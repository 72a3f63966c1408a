import numpy as np
from django.test import SimpleTestCase

from g2p_app import tensorcore as tc
from g2p_app.exceptions import ArgumentError, ConfigurationError, DimensionError, GraphError, NumericError


def _param(rng, *shape, scale=1.0):
    return tc.Tensor(rng.normal(scale=scale, size=shape), requires_grad=True)


class GradientCheckTests(SimpleTestCase):
    """Central differences agree with the analytic gradients in float64."""

    tolerance = 1e-5

    def setUp(self):
        self.rng = np.random.default_rng(7)
        self._precision = tc.precision(np.float64)
        self._precision.__enter__()

    def tearDown(self):
        self._precision.__exit__(None, None, None)

    def assertGradientsMatch(self, loss_fn, params):
        result = tc.gradient_check(loss_fn, params, floor=1e-6)
        self.assertGreater(result.checked, 0)
        self.assertLess(result.max_relative_error, self.tolerance)

    def test_elementwise_and_broadcasting(self):
        a = _param(self.rng, 3, 4)
        b = _param(self.rng, 4)
        c = tc.Tensor(self.rng.uniform(1.0, 2.0, size=(3, 1)), requires_grad=True)
        w = tc.Tensor(self.rng.normal(size=(3, 4)))

        def loss():
            return (((a + b) * a - b / c) * w).sum()

        self.assertGradientsMatch(loss, [a, b, c])

    def test_matmul_sum_mean_reshape_transpose(self):
        a = _param(self.rng, 2, 3, 4)
        b = _param(self.rng, 4, 5)

        def loss():
            y = (a @ b).transpose(0, 2, 1).reshape(2, 15)
            return y.mean(axis=0).sum() + (y * y).mean()

        self.assertGradientsMatch(loss, [a, b])

    def test_nonlinearities(self):
        # relu inputs stay clear of the kink at zero
        x = tc.Tensor(self.rng.choice([-1.0, 1.0], size=(3, 5)) * self.rng.uniform(0.2, 1.0, size=(3, 5)),
                      requires_grad=True)
        w = tc.Tensor(self.rng.normal(size=(3, 5)))

        def loss():
            out = tc.relu(x) + tc.sigmoid(x) + tc.softmax(x, axis=-1) * 2.0 + tc.log_softmax(x, axis=0)
            return (out * w).sum()

        self.assertGradientsMatch(loss, [x])

    def test_layer_norm(self):
        x = _param(self.rng, 4, 6)
        gamma = tc.Tensor(self.rng.uniform(0.5, 1.5, size=6), requires_grad=True)
        beta = _param(self.rng, 6)
        w = tc.Tensor(self.rng.normal(size=(4, 6)))

        def loss():
            return (tc.layer_norm(x, gamma, beta) * w).sum()

        self.assertGradientsMatch(loss, [x, gamma, beta])

    def test_embedding_and_cross_entropy(self):
        table = _param(self.rng, 7, 5)
        proj = _param(self.rng, 5, 6)
        ids = np.array([[1, 4, 4], [2, 6, 0]])
        targets = np.array([[3, 5, 2], [1, 0, 0]])

        def loss():
            return tc.cross_entropy(tc.embedding_lookup(table, ids) @ proj, targets)

        self.assertGradientsMatch(loss, [table, proj])

    def test_conv1d(self):
        x = _param(self.rng, 2, 5, 3)
        kernel = _param(self.rng, 3, 3, 4)
        bias = _param(self.rng, 4)
        w = tc.Tensor(self.rng.normal(size=(2, 5, 4)))

        def loss():
            return (tc.conv1d(x, kernel, bias) * w).sum()

        self.assertGradientsMatch(loss, [x, kernel, bias])

    def test_multi_head_attention(self):
        q = _param(self.rng, 2, 3, 4)
        kv = _param(self.rng, 2, 5, 4)
        weights = tc.AttentionWeights(*(_param(self.rng, 4, 4, scale=0.5) for _ in range(4)))
        mask = np.array([True, True, True, False, True])
        w = tc.Tensor(self.rng.normal(size=(2, 3, 4)))

        def loss():
            out, _ = tc.multi_head_attention(q, kv, kv, weights, heads=2, mask=mask)
            return (out * w).sum()

        self.assertGradientsMatch(loss, [q, kv, weights.w_q, weights.w_k, weights.w_v, weights.w_o])

    def test_sampled_probes(self):
        a = _param(self.rng, 10, 10)

        result = tc.gradient_check(lambda: (a * a).sum(), [a], samples=12, rng=np.random.default_rng(1))

        self.assertEqual(result.checked, 12)
        self.assertLess(result.max_relative_error, self.tolerance)


class TensorBehaviourTests(SimpleTestCase):
    def test_backward_accumulates_reused_inputs(self):
        x = tc.Tensor([2.0, 3.0], requires_grad=True)

        (x * x + x).sum().backward()

        np.testing.assert_allclose(x.grad, [5.0, 7.0])

    def test_clamp_between_clips_and_passes_gradient(self):
        x = tc.Tensor([-2.0, 0.5, 4.0], requires_grad=True)

        y = tc.clamp_between(x, tc.Tensor([1.0, 0.0, 3.0]), np.array([-1.0, 1.0, 2.0]))
        (y * tc.Tensor([1.0, 2.0, 3.0])).sum().backward()

        np.testing.assert_array_equal(y.data, np.array([-1.0, 0.5, 3.0], dtype=np.float32))
        np.testing.assert_allclose(x.grad, [1.0, 2.0, 3.0])

    def test_backward_twice_raises(self):
        x = tc.Tensor([1.0, 2.0], requires_grad=True)
        loss = (x * x).sum()
        loss.backward()

        with self.assertRaises(GraphError):
            loss.backward()

    def test_detached_tensor_raises(self):
        with self.assertRaises(GraphError):
            tc.Tensor(1.0).backward()

    def test_non_scalar_loss_raises(self):
        x = tc.Tensor([1.0, 2.0], requires_grad=True)

        with self.assertRaises(GraphError):
            (x * 2.0).backward()

    def test_no_grad_records_nothing(self):
        x = tc.Tensor([1.0], requires_grad=True)

        with tc.no_grad():
            y = x * 3.0

        self.assertFalse(y.requires_grad)
        self.assertIsNone(y.node)
        self.assertTrue(tc.is_grad_enabled())

    def test_precision_scope(self):
        with tc.precision(np.float64):
            self.assertEqual(tc.Tensor([1.0]).dtype, np.float64)
        self.assertEqual(tc.Tensor([1.0]).dtype, np.float32)

    def test_unsupported_dtype(self):
        with self.assertRaises(ConfigurationError):
            tc.set_default_dtype(np.int32)

    def test_non_finite_values_raise(self):
        with self.assertRaises(NumericError):
            tc.Tensor([1.0, np.nan])
        with self.assertRaises(NumericError):
            tc.Tensor([1.0, 0.0]) / tc.Tensor([0.0, 0.0])

    def test_matmul_shape_mismatch(self):
        with self.assertRaises(DimensionError):
            tc.Tensor(np.ones((2, 3))) @ tc.Tensor(np.ones((2, 3)))

    def test_conv1d_rejects_even_width_and_channel_mismatch(self):
        x = tc.Tensor(np.ones((4, 3)))
        with self.assertRaises(ConfigurationError):
            tc.conv1d(x, tc.Tensor(np.ones((2, 3, 2))))
        with self.assertRaises(DimensionError):
            tc.conv1d(x, tc.Tensor(np.ones((3, 2, 2))))

    def test_conv1d_zero_pads_edges(self):
        x = tc.Tensor(np.arange(1.0, 5.0).reshape(4, 1))
        kernel = tc.Tensor(np.ones((3, 1, 1)))

        out = tc.conv1d(x, kernel)

        np.testing.assert_allclose(out.data[:, 0], [3.0, 6.0, 9.0, 7.0])

    def test_embedding_out_of_range(self):
        with self.assertRaises(ArgumentError):
            tc.embedding_lookup(tc.Tensor(np.ones((3, 2))), [0, 3])

    def test_cross_entropy_ignores_padding(self):
        logits = tc.Tensor(np.log([[[0.5, 0.25, 0.25], [0.1, 0.8, 0.1]]]))

        loss = tc.cross_entropy(logits, np.array([[1, 0]]))

        self.assertAlmostEqual(loss.item(), -np.log(0.25), places=5)
        with self.assertRaises(ArgumentError):
            tc.cross_entropy(logits, np.array([[0, 0]]))

    def test_attention_masks_keys_and_normalizes(self):
        rng = np.random.default_rng(3)
        weights = tc.AttentionWeights(*(tc.Tensor(rng.normal(size=(4, 4))) for _ in range(4)))
        x = tc.Tensor(rng.normal(size=(3, 4)))

        out, probs = tc.multi_head_attention(x, x, x, weights, heads=2, mask=tc.causal_mask(3))

        self.assertEqual(out.shape, (3, 4))
        self.assertEqual(probs.shape, (1, 2, 3, 3))
        np.testing.assert_allclose(probs.sum(axis=-1), 1.0, rtol=1e-5)
        self.assertLess(probs[0, :, 0, 1:].max(), 1e-6)

    def test_attention_heads_must_divide_width(self):
        weights = tc.AttentionWeights(*(tc.Tensor(np.eye(4)) for _ in range(4)))
        x = tc.Tensor(np.ones((2, 4)))

        with self.assertRaises(ConfigurationError):
            tc.multi_head_attention(x, x, x, weights, heads=3)
