import numpy as np
import pytest

from ppgauth import nn
from ppgauth.errors import ArgumentError, SchemaVersionError, ShapeError


def fd_grad(f, x, step=1e-4):
    """Independent central-difference oracle, elementwise over x."""
    g = np.zeros_like(x)
    flat, gf = x.ravel(), g.ravel()
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + step
        fp = f()
        flat[i] = orig - step
        fm = f()
        flat[i] = orig
        gf[i] = (fp - fm) / (2 * step)
    return g


def assert_grads_match(build, tensors, tol=1e-5, step=1e-4):
    """Backprop through build(*tensors) vs finite differences, per input."""
    rng = np.random.default_rng(99)
    out = build(*tensors)
    w = rng.normal(size=out.data.shape)
    for t in tensors:
        t.zero_grad()
    build(*tensors).backward(w)
    for t in tensors:
        if not t.requires_grad:
            continue
        num = fd_grad(lambda: float(np.sum(build(*tensors).data * w)), t.data, step)
        np.testing.assert_allclose(t.grad, num, rtol=1e-4, atol=tol)


def T(rng, *shape):
    return nn.Tensor(rng.normal(size=shape), requires_grad=True)


class TestBackwardMachinery:
    def test_scalar_backward_seeds_ones(self):
        x = nn.Tensor([3.0], requires_grad=True)
        y = nn.mul(x, x)
        y.backward()
        np.testing.assert_allclose(x.grad, [6.0])

    def test_nonscalar_backward_requires_grad_argument(self):
        x = nn.Tensor([1.0, 2.0], requires_grad=True)
        with pytest.raises(ShapeError):
            nn.mul(x, x).backward()

    def test_grad_accumulates_across_uses(self):
        x = nn.Tensor([2.0], requires_grad=True)
        y = nn.add(nn.mul(x, x), x)  # x^2 + x
        y.backward()
        np.testing.assert_allclose(x.grad, [5.0])

    def test_no_grad_without_requires(self):
        x = nn.Tensor([1.0, 2.0])
        y = nn.relu(x)
        assert not y.requires_grad and y._backward is None

    def test_broadcast_unbroadcast(self):
        rng = np.random.default_rng(0)
        a = T(rng, 3, 4)
        b = T(rng, 1, 4)
        assert_grads_match(nn.add, [a, b])
        assert_grads_match(nn.mul, [a, b])


class TestElementwise:
    @pytest.mark.parametrize("op", [nn.relu, nn.sigmoid])
    def test_gradients_random_shapes(self, op):
        rng = np.random.default_rng(1)
        for _ in range(5):
            shape = tuple(int(rng.integers(1, 5)) for _ in range(int(rng.integers(1, 4))))
            assert_grads_match(op, [T(rng, *shape)])

    def test_relu_values(self):
        out = nn.relu(nn.Tensor([-1.0, 0.0, 2.5]))
        np.testing.assert_array_equal(out.data, [0.0, 0.0, 2.5])

    def test_sigmoid_values(self):
        out = nn.sigmoid(nn.Tensor([0.0, np.log(3.0)]))
        np.testing.assert_allclose(out.data, [0.5, 0.75], atol=1e-12)

    def test_sum_along(self):
        rng = np.random.default_rng(2)
        x = T(rng, 3, 4)
        out = nn.sum_along(x, axis=1)
        np.testing.assert_allclose(out.data, x.data.sum(axis=1))
        assert_grads_match(lambda t: nn.sum_along(t, axis=1), [x])


class TestConv1d:
    def test_hand_computed_valid(self):
        # x = [1, 2, 3, 4], kernel [1, -1] -> cross-correlation [-1, -1, -1]
        x = nn.Tensor(np.array([[[1.0, 2.0, 3.0, 4.0]]]))
        w = nn.Tensor(np.array([[[1.0, -1.0]]]))
        out = nn.conv1d(x, w, padding="valid")
        np.testing.assert_allclose(out.data, [[[-1.0, -1.0, -1.0]]])

    def test_hand_computed_bias_and_channels(self):
        x = nn.Tensor(np.array([[[1.0, 0.0, 2.0], [0.0, 1.0, 1.0]]]))
        w = nn.Tensor(np.array([[[1.0], [2.0]], [[0.0], [-1.0]]]))  # two 1x1 kernels
        b = nn.Tensor(np.array([10.0, -10.0]))
        out = nn.conv1d(x, w, b)
        np.testing.assert_allclose(
            out.data, [[[11.0, 12.0, 14.0], [-10.0, -11.0, -11.0]]]
        )

    def test_same_padding_preserves_length(self):
        rng = np.random.default_rng(3)
        x = T(rng, 2, 3, 17)
        w = T(rng, 4, 3, 5)
        assert nn.conv1d(x, w, padding="same").data.shape == (2, 4, 17)

    def test_dilation_matches_upsampled_kernel(self):
        rng = np.random.default_rng(4)
        x = nn.Tensor(rng.normal(size=(1, 1, 12)))
        w = rng.normal(size=(1, 1, 3))
        dilated = nn.conv1d(x, nn.Tensor(w), dilation=2, padding="valid").data
        # Insert an explicit zero between taps and convolve undilated.
        w_up = np.zeros((1, 1, 5))
        w_up[0, 0, ::2] = w[0, 0]
        np.testing.assert_allclose(
            dilated, nn.conv1d(x, nn.Tensor(w_up), padding="valid").data, atol=1e-12
        )

    def test_stride_subsamples(self):
        rng = np.random.default_rng(5)
        x = nn.Tensor(rng.normal(size=(1, 2, 10)))
        w = nn.Tensor(rng.normal(size=(3, 2, 3)))
        full = nn.conv1d(x, w, padding="valid").data
        strided = nn.conv1d(x, w, stride=2, padding="valid").data
        np.testing.assert_allclose(strided, full[:, :, ::2], atol=1e-12)

    @pytest.mark.parametrize("padding,stride,dilation", [
        ("valid", 1, 1), ("valid", 2, 1), ("valid", 1, 2),
        ("valid", 2, 3), ("same", 1, 1), ("same", 1, 2),
    ])
    def test_gradients(self, padding, stride, dilation):
        rng = np.random.default_rng(6)
        for _ in range(4):
            B = int(rng.integers(1, 3))
            Cin = int(rng.integers(1, 4))
            Cout = int(rng.integers(1, 4))
            K = int(rng.integers(1, 4))
            L = int(rng.integers(dilation * (K - 1) + 1, 14))
            x, w, b = T(rng, B, Cin, L), T(rng, Cout, Cin, K), T(rng, Cout)
            assert_grads_match(
                lambda x, w, b: nn.conv1d(
                    x, w, b, stride=stride, dilation=dilation, padding=padding
                ),
                [x, w, b],
            )

    def test_shape_errors(self):
        rng = np.random.default_rng(7)
        with pytest.raises(ShapeError):
            nn.conv1d(T(rng, 2, 8), T(rng, 1, 2, 3))
        with pytest.raises(ShapeError):
            nn.conv1d(T(rng, 1, 2, 8), T(rng, 1, 3, 3))
        with pytest.raises(ShapeError):
            nn.conv1d(T(rng, 1, 2, 2), T(rng, 1, 2, 5))
        with pytest.raises(ArgumentError):
            nn.conv1d(T(rng, 1, 2, 8), T(rng, 1, 2, 3), stride=2, padding="same")
        with pytest.raises(ArgumentError):
            nn.conv1d(T(rng, 1, 2, 8), T(rng, 1, 2, 3), padding="full")


class TestLinear:
    def test_hand_computed(self):
        x = nn.Tensor(np.array([[1.0, 2.0]]))
        w = nn.Tensor(np.array([[3.0, 4.0], [0.0, -1.0]]))
        b = nn.Tensor(np.array([1.0, 1.0]))
        np.testing.assert_allclose(nn.linear(x, w, b).data, [[12.0, -1.0]])

    def test_gradients(self):
        rng = np.random.default_rng(8)
        for _ in range(5):
            B, N, M = (int(rng.integers(1, 5)) for _ in range(3))
            assert_grads_match(nn.linear, [T(rng, B, N), T(rng, M, N), T(rng, M)])

    def test_shape_error(self):
        rng = np.random.default_rng(9)
        with pytest.raises(ShapeError):
            nn.linear(T(rng, 2, 3), T(rng, 4, 5))


class TestBatchNorm:
    def make(self, C):
        gamma = nn.Tensor(np.ones(C), requires_grad=True)
        beta = nn.Tensor(np.zeros(C), requires_grad=True)
        return gamma, beta, np.zeros(C), np.ones(C)

    def test_training_normalizes_batch(self):
        rng = np.random.default_rng(10)
        x = nn.Tensor(rng.normal(3.0, 2.0, size=(4, 2, 50)))
        gamma, beta, rm, rv = self.make(2)
        out = nn.batchnorm1d(x, gamma, beta, rm, rv, training=True)
        np.testing.assert_allclose(out.data.mean(axis=(0, 2)), 0.0, atol=1e-10)
        np.testing.assert_allclose(out.data.var(axis=(0, 2)), 1.0, atol=1e-4)

    def test_running_stats_updated(self):
        rng = np.random.default_rng(11)
        x = nn.Tensor(rng.normal(5.0, 1.0, size=(8, 3, 20)))
        gamma, beta, rm, rv = self.make(3)
        nn.batchnorm1d(x, gamma, beta, rm, rv, training=True, momentum=0.1)
        expect_mean = 0.1 * x.data.mean(axis=(0, 2))
        np.testing.assert_allclose(rm, expect_mean, atol=1e-12)

    def test_eval_uses_running_stats(self):
        x = nn.Tensor(np.full((1, 1, 4), 7.0))
        gamma = nn.Tensor(np.array([2.0]))
        beta = nn.Tensor(np.array([1.0]))
        rm, rv = np.array([5.0]), np.array([4.0])
        out = nn.batchnorm1d(x, gamma, beta, rm, rv, training=False)
        np.testing.assert_allclose(out.data, 2.0 * (7.0 - 5.0) / np.sqrt(4.0 + 1e-5) + 1.0)

    @pytest.mark.parametrize("training", [True, False])
    def test_gradients(self, training):
        rng = np.random.default_rng(12)
        for _ in range(4):
            B, C, L = int(rng.integers(2, 4)), int(rng.integers(1, 4)), int(rng.integers(3, 8))
            x = T(rng, B, C, L)
            gamma = nn.Tensor(rng.normal(1.0, 0.1, C), requires_grad=True)
            beta = nn.Tensor(rng.normal(0.0, 0.1, C), requires_grad=True)
            rm = rng.normal(size=C)
            rv = rng.uniform(0.5, 2.0, C)

            def build(x, gamma, beta):
                # Fresh running arrays per call: training mode mutates them.
                return nn.batchnorm1d(
                    x, gamma, beta, rm.copy(), rv.copy(), training=training
                )

            assert_grads_match(build, [x, gamma, beta], tol=1e-4)

    def test_training_needs_two_samples(self):
        gamma, beta, rm, rv = self.make(1)
        with pytest.raises(ArgumentError):
            nn.batchnorm1d(nn.Tensor(np.ones((1, 1, 1))), gamma, beta, rm, rv, True)


class TestPooling:
    def test_global_avg_pool_values(self):
        x = nn.Tensor(np.array([[[1.0, 3.0], [0.0, -2.0]]]))
        np.testing.assert_allclose(nn.global_avg_pool(x).data, [[2.0, -1.0]])

    def test_maxpool_values(self):
        x = nn.Tensor(np.array([[[1.0, 5.0, 2.0, 2.0, 9.0, 0.0]]]))
        np.testing.assert_allclose(nn.maxpool1d(x).data, [[[5.0, 2.0, 9.0]]])

    def test_maxpool_tie_routes_to_first(self):
        x = nn.Tensor(np.array([[[3.0, 3.0]]]), requires_grad=True)
        nn.maxpool1d(x).backward(np.array([[[1.0]]]))
        np.testing.assert_array_equal(x.grad, [[[1.0, 0.0]]])

    def test_maxpool_too_short(self):
        with pytest.raises(ShapeError):
            nn.maxpool1d(nn.Tensor(np.ones((1, 1, 1))), kernel=2)

    def test_gradients(self):
        rng = np.random.default_rng(13)
        for _ in range(5):
            B, C, L = int(rng.integers(1, 3)), int(rng.integers(1, 4)), int(rng.integers(2, 12))
            assert_grads_match(nn.maxpool1d, [T(rng, B, C, L)])
            assert_grads_match(nn.global_avg_pool, [T(rng, B, C, L)])


class TestCompositeOps:
    def test_concat_roundtrip(self):
        rng = np.random.default_rng(14)
        a, b = T(rng, 2, 3, 4), T(rng, 2, 2, 4)
        out = nn.concat([a, b], axis=1)
        assert out.data.shape == (2, 5, 4)
        assert_grads_match(lambda a, b: nn.concat([a, b], axis=1), [a, b])

    def test_l2_normalize_unit_norm(self):
        rng = np.random.default_rng(15)
        x = nn.Tensor(rng.normal(size=(5, 8)))
        out = nn.l2_normalize(x)
        np.testing.assert_allclose(np.linalg.norm(out.data, axis=1), 1.0, atol=1e-9)

    def test_l2_normalize_gradients(self):
        rng = np.random.default_rng(16)
        for _ in range(5):
            assert_grads_match(nn.l2_normalize, [T(rng, int(rng.integers(1, 4)), 6)])

    def test_se_block_gating_range(self):
        rng = np.random.default_rng(17)
        x = nn.Tensor(np.abs(rng.normal(size=(2, 4, 6))))
        w1, w2 = T(rng, 2, 4), T(rng, 4, 2)
        out = nn.se_block(x, w1, w2)
        ratio = out.data / x.data
        assert np.all(ratio > 0) and np.all(ratio < 1)  # sigmoid gate in (0,1)

    def test_se_block_gradients(self):
        rng = np.random.default_rng(18)
        for _ in range(4):
            x, w1, w2 = T(rng, 2, 4, 5), T(rng, 2, 4), T(rng, 4, 2)
            assert_grads_match(nn.se_block, [x, w1, w2])

    def test_bce_hand_computed(self):
        pred = nn.Tensor(np.array([0.9, 0.2]))
        target = np.array([1.0, 0.0])
        expected = -(np.log(0.9) + np.log(0.8)) / 2
        np.testing.assert_allclose(nn.bce_loss(pred, target).data.item(), expected)

    def test_bce_gradients(self):
        rng = np.random.default_rng(19)
        for _ in range(5):
            B = int(rng.integers(1, 5))
            x = T(rng, B, 3)
            target = (rng.uniform(size=(B, 3)) > 0.5).astype(float)
            assert_grads_match(lambda x: nn.bce_loss(nn.sigmoid(x), target), [x])

    def test_bce_clamps_extremes(self):
        loss = nn.bce_loss(nn.Tensor(np.array([0.0, 1.0])), np.array([1.0, 0.0]))
        assert np.isfinite(loss.data)

    def test_bce_shape_mismatch(self):
        with pytest.raises(ShapeError):
            nn.bce_loss(nn.Tensor(np.zeros(3)), np.zeros(4))


class TestAdam:
    def test_first_step_closed_form(self):
        # After one step, mhat = grad and vhat = grad^2, so the update is
        # -lr * g / (|g| + eps) regardless of the gradient's magnitude.
        param = np.array([1.0, -2.0, 0.5])
        grad = np.array([0.3, -10.0, 1e-3])
        nn.adam_step(param, grad, {}, lr=0.01)
        expected = np.array([1.0, -2.0, 0.5]) - 0.01 * grad / (np.abs(grad) + 1e-8)
        np.testing.assert_allclose(param, expected, atol=1e-12)

    def test_two_steps_match_reference(self):
        lr, b1, b2, eps = 1e-2, 0.9, 0.999, 1e-8
        p = np.array([0.0])
        state = {}
        grads = [np.array([1.0]), np.array([-0.5])]
        # Straight-line reference implementation.
        m = v = 0.0
        ref = 0.0
        for t, g in enumerate(grads, start=1):
            m = b1 * m + (1 - b1) * g[0]
            v = b2 * v + (1 - b2) * g[0] ** 2
            ref -= lr * (m / (1 - b1**t)) / (np.sqrt(v / (1 - b2**t)) + eps)
        for g in grads:
            nn.adam_step(p, g, state, lr=lr)
        np.testing.assert_allclose(p, [ref], atol=1e-15)

    def test_step_subset_leaves_others_untouched(self):
        pa = nn.Tensor(np.array([1.0]), requires_grad=True)
        pb = nn.Tensor(np.array([1.0]), requires_grad=True)
        opt = nn.Adam({"a": pa, "b": pb}, lr=0.1)
        pa.accumulate_grad(np.array([1.0]))
        pb.accumulate_grad(np.array([1.0]))
        opt.step(names=["a"])
        assert pa.data[0] != 1.0
        assert pb.data[0] == 1.0
        assert opt.state["b"] == {}

    def test_zero_grad(self):
        p = nn.Tensor(np.array([1.0]), requires_grad=True)
        opt = nn.Adam({"p": p})
        p.accumulate_grad(np.array([2.0]))
        opt.zero_grad()
        assert p.grad is None


class TestCheckpoint:
    def test_roundtrip_exact(self, tmp_path):
        rng = np.random.default_rng(20)
        arrays = {"w": rng.normal(size=(3, 4)), "b": rng.normal(size=5)}
        path = tmp_path / "ckpt.json"
        nn.save_checkpoint(path, arrays, meta={"note": 1})
        loaded, meta = nn.load_checkpoint(path)
        assert meta == {"note": 1}
        for name in arrays:
            np.testing.assert_array_equal(loaded[name], arrays[name])

    def test_version_check(self, tmp_path):
        path = tmp_path / "ckpt.json"
        path.write_text('{"format_version": 99, "meta": {}, "arrays": {}}')
        with pytest.raises(SchemaVersionError):
            nn.load_checkpoint(path)
