import math

import numpy as np
import pytest

from conet.tensor import (
    CompGraph,
    ConfigError,
    GraphError,
    ShapeError,
    glorot,
    grad_check,
    load_params,
    save_params,
    sgd_step,
)


def matmul_oracle(a, b):
    m, k = a.shape
    k2, n = b.shape
    out = np.zeros((m, n))
    for i in range(m):
        for j in range(n):
            for t in range(k):
                out[i, j] += a[i, t] * b[t, j]
    return out


def conv1d_oracle(seq, kernel):
    k, d, d_out = kernel.shape
    length = seq.shape[0]
    pad = (k - 1) // 2
    out = np.zeros((length, d_out))
    for i in range(length):
        for j in range(k):
            src = i + j - pad
            if 0 <= src < length:
                for c in range(d):
                    for o in range(d_out):
                        out[i, o] += seq[src, c] * kernel[j, c, o]
    return out


class TestMatmul:
    def test_identity(self):
        g = CompGraph()
        a = g.constant(np.eye(2))
        b = g.constant([[1.0, 2.0], [3.0, 4.0]])
        assert np.array_equal(g.matmul(a, b).data, [[1, 2], [3, 4]])

    def test_unit_vector_selection(self):
        g = CompGraph()
        out = g.matmul(g.constant([[1.0, 0.0]]), g.constant([[2.0], [3.0]]))
        assert np.array_equal(out.data, [[2.0]])

    def test_random_vs_triple_loop(self):
        rng = np.random.default_rng(0)
        a, b = rng.normal(size=(3, 4)), rng.normal(size=(4, 2))
        g = CompGraph()
        out = g.matmul(g.constant(a), g.constant(b))
        assert np.max(np.abs(out.data - matmul_oracle(a, b))) <= 1e-12

    def test_shape_mismatch_names_both_shapes(self):
        g = CompGraph()
        with pytest.raises(ShapeError, match=r"\(2, 3\).*\(2, 2\)"):
            g.matmul(g.constant(np.ones((2, 3))), g.constant(np.ones((2, 2))))


class TestConv1d:
    def test_window1_identity_kernel(self):
        x = np.random.default_rng(1).normal(size=(4, 3))
        g = CompGraph()
        out = g.conv1d(g.constant(x), g.constant(np.eye(3)[None, :, :]), window=1)
        assert np.allclose(out.data, x)

    def test_hand_sum_with_zero_padding(self):
        g = CompGraph()
        seq = g.constant([[1.0], [2.0], [3.0]])
        kernel = g.constant(np.ones((3, 1, 1)))
        out = g.conv1d(seq, kernel, window=3)
        assert np.allclose(out.data[:, 0], [3.0, 6.0, 5.0])

    def test_random_vs_nested_loop(self):
        rng = np.random.default_rng(2)
        seq = rng.normal(size=(5, 3))
        kernel = rng.normal(size=(3, 3, 2))
        g = CompGraph()
        out = g.conv1d(g.constant(seq), g.constant(kernel), window=3)
        assert np.max(np.abs(out.data - conv1d_oracle(seq, kernel))) <= 1e-12

    def test_even_window_rejected(self):
        g = CompGraph()
        with pytest.raises(ConfigError):
            g.conv1d(g.constant(np.ones((3, 1))), g.constant(np.ones((2, 1, 1))), window=2)


class TestElementwise:
    def test_sigmoid_zero(self):
        g = CompGraph()
        assert g.sigmoid(g.constant([[0.0]])).item() == 0.5

    def test_max_pool_over_time(self):
        g = CompGraph()
        out = g.max_pool_over_time(g.constant([[1.0, 5.0], [3.0, 2.0]]))
        assert np.array_equal(out.data, [3.0, 5.0])

    def test_softmax_symmetry(self):
        g = CompGraph()
        out = g.softmax(g.constant([[2.0, 2.0, 2.0]]))
        assert np.allclose(out.data, 1.0 / 3.0)

    def test_logsumexp_shift_invariance(self):
        rng = np.random.default_rng(3)
        x = rng.normal(size=7)
        g = CompGraph()
        a = g.logsumexp(g.constant(x)).item()
        b = g.logsumexp(g.constant(x + 123.0)).item()
        assert abs(b - (a + 123.0)) <= 1e-10

    def test_logsumexp_overflow_safe(self):
        g = CompGraph()
        out = g.logsumexp(g.constant([1000.0, 1000.0])).item()
        assert abs(out - (1000.0 + math.log(2.0))) <= 1e-9

    def test_dispatcher_matches_methods(self):
        g = CompGraph()
        x = g.constant([[0.3, -0.4]])
        assert np.array_equal(g.elementwise("tanh", x).data, np.tanh(x.data))
        with pytest.raises(ConfigError):
            g.elementwise("division", x)

    def test_add_shape_mismatch(self):
        g = CompGraph()
        with pytest.raises(ShapeError):
            g.add(g.constant(np.ones((2, 1))), g.constant(np.ones((1, 2))))

    def test_nan_rejected_at_leaf(self):
        g = CompGraph()
        with pytest.raises(ValueError):
            g.constant([float("nan")])


class TestBackward:
    def test_leaf_loss_grad_one(self):
        g = CompGraph()
        x = g.leaf([2.0], name="x", trainable=True)
        assert np.array_equal(g.backward(x)["x"], [1.0])

    def test_sigmoid_slope_quarter(self):
        g = CompGraph()
        w = g.leaf([[0.0]], name="w", trainable=True)
        x = g.constant([[1.0]])
        loss = g.sigmoid(g.matmul(w, x))
        assert abs(g.backward(loss)["w"][0, 0] - 0.25) <= 1e-12

    def test_non_scalar_loss_rejected(self):
        g = CompGraph()
        x = g.leaf([1.0, 2.0], name="x", trainable=True)
        with pytest.raises(GraphError):
            g.backward(x)

    def test_untouched_parameter_gets_zero_grad(self):
        g = CompGraph()
        x = g.leaf([1.5], name="x", trainable=True)
        g.leaf([[3.0]], name="unused", trainable=True)
        grads = g.backward(x)
        assert np.array_equal(grads["unused"], [[0.0]])


def _random_graph_loss(g, leaves):
    """A composite loss touching every supported op kind."""
    w1, w2, kern, k2d, v, wp, wq = (leaves[k] for k in
                                    ("w1", "w2", "kern", "k2d", "v", "wp", "wq"))
    x = g.constant(np.linspace(-1.0, 1.0, 12).reshape(4, 3))
    h = g.tanh(g.matmul(x, w1))                      # [4,4]
    c = g.conv1d(h, kern, window=3)                  # [4,4]
    r = g.relu(g.add(c, g.mul(h, h)))
    a = g.softmax(g.matmul(r, w2), axis=1)           # [4,4]
    pooled_max = g.max_pool_over_time(a)             # [4]
    pooled_mean = g.mean_pool_over_time(r)
    img = g.reshape(g.concat([a, r], axis=1), (4, 4, 2))
    conv_img = g.conv2d(img, k2d)                    # [4,4,2]
    grid = g.max_pool_grid(conv_img, 2, 2)           # [2,2,2]
    pair = g.pairwise_tanh_scores(g.matmul(r, wp), g.matmul(a, wq), v)  # [4,4]
    bits = g.concat([
        g.reshape(pooled_max, (4, 1)),
        g.reshape(pooled_mean, (4, 1)),
        g.reshape(grid, (8, 1)),
        g.reshape(g.sigmoid(pair), (16, 1)),
        g.reshape(g.transpose(c), (16, 1)),
    ], axis=0)
    return g.logsumexp(bits)


class TestGradCheck:
    def test_random_graphs_match_central_differences(self):
        for seed in range(5):
            rng = np.random.default_rng(seed)
            params = {
                "w1": glorot(rng, (3, 4)),
                "w2": glorot(rng, (4, 4)),
                "kern": glorot(rng, (3, 4, 4), fan_in=12, fan_out=4),
                "k2d": glorot(rng, (3, 3, 2, 2), fan_in=18, fan_out=2),
                "v": glorot(rng, (2, 1)),
                "wp": glorot(rng, (4, 2)),
                "wq": glorot(rng, (4, 2)),
            }
            assert grad_check(_random_graph_loss, params, eps=1e-4) <= 1e-3

    def test_constant_loss_zero_error(self):
        def build(g, leaves):
            return g.constant([1.0])

        assert grad_check(build, {"w": np.array([0.7])}) == 0.0

    def test_linear_loss_nearly_exact(self):
        def build(g, leaves):
            return g.matmul(leaves["w"], g.constant([[2.0], [3.0]]))

        assert grad_check(build, {"w": np.array([[0.5, -0.25]])}) <= 1e-9

    def test_purity(self):
        params = {"w": np.array([[0.5, -0.25]])}

        def build(g, leaves):
            return g.logsumexp(leaves["w"])

        before = params["w"].copy()
        grad_check(build, params)
        assert np.array_equal(params["w"], before)


class TestSgdStep:
    def test_basic(self):
        out = sgd_step({"p": np.array([1.0])}, {"p": np.array([1.0])}, lr=0.1)
        assert np.allclose(out["p"], [0.9])

    def test_zero_grad_unchanged(self):
        out = sgd_step({"p": np.array([1.0])}, {"p": np.array([0.0])}, lr=0.1)
        assert np.array_equal(out["p"], [1.0])

    def test_two_steps_equal_double_lr(self):
        p = {"p": np.array([1.0])}
        grad = {"p": np.array([0.4])}
        twice = sgd_step(sgd_step(p, grad, 0.1), grad, 0.1)
        once = sgd_step(p, grad, 0.2)
        assert np.allclose(twice["p"], once["p"])


class TestCheckpoint:
    def test_round_trip_and_byte_stability(self, tmp_path):
        rng = np.random.default_rng(9)
        params = {"a": rng.normal(size=(2, 3)), "b": rng.normal(size=4)}
        p1, p2 = tmp_path / "one.json", tmp_path / "two.json"
        save_params(p1, params, header={"kind": "test"})
        loaded, header = load_params(p1)
        assert header == {"kind": "test"}
        for k in params:
            assert np.array_equal(loaded[k], params[k])
        save_params(p2, loaded, header=header)
        assert p1.read_bytes() == p2.read_bytes()


class TestImmutability:
    def test_tensor_data_not_writeable(self):
        g = CompGraph()
        t = g.constant([1.0, 2.0])
        with pytest.raises(ValueError):
            t.data[0] = 5.0
