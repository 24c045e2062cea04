"""Tests for the layers module."""

from __future__ import annotations

import math
from typing import Callable

import numpy as np
import pytest

from pcl.errors import ConfigError, ProtocolError
from pcl.layers import (
    ClassMask,
    KwtaSpec,
    NumericalError,
    PairwiseConnections,
    ParamTensor,
    build_pairwise_connections,
    check_finite,
    conv2d_backward,
    conv2d_forward,
    decode_triples,
    dense_backward,
    dense_forward,
    gelu,
    gelu_backward,
    kwta_backward,
    kwta_forward,
    masked_argmax,
    masked_softmax_xent,
    max_connections,
    pairwise_backward,
    pairwise_forward,
    resolve_k,
)


def rel_error(analytic: np.ndarray, numeric: np.ndarray) -> float:
    """Norm-wise relative error between two gradients."""
    denom = np.linalg.norm(analytic) + np.linalg.norm(numeric)
    if denom == 0:
        return 0.0
    return float(np.linalg.norm(analytic - numeric) / denom)


def numeric_grad(f: Callable[[], float], arr: np.ndarray, eps: float = 1e-6) -> np.ndarray:
    """Central finite differences of scalar ``f`` with respect to ``arr`` (modified in place)."""
    grad = np.zeros_like(arr)
    it = np.nditer(arr, flags=["multi_index"])
    for _ in it:
        idx = it.multi_index
        saved = arr[idx]
        arr[idx] = saved + eps
        plus = f()
        arr[idx] = saved - eps
        minus = f()
        arr[idx] = saved
        grad[idx] = (plus - minus) / (2 * eps)
    return grad


def param(name: str, values) -> ParamTensor:
    return ParamTensor(name, np.asarray(values, dtype=np.float64))


class TestParamTensor:
    """Tests for ParamTensor buffers."""

    def test_buffers_match_theta(self) -> None:
        """grad and omega start as zeros of theta's shape."""
        p = ParamTensor("w", np.ones((3, 2), dtype=np.float32))
        assert p.grad.shape == p.omega.shape == (3, 2)
        assert not p.grad.any() and not p.omega.any()
        assert p.size == 6

    def test_astype(self) -> None:
        """astype converts all three buffers."""
        p = ParamTensor("w", np.ones(4, dtype=np.float32))
        p.astype(np.float64)
        assert p.theta.dtype == p.grad.dtype == p.omega.dtype == np.float64


class TestResolveK:
    """Tests for k-WTA density resolution."""

    def test_ten_percent_of_3000(self) -> None:
        """10% of 3000 units gives k=300."""
        assert resolve_k(10, 3000) == 300
        assert KwtaSpec(10).resolve(3000) == 300

    def test_full_density(self) -> None:
        """100% density gives k=d."""
        assert resolve_k(100, 700) == 700

    def test_clamped_to_one(self) -> None:
        """Tiny densities still keep one winner."""
        assert resolve_k(0.01, 10) == 1

    def test_rounds_half_up(self) -> None:
        """2.5 rounds to 3."""
        assert resolve_k(25, 10) == 3

    @pytest.mark.parametrize("density", [0, -5, 100.5])
    def test_out_of_range(self, density: float) -> None:
        """Densities outside (0, 100] are rejected."""
        with pytest.raises(ConfigError):
            resolve_k(density, 100)


class TestDense:
    """Tests for the dense layer."""

    def test_identity_weights(self) -> None:
        """Test that identity weights and zero bias pass the input through."""
        y, _ = dense_forward(np.array([[1.0, 2.0]]), param("W", np.eye(2)), param("b", [0, 0]))
        np.testing.assert_allclose(y, [[1, 2]])

    def test_zero_input_passes_bias(self) -> None:
        """Test that a zero input yields the bias."""
        y, _ = dense_forward(np.zeros((1, 2)), param("W", [[5, 6], [7, 8]]), param("b", [3, -1]))
        np.testing.assert_allclose(y, [[3, -1]])

    def test_hand_matmul(self) -> None:
        """Test a forward pass worked out by hand."""
        y, _ = dense_forward(np.array([[1.0, 1.0]]), param("W", [[2, 0], [0, 3]]), param("b", [1, 1]))
        np.testing.assert_allclose(y, [[3, 4]])

    def test_backward_analytic(self) -> None:
        """W=[[1],[1]] and upstream 1 give grad_in [[1, 1]]."""
        W, b = param("W", [[1], [1]]), param("b", [0])
        _, cache = dense_forward(np.array([[0.5, -2.0]]), W, b)
        grad_in = dense_backward(cache, np.array([[1.0]]))
        np.testing.assert_allclose(grad_in, [[1, 1]])
        np.testing.assert_allclose(W.grad, [[0.5], [-2.0]])
        np.testing.assert_allclose(b.grad, [1])

    def test_zero_upstream_gives_zero_grads(self) -> None:
        """Test that a zero upstream gradient leaves every gradient at zero."""
        W, b = param("W", np.ones((3, 2))), param("b", np.ones(2))
        _, cache = dense_forward(np.ones((4, 3)), W, b)
        grad_in = dense_backward(cache, np.zeros((4, 2)))
        assert not grad_in.any() and not W.grad.any() and not b.grad.any()

    def test_shape_mismatch(self) -> None:
        """Test that an input of the wrong width is rejected."""
        with pytest.raises(ConfigError):
            dense_forward(np.ones((1, 3)), param("W", np.ones((2, 2))), param("b", np.zeros(2)))

    def test_finite_differences(self) -> None:
        """Input and parameter gradients match central differences."""
        rng = np.random.default_rng(0)
        x = rng.standard_normal((4, 5))
        W, b = param("W", rng.standard_normal((5, 3))), param("b", rng.standard_normal(3))
        R = rng.standard_normal((4, 3))

        def loss() -> float:
            return float(np.sum(dense_forward(x, W, b)[0] * R))

        _, cache = dense_forward(x, W, b)
        grad_in = dense_backward(cache, R)
        assert rel_error(grad_in, numeric_grad(loss, x)) < 1e-4
        assert rel_error(W.grad, numeric_grad(loss, W.theta)) < 1e-4
        assert rel_error(b.grad, numeric_grad(loss, b.theta)) < 1e-4


class TestConv2d:
    """Tests for the convolution layer."""

    def test_output_size_of_7x7_stride_4(self) -> None:
        """28x28 input with K=7, stride 4 gives a 6x6 map."""
        K, b = param("K", np.zeros((8, 1, 7, 7))), param("b", np.zeros(8))
        y, _ = conv2d_forward(np.zeros((2, 1, 28, 28)), K, b, stride=4, padding=0)
        assert y.shape == (2, 8, 6, 6)

    def test_identity_kernel(self) -> None:
        """Test that a 1x1 unit kernel is the identity both ways."""
        x = np.random.default_rng(1).standard_normal((2, 1, 5, 5))
        K, b = param("K", np.ones((1, 1, 1, 1))), param("b", [0])
        y, cache = conv2d_forward(x, K, b, stride=1, padding=0)
        np.testing.assert_allclose(y, x)
        g = np.random.default_rng(2).standard_normal(y.shape)
        np.testing.assert_allclose(conv2d_backward(cache, g), g)

    def test_zero_kernels_give_bias(self) -> None:
        """Test that zero kernels output each channel's bias."""
        K, b = param("K", np.zeros((2, 1, 3, 3))), param("b", [1.5, -2.0])
        y, _ = conv2d_forward(np.ones((1, 1, 5, 5)), K, b, stride=1, padding=1)
        np.testing.assert_allclose(y[0, 0], 1.5)
        np.testing.assert_allclose(y[0, 1], -2.0)

    def test_zero_upstream_gives_zero_grads(self) -> None:
        """Test that a zero upstream gradient leaves every gradient at zero."""
        K, b = param("K", np.ones((2, 1, 3, 3))), param("b", np.ones(2))
        y, cache = conv2d_forward(np.ones((1, 1, 5, 5)), K, b, stride=1, padding=0)
        grad_in = conv2d_backward(cache, np.zeros_like(y))
        assert not grad_in.any() and not K.grad.any() and not b.grad.any()

    def test_empty_output_rejected(self) -> None:
        """Test that a kernel larger than the padded input is rejected."""
        K, b = param("K", np.zeros((1, 1, 7, 7))), param("b", [0])
        with pytest.raises(ConfigError):
            conv2d_forward(np.zeros((1, 1, 5, 5)), K, b, stride=1, padding=0)

    @pytest.mark.parametrize("stride,padding", [(1, 0), (2, 1), (2, 2)])
    def test_finite_differences(self, stride: int, padding: int) -> None:
        """Random 5x5 input with K=3 matches central differences."""
        rng = np.random.default_rng(stride * 10 + padding)
        x = rng.standard_normal((2, 2, 5, 5))
        K, b = param("K", rng.standard_normal((3, 2, 3, 3))), param("b", rng.standard_normal(3))
        y, cache = conv2d_forward(x, K, b, stride, padding)
        R = rng.standard_normal(y.shape)

        def loss() -> float:
            return float(np.sum(conv2d_forward(x, K, b, stride, padding)[0] * R))

        grad_in = conv2d_backward(cache, R)
        assert rel_error(grad_in, numeric_grad(loss, x)) < 1e-4
        assert rel_error(K.grad, numeric_grad(loss, K.theta)) < 1e-4
        assert rel_error(b.grad, numeric_grad(loss, b.theta)) < 1e-4


class TestGelu:
    """Tests for the exact GELU."""

    def test_known_values(self) -> None:
        """Test GELU at zero, one and a large input."""
        y, _ = gelu(np.array([0.0, 1.0, 10.0]))
        assert y[0] == 0.0
        assert y[1] == pytest.approx(0.8413, abs=1e-4)
        assert y[2] == pytest.approx(10.0, abs=1e-6)

    def test_keeps_float32(self) -> None:
        """Test that float32 inputs stay float32."""
        y, _ = gelu(np.ones(3, dtype=np.float32))
        assert y.dtype == np.float32

    def test_finite_differences(self) -> None:
        """Test the GELU gradient against central differences."""
        x = np.random.default_rng(3).standard_normal((3, 7)) * 2
        R = np.random.default_rng(4).standard_normal((3, 7))
        _, cache = gelu(x)
        grad_in = gelu_backward(cache, R)
        numeric = numeric_grad(lambda: float(np.sum(gelu(x)[0] * R)), x)
        assert rel_error(grad_in, numeric) < 1e-4


def sort_reference_kwta(x: np.ndarray, k: int) -> np.ndarray:
    out = np.zeros_like(x)
    for i, row in enumerate(x):
        t = np.sort(row)[::-1][k] if k < row.size else 0.0
        out[i] = np.maximum(row - t, 0)
    return out


class TestKwta:
    """Tests for k-WTA with subtraction."""

    def test_example(self) -> None:
        """[3,1,2,5] with k=2 subtracts the third largest value."""
        y, _ = kwta_forward(np.array([[3.0, 1.0, 2.0, 5.0]]), 2)
        np.testing.assert_array_equal(y, [[1, 0, 0, 3]])

    def test_full_tie_zeroes_everything(self) -> None:
        """Test that k-WTA outputs zero when the whole row ties."""
        y, _ = kwta_forward(np.full((1, 4), 0.7), 2)
        assert not y.any()

    def test_negative_inputs(self) -> None:
        """Test that the winner of an all-negative row keeps a positive margin."""
        y, _ = kwta_forward(np.array([[-1.0, -2.0, -3.0]]), 1)
        np.testing.assert_array_equal(y, [[1, 0, 0]])

    def test_k_equal_width_is_relu(self) -> None:
        """Test that keeping every unit reduces to ReLU."""
        x = np.array([[-1.0, 0.5, 2.0]])
        y, _ = kwta_forward(x, 3)
        np.testing.assert_array_equal(y, np.maximum(x, 0))

    def test_k_out_of_range(self) -> None:
        """Test that k must lie in [1, width]."""
        with pytest.raises(ConfigError):
            kwta_forward(np.ones((1, 3)), 0)
        with pytest.raises(ConfigError):
            kwta_forward(np.ones((1, 3)), 4)

    def test_backward_winner_mask(self) -> None:
        """Test that only winners pass gradient."""
        _, cache = kwta_forward(np.array([[3.0, 1.0, 2.0, 5.0]]), 2)
        np.testing.assert_array_equal(kwta_backward(cache, np.ones((1, 4))), [[1, 0, 0, 1]])
        assert not kwta_backward(cache, np.zeros((1, 4))).any()

    def test_matches_sort_reference(self) -> None:
        """Test partition-based selection against a full sort."""
        rng = np.random.default_rng(5)
        for k in (1, 3, 10, 19, 20):
            x = rng.standard_normal((6, 20))
            y, _ = kwta_forward(x, k)
            np.testing.assert_array_equal(y, sort_reference_kwta(x, k))
            assert np.all(y >= 0)
            assert np.all(np.count_nonzero(y, axis=1) <= k)

    def test_support_is_stable(self) -> None:
        """Applying k-WTA twice keeps the same winners."""
        x = np.random.default_rng(6).standard_normal((4, 30))
        once, _ = kwta_forward(x, 5)
        twice, _ = kwta_forward(once, 5)
        np.testing.assert_array_equal(once > 0, twice > 0)

    def test_finite_differences_off_tie(self) -> None:
        """Well-separated order statistics make the map locally affine."""
        rng = np.random.default_rng(7)
        x = np.stack([rng.permutation(12) * 0.1 for _ in range(3)]) + rng.uniform(0, 0.01, (3, 12))
        R = rng.standard_normal((3, 12))
        _, cache = kwta_forward(x, 4)
        numeric = numeric_grad(lambda: float(np.sum(kwta_forward(x, 4)[0] * R)), x)
        # the threshold is treated as a constant, so compare only off the threshold position
        threshold_pos = np.argsort(-x, axis=1)[:, 4]
        analytic = kwta_backward(cache, R)
        for row, col in enumerate(threshold_pos):
            numeric[row, col] = analytic[row, col] = 0.0
        assert rel_error(analytic, numeric) < 1e-4


def hand_wired_connections() -> PairwiseConnections:
    # x1*x2 -> y1, x3*x4 -> y2, x1*x4 -> y3
    return PairwiseConnections(
        a=[0, 2, 0], b=[1, 3, 3], o=[0, 1, 2],
        weights=ParamTensor("w", np.ones(3)), input_width=4, n_outputs=3,
    )


def dense_expansion_oracle(x: np.ndarray, conn: PairwiseConnections) -> np.ndarray:
    d, n = conn.input_width, conn.n_outputs
    rows, cols = np.triu_indices(d, k=1)
    crosses = x[:, rows] * x[:, cols]
    masked = np.zeros((rows.size, n))
    pair_index = {(int(a), int(b)): i for i, (a, b) in enumerate(zip(rows, cols))}
    for a, b, o, w in zip(conn.a, conn.b, conn.o, conn.weights.theta):
        masked[pair_index[(int(a), int(b))], o] = w
    return crosses @ masked


class TestPairwiseConnections:
    """Tests for pairwise wiring."""

    def test_triple_space(self) -> None:
        """Test the size of the connection space."""
        assert max_connections(4, 1) == 6
        assert max_connections(3000, 100) == 449_850_000

    def test_exhausts_small_space(self) -> None:
        """Test that a budget equal to the space uses every pair."""
        conn = build_pairwise_connections(3, 1, 3, seed=0)
        pairs = sorted(zip(conn.a.tolist(), conn.b.tolist()))
        assert pairs == [(0, 1), (0, 2), (1, 2)]

    def test_same_seed_is_identical(self) -> None:
        """Test that wiring and initial weights are seeded."""
        c1 = build_pairwise_connections(40, 10, 500, seed=42)
        c2 = build_pairwise_connections(40, 10, 500, seed=42)
        np.testing.assert_array_equal(c1.a, c2.a)
        np.testing.assert_array_equal(c1.o, c2.o)
        np.testing.assert_array_equal(c1.weights.theta, c2.weights.theta)

    def test_triples_valid_and_distinct(self) -> None:
        """Test that every connection has a < b and no triple repeats."""
        conn = build_pairwise_connections(30, 10, 2000, seed=1)
        assert np.all(conn.a < conn.b)
        triples = set(zip(conn.a.tolist(), conn.b.tolist(), conn.o.tolist()))
        assert len(triples) == conn.n_connections == 2000

    def test_init_std(self) -> None:
        """Test the float32 weight initialisation scale."""
        conn = build_pairwise_connections(100, 10, 20000, seed=2)
        assert conn.weights.theta.dtype == np.float32
        assert np.std(conn.weights.theta) == pytest.approx(0.001, rel=0.05)

    def test_budget_over_space_states_maximum(self) -> None:
        """Test that an oversized budget reports the largest allowed value."""
        with pytest.raises(ConfigError, match="at most 60"):
            build_pairwise_connections(4, 10, 61, seed=0)

    def test_decode_round_trip_order(self) -> None:
        """Flat indices decode to (a, b, o) in sorted order."""
        a, b, o = decode_triples(np.arange(max_connections(5, 2)), 5, 2)
        expected = [(i, j, k) for i in range(5) for j in range(i + 1, 5) for k in range(2)]
        assert list(zip(a.tolist(), b.tolist(), o.tolist())) == expected

    def test_duplicates_rejected(self) -> None:
        """Test that a repeated triple is rejected."""
        with pytest.raises(ConfigError):
            PairwiseConnections(
                a=[0, 0], b=[1, 1], o=[0, 0], weights=ParamTensor("w", np.ones(2)),
                input_width=2, n_outputs=1,
            )

    def test_self_cross_rejected(self) -> None:
        """Test that a unit crossed with itself is rejected."""
        with pytest.raises(ConfigError):
            PairwiseConnections(
                a=[1], b=[1], o=[0], weights=ParamTensor("w", np.ones(1)), input_width=2, n_outputs=1,
            )


class TestPairwiseForward:
    """Tests for the pairwise interaction layer."""

    def test_hand_wired_values(self) -> None:
        """Test three hand-wired connections on a four-unit input."""
        y, _ = pairwise_forward(np.array([[1.0, 2.0, 3.0, 4.0]]), hand_wired_connections())
        np.testing.assert_allclose(y, [[2, 12, 4]])

    def test_zero_input(self) -> None:
        """Test that a zero input gives zero logits."""
        y, _ = pairwise_forward(np.zeros((3, 4)), hand_wired_connections())
        assert not y.any()

    def test_width_mismatch(self) -> None:
        """Test an input whose width differs from the wiring."""
        with pytest.raises(ConfigError):
            pairwise_forward(np.ones((1, 5)), hand_wired_connections())

    def test_matches_dense_expansion_oracle(self) -> None:
        """100 random configurations with d <= 50 agree with the dense oracle."""
        rng = np.random.default_rng(8)
        for trial in range(100):
            d = int(rng.integers(2, 51))
            n = int(rng.integers(1, 11))
            budget = int(rng.integers(1, max_connections(d, n) + 1))
            conn = build_pairwise_connections(d, n, budget, seed=trial)
            conn.weights.theta = rng.standard_normal(budget).astype(np.float32)
            x = rng.standard_normal((3, d)).astype(np.float32)
            y, _ = pairwise_forward(x, conn)
            oracle = dense_expansion_oracle(x.astype(np.float64), conn)
            assert rel_error(y.astype(np.float64), oracle) < 1e-5


class TestPairwiseBackward:
    """Tests for pairwise gradients."""

    def test_single_connection(self) -> None:
        """Test the gradients of a single connection by hand."""
        conn = PairwiseConnections(
            a=[0], b=[1], o=[0], weights=ParamTensor("w", np.ones(1)), input_width=2, n_outputs=1,
        )
        _, cache = pairwise_forward(np.array([[2.0, 3.0]]), conn)
        grad_in = pairwise_backward(cache, np.array([[1.0]]))
        np.testing.assert_allclose(conn.weights.grad, [6])
        np.testing.assert_allclose(grad_in, [[3, 2]])

    def test_zero_upstream(self) -> None:
        """Test that a zero upstream gradient leaves every gradient at zero."""
        conn = hand_wired_connections()
        _, cache = pairwise_forward(np.ones((2, 4)), conn)
        assert not pairwise_backward(cache, np.zeros((2, 3))).any()
        assert not conn.weights.grad.any()

    @pytest.mark.parametrize("with_bias", [False, True])
    def test_finite_differences(self, with_bias: bool) -> None:
        """Test weight, bias and input gradients against central differences."""
        rng = np.random.default_rng(9)
        conn = build_pairwise_connections(9, 4, 70, seed=3, with_bias=with_bias, dtype=np.float64)
        conn.weights.theta[:] = rng.standard_normal(70)
        x = rng.standard_normal((5, 9))
        R = rng.standard_normal((5, 4))

        def loss() -> float:
            return float(np.sum(pairwise_forward(x, conn)[0] * R))

        _, cache = pairwise_forward(x, conn)
        grad_in = pairwise_backward(cache, R)
        assert rel_error(grad_in, numeric_grad(loss, x)) < 1e-4
        assert rel_error(conn.weights.grad, numeric_grad(loss, conn.weights.theta)) < 1e-4
        if with_bias:
            assert rel_error(conn.bias.grad, numeric_grad(loss, conn.bias.theta)) < 1e-4


class TestMaskedSoftmaxXent:
    """Tests for masked softmax cross-entropy."""

    def test_uniform_logits_full_mask(self) -> None:
        """Test that uniform logits cost log(10)."""
        loss, _ = masked_softmax_xent(np.zeros((2, 10)), np.array([0, 9]), ClassMask.full(10))
        assert loss == pytest.approx(math.log(10))

    def test_two_class_mask(self) -> None:
        """Test that a two-class mask confines loss and gradient to those classes."""
        mask = ClassMask.of([3, 7], 10)
        loss, grad = masked_softmax_xent(np.zeros((1, 10)), np.array([3]), mask)
        assert loss == pytest.approx(math.log(2))
        assert not np.delete(grad, [3, 7], axis=1).any()
        np.testing.assert_allclose(grad[0, [3, 7]], [-0.5, 0.5])

    def test_label_outside_mask(self) -> None:
        """Test that a label outside the mask is a protocol error."""
        with pytest.raises(ProtocolError):
            masked_softmax_xent(np.zeros((1, 10)), np.array([5]), ClassMask.of([0, 1], 10))

    def test_full_mask_matches_plain_softmax(self) -> None:
        """Test the full mask against a plain softmax written out directly."""
        rng = np.random.default_rng(10)
        logits = rng.standard_normal((4, 10))
        labels = rng.integers(0, 10, 4)
        loss, grad = masked_softmax_xent(logits, labels, ClassMask.full(10))
        probs = np.exp(logits) / np.exp(logits).sum(axis=1, keepdims=True)
        assert loss == pytest.approx(-np.mean(np.log(probs[np.arange(4), labels])))
        onehot = np.eye(10)[labels]
        np.testing.assert_allclose(grad, (probs - onehot) / 4)

    def test_grad_rows_sum_to_zero_and_shift_invariance(self) -> None:
        """Test that gradient rows sum to zero and a constant shift leaves the loss alone."""
        rng = np.random.default_rng(11)
        logits = rng.standard_normal((3, 10))
        mask = ClassMask.of([1, 4, 6], 10)
        labels = np.array([1, 4, 6])
        loss, grad = masked_softmax_xent(logits, labels, mask)
        np.testing.assert_allclose(grad.sum(axis=1), 0, atol=1e-12)
        shifted_loss, _ = masked_softmax_xent(logits + 7.5, labels, mask)
        assert shifted_loss == pytest.approx(loss)

    def test_large_logits_are_stable(self) -> None:
        """Test that a large logit gap stays finite."""
        loss, grad = masked_softmax_xent(np.array([[1000.0, 0.0]]), np.array([0]), ClassMask.full(2))
        assert loss == pytest.approx(0.0, abs=1e-12)
        assert np.all(np.isfinite(grad))

    def test_finite_differences(self) -> None:
        """Test the loss gradient against central differences."""
        rng = np.random.default_rng(12)
        logits = rng.standard_normal((4, 10))
        labels = np.array([2, 3, 2, 3])
        mask = ClassMask.of([2, 3, 8], 10)
        _, grad = masked_softmax_xent(logits, labels, mask)
        numeric = numeric_grad(lambda: masked_softmax_xent(logits, labels, mask)[0], logits)
        assert rel_error(grad, numeric) < 1e-4


class TestHelpers:
    """Tests for argmax and finiteness helpers."""

    def test_masked_argmax(self) -> None:
        """Test argmax with and without a class mask."""
        logits = np.array([[0.1, 0.9, 0.5, 0.0]])
        assert masked_argmax(logits)[0] == 1
        assert masked_argmax(logits, ClassMask.of([2, 3], 4))[0] == 2

    def test_empty_mask_rejected(self) -> None:
        """Test that a mask allowing no class is rejected."""
        with pytest.raises(ConfigError):
            ClassMask(np.zeros(10, dtype=bool))

    def test_check_finite(self) -> None:
        """Test that non-finite values are counted in the error."""
        check_finite("ok", np.ones(3))
        with pytest.raises(NumericalError, match="2 non-finite"):
            check_finite("bad", np.array([1.0, np.nan, np.inf]))
