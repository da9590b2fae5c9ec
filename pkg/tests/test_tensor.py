from __future__ import annotations

import math
import threading

import numpy as np
import pytest

from cpt.exceptions import IndexLookupError, NumericError, ShapeError
from cpt.tensor import (
    Tensor,
    backward,
    concat,
    cross_entropy,
    dropout,
    gelu,
    gradcheck,
    layer_norm,
    log_softmax,
    no_grad,
    softmax,
)


class TestSoftmax:
    def test_known_values(self):
        np.testing.assert_allclose(softmax(Tensor([1.0, 2.0, 3.0])).values, [0.09003057, 0.24472847, 0.66524096], atol=1e-8)

    def test_rows_sum_to_one(self, rng):
        x = Tensor(rng.normal(size=(3, 5)))
        np.testing.assert_allclose(softmax(x).values.sum(axis=-1), np.ones(3), atol=1e-12)

    def test_shift_invariant(self, rng):
        values = rng.normal(size=(2, 4))
        np.testing.assert_allclose(softmax(Tensor(values)).values, softmax(Tensor(values + 100.0)).values, atol=1e-12)

    def test_large_negative_bias_gives_exact_zero(self):
        probs = softmax(Tensor([[0.0, -1e9, 1.0]])).values
        assert probs[0, 1] == 0.0

    def test_nan_rejected(self):
        with pytest.raises(NumericError):
            softmax(Tensor([[0.0, np.nan]]))

    def test_log_softmax_matches_log_of_softmax(self, rng):
        x = Tensor(rng.normal(size=(2, 6)))
        np.testing.assert_allclose(log_softmax(x).values, np.log(softmax(x).values), atol=1e-12)


class TestCrossEntropy:
    def test_known_value(self):
        loss = cross_entropy(Tensor([[1.0, 2.0, 3.0]]), np.array([2]))
        assert loss.item() == pytest.approx(0.40761, abs=1e-4)

    def test_confident_logit_gives_zero(self):
        logits = np.zeros((1, 4))
        logits[0, 1] = 1000.0
        assert cross_entropy(Tensor(logits), np.array([1])).item() == pytest.approx(0.0, abs=1e-12)

    def test_uniform_logits_give_log_vocab(self):
        loss = cross_entropy(Tensor(np.zeros((4, 10))), np.array([1, 2, 3, 4]))
        assert loss.item() == pytest.approx(math.log(10))

    def test_ignored_positions_do_not_count(self, rng):
        logits = Tensor(rng.normal(size=(3, 5)))
        full = cross_entropy(Tensor(logits.values[:2]), np.array([0, 1]))
        masked = cross_entropy(logits, np.array([0, 1, 5]))
        assert masked.item() == pytest.approx(full.item())

    def test_all_ignored_is_degenerate_zero(self):
        logits = Tensor.parameter(np.ones((2, 4)))
        loss = cross_entropy(logits, np.array([4, 4]))
        assert loss.item() == 0.0
        assert loss.degenerate
        backward(loss)
        np.testing.assert_array_equal(logits.grad, np.zeros((2, 4)))

    def test_out_of_range_target(self):
        with pytest.raises(IndexLookupError):
            cross_entropy(Tensor(np.zeros((1, 4))), np.array([7]), ignore_index=-1)

    def test_shape_mismatch(self):
        with pytest.raises(ShapeError):
            cross_entropy(Tensor(np.zeros((2, 4))), np.array([1, 2, 3]))

    def test_reduction_none_zero_at_ignored(self, rng):
        nll = cross_entropy(Tensor(rng.normal(size=(2, 3, 5))), np.array([[0, 5, 1], [5, 5, 2]]), reduction="none")
        assert nll.shape == (2, 3)
        assert nll.values[0, 1] == 0.0 and nll.values[1, 0] == 0.0
        assert nll.values[0, 0] > 0.0


class TestLayerNorm:
    def test_known_values(self):
        out = layer_norm(Tensor([2.0, 4.0, 6.0]), Tensor(np.ones(3)), Tensor(np.zeros(3))).values
        np.testing.assert_allclose(out, [-1.22474, 0.0, 1.22474], atol=1e-5)


class TestBackward:
    def test_sum_gives_ones(self):
        w = Tensor.parameter(np.array([1.0, 2.0, 3.0]))
        backward(w.sum())
        np.testing.assert_array_equal(w.grad, np.ones(3))

    def test_sum_of_squares(self):
        w = Tensor.parameter(np.array([1.0, 2.0]))
        backward((w * w).sum())
        np.testing.assert_allclose(w.grad, [2.0, 4.0])

    def test_gather_accumulates_repeated_indices(self):
        a = Tensor.parameter(np.zeros(3))
        backward(a[np.array([0, 0, 2])].sum())
        np.testing.assert_array_equal(a.grad, [2.0, 0.0, 1.0])

    def test_shared_node_gradients_add(self):
        a = Tensor.parameter(np.array([3.0]))
        backward((a * a + a).sum())
        np.testing.assert_allclose(a.grad, [7.0])

    def test_non_scalar_root(self):
        with pytest.raises(ShapeError):
            backward(Tensor.parameter(np.ones(2)) * 2.0)

    def test_no_grad_records_nothing(self):
        a = Tensor.parameter(np.ones(2))
        with no_grad():
            out = a * 3.0
        assert not out.requires_grad

    def test_no_grad_is_per_thread(self):
        a = Tensor.parameter(np.ones(2))
        entered, release = threading.Event(), threading.Event()

        def hold():
            with no_grad():
                entered.set()
                release.wait(5)

        worker = threading.Thread(target=hold)
        worker.start()
        try:
            assert entered.wait(5)
            assert (a * 2.0).requires_grad
        finally:
            release.set()
            worker.join()

    def test_dropout_disabled_is_identity(self, rng):
        a = Tensor(rng.normal(size=(2, 3)))
        assert dropout(a, 0.0, rng) is a
        assert dropout(a, 0.5, None) is a


class TestGradcheck:
    def test_composite_network(self, rng):
        x = Tensor(rng.normal(size=(2, 3, 4)))
        w = Tensor.parameter(rng.normal(size=(4, 5)))
        gain = Tensor.parameter(1.0 + 0.1 * rng.normal(size=5))
        bias = Tensor.parameter(0.1 * rng.normal(size=5))
        other = Tensor.parameter(rng.normal(size=(2, 3, 2)))
        targets = np.array([[0, 3, 6], [6, 1, 2]])

        def loss():
            h = layer_norm(gelu(x @ w), gain, bias)
            h = concat([h, other], axis=-1)
            return cross_entropy(h, targets, ignore_index=6)

        assert gradcheck(loss, [w, gain, bias, other]) < 1e-4

    def test_softmax_weighted_sum(self, rng):
        x = Tensor.parameter(rng.normal(size=(3, 4)))
        weights = rng.normal(size=(3, 4))
        assert gradcheck(lambda: (softmax(x) * weights).mean(), [x]) < 1e-4

    def test_exp_log_division(self, rng):
        x = Tensor.parameter(rng.uniform(0.5, 2.0, size=(2, 3)))
        assert gradcheck(lambda: ((x.exp() + 1.0).log() / (x + 1.0)).sum(), [x]) < 1e-4
