import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from dglstm.numerics import DimensionError, hadamard, matvec, sigmoid, softmax_xent, tanh_ew, tensor


def test_matvec_examples():
    x = tensor([3, 4])
    assert np.array_equal(matvec(tensor([[1, 0], [0, 1]]), x), tensor([3, 4]))
    assert np.array_equal(matvec(tensor([[0, 0], [0, 0]]), x), tensor([0, 0]))
    assert np.array_equal(matvec(tensor([[1, 2], [3, 4]]), tensor([1, 1])), tensor([3, 7]))


def test_matvec_shape_error_names_both_shapes():
    with pytest.raises(DimensionError, match=r"\(2, 3\).*\(2, 1\)"):
        matvec(np.zeros((2, 3)), np.zeros((2, 1)))


def test_sigmoid_examples():
    assert sigmoid(tensor([0.0]))[0, 0] == 0.5
    assert abs(sigmoid(tensor([50.0]))[0, 0] - 1.0) < 1e-15
    assert sigmoid(tensor([0.5]))[0, 0] == pytest.approx(1 / (1 + math.exp(-0.5)), abs=1e-15)
    assert sigmoid(tensor([0.5]))[0, 0] == pytest.approx(0.622459, abs=1e-6)
    assert not np.isnan(sigmoid(tensor([-1e4, 1e4]))).any()


def test_tanh_examples():
    assert tanh_ew(tensor([0.0]))[0, 0] == 0.0
    x = tensor([0.3, -1.7, 4.0])
    assert np.array_equal(tanh_ew(-x), -tanh_ew(x))
    assert tanh_ew(tensor([0.5]))[0, 0] == pytest.approx(0.462117, abs=1e-6)


def test_hadamard_examples():
    assert np.array_equal(hadamard(tensor([1, 2]), tensor([1, 1])), tensor([1, 2]))
    assert np.array_equal(hadamard(tensor([1, 2]), tensor([0, 0])), tensor([0, 0]))
    assert np.array_equal(hadamard(tensor([2, 3]), tensor([4, 5])), tensor([8, 15]))
    with pytest.raises(DimensionError):
        hadamard(tensor([1, 2]), tensor([1, 2, 3]))


def test_softmax_xent_uniform():
    loss, probs = softmax_xent(tensor([0.7] * 4), 3)
    assert loss == pytest.approx(math.log(4), abs=1e-12)
    assert np.allclose(probs, 0.25, atol=1e-12, rtol=0)


def test_softmax_xent_stable_for_huge_logits():
    loss, probs = softmax_xent(tensor([1000.0, -1000.0]), 0)
    assert loss < 1e-12
    assert np.all(np.isfinite(probs))


def test_softmax_xent_value():
    expected = -math.log(math.exp(3) / (math.exp(1) + math.exp(2) + math.exp(3)))
    loss, _ = softmax_xent(tensor([1.0, 2.0, 3.0]), 2)
    assert loss == pytest.approx(expected, abs=1e-12)
    assert loss == pytest.approx(0.40760, abs=1e-5)


def test_softmax_xent_bad_target():
    with pytest.raises(IndexError):
        softmax_xent(tensor([1.0, 2.0]), 2)
    with pytest.raises(IndexError):
        softmax_xent(tensor([1.0, 2.0]), -1)


floats = st.floats(-20, 20, allow_nan=False)


@given(st.lists(floats, min_size=1, max_size=16))
def test_sigmoid_reflection(xs):
    x = tensor(xs)
    assert np.all(np.abs(sigmoid(x) + sigmoid(-x) - 1.0) <= 1e-12)


@given(st.lists(st.floats(-30, 30, allow_nan=False), min_size=1, max_size=16))
def test_sigmoid_open_interval(xs):
    y = sigmoid(tensor(xs))
    assert np.all((y > 0) & (y < 1))


@given(st.lists(st.floats(-1e3, 1e3, allow_nan=False), min_size=1, max_size=32), st.data())
def test_softmax_sums_to_one(logits, data):
    target = data.draw(st.integers(0, len(logits) - 1))
    loss, probs = softmax_xent(tensor(logits), target)
    assert abs(probs.sum() - 1.0) <= 1e-12
    assert loss >= 0


@settings(max_examples=50)
@given(st.integers(0, 2**32 - 1))
def test_matvec_distributes(seed):
    rng = np.random.default_rng(seed)
    W = rng.normal(size=(8, 8))
    a, b = rng.normal(size=(8, 1)), rng.normal(size=(8, 1))
    assert np.max(np.abs(matvec(W, a + b) - (matvec(W, a) + matvec(W, b)))) <= 1e-10
