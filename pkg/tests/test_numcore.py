import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from concord.errors import DimensionError
from concord.numcore import (
    Rng,
    elementwise,
    glorot_uniform,
    log_softmax,
    matmul,
    rng_next_uniform,
    sigmoid,
    softmax,
)
from oracles import splitmix64

# frozen from the pure-Python recurrence in oracles.splitmix64
SEED0_U64 = [0xE220A8397B1DCDAF, 0x6E789E6AA1B965F4, 0x06C45D188009454F]


class TestRng:
    def test_seed0_first_outputs(self):
        rng = Rng(0)
        assert [rng.next_u64() for _ in range(3)] == SEED0_U64

    def test_seed0_first_uniform(self):
        u = rng_next_uniform(Rng(0))
        assert u == (0xE220A8397B1DCDAF >> 11) * 2.0**-53
        assert abs(u - 0.8832) < 1e-3

    @given(st.integers(0, 2**64 - 1), st.integers(1, 50))
    def test_matches_reference_recurrence(self, seed, n):
        rng = Rng(seed)
        assert [rng.next_u64() for _ in range(n)] == splitmix64(seed, n)

    @given(st.integers(0, 2**64 - 1), st.integers(0, 40))
    def test_array_equals_scalar_stream(self, seed, n):
        a, b = Rng(seed), Rng(seed)
        arr = a.u64_array(n)
        assert [int(v) for v in arr] == [b.next_u64() for _ in range(n)]
        assert a.state == b.state

    def test_uniform_in_unit_interval(self):
        u = Rng(7).uniform_array(100_000)
        assert u.min() >= 0.0 and u.max() < 1.0
        assert abs(u.mean() - 0.5) < 0.01

    def test_randint_range(self):
        rng = Rng(3)
        draws = [rng.randint(5) for _ in range(2000)]
        assert set(draws) == {0, 1, 2, 3, 4}

    def test_spawn_is_deterministic_and_distinct(self):
        a, b = Rng(11).spawn(1), Rng(11).spawn(1)
        c = Rng(11).spawn(2)
        assert a.next_u64() == b.next_u64()
        assert Rng(11).spawn(1).next_u64() != c.next_u64()


class TestMatmul:
    def test_hand_example(self):
        out = matmul(np.array([[1.0, 2], [3, 4]]), np.array([[5.0], [6]]))
        np.testing.assert_array_equal(out, [[17.0], [39.0]])

    def test_associative(self):
        rng = Rng(5)
        A, B, C = (rng.uniform_array((4, 4)) for _ in range(3))
        np.testing.assert_allclose(matmul(matmul(A, B), C), matmul(A, matmul(B, C)), atol=1e-9)

    def test_shape_error_names_both_shapes(self):
        with pytest.raises(DimensionError, match=r"\[2, 3\].*\[2, 2\]"):
            matmul(np.zeros((2, 3)), np.zeros((2, 2)))


class TestElementwise:
    def test_tanh_reference(self):
        assert elementwise("tanh", np.array([0.5]))[0] == pytest.approx(0.46211715726000974,
                                                                         abs=1e-15)

    def test_sigmoid_extremes_are_finite(self):
        with np.errstate(all="raise"):
            out = sigmoid(np.array([-1000.0, -40.0, 0.0, 40.0, 1000.0]))
        assert out[0] == 0.0 and out[-1] == 1.0 and out[2] == 0.5
        assert np.isfinite(out).all()

    @given(st.floats(-700, 700))
    def test_sigmoid_symmetry(self, x):
        s = sigmoid(np.array([x, -x]))
        assert s[0] + s[1] == pytest.approx(1.0, abs=1e-15)

    def test_relu(self):
        np.testing.assert_array_equal(elementwise("relu", np.array([-1.0, 0.0, 2.0])),
                                      [0.0, 0.0, 2.0])

    def test_binary_shape_mismatch(self):
        with pytest.raises(DimensionError):
            elementwise("add", np.zeros(2), np.zeros(3))

    def test_unknown_op(self):
        with pytest.raises(ValueError):
            elementwise("cube", np.zeros(2))


class TestSoftmax:
    def test_reference_values(self):
        np.testing.assert_allclose(
            softmax(np.array([1.0, 2.0, 3.0])),
            [0.09003057317038046, 0.24472847105479767, 0.6652409557748219], rtol=1e-14)

    def test_large_logits_stable(self):
        p = softmax(np.array([[1000.0, 1000.0, -1000.0]]))
        np.testing.assert_allclose(p, [[0.5, 0.5, 0.0]])

    def test_needs_two_columns(self):
        with pytest.raises(DimensionError):
            softmax(np.array([[1.0]]))

    @given(st.lists(st.floats(-50, 50), min_size=2, max_size=8), st.floats(-100, 100))
    def test_rows_sum_to_one_and_shift_invariant(self, xs, shift):
        x = np.array(xs)
        p = softmax(x)
        assert p.sum() == pytest.approx(1.0, abs=1e-12)
        np.testing.assert_allclose(softmax(x + shift), p, atol=1e-12)
        np.testing.assert_allclose(np.exp(log_softmax(x)), p, atol=1e-12)


class TestGlorot:
    def test_bounds_and_mean(self):
        W = glorot_uniform(Rng(0), 50, 50)
        limit = math.sqrt(6 / 100)
        assert W.shape == (50, 50)
        assert np.abs(W).max() <= limit
        draws = np.concatenate([glorot_uniform(Rng(s), 50, 50).ravel() for s in range(4)])
        assert draws.size == 10_000
        assert abs(draws.mean()) < 0.01

    def test_deterministic(self):
        np.testing.assert_array_equal(glorot_uniform(Rng(9), 3, 4), glorot_uniform(Rng(9), 3, 4))

    def test_rejects_bad_fans(self):
        with pytest.raises(DimensionError):
            glorot_uniform(Rng(0), 0, 3)
