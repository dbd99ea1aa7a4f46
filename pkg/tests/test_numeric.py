import numpy as np
import numpy.testing as npt
import pytest

from e2evsr.numeric import (
    Rng,
    matmul,
    sample_bernoulli,
    sample_gaussian,
    sigmoid,
    softmax,
)


class TestSigmoid:
    def test_symmetry_point(self):
        assert sigmoid(0.0) == 0.5

    def test_saturation(self):
        assert abs(sigmoid(100.0) - 1.0) < 1e-12
        assert sigmoid(-100.0) < 1e-12

    def test_odd_symmetry(self):
        npt.assert_allclose(sigmoid(-1.7), 1.0 - sigmoid(1.7), rtol=0, atol=1e-15)

    def test_stable_at_extremes(self):
        # no overflow warnings or infs anywhere in [-1e3, 1e3]
        xs = np.linspace(-1e3, 1e3, 2001)
        with np.errstate(over="raise"):
            out = sigmoid(xs)
        assert np.isfinite(out).all()
        assert (out >= 0).all() and (out <= 1).all()

    def test_monotone(self):
        gen = np.random.default_rng(0)
        xs = np.sort(gen.uniform(-700, 700, 500))
        out = sigmoid(xs)
        assert (np.diff(out) >= 0).all()


class TestSoftmax:
    def test_uniform_logits(self):
        npt.assert_allclose(softmax([0.0, 0.0, 0.0]), np.full(3, 1 / 3), atol=1e-15)

    def test_shift_invariance(self):
        v = np.array([1.0, 2.0, 3.0])
        npt.assert_allclose(softmax(v + 100.0), softmax(v), atol=1e-12)

    def test_exact_ratio(self):
        npt.assert_allclose(softmax([0.0, np.log(3.0)]), [0.25, 0.75], atol=1e-15)

    def test_sums_to_one_at_extremes(self):
        gen = np.random.default_rng(1)
        for _ in range(50):
            v = gen.uniform(-700, 700, gen.integers(2, 20))
            assert abs(softmax(v).sum() - 1.0) < 1e-12

    def test_empty_rejected(self):
        with pytest.raises(ValueError):
            softmax(np.array([]))


class TestSampling:
    def test_bernoulli_degenerate(self):
        rng = Rng(3)
        assert sample_bernoulli(np.zeros((4, 5)), rng).sum() == 0
        assert sample_bernoulli(np.ones((4, 5)), rng).sum() == 20

    def test_bernoulli_mean(self):
        n = 10 ** 5
        draws = sample_bernoulli(np.full(n, 0.3), Rng(42))
        bound = 3 * np.sqrt(0.3 * 0.7 / n)
        assert abs(draws.mean() - 0.3) < bound

    def test_bernoulli_out_of_range(self):
        with pytest.raises(ValueError):
            sample_bernoulli(np.array([0.5, 1.2]), Rng(0))
        with pytest.raises(ValueError):
            sample_bernoulli(np.array([-0.1]), Rng(0))

    def test_gaussian_moments(self):
        n = 10 ** 5
        draws = sample_gaussian(np.zeros(n), Rng(7))
        assert abs(draws.mean()) < 3 / np.sqrt(n)
        assert abs(draws.var() - 1.0) < 0.05

    def test_gaussian_determinism(self):
        a = sample_gaussian(np.zeros((3, 4)), Rng(11))
        b = sample_gaussian(np.zeros((3, 4)), Rng(11))
        npt.assert_array_equal(a, b)

    def test_gaussian_mean_shift(self):
        mean = np.arange(6.0).reshape(2, 3)
        a = sample_gaussian(mean, Rng(5))
        b = sample_gaussian(np.zeros((2, 3)), Rng(5))
        npt.assert_allclose(a - b, mean, atol=1e-15)


class TestRng:
    def test_same_seed_same_stream(self):
        npt.assert_array_equal(Rng(9).uniform(100), Rng(9).uniform(100))

    def test_derive_is_stable_and_distinct(self):
        root = Rng(9)
        a = root.derive("pretrain", "raw").uniform(10)
        b = Rng(9).derive("pretrain", "raw").uniform(10)
        c = Rng(9).derive("pretrain", "diff").uniform(10)
        npt.assert_array_equal(a, b)
        assert not np.array_equal(a, c)

    def test_derive_label_types(self):
        a = Rng(1).derive("utt", 0, 1, 2).uniform(4)
        b = Rng(1).derive("utt", 0, 1, 2).uniform(4)
        npt.assert_array_equal(a, b)
        with pytest.raises(ValueError):
            Rng(1).derive(-1)
        with pytest.raises(ValueError):
            Rng(1).derive(1.5)

    def test_derivation_independent_of_parent_draws(self):
        root = Rng(4)
        root.uniform(100)  # consuming the parent must not move children
        a = root.derive("x").uniform(5)
        b = Rng(4).derive("x").uniform(5)
        npt.assert_array_equal(a, b)


class TestMatmul:
    def test_identity(self):
        gen = np.random.default_rng(2)
        m = gen.standard_normal((3, 7))
        npt.assert_array_equal(matmul(np.eye(3), m), m)

    def test_hand_computed(self):
        out = matmul(np.array([[1.0, 2.0], [3.0, 4.0]]), np.array([[0.0], [1.0]]))
        npt.assert_array_equal(out, [[2.0], [4.0]])

    def test_associativity(self):
        gen = np.random.default_rng(3)
        for _ in range(20):
            a, b, c = (gen.standard_normal((4, 4)) for _ in range(3))
            npt.assert_allclose(matmul(matmul(a, b), c), matmul(a, matmul(b, c)), atol=1e-10)

    def test_dimension_mismatch(self):
        with pytest.raises(ValueError):
            matmul(np.zeros((2, 3)), np.zeros((4, 2)))
