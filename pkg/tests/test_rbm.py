from types import SimpleNamespace

import numpy as np
import numpy.testing as npt
import pytest

from e2evsr.numeric import Rng, sigmoid
from e2evsr.rbm import (
    BERNOULLI_BERNOULLI,
    BERNOULLI_GAUSSIAN,
    GAUSSIAN_BERNOULLI,
    EncoderStack,
    PretrainConfig,
    RbmParams,
    cd1_update,
    encode,
    free_energy,
    init_rbm,
    pretrain_stack,
    propdown,
    propup,
)
from helpers import enumerate_binary, rbm_joint_energy


def make_rbm(kind, nv, nh, scale=0.0, seed=0):
    gen = np.random.default_rng(seed)
    return RbmParams(
        kind=kind,
        W=scale * gen.standard_normal((nv, nh)),
        vbias=scale * gen.standard_normal(nv),
        hbias=scale * gen.standard_normal(nh),
    )


class TestProp:
    def test_zero_params_bernoulli_hidden(self):
        rbm = make_rbm(BERNOULLI_BERNOULLI, 4, 3)
        out = propup(rbm, np.random.default_rng(0).random((5, 4)))
        npt.assert_array_equal(out, np.full((5, 3), 0.5))

    def test_constant_bias_gaussian_hidden(self):
        rbm = make_rbm(BERNOULLI_GAUSSIAN, 4, 3)
        rbm.hbias[:] = 2.5
        out = propup(rbm, np.ones((2, 4)))
        npt.assert_array_equal(out, np.full((2, 3), 2.5))

    def test_cancellation(self):
        rbm = RbmParams(BERNOULLI_BERNOULLI, np.array([[2.0]]), np.zeros(1), np.array([-2.0]))
        npt.assert_array_equal(propup(rbm, np.array([[1.0]])), [[0.5]])

    def test_propdown_zero_params(self):
        gb = make_rbm(GAUSSIAN_BERNOULLI, 4, 3)
        npt.assert_array_equal(propdown(gb, np.ones((2, 3))), np.zeros((2, 4)))
        bb = make_rbm(BERNOULLI_BERNOULLI, 4, 3)
        npt.assert_array_equal(propdown(bb, np.ones((2, 3))), np.full((2, 4), 0.5))

    def test_propdown_mirrors_propup(self):
        # propdown of an RBM equals propup of the role-swapped RBM
        gen = np.random.default_rng(1)
        for kind, mirrored in (
            (BERNOULLI_BERNOULLI, BERNOULLI_BERNOULLI),
            (GAUSSIAN_BERNOULLI, BERNOULLI_GAUSSIAN),
            (BERNOULLI_GAUSSIAN, GAUSSIAN_BERNOULLI),
        ):
            rbm = RbmParams(kind, gen.standard_normal((4, 3)),
                            gen.standard_normal(4), gen.standard_normal(3))
            twin = RbmParams(mirrored, rbm.W.T.copy(), rbm.hbias.copy(), rbm.vbias.copy())
            h = gen.random((6, 3))
            npt.assert_allclose(propdown(rbm, h), propup(twin, h), atol=1e-14)

    def test_dimension_mismatch(self):
        rbm = make_rbm(BERNOULLI_BERNOULLI, 4, 3)
        with pytest.raises(ValueError):
            propup(rbm, np.zeros((2, 5)))
        with pytest.raises(ValueError):
            propdown(rbm, np.zeros((2, 4)))


class TestFreeEnergy:
    def test_zero_params_bernoulli_visible(self):
        rbm = make_rbm(BERNOULLI_BERNOULLI, 3, 5)
        for v in enumerate_binary(3)[:4]:
            assert abs(free_energy(rbm, v) - (-5 * np.log(2.0))) < 1e-12

    def test_zero_params_gaussian_visible(self):
        rbm = make_rbm(GAUSSIAN_BERNOULLI, 3, 4)
        v = np.array([1.0, -2.0, 0.5])
        expected = 0.5 * np.sum(v ** 2) - 4 * np.log(2.0)
        assert abs(free_energy(rbm, v) - expected) < 1e-12

    def test_partition_function_by_enumeration(self):
        # sum_v exp(-F(v)) must equal the joint sum over all (v, h)
        rbm = make_rbm(BERNOULLI_BERNOULLI, 3, 2, scale=0.7, seed=42)
        z_free = sum(np.exp(-free_energy(rbm, v)) for v in enumerate_binary(3))
        z_joint = sum(
            np.exp(-rbm_joint_energy(rbm, v, h))
            for v in enumerate_binary(3)
            for h in enumerate_binary(2)
        )
        assert abs(z_free - z_joint) < 1e-10 * abs(z_joint)

    def test_batch_matches_vectors(self):
        rbm = make_rbm(BERNOULLI_BERNOULLI, 3, 2, scale=0.5, seed=1)
        batch = np.stack(enumerate_binary(3))
        out = free_energy(rbm, batch)
        for row, v in zip(out, enumerate_binary(3)):
            assert abs(row - free_energy(rbm, v)) < 1e-14


def exact_loglik_gradient_w(rbm, batch):
    """Enumeration oracle: d mean log p(v) / dW for a Bernoulli-Bernoulli RBM."""
    vis = enumerate_binary(rbm.n_visible)
    F = np.array([free_energy(rbm, v) for v in vis])
    p = np.exp(-(F - F.min()))
    p /= p.sum()
    positive = np.zeros_like(rbm.W)
    for v in batch:
        positive += np.outer(v, sigmoid(v @ rbm.W + rbm.hbias))
    positive /= len(batch)
    negative = np.zeros_like(rbm.W)
    for prob, v in zip(p, vis):
        negative += prob * np.outer(v, sigmoid(v @ rbm.W + rbm.hbias))
    return positive - negative


class TestCd1:
    def test_zero_lr_is_identity(self):
        rbm = make_rbm(BERNOULLI_BERNOULLI, 4, 3, scale=0.5, seed=3)
        cfg = SimpleNamespace(lr_bernoulli=0.0, lr_realvalued=0.0, l2=0.0)
        batch = np.stack(enumerate_binary(4)[:6])
        updated, _ = cd1_update(rbm, batch, cfg, Rng(0))
        npt.assert_array_equal(updated.W, rbm.W)
        npt.assert_array_equal(updated.vbias, rbm.vbias)
        npt.assert_array_equal(updated.hbias, rbm.hbias)

    def test_empty_batch_rejected(self):
        rbm = make_rbm(BERNOULLI_BERNOULLI, 4, 3)
        cfg = SimpleNamespace(lr_bernoulli=0.1, lr_realvalued=0.001, l2=0.0)
        with pytest.raises(ValueError):
            cd1_update(rbm, np.zeros((0, 4)), cfg, Rng(0))

    def test_mean_update_sign_matches_exact_gradient(self):
        # Monte Carlo average of CD-1 steps from frozen params vs enumeration
        rbm = make_rbm(BERNOULLI_BERNOULLI, 4, 3, scale=0.8, seed=7)
        gen = np.random.default_rng(5)
        batch = (gen.random((60, 4)) < np.array([0.8, 0.2, 0.7, 0.3])).astype(float)
        cfg = SimpleNamespace(lr_bernoulli=1.0, lr_realvalued=1.0, l2=0.0)
        exact = exact_loglik_gradient_w(rbm, batch)
        total = np.zeros_like(rbm.W)
        draws = 2000
        root = Rng(99)
        for trial in range(draws):
            updated, _ = cd1_update(rbm, batch, cfg, root.derive("mc", trial))
            total += updated.W - rbm.W
        mean_step = total / draws
        big = np.abs(exact) > 0.02
        assert big.any()
        assert (np.sign(mean_step[big]) == np.sign(exact[big])).all()

    def test_training_reduces_reconstruction_error(self):
        # bimodal binary toy set: two noisy prototypes
        gen = np.random.default_rng(11)
        proto = np.array([[1, 1, 1, 1, 0, 0, 0, 0], [0, 0, 0, 0, 1, 1, 1, 1]], dtype=float)
        data = proto[gen.integers(0, 2, 100)]
        flips = gen.random(data.shape) < 0.05
        data = np.abs(data - flips)
        rbm = init_rbm(BERNOULLI_BERNOULLI, 8, 6, Rng(1))
        cfg = SimpleNamespace(lr_bernoulli=0.1, lr_realvalued=0.001, l2=0.0002)
        rng = Rng(2)
        epoch_errors = []
        for epoch in range(20):
            errs = []
            for start in range(0, 100, 20):
                rbm, err = cd1_update(rbm, data[start : start + 20], cfg, rng)
                errs.append(err)
            epoch_errors.append(np.mean(errs))
        assert epoch_errors[-1] < epoch_errors[0]


def znormed_rows(gen, n, dim):
    x = gen.standard_normal((n, dim))
    x -= x.mean(axis=1, keepdims=True)
    x /= x.std(axis=1, keepdims=True)
    return x


class TestPretrainStack:
    def test_desk_config_chain_consistent(self):
        gen = np.random.default_rng(0)
        data = znormed_rows(gen, 120, 64)
        cfg = PretrainConfig(layer_sizes=[64, 40, 20, 10, 6], epochs=1, batch_size=40)
        stack, log = pretrain_stack(data, cfg, Rng(5))
        assert stack.layer_sizes == [64, 40, 20, 10, 6]
        kinds = [l.kind for l in stack.layers]
        assert kinds == [GAUSSIAN_BERNOULLI, BERNOULLI_BERNOULLI,
                         BERNOULLI_BERNOULLI, BERNOULLI_GAUSSIAN]
        for a, b in zip(stack.layers, stack.layers[1:]):
            assert a.n_hidden == b.n_visible
        assert len(log) == 4 and all(len(e) == 1 for e in log)

    def test_deterministic(self):
        gen = np.random.default_rng(1)
        data = znormed_rows(gen, 60, 16)
        cfg = PretrainConfig(layer_sizes=[16, 8, 6, 4, 3], epochs=2, batch_size=20)
        s1, _ = pretrain_stack(data, cfg, Rng(9))
        s2, _ = pretrain_stack(data, cfg, Rng(9))
        for a, b in zip(s1.layers, s2.layers):
            npt.assert_array_equal(a.W, b.W)
            npt.assert_array_equal(a.vbias, b.vbias)
            npt.assert_array_equal(a.hbias, b.hbias)

    def test_rejects_unnormalized_input(self):
        gen = np.random.default_rng(2)
        data = 5.0 + gen.standard_normal((40, 16))
        cfg = PretrainConfig(layer_sizes=[16, 8, 6, 4, 3], epochs=1, batch_size=20)
        with pytest.raises(ValueError, match="normalis"):
            pretrain_stack(data, cfg, Rng(0))

    def test_mean_only_mode_allows_diff_scale(self):
        gen = np.random.default_rng(3)
        data = znormed_rows(gen, 40, 16) * 1.4  # zero mean, std != 1
        cfg = PretrainConfig(layer_sizes=[16, 8, 6, 4, 3], epochs=1, batch_size=20)
        with pytest.raises(ValueError):
            pretrain_stack(data, cfg, Rng(0), normalization="strict")
        stack, _ = pretrain_stack(data, cfg, Rng(0), normalization="mean-only")
        assert stack.bottleneck_dim == 3

    def test_dim_mismatch(self):
        cfg = PretrainConfig(layer_sizes=[16, 8, 6, 4, 3], epochs=1)
        with pytest.raises(ValueError, match="layer_sizes"):
            pretrain_stack(np.zeros((10, 9)), cfg, Rng(0))


class TestEncode:
    def zero_stack(self, sizes=(6, 5, 4, 3, 2)):
        layers = [
            RbmParams(kind, np.zeros((sizes[i], sizes[i + 1])),
                      np.zeros(sizes[i]), np.zeros(sizes[i + 1]))
            for i, kind in enumerate([GAUSSIAN_BERNOULLI, BERNOULLI_BERNOULLI,
                                      BERNOULLI_BERNOULLI, BERNOULLI_GAUSSIAN])
        ]
        return EncoderStack(layers=layers)

    def test_zero_weights_zero_bottleneck(self):
        stack = self.zero_stack()
        npt.assert_array_equal(encode(stack, np.ones(6)), np.zeros(2))

    def test_output_length(self):
        stack = self.zero_stack()
        gen = np.random.default_rng(4)
        out = encode(stack, gen.standard_normal((7, 6)))
        assert out.shape == (7, 2)

    def test_deterministic(self):
        gen = np.random.default_rng(5)
        from helpers import random_stack

        stack = random_stack(gen, [6, 5, 4, 3, 2])
        x = gen.standard_normal(6)
        npt.assert_array_equal(encode(stack, x), encode(stack, x))

    def test_dim_mismatch(self):
        with pytest.raises(ValueError):
            encode(self.zero_stack(), np.ones(7))
