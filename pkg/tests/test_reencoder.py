import numpy as np
import pytest

from divrank.errors import ContractViolation
from divrank.nn import RngStream, grad_check
from divrank.reencoder import ReEncoder


class TestReencode:
    def test_beta_zero_is_identity(self):
        m = ReEncoder(8, beta=0.0, rng=RngStream(0, "t"))
        h = RngStream(1, "h").normal(size=8)
        assert np.array_equal(m.reencode(h), h)

    def test_zero_weights_is_identity(self):
        m = ReEncoder(8, beta=0.02, rng=RngStream(0, "t"))
        for name in ("w1", "w2", "b1", "b2"):
            m.store[name] = np.zeros_like(m.store[name])
        h = RngStream(1, "h").normal(size=8)
        assert np.array_equal(m.reencode(h), h)

    def test_forced_correction_analytic(self):
        m = ReEncoder(2, beta=0.02, rng=RngStream(0, "t"))
        h = np.array([1.0, 1.0])
        g = np.array([0.5, -0.5])
        out = h + m.beta * g  # definition applied by hand
        m.store["w1"] = np.zeros_like(m.store["w1"])
        m.store["b1"] = np.zeros_like(m.store["b1"])
        m.store["w2"] = np.zeros_like(m.store["w2"])
        m.store["b2"] = g
        assert np.allclose(m.reencode(h), out, atol=1e-15)
        assert np.allclose(m.reencode(h), [1.01, 0.99], atol=1e-15)

    def test_dim_mismatch(self):
        m = ReEncoder(8, rng=RngStream(0, "t"))
        with pytest.raises(ContractViolation):
            m.reencode(np.zeros(5))

    def test_negative_beta_rejected(self):
        with pytest.raises(ContractViolation):
            ReEncoder(4, beta=-0.1)

    def test_bounded_perturbation_on_fresh_model(self):
        m = ReEncoder(64, beta=0.02, rng=RngStream(2, "t"))
        rng = RngStream(3, "h")
        h = rng.normal(size=(200, 64))
        h /= np.linalg.norm(h, axis=1, keepdims=True)
        disp = np.linalg.norm(m.reencode(h) - h, axis=1)
        assert disp.mean() <= 0.1

    def test_batch_order_independent(self):
        m = ReEncoder(8, rng=RngStream(4, "t"))
        h = RngStream(5, "h").normal(size=(10, 8))
        perm = RngStream(6, "p").permutation(10)
        out = m.reencode(h)
        assert np.array_equal(out[perm], m.reencode(h[perm]))

    def test_gradient_vs_finite_differences(self):
        m = ReEncoder(6, beta=0.02, rng=RngStream(7, "t"))
        x = RngStream(8, "x").normal(size=(4, 6))
        target = RngStream(9, "y").normal(size=(4, 6))

        def loss_fn():
            m.store.zero_grads()
            cache = []
            y = m.reencode(x, cache)
            diff = y - target
            m.backward(diff, cache[0])
            return 0.5 * float(np.sum(diff * diff))

        assert grad_check(loss_fn, m.store) <= 1e-3
