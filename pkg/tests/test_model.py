"""Fourier-feature MLP: embedding, fused derivatives, gradients and checkpoints."""

import numpy as np
import numpy.testing as npt
import pytest
import torch

from weakflow.diagnostics import directional_gradient_check, hessian_fd_error, jacobian_fd_error
from weakflow.errors import ConfigError, NumericError
from weakflow.model import CKPT_MAGIC, FieldModel, frequency_matrix, parameter_gradient


def numpy_forward(model, x):
    """Plain numpy reimplementation of the forward pass."""
    B = model.B.numpy()
    z = 2 * np.pi * x @ B.T
    h = np.concatenate([np.sin(z), np.cos(z)], axis=1)
    Ws = [W.detach().numpy() for W in model.weights]
    bs = [b.detach().numpy() for b in model.biases]
    for W, b in zip(Ws[:-1], bs[:-1]):
        h = np.tanh(h @ W.T + b)
    return h @ Ws[-1].T + bs[-1]


def zero_hidden(model, out_bias):
    with torch.no_grad():
        for W in model.weights:
            W.zero_()
        for b in model.biases:
            b.zero_()
        model.biases[-1].copy_(torch.tensor(out_bias, dtype=torch.float64))


@pytest.fixture
def small():
    return FieldModel(width=16, depth=3, seed=3)


class TestEmbedding:
    def test_origin(self):
        e = FieldModel(width=4, depth=1).embed(np.zeros((1, 3)))[0].numpy()
        npt.assert_array_equal(e[:30], 0.0)
        npt.assert_array_equal(e[30:], 1.0)

    def test_cycling_layout(self):
        B = frequency_matrix(30, 1.0, 2.5)
        npt.assert_allclose(np.abs(B).sum(axis=1), np.linspace(1, 2.5, 30))
        npt.assert_array_equal(np.argmax(B, axis=1), np.arange(30) % 3)

    def test_isotropic_layout(self):
        B = frequency_matrix(4, 1.0, 2.0, "isotropic")
        npt.assert_allclose(B, np.outer(np.linspace(1, 2, 4), np.ones(3)))

    def test_unknown_layout(self):
        with pytest.raises(ConfigError):
            frequency_matrix(4, 1, 2, "spiral")


class TestForward:
    def test_zero_hidden_weights(self):
        m = FieldModel(width=8, depth=2)
        zero_hidden(m, [1.0, -2.0, 3.0, 0.5])
        u, p = m.forward(np.random.default_rng(0).random((5, 3)))
        npt.assert_array_equal(u, np.tile([1.0, -2.0, 3.0], (5, 1)))
        npt.assert_array_equal(p, 0.5)
        npt.assert_array_equal(m.input_jacobian(np.ones((2, 3))), 0.0)
        npt.assert_array_equal(m.velocity_second_derivatives(np.ones((2, 3))), 0.0)

    def test_matches_numpy(self, small, rng):
        x = rng.uniform(0, 5, (50, 3))
        u, p = small.forward(x)
        ref = numpy_forward(small, x)
        npt.assert_allclose(u, ref[:, :3], rtol=0, atol=1e-10)
        npt.assert_allclose(p, ref[:, 3], rtol=0, atol=1e-10)

    def test_batched_matches_single(self, small, rng):
        x = rng.uniform(0, 1, (10, 3))
        u, p = small.forward(x)
        for k in range(10):
            uk, pk = small.forward(x[k : k + 1])
            npt.assert_allclose(uk[0], u[k], rtol=0, atol=1e-14)
            npt.assert_allclose(pk[0], p[k], rtol=0, atol=1e-14)

    def test_non_finite_parameters(self, small):
        with torch.no_grad():
            small.weights[0][0, 0] = float("nan")
        with pytest.raises(NumericError):
            small.forward(np.zeros((1, 3)))

    def test_evaluation_is_pure(self, small, rng):
        before = small.get_flat().clone()
        small.evaluate(rng.random((8, 3)), "hessian")
        npt.assert_array_equal(small.get_flat().numpy(), before.numpy())

    def test_orders_agree(self, small, rng):
        x = rng.random((20, 3))
        ev_j, ev_l, ev_h = (small.evaluate(x, o) for o in ("jacobian", "laplacian", "hessian"))
        for ev in (ev_l, ev_h):
            npt.assert_allclose(ev.u.detach(), ev_j.u.detach(), atol=1e-14)
            npt.assert_allclose(ev.jac.detach(), ev_j.jac.detach(), atol=1e-13)

    def test_bad_order(self, small):
        with pytest.raises(ValueError):
            small.evaluate(np.zeros((1, 3)), "curl")


class TestDerivatives:
    def test_single_frequency_probe(self):
        # one frequency on x, one tanh unit: out = w1 * tanh(a sin(2 pi f x) + c cos(2 pi f x)) + b1
        m = FieldModel(width=1, depth=1, n_freq=1, f_min=1.5, f_max=1.5)
        a, c, w1 = 0.7, -0.4, np.array([1.3, -0.2, 0.5, 2.0])
        with torch.no_grad():
            m.weights[0].copy_(torch.tensor([[a, c]], dtype=torch.float64))
            m.weights[1].copy_(torch.tensor(w1[:, None], dtype=torch.float64))
        x = np.array([[0.1, 0.3, 0.7], [0.45, 0.0, 0.2]])
        k = 2 * np.pi * 1.5
        s, co = np.sin(k * x[:, 0]), np.cos(k * x[:, 0])
        t = np.tanh(a * s + c * co)
        dh = (1 - t**2) * (a * k * co - c * k * s)
        J = m.input_jacobian(x)
        npt.assert_allclose(J[:, :, 0], dh[:, None] * w1, rtol=1e-13)
        npt.assert_array_equal(J[:, :, 1:], 0.0)

    def test_jacobian_fd(self, small, rng):
        assert jacobian_fd_error(small, rng.uniform(0, 1, (100, 3))) < 1e-5

    def test_hessian_fd(self, small, rng):
        assert hessian_fd_error(small, rng.uniform(0, 1, (50, 3))) < 1e-3

    def test_hessian_symmetric(self, small, rng):
        H = small.velocity_second_derivatives(rng.random((10, 3)))
        npt.assert_array_equal(H, H.transpose(0, 1, 3, 2))

    def test_trace_equals_laplacian(self, small, rng):
        x = rng.random((30, 3))
        H = small.velocity_second_derivatives(x)
        with torch.no_grad():
            lap = small.evaluate(x, "laplacian").lap.numpy()
        npt.assert_allclose(np.einsum("nijj->ni", H), lap, rtol=0, atol=1e-10)


class TestParameterGradient:
    def test_block_independent_of_loss(self, small, rng):
        x0 = rng.random((4, 3))
        _, g = parameter_gradient(small, lambda m: (m.evaluate(x0).p ** 2).sum())
        W_last = small.weights[-1]
        offset = small.n_parameters - W_last.numel() - 4
        grad_W = g[offset : offset + W_last.numel()].reshape(W_last.shape)
        npt.assert_array_equal(grad_W[:3].numpy(), 0.0)
        npt.assert_array_equal(g[-4:-1].numpy(), 0.0)

    def test_quadratic_probe_hand_gradient(self, rng):
        m = FieldModel(width=5, depth=1, n_freq=2, seed=8)
        x0 = rng.random((1, 3))
        _, g = parameter_gradient(m, lambda mm: (mm.evaluate(x0).u ** 2).sum() + (mm.evaluate(x0).p ** 2).sum())
        W0, W1 = (W.detach().numpy() for W in m.weights)
        e = m.embed(x0)[0].numpy()
        h = np.tanh(W0 @ e)
        f = W1 @ h
        # 2 J_theta^T f, block by block
        gW1 = 2 * np.outer(f, h)
        gb1 = 2 * f
        back = (W1.T @ (2 * f)) * (1 - h**2)
        gW0 = np.outer(back, e)
        gb0 = back
        hand = np.concatenate([gW0.ravel(), gb0, gW1.ravel(), gb1])
        npt.assert_allclose(g.numpy(), hand, rtol=1e-12, atol=1e-14)

    def test_directional_fd(self, small, rng):
        x0 = rng.random((16, 3))
        err = directional_gradient_check(small, lambda m: (m.evaluate(x0, "laplacian").lap ** 2).mean(), seed=1)
        assert err < 1e-4

    def test_non_finite_loss(self, small):
        with pytest.raises(NumericError):
            parameter_gradient(small, lambda m: m.evaluate(np.zeros((1, 3))).p.sum() / 0.0)


class TestInitAndSize:
    def test_parameter_count(self):
        assert FieldModel(width=256, depth=5).n_parameters == 279_812

    def test_glorot_variance(self):
        for seed in range(10):
            m = FieldModel(width=64, depth=3, seed=seed)
            for W in m.weights:
                fan_out, fan_in = W.shape
                target = 2.0 / (fan_in + fan_out)
                assert W.detach().numpy().var() == pytest.approx(target, rel=0.2)

    def test_seeded(self):
        npt.assert_array_equal(FieldModel(8, 2, seed=1).get_flat(), FieldModel(8, 2, seed=1).get_flat())
        assert not torch.equal(FieldModel(8, 2, seed=1).get_flat(), FieldModel(8, 2, seed=2).get_flat())

    def test_flat_round_trip(self, small):
        theta = small.get_flat().clone()
        small.set_flat(theta * 2)
        npt.assert_array_equal(small.get_flat(), theta * 2)


class TestCheckpoint:
    def test_round_trip(self, small, tmp_path, rng):
        path = tmp_path / "m.ckpt"
        small.save(path, {"epoch": [12], "state": rng.random(5)})
        back, extras = FieldModel.load(path)
        npt.assert_array_equal(back.get_flat(), small.get_flat())
        assert back.arch() == small.arch()
        assert extras["epoch"][0] == 12
        x = rng.random((4, 3))
        npt.assert_array_equal(back.forward(x)[0], small.forward(x)[0])

    def test_header(self, small, tmp_path):
        small.save(tmp_path / "m.ckpt")
        lines = (tmp_path / "m.ckpt").read_text().splitlines()
        assert lines[0] == CKPT_MAGIC
        assert "layout cycling" in lines
        assert any(line.startswith("frequencies ") for line in lines)
        assert lines[-1] == "[end]"

    def test_bad_magic(self, tmp_path):
        (tmp_path / "x.ckpt").write_text("not a checkpoint\n")
        with pytest.raises(ConfigError):
            FieldModel.load(tmp_path / "x.ckpt")
