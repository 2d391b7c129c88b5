"""Finite-difference checks of input and parameter derivatives."""

from __future__ import annotations

import numpy as np
import torch

from .model import DTYPE, FieldModel, parameter_gradient


def _outputs(model, x) -> np.ndarray:
    with torch.no_grad():
        ev = model.evaluate(x, "value")
    return torch.cat([ev.u, ev.p[:, None]], dim=1).numpy()


def jacobian_fd_error(model: FieldModel, points, step: float = 1e-5) -> float:
    """Largest per-point relative Frobenius error of the 4x3 input Jacobian
    against central differences."""
    x = np.atleast_2d(np.asarray(points, dtype=float))
    J = model.input_jacobian(x)
    fd = np.empty_like(J)
    for j in range(3):
        e = np.zeros(3)
        e[j] = step
        fd[:, :, j] = (_outputs(model, x + e) - _outputs(model, x - e)) / (2 * step)
    num = np.linalg.norm((J - fd).reshape(len(x), -1), axis=1)
    den = np.maximum(np.linalg.norm(fd.reshape(len(x), -1), axis=1), 1e-300)
    return float((num / den).max())


def hessian_fd_error(model: FieldModel, points, step: float = 1e-3) -> float:
    """Largest per-point relative error of the velocity Hessians against
    second-order central differences of the outputs."""
    x = np.atleast_2d(np.asarray(points, dtype=float))
    H = model.velocity_second_derivatives(x)
    fd = np.empty_like(H)
    f0 = _outputs(model, x)[:, :3]
    I = np.eye(3) * step
    for j in range(3):
        fp = _outputs(model, x + I[j])[:, :3]
        fm = _outputs(model, x - I[j])[:, :3]
        fd[:, :, j, j] = (fp - 2 * f0 + fm) / step**2
        for k in range(j + 1, 3):
            fpp = _outputs(model, x + I[j] + I[k])[:, :3]
            fpm = _outputs(model, x + I[j] - I[k])[:, :3]
            fmp = _outputs(model, x - I[j] + I[k])[:, :3]
            fmm = _outputs(model, x - I[j] - I[k])[:, :3]
            fd[:, :, j, k] = fd[:, :, k, j] = (fpp - fpm - fmp + fmm) / (4 * step**2)
    num = np.linalg.norm((H - fd).reshape(len(x), -1), axis=1)
    den = np.maximum(np.linalg.norm(fd.reshape(len(x), -1), axis=1), 1e-300)
    return float((num / den).max())


def directional_gradient_check(model: FieldModel, loss_fn, n_dirs: int = 10, eps: float = 1e-6, seed=0) -> float:
    """Largest relative error between ``<grad, d>`` and the central difference of
    ``loss_fn(model)`` along random unit directions ``d``."""
    theta = model.get_flat().clone()
    _, g = parameter_gradient(model, loss_fn)
    rng = np.random.default_rng(seed)
    worst = 0.0
    try:
        for _ in range(n_dirs):
            d = torch.as_tensor(rng.standard_normal(theta.numel()), dtype=DTYPE)
            d /= d.norm()
            with torch.no_grad():
                model.set_flat(theta + eps * d)
                lp = float(loss_fn(model))
                model.set_flat(theta - eps * d)
                lm = float(loss_fn(model))
            fd = (lp - lm) / (2 * eps)
            an = float(g @ d)
            worst = max(worst, abs(fd - an) / max(abs(an), abs(fd), 1e-300))
    finally:
        model.set_flat(theta)
    return worst
