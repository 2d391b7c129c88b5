"""Coordinate network ``x -> (u, v, w, p)`` with exact input derivatives.

Value, Jacobian and second derivatives are propagated together through the
Fourier embedding and tanh layers (forward-mode, closed-form tanh
derivatives). Parameter gradients come from reverse accumulation over that
fused pass (torch autograd). Everything runs in float64.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np
import torch

from .errors import ConfigError, NumericError

DTYPE = torch.float64
CKPT_MAGIC = "musa-ckpt v1"

# Index pairs for the 6 unique entries of a symmetric 3x3 Hessian.
_PAIRS = ((0, 0), (1, 1), (2, 2), (0, 1), (0, 2), (1, 2))


def frequency_matrix(n_freq=30, f_min=1.0, f_max=2.5, layout="cycling") -> np.ndarray:
    """``(m, 3)`` matrix of linearly spaced frequencies.

    ``cycling``: row k is ``f_k * e_(k mod 3)``; ``isotropic``: row k is
    ``f_k * (1, 1, 1)``.
    """
    if n_freq < 1 or f_max < f_min:
        raise ConfigError("need n_freq >= 1 and f_max >= f_min")
    f = np.linspace(f_min, f_max, n_freq)
    B = np.zeros((n_freq, 3))
    if layout == "cycling":
        B[np.arange(n_freq), np.arange(n_freq) % 3] = f
    elif layout == "isotropic":
        B[:] = f[:, None]
    else:
        raise ConfigError(f"unknown embedding layout {layout!r}")
    return B


@dataclass
class FieldEval:
    """Network (or analytic field) outputs at N points.

    ``jac[n, c, j] = d out_c / d x_j`` for ``c`` over (u, v, w, p);
    ``lap[n, i]`` is the Laplacian of velocity component i;
    ``hess[n, i, j, k] = d^2 u_i / dx_j dx_k``.
    """

    u: torch.Tensor
    p: torch.Tensor
    jac: torch.Tensor | None = None
    lap: torch.Tensor | None = None
    hess: torch.Tensor | None = None


ORDERS = ("value", "jacobian", "laplacian", "hessian")


class FieldModel:
    """Linear-Fourier-feature tanh MLP with ``depth`` hidden layers of ``width``."""

    def __init__(self, width=256, depth=5, n_freq=30, f_min=1.0, f_max=2.5, layout="cycling", seed=0):
        if width < 1 or depth < 1:
            raise ConfigError("width and depth must be >= 1")
        self.width, self.depth = int(width), int(depth)
        self.n_freq, self.f_min, self.f_max, self.layout = int(n_freq), float(f_min), float(f_max), layout
        self.B = torch.tensor(frequency_matrix(n_freq, f_min, f_max, layout), dtype=DTYPE)
        rng = np.random.default_rng(seed)
        sizes = [2 * self.n_freq] + [self.width] * self.depth + [4]
        self.weights, self.biases = [], []
        for fan_in, fan_out in zip(sizes[:-1], sizes[1:]):
            limit = np.sqrt(6.0 / (fan_in + fan_out))
            W = rng.uniform(-limit, limit, size=(fan_out, fan_in))
            self.weights.append(torch.tensor(W, dtype=DTYPE, requires_grad=True))
            self.biases.append(torch.zeros(fan_out, dtype=DTYPE, requires_grad=True))

    # -------------------------------------------------------------- params
    @property
    def parameters(self) -> list:
        out = []
        for W, b in zip(self.weights, self.biases):
            out += [W, b]
        return out

    @property
    def n_parameters(self) -> int:
        return sum(p.numel() for p in self.parameters)

    def get_flat(self) -> torch.Tensor:
        return torch.cat([p.detach().reshape(-1) for p in self.parameters])

    def set_flat(self, flat) -> None:
        flat = torch.as_tensor(flat, dtype=DTYPE)
        i = 0
        with torch.no_grad():
            for p in self.parameters:
                n = p.numel()
                p.copy_(flat[i : i + n].reshape(p.shape))
                i += n

    def arch(self) -> dict:
        return {"width": self.width, "depth": self.depth, "n_freq": self.n_freq,
                "f_min": self.f_min, "f_max": self.f_max, "layout": self.layout}

    # ----------------------------------------------------------- embedding
    def embed(self, x) -> torch.Tensor:
        x = torch.as_tensor(x, dtype=DTYPE)
        z = 2 * np.pi * x @ self.B.T
        return torch.cat([torch.sin(z), torch.cos(z)], dim=-1)

    # ------------------------------------------------------------- forward
    def evaluate(self, x, order: str = "value") -> FieldEval:
        """Fused evaluation up to the requested derivative order.

        ``order`` is one of ``value``, ``jacobian``, ``laplacian`` (Jacobian plus
        velocity Laplacian, carried as one channel) and ``hessian`` (full second
        derivatives). Channels are stacked as ``(C, N, width)`` so each layer is a
        single matrix product.
        """
        if order not in ORDERS:
            raise ValueError(f"order must be one of {ORDERS}")
        lvl = ORDERS.index(order)
        x = torch.as_tensor(x, dtype=DTYPE)
        c = 2 * np.pi * self.B  # (m, 3): dz/dx
        z = x @ c.T
        s, co = torch.sin(z), torch.cos(z)
        chans = [torch.cat([s, co], dim=-1)]
        if lvl >= 1:
            chans += [torch.cat([co * c[:, i], -s * c[:, i]], dim=-1) for i in range(3)]
        if lvl == 2:
            c2 = (c * c).sum(dim=1)
            chans.append(torch.cat([-s * c2, -co * c2], dim=-1))
        elif lvl == 3:
            chans += [torch.cat([-s * (c[:, i] * c[:, j]), -co * (c[:, i] * c[:, j])], dim=-1) for i, j in _PAIRS]
        Z = torch.stack(chans)
        for W, b in zip(self.weights[:-1], self.biases[:-1]):
            A = Z @ W.T
            t = torch.tanh(A[0] + b)
            if lvl == 0:
                Z = t[None]
                continue
            d1 = 1 - t * t
            J = A[1:4]
            out = [t[None], d1 * J]
            if lvl == 2:
                # lap' = d1 * (W lap) + d2 * sum_i (W J_i)^2
                out.append((d1 * A[4] - 2 * t * d1 * (J * J).sum(dim=0))[None])
            elif lvl == 3:
                d2 = -2 * t * d1
                out.append(torch.stack([d1 * A[4 + q] + d2 * J[i] * J[j] for q, (i, j) in enumerate(_PAIRS)]))
            Z = torch.cat(out)
        W, b = self.weights[-1], self.biases[-1]
        O = Z @ W.T
        ev = FieldEval(u=O[0, :, :3] + b[:3], p=O[0, :, 3] + b[3])
        if lvl >= 1:
            ev.jac = O[1:4].permute(1, 2, 0)  # (N, 4, 3)
        if lvl == 2:
            ev.lap = O[4, :, :3]
        if lvl == 3:
            Hu = O[4:, :, :3]  # (6, N, 3)
            full = torch.empty((x.shape[0], 3, 3, 3), dtype=DTYPE)
            for q, (i, j) in enumerate(_PAIRS):
                full[:, :, i, j] = Hu[q]
                full[:, :, j, i] = Hu[q]
            ev.hess = full
            ev.lap = Hu[0] + Hu[1] + Hu[2]
        return ev

    def __call__(self, x):
        ev = self.evaluate(x)
        return ev.u, ev.p

    def forward(self, x):
        """``(u, p)`` as detached numpy arrays; checks parameters are finite."""
        if not all(torch.isfinite(p).all() for p in self.parameters):
            raise NumericError("model parameters contain non-finite values")
        with torch.no_grad():
            u, p = self(x)
        return u.numpy(), p.numpy()

    def input_jacobian(self, x) -> np.ndarray:
        with torch.no_grad():
            return self.evaluate(x, "jacobian").jac.numpy()

    def velocity_second_derivatives(self, x) -> np.ndarray:
        with torch.no_grad():
            return self.evaluate(x, "hessian").hess.numpy()

    # --------------------------------------------------------- checkpoints
    def save(self, path, extra_sections: dict | None = None) -> None:
        """Write the versioned text checkpoint (17 significant digits)."""
        lines = [CKPT_MAGIC]
        a = self.arch()
        lines += [f"width {a['width']}", f"depth {a['depth']}", f"in_features {2 * a['n_freq']}",
                  "out_features 4", "activation tanh", "embedding linear-fourier",
                  f"layout {a['layout']}", f"n_freq {a['n_freq']}", f"f_min {a['f_min']!r}",
                  f"f_max {a['f_max']!r}"]
        freqs = np.linspace(a["f_min"], a["f_max"], a["n_freq"])
        lines.append("frequencies " + " ".join(f"{v:.17g}" for v in freqs))
        for k, (W, b) in enumerate(zip(self.weights, self.biases)):
            lines.append(f"[layer {k} weight {W.shape[0]} {W.shape[1]}]")
            lines += [" ".join(f"{v:.17g}" for v in row) for row in W.detach().numpy()]
            lines.append(f"[layer {k} bias {b.shape[0]}]")
            lines.append(" ".join(f"{v:.17g}" for v in b.detach().numpy()))
        for name, arr in (extra_sections or {}).items():
            arr = np.atleast_1d(np.asarray(arr, dtype=float))
            lines.append(f"[extra {name} {arr.size}]")
            lines.append(" ".join(f"{v:.17g}" for v in arr.ravel()))
        lines.append("[end]")
        Path(path).write_text("\n".join(lines) + "\n")

    @classmethod
    def load(cls, path):
        """Return ``(model, extra_sections)`` from a checkpoint file."""
        text = Path(path).read_text().splitlines()
        if not text or text[0].strip() != CKPT_MAGIC:
            raise ConfigError(f"{path}: not a '{CKPT_MAGIC}' checkpoint")
        header, i = {}, 1
        while i < len(text) and not text[i].startswith("["):
            key, _, val = text[i].partition(" ")
            header[key] = val
            i += 1
        model = cls(width=int(header["width"]), depth=int(header["depth"]), n_freq=int(header["n_freq"]),
                    f_min=float(header["f_min"]), f_max=float(header["f_max"]), layout=header["layout"])
        extras = {}
        while i < len(text):
            tag = text[i].strip("[]").split()
            i += 1
            if tag[0] == "end":
                break
            if tag[0] == "layer":
                k, kind = int(tag[1]), tag[2]
                if kind == "weight":
                    rows, cols = int(tag[3]), int(tag[4])
                    vals = np.array([[float(v) for v in text[i + r].split()] for r in range(rows)])
                    i += rows
                    if vals.shape != (rows, cols):
                        raise ConfigError(f"{path}: bad shape for layer {k} weights")
                    with torch.no_grad():
                        model.weights[k].copy_(torch.tensor(vals, dtype=DTYPE))
                else:
                    vals = np.array([float(v) for v in text[i].split()])
                    i += 1
                    with torch.no_grad():
                        model.biases[k].copy_(torch.tensor(vals, dtype=DTYPE))
            elif tag[0] == "extra":
                extras[tag[1]] = np.array([float(v) for v in text[i].split()])
                i += 1
        return model, extras


def parameter_gradient(model: FieldModel, loss_fn) -> tuple[torch.Tensor, torch.Tensor]:
    """Loss value and its flat gradient over all model parameters.

    ``loss_fn(model)`` must return a scalar tensor built from ``model.evaluate``.
    """
    loss = loss_fn(model)
    if not torch.isfinite(loss):
        raise NumericError(f"loss is not finite ({float(loss.detach())})")
    grads = torch.autograd.grad(loss, model.parameters, allow_unused=True)
    flat = torch.cat([(g if g is not None else torch.zeros_like(p)).reshape(-1)
                      for g, p in zip(grads, model.parameters)])
    return loss.detach(), flat
