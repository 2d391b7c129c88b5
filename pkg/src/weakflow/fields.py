"""Analytic flow fields sharing the :class:`~weakflow.model.FieldEval` interface.

These act as manufactured solutions: any object with an
``evaluate(x, order)`` method returning a ``FieldEval`` can be fed to the
residual operators, the trainer diagnostics and the evaluation tools.
"""

from __future__ import annotations

import numpy as np
import torch

from .errors import DomainError, NumericError
from .model import DTYPE, ORDERS, FieldEval


class QuadraticField:
    """``u_i = b_i + A_ij x_j + 1/2 x^T Q_i x`` and ``p = p0 + g . x``.

    Covers constant, linear and quadratic oracle fields. The divergence is
    affine in x, so its integral over a ball is ``div(center) * volume``.
    """

    def __init__(self, b=(0, 0, 0), A=None, Q=None, p0=0.0, grad_p=(0, 0, 0), name="quadratic"):
        self.b = np.asarray(b, dtype=float)
        self.A = np.zeros((3, 3)) if A is None else np.asarray(A, dtype=float)
        Q = np.zeros((3, 3, 3)) if Q is None else np.asarray(Q, dtype=float)
        self.Q = 0.5 * (Q + Q.transpose(0, 2, 1))
        self.p0 = float(p0)
        self.grad_p = np.asarray(grad_p, dtype=float)
        self.name = name

    def divergence(self, x) -> np.ndarray:
        x = np.atleast_2d(x)
        return np.trace(self.A) + np.einsum("iij,nj->n", self.Q, x)

    def evaluate(self, x, order: str = "value") -> FieldEval:
        lvl = ORDERS.index(order)
        xt = torch.as_tensor(x, dtype=DTYPE)
        b, A, Q = (torch.tensor(v, dtype=DTYPE) for v in (self.b, self.A, self.Q))
        gp = torch.tensor(self.grad_p, dtype=DTYPE)
        u = b + xt @ A.T + 0.5 * torch.einsum("ijk,nj,nk->ni", Q, xt, xt)
        ev = FieldEval(u=u, p=self.p0 + xt @ gp)
        if lvl >= 1:
            Ju = A + torch.einsum("ijk,nk->nij", Q, xt)
            ev.jac = torch.cat([Ju, gp.expand(len(xt), 1, 3)], dim=1)
        if lvl >= 2:
            ev.lap = torch.einsum("ijj->i", Q).expand(len(xt), 3).clone()
        if lvl == 3:
            ev.hess = Q.expand(len(xt), 3, 3, 3).clone()
        return ev


def constant_field(u=(1.0, 0.0, 0.0), p=0.0) -> QuadraticField:
    return QuadraticField(b=u, p0=p, name="constant")


def linear_field() -> QuadraticField:
    """``u = (x, y, z)``: divergence 3."""
    return QuadraticField(A=np.eye(3), name="linear")


def rotation_field() -> QuadraticField:
    """``u = (-y, x, 0)``: divergence free."""
    A = np.zeros((3, 3))
    A[0, 1], A[1, 0] = -1.0, 1.0
    return QuadraticField(A=A, name="rotation")


def quadratic_field() -> QuadraticField:
    """``u = (x^2, 0, 0)``: divergence 2x."""
    Q = np.zeros((3, 3, 3))
    Q[0, 0, 0] = 2.0
    return QuadraticField(Q=Q, name="quadratic")


def oracle_fields() -> list[QuadraticField]:
    return [constant_field(), linear_field(), rotation_field(), quadratic_field()]


class HagenPoiseuille:
    """Fully developed laminar pipe flow along x.

    ``u_x = G/(4 nu) (R^2 - rho^2)``, ``p = p_out + G (x_out - x)`` with
    ``rho^2 = (y - c_y)^2 + (z - c_z)^2`` and unit density.
    """

    def __init__(self, radius=0.4, pressure_gradient=None, nu=0.01, axis=(0.5, 0.5), x_out=5.0, p_out=0.0,
                 mean_velocity=None, self_check=True):
        if radius <= 0 or nu <= 0:
            raise DomainError("radius and viscosity must be positive")
        if pressure_gradient is None:
            mean_velocity = 1.0 if mean_velocity is None else mean_velocity
            pressure_gradient = 8.0 * nu * mean_velocity / radius**2
        self.R, self.G, self.nu = float(radius), float(pressure_gradient), float(nu)
        self.axis = np.asarray(axis, dtype=float)
        self.x_out, self.p_out = float(x_out), float(p_out)
        if self_check:
            self.check()

    @classmethod
    def for_reynolds(cls, radius=0.4, re=100.0, mean_velocity=1.0, **kw):
        return cls(radius=radius, nu=1.0 / re, mean_velocity=mean_velocity, **kw)

    @property
    def centerline_velocity(self) -> float:
        return self.G * self.R**2 / (4 * self.nu)

    @property
    def mean_velocity(self) -> float:
        return 0.5 * self.centerline_velocity

    @property
    def flow_rate(self) -> float:
        return np.pi * self.G * self.R**4 / (8 * self.nu)

    def inlet_velocity(self, points) -> np.ndarray:
        pts = np.atleast_2d(points)
        r2 = ((pts[:, 1:] - self.axis) ** 2).sum(axis=1)
        out = np.zeros((len(pts), 3))
        out[:, 0] = self.G / (4 * self.nu) * (self.R**2 - r2)
        return out

    def evaluate(self, x, order: str = "value") -> FieldEval:
        lvl = ORDERS.index(order)
        xt = torch.as_tensor(x, dtype=DTYPE)
        n = len(xt)
        k = self.G / (4 * self.nu)
        dy = xt[:, 1] - self.axis[0]
        dz = xt[:, 2] - self.axis[1]
        u = torch.zeros((n, 3), dtype=DTYPE)
        u[:, 0] = k * (self.R**2 - dy * dy - dz * dz)
        ev = FieldEval(u=u, p=self.p_out + self.G * (self.x_out - xt[:, 0]))
        if lvl >= 1:
            jac = torch.zeros((n, 4, 3), dtype=DTYPE)
            jac[:, 0, 1] = -2 * k * dy
            jac[:, 0, 2] = -2 * k * dz
            jac[:, 3, 0] = -self.G
            ev.jac = jac
        if lvl >= 2:
            lap = torch.zeros((n, 3), dtype=DTYPE)
            lap[:, 0] = -4 * k
            ev.lap = lap
        if lvl == 3:
            hess = torch.zeros((n, 3, 3, 3), dtype=DTYPE)
            hess[:, 0, 1, 1] = hess[:, 0, 2, 2] = -2 * k
            ev.hess = hess
        return ev

    def check(self, n=100, seed=0, tol=1e-10) -> None:
        """Strong residuals vanish at random points inside the pipe."""
        from .residuals import strong_continuity, strong_momentum

        rng = np.random.default_rng(seed)
        t = rng.uniform(0, 2 * np.pi, n)
        r = self.R * np.sqrt(rng.uniform(0, 1, n))
        x = np.column_stack([rng.uniform(0, self.x_out, n), self.axis[0] + r * np.cos(t),
                             self.axis[1] + r * np.sin(t)])
        rc = np.abs(strong_continuity(self, x)).max()
        rm = np.abs(strong_momentum(self, x, 1.0 / self.nu)).max()
        if rc > tol or rm > tol * max(1.0, self.G):
            raise NumericError(f"reference pipe flow fails its self-check (|r_c|={rc:.3g}, |r_m|={rm:.3g})")
