"""Strong-form, boundary and weak-form (control-volume flux) residuals.

Fields are anything exposing ``evaluate(x, order) -> FieldEval``. Tensor-level
functions (``*_terms`` and the batched CV functions) keep the autograd graph
for training; the public wrappers return numpy arrays.
"""

from __future__ import annotations

import csv
import logging
from dataclasses import dataclass, field as dc_field
from typing import Callable, Sequence

import numpy as np
import torch

from .control_volume import ControlVolume, mc_error_estimate, surface_integral
from .errors import DomainError
from .geometry import BoundarySamples
from .model import DTYPE, FieldEval

log = logging.getLogger(__name__)


class EvalCounter:
    """Counts weak-momentum evaluations (in control volumes)."""

    def __init__(self):
        self.weak_momentum = 0

    def reset(self) -> None:
        self.weak_momentum = 0


COUNTER = EvalCounter()


# ----------------------------------------------------------------- strong form
def continuity_terms(ev: FieldEval) -> torch.Tensor:
    return ev.jac[:, 0, 0] + ev.jac[:, 1, 1] + ev.jac[:, 2, 2]


def momentum_terms(ev: FieldEval, re: float) -> torch.Tensor:
    Ju = ev.jac[:, :3, :]
    adv = torch.einsum("nij,nj->ni", Ju, ev.u)
    return adv + ev.jac[:, 3, :] - ev.lap / re


def _check_re(re: float) -> None:
    if not re > 0:
        raise DomainError(f"Reynolds number must be positive, got {re}")


def strong_continuity(field, x) -> np.ndarray:
    """Pointwise velocity divergence."""
    with torch.no_grad():
        return continuity_terms(field.evaluate(np.atleast_2d(x), "jacobian")).numpy()


def strong_momentum(field, x, re: float) -> np.ndarray:
    """Pointwise ``(u.grad)u + grad p - lap(u)/Re``, shape (N, 3)."""
    _check_re(re)
    with torch.no_grad():
        return momentum_terms(field.evaluate(np.atleast_2d(x), "laplacian"), re).numpy()


# ---------------------------------------------------------- boundary conditions
@dataclass
class BoundaryConditions:
    """Inlet velocity profile and outlet pressure."""

    inlet: Callable | None = None
    p_out: float = 0.0
    uniform_inlet: Sequence[float] = (1.0, 0.0, 0.0)

    def inlet_velocity(self, points) -> np.ndarray:
        pts = np.atleast_2d(points)
        if self.inlet is None:
            return np.tile(np.asarray(self.uniform_inlet, dtype=float), (len(pts), 1))
        out = np.asarray(self.inlet(pts), dtype=float)
        if not np.isfinite(out).all():
            raise DomainError("inlet velocity is not finite on the inlet samples")
        return out


def bc_terms(field, inlet_pts, inlet_target, outlet_pts, p_out, wall_pts):
    """Mean-squared inlet, outlet and wall mismatches as tensors (empty set -> 0)."""
    zero = torch.zeros((), dtype=DTYPE)
    terms = []
    for name, pts in (("inlet", inlet_pts), ("outlet", outlet_pts), ("wall", wall_pts)):
        if pts is None or len(pts) == 0:
            log.warning("no %s samples; its boundary loss is set to 0", name)
            terms.append(zero)
            continue
        ev = field.evaluate(pts, "value")
        if name == "inlet":
            terms.append(((ev.u - torch.as_tensor(inlet_target, dtype=DTYPE)) ** 2).sum(dim=1).mean())
        elif name == "outlet":
            terms.append(((ev.p - p_out) ** 2).mean())
        else:
            terms.append((ev.u**2).sum(dim=1).mean())
    return tuple(terms)


def bc_residuals(field, samples: BoundarySamples, conditions: BoundaryConditions) -> tuple:
    """``(L_in, L_out, L_w)`` for samples labelled by region."""
    inl = samples.select("inlet").points
    with torch.no_grad():
        t = bc_terms(field, inl, conditions.inlet_velocity(inl) if len(inl) else None,
                     samples.select("outlet").points, conditions.p_out, samples.select("wall").points)
    return tuple(float(v) for v in t)


# ------------------------------------------------------------------ weak form
def continuity_integrand(field):
    def g(points, normals):
        with torch.no_grad():
            u = field.evaluate(points, "value").u.numpy()
        return (u * normals).sum(axis=1)

    return g


def momentum_integrand(field, re: float):
    def g(points, normals):
        with torch.no_grad():
            ev = field.evaluate(points, "jacobian")
        return flux_dot_normal(ev, torch.as_tensor(normals, dtype=DTYPE), re).numpy()

    return g


def flux_dot_normal(ev: FieldEval, n: torch.Tensor, re: float) -> torch.Tensor:
    # (u (x) u + p I - grad(u)/Re) n, with (grad u n)_i = sum_j d_j u_i n_j
    un = (ev.u * n).sum(dim=1, keepdim=True)
    visc = torch.einsum("nij,nj->ni", ev.jac[:, :3, :], n)
    return ev.u * un + ev.p[:, None] * n - visc / re


def weak_continuity(field, cv: ControlVolume) -> float:
    """Net volume flux through the boundary of ``cv``."""
    return float(surface_integral(cv, continuity_integrand(field)))


def weak_momentum(field, cv: ControlVolume, re: float) -> np.ndarray:
    """Net momentum flux (convective, pressure, viscous) through the boundary of ``cv``."""
    _check_re(re)
    COUNTER.weak_momentum += 1
    return np.asarray(surface_integral(cv, momentum_integrand(field, re)), dtype=float)


@dataclass
class CVBatch:
    """Samples of many control volumes packed for one batched evaluation."""

    points: torch.Tensor
    normals: torch.Tensor
    weights: torch.Tensor
    owner: torch.Tensor
    centers: np.ndarray
    radius: float
    n_cv: int
    cvs: list = dc_field(default_factory=list, repr=False)

    @classmethod
    def from_cvs(cls, cvs: list[ControlVolume], radius: float | None = None) -> "CVBatch":
        if not cvs:
            empty = torch.zeros((0, 3), dtype=DTYPE)
            return cls(empty, empty.clone(), torch.zeros(0, dtype=DTYPE), torch.zeros(0, dtype=torch.long),
                       np.zeros((0, 3)), float(radius or 0.0), 0, [])
        pts = np.concatenate([cv.points for cv in cvs])
        nrm = np.concatenate([cv.normals for cv in cvs])
        w = np.concatenate([cv.weights for cv in cvs])
        owner = np.repeat(np.arange(len(cvs)), [cv.k_sph + cv.k_bdry for cv in cvs])
        return cls(torch.tensor(pts, dtype=DTYPE), torch.tensor(nrm, dtype=DTYPE), torch.tensor(w, dtype=DTYPE),
                   torch.tensor(owner, dtype=torch.long), np.array([cv.center for cv in cvs]),
                   float(cvs[0].radius if radius is None else radius), len(cvs), list(cvs))

    def reduce(self, per_sample: torch.Tensor) -> torch.Tensor:
        """Weighted per-CV sum (sequential index_add: order fixed on CPU)."""
        shape = (self.n_cv,) + tuple(per_sample.shape[1:])
        w = self.weights if per_sample.dim() == 1 else self.weights[:, None]
        return torch.zeros(shape, dtype=DTYPE).index_add(0, self.owner, per_sample * w)


def weak_continuity_batch(field, cvb: CVBatch, ev: FieldEval | None = None) -> torch.Tensor:
    """``R_c`` for every CV in the batch, shape (n_cv,)."""
    if cvb.n_cv == 0:
        return torch.zeros(0, dtype=DTYPE)
    ev = field.evaluate(cvb.points, "value") if ev is None else ev
    return cvb.reduce((ev.u * cvb.normals).sum(dim=1))


def weak_momentum_batch(field, cvb: CVBatch, re: float, ev: FieldEval | None = None) -> torch.Tensor:
    """``R_m`` for every CV in the batch, shape (n_cv, 3)."""
    _check_re(re)
    if cvb.n_cv == 0:
        return torch.zeros((0, 3), dtype=DTYPE)
    COUNTER.weak_momentum += cvb.n_cv
    ev = field.evaluate(cvb.points, "jacobian") if ev is None or ev.jac is None else ev
    return cvb.reduce(flux_dot_normal(ev, cvb.normals, re))


def write_residual_csv(field, cvs: list[ControlVolume], re: float, path) -> None:
    """Per-CV diagnostics: ``R_c``, ``|R_m|`` and the continuity MC error."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["cx", "cy", "cz", "r", "R_c", "R_m_norm", "mc_err_c"])
        gc = continuity_integrand(field)
        for cv in cvs:
            rc = float(surface_integral(cv, gc))
            rm = float(np.linalg.norm(weak_momentum(field, cv, re)))
            err = float(mc_error_estimate(cv, gc))
            w.writerow([*(repr(float(v)) for v in cv.center), repr(cv.radius), repr(rc), repr(rm), repr(err)])
