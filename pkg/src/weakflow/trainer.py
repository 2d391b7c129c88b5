"""Two-stage training: strong + boundary + weak continuity losses, then weak momentum.

The weak-momentum term is gated: before the switch epoch it is not evaluated
at all. The learning rate drops from the stage-1 to the stage-2 value at the
same epoch. Epochs are 0-based; an epoch is one pass over the interior
collocation points in mini-batches, with boundary samples and control volumes
used in full at every step.
"""

from __future__ import annotations

import csv
import json
import logging
import platform
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch

from . import __version__
from .config import SCALES, TrainConfig
from .control_volume import BoundaryPool, build_cv_set
from .errors import ConfigError, NumericError
from .fields import HagenPoiseuille
from .geometry import LevelSetGeometry, geometry_from_config, sample_inlet_outlet, sample_wall_surface
from .model import DTYPE, FieldModel
from .placement import PlacementPlan, Skeleton, make_plan, rejection_sample_interior
from .residuals import (
    COUNTER,
    BoundaryConditions,
    CVBatch,
    bc_terms,
    continuity_terms,
    flux_dot_normal,
    momentum_terms,
    weak_continuity_batch,
    weak_momentum_batch,
)

log = logging.getLogger(__name__)

SCALE_TAGS = {"large": "L", "medium": "M", "small": "S"}
LOG_COLUMNS = ["epoch", "gate", "lr", "L_sf", "L_in", "L_out", "L_w", "L_wkc_L", "L_wkc_M", "L_wkc_S",
               "L_wkm_L", "L_wkm_M", "L_wkm_S", "total"]
DEVIATIONS = [
    "optimizer: Adam (beta1=0.9, beta2=0.999, eps=1e-8) in place of SOAP",
    "interior collocation mini-batched; boundary samples and control volumes full-batch",
    "medium-scale centers from an approximate medial-axis skeleton (distance ascent)",
]


# --------------------------------------------------------------- conditions
def build_conditions(config: TrainConfig, geometry: LevelSetGeometry) -> BoundaryConditions:
    ph = config.physics
    if ph.inlet == "uniform":
        return BoundaryConditions(p_out=ph.p_out, uniform_inlet=tuple(float(v) for v in ph.inlet_velocity))
    if geometry.kind != "circular_pipe":
        raise ConfigError("physics.inlet 'poiseuille' requires geometry.kind 'circular_pipe'")
    hp = HagenPoiseuille.for_reynolds(geometry.pipe_radius, ph.re, mean_velocity=float(ph.inlet_velocity[0]),
                                      axis=geometry.axis, x_out=float(geometry.hi[0]), p_out=ph.p_out)
    return BoundaryConditions(inlet=hp.inlet_velocity, p_out=ph.p_out)


# -------------------------------------------------------------------- batch
@dataclass
class TrainingBatch:
    interior: torch.Tensor
    inlet: torch.Tensor
    inlet_target: torch.Tensor
    outlet: torch.Tensor
    wall: torch.Tensor
    cvs: dict
    p_out: float
    plan: PlacementPlan | None = None
    pool: BoundaryPool | None = field(default=None, repr=False)

    def counts(self) -> dict:
        out = {"interior": len(self.interior), "inlet": len(self.inlet), "outlet": len(self.outlet),
               "wall": len(self.wall)}
        out.update({f"cv_{s}": self.cvs[s].n_cv for s in SCALES})
        return out


def _t(a) -> torch.Tensor:
    return torch.as_tensor(np.ascontiguousarray(a), dtype=DTYPE)


def build_cv_batches(geometry, config: TrainConfig, plan: PlacementPlan, pool: BoundaryPool, seed) -> dict:
    ss = seed if isinstance(seed, np.random.SeedSequence) else np.random.SeedSequence(seed)
    seeds = ss.spawn(len(SCALES))
    out = {}
    for scale, s in zip(SCALES, seeds):
        tag = SCALE_TAGS[scale]
        centers, r = plan.centers(tag), plan.radius(tag)
        cvs = build_cv_set(geometry, centers, r, pool, config.cv.n_sphere_draws, s, config.cv.min_accept,
                           config.cv.max_boundary_samples) if len(centers) else []
        out[scale] = CVBatch.from_cvs(cvs, r)
    return out


def make_placement(geometry, config: TrainConfig) -> PlacementPlan:
    c = config.cv
    skeleton = Skeleton.from_csv(c.skeleton) if c.skeleton else None
    return make_plan(geometry, c.n_large, c.n_medium, c.n_small,
                     np.random.SeedSequence(config.seed_for("placement")),
                     radii=None if c.radius_rule else config.radii(), alpha_l=c.alpha_l, alpha_m=c.alpha_m,
                     beta=c.beta, skeleton=skeleton, skeleton_seeds=c.skeleton_seeds)


def sample_training_batch(geometry: LevelSetGeometry, config: TrainConfig, seed=None,
                          conditions: BoundaryConditions | None = None,
                          plan: PlacementPlan | None = None) -> TrainingBatch:
    """Static collocation set: interior, inlet, outlet and wall samples plus the
    three control-volume scales. Same seed, same batch."""
    s = config.sampling
    root = np.random.SeedSequence(config.seed_for("batch") if seed is None else seed)
    s_int, s_in, s_out, s_w, s_pool, s_cv = root.spawn(6)
    conditions = conditions or build_conditions(config, geometry)
    interior = rejection_sample_interior(geometry, s.n_interior, np.random.default_rng(s_int))
    inlet = sample_inlet_outlet(geometry, s.n_inlet, "inlet", np.random.default_rng(s_in)).points
    outlet = sample_inlet_outlet(geometry, s.n_outlet, "outlet", np.random.default_rng(s_out)).points
    wall = sample_wall_surface(geometry, s.n_wall, np.random.default_rng(s_w)).points
    plan = plan or make_placement(geometry, config)
    pool = BoundaryPool.build(geometry, config.cv.wall_pool_size, s_pool, config.cv.pool_regions)
    cvs = build_cv_batches(geometry, config, plan, pool, s_cv)
    return TrainingBatch(_t(interior), _t(inlet), _t(conditions.inlet_velocity(inlet)), _t(outlet), _t(wall),
                         cvs, float(conditions.p_out), plan, pool)


# --------------------------------------------------------------------- loss
@dataclass
class LossReport:
    """Loss terms for one step (or the step average over an epoch).

    Per-scale weak terms are unweighted means of squared residuals; the
    aggregates ``L_bc``, ``L_wkc`` and ``L_wkm`` carry the loss weights.
    """

    epoch: int
    gate: int
    lr: float
    L_sf: float
    L_in: float
    L_out: float
    L_w: float
    L_bc: float
    wkc: dict
    wkm: dict
    L_wkc: float
    L_wkm: float
    total: float
    wkm_evals: int = 0

    def reconstruct(self) -> float:
        return self.L_sf + self.L_bc + self.L_wkc + self.gate * self.L_wkm

    def row(self) -> list:
        vals = [self.L_sf, self.L_in, self.L_out, self.L_w]
        vals += [self.wkc[s] for s in SCALES] + [self.wkm[s] for s in SCALES] + [self.total]
        return [self.epoch, self.gate, repr(float(self.lr))] + [repr(float(v)) for v in vals]

    @staticmethod
    def mean(reports: list["LossReport"]) -> "LossReport":
        r0 = reports[0]
        if len(reports) == 1:
            return r0
        avg = lambda name: float(np.mean([getattr(r, name) for r in reports]))  # noqa: E731
        return LossReport(
            epoch=r0.epoch, gate=r0.gate, lr=r0.lr, L_sf=avg("L_sf"), L_in=avg("L_in"), L_out=avg("L_out"),
            L_w=avg("L_w"), L_bc=avg("L_bc"),
            wkc={s: float(np.mean([r.wkc[s] for r in reports])) for s in SCALES},
            wkm={s: float(np.mean([r.wkm[s] for r in reports])) for s in SCALES},
            L_wkc=avg("L_wkc"), L_wkm=avg("L_wkm"), total=avg("total"),
            wkm_evals=sum(r.wkm_evals for r in reports),
        )


def gate_value(t: int, t_switch: int) -> int:
    return 1 if t >= t_switch else 0


def _finite(name: str, value: torch.Tensor) -> torch.Tensor:
    if not torch.isfinite(value):
        raise NumericError(f"loss term {name} is not finite ({float(value.detach())})")
    return value


def total_loss(model, batch: TrainingBatch, config: TrainConfig, t: int, interior=None, gate=None,
               lr: float = float("nan")):
    """Stage-gated objective and its :class:`LossReport`.

    ``interior`` overrides the interior collocation points (mini-batch);
    ``gate`` overrides the fixed-epoch schedule.
    """
    w = config.loss
    re = config.physics.re
    g = gate_value(t, config.optim.t_switch) if gate is None else int(gate)
    x = batch.interior if interior is None else interior
    zero = torch.zeros((), dtype=DTYPE)

    if len(x):
        ev = model.evaluate(x, "laplacian")
        rc = continuity_terms(ev)
        rm = momentum_terms(ev, re)
        L_sf = _finite("L_sf", (w.w_continuity * rc**2 + w.w_momentum * (rm**2).sum(dim=1)).mean())
    else:
        L_sf = zero
    L_in, L_out, L_w = bc_terms(model, batch.inlet, batch.inlet_target, batch.outlet, batch.p_out, batch.wall)
    for name, v in (("L_in", L_in), ("L_out", L_out), ("L_w", L_w)):
        _finite(name, v)
    L_bc = w.w_inlet * L_in + w.w_outlet * L_out + w.w_wall * L_w

    wkc, wkm = {}, {}
    L_wkc, L_wkm = zero, zero
    evals0 = COUNTER.weak_momentum
    for scale in SCALES:
        cvb = batch.cvs[scale]
        if cvb.n_cv == 0:
            wkc[scale] = wkm[scale] = zero
            continue
        ev_cv = model.evaluate(cvb.points, "jacobian" if g else "value")
        Rc = weak_continuity_batch(model, cvb, ev_cv)
        wkc[scale] = _finite(f"L_wkc_{SCALE_TAGS[scale]}", (Rc**2).mean())
        L_wkc = L_wkc + w.wk_continuity.get(scale) * wkc[scale]
        if g:
            Rm = weak_momentum_batch(model, cvb, re, ev_cv)
            wkm[scale] = _finite(f"L_wkm_{SCALE_TAGS[scale]}", (Rm**2).sum(dim=1).mean())
            L_wkm = L_wkm + w.wk_momentum.get(scale) * wkm[scale]
        else:
            wkm[scale] = zero
    total = L_sf + L_bc + L_wkc + (L_wkm if g else zero)
    _finite("total", total)
    f = lambda v: float(v.detach())  # noqa: E731
    report = LossReport(
        epoch=t, gate=g, lr=lr, L_sf=f(L_sf), L_in=f(L_in), L_out=f(L_out), L_w=f(L_w),
        L_bc=f(L_bc), wkc={s: f(v) for s, v in wkc.items()}, wkm={s: f(v) for s, v in wkm.items()},
        L_wkc=f(L_wkc), L_wkm=f(L_wkm), total=f(total),
        wkm_evals=COUNTER.weak_momentum - evals0,
    )
    return total, report


def _chunks(n: int, size: int):
    for k in range(0, n, size):
        yield slice(k, min(n, k + size))


def _accumulate(acc, loss, params):
    grads = torch.autograd.grad(loss, params, allow_unused=True)
    grads = [torch.zeros_like(p) if g is None else g for g, p in zip(grads, params)]
    return grads if acc is None else [a + g for a, g in zip(acc, grads)]


def loss_and_grad(model, batch: TrainingBatch, config: TrainConfig, t: int, interior=None, gate=None,
                  lr: float = float("nan"), chunk: int | None = None):
    """Same objective as :func:`total_loss`, with its parameter gradient, evaluated
    in chunks of points to bound memory traffic.

    Weak terms are squares of per-CV sums, so they take two passes: residuals
    ``R`` are computed first without the graph, then the surrogate
    ``sum_cv (2 lambda R / n) . R(theta)`` is back-propagated chunk by chunk,
    which has exactly the gradient of ``lambda * mean |R|^2``.
    """
    w = config.loss
    re = config.physics.re
    g = gate_value(t, config.optim.t_switch) if gate is None else int(gate)
    x = batch.interior if interior is None else interior
    chunk = chunk or config.sampling.chunk_size
    params = model.parameters
    grads = None

    L_sf = 0.0
    n = len(x)
    for sl in _chunks(n, chunk):
        ev = model.evaluate(x[sl], "laplacian")
        rc, rm = continuity_terms(ev), momentum_terms(ev, re)
        part = (w.w_continuity * rc**2 + w.w_momentum * (rm**2).sum(dim=1)).sum() / n
        L_sf += float(_finite("L_sf", part.detach()))
        grads = _accumulate(grads, part, params)

    L_in, L_out, L_w = bc_terms(model, batch.inlet, batch.inlet_target, batch.outlet, batch.p_out, batch.wall)
    for name, v in (("L_in", L_in), ("L_out", L_out), ("L_w", L_w)):
        _finite(name, v)
    L_bc_t = w.w_inlet * L_in + w.w_outlet * L_out + w.w_wall * L_w
    grads = _accumulate(grads, L_bc_t, params)

    wkc = {s: 0.0 for s in SCALES}
    wkm = {s: 0.0 for s in SCALES}
    L_wkc = L_wkm = 0.0
    evals0 = COUNTER.weak_momentum
    order = "jacobian" if g else "value"
    for scale in SCALES:
        cvb = batch.cvs[scale]
        if cvb.n_cv == 0:
            continue
        P = len(cvb.points)
        Rc = torch.zeros(cvb.n_cv, dtype=DTYPE)
        Rm = torch.zeros((cvb.n_cv, 3), dtype=DTYPE)
        with torch.no_grad():
            for sl in _chunks(P, chunk):
                ev = model.evaluate(cvb.points[sl], order)
                Rc += _chunk_continuity(cvb, sl, ev)
                if g:
                    Rm += _chunk_momentum(cvb, sl, ev, re)
        if g:
            COUNTER.weak_momentum += cvb.n_cv
        lam_c, lam_m = w.wk_continuity.get(scale), w.wk_momentum.get(scale)
        wkc[scale] = float(_finite(f"L_wkc_{SCALE_TAGS[scale]}", (Rc**2).mean()))
        L_wkc += lam_c * wkc[scale]
        coef_c = 2 * lam_c * Rc / cvb.n_cv
        if g:
            wkm[scale] = float(_finite(f"L_wkm_{SCALE_TAGS[scale]}", (Rm**2).sum(dim=1).mean()))
            L_wkm += lam_m * wkm[scale]
            coef_m = 2 * lam_m * Rm / cvb.n_cv
        for sl in _chunks(P, chunk):
            ev = model.evaluate(cvb.points[sl], order)
            sur = (coef_c * _chunk_continuity(cvb, sl, ev)).sum()
            if g:
                sur = sur + (coef_m * _chunk_momentum(cvb, sl, ev, re)).sum()
            grads = _accumulate(grads, sur, params)

    L_bc = float(L_bc_t.detach())
    total = L_sf + L_bc + L_wkc + (L_wkm if g else 0.0)
    if not np.isfinite(total):
        raise NumericError(f"loss term total is not finite ({total})")
    report = LossReport(
        epoch=t, gate=g, lr=lr, L_sf=L_sf, L_in=float(L_in.detach()), L_out=float(L_out.detach()),
        L_w=float(L_w.detach()), L_bc=L_bc, wkc=wkc, wkm=wkm, L_wkc=L_wkc, L_wkm=L_wkm, total=total,
        wkm_evals=COUNTER.weak_momentum - evals0,
    )
    return report, grads


def _chunk_continuity(cvb: CVBatch, sl: slice, ev) -> torch.Tensor:
    per = (ev.u * cvb.normals[sl]).sum(dim=1) * cvb.weights[sl]
    return torch.zeros(cvb.n_cv, dtype=DTYPE).index_add(0, cvb.owner[sl], per)


def _chunk_momentum(cvb: CVBatch, sl: slice, ev, re: float) -> torch.Tensor:
    per = flux_dot_normal(ev, cvb.normals[sl], re) * cvb.weights[sl, None]
    return torch.zeros((cvb.n_cv, 3), dtype=DTYPE).index_add(0, cvb.owner[sl], per)


# ---------------------------------------------------------------- optimizer
class Optimizer:
    """Minimal interface: in-place parameter update plus serializable state."""

    name = "base"

    def step(self, grads: list, lr: float) -> None:
        raise NotImplementedError

    def state_arrays(self) -> dict:
        return {}

    def load_state(self, state: dict) -> None:
        pass


class Adam(Optimizer):
    name = "adam"

    def __init__(self, params: list, beta1=0.9, beta2=0.999, eps=1e-8):
        self.params = params
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.m = [torch.zeros_like(p, requires_grad=False) for p in params]
        self.v = [torch.zeros_like(p, requires_grad=False) for p in params]
        self.t = 0

    def step(self, grads, lr):
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        c1, c2 = 1 - b1**self.t, 1 - b2**self.t
        with torch.no_grad():
            for p, g, m, v in zip(self.params, grads, self.m, self.v):
                m.mul_(b1).add_(g, alpha=1 - b1)
                v.mul_(b2).addcmul_(g, g, value=1 - b2)
                p.sub_(lr * (m / c1) / (torch.sqrt(v / c2) + self.eps))

    def state_arrays(self):
        return {"adam_step": [self.t],
                "adam_m": torch.cat([m.reshape(-1) for m in self.m]).numpy(),
                "adam_v": torch.cat([v.reshape(-1) for v in self.v]).numpy()}

    def load_state(self, state):
        self.t = int(state["adam_step"][0])
        for name, bufs in (("adam_m", self.m), ("adam_v", self.v)):
            flat = torch.as_tensor(state[name], dtype=DTYPE)
            i = 0
            for b in bufs:
                b.copy_(flat[i : i + b.numel()].reshape(b.shape))
                i += b.numel()


# ---------------------------------------------------------------------- run
@dataclass
class TrainResult:
    model: FieldModel
    history: list
    batch: TrainingBatch
    switch_epoch: int | None
    geometry: LevelSetGeometry


def build_model(config: TrainConfig) -> FieldModel:
    m = config.model
    return FieldModel(m.width, m.depth, m.n_freq, m.f_min, m.f_max, m.layout, seed=config.seed_for("init"))


def _plateaued(history: list, window: int, tol: float) -> bool:
    if len(history) <= window:
        return False
    old, new = history[-window - 1], history[-1]
    return old > 0 and (old - new) / old < tol


def _save_checkpoint(model, opt, path, epoch, switch_epoch, initial_total, wkc_hist):
    extras = {"epoch": [epoch], "switch_epoch": [-1 if switch_epoch is None else switch_epoch],
              "initial_total": [initial_total], "wkc_history": wkc_hist or [0.0]}
    extras.update(opt.state_arrays())
    model.save(path, extras)


def train(config: TrainConfig, out_dir=None, resume=None, geometry: LevelSetGeometry | None = None,
          batch: TrainingBatch | None = None, on_epoch=None) -> TrainResult:
    """Run the two-stage schedule; see the module docstring for the epoch convention."""
    config.validate(require_geometry=geometry is None)
    if config.deterministic:
        torch.use_deterministic_algorithms(True, warn_only=True)
    o = config.optim
    t0 = time.time()
    geometry = geometry or geometry_from_config({**vars(config.geometry), "area_seed": config.seed_for("geometry")})
    batch = batch or sample_training_batch(geometry, config)
    model = build_model(config)
    opt = Adam(model.parameters, o.beta1, o.beta2, o.eps)
    start, switch_epoch, initial_total, wkc_hist = 0, None, None, []
    if o.switch_rule == "fixed":
        switch_epoch = o.t_switch
    if resume is not None:
        loaded, extras = FieldModel.load(resume)
        model.set_flat(loaded.get_flat())
        opt.load_state(extras)
        start = int(extras["epoch"][0])
        sw = int(extras["switch_epoch"][0])
        switch_epoch = None if sw < 0 else sw
        initial_total = float(extras["initial_total"][0])
        wkc_hist = [float(v) for v in extras["wkc_history"]][: start if o.switch_rule == "plateau" else 0]

    out = Path(out_dir) if out_dir is not None else None
    log_fh = writer = None
    if out is not None:
        (out / "checkpoints").mkdir(parents=True, exist_ok=True)
        log_path = out / "loss_log.csv"
        fresh = resume is None or not log_path.exists()
        if not fresh:
            _truncate_log(log_path, start)
        log_fh = open(log_path, "w" if fresh else "a", newline="")
        writer = csv.writer(log_fh)
        if fresh:
            writer.writerow(LOG_COLUMNS)

    n_int = len(batch.interior)
    bs = min(config.sampling.batch_size, n_int)
    batch_seed = config.seed_for("batch")
    history = []
    try:
        for t in range(start, o.epochs):
            if o.switch_rule == "plateau" and switch_epoch is None and t >= o.t_switch:
                switch_epoch = t
            gate = 1 if switch_epoch is not None and t >= switch_epoch else 0
            lr = o.lr_stage2 if gate else o.lr_stage1
            if config.cv.refresh and t > start:
                batch.cvs = build_cv_batches(geometry, config, batch.plan, batch.pool, [batch_seed, 1, t])
            perm = np.random.default_rng([batch_seed, t]).permutation(n_int) if bs < n_int else None
            reports = []
            for k in range(0, n_int, bs):
                xb = batch.interior if perm is None else batch.interior[torch.as_tensor(perm[k : k + bs])]
                rep, grads = loss_and_grad(model, batch, config, t, interior=xb, gate=gate, lr=lr)
                if initial_total is None:
                    initial_total = rep.total
                opt.step(grads, lr)
                reports.append(rep)
            rep = LossReport.mean(reports)
            history.append(rep)
            wkc_hist.append(rep.L_wkc)
            if writer is not None:
                writer.writerow(rep.row())
                log_fh.flush()
            if on_epoch is not None:
                on_epoch(rep)
            if not np.isfinite(rep.total) or rep.total > o.divergence_factor * initial_total:
                _divergence_dump(out, rep, initial_total)
                raise NumericError(f"training diverged at epoch {t}: total {rep.total:.6g} > "
                                   f"{o.divergence_factor:g} x initial {initial_total:.6g}")
            if (o.switch_rule == "plateau" and switch_epoch is None
                    and _plateaued(wkc_hist, o.plateau_window, o.plateau_tol)):
                switch_epoch = t + 1
                log.info("weak continuity plateaued; switching stage at epoch %d", switch_epoch)
            done = t + 1
            if out is not None and (done % o.checkpoint_every == 0 or done == switch_epoch or done == o.epochs):
                _save_checkpoint(model, opt, out / "checkpoints" / f"epoch_{done:06d}.ckpt", done, switch_epoch,
                                 initial_total, wkc_hist if o.switch_rule == "plateau" else None)
    finally:
        if log_fh is not None:
            log_fh.close()

    if out is not None:
        model.save(out / "model_final.ckpt")
        meta = {
            "version": __version__,
            "seeds": {"root": config.seed, **{k: config.seed_for(k) for k in ("geometry", "placement", "batch", "init")}},
            "geometry": {"kind": geometry.kind, "digest": geometry.digest, "areas": _jsonable(geometry.area_breakdown)},
            "counts": batch.counts(),
            "radii": list(batch.plan.radii) if batch.plan is not None else None,
            "switch_epoch": switch_epoch,
            "epochs": o.epochs,
            "deviations": DEVIATIONS,
            "n_parameters": model.n_parameters,
            "runtime_s": time.time() - t0,
            "python": platform.python_version(),
            "torch": torch.__version__,
        }
        (out / "run_metadata.json").write_text(json.dumps(meta, indent=2))
    return TrainResult(model, history, batch, switch_epoch, geometry)


def _truncate_log(path: Path, start: int) -> None:
    """Drop log rows at or after ``start`` so a resumed run appends cleanly."""
    with open(path, newline="") as f:
        rows = list(csv.reader(f))
    keep = [rows[0]] + [r for r in rows[1:] if int(r[0]) < start]
    with open(path, "w", newline="") as f:
        csv.writer(f).writerows(keep)


def _divergence_dump(out: Path | None, rep: LossReport, initial_total: float) -> None:
    if out is None:
        return
    (out / "divergence_dump.json").write_text(json.dumps(
        {"epoch": rep.epoch, "initial_total": initial_total, "report": _jsonable(vars(rep))}, indent=2))


def _jsonable(d: dict) -> dict:
    return {k: (float(v) if isinstance(v, (np.floating, float)) else v) for k, v in d.items()}
