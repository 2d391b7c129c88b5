"""Error metrics, mass-flow profiles, the divergence-theorem self-test and exports."""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch

from .control_volume import BoundaryPool, build_control_volume, mc_error_estimate, surface_integral
from .errors import DomainError, GeometryError
from .fields import HagenPoiseuille, QuadraticField, oracle_fields
from .geometry import LevelSetGeometry, _face_points, distance_to_boundary
from .residuals import continuity_integrand

__all__ = [
    "HagenPoiseuille", "mse", "rel_l2", "field_errors", "mass_flow_rates", "mass_flow_profile",
    "divergence_theorem_selftest", "make_eval_grid", "export_field", "load_field_csv",
    "plot_profile", "plot_history",
]


# ------------------------------------------------------------------- metrics
def mse(pred, ref) -> float:
    pred, ref = np.asarray(pred, dtype=float), np.asarray(ref, dtype=float)
    if pred.shape != ref.shape:
        raise DomainError(f"shape mismatch {pred.shape} vs {ref.shape}")
    return float(np.mean((pred - ref) ** 2))


def rel_l2(pred, ref) -> float:
    """``||pred - ref|| / ||ref||`` over the whole set (a fraction, not percent)."""
    pred, ref = np.asarray(pred, dtype=float), np.asarray(ref, dtype=float)
    if pred.shape != ref.shape:
        raise DomainError(f"shape mismatch {pred.shape} vs {ref.shape}")
    den = np.linalg.norm(ref)
    if den == 0:
        raise DomainError("reference has zero norm; relative error undefined")
    return float(np.linalg.norm(pred - ref) / den)


def _values(field, points):
    with torch.no_grad():
        ev = field.evaluate(np.asarray(points, dtype=float), "value")
    return ev.u.numpy(), ev.p.numpy()


def field_errors(field, reference, points, pressure_shift: bool = False) -> dict:
    """MSE and relative l2 error of speed ``|u|`` and pressure against a reference.

    ``reference`` is a field object or a ``(u, p)`` pair of arrays at ``points``.
    """
    u, p = _values(field, points)
    if isinstance(reference, tuple):
        u_ref, p_ref = (np.asarray(a, dtype=float) for a in reference)
    else:
        u_ref, p_ref = _values(reference, points)
    if pressure_shift:
        p = p - p.mean() + p_ref.mean()
    s, s_ref = np.linalg.norm(u, axis=1), np.linalg.norm(u_ref, axis=1)
    return {"mse_speed": mse(s, s_ref), "rel_l2_speed": rel_l2(s, s_ref),
            "mse_p": mse(p, p_ref), "rel_l2_p": rel_l2(p, p_ref), "n_points": len(points)}


# ---------------------------------------------------------------- mass flow
@dataclass
class FlowRates:
    x: np.ndarray
    q: np.ndarray
    stderr: np.ndarray
    q_in: float
    q_in_stderr: float
    samples_per_station: int

    @property
    def ratio(self) -> np.ndarray:
        return self.q / self.q_in

    def pairs(self) -> list:
        return [(float(a), float(b)) for a, b in zip(self.x, self.ratio)]


def _station_flow(field, geometry, x, uv):
    pts = _face_points(geometry, 0, 0, uv)
    pts[:, 0] = x
    inside = geometry.contains(pts)
    if not inside.any():
        raise GeometryError(f"empty cross-section at x={x:g}")
    ux = np.zeros(len(pts))
    ux[inside] = _values(field, pts[inside])[0][:, 0]
    area = geometry.extents[1] * geometry.extents[2]
    # Q = A_face * mean(u_x * 1[fluid]) over the face samples
    return area * ux.mean(), area * ux.std(ddof=1) / np.sqrt(len(ux))


def mass_flow_rates(field, geometry: LevelSetGeometry, stations: int = 10, samples_per_station: int = 4096,
                    seed=0, x_positions=None) -> FlowRates:
    """Cross-sectional flow rates at evenly spaced interior stations.

    The same random (y, z) samples are reused at every station and at the inlet
    plane, so station-to-station differences are not inflated by sampling noise.
    """
    if stations < 1 or samples_per_station < 2:
        raise DomainError("need stations >= 1 and samples_per_station >= 2")
    x0, x1 = geometry.lo[0], geometry.hi[0]
    xs = np.linspace(x0, x1, stations + 2)[1:-1] if x_positions is None else np.asarray(x_positions, float)
    if np.any(xs <= x0) or np.any(xs >= x1):
        raise DomainError("stations must lie strictly between the inlet and outlet planes")
    uv = np.random.default_rng(seed).random((samples_per_station, 2))
    q_in, e_in = _station_flow(field, geometry, x0, uv)
    if q_in == 0:
        raise DomainError("inlet flow rate is zero")
    q, e = zip(*(_station_flow(field, geometry, x, uv) for x in xs))
    return FlowRates(xs, np.array(q), np.array(e), float(q_in), float(e_in), samples_per_station)


def mass_flow_profile(field, geometry, stations=10, samples_per_station=4096, seed=0) -> list:
    """``[(x, Q(x)/Q_in), ...]`` over evenly spaced stations."""
    return mass_flow_rates(field, geometry, stations, samples_per_station, seed).pairs()


# ------------------------------------------------------ divergence self-test
@dataclass
class SelftestTrial:
    field: str
    center: tuple
    radius: float
    estimate: float
    truth: float
    sigma: float

    @property
    def passed(self) -> bool:
        return abs(self.estimate - self.truth) <= 3 * self.sigma + 1e-12


@dataclass
class SelftestReport:
    geometry: str
    trials: list = field(default_factory=list)

    @property
    def pass_rate(self) -> float:
        return float(np.mean([t.passed for t in self.trials])) if self.trials else 0.0

    def by_field(self) -> dict:
        out = {}
        for t in self.trials:
            out.setdefault(t.field, []).append(t.passed)
        return {k: float(np.mean(v)) for k, v in out.items()}


def _interior_balls(geometry, count, rng, r_min, r_max):
    out = []
    while len(out) < count:
        n = max(64, 4 * (count - len(out)))
        c = geometry.lo + rng.random((n, 3)) * geometry.extents
        c = c[geometry.contains(c)]
        if not len(c):
            continue
        r = rng.uniform(r_min, r_max, len(c))
        ok = distance_to_boundary(geometry, c) > r
        out += list(zip(c[ok], r[ok]))
    return out[:count]


def divergence_theorem_selftest(geometry: LevelSetGeometry, trials: int = 100, seed=0, n_sphere_draws: int = 4096,
                                radius_range=(0.05, 0.2), fields: list[QuadraticField] | None = None,
                                pool: BoundaryPool | None = None) -> SelftestReport:
    """Flux of oracle fields through random fully interior balls vs the analytic
    volume integral of their divergence, judged at 3 MC standard errors."""
    if trials < 1:
        raise DomainError("trials must be >= 1")
    fields = fields or oracle_fields()
    rng = np.random.default_rng(seed)
    balls = _interior_balls(geometry, trials, rng, *radius_range)
    pool = pool or BoundaryPool.build(geometry, 20_000, np.random.SeedSequence([int(rng.integers(2**31)), 1]))
    seeds = np.random.SeedSequence(int(rng.integers(2**31))).spawn(trials)
    report = SelftestReport(geometry.kind)
    for k, ((c, r), s) in enumerate(zip(balls, seeds)):
        f = fields[k % len(fields)]
        cv = build_control_volume(geometry, c, r, n_sphere_draws, pool, s)
        g = continuity_integrand(f)
        truth = float(f.divergence(c)[0]) * 4.0 / 3.0 * np.pi * r**3
        report.trials.append(SelftestTrial(f.name, tuple(map(float, c)), float(r), float(surface_integral(cv, g)),
                                           truth, float(mc_error_estimate(cv, g))))
    return report


# -------------------------------------------------------------- grids & I/O
def make_eval_grid(geometry: LevelSetGeometry, n: int = 32) -> np.ndarray:
    """Cell-centred grid with ``n`` cells across the shortest box side, restricted to the fluid."""
    if n < 1:
        raise DomainError("grid resolution must be >= 1")
    h = geometry.extents.min() / n
    axes = [lo + h * (np.arange(int(round(e / h))) + 0.5) for lo, e in zip(geometry.lo, geometry.extents)]
    pts = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, 3)
    return pts[geometry.contains(pts)]


def export_field(field, points, path) -> None:
    """Write ``x,y,z,u,v,w,p`` at 17 significant digits."""
    points = np.asarray(points, dtype=float)
    u, p = _values(field, points)
    data = np.column_stack([points, u, p])
    np.savetxt(path, data, delimiter=",", header="x,y,z,u,v,w,p", comments="", fmt="%.17g")


def load_field_csv(path):
    """``(points, u, p)`` from an ``x,y,z,u,v,w,p`` CSV."""
    with open(path, newline="") as fh:
        header = next(csv.reader(fh))
    if [h.strip() for h in header] != ["x", "y", "z", "u", "v", "w", "p"]:
        raise DomainError(f"{path}: expected header x,y,z,u,v,w,p")
    data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    return data[:, :3], data[:, 3:6], data[:, 6]


# ------------------------------------------------------------------ figures
def _pyplot():
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    return plt


def plot_profile(profiles: dict, path, title: str = "") -> None:
    """``Q(x)/Q_in`` curves (``{label: [(x, ratio), ...]}``) with the ideal line at 1."""
    plt = _pyplot()
    fig, ax = plt.subplots(figsize=(6, 3.5))
    for label, prof in profiles.items():
        x, q = zip(*prof)
        ax.plot(x, q, marker="o", label=label)
    ax.axhline(1.0, color="k", ls="--", lw=1, label="Q/Q_in = 1")
    ax.set_xlabel("x")
    ax.set_ylabel("Q(x) / Q_in")
    if title:
        ax.set_title(title)
    ax.legend()
    fig.tight_layout()
    fig.savefig(path, format="svg")
    plt.close(fig)


def plot_history(history, path, t_switch: int | None = None, columns=("total", "L_sf", "L_wkc")) -> None:
    """Loss curves on a log scale with a vertical rule at the stage switch.

    ``history`` is a list of LossReport objects or the path of a loss log CSV.
    """
    plt = _pyplot()
    if isinstance(history, (str, Path)):
        with open(history, newline="") as fh:
            rows = list(csv.DictReader(fh))
        epochs = [int(r["epoch"]) for r in rows]
        series = {"total": [float(r["total"]) for r in rows], "L_sf": [float(r["L_sf"]) for r in rows],
                  "L_wkc": [sum(float(r[f"L_wkc_{s}"]) for s in "LMS") for r in rows]}
    else:
        epochs = [r.epoch for r in history]
        series = {"total": [r.total for r in history], "L_sf": [r.L_sf for r in history],
                  "L_wkc": [r.L_wkc for r in history]}
    fig, ax = plt.subplots(figsize=(6, 3.5))
    for name in columns:
        if name in series:
            ax.semilogy(epochs, np.maximum(series[name], 1e-300), label=name)
    if t_switch is not None:
        ax.axvline(t_switch, color="k", ls=":", lw=1, label=f"T_switch = {t_switch}")
    ax.set_xlabel("epoch")
    ax.set_ylabel("loss")
    ax.legend()
    fig.tight_layout()
    fig.savefig(path, format="svg")
    plt.close(fig)
