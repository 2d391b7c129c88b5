"""Implicit fluid domains defined by a level set clipped to an axis-aligned box.

The fluid region is ``{x in box : sign(phi(x)) == fluid_sign}``. Its boundary
is split into the inlet plane ``x = x0``, the outlet plane ``x = x1`` and the
wall, which is the zero set of ``phi`` inside the box plus (optionally) the
fluid part of the four lateral box faces.
"""

from __future__ import annotations

import csv
import hashlib
import json
import logging
from dataclasses import asdict, dataclass, field
from functools import cached_property

import numpy as np
from scipy.spatial import cKDTree

from .errors import ConfigError, DomainError, GeometryError, SamplingError

log = logging.getLogger(__name__)

TWO_PI = 2.0 * np.pi

KINDS = ("primitive", "gyroid", "diamond", "iwp", "circular_pipe", "plane_channel")
TPMS_KINDS = ("primitive", "gyroid", "diamond", "iwp")
_ALIASES = {
    "p": "primitive",
    "schwarz_p": "primitive",
    "g": "gyroid",
    "d": "diamond",
    "circularpipe": "circular_pipe",
    "pipe": "circular_pipe",
    "planechannel": "plane_channel",
    "plane": "plane_channel",
    "channel": "plane_channel",
}

DEFAULT_BOX = ((0.0, 5.0), (0.0, 1.0), (0.0, 1.0))

# Module tolerances; overridable through the ``geometry`` config section.
EPS_BDRY = 1e-8
MAX_PROJECTION_ITERS = 20
SHELL_SAMPLE_WIDTH = 1e-2
AREA_SHELL_DELTA = 5e-3
AREA_GRID_POINTS = 2**23
DISTANCE_REFINE_STEPS = 5
DISTANCE_POOL_SIZE = 200_000
SAMPLER_MAX_ROUNDS = 400


def canonical_kind(kind: str) -> str:
    key = str(kind).strip().lower().replace("-", "_").replace(" ", "_")
    key = _ALIASES.get(key, key)
    if key not in KINDS:
        raise ConfigError(f"unknown geometry kind {kind!r}; expected one of {', '.join(KINDS)}")
    return key


def _as_points(points) -> np.ndarray:
    pts = np.asarray(points, dtype=float)
    if pts.ndim == 1:
        pts = pts[None, :]
    if pts.shape[-1] != 3:
        raise ValueError(f"points must have trailing dimension 3, got shape {pts.shape}")
    return pts


def level_set(kind: str, points, radius: float = 0.4, axis=(0.5, 0.5)) -> np.ndarray:
    """Evaluate the closed-form level-set function.

    ``radius`` is the pipe radius for ``circular_pipe`` and the half-width for
    ``plane_channel``; ``axis`` is the ``(y, z)`` location of the pipe axis (only
    ``axis[0]`` is used by the plane channel). A single point returns a scalar.
    """
    kind = canonical_kind(kind)
    single = np.ndim(points) == 1
    pts = _as_points(points)
    x, y, z = pts[:, 0], pts[:, 1], pts[:, 2]
    if kind in TPMS_KINDS:
        X, Y, Z = TWO_PI * x, TWO_PI * y, TWO_PI * z
        sx, sy, sz = np.sin(X), np.sin(Y), np.sin(Z)
        cx, cy, cz = np.cos(X), np.cos(Y), np.cos(Z)
    if kind == "primitive":
        val = cx + cy + cz
    elif kind == "gyroid":
        val = sx * cy + sy * cz + sz * cx
    elif kind == "diamond":
        val = sx * sy * sz + sx * cy * cz + cx * sy * cz + cx * cy * sz
    elif kind == "iwp":
        val = 2.0 * (cx * cy + cy * cz + cz * cx) - (np.cos(2 * X) + np.cos(2 * Y) + np.cos(2 * Z))
    elif kind == "circular_pipe":
        val = (y - axis[0]) ** 2 + (z - axis[1]) ** 2 - radius**2
    else:
        val = (y - axis[0]) ** 2 - radius**2
    return float(val[0]) if single else val


def level_set_gradient(kind: str, points, radius: float = 0.4, axis=(0.5, 0.5)) -> np.ndarray:
    """Analytic gradient of :func:`level_set`, shape ``(N, 3)`` (or ``(3,)``)."""
    kind = canonical_kind(kind)
    single = np.ndim(points) == 1
    pts = _as_points(points)
    x, y, z = pts[:, 0], pts[:, 1], pts[:, 2]
    g = np.zeros_like(pts)
    if kind in TPMS_KINDS:
        X, Y, Z = TWO_PI * x, TWO_PI * y, TWO_PI * z
        sx, sy, sz = np.sin(X), np.sin(Y), np.sin(Z)
        cx, cy, cz = np.cos(X), np.cos(Y), np.cos(Z)
    if kind == "primitive":
        g[:, 0], g[:, 1], g[:, 2] = -sx, -sy, -sz
        g *= TWO_PI
    elif kind == "gyroid":
        g[:, 0] = cx * cy - sz * sx
        g[:, 1] = cy * cz - sx * sy
        g[:, 2] = cz * cx - sy * sz
        g *= TWO_PI
    elif kind == "diamond":
        g[:, 0] = cx * sy * sz + cx * cy * cz - sx * sy * cz - sx * cy * sz
        g[:, 1] = sx * cy * sz - sx * sy * cz + cx * cy * cz - cx * sy * sz
        g[:, 2] = sx * sy * cz - sx * cy * sz - cx * sy * sz + cx * cy * cz
        g *= TWO_PI
    elif kind == "iwp":
        g[:, 0] = -2.0 * sx * (cy + cz) + 2.0 * np.sin(2 * X)
        g[:, 1] = -2.0 * sy * (cz + cx) + 2.0 * np.sin(2 * Y)
        g[:, 2] = -2.0 * sz * (cx + cy) + 2.0 * np.sin(2 * Z)
        g *= TWO_PI
    elif kind == "circular_pipe":
        g[:, 1] = 2.0 * (y - axis[0])
        g[:, 2] = 2.0 * (z - axis[1])
    else:
        g[:, 1] = 2.0 * (y - axis[0])
    return g[0] if single else g


@dataclass
class BoundarySamples:
    """Struct-of-arrays boundary point set with outward unit normals."""

    points: np.ndarray
    normals: np.ndarray
    region: np.ndarray  # dtype '<U6': inlet | outlet | wall

    def __len__(self) -> int:
        return len(self.points)

    def select(self, region: str) -> "BoundarySamples":
        m = self.region == region
        return BoundarySamples(self.points[m], self.normals[m], self.region[m])

    @staticmethod
    def concat(parts) -> "BoundarySamples":
        parts = list(parts)
        return BoundarySamples(
            np.concatenate([p.points for p in parts]),
            np.concatenate([p.normals for p in parts]),
            np.concatenate([p.region for p in parts]),
        )

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["x", "y", "z", "nx", "ny", "nz", "region"])
            for p, n, r in zip(self.points, self.normals, self.region):
                w.writerow([repr(float(v)) for v in p] + [repr(float(v)) for v in n] + [str(r)])

    @classmethod
    def from_csv(cls, path) -> "BoundarySamples":
        with open(path, newline="") as fh:
            rows = list(csv.DictReader(fh))
        pts = np.array([[float(r["x"]), float(r["y"]), float(r["z"])] for r in rows]).reshape(-1, 3)
        nrm = np.array([[float(r["nx"]), float(r["ny"]), float(r["nz"])] for r in rows]).reshape(-1, 3)
        return cls(pts, nrm, np.array([r["region"] for r in rows], dtype="<U6"))


def _tagged(points, normals, region: str) -> BoundarySamples:
    return BoundarySamples(points, normals, np.full(len(points), region, dtype="<U6"))


@dataclass(frozen=True)
class LevelSetGeometry:
    kind: str
    box: tuple = DEFAULT_BOX
    fluid_sign: int = -1
    pipe_radius: float = 0.4
    half_width: float = 0.4
    lateral_walls: bool = True
    eps_bdry: float = EPS_BDRY
    area_seed: int = 0
    # Populated by __post_init__; kept out of equality and hashing.
    _meta: dict = field(default_factory=dict, compare=False, repr=False)

    def __post_init__(self):
        object.__setattr__(self, "kind", canonical_kind(self.kind))
        box = tuple((float(lo), float(hi)) for lo, hi in self.box)
        if len(box) != 3:
            raise ConfigError("geometry.box must have three (lo, hi) pairs")
        if any(not np.isfinite(lo) or not np.isfinite(hi) or hi <= lo for lo, hi in box):
            raise ConfigError(f"geometry.box must have strictly positive extents, got {box}")
        object.__setattr__(self, "box", box)
        if self.fluid_sign not in (-1, 1):
            raise ConfigError("geometry.fluid_sign must be -1 (fluid where phi<0) or +1")
        if self.kind == "circular_pipe" and self.pipe_radius <= 0:
            raise ConfigError("geometry.pipe_radius must be positive")
        if self.kind == "plane_channel" and self.half_width <= 0:
            raise ConfigError("geometry.half_width must be positive")

    # ------------------------------------------------------------------ basics
    @property
    def lo(self) -> np.ndarray:
        return np.array([b[0] for b in self.box])

    @property
    def hi(self) -> np.ndarray:
        return np.array([b[1] for b in self.box])

    @property
    def extents(self) -> np.ndarray:
        return self.hi - self.lo

    @property
    def volume(self) -> float:
        return float(np.prod(self.extents))

    @property
    def axis(self) -> tuple:
        c = 0.5 * (self.lo + self.hi)
        return (float(c[1]), float(c[2]))

    @property
    def radius(self) -> float:
        return self.half_width if self.kind == "plane_channel" else self.pipe_radius

    def phi(self, points) -> np.ndarray:
        return level_set(self.kind, points, self.radius, self.axis)

    def grad_phi(self, points) -> np.ndarray:
        return level_set_gradient(self.kind, points, self.radius, self.axis)

    def in_box(self, points) -> np.ndarray:
        pts = _as_points(points)
        return np.all((pts >= self.lo) & (pts <= self.hi), axis=1)

    def contains(self, points) -> np.ndarray:
        pts = _as_points(points)
        with np.errstate(invalid="ignore"):
            inside = self.in_box(pts) & (self.fluid_sign * self.phi(pts) > 0)
        return inside

    def wall_normals(self, points) -> np.ndarray:
        """Outward (fluid -> solid) unit normals of the level-set wall."""
        g = self.grad_phi(points)
        n = g / np.linalg.norm(g, axis=1, keepdims=True)
        return -self.fluid_sign * n

    def to_dict(self) -> dict:
        d = asdict(self)
        d.pop("_meta")
        d["box"] = [list(b) for b in self.box]
        return d

    @property
    def digest(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()[:16]

    # ------------------------------------------------------------- wall areas
    @cached_property
    def area_breakdown(self) -> dict:
        """Level-set and lateral-face parts of the wall area, plus method metadata."""
        rng = np.random.default_rng(self.area_seed)
        ls_area = _shell_coarea(self, rng)
        lat_area = _lateral_fluid_area(self, rng) if self.lateral_walls else 0.0
        out = {
            "level_set": ls_area,
            "lateral": lat_area,
            "inlet": _face_fluid_area(self, 0, 0, rng),
            "outlet": _face_fluid_area(self, 0, 1, rng),
            "method": "shell-coarea",
            "delta": AREA_SHELL_DELTA,
            "grid_points": AREA_GRID_POINTS,
        }
        self._meta["area"] = out
        return out

    @property
    def wall_area(self) -> float:
        b = self.area_breakdown
        return b["level_set"] + b["lateral"]

    @property
    def boundary_area(self) -> float:
        """Total area of the fluid boundary: walls plus inlet and outlet cross-sections."""
        b = self.area_breakdown
        return self.wall_area + b["inlet"] + b["outlet"]

    # --------------------------------------------------- distance acceleration
    @cached_property
    def _distance_index(self):
        rng = np.random.default_rng([self.area_seed, 7])
        pts = _sample_level_set_surface(self, DISTANCE_POOL_SIZE, rng)
        return pts, cKDTree(pts)


# ---------------------------------------------------------------- projection
def project_to_level_set(geometry: LevelSetGeometry, points, iters: int = MAX_PROJECTION_ITERS, tol=None):
    """Newton-project points onto ``phi = 0``.

    Returns ``(projected, converged)``; non-converged rows are left at their last
    iterate and flagged False.
    """
    tol = geometry.eps_bdry if tol is None else tol
    q = _as_points(points).copy()
    done = np.zeros(len(q), dtype=bool)
    active = np.arange(len(q))
    for _ in range(iters + 1):
        phi = geometry.phi(q[active])
        ok = np.abs(phi) < tol
        done[active[ok]] = True
        active = active[~ok]
        phi = phi[~ok]
        if active.size == 0:
            break
        g = geometry.grad_phi(q[active])
        g2 = np.einsum("ij,ij->i", g, g)
        stuck = g2 < 1e-24
        g2 = np.where(stuck, 1.0, g2)
        q[active] -= (phi / g2)[:, None] * g
        q[active[stuck]] += 1e-6
    done &= np.isfinite(q).all(axis=1)
    return q, done


# ------------------------------------------------------------ area estimates
def _jittered_grid(lo, hi, n_target, rng, chunks=16):
    """Yield chunks of a jittered (stratified) grid with about n_target points."""
    ext = hi - lo
    h = (np.prod(ext) / n_target) ** (1.0 / 3.0)
    n = np.maximum(1, np.round(ext / h)).astype(int)
    cell = ext / n
    # Slab over the first axis to bound memory.
    step = max(1, n[0] // chunks)
    jj, kk = np.meshgrid(np.arange(n[1]), np.arange(n[2]), indexing="ij")
    jj, kk = jj.ravel(), kk.ravel()
    for i0 in range(0, n[0], step):
        ii = np.arange(i0, min(n[0], i0 + step))
        idx = np.stack(
            [np.repeat(ii, jj.size), np.tile(jj, ii.size), np.tile(kk, ii.size)], axis=1
        ).astype(float)
        yield lo + (idx + rng.random(idx.shape)) * cell, float(np.prod(cell))


def _shell_coarea(geometry: LevelSetGeometry, rng, delta=AREA_SHELL_DELTA, n_points=AREA_GRID_POINTS) -> float:
    """Co-area estimate ``A ~ (1/2 delta) * vol{x in box : |phi|/|grad phi| < delta}``."""
    total = 0.0
    for pts, dv in _jittered_grid(geometry.lo, geometry.hi, n_points, rng):
        phi = geometry.phi(pts)
        g = np.linalg.norm(geometry.grad_phi(pts), axis=1)
        with np.errstate(divide="ignore", invalid="ignore"):
            hit = np.abs(phi) < delta * g
        total += dv * np.count_nonzero(hit)
    return total / (2.0 * delta)


def _lateral_faces(geometry: LevelSetGeometry):
    """(axis, side, outward normal) for the four faces normal to y and z."""
    faces = []
    for ax in (1, 2):
        for side in (0, 1):
            n = np.zeros(3)
            n[ax] = 1.0 if side else -1.0
            faces.append((ax, side, n))
    return faces


def _face_points(geometry, ax, side, uv):
    lo, hi = geometry.lo, geometry.hi
    others = [a for a in range(3) if a != ax]
    pts = np.empty((len(uv), 3))
    pts[:, ax] = hi[ax] if side else lo[ax]
    for k, a in enumerate(others):
        pts[:, a] = lo[a] + uv[:, k] * (hi[a] - lo[a])
    return pts


def _face_area(geometry, ax) -> float:
    e = geometry.extents
    return float(np.prod([e[a] for a in range(3) if a != ax]))


def _face_fluid_area(geometry: LevelSetGeometry, ax, side, rng, n_per_face=2**18) -> float:
    m = int(np.sqrt(n_per_face))
    u, v = np.meshgrid(np.arange(m), np.arange(m), indexing="ij")
    uv = (np.stack([u.ravel(), v.ravel()], axis=1) + rng.random((m * m, 2))) / m
    pts = _face_points(geometry, ax, side, uv)
    frac = np.count_nonzero(geometry.fluid_sign * geometry.phi(pts) > 0) / len(pts)
    return frac * _face_area(geometry, ax)


def _lateral_fluid_area(geometry: LevelSetGeometry, rng, n_per_face=2**18) -> float:
    return sum(_face_fluid_area(geometry, ax, side, rng, n_per_face) for ax, side, _ in _lateral_faces(geometry))


# ----------------------------------------------------------------- samplers
def _sample_level_set_surface(geometry: LevelSetGeometry, count: int, rng, width=SHELL_SAMPLE_WIDTH) -> np.ndarray:
    """Approximately area-uniform points on ``{phi = 0} inside box``.

    Candidates are uniform in the box; those inside the first-order shell
    ``|phi|/|grad phi| < width`` are Newton-projected onto the surface. A
    symmetric shell has no first-order curvature bias.
    """
    out, have = [], 0
    yield_guess = 0.01
    for _ in range(SAMPLER_MAX_ROUNDS):
        need = count - have
        if need <= 0:
            break
        n_cand = int(min(4_000_000, max(8192, 1.3 * need / yield_guess)))
        cand = geometry.lo + rng.random((n_cand, 3)) * geometry.extents
        phi = geometry.phi(cand)
        g = np.linalg.norm(geometry.grad_phi(cand), axis=1)
        keep = np.abs(phi) < width * g
        cand = cand[keep]
        q, ok = project_to_level_set(geometry, cand)
        ok &= geometry.in_box(q)
        q = q[ok]
        yield_guess = max(len(q) / n_cand, 1e-5)
        out.append(q[:need])
        have += min(len(q), need)
    if have < count:
        raise SamplingError(f"collected {have}/{count} wall samples on {geometry.kind} within the retry budget")
    return np.concatenate(out)


def _sample_lateral_faces(geometry: LevelSetGeometry, count: int, rng):
    faces = _lateral_faces(geometry)
    areas = np.array([_face_area(geometry, ax) for ax, _, _ in faces])
    pts_out, nrm_out, have = [], [], 0
    for _ in range(SAMPLER_MAX_ROUNDS):
        need = count - have
        if need <= 0:
            break
        n_cand = max(4 * need, 1024)
        which = rng.choice(len(faces), size=n_cand, p=areas / areas.sum())
        uv = rng.random((n_cand, 2))
        pts = np.empty((n_cand, 3))
        nrm = np.zeros((n_cand, 3))
        for f, (ax, side, n) in enumerate(faces):
            m = which == f
            pts[m] = _face_points(geometry, ax, side, uv[m])
            nrm[m] = n
        ok = geometry.fluid_sign * geometry.phi(pts) > 0
        pts, nrm = pts[ok][:need], nrm[ok][:need]
        pts_out.append(pts)
        nrm_out.append(nrm)
        have += len(pts)
    if have < count:
        raise SamplingError("lateral faces have no fluid cross-section")
    return np.concatenate(pts_out), np.concatenate(nrm_out)


def sample_wall_surface(geometry: LevelSetGeometry, count: int, rng) -> BoundarySamples:
    """Area-uniform wall samples with outward normals.

    The split between the level-set surface and the lateral faces is drawn
    binomially in proportion to their estimated areas.
    """
    if count < 1:
        raise DomainError("count must be >= 1")
    rng = np.random.default_rng(rng)
    b = geometry.area_breakdown
    total = b["level_set"] + b["lateral"]
    if total <= 0:
        raise GeometryError("geometry has no wall surface inside the box")
    n_lat = int(rng.binomial(count, b["lateral"] / total)) if b["lateral"] > 0 else 0
    parts = []
    if count - n_lat > 0:
        pts = _sample_level_set_surface(geometry, count - n_lat, rng)
        parts.append(_tagged(pts, geometry.wall_normals(pts), "wall"))
    if n_lat > 0:
        pts, nrm = _sample_lateral_faces(geometry, n_lat, rng)
        parts.append(_tagged(pts, nrm, "wall"))
    return BoundarySamples.concat(parts)


def sample_inlet_outlet(geometry: LevelSetGeometry, count: int, region: str, rng) -> BoundarySamples:
    """Uniform samples on the fluid part of the inlet (x = x0) or outlet (x = x1) face."""
    if region not in ("inlet", "outlet"):
        raise DomainError(f"region must be 'inlet' or 'outlet', got {region!r}")
    rng = np.random.default_rng(rng)
    side = 0 if region == "inlet" else 1
    normal = np.array([-1.0 if side == 0 else 1.0, 0.0, 0.0])
    out, have = [], 0
    for _ in range(SAMPLER_MAX_ROUNDS):
        need = count - have
        if need <= 0:
            break
        pts = _face_points(geometry, 0, side, rng.random((max(4 * need, 256), 2)))
        pts = pts[geometry.contains(pts)][:need]
        out.append(pts)
        have += len(pts)
    if have < count:
        raise GeometryError(f"empty {region} cross-section on {geometry.kind}")
    pts = np.concatenate(out)
    return _tagged(pts, np.tile(normal, (len(pts), 1)), region)


def sample_boundary_surface(geometry: LevelSetGeometry, count: int, rng) -> BoundarySamples:
    """Area-uniform samples over the whole fluid boundary (walls, inlet, outlet).

    Counts per region are drawn multinomially in proportion to region areas;
    samples keep their region labels and outward normals.
    """
    if count < 1:
        raise DomainError("count must be >= 1")
    rng = np.random.default_rng(rng)
    b = geometry.area_breakdown
    areas = np.array([geometry.wall_area, b["inlet"], b["outlet"]])
    counts = rng.multinomial(count, areas / areas.sum())
    parts = []
    if counts[0]:
        parts.append(sample_wall_surface(geometry, int(counts[0]), rng))
    for region, k in (("inlet", counts[1]), ("outlet", counts[2])):
        if k:
            parts.append(sample_inlet_outlet(geometry, int(k), region, rng))
    return BoundarySamples.concat(parts)


# ----------------------------------------------------------------- distance
def _box_face_distance(geometry, pts) -> np.ndarray:
    return np.minimum(pts - geometry.lo, geometry.hi - pts).min(axis=1)


def _level_set_distance(geometry: LevelSetGeometry, pts) -> np.ndarray:
    """Distance to the zero set via nearest pooled surface sample plus
    closest-point refinement (tangent-plane step, then Newton re-projection).

    Every refined iterate lies on the surface, so each candidate distance is an
    upper bound; the smallest one is kept.
    """
    pool, tree = geometry._distance_index
    best, idx = tree.query(pts)
    q = pool[idx]
    for _ in range(DISTANCE_REFINE_STEPS):
        g = geometry.grad_phi(q)
        n = g / np.maximum(np.linalg.norm(g, axis=1, keepdims=True), 1e-300)
        qt = pts - np.einsum("ij,ij->i", pts - q, n)[:, None] * n
        q_new, ok = project_to_level_set(geometry, qt, tol=1e-12)
        d = np.linalg.norm(pts - q_new, axis=1)
        better = ok & (d < best)
        best = np.where(better, d, best)
        q = np.where(ok[:, None], q_new, q)
    return best


def distance_to_boundary(geometry: LevelSetGeometry, points, method: str = "auto") -> np.ndarray:
    """Distance from fluid points to the domain boundary (local inscribed radius).

    ``method="auto"`` uses closed forms for the pipe and plane channel and the
    iterative level-set path otherwise; ``method="generic"`` forces the latter.
    """
    single = np.ndim(points) == 1
    pts = _as_points(points)
    if not np.all(geometry.contains(pts)):
        bad = int(np.argmin(geometry.contains(pts)))
        raise DomainError(f"point {pts[bad].tolist()} is not inside the fluid domain")
    box_d = _box_face_distance(geometry, pts)
    if method == "auto" and geometry.kind == "circular_pipe":
        cy, cz = geometry.axis
        ls_d = geometry.pipe_radius - np.hypot(pts[:, 1] - cy, pts[:, 2] - cz)
    elif method == "auto" and geometry.kind == "plane_channel":
        ls_d = geometry.half_width - np.abs(pts[:, 1] - geometry.axis[0])
    elif method in ("auto", "generic"):
        ls_d = _level_set_distance(geometry, pts)
    else:
        raise ConfigError(f"unknown distance method {method!r}")
    d = np.minimum(ls_d, box_d)
    return float(d[0]) if single else d


# --------------------------------------------------------- flow parameters
def hydraulic_diameter(area: float, perimeter: float) -> float:
    if area <= 0 or perimeter <= 0:
        raise DomainError("hydraulic diameter needs positive area and perimeter")
    return 4.0 * area / perimeter


def reynolds(u0: float, l0: float, nu: float) -> float:
    if nu <= 0 or l0 <= 0:
        raise DomainError("Reynolds number needs positive length scale and viscosity")
    return u0 * l0 / nu


def fluid_volume_fraction(geometry: LevelSetGeometry, n_target: int = 2**20, seed: int = 0) -> float:
    """Stratified estimate of ``vol(fluid) / vol(box)``."""
    rng = np.random.default_rng(seed)
    hit = tot = 0
    for pts, _ in _jittered_grid(geometry.lo, geometry.hi, n_target, rng):
        hit += np.count_nonzero(geometry.contains(pts))
        tot += len(pts)
    return hit / tot


def geometry_from_config(section: dict) -> LevelSetGeometry:
    kw = dict(section)
    if kw.get("kind") is None:
        raise ConfigError("geometry.kind is required")
    if "box" in kw and kw["box"] is not None:
        kw["box"] = tuple(tuple(b) for b in kw["box"])
    else:
        kw.pop("box", None)
    return LevelSetGeometry(**kw)
