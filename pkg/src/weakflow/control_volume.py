"""Clipped spherical control volumes and two-part Monte Carlo surface quadrature.

A control volume is ``V(c, r) = B(c, r) ∩ Ω``. Its boundary is the part of the
sphere inside the fluid plus the part of the domain boundary (walls, inlet and
outlet cross-sections) inside the ball. Sphere samples are drawn per CV;
boundary samples come from a shared, immutable pool of area-uniform points
filtered by a ball query.
"""

from __future__ import annotations

import csv
import logging
from dataclasses import dataclass

import numpy as np
from scipy.spatial import cKDTree

from .errors import GeometryError, NumericError
from .geometry import LevelSetGeometry, sample_boundary_surface, sample_wall_surface

log = logging.getLogger(__name__)

DEFAULT_SPHERE_DRAWS = 4096
DEFAULT_POOL_SIZE = 1_000_000
DEFAULT_MIN_ACCEPT = 16


class DegenerateControlVolume(GeometryError):
    pass


def sample_sphere_uniform(center, radius: float, count: int, seed) -> np.ndarray:
    """``count`` points uniform on the sphere (normalised Gaussian directions)."""
    if radius <= 0 or count < 1:
        raise ValueError("radius must be positive and count >= 1")
    rng = np.random.default_rng(seed)
    d = rng.standard_normal((count, 3))
    d /= np.linalg.norm(d, axis=1, keepdims=True)
    return np.asarray(center, dtype=float) + radius * d


class BoundaryPool:
    """Shared area-uniform boundary samples with a KD-tree for ball queries."""

    def __init__(self, geometry: LevelSetGeometry, points, normals, area: float, region=None):
        self.geometry = geometry
        self.points = np.ascontiguousarray(points)
        self.normals = np.ascontiguousarray(normals)
        self.area = float(area)
        self.region = None if region is None else np.asarray(region)
        self.tree = cKDTree(self.points)
        self.points.setflags(write=False)
        self.normals.setflags(write=False)

    @classmethod
    def build(cls, geometry: LevelSetGeometry, size: int = DEFAULT_POOL_SIZE, seed=0,
              regions: str = "all") -> "BoundaryPool":
        """Draw the pool over the whole boundary (``all``) or over the walls only (``wall``)."""
        rng = np.random.default_rng(seed)
        if regions == "all":
            s, area = sample_boundary_surface(geometry, size, rng), geometry.boundary_area
        elif regions == "wall":
            s, area = sample_wall_surface(geometry, size, rng), geometry.wall_area
        else:
            raise ValueError(f"regions must be 'all' or 'wall', got {regions!r}")
        return cls(geometry, s.points, s.normals, area, s.region)

    def __len__(self) -> int:
        return len(self.points)

    def ball(self, center, radius: float) -> np.ndarray:
        idx = self.tree.query_ball_point(np.asarray(center, dtype=float), radius)
        return np.sort(np.asarray(idx, dtype=np.int64))


@dataclass
class ControlVolume:
    center: np.ndarray
    radius: float
    sph_points: np.ndarray
    sph_normals: np.ndarray
    bdry_points: np.ndarray
    bdry_normals: np.ndarray
    n_sphere_draws: int
    n_pool: int
    boundary_area: float
    n_bdry_hits: int | None = None

    @property
    def k_sph(self) -> int:
        return len(self.sph_points)

    @property
    def k_bdry(self) -> int:
        return len(self.bdry_points)

    @property
    def area_sph(self) -> float:
        return 4.0 * np.pi * self.radius**2 * self.k_sph / self.n_sphere_draws

    @property
    def area_bdry(self) -> float:
        """Boundary-part area from the full pool hit count (before any subsampling)."""
        hits = self.k_bdry if self.n_bdry_hits is None else self.n_bdry_hits
        return self.boundary_area * hits / self.n_pool if self.n_pool else 0.0

    @property
    def points(self) -> np.ndarray:
        return np.concatenate([self.sph_points, self.bdry_points])

    @property
    def normals(self) -> np.ndarray:
        return np.concatenate([self.sph_normals, self.bdry_normals])

    @property
    def weights(self) -> np.ndarray:
        """Per-sample quadrature weights ``A_part / K_part`` matching :attr:`points`."""
        w_s = np.full(self.k_sph, self.area_sph / self.k_sph) if self.k_sph else np.empty(0)
        w_b = np.full(self.k_bdry, self.area_bdry / self.k_bdry) if self.k_bdry else np.empty(0)
        return np.concatenate([w_s, w_b])


def build_control_volume(
    geometry: LevelSetGeometry,
    center,
    radius: float,
    n_sphere_draws: int = DEFAULT_SPHERE_DRAWS,
    pool: BoundaryPool | int = DEFAULT_POOL_SIZE,
    seed=0,
    max_bdry_samples: int | None = None,
) -> ControlVolume:
    """Construct ``V(c, r)`` by rejection on the sphere and ball-filtering the boundary pool.

    ``pool`` is either a shared :class:`BoundaryPool` or a pool size, in which case a
    private pool is drawn from ``seed``. ``max_bdry_samples`` caps the boundary
    part by a uniform subsample of the pool hits; the area estimate still uses
    the full hit count, so the estimator stays unbiased.
    """
    center = np.asarray(center, dtype=float)
    if radius <= 0:
        raise ValueError("radius must be positive")
    if not geometry.contains(center)[0]:
        raise GeometryError(f"control-volume center {center.tolist()} is outside the fluid")
    ss = seed if isinstance(seed, np.random.SeedSequence) else np.random.SeedSequence(seed)
    sph_seed, pool_seed, sub_seed = ss.spawn(3)
    if not isinstance(pool, BoundaryPool):
        pool = BoundaryPool.build(geometry, int(pool), pool_seed)
    ys = sample_sphere_uniform(center, radius, n_sphere_draws, sph_seed)
    ys = ys[geometry.contains(ys)]
    idx = pool.ball(center, radius)
    n_hits = len(idx)
    if max_bdry_samples is not None and n_hits > max_bdry_samples:
        keep = np.random.default_rng(sub_seed).choice(n_hits, size=max_bdry_samples, replace=False)
        idx = idx[np.sort(keep)]
    cv = ControlVolume(
        center=center,
        radius=float(radius),
        sph_points=ys,
        sph_normals=(ys - center) / radius,
        bdry_points=pool.points[idx],
        bdry_normals=pool.normals[idx],
        n_sphere_draws=int(n_sphere_draws),
        n_pool=len(pool),
        boundary_area=pool.area,
        n_bdry_hits=n_hits,
    )
    if cv.k_sph == 0 and cv.k_bdry == 0:
        raise DegenerateControlVolume(f"no accepted samples for CV at {center.tolist()}, r={radius}")
    if cv.k_sph == 0:
        log.warning("CV at %s r=%g has no sphere samples inside the fluid", center.tolist(), radius)
    return cv


def _eval(cv: ControlVolume, integrand):
    parts = []
    for pts, nrm in ((cv.sph_points, cv.sph_normals), (cv.bdry_points, cv.bdry_normals)):
        if len(pts) == 0:
            parts.append(None)
            continue
        g = np.asarray(integrand(pts, nrm), dtype=float)
        bad = ~np.isfinite(g.reshape(len(pts), -1)).all(axis=1)
        if bad.any():
            i = int(np.argmax(bad))
            raise NumericError(f"integrand is not finite at sample {i} (x={pts[i].tolist()})")
        parts.append(g)
    return parts


def surface_integral(cv: ControlVolume, integrand):
    """``A_sph * mean(g|sph) + A_bdry * mean(g|bdry)``, component-wise for vector g.

    ``integrand(points, normals)`` returns shape ``(K,)`` or ``(K, d)``.
    """
    g_s, g_b = _eval(cv, integrand)
    total = 0.0
    if g_s is not None:
        total = total + cv.area_sph * g_s.mean(axis=0)
    if g_b is not None:
        total = total + cv.area_bdry * g_b.mean(axis=0)
    return total


def mc_error_estimate(cv: ControlVolume, integrand, include_area_variance: bool = False):
    """Standard error of :func:`surface_integral`.

    By default the part areas are treated as known:
    ``sqrt(A_sph^2 s_sph^2 / K_sph + A_bdry^2 s_bdry^2 / K_bdry)``. With
    ``include_area_variance`` the variance is taken over all raw draws
    (``g * 1[accepted]``), which also accounts for the randomness of the
    acceptance ratios.
    """
    g_s, g_b = _eval(cv, integrand)
    var = 0.0
    if include_area_variance:
        hits = cv.k_bdry if cv.n_bdry_hits is None else cv.n_bdry_hits
        for g, area_full, n, scale in (
            (g_s, 4.0 * np.pi * cv.radius**2, cv.n_sphere_draws, 1.0),
            # a subsample of the pool hits stands in for all of them
            (g_b, cv.boundary_area, cv.n_pool, hits / max(cv.k_bdry, 1)),
        ):
            if g is None or n < 2:
                continue
            s1 = g.sum(axis=0) * scale
            s2 = (g * g).sum(axis=0) * scale
            v = (s2 - s1 * s1 / n) / (n - 1)
            var = var + area_full**2 * v / n
        return np.sqrt(var)
    for g, area, k in ((g_s, cv.area_sph, cv.k_sph), (g_b, cv.area_bdry, cv.k_bdry)):
        if g is None or k < 2:
            continue
        var = var + area**2 * g.var(axis=0, ddof=1) / k
    return np.sqrt(var)


def write_cv_csv(cvs, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["cx", "cy", "cz", "r", "K_sph", "K_bdry", "A_sph", "A_bdry"])
        for cv in cvs:
            w.writerow([*(repr(float(v)) for v in cv.center), repr(cv.radius), cv.k_sph, cv.k_bdry,
                        repr(cv.area_sph), repr(cv.area_bdry)])


def build_cv_set(geometry, centers, radius, pool: BoundaryPool, n_sphere_draws=DEFAULT_SPHERE_DRAWS,
                 seed=0, min_accept=DEFAULT_MIN_ACCEPT, max_bdry_samples=None) -> list[ControlVolume]:
    """Build one CV per center, dropping those with fewer than ``min_accept`` samples."""
    out = []
    ss = seed if isinstance(seed, np.random.SeedSequence) else np.random.SeedSequence(seed)
    seeds = ss.spawn(len(centers))
    for c, s in zip(centers, seeds):
        try:
            cv = build_control_volume(geometry, c, radius, n_sphere_draws, pool, s, max_bdry_samples)
        except DegenerateControlVolume:
            log.warning("dropping degenerate CV at %s", np.asarray(c).tolist())
            continue
        if cv.k_sph + cv.k_bdry < min_accept:
            log.warning("dropping CV at %s: %d accepted samples < %d",
                        np.asarray(c).tolist(), cv.k_sph + cv.k_bdry, min_accept)
            continue
        out.append(cv)
    return out
