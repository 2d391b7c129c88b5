"""Three-scale control-volume placement and geometry-aware radius selection."""

from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.spatial import cKDTree

from .errors import ConfigError, GeometryError
from .geometry import LevelSetGeometry, _box_face_distance, _level_set_distance, distance_to_boundary

log = logging.getLogger(__name__)

MIN_ACCEPT_RATIO = 1e-4

# Distance-field ascent controls.
ASCENT_STEP_FRACTION = 0.25
ASCENT_FD_STEP = 1e-4
ASCENT_MIN_IMPROVEMENT = 1e-6
ASCENT_MAX_STEPS = 200
MEDIAL_GRAD_THRESHOLD = 0.3


def rejection_sample_interior(geometry: LevelSetGeometry, count: int, rng) -> np.ndarray:
    """Uniform fluid points by rejection from the bounding box."""
    if count < 1:
        raise ValueError("count must be >= 1")
    rng = np.random.default_rng(rng)
    out, have, drawn = [], 0, 0
    while have < count:
        n = max(2 * (count - have), 1024)
        pts = geometry.lo + rng.random((n, 3)) * geometry.extents
        drawn += n
        pts = pts[geometry.contains(pts)][: count - have]
        out.append(pts)
        have += len(pts)
        if have < count and drawn >= 1_000_000 and have / drawn < MIN_ACCEPT_RATIO:
            raise GeometryError(f"fluid acceptance ratio {have / drawn:.2e} too small on {geometry.kind}")
    return np.concatenate(out)


def place_large(geometry: LevelSetGeometry, n_large: int, rng) -> np.ndarray:
    return rejection_sample_interior(geometry, n_large, rng)


def place_small(geometry: LevelSetGeometry, n_small: int, rng) -> np.ndarray:
    return rejection_sample_interior(geometry, n_small, rng)


# ----------------------------------------------------------------- skeleton
@dataclass
class Skeleton:
    polylines: list  # list of (k, 3) arrays
    rho: list = field(default_factory=list)  # inscribed radius per vertex, same layout

    @property
    def points(self) -> np.ndarray:
        return np.concatenate(self.polylines) if self.polylines else np.empty((0, 3))

    @property
    def length(self) -> float:
        return float(sum(np.linalg.norm(np.diff(p, axis=0), axis=1).sum() for p in self.polylines))

    def to_csv(self, path) -> None:
        with open(path, "w") as fh:
            fh.write("x,y,z\n")
            for i, pl in enumerate(self.polylines):
                if i:
                    fh.write("\n")
                for p in pl:
                    fh.write(",".join(f"{float(v):.17g}" for v in p) + "\n")

    @classmethod
    def from_csv(cls, path) -> "Skeleton":
        """Read ``x,y,z`` rows; blank lines separate polylines."""
        polylines, cur = [], []
        with open(path) as fh:
            header = fh.readline().strip().lower().replace(" ", "")
            if header != "x,y,z":
                raise ConfigError(f"skeleton file {path} must start with an 'x,y,z' header")
            for line in fh:
                line = line.strip()
                if not line:
                    if cur:
                        polylines.append(np.array(cur))
                        cur = []
                    continue
                cur.append([float(v) for v in line.split(",")])
        if cur:
            polylines.append(np.array(cur))
        if not polylines:
            raise ConfigError(f"skeleton file {path} has no points")
        return cls(polylines)


def _rho(geometry: LevelSetGeometry, pts: np.ndarray) -> np.ndarray:
    """Unchecked inscribed radius (no containment test); used inside the ascent."""
    box_d = _box_face_distance(geometry, pts)
    if geometry.kind == "circular_pipe":
        cy, cz = geometry.axis
        ls = geometry.pipe_radius - np.hypot(pts[:, 1] - cy, pts[:, 2] - cz)
    elif geometry.kind == "plane_channel":
        ls = geometry.half_width - np.abs(pts[:, 1] - geometry.axis[0])
    else:
        ls = _level_set_distance(geometry, pts)
    return np.minimum(ls, box_d)


def _rho_gradient(geometry, pts, h=ASCENT_FD_STEP) -> np.ndarray:
    n = len(pts)
    offs = np.concatenate([np.eye(3) * h, -np.eye(3) * h])
    probe = (pts[:, None, :] + offs[None]).reshape(-1, 3)
    r = _rho(geometry, probe).reshape(n, 6)
    return (r[:, :3] - r[:, 3:]) / (2 * h)


def medial_ascent(geometry: LevelSetGeometry, seeds: np.ndarray):
    """Backtracking ascent of the inscribed radius from interior seeds.

    Each accepted step moves ``0.25 * rho`` along the normalised finite-difference
    gradient of ``rho``; rejected steps halve the step length. Returns final
    points, their ``rho`` and gradient norms.
    """
    x = np.array(seeds, dtype=float)
    rho = _rho(geometry, x)
    step = ASCENT_STEP_FRACTION * rho
    active = np.ones(len(x), dtype=bool)
    for _ in range(ASCENT_MAX_STEPS):
        idx = np.flatnonzero(active)
        if idx.size == 0:
            break
        g = _rho_gradient(geometry, x[idx])
        gn = np.linalg.norm(g, axis=1)
        flat = gn < 1e-12
        d = g / np.where(flat, 1.0, gn)[:, None]
        trial = x[idx] + step[idx, None] * d
        inside = geometry.contains(trial)
        r_t = np.full(idx.size, -np.inf)
        if inside.any():
            r_t[inside] = _rho(geometry, trial[inside])
        gain = r_t - rho[idx]
        ok = (gain > 0) & ~flat
        acc = idx[ok]
        x[acc] = trial[ok]
        rho[acc] = r_t[ok]
        step[acc] = ASCENT_STEP_FRACTION * rho[acc]
        step[idx[~ok]] *= 0.5
        finished = (ok & (gain < ASCENT_MIN_IMPROVEMENT)) | flat | (step[idx] < ASCENT_MIN_IMPROVEMENT)
        active[idx[finished]] = False
    gn = np.linalg.norm(_rho_gradient(geometry, x), axis=1)
    return x, rho, gn


def _dedup(points, rho, radius):
    order = np.argsort(-rho, kind="stable")
    kept = []
    tree_pts = []
    for i in order:
        p = points[i]
        if tree_pts:
            d = np.min(np.linalg.norm(np.asarray(tree_pts) - p, axis=1))
            if d < radius:
                continue
        kept.append(i)
        tree_pts.append(p)
    return np.array(sorted(kept), dtype=int)


def _chain(points, gap: float):
    """Greedy nearest-neighbour chaining into polylines, breaking at gaps."""
    remaining = set(range(len(points)))
    tree = cKDTree(points)
    polylines = []
    while remaining:
        rem = np.fromiter(sorted(remaining), dtype=int)
        cur = int(rem[np.argmin(points[rem, 0])])
        chain = [cur]
        remaining.discard(cur)
        while remaining:
            k = min(len(points), 16)
            found = None
            while found is None:
                dist, nb = tree.query(points[cur], k=k)
                for dd, j in zip(np.atleast_1d(dist), np.atleast_1d(nb)):
                    if j in remaining:
                        found = (dd, int(j))
                        break
                if found is None:
                    if k >= len(points):
                        break
                    k = min(len(points), 4 * k)
            if found is None or found[0] > gap:
                break
            cur = found[1]
            chain.append(cur)
            remaining.discard(cur)
        polylines.append(np.array(chain))
    return polylines


def approximate_skeleton(geometry: LevelSetGeometry, seed_count: int, rng) -> Skeleton:
    """Medial points from distance-field ascent, deduplicated and chained into polylines."""
    if seed_count < 8:
        raise ValueError("seed_count must be >= 8")
    seeds = rejection_sample_interior(geometry, seed_count, rng)
    x, rho, gn = medial_ascent(geometry, seeds)
    keep = (gn < MEDIAL_GRAD_THRESHOLD) & geometry.contains(x) & (rho > 0)
    x, rho = x[keep], rho[keep]
    if len(x) < 2:
        raise GeometryError(f"only {len(x)} medial points found on {geometry.kind}; import a skeleton instead")
    merge = 0.25 * float(np.median(rho))
    sel = _dedup(x, rho, merge)
    x, rho = x[sel], rho[sel]
    if len(x) < 2:
        raise GeometryError("skeleton collapsed to a single point after deduplication")
    chains = _chain(x, gap=4.0 * merge + 1e-12)
    return Skeleton([x[c] for c in chains], [rho[c] for c in chains])


def place_medium(skeleton: Skeleton, n_medium: int, geometry: LevelSetGeometry | None = None) -> np.ndarray:
    """Centers spaced uniformly in arc length along the skeleton polylines.

    Interpolated points outside the fluid snap to the nearer polyline vertex.
    """
    pts = skeleton.points
    if len(pts) == 0:
        raise GeometryError("empty skeleton")
    if len(pts) < n_medium:
        log.warning("skeleton has %d vertices for %d medium centers; centers will be interpolated or repeated",
                    len(pts), n_medium)
    segs = []
    for pl in skeleton.polylines:
        for a, b in zip(pl[:-1], pl[1:]):
            segs.append((a, b))
    if not segs or skeleton.length <= 0:
        rng = np.random.default_rng(0)
        return pts[rng.integers(0, len(pts), n_medium)]
    a = np.array([s[0] for s in segs])
    b = np.array([s[1] for s in segs])
    seg_len = np.linalg.norm(b - a, axis=1)
    cum = np.concatenate([[0.0], np.cumsum(seg_len)])
    s = (np.arange(n_medium) + 0.5) * cum[-1] / n_medium
    k = np.clip(np.searchsorted(cum, s, side="right") - 1, 0, len(segs) - 1)
    t = np.where(seg_len[k] > 0, (s - cum[k]) / np.where(seg_len[k] > 0, seg_len[k], 1.0), 0.0)
    centers = a[k] + t[:, None] * (b[k] - a[k])
    if geometry is not None:
        bad = ~geometry.contains(centers)
        if bad.any():
            snap = np.where((t[bad] < 0.5)[:, None], a[k[bad]], b[k[bad]])
            centers[bad] = snap
    return centers


def quantile_nearest_rank(values, q: float) -> float:
    v = np.sort(np.asarray(values, dtype=float))
    if v.size == 0:
        raise ValueError("empty sample")
    return float(v[max(0, math.ceil(q * v.size) - 1)])


def select_radii(extents, rho_values, alpha_l=1.4, alpha_m=1.4, beta=0.5):
    """Radius rules: inflated circumradius of the two smallest box sides, the 0.9
    quantile of skeleton inscribed radii, and a fixed refinement ratio.

    Returns ``(r_L, r_M, r_S, rho_hat)``.
    """
    d = np.sort(np.asarray(extents, dtype=float))
    if d.size != 3 or np.any(d <= 0):
        raise GeometryError(f"degenerate bounding box extents {extents}")
    r_l = alpha_l * 0.5 * math.hypot(d[0], d[1])
    rho_hat = quantile_nearest_rank(rho_values, 0.9)
    r_m = alpha_m * rho_hat
    r_s = beta * r_m
    check_radii(r_l, r_m, r_s)
    return r_l, r_m, r_s, rho_hat


def check_radii(r_l, r_m, r_s):
    if not (r_l > r_m > r_s > 0):
        raise ConfigError(f"radii must satisfy r_L > r_M > r_S > 0, got ({r_l}, {r_m}, {r_s})")


@dataclass
class PlacementPlan:
    large: np.ndarray
    medium: np.ndarray
    small: np.ndarray
    radii: tuple
    skeleton: Skeleton
    coefficients: dict
    rho_hat: float
    rule_radii: tuple | None = None

    def centers(self, scale: str) -> np.ndarray:
        return {"L": self.large, "M": self.medium, "S": self.small}[scale]

    def radius(self, scale: str) -> float:
        return dict(zip("LMS", self.radii))[scale]

    def summary(self) -> dict:
        return {
            "radii": {"r_L": self.radii[0], "r_M": self.radii[1], "r_S": self.radii[2]},
            "rule_radii": None if self.rule_radii is None else dict(zip(("r_L", "r_M", "r_S"), self.rule_radii)),
            "coefficients": self.coefficients,
            "rho_hat_M": self.rho_hat,
            "counts": {"N_L": len(self.large), "N_M": len(self.medium), "N_S": len(self.small)},
            "skeleton": {"polylines": len(self.skeleton.polylines), "vertices": len(self.skeleton.points),
                         "length": self.skeleton.length},
        }

    def write(self, out_dir) -> None:
        from pathlib import Path

        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        for s, name in (("L", "large"), ("M", "medium"), ("S", "small")):
            np.savetxt(out / f"centers_{name}.csv", self.centers(s), delimiter=",", header="x,y,z",
                       comments="", fmt="%.17g")
        self.skeleton.to_csv(out / "skeleton.csv")
        (out / "radii.json").write_text(json.dumps(self.summary(), indent=2))


def make_plan(
    geometry: LevelSetGeometry,
    n_large: int,
    n_medium: int,
    n_small: int,
    rng,
    radii=None,
    alpha_l=1.4,
    alpha_m=1.4,
    beta=0.5,
    skeleton: Skeleton | None = None,
    skeleton_seeds: int = 512,
) -> PlacementPlan:
    """Full three-scale placement. Configured ``radii`` override the rule values."""
    ss = np.random.SeedSequence(rng) if not isinstance(rng, np.random.SeedSequence) else rng
    s_l, s_sk, s_s = ss.spawn(3)
    large = place_large(geometry, n_large, np.random.default_rng(s_l))
    if skeleton is None:
        skeleton = approximate_skeleton(geometry, skeleton_seeds, np.random.default_rng(s_sk))
    medium = place_medium(skeleton, n_medium, geometry)
    small = place_small(geometry, n_small, np.random.default_rng(s_s))
    rho_m = distance_to_boundary(geometry, medium)
    rule = None
    try:
        rule = select_radii(geometry.extents, rho_m, alpha_l, alpha_m, beta)
    except ConfigError:
        if radii is None:
            raise
        log.warning("radius rules violate r_L > r_M > r_S on this geometry; using configured radii")
    if radii is None:
        chosen = rule[:3]
    else:
        chosen = tuple(float(r) for r in radii)
        check_radii(*chosen)
    return PlacementPlan(
        large=large,
        medium=medium,
        small=small,
        radii=tuple(chosen),
        skeleton=skeleton,
        coefficients={"alpha_L": alpha_l, "alpha_M": alpha_m, "beta": beta},
        rho_hat=quantile_nearest_rank(rho_m, 0.9),
        rule_radii=None if rule is None else tuple(rule[:3]),
    )
