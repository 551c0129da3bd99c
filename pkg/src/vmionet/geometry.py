"""Star-shaped planar regions, the unit-disk transform and the domain metric.

A region here is star-shaped about its area centroid, so its boundary is a
positive 2*pi-periodic radial function b(theta) of the polar angle about the
centroid. Two concrete representations are supported:

* polygons (exact ray/segment boundary queries), and
* sampled smooth boundaries (radii on a uniform angle grid about the
  centroid, interpolated by a periodic cubic spline).

On top of the representation sit the radial normalization `alpha` mapping a
region onto the closed unit disk, its inverse, the region metric
(centroid distance + sup-norm gap of radial functions), and the
discretize/reconstruct pair used to project regions onto polygons.

Points are plain numpy arrays of shape (2,) or (N, 2); angles are radians.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.interpolate import CubicSpline
from scipy.spatial import ConvexHull

from .sampling import GPConfig, derive_rng, gp_sample

POLYGON = "polygon"
SAMPLED = "sampled"

DEFAULT_LIPSCHITZ_BOUND = 2.0
_DEGENERATE_AREA = 1e-12
_QUAD_GRID = 4096          # grid for polar quadrature / Lipschitz estimates
_REJECTION_BUDGET = 10_000


class GeometryError(ValueError):
    pass


class DegenerateRegionError(GeometryError):
    pass


class InvalidRegionError(GeometryError):
    pass


class PointOutsideRegionError(GeometryError):
    pass


@dataclass(frozen=True)
class RegionMetric:
    """Resolution of the angle grid discretizing the sup over theta."""

    angle_grid_size: int = 1024

    def __post_init__(self):
        if self.angle_grid_size < 64:
            raise ValueError("angle_grid_size must be >= 64")


def _unit(theta):
    theta = np.asarray(theta, dtype=float)
    return np.stack([np.cos(theta), np.sin(theta)], axis=-1)


def _cross(a, b):
    return a[..., 0] * b[..., 1] - a[..., 1] * b[..., 0]


def _wrap_pm_pi(x):
    return (x + np.pi) % (2.0 * np.pi) - np.pi


def _ray_polyline_radii(thetas, origin, verts) -> np.ndarray:
    """First-hit distances of rays from `origin` against a closed polyline.

    thetas: (G,) angles; verts: (E, 2) closed CCW polyline (edge i runs from
    verts[i] to verts[i+1 mod E]). Returns (G,) distances; rays that miss
    every edge yield nan.
    """
    thetas = np.atleast_1d(np.asarray(thetas, dtype=float))
    d = _unit(thetas)                         # (G, 2)
    p = verts                                 # (E, 2)
    e = np.roll(verts, -1, axis=0) - verts    # (E, 2)
    w = p - np.asarray(origin, dtype=float)   # (E, 2)
    w_x_e = _cross(w, e)                      # (E,)
    denom = _cross(d[:, None, :], e[None, :, :])          # (G, E)
    with np.errstate(divide="ignore", invalid="ignore"):
        t = w_x_e[None, :] / denom
        s = _cross(w[None, :, :], d[:, None, :]) / denom
    eps = 1e-12
    valid = (np.abs(denom) > 1e-300) & (t > eps) & (s >= -eps) & (s <= 1.0 + eps)
    t = np.where(valid, t, np.inf)
    hit = t.min(axis=1)
    return np.where(np.isfinite(hit), hit, np.nan)


class Region:
    """Star-shaped region with a radial boundary function about its centroid.

    Construct polygons with `Region.from_vertices` and smooth regions with
    `Region.from_radii`; instances are immutable and safe to share.
    """

    def __init__(self, kind, *, vertices=None, radii=None, center=None,
                 lipschitz_bound=None, _recenter=True):
        if kind not in (POLYGON, SAMPLED):
            raise InvalidRegionError(f"unknown region kind {kind!r}")
        self.kind = kind
        if kind == POLYGON:
            verts = np.array(vertices, dtype=float)
            if verts.ndim != 2 or verts.shape[1] != 2 or verts.shape[0] < 3:
                raise InvalidRegionError("invalid polygon: need >= 3 vertices")
            if not np.all(np.isfinite(verts)):
                raise InvalidRegionError("invalid polygon: non-finite vertex")
            self._init_polygon(verts)
        else:
            r = np.array(radii, dtype=float)
            if r.ndim != 1 or r.size < 8:
                raise InvalidRegionError("need >= 8 boundary radii")
            if not np.all(np.isfinite(r)) or np.any(r <= 0):
                raise InvalidRegionError("boundary radii must be positive")
            c = np.zeros(2) if center is None else np.array(center, dtype=float)
            self._init_sampled(r, c, recenter=_recenter)

        est = lipschitz_estimate(self, _QUAD_GRID)
        if lipschitz_bound is None:
            lipschitz_bound = max(DEFAULT_LIPSCHITZ_BOUND, 1.05 * est)
        elif est > lipschitz_bound:
            raise InvalidRegionError(
                f"Lipschitz estimate {est:.3g} exceeds bound {lipschitz_bound:.3g}")
        self.lipschitz_bound = float(lipschitz_bound)
        for arr in (self._verts, self._radii):
            if arr is not None:
                arr.flags.writeable = False

    # -- construction ------------------------------------------------------

    @classmethod
    def from_vertices(cls, vertices, lipschitz_bound=None) -> "Region":
        """Polygon region from CCW vertices, star-shaped about its centroid."""
        return cls(POLYGON, vertices=vertices, lipschitz_bound=lipschitz_bound)

    @classmethod
    def from_radii(cls, radii, center=(0.0, 0.0), lipschitz_bound=None,
                   recenter=True) -> "Region":
        """Smooth region from radii at uniform angles 2*pi*i/m about `center`.

        Unless recenter=False the boundary is re-parameterized so the stored
        radii end up measured about the region's own area centroid (the polar
        origin of a raw draw is generally not the centroid).
        """
        return cls(SAMPLED, radii=radii, center=center,
                   lipschitz_bound=lipschitz_bound, _recenter=recenter)

    def _init_polygon(self, verts):
        area2 = float(np.sum(_cross(verts, np.roll(verts, -1, axis=0))))
        if abs(area2) < 2.0 * _DEGENERATE_AREA:
            raise DegenerateRegionError("degenerate region")
        if area2 < 0:
            raise InvalidRegionError("invalid polygon: vertices must be counter-clockwise")
        nxt = np.roll(verts, -1, axis=0)
        cr = _cross(verts, nxt)
        centroid = np.sum((verts + nxt) * cr[:, None], axis=0) / (3.0 * area2)
        self._verts = verts
        self._radii = None
        self._spline = None
        self.area = 0.5 * area2
        self.centroid = centroid
        self._check_star_shaped(verts, centroid)

    @staticmethod
    def _check_star_shaped(verts, centroid):
        v = verts - centroid
        r = np.hypot(v[:, 0], v[:, 1])
        if np.any(r < 1e-12):
            raise InvalidRegionError("invalid polygon: vertex at centroid")
        ang = np.arctan2(v[:, 1], v[:, 0])
        steps = np.diff(ang, append=ang[0] + 2.0 * np.pi) % (2.0 * np.pi)
        if np.any(steps <= 0) or np.any(steps >= np.pi) or not np.isclose(
                steps.sum(), 2.0 * np.pi, atol=1e-9):
            raise InvalidRegionError("invalid polygon")

    def _init_sampled(self, radii, center, recenter):
        if recenter:
            for _ in range(60):
                spline = _periodic_spline(radii)
                offset = _centroid_offset(spline)
                if np.hypot(*offset) < 1e-13 * radii.mean():
                    center = center + offset
                    break
                radii, center = _recenter_radii(spline, center, offset, radii.size)
                if np.any(~np.isfinite(radii)) or np.any(radii <= 0):
                    raise InvalidRegionError("region not star-shaped about centroid")
            else:
                raise InvalidRegionError("centroid re-centering did not converge")
        else:
            # caller asserts the radii are already measured about the centroid
            spline = _periodic_spline(radii)
        self._verts = None
        self._radii = radii
        self._spline = spline
        self._spline_deriv = spline.derivative()
        self.centroid = np.asarray(center, dtype=float)
        self.area = _polar_area(spline)
        if self.area < _DEGENERATE_AREA:
            raise DegenerateRegionError("degenerate region")

    # -- boundary ----------------------------------------------------------

    def boundary_function(self, thetas) -> np.ndarray:
        """Radial function b(theta) about the centroid, vectorized."""
        thetas = np.asarray(thetas, dtype=float)
        scalar = thetas.ndim == 0
        th = np.atleast_1d(thetas) % (2.0 * np.pi)
        if self.kind == SAMPLED:
            out = self._spline(th)
        else:
            out = _ray_polyline_radii(th, self.centroid, self._verts)
            if np.any(np.isnan(out)):
                raise InvalidRegionError("ray cast failed: region not star-shaped")
        return float(out[0]) if scalar else out

    def boundary_points(self, thetas) -> np.ndarray:
        th = np.atleast_1d(np.asarray(thetas, dtype=float))
        return self.centroid + self.boundary_function(th)[:, None] * _unit(th)

    def boundary_polyline(self, n=_QUAD_GRID) -> np.ndarray:
        if self.kind == POLYGON:
            return self._verts
        return self.boundary_points(np.linspace(0.0, 2.0 * np.pi, n, endpoint=False))

    def boundary_derivative(self, thetas) -> np.ndarray:
        """db/dtheta; only available for sampled boundaries."""
        if self.kind != SAMPLED:
            raise GeometryError("boundary derivative undefined for polygons")
        return self._spline_deriv(np.asarray(thetas, dtype=float) % (2.0 * np.pi))

    @property
    def vertices(self) -> np.ndarray:
        if self.kind != POLYGON:
            raise GeometryError("region has no vertices")
        return self._verts

    @property
    def radii(self) -> np.ndarray:
        if self.kind != SAMPLED:
            raise GeometryError("region stores no radius grid")
        return self._radii

    def diameter(self) -> float:
        pts = self.boundary_polyline(512)
        d2 = np.sum((pts[:, None, :] - pts[None, :, :]) ** 2, axis=-1)
        return float(np.sqrt(d2.max()))

    def bounding_box(self):
        pts = self.boundary_polyline()
        return pts.min(axis=0), pts.max(axis=0)

    def contains(self, points, tol=1e-9) -> np.ndarray:
        pts = np.atleast_2d(np.asarray(points, dtype=float))
        v = pts - self.centroid
        r = np.hypot(v[:, 0], v[:, 1])
        b = self.boundary_function(np.arctan2(v[:, 1], v[:, 0]))
        return r <= b + tol

    def translated(self, t) -> "Region":
        t = np.asarray(t, dtype=float)
        if self.kind == POLYGON:
            return Region.from_vertices(self._verts + t, self.lipschitz_bound)
        return Region.from_radii(self._radii, self.centroid + t,
                                 self.lipschitz_bound, recenter=False)

    # -- serialization -----------------------------------------------------

    def to_dict(self) -> dict:
        if self.kind == POLYGON:
            return {"kind": POLYGON, "vertices": self._verts.tolist(),
                    "lipschitz_bound": self.lipschitz_bound}
        return {"kind": SAMPLED, "radii": self._radii.tolist(),
                "centroid": self.centroid.tolist(),
                "lipschitz_bound": self.lipschitz_bound}

    @classmethod
    def from_dict(cls, d: dict) -> "Region":
        if d["kind"] == POLYGON:
            return cls.from_vertices(d["vertices"], d.get("lipschitz_bound"))
        # serialized radii are already measured about the centroid
        return cls.from_radii(d["radii"], d.get("centroid", (0.0, 0.0)),
                              d.get("lipschitz_bound"), recenter=False)

    def __repr__(self):
        n = len(self._verts) if self.kind == POLYGON else len(self._radii)
        return (f"Region({self.kind}, n={n}, centroid=({self.centroid[0]:.4g}, "
                f"{self.centroid[1]:.4g}), area={self.area:.4g})")


# -- sampled-boundary internals ---------------------------------------------

def _periodic_spline(radii) -> CubicSpline:
    m = radii.size
    th = np.linspace(0.0, 2.0 * np.pi, m + 1)
    return CubicSpline(th, np.append(radii, radii[0]), bc_type="periodic")


def _polar_area(spline) -> float:
    th = np.linspace(0.0, 2.0 * np.pi, _QUAD_GRID, endpoint=False)
    b = spline(th)
    return float(0.5 * np.mean(b**2) * 2.0 * np.pi)


def _centroid_offset(spline) -> np.ndarray:
    """Area centroid relative to the polar origin of the radial function."""
    th = np.linspace(0.0, 2.0 * np.pi, _QUAD_GRID, endpoint=False)
    b = spline(th)
    area = 0.5 * np.mean(b**2) * 2.0 * np.pi
    if area < _DEGENERATE_AREA:
        raise DegenerateRegionError("degenerate region")
    moment = np.mean((b**3)[:, None] / 3.0 * _unit(th), axis=0) * 2.0 * np.pi
    return moment / area


def _recenter_radii(spline, center, offset, m):
    """Resample the boundary curve at uniform angles about center+offset.

    Newton iteration on the curve parameter; the offset is small relative to
    the radii, so the identity is an excellent starting guess.
    """
    new_center = center + offset
    theta = np.linspace(0.0, 2.0 * np.pi, m, endpoint=False)
    s = theta.copy()
    dspline = spline.derivative()
    for _ in range(50):
        sm = s % (2.0 * np.pi)
        b = spline(sm)
        db = dspline(sm)
        e = _unit(s)
        gamma = center + b[:, None] * e
        v = gamma - new_center
        h = _wrap_pm_pi(np.arctan2(v[:, 1], v[:, 0]) - theta)
        if np.max(np.abs(h)) < 1e-14:
            break
        dgamma = db[:, None] * e + b[:, None] * np.stack([-e[:, 1], e[:, 0]], axis=-1)
        dpsi = _cross(v, dgamma) / np.sum(v * v, axis=1)
        step = np.clip(h / dpsi, -0.2, 0.2)
        s = s - step
    else:
        raise InvalidRegionError("region not star-shaped about centroid")
    radii = np.hypot(*(gamma - new_center).T)
    return radii, new_center


# -- operations --------------------------------------------------------------

def centroid(region: Region) -> np.ndarray:
    """Area centroid (cached at construction)."""
    return region.centroid


def boundary_radius(region: Region, theta, origin=None):
    """Distance from `origin` to the boundary along the ray at angle theta.

    With origin at the centroid (the default) this is the radial function
    itself; otherwise it is resolved by ray intersection against the exact
    polygon edges or a dense polyline of the smooth boundary.
    """
    if origin is None:
        return region.boundary_function(theta)
    origin = np.asarray(origin, dtype=float)
    if np.allclose(origin, region.centroid, atol=1e-14):
        return region.boundary_function(theta)
    if not bool(region.contains(origin, tol=-1e-12)[0]):
        raise PointOutsideRegionError("origin not interior")
    thetas = np.asarray(theta, dtype=float)
    scalar = thetas.ndim == 0
    out = _ray_polyline_radii(np.atleast_1d(thetas), origin, region.boundary_polyline())
    if np.any(np.isnan(out)):
        raise GeometryError("ray cast failed from origin")
    return float(out[0]) if scalar else out


def alpha(region: Region, points) -> np.ndarray:
    """Map points of the closed region onto the closed unit disk.

    Each point is scaled along its ray from the centroid by the boundary
    radius at that angle; the centroid itself maps to the origin.
    """
    pts = np.asarray(points, dtype=float)
    scalar = pts.ndim == 1
    pts = np.atleast_2d(pts)
    v = pts - region.centroid
    r = np.hypot(v[:, 0], v[:, 1])
    th = np.arctan2(v[:, 1], v[:, 0])
    b = region.boundary_function(th)
    if np.any(r > b + 1e-9):
        raise PointOutsideRegionError("point outside region")
    q = (np.minimum(r / b, 1.0))[:, None] * _unit(th)
    return q[0] if scalar else q


def alpha_inv(region: Region, disk_points) -> np.ndarray:
    """Inverse of `alpha`: map unit-disk points back into the region."""
    q = np.asarray(disk_points, dtype=float)
    scalar = q.ndim == 1
    q = np.atleast_2d(q)
    rho = np.hypot(q[:, 0], q[:, 1])
    if np.any(rho > 1.0 + 1e-9):
        raise PointOutsideRegionError("point outside unit disk")
    th = np.arctan2(q[:, 1], q[:, 0])
    p = region.centroid + (rho * region.boundary_function(th))[:, None] * _unit(th)
    return p[0] if scalar else p


def metric_dU(a: Region, b: Region, cfg: RegionMetric = RegionMetric()) -> float:
    """Centroid distance plus sup-norm gap of the radial functions.

    The sup over theta is discretized on a uniform grid of
    cfg.angle_grid_size angles; boundary functions are taken about each
    region's own centroid.
    """
    th = np.linspace(0.0, 2.0 * np.pi, cfg.angle_grid_size, endpoint=False)
    gap = float(np.max(np.abs(a.boundary_function(th) - b.boundary_function(th))))
    return float(np.hypot(*(a.centroid - b.centroid))) + gap


def _field_values(field, eval_points):
    if callable(field):
        return np.asarray(field(eval_points), dtype=float)
    vals = np.asarray(field, dtype=float)
    if vals.shape[0] != eval_points.shape[0]:
        raise ValueError("field values do not align with eval_points")
    return vals


def metric_dX(a, b, cfg: RegionMetric = RegionMetric(), eval_points=None) -> float:
    """Metric on (region, disk field) pairs: dU + max field gap on the disk.

    `a` and `b` are (Region, field) pairs where the field is either an array
    aligned with eval_points or a callable on (N, 2) disk points.
    """
    if eval_points is None or len(eval_points) == 0:
        raise ValueError("eval_points must be a nonempty list of disk points")
    pts = np.atleast_2d(np.asarray(eval_points, dtype=float))
    region_a, field_a = a
    region_b, field_b = b
    gap = float(np.max(np.abs(_field_values(field_a, pts) - _field_values(field_b, pts))))
    return metric_dU(region_a, region_b, cfg) + gap


def discretize_phi(region: Region, n: int) -> np.ndarray:
    """Boundary points at n uniform angles about the centroid, shape (n, 2)."""
    if n < 3:
        raise ValueError("n must be >= 3")
    th = 2.0 * np.pi * np.arange(n) / n
    return region.boundary_points(th)


def discretize_phi_radii(region: Region, n: int) -> np.ndarray:
    """Radii-only encoding of the boundary at n uniform angles, shape (n,)."""
    if n < 3:
        raise ValueError("n must be >= 3")
    th = 2.0 * np.pi * np.arange(n) / n
    return region.boundary_function(th)


def reconstruct_psi(points) -> Region:
    """Polygon region with the given vertices (inverse leg of discretization)."""
    try:
        return Region.from_vertices(points)
    except DegenerateRegionError:
        raise
    except GeometryError as exc:
        raise InvalidRegionError(f"invalid polygon: {exc}") from exc


def project_pn(region: Region, n: int) -> Region:
    """P_n = reconstruct_psi after discretize_phi."""
    return reconstruct_psi(discretize_phi(region, n))


def lipschitz_estimate(region: Region, grid: int = _QUAD_GRID) -> float:
    """Max forward-difference slope of b(theta) on a uniform grid."""
    if grid < 256:
        raise ValueError("grid must be >= 256")
    th = np.linspace(0.0, 2.0 * np.pi, grid, endpoint=False)
    b = region.boundary_function(th)
    db = np.abs(np.diff(b, append=b[0]))
    return float(db.max() * grid / (2.0 * np.pi))


# -- random region generators -------------------------------------------------

def _as_rng(rng) -> np.random.Generator:
    if isinstance(rng, np.random.Generator):
        return rng
    return derive_rng(int(rng), "region")


def _min_interior_angle(verts) -> float:
    prev = np.roll(verts, 1, axis=0) - verts
    nxt = np.roll(verts, -1, axis=0) - verts
    cosang = np.sum(prev * nxt, axis=1) / (
        np.hypot(prev[:, 0], prev[:, 1]) * np.hypot(nxt[:, 0], nxt[:, 1]))
    return float(np.min(np.arccos(np.clip(cosang, -1.0, 1.0))))


def random_convex_polygon(k: int, rng, lipschitz_bound=DEFAULT_LIPSCHITZ_BOUND) -> Region:
    """Random convex k-gon inside the unit square, min interior angle 20 deg.

    Rejection sampling: k uniform points whose convex hull must use all k of
    them and satisfy the angle and Lipschitz constraints.
    """
    if k not in (4, 5, 6):
        raise ValueError("polygon vertex count must be 4, 5 or 6")
    gen = _as_rng(rng)
    min_angle = np.deg2rad(20.0)
    for _ in range(_REJECTION_BUDGET):
        pts = gen.uniform(0.0, 1.0, size=(k, 2))
        try:
            hull = ConvexHull(pts)
        except Exception:
            continue
        if len(hull.vertices) != k:
            continue
        verts = pts[hull.vertices]           # CCW for 2-d hulls
        if _min_interior_angle(verts) < min_angle:
            continue
        try:
            return Region.from_vertices(verts, lipschitz_bound)
        except GeometryError:
            continue
    raise GeometryError("rejection budget exhausted generating convex polygon")


DEFAULT_BOUNDARY_GP = GPConfig(kernel="periodic", lengthscale=1.0, variance=0.04)


def random_smooth_region(rng, gp_cfg: GPConfig | None = None, base_radius=0.3,
                         lipschitz_bound=DEFAULT_LIPSCHITZ_BOUND, m=256) -> Region:
    """Random smooth star-shaped region translated into the unit square.

    The boundary is b = r0 + s*g with g a periodic-GP draw; the scale s is
    shrunk (never grown) so that b stays above 0.1*r0, the Lipschitz
    constraint holds with margin, and the region fits inside [0,1]^2.
    """
    gen = _as_rng(rng)
    cfg = DEFAULT_BOUNDARY_GP if gp_cfg is None else gp_cfg
    th = np.linspace(0.0, 2.0 * np.pi, m, endpoint=False)
    for _ in range(_REJECTION_BUDGET):
        g = gp_sample(th, cfg, rng=gen)
        spline = _periodic_spline(g)
        fine = np.linspace(0.0, 2.0 * np.pi, _QUAD_GRID, endpoint=False)
        gmin = float(spline(fine).min())
        gmax = float(spline(fine).max())
        glip = float(np.abs(spline.derivative()(fine)).max())
        s = 1.0
        if gmin < 0:
            s = min(s, 0.9 * base_radius / -gmin)
        if glip > 0:
            s = min(s, 0.9 * lipschitz_bound / glip)
        if gmax > 0:
            s = min(s, (0.49 - base_radius) / gmax)
        try:
            region = Region.from_radii(base_radius + s * g,
                                       lipschitz_bound=lipschitz_bound)
        except GeometryError:
            continue
        lo, hi = region.bounding_box()
        extent = hi - lo
        if np.any(extent >= 0.995):
            continue
        shift = 0.5 * (1.0 - extent) - lo + 0.0
        return region.translated(shift)
    raise GeometryError("rejection budget exhausted generating smooth region")
