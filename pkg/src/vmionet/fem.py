"""Triangular meshing of star-shaped regions and a P1 Poisson solver.

The solver is the data-generating oracle for operator learning: it solves
-div(k grad u) = f with Dirichlet data on meshes produced by mapping a
structured unit-disk triangulation through the inverse disk transform.
Assembly is standard P1 Galerkin with elementwise-constant diffusion and a
mass-lumped load; the reduced system is solved by Jacobi-preconditioned
conjugate gradients.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from .geometry import POLYGON, Region, _unit

_MIN_ANGLE_DEG = 15.0
_MIN_TRI_AREA = 1e-12
_SNAP_TOL = 1e-7
_CG_TOL = 1e-10


class MeshQualityError(RuntimeError):
    pass


class PointOutsideMeshError(ValueError):
    pass


class SolverError(RuntimeError):
    pass


@dataclass
class TriMesh:
    """Conforming triangulation of a region.

    nodes: (N, 2) float64; triangles: (T, 3) CCW node indices;
    boundary_nodes: indices of nodes on the region boundary, in CCW order.
    """

    nodes: np.ndarray
    triangles: np.ndarray
    boundary_nodes: np.ndarray
    region: Region
    h: float
    _locator: dict | None = field(default=None, repr=False, compare=False)

    def __post_init__(self):
        self.nodes = np.asarray(self.nodes, dtype=float)
        self.triangles = np.asarray(self.triangles, dtype=np.int32)
        self.boundary_nodes = np.asarray(self.boundary_nodes, dtype=np.int32)

    @property
    def node_count(self) -> int:
        return self.nodes.shape[0]

    @property
    def triangle_count(self) -> int:
        return self.triangles.shape[0]

    def signed_areas(self) -> np.ndarray:
        p = self.nodes[self.triangles]
        return 0.5 * ((p[:, 1, 0] - p[:, 0, 0]) * (p[:, 2, 1] - p[:, 0, 1])
                      - (p[:, 2, 0] - p[:, 0, 0]) * (p[:, 1, 1] - p[:, 0, 1]))

    def area(self) -> float:
        return float(self.signed_areas().sum())

    def min_angle(self) -> float:
        """Smallest interior angle over all triangles, in degrees."""
        p = self.nodes[self.triangles]
        angles = []
        for a in range(3):
            u = p[:, (a + 1) % 3] - p[:, a]
            v = p[:, (a + 2) % 3] - p[:, a]
            c = np.sum(u * v, axis=1) / (
                np.hypot(u[:, 0], u[:, 1]) * np.hypot(v[:, 0], v[:, 1]))
            angles.append(np.arccos(np.clip(c, -1.0, 1.0)))
        return float(np.degrees(np.min(angles)))

    def edge_counts(self):
        """Occurrences of each undirected edge (conformity: 1 or 2)."""
        t = self.triangles
        e = np.concatenate([t[:, [0, 1]], t[:, [1, 2]], t[:, [2, 0]]])
        e.sort(axis=1)
        _, counts = np.unique(e, axis=0, return_counts=True)
        return counts


@dataclass
class NodalField:
    """Piecewise-linear scalar field given by one value per mesh node."""

    values: np.ndarray
    mesh: TriMesh

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        if self.values.shape != (self.mesh.node_count,):
            raise ValueError("field length does not match mesh node count")
        if not np.all(np.isfinite(self.values)):
            raise ValueError("field values must be finite")


def _nodal_values(arg, mesh: TriMesh) -> np.ndarray:
    if isinstance(arg, NodalField):
        return arg.values
    if np.isscalar(arg):
        return np.full(mesh.node_count, float(arg))
    vals = np.asarray(arg, dtype=float)
    if vals.shape != (mesh.node_count,):
        raise ValueError("nodal array length does not match mesh")
    return vals


# -- meshing ------------------------------------------------------------------

def _boundary_polyline_table(region: Region):
    """Closed polyline of the boundary with cumulative arc length.

    Polygons use their exact vertices; smooth boundaries a dense sampling.
    Returns (points, cum) where cum[i] is the length up to points[i] and the
    closing segment back to points[0] brings the total to cum[-1].
    """
    pts = region.boundary_polyline(8192)
    seg = np.roll(pts, -1, axis=0) - pts
    lens = np.hypot(seg[:, 0], seg[:, 1])
    cum = np.concatenate([[0.0], np.cumsum(lens)])
    return pts, cum


def _points_at_arclength(pts, cum, s):
    """Points on the closed polyline at arc-length positions s."""
    total = cum[-1]
    s = np.asarray(s, dtype=float) % total
    closed = np.vstack([pts, pts[:1]])
    x = np.interp(s, cum, closed[:, 0])
    y = np.interp(s, cum, closed[:, 1])
    return np.stack([x, y], axis=-1)


def _ring_angles(region, pts, cum, count, offset):
    s = (np.arange(count) + offset) * (cum[-1] / count)
    p = _points_at_arclength(pts, cum, s)
    v = p - region.centroid
    ang = np.sort(np.arctan2(v[:, 1], v[:, 0]) % (2.0 * np.pi))
    return ang


def _polygon_boundary_angles(region, h):
    """Per-edge subdivision at spacing ~h, keeping the corners exact.

    Also used for interior rings of a polygon mesh (with h scaled by the
    inverse ring fraction) so corner spokes persist toward the center.
    """
    verts = region.vertices
    angles = []
    for i in range(len(verts)):
        a, b = verts[i], verts[(i + 1) % len(verts)]
        n_e = max(1, int(round(np.hypot(*(b - a)) / h)))
        for j in range(n_e):
            p = a + (j / n_e) * (b - a)
            v = p - region.centroid
            angles.append(np.arctan2(v[1], v[0]) % (2.0 * np.pi))
    ang = np.sort(np.asarray(angles))
    if np.any(np.diff(ang) <= 1e-12):
        raise MeshQualityError("mesh quality: coincident boundary nodes")
    return ang


def _thin_ring_angles(region, ang, rho, h):
    """Drop ring angles whose physical spacing at radius fraction rho would
    fall below ~0.6 h (many-vertex polygons cluster spokes near the center)."""
    b = region.boundary_function(ang)
    min_gap = 0.5 * h / (rho * b)
    keep = []
    last = -np.inf
    for theta, gap in zip(ang, min_gap):
        if theta - last >= gap:
            keep.append(theta)
            last = theta
    # wraparound: the first kept angle must clear the last one too
    while len(keep) > 6 and keep[0] + 2.0 * np.pi - keep[-1] < min_gap[0]:
        keep.pop()
    if len(keep) < 6:
        return np.sort(np.linspace(0.0, 2.0 * np.pi, 6, endpoint=False)
                       + ang[0])
    return np.asarray(keep)


def _tri_quality(pa, pb, pc):
    """Sine of the smallest angle of a CCW triangle; <= 0 means inverted."""
    ux, uy = pb[0] - pa[0], pb[1] - pa[1]
    vx, vy = pc[0] - pa[0], pc[1] - pa[1]
    area2 = ux * vy - uy * vx
    if area2 <= 0:
        return -1.0
    la = (pc[0] - pb[0]) ** 2 + (pc[1] - pb[1]) ** 2
    lb = vx * vx + vy * vy
    lc = ux * ux + uy * uy
    # the smallest angle sits opposite the shortest edge, between the two
    # longer ones
    s1, s2, s3 = sorted((la, lb, lc))
    return float(area2 / np.sqrt(s2 * s3))


def _stitch_rings(inner_idx, inner_ang, outer_idx, outer_ang):
    """Triangulate the annulus between two rings by angular interleave."""
    na, nb = len(inner_ang), len(outer_ang)
    a0 = inner_ang[0]
    j0 = int(np.argmin(np.abs((outer_ang - a0 + np.pi) % (2.0 * np.pi) - np.pi)))
    a_seq = np.concatenate([inner_ang, [inner_ang[0] + 2.0 * np.pi]])
    b_order = [(j0 + t) % nb for t in range(nb + 1)]
    b_seq = np.array([outer_ang[b] for b in b_order])
    for t in range(1, nb + 1):
        while b_seq[t] < b_seq[t - 1]:
            b_seq[t] += 2.0 * np.pi
    if b_seq[0] > a0 + np.pi:
        b_seq -= 2.0 * np.pi
    tris = []
    ci = cj = 0
    i = 0
    while ci < na or cj < nb:
        adv_inner = cj >= nb or (ci < na and a_seq[ci + 1] <= b_seq[cj + 1])
        i_next = (i + 1) % na
        if adv_inner:
            tris.append((inner_idx[i], outer_idx[b_order[cj]], inner_idx[i_next]))
            i = i_next
            ci += 1
        else:
            tris.append((outer_idx[b_order[cj]], outer_idx[b_order[cj + 1]],
                         inner_idx[i]))
            cj += 1
    return tris


def _triangle_qualities(nodes, tris):
    """Vectorized sine of the minimum angle (negative when inverted)."""
    p = nodes[tris]
    u = p[:, 1] - p[:, 0]
    v = p[:, 2] - p[:, 0]
    area2 = u[:, 0] * v[:, 1] - u[:, 1] * v[:, 0]
    la = np.sum((p[:, 2] - p[:, 1]) ** 2, axis=1)
    lb = np.sum(v * v, axis=1)
    lc = np.sum(u * u, axis=1)
    sq = np.sort(np.stack([la, lb, lc], axis=1), axis=1)
    qual = area2 / np.sqrt(sq[:, 1] * sq[:, 2])
    return np.where(area2 > 0, qual, -1.0)


def _flip_improve(nodes, tris, max_passes=12):
    """Lawson-style edge flipping maximizing the minimum triangle angle.

    Each pass collects all interior edges whose flip strictly improves the
    worse of the two adjacent triangles and applies a non-conflicting subset,
    best improvements first.
    """
    tris = tris.copy()
    for _ in range(max_passes):
        t = tris
        edges = np.concatenate([t[:, [1, 2]], t[:, [2, 0]], t[:, [0, 1]]])
        opp = np.concatenate([t[:, 0], t[:, 1], t[:, 2]])
        tri_id = np.tile(np.arange(t.shape[0]), 3)
        key = np.sort(edges, axis=1)
        uniq, inv, counts = np.unique(key, axis=0, return_inverse=True,
                                      return_counts=True)
        order = np.argsort(inv, kind="stable")
        interior = counts == 2
        starts = np.concatenate([[0], np.cumsum(counts)])
        first = order[starts[:-1][interior]]
        second = order[starts[:-1][interior] + 1]
        t1, t2 = tri_id[first], tri_id[second]
        c, d = opp[first], opp[second]
        # the directed edge as triangle t1 traverses it, so (eu, ev, c) and
        # (ev, eu, d) are both CCW and the flipped pair below is too
        eu, ev = edges[first, 0], edges[first, 1]
        qcur = _triangle_qualities(nodes, tris)
        qold = np.minimum(qcur[t1], qcur[t2])
        new1 = np.stack([eu, d, c], axis=1)
        new2 = np.stack([d, ev, c], axis=1)
        qn = np.minimum(_triangle_qualities(nodes, new1),
                        _triangle_qualities(nodes, new2))
        gain = qn - qold
        cand = np.flatnonzero((gain > 1e-9) & (qn > 0))
        if cand.size == 0:
            break
        cand = cand[np.argsort(-gain[cand])]
        touched = np.zeros(tris.shape[0], dtype=bool)
        flipped = 0
        for e in cand:
            a, b = t1[e], t2[e]
            if touched[a] or touched[b]:
                continue
            tris[a] = new1[e]
            tris[b] = new2[e]
            touched[a] = touched[b] = True
            flipped += 1
        if flipped == 0:
            break
    return tris


def _laplacian_smooth(nodes, triangles, interior_mask):
    """One uniform-weight Laplacian smoothing pass, inversion-safe."""
    n = nodes.shape[0]
    t = triangles
    rows = np.concatenate([t[:, 0], t[:, 1], t[:, 2], t[:, 1], t[:, 2], t[:, 0]])
    cols = np.concatenate([t[:, 1], t[:, 2], t[:, 0], t[:, 0], t[:, 1], t[:, 2]])
    adj = sp.coo_matrix((np.ones_like(rows, dtype=float), (rows, cols)),
                        shape=(n, n)).tocsr()
    adj = (adj > 0).astype(float)  # duplicate edges collapse to weight 1
    deg = np.asarray(adj.sum(axis=1)).ravel()
    deg[deg == 0] = 1.0

    def areas(pos):
        p = pos[t]
        return 0.5 * ((p[:, 1, 0] - p[:, 0, 0]) * (p[:, 2, 1] - p[:, 0, 1])
                      - (p[:, 2, 0] - p[:, 0, 0]) * (p[:, 1, 1] - p[:, 0, 1]))

    pos = nodes.copy()
    target = (adj @ pos) / deg[:, None]
    new = np.where(interior_mask[:, None], target, pos)
    # revert any interior node whose star would invert
    for _ in range(10):
        bad = areas(new) <= _MIN_TRI_AREA
        if not bad.any():
            break
        bad_nodes = np.unique(t[bad])
        new[bad_nodes] = pos[bad_nodes]
    return new


def mesh_region(region: Region, h: float) -> TriMesh:
    """Triangulate a region at target edge length h.

    The boundary is sampled at arc-length spacing ~h (polygon corners kept
    exact); interior nodes are the images of concentric structured disk
    rings under the inverse disk transform, relaxed by two Laplacian
    smoothing passes. Raises MeshQualityError when the final mesh has a
    minimum angle below 15 degrees.
    """
    diam = region.diameter()
    if not (0.005 * diam <= h <= 0.2 * diam):
        raise ValueError(f"h={h} outside [0.005, 0.2] * diameter ({diam:.3g})")

    pts, cum = _boundary_polyline_table(region)
    total_len = cum[-1]
    if region.kind == POLYGON:
        bd_ang = _polygon_boundary_angles(region, h)
    else:
        n_bd = max(8, int(round(total_len / h)))
        bd_ang = _ring_angles(region, pts, cum, n_bd, 0.0)
    n_bd = len(bd_ang)

    mean_b = float(np.mean(region.boundary_function(
        np.linspace(0.0, 2.0 * np.pi, 1024, endpoint=False))))
    n_rings = max(2, int(round(mean_b / h)))

    nodes = [np.asarray(region.centroid, dtype=float)[None, :]]
    ring_indices = [np.array([0])]
    ring_angles = [np.array([0.0])]
    next_idx = 1
    for k in range(1, n_rings + 1):
        rho = k / n_rings
        if k == n_rings:
            ang = bd_ang
        elif region.kind == POLYGON:
            ang = _thin_ring_angles(region,
                                    _polygon_boundary_angles(region, h / rho),
                                    rho, h)
        else:
            count = max(6, int(round(rho * n_bd)))
            ang = _ring_angles(region, pts, cum, count, 0.0)
        b = region.boundary_function(ang)
        ring = region.centroid + (rho * b)[:, None] * _unit(ang)
        nodes.append(ring)
        ring_indices.append(np.arange(next_idx, next_idx + len(ang)))
        ring_angles.append(ang)
        next_idx += len(ang)

    node_arr = np.vstack(nodes)
    tris = []
    first = ring_indices[1]
    for j in range(len(first)):  # center fan
        tris.append((0, first[j], first[(j + 1) % len(first)]))
    for k in range(1, n_rings):
        tris.extend(_stitch_rings(ring_indices[k], ring_angles[k],
                                  ring_indices[k + 1], ring_angles[k + 1]))
    tri_arr = np.asarray(tris, dtype=np.int32)

    # diagonal flips repair the shear introduced by the disk map; two
    # smoothing passes equalize node spacing in between
    interior = np.ones(node_arr.shape[0], dtype=bool)
    interior[ring_indices[-1]] = False
    tri_arr = _flip_improve(node_arr, tri_arr)
    for _ in range(2):
        node_arr = _laplacian_smooth(node_arr, tri_arr, interior)
        tri_arr = _flip_improve(node_arr, tri_arr)

    mesh = TriMesh(node_arr, tri_arr, ring_indices[-1], region, h)
    for _ in range(2):  # salvage rounds, only entered when the gate fails
        if mesh.min_angle() >= _MIN_ANGLE_DEG:
            break
        node_arr = _laplacian_smooth(node_arr, tri_arr, interior)
        tri_arr = _flip_improve(node_arr, tri_arr)
        mesh = TriMesh(node_arr, tri_arr, ring_indices[-1], region, h)
    min_ang = mesh.min_angle()
    if min_ang < _MIN_ANGLE_DEG or np.any(mesh.signed_areas() < _MIN_TRI_AREA):
        raise MeshQualityError(f"mesh quality: min angle {min_ang:.2f} deg")
    return mesh


# -- point location and field evaluation --------------------------------------

def _build_locator(mesh: TriMesh) -> dict:
    lo = mesh.nodes.min(axis=0)
    hi = mesh.nodes.max(axis=0)
    span = np.maximum(hi - lo, 1e-12)
    ncell = max(4, int(np.sqrt(mesh.triangle_count / 2.0)))
    p = mesh.nodes[mesh.triangles]
    tmin = p.min(axis=1)
    tmax = p.max(axis=1)
    cells: dict[tuple[int, int], list[int]] = {}
    imin = np.clip(((tmin - lo) / span * ncell).astype(int), 0, ncell - 1)
    imax = np.clip(((tmax - lo) / span * ncell).astype(int), 0, ncell - 1)
    for t in range(mesh.triangle_count):
        for ix in range(imin[t, 0], imax[t, 0] + 1):
            for iy in range(imin[t, 1], imax[t, 1] + 1):
                cells.setdefault((ix, iy), []).append(t)
    # per-triangle affine maps for barycentric coordinates
    a = p[:, 0]
    m = np.stack([p[:, 1] - a, p[:, 2] - a], axis=-1)
    det = m[:, 0, 0] * m[:, 1, 1] - m[:, 0, 1] * m[:, 1, 0]
    inv = np.empty_like(m)
    inv[:, 0, 0] = m[:, 1, 1] / det
    inv[:, 0, 1] = -m[:, 0, 1] / det
    inv[:, 1, 0] = -m[:, 1, 0] / det
    inv[:, 1, 1] = m[:, 0, 0] / det
    return {"lo": lo, "span": span, "ncell": ncell, "cells": cells,
            "origin": a, "inv": inv}


def locate_points(mesh: TriMesh, points) -> tuple[np.ndarray, np.ndarray]:
    """Containing triangle index and barycentric coords for each point.

    Points not inside any triangle get index -1 (caller decides how to
    snap or fail).
    """
    if mesh._locator is None:
        mesh._locator = _build_locator(mesh)
    loc = mesh._locator
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    npts = pts.shape[0]
    tri_of = np.full(npts, -1, dtype=np.int64)
    bary = np.zeros((npts, 3))
    cell_ids = np.clip(((pts - loc["lo"]) / loc["span"] * loc["ncell"]).astype(int),
                       0, loc["ncell"] - 1)
    order = np.lexsort((cell_ids[:, 1], cell_ids[:, 0]))
    tol = 1e-12
    start = 0
    while start < npts:
        cell = tuple(cell_ids[order[start]])
        stop = start
        while stop < npts and tuple(cell_ids[order[stop]]) == cell:
            stop += 1
        idx = order[start:stop]
        cand = loc["cells"].get(cell, [])
        if cand:
            cand = np.asarray(cand)
            d = pts[idx][:, None, :] - loc["origin"][cand][None, :, :]
            lam12 = np.einsum('cij,pcj->pci', loc["inv"][cand], d)
            lam0 = 1.0 - lam12[..., 0] - lam12[..., 1]
            lams = np.concatenate([lam0[..., None], lam12], axis=-1)
            quality = lams.min(axis=-1)          # (p, c)
            best = quality.argmax(axis=1)
            ok = quality[np.arange(len(idx)), best] >= -tol
            sel = idx[ok]
            tri_of[sel] = cand[best[ok]]
            bary[sel] = np.clip(lams[np.arange(len(idx)), best][ok], 0.0, 1.0)
        start = stop
    return tri_of, bary


def _snap_to_boundary(mesh: TriMesh, pts):
    """Nearest point on the boundary polyline, with interpolation weights."""
    bidx = mesh.boundary_nodes
    a = mesh.nodes[bidx]
    b = mesh.nodes[np.roll(bidx, -1)]
    e = b - a
    ee = np.sum(e * e, axis=1)
    w = pts[:, None, :] - a[None, :, :]
    s = np.clip(np.einsum('pei,ei->pe', w, e) / ee[None, :], 0.0, 1.0)
    proj = a[None] + s[..., None] * e[None]
    d2 = np.sum((pts[:, None, :] - proj) ** 2, axis=-1)
    seg = d2.argmin(axis=1)
    rows = np.arange(pts.shape[0])
    return (bidx[seg], np.roll(bidx, -1)[seg], s[rows, seg],
            np.sqrt(d2[rows, seg]))


def eval_field(mesh: TriMesh, fld, points) -> np.ndarray:
    """Evaluate a nodal field at arbitrary points by P1 interpolation.

    Points inside the region but outside the mesh polyline (the sliver
    between a boundary chord and the true boundary) and points within the
    snap tolerance outside the region are projected onto the nearest
    boundary edge; anything farther out raises PointOutsideMeshError.
    """
    values = _nodal_values(fld, mesh)
    pts = np.asarray(points, dtype=float)
    scalar = pts.ndim == 1
    pts = np.atleast_2d(pts)
    tri_of, bary = locate_points(mesh, pts)
    out = np.empty(pts.shape[0])
    hit = tri_of >= 0
    if hit.any():
        tris = mesh.triangles[tri_of[hit]]
        b = bary[hit]
        vals_hit = np.sum(values[tris] * b, axis=1)
        # queries landing on a node reproduce its value exactly
        snap = b.max(axis=1) >= 1.0 - 1e-12
        if snap.any():
            nearest = tris[snap][np.arange(int(snap.sum())),
                                 b[snap].argmax(axis=1)]
            vals_hit[snap] = values[nearest]
        out[hit] = vals_hit
    miss = ~hit
    if miss.any():
        mpts = pts[miss]
        region = mesh.region
        v = mpts - region.centroid
        r = np.hypot(v[:, 0], v[:, 1])
        bfun = region.boundary_function(np.arctan2(v[:, 1], v[:, 0]))
        inside_region = r <= bfun + _SNAP_TOL
        na, nb_, s, dist = _snap_to_boundary(mesh, mpts)
        acceptable = inside_region | (dist <= _SNAP_TOL)
        if not acceptable.all():
            worst = float((r - bfun)[~acceptable].max())
            raise PointOutsideMeshError(
                f"point outside mesh (boundary excess {worst:.3g})")
        out[miss] = (1.0 - s) * values[na] + s * values[nb_]
    return float(out[0]) if scalar else out


# -- Poisson solve ------------------------------------------------------------

def assemble_poisson(mesh: TriMesh, k, f):
    """Stiffness matrix (CSR) and mass-lumped load vector.

    Diffusion k is taken elementwise constant as the mean of the three
    nodal values of each triangle.
    """
    kv = _nodal_values(k, mesh)
    fv = _nodal_values(f, mesh)
    if np.any(kv <= 0):
        raise ValueError("diffusion coefficient k must be positive at all nodes")
    t = mesh.triangles
    p = mesh.nodes[t]
    x, y = p[..., 0], p[..., 1]
    bcoef = np.stack([y[:, 1] - y[:, 2], y[:, 2] - y[:, 0], y[:, 0] - y[:, 1]], axis=1)
    ccoef = np.stack([x[:, 2] - x[:, 1], x[:, 0] - x[:, 2], x[:, 1] - x[:, 0]], axis=1)
    area = 0.5 * (bcoef[:, 0] * ccoef[:, 1] - bcoef[:, 1] * ccoef[:, 0])
    if np.any(area <= 0):
        raise MeshQualityError("mesh contains non-positive triangle areas")
    ke = kv[t].mean(axis=1)
    scale = ke / (4.0 * area)
    local = (np.einsum('ta,tb->tab', bcoef, bcoef)
             + np.einsum('ta,tb->tab', ccoef, ccoef)) * scale[:, None, None]
    rows = np.repeat(t, 3, axis=1).ravel()
    cols = np.tile(t, (1, 3)).ravel()
    stiff = sp.coo_matrix((local.ravel(), (rows, cols)),
                          shape=(mesh.node_count, mesh.node_count)).tocsr()
    load = np.zeros(mesh.node_count)
    np.add.at(load, t.ravel(), ((area[:, None] / 3.0) * fv[t]).ravel())
    return stiff, load


def pcg_jacobi(a_mat, rhs, tol=_CG_TOL, maxiter=None):
    """Jacobi-preconditioned conjugate gradients to a relative residual."""
    n = rhs.shape[0]
    if maxiter is None:
        maxiter = 20 * n
    rhs_norm = float(np.linalg.norm(rhs))
    if rhs_norm == 0.0:
        return np.zeros(n), 0
    dinv = 1.0 / a_mat.diagonal()
    x = np.zeros(n)
    r = rhs.copy()
    z = dinv * r
    p = z.copy()
    rz = float(r @ z)
    for it in range(1, maxiter + 1):
        ap = a_mat @ p
        curvature = float(p @ ap)
        if curvature <= 0.0:
            raise SolverError("CG breakdown: system matrix not positive definite")
        alpha_cg = rz / curvature
        x += alpha_cg * p
        r -= alpha_cg * ap
        res = float(np.linalg.norm(r))
        if res <= tol * rhs_norm:
            return x, it
        z = dinv * r
        rz_new = float(r @ z)
        p = z + (rz_new / rz) * p
        rz = rz_new
    raise SolverError(
        f"CG did not converge in {maxiter} iterations "
        f"(relative residual {res / rhs_norm:.3e})")


def solve_poisson(mesh: TriMesh, k, f, g=0.0) -> NodalField:
    """Solve -div(k grad u) = f, u = g on the boundary, on a triangulation.

    g may be a scalar or an array aligned with mesh.boundary_nodes.
    Dirichlet data is imposed by elimination, exact at boundary nodes.
    """
    stiff, load = assemble_poisson(mesh, k, f)
    n = mesh.node_count
    boundary = mesh.boundary_nodes
    if np.isscalar(g):
        gvals = np.full(boundary.shape[0], float(g))
    else:
        gvals = np.asarray(g, dtype=float)
        if gvals.shape != boundary.shape:
            raise ValueError("boundary data length does not match boundary nodes")
    mask = np.zeros(n, dtype=bool)
    mask[boundary] = True
    interior = np.flatnonzero(~mask)
    u = np.zeros(n)
    u[boundary] = gvals
    a_ii = stiff[interior][:, interior]
    rhs = load[interior] - stiff[interior][:, boundary] @ gvals
    u_int, _ = pcg_jacobi(a_ii, rhs)
    u[interior] = u_int
    return NodalField(u, mesh)


# -- export -------------------------------------------------------------------

def export_mesh(mesh: TriMesh, directory: str) -> None:
    """Write manifest.json plus raw node (f64 LE) and triangle (u32 LE) blobs."""
    os.makedirs(directory, exist_ok=True)
    manifest = {
        "format": "vmionet-mesh-1",
        "node_count": int(mesh.node_count),
        "triangle_count": int(mesh.triangle_count),
        "h": mesh.h,
        "boundary_nodes": mesh.boundary_nodes.tolist(),
        "region": mesh.region.to_dict(),
        "files": {"nodes": "nodes.bin", "triangles": "triangles.bin"},
    }
    with open(os.path.join(directory, "manifest.json"), "w") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
    mesh.nodes.astype("<f8").tofile(os.path.join(directory, "nodes.bin"))
    mesh.triangles.astype("<u4").tofile(os.path.join(directory, "triangles.bin"))


def load_mesh(directory: str) -> TriMesh:
    with open(os.path.join(directory, "manifest.json")) as fh:
        manifest = json.load(fh)
    nodes = np.fromfile(os.path.join(directory, "nodes.bin"),
                        dtype="<f8").reshape(manifest["node_count"], 2)
    tris = np.fromfile(os.path.join(directory, "triangles.bin"),
                       dtype="<u4").reshape(manifest["triangle_count"], 3)
    return TriMesh(nodes, tris.astype(np.int32),
                   np.asarray(manifest["boundary_nodes"], dtype=np.int32),
                   Region.from_dict(manifest["region"]), manifest["h"])
