"""Triangulation of the study domain and barycentric projector matrices."""
from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
from scipy.spatial import ConvexHull, Delaunay, cKDTree

from .geodata import ElevationRaster, _bilinear, nearest_valid

DUPLICATE_TOL = 1e-9
BULGE = 1e-3
LATTICE_FACTOR = 0.85  # < sqrt(3)/2, so lattice diagonals stay under the limit


class MeshError(ValueError):
    """Degenerate input or an invalid triangulation."""


@dataclass
class TriangleMesh:
    vertices: np.ndarray          # (n, 2) centred lon/lat
    triangles: np.ndarray         # (m, 3), counter-clockwise
    boundary_flags: np.ndarray    # (n,) outer boundary
    vertex_elevation_km: np.ndarray = field(default=None)
    inner_hull: np.ndarray = field(default=None)  # data-region polygon (CCW)

    def __post_init__(self):
        self.vertices = np.asarray(self.vertices, dtype=float)
        self.triangles = np.asarray(self.triangles, dtype=np.int64)
        self.boundary_flags = np.asarray(self.boundary_flags, dtype=bool)
        if self.vertex_elevation_km is None:
            self.vertex_elevation_km = np.zeros(len(self.vertices))
        self.vertex_elevation_km = np.asarray(self.vertex_elevation_km, dtype=float)

    @property
    def n_vertices(self) -> int:
        return len(self.vertices)

    def areas(self) -> np.ndarray:
        return signed_areas(self.vertices, self.triangles)

    def edges(self) -> np.ndarray:
        """Unique undirected edges as (i, j) with i < j."""
        t = self.triangles
        e = np.vstack([t[:, [0, 1]], t[:, [1, 2]], t[:, [2, 0]]])
        e.sort(axis=1)
        return np.unique(e, axis=0)

    def with_elevation(self, elev) -> "TriangleMesh":
        return TriangleMesh(self.vertices, self.triangles, self.boundary_flags,
                            np.asarray(elev, dtype=float), self.inner_hull)


def signed_areas(vertices, triangles) -> np.ndarray:
    p = vertices[triangles]
    a, b = p[:, 1] - p[:, 0], p[:, 2] - p[:, 0]
    return 0.5 * (a[:, 0] * b[:, 1] - a[:, 1] * b[:, 0])


def merge_close_points(points, cutoff: float) -> tuple[np.ndarray, np.ndarray]:
    """Greedy merge in input order; returns (kept points, index map input->kept)."""
    pts = np.asarray(points, dtype=float).reshape(-1, 2)
    tree = cKDTree(pts)
    owner = np.full(len(pts), -1)
    kept = []
    radius = max(cutoff, DUPLICATE_TOL)
    for i in range(len(pts)):
        if owner[i] >= 0:
            continue
        owner[i] = len(kept)
        for j in tree.query_ball_point(pts[i], radius):
            if owner[j] < 0:
                owner[j] = len(kept)
        kept.append(pts[i])
    return np.array(kept).reshape(-1, 2), owner


def _subdivide_polygon(poly: np.ndarray, h: float, bulge: float = 0.0) -> np.ndarray:
    """Points along a CCW polygon at spacing <= h.

    ``bulge`` pushes interior points of each side outward along a parabola
    (relative sagitta) so hull points are never exactly collinear, which
    qhull would otherwise drop as coplanar.
    """
    out = []
    for a, b in zip(poly, np.roll(poly, -1, axis=0)):
        e = b - a
        k = max(1, int(np.ceil(np.linalg.norm(e) / (h * (1 - 2 * bulge)) - 1e-12)))
        t = np.arange(k)[:, None] / k
        outward = np.array([e[1], -e[0]])
        out.append(a + t * e + bulge * 4 * t * (1 - t) * outward)
    return np.vstack(out)


def _hex_lattice(lo, hi, h: float) -> np.ndarray:
    dy = h * np.sqrt(3) / 2
    ys = np.arange(lo[1], hi[1] + dy, dy)
    rows = []
    for k, y in enumerate(ys):
        xs = np.arange(lo[0] + (h / 2 if k % 2 else 0.0), hi[0] + h, h)
        rows.append(np.column_stack([xs, np.full_like(xs, y)]))
    return np.vstack(rows)


def _inside_convex(poly: np.ndarray, pts: np.ndarray, margin: float = 0.0) -> np.ndarray:
    """Points at least ``margin`` inside a CCW convex polygon (negative margin widens)."""
    inside = np.ones(len(pts), dtype=bool)
    for a, b in zip(poly, np.roll(poly, -1, axis=0)):
        e = b - a
        nrm = np.array([-e[1], e[0]]) / np.linalg.norm(e)  # inward normal
        inside &= (pts - a) @ nrm >= margin
    return inside


def _circumcentres(P: np.ndarray) -> np.ndarray:
    a, b, c = P[:, 0], P[:, 1], P[:, 2]
    d = 2 * (a[:, 0] * (b[:, 1] - c[:, 1]) + b[:, 0] * (c[:, 1] - a[:, 1])
             + c[:, 0] * (a[:, 1] - b[:, 1]))
    na, nb, nc = (a ** 2).sum(1), (b ** 2).sum(1), (c ** 2).sum(1)
    ux = (na * (b[:, 1] - c[:, 1]) + nb * (c[:, 1] - a[:, 1]) + nc * (a[:, 1] - b[:, 1])) / d
    uy = (na * (c[:, 0] - b[:, 0]) + nb * (a[:, 0] - c[:, 0]) + nc * (b[:, 0] - a[:, 0])) / d
    return np.column_stack([ux, uy])


def _drop_near(cand: np.ndarray, existing: np.ndarray, r: float) -> np.ndarray:
    if len(cand) == 0 or len(existing) == 0:
        return cand
    d, _ = cKDTree(existing).query(cand)
    return cand[d >= r]


def _refine(allpts, limit, domain, max_edge_inner, max_refine):
    """Insert circumcentres until every edge satisfies the local length limit."""
    for _ in range(max_refine):
        tri = Delaunay(allpts).simplices
        P = allpts[tri]
        elen = np.linalg.norm(P[:, [1, 2, 0]] - P, axis=2)
        worst = elen.argmax(axis=1)
        a = P[np.arange(len(P)), worst]
        b = P[np.arange(len(P)), (worst + 1) % 3]
        mid = 0.5 * (a + b)
        # flat hull slivers are discarded below, so they never count as bad
        flat = np.abs(signed_areas(allpts, tri)) <= 1e-12 * elen.max(axis=1) ** 2
        bad = (elen.max(axis=1) > limit(mid) * (1 + 1e-9)) & ~flat
        if not bad.any():
            break
        # circumcentres refine without cascading; on the hull fall back to midpoints
        cand = _circumcentres(P[bad])
        outside = ~_inside_convex(domain, cand, 1e-9 * max_edge_inner)
        cand[outside] = mid[bad][outside]
        cand, _ = merge_close_points(cand, 0.25 * max_edge_inner)
        cand = _drop_near(cand, allpts, 0.25 * max_edge_inner)
        if len(cand) == 0:
            cand = _drop_near(mid[bad], allpts, DUPLICATE_TOL)
        if len(cand) == 0:
            raise MeshError("refinement stalled on a degenerate configuration")
        allpts = np.vstack([allpts, cand])
    else:
        raise MeshError("edge refinement did not converge")
    return allpts, tri


def _smooth(pts, tri, n_fixed, hull):
    """One Laplacian pass over the free points (index >= n_fixed).

    Free points move to their neighbours' centroid. Inside the hull that is a
    convex combination of points in the hull, so they stay put on their side;
    band points that would cross into the hull keep their position.
    """
    e = np.vstack([tri[:, [0, 1]], tri[:, [1, 2]], tri[:, [2, 0]]])
    e = np.unique(np.sort(e, axis=1), axis=0)
    n = len(pts)
    W = sp.coo_matrix((np.ones(2 * len(e)), (np.r_[e[:, 0], e[:, 1]], np.r_[e[:, 1], e[:, 0]])),
                      shape=(n, n)).tocsr()
    cen = (W @ pts) / np.asarray(W.sum(axis=1))
    out = pts.copy()
    free = np.arange(n) >= n_fixed
    was_in = _inside_convex(hull, pts, 1e-12)
    now_in = _inside_convex(hull, cen, 1e-12)
    move = free & (was_in == now_in)
    out[move] = cen[move]
    return out


def build_mesh(points, max_edge_inner: float = 0.25, max_edge_outer: float = 1.0,
               cutoff: float = 0.05, extension: float = 1.0,
               max_refine: int = 30, smooth_passes: int = 4) -> TriangleMesh:
    """Delaunay mesh of the points' convex hull plus an outer extension band.

    Input points closer than ``cutoff`` are merged. The hull interior is
    filled with a hexagonal lattice slightly finer than ``max_edge_inner``
    and the band likewise for ``max_edge_outer``; triangles with an edge over
    the local limit get their circumcentre inserted until none remain.
    A few Laplacian passes over the non-input points then even out the
    triangles next to the hull.
    """
    pts, _ = merge_close_points(points, cutoff)
    if len(pts) < 3 or np.linalg.matrix_rank(pts - pts.mean(axis=0), tol=1e-9) < 2:
        raise MeshError("need at least three non-collinear points after merging")
    hull = pts[ConvexHull(pts).vertices]  # CCW

    k = max(16, int(np.ceil(2 * np.pi * extension / max_edge_outer)))
    ang = 2 * np.pi * np.arange(k) / k
    disc = extension * np.column_stack([np.cos(ang), np.sin(ang)])
    blob = (hull[:, None, :] + disc[None, :, :]).reshape(-1, 2)
    outer = blob[ConvexHull(blob).vertices] if extension > 0 else hull

    inner_bd = _subdivide_polygon(hull, max_edge_inner, 0.0 if extension > 0 else BULGE)
    outer_bd = (_subdivide_polygon(outer, max_edge_outer, BULGE) if extension > 0
                else np.empty((0, 2)))

    # lattice slightly finer than the limit so few edges need splitting
    h_in, h_out = LATTICE_FACTOR * max_edge_inner, LATTICE_FACTOR * max_edge_outer
    lo, hi = hull.min(axis=0), hull.max(axis=0)
    fill_in = _hex_lattice(lo, hi, h_in)
    fill_in = fill_in[_inside_convex(hull, fill_in, 0.5 * h_in)]
    fixed = np.vstack([pts, inner_bd])
    fill_in = _drop_near(fill_in, fixed, 0.5 * h_in)

    if extension > 0:
        olo, ohi = outer.min(axis=0), outer.max(axis=0)
        band = _hex_lattice(olo, ohi, h_out)
        band = band[_inside_convex(outer, band, 0.5 * h_out)]
        band = band[~_inside_convex(hull, band, -0.5 * h_out)]

    def limit(x):
        return np.where(_inside_convex(hull, x, -1e-9), max_edge_inner, max_edge_outer)

    domain = outer if extension > 0 else hull
    fixed, _ = merge_close_points(np.vstack([fixed, outer_bd]), DUPLICATE_TOL)
    free = np.vstack([fill_in] + ([band] if extension > 0 else []))
    free, _ = merge_close_points(_drop_near(free, fixed, DUPLICATE_TOL), DUPLICATE_TOL)
    n_fixed = len(fixed)
    allpts = np.vstack([fixed, free])
    allpts, tri = _refine(allpts, limit, domain, max_edge_inner, max_refine)
    for _ in range(smooth_passes):
        allpts = _smooth(allpts, tri, n_fixed, hull)
        allpts, tri = _refine(allpts, limit, domain, max_edge_inner, max_refine)

    verts, tris = allpts, tri
    area = signed_areas(verts, tris)
    elen = np.linalg.norm(verts[tris][:, [1, 2, 0]] - verts[tris], axis=2).max(axis=1)
    tris = tris[np.abs(area) > 1e-12 * elen ** 2]
    area = signed_areas(verts, tris)
    tris[area < 0] = tris[area < 0][:, [0, 2, 1]]

    used = np.unique(tris)
    remap = np.full(len(verts), -1)
    remap[used] = np.arange(len(used))
    verts, tris = verts[used], remap[tris]

    bflag = np.zeros(len(verts), dtype=bool)
    bflag[_boundary_vertices(tris)] = True
    return TriangleMesh(verts, tris, bflag, np.zeros(len(verts)), hull)


def _boundary_vertices(tris: np.ndarray) -> np.ndarray:
    e = np.vstack([tris[:, [0, 1]], tris[:, [1, 2]], tris[:, [2, 0]]])
    e.sort(axis=1)
    uniq, counts = np.unique(e, axis=0, return_counts=True)
    return np.unique(uniq[counts == 1])


def locate(mesh: TriangleMesh, locations) -> tuple[np.ndarray, np.ndarray]:
    """Containing triangle (or -1) and barycentric weights for each location."""
    import matplotlib.tri as mtri

    loc = np.asarray(locations, dtype=float).reshape(-1, 2)
    v = mesh.vertices
    finder = mtri.Triangulation(v[:, 0], v[:, 1], mesh.triangles).get_trifinder()
    tri = np.asarray(finder(loc[:, 0], loc[:, 1]), dtype=np.int64)

    # trifinder may miss points lying exactly on the outer boundary
    lost = np.flatnonzero(tri < 0)
    if lost.size:
        P = v[mesh.triangles]
        for k in lost:
            bc = _barycentric(P, np.broadcast_to(loc[k], (len(P), 2)))
            hit = np.flatnonzero(bc.min(axis=1) >= -1e-10)
            if hit.size:
                tri[k] = hit[0]
    bary = np.zeros((len(loc), 3))
    ok = tri >= 0
    if ok.any():
        bary[ok] = _barycentric(v[mesh.triangles[tri[ok]]], loc[ok])
        bary[ok] = np.clip(bary[ok], 0.0, 1.0)
        bary[ok] /= bary[ok].sum(axis=1, keepdims=True)
    return tri, bary


def _barycentric(P: np.ndarray, x: np.ndarray) -> np.ndarray:
    a, b, c = P[:, 0], P[:, 1], P[:, 2]
    v0, v1, v2 = b - a, c - a, x - a
    den = v0[:, 0] * v1[:, 1] - v1[:, 0] * v0[:, 1]
    l1 = (v2[:, 0] * v1[:, 1] - v1[:, 0] * v2[:, 1]) / den
    l2 = (v0[:, 0] * v2[:, 1] - v2[:, 0] * v0[:, 1]) / den
    return np.column_stack([1.0 - l1 - l2, l1, l2])


def projector(mesh: TriangleMesh, locations) -> tuple[sp.csr_matrix, np.ndarray]:
    """Observation matrix of barycentric weights and an in-domain flag per row.

    Rows for locations outside the mesh are all zero.
    """
    tri, bary = locate(mesh, locations)
    ok = tri >= 0
    n = len(tri)
    rows = np.repeat(np.flatnonzero(ok), 3)
    cols = mesh.triangles[tri[ok]].ravel()
    vals = bary[ok].ravel()
    keep = vals > 0
    A = sp.csr_matrix((vals[keep], (rows[keep], cols[keep])), shape=(n, mesh.n_vertices))
    A.sum_duplicates()
    return A, ok


def vertex_elevations(mesh: TriangleMesh, raster: ElevationRaster, lon_lat_means) -> np.ndarray:
    """Bilinear raster elevation at every vertex.

    Vertices are given in centred coordinates; ``lon_lat_means`` restores
    absolute lon/lat. Vertices beyond the raster are clamped to its edge and
    vertices landing on missing cells take the nearest valid cell.
    """
    if raster is None:
        raise ValueError("an elevation raster is required")
    lonlat = mesh.vertices + np.asarray(lon_lat_means, dtype=float)
    x0, x1, y0, y1 = raster.extent
    lon = np.clip(lonlat[:, 0], x0, x1)
    lat = np.clip(lonlat[:, 1], y0, y1)
    out = _bilinear(raster, lon, lat)
    bad = np.isnan(out)
    if bad.any():
        out[bad] = nearest_valid(raster, lon[bad], lat[bad])
    return out


# --------------------------------------------------------------------- I/O

def write_mesh(mesh: TriangleMesh, stem) -> tuple[str, str]:
    """Write ``<stem>_vertices.csv`` and ``<stem>_triangles.csv``."""
    vpath, tpath = f"{stem}_vertices.csv", f"{stem}_triangles.csv"
    with open(vpath, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["id", "x", "y", "boundary", "elevation_km"])
        for i, (p, b, z) in enumerate(zip(mesh.vertices, mesh.boundary_flags,
                                          mesh.vertex_elevation_km)):
            w.writerow([i, repr(float(p[0])), repr(float(p[1])), int(b), repr(float(z))])
    with open(tpath, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["i", "j", "k"])
        w.writerows(mesh.triangles.tolist())
    if mesh.inner_hull is not None:
        with open(f"{stem}_hull.csv", "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["x", "y"])
            w.writerows([[repr(float(a)), repr(float(b))] for a, b in mesh.inner_hull])
    return vpath, tpath


def read_mesh(stem) -> TriangleMesh:
    v = np.genfromtxt(f"{stem}_vertices.csv", delimiter=",", skip_header=1, ndmin=2)
    t = np.genfromtxt(f"{stem}_triangles.csv", delimiter=",", skip_header=1,
                      dtype=np.int64, ndmin=2)
    try:
        hull = np.genfromtxt(f"{stem}_hull.csv", delimiter=",", skip_header=1, ndmin=2)
    except OSError:
        hull = None
    return TriangleMesh(v[:, 1:3], t, v[:, 3].astype(bool), v[:, 4], hull)
