import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.spatial import ConvexHull

from precipgam.geodata import ElevationRaster
from precipgam.mesh import (MeshError, _inside_convex, build_mesh, locate, merge_close_points, projector,
                            read_mesh, vertex_elevations, write_mesh)


def station_points(seed, n=40):
    rng = np.random.default_rng(seed)
    return rng.uniform([-1.0, -0.5], [1.0, 0.5], size=(n, 2))


def edge_lengths(mesh):
    e = mesh.edges()
    return np.linalg.norm(mesh.vertices[e[:, 0]] - mesh.vertices[e[:, 1]], axis=1), e


def min_angles(mesh):
    P = mesh.vertices[mesh.triangles]
    a = np.linalg.norm(P[:, 1] - P[:, 2], axis=1)
    b = np.linalg.norm(P[:, 2] - P[:, 0], axis=1)
    c = np.linalg.norm(P[:, 0] - P[:, 1], axis=1)
    A = np.arccos(np.clip((b * b + c * c - a * a) / (2 * b * c), -1, 1))
    B = np.arccos(np.clip((a * a + c * c - b * b) / (2 * a * c), -1, 1))
    return np.degrees(np.minimum(np.minimum(A, B), np.pi - A - B))


@settings(max_examples=8, deadline=None)
@given(seed=st.integers(0, 10**5))
def test_mesh_invariants(seed):
    pts = station_points(seed)
    mesh = build_mesh(pts, 0.25, 0.6, 0.02, 0.5)
    assert np.all(mesh.areas() > 0)                      # counter-clockwise, no slivers
    # every station is a vertex
    d = np.min(np.linalg.norm(pts[:, None] - mesh.vertices[None], axis=2), axis=1)
    merged, _ = merge_close_points(pts, 0.02)
    assert np.all(np.min(np.linalg.norm(merged[:, None] - mesh.vertices[None], axis=2),
                         axis=1) < 1e-12)
    assert np.all(d <= 0.02)
    # the mesh covers the convex hull of its vertices exactly (no holes)
    assert mesh.areas().sum() == pytest.approx(ConvexHull(mesh.vertices).volume, rel=1e-9)
    # edge limits: inner edges under 0.25, all under 0.6
    L, e = edge_lengths(mesh)
    assert L.max() <= 0.6 * (1 + 1e-9)
    hull = mesh.inner_hull
    mid = mesh.vertices[e].mean(axis=1)
    inner = _inside_convex(hull, mid, 1e-9)
    assert L[inner].max() <= 0.25 * (1 + 1e-9)
    # stations are fixed vertices, so only triangles free of them are held to a quality bound
    gap = np.linalg.norm(mesh.vertices[:, None] - pts[None], axis=2)
    is_station = gap.min(axis=1) < 1e-12
    free = ~is_station[mesh.triangles].any(axis=1)
    assert min_angles(mesh)[free].min() > 15.0
    # boundary vertices lie outside the data hull
    assert not _inside_convex(hull, mesh.vertices[mesh.boundary_flags], 0.0).any()


def test_cutoff_merges_stations():
    pts = np.array([[0.0, 0.0], [1.0, 0.0], [0.0, 1.0], [0.001, 0.0]])
    kept, owner = merge_close_points(pts, 0.01)
    assert len(kept) == 3 and owner[3] == owner[0]
    with pytest.raises(MeshError):
        build_mesh(np.array([[0.0, 0.0], [1.0, 1.0], [2.0, 2.0]]))


def test_projector_rows_are_barycentric():
    mesh = build_mesh(station_points(1), 0.25, 0.6, 0.02, 0.5)
    rng = np.random.default_rng(0)
    loc = rng.uniform([-1.0, -0.5], [1.0, 0.5], size=(200, 2))
    A, ok = projector(mesh, loc)
    assert ok.all()
    np.testing.assert_allclose(np.asarray(A.sum(axis=1)).ravel(), 1.0)
    assert A.getnnz(axis=1).max() <= 3
    # linear functions are interpolated exactly
    for f in (lambda p: p[:, 0], lambda p: 2 * p[:, 1] - 0.3 * p[:, 0] + 1):
        np.testing.assert_allclose(A @ f(mesh.vertices), f(loc), atol=1e-12)
    # at a vertex the row is the unit vector
    A1, _ = projector(mesh, mesh.vertices[[5]])
    assert A1[0, 5] == pytest.approx(1.0)


def test_projector_outside():
    mesh = build_mesh(station_points(2), 0.3, 0.6, 0.02, 0.2)
    A, ok = projector(mesh, np.array([[50.0, 50.0], [0.0, 0.0]]))
    assert list(ok) == [False, True]
    assert A[0].nnz == 0
    tri, _ = locate(mesh, np.array([[50.0, 50.0]]))
    assert tri[0] == -1


def test_vertex_elevations():
    mesh = build_mesh(station_points(3), 0.3, 0.8, 0.02, 0.5)
    lon = 13.0 + (np.arange(100) + 0.5) * 0.05
    lat = 45.0 + (60 - np.arange(60) - 0.5) * 0.05
    vals = 0.5 + 0.1 * (lon[None, :] - 13) + 0.2 * (lat[:, None] - 45)
    vals[0, 0] = np.nan
    raster = ElevationRaster(13.0, 45.0, 0.05, vals)
    means = np.array([15.5, 46.5])
    z = vertex_elevations(mesh, raster, means)
    ref = 0.5 + 0.1 * (mesh.vertices[:, 0] + 2.5) + 0.2 * (mesh.vertices[:, 1] + 1.5)
    assert np.all(np.isfinite(z))
    np.testing.assert_allclose(z, ref, atol=1e-9)


def test_mesh_roundtrip(tmp_path):
    mesh = build_mesh(station_points(4), 0.3, 0.6, 0.02, 0.3)
    mesh = mesh.with_elevation(np.linspace(0.1, 2.0, mesh.n_vertices))
    write_mesh(mesh, tmp_path / "m")
    back = read_mesh(tmp_path / "m")
    np.testing.assert_array_equal(back.vertices, mesh.vertices)
    np.testing.assert_array_equal(back.triangles, mesh.triangles)
    np.testing.assert_array_equal(back.boundary_flags, mesh.boundary_flags)
    np.testing.assert_array_equal(back.vertex_elevation_km, mesh.vertex_elevation_km)
    np.testing.assert_array_equal(back.inner_hull, mesh.inner_hull)


def test_mesh_is_deterministic():
    a = build_mesh(station_points(5), 0.25, 0.6, 0.02, 0.5)
    b = build_mesh(station_points(5), 0.25, 0.6, 0.02, 0.5)
    np.testing.assert_array_equal(a.vertices, b.vertices)
    np.testing.assert_array_equal(a.triangles, b.triangles)
