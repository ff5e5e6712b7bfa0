import math

import numpy as np
import pytest

from quadforge import domains
from quadforge.errors import (
    DegenerateTriangleError,
    DisconnectedMeshError,
    LocationError,
    NonManifoldError,
)
from quadforge.trimesh import TriMesh


def test_two_triangle_square():
    m = domains.two_triangle_square()
    assert m.n_vertices == 4
    assert m.n_triangles == 2
    assert len(m.loops) == 1
    assert len(m.loops[0]) == 4
    assert m.euler_characteristic() == 1


def test_reorientation_counted():
    pts = np.array([[0.0, 0.0], [1.0, 0.0], [1.0, 1.0], [0.0, 1.0]])
    m = TriMesh(pts, np.array([[0, 2, 1], [0, 2, 3]]))  # first listed clockwise
    assert m.reoriented == 1
    assert np.all(m.areas > 0)


def test_degenerate_rejected():
    pts = np.array([[0.0, 0.0], [1.0, 0.0], [2.0, 0.0], [1.0, 1.0]])
    with pytest.raises(DegenerateTriangleError):
        TriMesh(pts, np.array([[0, 1, 2], [0, 1, 3]]))


def test_nonmanifold_rejected():
    pts = np.array([[0.0, 0.0], [1.0, 0.0], [0.5, 1.0], [0.5, -1.0], [0.5, 2.0]])
    tris = np.array([[0, 1, 2], [0, 3, 1], [0, 1, 4]])
    with pytest.raises(NonManifoldError):
        TriMesh(pts, tris)


def test_disconnected_rejected():
    pts = np.array(
        [[0, 0], [1, 0], [0, 1], [5, 5], [6, 5], [5, 6]], dtype=float
    )
    with pytest.raises(DisconnectedMeshError):
        TriMesh(pts, np.array([[0, 1, 2], [3, 4, 5]]))


def test_euler_matches_loops(all_domains):
    for name, m in all_domains.items():
        assert m.euler_characteristic() == m.chi_from_loops(), name


def test_turning_totals(all_domains):
    for name, m in all_domains.items():
        for loop in m.loops:
            total = float(np.sum(loop.turning))
            expected = 2 * math.pi if loop.outer else -2 * math.pi
            assert abs(total - expected) < 1e-9, name
        chi_turn = sum(np.sum(l.turning) for l in m.loops) / (2 * math.pi)
        assert abs(chi_turn - m.chi_from_loops()) < 1e-9, name


def test_turning_square_corner(square_mesh):
    turning = square_mesh.turning_angles()
    corners = square_mesh.quarter_corners()
    assert sorted(corners.values()) == [1, 1, 1, 1]
    for v, t in turning.items():
        if v in corners:
            assert abs(t - math.pi / 2) < 1e-12
        else:
            assert abs(t) < 1e-12


def test_locate_centroid_and_vertex(square_mesh):
    m = square_mesh
    c = m.tri_points(5).mean(axis=0)
    loc = m.locate(c)
    assert loc.triangle == 5
    assert np.allclose(loc.bary, [1 / 3] * 3, atol=1e-12)

    v = 40
    loc = m.locate(m.vertices[v])
    assert v in m.triangles[loc.triangle]
    assert loc.bary.max() > 1 - 1e-9


def test_locate_agrees_with_brute_force(smd_mesh):
    m = smd_mesh
    rng = np.random.default_rng(3)
    hits = 0
    while hits < 1000:
        p = rng.random(2)
        brute = m.locate_brute(p)
        if brute is None:
            continue  # inside the hole
        hits += 1
        loc = m.locate(p)
        assert loc.triangle == brute.triangle
        assert np.allclose(loc.bary, brute.bary, atol=1e-9)


def test_locate_snaps_near_boundary(square_mesh):
    p = np.array([0.5, -1e-11])
    loc = square_mesh.locate(p)
    q = square_mesh.point_at(loc)
    assert abs(q[1]) < 1e-9


def test_locate_far_point_raises(square_mesh):
    with pytest.raises(LocationError):
        square_mesh.locate(np.array([5.0, 5.0]))


def test_vertex_fan_closed_and_open(square_mesh):
    m = square_mesh
    interior = int(np.nonzero(~m.is_boundary_vertex)[0][0])
    tris, ring, is_open = m.vertex_fan(interior)
    assert not is_open
    assert len(tris) == len(ring)
    assert set(tris) == set(m.vertex_triangles(interior))

    boundary = int(np.nonzero(m.is_boundary_vertex)[0][0])
    tris, ring, is_open = m.vertex_fan(boundary)
    assert is_open
    assert len(ring) == len(tris) + 1
