"""Structured triangulations of canonical planar domains.

These generators back the test fixtures and the demo CLI; any externally
produced .msh v2.2 triangulation works equally well.
"""

from __future__ import annotations

import numpy as np

from .trimesh import TriMesh


def square(n: int = 16, size: float = 1.0) -> TriMesh:
    """Unit square, n x n cells, alternating diagonals."""
    xs = np.linspace(0.0, size, n + 1)
    X, Y = np.meshgrid(xs, xs, indexing="ij")
    pts = np.column_stack([X.ravel(), Y.ravel()])

    def vid(i, j):
        return i * (n + 1) + j

    tris = []
    for i in range(n):
        for j in range(n):
            a, b = vid(i, j), vid(i + 1, j)
            c, d = vid(i + 1, j + 1), vid(i, j + 1)
            if (i + j) % 2 == 0:
                tris += [(a, b, c), (a, c, d)]
            else:
                tris += [(a, b, d), (b, c, d)]
    return TriMesh(pts, np.asarray(tris))


def disk(rings: int = 10, sectors: int = 40, radius: float = 1.0) -> TriMesh:
    """Polar disk: center fan plus concentric quad bands split to triangles."""
    pts = [(0.0, 0.0)]
    for i in range(1, rings + 1):
        r = radius * i / rings
        ang = 2 * np.pi * np.arange(sectors) / sectors
        pts.extend(zip(r * np.cos(ang), r * np.sin(ang)))
    pts = np.asarray(pts)

    def vid(i, j):
        return 1 + (i - 1) * sectors + (j % sectors)

    tris = []
    for j in range(sectors):
        tris.append((0, vid(1, j), vid(1, j + 1)))
    for i in range(1, rings):
        for j in range(sectors):
            a, b = vid(i, j), vid(i, j + 1)
            c, d = vid(i + 1, j + 1), vid(i + 1, j)
            if j % 2 == 0:
                tris += [(a, d, c), (a, c, b)]
            else:
                tris += [(a, d, b), (b, d, c)]
    return TriMesh(pts, np.asarray(tris))


def annulus(r_in: float = 0.4, r_out: float = 1.0, rings: int = 8, sectors: int = 48) -> TriMesh:
    """Annular band meshed on a polar grid."""
    pts = []
    for i in range(rings + 1):
        r = r_in + (r_out - r_in) * i / rings
        ang = 2 * np.pi * np.arange(sectors) / sectors
        pts.extend(zip(r * np.cos(ang), r * np.sin(ang)))
    pts = np.asarray(pts)

    def vid(i, j):
        return i * sectors + (j % sectors)

    tris = []
    for i in range(rings):
        for j in range(sectors):
            a, b = vid(i, j), vid(i, j + 1)
            c, d = vid(i + 1, j + 1), vid(i + 1, j)
            if j % 2 == 0:
                tris += [(a, d, c), (a, c, b)]
            else:
                tris += [(a, d, b), (b, d, c)]
    return TriMesh(pts, np.asarray(tris))


def square_minus_disk(
    n: int = 32,
    hole_center=(0.5, 0.5),
    hole_radius: float = 0.22,
    hole_sectors: int = 48,
    seed: int = 8,
) -> TriMesh:
    """Unit square with a circular hole, Delaunay-filled around the circle."""
    from scipy.spatial import Delaunay

    h = 1.0 / n
    xs = np.linspace(0.0, 1.0, n + 1)
    X, Y = np.meshgrid(xs, xs, indexing="ij")
    grid = np.column_stack([X.ravel(), Y.ravel()])
    cx, cy = hole_center
    d = np.hypot(grid[:, 0] - cx, grid[:, 1] - cy)
    keep = d > hole_radius + 0.9 * h
    grid = grid[keep]
    d = d[keep]

    on_square_edge = (
        (grid[:, 0] < 1e-12)
        | (grid[:, 0] > 1 - 1e-12)
        | (grid[:, 1] < 1e-12)
        | (grid[:, 1] > 1 - 1e-12)
    )
    # deterministic jitter breaks grid cocircularity for Delaunay
    rng = np.random.default_rng(seed)
    jitter = (rng.random(grid.shape) - 0.5) * (0.25 * h)
    movable = ~on_square_edge
    grid = grid + jitter * movable[:, None]

    ang = 2 * np.pi * np.arange(hole_sectors) / hole_sectors
    circle = np.column_stack([cx + hole_radius * np.cos(ang), cy + hole_radius * np.sin(ang)])
    pts = np.vstack([grid, circle])

    tri = Delaunay(pts)
    cent = pts[tri.simplices].mean(axis=1)
    inside_hole = np.hypot(cent[:, 0] - cx, cent[:, 1] - cy) < hole_radius
    return TriMesh(pts, tri.simplices[~inside_hole])


def two_triangle_square() -> TriMesh:
    """Smallest valid square: 4 vertices, 2 triangles."""
    pts = np.array([[0.0, 0.0], [1.0, 0.0], [1.0, 1.0], [0.0, 1.0]])
    return TriMesh(pts, np.array([[0, 1, 2], [0, 2, 3]]))


BUILTIN = {
    "square": square,
    "disk": disk,
    "annulus": annulus,
    "square_minus_disk": square_minus_disk,
}
