"""Planar triangulation data model: adjacency, boundary loops, point location."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import (
    BoundaryTopologyError,
    DegenerateTriangleError,
    DisconnectedMeshError,
    LocationError,
    NonManifoldError,
)
from .geom import round_quarters

logger = logging.getLogger(__name__)

DEGENERATE_AREA_FACTOR = 1e-14
LOCATE_EPS_FACTOR = 1e-9


@dataclass
class PointLocation:
    """Containing triangle and barycentric coordinates of a query point."""

    triangle: int
    bary: np.ndarray

    def __post_init__(self):
        s = float(self.bary.sum())
        if abs(s - 1.0) > 1e-12:
            self.bary = self.bary / s


@dataclass
class BoundaryLoop:
    """One closed boundary loop, ordered with the domain on its left."""

    vertices: np.ndarray
    outer: bool
    turning: np.ndarray = field(default=None)

    def __len__(self):
        return len(self.vertices)


class TriangleLocator:
    """Uniform-grid bucket index over a triangle soup, with walk fallback.

    Used both for physical-space queries on a TriMesh and for locating
    parametric-space points inside a partition's (U, V) image.
    """

    def __init__(self, points: np.ndarray, triangles: np.ndarray):
        self.points = points
        self.triangles = triangles
        p = points[triangles]
        self.tri_min = p.min(axis=1)
        self.tri_max = p.max(axis=1)
        self.lo = points.min(axis=0)
        self.hi = points.max(axis=0)
        span = np.maximum(self.hi - self.lo, 1e-300)
        n = max(1, int(math.sqrt(len(triangles))))
        self.nx = n
        self.ny = n
        self.cell = span / [self.nx, self.ny]
        self.buckets: dict[tuple[int, int], list[int]] = {}
        ij_min = self._cell_of(self.tri_min)
        ij_max = self._cell_of(self.tri_max)
        for t in range(len(triangles)):
            for i in range(ij_min[t, 0], ij_max[t, 0] + 1):
                for j in range(ij_min[t, 1], ij_max[t, 1] + 1):
                    self.buckets.setdefault((i, j), []).append(t)

    def _cell_of(self, pts: np.ndarray) -> np.ndarray:
        ij = np.floor((pts - self.lo) / self.cell).astype(int)
        return np.clip(ij, 0, [self.nx - 1, self.ny - 1])

    def bary(self, t: int, p) -> np.ndarray:
        a, b, c = self.points[self.triangles[t]]
        det = (b[0] - a[0]) * (c[1] - a[1]) - (b[1] - a[1]) * (c[0] - a[0])
        l1 = ((p[0] - a[0]) * (c[1] - a[1]) - (p[1] - a[1]) * (c[0] - a[0])) / det
        l2 = ((b[0] - a[0]) * (p[1] - a[1]) - (b[1] - a[1]) * (p[0] - a[0])) / det
        return np.array([1.0 - l1 - l2, l1, l2])

    def candidates(self, p) -> list[int]:
        i, j = self._cell_of(np.asarray([p], dtype=float))[0]
        return self.buckets.get((int(i), int(j)), [])

    def find(self, p, tol: float = 1e-12) -> tuple[int, np.ndarray] | None:
        """Smallest triangle id containing p (within tol), or None."""
        best = None
        for t in sorted(self.candidates(p)):
            if not (self.tri_min[t, 0] - 1e-12 <= p[0] <= self.tri_max[t, 0] + 1e-12):
                continue
            if not (self.tri_min[t, 1] - 1e-12 <= p[1] <= self.tri_max[t, 1] + 1e-12):
                continue
            bary = self.bary(t, p)
            if bary.min() >= -tol:
                best = (t, bary)
                break
        return best

    def find_nearest(self, p) -> tuple[int, np.ndarray, float]:
        """Exhaustive nearest triangle by clamped barycentric distance."""
        best_t, best_bary, best_d = -1, None, np.inf
        for t in range(len(self.triangles)):
            bary = self.bary(t, p)
            clamped = np.clip(bary, 0.0, None)
            clamped /= clamped.sum()
            q = clamped @ self.points[self.triangles[t]]
            d = math.hypot(q[0] - p[0], q[1] - p[1])
            if d < best_d:
                best_t, best_bary, best_d = t, clamped, d
        return best_t, best_bary, best_d


class TriMesh:
    """Immutable planar triangulation with adjacency and boundary structure.

    Triangles are normalized to counter-clockwise orientation at
    construction; the number of reoriented triangles is kept in
    ``reoriented``. Construction fails on degenerate triangles, non-manifold
    edges, disconnected meshes, and malformed boundary loops.
    """

    def __init__(self, vertices, triangles):
        self.vertices = np.ascontiguousarray(vertices, dtype=float)
        self.triangles = np.ascontiguousarray(triangles, dtype=np.int64)
        if self.vertices.ndim != 2 or self.vertices.shape[1] != 2:
            raise ValueError("vertices must be (n, 2)")
        if self.triangles.ndim != 2 or self.triangles.shape[1] != 3:
            raise ValueError("triangles must be (m, 3)")
        if len(self.triangles) == 0:
            raise ValueError("mesh has no triangles")
        if self.triangles.max() >= len(self.vertices) or self.triangles.min() < 0:
            raise ValueError("triangle vertex id out of range")

        self.bbox_min = self.vertices.min(axis=0)
        self.bbox_max = self.vertices.max(axis=0)
        self.bbox_diag = float(np.hypot(*(self.bbox_max - self.bbox_min)))
        self.eps_loc = LOCATE_EPS_FACTOR * self.bbox_diag

        self.reoriented = self._orient()
        self._check_degenerate()
        self._build_edges()
        self._check_connected()
        self._build_loops()
        self._build_vertex_tris()

        el = self.edge_lengths()
        self.min_edge = float(el.min())
        self.mean_edge = float(el.mean())
        self.tri_mean_edge = el[self.tri_edges].mean(axis=1)
        self._locator = None
        self._fan_cache: dict[int, tuple[list[int], list[int], bool]] = {}

    # -- construction ------------------------------------------------------

    def _orient(self) -> int:
        p = self.vertices[self.triangles]
        area2 = (p[:, 1, 0] - p[:, 0, 0]) * (p[:, 2, 1] - p[:, 0, 1]) - (
            p[:, 1, 1] - p[:, 0, 1]
        ) * (p[:, 2, 0] - p[:, 0, 0])
        flip = area2 < 0
        if flip.any():
            tris = self.triangles.copy()
            tris[flip] = tris[flip][:, [0, 2, 1]]
            self.triangles = tris
            area2 = np.abs(area2)
        self.areas = 0.5 * area2
        n = int(flip.sum())
        if n:
            logger.info("reoriented %d clockwise triangles", n)
        return n

    def _check_degenerate(self):
        tol = DEGENERATE_AREA_FACTOR * self.bbox_diag**2
        bad = np.nonzero(self.areas < tol)[0]
        if len(bad):
            raise DegenerateTriangleError(
                f"{len(bad)} degenerate triangles (first: {bad[0]}, area {self.areas[bad[0]]:g})"
            )

    def _build_edges(self):
        t = self.triangles
        # edge opposite local vertex i is (t[i+1], t[i+2])
        raw = np.concatenate([t[:, [1, 2]], t[:, [2, 0]], t[:, [0, 1]]])
        key = np.sort(raw, axis=1)
        self.edges, inverse = np.unique(key, axis=0, return_inverse=True)
        ne = len(self.edges)
        self.tri_edges = inverse.reshape(3, -1).T.copy()
        self.edge_tris = np.full((ne, 2), -1, dtype=np.int64)
        counts = np.zeros(ne, dtype=np.int64)
        nt = len(t)
        for local in range(3):
            for tri in range(nt):
                e = self.tri_edges[tri, local]
                c = counts[e]
                if c >= 2:
                    a, b = self.edges[e]
                    raise NonManifoldError(f"edge ({a}, {b}) bounds more than 2 triangles")
                self.edge_tris[e, c] = tri
                counts[e] += 1
        self.boundary_edge_ids = np.nonzero(self.edge_tris[:, 1] < 0)[0]
        self.is_boundary_edge = self.edge_tris[:, 1] < 0
        self.is_boundary_vertex = np.zeros(len(self.vertices), dtype=bool)
        self.is_boundary_vertex[self.edges[self.boundary_edge_ids].ravel()] = True
        self.edge_index = {
            (int(a), int(b)): i for i, (a, b) in enumerate(self.edges)
        }

    def _check_connected(self):
        # flood over shared edges
        nt = len(self.triangles)
        seen = np.zeros(nt, dtype=bool)
        stack = [0]
        seen[0] = True
        while stack:
            tri = stack.pop()
            for e in self.tri_edges[tri]:
                for nb in self.edge_tris[e]:
                    if nb >= 0 and not seen[nb]:
                        seen[nb] = True
                        stack.append(int(nb))
        if not seen.all():
            raise DisconnectedMeshError(
                f"{int((~seen).sum())} triangles unreachable from triangle 0"
            )

    def _boundary_successor(self):
        """Directed boundary edges a->b with the domain on the left."""
        succ = {}
        for e in self.boundary_edge_ids:
            tri = self.edge_tris[e, 0]
            tv = self.triangles[tri]
            a, b = self.edges[e]
            # orientation within the CCW triangle
            for i in range(3):
                if tv[i] == a and tv[(i + 1) % 3] == b:
                    succ[int(a)] = int(b)
                    break
                if tv[i] == b and tv[(i + 1) % 3] == a:
                    succ[int(b)] = int(a)
                    break
        return succ

    def _build_loops(self):
        succ = self._boundary_successor()
        if len(succ) != len(self.boundary_edge_ids):
            raise BoundaryTopologyError("boundary is not a union of simple loops")
        remaining = set(succ)
        loops = []
        while remaining:
            start = min(remaining)
            chain = [start]
            v = succ[start]
            while v != start:
                if v not in remaining:
                    raise BoundaryTopologyError("boundary loop does not close")
                chain.append(v)
                v = succ[v]
            remaining.difference_update(chain)
            pts = self.vertices[chain]
            x, y = pts[:, 0], pts[:, 1]
            area = 0.5 * float(np.dot(x, np.roll(y, -1)) - np.dot(y, np.roll(x, -1)))
            loops.append(BoundaryLoop(np.array(chain, dtype=np.int64), outer=area > 0))
        outer = [l for l in loops if l.outer]
        if len(outer) != 1:
            raise BoundaryTopologyError(f"expected exactly 1 outer loop, found {len(outer)}")
        loops.sort(key=lambda l: (not l.outer, int(l.vertices[0])))
        self.loops = loops
        self._fill_turning()

    def _fill_turning(self):
        interior = self.interior_angle_sums()
        for loop in self.loops:
            loop.turning = math.pi - interior[loop.vertices]

    def _build_vertex_tris(self):
        counts = np.zeros(len(self.vertices), dtype=np.int64)
        for col in range(3):
            np.add.at(counts, self.triangles[:, col], 1)
        indptr = np.zeros(len(self.vertices) + 1, dtype=np.int64)
        np.cumsum(counts, out=indptr[1:])
        data = np.zeros(indptr[-1], dtype=np.int64)
        cursor = indptr[:-1].copy()
        for tri in range(len(self.triangles)):
            for v in self.triangles[tri]:
                data[cursor[v]] = tri
                cursor[v] += 1
        self._vt_indptr = indptr
        self._vt_data = data

    # -- topology ----------------------------------------------------------

    @property
    def n_vertices(self):
        return len(self.vertices)

    @property
    def n_triangles(self):
        return len(self.triangles)

    @property
    def n_edges(self):
        return len(self.edges)

    def euler_characteristic(self) -> int:
        return self.n_vertices - self.n_edges + self.n_triangles

    def chi_from_loops(self) -> int:
        return 1 - sum(1 for l in self.loops if not l.outer)

    def vertex_triangles(self, v: int) -> np.ndarray:
        return self._vt_data[self._vt_indptr[v] : self._vt_indptr[v + 1]]

    def vertex_fan(self, v: int):
        """Incident triangles of v in CCW order, plus the ordered link ring.

        Returns (triangles, ring_vertices, open). For a boundary vertex the
        fan is open and starts at the boundary edge leaving v in domain-left
        orientation; ring then has len(triangles)+1 vertices.
        """
        if v in self._fan_cache:
            return self._fan_cache[v]
        tris = list(self.vertex_triangles(v))
        # map: neighbour reached by CCW rotation within each triangle
        nxt = {}
        for t in tris:
            tv = self.triangles[t]
            i = int(np.nonzero(tv == v)[0][0])
            a, b = int(tv[(i + 1) % 3]), int(tv[(i + 2) % 3])
            nxt[a] = (b, int(t))
        starts = [a for a in nxt if not any(b == a for b, _ in nxt.values())]
        is_open = bool(starts)
        if is_open:
            if len(starts) != 1:
                raise NonManifoldError(f"vertex {v} has a non-disk fan")
            cur = starts[0]
        else:
            cur = min(nxt)
        ring = [cur]
        order = []
        for _ in range(len(tris)):
            cur, t = nxt[cur]
            order.append(t)
            ring.append(cur)
        if not is_open:
            ring.pop()
        out = (order, ring, is_open)
        self._fan_cache[v] = out
        return out

    # -- geometry ----------------------------------------------------------

    def edge_lengths(self) -> np.ndarray:
        d = self.vertices[self.edges[:, 0]] - self.vertices[self.edges[:, 1]]
        return np.hypot(d[:, 0], d[:, 1])

    def interior_angle_sums(self) -> np.ndarray:
        """Sum of incident triangle angles at each vertex."""
        p = self.vertices[self.triangles]
        totals = np.zeros(self.n_vertices)
        for i in range(3):
            a = p[:, i]
            b = p[:, (i + 1) % 3]
            c = p[:, (i + 2) % 3]
            u = b - a
            w = c - a
            ang = np.arctan2(
                u[:, 0] * w[:, 1] - u[:, 1] * w[:, 0],
                u[:, 0] * w[:, 0] + u[:, 1] * w[:, 1],
            )
            np.add.at(totals, self.triangles[:, i], np.abs(ang))
        return totals

    def turning_angles(self) -> dict[int, float]:
        """Per-boundary-vertex turning angle (pi minus interior angle)."""
        out = {}
        for loop in self.loops:
            for v, t in zip(loop.vertices, loop.turning):
                out[int(v)] = float(t)
        return out

    def quarter_corners(self) -> dict[int, int]:
        """Boundary vertices absorbing a nonzero whole number of quarter turns."""
        out = {}
        for v, t in self.turning_angles().items():
            q = round_quarters(t)
            if q:
                out[v] = q
        return out

    def vertex_mean_edge(self, v: int) -> float:
        tris = self.vertex_triangles(v)
        return float(self.tri_mean_edge[tris].mean())

    def tri_points(self, t: int) -> np.ndarray:
        return self.vertices[self.triangles[t]]

    def centroids(self) -> np.ndarray:
        return self.vertices[self.triangles].mean(axis=1)

    # -- point location ----------------------------------------------------

    @property
    def locator(self) -> TriangleLocator:
        if self._locator is None:
            self._locator = TriangleLocator(self.vertices, self.triangles)
        return self._locator

    def locate(self, p, eps: float | None = None) -> PointLocation:
        """Containing triangle and barycentric coordinates of p.

        Points within ``eps`` (default 1e-9 x bbox diagonal) outside the mesh
        are snapped to the nearest boundary point; farther points raise
        LocationError.
        """
        hit = self.locator.find(p)
        if hit is None:
            # neighbouring-bucket walk failed; exhaustive fallback
            t, bary, d = self.locator.find_nearest(p)
            tol = self.eps_loc if eps is None else eps
            if d > tol:
                raise LocationError(f"point {tuple(p)} is {d:g} from the mesh (tol {tol:g})")
            return PointLocation(int(t), bary)
        t, bary = hit
        return PointLocation(int(t), np.clip(bary, 0.0, None) / np.clip(bary, 0.0, None).sum())

    def locate_brute(self, p, tol: float = 1e-12) -> PointLocation | None:
        """Exhaustive scan in triangle-id order; oracle for locate()."""
        for t in range(self.n_triangles):
            bary = self.locator.bary(t, p)
            if bary.min() >= -tol:
                return PointLocation(t, np.clip(bary, 0.0, None) / np.clip(bary, 0.0, None).sum())
        return None

    def point_at(self, loc: PointLocation) -> np.ndarray:
        return loc.bary @ self.vertices[self.triangles[loc.triangle]]


def uniform_refine(mesh: TriMesh) -> TriMesh:
    """Midpoint subdivision (each triangle into 4); original vertex ids persist."""
    nv = mesh.n_vertices
    mid = mesh.vertices[mesh.edges].mean(axis=1)
    points = np.vstack([mesh.vertices, mid])
    tris = []
    for t in range(mesh.n_triangles):
        a, b, c = (int(x) for x in mesh.triangles[t])
        # edge opposite local vertex i: tri_edges[t, i]
        mab = nv + int(mesh.tri_edges[t, 2])
        mbc = nv + int(mesh.tri_edges[t, 0])
        mca = nv + int(mesh.tri_edges[t, 1])
        tris += [(a, mab, mca), (mab, b, mbc), (mca, mbc, c), (mab, mbc, mca)]
    return TriMesh(points, np.asarray(tris, dtype=np.int64))
