"""Per-partition conformal parameterization.

Each layout patch owns the triangles it intersects (neighbours share the
one-triangle overlap band along mutual separatrices). The rotation field is
lifted to a continuous branch over the patch submesh (quarter-turn offsets
across the cut are absorbed; a leftover mismatch means a singularity was
missed inside the patch) and the parameterization solves, in least squares,

    grad U = e^-H (cos t, sin t),   grad V = e^-H (-sin t, cos t),

with order-one elements pinned at one vertex; positive Jacobians make the
patch image a parametric rectangle.
"""

from __future__ import annotations

import logging
import math
from collections import deque
from dataclasses import dataclass

import numpy as np
from scipy.sparse.linalg import spsolve

from . import fem
from .conformal import CrossField
from .errors import LiftingError, ParameterizationError
from .geom import HALF_PI, points_in_polygon, segment_intersection
from .trimesh import TriangleLocator, TriMesh

logger = logging.getLogger(__name__)

JACOBIAN_FLOOR = 1e-14


@dataclass
class PartitionParam:
    patch_id: int
    tris: np.ndarray  # parent triangle ids
    points: np.ndarray  # local vertex coordinates
    local_tris: np.ndarray
    parent_vertices: np.ndarray  # local -> parent vertex id
    U: np.ndarray
    V: np.ndarray
    lifted: np.ndarray  # per-local-triangle branch angle

    def __post_init__(self):
        self._phys_locator = None
        self._uv_locator = None

    @property
    def uv(self) -> np.ndarray:
        return np.column_stack([self.U, self.V])

    def phys_locator(self) -> TriangleLocator:
        if self._phys_locator is None:
            self._phys_locator = TriangleLocator(self.points, self.local_tris)
        return self._phys_locator

    def uv_locator(self) -> TriangleLocator:
        if self._uv_locator is None:
            self._uv_locator = TriangleLocator(self.uv, self.local_tris)
        return self._uv_locator

    def to_uv(self, p) -> np.ndarray:
        hit = self.phys_locator().find(p, tol=1e-9)
        if hit is None:
            t, bary, d = self.phys_locator().find_nearest(p)
        else:
            t, bary = hit
        return bary @ self.uv[self.local_tris[t]]

    def to_physical(self, q) -> np.ndarray:
        hit = self.uv_locator().find(q, tol=1e-9)
        if hit is None:
            t, bary, d = self.uv_locator().find_nearest(q)
            if d > 1e-6 * max(1.0, float(np.abs(self.uv).max())):
                raise ParameterizationError(
                    f"parametric point {tuple(q)} is {d:g} outside the patch image"
                )
        else:
            t, bary = hit
        return bary @ self.points[self.local_tris[t]]

    def jacobians(self) -> np.ndarray:
        gu = fem.field_gradients(self.points, self.local_tris, self.U)
        gv = fem.field_gradients(self.points, self.local_tris, self.V)
        return gu[:, 0] * gv[:, 1] - gu[:, 1] * gv[:, 0]


def triangles_crossing_segment(mesh: TriMesh, p0, p1) -> set[int]:
    """Triangles whose closure intersects the segment [p0, p1]."""
    out = set()
    lo = np.minimum(p0, p1)
    hi = np.maximum(p0, p1)
    loc = mesh.locator
    i0, j0 = loc._cell_of(np.asarray([lo]))[0]
    i1, j1 = loc._cell_of(np.asarray([hi]))[0]
    cand = set()
    for i in range(i0, i1 + 1):
        for j in range(j0, j1 + 1):
            cand.update(loc.buckets.get((i, j), ()))
    for t in cand:
        if loc.tri_min[t, 0] > hi[0] or loc.tri_max[t, 0] < lo[0]:
            continue
        if loc.tri_min[t, 1] > hi[1] or loc.tri_max[t, 1] < lo[1]:
            continue
        pts = mesh.tri_points(t)
        if loc.bary(t, p0).min() >= -1e-12 or loc.bary(t, p1).min() >= -1e-12:
            out.add(int(t))
            continue
        for k in range(3):
            if segment_intersection(p0, p1, pts[k], pts[(k + 1) % 3]) is not None:
                out.add(int(t))
                break
    return out


def extract_partition(
    mesh: TriMesh, polygon: np.ndarray, side_polylines, singular_vertices=()
) -> np.ndarray:
    """Triangles intersecting the patch polygon, including the overlap band.

    Band triangles incident to a singular vertex are kept only when their
    centroid lies inside the patch: the sides of neighbouring patches meet at
    singular corners, and keeping their full fans would close a loop around
    the quarter-turn charge, breaking the branch lifting.
    """
    cent = mesh.centroids()
    lo = polygon.min(axis=0) - mesh.mean_edge
    hi = polygon.max(axis=0) + mesh.mean_edge
    box = (
        (cent[:, 0] >= lo[0])
        & (cent[:, 0] <= hi[0])
        & (cent[:, 1] >= lo[1])
        & (cent[:, 1] <= hi[1])
    )
    ids = np.nonzero(box)[0]
    inside = set(int(t) for t in ids[points_in_polygon(cent[ids], polygon)])
    selected = set(inside)
    for poly in side_polylines:
        for k in range(len(poly) - 1):
            selected |= triangles_crossing_segment(mesh, poly[k], poly[k + 1])

    if singular_vertices:
        sv = {int(v) for v in singular_vertices}
        selected = {
            t
            for t in selected
            if t in inside or not sv.intersection(int(x) for x in mesh.triangles[t])
        }

    # keep the component connected to the patch interior
    selected = _connected_component(mesh, selected, inside)
    return np.array(sorted(selected), dtype=np.int64)


def _connected_component(mesh: TriMesh, selected: set[int], seeds: set[int]) -> set[int]:
    if not selected:
        raise ParameterizationError("empty partition overlap set")
    if not seeds:
        seeds = {min(selected)}
    comp = set()
    queue = deque(t for t in seeds if t in selected)
    comp.update(queue)
    while queue:
        t = queue.popleft()
        for e in mesh.tri_edges[t]:
            for nb in mesh.edge_tris[e]:
                nb = int(nb)
                if nb >= 0 and nb in selected and nb not in comp:
                    comp.add(nb)
                    queue.append(nb)
    return comp


def lift_branches(mesh: TriMesh, cross: CrossField, tris: np.ndarray) -> np.ndarray:
    """Continuous branch angle per triangle over a singularity-free submesh."""
    theta = cross.theta_field
    tri_set = {int(t): k for k, t in enumerate(tris)}
    lifted = np.full(len(tris), np.nan)
    seed = int(tris[0])
    lifted[0] = theta.at(seed, np.full(3, 1 / 3))
    queue = deque([seed])

    def value_at_midpoint(t, e):
        bary = np.full(3, 0.5)
        bary[int(np.nonzero(mesh.tri_edges[t] == e)[0][0])] = 0.0
        return theta.at(t, bary)

    offsets = {seed: lifted[0] - theta.at(seed, np.full(3, 1 / 3))}
    while queue:
        t = queue.popleft()
        for e in mesh.tri_edges[t]:
            e = int(e)
            for nb in mesh.edge_tris[e]:
                nb = int(nb)
                if nb < 0 or nb not in tri_set:
                    continue
                if not math.isnan(lifted[tri_set[nb]]):
                    continue
                here = value_at_midpoint(t, e) + offsets[t]
                there = value_at_midpoint(nb, e)
                k = round((here - there) / HALF_PI)
                offsets[nb] = k * HALF_PI
                lifted[tri_set[nb]] = theta.at(nb, np.full(3, 1 / 3)) + offsets[nb]
                queue.append(nb)
    if np.isnan(lifted).any():
        raise ParameterizationError("partition submesh is not edge-connected")

    # verify consistency on non-tree edges: a mismatch means the patch
    # encloses a quarter-turn charge
    for t in tris:
        t = int(t)
        for e in mesh.tri_edges[t]:
            e = int(e)
            for nb in mesh.edge_tris[e]:
                nb = int(nb)
                if nb < 0 or nb not in tri_set or nb <= t:
                    continue
                here = value_at_midpoint(t, e) + offsets[t]
                there = value_at_midpoint(nb, e) + offsets[nb]
                if abs(here - there) > 0.25 * HALF_PI:
                    raise LiftingError(
                        f"quarter-turn mismatch across edge {e}: a singularity "
                        "was missed inside the partition"
                    )
    return lifted


def solve_UV(mesh: TriMesh, cross: CrossField, tris: np.ndarray, patch_id: int = -1) -> PartitionParam:
    """Least-squares conformal parameterization of one partition."""
    lifted = lift_branches(mesh, cross, tris)
    parent_vertices = np.unique(mesh.triangles[tris])
    local = {int(v): k for k, v in enumerate(parent_vertices)}
    points = mesh.vertices[parent_vertices]
    local_tris = np.asarray(
        [[local[int(v)] for v in mesh.triangles[t]] for t in tris], dtype=np.int64
    )

    h_cent = mesh_h_at_centroids(cross, tris)
    scale = np.exp(-h_cent)
    ru = np.column_stack([scale * np.cos(lifted), scale * np.sin(lifted)])
    rv = np.column_stack([-scale * np.sin(lifted), scale * np.cos(lifted)])

    S = fem.stiffness_matrix(points, local_tris)
    grads, areas = fem.p1_gradients(points, local_tris)

    def rhs(target):
        b = np.zeros(len(points))
        for i in range(3):
            np.add.at(
                b,
                local_tris[:, i],
                areas * np.einsum("td,td->t", grads[:, i], target),
            )
        return b

    U = fem.solve_pinned(S, rhs(ru), pin=0)
    V = fem.solve_pinned(S, rhs(rv), pin=0)

    param = PartitionParam(patch_id, np.asarray(tris), points, local_tris, parent_vertices, U, V, lifted)
    jac = param.jacobians()
    if jac.min() <= JACOBIAN_FLOOR:
        raise ParameterizationError(
            f"patch {patch_id}: non-positive parametric Jacobian "
            f"(min {jac.min():.3e}); parameterization rejected"
        )
    return param


def mesh_h_at_centroids(cross: CrossField, tris: np.ndarray) -> np.ndarray:
    h = cross.h_field.values
    return h[cross.mesh.triangles[tris]].mean(axis=1)


def angular_circulations(mesh: TriMesh, cross: CrossField, tris: np.ndarray) -> np.ndarray:
    """Quarter-turn circulation of the rotation field around interior vertices.

    This is the integrability obstruction of the scaled branch field on the
    patch (its discrete curl): nonzero values flag a hidden singularity.
    """
    theta = cross.theta_field
    grads, _ = fem.p1_gradients(mesh.vertices, mesh.triangles)
    tri_set = set(int(t) for t in tris)
    verts = sorted({int(v) for t in tris for v in mesh.triangles[t]})
    out = []
    for v in verts:
        fan = mesh.vertex_triangles(v)
        if mesh.is_boundary_vertex[v] or not all(int(t) in tri_set for t in fan):
            continue
        total = 0.0
        for t in fan:
            t = int(t)
            tri = mesh.triangles[t]
            i = int(np.nonzero(tri == v)[0][0])
            seg = (mesh.vertices[tri[(i + 2) % 3]] - mesh.vertices[tri[(i + 1) % 3]]) / 2.0
            g = np.einsum("id,i->d", -2.0 * grads[t], theta.values[theta.tri_dofs[t]])
            total += float(np.dot(g, seg))
        out.append(total)
    return np.asarray(out)
