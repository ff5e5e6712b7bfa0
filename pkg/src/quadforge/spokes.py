"""Radial ("bicycle spoke") remeshing around singular vertices.

High-valence singularities concentrate large rotation gradients, so each
singular vertex's neighbourhood is replaced by concentric rings of spokes:
a fan around the vertex, bands between rings, and an angular zipper
stitching the outermost ring to the cavity rim. The singular vertex keeps
its exact coordinates and the mesh outside the cavities is untouched; for a
boundary singularity the half-disk ring endpoints subdivide the two
incident boundary edges collinearly, preserving boundary geometry.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import SpokeRefinementError
from .geom import TWO_PI
from .singularities import Singularity, SingularityPattern
from .trimesh import TriMesh

logger = logging.getLogger(__name__)

DEFAULT_RINGS = 3
DEFAULT_SECTORS_PER_QUADRANT = 2
DEFAULT_RADIUS_FACTOR = 1.5
KERNEL_SAFETY = 0.6
SHRINK = 0.6
MAX_SHRINKS = 5


@dataclass
class SpokeParams:
    rings: int = DEFAULT_RINGS
    sectors_per_quadrant: int = DEFAULT_SECTORS_PER_QUADRANT
    radius_factor: float = DEFAULT_RADIUS_FACTOR


@dataclass
class SpokeResult:
    """Refined mesh plus bookkeeping to re-address pattern vertices."""

    mesh: TriMesh
    vertex_map: dict[int, int]
    pattern: SingularityPattern
    disk_radius: dict[int, float] = field(default_factory=dict)
    inner_radius: dict[int, float] = field(default_factory=dict)

    def min_disk_radius(self) -> float:
        return min(self.disk_radius.values(), default=self.mesh.mean_edge)


def _grow_cavity(mesh, v, radius, forbidden, removed):
    """Connected triangle set around v covering the disk of given radius.

    Returns None when the cavity would swallow another singularity, remove a
    domain-boundary vertex, touch the boundary from an interior singularity,
    or collide with a previously carved cavity.
    """
    center = mesh.vertices[v]
    on_boundary = bool(mesh.is_boundary_vertex[v])
    cavity = {int(t) for t in mesh.vertex_triangles(v)}
    queue = list(cavity)
    while queue:
        t = queue.pop()
        for e in mesh.tri_edges[t]:
            for nb in mesh.edge_tris[e]:
                nb = int(nb)
                if nb < 0 or nb in cavity:
                    continue
                pts = mesh.tri_points(nb)
                d = np.hypot(pts[:, 0] - center[0], pts[:, 1] - center[1])
                if d.min() < radius:
                    cavity.add(nb)
                    queue.append(nb)
    if cavity & removed:
        return None
    cavity_verts = {int(x) for t in cavity for x in mesh.triangles[t]}
    if cavity_verts & forbidden:
        return None
    if not on_boundary and any(mesh.is_boundary_vertex[w] for w in cavity_verts):
        return None
    for w in cavity_verts:
        if w == v or not mesh.is_boundary_vertex[w]:
            continue
        if all(int(ft) in cavity for ft in mesh.vertex_triangles(w)):
            return None  # would delete a boundary vertex
    return cavity


def _cavity_rim(mesh, cavity, v):
    """Rim polygon of the cavity, ordered CCW with the cavity on the left.

    Returns (vertices, closed); for a boundary singular vertex the rim is the
    open chain obtained by removing v from the rim cycle.
    """
    edge_count: dict[int, int] = {}
    for t in cavity:
        for e in mesh.tri_edges[t]:
            edge_count[int(e)] = edge_count.get(int(e), 0) + 1
    succ: dict[int, int] = {}
    for e, c in edge_count.items():
        if c != 1:
            continue
        t0, t1 = mesh.edge_tris[e]
        inside = int(t0) if int(t0) in cavity else int(t1)
        tv = mesh.triangles[inside]
        a, b = (int(x) for x in mesh.edges[e])
        oriented = None
        for i in range(3):
            if tv[i] == a and tv[(i + 1) % 3] == b:
                oriented = (a, b)
            elif tv[i] == b and tv[(i + 1) % 3] == a:
                oriented = (b, a)
        if oriented is None or oriented[0] in succ:
            return None
        succ[oriented[0]] = oriented[1]
    if v in succ:
        chain = []
        w = succ[v]
        while w != v:
            chain.append(w)
            if len(chain) > len(succ):
                return None
            w = succ.get(w)
            if w is None:
                return None
        return chain, False
    start = min(succ)
    chain = [start]
    while True:
        nxt = succ.get(chain[-1])
        if nxt is None:
            return None
        if nxt == start:
            break
        chain.append(nxt)
        if len(chain) > len(succ):
            return None
    return chain, True


def _kernel_radius(center, rim_pts, closed) -> float:
    """Largest disk about the center staying inside the star-shaped rim."""
    n = len(rim_pts)
    best = math.inf
    last = n if closed else n - 1
    for i in range(last):
        a = rim_pts[i]
        b = rim_pts[(i + 1) % n]
        cross = (b[0] - a[0]) * (center[1] - a[1]) - (b[1] - a[1]) * (center[0] - a[0])
        if cross <= 0:
            return 0.0  # center does not see this rim edge: not star-shaped
        best = min(best, cross / math.hypot(b[0] - a[0], b[1] - a[1]))
    for p in rim_pts:
        best = min(best, math.hypot(p[0] - center[0], p[1] - center[1]))
    return best


def _zipper(ring, rim, ring_ang, rim_ang, closed, coords, area_floor):
    """Stitch two angularly monotone CCW cycles/chains with triangles.

    The angular merge order is only a preference: a rim vertex can lag far
    behind the ring (coarse one-ring links), so each advance is checked for
    strictly positive orientation and the other chain is taken when the
    preferred triangle would fold.
    """
    tris = []
    ni, nj = len(ring), len(rim)
    steps_i = ni if closed else ni - 1
    steps_j = nj if closed else nj - 1

    def ang_i(k):
        return ring_ang[k % ni] + TWO_PI * (k // ni)

    def ang_j(k):
        return rim_ang[k % nj] + TWO_PI * (k // nj)

    def ccw(a, b, c):
        pa, pb, pc = coords(a), coords(b), coords(c)
        area = (pb[0] - pa[0]) * (pc[1] - pa[1]) - (pb[1] - pa[1]) * (pc[0] - pa[0])
        return area > area_floor

    i = j = 0
    while i < steps_i or j < steps_j:
        ring_tri = (ring[i % ni], rim[j % nj], ring[(i + 1) % ni])
        rim_tri = (ring[i % ni], rim[j % nj], rim[(j + 1) % nj])
        if i >= steps_i:
            advance_ring = False
        elif j >= steps_j:
            advance_ring = True
        else:
            advance_ring = ang_i(i + 1) <= ang_j(j + 1)
            if advance_ring and not ccw(*ring_tri):
                advance_ring = False
            elif not advance_ring and not ccw(*rim_tri):
                advance_ring = True
        if advance_ring:
            if not ccw(*ring_tri):
                raise SpokeRefinementError("zipper cannot stitch ring to rim without folding")
            tris.append(ring_tri)
            i += 1
        else:
            if not ccw(*rim_tri):
                raise SpokeRefinementError("zipper cannot stitch ring to rim without folding")
            tris.append(rim_tri)
            j += 1
    return tris


def _refine_one(mesh, start_id, removed, v, valence, params, forbidden):
    """Carve and remesh one singular vertex's disk.

    Returns (new_points, new_triangles, cavity, disk_radius, inner_radius).
    """
    center = mesh.vertices[v]
    radius = params.radius_factor * mesh.vertex_mean_edge(v)
    limit = min(
        (0.45 * math.hypot(*(mesh.vertices[w] - center)) for w in forbidden),
        default=math.inf,
    )
    if limit < radius:
        logger.info("vertex %d: spoke disk shrunk %.3g -> %.3g (nearby singularity)", v, radius, limit)
        radius = limit

    cavity = rim_info = None
    for _ in range(MAX_SHRINKS):
        cavity = _grow_cavity(mesh, v, radius, forbidden, removed)
        if cavity is not None:
            rim_info = _cavity_rim(mesh, cavity, v)
            if rim_info is not None:
                rim, closed = rim_info
                if _kernel_radius(center, mesh.vertices[rim], closed) > 0:
                    break
            rim_info = None
        radius *= SHRINK
    if rim_info is None:
        cavity = {int(t) for t in mesh.vertex_triangles(v)}
        if cavity & removed:
            raise SpokeRefinementError(f"vertex {v}: refinement disks overlap irreparably")
        rim_info = _cavity_rim(mesh, cavity, v)
        if rim_info is None:
            raise SpokeRefinementError(f"vertex {v}: cavity rim is not a simple cycle")
    rim, closed = rim_info

    rim_pts = mesh.vertices[rim]
    r_out = KERNEL_SAFETY * _kernel_radius(center, rim_pts, closed)
    if r_out <= 0:
        raise SpokeRefinementError(f"vertex {v}: cavity is not star-shaped")

    rel = rim_pts - center
    rim_angles = np.arctan2(rel[:, 1], rel[:, 0])
    base = float(rim_angles[0])
    rel_ang = (rim_angles - base) % TWO_PI
    rel_ang[0] = 0.0
    rim_ang = np.maximum.accumulate(rel_ang)
    if closed:
        sectors = max(valence, 4) * params.sectors_per_quadrant
        spoke_angles = base + TWO_PI * np.arange(sectors) / sectors
        ring_ang = TWO_PI * np.arange(sectors) / sectors
    else:
        span = float(rim_ang[-1])
        if span <= 0:
            raise SpokeRefinementError(f"vertex {v}: degenerate boundary fan")
        sectors = max(2, math.ceil(max(valence, 4) * params.sectors_per_quadrant * span / TWO_PI))
        spoke_angles = base + span * np.arange(sectors + 1) / sectors
        ring_ang = span * np.arange(sectors + 1) / sectors

    new_pts = []
    rings = []
    nspokes = len(spoke_angles)
    for i in range(1, params.rings + 1):
        r = r_out * i / params.rings
        ring_ids = []
        for aa in spoke_angles:
            ring_ids.append(start_id + len(new_pts))
            new_pts.append(center + r * np.array([math.cos(aa), math.sin(aa)]))
        rings.append(ring_ids)

    tris = []
    steps = nspokes if closed else nspokes - 1
    first = rings[0]
    for s in range(steps):
        tris.append((v, first[s], first[(s + 1) % nspokes]))
    for i in range(len(rings) - 1):
        lo, hi = rings[i], rings[i + 1]
        for s in range(steps):
            a, b = lo[s], lo[(s + 1) % nspokes]
            c, d = hi[(s + 1) % nspokes], hi[s]
            tris.append((a, d, c))
            tris.append((a, c, b))
    def coords(vid):
        if vid >= start_id:
            return new_pts[vid - start_id]
        return mesh.vertices[vid]

    area_floor = 1e-12 * r_out * r_out
    tris.extend(_zipper(rings[-1], list(rim), ring_ang, rim_ang, closed, coords, area_floor))

    return np.asarray(new_pts), tris, cavity, radius, r_out / params.rings


def refine_spokes(mesh, pattern, params=None) -> SpokeResult:
    """Remesh a disk around every singular vertex with radial spokes.

    Disks shrink automatically when singularities come close; two singular
    vertices joined by a mesh edge are an error.
    """
    params = params or SpokeParams()
    if not pattern.singularities:
        ident = {i: i for i in range(mesh.n_vertices)}
        return SpokeResult(mesh, ident, pattern)

    sing_set = {s.vertex for s in pattern.singularities}
    for s in pattern.singularities:
        _, ring, _ = mesh.vertex_fan(s.vertex)
        touching = sing_set.intersection(ring)
        if touching:
            raise SpokeRefinementError(
                f"singular vertices {s.vertex} and {min(touching)} are mesh neighbours"
            )

    extra_pts = []
    extra_tris: list[tuple[int, int, int]] = []
    removed: set[int] = set()
    disk_radius: dict[int, float] = {}
    inner_radius: dict[int, float] = {}
    next_id = mesh.n_vertices
    for s in sorted(pattern.singularities, key=lambda s: s.vertex):
        pts, tris, cavity, r_disk, r_in = _refine_one(
            mesh, next_id, removed, s.vertex, s.valence, params, sing_set - {s.vertex}
        )
        removed.update(cavity)
        extra_pts.append(pts)
        extra_tris.extend(tris)
        disk_radius[s.vertex] = r_disk
        inner_radius[s.vertex] = r_in
        next_id += len(pts)

    new_points = np.vstack([mesh.vertices, *extra_pts])
    kept = [tuple(map(int, mesh.triangles[t])) for t in range(mesh.n_triangles) if t not in removed]
    combined = kept + [tuple(map(int, t)) for t in extra_tris]

    used = sorted({v for tri in combined for v in tri})
    remap = {old: new for new, old in enumerate(used)}
    tris = np.asarray([[remap[a], remap[b], remap[c]] for a, b, c in combined], dtype=np.int64)
    refined = TriMesh(new_points[used], tris)
    if refined.reoriented:
        raise SpokeRefinementError("spoke construction produced flipped triangles")

    vertex_map = {old: remap[old] for old in range(mesh.n_vertices) if old in remap}
    new_pattern = SingularityPattern(
        pattern.chi,
        [Singularity(vertex_map[s.vertex], s.x, s.y, s.t, s.boundary) for s in pattern.singularities],
    )
    return SpokeResult(
        refined,
        vertex_map,
        new_pattern,
        disk_radius={vertex_map[k]: r for k, r in disk_radius.items()},
        inner_radius={vertex_map[k]: r for k, r in inner_radius.items()},
    )
