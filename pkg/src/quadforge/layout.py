"""Quad layout: planar arrangement of separatrices, repairs, audits.

The layout is a planar subdivision whose nodes are singularities, domain
corners, separatrix feet, and T-points; edges carry polyline geometry
(separatrices, boundary arcs, repair chords). Faces are extracted by
half-edge orbits with angular sorting, and the repairs (limit-cycle cuts,
T-junction merges, doublet splits) are followed by a full rebuild, which
keeps the machinery simple and deterministic.
"""

from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import LayoutError
from .geom import (
    point_in_polygon,
    points_in_polygon,
    polygon_area,
    polygon_centroid,
    polyline_cumlen,
    polyline_point_at,
    segment_intersection,
)
from .singularities import SingularityPattern
from .tracing import Separatrix
from .trimesh import TriMesh

logger = logging.getLogger(__name__)

FOOT_SNAP_FACTOR = 0.35
ORTHO_TOL_RAD = math.radians(30.0)
TJUNCTION_MAX_ROUNDS = 32
TJUNCTION_SNAP_FRACTION = 0.2
CROSSING_MIN_ANGLE_RAD = math.radians(25.0)


@dataclass
class LayoutNode:
    id: int
    point: np.ndarray
    kind: str  # "sing" | "bsing" | "corner" | "foot" | "tpoint" | "anchor" | "interior"
    vertex: int | None = None  # mesh vertex for sing/bsing/corner
    loop: int | None = None  # boundary loop id for boundary nodes
    s: float | None = None  # arc-length parameter on the loop


@dataclass
class LayoutEdge:
    id: int
    n0: int
    n1: int
    points: np.ndarray
    kind: str  # "sep" | "boundary" | "chord"
    loop: int | None = None

    def length(self) -> float:
        d = np.diff(self.points, axis=0)
        return float(np.hypot(d[:, 0], d[:, 1]).sum())


@dataclass
class Patch:
    id: int
    sides: list[tuple[int, bool]]  # (edge id, forward)
    nodes: list[int]  # corner node per side start
    polygon: np.ndarray
    holes: list[np.ndarray] = field(default_factory=list)
    triangles: np.ndarray | None = None

    @property
    def n_sides(self) -> int:
        return len(self.sides)

    def area(self) -> float:
        return polygon_area(self.polygon)


@dataclass
class TJunctionRecord:
    node: int  # layout node id of the hanging point
    host_edge_hint: int | None = None


class QuadLayout:
    def __init__(self, nodes, edges, mesh: TriMesh, pattern: SingularityPattern):
        self.nodes: list[LayoutNode] = nodes
        self.edges: list[LayoutEdge] = edges
        self.mesh = mesh
        self.pattern = pattern
        self.patches: list[Patch] = []
        self.edge_faces: dict[int, list[int]] = {}
        self._extract_faces()

    # -- face extraction -----------------------------------------------------

    def _edge_dir(self, edge: LayoutEdge, forward: bool, at_start: bool) -> np.ndarray:
        pts = edge.points if forward else edge.points[::-1]
        anchor = pts[0] if at_start else pts[-1]
        seq = pts[1:] if at_start else pts[-2::-1]
        for q in seq:
            d = q - anchor
            n = math.hypot(d[0], d[1])
            if n > 1e-12:
                return d / n
        raise LayoutError(f"edge {edge.id} has no extent")

    def _extract_faces(self):
        out_at: dict[int, list] = {n.id: [] for n in self.nodes}
        for e in self.edges:
            out_at[e.n0].append((e.id, True))
            out_at[e.n1].append((e.id, False))
        order: dict[int, list] = {}
        for nid, items in out_at.items():
            def key(item):
                e, fwd = item
                d = self._edge_dir(self.edges[e], fwd, at_start=True)
                return math.atan2(d[1], d[0])
            order[nid] = sorted(items, key=key)

        def next_half(e, fwd):
            edge = self.edges[e]
            head = edge.n1 if fwd else edge.n0
            twin = (e, not fwd)
            ring = order[head]
            i = ring.index(twin)
            return ring[(i - 1) % len(ring)], head

        seen = set()
        faces = []
        for e in range(len(self.edges)):
            for fwd in (True, False):
                if (e, fwd) in seen:
                    continue
                orbit = []
                cur = (e, fwd)
                guard = 0
                while cur not in seen:
                    seen.add(cur)
                    orbit.append(cur)
                    cur, _ = next_half(*cur)
                    guard += 1
                    if guard > 4 * len(self.edges) + 8:
                        raise LayoutError("face traversal did not close")
                faces.append(orbit)

        patches = []
        negatives = []
        for orbit in faces:
            # the non-domain side of a boundary loop (outer infinite face or
            # the inside of a hole) walks its arcs against the domain-left
            # orientation and nothing else
            if all(not fwd and self.edges[eid].kind == "boundary" for eid, fwd in orbit):
                continue
            pts = []
            nodes = []
            for eid, fwd in orbit:
                edge = self.edges[eid]
                poly = edge.points if fwd else edge.points[::-1]
                nodes.append(edge.n0 if fwd else edge.n1)
                pts.append(poly[:-1])
            polygon = np.vstack(pts)
            area = polygon_area(polygon)
            if area > 0:
                patches.append(Patch(len(patches), list(orbit), nodes, polygon))
            else:
                negatives.append((orbit, polygon))

        # attach floating hole boundaries (negative orbits other than the
        # component outers) to their containing patch
        if negatives:
            outer_idx = max(
                range(len(negatives)), key=lambda k: abs(polygon_area(negatives[k][1]))
            )
            for k, (orbit, polygon) in enumerate(negatives):
                if k == outer_idx:
                    continue
                probe = polygon[0]
                owner = None
                for p in sorted(patches, key=lambda p: p.area()):
                    if point_in_polygon(probe, p.polygon):
                        owner = p
                        break
                if owner is not None and not any(
                    np.array_equal(polygon, h) for h in owner.holes
                ):
                    # a negative orbit strictly inside a patch is a hole only
                    # if its nodes are not already corners of that patch
                    if not set(n for eid, fwd in orbit for n in
                               (self.edges[eid].n0, self.edges[eid].n1)) & set(owner.nodes):
                        owner.holes.append(polygon)

        self.patches = patches
        self.edge_faces = {e.id: [] for e in self.edges}
        for p in patches:
            for eid, _ in p.sides:
                self.edge_faces[eid].append(p.id)

    # -- audits ---------------------------------------------------------------

    def node_face_count(self) -> dict[int, int]:
        counts = {n.id: 0 for n in self.nodes}
        for p in self.patches:
            for nid in set(p.nodes):
                counts[nid] += 1
        return counts

    def is_boundary_node(self, node: LayoutNode) -> bool:
        return node.loop is not None

    def check_conformity(self):
        for e in self.edges:
            faces = self.edge_faces[e.id]
            expected = 1 if e.kind == "boundary" else 2
            if len(faces) != expected:
                raise LayoutError(
                    f"edge {e.id} ({e.kind}) borders {len(faces)} patches, expected {expected}"
                )

    def check_all_quad(self):
        bad = [p.id for p in self.patches if p.n_sides != 4 or p.holes]
        if bad:
            sides = {p.id: p.n_sides for p in self.patches if p.id in bad}
            raise LayoutError(f"non-quadrilateral patches: {sides}")

    def check_no_interior_singularities(self):
        corner_vertices = {
            self.nodes[n].vertex for p in self.patches for n in p.nodes
        }
        for s in self.pattern.singularities:
            if s.vertex not in corner_vertices:
                pos = (s.x, s.y)
                for p in self.patches:
                    if point_in_polygon(pos, p.polygon):
                        raise LayoutError(
                            f"singularity at vertex {s.vertex} lies inside patch {p.id}"
                        )

    def corner_charge_total(self) -> int:
        """Combinatorial index total: sum(4 - n) interior + sum(2 - m) boundary."""
        counts = self.node_face_count()
        total = 0
        for n in self.nodes:
            c = counts[n.id]
            if c == 0:
                continue
            total += (2 - c) if self.is_boundary_node(n) else (4 - c)
        return total

    def check_balance(self):
        chi = self.mesh.chi_from_loops()
        total = self.corner_charge_total()
        if total != 4 * chi:
            raise LayoutError(f"layout corner charges sum to {total}, expected {4 * chi}")

    def validate(self):
        self.check_conformity()
        self.check_all_quad()
        self.check_no_interior_singularities()
        self.check_balance()

    def tjunction_nodes(self) -> list[int]:
        return [n.id for n in self.nodes if n.kind == "tpoint" and self._is_open_t(n.id)]

    def _is_open_t(self, nid: int) -> bool:
        deg = sum(1 for e in self.edges if nid in (e.n0, e.n1))
        return deg == 3

    # -- serialization ---------------------------------------------------------

    def to_json(self) -> dict:
        counts = self.node_face_count()
        return {
            "nodes": [
                {
                    "id": n.id,
                    "x": float(n.point[0]),
                    "y": float(n.point[1]),
                    "kind": n.kind,
                    "vertex": n.vertex,
                    "faces": counts[n.id],
                }
                for n in self.nodes
            ],
            "edges": [
                {
                    "id": e.id,
                    "n0": e.n0,
                    "n1": e.n1,
                    "kind": e.kind,
                    "points": [[float(x), float(y)] for x, y in e.points],
                }
                for e in self.edges
            ],
            "patches": [
                {
                    "id": p.id,
                    "sides": [[eid, bool(fwd)] for eid, fwd in p.sides],
                    "nodes": p.nodes,
                    "n_sides": p.n_sides,
                }
                for p in self.patches
            ],
        }

    def save(self, path):
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(self.to_json(), fh)
            fh.write("\n")


# ---------------------------------------------------------------------------
# limit cycles


def polyline_intersections(a: np.ndarray, b: np.ndarray):
    """All proper crossings between two polylines: (s_a, s_b, point, angle)."""
    out = []
    cum_a = polyline_cumlen(a)
    cum_b = polyline_cumlen(b)
    for i in range(len(a) - 1):
        lo = np.minimum(a[i], a[i + 1])
        hi = np.maximum(a[i], a[i + 1])
        for j in range(len(b) - 1):
            blo = np.minimum(b[j], b[j + 1])
            bhi = np.maximum(b[j], b[j + 1])
            if blo[0] > hi[0] or bhi[0] < lo[0] or blo[1] > hi[1] or bhi[1] < lo[1]:
                continue
            hit = segment_intersection(a[i], a[i + 1], b[j], b[j + 1])
            if hit is None:
                continue
            t, s, pt = hit
            da = a[i + 1] - a[i]
            db = b[j + 1] - b[j]
            ang = abs(
                math.atan2(
                    da[0] * db[1] - da[1] * db[0], da[0] * db[0] + da[1] * db[1]
                )
            )
            out.append((cum_a[i] + t * (cum_a[i + 1] - cum_a[i]), cum_b[j] + s * (cum_b[j + 1] - cum_b[j]), np.asarray(pt), ang))
    return out


def _max_gap(positions, total) -> float:
    if not positions:
        return total
    pos = sorted(positions)
    gaps = [pos[0]] + [b - a for a, b in zip(pos, pos[1:])] + [total - pos[-1]]
    return max(gaps)


def _arrives_orthogonally(sep: Separatrix, mesh: TriMesh | None) -> bool:
    """Whether the boundary arrival direction is within 30 deg of normal."""
    if mesh is None or sep.termination is None or sep.termination[0] != "boundary":
        return True
    foot = np.asarray(sep.termination[1])
    d = sep.points[-1] - sep.points[-2]
    if math.hypot(*d) < 1e-15 and len(sep.points) > 2:
        d = sep.points[-1] - sep.points[-3]
    best = None
    for loop in mesh.loops:
        pts = mesh.vertices[loop.vertices]
        nxt = np.roll(pts, -1, axis=0)
        mid = 0.5 * (pts + nxt)
        dist = np.hypot(mid[:, 0] - foot[0], mid[:, 1] - foot[1])
        k = int(np.argmin(dist))
        seg = nxt[k] - pts[k]
        if best is None or dist[k] < best[0]:
            best = (float(dist[k]), seg)
    tangent = best[1]
    ang = math.atan2(
        d[0] * tangent[1] - d[1] * tangent[0], d[0] * tangent[0] + d[1] * tangent[1]
    )
    return abs(abs(ang) - math.pi / 2) <= ORTHO_TOL_RAD


def detect_and_cut_limit_cycles(
    separatrices: list[Separatrix],
    mesh: TriMesh | None = None,
    origin_clearance: dict[int, float] | None = None,
):
    """Classify and truncate limit cycles and boundary-grazing separatrices.

    A separatrix crossing the others more than once, or crossing at least
    once while failing to reach the boundary orthogonally, is a possible
    cycle. It is authentic when it never terminates, grazes the boundary, or
    has more far-flung crossings (larger maximal arc gap between consecutive
    crossings) than its crossing partner. Authentic cycles are truncated at
    their first near-orthogonal crossing, leaving a T-junction on the host.
    """
    origin_clearance = origin_clearance or {}
    n = len(separatrices)
    crossings: dict[int, list] = {i: [] for i in range(n)}
    for i in range(n):
        for j in range(i + 1, n):
            hits = polyline_intersections(separatrices[i].points, separatrices[j].points)
            for s_i, s_j, pt, ang in hits:
                if s_i < 1e-9 or s_j < 1e-9:
                    continue  # shared origin
                crossings[i].append((s_i, j, s_j, pt, ang))
                crossings[j].append((s_j, i, s_i, pt, ang))

    records = []
    out = list(separatrices)
    for i in range(n):
        sep = separatrices[i]
        own = sorted(crossings[i])
        orthogonal_arrival = _arrives_orthogonally(sep, mesh)
        # a cycle re-crosses the same separatrix; crossing several distinct
        # separatrices once each is ordinary block structure
        per_partner: dict[int, int] = {}
        for _, j, *_ in own:
            per_partner[j] = per_partner.get(j, 0) + 1
        recrosses = max(per_partner.values(), default=0) > 1
        possible = (
            sep.flagged_cycle
            or recrosses
            or (len(own) >= 1 and not orthogonal_arrival)
        )
        if not possible:
            continue
        length = sep.length()
        authentic = sep.flagged_cycle or sep.termination is None or not orthogonal_arrival
        if not authentic:
            own_gap = _max_gap([s for s, *_ in own], length)
            # compare only against partners this separatrix re-crosses: a
            # single mutual crossing is ordinary block structure
            for j, times in per_partner.items():
                if times <= 1:
                    continue
                other = sorted(s for s, *_ in crossings[j])
                other_gap = _max_gap(other, separatrices[j].length())
                if own_gap > other_gap:
                    authentic = True
                    break
        if not authentic:
            continue
        clearance = origin_clearance.get(sep.origin[1], 0.0)
        cut_at = None
        for s_i, j, s_j, pt, ang in own:
            if s_i <= clearance:
                continue
            fold = min(ang, math.pi - ang)
            if abs(fold - math.pi / 2) <= ORTHO_TOL_RAD:
                cut_at = (s_i, j, s_j, pt)
                break
        if cut_at is None:
            raise LayoutError(
                f"authentic limit cycle from {sep.origin} has no near-orthogonal "
                f"crossing to cut at (crossing angles: {[round(a[4], 3) for a in own]})"
            )
        s_i, j, s_j, pt = cut_at
        cum = polyline_cumlen(sep.points)
        keep = sep.points[cum < s_i - 1e-12]
        new_points = np.vstack([keep, pt])
        out[i] = Separatrix(new_points, sep.origin, ("cut", j, float(s_j), tuple(pt)), False)
        records.append((i, j, float(s_j), np.asarray(pt)))
        logger.info("cut separatrix %s at arc %.3f on separatrix %d", sep.origin, s_i, j)
    for i, j, s_j, _ in records:
        if s_j >= out[j].length() - 1e-12:
            raise LayoutError(
                f"T-point on separatrix {j} at arc {s_j:.4f} was removed by a later cut"
            )
    return out, records


# ---------------------------------------------------------------------------
# layout construction


def build_layout(
    mesh: TriMesh,
    pattern: SingularityPattern,
    separatrices: list[Separatrix],
    cut_records=None,
) -> QuadLayout:
    """Planar arrangement of separatrices, boundary arcs, T-points, crossings.

    Transversal crossings between separatrices (integral curves of the two
    orthogonal branch families) become regular degree-4 layout nodes; each
    participating separatrix is split there.
    """
    cut_records = cut_records or []
    nodes: list[LayoutNode] = []
    node_by_vertex: dict[int, int] = {}

    def add_node(point, kind, vertex=None, loop=None, s=None):
        nid = len(nodes)
        nodes.append(LayoutNode(nid, np.asarray(point, dtype=float), kind, vertex, loop, s))
        return nid

    for s in pattern.singularities:
        kind = "bsing" if s.boundary else "sing"
        nid = add_node(mesh.vertices[s.vertex], kind, vertex=s.vertex)
        node_by_vertex[s.vertex] = nid

    # boundary loop geometry and arc positions
    loops = []
    corner_q = mesh.quarter_corners()
    for li, loop in enumerate(mesh.loops):
        pts = mesh.vertices[loop.vertices]
        closed = np.vstack([pts, pts[:1]])
        cum = polyline_cumlen(closed)
        loops.append((closed, cum))
        for k, v in enumerate(loop.vertices):
            v = int(v)
            if v in node_by_vertex:
                nodes[node_by_vertex[v]].loop = li
                nodes[node_by_vertex[v]].s = float(cum[k])
            elif corner_q.get(v):
                nid = add_node(mesh.vertices[v], "corner", vertex=v, loop=li, s=float(cum[k]))
                node_by_vertex[v] = nid

    def locate_on_boundary(pt):
        best = None
        for li, (closed, cum) in enumerate(loops):
            for k in range(len(closed) - 1):
                a, b = closed[k], closed[k + 1]
                ab = b - a
                L2 = float(ab @ ab)
                t = 0.0 if L2 == 0 else float(np.clip((pt - a) @ ab / L2, 0.0, 1.0))
                q = a + t * ab
                d = math.hypot(*(pt - q))
                if best is None or d < best[0]:
                    best = (d, li, float(cum[k] + t * (cum[k + 1] - cum[k])), q)
        return best[1], best[2], best[3]

    def boundary_node_for(pt):
        li, s, q = locate_on_boundary(pt)
        closed, cum = loops[li]
        total = cum[-1]
        snap = FOOT_SNAP_FACTOR * mesh.mean_edge
        for n in nodes:
            if n.loop == li and n.s is not None:
                ds = abs(n.s - s)
                ds = min(ds, total - ds)
                # feet merge with corners and boundary singularities, but two
                # converging separatrices keep distinct feet (thin patches are
                # valid; fusing them would break conformity)
                if ds < snap and n.kind in ("corner", "bsing"):
                    return n.id, True
                if ds < 1e-9 * max(mesh.bbox_diag, 1.0) and n.kind == "foot":
                    return n.id, True
        nid = add_node(q, "foot", loop=li, s=s)
        return nid, False

    # T-points on host separatrices
    splits_at: dict[int, list] = {i: [] for i in range(len(separatrices))}
    tpoint_nodes: dict[tuple[int, float], int] = {}
    for i, j, s_j, pt in cut_records:
        nid = add_node(pt, "tpoint")
        splits_at[j].append((s_j, nid))
        tpoint_nodes[(j, round(s_j, 9))] = nid

    # transversal crossings between distinct separatrices; near-parallel
    # "crossings" are numerical wobble of curves converging onto a shared
    # streamline and cannot be arrangement nodes
    for i in range(len(separatrices)):
        for j in range(i + 1, len(separatrices)):
            for s_i, s_j, pt, ang in polyline_intersections(
                separatrices[i].points, separatrices[j].points
            ):
                li = separatrices[i].length()
                lj = separatrices[j].length()
                if s_i < 1e-7 or s_j < 1e-7 or s_i > li - 1e-7 or s_j > lj - 1e-7:
                    continue  # shared endpoint, not a crossing
                if any(abs(s_j - s0) < 1e-9 for s0, _ in splits_at[j]):
                    continue  # already a T-point there
                fold = min(ang, math.pi - ang)
                if fold < CROSSING_MIN_ANGLE_RAD:
                    # converging separatrices wobble across each other at
                    # grazing angles within integration error; perturb them
                    # apart symbolically rather than create sliver faces
                    logger.info(
                        "ignoring grazing crossing (%.1f deg) between %s and %s",
                        math.degrees(fold),
                        separatrices[i].origin,
                        separatrices[j].origin,
                    )
                    continue
                nid = add_node(pt, "cross")
                splits_at[i].append((s_i, nid))
                splits_at[j].append((s_j, nid))

    edges: list[LayoutEdge] = []

    def add_edge(n0, n1, points, kind, loop=None):
        pts = np.asarray(points, dtype=float)
        keep = [0]
        for k in range(1, len(pts)):
            if math.hypot(*(pts[k] - pts[keep[-1]])) > 1e-12:
                keep.append(k)
        if len(keep) < 2:
            raise LayoutError("degenerate layout edge")
        edges.append(LayoutEdge(len(edges), n0, n1, pts[keep], kind, loop))

    # separatrix edges, split at T-points and crossings
    for i, sep in enumerate(separatrices):
        if sep.termination is None:
            raise LayoutError(f"separatrix {sep.origin} has no termination (uncut cycle)")
        n_start = node_by_vertex[sep.origin[1]]
        pts = sep.points
        if sep.termination[0] == "sing":
            n_end = node_by_vertex[sep.termination[1]]
        elif sep.termination[0] == "boundary":
            n_end, snapped = boundary_node_for(np.asarray(sep.termination[1]))
            if snapped:
                pts = np.vstack([pts[:-1], nodes[n_end].point])
        elif sep.termination[0] == "cut":
            _, j, s_j, pt = sep.termination
            n_end = tpoint_nodes[(j, round(s_j, 9))]
        else:
            raise LayoutError(f"unknown termination {sep.termination[0]}")

        splits = sorted(splits_at[i])
        if not splits:
            add_edge(n_start, n_end, pts, "sep")
        else:
            cum = polyline_cumlen(pts)
            prev_node = n_start
            prev_s = 0.0
            for s_here, nid in splits:
                seg = _slice_polyline(pts, cum, prev_s, s_here)
                seg[-1] = nodes[nid].point
                add_edge(prev_node, nid, seg, "sep")
                prev_node, prev_s = nid, s_here
            seg = _slice_polyline(pts, cum, prev_s, float(cum[-1]))
            seg[0] = nodes[prev_node].point
            add_edge(prev_node, n_end, seg, "sep")

    # boundary arcs between consecutive boundary nodes
    for li, (closed, cum) in enumerate(loops):
        total = float(cum[-1])
        on_loop = sorted(
            (n for n in nodes if n.loop == li and n.s is not None), key=lambda n: n.s
        )
        if not on_loop:
            anchor = add_node(closed[0], "anchor", loop=li, s=0.0)
            pts = np.vstack([closed])
            add_edge(anchor, anchor, pts, "boundary", loop=li)
            continue
        for a, b in zip(on_loop, on_loop[1:] + on_loop[:1]):
            s0, s1 = float(a.s), float(b.s)
            if b is on_loop[0]:
                s1 += total
            seg = _slice_polyline(closed, cum, s0, s1)
            seg[0] = a.point
            seg[-1] = b.point
            add_edge(a.id, b.id, seg, "boundary", loop=li)

    return QuadLayout(nodes, edges, mesh, pattern)


def _slice_polyline(pts: np.ndarray, cum: np.ndarray, s0: float, s1: float) -> np.ndarray:
    """Sub-polyline between arc positions s0 < s1 (cum may extend past pts)."""
    total = float(cum[-1])
    if s1 > total + 1e-9:
        # wrap: concatenate
        first = _slice_polyline(pts, cum, s0, total)
        second = _slice_polyline(pts, cum, 0.0, s1 - total)
        return np.vstack([first, second[1:]])
    p0 = polyline_point_at(pts, s0)
    p1 = polyline_point_at(pts, s1)
    inside = [p0]
    for k in range(len(pts)):
        if s0 + 1e-12 < cum[min(k, len(cum) - 1)] < s1 - 1e-12:
            inside.append(pts[k])
    inside.append(p1)
    return np.asarray(inside)
