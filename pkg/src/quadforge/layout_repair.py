"""Layout repairs: T-junction extension and doublet-patch splitting.

Both repairs mutate the node/edge lists and rebuild the arrangement, which
keeps every intermediate state fully audited. T-junction extensions follow
the parametric isoline through the hanging point when a cross-field is
available (straight continuation otherwise); landing in the middle of a
separatrix spawns the next T-junction, landing on a boundary arc or an
existing corner terminates the chain.
"""

from __future__ import annotations

import logging
import math

import numpy as np

from .errors import LayoutError, LiftingError, ParameterizationError
from .geom import polygon_centroid, polyline_cumlen, polyline_point_at, segment_intersection
from .layout import (
    LayoutEdge,
    LayoutNode,
    Patch,
    QuadLayout,
    TJUNCTION_MAX_ROUNDS,
    TJUNCTION_SNAP_FRACTION,
    _slice_polyline,
)
from .singularities import SingularityPattern, make_singularity

logger = logging.getLogger(__name__)

# merge targets for extension landings; boundary feet and valence-2 nodes
# must keep their face counts, so they are not snappable
SNAPPABLE_KINDS = ("sing", "corner", "cross", "interior")
MAX_DOUBLET_ROUNDS = 8


def _rebuild(layout: QuadLayout, nodes, edges) -> QuadLayout:
    renumbered = [
        LayoutEdge(k, e.n0, e.n1, e.points, e.kind, e.loop) for k, e in enumerate(edges)
    ]
    return QuadLayout(nodes, renumbered, layout.mesh, layout.pattern)


def _split_edge_at(edges, eid, node_id, node_point):
    """Replace edge eid by two edges meeting at the new node."""
    e = next(x for x in edges if x.id == eid)
    cum = polyline_cumlen(e.points)
    best = (np.inf, 0.0)
    for i in range(len(e.points) - 1):
        a, b = e.points[i], e.points[i + 1]
        ab = b - a
        L2 = float(ab @ ab)
        t = 0.0 if L2 == 0 else float(np.clip((node_point - a) @ ab / L2, 0.0, 1.0))
        q = a + t * ab
        dist = math.hypot(*(node_point - q))
        if dist < best[0]:
            best = (dist, float(cum[i] + t * (cum[i + 1] - cum[i])))
    s = best[1]
    first = _slice_polyline(e.points, cum, 0.0, s)
    second = _slice_polyline(e.points, cum, s, float(cum[-1]))
    first[-1] = node_point
    second[0] = node_point
    out = [x for x in edges if x.id != eid]
    out.append(LayoutEdge(-1, e.n0, node_id, first, e.kind, e.loop))
    out.append(LayoutEdge(-2, node_id, e.n1, second, e.kind, e.loop))
    return out


def _edge_dir_at_node(edge: LayoutEdge, nid: int) -> np.ndarray:
    pts = edge.points if edge.n0 == nid else edge.points[::-1]
    for q in pts[1:]:
        d = q - pts[0]
        n = math.hypot(d[0], d[1])
        if n > 1e-12:
            return d / n
    raise LayoutError("degenerate edge at node")


def _identify_hanging(layout: QuadLayout, nid: int):
    """Split a degree-3 T node into (hanging edge, host half, host half)."""
    incident = [e for e in layout.edges if nid in (e.n0, e.n1)]
    if len(incident) != 3:
        raise LayoutError(f"node {nid} is not a T-junction (degree {len(incident)})")
    dirs = [_edge_dir_at_node(e, nid) for e in incident]
    best = None
    for i in range(3):
        for j in range(i + 1, 3):
            dot = float(np.dot(dirs[i], dirs[j]))
            if best is None or dot < best[0]:
                best = (dot, i, j)
    _, i, j = best
    hang = ({0, 1, 2} - {i, j}).pop()
    return incident[hang], incident[i], incident[j]


def _side_polyline(layout: QuadLayout, patch: Patch, k: int) -> np.ndarray:
    eid, fwd = patch.sides[k]
    pts = layout.edges[eid].points
    return pts if fwd else pts[::-1]


def _first_ray_hit(sides_pts, start, direction, span, skip_radius):
    """Earliest crossing of the ray with any side polyline."""
    end = start + span * direction
    best = None
    for k, poly in enumerate(sides_pts):
        cum = polyline_cumlen(poly)
        for i in range(len(poly) - 1):
            hit = segment_intersection(start, end, poly[i], poly[i + 1])
            if hit is None:
                continue
            t, s, pt = hit
            dist = t * span
            if dist <= skip_radius:
                continue
            if best is None or dist < best[0]:
                arc = float(cum[i] + s * (cum[i + 1] - cum[i]))
                best = (dist, k, arc, np.asarray(pt))
    return best


def _extension_target(layout: QuadLayout, face: Patch, start, direction, cross):
    """Landing of the extension from a T point, plus its chord geometry.

    Returns (side index in face, arc position on that side, landing point,
    chord polyline).
    """
    mesh = layout.mesh
    sides_phys = [_side_polyline(layout, face, k) for k in range(face.n_sides)]
    skip = 0.05 * mesh.mean_edge

    if cross is not None:
        try:
            from . import partition as pt

            singular = [s.vertex for s in cross.pattern.singularities]
            tris = pt.extract_partition(mesh, face.polygon, sides_phys, singular)
            param = pt.solve_UV(mesh, cross, tris, patch_id=face.id)
            uv_start = param.to_uv(start)
            hit0 = param.phys_locator().find(start, tol=1e-9)
            t0 = hit0[0] if hit0 is not None else param.phys_locator().find_nearest(start)[0]
            from . import fem  # local import keeps module deps one-way

            grads, _ = fem.p1_gradients(param.points, param.local_tris)
            gu = np.einsum("id,i->d", grads[t0], param.U[param.local_tris[t0]])
            gv = np.einsum("id,i->d", grads[t0], param.V[param.local_tris[t0]])
            duv = np.array([float(gu @ direction), float(gv @ direction)])
            nrm = math.hypot(*duv)
            if nrm < 1e-14:
                raise ParameterizationError("degenerate parametric direction")
            duv /= nrm
            sides_uv = [
                np.asarray([param.to_uv(p) for p in poly]) for poly in sides_phys
            ]
            uv_diam = max(
                float(param.U.max() - param.U.min()), float(param.V.max() - param.V.min())
            )
            hit = _first_ray_hit(sides_uv, uv_start, duv, 4.0 * uv_diam, 1e-6 * uv_diam)
            if hit is None:
                raise ParameterizationError("parametric extension did not exit the patch")
            _, k_side, arc_uv, uv_pt = hit
            # landing on the physical polyline at the matching normalized arc
            cum_uv = polyline_cumlen(sides_uv[k_side])
            frac = arc_uv / max(float(cum_uv[-1]), 1e-30)
            cum_ph = polyline_cumlen(sides_phys[k_side])
            arc_ph = frac * float(cum_ph[-1])
            landing = polyline_point_at(sides_phys[k_side], arc_ph)
            n_samples = max(4, int(math.hypot(*(uv_pt - uv_start)) / max(uv_diam, 1e-30) * 32))
            ts = np.linspace(0.0, 1.0, n_samples + 1)
            chord = [np.asarray(start, dtype=float)]
            for t in ts[1:-1]:
                chord.append(param.to_physical(uv_start + t * (uv_pt - uv_start)))
            chord.append(landing)
            return k_side, arc_ph, landing, np.asarray(chord)
        except (ParameterizationError, LiftingError, LayoutError) as exc:
            logger.info("parametric T extension fell back to straight chord: %s", exc)

    hit = _first_ray_hit(sides_phys, np.asarray(start, dtype=float), direction, 4.0 * mesh.bbox_diag, skip)
    if hit is None:
        raise LayoutError("T-junction extension does not hit the facing patch boundary")
    _, k_side, arc_ph, landing = hit
    chord = np.asarray([start, landing])
    return k_side, arc_ph, landing, chord


def fix_tjunctions(layout: QuadLayout, cross=None, max_rounds: int = TJUNCTION_MAX_ROUNDS) -> QuadLayout:
    """Iteratively extend hanging edges until the layout is T-junction free."""
    for round_no in range(max_rounds):
        open_ts = layout.tjunction_nodes()
        if not open_ts:
            return layout
        open_ts.sort(
            key=lambda nid: min(e.length() for e in layout.edges if nid in (e.n0, e.n1))
        )
        nid = open_ts[0]
        node = layout.nodes[nid]
        hang, host_a, host_b = _identify_hanging(layout, nid)
        faces_hang = set(layout.edge_faces[hang.id])
        across = (set(layout.edge_faces[host_a.id]) & set(layout.edge_faces[host_b.id])) - faces_hang
        if not across:
            raise LayoutError(f"T-junction {nid}: no patch across the host")
        face = layout.patches[sorted(across)[0]]

        d_in = -_edge_dir_at_node(hang, nid)
        k_side, arc, landing, chord = _extension_target(layout, face, node.point, d_in, cross)

        eid, fwd = face.sides[k_side]
        side_edge = layout.edges[eid]
        side_len = side_edge.length()
        arc_fwd = arc if fwd else side_len - arc

        nodes = list(layout.nodes)
        edges = [LayoutEdge(e.id, e.n0, e.n1, e.points, e.kind, e.loop) for e in layout.edges]

        snap_node = None
        snap_window = TJUNCTION_SNAP_FRACTION * side_len
        for end_node, end_arc in ((side_edge.n0, 0.0), (side_edge.n1, side_len)):
            if abs(arc_fwd - end_arc) < snap_window and layout.nodes[end_node].kind in SNAPPABLE_KINDS:
                snap_node = end_node
                break

        if snap_node is not None:
            target_id = snap_node
            target_pt = layout.nodes[snap_node].point
            chord = np.vstack([chord[:-1], target_pt])
        else:
            kind = "foot" if side_edge.kind == "boundary" else "tpoint"
            new_node = LayoutNode(len(nodes), np.asarray(landing), kind, None, side_edge.loop, None)
            if kind == "foot":
                new_node.s = _loop_arc_of(layout.mesh, side_edge.loop, landing)
            nodes.append(new_node)
            target_id = new_node.id
            target_pt = new_node.point
            edges = _split_edge_at(edges, eid, target_id, target_pt)

        edges.append(LayoutEdge(-3, nid, target_id, chord, "chord"))
        layout = _rebuild(layout, nodes, edges)
        logger.info("round %d: extended T-junction %d to node %d", round_no, nid, target_id)
    if layout.tjunction_nodes():
        raise LayoutError(f"T-junctions remain after {max_rounds} rounds")
    return layout


def _loop_arc_of(mesh, loop_id, point):
    if loop_id is None:
        return None
    loop = mesh.loops[loop_id]
    pts = mesh.vertices[loop.vertices]
    closed = np.vstack([pts, pts[:1]])
    cum = polyline_cumlen(closed)
    best = None
    for i in range(len(closed) - 1):
        a, b = closed[i], closed[i + 1]
        ab = b - a
        L2 = float(ab @ ab)
        t = 0.0 if L2 == 0 else float(np.clip((point - a) @ ab / L2, 0.0, 1.0))
        q = a + t * ab
        d = math.hypot(*(point - q))
        if best is None or d < best[0]:
            best = (d, float(cum[i] + t * (cum[i + 1] - cum[i])))
    return best[1]


def split_doublet_patches(layout: QuadLayout, cross=None) -> QuadLayout:
    """Split each triangular patch whose apex is a boundary valence-2 doublet.

    The patch gains an interior corner at its barycenter (an emergent
    valence-3 singularity) and three quadrilateral children; midpoint splits
    on shared sides leave T-junctions for fix_tjunctions to resolve.
    """
    for _ in range(MAX_DOUBLET_ROUNDS):
        tri_patches = [p for p in layout.patches if p.n_sides == 3 and not p.holes]
        if not tri_patches:
            return layout
        pattern_by_vertex = layout.pattern.by_vertex()

        def doublet_of(patch):
            for nid in patch.nodes:
                n = layout.nodes[nid]
                if n.vertex is not None and n.vertex in pattern_by_vertex:
                    s = pattern_by_vertex[n.vertex]
                    if s.boundary and s.valence == 2:
                        return n
            return None

        for patch in tri_patches:
            if doublet_of(patch) is None:
                raise LayoutError(
                    f"triangular patch {patch.id} has no boundary valence-2 apex "
                    "(unexpected topology)"
                )

        # split every doublet triangle in one batch so that a side shared by
        # two triangles is split once and its midpoint receives a chord from
        # both barycenters (degree 4, no T-junction there)
        nodes = list(layout.nodes)
        edges = [LayoutEdge(e.id, e.n0, e.n1, e.points, e.kind, e.loop) for e in layout.edges]
        mid_of_edge: dict[int, int] = {}
        for patch in tri_patches:
            g_point = polygon_centroid(patch.polygon)
            g_node = LayoutNode(len(nodes), g_point, "interior", None, None, None)
            nodes.append(g_node)
            mid_ids = []
            for k in range(3):
                eid, fwd = patch.sides[k]
                if eid in mid_of_edge:
                    mid_ids.append(mid_of_edge[eid])
                    continue
                side_edge = layout.edges[eid]
                cum = polyline_cumlen(side_edge.points)
                mid_pt = polyline_point_at(side_edge.points, 0.5 * float(cum[-1]))
                kind = "foot" if side_edge.kind == "boundary" else "tpoint"
                m = LayoutNode(len(nodes), mid_pt, kind, None, side_edge.loop, None)
                if kind == "foot":
                    m.s = _loop_arc_of(layout.mesh, side_edge.loop, mid_pt)
                nodes.append(m)
                mid_of_edge[eid] = m.id
                mid_ids.append(m.id)
                edges = _split_edge_at(edges, eid, m.id, mid_pt)
            for m in mid_ids:
                edges.append(
                    LayoutEdge(-1, g_node.id, m, np.asarray([g_point, nodes[m].point]), "chord")
                )
            logger.info(
                "split triangular patch %d at doublet vertex %s",
                patch.id,
                doublet_of(patch).vertex,
            )
        layout = _rebuild(layout, nodes, edges)
        layout = fix_tjunctions(layout, cross)
    raise LayoutError(f"triangular patches remain after {MAX_DOUBLET_ROUNDS} doublet rounds")


def pattern_from_layout(layout: QuadLayout) -> SingularityPattern:
    """Re-derive the singularity bookkeeping from final layout corner counts."""
    mesh = layout.mesh
    counts = layout.node_face_count()
    corners = mesh.quarter_corners()
    entries = []
    for n in layout.nodes:
        c = counts[n.id]
        if c == 0:
            continue
        if layout.is_boundary_node(n):
            charge = 2 - c
            natural = corners.get(n.vertex, 0) if n.vertex is not None else 0
            if charge != natural:
                vertex = n.vertex if n.vertex is not None else _nearest_vertex(mesh, n.point)
                entries.append(make_singularity(mesh, vertex, charge))
        else:
            charge = 4 - c
            if charge != 0:
                vertex = n.vertex if n.vertex is not None else _nearest_vertex(mesh, n.point)
                entries.append(make_singularity(mesh, vertex, charge))
    return SingularityPattern(mesh.chi_from_loops(), entries)


def _nearest_vertex(mesh, point) -> int:
    d = np.hypot(mesh.vertices[:, 0] - point[0], mesh.vertices[:, 1] - point[1])
    return int(np.argmin(d))
