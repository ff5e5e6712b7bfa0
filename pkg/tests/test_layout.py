import math

import numpy as np
import pytest

import quadforge.conformal as cf
import quadforge.singularities as sg
from quadforge import domains, layout as ly, layout_repair as lr, mbo, tracing as tr
from quadforge.errors import LayoutError
from quadforge.spokes import refine_spokes
from quadforge.tracing import Separatrix


def nearest_interior(mesh, x, y):
    d = np.hypot(mesh.vertices[:, 0] - x, mesh.vertices[:, 1] - y)
    d[mesh.is_boundary_vertex] = np.inf
    return int(np.argmin(d))


def nearest_boundary(mesh, x, y):
    d = np.hypot(mesh.vertices[:, 0] - x, mesh.vertices[:, 1] - y)
    d[~mesh.is_boundary_vertex] = np.inf
    return int(np.argmin(d))


def run_stage3(mesh, pat, repair=True):
    res = refine_spokes(mesh, pat)
    field = cf.compute_cross_field(res.mesh, res.pattern)
    traced = tr.trace_separatrices(field, res.inner_radius, res.disk_radius)
    seps = tr.dedup(traced.separatrices, field, res.disk_radius, traced.launch_angles)
    seps, records = ly.detect_and_cut_limit_cycles(seps, res.mesh)
    lay = ly.build_layout(res.mesh, res.pattern, seps, records)
    if repair:
        lay = lr.fix_tjunctions(lay, field)
        lay = lr.split_doublet_patches(lay, field)
    return res, field, lay


# -- tracing -----------------------------------------------------------------


def test_square_no_separatrices(square_mesh):
    field = cf.compute_cross_field(square_mesh, sg.SingularityPattern(1, []))
    traced = tr.trace_separatrices(field, {}, {})
    assert len(traced) == 0
    lay = ly.build_layout(square_mesh, field.pattern, traced.separatrices)
    assert len(lay.patches) == 1
    assert lay.patches[0].n_sides == 4
    lay.validate()


def test_valence8_eight_separatrices():
    m = domains.square(16)
    center = nearest_interior(m, 0.5, 0.5)
    mids = [nearest_boundary(m, *p) for p in [(0.5, 0), (1, 0.5), (0.5, 1), (0, 0.5)]]
    pat = sg.SingularityPattern(
        1,
        [sg.make_singularity(m, center, -4)] + [sg.make_singularity(m, b, 1) for b in mids],
    )
    res = refine_spokes(m, pat)
    field = cf.compute_cross_field(res.mesh, res.pattern)
    traced = tr.trace_separatrices(field, res.inner_radius, res.disk_radius)
    seps = traced.separatrices
    assert len(seps) == 8
    assert all(s.termination[0] == "boundary" for s in seps)
    lay = ly.build_layout(res.mesh, res.pattern, seps)
    lay.validate()
    assert len(lay.patches) == 8
    assert all(p.n_sides == 4 for p in lay.patches)


def test_tracing_deterministic():
    m = domains.square(12)
    pat = sg.SingularityPattern(
        1,
        [
            sg.make_singularity(m, nearest_interior(m, 0.35, 0.5), 1),
            sg.make_singularity(m, nearest_interior(m, 0.65, 0.5), -1),
        ],
    )
    res = refine_spokes(m, pat)
    field = cf.compute_cross_field(res.mesh, res.pattern)
    a = tr.trace_separatrices(field, res.inner_radius, res.disk_radius)
    b = tr.trace_separatrices(field, res.inner_radius, res.disk_radius)
    assert len(a) == len(b)
    for s1, s2 in zip(a.separatrices, b.separatrices):
        assert np.array_equal(s1.points, s2.points)


def test_tracing_follows_field():
    m = domains.square(16)
    pat = sg.SingularityPattern(
        1,
        [
            sg.make_singularity(m, nearest_interior(m, 0.3, 0.35), 1),
            sg.make_singularity(m, nearest_interior(m, 0.7, 0.65), -1),
        ],
    )
    res = refine_spokes(m, pat)
    field = cf.compute_cross_field(res.mesh, res.pattern)
    traced = tr.trace_separatrices(field, res.inner_radius, res.disk_radius)
    for sep in traced.separatrices:
        pts = sep.points
        for k in range(2, len(pts) - 2):
            mid = 0.5 * (pts[k] + pts[k + 1])
            d = pts[k + 1] - pts[k]
            n = math.hypot(*d)
            if n < 1e-12:
                continue
            d = d / n
            branch = field.branch_toward(field.mesh.locate(mid), d)
            ang = abs(math.degrees(math.acos(min(1.0, abs(float(np.dot(d, branch)))))))
            assert ang < 5.0


def test_dedup_merges_connectors(annulus_mesh):
    def pick(r, a):
        return nearest_interior(annulus_mesh, r * math.cos(a), r * math.sin(a))

    pat = sg.SingularityPattern(
        0,
        [sg.make_singularity(annulus_mesh, pick(0.55, k * math.pi / 2), 1) for k in range(4)]
        + [sg.make_singularity(annulus_mesh, pick(0.85, k * math.pi / 2), -1) for k in range(4)],
    )
    res = refine_spokes(annulus_mesh, pat)
    field = cf.compute_cross_field(res.mesh, res.pattern)
    traced = tr.trace_separatrices(field, res.inner_radius, res.disk_radius)
    merged = tr.dedup(traced.separatrices, field, res.disk_radius, traced.launch_angles)
    assert len(merged) < len(traced)
    counts = {}
    for s in merged:
        counts[s.origin[1]] = counts.get(s.origin[1], 0) + 1
        if s.termination and s.termination[0] == "sing":
            counts[s.termination[1]] = counts.get(s.termination[1], 0) + 1
    for s in res.pattern.singularities:
        assert counts[s.vertex] == s.valence


def test_dedup_keeps_disjoint(square_mesh):
    a = Separatrix(np.array([[0.1, 0.1], [0.4, 0.4]]), ("sing", 1, 0), ("boundary", (0.4, 0.4)))
    b = Separatrix(np.array([[0.9, 0.1], [0.6, 0.4]]), ("sing", 2, 0), ("boundary", (0.6, 0.4)))
    field = cf.compute_cross_field(square_mesh, sg.SingularityPattern(1, []))
    out = tr.dedup([a, b], field, {})
    assert len(out) == 2


# -- limit cycles ------------------------------------------------------------


def spiral_fixture():
    """Synthetic spiral crossing two straight separatrices repeatedly."""
    theta = np.linspace(0, 4.5 * math.pi, 300)
    r = 0.45 - 0.02 * theta / math.pi
    spiral = np.column_stack([0.5 + r * np.cos(theta), 0.5 + r * np.sin(theta)])
    s_spiral = Separatrix(spiral, ("sing", 100, 0), None, flagged_cycle=True)
    s_a = Separatrix(
        np.array([[0.5, 0.02], [0.5, 0.98]]), ("sing", 101, 0), ("boundary", (0.5, 0.98))
    )
    s_b = Separatrix(
        np.array([[0.02, 0.5], [0.98, 0.5]]), ("sing", 102, 0), ("boundary", (0.98, 0.5))
    )
    return [s_spiral, s_a, s_b]


def test_limit_cycle_cut():
    seps, records = ly.detect_and_cut_limit_cycles(spiral_fixture())
    assert len(records) == 1
    cut = seps[0]
    assert cut.termination[0] == "cut"
    assert cut.length() < spiral_fixture()[0].length()
    # straight separatrices untouched
    assert seps[1].termination[0] == "boundary"
    assert seps[2].termination[0] == "boundary"


def test_no_cycles_on_clean_set():
    s_a = Separatrix(
        np.array([[0.5, 0.02], [0.5, 0.98]]), ("sing", 1, 0), ("boundary", (0.5, 0.98))
    )
    s_b = Separatrix(
        np.array([[0.02, 0.5], [0.98, 0.5]]), ("sing", 2, 0), ("boundary", (0.98, 0.5))
    )
    out, records = ly.detect_and_cut_limit_cycles([s_a, s_b])
    assert records == []


def test_uncuttable_cycle_raises():
    # spiral that never crosses anything near-orthogonally
    theta = np.linspace(0, 6 * math.pi, 400)
    r = 0.3 - 0.005 * theta / math.pi
    spiral = np.column_stack([0.5 + r * np.cos(theta), 0.5 + r * np.sin(theta)])
    s_spiral = Separatrix(spiral, ("sing", 100, 0), None, flagged_cycle=True)
    with pytest.raises(LayoutError):
        ly.detect_and_cut_limit_cycles([s_spiral])


# -- layouts end to end --------------------------------------------------------


def test_pair_layout_balance():
    m = domains.square(16)
    pat = sg.SingularityPattern(
        1,
        [
            sg.make_singularity(m, nearest_interior(m, 0.3, 0.35), 1),
            sg.make_singularity(m, nearest_interior(m, 0.7, 0.65), -1),
        ],
    )
    res, field, lay = run_stage3(m, pat)
    lay.validate()
    assert all(p.n_sides == 4 for p in lay.patches)
    counts = lay.node_face_count()
    by_vertex = {n.vertex: counts[n.id] for n in lay.nodes if n.vertex is not None}
    for s in res.pattern.singularities:
        assert by_vertex[s.vertex] == s.valence


def test_smd_detected_layout(smd_mesh):
    pat = sg.detect(smd_mesh, mbo.mbo_solve(smd_mesh))
    res, field, lay = run_stage3(smd_mesh, pat)
    lay.validate()
    assert len(lay.patches) >= 8


def test_annulus_layout():
    ma = domains.annulus()
    def pick(r, a):
        return nearest_interior(ma, r * math.cos(a), r * math.sin(a))
    pat = sg.SingularityPattern(
        0,
        [sg.make_singularity(ma, pick(0.55, k * math.pi / 2), 1) for k in range(4)]
        + [sg.make_singularity(ma, pick(0.85, k * math.pi / 2), -1) for k in range(4)],
    )
    res, field, lay = run_stage3(ma, pat)
    lay.validate()
    assert lay.corner_charge_total() == 0


def test_layout_json_round_trip(square_mesh, tmp_path):
    field = cf.compute_cross_field(square_mesh, sg.SingularityPattern(1, []))
    lay = ly.build_layout(square_mesh, field.pattern, [])
    path = tmp_path / "layout.json"
    lay.save(path)
    import json

    data = json.loads(path.read_text())
    assert len(data["patches"]) == 1
    assert data["patches"][0]["n_sides"] == 4


# -- T-junction and doublet repairs (constructed fixtures) --------------------


def synthetic_t_layout(square_mesh):
    """Hand-built layout: vertical chord + hanging horizontal chord (T)."""
    m = square_mesh
    nodes = []

    def add(pt, kind, vertex=None, loop=None, s=None):
        nodes.append(ly.LayoutNode(len(nodes), np.asarray(pt, dtype=float), kind, vertex, loop, s))
        return len(nodes) - 1

    c0 = add((0.0, 0.0), "corner", vertex=0, loop=0, s=0.0)
    c1 = add((1.0, 0.0), "corner", vertex=16, loop=0, s=1.0)
    c2 = add((1.0, 1.0), "corner", vertex=288, loop=0, s=2.0)
    c3 = add((0.0, 1.0), "corner", vertex=272, loop=0, s=3.0)
    f0 = add((0.4, 0.0), "foot", loop=0, s=0.4)
    f1 = add((0.4, 1.0), "foot", loop=0, s=2.6)
    f2 = add((0.0, 0.5), "foot", loop=0, s=3.5)
    tj = add((0.4, 0.5), "tpoint")

    edges = []

    def seg(n0, n1, kind, loop=None):
        edges.append(
            ly.LayoutEdge(len(edges), n0, n1, np.array([nodes[n0].point, nodes[n1].point]), kind, loop)
        )

    seg(c0, f0, "boundary", 0)
    seg(f0, c1, "boundary", 0)
    seg(c1, c2, "boundary", 0)
    seg(c2, f1, "boundary", 0)
    seg(f1, c3, "boundary", 0)
    seg(c3, f2, "boundary", 0)
    seg(f2, c0, "boundary", 0)
    seg(f0, tj, "sep")
    seg(tj, f1, "sep")
    seg(f2, tj, "sep")
    return ly.QuadLayout(nodes, edges, m, sg.SingularityPattern(1, []))


def test_fix_tjunction_synthetic(square_mesh):
    lay = synthetic_t_layout(square_mesh)
    assert lay.tjunction_nodes()
    sides = sorted(p.n_sides for p in lay.patches)
    assert sides == [4, 4, 5]  # right patch sees the T as a flat corner
    fixed = lr.fix_tjunctions(lay, None)
    assert not fixed.tjunction_nodes()
    fixed.validate()
    assert sorted(p.n_sides for p in fixed.patches) == [4, 4, 4, 4]


def test_fix_tjunction_stacked(square_mesh):
    """Two T-junctions in series resolve within two rounds."""
    lay = synthetic_t_layout(square_mesh)
    nodes = list(lay.nodes)
    edges = [ly.LayoutEdge(e.id, e.n0, e.n1, e.points, e.kind, e.loop) for e in lay.edges]
    # second hanging chord ending on the first vertical chord
    f3 = ly.LayoutNode(len(nodes), np.array([1.0, 0.75]), "foot", None, 0, 1.75)
    nodes.append(f3)
    t2 = ly.LayoutNode(len(nodes), np.array([0.4, 0.75]), "tpoint", None, None, None)
    nodes.append(t2)
    right_arc = next(e for e in edges if e.kind == "boundary" and e.n0 == 1 and e.n1 == 2)
    edges = lr._split_edge_at(edges, right_arc.id, f3.id, f3.point)
    host = next(e for e in edges if e.kind == "sep" and e.n0 == 7 and e.n1 == 5)
    edges = lr._split_edge_at(edges, host.id, t2.id, t2.point)
    edges.append(ly.LayoutEdge(-1, f3.id, t2.id, np.array([f3.point, t2.point]), "sep"))
    edges = [ly.LayoutEdge(k, e.n0, e.n1, e.points, e.kind, e.loop) for k, e in enumerate(edges)]
    lay2 = ly.QuadLayout(nodes, edges, lay.mesh, lay.pattern)
    assert len(lay2.tjunction_nodes()) == 2
    fixed = lr.fix_tjunctions(lay2, None)
    fixed.validate()
    assert not fixed.tjunction_nodes()


def doublet_layout(square_mesh):
    """Corner doublet whose two patches are triangles, rest of the square quad.

    The diagonal separatrix from the corner doublet ends on a regular
    degree-4 crossing; both triangles share it, and the two far regions are
    already four-sided.
    """
    m = square_mesh
    corner_vertex = int(np.argmin(np.hypot(m.vertices[:, 0], m.vertices[:, 1])))
    pattern = sg.SingularityPattern(1, [sg.make_singularity(m, corner_vertex, 0)])
    nodes = []

    def add(pt, kind, vertex=None, loop=None, s=None):
        nodes.append(ly.LayoutNode(len(nodes), np.asarray(pt, dtype=float), kind, vertex, loop, s))
        return len(nodes) - 1

    a = add((0.0, 0.0), "bsing", vertex=corner_vertex, loop=0, s=0.0)
    c1 = add((1.0, 0.0), "corner", vertex=16, loop=0, s=1.0)
    c2 = add((1.0, 1.0), "corner", vertex=288, loop=0, s=2.0)
    c3 = add((0.0, 1.0), "corner", vertex=272, loop=0, s=3.0)
    d = add((0.8, 0.0), "foot", loop=0, s=0.8)
    lft = add((0.0, 0.8), "foot", loop=0, s=3.2)
    x = add((0.4, 0.4), "cross")

    edges = []

    def seg(n0, n1, kind, loop=None):
        edges.append(
            ly.LayoutEdge(len(edges), n0, n1, np.array([nodes[n0].point, nodes[n1].point]), kind, loop)
        )

    seg(a, d, "boundary", 0)
    seg(d, c1, "boundary", 0)
    seg(c1, c2, "boundary", 0)
    seg(c2, c3, "boundary", 0)
    seg(c3, lft, "boundary", 0)
    seg(lft, a, "boundary", 0)
    seg(a, x, "sep")
    seg(d, x, "sep")
    seg(lft, x, "sep")
    seg(x, c2, "sep")
    return ly.QuadLayout(nodes, edges, m, pattern)


def test_split_doublet_patch(square_mesh):
    lay = doublet_layout(square_mesh)
    sides = sorted(p.n_sides for p in lay.patches)
    assert sides == [3, 3, 4, 4]  # two triangles at the doublet corner
    fixed = lr.split_doublet_patches(lay, None)
    fixed.validate()
    assert all(p.n_sides == 4 for p in fixed.patches)
    # exact quarter-integer balance restored by the surgery
    assert fixed.corner_charge_total() == 4 * square_mesh.chi_from_loops()
    # the two triangle barycenters become interior valence-3 singularities
    counts = fixed.node_face_count()
    emergent = [
        n for n in fixed.nodes
        if n.kind == "interior" and counts[n.id] == 3
    ]
    assert len(emergent) == 2


def test_doublet_without_apex_raises(square_mesh):
    lay = doublet_layout(square_mesh)
    lay.pattern = sg.SingularityPattern(1, [])  # no doublet registered
    with pytest.raises(LayoutError):
        lr.split_doublet_patches(lay, None)


def test_pattern_from_layout_after_split(square_mesh):
    lay = doublet_layout(square_mesh)
    fixed = lr.split_doublet_patches(lay, None)
    derived = lr.pattern_from_layout(fixed)
    total = derived.total_t() + sum(
        sg.corner_quarters(square_mesh, derived).values()
    )
    assert total == 4 * square_mesh.chi_from_loops()
    assert sum(1 for s in derived.singularities if s.t == 1 and not s.boundary) >= 2
