import math

import numpy as np
import pytest

import quadforge.conformal as cf
import quadforge.singularities as sg
from quadforge import domains, fem
from quadforge.errors import PatternBalanceError
from quadforge.spokes import refine_spokes
from quadforge.trimesh import uniform_refine


def nearest_interior(mesh, x, y):
    d = np.hypot(mesh.vertices[:, 0] - x, mesh.vertices[:, 1] - y)
    d[mesh.is_boundary_vertex] = np.inf
    return int(np.argmin(d))


def nearest_boundary(mesh, x, y):
    d = np.hypot(mesh.vertices[:, 0] - x, mesh.vertices[:, 1] - y)
    d[~mesh.is_boundary_vertex] = np.inf
    return int(np.argmin(d))


@pytest.fixture(scope="module")
def pair_setup():
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
    return res, field


def annulus_pattern(mesh, offset):
    def pick(r, a):
        return nearest_interior(mesh, r * math.cos(a), r * math.sin(a))

    s3 = [pick(0.55, k * math.pi / 2) for k in range(4)]
    s5 = [pick(0.85, k * math.pi / 2 + offset) for k in range(4)]
    return sg.SingularityPattern(
        0,
        [sg.make_singularity(mesh, v, 1) for v in s3]
        + [sg.make_singularity(mesh, v, -1) for v in s5],
    )


# -- branch cut -------------------------------------------------------------


def test_empty_cut_on_simply_connected(square_mesh):
    cut = cf.build_branch_cut(square_mesh, sg.SingularityPattern(1, []))
    assert len(cut) == 0
    assert cf.cut_open_euler(square_mesh, cut) == 1


def test_cut_anchors_pair(pair_setup):
    res, field = pair_setup
    cut = field.cut
    cut_vertices = {int(v) for e in cut.edges for v in res.mesh.edges[e]}
    for s in res.pattern.singularities:
        assert s.vertex in cut_vertices
    assert cf.cut_open_euler(res.mesh, cut) == 1


def test_cut_handles_inner_loop(annulus_mesh):
    pat = annulus_pattern(annulus_mesh, 0.0)
    res = refine_spokes(annulus_mesh, pat)
    cut = cf.build_branch_cut(res.mesh, res.pattern)
    assert cf.cut_open_euler(res.mesh, cut) == 1
    cut_vertices = {int(v) for e in cut.edges for v in res.mesh.edges[e]}
    inner = [l for l in res.mesh.loops if not l.outer][0]
    assert cut_vertices.intersection(inner.vertices)
    for s in res.pattern.singularities:
        assert s.vertex in cut_vertices


# -- H field ----------------------------------------------------------------


def test_h_constant_on_square(square_mesh):
    field = cf.solve_H(square_mesh, sg.SingularityPattern(1, []))
    assert float(field.values.max() - field.values.min()) < 1e-9


def test_h_signs_at_pair(pair_setup):
    res, field = pair_setup
    h = field.h_field.values
    v3 = next(s.vertex for s in res.pattern.singularities if s.t == 1)
    v5 = next(s.vertex for s in res.pattern.singularities if s.t == -1)
    # small elements concentrate at the valence-3 vertex: log size negative
    assert h[v3] < -0.5
    assert h[v5] > 0.5


def test_h_matches_dense_oracle():
    m = domains.square(8)
    pat = sg.SingularityPattern(
        1,
        [
            sg.make_singularity(m, nearest_interior(m, 0.3, 0.3), 1),
            sg.make_singularity(m, nearest_interior(m, 0.7, 0.7), -1),
        ],
    )
    field = cf.solve_H(m, pat)
    S = fem.stiffness_matrix(m.vertices, m.triangles).toarray()
    b = cf.assemble_h_load(m, pat)
    dense, *_ = np.linalg.lstsq(S, b, rcond=None)
    mass = fem.lumped_mass(m.vertices, m.triangles)
    dense -= float(np.dot(mass, dense) / mass.sum())
    assert np.abs(dense - field.values).max() < 1e-8


def test_h_refuses_unbalanced(square_mesh):
    pat = sg.SingularityPattern(
        1, [sg.make_singularity(square_mesh, nearest_interior(square_mesh, 0.5, 0.5), -1)]
    )
    with pytest.raises(PatternBalanceError):
        cf.solve_H(square_mesh, pat)


def test_compatibility_identity(pair_setup):
    res, _ = pair_setup
    b = cf.assemble_h_load(res.mesh, res.pattern)
    assert abs(float(b.sum())) < 1e-9
    mass = sg.compatibility_mass(res.pattern, res.mesh)
    assert abs(mass - 2 * math.pi * res.mesh.chi_from_loops()) < 1e-9


# -- theta field ------------------------------------------------------------


def test_theta_constant_on_square(square_mesh):
    field = cf.compute_cross_field(square_mesh, sg.SingularityPattern(1, []))
    th = field.theta_field.values
    assert float(th.max() - th.min()) < 1e-9


def test_conjugacy_residual(pair_setup):
    _, field = pair_setup
    assert field.theta_field.residual <= 1e-8


def test_gradients_orthogonal(pair_setup):
    res, field = pair_setup
    mesh = res.mesh
    gh = field.h_field.gradient()
    grads, _ = fem.p1_gradients(mesh.vertices, mesh.triangles)
    th = field.theta_field
    gt = np.einsum("tid,ti->td", -2.0 * grads, th.values[th.tri_dofs])
    num = np.abs(np.einsum("td,td->t", gh, gt))
    den = np.hypot(gh[:, 0], gh[:, 1]) * np.hypot(gt[:, 0], gt[:, 1])
    keep = den > 1e-12
    assert float((num[keep] / den[keep]).max()) < 1e-6


def test_jumps_are_quarter_multiples(pair_setup):
    _, field = pair_setup
    assert field.theta_field.jumps  # cut crosses the domain
    assert all(isinstance(j, int) for j in field.theta_field.jumps.values())


def test_anchor_changes_theta_by_quarter_constant(square_mesh):
    pat = sg.SingularityPattern(1, [])
    cut = cf.build_branch_cut(square_mesh, pat)
    h = cf.solve_H(square_mesh, pat)
    edges = list(square_mesh.boundary_edge_ids[:4])
    fields = []
    for e in edges:
        a, b = square_mesh.edges[e]
        d = square_mesh.vertices[b] - square_mesh.vertices[a]
        fields.append(cf.solve_theta(square_mesh, h, cut, anchor=(int(e), math.atan2(d[1], d[0]))))
    base = fields[0].values
    for f in fields[1:]:
        diff = f.values - base
        assert float(diff.max() - diff.min()) < 1e-9
        c = float(diff.mean())
        assert abs(c - round(c / (math.pi / 2)) * math.pi / 2) < 1e-9


# -- reconstruction and detection -------------------------------------------


def test_cross_reconstruction_square(square_mesh):
    field = cf.compute_cross_field(square_mesh, sg.SingularityPattern(1, []))
    loc = square_mesh.locate(np.array([0.4, 0.6]))
    branches = field.cross_at(loc)
    assert len(branches) == 4
    for k in range(4):
        assert abs(np.hypot(*branches[k]) - 1.0) < 1e-9
        dot = float(np.dot(branches[k], branches[(k + 1) % 4]))
        assert abs(dot) < 1e-9
    angles = sorted(abs(math.atan2(b[1], b[0])) % (math.pi / 2) for b in branches)
    assert angles[-1] < 1e-9 or angles[0] > math.pi / 2 - 1e-9


def test_cross_norm_ratio_across_pair(pair_setup):
    res, field = pair_setup
    v3 = next(s for s in res.pattern.singularities if s.t == 1)
    v5 = next(s for s in res.pattern.singularities if s.t == -1)
    r = res.disk_radius
    p3 = np.array([v3.x + 1.2 * r[v3.vertex], v3.y])
    p5 = np.array([v5.x - 1.2 * r[v5.vertex], v5.y])
    n3 = field.norm_at(res.mesh.locate(p3))
    n5 = field.norm_at(res.mesh.locate(p5))
    assert n5 / n3 > 1.0  # elements near valence-5 are larger


def test_cross_consistent_across_cut(pair_setup):
    res, field = pair_setup
    mesh = res.mesh
    e = sorted(field.cut.edges)[len(field.cut.edges) // 2]
    t0, t1 = (int(x) for x in mesh.edge_tris[e])
    mid = mesh.vertices[mesh.edges[e]].mean(axis=0)

    def branch_set(t):
        loc_bary = mesh.locator.bary(t, mid)
        theta = field.theta_field.at(t, loc_bary)
        return sorted((theta - math.atan2(0, 1)) % (math.pi / 2) for _ in [0])[0]

    d0 = branch_set(t0) % (math.pi / 2)
    d1 = branch_set(t1) % (math.pi / 2)
    delta = abs(d0 - d1) % (math.pi / 2)
    assert min(delta, math.pi / 2 - delta) < 1e-9


def test_redetection_exact(pair_setup):
    res, field = pair_setup
    redet = field.detect_singularities()
    got = sorted((s.vertex, s.t) for s in redet.singularities)
    want = sorted((s.vertex, s.t) for s in res.pattern.singularities)
    assert got == want


def test_redetection_valence8_with_boundary():
    m = domains.square(16)
    center = nearest_interior(m, 0.5, 0.5)
    mids = [nearest_boundary(m, *p) for p in [(0.5, 0.0), (1.0, 0.5), (0.5, 1.0), (0.0, 0.5)]]
    pat = sg.SingularityPattern(
        1,
        [sg.make_singularity(m, center, -4)]
        + [sg.make_singularity(m, b, 1) for b in mids],
    )
    assert sg.validate(pat, m).ok
    res = refine_spokes(m, pat)
    field = cf.compute_cross_field(res.mesh, res.pattern)
    redet = field.detect_singularities()
    assert sorted((s.vertex, s.t) for s in redet.singularities) == sorted(
        (s.vertex, s.t) for s in res.pattern.singularities
    )


# -- tangency ---------------------------------------------------------------


def test_tangency_square(square_mesh):
    field = cf.compute_cross_field(square_mesh, sg.SingularityPattern(1, []))
    report = cf.check_tangency(field)
    assert report.meshable
    assert report.max_deviation_rad < 1e-6


def test_annulus_good_and_bad_patterns(annulus_mesh):
    good = annulus_pattern(annulus_mesh, 0.0)
    bad = annulus_pattern(annulus_mesh, math.pi / 4)
    for pat, expected in ((good, True), (bad, False)):
        res = refine_spokes(annulus_mesh, pat)
        field = cf.compute_cross_field(res.mesh, res.pattern)
        report = cf.check_tangency(field, tol_deg=2.0)
        assert report.meshable is expected
        if not expected:
            inner = [l for l in res.mesh.loops if not l.outer][0]
            inner_pts = res.mesh.vertices[inner.vertices]
            cx = inner_pts.mean(axis=0)
            r_in = float(np.hypot(*(inner_pts - cx).T).mean())
            # violations sit on the inner boundary
            assert all(
                math.hypot(v.midpoint[0] - cx[0], v.midpoint[1] - cx[1]) < 1.5 * r_in
                for v in report.violations
            )


# -- mesh independence -------------------------------------------------------


def test_refinement_pins_singularities(pair_setup):
    res, field = pair_setup
    fine = uniform_refine(res.mesh)
    field_fine = cf.compute_cross_field(fine, res.pattern)
    redet = field_fine.detect_singularities()
    assert sorted((s.vertex, s.t) for s in redet.singularities) == sorted(
        (s.vertex, s.t) for s in res.pattern.singularities
    )


def test_h_second_order_at_matched_points(pair_setup):
    res, _ = pair_setup
    mesh0 = res.mesh
    mesh1 = uniform_refine(mesh0)
    mesh2 = uniform_refine(mesh1)
    h0 = cf.solve_H(mesh0, res.pattern).values
    h1 = cf.solve_H(mesh1, res.pattern).values
    h2 = cf.solve_H(mesh2, res.pattern).values
    keep = np.ones(mesh0.n_vertices, dtype=bool)
    for s in res.pattern.singularities:
        d = np.hypot(
            mesh0.vertices[:, 0] - s.x, mesh0.vertices[:, 1] - s.y
        )
        keep &= d > 2.0 * res.disk_radius[s.vertex]
    d1 = float(np.abs(h1[: mesh0.n_vertices] - h0)[keep].max())
    d2 = float(np.abs(h2[: mesh0.n_vertices] - h0[: mesh0.n_vertices])[keep].max())
    d21 = float(np.abs(h2[: mesh1.n_vertices] - h1)[: mesh0.n_vertices][keep].max())
    assert d21 <= 0.45 * d1  # observed order ~2
