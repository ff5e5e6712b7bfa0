import math

import numpy as np
import pytest

import quadforge.singularities as sg
from quadforge import domains, fem, mbo


def test_boundary_alignment_square(square_mesh):
    bc = mbo.boundary_alignment(square_mesh)
    for v, rep in bc.items():
        assert np.allclose(rep, [1.0, 0.0], atol=1e-12), v


def test_boundary_alignment_45_degrees():
    # diamond: every edge tangent at 45 degrees -> representation (-1, 0)
    pts = np.array([[1.0, 0.0], [0.0, 1.0], [-1.0, 0.0], [0.0, -1.0], [0.0, 0.0]])
    tris = np.array([[0, 1, 4], [1, 2, 4], [2, 3, 4], [3, 0, 4]])
    m = mbo.TriMesh(pts, tris)
    for rep in mbo.boundary_alignment(m).values():
        assert np.allclose(rep, [-1.0, 0.0], atol=1e-12)


def test_boundary_alignment_circle_analytic(disk_mesh):
    bc = mbo.boundary_alignment(disk_mesh)
    outer = disk_mesh.loops[0]
    for v in outer.vertices:
        x, y = disk_mesh.vertices[v]
        phi = math.atan2(y, x)
        expect = np.array([math.cos(4 * (phi + math.pi / 2)), math.sin(4 * (phi + math.pi / 2))])
        assert np.allclose(bc[int(v)], expect, atol=1e-9)


def test_schedule_geometric(square_mesh):
    sched = mbo.make_schedule(square_mesh, n_levels=5)
    a = sched.alphas
    assert len(a) == 5
    assert abs(a[0] - (0.1 * square_mesh.bbox_diag) ** 2) < 1e-15
    assert abs(a[-1] - square_mesh.min_edge**2) < 1e-15
    ratios = a[1:] / a[:-1]
    assert np.allclose(ratios, ratios[0], rtol=1e-12)


def test_schedule_clamps_levels(square_mesh, caplog):
    sched = mbo.make_schedule(square_mesh, n_levels=1)
    assert len(sched.alphas) == 5


def test_schedule_degenerate_ordering():
    m = domains.two_triangle_square()
    # min edge 1.0 > 0.1 * diag -> single-entry schedule
    sched = mbo.make_schedule(m)
    assert len(sched.alphas) == 1
    assert sched.alphas[0] == m.min_edge**2


def test_projection_idempotent(square_mesh):
    rng = np.random.default_rng(0)
    v = rng.normal(size=(10, 2))
    p1 = mbo._project(v)
    p2 = mbo._project(p1)
    assert np.allclose(p1, p2, atol=1e-15)
    assert np.allclose(np.hypot(p1[:, 0], p1[:, 1]), 1.0, atol=1e-12)


def test_small_alpha_identity(square_mesh):
    sched = mbo.DiffusionSchedule(np.array([1e-18]), np.array([1e-3]), max_iterations=1)
    field = mbo.mbo_solve(square_mesh, sched)
    # boundary data is constant so the interior must stay near (1, 0), but the
    # point here is one tiny-alpha step changes nothing measurably
    assert np.allclose(field.vectors, [1.0, 0.0], atol=1e-9)


def test_square_constant_field(square_mesh):
    field = mbo.mbo_solve(square_mesh)
    dev = np.hypot(field.vectors[:, 0] - 1.0, field.vectors[:, 1])
    assert dev.max() < 1e-9
    assert sg.detect(square_mesh, field).singularities == []


def test_unit_norm_after_convergence(disk_mesh):
    field = mbo.mbo_solve(disk_mesh)
    assert field.converged
    nrm = np.hypot(field.vectors[:, 0], field.vectors[:, 1])
    assert np.allclose(nrm, 1.0, atol=1e-12)


def _run_levels(mesh, check):
    """Drive the per-level sweeps, calling check(energy trace) per level."""
    import scipy.sparse as sp
    from scipy.sparse.linalg import splu

    m = mesh
    sched = mbo.make_schedule(m)
    S = fem.stiffness_matrix(m.vertices, m.triangles)
    M = fem.lumped_mass(m.vertices, m.triangles)
    bc = mbo.boundary_alignment(m)
    fixed = np.zeros(m.n_vertices, bool)
    v = np.zeros((m.n_vertices, 2))
    v[:, 0] = 1.0
    for vid, rep in bc.items():
        fixed[vid] = True
        v[vid] = rep
    idx = np.nonzero(~fixed)[0]
    n_levels = len(sched.alphas)
    for level, (alpha, tol) in enumerate(zip(sched.alphas, sched.tolerances)):
        A = sp.diags(M) + alpha * S
        lu = splu(A[idx][:, idx].tocsc())
        coupling = A[idx][:, np.nonzero(fixed)[0]].tocsr() @ v[fixed]
        trace = [fem.dirichlet_energy(m.vertices, m.triangles, v)]
        diffusion_trace = []
        for _ in range(mbo.MAX_INNER_ITERATIONS):
            rhs = M[idx, None] * v[idx] - coupling
            w = v.copy()
            w[idx] = np.column_stack([lu.solve(rhs[:, 0]), lu.solve(rhs[:, 1])])
            diffusion_trace.append(fem.dirichlet_energy(m.vertices, m.triangles, w))
            w = mbo._project(w)
            w[fixed] = v[fixed]
            change = float(np.max(np.hypot(*(w - v).T)))
            v = w
            trace.append(fem.dirichlet_energy(m.vertices, m.triangles, v))
            if change < tol:
                break
        check(level, n_levels, np.array(trace), np.array(diffusion_trace))


def test_diffusion_step_energy_monotone(disk_mesh):
    """The implicit heat step never increases Dirichlet energy, at any level."""

    def check(level, n_levels, trace, diffusion_trace):
        assert np.all(diffusion_trace <= trace[:-1] * (1 + 1e-10))

    _run_levels(disk_mesh, check)


def test_sweep_energy_monotone_where_settled(disk_mesh, square_mesh, annulus_mesh):
    """Full diffusion+projection sweeps dissipate energy once the field is settled.

    On domains whose field develops singularities the coarse levels transiently
    gain energy through the unit projection (the norm collapses near nascent
    singularities), so the per-sweep claim is asserted at the mesh-scale level
    everywhere and at all levels on singularity-free domains.
    """

    def check_final_only(level, n_levels, trace, diffusion_trace):
        if level == n_levels - 1:
            assert np.all(np.diff(trace) <= np.abs(trace[:-1]) * 1e-10)

    def check_all(level, n_levels, trace, diffusion_trace):
        assert np.all(np.diff(trace) <= np.abs(trace[:-1]) * 1e-10 + 1e-12)

    _run_levels(disk_mesh, check_final_only)
    _run_levels(square_mesh, check_all)
    _run_levels(annulus_mesh, check_all)


def test_disk_indices_sum_to_chi(disk_mesh):
    field = mbo.mbo_solve(disk_mesh)
    pat = sg.detect(disk_mesh, field)
    assert pat.total_t() == 4
    assert sg.validate(pat, disk_mesh).ok


def test_square_minus_disk_balance(smd_mesh):
    field = mbo.mbo_solve(smd_mesh)
    pat = sg.detect(smd_mesh, field)
    corners = sum(sg.corner_quarters(smd_mesh, pat).values())
    assert pat.total_t() + corners == 0
    assert sg.validate(pat, smd_mesh).ok
    # typical structure: valence-5 singularities ringing the hole
    assert all(s.t == -1 for s in pat.singularities)
