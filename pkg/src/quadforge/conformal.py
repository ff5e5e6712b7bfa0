"""Second cross-field computation from an imposed singularity pattern.

Two linear solves reconstruct the field exactly:

* the log-norm field solves a pure-Neumann Poisson problem with point
  loads (pi/2) * t at interior singular vertices and lumped boundary data
  turning - (pi/2) * q per boundary vertex, where q is the vertex's
  quarter-turn charge (imposed singularity or rounded geometric corner);
* the rotation field solves grad(theta) = rot(grad H) in least squares with
  edge-midpoint (Crouzeix-Raviart) elements on the mesh cut open along a
  branch-cut forest, pinned at one boundary edge.

Rotated P1 gradients are exactly representable by CR gradients wherever the
point loads vanish, so away from singular vertices the residual is solver
noise and every quarter-turn jump across the cut is recovered exactly. The
cross at a point is the four directions theta + k*pi/2 with common norm e^H.
"""

from __future__ import annotations

import heapq
import logging
import math
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
from scipy.sparse.linalg import spsolve

from . import fem
from .errors import BranchCutError, PatternBalanceError, QuarterJumpError, SolveError
from .geom import HALF_PI, fold_quarter
from .mbo import RepresentationField
from .singularities import SingularityPattern, corner_quarters
from .trimesh import PointLocation, TriMesh

logger = logging.getLogger(__name__)

H_RESIDUAL_TOL = 1e-10
JUMP_TOL = 1e-6
DEFAULT_TANGENCY_TOL_DEG = 2.0


# ---------------------------------------------------------------------------
# branch cut


@dataclass
class BranchCut:
    """Acyclic set of interior mesh edges opening the domain into a disk."""

    edges: set[int]
    anchors: set[int]

    def __len__(self):
        return len(self.edges)


def build_branch_cut(mesh: TriMesh, pattern: SingularityPattern) -> BranchCut:
    """Shortest-path forest from the outer boundary to every anchor.

    Anchors are the interior singular vertices plus one vertex per inner
    boundary loop; paths run over interior edges only, so vertices nearest
    the boundary or the singularities are reached first.
    """
    n = mesh.n_vertices
    dist = np.full(n, np.inf)
    parent_vertex = np.full(n, -1, dtype=np.int64)
    parent_edge = np.full(n, -1, dtype=np.int64)

    outer = mesh.loops[0]
    heap = []
    for v in outer.vertices:
        dist[v] = 0.0
        heapq.heappush(heap, (0.0, int(v)))

    adjacency: list[list[tuple[int, int]]] = [[] for _ in range(n)]
    lengths = mesh.edge_lengths()
    for e, (a, b) in enumerate(mesh.edges):
        if mesh.is_boundary_edge[e]:
            continue
        adjacency[a].append((int(b), e))
        adjacency[b].append((int(a), e))

    while heap:
        d, u = heapq.heappop(heap)
        if d > dist[u]:
            continue
        for w, e in adjacency[u]:
            nd = d + lengths[e]
            if nd < dist[w] - 1e-15:
                dist[w] = nd
                parent_vertex[w] = u
                parent_edge[w] = e
                heapq.heappush(heap, (nd, w))

    terminals = [s.vertex for s in pattern.interior()]
    for loop in mesh.loops:
        if loop.outer:
            continue
        verts = loop.vertices
        best = min(verts, key=lambda v: (dist[v], v))
        terminals.append(int(best))

    cut_edges: set[int] = set()
    anchors = set(terminals)
    for t in terminals:
        u = t
        while dist[u] > 0.0:
            e = int(parent_edge[u])
            if e < 0:
                raise BranchCutError(f"anchor {t} unreachable from the outer boundary")
            if e in cut_edges:
                break  # joined an existing path
            cut_edges.add(e)
            u = int(parent_vertex[u])

    cut = BranchCut(cut_edges, anchors)
    check_branch_cut(mesh, pattern, cut)
    return cut


def cut_open_euler(mesh: TriMesh, cut: BranchCut) -> int:
    """Euler characteristic of the mesh cut open along the branch cut."""
    n_sectors = 0
    for v in range(mesh.n_vertices):
        tris = mesh.vertex_triangles(v)
        index = {int(t): i for i, t in enumerate(tris)}
        parent = list(range(len(tris)))

        def find(a):
            while parent[a] != a:
                parent[a] = parent[parent[a]]
                a = parent[a]
            return a

        for t in tris:
            for e in mesh.tri_edges[int(t)]:
                e = int(e)
                if mesh.is_boundary_edge[e] or e in cut.edges:
                    continue
                if v not in mesh.edges[e]:
                    continue
                t0, t1 = (int(x) for x in mesh.edge_tris[e])
                ra, rb = find(index[t0]), find(index[t1])
                if ra != rb:
                    parent[max(ra, rb)] = min(ra, rb)
        n_sectors += len({find(i) for i in range(len(tris))})
    e_prime = mesh.n_edges + len(cut.edges)
    return n_sectors - e_prime + mesh.n_triangles


def check_branch_cut(mesh: TriMesh, pattern: SingularityPattern, cut: BranchCut):
    # acyclic
    parent: dict[int, int] = {}

    def find(a):
        parent.setdefault(a, a)
        while parent[a] != a:
            parent[a] = parent[parent[a]]
            a = parent[a]
        return a

    for e in cut.edges:
        a, b = (int(x) for x in mesh.edges[e])
        ra, rb = find(a), find(b)
        if ra == rb:
            raise BranchCutError("branch cut contains a closed loop")
        parent[max(ra, rb)] = min(ra, rb)
    # every interior singularity anchored
    cut_vertices = {int(x) for e in cut.edges for x in mesh.edges[e]}
    for s in pattern.interior():
        if s.t and s.vertex not in cut_vertices and len(pattern.interior()) > 0:
            raise BranchCutError(f"singular vertex {s.vertex} not anchored by the cut")
    euler = cut_open_euler(mesh, cut)
    if euler != 1:
        raise BranchCutError(f"cut-open mesh has Euler characteristic {euler}, expected 1")


# ---------------------------------------------------------------------------
# H field


@dataclass
class ScalarFieldH:
    """Per-vertex log-norm values, area-weighted mean zero."""

    mesh: TriMesh
    values: np.ndarray
    residual: float

    def gradient(self) -> np.ndarray:
        return fem.field_gradients(self.mesh.vertices, self.mesh.triangles, self.values)


def assemble_h_load(mesh: TriMesh, pattern: SingularityPattern) -> np.ndarray:
    """Point loads: boundary turning minus quarter charges, interior Diracs."""
    b = np.zeros(mesh.n_vertices)
    singular = pattern.by_vertex()
    turning = mesh.turning_angles()
    corners = corner_quarters(mesh, pattern)
    for v, beta in turning.items():
        q = singular[v].t if v in singular else corners.get(v, 0)
        b[v] += beta - HALF_PI * q
    for s in pattern.interior():
        b[s.vertex] -= HALF_PI * s.t
    return b


def solve_H(mesh: TriMesh, pattern: SingularityPattern) -> ScalarFieldH:
    """Pure-Neumann Poisson solve for the log-norm field."""
    b = assemble_h_load(mesh, pattern)
    total = float(b.sum())
    scale = max(1.0, float(np.abs(b).max()))
    if abs(total) > 1e-9 * max(scale, 2 * math.pi):
        raise PatternBalanceError(
            f"pattern incompatible with the domain: net load {total:.3e} "
            "(Neumann problem inconsistent)",
        )
    S = fem.stiffness_matrix(mesh.vertices, mesh.triangles)
    h = fem.solve_pinned(S, b, pin=0)
    mass = fem.lumped_mass(mesh.vertices, mesh.triangles)
    h = h - float(np.dot(mass, h) / mass.sum())
    residual = float(np.linalg.norm(S @ h - b))
    rel = residual / max(float(np.linalg.norm(b)), 1e-30)
    if min(residual, rel) > H_RESIDUAL_TOL:
        raise SolveError(f"log-norm solve residual {rel:.3e} exceeds {H_RESIDUAL_TOL:.0e}")
    return ScalarFieldH(mesh, h, residual)


# ---------------------------------------------------------------------------
# theta field (Crouzeix-Raviart on the cut-open mesh)


@dataclass
class ScalarFieldTheta:
    """Edge-midpoint rotation field with quarter-turn jumps across the cut."""

    mesh: TriMesh
    cut: BranchCut
    values: np.ndarray
    tri_dofs: np.ndarray  # (nt, 3) dof id for the edge opposite local vertex i
    jumps: dict[int, int]  # cut edge id -> integer quarter-turn jump
    anchor_edge: int
    residual: float

    def tri_corner_values(self, t: int) -> np.ndarray:
        """theta of triangle t evaluated at its three corners."""
        vals = self.values[self.tri_dofs[t]]
        s = vals.sum()
        return s - 2.0 * vals

    def at(self, t: int, bary: np.ndarray) -> float:
        vals = self.values[self.tri_dofs[t]]
        return float(np.dot(vals, 1.0 - 2.0 * bary))

    def boundary_edge_value(self, e: int) -> float:
        t = int(self.mesh.edge_tris[e, 0])
        local = int(np.nonzero(self.mesh.tri_edges[t] == e)[0][0])
        return float(self.values[self.tri_dofs[t, local]])


def _theta_dof_map(mesh: TriMesh, cut: BranchCut):
    nt = len(mesh.triangles)
    tri_dofs = np.array(mesh.tri_edges, dtype=np.int64)
    next_dof = mesh.n_edges
    extra: dict[int, int] = {}
    for e in sorted(cut.edges):
        t1 = int(mesh.edge_tris[e, 1])
        if t1 < 0:
            raise BranchCutError("branch cut contains a boundary edge")
        local = int(np.nonzero(mesh.tri_edges[t1] == e)[0][0])
        tri_dofs[t1, local] = next_dof
        extra[e] = next_dof
        next_dof += 1
    return tri_dofs, extra, next_dof


def anchor_boundary_edge(mesh: TriMesh) -> tuple[int, float]:
    """Longest outer-boundary edge and its domain-left direction angle."""
    outer = mesh.loops[0]
    best_e, best_len, best_angle = -1, -1.0, 0.0
    verts = outer.vertices
    for a, b in zip(verts, np.roll(verts, -1)):
        e = mesh.edge_index[(min(int(a), int(b)), max(int(a), int(b)))]
        d = mesh.vertices[b] - mesh.vertices[a]
        ln = float(np.hypot(*d))
        if ln > best_len:
            best_e, best_len = e, ln
            best_angle = math.atan2(d[1], d[0])
    return best_e, best_angle


def solve_theta(
    mesh: TriMesh,
    h_field: ScalarFieldH,
    cut: BranchCut,
    anchor: tuple[int, float] | None = None,
) -> ScalarFieldTheta:
    """Least-squares CR solve of grad(theta) = rot(grad H) on the cut-open mesh."""
    tri_dofs, extra, ndof = _theta_dof_map(mesh, cut)
    grads, areas = fem.p1_gradients(mesh.vertices, mesh.triangles)
    gh = h_field.gradient()
    target = np.column_stack([-gh[:, 1], gh[:, 0]])

    cr_grads = -2.0 * grads  # gradient of the CR basis on edge opposite vertex i
    rows, cols, vals = [], [], []
    rhs = np.zeros(ndof)
    for i in range(3):
        gi = cr_grads[:, i]
        np.add.at(rhs, tri_dofs[:, i], areas * np.einsum("td,td->t", gi, target))
        for j in range(3):
            rows.append(tri_dofs[:, i])
            cols.append(tri_dofs[:, j])
            vals.append(areas * np.einsum("td,td->t", gi, cr_grads[:, j]))
    K = sp.coo_matrix(
        (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
        shape=(ndof, ndof),
    ).tocsr()

    if anchor is None:
        anchor = anchor_boundary_edge(mesh)
    anchor_edge, anchor_value = anchor
    t0 = int(mesh.edge_tris[anchor_edge, 0])
    local = int(np.nonzero(mesh.tri_edges[t0] == anchor_edge)[0][0])
    pin = int(tri_dofs[t0, local])

    theta = fem.solve_pinned(K, rhs, pin=pin, pin_value=anchor_value)

    # elementwise residual against the rotated gradient
    res_num = 0.0
    res_den = 0.0
    for t in range(len(mesh.triangles)):
        g = np.einsum("id,i->d", cr_grads[t], theta[tri_dofs[t]])
        res_num += areas[t] * float(np.sum((g - target[t]) ** 2))
        res_den += areas[t] * float(np.sum(target[t] ** 2))
    residual = res_num / max(res_den, 1e-30)

    jumps: dict[int, int] = {}
    for e, dof_hi in extra.items():
        delta = float(theta[e] - theta[dof_hi])
        j = round(delta / HALF_PI)
        if abs(delta - j * HALF_PI) > JUMP_TOL:
            raise QuarterJumpError(
                f"cut edge {e}: jump {delta:.6f} is {abs(delta - j * HALF_PI):.2e} "
                "from a quarter-turn multiple (refine spokes and re-run)"
            )
        jumps[e] = int(j)

    return ScalarFieldTheta(mesh, cut, theta, tri_dofs, jumps, anchor_edge, residual)


# ---------------------------------------------------------------------------
# cross field


@dataclass
class CrossField:
    mesh: TriMesh
    h_field: ScalarFieldH
    theta_field: ScalarFieldTheta
    cut: BranchCut
    pattern: SingularityPattern
    capture_radius: dict[int, float] = field(default_factory=dict)

    def theta_at(self, loc: PointLocation) -> float:
        return self.theta_field.at(loc.triangle, loc.bary)

    def norm_at(self, loc: PointLocation) -> float:
        h = float(np.dot(self.h_field.values[self.mesh.triangles[loc.triangle]], loc.bary))
        return math.exp(h)

    def cross_at(self, loc: PointLocation):
        """Four branch vectors of common norm e^H, consecutive ones orthogonal."""
        singular = {s.vertex for s in self.pattern.singularities}
        tri = self.mesh.triangles[loc.triangle]
        if loc.bary.max() > 1.0 - 1e-12 and int(tri[int(np.argmax(loc.bary))]) in singular:
            return None  # direction undefined exactly at a singular vertex
        theta = self.theta_at(loc)
        norm = self.norm_at(loc)
        return [
            norm * np.array([math.cos(theta + k * HALF_PI), math.sin(theta + k * HALF_PI)])
            for k in range(4)
        ]

    def branch_toward(self, loc: PointLocation, direction: np.ndarray) -> np.ndarray:
        """Unit branch closest to the given direction."""
        theta = self.theta_at(loc)
        ref = math.atan2(direction[1], direction[0])
        a = theta + HALF_PI * round((ref - theta) / HALF_PI)
        return np.array([math.cos(a), math.sin(a)])

    def representation(self) -> RepresentationField:
        """Per-vertex (cos 4*theta, sin 4*theta); single-valued across the cut."""
        n = self.mesh.n_vertices
        values = np.zeros((n, 2))
        seen = np.zeros(n, dtype=bool)
        for t in range(len(self.mesh.triangles)):
            corners = self.theta_field.tri_corner_values(t)
            for j, v in enumerate(self.mesh.triangles[t]):
                if not seen[v]:
                    seen[v] = True
                    values[v] = (math.cos(4 * corners[j]), math.sin(4 * corners[j]))
        return RepresentationField(self.mesh, values)

    def detect_singularities(self, tol: float = 1e-6) -> SingularityPattern:
        """Winding-number detection evaluated on the exact elementwise field.

        The rotation carried by the smooth part of theta around the
        edge-midpoint loop of an interior vertex is (pi/2) * t to solver
        precision (quarter-turn jumps across the cut are pure gauge and
        cancel); a boundary vertex's quarter charge is the rotation deficit
        of the open fan against its turning angle. Charges equal to the
        geometric corner rounding are regular, not pattern entries.
        """
        from .singularities import SingularityPattern, make_singularity

        mesh = self.mesh
        grads, _ = fem.p1_gradients(mesh.vertices, mesh.triangles)
        theta = self.theta_field
        tri_grad = np.einsum(
            "tid,ti->td", -2.0 * grads, theta.values[theta.tri_dofs]
        )
        # circulation contribution of triangle t at its local vertex i is
        # grad(theta)_t . (p_{i+2} - p_{i+1}) / 2 (mid-to-mid segment)
        circ = np.zeros(mesh.n_vertices)
        p = mesh.vertices[mesh.triangles]
        for i in range(3):
            seg = (p[:, (i + 2) % 3] - p[:, (i + 1) % 3]) / 2.0
            np.add.at(circ, mesh.triangles[:, i], np.einsum("td,td->t", tri_grad, seg))

        turning = mesh.turning_angles()
        sings = []
        for v in range(mesh.n_vertices):
            if mesh.is_boundary_vertex[v]:
                beta = turning[v]
                q = (circ[v] + beta) / HALF_PI
                q_int = round(q)
                if abs(q - q_int) > tol:
                    raise QuarterJumpError(
                        f"boundary vertex {v}: rotation deficit {q:.6f} quarter turns"
                    )
                from .geom import round_quarters

                if q_int != round_quarters(beta):
                    sings.append(make_singularity(mesh, v, q_int))
            else:
                t_val = circ[v] / HALF_PI
                t_int = round(t_val)
                if abs(t_val - t_int) > tol:
                    raise QuarterJumpError(
                        f"interior vertex {v}: winding {t_val:.6f} quarter turns"
                    )
                if t_int:
                    sings.append(make_singularity(mesh, v, t_int))
        return SingularityPattern(mesh.chi_from_loops(), sings)


@dataclass
class TangencyViolation:
    edge: int
    midpoint: tuple[float, float]
    deviation_rad: float


@dataclass
class TangencyReport:
    meshable: bool
    max_deviation_rad: float
    violations: list[TangencyViolation]


def check_tangency(cross: CrossField, tol_deg: float = DEFAULT_TANGENCY_TOL_DEG) -> TangencyReport:
    """Angular distance between the nearest branch and each boundary edge.

    Edges incident to an imposed boundary singularity are skipped: the
    rotation is genuinely discontinuous there and tangency is meaningless.
    """
    mesh = cross.mesh
    singular = {s.vertex for s in cross.pattern.on_boundary()}
    tol = math.radians(tol_deg)
    worst = 0.0
    violations = []
    for e in mesh.boundary_edge_ids:
        a, b = (int(x) for x in mesh.edges[e])
        if a in singular or b in singular:
            continue
        d = mesh.vertices[b] - mesh.vertices[a]
        edge_angle = math.atan2(d[1], d[0])
        theta = cross.theta_field.boundary_edge_value(int(e))
        dev = abs(fold_quarter(theta - edge_angle))
        worst = max(worst, dev)
        if dev > tol:
            mid = (mesh.vertices[a] + mesh.vertices[b]) / 2
            violations.append(TangencyViolation(int(e), (float(mid[0]), float(mid[1])), dev))
    violations.sort(key=lambda v: -v.deviation_rad)
    return TangencyReport(not violations, worst, violations)


def compute_cross_field(
    mesh: TriMesh,
    pattern: SingularityPattern,
    capture_radius: dict[int, float] | None = None,
) -> CrossField:
    """Branch cut, both scalar solves, and the assembled cross-field."""
    cut = build_branch_cut(mesh, pattern)
    h_field = solve_H(mesh, pattern)
    theta_field = solve_theta(mesh, h_field, cut)
    return CrossField(mesh, h_field, theta_field, cut, pattern, capture_radius or {})
