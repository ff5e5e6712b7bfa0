"""First cross-field computation: diffusion-projection iteration.

The cross direction angle theta is carried in its 4-fold symmetric vector
representation v = (cos 4*theta, sin 4*theta), which is single-valued under
quarter-turn symmetry. Each sweep alternates one implicit heat step
(M + alpha*S) v = M v_prev with re-projection onto unit vectors, over a
geometric ladder of diffusivities from domain scale down to mesh scale.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
from scipy.sparse.linalg import splu

from . import fem
from .errors import SolveError
from .trimesh import TriMesh

logger = logging.getLogger(__name__)

DEFAULT_LEVELS = 6
LEVEL_TOL = 1e-3
FINAL_LEVEL_TOL = 1e-5
MAX_INNER_ITERATIONS = 500


@dataclass
class DiffusionSchedule:
    """Strictly decreasing diffusivity ladder with per-level stop tolerances."""

    alphas: np.ndarray
    tolerances: np.ndarray
    max_iterations: int = MAX_INNER_ITERATIONS

    def __post_init__(self):
        a = np.asarray(self.alphas, dtype=float)
        if len(a) == 0 or a[-1] <= 0 or np.any(np.diff(a) >= 0) and len(a) > 1:
            raise ValueError("diffusivities must be strictly decreasing and positive")
        self.alphas = a
        self.tolerances = np.asarray(self.tolerances, dtype=float)


@dataclass
class RepresentationField:
    """Per-vertex representation vectors (cos 4*theta, sin 4*theta)."""

    mesh: TriMesh
    vectors: np.ndarray
    converged: bool = True
    iterations: list = field(default_factory=list)

    def angles(self) -> np.ndarray:
        """Representation angle 4*theta per vertex, in (-pi, pi]."""
        return np.arctan2(self.vectors[:, 1], self.vectors[:, 0])

    def energy(self) -> float:
        return fem.dirichlet_energy(self.mesh.vertices, self.mesh.triangles, self.vectors)


def boundary_alignment(mesh: TriMesh) -> dict[int, np.ndarray]:
    """Boundary condition: representation of the tangent direction.

    At corners the two incident edge tangents are averaged in representation
    space and renormalized, which is exactly where the 4-fold symmetry makes
    averaging meaningful.
    """
    out: dict[int, np.ndarray] = {}
    for loop in mesh.loops:
        verts = loop.vertices
        pts = mesh.vertices[verts]
        nxt = np.roll(pts, -1, axis=0)
        d = nxt - pts
        lengths = np.hypot(d[:, 0], d[:, 1])
        if np.any(lengths <= 0):
            raise ValueError("zero-length boundary edge")
        ang = np.arctan2(d[:, 1], d[:, 0])
        rep_edge = np.column_stack([np.cos(4 * ang), np.sin(4 * ang)])
        rep_prev = np.roll(rep_edge, 1, axis=0)
        avg = rep_edge + rep_prev
        nrm = np.hypot(avg[:, 0], avg[:, 1])
        # antipodal tangents (slit-like corner): fall back to outgoing edge
        weak = nrm < 1e-9
        avg[weak] = rep_edge[weak]
        nrm[weak] = 1.0
        avg /= nrm[:, None]
        for v, r in zip(verts, avg):
            out[int(v)] = r
    return out


def make_schedule(mesh: TriMesh, n_levels: int = DEFAULT_LEVELS) -> DiffusionSchedule:
    """Geometric diffusivity ladder from (0.1*bbox_diag)^2 down to min_edge^2."""
    if not 5 <= n_levels <= 10:
        clamped = min(max(n_levels, 5), 10)
        logger.warning("n_levels=%d outside [5, 10]; clamped to %d", n_levels, clamped)
        n_levels = clamped
    a_hi = (0.1 * mesh.bbox_diag) ** 2
    a_lo = mesh.min_edge**2
    if a_lo >= a_hi:
        alphas = np.array([a_lo])
    else:
        alphas = np.geomspace(a_hi, a_lo, n_levels)
    tols = np.full(len(alphas), LEVEL_TOL)
    tols[-1] = FINAL_LEVEL_TOL
    return DiffusionSchedule(alphas, tols)


def _project(v: np.ndarray) -> np.ndarray:
    nrm = np.hypot(v[:, 0], v[:, 1])
    nrm = np.where(nrm < 1e-30, 1.0, nrm)
    return v / nrm[:, None]


def mbo_solve(mesh: TriMesh, schedule: DiffusionSchedule | None = None) -> RepresentationField:
    """Boundary-aligned unit cross-field via diffusion + unit projection."""
    if schedule is None:
        schedule = make_schedule(mesh)
    n = mesh.n_vertices
    S = fem.stiffness_matrix(mesh.vertices, mesh.triangles)
    M = fem.lumped_mass(mesh.vertices, mesh.triangles)

    bc = boundary_alignment(mesh)
    fixed = np.zeros(n, dtype=bool)
    v = np.zeros((n, 2))
    v[:, 0] = 1.0
    for vid, rep in bc.items():
        fixed[vid] = True
        v[vid] = rep
    free = ~fixed
    idx = np.nonzero(free)[0]

    iterations = []
    converged_all = True
    for level, (alpha, tol) in enumerate(zip(schedule.alphas, schedule.tolerances)):
        A = sp.diags(M) + alpha * S
        A_ff = A[idx][:, idx].tocsc()
        A_fb = A[idx][:, np.nonzero(fixed)[0]].tocsr()
        try:
            lu = splu(A_ff)
        except RuntimeError as exc:  # pragma: no cover - valid meshes are SPD
            raise SolveError(f"diffusion factorization failed at level {level}: {exc}") from exc
        vb = v[fixed]
        coupling = A_fb @ vb
        it = 0
        for it in range(1, schedule.max_iterations + 1):
            rhs = M[idx, None] * v[idx] - coupling
            new_free = np.column_stack([lu.solve(rhs[:, 0]), lu.solve(rhs[:, 1])])
            w = v.copy()
            w[idx] = new_free
            w = _project(w)
            w[fixed] = vb
            change = np.max(np.hypot(*(w - v).T)) if len(idx) else 0.0
            v = w
            if change < tol:
                break
        else:
            converged_all = False
            logger.warning("MBO level %d (alpha=%g) hit iteration cap", level, alpha)
        iterations.append(it)

    return RepresentationField(mesh, v, converged=converged_all, iterations=iterations)
