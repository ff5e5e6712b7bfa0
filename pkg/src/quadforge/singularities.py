"""Singularity patterns: winding-number detection, balance checks, edits.

Indices are stored as the integer numerator t with index k = t/4; interior
valence is 4 - t and boundary valence 2 - t. Geometric boundary corners are
not pattern entries: each boundary vertex without an imposed singularity
carries round(turning / (pi/2)) quarter turns. The exact integer balance

    sum(t) + sum(corner quarter turns) = 4 * chi(domain)

is the admissibility test for every pattern, and doubles as the discrete
compatibility condition of the log-norm field solve.
"""

from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass, replace

import numpy as np

from .errors import PatternEditError, WindingError
from .geom import TWO_PI
from .mbo import RepresentationField
from .trimesh import TriMesh

logger = logging.getLogger(__name__)

WINDING_TOL = 1e-3


@dataclass(frozen=True)
class Singularity:
    vertex: int
    x: float
    y: float
    t: int
    boundary: bool

    @property
    def index_quarters(self) -> int:
        return self.t

    @property
    def valence(self) -> int:
        return (2 if self.boundary else 4) - self.t

    def to_json(self) -> dict:
        return {
            "vertex": int(self.vertex),
            "x": float(self.x),
            "y": float(self.y),
            "t": int(self.t),
            "valence": int(self.valence),
            "boundary": bool(self.boundary),
        }


@dataclass
class SingularityPattern:
    chi: int
    singularities: list[Singularity]

    def interior(self) -> list[Singularity]:
        return [s for s in self.singularities if not s.boundary]

    def on_boundary(self) -> list[Singularity]:
        return [s for s in self.singularities if s.boundary]

    def by_vertex(self) -> dict[int, Singularity]:
        return {s.vertex: s for s in self.singularities}

    def total_t(self) -> int:
        return sum(s.t for s in self.singularities)

    def to_json(self) -> dict:
        return {
            "chi": int(self.chi),
            "singularities": [s.to_json() for s in sorted(self.singularities, key=lambda s: s.vertex)],
        }

    def save(self, path):
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(self.to_json(), fh, indent=1)
            fh.write("\n")

    @classmethod
    def from_json(cls, data: dict) -> "SingularityPattern":
        sings = []
        for item in data.get("singularities", []):
            s = Singularity(
                vertex=int(item["vertex"]),
                x=float(item["x"]),
                y=float(item["y"]),
                t=int(item["t"]),
                boundary=bool(item["boundary"]),
            )
            if "valence" in item and int(item["valence"]) != s.valence:
                raise PatternEditError(
                    f"vertex {s.vertex}: valence {item['valence']} inconsistent with t={s.t}"
                )
            sings.append(s)
        return cls(chi=int(data["chi"]), singularities=sings)

    @classmethod
    def load(cls, path) -> "SingularityPattern":
        with open(path, encoding="utf-8") as fh:
            return cls.from_json(json.load(fh))


@dataclass
class ValidationReport:
    ok: bool
    deficit_quarters: int
    chi: int
    total_t: int
    corner_quarters: int
    messages: list[str]

    def deficit_fraction(self) -> str:
        d = self.deficit_quarters
        if d == 0:
            return "0"
        sign = "-" if d < 0 else ""
        d = abs(d)
        return f"{sign}{d}/4" if d % 4 else f"{sign}{d // 4}"

    def to_json(self) -> dict:
        return {
            "ok": self.ok,
            "deficit_quarters": self.deficit_quarters,
            "deficit": self.deficit_fraction(),
            "chi": self.chi,
            "total_t": self.total_t,
            "corner_quarters": self.corner_quarters,
            "messages": self.messages,
        }


def make_singularity(mesh: TriMesh, vertex: int, t: int) -> Singularity:
    x, y = mesh.vertices[vertex]
    return Singularity(int(vertex), float(x), float(y), int(t), bool(mesh.is_boundary_vertex[vertex]))


def triangle_windings(mesh: TriMesh, psi: np.ndarray) -> np.ndarray:
    """Integer winding of the representation angle around each triangle."""
    t = mesh.triangles
    d = np.stack(
        [
            psi[t[:, 1]] - psi[t[:, 0]],
            psi[t[:, 2]] - psi[t[:, 1]],
            psi[t[:, 0]] - psi[t[:, 2]],
        ]
    )
    d = (d + math.pi) % TWO_PI - math.pi
    w = d.sum(axis=0) / TWO_PI
    rounded = np.round(w)
    off = np.abs(w - rounded)
    if off.max() > WINDING_TOL:
        bad = int(np.argmax(off))
        raise WindingError(
            f"triangle {bad}: winding {w[bad]:.6f} is not a quarter-integer "
            "(under-resolved field; refine and re-run)"
        )
    return rounded.astype(np.int64)


def _circumcenter(pts: np.ndarray) -> np.ndarray:
    a, b, c = pts
    d = 2 * (a[0] * (b[1] - c[1]) + b[0] * (c[1] - a[1]) + c[0] * (a[1] - b[1]))
    if abs(d) < 1e-300:
        return pts.mean(axis=0)
    ux = ((a @ a) * (b[1] - c[1]) + (b @ b) * (c[1] - a[1]) + (c @ c) * (a[1] - b[1])) / d
    uy = ((a @ a) * (c[0] - b[0]) + (b @ b) * (a[0] - c[0]) + (c @ c) * (b[0] - a[0])) / d
    return np.array([ux, uy])


def vertex_ring_winding(mesh: TriMesh, psi: np.ndarray, v: int) -> int:
    """Integer winding of the representation angle around v's one-ring.

    Zero for boundary vertices (open ring) and regular interior vertices.
    """
    _, ring, is_open = mesh.vertex_fan(v)
    if is_open:
        return 0
    vals = psi[ring]
    d = np.diff(np.concatenate([vals, vals[:1]]))
    d = (d + math.pi) % TWO_PI - math.pi
    return int(round(d.sum() / TWO_PI))


def _cluster_vertex(mesh: TriMesh, tris: list[int], weights: np.ndarray, psi: np.ndarray) -> int:
    """Representative vertex of a cluster of winding-carrying triangles.

    Preference order: the unique cluster vertex whose own one-ring winding is
    nonzero (exact for singularities pinned at vertices); otherwise nearest
    to the circumcenter for single-triangle windings, or nearest to the
    |winding|-weighted carrier centroid for spread-out clusters.
    """
    verts = sorted({int(v) for t in tris for v in mesh.triangles[t]})
    # boundary vertices are Dirichlet-aligned in the first field; a cluster
    # snapping there is an artifact, so interior candidates win
    interior = [v for v in verts if not mesh.is_boundary_vertex[v]]
    pool = interior or verts
    ringed = [v for v in pool if vertex_ring_winding(mesh, psi, v) != 0]
    if len(ringed) == 1:
        return ringed[0]
    if len(tris) == 1:
        t = tris[0]
        pts = mesh.tri_points(t)
        cc = _circumcenter(pts)
        order = np.argsort(np.hypot(pts[:, 0] - cc[0], pts[:, 1] - cc[1]))
        for k in order:
            if int(mesh.triangles[t][k]) in pool:
                return int(mesh.triangles[t][k])
        return int(mesh.triangles[t][order[0]])
    cent = np.array([mesh.tri_points(t).mean(axis=0) for t in tris])
    w = np.abs(weights).astype(float)
    w = w / w.sum() if w.sum() else np.full(len(tris), 1.0 / len(tris))
    target = (cent * w[:, None]).sum(axis=0)
    pts = mesh.vertices[pool]
    dist = np.hypot(pts[:, 0] - target[0], pts[:, 1] - target[1])
    return int(pool[int(np.argmin(dist))])


CLUSTER_RADIUS_FACTOR = 1.5


def detect(mesh: TriMesh, field: RepresentationField) -> SingularityPattern:
    """Extract the singularity pattern of a representation field.

    Per-triangle windings within 1.5 local edge lengths of each other are
    clustered (single link) and their integer windings summed, so that a
    high-valence singularity whose winding spreads over several nearby
    triangles is reported as a single entry.
    """
    psi = field.angles()
    w = triangle_windings(mesh, psi)
    carriers = [int(t) for t in np.nonzero(w)[0]]
    parent = list(range(len(carriers)))

    def find(a):
        while parent[a] != a:
            parent[a] = parent[parent[a]]
            a = parent[a]
        return a

    cent = np.array([mesh.tri_points(t).mean(axis=0) for t in carriers]).reshape(-1, 2)
    for i in range(len(carriers)):
        for j in range(i + 1, len(carriers)):
            limit = CLUSTER_RADIUS_FACTOR * max(
                mesh.tri_mean_edge[carriers[i]], mesh.tri_mean_edge[carriers[j]]
            )
            if math.hypot(*(cent[i] - cent[j])) <= limit:
                ra, rb = find(i), find(j)
                if ra != rb:
                    parent[max(ra, rb)] = min(ra, rb)
    clusters: dict[int, list[int]] = {}
    for i, t in enumerate(carriers):
        clusters.setdefault(find(i), []).append(t)

    sings = []
    for root in sorted(clusters):
        tris = clusters[root]
        total = int(w[tris].sum())
        if total == 0:
            continue
        v = _cluster_vertex(mesh, tris, w[tris], psi)
        sings.append(make_singularity(mesh, v, total))
    sings.sort(key=lambda s: s.vertex)
    return SingularityPattern(chi=mesh.chi_from_loops(), singularities=sings)


def corner_quarters(mesh: TriMesh, pattern: SingularityPattern | None = None) -> dict[int, int]:
    """Quarter turns absorbed at boundary vertices without imposed singularities."""
    imposed = {s.vertex for s in pattern.singularities} if pattern else set()
    return {v: q for v, q in mesh.quarter_corners().items() if v not in imposed}


def validate(pattern: SingularityPattern, mesh: TriMesh) -> ValidationReport:
    """Exact quarter-integer balance plus structural checks."""
    messages = []
    chi = mesh.chi_from_loops()
    if pattern.chi != chi:
        messages.append(f"pattern chi {pattern.chi} != domain chi {chi}")
    seen = set()
    for s in pattern.singularities:
        if not 0 <= s.vertex < mesh.n_vertices:
            messages.append(f"vertex {s.vertex} not in mesh")
            continue
        if s.vertex in seen:
            messages.append(f"vertex {s.vertex} listed twice")
        seen.add(s.vertex)
        if bool(mesh.is_boundary_vertex[s.vertex]) != s.boundary:
            messages.append(f"vertex {s.vertex}: boundary flag mismatch")
        p = mesh.vertices[s.vertex]
        if math.hypot(p[0] - s.x, p[1] - s.y) > 1e-6 * max(mesh.bbox_diag, 1.0):
            messages.append(f"vertex {s.vertex}: stored position does not match mesh")
        if s.t == 0 and not s.boundary:
            messages.append(f"vertex {s.vertex}: interior singularity with t=0")
    corners = corner_quarters(mesh, pattern)
    corner_total = sum(corners.values())
    total_t = pattern.total_t()
    deficit = 4 * chi - total_t - corner_total
    if deficit:
        messages.append(
            f"index balance off by {deficit} quarter turns "
            f"(sum t = {total_t}, corners = {corner_total}, 4*chi = {4 * chi})"
        )
    return ValidationReport(
        ok=not messages,
        deficit_quarters=deficit,
        chi=chi,
        total_t=total_t,
        corner_quarters=corner_total,
        messages=messages,
    )


def compatibility_mass(pattern: SingularityPattern, mesh: TriMesh) -> float:
    """Assembled topological mass: Dirac sources plus quarter-rounded Neumann data.

    Equals 2*pi*chi exactly when the pattern is admissible.
    """
    half_pi = 0.5 * math.pi
    mass = half_pi * sum(s.t for s in pattern.interior())
    mass += half_pi * sum(s.t for s in pattern.on_boundary())
    mass += half_pi * sum(corner_quarters(mesh, pattern).values())
    return mass


@dataclass(frozen=True)
class PatternEdit:
    """One edit operation: add, remove, move, or set_valence."""

    kind: str
    vertex: int
    t: int | None = None
    valence: int | None = None
    target: int | None = None

    @classmethod
    def from_json(cls, data: dict) -> "PatternEdit":
        return cls(
            kind=str(data["kind"]),
            vertex=int(data["vertex"]),
            t=None if data.get("t") is None else int(data["t"]),
            valence=None if data.get("valence") is None else int(data["valence"]),
            target=None if data.get("target") is None else int(data["target"]),
        )


def _edit_t(mesh: TriMesh, edit: PatternEdit, vertex: int) -> int:
    if edit.t is not None:
        return edit.t
    if edit.valence is None:
        raise PatternEditError("edit needs either t or valence")
    if not 1 <= edit.valence <= 8:
        raise PatternEditError(f"valence {edit.valence} outside [1, 8]")
    base = 2 if mesh.is_boundary_vertex[vertex] else 4
    return base - edit.valence


def apply_edit(
    pattern: SingularityPattern,
    edit: PatternEdit,
    mesh: TriMesh,
    staged: bool = False,
) -> SingularityPattern:
    """Apply one edit; unless staged, an edit that breaks the balance is rejected."""
    if not 0 <= edit.vertex < mesh.n_vertices:
        raise PatternEditError(f"vertex {edit.vertex} not in mesh")
    entries = {s.vertex: s for s in pattern.singularities}
    if edit.kind == "add":
        if edit.vertex in entries:
            raise PatternEditError(f"vertex {edit.vertex} already singular")
        entries[edit.vertex] = make_singularity(mesh, edit.vertex, _edit_t(mesh, edit, edit.vertex))
    elif edit.kind == "remove":
        if edit.vertex not in entries:
            raise PatternEditError(f"vertex {edit.vertex} is not singular")
        del entries[edit.vertex]
    elif edit.kind == "move":
        if edit.vertex not in entries:
            raise PatternEditError(f"vertex {edit.vertex} is not singular")
        if edit.target is None or not 0 <= edit.target < mesh.n_vertices:
            raise PatternEditError("move needs a valid target vertex")
        if edit.target in entries:
            raise PatternEditError(f"target vertex {edit.target} already singular")
        old = entries.pop(edit.vertex)
        entries[edit.target] = make_singularity(mesh, edit.target, old.t)
    elif edit.kind == "set_valence":
        if edit.vertex not in entries:
            raise PatternEditError(f"vertex {edit.vertex} is not singular")
        entries[edit.vertex] = replace(
            entries[edit.vertex], t=_edit_t(mesh, edit, edit.vertex)
        )
    else:
        raise PatternEditError(f"unknown edit kind {edit.kind!r}")
    new = SingularityPattern(pattern.chi, sorted(entries.values(), key=lambda s: s.vertex))
    if not staged:
        report = validate(new, mesh)
        if not report.ok:
            from .errors import PatternBalanceError

            raise PatternBalanceError(
                f"edit rejected: {'; '.join(report.messages)}",
                deficit_quarters=report.deficit_quarters,
            )
    return new


def inverse_edit(pattern: SingularityPattern, edit: PatternEdit) -> PatternEdit:
    """Edit that undoes ``edit`` when applied to the edited pattern."""
    entries = pattern.by_vertex()
    if edit.kind == "add":
        return PatternEdit("remove", edit.vertex)
    if edit.kind == "remove":
        old = entries[edit.vertex]
        return PatternEdit("add", edit.vertex, t=old.t)
    if edit.kind == "move":
        return PatternEdit("move", edit.target, target=edit.vertex)
    if edit.kind == "set_valence":
        old = entries[edit.vertex]
        return PatternEdit("set_valence", edit.vertex, t=old.t)
    raise PatternEditError(f"unknown edit kind {edit.kind!r}")
