"""Separatrix tracing on the reconstructed cross-field.

Each interior singularity of valence n launches n separatrices along the
radial-alignment zeros sampled on its innermost spoke ring (a boundary
singularity of valence m launches m - 1 into the interior). Integration is
Heun's two-stage scheme with branch matching against the previous direction;
a trace stops when it crosses the domain boundary (exact segment
intersection) or enters another singularity's capture disk.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np

from .conformal import CrossField
from .errors import LayoutError, TraceError
from .geom import HALF_PI, QUARTER_PI, TWO_PI, fold_quarter, principal_angle, segment_intersection
from .geom import discrete_curvature, hausdorff_distance, polyline_cumlen
from .trimesh import TriMesh

logger = logging.getLogger(__name__)

STEP_FACTOR = 0.4
MAX_STEP_FACTOR = 50.0
BRANCH_AMBIGUITY_RAD = QUARTER_PI + 0.2
CORNER_SNAP_FACTOR = 0.35
LAUNCH_SAMPLES_PER_BRANCH = 16
RENDEZVOUS_TOL_RAD = math.radians(8.0)
RENDEZVOUS_EDGE_FACTOR = 1.25


@dataclass
class Separatrix:
    points: np.ndarray
    origin: tuple  # ("sing", vertex, branch index)
    termination: tuple | None  # ("boundary", (x, y)) | ("sing", vertex) | ("cut", ...)
    flagged_cycle: bool = False

    def length(self) -> float:
        d = np.diff(self.points, axis=0)
        return float(np.hypot(d[:, 0], d[:, 1]).sum())


class BoundaryIndex:
    """Bucketed boundary segments for exact crossing queries."""

    def __init__(self, mesh: TriMesh):
        self.segments = []
        for loop in mesh.loops:
            pts = mesh.vertices[loop.vertices]
            for i in range(len(pts)):
                self.segments.append((pts[i], pts[(i + 1) % len(pts)]))
        self.cell = max(mesh.mean_edge, 1e-12)
        self.buckets: dict[tuple[int, int], list[int]] = {}
        for k, (a, b) in enumerate(self.segments):
            lo = np.minimum(a, b)
            hi = np.maximum(a, b)
            for i in range(int(lo[0] / self.cell) - 1, int(hi[0] / self.cell) + 2):
                for j in range(int(lo[1] / self.cell) - 1, int(hi[1] / self.cell) + 2):
                    self.buckets.setdefault((i, j), []).append(k)

    def first_crossing(self, p0, p1):
        """Earliest boundary crossing of segment p0 -> p1, or None."""
        lo = np.minimum(p0, p1)
        hi = np.maximum(p0, p1)
        cand = set()
        for i in range(int(lo[0] / self.cell) - 1, int(hi[0] / self.cell) + 2):
            for j in range(int(lo[1] / self.cell) - 1, int(hi[1] / self.cell) + 2):
                cand.update(self.buckets.get((i, j), ()))
        best = None
        for k in sorted(cand):
            a, b = self.segments[k]
            hit = segment_intersection(p0, p1, a, b)
            if hit is None:
                continue
            t, s, pt = hit
            if t < 1e-9:
                continue  # touching at the start point
            if best is None or t < best[0]:
                best = (t, k, np.asarray(pt))
        return best


@dataclass
class TraceResult:
    separatrices: list
    launch_angles: dict[int, list[float]]

    def __iter__(self):
        return iter(self.separatrices)

    def __len__(self):
        return len(self.separatrices)


@dataclass
class TraceConfig:
    step_factor: float = STEP_FACTOR
    max_steps: int | None = None
    dup_tol_factor: float = 0.5
    capture_floor: float | None = None  # defaults to 1.25 x base mesh scale


def launch_directions(cross: CrossField, vertex: int, radius: float, valence: int, span=None):
    """Radial-alignment zeros of the field on a ring around a singular vertex.

    Returns launch angles; exactly `valence` zeros for interior vertices
    (valence - 1 inside the angular span for boundary vertices).
    """
    mesh = cross.mesh
    center = mesh.vertices[vertex]

    def deviation(phi):
        p = center + radius * np.array([math.cos(phi), math.sin(phi)])
        loc = mesh.locate(p)
        return fold_quarter(cross.theta_at(loc) - phi)

    if span is None:
        lo, hi, expected = 0.0, TWO_PI, valence
        closed = True
    else:
        pad = 0.02 * (span[1] - span[0])
        lo, hi, expected = span[0] + pad, span[1] - pad, valence - 1
        closed = False

    n = LAUNCH_SAMPLES_PER_BRANCH * max(valence, 4)
    phis = np.linspace(lo, hi, n, endpoint=not closed)
    vals = np.array([deviation(p) for p in phis])
    zeros = []
    m = len(phis) if closed else len(phis) - 1
    for i in range(m):
        a, b = vals[i], vals[(i + 1) % len(phis)]
        pa, pb = phis[i], phis[i] + (phis[1] - phis[0])
        if a == 0.0:
            zeros.append(pa)
            continue
        if a * b < 0 and abs(b - a) < QUARTER_PI:  # true crossing, not a fold wrap
            for _ in range(40):
                pm = 0.5 * (pa + pb)
                vm = deviation(pm)
                if a * vm <= 0:
                    pb = pm
                else:
                    pa, a = pm, vm
            zeros.append(0.5 * (pa + pb))
    if len(zeros) != expected:
        raise TraceError(
            f"vertex {vertex}: found {len(zeros)} launch directions, expected {expected} "
            "(under-resolved field; increase spoke sectors)"
        )
    return zeros


@dataclass
class CaptureDisk:
    position: np.ndarray
    inner: float  # unconditional capture: innermost spoke ring
    disk: float  # rendez-vous capture: full spoke disk
    branch_angles: list[float]

    def captures(self, p, direction) -> bool:
        dx = self.position[0] - p[0]
        dy = self.position[1] - p[1]
        dist = math.hypot(dx, dy)
        if dist < self.inner:
            return True
        if dist >= self.disk:
            return False
        # rendez-vous: heading toward the vertex along one of its branches
        if direction[0] * dx + direction[1] * dy <= 0:
            return False
        heading = math.atan2(direction[1], direction[0])
        for phi in self.branch_angles:
            arrival = phi + math.pi  # a branch at angle phi is approached along phi+pi
            delta = abs(principal_angle(heading - arrival))
            if delta < RENDEZVOUS_TOL_RAD:
                return True
        return False


def trace_one(
    cross: CrossField,
    boundary: BoundaryIndex,
    start: np.ndarray,
    direction: np.ndarray,
    origin: tuple,
    captures: dict[int, CaptureDisk],
    config: TraceConfig,
) -> Separatrix:
    mesh = cross.mesh
    max_steps = config.max_steps or int(MAX_STEP_FACTOR * mesh.bbox_diag / mesh.min_edge)
    pts = [np.asarray(start, dtype=float)]
    d_prev = np.asarray(direction, dtype=float)
    origin_vertex = origin[1] if origin[0] == "sing" else None
    left_origin = False

    for _ in range(max_steps):
        p = pts[-1]
        loc = mesh.locate(p)
        h = config.step_factor * float(mesh.tri_mean_edge[loc.triangle])
        d1 = cross.branch_toward(loc, d_prev)
        if float(np.dot(d1, d_prev)) < math.cos(BRANCH_AMBIGUITY_RAD):
            raise TraceError(f"branch ambiguity at {tuple(p)} (origin {origin})")
        probe = p + h * d1
        hit = boundary.first_crossing(p, probe)
        if hit is not None:
            pts.append(hit[2])
            return Separatrix(np.array(pts), origin, ("boundary", tuple(hit[2])))
        d2 = cross.branch_toward(mesh.locate(probe), d1)
        d = d1 + d2
        d /= float(np.hypot(*d))
        step_to = p + h * d
        hit = boundary.first_crossing(p, step_to)
        if hit is not None:
            pts.append(hit[2])
            return Separatrix(np.array(pts), origin, ("boundary", tuple(hit[2])))
        pts.append(step_to)
        d_prev = d

        for v, disk in captures.items():
            if v == origin_vertex and not left_origin:
                continue
            if disk.captures(step_to, d):
                pts.append(disk.position.copy())
                return Separatrix(np.array(pts), origin, ("sing", v))
        if origin_vertex is not None and not left_origin:
            own = captures[origin_vertex]
            if math.hypot(step_to[0] - own.position[0], step_to[1] - own.position[1]) > 1.1 * own.disk:
                left_origin = True

    logger.warning("trace from %s exceeded %d steps: possible limit cycle", origin, max_steps)
    return Separatrix(np.array(pts), origin, None, flagged_cycle=True)


def trace_separatrices(
    cross: CrossField,
    inner_radius: dict[int, float],
    disk_radius: dict[int, float],
    config: TraceConfig | None = None,
) -> TraceResult:
    """Launch and integrate every separatrix of the pattern.

    Capture is unconditional inside the innermost spoke ring; within the
    full spoke disk a passing trace is captured only when it heads at the
    vertex along one of that singularity's own branch directions (the
    rendez-vous condition, so near-tangent passes are not swallowed).
    """
    config = config or TraceConfig()
    mesh = cross.mesh
    boundary = BoundaryIndex(mesh)

    launches: dict[int, list[float]] = {}
    for s in sorted(cross.pattern.singularities, key=lambda s: s.vertex):
        r = inner_radius.get(s.vertex, 0.5 * mesh.vertex_mean_edge(s.vertex))
        if s.boundary:
            if s.valence <= 1:
                launches[s.vertex] = []
                continue
            span = _boundary_span(mesh, s.vertex)
            launches[s.vertex] = launch_directions(cross, s.vertex, r, s.valence, span=span)
        else:
            launches[s.vertex] = launch_directions(cross, s.vertex, r, s.valence)

    # spoke disks collapse when a singularity sits one edge from the
    # boundary, so the rendez-vous radius is floored by the base mesh scale
    # (75th-percentile edge length is insensitive to the small spoke edges)
    floor = config.capture_floor
    if floor is None:
        floor = RENDEZVOUS_EDGE_FACTOR * float(np.percentile(mesh.edge_lengths(), 75))
    captures = {
        s.vertex: CaptureDisk(
            mesh.vertices[s.vertex].copy(),
            inner_radius.get(s.vertex, mesh.vertex_mean_edge(s.vertex) / 3.0),
            max(disk_radius.get(s.vertex, 0.0), floor),
            launches[s.vertex],
        )
        for s in cross.pattern.singularities
    }

    seps = []
    for s in sorted(cross.pattern.singularities, key=lambda s: s.vertex):
        r = inner_radius.get(s.vertex, 0.5 * mesh.vertex_mean_edge(s.vertex))
        center = mesh.vertices[s.vertex]
        for branch, phi in enumerate(launches[s.vertex]):
            d = np.array([math.cos(phi), math.sin(phi)])
            start = center + r * d
            sep = trace_one(cross, boundary, start, d, ("sing", s.vertex, branch), captures, config)
            sep.points = np.vstack([center, sep.points])
            seps.append(sep)
    return TraceResult(seps, launches)


def _boundary_span(mesh: TriMesh, vertex: int):
    """Interior angular span at a boundary vertex (CCW from outgoing edge)."""
    _, ring, is_open = mesh.vertex_fan(vertex)
    if not is_open:
        raise TraceError(f"vertex {vertex} is not a boundary vertex")
    center = mesh.vertices[vertex]
    d_first = mesh.vertices[ring[0]] - center
    d_last = mesh.vertices[ring[-1]] - center
    a0 = math.atan2(d_first[1], d_first[0])
    a1 = math.atan2(d_last[1], d_last[0])
    span = (a1 - a0) % TWO_PI
    if span <= 0:
        span = TWO_PI
    return (a0, a0 + span)


RECIPROCAL_TOL_RAD = math.radians(25.0)


def dedup(
    separatrices: list[Separatrix],
    cross: CrossField,
    disk_radius: dict[int, float],
    launch_angles: dict[int, list[float]] | None = None,
    dup_tol_factor: float = 0.5,
) -> list[Separatrix]:
    """Merge the two copies of a separatrix traced from both of its endpoints.

    Swapped-endpoint copies with nearly identical geometry merge first (the
    copy with smaller discrete curvature survives). A reciprocity pass then
    handles asymmetric drift: when a kept trace arrives at a singularity
    along one of its branch directions, that branch's own trace is the same
    separatrix even if it drifted to a different termination, and is
    dropped. Every interior singularity must retain exactly `valence` ends.
    """
    drop: set[int] = set()
    for i in range(len(separatrices)):
        if i in drop:
            continue
        a = separatrices[i]
        if a.termination is None or a.termination[0] != "sing":
            continue
        for j in range(i + 1, len(separatrices)):
            if j in drop:
                continue
            b = separatrices[j]
            if b.termination is None or b.termination[0] != "sing":
                continue
            if a.origin[1] != b.termination[1] or b.origin[1] != a.termination[1]:
                continue
            # distinct separatrices cannot run closer than a mesh edge, so
            # swapped-endpoint copies within that scale are the same curve
            tol = max(
                dup_tol_factor
                * min(
                    disk_radius.get(a.origin[1], np.inf),
                    disk_radius.get(b.origin[1], np.inf),
                ),
                0.85 * float(np.percentile(cross.mesh.edge_lengths(), 75)),
            )
            if hausdorff_distance(a.points, b.points[::-1]) < tol:
                keep_a = discrete_curvature(a.points) <= discrete_curvature(b.points)
                drop.add(j if keep_a else i)
                break

    if launch_angles:
        by_origin = {
            (s.origin[1], s.origin[2]): k for k, s in enumerate(separatrices)
        }
        for i, a in enumerate(separatrices):
            if i in drop or a.termination is None or a.termination[0] != "sing":
                continue
            target = a.termination[1]
            # approach heading over the last real steps; the final segment is
            # the capture jump onto the vertex and misrepresents the heading
            back = min(5, len(a.points) - 1)
            arrival = a.points[-2] - a.points[-back] if back >= 3 else a.points[-1] - a.points[-2]
            if math.hypot(*arrival) < 1e-15:
                arrival = a.points[-1] - a.points[0]
            heading = math.atan2(arrival[1], arrival[0])
            best = None
            for m, phi in enumerate(launch_angles.get(target, [])):
                delta = abs(principal_angle(phi - (heading + math.pi)))
                if delta < RECIPROCAL_TOL_RAD and (best is None or delta < best[0]):
                    best = (delta, m)
            if best is None:
                continue
            twin = by_origin.get((target, best[1]))
            if twin is None or twin == i or twin in drop:
                continue
            drop.add(twin)
            logger.info(
                "reciprocity dedup: trace %s superseded by %s",
                separatrices[twin].origin,
                a.origin,
            )

    kept = [s for k, s in enumerate(separatrices) if k not in drop]

    counts: dict[int, int] = {}
    for s in kept:
        counts[s.origin[1]] = counts.get(s.origin[1], 0) + 1
        if s.termination is not None and s.termination[0] == "sing":
            counts[s.termination[1]] = counts.get(s.termination[1], 0) + 1
    for s in cross.pattern.singularities:
        if s.boundary:
            continue
        have = counts.get(s.vertex, 0)
        if have != s.valence:
            raise LayoutError(
                f"singularity at vertex {s.vertex} has {have} separatrix ends, "
                f"expected {s.valence} (lost a branch during dedup)"
            )
    return kept
