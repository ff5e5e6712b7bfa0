"""Reader/writer for the .msh version 2.2 ASCII subset used by the pipeline.

Supported element types: 1 (2-node line), 2 (3-node triangle), 3 (4-node
quad), 15 (1-node point). Coordinates are written with %.17g so that a
write/read round trip reproduces doubles bit-exactly.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .errors import MeshFormatError
from .trimesh import TriMesh

logger = logging.getLogger(__name__)

LINE2 = 1
TRI3 = 2
QUAD4 = 3
POINT1 = 15

_NODES_PER_TYPE = {LINE2: 2, TRI3: 3, QUAD4: 4, POINT1: 1}


@dataclass
class MshData:
    """Raw contents of a .msh file with dense 0-based node ids."""

    points: np.ndarray
    elements: dict[int, np.ndarray] = field(default_factory=dict)
    tags: dict[int, np.ndarray] = field(default_factory=dict)

    def triangles(self) -> np.ndarray:
        return self.elements.get(TRI3, np.zeros((0, 3), dtype=np.int64))

    def quads(self) -> np.ndarray:
        return self.elements.get(QUAD4, np.zeros((0, 4), dtype=np.int64))


def read_msh(path) -> MshData:
    with open(path, encoding="ascii") as fh:
        lines = fh.read().splitlines()
    i = 0

    def expect(tag):
        nonlocal i
        while i < len(lines) and not lines[i].strip():
            i += 1
        if i >= len(lines) or lines[i].strip() != tag:
            raise MeshFormatError(f"expected {tag} at line {i + 1}")
        i += 1

    try:
        expect("$MeshFormat")
        version = lines[i].split()
        if not version or not version[0].startswith("2.2"):
            raise MeshFormatError(f"unsupported msh version {version[:1]}")
        i += 1
        expect("$EndMeshFormat")
        expect("$Nodes")
        n_nodes = int(lines[i])
        i += 1
        ids = np.empty(n_nodes, dtype=np.int64)
        xyz = np.empty((n_nodes, 2))
        for k in range(n_nodes):
            parts = lines[i + k].split()
            ids[k] = int(parts[0])
            xyz[k] = float(parts[1]), float(parts[2])
        i += n_nodes
        expect("$EndNodes")
        expect("$Elements")
        n_elem = int(lines[i])
        i += 1
        order = np.argsort(ids, kind="stable")
        remap = {int(ids[j]): int(pos) for pos, j in enumerate(order)}
        points = xyz[order]
        elements: dict[int, list] = {}
        tags: dict[int, list] = {}
        for k in range(n_elem):
            parts = lines[i + k].split()
            etype = int(parts[1])
            ntags = int(parts[2])
            if etype not in _NODES_PER_TYPE:
                raise MeshFormatError(f"unsupported element type {etype}")
            nn = _NODES_PER_TYPE[etype]
            conn = [remap[int(x)] for x in parts[3 + ntags : 3 + ntags + nn]]
            if len(conn) != nn:
                raise MeshFormatError(f"element {parts[0]}: expected {nn} nodes")
            elements.setdefault(etype, []).append(conn)
            tags.setdefault(etype, []).append(int(parts[3]) if ntags else 0)
        i += n_elem
        expect("$EndElements")
    except MeshFormatError:
        raise
    except (ValueError, IndexError, KeyError) as exc:
        raise MeshFormatError(f"malformed .msh file near line {i + 1}: {exc}") from exc

    data = MshData(points)
    for etype, conn in elements.items():
        data.elements[etype] = np.asarray(conn, dtype=np.int64)
        data.tags[etype] = np.asarray(tags[etype], dtype=np.int64)
    return data


def load_mesh(path) -> TriMesh:
    """Load a triangulated domain; normalizes ids and orientation."""
    data = read_msh(path)
    tris = data.triangles()
    if len(tris) == 0:
        raise MeshFormatError(f"{path}: no triangles found")
    used = np.unique(tris)
    if len(used) != len(data.points):
        # drop nodes referenced only by line/point elements
        remap = -np.ones(len(data.points), dtype=np.int64)
        remap[used] = np.arange(len(used))
        tris = remap[tris]
        points = data.points[used]
    else:
        points = data.points
    mesh = TriMesh(points, tris)
    if mesh.reoriented:
        logger.info("%s: reoriented %d triangles on load", path, mesh.reoriented)
    return mesh


def _fmt(x: float) -> str:
    return "%.17g" % x


def write_msh(path, points: np.ndarray, elements: dict[int, np.ndarray], tags=None):
    """Write nodes plus the given element blocks (type -> connectivity)."""
    tags = tags or {}
    out = ["$MeshFormat", "2.2 0 8", "$EndMeshFormat", "$Nodes", str(len(points))]
    for k, p in enumerate(points):
        out.append(f"{k + 1} {_fmt(p[0])} {_fmt(p[1])} 0")
    out.append("$EndNodes")
    n_elem = sum(len(v) for v in elements.values())
    out.append("$Elements")
    out.append(str(n_elem))
    eid = 1
    for etype in sorted(elements):
        conn = elements[etype]
        etags = tags.get(etype)
        for j, row in enumerate(conn):
            tag = int(etags[j]) if etags is not None else 0
            nodes = " ".join(str(int(v) + 1) for v in row)
            out.append(f"{eid} {etype} 2 {tag} {tag} {nodes}")
            eid += 1
    out.append("$EndElements")
    with open(path, "w", encoding="ascii") as fh:
        fh.write("\n".join(out) + "\n")


def save_mesh(path, mesh: TriMesh, boundary_tags: bool = True):
    """Write a TriMesh (triangles plus boundary line elements)."""
    elements = {TRI3: mesh.triangles}
    tags = {TRI3: np.zeros(len(mesh.triangles), dtype=np.int64)}
    if boundary_tags:
        seg = []
        seg_tag = []
        for li, loop in enumerate(mesh.loops):
            v = loop.vertices
            for a, b in zip(v, np.roll(v, -1)):
                seg.append((int(a), int(b)))
                seg_tag.append(li + 1)
        elements[LINE2] = np.asarray(seg, dtype=np.int64)
        tags[LINE2] = np.asarray(seg_tag, dtype=np.int64)
    write_msh(path, mesh.vertices, elements, tags)


def append_node_data(path, name: str, values: np.ndarray):
    """Append a $NodeData view (1 or 3 components per node)."""
    values = np.atleast_2d(np.asarray(values, dtype=float))
    if values.shape[0] == 1 and values.shape[1] > 3:
        values = values.T
    ncomp = values.shape[1]
    if ncomp == 2:
        values = np.column_stack([values, np.zeros(len(values))])
        ncomp = 3
    out = [
        "$NodeData",
        "1",
        f'"{name}"',
        "1",
        "0",
        "3",
        "0",
        str(ncomp),
        str(len(values)),
    ]
    for k, row in enumerate(values):
        out.append(f"{k + 1} " + " ".join(_fmt(x) for x in row))
    out.append("$EndNodeData")
    with open(path, "a", encoding="ascii") as fh:
        fh.write("\n".join(out) + "\n")


def append_element_data(path, name: str, values: np.ndarray, first_id: int = 1):
    """Append an $ElementData view (per-element scalars or triples)."""
    values = np.asarray(values, dtype=float)
    if values.ndim == 1:
        values = values[:, None]
    ncomp = values.shape[1]
    if ncomp == 2:
        values = np.column_stack([values, np.zeros(len(values))])
        ncomp = 3
    out = [
        "$ElementData",
        "1",
        f'"{name}"',
        "1",
        "0",
        "3",
        "0",
        str(ncomp),
        str(len(values)),
    ]
    for k, row in enumerate(values):
        out.append(f"{k + first_id} " + " ".join(_fmt(x) for x in row))
    out.append("$EndElementData")
    with open(path, "a", encoding="ascii") as fh:
        fh.write("\n".join(out) + "\n")
