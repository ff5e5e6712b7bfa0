"""Minimal SVG writer for debug overlays (wireframes, isolines, layouts)."""

from __future__ import annotations

import numpy as np

# Irregular-vertex colors by valence (shared with the studio UI legend):
# blue 3, red 5, orange 6, yellow 8.
VALENCE_COLORS = {
    1: "#7f7f7f",
    2: "#222222",
    3: "#1f77dd",
    5: "#d62728",
    6: "#ff7f0e",
    8: "#e8c520",
}


class SvgCanvas:
    """Accumulates shapes in domain coordinates; y axis is flipped on write."""

    def __init__(self, bbox_min, bbox_max, width: int = 900, margin: float = 0.04):
        self.lo = np.asarray(bbox_min, dtype=float)
        self.hi = np.asarray(bbox_max, dtype=float)
        span = np.maximum(self.hi - self.lo, 1e-12)
        pad = margin * max(span)
        self.lo = self.lo - pad
        self.hi = self.hi + pad
        span = self.hi - self.lo
        self.scale = width / span[0]
        self.width = width
        self.height = int(round(span[1] * self.scale))
        self.body: list[str] = []

    def _pt(self, p):
        x = (p[0] - self.lo[0]) * self.scale
        y = (self.hi[1] - p[1]) * self.scale
        return f"{x:.2f},{y:.2f}"

    def polyline(self, points, color="#000", width=1.0, dash=None, opacity=1.0):
        d = " ".join(self._pt(p) for p in points)
        dash_attr = f' stroke-dasharray="{dash}"' if dash else ""
        self.body.append(
            f'<polyline points="{d}" fill="none" stroke="{color}" '
            f'stroke-width="{width}" stroke-opacity="{opacity}"{dash_attr}/>'
        )

    def polygon(self, points, fill="#ccc", stroke="none", opacity=0.5):
        d = " ".join(self._pt(p) for p in points)
        self.body.append(
            f'<polygon points="{d}" fill="{fill}" fill-opacity="{opacity}" stroke="{stroke}"/>'
        )

    def circle(self, center, r_px=4.0, color="#000"):
        x, y = self._pt(center).split(",")
        self.body.append(f'<circle cx="{x}" cy="{y}" r="{r_px}" fill="{color}"/>')

    def text(self, pos, s, size_px=12, color="#000"):
        x, y = self._pt(pos).split(",")
        self.body.append(f'<text x="{x}" y="{y}" font-size="{size_px}" fill="{color}">{s}</text>')

    def tostring(self) -> str:
        head = (
            f'<svg xmlns="http://www.w3.org/2000/svg" width="{self.width}" '
            f'height="{self.height}" viewBox="0 0 {self.width} {self.height}">'
        )
        return "\n".join([head, *self.body, "</svg>"])

    def write(self, path):
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(self.tostring())


def draw_mesh(canvas: SvgCanvas, mesh, color="#bbb", width=0.5):
    for a, b in mesh.edges:
        canvas.polyline([mesh.vertices[a], mesh.vertices[b]], color=color, width=width)


def draw_isolines(canvas: SvgCanvas, mesh, vertex_values, levels, color="#d00", width=1.0):
    """March P1 isolines over triangles."""
    vals = np.asarray(vertex_values)
    for level in levels:
        for tri in mesh.triangles:
            v = vals[tri]
            p = mesh.vertices[tri]
            pts = []
            for i in range(3):
                a, b = v[i], v[(i + 1) % 3]
                if (a - level) * (b - level) < 0:
                    t = (level - a) / (b - a)
                    pts.append(p[i] * (1 - t) + p[(i + 1) % 3] * t)
            if len(pts) == 2:
                canvas.polyline(pts, color=color, width=width)


def draw_tri_affine_isolines(canvas, mesh, tri_eval, levels, color="#00d", width=1.0):
    """Isolines of a per-triangle affine field given by tri_eval(t, corners)->3 values."""
    for t in range(mesh.n_triangles):
        p = mesh.tri_points(t)
        v = tri_eval(t, p)
        for level in levels:
            pts = []
            for i in range(3):
                a, b = v[i], v[(i + 1) % 3]
                if (a - level) * (b - level) < 0:
                    s = (level - a) / (b - a)
                    pts.append(p[i] * (1 - s) + p[(i + 1) % 3] * s)
            if len(pts) == 2:
                canvas.polyline(pts, color=color, width=width)


def singularity_color(valence: int) -> str:
    return VALENCE_COLORS.get(valence, "#9467bd")
