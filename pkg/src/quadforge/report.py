"""Report rendering: SVG overlays and matplotlib figures for a run."""

from __future__ import annotations

import numpy as np

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt

from . import svg
from .svg import SvgCanvas, singularity_color

FIG_DPI = 150


def render_svg_layers(out_dir, base_mesh, spoked, cross, lay, qmesh):
    """Debug overlays: input mesh, fields with cut, layout, final quads."""
    mesh = spoked.mesh

    canvas = SvgCanvas(mesh.bbox_min, mesh.bbox_max)
    svg.draw_mesh(canvas, mesh, color="#ccc", width=0.4)
    h = cross.h_field.values
    levels = np.linspace(h.min(), h.max(), 13)[1:-1]
    svg.draw_isolines(canvas, mesh, h, levels, color="#d62728", width=1.0)
    svg.draw_tri_affine_isolines(
        canvas,
        mesh,
        lambda t, pts: cross.theta_field.tri_corner_values(t),
        np.linspace(-0.6, 0.6, 9),
        color="#1f77b4",
        width=0.8,
    )
    for e in cross.cut.edges:
        canvas.polyline(mesh.vertices[mesh.edges[e]], color="#000", width=2.0)
    for s in cross.pattern.singularities:
        canvas.circle((s.x, s.y), 4, singularity_color(s.valence))
    canvas.write(out_dir / "fields.svg")

    canvas = SvgCanvas(mesh.bbox_min, mesh.bbox_max)
    svg.draw_mesh(canvas, mesh, color="#eee", width=0.3)
    for e in lay.edges:
        color = {"sep": "#d62728", "boundary": "#1f77b4", "chord": "#2ca02c"}[e.kind]
        canvas.polyline(e.points, color=color, width=1.5)
    for n in lay.nodes:
        if n.kind in ("sing", "bsing"):
            entry = lay.pattern.by_vertex().get(n.vertex)
            canvas.circle(n.point, 5, singularity_color(entry.valence if entry else 4))
        elif n.kind in ("cross", "tpoint", "interior"):
            canvas.circle(n.point, 3, "#555")
    canvas.write(out_dir / "layout.svg")

    canvas = SvgCanvas(qmesh.vertices.min(axis=0), qmesh.vertices.max(axis=0))
    for q in qmesh.quads:
        canvas.polygon(qmesh.vertices[q], fill="none", stroke="#444", opacity=1.0)
    counts = qmesh.vertex_quad_counts()
    on_b = qmesh.boundary_vertices()
    for v in range(qmesh.n_vertices):
        if not on_b[v] and counts[v] != 4:
            canvas.circle(qmesh.vertices[v], 5, singularity_color(int(counts[v])))
    canvas.write(out_dir / "quadmesh.svg")


def render_figures(out_dir, qmesh, quality_report):
    """Matplotlib summary: quality-colored mesh plus histogram."""
    from .quadmesh import element_qualities

    eta = (
        quality_report.per_element
        if quality_report.per_element is not None
        else element_qualities(qmesh.vertices, qmesh.quads)
    )
    fig, (ax0, ax1) = plt.subplots(
        1, 2, figsize=(11, 5), gridspec_kw={"width_ratios": [3, 2]}
    )
    polys = qmesh.vertices[qmesh.quads]
    from matplotlib.collections import PolyCollection

    pc = PolyCollection(polys, array=eta, cmap="viridis", edgecolor="k", linewidth=0.2)
    pc.set_clim(0.0, 1.0)
    ax0.add_collection(pc)
    ax0.autoscale()
    ax0.set_aspect("equal")
    ax0.set_title("element quality")
    fig.colorbar(pc, ax=ax0, shrink=0.85)

    ax1.hist(eta, bins=40, range=(0.0, 1.0), color="#36648b")
    ax1.axvline(quality_report.mean, color="#d62728", label=f"mean {quality_report.mean:.3f}")
    ax1.axvline(quality_report.worst, color="#ff7f0e", label=f"worst {quality_report.worst:.3f}")
    ax1.set_xlabel("scaled Jacobian")
    ax1.legend(loc="upper left", fontsize=9)
    fig.tight_layout()
    fig.savefig(out_dir / "report.png", dpi=FIG_DPI)
    plt.close(fig)
