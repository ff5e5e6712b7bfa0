"""Staged pipeline: first field, pattern, exact field, layout, quad mesh.

Each stage is a pure function over the previous stage's artifacts, and the
runner persists every intermediate (pattern JSON, field dumps, layout JSON,
final .msh, quality JSON) so any stage can be re-run from disk. Identical
configuration and inputs produce byte-identical outputs.
"""

from __future__ import annotations

import json
import logging
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import conformal, layout as ly, layout_repair, mbo, msh_io, quadmesh, singularities as sg
from . import tracing as tr
from .errors import NonMeshableError, QuadforgeError
from .spokes import SpokeParams, SpokeResult, refine_spokes
from .trimesh import TriMesh

logger = logging.getLogger(__name__)

CONFIG_KEYS = {
    "mesh": str,
    "pattern": (str, type(None)),
    "out": (str, type(None)),
    "mbo_levels": int,
    "spoke_rings": int,
    "spoke_sectors_per_quadrant": int,
    "spoke_radius_factor": float,
    "step_factor": float,
    "target_size": float,
    "tol_tan_deg": float,
    "svg": bool,
    "smooth": (str, type(None)),
}

RANGES = {
    "mbo_levels": (1, 10),
    "spoke_rings": (1, 8),
    "spoke_sectors_per_quadrant": (1, 6),
    "spoke_radius_factor": (0.5, 4.0),
    "step_factor": (0.05, 1.0),
    "target_size": (1e-4, 10.0),
    "tol_tan_deg": (0.1, 45.0),
}


@dataclass
class PipelineConfig:
    mesh: str
    pattern: str | None = None
    out: str | None = None
    mbo_levels: int = 6
    spoke_rings: int = 3
    spoke_sectors_per_quadrant: int = 2
    spoke_radius_factor: float = 1.5
    step_factor: float = 0.4
    target_size: float = 0.05
    tol_tan_deg: float = 2.0
    svg: bool = False
    smooth: str | None = None

    def __post_init__(self):
        for key, (lo, hi) in RANGES.items():
            v = getattr(self, key)
            if not lo <= v <= hi:
                raise ValueError(f"{key}={v} outside [{lo}, {hi}]")
        if self.smooth not in (None, "winslow"):
            raise ValueError(f"unknown smoother {self.smooth!r}")

    @classmethod
    def from_json(cls, data: dict) -> "PipelineConfig":
        unknown = set(data) - set(CONFIG_KEYS)
        if unknown:
            raise ValueError(f"unknown configuration keys: {sorted(unknown)}")
        return cls(**data)

    def spoke_params(self) -> SpokeParams:
        return SpokeParams(
            rings=self.spoke_rings,
            sectors_per_quadrant=self.spoke_sectors_per_quadrant,
            radius_factor=self.spoke_radius_factor,
        )


@dataclass
class StageOutput:
    name: str
    seconds: float
    checks: dict = field(default_factory=dict)


@dataclass
class RunResult:
    config: PipelineConfig
    stages: list[StageOutput]
    pattern: sg.SingularityPattern | None = None
    spokes: SpokeResult | None = None
    cross: conformal.CrossField | None = None
    layout: ly.QuadLayout | None = None
    qmesh: quadmesh.QuadMesh | None = None
    quality: quadmesh.QualityReport | None = None

    def report_json(self) -> dict:
        return {
            "config": asdict(self.config),
            "stages": [
                {"name": s.name, "seconds": round(s.seconds, 4), "checks": s.checks}
                for s in self.stages
            ],
        }


def stage1_first_field(mesh: TriMesh, n_levels: int):
    """First cross-field and detected singularity pattern."""
    schedule = mbo.make_schedule(mesh, n_levels)
    field = mbo.mbo_solve(mesh, schedule)
    pattern = sg.detect(mesh, field)
    report = sg.validate(pattern, mesh)
    if not report.ok:
        raise QuadforgeError(f"detected pattern invalid: {report.messages}")
    return field, pattern


def stage2_exact_field(mesh: TriMesh, pattern: sg.SingularityPattern, params: SpokeParams, tol_tan_deg: float):
    """Spoke refinement plus the two-solve cross-field; may be non-meshable."""
    report = sg.validate(pattern, mesh)
    if not report.ok:
        raise QuadforgeError(
            f"pattern invalid (deficit {report.deficit_fraction()}): {report.messages}"
        )
    spoked = refine_spokes(mesh, pattern, params)
    cross = conformal.compute_cross_field(spoked.mesh, spoked.pattern)
    tangency = conformal.check_tangency(cross, tol_deg=tol_tan_deg)
    redetected = cross.detect_singularities()
    exact = sorted((s.vertex, s.t) for s in redetected.singularities) == sorted(
        (s.vertex, s.t) for s in spoked.pattern.singularities
    )
    if not exact:
        raise QuadforgeError("re-detection does not reproduce the imposed pattern")
    return spoked, cross, tangency


def stage3_layout(spoked: SpokeResult, cross, step_factor: float) -> ly.QuadLayout:
    config = tr.TraceConfig(step_factor=step_factor)
    traced = tr.trace_separatrices(cross, spoked.inner_radius, spoked.disk_radius, config)
    seps = tr.dedup(traced.separatrices, cross, spoked.disk_radius, traced.launch_angles)
    seps, records = ly.detect_and_cut_limit_cycles(seps, spoked.mesh)
    lay = ly.build_layout(spoked.mesh, spoked.pattern, seps, records)
    lay = layout_repair.fix_tjunctions(lay, cross)
    lay = layout_repair.split_doublet_patches(lay, cross)
    lay.validate()
    return lay


def stage4_quadmesh(lay: ly.QuadLayout, cross, target_size: float):
    generated = quadmesh.generate_quad_mesh(lay, cross, target_size)
    report = quadmesh.quality(generated.qmesh)
    return generated, report


def run(config: PipelineConfig, mesh: TriMesh | None = None) -> RunResult:
    """Execute the staged pipeline, persisting artifacts when out is set."""
    result = RunResult(config, [])
    out = Path(config.out) if config.out else None
    if out:
        out.mkdir(parents=True, exist_ok=True)

    if mesh is None:
        mesh = msh_io.load_mesh(config.mesh)

    t0 = time.perf_counter()
    if config.pattern:
        pattern = sg.SingularityPattern.load(config.pattern)
        checks = {"source": "imposed"}
        stage_name = "pattern (imposed)"
    else:
        _, pattern = stage1_first_field(mesh, config.mbo_levels)
        checks = {"source": "detected", "singularities": len(pattern.singularities)}
        stage_name = "first field + detection"
    balance = sg.validate(pattern, mesh)
    checks["balance_ok"] = balance.ok
    checks["deficit_quarters"] = balance.deficit_quarters
    result.stages.append(StageOutput(stage_name, time.perf_counter() - t0, checks))
    result.pattern = pattern
    if out:
        pattern.save(out / "pattern.json")

    t0 = time.perf_counter()
    spoked, cross, tangency = stage2_exact_field(
        mesh, pattern, config.spoke_params(), config.tol_tan_deg
    )
    result.spokes = spoked
    result.cross = cross
    result.stages.append(
        StageOutput(
            "exact field",
            time.perf_counter() - t0,
            {
                "refined_vertices": spoked.mesh.n_vertices,
                "cut_edges": len(cross.cut),
                "theta_residual": float(cross.theta_field.residual),
                "meshable": tangency.meshable,
                "max_tangency_deviation_deg": round(
                    float(np.degrees(tangency.max_deviation_rad)), 6
                ),
            },
        )
    )
    if out:
        msh_io.save_mesh(out / "fields.msh", spoked.mesh)
        msh_io.append_node_data(out / "fields.msh", "log_size", cross.h_field.values)
        theta_elem = np.array(
            [cross.theta_field.tri_corner_values(t) for t in range(spoked.mesh.n_triangles)]
        )
        msh_io.append_element_data(out / "fields.msh", "rotation", theta_elem)
    if not tangency.meshable:
        raise NonMeshableError(
            "cross-field violates boundary tangency; pattern is not quad-meshable",
            violations=[
                {"x": v.midpoint[0], "y": v.midpoint[1], "deviation_deg": float(np.degrees(v.deviation_rad))}
                for v in tangency.violations
            ],
        )

    t0 = time.perf_counter()
    lay = stage3_layout(spoked, cross, config.step_factor)
    result.layout = lay
    result.stages.append(
        StageOutput(
            "layout",
            time.perf_counter() - t0,
            {"patches": len(lay.patches), "all_quad": all(p.n_sides == 4 for p in lay.patches)},
        )
    )
    if out:
        lay.save(out / "layout.json")

    t0 = time.perf_counter()
    generated, quality_report = stage4_quadmesh(lay, cross, config.target_size)
    result.qmesh = generated.qmesh
    result.quality = quality_report
    result.stages.append(
        StageOutput(
            "quad mesh",
            time.perf_counter() - t0,
            {
                "quads": generated.qmesh.n_quads,
                "eta_mean": round(quality_report.mean, 6),
                "eta_worst": round(quality_report.worst, 6),
            },
        )
    )
    if out:
        quadmesh.export(generated.qmesh, out / "quad.msh")
        quadmesh.quality_json(quality_report, out / "quality.json")
        quadmesh.quality_csv(quality_report, out / "quality.csv")
        with open(out / "run_report.json", "w", encoding="utf-8") as fh:
            json.dump(result.report_json(), fh, indent=1, sort_keys=True)
            fh.write("\n")
        if config.svg:
            from . import report

            report.render_svg_layers(out, mesh, spoked, cross, lay, generated.qmesh)
            report.render_figures(out, generated.qmesh, quality_report)
        with open(out / "quality_table.txt", "w", encoding="utf-8") as fh:
            fh.write(quality_report.table("run", config.target_size) + "\n")
    return result
