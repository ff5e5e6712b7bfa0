"""quadforge command line interface."""

from __future__ import annotations

import json
import logging
import sys
from pathlib import Path

import click

from . import domains, msh_io, pipeline, singularities as sg
from .errors import NonMeshableError, QuadforgeError


@click.group()
@click.option("-v", "--verbose", is_flag=True, help="Enable info logging.")
def main(verbose):
    """Block-structured quad meshing from cross-field singularity patterns."""
    logging.basicConfig(
        level=logging.INFO if verbose else logging.WARNING,
        format="%(levelname)s %(name)s: %(message)s",
    )


@main.command()
@click.option("--mesh", "mesh_path", required=True, type=click.Path(exists=True))
@click.option("--pattern", "pattern_path", type=click.Path(exists=True), default=None,
              help="Singularity pattern JSON; skips the first cross-field stage.")
@click.option("--target-size", default=0.05, show_default=True, help="Quad edge length target.")
@click.option("--out", "out_dir", default="quadforge-out", show_default=True)
@click.option("--svg", is_flag=True, help="Write SVG overlays and a report figure.")
@click.option("--smooth", type=click.Choice(["winslow"]), default=None)
@click.option("--config", "config_path", type=click.Path(exists=True), default=None,
              help="JSON config file; flags override its entries.")
def run(mesh_path, pattern_path, target_size, out_dir, svg, smooth, config_path):
    """Run the full pipeline and write all artifacts to the output directory."""
    data = {}
    if config_path:
        data = json.loads(Path(config_path).read_text())
    data.setdefault("mesh", mesh_path)
    data["mesh"] = mesh_path
    if pattern_path:
        data["pattern"] = pattern_path
    data["target_size"] = target_size
    data["out"] = out_dir
    data["svg"] = bool(svg or data.get("svg"))
    if smooth:
        data["smooth"] = smooth
    try:
        config = pipeline.PipelineConfig.from_json(data)
        result = pipeline.run(config)
    except NonMeshableError as exc:
        click.echo(f"non-meshable pattern: {exc}", err=True)
        for v in exc.violations[:10]:
            click.echo(
                f"  tangency violation at ({v['x']:.4f}, {v['y']:.4f}): "
                f"{v['deviation_deg']:.2f} deg",
                err=True,
            )
        sys.exit(3)
    except QuadforgeError as exc:
        click.echo(f"error: {exc}", err=True)
        sys.exit(2)
    for stage in result.stages:
        click.echo(f"[{stage.name}] {stage.seconds:.2f}s {stage.checks}")
    click.echo(result.quality.table("run", config.target_size))
    click.echo(f"artifacts in {out_dir}/")


@main.command("validate-pattern")
@click.option("--mesh", "mesh_path", required=True, type=click.Path(exists=True))
@click.option("--pattern", "pattern_path", required=True, type=click.Path(exists=True))
def validate_pattern(mesh_path, pattern_path):
    """Check a pattern's exact quarter-turn balance against a mesh."""
    mesh = msh_io.load_mesh(mesh_path)
    pattern = sg.SingularityPattern.load(pattern_path)
    report = sg.validate(pattern, mesh)
    click.echo(json.dumps(report.to_json(), indent=1, sort_keys=True))
    sys.exit(0 if report.ok else 1)


@main.command("make-domain")
@click.argument("name", type=click.Choice(sorted(domains.BUILTIN)))
@click.option("--out", "out_path", required=True, type=click.Path())
def make_domain(name, out_path):
    """Write one of the built-in demo triangulations as a .msh file."""
    mesh = domains.BUILTIN[name]()
    msh_io.save_mesh(out_path, mesh)
    click.echo(f"{name}: {mesh.n_vertices} vertices, {mesh.n_triangles} triangles -> {out_path}")


@main.command()
@click.option("--host", default="127.0.0.1", show_default=True)
@click.option("--port", default=8642, show_default=True)
def serve(host, port):
    """Start the local HTTP service used by the studio UI."""
    import uvicorn

    from .service import create_app

    uvicorn.run(create_app(), host=host, port=port)


if __name__ == "__main__":
    main()
