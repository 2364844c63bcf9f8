"""Command line entry points: serve the trainer, bake phantoms, cut slices,
and re-score recorded sample files."""

from __future__ import annotations

import dataclasses
import json
import math

import click

from .anatomy import load_mesh, prostate_model_from_mesh
from .biopsy import evaluate_protocol, rescore_sample
from .exercises import grade_simulation
from .probe import ProbePose, ProbeSpec, image_plane_of
from .scenario import scenario_from_dict
from .store import result_to_dict, sample_from_dict
from .volume import PhantomSpec, extract_slice, generate_phantom, load_volume, save_pgm, save_volume


@click.group()
def main():
    """Ultrasound-guided prostate biopsy trainer."""


@main.command()
@click.option("--port", default=8000, show_default=True)
@click.option("--host", default="127.0.0.1", show_default=True)
@click.option("--data-dir", envvar="BIOPSYM_DATA_DIR", default="data",
              show_default=True, help="Store directory (env: BIOPSYM_DATA_DIR).")
@click.option("--scenarios", "scenarios_file", type=click.Path(exists=True),
              default=None, help="Scenario catalog JSON (default: built-ins).")
def serve(port: int, host: str, data_dir: str, scenarios_file: str | None):
    """Run the REST + WebSocket service."""
    import uvicorn

    from .service import build_default_engine, create_app

    engine = build_default_engine(data_dir, scenarios_file)
    uvicorn.run(create_app(engine), host=host, port=port)


@main.command()
@click.option("--seed", default=PhantomSpec.seed, show_default=True, type=int)
@click.option("--out", "out_file", required=True, type=click.Path())
def phantom(seed: int, out_file: str):
    """Generate the procedural phantom volume and write it as USVOL."""
    spec = dataclasses.replace(PhantomSpec(), seed=seed)
    vol = generate_phantom(spec)
    save_volume(vol, out_file)
    click.echo(f"wrote {out_file}: dims={vol.dims} spacing={vol.spacing} seed={seed}")


@main.command("slice")
@click.option("--volume", "volume_file", required=True, type=click.Path(exists=True))
@click.option("--pose", "pose_str", required=True,
              help="depth_mm,pitch_deg,yaw_deg,roll_deg")
@click.option("--out", "out_file", required=True, type=click.Path())
@click.option("--size", default=256, show_default=True, help="Image width/height px.")
@click.option("--extent", default=60.0, show_default=True, help="Image extent mm.")
def slice_cmd(volume_file: str, pose_str: str, out_file: str, size: int, extent: float):
    """Extract the probe image plane at a pose and write a PGM."""
    parts = pose_str.split(",")
    if len(parts) != 4:
        raise click.BadParameter("expected depth_mm,pitch_deg,yaw_deg,roll_deg",
                                 param_hint="--pose")
    depth, pitch, yaw, roll = (float(p) for p in parts)
    pose = ProbePose(depth=depth, pitch=math.radians(pitch),
                     yaw=math.radians(yaw), roll=math.radians(roll))
    vol = load_volume(volume_file)
    plane = image_plane_of(ProbeSpec(), pose, extent=(extent, extent),
                           resolution=(size, size))
    save_pgm(extract_slice(vol, plane), out_file)
    click.echo(f"wrote {out_file}: {size}x{size} at depth {depth} mm")


@main.command()
@click.option("--mesh", "mesh_file", required=True, type=click.Path(exists=True))
@click.option("--samples", "samples_file", required=True, type=click.Path(exists=True))
@click.option("--scenario", "scenario_file", required=True, type=click.Path(exists=True))
def score(mesh_file: str, samples_file: str, scenario_file: str):
    """Re-score recorded samples against a gland mesh and scenario protocol."""
    doc = json.loads(open(scenario_file, encoding="utf-8").read())
    if "scenarios" in doc:
        if len(doc["scenarios"]) != 1:
            raise click.ClickException("catalog file must hold exactly one scenario")
        doc = doc["scenarios"][0]
    sc = scenario_from_dict(doc)

    raw = json.loads(open(samples_file, encoding="utf-8").read())
    raw = raw["samples"] if isinstance(raw, dict) else raw
    samples = [sample_from_dict(d) for d in raw]

    prostate = prostate_model_from_mesh(load_mesh(mesh_file), axes=sc.zone_axes)
    rescored = [rescore_sample(prostate, s) for s in samples]
    result = evaluate_protocol(rescored, sc.canonical_order, sc.targets)
    grade = grade_simulation(result)
    click.echo(json.dumps({"result": result_to_dict(result), "score": grade.score,
                           "components": grade.components}, indent=2))


if __name__ == "__main__":
    main()
