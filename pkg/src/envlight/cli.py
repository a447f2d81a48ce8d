"""Command-line surface for the toolkit.

Every subcommand delegates to one library operation or protocol run, emits
machine-readable JSON (plus CSV tables and figures for the protocols), and
is deterministic for a fixed ``--seed``.  The mock backend server exposes
the oracle over the HTTP protocol for end-to-end exercises.
"""

from __future__ import annotations

import json
import os
import sys
from dataclasses import asdict
from pathlib import Path

import click
import numpy as np

from . import augmentation, evaluation, photometry, png_io, report
from .backend import BackendDescriptor, make_mock_server
from .context import (
    ObservationMask,
    ViewSpec,
    apply_mask,
    build_prompt_p1,
    compose_masks,
    project_view_mask,
    sample_random_views,
    stitch_observation,
)
from .envmap import EnvironmentMap, decompose, recompose
from .hdr_io import load_hdr, save_hdr
from .pipeline import EstimationRequest, estimate, on_device_ms
from .refinement import extract_palette, refine, select_best

BACKEND_URL_ENV = "ENVLIGHT_BACKEND_URL"


def _echo_record(record: dict) -> None:
    click.echo(json.dumps(record, sort_keys=True))


def _fail(stage: str, message: str) -> None:
    click.echo(json.dumps({"error": {"stage": stage, "message": message}}), err=True)
    sys.exit(1)


def _load_env(path: str) -> EnvironmentMap:
    if path.endswith(".hdr"):
        return load_hdr(path)
    return png_io.load_ldr(path)


def _parse_views(text: str) -> tuple[ViewSpec, ...]:
    """Accept either a JSON list of view dicts or shorthand like "75deg x1"."""
    text = text.strip()
    if text.startswith("["):
        return tuple(ViewSpec.from_dict(d) for d in json.loads(text))
    parts = text.replace("deg", "").split("x")
    hfov = float(parts[0])
    count = int(parts[1]) if len(parts) > 1 else 1
    if count == 1:
        return (ViewSpec(yaw=0.0, pitch=0.0, hfov=hfov, aspect=4.0 / 3.0),)
    yaws = np.linspace(0.0, 360.0, count, endpoint=False)
    return tuple(ViewSpec(yaw=float(y), pitch=0.0, hfov=hfov, aspect=4.0 / 3.0) for y in yaws)


def _build_backend(kind: str, endpoint: str | None, fixture: str | None, seed: int,
                   timeout_ms: float, perturb: bool):
    endpoint = endpoint or os.environ.get(BACKEND_URL_ENV)
    if kind == "remote":
        if not endpoint:
            _fail("offload", f"remote backend needs --backend-endpoint or {BACKEND_URL_ENV}")
        descriptor = BackendDescriptor(kind="remote", endpoint=endpoint, timeout_ms=timeout_ms)
    else:
        if not fixture:
            _fail("offload", "oracle backend needs --fixture")
        descriptor = BackendDescriptor(
            kind="oracle", fixture_path=fixture, seed=seed, perturb=perturb,
            timeout_ms=timeout_ms,
        )
    return descriptor.build()


@click.group()
def main():
    """Environment-lighting toolkit: HDR decomposition, photometry, masking,
    refinement, augmentation, and evaluation protocols."""


@main.command("decompose")
@click.argument("input_hdr", type=click.Path(exists=True))
@click.option("--out-ldr", required=True, type=click.Path())
@click.option("--out-hi", required=True, type=click.Path())
@click.option("--transfer", type=click.Choice(["srgb", "linear"]), default="srgb",
              show_default=True, help="PNG transfer function for the LDR part.")
def decompose_cmd(input_hdr, out_ldr, out_hi, transfer):
    """Split an HDR map into LDR and high-intensity PNGs."""
    env = load_hdr(input_hdr)
    ldr, hi = decompose(env)
    png_io.save_ldr(ldr, out_ldr, transfer=transfer)
    png_io.save_high_intensity(hi, out_hi)
    _echo_record({"ldr": out_ldr, "hi": out_hi, "width": env.width, "height": env.height})


@main.command("recompose")
@click.argument("ldr_png", type=click.Path(exists=True))
@click.argument("hi_png", type=click.Path(exists=True))
@click.option("--out", "out_path", required=True, type=click.Path())
@click.option("--transfer", type=click.Choice(["srgb", "linear"]), default="srgb",
              show_default=True)
def recompose_cmd(ldr_png, hi_png, out_path, transfer):
    """Combine LDR and high-intensity PNGs back into an HDR file."""
    ldr = png_io.load_ldr(ldr_png, transfer=transfer)
    hi = png_io.load_high_intensity(hi_png)
    save_hdr(recompose(ldr, hi), out_path)
    _echo_record({"hdr": out_path})


@main.command()
@click.argument("input_map", type=click.Path(exists=True))
@click.option("--mask", "mask_png", type=click.Path(exists=True), default=None)
def measure(input_map, mask_png):
    """Photometric reading: mean intensity, total luminance, CCT, labels."""
    env = _load_env(input_map)
    mask = png_io.load_mask(mask_png) if mask_png else None
    reading = photometry.measure(env, mask)
    labels = photometry.classify_ambient(reading)
    _echo_record({
        "mean_intensity": reading.mean_intensity,
        "total_luminance": reading.total_luminance,
        "cct_kelvin": reading.cct_kelvin,
        "out_of_locus": reading.out_of_locus,
        "labels": asdict(labels),
    })


@main.command()
@click.option("--mean-intensity", type=float, required=True)
@click.option("--cct-kelvin", type=float, required=True)
def classify(mean_intensity, cct_kelvin):
    """Ambient labels and completion prompt for a sensor reading."""
    reading = photometry.AmbientLightReading(
        mean_intensity=mean_intensity, total_luminance=0.0, cct_kelvin=cct_kelvin
    )
    labels = photometry.classify_ambient(reading)
    _echo_record({"labels": asdict(labels), "prompt_p1": build_prompt_p1(labels)})


@main.command()
@click.option("--views", default=None, help='JSON view list or shorthand like "75deg x1".')
@click.option("--random-views", is_flag=True, help="Sample random views instead.")
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--width", type=int, default=512, show_default=True)
@click.option("--height", type=int, default=256, show_default=True)
@click.option("--out", "out_path", required=True, type=click.Path())
def mask(views, random_views, seed, width, height, out_path):
    """Render an observation mask for one or more camera views."""
    if random_views:
        specs = sample_random_views(seed)
    elif views:
        specs = _parse_views(views)
    else:
        _fail("data_preparation", "pass --views or --random-views")
    composed = compose_masks([project_view_mask(v, width, height) for v in specs])
    png_io.save_mask(composed.bits, out_path)
    _echo_record({
        "mask": out_path,
        "views": [v.to_dict() for v in specs],
        "coverage_fraction": composed.coverage_fraction,
    })


@main.command()
@click.argument("frame_png", type=click.Path(exists=True))
@click.option("--pose", required=True, help='JSON {"yaw", "pitch", "roll", "hfov", "aspect"}.')
@click.option("--width", type=int, default=512, show_default=True)
@click.option("--height", type=int, default=256, show_default=True)
@click.option("--onto-map", type=click.Path(exists=True), default=None)
@click.option("--onto-mask", type=click.Path(exists=True), default=None)
@click.option("--out-map", required=True, type=click.Path())
@click.option("--out-mask", required=True, type=click.Path())
def stitch(frame_png, pose, width, height, onto_map, onto_mask, out_map, out_mask):
    """Project a camera frame into a partial equirectangular observation."""
    frame = png_io.load_ldr(frame_png, strict_aspect=False)
    view = ViewSpec.from_dict(json.loads(pose))
    onto = None
    if onto_map and onto_mask:
        onto = (png_io.load_ldr(onto_map), ObservationMask(png_io.load_mask(onto_mask)))
    env, composed = stitch_observation(frame.data, view, width, height, onto)
    png_io.save_ldr(env, out_map)
    png_io.save_mask(composed.bits, out_mask)
    _echo_record({"map": out_map, "mask": out_mask,
                  "coverage_fraction": composed.coverage_fraction})


@main.command()
@click.argument("source_dir", type=click.Path(exists=True, file_okay=False))
@click.option("--output-dir", required=True, type=click.Path())
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--intensity-bins", type=int, default=6, show_default=True)
@click.option("--temperature-bins", type=int, default=6, show_default=True)
@click.option("--per-bin", type=int, default=None, help="Subsample each bin to this size.")
@click.option("--grid-step", type=float, default=augmentation.GRID_STEP, show_default=True)
@click.option("--write-variants/--manifest-only", default=True, show_default=True)
def augment(source_dir, output_dir, seed, intensity_bins, temperature_bins, per_bin,
            grid_step, write_variants):
    """Generate edited variants of every .hdr in a directory plus a binned
    JSON-lines manifest."""
    out = Path(output_dir)
    out.mkdir(parents=True, exist_ok=True)
    sources = sorted(Path(source_dir).glob("*.hdr"))
    if not sources:
        _fail("data_preparation", f"no .hdr files in {source_dir}")
    grid = np.arange(augmentation.GRID_MIN, augmentation.GRID_MAX + grid_step / 2, grid_step)
    manifest = augmentation.DatasetManifest()
    for src in sources:
        env = load_hdr(src)
        for spec, variant in augmentation.generate_variants(env, grid):
            entry = augmentation.measure_entry(src.name, spec, variant)
            if write_variants:
                name = f"{src.stem}_{spec.kind}_{spec.s:.3f}.hdr"
                save_hdr(variant, out / name)
                entry.path = name
            manifest.entries.append(entry)
    manifest = augmentation.bin_and_sample(
        manifest, intensity_bins, temperature_bins, per_bin, seed
    )
    manifest_path = out / "manifest.jsonl"
    manifest.save(manifest_path)
    _echo_record({
        "sources": len(sources),
        "grid_values": len(grid),
        "generated": len(sources) * len(grid) * 2,
        "kept_after_sampling": len(manifest.entries),
        "underfilled_bins": manifest.underfilled_bins,
        "manifest": str(manifest_path),
    })


@main.command("refine")
@click.argument("estimate_map", type=click.Path(exists=True))
@click.argument("observation_map", type=click.Path(exists=True))
@click.option("--mask", "mask_png", required=True, type=click.Path(exists=True))
@click.option("--out", "out_path", required=True, type=click.Path())
def refine_cmd(estimate_map, observation_map, mask_png, out_path):
    """Color-adapt an estimated map to an observation."""
    est = _load_env(estimate_map)
    obs = _load_env(observation_map)
    bits = ObservationMask(png_io.load_mask(mask_png))
    refined, matrix = refine(est, obs, bits)
    png_io.save_ldr(refined, out_path)
    _echo_record({
        "refined": out_path,
        "multiplier_min": float(matrix.multipliers.min()),
        "multiplier_max": float(matrix.multipliers.max()),
    })


@main.command("select")
@click.argument("candidates", nargs=-1, type=click.Path(exists=True))
@click.option("--observation", "observation_map", required=True, type=click.Path(exists=True))
@click.option("--mask", "mask_png", type=click.Path(exists=True), default=None)
@click.option("--seed", type=int, default=0, show_default=True)
def select_cmd(candidates, observation_map, mask_png, seed):
    """Pick the candidate whose palette best matches the observation."""
    if not candidates:
        _fail("refinement", "no candidates given")
    maps = [_load_env(p) for p in candidates]
    obs = _load_env(observation_map)
    bits = ObservationMask(png_io.load_mask(mask_png)) if mask_png else None
    index = select_best(maps, obs, bits, seed=seed)
    palette = extract_palette(maps[index], bits, seed=seed)
    _echo_record({
        "chosen_index": index,
        "chosen_path": candidates[index],
        "palette": [list(map(float, c)) for c in palette.colors],
    })


@main.command("render-spheres")
@click.argument("input_hdr", type=click.Path(exists=True))
@click.option("--output-dir", required=True, type=click.Path())
@click.option("--resolution", type=int, default=evaluation.DEFAULT_SPHERE_RESOLUTION,
              show_default=True)
@click.option("--phong-exponent", type=float, default=evaluation.DEFAULT_PHONG_EXPONENT,
              show_default=True)
def render_spheres(input_hdr, output_dir, resolution, phong_exponent):
    """Render the three protocol spheres under a map's lighting."""
    env = load_hdr(input_hdr)
    out = Path(output_dir)
    out.mkdir(parents=True, exist_ok=True)
    rendered = {}
    record = {}
    for kind in evaluation.MATERIAL_KINDS:
        material = evaluation.SphereMaterial(kind, phong_exponent=phong_exponent)
        sphere = evaluation.render_sphere(env, material, resolution)
        tone = np.clip(sphere.pixels, 0.0, 1.0)
        path = out / f"sphere_{kind}.png"
        png_io._write_rgb8(png_io.srgb_encode(tone), path)
        rendered[kind] = tone
        record[kind] = str(path)
    grid_path = out / "spheres.png"
    report.plot_sphere_grid(rendered, grid_path)
    record["figure"] = str(grid_path)
    _echo_record(record)


def _protocol_options(fn):
    for option in (
        click.option("--estimator", type=click.Choice(["oracle", "pipeline"]), default="oracle",
                     show_default=True,
                     help="oracle scores the zero-error bound; pipeline runs the backend."),
        click.option("--backend", "backend_kind", type=click.Choice(["oracle", "remote"]),
                     default="oracle", show_default=True),
        click.option("--backend-endpoint", default=None,
                     help=f"Remote backend URL (or {BACKEND_URL_ENV})."),
        click.option("--timeout-ms", type=float, default=30_000.0, show_default=True),
        click.option("--seed", type=int, default=0, show_default=True),
        click.option("--workers", type=int, default=1, show_default=True),
        click.option("--output-dir", required=True, type=click.Path()),
        click.option("--format", "fmt", type=click.Choice(["json", "csv"]), default="json",
                     show_default=True),
        click.option("--no-timing", is_flag=True, help="Omit runtimes from JSON output."),
    ):
        fn = option(fn)
    return fn


def _pipeline_estimator(backend_kind, endpoint, seed, timeout_ms, n_outputs=5):
    def estimator(observation, mask, context):
        if backend_kind == "remote":
            backend = _build_backend("remote", endpoint, None, seed, timeout_ms, True)
        else:
            gt = context.get("gt")
            from .backend import OracleBackend

            backend = OracleBackend(gt, seed=seed)
        request = EstimationRequest(observation=observation, mask=mask,
                                    n_outputs=n_outputs, seed=seed)
        return estimate(request, backend).hdr

    return estimator


@main.command("eval-three-sphere")
@click.argument("dataset_dir", type=click.Path(exists=True, file_okay=False))
@click.option("--views", default="75deg x1", show_default=True)
@click.option("--resolution", type=int, default=128, show_default=True)
@_protocol_options
def eval_three_sphere(dataset_dir, views, resolution, estimator, backend_kind,
                      backend_endpoint, timeout_ms, seed, workers, output_dir, fmt, no_timing):
    """Three-sphere protocol over every .hdr in a directory."""
    paths = sorted(Path(dataset_dir).glob("*.hdr"))
    if not paths:
        _fail("data_preparation", f"no .hdr files in {dataset_dir}")
    dataset = [(p.name, load_hdr(p)) for p in paths]
    gt_by_name = dict(dataset)
    if estimator == "oracle":
        est = evaluation.identity_estimator(gt_by_name)
    else:
        inner = _pipeline_estimator(backend_kind, backend_endpoint, seed, timeout_ms)
        est = lambda obs, m, ctx: inner(obs, m, {**ctx, "gt": gt_by_name[ctx["name"]]})
    result = evaluation.run_three_sphere(
        dataset, est, views=_parse_views(views), resolution=resolution, workers=workers
    )
    created = report.emit_protocol_outputs(result, output_dir, "three_sphere", fmt,
                                           include_timing=not no_timing)
    _echo_record({"outputs": [str(p) for p in created],
                  "per_material": result.per_material, "failures": len(result.failures)})


@main.command("eval-robustness")
@click.argument("variant_dir", type=click.Path(exists=True, file_okay=False))
@click.option("--manifest", "manifest_path", required=True, type=click.Path(exists=True))
@click.option("--source-dir", required=True, type=click.Path(exists=True, file_okay=False),
              help="Directory holding the unedited source .hdr maps.")
@click.option("--refinement", type=click.Choice(["on", "off", "both"]), default="both",
              show_default=True)
@click.option("--views", default="75deg x1", show_default=True)
@_protocol_options
def eval_robustness(variant_dir, manifest_path, source_dir, refinement, views, estimator,
                    backend_kind, backend_endpoint, timeout_ms, seed, workers, output_dir,
                    fmt, no_timing):
    """Robustness protocol over a binned variant manifest.

    The estimator completes each masked variant observation from its
    unedited source map (a fixed output per source), so per-bin RMSE shows
    how well refinement adapts across lighting conditions.
    """
    manifest = augmentation.DatasetManifest.load(manifest_path)
    variant_root = Path(variant_dir)
    source_root = Path(source_dir)

    def load_variant(entry):
        if entry.path:
            return load_hdr(variant_root / entry.path)
        spec = augmentation.AugmentationSpec(kind=entry.kind, s=entry.s)
        return augmentation.apply_spec(load_hdr(source_root / entry.source), spec)

    source_ldr_cache: dict[str, EnvironmentMap] = {}

    def fixed_estimator(observation, mask, context):
        name = context["entry"].source
        if name not in source_ldr_cache:
            source_ldr_cache[name] = decompose(load_hdr(source_root / name))[0]
        return source_ldr_cache[name]

    result = evaluation.run_robustness(
        manifest, load_variant, fixed_estimator, refinement=refinement,
        views=_parse_views(views), workers=workers,
    )
    created = report.emit_protocol_outputs(result, output_dir, "robustness", fmt,
                                           include_timing=not no_timing)
    _echo_record({"outputs": [str(p) for p in created],
                  "bins": len(result.per_bin), "failures": len(result.failures)})


@main.command("estimate")
@click.option("--observation", "observation_png", required=True, type=click.Path(exists=True))
@click.option("--mask", "mask_png", required=True, type=click.Path(exists=True))
@click.option("--semantics", "semantics_png", type=click.Path(exists=True), default=None)
@click.option("--backend", "backend_kind", type=click.Choice(["oracle", "remote"]),
              default="oracle", show_default=True)
@click.option("--backend-endpoint", default=None)
@click.option("--fixture", type=click.Path(exists=True), default=None,
              help="Ground-truth .hdr for the oracle backend.")
@click.option("--n-outputs", type=int, default=5, show_default=True)
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--timeout-ms", type=float, default=30_000.0, show_default=True)
@click.option("--out-hdr", required=True, type=click.Path())
@click.option("--no-timing", is_flag=True)
def estimate_cmd(observation_png, mask_png, semantics_png, backend_kind, backend_endpoint,
                 fixture, n_outputs, seed, timeout_ms, out_hdr, no_timing):
    """Run the full two-step estimation for one observation."""
    observation = png_io.load_ldr(observation_png, transfer="linear")
    bits = ObservationMask(png_io.load_mask(mask_png))
    semantics = png_io.load_semantic(semantics_png) if semantics_png else None
    backend = _build_backend(backend_kind, backend_endpoint, fixture, seed, timeout_ms, True)
    request = EstimationRequest(observation=observation, mask=bits, semantics=semantics,
                                n_outputs=n_outputs, seed=seed)
    try:
        result = estimate(request, backend)
    except Exception as exc:
        stage = getattr(exc, "stage", "pipeline")
        _fail(stage, str(exc))
    save_hdr(result.hdr, out_hdr)
    record = {
        "hdr": out_hdr,
        "chosen_index": result.chosen_index,
        "candidates": len(result.candidates),
        "prompt_p1": result.prompt_p1,
    }
    if not no_timing:
        record["timings_ms"] = {k: round(v, 3) for k, v in result.timings.items()}
        record["on_device_ms"] = round(on_device_ms(result.timings), 3)
    _echo_record(record)


@main.command("serve-mock-backend")
@click.option("--fixture", required=True, type=click.Path(exists=True))
@click.option("--host", default="127.0.0.1", show_default=True)
@click.option("--port", type=int, default=8752, show_default=True)
@click.option("--seed", type=int, default=0, show_default=True)
def serve_mock_backend(fixture, host, port, seed):
    """Serve the oracle backend over the HTTP wire protocol."""
    descriptor = BackendDescriptor(kind="oracle", fixture_path=fixture, seed=seed)
    server = make_mock_server(descriptor.build(), host=host, port=port)
    click.echo(json.dumps({"serving": f"http://{host}:{server.server_address[1]}"}))
    try:
        server.serve_forever()
    except KeyboardInterrupt:
        server.shutdown()


if __name__ == "__main__":
    main()
