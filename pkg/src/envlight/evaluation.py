"""Quantitative evaluation: three-sphere rendering protocol and robustness
testing in the LDR domain.

Estimation quality is scored on spheres rendered under predicted vs
ground-truth lighting with three materials: a mirror samples the map along
the reflected view ray, a diffuse surface integrates cosine-weighted
radiance over the hemisphere, and the matte ("silver matte") surface uses a
normalized Phong lobe.  Metrics are RMSE (after mapping each image's 0.1st
and 99.9th percentiles to 0 and 1), scale-invariant RMSE, and mean angular
error between RGB vectors.  Robustness runs compare completed LDR maps
against edited ground truth per lighting-condition bin.
"""

from __future__ import annotations

import time
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .augmentation import DatasetManifest
from .context import ObservationMask, ViewSpec, apply_mask, compose_masks, project_view_mask
from .envmap import (
    EnvironmentMap,
    decompose,
    pixel_directions,
    resize,
    solid_angle_weights,
)
from .refinement import refine

# Table naming: diffuse / matte / mirror correspond to the materials the
# protocol calls matte / silver matte / silver, in that order.
MATERIAL_KINDS = ("diffuse", "matte", "mirror")
DEFAULT_PHONG_EXPONENT = 64.0
DEFAULT_SPHERE_RESOLUTION = 256
DEFAULT_CONV_SIZE = (128, 64)  # env downsample used for the BRDF convolutions
MIN_SPHERE_RESOLUTION = 16


class ZeroSpreadError(ValueError):
    """Percentile remap undefined: the image has no value spread."""


@dataclass(frozen=True)
class SphereMaterial:
    kind: str
    phong_exponent: float = DEFAULT_PHONG_EXPONENT

    def __post_init__(self):
        if self.kind not in MATERIAL_KINDS:
            raise ValueError(f"unknown material {self.kind!r}")
        if self.kind == "matte" and self.phong_exponent <= 0:
            raise ValueError("phong exponent must be positive")


@dataclass(frozen=True)
class SphereImage:
    """Orthographic rendering of a unit sphere; pixels outside the disc are
    flagged by ``coverage`` and excluded from metrics."""

    pixels: np.ndarray  # (res, res, 3)
    coverage: np.ndarray  # (res, res) bool

    @property
    def resolution(self) -> int:
        return self.pixels.shape[0]

    def covered(self) -> np.ndarray:
        """Covered pixels flattened to (n, 3)."""
        return self.pixels[self.coverage]


@dataclass
class MetricReport:
    per_material: dict = field(default_factory=dict)  # kind -> metric -> mean
    per_bin: dict = field(default_factory=dict)  # bin id -> stats
    entries: list = field(default_factory=list)
    failures: list = field(default_factory=list)
    runtimes: dict = field(default_factory=dict)
    config: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "per_material": self.per_material,
            "per_bin": self.per_bin,
            "entries": self.entries,
            "failures": self.failures,
            "runtimes": self.runtimes,
            "config": self.config,
        }


def _sphere_geometry(resolution: int):
    xs = (np.arange(resolution) + 0.5) / resolution * 2.0 - 1.0
    x, y = np.meshgrid(xs, -xs)  # y axis points up in the image
    r2 = x**2 + y**2
    coverage = r2 <= 1.0
    z = np.sqrt(np.clip(1.0 - r2, 0.0, None))
    normals = np.stack([x, y, z], axis=-1)
    normals[~coverage] = 0.0
    return normals, coverage


def _reflect_view(normals: np.ndarray) -> np.ndarray:
    # view vector is +Z (orthographic camera straight down -Z)
    nz = normals[..., 2:3]
    r = 2.0 * nz * normals
    r[..., 2] -= 1.0
    return r


def _sample_env(env: EnvironmentMap, dirs: np.ndarray) -> np.ndarray:
    from .envmap import directions_to_pixels, sample_bilinear

    col, row = directions_to_pixels(dirs, env.width, env.height)
    return sample_bilinear(env.data, col, row)


def render_sphere(
    env: EnvironmentMap,
    material: SphereMaterial,
    resolution: int = DEFAULT_SPHERE_RESOLUTION,
    conv_size: tuple[int, int] = DEFAULT_CONV_SIZE,
) -> SphereImage:
    """Render a unit sphere under the environment's lighting.

    The camera is orthographic and axis-aligned with the map (the sphere's
    +Z normal sees the panorama center).  Diffuse and matte responses
    integrate directly over the texels of the map downsampled to
    ``conv_size``; the mirror samples the full-resolution map.
    """
    if resolution < MIN_SPHERE_RESOLUTION:
        raise ValueError(f"sphere resolution must be >= {MIN_SPHERE_RESOLUTION}")
    if env.is_ldr:
        warnings.warn("rendering spheres from an LDR-tagged map", stacklevel=2)
    normals, coverage = _sphere_geometry(resolution)

    if material.kind == "mirror":
        pixels = _sample_env(env, _reflect_view(normals))
        pixels[~coverage] = 0.0
        return SphereImage(pixels=pixels, coverage=coverage)

    small = resize(env, *conv_size) if (env.width, env.height) != conv_size else env
    texel_dirs = pixel_directions(small.width, small.height).reshape(-1, 3)
    weights = solid_angle_weights(small.width, small.height).per_pixel().reshape(-1)
    radiance_w = (small.data.reshape(-1, 3) * weights[:, None]).astype(np.float64)

    if material.kind == "diffuse":
        lobe_dirs = normals[coverage]
        exponent, norm = 1.0, 1.0 / np.pi
    else:  # matte: normalized Phong lobe around the reflection direction
        lobe_dirs = _reflect_view(normals)[coverage]
        exponent = material.phong_exponent
        norm = (exponent + 1.0) / (2.0 * np.pi)

    out = np.zeros((resolution, resolution, 3))
    shaded = np.empty((lobe_dirs.shape[0], 3))
    chunk = max(1, 8_388_608 // max(texel_dirs.shape[0], 1))
    for start in range(0, lobe_dirs.shape[0], chunk):
        sel = slice(start, min(start + chunk, lobe_dirs.shape[0]))
        cosines = np.clip(lobe_dirs[sel] @ texel_dirs.T, 0.0, None)
        if exponent != 1.0:
            cosines **= exponent
        shaded[sel] = cosines @ radiance_w
    out[coverage] = shaded * norm
    return SphereImage(pixels=out, coverage=coverage)


def _check_same(pred: SphereImage, gt: SphereImage) -> np.ndarray:
    if pred.pixels.shape != gt.pixels.shape:
        raise ValueError(f"resolution mismatch {pred.pixels.shape} vs {gt.pixels.shape}")
    return pred.coverage & gt.coverage


def _percentile_remap(values: np.ndarray) -> np.ndarray:
    lo = np.percentile(values, 0.1)
    hi = np.percentile(values, 99.9)
    if hi - lo <= 1e-12:
        raise ZeroSpreadError("image percentiles coincide; cannot normalize")
    return np.clip((values - lo) / (hi - lo), 0.0, 1.0)


def rmse(pred: SphereImage, gt: SphereImage) -> float:
    """Root-mean-square error after independently remapping each image's
    0.1st/99.9th percentiles (over covered pixels, channels pooled) to 0/1."""
    covered = _check_same(pred, gt)
    p = _percentile_remap(pred.pixels[covered])
    g = _percentile_remap(gt.pixels[covered])
    return float(np.sqrt(np.mean((p - g) ** 2)))


def si_rmse(pred: SphereImage, gt: SphereImage) -> float:
    """RMSE minimized over a single non-negative scale on the prediction.

    Asymmetric by construction: the scale is fitted to the prediction only.
    An all-zero prediction leaves the scale undefined; the ground truth's
    RMS is returned with a warning.
    """
    covered = _check_same(pred, gt)
    p = pred.pixels[covered].ravel()
    g = gt.pixels[covered].ravel()
    pp = float(p @ p)
    if pp <= 0.0:
        warnings.warn("all-zero prediction; scale undefined", stacklevel=2)
        return float(np.sqrt(np.mean(g**2)))
    alpha = max(float(p @ g) / pp, 0.0)
    return float(np.sqrt(np.mean((alpha * p - g) ** 2)))


def angular_error(pred: SphereImage, gt: SphereImage) -> float:
    """Mean per-pixel angle in degrees between RGB vectors; near-zero
    vectors contribute 0."""
    covered = _check_same(pred, gt)
    p = pred.pixels[covered]
    g = gt.pixels[covered]
    np_norm = np.linalg.norm(p, axis=1)
    ng_norm = np.linalg.norm(g, axis=1)
    valid = (np_norm > 1e-8) & (ng_norm > 1e-8)
    angles = np.zeros(p.shape[0])
    cosine = np.einsum("ij,ij->i", p[valid], g[valid]) / (np_norm[valid] * ng_norm[valid])
    cosine = np.clip(cosine, -1.0, 1.0)
    # collinear vectors are exactly zero: arccos noise near 1 would otherwise
    # report sub-arcsecond phantom angles
    cosine[cosine > 1.0 - 1e-12] = 1.0
    angles[valid] = np.degrees(np.arccos(cosine))
    return float(angles.mean()) if angles.size else 0.0


def ldr_rmse(pred: EnvironmentMap, gt: EnvironmentMap) -> float:
    """Plain RMS pixel difference between two LDR maps (no remap)."""
    if pred.data.shape != gt.data.shape:
        raise ValueError(f"dimension mismatch {pred.data.shape} vs {gt.data.shape}")
    if not (pred.is_ldr and gt.is_ldr):
        raise ValueError("ldr_rmse expects LDR-tagged maps")
    return float(np.sqrt(np.mean((pred.data - gt.data) ** 2)))


DEFAULT_VIEWS = (ViewSpec(yaw=0.0, pitch=0.0, hfov=75.0, aspect=4.0 / 3.0),)


def observation_from(
    gt: EnvironmentMap, views: tuple[ViewSpec, ...]
) -> tuple[EnvironmentMap, ObservationMask]:
    """Ground truth reduced to what a camera would see: LDR clamp + mask."""
    mask = compose_masks([project_view_mask(v, gt.width, gt.height) for v in views])
    gt_ldr = decompose(gt)[0] if not gt.is_ldr else gt
    return apply_mask(gt_ldr, mask), mask


def run_three_sphere(
    dataset: list[tuple[str, EnvironmentMap]],
    estimator: Callable[[EnvironmentMap, ObservationMask, dict], EnvironmentMap],
    views: tuple[ViewSpec, ...] = DEFAULT_VIEWS,
    materials: tuple[SphereMaterial, ...] | None = None,
    resolution: int = DEFAULT_SPHERE_RESOLUTION,
    conv_size: tuple[int, int] = DEFAULT_CONV_SIZE,
    workers: int = 1,
    dump: Callable[[str, str, str, SphereImage], None] | None = None,
) -> MetricReport:
    """Three-sphere protocol over (name, HDR ground truth) entries.

    Each entry is masked by the configured views, estimated, and scored on
    rendered spheres against the ground-truth renders.  Estimator failures
    are recorded and the entry skipped.
    """
    if materials is None:
        materials = tuple(SphereMaterial(kind) for kind in MATERIAL_KINDS)
    t0 = time.perf_counter()
    report = MetricReport(
        config={
            "views": [v.to_dict() for v in views],
            "materials": [
                {"kind": m.kind, "phong_exponent": m.phong_exponent} for m in materials
            ],
            "resolution": resolution,
            "conv_size": list(conv_size),
        }
    )

    def run_entry(item):
        name, gt = item
        observation, mask = observation_from(gt, views)
        estimate = estimator(observation, mask, {"name": name})
        record = {"name": name, "metrics": {}}
        for material in materials:
            gt_sphere = render_sphere(gt, material, resolution, conv_size)
            est_sphere = render_sphere(estimate, material, resolution, conv_size)
            if dump is not None:
                dump(name, material.kind, "gt", gt_sphere)
                dump(name, material.kind, "estimate", est_sphere)
            entry_metrics = {"si_rmse": si_rmse(est_sphere, gt_sphere),
                             "angular_error": angular_error(est_sphere, gt_sphere)}
            try:
                entry_metrics["rmse"] = rmse(est_sphere, gt_sphere)
            except ZeroSpreadError as exc:
                entry_metrics["rmse"] = None
                record.setdefault("flags", []).append(f"{material.kind}: {exc}")
            record["metrics"][material.kind] = entry_metrics
        return record

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            outcomes = list(pool.map(_guard(run_entry), dataset))
    else:
        outcomes = [_guard(run_entry)(item) for item in dataset]

    for name_gt, outcome in zip(dataset, outcomes):
        if isinstance(outcome, Exception):
            report.failures.append({"name": name_gt[0], "error": str(outcome)})
        else:
            report.entries.append(outcome)

    for material in materials:
        sums: dict[str, list[float]] = {"rmse": [], "si_rmse": [], "angular_error": []}
        for record in report.entries:
            for key, value in record["metrics"][material.kind].items():
                if value is not None:
                    sums[key].append(value)
        report.per_material[material.kind] = {
            key: (float(np.mean(vals)) if vals else None) for key, vals in sums.items()
        }
    report.runtimes["total_s"] = time.perf_counter() - t0
    return report


def _guard(fn):
    def wrapped(item):
        try:
            return fn(item)
        except Exception as exc:  # recorded per entry, run continues
            return exc

    return wrapped


def run_robustness(
    manifest: DatasetManifest,
    load_variant: Callable[..., EnvironmentMap],
    estimator: Callable[[EnvironmentMap, ObservationMask, dict], EnvironmentMap],
    refinement: str = "on",
    views: tuple[ViewSpec, ...] = DEFAULT_VIEWS,
    workers: int = 1,
) -> MetricReport:
    """Robustness protocol: per-bin mean LDR RMSE of completed maps.

    ``load_variant(entry)`` materializes each manifest entry's edited HDR
    map.  The estimator sees the masked LDR observation of the variant and
    returns a completed LDR map; with ``refinement`` "on" or "both" the
    completion is color-adapted to the observation before scoring.
    """
    if refinement not in ("on", "off", "both"):
        raise ValueError("refinement must be 'on', 'off', or 'both'")
    modes = ("on", "off") if refinement == "both" else (refinement,)
    t0 = time.perf_counter()
    report = MetricReport(
        config={"views": [v.to_dict() for v in views], "refinement": refinement}
    )

    def run_entry(entry):
        variant = load_variant(entry)
        gt_ldr = decompose(variant)[0] if not variant.is_ldr else variant
        observation, mask = observation_from(variant, views)
        completed = estimator(observation, mask, {"entry": entry})
        record = {
            "source": entry.source,
            "kind": entry.kind,
            "s": entry.s,
            "bin_id": entry.bin_id,
        }
        for mode in modes:
            scored = completed
            if mode == "on":
                scored, _ = refine(completed, observation, mask)
            record[f"rmse_{mode}"] = ldr_rmse(scored, gt_ldr)
        return record

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            outcomes = list(pool.map(_guard(run_entry), manifest.entries))
    else:
        outcomes = [_guard(run_entry)(e) for e in manifest.entries]

    for entry, outcome in zip(manifest.entries, outcomes):
        if isinstance(outcome, Exception):
            report.failures.append({"source": entry.source, "error": str(outcome)})
        else:
            report.entries.append(outcome)

    bins: dict[str, list[dict]] = {}
    for record in report.entries:
        bins.setdefault(str(record["bin_id"]), []).append(record)
    for bin_id in sorted(bins):
        records = bins[bin_id]
        if not records:
            report.per_bin[bin_id] = {"count": 0}
            continue
        stats: dict = {"count": len(records),
                       "mean_abs_log_s": float(np.mean([abs(np.log(r["s"])) for r in records]))}
        for mode in modes:
            stats[f"rmse_{mode}"] = float(np.mean([r[f"rmse_{mode}"] for r in records]))
        report.per_bin[bin_id] = stats
    report.runtimes["total_s"] = time.perf_counter() - t0
    return report


def identity_estimator(gt_by_name: dict[str, EnvironmentMap]):
    """Estimator that returns the ground truth for each named entry; the
    protocol's zero-error upper bound."""

    def estimate(observation, mask, context):
        return gt_by_name[context["name"]]

    return estimate
