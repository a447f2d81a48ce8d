"""Lighting-condition editing for robustness testing and training data.

Variants of a source map are produced by a scaling term s on the grid
[0.25, 4.0] in steps of 0.125 (31 values): intensity edits scale all three
channels by s; temperature edits scale red by s and blue by 1/s.  Edited
maps are measured (total luminance, CCT) and binned so protocols can sample
lighting conditions evenly.
"""

from __future__ import annotations

import json
import math
import os
import warnings
from dataclasses import asdict, dataclass, field

import numpy as np

from .context import build_prompt_p2
from .envmap import EnvironmentMap, HighIntensityMap, decompose, rotate_columns
from . import photometry

GRID_MIN = 0.25
GRID_MAX = 4.0
GRID_STEP = 0.125

INTENSITY = "intensity"
TEMPERATURE = "temperature"


@dataclass(frozen=True)
class AugmentationSpec:
    """One lighting edit: ``kind`` is intensity or temperature, ``s`` the
    scaling term."""

    kind: str
    s: float

    def __post_init__(self):
        if self.kind not in (INTENSITY, TEMPERATURE):
            raise ValueError(f"unknown augmentation kind {self.kind!r}")
        if not GRID_MIN <= self.s <= GRID_MAX:
            raise ValueError(f"scaling term {self.s} outside [{GRID_MIN}, {GRID_MAX}]")


@dataclass
class ManifestEntry:
    source: str
    kind: str
    s: float
    total_luminance: float
    cct_kelvin: float
    bin_id: str | None = None
    path: str | None = None

    def to_json(self) -> str:
        return json.dumps(asdict(self), sort_keys=True)

    @classmethod
    def from_json(cls, line: str) -> "ManifestEntry":
        return cls(**json.loads(line))


@dataclass
class DatasetManifest:
    entries: list[ManifestEntry] = field(default_factory=list)
    underfilled_bins: list[str] = field(default_factory=list)

    def save(self, path: str | os.PathLike) -> None:
        with open(path, "w") as fh:
            for entry in self.entries:
                fh.write(entry.to_json() + "\n")

    @classmethod
    def load(cls, path: str | os.PathLike) -> "DatasetManifest":
        with open(path) as fh:
            return cls(entries=[ManifestEntry.from_json(l) for l in fh if l.strip()])


def default_grid() -> np.ndarray:
    """The 31 scaling terms 0.25, 0.375, ..., 4.0."""
    count = int(round((GRID_MAX - GRID_MIN) / GRID_STEP)) + 1
    return GRID_MIN + GRID_STEP * np.arange(count)


def scale_intensity(env: EnvironmentMap, s: float) -> EnvironmentMap:
    """Scale all three channels by s.  LDR maps are clamped back to [0, 1];
    HDR maps keep the full edited range."""
    if s <= 0:
        raise ValueError("scaling term must be positive")
    out = env.data * s
    if env.is_ldr:
        out = np.clip(out, 0.0, 1.0)
    return env.with_data(out)


def shift_temperature(env: EnvironmentMap, s: float) -> EnvironmentMap:
    """Scale red by s and blue by 1/s, leaving green untouched."""
    if s <= 0:
        raise ValueError("scaling term must be positive")
    out = env.data * np.array([s, 1.0, 1.0 / s])
    if env.is_ldr:
        out = np.clip(out, 0.0, 1.0)
    return env.with_data(out)


def clipping_fraction(env: EnvironmentMap, s: float, kind: str = INTENSITY) -> float:
    """Fraction of channel values an LDR edit would push above 1."""
    if kind == INTENSITY:
        edited = env.data * s
    else:
        edited = env.data * np.array([s, 1.0, 1.0 / s])
    return float((edited > 1.0).mean())


def apply_spec(env: EnvironmentMap, spec: AugmentationSpec) -> EnvironmentMap:
    if spec.kind == INTENSITY:
        return scale_intensity(env, spec.s)
    return shift_temperature(env, spec.s)


def generate_variants(
    env: EnvironmentMap, grid: np.ndarray | list[float] | None = None
) -> list[tuple[AugmentationSpec, EnvironmentMap]]:
    """One intensity and one temperature variant per grid value (62 per
    source on the default grid)."""
    grid = default_grid() if grid is None else np.asarray(grid, dtype=np.float64)
    out = []
    for s in grid:
        for kind in (INTENSITY, TEMPERATURE):
            spec = AugmentationSpec(kind=kind, s=float(s))
            out.append((spec, apply_spec(env, spec)))
    return out


def measure_entry(source: str, spec: AugmentationSpec, variant: EnvironmentMap) -> ManifestEntry:
    """Measure an edited map (pre-clamp HDR values) into a manifest entry."""
    mean_rgb = variant.data.reshape(-1, 3).mean(axis=0)
    return ManifestEntry(
        source=source,
        kind=spec.kind,
        s=spec.s,
        total_luminance=photometry.total_luminance(variant),
        cct_kelvin=photometry.cct(mean_rgb),
    )


def bin_and_sample(
    manifest: DatasetManifest,
    n_intensity_bins: int,
    n_temperature_bins: int,
    per_bin: int | None,
    seed: int = 0,
) -> DatasetManifest:
    """Assign entries to equal-width bins and subsample for balance.

    Intensity-edited entries bin by log total-luminance, temperature-edited
    ones by CCT in Kelvin, each over its measured range.  Every bin is then
    uniformly subsampled down to ``per_bin`` entries (None keeps all); bins
    with fewer entries keep what they have and are flagged under-filled.
    """
    if n_intensity_bins < 1 or n_temperature_bins < 1:
        raise ValueError("bin counts must be >= 1")
    if not manifest.entries:
        raise ValueError("empty manifest")
    rng = np.random.default_rng(seed)
    groups: dict[str, list[ManifestEntry]] = {}
    for kind, n_bins, key in (
        (INTENSITY, n_intensity_bins, lambda e: math.log(max(e.total_luminance, 1e-12))),
        (TEMPERATURE, n_temperature_bins, lambda e: e.cct_kelvin),
    ):
        entries = [e for e in manifest.entries if e.kind == kind]
        if not entries:
            continue
        values = np.array([key(e) for e in entries])
        lo, hi = values.min(), values.max()
        span = hi - lo
        for e, v in zip(entries, values):
            idx = 0 if span == 0 else min(int((v - lo) / span * n_bins), n_bins - 1)
            bin_id = f"{kind}/{idx}"
            e.bin_id = bin_id
            groups.setdefault(bin_id, []).append(e)

    chosen: list[ManifestEntry] = []
    underfilled: list[str] = []
    for bin_id in sorted(groups):
        members = groups[bin_id]
        if per_bin is None or len(members) <= per_bin:
            if per_bin is not None and len(members) < per_bin:
                underfilled.append(bin_id)
            chosen.extend(members)
        else:
            picks = rng.choice(len(members), size=per_bin, replace=False)
            chosen.extend(members[i] for i in sorted(picks))
    if underfilled:
        warnings.warn(f"under-filled bins: {', '.join(underfilled)}", stacklevel=2)
    return DatasetManifest(entries=chosen, underfilled_bins=underfilled)


def make_training_pair(hdr: EnvironmentMap) -> tuple[EnvironmentMap, np.ndarray, str]:
    """Turn a preprocessed HDR map into one training sample for the
    high-intensity estimation task: (LDR map, grayscale high-intensity
    image, fixed prompt)."""
    ldr, hi = decompose(hdr)
    return ldr, hi.grayscale(), build_prompt_p2()


def random_rotation(env: EnvironmentMap, seed: int) -> EnvironmentMap:
    """Horizontal-rotation augmentation: seeded cyclic column shift."""
    rng = np.random.default_rng(seed)
    return rotate_columns(env, int(rng.integers(0, env.width)))
