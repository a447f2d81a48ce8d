"""Pinhole-view masking, multi-view observation stitching, and text prompts.

A pinhole view is described by yaw/pitch (degrees), horizontal field of view,
and aspect ratio; its frustum selects the equirectangular pixels an AR camera
would cover.  Stitching projects camera frames into the panorama along the
same geometry.  The two prompt builders render the fixed templates that
encode ambient lighting for the generative backend.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .envmap import (
    EnvironmentMap,
    DimensionMismatchError,
    pixel_directions,
    solid_angle_weights,
)
from .photometry import AmbientLabels

PROMPT_P1_TEMPLATE = (
    "A panoramic photo of an indoor room. "
    "The room is in a {intensity} lighting condition. "
    "The room has a {temperature} ambient color."
)
PROMPT_P2 = (
    "A grayscale panoramic image describing the bright spots of an indoor room. "
    "Brighter spots get more bright color. "
    "Regions without light sources should stay pure black."
)

# Handheld AR devices rarely pitch far from level; random views stay within
# this band unless overridden.
DEFAULT_PITCH_RANGE = (-30.0, 30.0)


class ViewError(ValueError):
    """Invalid view specification."""


@dataclass(frozen=True)
class ViewSpec:
    """Pinhole camera orientation and field of view, angles in degrees."""

    yaw: float
    pitch: float
    hfov: float
    aspect: float = 1.0
    roll: float = 0.0

    def __post_init__(self):
        if not 0.0 < self.hfov < 180.0:
            raise ViewError(f"hfov must be in (0, 180), got {self.hfov}")
        if not -90.0 <= self.pitch <= 90.0:
            raise ViewError(f"pitch must be in [-90, 90], got {self.pitch}")
        if self.aspect <= 0:
            raise ViewError(f"aspect must be positive, got {self.aspect}")
        object.__setattr__(self, "yaw", self.yaw % 360.0)

    @property
    def vfov(self) -> float:
        """Vertical field of view in degrees, derived from hfov and aspect."""
        half = math.atan(math.tan(math.radians(self.hfov) / 2.0) / self.aspect)
        return math.degrees(2.0 * half)

    def solid_angle(self) -> float:
        """Analytic frustum solid angle in steradians (rectangular pyramid)."""
        a = math.radians(self.hfov) / 2.0
        b = math.radians(self.vfov) / 2.0
        return 4.0 * math.asin(math.sin(a) * math.sin(b))

    def basis(self) -> np.ndarray:
        """Rows are the camera's right, up, forward axes in world space."""
        yaw = math.radians(self.yaw)
        pitch = math.radians(self.pitch)
        roll = math.radians(self.roll)
        cp, sp = math.cos(pitch), math.sin(pitch)
        cy, sy = math.cos(yaw), math.sin(yaw)
        forward = np.array([cp * sy, sp, cp * cy])
        world_up = np.array([0.0, 1.0, 0.0])
        if abs(cp) < 1e-9:  # looking straight up/down: pick right from yaw
            right = np.array([math.cos(yaw), 0.0, -math.sin(yaw)])
        else:
            right = np.cross(world_up, forward)
            right /= np.linalg.norm(right)
        up = np.cross(forward, right)
        if roll:
            cr, sr = math.cos(roll), math.sin(roll)
            right, up = cr * right + sr * up, -sr * right + cr * up
        return np.stack([right, up, forward])

    @classmethod
    def from_dict(cls, d: dict) -> "ViewSpec":
        return cls(
            yaw=float(d["yaw"]),
            pitch=float(d["pitch"]),
            hfov=float(d["hfov"]),
            aspect=float(d.get("aspect", 1.0)),
            roll=float(d.get("roll", 0.0)),
        )

    def to_dict(self) -> dict:
        return {
            "yaw": self.yaw,
            "pitch": self.pitch,
            "roll": self.roll,
            "hfov": self.hfov,
            "aspect": self.aspect,
        }


@dataclass(frozen=True)
class ObservationMask:
    """Which equirectangular pixels a set of camera views covers."""

    bits: np.ndarray  # (h, w) bool

    def __post_init__(self):
        bits = np.asarray(self.bits, dtype=bool)
        bits.setflags(write=False)
        object.__setattr__(self, "bits", bits)

    @property
    def width(self) -> int:
        return self.bits.shape[1]

    @property
    def height(self) -> int:
        return self.bits.shape[0]

    @property
    def coverage_fraction(self) -> float:
        """Solid-angle-weighted fraction of the sphere covered."""
        weights = solid_angle_weights(self.width, self.height)
        covered = float((self.bits * weights.per_row[:, None]).sum())
        return covered / (4.0 * np.pi)

    def pixel_fraction(self) -> float:
        return float(self.bits.mean())

    @classmethod
    def full(cls, width: int, height: int) -> "ObservationMask":
        return cls(np.ones((height, width), dtype=bool))

    @classmethod
    def empty(cls, width: int, height: int) -> "ObservationMask":
        return cls(np.zeros((height, width), dtype=bool))


def _camera_plane_coords(view: ViewSpec, width: int, height: int):
    """Normalized image-plane coordinates of every equirect pixel.

    Returns (u, v, in_front): u and v are direction offsets divided by the
    frustum half-tangents, so the frustum interior is |u| <= 1, |v| <= 1
    with in_front true.
    """
    axes = view.basis()
    dirs = pixel_directions(width, height)
    cam = dirs @ axes.T  # components along right, up, forward
    z = cam[..., 2]
    in_front = z > 1e-12
    tan_h = math.tan(math.radians(view.hfov) / 2.0)
    tan_v = math.tan(math.radians(view.vfov) / 2.0)
    with np.errstate(divide="ignore", invalid="ignore"):
        u = np.where(in_front, cam[..., 0] / (z * tan_h), np.inf)
        v = np.where(in_front, cam[..., 1] / (z * tan_v), np.inf)
    return u, v, in_front


def project_view_mask(view: ViewSpec, width: int, height: int) -> ObservationMask:
    """Mask of pixels whose center direction lies inside the view frustum."""
    if width != 2 * height:
        raise ViewError(f"equirectangular dims must be 2:1, got {width}x{height}")
    u, v, in_front = _camera_plane_coords(view, width, height)
    bits = in_front & (np.abs(u) <= 1.0) & (np.abs(v) <= 1.0)
    return ObservationMask(bits)


def compose_masks(masks: list[ObservationMask]) -> ObservationMask:
    """Pixelwise OR of one or more masks."""
    if not masks:
        raise ValueError("compose_masks needs at least one mask")
    shape = masks[0].bits.shape
    out = np.zeros(shape, dtype=bool)
    for m in masks:
        if m.bits.shape != shape:
            raise DimensionMismatchError(f"mask {m.bits.shape} vs {shape}")
        out |= m.bits
    return ObservationMask(out)


def sample_random_views(
    seed: int,
    count_range: tuple[int, int] = (1, 5),
    fov_range: tuple[float, float] = (60.0, 120.0),
    pitch_range: tuple[float, float] = DEFAULT_PITCH_RANGE,
    aspect: float = 4.0 / 3.0,
) -> list[ViewSpec]:
    """Deterministic random camera views: the number of views is uniform on
    ``count_range``, yaw uniform on [0, 360), pitch and fov uniform on their
    ranges."""
    if count_range[0] > count_range[1] or count_range[0] < 1:
        raise ValueError(f"bad count range {count_range}")
    if fov_range[0] > fov_range[1]:
        raise ValueError(f"bad fov range {fov_range}")
    if pitch_range[0] > pitch_range[1]:
        raise ValueError(f"bad pitch range {pitch_range}")
    rng = np.random.default_rng(seed)
    count = int(rng.integers(count_range[0], count_range[1] + 1))
    views = []
    for _ in range(count):
        views.append(
            ViewSpec(
                yaw=float(rng.uniform(0.0, 360.0)),
                pitch=float(rng.uniform(*pitch_range)),
                hfov=float(rng.uniform(*fov_range)),
                aspect=aspect,
            )
        )
    return views


def apply_mask(env: EnvironmentMap, mask: ObservationMask) -> EnvironmentMap:
    """Zero out unobserved pixels.  The mask travels alongside the map so
    downstream consumers can tell observed-black from unobserved."""
    if mask.bits.shape != env.data.shape[:2]:
        raise DimensionMismatchError(
            f"mask {mask.bits.shape} vs map {env.data.shape[:2]}"
        )
    return env.with_data(env.data * mask.bits[:, :, None])


def stitch_observation(
    frame: np.ndarray,
    view: ViewSpec,
    width: int,
    height: int,
    onto: tuple[EnvironmentMap, ObservationMask] | None = None,
) -> tuple[EnvironmentMap, ObservationMask]:
    """Project one LDR camera frame into an equirectangular observation.

    Every panorama pixel inside the view frustum samples the frame
    bilinearly.  Passing a previous (map, mask) pair accumulates multiple
    views; overlaps resolve last-write-wins.
    """
    frame = np.asarray(frame, dtype=np.float64)
    if frame.ndim != 3 or frame.shape[2] != 3:
        raise ValueError("camera frame must be (h, w, 3)")
    u, v, in_front = _camera_plane_coords(view, width, height)
    covered = in_front & (np.abs(u) <= 1.0) & (np.abs(v) <= 1.0)

    fh, fw = frame.shape[:2]
    # u in [-1, 1] maps across frame columns, v=+1 is the frame's top row
    col = (u + 1.0) / 2.0 * fw - 0.5
    row = (1.0 - v) / 2.0 * fh - 0.5
    cols = np.clip(col[covered], 0.0, fw - 1.0)
    rows = np.clip(row[covered], 0.0, fh - 1.0)

    c0 = np.floor(cols).astype(int)
    r0 = np.floor(rows).astype(int)
    fc = (cols - c0)[:, None]
    fr = (rows - r0)[:, None]
    c1 = np.minimum(c0 + 1, fw - 1)
    r1 = np.minimum(r0 + 1, fh - 1)
    samples = (
        frame[r0, c0] * (1 - fc) * (1 - fr)
        + frame[r0, c1] * fc * (1 - fr)
        + frame[r1, c0] * (1 - fc) * fr
        + frame[r1, c1] * fc * fr
    )

    if onto is None:
        data = np.zeros((height, width, 3))
        bits = np.zeros((height, width), dtype=bool)
    else:
        prior_env, prior_mask = onto
        data = np.array(prior_env.data)
        bits = np.array(prior_mask.bits)
    data[covered] = np.clip(samples, 0.0, 1.0)
    bits |= covered
    return EnvironmentMap(data, range_tag="LDR"), ObservationMask(bits)


def build_prompt_p1(labels: AmbientLabels) -> str:
    """Ambient-lighting prompt with intensity and color slots filled."""
    return PROMPT_P1_TEMPLATE.format(
        intensity=labels.intensity_label, temperature=labels.temperature_label
    )


def build_prompt_p2() -> str:
    """Fixed prompt guiding the high-intensity estimation step."""
    return PROMPT_P2
