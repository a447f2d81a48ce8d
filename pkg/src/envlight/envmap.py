"""Equirectangular environment maps and the HDR <-> (LDR, high-intensity) transform.

An environment map is a 2:1 latitude/longitude image of linear-RGB radiance.
Convention: column 0 is yaw -180 degrees, row 0 is pitch +90 degrees (top
pole), pixel centers at half-integer offsets.  HDR radiance above the LDR
ceiling of 1.0 is encoded into a separate high-intensity map through a
sigmoid squeeze of the overshoot, so both halves live in standard image
ranges and can be recombined losslessly up to float precision.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

LDR = "LDR"
HDR = "HDR"

# Rec.709 / CIE-Y luminance coefficients used for every pixel-luminance
# statistic in the package; they sum to exactly 1.0.
LUMA_COEFFS = np.array([0.212671, 0.71516, 0.072169])


class EnvmapError(ValueError):
    """Invalid environment-map construction or operation."""


class DimensionMismatchError(EnvmapError):
    """Two images that must share dimensions do not."""


class SaturationError(EnvmapError):
    """High-intensity value at or above the sigmoid's open upper bound."""


def _validate_image(data: np.ndarray, name: str) -> np.ndarray:
    data = np.asarray(data)
    if data.dtype not in (np.float32, np.float64):
        data = data.astype(np.float64)
    if data.ndim != 3 or data.shape[2] != 3:
        raise EnvmapError(f"{name} must have shape (height, width, 3), got {data.shape}")
    h, w = data.shape[:2]
    if w < 2 or h < 1:
        raise EnvmapError(f"{name} too small: {w}x{h}")
    return data


@dataclass(frozen=True)
class EnvironmentMap:
    """Immutable equirectangular radiance image in linear RGB.

    ``range_tag`` is ``"LDR"`` (all channels in [0, 1]) or ``"HDR"``
    (unbounded non-negative radiance).
    """

    data: np.ndarray
    range_tag: str = HDR
    strict_aspect: bool = field(default=True, repr=False)

    def __post_init__(self):
        data = _validate_image(self.data, "environment map")
        h, w = data.shape[:2]
        if self.strict_aspect and w != 2 * h:
            raise EnvmapError(f"equirectangular maps must be 2:1, got {w}x{h}")
        if self.range_tag not in (LDR, HDR):
            raise EnvmapError(f"unknown range tag {self.range_tag!r}")
        if not np.all(np.isfinite(data)):
            raise EnvmapError("non-finite radiance values")
        if np.any(data < 0):
            raise EnvmapError("negative radiance values")
        if self.range_tag == LDR and np.any(data > 1.0):
            raise EnvmapError("LDR map contains values above 1.0")
        data.setflags(write=False)
        object.__setattr__(self, "data", data)

    @classmethod
    def _wrap(cls, data: np.ndarray, range_tag: str) -> "EnvironmentMap":
        # internal fast path: caller guarantees the invariants hold
        obj = object.__new__(cls)
        data.setflags(write=False)
        object.__setattr__(obj, "data", data)
        object.__setattr__(obj, "range_tag", range_tag)
        object.__setattr__(obj, "strict_aspect", True)
        return obj

    @property
    def width(self) -> int:
        return self.data.shape[1]

    @property
    def height(self) -> int:
        return self.data.shape[0]

    @property
    def is_ldr(self) -> bool:
        return self.range_tag == LDR

    def with_data(self, data: np.ndarray, range_tag: str | None = None) -> "EnvironmentMap":
        return replace(self, data=data, range_tag=range_tag or self.range_tag)

    def luminance(self) -> np.ndarray:
        """Per-pixel luminance (height, width), no solid-angle weighting."""
        return self.data @ LUMA_COEFFS


@dataclass(frozen=True)
class HighIntensityMap:
    """Sigmoid-compressed above-LDR radiance, per channel, values in [0, 1)."""

    data: np.ndarray

    def __post_init__(self):
        data = _validate_image(self.data, "high-intensity map")
        if np.any(data >= 1.0):
            raise SaturationError("high-intensity values must be < 1")
        data.setflags(write=False)
        object.__setattr__(self, "data", data)

    @property
    def width(self) -> int:
        return self.data.shape[1]

    @property
    def height(self) -> int:
        return self.data.shape[0]

    def grayscale(self) -> np.ndarray:
        """Luminance view (height, width) of the per-channel values."""
        return self.data @ LUMA_COEFFS


@dataclass(frozen=True)
class SolidAngleWeights:
    """Steradians per pixel of an equirectangular grid; constant along rows."""

    width: int
    height: int
    per_row: np.ndarray  # (height,)

    def per_pixel(self) -> np.ndarray:
        """Broadcast to the full (height, width) grid."""
        return np.broadcast_to(self.per_row[:, None], (self.height, self.width))

    def total(self) -> float:
        return float(self.per_row.sum() * self.width)


def sigmoid_map(i):
    """Squeeze non-negative above-LDR intensity into [0, 1).

    Computes 2 / (1 + exp(-i)) - 1, evaluated as tanh(i/2) for numerical
    stability at large i.  Accepts scalars or arrays of any float dtype and
    preserves the input precision.
    """
    i = np.asanyarray(i)
    if np.any(i < 0):
        raise EnvmapError("sigmoid_map domain is i >= 0")
    out = np.tanh(i / 2)
    return out if out.ndim else out[()]


def sigmoid_unmap(m):
    """Invert :func:`sigmoid_map`: recover intensity from a squeezed value.

    Computes -ln(2 / (m + 1) - 1), evaluated as 2*atanh(m).  Raises
    :class:`SaturationError` for m >= 1 and :class:`EnvmapError` for m < 0.
    """
    m = np.asanyarray(m)
    if np.any(m < 0):
        raise EnvmapError("sigmoid_unmap domain is 0 <= m < 1")
    if np.any(m >= 1):
        raise SaturationError("sigmoid_unmap saturates at m = 1")
    out = 2 * np.arctanh(m)
    return out if out.ndim else out[()]


# Saturated generator outputs quantized to exactly 1.0 are pulled just
# inside the open interval instead of producing infinities.
SATURATION_CLAMP = 1.0 - 1e-7


def decompose(hdr: EnvironmentMap) -> tuple[EnvironmentMap, HighIntensityMap]:
    """Split an HDR map into its LDR part and a high-intensity map.

    The LDR part clamps radiance to [0, 1]; the overshoot max(radiance - 1, 0)
    is squeezed per channel with :func:`sigmoid_map`.  Input must be tagged
    HDR and already preprocessed (see :mod:`envlight.photometry`).
    """
    if hdr.is_ldr:
        raise EnvmapError("decompose expects an HDR-tagged map")
    ldr = np.clip(hdr.data, 0.0, 1.0)
    overshoot = np.maximum(hdr.data - 1.0, 0.0)
    # extreme radiance rounds tanh to exactly 1.0; keep the open interval
    hi = np.minimum(sigmoid_map(overshoot), np.nextafter(1.0, 0.0))
    return (
        EnvironmentMap(ldr, range_tag=LDR, strict_aspect=hdr.strict_aspect),
        HighIntensityMap(hi),
    )


def recompose(
    ldr: EnvironmentMap,
    hi: HighIntensityMap | np.ndarray,
    *,
    clamp_saturated: bool = True,
) -> EnvironmentMap:
    """Combine an LDR map and a high-intensity map back into HDR radiance.

    Per channel the output is ldr + sigmoid_unmap(hi).  Values of hi at or
    above 1 (possible after 8-bit quantization of generated maps) are pulled
    to just below 1 when ``clamp_saturated`` is set, otherwise rejected.
    """
    hi_data = hi.data if isinstance(hi, HighIntensityMap) else np.asarray(hi, dtype=np.float64)
    if ldr.data.shape != hi_data.shape:
        raise DimensionMismatchError(
            f"LDR {ldr.data.shape} vs high-intensity {hi_data.shape}"
        )
    if np.any(hi_data >= 1.0):
        if not clamp_saturated:
            raise SaturationError("high-intensity values >= 1")
        import warnings

        warnings.warn("clamping saturated high-intensity values below 1", stacklevel=2)
        hi_data = np.minimum(hi_data, SATURATION_CLAMP)
    # arithmetic follows the LDR part's precision so float32 pipelines stay
    # reproducible against their cached intensities
    out = ldr.data + sigmoid_unmap(hi_data).astype(ldr.data.dtype, copy=False)
    return EnvironmentMap(out, range_tag=HDR, strict_aspect=ldr.strict_aspect)


def recompose_grayscale(ldr: EnvironmentMap, hi_gray: np.ndarray) -> EnvironmentMap:
    """Recombine using a single-channel high-intensity image.

    The unmapped intensity scales the LDR pixel's chroma direction
    (RGB normalized to unit luminance), so output luminance equals
    LDR luminance plus the recovered intensity.  Black LDR pixels fall
    back to a neutral (1, 1, 1) direction.
    """
    hi_gray = np.asarray(hi_gray, dtype=np.float64)
    if hi_gray.shape != ldr.data.shape[:2]:
        raise DimensionMismatchError(
            f"LDR {ldr.data.shape[:2]} vs grayscale high-intensity {hi_gray.shape}"
        )
    intensity = sigmoid_unmap(np.minimum(hi_gray, SATURATION_CLAMP))
    lum = ldr.luminance()
    direction = np.ones_like(ldr.data)
    lit = lum > 1e-8
    direction[lit] = ldr.data[lit] / lum[lit, None]
    out = ldr.data + intensity[:, :, None] * direction
    return EnvironmentMap(out, range_tag=HDR, strict_aspect=ldr.strict_aspect)


def solid_angle_weights(width: int, height: int) -> SolidAngleWeights:
    """Per-row differential solid angle of an equirectangular grid.

    Each row's weight is the exact integral of sin(theta) over the row's
    polar-angle span times the column width 2*pi/width, i.e.
    (2*pi/width) * (cos(theta_top) - cos(theta_bottom)).  This equals the
    pixel-center form (2*pi/width) * 2*sin(pi/(2*height)) * sin(theta_center)
    and sums to 4*pi exactly, at every resolution.
    """
    if width != 2 * height:
        raise EnvmapError(f"equirectangular maps must be 2:1, got {width}x{height}")
    edges = np.arange(height + 1, dtype=np.float64) * (np.pi / height)
    per_row = (2.0 * np.pi / width) * (np.cos(edges[:-1]) - np.cos(edges[1:]))
    return SolidAngleWeights(width=width, height=height, per_row=per_row)


def resize(
    env: EnvironmentMap,
    new_width: int,
    new_height: int,
    *,
    enforce_aspect: bool = True,
) -> EnvironmentMap:
    """Bilinear resample in linear RGB.

    Longitude wraps horizontally; latitude clamps at the poles.  Output
    pixel centers map to input coordinates so an exact 2x downscale equals
    the mean of the covered texels.
    """
    if new_width <= 0 or new_height <= 0:
        raise EnvmapError("resize dimensions must be positive")
    if enforce_aspect and new_width != 2 * new_height:
        raise EnvmapError(f"resize target must be 2:1, got {new_width}x{new_height}")
    if (new_width, new_height) == (env.width, env.height):
        return env
    out = resample_bilinear(env.data, new_width, new_height)
    if env.is_ldr:
        out = np.clip(out, 0.0, 1.0)
    return EnvironmentMap(out, range_tag=env.range_tag, strict_aspect=enforce_aspect)


def resample_bilinear(data: np.ndarray, new_width: int, new_height: int) -> np.ndarray:
    """Bilinear resample of an (h, w, ...) image; x wraps, y clamps."""
    h, w = data.shape[:2]
    xs = (np.arange(new_width) + 0.5) * (w / new_width) - 0.5
    ys = (np.arange(new_height) + 0.5) * (h / new_height) - 0.5
    x0 = np.floor(xs).astype(int)
    y0 = np.floor(ys).astype(int)
    fx = xs - x0
    fy = ys - y0
    x0w = np.mod(x0, w)
    x1w = np.mod(x0 + 1, w)
    y0c = np.clip(y0, 0, h - 1)
    y1c = np.clip(y0 + 1, 0, h - 1)

    fy_col = fy[:, None]
    if data.ndim == 3:
        fx_row = fx[None, :, None]
        fy_col = fy[:, None, None]
    else:
        fx_row = fx[None, :]

    top = data[np.ix_(y0c, x0w)] * (1 - fx_row) + data[np.ix_(y0c, x1w)] * fx_row
    bot = data[np.ix_(y1c, x0w)] * (1 - fx_row) + data[np.ix_(y1c, x1w)] * fx_row
    return top * (1 - fy_col) + bot * fy_col


def rotate_columns(env: EnvironmentMap, shift: int) -> EnvironmentMap:
    """Horizontal rotation of the panorama by a whole number of columns."""
    return env.with_data(np.roll(env.data, shift, axis=1))


def pixel_directions(width: int, height: int) -> np.ndarray:
    """Unit direction (height, width, 3) at every pixel center.

    World frame: +Y up; yaw/pitch (0, 0) looks along +Z; longitude increases
    toward +X.  Column 0 is yaw -180 degrees, row 0 is pitch +90.
    """
    lon = (np.arange(width) + 0.5) / width * (2 * np.pi) - np.pi
    lat = np.pi / 2 - (np.arange(height) + 0.5) / height * np.pi
    lon_g, lat_g = np.meshgrid(lon, lat)
    cos_lat = np.cos(lat_g)
    return np.stack(
        [cos_lat * np.sin(lon_g), np.sin(lat_g), cos_lat * np.cos(lon_g)], axis=-1
    )


def directions_to_pixels(dirs: np.ndarray, width: int, height: int) -> tuple[np.ndarray, np.ndarray]:
    """Fractional (col, row) coordinates of unit directions; inverse of
    :func:`pixel_directions` at pixel centers."""
    x, y, z = dirs[..., 0], dirs[..., 1], dirs[..., 2]
    lon = np.arctan2(x, z)
    lat = np.arcsin(np.clip(y, -1.0, 1.0))
    col = (lon + np.pi) / (2 * np.pi) * width - 0.5
    row = (np.pi / 2 - lat) / np.pi * height - 0.5
    return col, row


def sample_bilinear(data: np.ndarray, col: np.ndarray, row: np.ndarray) -> np.ndarray:
    """Sample an (h, w, 3) image at fractional coordinates; x wraps, y clamps."""
    h, w = data.shape[:2]
    c0 = np.floor(col).astype(int)
    r0 = np.floor(row).astype(int)
    fc = (col - c0)[..., None]
    fr = (row - r0)[..., None]
    c0w, c1w = np.mod(c0, w), np.mod(c0 + 1, w)
    r0c, r1c = np.clip(r0, 0, h - 1), np.clip(r0 + 1, 0, h - 1)
    top = data[r0c, c0w] * (1 - fc) + data[r0c, c1w] * fc
    bot = data[r1c, c0w] * (1 - fc) + data[r1c, c1w] * fc
    return top * (1 - fr) + bot * fr
