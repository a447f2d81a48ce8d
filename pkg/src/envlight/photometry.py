"""Luminance, color temperature, preprocessing, and ambient classification.

Light intensity is the total luminance: the per-pixel luminance
``0.212671 R + 0.71516 G + 0.072169 B`` summed over the panorama weighted by
each pixel's differential solid angle.  Color temperature comes from the mean
RGB through CIE XYZ and a Planckian-locus nearest-point search.  The ambient
labels feed the text-prompt templates: intensity in [0.25, 0.40] and
temperature in [3500 K, 5500 K] are neutral; below/above are dark/bright and
warm/cool.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ._cie_data import CIE_1931_2DEG_5NM
from .envmap import LUMA_COEFFS, EnvironmentMap, solid_angle_weights

# Linear sRGB (D65) -> CIE XYZ
SRGB_TO_XYZ = np.array([
    [0.4124564, 0.3575761, 0.1804375],
    [0.2126729, 0.7151522, 0.0721750],
    [0.0193339, 0.1191920, 0.9503041],
])

# Intensity / temperature label thresholds; boundary values are neutral.
INTENSITY_DARK_MAX = 0.25
INTENSITY_BRIGHT_MIN = 0.40
TEMPERATURE_WARM_MAX = 3500.0
TEMPERATURE_COOL_MIN = 5500.0

# Planckian-locus search range and radiation constant (ITS-90).
CCT_MIN_K = 1000.0
CCT_MAX_K = 25000.0
_C2 = 1.4388e-2  # m K
MAX_LOCUS_DISTANCE = 0.05  # Delta-uv beyond which a stimulus is off-locus

PERCENTILE_TARGET = 0.9
PREPROCESS_GAMMA = 2.4


class DegenerateInputError(ValueError):
    """Statistic undefined for this input (all-black map, empty mask, ...)."""


@dataclass(frozen=True)
class AmbientLightReading:
    """Photometric measurements of a (partial) environment observation."""

    mean_intensity: float
    total_luminance: float
    cct_kelvin: float
    out_of_locus: bool = False


@dataclass(frozen=True)
class AmbientLabels:
    intensity_label: str  # dark | neutral | bright
    temperature_label: str  # warm | neutral | cool


@dataclass(frozen=True)
class ChromaticityPoint:
    """CIE chromaticity of a stimulus in the 1931 (x, y) and 1960 (u, v)
    systems; the latter is where locus distances are measured."""

    x: float
    y: float
    u: float
    v: float


@dataclass(frozen=True)
class CctResult:
    kelvin: float
    duv: float  # signed distance from the locus in 1960 uv (positive above)
    out_of_locus: bool


def luminance_image(env: EnvironmentMap) -> np.ndarray:
    return env.data @ LUMA_COEFFS


def total_luminance(env: EnvironmentMap) -> float:
    """Solid-angle-weighted luminance summed over the panorama."""
    weights = solid_angle_weights(env.width, env.height)
    return float(np.sum(luminance_image(env) * weights.per_row[:, None]))


def mean_pixel_intensity(env: EnvironmentMap, mask: np.ndarray | None = None) -> float:
    """Unweighted mean of per-pixel luminance, optionally over a mask.

    This is a pixel statistic of the (partial) LDR observation, so no
    solid-angle weighting is applied.
    """
    lum = luminance_image(env)
    if mask is None:
        return float(lum.mean())
    bits = _mask_bits(mask)
    if bits.shape != lum.shape:
        raise ValueError(f"mask {bits.shape} does not match map {lum.shape}")
    if not bits.any():
        raise DegenerateInputError("mean over an empty mask")
    return float(lum[bits].mean())


def _mask_bits(mask) -> np.ndarray:
    bits = getattr(mask, "bits", mask)
    return np.asarray(bits, dtype=bool)


def percentile_lower(values: np.ndarray, fraction: float) -> float:
    """Classic quantile: smallest value with CDF >= fraction."""
    flat = np.sort(np.asarray(values).ravel())
    idx = max(int(np.ceil(fraction * flat.size)) - 1, 0)
    return float(flat[idx])


def preprocess(
    env: EnvironmentMap,
    *,
    gamma_encoded: bool = False,
    percentile: float = 0.99,
    target: float = PERCENTILE_TARGET,
) -> EnvironmentMap:
    """Standardize an HDR map's exposure before decomposition.

    Optionally decodes a gamma-2.4-encoded source, then scales globally so
    the 99th percentile of per-pixel luminance equals 0.9.
    """
    data = env.data
    if gamma_encoded:
        data = data ** PREPROCESS_GAMMA
    lum = data @ LUMA_COEFFS
    anchor = percentile_lower(lum, percentile)
    if anchor <= 0.0:
        raise DegenerateInputError("luminance percentile is zero; cannot scale")
    return env.with_data(data * (target / anchor))


def chromaticity(rgb: np.ndarray) -> ChromaticityPoint:
    """CIE chromaticity of a linear sRGB triple."""
    rgb = np.asarray(rgb, dtype=np.float64)
    if np.all(rgb <= 0):
        raise DegenerateInputError("black input has no chromaticity")
    X, Y, Z = SRGB_TO_XYZ @ rgb
    s = X + Y + Z
    x, y = X / s, Y / s
    denom = X + 15.0 * Y + 3.0 * Z
    return ChromaticityPoint(x=x, y=y, u=4.0 * X / denom, v=6.0 * Y / denom)


def _planck_uv(temps: np.ndarray) -> np.ndarray:
    """(n, 2) CIE 1960 uv coordinates of Planckian radiators at ``temps``."""
    lam = CIE_1931_2DEG_5NM[:, 0] * 1e-9
    cmf = CIE_1931_2DEG_5NM[:, 1:]
    # constant factors of Planck's law cancel in the chromaticity quotient
    spectra = lam[None, :] ** -5.0 / np.expm1(_C2 / (lam[None, :] * temps[:, None]))
    XYZ = spectra @ cmf
    denom = XYZ[:, 0] + 15.0 * XYZ[:, 1] + 3.0 * XYZ[:, 2]
    return np.stack([4.0 * XYZ[:, 0] / denom, 6.0 * XYZ[:, 1] / denom], axis=1)


def _build_locus() -> tuple[np.ndarray, np.ndarray]:
    # 1% geometric steps cover 1000 K..25000 K in ~325 entries
    count = int(np.ceil(np.log(CCT_MAX_K / CCT_MIN_K) / np.log(1.01))) + 1
    temps = CCT_MIN_K * 1.01 ** np.arange(count)
    temps[-1] = min(temps[-1], CCT_MAX_K)
    return temps, _planck_uv(temps)


_LOCUS_T, _LOCUS_UV = _build_locus()


def cct_detail(mean_rgb: np.ndarray) -> CctResult:
    """Correlated color temperature of a linear RGB triple.

    Nearest-point search on the tabulated Planckian locus in CIE 1960 uv with
    parabolic refinement of the distance minimum.  Stimuli farther than
    Delta-uv 0.05 from the locus are flagged out-of-locus (nearest CCT still
    reported).
    """
    point = chromaticity(mean_rgb)
    du = _LOCUS_UV[:, 0] - point.u
    dv = _LOCUS_UV[:, 1] - point.v
    dist = np.hypot(du, dv)
    i = int(np.argmin(dist))
    j = min(max(i, 1), len(_LOCUS_T) - 2)
    t0, t1, t2 = _LOCUS_T[j - 1 : j + 2]
    d0, d1, d2 = dist[j - 1 : j + 2]
    denom = (t0 - t1) * (t0 - t2) * (t1 - t2)
    a = (t2 * (d1 - d0) + t1 * (d0 - d2) + t0 * (d2 - d1)) / denom
    b = (t2**2 * (d0 - d1) + t1**2 * (d2 - d0) + t0**2 * (d1 - d2)) / denom
    kelvin = float(-b / (2.0 * a)) if a > 0 else float(_LOCUS_T[i])
    kelvin = float(np.clip(kelvin, CCT_MIN_K, CCT_MAX_K))
    # sign: above the locus (greater v) is positive, following Delta-uv usage
    sign = 1.0 if point.v >= _LOCUS_UV[i, 1] else -1.0
    duv = sign * float(dist[i])
    return CctResult(kelvin=kelvin, duv=duv, out_of_locus=abs(duv) > MAX_LOCUS_DISTANCE)


def cct(mean_rgb: np.ndarray) -> float:
    return cct_detail(mean_rgb).kelvin


def mccamy_cct(mean_rgb: np.ndarray) -> float:
    """McCamy's cubic CCT approximation; kept as an independent cross-check
    of the locus search, not used by the pipeline."""
    point = chromaticity(mean_rgb)
    n = (point.x - 0.3320) / (0.1858 - point.y)
    return 449.0 * n**3 + 3525.0 * n**2 + 6823.3 * n + 5520.33


def measure(
    env: EnvironmentMap,
    mask: np.ndarray | None = None,
) -> AmbientLightReading:
    """Full photometric reading of a map: mean intensity, total luminance,
    and CCT of the (masked) mean RGB."""
    bits = None if mask is None else _mask_bits(mask)
    mean_rgb = env.data.reshape(-1, 3).mean(axis=0) if bits is None else env.data[bits].mean(axis=0)
    detail = cct_detail(mean_rgb)
    return AmbientLightReading(
        mean_intensity=mean_pixel_intensity(env, mask),
        total_luminance=total_luminance(env),
        cct_kelvin=detail.kelvin,
        out_of_locus=detail.out_of_locus,
    )


def classify_ambient(reading: AmbientLightReading) -> AmbientLabels:
    """Deterministic step-function labels; boundary values are neutral."""
    if reading.mean_intensity < INTENSITY_DARK_MAX:
        intensity = "dark"
    elif reading.mean_intensity > INTENSITY_BRIGHT_MIN:
        intensity = "bright"
    else:
        intensity = "neutral"
    if reading.cct_kelvin < TEMPERATURE_WARM_MAX:
        temperature = "warm"
    elif reading.cct_kelvin > TEMPERATURE_COOL_MIN:
        temperature = "cool"
    else:
        temperature = "neutral"
    return AmbientLabels(intensity_label=intensity, temperature_label=temperature)
