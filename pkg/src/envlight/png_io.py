"""8-bit PNG I/O for LDR maps, high-intensity maps, masks, and semantic maps.

LDR color images default to the sRGB transfer function on disk and linear
values in memory; pass ``transfer="linear"`` for datasets stored linearly.
High-intensity maps and masks are always stored linearly.  Semantic maps are
palette-indexed PNGs with class ids in [0, 149].
"""

from __future__ import annotations

import os

import numpy as np
from PIL import Image

from .envmap import LDR, EnvironmentMap, HighIntensityMap

SEMANTIC_CLASSES = 150


class PngFormatError(ValueError):
    """Unsupported or malformed PNG input."""


def srgb_decode(encoded: np.ndarray) -> np.ndarray:
    """sRGB-encoded [0, 1] to linear [0, 1] (IEC 61966-2-1)."""
    encoded = np.asarray(encoded, dtype=np.float64)
    return np.where(
        encoded <= 0.04045,
        encoded / 12.92,
        ((encoded + 0.055) / 1.055) ** 2.4,
    )


def srgb_encode(linear: np.ndarray) -> np.ndarray:
    """Linear [0, 1] to sRGB-encoded [0, 1]."""
    linear = np.asarray(linear, dtype=np.float64)
    return np.where(
        linear <= 0.0031308,
        linear * 12.92,
        1.055 * np.clip(linear, 0.0, None) ** (1 / 2.4) - 0.055,
    )


def _open_rgb8(path) -> np.ndarray:
    try:
        img = Image.open(path)
    except Exception as exc:
        raise PngFormatError(f"not a readable image: {path}") from exc
    if img.mode == "I;16" or img.mode.startswith("I"):
        raise PngFormatError(f"unsupported bit depth / mode {img.mode!r}")
    return np.asarray(img.convert("RGB"), dtype=np.uint8)


def load_ldr(
    path: str | os.PathLike,
    *,
    transfer: str = "srgb",
    strict_aspect: bool = True,
) -> EnvironmentMap:
    """Load an 8-bit PNG as an LDR-tagged, linear-RGB environment map."""
    raw = _open_rgb8(path).astype(np.float64) / 255.0
    data = srgb_decode(raw) if transfer == "srgb" else raw
    return EnvironmentMap(data, range_tag=LDR, strict_aspect=strict_aspect)


def save_ldr(env: EnvironmentMap, path: str | os.PathLike, *, transfer: str = "srgb") -> None:
    """Write an LDR map as 8-bit RGB PNG."""
    data = np.clip(env.data, 0.0, 1.0)
    encoded = srgb_encode(data) if transfer == "srgb" else data
    _write_rgb8(encoded, path)


def _write_rgb8(unit_values: np.ndarray, path) -> None:
    quantized = np.clip(np.rint(unit_values * 255.0), 0, 255).astype(np.uint8)
    Image.fromarray(quantized, mode="RGB").save(path, format="PNG")


def load_high_intensity(path: str | os.PathLike) -> HighIntensityMap:
    """Load a high-intensity map stored as a linear 8-bit PNG.

    Values quantized to exactly 255 are pulled just below 1.0 so the map
    stays inside the sigmoid's open range.
    """
    raw = _open_rgb8(path).astype(np.float64) / 255.0
    return HighIntensityMap(np.minimum(raw, 1.0 - 1e-7))


def save_high_intensity(hi: HighIntensityMap, path: str | os.PathLike) -> None:
    _write_rgb8(hi.data, path)


def load_mask(path: str | os.PathLike) -> np.ndarray:
    """Boolean (h, w) array from any PNG; nonzero means observed."""
    img = Image.open(path).convert("L")
    return np.asarray(img, dtype=np.uint8) > 127


def save_mask(bits: np.ndarray, path: str | os.PathLike) -> None:
    Image.fromarray(np.where(bits, 255, 0).astype(np.uint8), mode="L").save(path, "PNG")


def semantic_palette() -> np.ndarray:
    """Deterministic 150-entry RGB palette for semantic label PNGs.

    Entry k encodes the class id in hue (golden-angle spacing) with two
    brightness tiers, so adjacent ids get visually distinct colors.  The
    palette is part of the file contract: label k is stored as palette
    index k.
    """
    ids = np.arange(SEMANTIC_CLASSES)
    hue = (ids * 0.61803398875) % 1.0
    val = np.where(ids % 2 == 0, 0.9, 0.6)
    sat = np.full_like(hue, 0.75)
    h6 = hue * 6.0
    c = val * sat
    x = c * (1 - np.abs(h6 % 2 - 1))
    m = val - c
    sector = h6.astype(int) % 6
    r = np.choose(sector, [c, x, 0 * c, 0 * c, x, c])
    g = np.choose(sector, [x, c, c, x, 0 * c, 0 * c])
    b = np.choose(sector, [0 * c, 0 * c, x, c, c, x])
    rgb = np.stack([r + m, g + m, b + m], axis=1)
    return np.clip(np.rint(rgb * 255), 0, 255).astype(np.uint8)


def load_semantic(path: str | os.PathLike) -> np.ndarray:
    """Per-pixel class ids (h, w) from a palette-indexed PNG."""
    img = Image.open(path)
    if img.mode != "P":
        raise PngFormatError("semantic maps must be palette-indexed PNG")
    labels = np.asarray(img, dtype=np.int32)
    if labels.max(initial=0) >= SEMANTIC_CLASSES:
        raise PngFormatError(f"semantic label ids must be < {SEMANTIC_CLASSES}")
    return labels


def save_semantic(labels: np.ndarray, path: str | os.PathLike) -> None:
    labels = np.asarray(labels)
    if labels.min(initial=0) < 0 or labels.max(initial=0) >= SEMANTIC_CLASSES:
        raise PngFormatError(f"semantic label ids must be in [0, {SEMANTIC_CLASSES})")
    img = Image.fromarray(labels.astype(np.uint8), mode="P")
    img.putpalette(semantic_palette().flatten().tolist())
    img.save(path, "PNG")
