"""Radiance RGBE (.hdr) reader and writer.

Implements the classic shared-exponent format: "#?RADIANCE" header,
``FORMAT=32-bit_rle_rgbe``, ``-Y <h> +X <w>`` orientation, and adaptive
run-length-encoded scanlines for widths in [8, 32767] (flat scanlines
otherwise).  Decoding follows Radiance's convention of reading each
mantissa byte at the center of its quantization bucket, which keeps
round-trip error well under 1%.
"""

from __future__ import annotations

import io
import math
import os
import warnings

import numpy as np

from .envmap import HDR, EnvironmentMap

_MAGIC = b"#?RADIANCE"
_FORMAT = b"FORMAT=32-bit_rle_rgbe"


class RadianceFormatError(ValueError):
    """Malformed or truncated Radiance RGBE file."""


def rgbe_to_float(rgbe: np.ndarray) -> np.ndarray:
    """Decode uint8 (..., 4) RGBE to float (..., 3) linear radiance."""
    mantissa = rgbe[..., :3].astype(np.float64)
    exponent = rgbe[..., 3].astype(np.int32)
    scale = np.ldexp(1.0, exponent - 136)  # 2^(e - 128 - 8)
    out = (mantissa + 0.5) * scale[..., None]
    out[exponent == 0] = 0.0
    return out


def float_to_rgbe(rgb: np.ndarray) -> np.ndarray:
    """Encode float (..., 3) linear radiance to uint8 (..., 4) RGBE."""
    rgb = np.asarray(rgb, dtype=np.float64)
    peak = rgb.max(axis=-1)
    mant, expo = np.frexp(peak)
    scale = np.where(peak > 1e-32, mant * 256.0 / np.where(peak > 0, peak, 1.0), 0.0)
    out = np.zeros(rgb.shape[:-1] + (4,), dtype=np.uint8)
    coded = np.minimum(rgb * scale[..., None], 255.0).astype(np.uint8)
    live = peak > 1e-32
    out[..., :3] = np.where(live[..., None], coded, 0)
    out[..., 3] = np.where(live, expo + 128, 0).astype(np.uint8)
    return out


def _read_header(stream: io.BufferedReader) -> tuple[int, int]:
    first = stream.readline()
    if not first.startswith(_MAGIC):
        raise RadianceFormatError("missing #?RADIANCE magic")
    has_format = False
    while True:
        line = stream.readline()
        if line == b"":
            raise RadianceFormatError("unexpected end of header")
        line = line.rstrip(b"\n")
        if line == b"":
            break  # blank line ends the header
        if line.startswith(b"FORMAT="):
            if line != _FORMAT:
                raise RadianceFormatError(f"unsupported format {line!r}")
            has_format = True
        # other header variables (EXPOSURE etc.) are tolerated and ignored
    if not has_format:
        raise RadianceFormatError("header missing FORMAT line")
    dims = stream.readline().rstrip(b"\n").split()
    if len(dims) != 4 or dims[0] != b"-Y" or dims[2] != b"+X":
        raise RadianceFormatError(f"unsupported orientation {dims!r}")
    try:
        height, width = int(dims[1]), int(dims[3])
    except ValueError as exc:
        raise RadianceFormatError("bad resolution line") from exc
    if height <= 0 or width <= 0:
        raise RadianceFormatError("non-positive dimensions")
    return width, height


def _read_exact(stream, n: int) -> bytes:
    buf = stream.read(n)
    if len(buf) != n:
        raise RadianceFormatError("truncated scanline data")
    return buf


def _read_scanline(stream, width: int) -> np.ndarray:
    head = _read_exact(stream, 4)
    if width < 8 or width > 0x7FFF or head[0] != 2 or head[1] != 2:
        # flat (possibly old-style RLE) scanline; head holds the first pixel
        return _read_flat_scanline(stream, width, head)
    if (head[2] << 8 | head[3]) != width:
        raise RadianceFormatError("scanline width mismatch")
    rgbe = np.empty((width, 4), dtype=np.uint8)
    for c in range(4):
        pos = 0
        while pos < width:
            code = _read_exact(stream, 1)[0]
            if code > 128:  # run
                count = code - 128
                if pos + count > width:
                    raise RadianceFormatError("RLE run overflows scanline")
                rgbe[pos : pos + count, c] = _read_exact(stream, 1)[0]
            else:  # literal
                count = code
                if count == 0 or pos + count > width:
                    raise RadianceFormatError("bad RLE literal length")
                rgbe[pos : pos + count, c] = np.frombuffer(
                    _read_exact(stream, count), np.uint8
                )
            pos += count
    return rgbe


def _read_flat_scanline(stream, width: int, first: bytes) -> np.ndarray:
    rgbe = np.empty((width, 4), dtype=np.uint8)
    rgbe[0] = np.frombuffer(first, np.uint8)
    pos = 1
    while pos < width:
        px = np.frombuffer(_read_exact(stream, 4), np.uint8)
        if px[0] == 1 and px[1] == 1 and px[2] == 1:
            # old-style run: repeat previous pixel px[3] times (shifted count)
            count = int(px[3])
            if pos + count > width or pos == 0:
                raise RadianceFormatError("old-style run overflows scanline")
            rgbe[pos : pos + count] = rgbe[pos - 1]
            pos += count
        else:
            rgbe[pos] = px
            pos += 1
    return rgbe


def load_hdr(path: str | os.PathLike, *, strict_aspect: bool = True) -> EnvironmentMap:
    """Load a Radiance RGBE file as an HDR-tagged environment map.

    ``strict_aspect=False`` downgrades a non-2:1 aspect from an error to a
    warning and keeps the image as-is.
    """
    with open(path, "rb") as fh:
        stream = io.BufferedReader(fh)
        width, height = _read_header(stream)
        rows = np.empty((height, width, 4), dtype=np.uint8)
        for y in range(height):
            rows[y] = _read_scanline(stream, width)
    data = rgbe_to_float(rows)
    if width != 2 * height and not strict_aspect:
        warnings.warn(f"non-panoramic aspect {width}x{height}", stacklevel=2)
    return EnvironmentMap(data, range_tag=HDR, strict_aspect=strict_aspect)


def save_hdr(env: EnvironmentMap, path: str | os.PathLike) -> None:
    """Write an environment map as Radiance RGBE with RLE scanlines."""
    data = env.data
    if not np.all(np.isfinite(data)) or np.any(data < 0):
        raise ValueError("RGBE requires finite, non-negative radiance")
    rgbe = float_to_rgbe(data)
    height, width = rgbe.shape[:2]
    with open(path, "wb") as fh:
        fh.write(_MAGIC + b"\n")
        fh.write(b"# written by envlight\n")
        fh.write(_FORMAT + b"\n\n")
        fh.write(f"-Y {height} +X {width}\n".encode())
        if width < 8 or width > 0x7FFF:
            fh.write(rgbe.tobytes())
            return
        for y in range(height):
            fh.write(bytes([2, 2, width >> 8, width & 0xFF]))
            for c in range(4):
                fh.write(_rle_encode(rgbe[y, :, c]))


def _rle_encode(values: np.ndarray) -> bytes:
    """Adaptive RLE for one scanline component: runs of >= 4 equal bytes
    become (128 + count, value); everything else is emitted literally."""
    out = bytearray()
    n = len(values)
    pos = 0
    while pos < n:
        run_len = 1
        while pos + run_len < n and run_len < 127 and values[pos + run_len] == values[pos]:
            run_len += 1
        if run_len >= 4:
            out.append(128 + run_len)
            out.append(int(values[pos]))
            pos += run_len
            continue
        lit_start = pos
        pos += run_len
        while pos < n and pos - lit_start < 128:
            nxt = 1
            while pos + nxt < n and nxt < 4 and values[pos + nxt] == values[pos]:
                nxt += 1
            if nxt >= 4:
                break
            pos += 1
        chunk = values[lit_start:pos]
        out.append(len(chunk))
        out.extend(chunk.tobytes())
    return bytes(out)


def rgbe_quantization_bound(value: float) -> float:
    """Worst-case relative error of one RGBE encode/decode at ``value``."""
    if value <= 0:
        return 0.0
    mant, _ = math.frexp(value)
    return 0.5 / (mant * 256.0)
