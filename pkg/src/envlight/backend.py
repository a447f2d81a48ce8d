"""Generative-backend abstraction: a wire-level seam for the heavy
completion models.

Two steps are delegated: completing a partial LDR observation into ``n``
full panoramas, and estimating a high-intensity map from a completed LDR
panorama.  The bundled implementations are an in-process oracle that answers
from held-out ground truth (optionally perturbed, for exercising candidate
selection) and an HTTP client speaking the JSON+PNG protocol below, plus a
mock server that exposes any in-process backend over that protocol:

    POST /v1/complete       {prompt, n, width, height, observation_png_b64,
                             mask_png_b64, semantics_png_b64?}
                            -> {candidates: [png_b64, ...]}
    POST /v1/high_intensity {prompt, ldr_png_b64} -> {hi_png_b64}

All images are 8-bit PNG; the ``X-Image-Encoding`` header carries the pixel
transfer function (always ``linear`` here).  Errors come back as
{code, stage, message}.
"""

from __future__ import annotations

import base64
import io
import json
import threading
from dataclasses import dataclass
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer
from typing import Protocol

import numpy as np
import requests
from PIL import Image

from .context import ObservationMask
from .envmap import EnvironmentMap, HighIntensityMap, decompose, resize, rotate_columns

ENCODING_HEADER = "X-Image-Encoding"

TINT_RANGE = (0.7, 1.4)  # oracle decoy per-channel tints


class BackendError(RuntimeError):
    """Backend failure tagged with the pipeline stage it occurred in."""

    def __init__(self, stage: str, message: str, code: str = "backend_error"):
        super().__init__(f"[{stage}] {message}")
        self.stage = stage
        self.code = code


class Backend(Protocol):
    def complete_ldr(
        self,
        observation: EnvironmentMap,
        mask: ObservationMask,
        semantics: np.ndarray | None,
        prompt: str,
        n: int,
    ) -> list[EnvironmentMap]: ...

    def estimate_high_intensity(self, ldr: EnvironmentMap, prompt: str) -> HighIntensityMap: ...


@dataclass
class BackendDescriptor:
    """How to reach a backend: in-process oracle/fixture or remote service."""

    kind: str  # remote | oracle | fixture
    endpoint: str | None = None
    fixture_path: str | None = None
    timeout_ms: float = 30_000.0
    seed: int = 0
    perturb: bool = True

    def __post_init__(self):
        if self.kind not in ("remote", "oracle", "fixture"):
            raise ValueError(f"unknown backend kind {self.kind!r}")
        if self.kind == "remote" and not self.endpoint:
            raise ValueError("remote backend requires an endpoint")
        if self.kind in ("oracle", "fixture") and not self.fixture_path:
            raise ValueError(f"{self.kind} backend requires a fixture path")
        if self.timeout_ms <= 0:
            raise ValueError("timeout must be positive")

    def build(self) -> "Backend":
        if self.kind == "remote":
            return RemoteBackend(self.endpoint, timeout_ms=self.timeout_ms)
        from .hdr_io import load_hdr

        fixture = load_hdr(self.fixture_path)
        return OracleBackend(fixture, seed=self.seed, perturb=self.perturb)


class OracleBackend:
    """Answers from a held-out ground-truth fixture.

    ``complete_ldr`` returns the fixture's LDR part first, then n-1 copies
    perturbed by seeded per-channel tints in [0.7, 1.4] and horizontal
    rotations: recognizable decoys that exercise selection without being
    trivially separable.  ``estimate_high_intensity`` returns the fixture's
    high-intensity part.  Deterministic: repeated calls give identical
    results for the same arguments.
    """

    def __init__(self, fixture: EnvironmentMap, seed: int = 0, perturb: bool = True):
        if fixture.is_ldr:
            self._ldr = fixture
            self._hi = HighIntensityMap(np.zeros_like(fixture.data))
        else:
            self._ldr, self._hi = decompose(fixture)
        self.seed = seed
        self.perturb = perturb

    def complete_ldr(self, observation, mask, semantics, prompt, n):
        if n < 1:
            raise BackendError("ldr_completion", "n must be >= 1", code="bad_request")
        dims = (observation.width, observation.height)
        base = resize(self._ldr, *dims)
        candidates = [base]
        rng = np.random.default_rng(self.seed)
        for _ in range(n - 1):
            tint = rng.uniform(*TINT_RANGE, size=3)
            shift = int(rng.integers(0, base.width))
            decoy = np.clip(base.data * tint, 0.0, 1.0)
            cand = rotate_columns(base.with_data(decoy), shift) if self.perturb else base
            candidates.append(cand)
        return candidates

    def estimate_high_intensity(self, ldr, prompt):
        hi = self._hi
        if (ldr.width, ldr.height) != (hi.width, hi.height):
            from .envmap import resample_bilinear

            hi = HighIntensityMap(resample_bilinear(hi.data, ldr.width, ldr.height))
        return hi


class CountingBackend:
    """Transparent wrapper recording how often each backend call runs."""

    def __init__(self, inner: Backend):
        self.inner = inner
        self.complete_calls = 0
        self.hi_calls = 0

    def complete_ldr(self, *args, **kwargs):
        self.complete_calls += 1
        return self.inner.complete_ldr(*args, **kwargs)

    def estimate_high_intensity(self, *args, **kwargs):
        self.hi_calls += 1
        return self.inner.estimate_high_intensity(*args, **kwargs)


def _png_b64_from_unit(values: np.ndarray) -> str:
    quantized = np.clip(np.rint(np.asarray(values) * 255.0), 0, 255).astype(np.uint8)
    mode = "L" if quantized.ndim == 2 else "RGB"
    buf = io.BytesIO()
    Image.fromarray(quantized, mode=mode).save(buf, format="PNG")
    return base64.b64encode(buf.getvalue()).decode("ascii")


def _unit_from_png_b64(payload: str) -> np.ndarray:
    raw = base64.b64decode(payload)
    img = Image.open(io.BytesIO(raw))
    arr = np.asarray(img.convert("RGB") if img.mode != "L" else img, dtype=np.float64)
    return arr / 255.0


class RemoteBackend:
    """HTTP client for the completion protocol; images travel as linear
    8-bit PNGs."""

    def __init__(self, endpoint: str, timeout_ms: float = 30_000.0):
        self.endpoint = endpoint.rstrip("/")
        self.timeout_s = timeout_ms / 1000.0

    def _post(self, path: str, payload: dict, stage: str) -> dict:
        try:
            response = requests.post(
                f"{self.endpoint}{path}",
                json=payload,
                timeout=self.timeout_s,
                headers={ENCODING_HEADER: "linear"},
            )
        except requests.exceptions.Timeout as exc:
            raise BackendError(stage, f"timeout after {self.timeout_s}s", "timeout") from exc
        except requests.exceptions.RequestException as exc:
            raise BackendError(stage, str(exc), "connection") from exc
        if response.status_code != 200:
            try:
                detail = response.json()
            except ValueError:
                detail = {"message": response.text[:200]}
            raise BackendError(
                detail.get("stage", stage),
                detail.get("message", "remote error"),
                detail.get("code", f"http_{response.status_code}"),
            )
        try:
            return response.json()
        except ValueError as exc:
            raise BackendError(stage, "malformed JSON response", "protocol") from exc

    def complete_ldr(self, observation, mask, semantics, prompt, n):
        payload = {
            "prompt": prompt,
            "n": int(n),
            "width": observation.width,
            "height": observation.height,
            "observation_png_b64": _png_b64_from_unit(observation.data),
            "mask_png_b64": _png_b64_from_unit(mask.bits.astype(np.float64)),
        }
        if semantics is not None:
            payload["semantics_png_b64"] = _png_b64_from_unit(
                np.asarray(semantics, dtype=np.float64) / 255.0
            )
        body = self._post("/v1/complete", payload, "ldr_completion")
        candidates = body.get("candidates")
        if not isinstance(candidates, list) or len(candidates) != n:
            raise BackendError("ldr_retrieval", "bad candidate list", "protocol")
        out = []
        for b64 in candidates:
            data = _unit_from_png_b64(b64)
            if data.shape[:2] != (observation.height, observation.width):
                raise BackendError("ldr_retrieval", "candidate dimension mismatch", "protocol")
            out.append(EnvironmentMap(data, range_tag="LDR"))
        return out

    def estimate_high_intensity(self, ldr, prompt):
        payload = {"prompt": prompt, "ldr_png_b64": _png_b64_from_unit(ldr.data)}
        body = self._post("/v1/high_intensity", payload, "hi_estimation")
        if "hi_png_b64" not in body:
            raise BackendError("hi_retrieval", "missing hi_png_b64", "protocol")
        data = _unit_from_png_b64(body["hi_png_b64"])
        if data.shape[:2] != (ldr.height, ldr.width):
            raise BackendError("hi_retrieval", "high-intensity dimension mismatch", "protocol")
        return HighIntensityMap(np.minimum(data, 1.0 - 1e-7))


class _MockHandler(BaseHTTPRequestHandler):
    backend: Backend = None  # set by make_mock_server

    def log_message(self, *args):  # quiet by default
        pass

    def _fail(self, status: int, stage: str, message: str, code: str):
        body = json.dumps({"code": code, "stage": stage, "message": message}).encode()
        self.send_response(status)
        self.send_header("Content-Type", "application/json")
        self.send_header("Content-Length", str(len(body)))
        self.end_headers()
        self.wfile.write(body)

    def _ok(self, payload: dict):
        body = json.dumps(payload).encode()
        self.send_response(200)
        self.send_header("Content-Type", "application/json")
        self.send_header(ENCODING_HEADER, "linear")
        self.send_header("Content-Length", str(len(body)))
        self.end_headers()
        self.wfile.write(body)

    def do_POST(self):
        try:
            length = int(self.headers.get("Content-Length", "0"))
            request = json.loads(self.rfile.read(length))
        except (ValueError, json.JSONDecodeError):
            self._fail(400, "offload", "malformed JSON request", "bad_request")
            return
        try:
            if self.path == "/v1/complete":
                self._complete(request)
            elif self.path == "/v1/high_intensity":
                self._high_intensity(request)
            else:
                self._fail(404, "offload", f"unknown path {self.path}", "not_found")
        except BackendError as exc:
            self._fail(502, exc.stage, str(exc), exc.code)
        except KeyError as exc:
            self._fail(400, "offload", f"missing field {exc}", "bad_request")
        except Exception as exc:  # pragma: no cover - defensive
            self._fail(500, "offload", str(exc), "internal")

    def _complete(self, request: dict):
        n = int(request["n"])
        obs = _unit_from_png_b64(request["observation_png_b64"])
        bits = _unit_from_png_b64(request["mask_png_b64"])
        if bits.ndim == 3:
            bits = bits[..., 0]
        observation = EnvironmentMap(obs, range_tag="LDR")
        mask = ObservationMask(bits > 0.5)
        candidates = self.backend.complete_ldr(
            observation, mask, request.get("semantics_png_b64"), request["prompt"], n
        )
        self._ok({"candidates": [_png_b64_from_unit(c.data) for c in candidates]})

    def _high_intensity(self, request: dict):
        ldr = EnvironmentMap(_unit_from_png_b64(request["ldr_png_b64"]), range_tag="LDR")
        hi = self.backend.estimate_high_intensity(ldr, request["prompt"])
        self._ok({"hi_png_b64": _png_b64_from_unit(hi.data)})


def make_mock_server(backend: Backend, host: str = "127.0.0.1", port: int = 0) -> ThreadingHTTPServer:
    """HTTP server exposing ``backend`` over the wire protocol.  Call
    ``serve_forever`` (or :func:`serve_in_thread`) and ``shutdown`` to stop."""
    handler = type("BoundMockHandler", (_MockHandler,), {"backend": backend})
    return ThreadingHTTPServer((host, port), handler)


def serve_in_thread(server: ThreadingHTTPServer) -> threading.Thread:
    thread = threading.Thread(target=server.serve_forever, daemon=True)
    thread.start()
    return thread
