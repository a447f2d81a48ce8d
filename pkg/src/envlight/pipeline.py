"""Two-step estimation pipeline with on-device refinement and refresh.

``estimate`` runs the full flow: ambient labels feed the completion prompt,
the backend proposes ``n_outputs`` LDR completions, each is color-adapted to
the live observation, the best palette match wins, and the backend's
high-intensity estimate for the winner is recombined into the final HDR map.
``refresh`` re-runs only the on-device half (adaptation + selection +
recombination) against a newer camera observation, reusing the cached
candidates and high-intensity map without touching the backend.

The on-device half is the real-time path: candidates stay stacked in
float32, the observation-side refinement statistics are computed once per
frame, selection scores palettes on a shared subsample of observed pixels,
and only the winning candidate is materialized at full resolution inside
the frame budget (the rest realize lazily on access).
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np

from .backend import Backend, BackendError
from .context import ObservationMask, build_prompt_p1, build_prompt_p2
from .envmap import EnvironmentMap, HighIntensityMap, resize, sigmoid_unmap
from .photometry import AmbientLightReading, classify_ambient, cct_detail, mean_pixel_intensity
from .refinement import RefinementPlan, select_best_from_pixels

STAGE_NAMES = (
    "data_preparation",
    "offload",
    "ldr_completion",
    "ldr_retrieval",
    "refinement",
    "sync",
    "hi_estimation",
    "hi_retrieval",
)

# Backend-side stages, excluded from on-device latency budgets.
BACKEND_STAGES = ("ldr_completion", "hi_estimation")

DEFAULT_N_OUTPUTS = 5
# Palette extraction in the interactive path runs on a pixel subsample;
# exact palettes are only needed by the offline protocols.
SELECTION_SAMPLES = 512


@dataclass(frozen=True)
class EstimationRequest:
    observation: EnvironmentMap  # partial LDR observation, unobserved = 0
    mask: ObservationMask
    semantics: np.ndarray | None = None
    ambient: AmbientLightReading | None = None
    n_outputs: int = DEFAULT_N_OUTPUTS
    seed: int = 0

    def __post_init__(self):
        if self.n_outputs < 1:
            raise ValueError("n_outputs must be >= 1")
        if self.mask.bits.shape != self.observation.data.shape[:2]:
            raise ValueError("mask and observation dimensions differ")
        if not self.observation.is_ldr:
            raise ValueError("observation must be LDR-tagged")


@dataclass(frozen=True)
class EstimationResult:
    hdr: EnvironmentMap
    chosen_index: int
    hi_map: HighIntensityMap
    timings: dict[str, float]  # stage -> milliseconds
    raw_stack: np.ndarray = field(repr=False, default=None)  # (n, h, w, 3) float32
    fields_grid: np.ndarray | None = field(repr=False, default=None)  # (n, gr, gc, 3)
    plan: RefinementPlan | None = field(repr=False, default=None)
    winner: EnvironmentMap | None = field(repr=False, default=None)
    hi_linear: np.ndarray | None = field(repr=False, default=None)
    prompt_p1: str = ""
    prompt_p2: str = ""

    @cached_property
    def candidates(self) -> list[EnvironmentMap]:
        """Refined LDR candidates; materialized from the cached multiplier
        fields on first access (the winner is already realized)."""
        if self.fields_grid is None or self.plan is None:
            stack = self.raw_stack
        else:
            stack = self.plan.refine_stack(self.raw_stack, self.fields_grid)
        maps = [EnvironmentMap._wrap(row, "LDR") for row in stack]
        if self.winner is not None:
            maps[self.chosen_index] = self.winner
        return maps

    @property
    def raw_candidates(self) -> list[EnvironmentMap]:
        """Unrefined completions as returned by the backend."""
        return [EnvironmentMap._wrap(row, "LDR") for row in self.raw_stack]


class _StageClock:
    def __init__(self):
        self.timings = {name: 0.0 for name in STAGE_NAMES}

    def run(self, stage: str, fn):
        start = time.perf_counter()
        try:
            return fn()
        except BackendError:
            raise
        except Exception as exc:
            raise BackendError(stage, str(exc)) from exc
        finally:
            self.timings[stage] += (time.perf_counter() - start) * 1000.0


def ambient_from_observation(
    observation: EnvironmentMap, mask: ObservationMask
) -> AmbientLightReading:
    """Derive the ambient reading from the partial observation itself, for
    requests without sensor values."""
    bits = mask.bits
    if not bits.any():
        return AmbientLightReading(mean_intensity=0.0, total_luminance=0.0, cct_kelvin=5000.0)
    mean_rgb = observation.data[bits].mean(axis=0)
    if np.all(mean_rgb <= 0):
        return AmbientLightReading(mean_intensity=0.0, total_luminance=0.0, cct_kelvin=5000.0)
    detail = cct_detail(mean_rgb)
    return AmbientLightReading(
        mean_intensity=mean_pixel_intensity(observation, bits),
        total_luminance=0.0,  # not observable from a partial LDR view
        cct_kelvin=detail.kelvin,
        out_of_locus=detail.out_of_locus,
    )


def _refine_and_select(
    raw_stack: np.ndarray,
    observation: EnvironmentMap,
    mask: ObservationMask,
    seed: int,
    selection_samples: int | None,
):
    """One frame of the on-device path: multiplier fields for every
    candidate, palette selection on sampled refined pixels, and the winner
    materialized at full resolution.  Empty masks pass candidates through."""
    n = raw_stack.shape[0]
    if not mask.bits.any():
        winner = EnvironmentMap._wrap(raw_stack[0], "LDR")
        return None, None, 0, winner
    plan = RefinementPlan(observation, mask)
    fields = plan.fields_for_stack(raw_stack)
    chosen = 0
    if n > 1:
        flat = np.flatnonzero(mask.bits.ravel())
        if selection_samples is not None and flat.size > selection_samples:
            rng = np.random.default_rng(seed)
            flat = flat[rng.choice(flat.size, size=selection_samples, replace=False)]
        obs_px = observation.data.reshape(-1, 3)[flat]
        # refined values at the sampled pixels only: raw x patch multiplier
        pids = plan.patch_ids_for(flat)
        raw_px = raw_stack.reshape(n, -1, 3)[:, flat]
        mults = fields.reshape(n, -1, 3)[:, pids]
        cand_px = np.minimum(raw_px * mults.astype(raw_px.dtype), 1.0)
        chosen = select_best_from_pixels(list(cand_px), obs_px, seed=seed)
    winner_row = plan.refine_stack(raw_stack[chosen : chosen + 1],
                                   fields[chosen : chosen + 1])[0]
    return plan, fields, chosen, EnvironmentMap._wrap(winner_row, "LDR")


def estimate(
    request: EstimationRequest,
    backend: Backend,
    selection_samples: int | None = SELECTION_SAMPLES,
) -> EstimationResult:
    """Run the two-step generative estimation for one request."""
    clock = _StageClock()
    obs, mask = request.observation, request.mask

    def prepare():
        ambient = request.ambient or ambient_from_observation(obs, mask)
        labels = classify_ambient(ambient)
        return build_prompt_p1(labels), build_prompt_p2()

    prompt_p1, prompt_p2 = clock.run("data_preparation", prepare)

    # in-process backends make offload a no-op; remote cost sits in the call
    clock.run("offload", lambda: None)
    candidates_native = clock.run(
        "ldr_completion",
        lambda: backend.complete_ldr(obs, mask, request.semantics, prompt_p1, request.n_outputs),
    )

    def retrieve():
        dims = (obs.width, obs.height)
        sized = [
            c if (c.width, c.height) == dims else resize(c, *dims) for c in candidates_native
        ]
        return np.stack([c.data for c in sized]).astype(np.float32)

    raw_stack = clock.run("ldr_retrieval", retrieve)

    plan, fields, chosen, winner = clock.run(
        "refinement",
        lambda: _refine_and_select(raw_stack, obs, mask, request.seed, selection_samples),
    )

    clock.run("sync", lambda: None)  # winner index + multipliers handoff point
    hi = clock.run("hi_estimation", lambda: backend.estimate_high_intensity(winner, prompt_p2))

    def retrieve_hi():
        if (hi.width, hi.height) != (obs.width, obs.height):
            raise BackendError("hi_retrieval", "high-intensity dimension mismatch", "protocol")
        hi_linear = sigmoid_unmap(hi.data).astype(np.float32)
        # identical arithmetic to recompose(winner, hi)
        hdr = EnvironmentMap._wrap(winner.data + hi_linear, "HDR")
        return hdr, hi_linear

    hdr, hi_linear = clock.run("hi_retrieval", retrieve_hi)
    return EstimationResult(
        hdr=hdr,
        chosen_index=chosen,
        hi_map=hi,
        timings=clock.timings,
        raw_stack=raw_stack,
        fields_grid=fields,
        plan=plan,
        winner=winner,
        hi_linear=hi_linear,
        prompt_p1=prompt_p1,
        prompt_p2=prompt_p2,
    )


def refresh(
    result: EstimationResult,
    new_observation: EnvironmentMap,
    new_mask: ObservationMask,
    seed: int = 0,
    selection_samples: int | None = SELECTION_SAMPLES,
) -> EstimationResult:
    """Re-adapt cached candidates to a new observation without backend calls.

    Refinement and selection run against the new camera view; the cached
    high-intensity map is recombined with the new winner.
    """
    if result.raw_stack is None or result.raw_stack.shape[0] == 0:
        raise ValueError("result holds no cached candidates; run estimate first")
    dims = result.raw_stack.shape[1:]
    if new_observation.data.shape != dims:
        raise ValueError("new observation dimensions differ from cached candidates")
    if new_mask.bits.shape != dims[:2]:
        raise ValueError("new mask dimensions differ from cached candidates")

    clock = _StageClock()
    plan, fields, chosen, winner = clock.run(
        "refinement",
        lambda: _refine_and_select(result.raw_stack, new_observation, new_mask,
                                   seed, selection_samples),
    )

    def recombine():
        hi_linear = result.hi_linear
        if hi_linear is None:
            hi_linear = sigmoid_unmap(result.hi_map.data).astype(np.float32)
        return EnvironmentMap._wrap(winner.data + hi_linear, "HDR"), hi_linear

    hdr, hi_linear = clock.run("hi_retrieval", recombine)
    return EstimationResult(
        hdr=hdr,
        chosen_index=chosen,
        hi_map=result.hi_map,
        timings=clock.timings,
        raw_stack=result.raw_stack,
        fields_grid=fields,
        plan=plan,
        winner=winner,
        hi_linear=hi_linear,
        prompt_p1=result.prompt_p1,
        prompt_p2=result.prompt_p2,
    )


def on_device_ms(timings: dict[str, float]) -> float:
    """Total stage time excluding the backend inference stages."""
    return sum(ms for stage, ms in timings.items() if stage not in BACKEND_STAGES)
