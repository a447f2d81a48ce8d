"""On-device estimation refinement: color appearance adaptation and
multi-output candidate selection.

Adaptation builds a per-pixel multiplier field from the ratio of observed to
estimated colors: one global ratio over the whole observed region plus an
8x8 grid of patch-local ratios, blended by a 3x3 median filter at patch
resolution to keep transitions between observed and generated regions
smooth.  Selection scores each refined candidate by the cosine similarity of
its dominant-color palette against the observation's palette.

The interactive pipeline refines five candidates per frame, so the
observation-side statistics are computed once per frame (RefinementPlan)
and candidates are adapted against it without materializing per-pixel
multiplier fields.
"""

from __future__ import annotations

import itertools
import warnings
from dataclasses import dataclass

import numpy as np
from scipy.ndimage import median_filter

from .context import ObservationMask
from .envmap import DimensionMismatchError, EnvironmentMap

MULTIPLIER_MIN = 0.1
MULTIPLIER_MAX = 10.0
MEAN_FLOOR = 1e-6
PATCH_GRID = (8, 8)
PALETTE_SIZE = 5
KMEANS_MAX_ITER = 50
KMEANS_TOL = 1e-4


@dataclass(frozen=True)
class ColorRefinementMatrix:
    """Per-pixel, per-channel positive multipliers for an LDR estimate."""

    multipliers: np.ndarray  # (h, w, 3)

    def __post_init__(self):
        m = np.asarray(self.multipliers)
        if m.dtype not in (np.float32, np.float64):
            m = m.astype(np.float64)
        if m.ndim != 3 or m.shape[2] != 3:
            raise ValueError(f"multipliers must be (h, w, 3), got {m.shape}")
        if np.any(m <= 0):
            raise ValueError("multipliers must be positive")
        m.setflags(write=False)
        object.__setattr__(self, "multipliers", m)

    @property
    def width(self) -> int:
        return self.multipliers.shape[1]

    @property
    def height(self) -> int:
        return self.multipliers.shape[0]


@dataclass(frozen=True)
class Palette:
    """The five dominant colors of an image region, weights summing to 1,
    sorted by descending weight."""

    colors: np.ndarray  # (5, 3)
    weights: np.ndarray  # (5,)

    def __post_init__(self):
        colors = np.asarray(self.colors, dtype=np.float64)
        weights = np.asarray(self.weights, dtype=np.float64)
        if colors.shape != (PALETTE_SIZE, 3) or weights.shape != (PALETTE_SIZE,):
            raise ValueError("palette must hold exactly five colors and weights")
        if not np.isclose(weights.sum(), 1.0, atol=1e-6):
            raise ValueError("palette weights must sum to 1")
        for arr in (colors, weights):
            arr.setflags(write=False)
        object.__setattr__(self, "colors", colors)
        object.__setattr__(self, "weights", weights)


def _bits(mask) -> np.ndarray:
    return np.asarray(getattr(mask, "bits", mask), dtype=bool)


def _effective_grid(grid: tuple[int, int], h: int, w: int) -> tuple[int, int]:
    # maps smaller than the grid fall back to one patch per pixel row/col
    return (min(grid[0], h), min(grid[1], w))


def _patch_edges(size: int, cells: int) -> np.ndarray:
    return (np.arange(cells + 1) * size) // cells


def _patch_sums(image: np.ndarray, grid: tuple[int, int]) -> np.ndarray:
    """Sum of an (h, w, ...) image over each grid cell -> (gr, gc, ...)."""
    gr, gc = grid
    h, w = image.shape[:2]
    rows = np.add.reduceat(image, _patch_edges(h, gr)[:-1], axis=0)
    return np.add.reduceat(rows, _patch_edges(w, gc)[:-1], axis=1)


def _ratio(obs_mean: np.ndarray, est_mean: np.ndarray) -> np.ndarray:
    ratio = obs_mean / np.maximum(est_mean, MEAN_FLOOR)
    return np.clip(ratio, MULTIPLIER_MIN, MULTIPLIER_MAX)


class RefinementPlan:
    """Observation-side statistics reused across candidates of one frame."""

    def __init__(self, observation: EnvironmentMap, mask: ObservationMask,
                 grid: tuple[int, int] = PATCH_GRID):
        bits = _bits(mask)
        if bits.shape != observation.data.shape[:2]:
            raise DimensionMismatchError(
                f"mask {bits.shape} vs observation {observation.data.shape[:2]}"
            )
        h, w = bits.shape
        self.grid = _effective_grid(grid, h, w)
        self.shape = (h, w)
        # blockwise application needs grid-aligned dimensions
        self.blockable = h % self.grid[0] == 0 and w % self.grid[1] == 0
        # float32 zeros/ones multiply exactly into either float width
        self.mask3 = bits[:, :, None].astype(np.float32)
        self.counts = _patch_sums(self.mask3[..., 0], self.grid)
        self.observed = self.counts > 0
        self.total_count = float(self.counts.sum())
        if self.total_count == 0:
            raise ValueError("refinement over an empty mask")
        # sparse statistics win when most of the panorama is unobserved
        # (the typical AR case: one low-FoV view covers ~15% of the sphere)
        if self.total_count < 0.5 * h * w:
            self.observed_index = np.flatnonzero(bits.ravel())
            row_cell = np.searchsorted(_patch_edges(h, self.grid[0])[1:],
                                       np.arange(h), side="right")
            col_cell = np.searchsorted(_patch_edges(w, self.grid[1])[1:],
                                       np.arange(w), side="right")
            pid_full = (row_cell[:, None] * self.grid[1] + col_cell[None, :]).ravel()
            self.observed_patch_ids = pid_full[self.observed_index]
        else:
            self.observed_index = None
            self.observed_patch_ids = None
        obs32 = observation.data.astype(np.float32, copy=False)
        self.obs_sums = self._stack_patch_sums(obs32[None])[0].astype(np.float64)
        self.obs_total = self.obs_sums.reshape(-1, 3).sum(axis=0)

    def masked_patch_sums(self, data: np.ndarray) -> np.ndarray:
        return _patch_sums(data * self.mask3, self.grid)

    def global_for(self, est_sums: np.ndarray) -> np.ndarray:
        est_total = est_sums.reshape(-1, 3).sum(axis=0)
        return _ratio(self.obs_total / self.total_count, est_total / self.total_count)

    def locals_for(self, est_sums: np.ndarray) -> np.ndarray:
        out = np.ones(self.grid + (3,), dtype=np.float64)
        counts = self.counts[self.observed][:, None]
        out[self.observed] = _ratio(
            self.obs_sums[self.observed] / counts, est_sums[self.observed] / counts
        )
        return out

    def field_for(self, est_data: np.ndarray) -> np.ndarray:
        """Median-smoothed patch-resolution multiplier field for a candidate."""
        est_sums = self.masked_patch_sums(est_data)
        locals_grid = self.locals_for(est_sums)
        field = np.where(self.observed[:, :, None], locals_grid,
                         self.global_for(est_sums)[None, None, :])
        field = median_filter(field, size=(3, 3, 1), mode="nearest")
        return np.clip(field, MULTIPLIER_MIN, MULTIPLIER_MAX)

    def upsample(self, field: np.ndarray) -> np.ndarray:
        h, w = self.shape
        gr, gc = self.grid
        if self.blockable:
            return np.repeat(np.repeat(field, h // gr, axis=0), w // gc, axis=1)
        row_cell = np.searchsorted(_patch_edges(h, gr)[1:], np.arange(h), side="right")
        col_cell = np.searchsorted(_patch_edges(w, gc)[1:], np.arange(w), side="right")
        return field[np.ix_(row_cell, col_cell)]

    def apply_field(self, est: EnvironmentMap, field: np.ndarray) -> EnvironmentMap:
        """Multiply a candidate by a patch field without materializing the
        per-pixel matrix; LDR results are clamped in place."""
        h, w = self.shape
        gr, gc = self.grid
        if self.blockable:
            blocks = est.data.reshape(gr, h // gr, gc, w // gc, 3)
            out = blocks * field.astype(est.data.dtype)[:, None, :, None, :]
            out = out.reshape(h, w, 3)
        else:
            out = est.data * self.upsample(field).astype(est.data.dtype)
        if est.is_ldr:
            np.clip(out, 0.0, 1.0, out=out)
        return EnvironmentMap._wrap(out, est.range_tag)

    def refine(self, est: EnvironmentMap) -> EnvironmentMap:
        return self.apply_field(est, self.field_for(est.data))

    def _stack_patch_sums(self, stack: np.ndarray) -> np.ndarray:
        b = stack.shape[0]
        h, w = self.shape
        gr, gc = self.grid
        if self.observed_index is not None:
            # sparse path: only observed pixels contribute to the sums
            gathered = stack.reshape(b, h * w, 3)[:, self.observed_index]
            pid = self.observed_patch_ids
            out = np.empty((b, gr * gc, 3))
            for i in range(b):
                for c in range(3):
                    out[i, :, c] = np.bincount(
                        pid, weights=gathered[i, :, c], minlength=gr * gc
                    )
            return out.reshape(b, gr, gc, 3)
        masked = stack * self.mask3[None]
        rows = np.add.reduceat(masked, _patch_edges(h, gr)[:-1], axis=1)
        return np.add.reduceat(rows, _patch_edges(w, gc)[:-1], axis=2)

    def fields_for_stack(self, stack: np.ndarray) -> np.ndarray:
        """Multiplier fields (b, gr, gc, 3) for a candidate stack (b, h, w, 3)."""
        est_sums = self._stack_patch_sums(stack)
        est_totals = est_sums.reshape(stack.shape[0], -1, 3).sum(axis=1)
        globals_b = _ratio(self.obs_total / self.total_count, est_totals / self.total_count)
        counts = np.maximum(self.counts, 1.0)[None, :, :, None]
        locals_b = _ratio(self.obs_sums[None] / counts, est_sums / counts)
        fields = np.where(self.observed[None, :, :, None], locals_b,
                          globals_b[:, None, None, :])
        fields = median_filter(fields, size=(1, 3, 3, 1), mode="nearest")
        return np.clip(fields, MULTIPLIER_MIN, MULTIPLIER_MAX)

    def refine_stack(
        self, stack: np.ndarray, fields: np.ndarray | None = None, is_ldr: bool = True
    ) -> np.ndarray:
        """Adapt every candidate in a stack at once; returns the refined stack."""
        if fields is None:
            fields = self.fields_for_stack(stack)
        fields = fields.astype(stack.dtype, copy=False)
        b = stack.shape[0]
        h, w = self.shape
        gr, gc = self.grid
        if self.blockable:
            blocks = stack.reshape(b, gr, h // gr, gc, w // gc, 3)
            out = blocks * fields[:, :, None, :, None, :]
            out = out.reshape(b, h, w, 3)
        else:
            cells = np.stack([self.upsample(f) for f in fields])
            out = stack * cells.astype(stack.dtype)
        if is_ldr:
            np.clip(out, 0.0, 1.0, out=out)
        return out

    def patch_ids_for(self, flat_index: np.ndarray) -> np.ndarray:
        """Patch id of each flattened pixel index (for sampled refinement)."""
        h, w = self.shape
        rows, cols = np.divmod(flat_index, w)
        row_cell = np.searchsorted(_patch_edges(h, self.grid[0])[1:], rows, side="right")
        col_cell = np.searchsorted(_patch_edges(w, self.grid[1])[1:], cols, side="right")
        return row_cell * self.grid[1] + col_cell


def global_multiplier(
    estimate: EnvironmentMap, observation: EnvironmentMap, mask: ObservationMask
) -> np.ndarray:
    """Per-channel ratio of mean observed to mean estimated color over the
    observed region; denominators floored, result clamped to [0.1, 10]."""
    if estimate.data.shape != observation.data.shape:
        raise DimensionMismatchError("estimate and observation dims must match")
    plan = RefinementPlan(observation, mask)
    return plan.global_for(plan.masked_patch_sums(estimate.data))


def local_multipliers(
    estimate: EnvironmentMap,
    observation: EnvironmentMap,
    mask: ObservationMask,
    grid: tuple[int, int] = PATCH_GRID,
) -> np.ndarray:
    """Per-patch mean ratios on the observed pixels; patches with no
    observation default to (1, 1, 1).  Returns (grid_rows, grid_cols, 3)."""
    bits = _bits(mask)
    grid = _effective_grid(grid, *bits.shape)
    mask3 = bits[:, :, None].astype(np.float64)
    obs_sums = _patch_sums(observation.data * mask3, grid)
    est_sums = _patch_sums(estimate.data * mask3, grid)
    counts = _patch_sums(mask3[..., 0], grid)
    out = np.ones(grid + (3,), dtype=np.float64)
    observed = counts > 0
    cnt = counts[observed][:, None]
    out[observed] = _ratio(obs_sums[observed] / cnt, est_sums[observed] / cnt)
    return out


def build_refinement_matrix(
    global_mult: np.ndarray,
    locals_grid: np.ndarray,
    mask: ObservationMask,
    dims: tuple[int, int],
) -> ColorRefinementMatrix:
    """Blend global and local multipliers into a per-pixel matrix.

    At patch granularity: observed patches carry their local ratio,
    unobserved patches the global ratio.  The patch field is smoothed with a
    per-channel 3x3 median filter before nearest-neighbor upsampling to
    pixel resolution, then clamped to [0.1, 10].
    """
    width, height = dims
    grid = locals_grid.shape[:2]
    bits = _bits(mask)
    counts = _patch_sums(bits.astype(np.float64), grid)
    field = np.where(
        (counts > 0)[:, :, None], locals_grid, np.asarray(global_mult)[None, None, :]
    )
    field = median_filter(field, size=(3, 3, 1), mode="nearest")
    field = np.clip(field, MULTIPLIER_MIN, MULTIPLIER_MAX)

    row_cell = np.searchsorted(_patch_edges(height, grid[0])[1:], np.arange(height), side="right")
    col_cell = np.searchsorted(_patch_edges(width, grid[1])[1:], np.arange(width), side="right")
    return ColorRefinementMatrix(field[np.ix_(row_cell, col_cell)])


def refine(
    estimate: EnvironmentMap,
    observation: EnvironmentMap,
    mask: ObservationMask,
    grid: tuple[int, int] = PATCH_GRID,
) -> tuple[EnvironmentMap, ColorRefinementMatrix]:
    """Full adaptation of one candidate: multipliers, matrix, application."""
    plan = RefinementPlan(observation, mask, grid)
    field = plan.field_for(estimate.data)
    matrix = ColorRefinementMatrix(plan.upsample(field))
    return plan.apply_field(estimate, field), matrix


def apply_refinement(estimate: EnvironmentMap, matrix: ColorRefinementMatrix) -> EnvironmentMap:
    """Per-pixel product of the estimate and the multiplier matrix; LDR
    outputs are clamped back to [0, 1]."""
    if matrix.multipliers.shape != estimate.data.shape:
        raise DimensionMismatchError(
            f"matrix {matrix.multipliers.shape} vs map {estimate.data.shape}"
        )
    out = estimate.data * matrix.multipliers
    if estimate.is_ldr:
        out = np.clip(out, 0.0, 1.0)
    return estimate.with_data(out)


def _kmeans_pp_init(pixels: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    centroids = np.empty((k, 3), dtype=pixels.dtype)
    centroids[0] = pixels[rng.integers(pixels.shape[0])]
    d2 = ((pixels - centroids[0]) ** 2).sum(axis=1)
    for i in range(1, k):
        total = d2.sum()
        if total <= 0:  # all remaining pixels coincide with a centroid
            centroids[i:] = centroids[i - 1]
            break
        centroids[i] = pixels[rng.choice(pixels.shape[0], p=d2 / total)]
        d2 = np.minimum(d2, ((pixels - centroids[i]) ** 2).sum(axis=1))
    return centroids


def _lloyd(pixels: np.ndarray, centroids: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Lloyd iterations; returns final centroids and cluster populations."""
    labels = np.zeros(pixels.shape[0], dtype=np.intp)
    counts = np.zeros(PALETTE_SIZE)
    for _ in range(KMEANS_MAX_ITER):
        # argmin over ||x - c||^2; the x^2 term is constant per pixel
        scores = (centroids**2).sum(axis=1)[None, :] - 2.0 * (pixels @ centroids.T)
        labels = scores.argmin(axis=1)
        counts = np.bincount(labels, minlength=PALETTE_SIZE).astype(np.float64)
        sums = np.stack(
            [np.bincount(labels, weights=pixels[:, c], minlength=PALETTE_SIZE)
             for c in range(3)], axis=1,
        )
        live = counts > 0
        new = centroids.copy()
        new[live] = (sums[live] / counts[live, None]).astype(centroids.dtype)
        moved = float(np.abs(new - centroids).max())
        centroids = new
        if moved < KMEANS_TOL:
            break
    return centroids, counts


def extract_palette(
    env: EnvironmentMap,
    mask: ObservationMask | None = None,
    seed: int = 0,
    max_samples: int | None = None,
) -> Palette:
    """Dominant-color palette by k-means (k=5) on linear-RGB pixels.

    Seeded k-means++ initialization, Lloyd iterations capped at 50 or until
    centroids move less than 1e-4.  ``max_samples`` subsamples the pixel pool
    deterministically for real-time callers; pass None for exact statistics.
    """
    pixels = env.data.reshape(-1, 3) if mask is None else env.data[_bits(mask)]
    if pixels.shape[0] == 0:
        raise ValueError("palette extraction over an empty region")
    rng = np.random.default_rng(seed)
    if max_samples is not None and pixels.shape[0] > max_samples:
        pixels = pixels[rng.choice(pixels.shape[0], size=max_samples, replace=False)]
    distinct = np.unique(pixels, axis=0)
    if distinct.shape[0] < PALETTE_SIZE:
        warnings.warn(
            f"only {distinct.shape[0]} distinct colors; palette will repeat centroids",
            stacklevel=2,
        )
    centroids, counts = _lloyd(pixels, _kmeans_pp_init(pixels, PALETTE_SIZE, rng))
    weights = counts / counts.sum()
    order = np.argsort(-weights, kind="stable")
    return Palette(colors=centroids[order], weights=weights[order])


def palette_similarity(a: Palette, b: Palette) -> float:
    """Summed per-color cosine similarity under the best one-to-one pairing.

    All 120 pairings of the two five-color palettes are scored exactly;
    zero-norm colors contribute 0.  Range [-5, 5]; 5 means every color pair
    is collinear.
    """
    return _pairing_score(a.colors, b.colors)


def _cosine_table(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    na = np.linalg.norm(a, axis=1)
    nb = np.linalg.norm(b, axis=1)
    table = a @ b.T
    denom = na[:, None] * nb[None, :]
    return np.where(denom > 1e-12, table / np.where(denom > 0, denom, 1.0), 0.0)


def select_best(
    candidates: list[EnvironmentMap],
    observation: EnvironmentMap,
    mask: ObservationMask | None,
    seed: int = 0,
    max_samples: int | None = None,
) -> int:
    """Index of the candidate whose observed-region palette best matches the
    observation's; ties resolve to the lowest index."""
    if not candidates:
        raise ValueError("select_best needs at least one candidate")
    target = extract_palette(observation, mask, seed=seed, max_samples=max_samples)
    best_idx = 0
    best_score = -np.inf
    for i, cand in enumerate(candidates):
        score = palette_similarity(
            extract_palette(cand, mask, seed=seed, max_samples=max_samples), target
        )
        if score > best_score:
            best_idx, best_score = i, score
    return best_idx


def _palette_colors(pixels: np.ndarray, seed: int) -> np.ndarray:
    rng = np.random.default_rng(seed)
    centroids, _ = _lloyd(pixels, _kmeans_pp_init(pixels, PALETTE_SIZE, rng))
    return centroids


# all 120 one-to-one pairings of two five-color palettes
_PERMUTATIONS = np.array(list(itertools.permutations(range(PALETTE_SIZE))))
_PERM_ROWS = np.broadcast_to(np.arange(PALETTE_SIZE), _PERMUTATIONS.shape)


def _pairing_score(a_colors: np.ndarray, b_colors: np.ndarray) -> float:
    table = _cosine_table(a_colors, b_colors)
    return float(table[_PERM_ROWS, _PERMUTATIONS].sum(axis=1).max())


def _batched_pp_init(sets: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    """K-means++ seeding for several pixel sets at once (D^2 sampling by
    inverse CDF)."""
    b, n, _ = sets.shape
    centroids = np.empty((b, PALETTE_SIZE, 3), dtype=sets.dtype)
    rows = np.arange(b)
    centroids[:, 0] = sets[rows, rng.integers(0, n, size=b)]
    d2 = ((sets - centroids[:, 0:1]) ** 2).sum(axis=-1)
    for k in range(1, PALETTE_SIZE):
        cdf = np.cumsum(d2, axis=1)
        draws = rng.random(b) * cdf[:, -1]
        picks = np.empty(b, dtype=np.intp)
        for i in range(b):  # b is small (candidates + observation)
            picks[i] = min(np.searchsorted(cdf[i], draws[i], side="right"), n - 1)
        centroids[:, k] = sets[rows, picks]
        d2 = np.minimum(d2, ((sets - centroids[:, k : k + 1]) ** 2).sum(axis=-1))
    return centroids


def _lloyd_batch_numpy(sets: np.ndarray, centroids: np.ndarray) -> np.ndarray:
    ar = np.arange(PALETTE_SIZE)
    for _ in range(KMEANS_MAX_ITER):
        cross = sets @ centroids.transpose(0, 2, 1)
        scores = (centroids**2).sum(axis=2)[:, None, :] - 2.0 * cross
        labels = scores.argmin(axis=2)
        onehot = (labels[:, :, None] == ar).astype(sets.dtype)
        counts = onehot.sum(axis=1)
        sums = onehot.transpose(0, 2, 1) @ sets
        live = counts > 0
        new = centroids.copy()
        new[live] = sums[live] / counts[live][:, None]
        moved = float(np.abs(new - centroids).max())
        centroids = new
        if moved < KMEANS_TOL:
            break
    return centroids


_lloyd_batch_jit = None


def _get_lloyd_batch():
    """Compiled Lloyd loop for the interactive path; numpy fallback when
    numba is unavailable."""
    global _lloyd_batch_jit
    if _lloyd_batch_jit is not None:
        return _lloyd_batch_jit
    try:
        from numba import njit
    except ImportError:
        _lloyd_batch_jit = _lloyd_batch_numpy
        return _lloyd_batch_jit

    @njit(cache=True)
    def lloyd(sets, centroids, max_iter, tol):
        b, n, _ = sets.shape
        k = centroids.shape[1]
        counts = np.zeros((b, k))
        sums = np.zeros((b, k, 3))
        for _ in range(max_iter):
            moved = 0.0
            for bi in range(b):
                for kk in range(k):
                    counts[bi, kk] = 0.0
                    for c in range(3):
                        sums[bi, kk, c] = 0.0
                for i in range(n):
                    best = 0
                    best_d = np.inf
                    for kk in range(k):
                        d = 0.0
                        for c in range(3):
                            diff = sets[bi, i, c] - centroids[bi, kk, c]
                            d += diff * diff
                        if d < best_d:
                            best_d = d
                            best = kk
                    counts[bi, best] += 1.0
                    for c in range(3):
                        sums[bi, best, c] += sets[bi, i, c]
                for kk in range(k):
                    if counts[bi, kk] > 0.0:
                        for c in range(3):
                            value = sums[bi, kk, c] / counts[bi, kk]
                            delta = abs(value - centroids[bi, kk, c])
                            if delta > moved:
                                moved = delta
                            centroids[bi, kk, c] = value
            if moved < tol:
                break
        return centroids

    def run(sets, centroids):
        out = lloyd(sets.astype(np.float64), centroids.astype(np.float64),
                    KMEANS_MAX_ITER, KMEANS_TOL)
        return out.astype(sets.dtype)

    _lloyd_batch_jit = run
    return _lloyd_batch_jit


def _batched_palette_colors(pixel_sets: np.ndarray, seed: int) -> np.ndarray:
    """K-means++ plus Lloyd run on (b, n, 3) pixel sets together; iterates
    until every set's centroids settle.  Returns (b, 5, 3)."""
    rng = np.random.default_rng(seed)
    centroids = _batched_pp_init(pixel_sets, rng)
    return _get_lloyd_batch()(pixel_sets, centroids)


def select_best_from_pixels(
    candidate_pixels: list[np.ndarray], observation_pixels: np.ndarray, seed: int = 0
) -> int:
    """Selection over pre-gathered pixel samples (the interactive path:
    one shared masked sample set for all candidates).  Same palette
    machinery and tie rule as :func:`select_best`."""
    sets = np.stack(
        [np.asarray(p, dtype=np.float32) for p in candidate_pixels]
        + [np.asarray(observation_pixels, dtype=np.float32)]
    )
    palettes = _batched_palette_colors(sets, seed)
    target = palettes[-1]
    best_idx = 0
    best_score = -np.inf
    for i in range(len(candidate_pixels)):
        score = _pairing_score(palettes[i], target)
        if score > best_score:
            best_idx, best_score = i, score
    return best_idx
