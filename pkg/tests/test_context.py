import json
import math

import numpy as np
import pytest
from scipy.ndimage import binary_dilation
from scipy.stats import chi2

from envlight.context import (
    PROMPT_P2,
    ObservationMask,
    ViewError,
    ViewSpec,
    apply_mask,
    build_prompt_p1,
    build_prompt_p2,
    compose_masks,
    project_view_mask,
    sample_random_views,
    stitch_observation,
)
from envlight.envmap import EnvironmentMap, directions_to_pixels
from envlight.photometry import AmbientLabels


def uniform_env(value, w=64, h=32):
    return EnvironmentMap(np.full((h, w, 3), value), range_tag="LDR")


class TestViewSpec:
    def test_vfov_derivation(self):
        view = ViewSpec(yaw=0, pitch=0, hfov=90, aspect=1.0)
        assert abs(view.vfov - 90.0) < 1e-9
        wide = ViewSpec(yaw=0, pitch=0, hfov=90, aspect=2.0)
        assert abs(wide.vfov - math.degrees(2 * math.atan(0.5))) < 1e-9

    def test_cube_face_solid_angle(self):
        # a 90x90 degree frustum is exactly one cube face: 4*pi/6 sr
        view = ViewSpec(yaw=0, pitch=0, hfov=90, aspect=1.0)
        assert abs(view.solid_angle() - 4 * np.pi / 6) < 1e-12

    def test_solid_angle_against_monte_carlo(self):
        view = ViewSpec(yaw=0, pitch=0, hfov=110, aspect=4 / 3)
        rng = np.random.default_rng(0)
        dirs = rng.normal(size=(400_000, 3))
        dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
        tan_h = math.tan(math.radians(view.hfov) / 2)
        tan_v = math.tan(math.radians(view.vfov) / 2)
        z = dirs[:, 2]
        inside = (z > 0) & (np.abs(dirs[:, 0]) <= z * tan_h) & (np.abs(dirs[:, 1]) <= z * tan_v)
        mc = inside.mean() * 4 * np.pi
        assert abs(mc - view.solid_angle()) / view.solid_angle() < 0.02

    def test_invalid_specs(self):
        with pytest.raises(ViewError):
            ViewSpec(yaw=0, pitch=0, hfov=180.0)
        with pytest.raises(ViewError):
            ViewSpec(yaw=0, pitch=91.0, hfov=60.0)
        with pytest.raises(ViewError):
            ViewSpec(yaw=0, pitch=0, hfov=60.0, aspect=0.0)

    def test_json_round_trip(self):
        view = ViewSpec(yaw=120.0, pitch=-15.0, hfov=75.0, aspect=1.5, roll=10.0)
        assert ViewSpec.from_dict(json.loads(json.dumps(view.to_dict()))) == view


class TestProjectViewMask:
    def test_cube_face_coverage(self):
        view = ViewSpec(yaw=0, pitch=0, hfov=90, aspect=1.0)
        mask = project_view_mask(view, 1024, 512)
        analytic = view.solid_angle() / (4 * np.pi)  # exactly 1/6
        assert abs(mask.coverage_fraction / analytic - 1.0) < 0.01

    def test_coverage_converges_with_resolution(self):
        view = ViewSpec(yaw=35.0, pitch=20.0, hfov=75.0, aspect=4 / 3)
        analytic = view.solid_angle() / (4 * np.pi)
        errors = []
        for height in (64, 256):
            mask = project_view_mask(view, 2 * height, height)
            errors.append(abs(mask.coverage_fraction / analytic - 1.0))
        assert errors[1] < 0.01
        assert errors[1] <= errors[0]

    def test_tiny_fov_empty(self):
        mask = project_view_mask(ViewSpec(yaw=0, pitch=0, hfov=0.5), 128, 64)
        assert mask.bits.sum() == 0

    def test_top_pole_cap(self):
        mask = project_view_mask(ViewSpec(yaw=0, pitch=90, hfov=90, aspect=1.0), 128, 64)
        bits = mask.bits
        assert bits[0].all()  # top row fully covered
        assert not bits[32:].any()  # nothing below mid-latitude
        # the square cap has 4-fold symmetry: half-width roll maps it to itself
        assert np.array_equal(bits, np.roll(bits, 64, axis=1))

    def test_mask_pixels_reconstruct_into_frustum(self):
        from envlight.envmap import pixel_directions

        rng = np.random.default_rng(21)
        for _ in range(20):
            view = ViewSpec(
                yaw=float(rng.uniform(0, 360)),
                pitch=float(rng.uniform(-45, 45)),
                hfov=float(rng.uniform(50, 120)),
                aspect=float(rng.uniform(0.7, 1.8)),
            )
            mask = project_view_mask(view, 256, 128)
            dirs = pixel_directions(256, 128)[mask.bits]
            cam = dirs @ view.basis().T
            tan_h = math.tan(math.radians(view.hfov) / 2)
            tan_v = math.tan(math.radians(view.vfov) / 2)
            assert np.all(cam[:, 2] > 0)
            assert np.all(np.abs(cam[:, 0]) <= cam[:, 2] * tan_h + 1e-12)
            assert np.all(np.abs(cam[:, 1]) <= cam[:, 2] * tan_v + 1e-12)

    def test_interior_directions_land_on_mask(self):
        # directions a safe margin inside the frustum hit masked pixels
        width, height = 256, 128
        pixel_angle = np.pi / height
        rng = np.random.default_rng(33)
        for _ in range(20):
            view = ViewSpec(
                yaw=float(rng.uniform(0, 360)),
                pitch=float(rng.uniform(-40, 40)),
                hfov=float(rng.uniform(50, 120)),
                aspect=float(rng.uniform(0.7, 1.8)),
            )
            mask = project_view_mask(view, width, height)
            grown = binary_dilation(mask.bits, iterations=1)  # 1-pixel band
            axes = view.basis()
            tan_h = math.tan(math.radians(view.hfov) / 2)
            tan_v = math.tan(math.radians(view.vfov) / 2)
            margin = 1.0 - 2.5 * pixel_angle / min(
                math.radians(view.hfov) / 2, math.radians(view.vfov) / 2
            )
            margin = max(margin, 0.2)
            uu, vv = np.meshgrid(np.linspace(-margin, margin, 9), np.linspace(-margin, margin, 9))
            cam = np.stack(
                [uu * tan_h, vv * tan_v, np.ones_like(uu)], axis=-1
            ).reshape(-1, 3)
            cam /= np.linalg.norm(cam, axis=1, keepdims=True)
            world = cam @ axes
            col, row = directions_to_pixels(world, width, height)
            cols = np.mod(np.rint(col).astype(int), width)
            rows = np.clip(np.rint(row).astype(int), 0, height - 1)
            assert grown[rows, cols].all()


class TestComposeAndApply:
    def test_idempotent(self):
        m = project_view_mask(ViewSpec(yaw=0, pitch=0, hfov=90), 64, 32)
        assert np.array_equal(compose_masks([m, m]).bits, m.bits)

    def test_disjoint_coverage_adds(self):
        a = project_view_mask(ViewSpec(yaw=0, pitch=0, hfov=60), 256, 128)
        b = project_view_mask(ViewSpec(yaw=180, pitch=0, hfov=60), 256, 128)
        assert not (a.bits & b.bits).any()
        union = compose_masks([a, b])
        assert abs(union.coverage_fraction - (a.coverage_fraction + b.coverage_fraction)) < 1e-12

    def test_full_absorbs(self):
        m = project_view_mask(ViewSpec(yaw=0, pitch=0, hfov=90), 64, 32)
        full = ObservationMask.full(64, 32)
        assert compose_masks([m, full]).bits.all()

    def test_commutative_associative(self):
        masks = [
            project_view_mask(ViewSpec(yaw=y, pitch=0, hfov=70), 64, 32) for y in (0, 90, 200)
        ]
        a = compose_masks([masks[0], compose_masks([masks[1], masks[2]])])
        b = compose_masks([compose_masks([masks[2], masks[0]]), masks[1]])
        assert np.array_equal(a.bits, b.bits)

    def test_empty_list_rejected(self):
        with pytest.raises(ValueError):
            compose_masks([])

    def test_apply_mask_trivials(self):
        env = uniform_env(1.0)
        assert np.array_equal(apply_mask(env, ObservationMask.full(64, 32)).data, env.data)
        assert np.all(apply_mask(env, ObservationMask.empty(64, 32)).data == 0.0)
        half = np.zeros((32, 64), dtype=bool)
        half[:16] = True
        assert abs(apply_mask(env, ObservationMask(half)).data.mean() - 0.5) < 1e-12


class TestRandomViews:
    def test_deterministic(self):
        assert sample_random_views(0) == sample_random_views(0)

    def test_fixed_fov_range(self):
        views = sample_random_views(3, fov_range=(75.0, 75.0))
        assert all(v.hfov == 75.0 for v in views)

    def test_count_histogram_uniform(self):
        counts = np.array([len(sample_random_views(seed)) for seed in range(10_000)])
        observed = np.bincount(counts, minlength=6)[1:6]
        expected = len(counts) / 5
        stat = ((observed - expected) ** 2 / expected).sum()
        assert stat < chi2.ppf(0.99, df=4)

    def test_ranges_respected(self):
        for seed in range(50):
            for view in sample_random_views(seed):
                assert 0 <= view.yaw < 360
                assert -30 <= view.pitch <= 30
                assert 60 <= view.hfov <= 120

    def test_inverted_range_rejected(self):
        with pytest.raises(ValueError):
            sample_random_views(0, fov_range=(120.0, 60.0))


class TestStitch:
    def test_uniform_frame_fills_covered_region(self):
        frame = np.full((48, 64, 3), 0.6)
        view = ViewSpec(yaw=40, pitch=10, hfov=80, aspect=4 / 3)
        env, mask = stitch_observation(frame, view, 256, 128)
        assert mask.bits.any()
        assert np.allclose(env.data[mask.bits], 0.6, atol=1e-9)
        assert np.all(env.data[~mask.bits] == 0.0)

    def test_stitch_mask_matches_projected_mask(self):
        view = ViewSpec(yaw=300, pitch=-20, hfov=95, aspect=1.2)
        frame = np.full((40, 48, 3), 0.5)
        _, stitched = stitch_observation(frame, view, 256, 128)
        projected = project_view_mask(view, 256, 128)
        disagree = stitched.bits ^ projected.bits
        band = binary_dilation(projected.bits, iterations=1) & ~projected.bits
        assert np.all(~disagree | band)

    def test_roll_180_flips_content(self):
        frame = np.zeros((32, 32, 3))
        frame[:16] = 1.0  # bright top half
        view = ViewSpec(yaw=0, pitch=0, hfov=60, aspect=1.0)
        rolled = ViewSpec(yaw=0, pitch=0, hfov=60, aspect=1.0, roll=180.0)
        env_a, mask = stitch_observation(frame, view, 256, 128)
        env_b, _ = stitch_observation(frame, rolled, 256, 128)
        rows = np.where(mask.bits.any(axis=1))[0]
        top, bottom = rows[0] + 1, rows[-1] - 1
        assert env_a.data[top][mask.bits[top]].mean() > 0.9
        assert env_b.data[top][mask.bits[top]].mean() < 0.1
        assert env_a.data[bottom][mask.bits[bottom]].mean() < 0.1
        assert env_b.data[bottom][mask.bits[bottom]].mean() > 0.9

    def test_accumulation_last_write_wins(self):
        view = ViewSpec(yaw=0, pitch=0, hfov=70)
        first, mask1 = stitch_observation(np.full((16, 16, 3), 0.2), view, 128, 64)
        second, mask2 = stitch_observation(
            np.full((16, 16, 3), 0.8), view, 128, 64, onto=(first, mask1)
        )
        assert np.allclose(second.data[mask2.bits], 0.8, atol=1e-9)


class TestPrompts:
    def test_p1_all_nine_combinations(self):
        for intensity in ("dark", "neutral", "bright"):
            for temperature in ("warm", "neutral", "cool"):
                text = build_prompt_p1(AmbientLabels(intensity, temperature))
                assert text == (
                    "A panoramic photo of an indoor room. "
                    f"The room is in a {intensity} lighting condition. "
                    f"The room has a {temperature} ambient color."
                )

    def test_p2_exact(self):
        assert build_prompt_p2() == (
            "A grayscale panoramic image describing the bright spots of an indoor room. "
            "Brighter spots get more bright color. "
            "Regions without light sources should stay pure black."
        )

    def test_p2_stable(self):
        assert build_prompt_p2() == build_prompt_p2() == PROMPT_P2
