import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from envlight.envmap import (
    EnvironmentMap,
    EnvmapError,
    HighIntensityMap,
    SaturationError,
    decompose,
    directions_to_pixels,
    pixel_directions,
    recompose,
    recompose_grayscale,
    resize,
    rotate_columns,
    sigmoid_map,
    sigmoid_unmap,
    solid_angle_weights,
)

LN3 = float(np.log(3.0))


def uniform_map(value, w=64, h=32, tag="HDR"):
    return EnvironmentMap(np.full((h, w, 3), value, dtype=np.float64), range_tag=tag)


class TestSigmoid:
    def test_zero(self):
        assert sigmoid_map(0.0) == 0.0

    def test_ln3_is_half(self):
        # 2 / (1 + 1/3) - 1 = 0.5 exactly
        assert abs(sigmoid_map(LN3) - 0.5) < 1e-12

    def test_large_input_saturates_below_one(self):
        # frozen from mpmath: 2/(1+exp(-20)) - 1 = 1 - 4.1223072363804e-09
        value = sigmoid_map(20.0)
        eps = 1.0 - value
        assert 0 < eps < 1e-8
        assert abs(eps - 4.1223072363804e-09) < 1e-15

    def test_domain(self):
        with pytest.raises(EnvmapError):
            sigmoid_map(-0.1)

    def test_unmap_zero(self):
        assert sigmoid_unmap(0.0) == 0.0

    def test_unmap_half_is_ln3(self):
        assert abs(sigmoid_unmap(0.5) - LN3) < 1e-12

    def test_unmap_near_one(self):
        # frozen: -ln(2/1.999999 - 1) = 14.5086577385242
        value = sigmoid_unmap(0.999999)
        assert abs(value - 14.508657238524094) < 1e-9
        assert abs(sigmoid_map(value) - 0.999999) < 1e-6

    def test_unmap_domain_errors(self):
        with pytest.raises(SaturationError):
            sigmoid_unmap(1.0)
        with pytest.raises(EnvmapError):
            sigmoid_unmap(-0.01)

    def test_round_trip_extended_precision(self):
        # float64 cannot carry i near 30 through a stored value that close
        # to 1; the mathematical round-trip bound holds in extended precision
        i = np.arange(0.0, 30.0 + 1e-9, 1e-3, dtype=np.longdouble)
        back = sigmoid_unmap(sigmoid_map(i))
        assert np.abs(back - i).max() < 1e-6

    def test_round_trip_float64_practical_range(self):
        i = np.arange(0.0, 15.0, 1e-3)
        back = sigmoid_unmap(sigmoid_map(i))
        assert np.abs(back - i).max() < 1e-9

    @given(st.floats(min_value=0.0, max_value=15.0), st.floats(min_value=1e-6, max_value=5.0))
    def test_strictly_increasing(self, i, delta):
        # strict in exact arithmetic; float64 resolves it up to i ~ 18
        assert sigmoid_map(i + delta) > sigmoid_map(i)


class TestEnvironmentMap:
    def test_aspect_enforced(self):
        with pytest.raises(EnvmapError):
            EnvironmentMap(np.zeros((32, 32, 3)))

    def test_ldr_range_enforced(self):
        with pytest.raises(EnvmapError):
            EnvironmentMap(np.full((2, 4, 3), 1.5), range_tag="LDR")

    def test_negative_rejected(self):
        with pytest.raises(EnvmapError):
            EnvironmentMap(np.full((2, 4, 3), -0.1))

    def test_immutable(self):
        env = uniform_map(1.0)
        with pytest.raises(ValueError):
            env.data[0, 0, 0] = 2.0

    def test_luminance_coeffs_sum_to_one(self):
        assert abs(uniform_map(1.0).luminance()[0, 0] - 1.0) < 1e-12


class TestDecomposeRecompose:
    def test_below_ceiling(self):
        ldr, hi = decompose(uniform_map(0.5))
        assert np.all(ldr.data == 0.5)
        assert np.all(hi.data == 0.0)
        assert ldr.is_ldr

    def test_texel_one_plus_ln3(self):
        data = np.full((2, 4, 3), 0.2)
        data[1, 2] = 1.0 + LN3
        ldr, hi = decompose(EnvironmentMap(data))
        assert np.allclose(ldr.data[1, 2], 1.0)
        assert np.allclose(hi.data[1, 2], 0.5, atol=1e-12)
        assert np.all(hi.data[0] == 0.0)

    def test_huge_texel_saturates_within_ulp(self):
        data = np.full((2, 4, 3), 0.2)
        data[0, 0] = 100.0
        ldr, hi = decompose(EnvironmentMap(data))
        assert ldr.data[0, 0, 0] == 1.0
        assert hi.data[0, 0, 0] < 1.0
        assert 1.0 - hi.data[0, 0, 0] <= 2.3e-16

    def test_rejects_ldr_input(self):
        with pytest.raises(EnvmapError):
            decompose(uniform_map(0.5, tag="LDR"))

    def test_recompose_zero_hi_is_identity(self):
        ldr = uniform_map(0.7, tag="LDR")
        hi = HighIntensityMap(np.zeros((32, 64, 3)))
        out = recompose(ldr, hi)
        assert np.array_equal(out.data, ldr.data)
        assert out.range_tag == "HDR"

    def test_round_trip_oracle(self):
        rng = np.random.default_rng(7)
        data = rng.uniform(0.0, 10.0, (32, 64, 3))
        env = EnvironmentMap(data)
        back = recompose(*decompose(env))
        saturated = data > 1.0
        assert np.abs(back.data - data)[saturated].max() < 1e-5
        assert np.array_equal(back.data[~saturated], data[~saturated])

    def test_recompose_arithmetic(self):
        ldr = uniform_map(0.3, w=4, h=2, tag="LDR")
        hi = HighIntensityMap(np.full((2, 4, 3), 0.5))
        out = recompose(ldr, hi)
        assert np.allclose(out.data, 0.3 + LN3, atol=1e-12)

    def test_recompose_dim_mismatch(self):
        with pytest.raises(EnvmapError):
            recompose(uniform_map(0.5, tag="LDR"), HighIntensityMap(np.zeros((2, 4, 3))))

    def test_recompose_clamps_saturated_with_warning(self):
        ldr = uniform_map(0.0, w=4, h=2, tag="LDR")
        with pytest.warns(UserWarning):
            out = recompose(ldr, np.full((2, 4, 3), 1.0))
        assert np.all(np.isfinite(out.data))

    @settings(max_examples=25, deadline=None)
    @given(st.integers(0, 2**31 - 1), st.floats(min_value=1.0, max_value=15.0))
    def test_round_trip_property(self, seed, peak):
        rng = np.random.default_rng(seed)
        data = rng.uniform(0.0, peak, (8, 16, 3))
        env = EnvironmentMap(data)
        back = recompose(*decompose(env))
        assert np.abs(back.data - data).max() < 1e-5

    def test_order_preserved_in_saturated_set(self):
        values = np.array([1.5, 2.0, 5.0, 14.0])
        data = np.zeros((2, 4, 3))
        data[0, :, 0] = values
        _, hi = decompose(EnvironmentMap(data))
        assert np.all(np.diff(hi.data[0, :, 0]) > 0)

    def test_grayscale_recompose_luminance(self):
        # luminance adds the recovered intensity exactly
        ldr_data = np.zeros((2, 4, 3))
        ldr_data[:, :] = [0.4, 0.2, 0.1]
        ldr = EnvironmentMap(ldr_data, range_tag="LDR")
        gray = np.full((2, 4), 0.5)
        out = recompose_grayscale(ldr, gray)
        expected = ldr.luminance() + LN3
        assert np.allclose(out.luminance(), expected, atol=1e-9)

    def test_grayscale_recompose_black_pixels_get_neutral(self):
        ldr = uniform_map(0.0, w=4, h=2, tag="LDR")
        out = recompose_grayscale(ldr, np.full((2, 4), 0.5))
        assert np.allclose(out.data, LN3, atol=1e-9)


class TestSolidAngles:
    def test_sums_to_sphere_exactly(self):
        for height in (1, 64, 512):
            weights = solid_angle_weights(2 * height, height)
            assert abs(weights.total() / (4 * np.pi) - 1) < 1e-12

    def test_equator_heaviest_poles_lightest(self):
        weights = solid_angle_weights(128, 64).per_row
        assert weights.argmax() in (31, 32)
        assert weights[0] == weights.min()
        assert np.all(weights > 0)

    def test_matches_center_formula_at_high_res(self):
        # (2pi/w) * (pi/h) * sin(theta_center) is the h -> inf limit
        height = 512
        weights = solid_angle_weights(2 * height, height).per_row
        theta = (np.arange(height) + 0.5) * np.pi / height
        approx = (2 * np.pi / (2 * height)) * (np.pi / height) * np.sin(theta)
        assert np.allclose(weights, approx, rtol=2e-6)

    def test_rejects_bad_aspect(self):
        with pytest.raises(EnvmapError):
            solid_angle_weights(100, 64)


class TestResize:
    def test_identity_is_bit_identical(self):
        env = EnvironmentMap(np.random.default_rng(0).uniform(0, 2, (16, 32, 3)))
        assert resize(env, 32, 16) is env

    def test_uniform_stays_uniform(self):
        out = resize(uniform_map(0.37, w=64, h=32), 16, 8)
        assert np.allclose(out.data, 0.37, atol=1e-12)

    def test_checkerboard_downsample_is_block_mean(self):
        data = np.zeros((2, 4, 3))
        data[0, :, 0] = [1.0, 0.0, 1.0, 0.0]
        data[1, :, 0] = [0.0, 1.0, 0.0, 1.0]
        out = resize(EnvironmentMap(data), 2, 1)
        assert np.allclose(out.data[..., 0], 0.5, atol=1e-6)

    def test_block_mean_against_reshape_oracle(self):
        rng = np.random.default_rng(3)
        data = rng.uniform(0, 1, (8, 16, 3))
        out = resize(EnvironmentMap(data), 8, 4)
        oracle = data.reshape(4, 2, 8, 2, 3).mean(axis=(1, 3))
        assert np.allclose(out.data, oracle, atol=1e-12)

    def test_zero_dims_rejected(self):
        with pytest.raises(EnvmapError):
            resize(uniform_map(1.0), 0, 0)


class TestDirections:
    def test_pixel_direction_round_trip(self):
        w, h = 64, 32
        dirs = pixel_directions(w, h)
        col, row = directions_to_pixels(dirs, w, h)
        cols, rows = np.meshgrid(np.arange(w), np.arange(h))
        assert np.abs(col - cols).max() < 1e-9
        assert np.abs(row - rows).max() < 1e-9

    def test_conventions(self):
        dirs = pixel_directions(4, 2)
        # top row points up, bottom row points down
        assert np.all(dirs[0, :, 1] > 0)
        assert np.all(dirs[1, :, 1] < 0)
        # unit length everywhere
        assert np.allclose(np.linalg.norm(dirs, axis=-1), 1.0)

    def test_rotate_columns_round_trip(self):
        env = EnvironmentMap(np.random.default_rng(1).uniform(0, 1, (8, 16, 3)))
        back = rotate_columns(rotate_columns(env, 5), -5)
        assert np.array_equal(back.data, env.data)
