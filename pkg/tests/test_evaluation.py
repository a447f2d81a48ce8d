import numpy as np
import pytest

from envlight.augmentation import (
    AugmentationSpec,
    DatasetManifest,
    apply_spec,
    bin_and_sample,
    generate_variants,
    measure_entry,
)
from envlight.context import ViewSpec
from envlight.envmap import EnvironmentMap, pixel_directions, solid_angle_weights
from envlight.evaluation import (
    SphereImage,
    SphereMaterial,
    ZeroSpreadError,
    angular_error,
    identity_estimator,
    ldr_rmse,
    render_sphere,
    rmse,
    run_robustness,
    run_three_sphere,
    si_rmse,
)


def uniform_env(value, w=64, h=32):
    return EnvironmentMap(np.full((h, w, 3), value))


def harmonic_env(w=128, h=64):
    """Smooth first-order field: integrates to exactly 0.5 over the sphere."""
    d = pixel_directions(w, h)
    values = 0.5 + 0.3 * d[..., 0] + 0.15 * d[..., 1]
    return EnvironmentMap(np.repeat(values[:, :, None], 3, axis=2))


def sphere_from(data, coverage=None):
    data = np.asarray(data, dtype=np.float64)
    if coverage is None:
        coverage = np.ones(data.shape[:2], dtype=bool)
    return SphereImage(pixels=data, coverage=coverage)


class TestRenderSphere:
    def test_diffuse_constant_env(self):
        sphere = render_sphere(uniform_env(0.8, 128, 64), SphereMaterial("diffuse"), 64)
        values = sphere.covered()
        assert np.abs(values / 0.8 - 1.0).max() < 1e-3

    def test_matte_constant_env(self):
        # the narrow Phong lobe needs a finer quadrature than diffuse
        sphere = render_sphere(uniform_env(0.6, 128, 64), SphereMaterial("matte"), 64)
        assert np.abs(sphere.covered() / 0.6 - 1.0).max() < 1e-2
        fine = render_sphere(uniform_env(0.6, 128, 64), SphereMaterial("matte"), 64,
                             conv_size=(256, 128))
        assert np.abs(fine.covered() / 0.6 - 1.0).max() < 2e-3

    def test_mirror_constant_env(self):
        sphere = render_sphere(uniform_env(0.7, 128, 64), SphereMaterial("mirror"), 64)
        assert np.abs(sphere.covered() - 0.7).max() < 1e-9

    def test_single_texel_mirror_highlight_location(self):
        rng = np.random.default_rng(17)
        w, h, res = 64, 32, 256
        hits = []
        for _ in range(10):
            row = int(rng.integers(h // 4, 3 * h // 4))
            col = int(rng.integers(w // 6, 5 * w // 6))
            data = np.zeros((h, w, 3))
            data[row, col] = 500.0
            env = EnvironmentMap(data)
            d = pixel_directions(w, h)[row, col]
            n = d + np.array([0.0, 0.0, 1.0])
            norm = np.linalg.norm(n)
            if norm < 0.5:  # too close to the backward pole; reflection grazing
                continue
            n /= norm
            expected_col = (n[0] + 1) / 2 * res - 0.5
            expected_row = (1 - n[1]) / 2 * res - 0.5
            sphere = render_sphere(env, SphereMaterial("mirror"), res)
            bright = np.unravel_index(np.argmax(sphere.pixels[..., 0]), sphere.pixels.shape[:2])
            hits.append(np.hypot(bright[0] - expected_row, bright[1] - expected_col))
        assert len(hits) >= 8
        assert max(hits) <= 2.0

    def test_mirror_mean_matches_solid_angle_mean(self):
        env = harmonic_env(64, 32)
        sphere = render_sphere(env, SphereMaterial("mirror"), 256)
        weights = solid_angle_weights(env.width, env.height)
        env_mean = float(
            (env.luminance() * weights.per_row[:, None]).sum() / (4 * np.pi)
        )
        render_mean = float(sphere.covered().mean())
        assert abs(render_mean - env_mean) < 2e-3
        assert abs(env_mean - 0.5) < 1e-3  # first-order terms integrate out

    def test_resolution_floor(self):
        with pytest.raises(ValueError):
            render_sphere(uniform_env(1.0), SphereMaterial("mirror"), 8)

    def test_ldr_input_warns_but_renders(self):
        env = EnvironmentMap(np.full((32, 64, 3), 0.5), range_tag="LDR")
        with pytest.warns(UserWarning):
            sphere = render_sphere(env, SphereMaterial("mirror"), 32)
        assert sphere.covered().max() <= 0.5 + 1e-9

    def test_unknown_material(self):
        with pytest.raises(ValueError):
            SphereMaterial("velvet")


class TestMetrics:
    @staticmethod
    def random_pair(seed, res=32):
        rng = np.random.default_rng(seed)
        cov = np.ones((res, res), dtype=bool)
        a = sphere_from(rng.uniform(0, 1, (res, res, 3)), cov)
        b = sphere_from(rng.uniform(0, 1, (res, res, 3)), cov)
        return a, b

    def test_identities(self):
        a, _ = self.random_pair(0)
        assert rmse(a, a) < 1e-9
        assert si_rmse(a, a) < 1e-9
        assert angular_error(a, a) < 1e-9

    def test_rmse_affine_invariance(self):
        a, _ = self.random_pair(1)
        shifted = sphere_from(a.pixels + 0.1, a.coverage)
        assert rmse(shifted, a) < 1e-9

    def test_rmse_degenerate_spread(self):
        gt_data = np.zeros((16, 16, 3))
        gt_data[:8] = 1.0
        gt = sphere_from(gt_data)
        pred = sphere_from(np.zeros((16, 16, 3)))
        with pytest.raises(ZeroSpreadError):
            rmse(pred, gt)

    def test_si_rmse_scale_recovery(self):
        a, _ = self.random_pair(2)
        tripled = sphere_from(3.0 * a.pixels, a.coverage)
        assert si_rmse(tripled, a) < 1e-9

    def test_si_rmse_scale_invariance_multiple_alphas(self):
        for seed in range(10):
            a, b = self.random_pair(seed)
            base = si_rmse(a, b)
            for alpha in (0.1, 1.0, 10.0):
                scaled = sphere_from(alpha * a.pixels, a.coverage)
                assert abs(si_rmse(scaled, b) - base) < 1e-9

    def test_si_rmse_orthogonal_prediction(self):
        res = 8
        pred = np.zeros((res, res, 3))
        gt = np.zeros((res, res, 3))
        pred[..., 0] = 1.0
        gt[..., 1] = 0.7
        p, g = sphere_from(pred), sphere_from(gt)
        assert abs(si_rmse(p, g) - np.sqrt(np.mean(gt**2))) < 1e-12

    def test_si_rmse_all_zero_pred_flagged(self):
        _, gt = self.random_pair(3)
        zero = sphere_from(np.zeros_like(gt.pixels), gt.coverage)
        with pytest.warns(UserWarning):
            value = si_rmse(zero, gt)
        assert abs(value - np.sqrt(np.mean(gt.pixels[gt.coverage] ** 2))) < 1e-12

    def test_angular_per_pixel_scale_invariance(self):
        a, b = self.random_pair(4)
        rng = np.random.default_rng(5)
        scales = rng.uniform(0.1, 10.0, a.pixels.shape[:2])[:, :, None]
        assert abs(angular_error(sphere_from(a.pixels * scales, a.coverage), b)
                   - angular_error(a, b)) < 1e-9

    def test_angular_orthogonal_channels(self):
        res = 8
        red = np.zeros((res, res, 3)); red[..., 0] = 1.0
        green = np.zeros((res, res, 3)); green[..., 1] = 1.0
        assert abs(angular_error(sphere_from(red), sphere_from(green)) - 90.0) < 1e-9

    def test_ldr_rmse_trivials(self):
        zero = EnvironmentMap(np.zeros((16, 32, 3)), range_tag="LDR")
        one = EnvironmentMap(np.ones((16, 32, 3)), range_tag="LDR")
        half = EnvironmentMap(np.full((16, 32, 3), 0.5), range_tag="LDR")
        assert ldr_rmse(zero, zero) == 0.0
        assert abs(ldr_rmse(zero, one) - 1.0) < 1e-12
        assert abs(ldr_rmse(zero, half) - 0.5) < 1e-12

    def test_symmetry(self):
        a, b = self.random_pair(6)
        assert abs(rmse(a, b) - rmse(b, a)) < 1e-12
        assert abs(angular_error(a, b) - angular_error(b, a)) < 1e-9


def small_dataset(n=3, w=64, h=32):
    rng = np.random.default_rng(100)
    out = []
    for i in range(n):
        data = rng.uniform(0.05, 1.3, (h, w, 3))
        data[rng.integers(0, h), rng.integers(0, w)] = 6.0  # one bright source
        out.append((f"env{i}", EnvironmentMap(data)))
    return out


PROTOCOL_VIEWS = (ViewSpec(yaw=0.0, pitch=0.0, hfov=75.0, aspect=4 / 3),)


class TestThreeSphereProtocol:
    def test_identity_estimator_scores_zero(self):
        dataset = small_dataset(2)
        report = run_three_sphere(
            dataset, identity_estimator(dict(dataset)),
            views=PROTOCOL_VIEWS, resolution=32, conv_size=(32, 16),
        )
        for kind, metrics in report.per_material.items():
            assert metrics["si_rmse"] < 1e-9
            assert metrics["rmse"] < 1e-9
            assert metrics["angular_error"] < 1e-6

    def test_half_scale_estimator_invariant_metrics(self):
        dataset = small_dataset(2)
        gt = dict(dataset)

        def halver(obs, mask, ctx):
            return gt[ctx["name"]].with_data(gt[ctx["name"]].data * 0.5)

        report = run_three_sphere(dataset, halver, views=PROTOCOL_VIEWS,
                                  resolution=32, conv_size=(32, 16))
        for metrics in report.per_material.values():
            assert metrics["si_rmse"] < 1e-9
            assert metrics["rmse"] < 1e-9
            assert metrics["angular_error"] < 1e-6

    def test_uniform_gray_estimator_flagged(self):
        dataset = small_dataset(1)

        def gray(obs, mask, ctx):
            return uniform_env(0.5)

        report = run_three_sphere(dataset, gray, views=PROTOCOL_VIEWS,
                                  resolution=32, conv_size=(32, 16))
        entry = report.entries[0]
        # the mirror render of a constant map is exactly constant: zero spread
        assert entry["metrics"]["mirror"]["rmse"] is None
        assert any("mirror" in flag for flag in entry["flags"])

    def test_estimator_failure_recorded(self):
        dataset = small_dataset(2)
        gt = dict(dataset)

        def flaky(obs, mask, ctx):
            if ctx["name"] == "env0":
                raise RuntimeError("backend down")
            return gt[ctx["name"]]

        report = run_three_sphere(dataset, flaky, views=PROTOCOL_VIEWS,
                                  resolution=32, conv_size=(32, 16))
        assert len(report.failures) == 1
        assert len(report.entries) == 1

    def test_workers_match_sequential(self):
        dataset = small_dataset(3)
        est = identity_estimator(dict(dataset))
        seq = run_three_sphere(dataset, est, views=PROTOCOL_VIEWS,
                               resolution=32, conv_size=(32, 16), workers=1)
        par = run_three_sphere(dataset, est, views=PROTOCOL_VIEWS,
                               resolution=32, conv_size=(32, 16), workers=3)
        for kind in seq.per_material:
            for key in seq.per_material[kind]:
                assert np.isclose(seq.per_material[kind][key], par.per_material[kind][key],
                                  rtol=1e-12, atol=1e-12)


def robustness_fixture(n_sources=4, lo=0.02, hi=0.24, seed=200, grid=None):
    """Synthetic sources plus intensity variants; clamp-free when hi <= 0.25."""
    rng = np.random.default_rng(seed)
    sources = {}
    variants = {}
    manifest = DatasetManifest()
    grid = list(grid if grid is not None else [0.25, 0.5, 1.0, 2.0, 4.0])
    for i in range(n_sources):
        name = f"src{i}"
        sources[name] = EnvironmentMap(rng.uniform(lo, hi, (16, 32, 3)))
        for s in grid:
            spec = AugmentationSpec(kind="intensity", s=float(s))
            variant = apply_spec(sources[name], spec)
            entry = measure_entry(name, spec, variant)
            manifest.entries.append(entry)
            variants[(name, spec.kind, spec.s)] = variant
    manifest = bin_and_sample(manifest, 5, 1, per_bin=None, seed=0)
    return sources, variants, manifest


class TestRobustnessProtocol:
    def test_oracle_estimator_scores_zero(self):
        sources, variants, manifest = robustness_fixture()

        def oracle(obs, mask, ctx):
            e = ctx["entry"]
            from envlight.envmap import decompose

            return decompose(variants[(e.source, e.kind, e.s)])[0]

        report = run_robustness(
            manifest, lambda e: variants[(e.source, e.kind, e.s)], oracle,
            refinement="off", views=PROTOCOL_VIEWS,
        )
        for stats in report.per_bin.values():
            assert stats["rmse_off"] < 1e-12

    def test_fixed_estimator_monotone_without_refinement(self):
        sources, variants, manifest = robustness_fixture()

        def fixed(obs, mask, ctx):
            from envlight.envmap import decompose

            return decompose(sources[ctx["entry"].source])[0]

        report = run_robustness(
            manifest, lambda e: variants[(e.source, e.kind, e.s)], fixed,
            refinement="both", views=PROTOCOL_VIEWS,
        )
        # group per-entry records by |log s|: RMSE must strictly increase
        by_level = {}
        for record in report.entries:
            level = round(abs(np.log(record["s"])), 9)
            by_level.setdefault(level, []).append(record["rmse_off"])
        levels = sorted(by_level)
        means = [float(np.mean(by_level[l])) for l in levels]
        assert all(a < b for a, b in zip(means, means[1:]))
        # refinement flattens every bin to numerical recovery
        for stats in report.per_bin.values():
            assert stats["rmse_on"] < 1e-6

    def test_empty_bin_excluded(self):
        sources, variants, manifest = robustness_fixture(n_sources=1, grid=[1.0])

        def oracle(obs, mask, ctx):
            from envlight.envmap import decompose

            e = ctx["entry"]
            return decompose(variants[(e.source, e.kind, e.s)])[0]

        report = run_robustness(manifest, lambda e: variants[(e.source, e.kind, e.s)],
                                oracle, refinement="off", views=PROTOCOL_VIEWS)
        assert all(stats["count"] > 0 for stats in report.per_bin.values())
