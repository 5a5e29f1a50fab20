"""Shading-model tests: attribute split, microfacet lobe, quadrature, chroma.

The batched renderer is cross-checked against a per-direction evaluation of
the same reflectance model (two independent code paths), and the microfacet
distribution against standalone evaluations of its closed form.
"""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from vqmat import autodiff as ad
from vqmat import brdf
from vqmat.brdf import BrdfAttributes, EnvironmentMap, ShadePoint


def unit(v):
    v = np.asarray(v, dtype=np.float64)
    return v / np.linalg.norm(v)


class TestConvertAttributes:
    def test_half_metallic_splits_evenly(self):
        ka, ks = brdf.convert_attributes(np.array([0.8, 0.4, 0.2]), 0.5)
        np.testing.assert_allclose(ka, [0.4, 0.2, 0.1], atol=1e-7)
        np.testing.assert_allclose(ks, [0.4, 0.2, 0.1], atol=1e-7)

    def test_dielectric_limit(self):
        ka, ks = brdf.convert_attributes(np.array([0.3, 0.6, 0.9]), 0.0)
        np.testing.assert_allclose(ka, [0.3, 0.6, 0.9])
        np.testing.assert_allclose(ks, [0.0, 0.0, 0.0])

    def test_metal_limit(self):
        ka, ks = brdf.convert_attributes(np.array([0.3, 0.6, 0.9]), 1.0)
        np.testing.assert_allclose(ka, [0.0, 0.0, 0.0])
        np.testing.assert_allclose(ks, [0.3, 0.6, 0.9])

    def test_out_of_range_rejected(self):
        with pytest.raises(ValueError):
            brdf.convert_attributes(np.array([1.2, 0.0, 0.0]), 0.5)
        with pytest.raises(ValueError):
            brdf.convert_attributes(np.array([0.5, 0.5, 0.5]), -0.1)

    @given(
        kd=st.lists(st.floats(0, 1), min_size=3, max_size=3),
        km=st.floats(0, 1),
    )
    @settings(max_examples=200, deadline=None)
    def test_energy_split_is_exact(self, kd, km):
        """diffuse + specular reproduces basecolor componentwise, exactly."""
        kd = np.asarray(kd, dtype=np.float32)
        ka, ks = brdf.convert_attributes(kd, np.float32(km))
        np.testing.assert_array_equal(ka + ks, kd * (1.0 - np.float32(km)) + kd * np.float32(km))
        np.testing.assert_allclose(ka + ks, kd, atol=1e-7)


class TestMicrofacetLobe:
    def test_ggx_peak_matches_closed_form(self):
        """Distribution at h = n for roughness 0.5: 1 / (pi * 0.25^2) = 5.0930."""
        alpha = 0.5**2
        standalone = alpha**2 / (np.pi * (1.0 * (alpha**2 - 1.0) + 1.0) ** 2)
        assert standalone == pytest.approx(5.09295817894, rel=1e-9)
        assert brdf._ggx_d(1.0, alpha**2) == pytest.approx(standalone, rel=1e-12)

    def test_lambertian_limit_at_normal_incidence(self):
        """Pure dielectric at max roughness stays within 5% of k_a / pi."""
        attrs = BrdfAttributes((1.0, 1.0, 1.0), 0.0, 1.0)
        n = np.array([0.0, 0.0, 1.0])
        f = brdf.eval_brdf(attrs, n, unit([0.2, 0.1, 0.95]), n)
        np.testing.assert_allclose(f, 1.0 / np.pi, rtol=0.05)

    def test_below_hemisphere_is_zero(self):
        attrs = BrdfAttributes((0.5, 0.5, 0.5), 0.5, 0.5)
        n = np.array([0.0, 0.0, 1.0])
        np.testing.assert_array_equal(
            brdf.eval_brdf(attrs, n, unit([0.1, 0.0, -0.9]), n), np.zeros(3)
        )

    def test_specular_reciprocity(self):
        """Swapping light and view directions leaves the value unchanged."""
        rng = np.random.default_rng(5)
        attrs = BrdfAttributes((0.7, 0.5, 0.3), 0.6, 0.35)
        n = np.array([0.0, 0.0, 1.0])
        for _ in range(20):
            wi = unit(rng.normal(size=3) + [0, 0, 2.0])
            wo = unit(rng.normal(size=3) + [0, 0, 2.0])
            np.testing.assert_allclose(
                brdf.eval_brdf(attrs, n, wi, wo),
                brdf.eval_brdf(attrs, n, wo, wi),
                rtol=1e-6,
            )

    def test_batched_renderer_matches_per_direction_sum(self):
        """Independent route: loop env texels through eval_brdf and sum."""
        env = EnvironmentMap(np.full((8, 16, 3), 0.7, dtype=np.float32))
        attrs = BrdfAttributes((0.9, 0.7, 0.3), 0.8, 0.4)
        n = unit([0.1, -0.2, 0.97])
        wo = unit([0.3, 0.2, 0.93])
        manual = np.zeros(3)
        for d, w in zip(env.directions, env.weights):
            manual += (
                w
                * 0.7
                * brdf.eval_brdf(attrs, n, d, wo)
                * max(float(np.dot(d, n)), 0.0)
            )
        fast = brdf.render_points(
            attrs.k_d.reshape(1, 3),
            np.array([[attrs.k_m]], dtype=np.float32),
            np.array([[attrs.k_r]], dtype=np.float32),
            n.reshape(1, 3),
            wo.reshape(1, 3),
            env,
        ).data[0]
        np.testing.assert_allclose(fast, manual, rtol=1e-4)


class TestEnvironmentQuadrature:
    def test_weights_sum_to_full_sphere(self):
        for rows, cols in [(8, 16), (16, 32), (5, 7)]:
            _, w = brdf.latlong_directions(rows, cols)
            assert w.sum() == pytest.approx(4.0 * np.pi, rel=1e-12)

    def test_cosine_integral_on_uniform_env(self):
        """White Lambertian under unit radiance integrates to 1 within 2%."""
        env = EnvironmentMap(np.ones((16, 32, 3), dtype=np.float32))
        point = ShadePoint(np.zeros(3), np.array([0, 0, 1.0]), np.array([0, 0, 1.0]))
        attrs = BrdfAttributes((1.0, 1.0, 1.0), 0.0, 1.0)
        color = brdf.render_point(attrs, point, env)
        np.testing.assert_allclose(color, 1.0, rtol=0.02)

    def test_zero_env_renders_black(self):
        env = EnvironmentMap(np.zeros((8, 16, 3), dtype=np.float32))
        point = ShadePoint(np.zeros(3), np.array([0, 0, 1.0]), np.array([0, 0, 1.0]))
        attrs = BrdfAttributes((1.0, 0.5, 0.2), 0.3, 0.5)
        np.testing.assert_array_equal(brdf.render_point(attrs, point, env), np.zeros(3))

    def test_single_texel_opposite_normal_is_dark(self):
        rad = np.zeros((16, 32, 3), dtype=np.float32)
        rad[15, 0] = 50.0  # bottom row: direction nearly opposite +z normal
        env = EnvironmentMap(rad)
        point = ShadePoint(np.zeros(3), np.array([0, 0, 1.0]), np.array([0, 0, 1.0]))
        attrs = BrdfAttributes((1.0, 1.0, 1.0), 0.0, 1.0)
        np.testing.assert_array_equal(brdf.render_point(attrs, point, env), np.zeros(3))

    def test_quadrature_converges_under_refinement(self):
        """Doubling the grid changes the render by < 1% on a smooth env."""
        point = ShadePoint(np.zeros(3), unit([0.2, 0.1, 0.97]), unit([-0.1, 0.3, 0.95]))
        attrs = BrdfAttributes((0.8, 0.6, 0.4), 0.5, 0.4)
        coarse = brdf.render_point(attrs, point, brdf.env_preset("studio", 16, 32))
        fine = brdf.render_point(attrs, point, brdf.env_preset("studio", 32, 64))
        assert np.abs(coarse - fine).max() / fine.max() < 0.01

    def test_radiance_scaling_is_linear(self):
        env = brdf.env_preset("studio")
        point = ShadePoint(np.zeros(3), unit([0.1, 0.2, 0.95]), unit([0.0, 0.1, 0.99]))
        attrs = BrdfAttributes((0.9, 0.8, 0.7), 0.6, 0.3)
        base = brdf.render_point(attrs, point, env)
        scaled = brdf.render_point(attrs, point, env.scaled(3.0))
        np.testing.assert_allclose(scaled, 3.0 * base, rtol=1e-5)

    def test_learnable_env_stays_nonnegative_after_updates(self):
        env = EnvironmentMap(np.full((4, 8, 3), 0.2, dtype=np.float32), learnable=True)
        opt = ad.Adam(env.parameters(), lr=0.5)
        for _ in range(30):  # drive radiance hard toward negative
            opt.zero_grad()
            loss = ad.tsum(env.radiance_tensor())
            loss.backward()
            opt.step()
        assert np.all(env.radiance_numpy() >= 0.0)


class TestEnvFileFormat:
    def test_binary_roundtrip(self, tmp_path):
        env = brdf.env_preset("sunset")
        path = tmp_path / "e.envm"
        brdf.write_env(env, path)
        again = brdf.read_env(path)
        assert env == again

    def test_text_variant_roundtrip(self, tmp_path):
        env = brdf.env_preset("uniform", 4, 8)
        path = tmp_path / "e.txt"
        brdf.write_env_text(env, path)
        again = brdf.read_env(path)
        np.testing.assert_allclose(again.radiance_numpy(), env.radiance_numpy(), rtol=1e-6)

    def test_bad_magic_rejected(self, tmp_path):
        path = tmp_path / "bad.envm"
        path.write_bytes(b"NOPE" + b"\x00" * 32)
        with pytest.raises(brdf.EnvFormatError, match="magic"):
            brdf.read_env(path)

    def test_truncated_payload_rejected(self, tmp_path):
        env = brdf.env_preset("uniform", 4, 8)
        path = tmp_path / "e.envm"
        brdf.write_env(env, path)
        path.write_bytes(path.read_bytes()[:-40])
        with pytest.raises(brdf.EnvFormatError, match="truncated"):
            brdf.read_env(path)


class TestChromaticity:
    def test_gray_maps_to_uniform(self):
        np.testing.assert_allclose(
            brdf.chromaticity(np.array([0.2, 0.2, 0.2])), [1 / 3] * 3, atol=1e-5
        )

    def test_unit_sum_input_unchanged(self):
        np.testing.assert_allclose(
            brdf.chromaticity(np.array([0.5, 0.25, 0.25])), [0.5, 0.25, 0.25], atol=1e-5
        )

    def test_black_maps_to_neutral(self):
        np.testing.assert_allclose(brdf.chromaticity(np.zeros(3)), [1 / 3] * 3)

    def test_negative_rejected(self):
        with pytest.raises(ValueError):
            brdf.chromaticity(np.array([-0.1, 0.5, 0.5]))

    @given(
        c=st.lists(st.floats(0.05, 1.0), min_size=3, max_size=3),
        s=st.floats(0.2, 10.0),
    )
    @settings(max_examples=150, deadline=None)
    def test_scale_invariance_away_from_floor(self, c, s):
        """Positive rescaling cancels, up to the tiny denominator offset."""
        c = np.asarray(c, dtype=np.float64)
        np.testing.assert_allclose(
            brdf.chromaticity(s * c), brdf.chromaticity(c), atol=1e-4
        )

    def test_components_sum_to_one(self):
        rng = np.random.default_rng(0)
        c = rng.uniform(0.05, 1.0, (100, 3))
        out = brdf.chromaticity(c)
        np.testing.assert_allclose(out.sum(axis=-1), 1.0, atol=1e-4)

    def test_tensor_path_matches_numpy_path(self):
        rng = np.random.default_rng(1)
        c = rng.uniform(0.0, 1.0, (50, 3)).astype(np.float32)
        c[0] = 0.0  # exercise the near-black branch
        t = brdf.chromaticity(ad.Tensor(c))
        np.testing.assert_allclose(t.data, brdf.chromaticity(c), atol=1e-6)
