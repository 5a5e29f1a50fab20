"""Scene generator tests: determinism, oracle closure, bundle IO, geometry."""

import numpy as np
import pytest

from vqmat import brdf, scene
from vqmat.scene import Box, Camera, Disk, SceneError, SceneSpec, Sphere


class TestGeneration:
    def test_same_seed_is_byte_identical(self):
        b1 = scene.generate_scene(scene.preset_scene("single", views=2, resolution=(16, 16)))
        b2 = scene.generate_scene(scene.preset_scene("single", views=2, resolution=(16, 16)))
        for v1, v2 in zip(b1.views, b2.views):
            assert v1.image.tobytes() == v2.image.tobytes()
            assert v1.xyz.tobytes() == v2.xyz.tobytes()
            assert v1.labels.tobytes() == v2.labels.tobytes()

    def test_three_material_labels_present(self):
        b = scene.generate_scene(scene.preset_scene("balls3", views=4, resolution=(32, 32)))
        labels = np.unique(np.concatenate([v.labels.reshape(-1) for v in b.views]))
        assert set(labels.tolist()) == {-1, 0, 1, 2}

    def test_oracle_closure_reshading_reproduces_images(self):
        """Shading the G-buffer with true attributes matches stored images."""
        b = scene.generate_scene(scene.preset_scene("balls3", views=3, resolution=(24, 24)))
        kd = np.stack([m.k_d for m in b.materials])
        km = np.array([[m.k_m] for m in b.materials], dtype=np.float32)
        kr = np.array([[m.k_r] for m in b.materials], dtype=np.float32)
        for v in b.views:
            lab = v.fg_labels()
            re = brdf.render_image(
                kd[lab], km[lab], kr[lab], v.fg_normals(), v.fg_view_dirs(), b.env
            )
            assert np.abs(re - v.fg_colors()).max() <= 1e-6

    def test_masked_pixels_have_zero_gbuffer(self):
        b = scene.generate_scene(scene.preset_scene("single", views=2, resolution=(16, 16)))
        for v in b.views:
            bg = ~v.mask
            assert np.all(v.xyz[bg] == 0.0)
            assert np.all(v.normal[bg] == 0.0)
            assert np.all(v.view_dir[bg] == 0.0)
            assert np.all(v.labels[bg] == -1)

    def test_normals_and_view_dirs_unit_length(self):
        b = scene.generate_scene(scene.preset_scene("balls3", views=2, resolution=(32, 32)))
        for v in b.views:
            np.testing.assert_allclose(np.linalg.norm(v.fg_normals(), axis=1), 1.0, atol=1e-5)
            np.testing.assert_allclose(np.linalg.norm(v.fg_view_dirs(), axis=1), 1.0, atol=1e-5)

    def test_camera_inside_geometry_rejected(self):
        spec = SceneSpec(
            primitives=[Sphere((0, 0, 0), 1.0, 0)],
            materials=[brdf.BrdfAttributes((0.5, 0.5, 0.5), 0.2, 0.5)],
            cameras=[Camera((0.0, 0.0, 0.2))],
            resolution=(8, 8),
        )
        with pytest.raises(SceneError, match="inside"):
            scene.generate_scene(spec)

    def test_label_attribute_consistency(self):
        """All pixels sharing a label share the same ground-truth attributes."""
        b = scene.generate_scene(scene.preset_scene("matpair", views=2, resolution=(24, 24)))
        assert len(b.materials) == 2
        for v in b.views:
            assert v.fg_labels().max() < len(b.materials)


class TestPrimitives:
    def test_sphere_hit_normal_points_outward(self):
        s = Sphere((0, 0, 0), 1.0, 0)
        origin = np.array([0.0, 0.0, 3.0])
        dirs = np.array([[0.0, 0.0, -1.0]])
        t, n = s.intersect(origin, dirs)
        assert t[0] == pytest.approx(2.0)
        np.testing.assert_allclose(n[0], [0, 0, 1.0], atol=1e-7)

    def test_box_slab_hit(self):
        box = Box((-1, -1, -1), (1, 1, 1), 0)
        t, n = box.intersect(np.array([0.0, 0.0, 5.0]), np.array([[0.0, 0.0, -1.0]]))
        assert t[0] == pytest.approx(4.0)
        np.testing.assert_allclose(n[0], [0, 0, 1.0])

    def test_disk_radius_limits_hit(self):
        disk = Disk((0, 0, 0), (0, 0, 1), 1.0, 0)
        origin = np.array([0.0, 0.0, 2.0])
        hit, _ = disk.intersect(origin, np.array([[0.0, 0.0, -1.0]]))
        miss, _ = disk.intersect(origin, np.array([[0.8, 0.0, -1.0]]) / np.linalg.norm([0.8, 0, -1]))
        assert np.isfinite(hit[0])
        assert np.isinf(miss[0])

    def test_miss_returns_inf(self):
        s = Sphere((0, 0, 0), 0.5, 0)
        t, _ = s.intersect(np.array([0.0, 0.0, 3.0]), np.array([[0.0, 1.0, 0.0]]))
        assert np.isinf(t[0])


class TestBundleIO:
    def test_roundtrip_is_lossless(self, tiny_bundle, tmp_path):
        scene.write_bundle(tiny_bundle, tmp_path / "b")
        again = scene.read_bundle(tmp_path / "b")
        assert len(again.views) == len(tiny_bundle.views)
        for v1, v2 in zip(tiny_bundle.views, again.views):
            assert v1.image.tobytes() == v2.image.tobytes()
            assert v1.xyz.tobytes() == v2.xyz.tobytes()
            assert np.array_equal(v1.labels, v2.labels)
            assert np.array_equal(v1.mask, v2.mask)
        assert again.env == tiny_bundle.env
        for m1, m2 in zip(tiny_bundle.materials, again.materials):
            np.testing.assert_array_equal(m1.k_d, m2.k_d)

    def test_write_twice_is_deterministic(self, tiny_bundle, tmp_path):
        scene.write_bundle(tiny_bundle, tmp_path / "b1")
        scene.write_bundle(tiny_bundle, tmp_path / "b2")
        for name in ("manifest.json", "view_0000.img", "view_0000.gbuf", "env.envm"):
            assert (tmp_path / "b1" / name).read_bytes() == (tmp_path / "b2" / name).read_bytes()

    def test_manifest_lists_all_view_files(self, tiny_bundle, tmp_path):
        import json

        scene.write_bundle(tiny_bundle, tmp_path / "b")
        manifest = json.loads((tmp_path / "b" / "manifest.json").read_text())
        assert len(manifest["views"]) == len(tiny_bundle.views)
        for entry in manifest["views"]:
            for key in ("image", "gbuffer", "labels"):
                assert (tmp_path / "b" / entry[key]).exists()

    def test_truncated_image_names_section(self, tiny_bundle, tmp_path):
        scene.write_bundle(tiny_bundle, tmp_path / "b")
        target = tmp_path / "b" / "view_0000.img"
        target.write_bytes(target.read_bytes()[:50])
        with pytest.raises(scene.BundleFormatError, match="image"):
            scene.read_bundle(tmp_path / "b")

    def test_corrupt_magic_rejected(self, tiny_bundle, tmp_path):
        scene.write_bundle(tiny_bundle, tmp_path / "b")
        target = tmp_path / "b" / "view_0001.lbl"
        blob = bytearray(target.read_bytes())
        blob[:4] = b"XXXX"
        target.write_bytes(bytes(blob))
        with pytest.raises(scene.BundleFormatError, match="magic"):
            scene.read_bundle(tmp_path / "b")

    def test_missing_manifest_rejected(self, tmp_path):
        with pytest.raises(scene.BundleFormatError, match="manifest"):
            scene.read_bundle(tmp_path)


class TestNeighborPairs:
    def test_pairs_are_foreground_adjacent(self, tiny_bundle):
        pairs = tiny_bundle.neighbor_pairs()
        pts, _, _, _, _ = tiny_bundle.foreground_arrays()
        assert pairs.shape[1] == 2
        assert pairs.max() < pts.shape[0]
        # adjacent pixels on a smooth surface are spatially close
        d = np.linalg.norm(pts[pairs[:, 0]] - pts[pairs[:, 1]], axis=1)
        assert np.median(d) < 0.2
