"""Checkpoint format and model-container tests."""

import numpy as np
import pytest

from vqmat.model import (
    CheckpointFormatError,
    ReflectanceModel,
    read_tensor_file,
    write_tensor_file,
)


def small_model(seed=0):
    return ReflectanceModel(
        latent_dim=8, encoder_width=16, decoder_width=12, codebook_size=4,
        env_rows=4, env_cols=8, seed=seed,
    )


class TestCheckpointFormat:
    def test_roundtrip_preserves_everything(self, tmp_path):
        model = small_model()
        model.fit_bbox(np.random.default_rng(0).uniform(-2, 3, (50, 3)))
        model.selected_m = 3
        path = tmp_path / "m.vqnf"
        model.save(path)
        again = ReflectanceModel.load(path)
        assert again.selected_m == 3
        np.testing.assert_array_equal(again.bbox_center, model.bbox_center)
        np.testing.assert_array_equal(again.codebook.codewords, model.codebook.codewords)
        for p1, p2 in zip(model.parameters(), again.parameters()):
            assert p1.name == p2.name
            np.testing.assert_array_equal(p1.data, p2.data)
        pts = np.random.default_rng(1).uniform(-1, 2, (10, 3))
        np.testing.assert_array_equal(model.encode_np(pts), again.encode_np(pts))

    def test_bad_magic_rejected(self, tmp_path):
        path = tmp_path / "bad.vqnf"
        path.write_bytes(b"WHAT" + b"\x00" * 64)
        with pytest.raises(CheckpointFormatError, match="magic"):
            ReflectanceModel.load(path)

    def test_unknown_version_rejected(self, tmp_path):
        path = tmp_path / "v9.vqnf"
        path.write_bytes(b"VQNF" + (9).to_bytes(4, "little") + (0).to_bytes(4, "little"))
        with pytest.raises(CheckpointFormatError, match="version"):
            ReflectanceModel.load(path)

    def test_truncated_tensor_rejected(self, tmp_path):
        model = small_model()
        path = tmp_path / "m.vqnf"
        model.save(path)
        path.write_bytes(path.read_bytes()[:-100])
        with pytest.raises(CheckpointFormatError, match="truncated"):
            read_tensor_file(path)

    def test_missing_tensor_rejected(self, tmp_path):
        path = tmp_path / "partial.vqnf"
        write_tensor_file(path, {"meta.n_freqs": np.array([6.0], dtype=np.float32)})
        with pytest.raises(CheckpointFormatError, match="missing"):
            ReflectanceModel.load(path)


class TestDiscretePipeline:
    def test_codeword_attributes_are_gathered_bit_exactly(self, tiny_model_bundle):
        """Pixels of one codeword receive byte-identical attributes."""
        model, bundle = tiny_model_bundle
        view = bundle.views[0]
        z = model.encode_np(view.points())
        from vqmat.autodiff import Tensor

        u, _ = model.codebook.quantize(Tensor(z))
        kd, km, kr = model.codeword_attributes()
        per_pixel = kd[u]
        for cw in np.unique(u):
            rows = per_pixel[u == cw]
            assert all(row.tobytes() == rows[0].tobytes() for row in rows)

    def test_render_views_have_black_background(self, tiny_model_bundle):
        model, bundle = tiny_model_bundle
        img = model.render_view_discrete(bundle.views[0], limit=2)
        assert np.all(img[~bundle.views[0].mask] == 0.0)
        img_c = model.render_view_continuous(bundle.views[0])
        assert np.all(img_c[~bundle.views[0].mask] == 0.0)

    def test_override_replaces_single_codeword(self, tiny_model_bundle):
        model, bundle = tiny_model_bundle
        view = bundle.views[0]
        z = model.encode_np(view.points())
        from vqmat.autodiff import Tensor

        u, _ = model.codebook.quantize(Tensor(z))
        target = int(np.bincount(u).argmax())
        base = model.render_discrete_from_latents(z, view)
        edited = model.render_discrete_from_latents(
            z, view, overrides={target: (np.array([0.9, 0.1, 0.1], np.float32), 0.8, 0.2)}
        )
        changed = np.abs(edited - base).max(axis=1) > 1e-4
        np.testing.assert_array_equal(changed, u == target)
