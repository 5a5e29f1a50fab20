"""The two-branch reflectance model and its checkpoint format.

One encoder feeds both branches: the continuous decoder predicts per-point
attributes directly from the latent, while the discrete decoder consumes
vector-quantized latents so every pixel of a material shares one attribute
set. The learnable environment map belongs to the model because both
branches render through it.

Checkpoints are a single binary file (magic ``VQNF``): a version word, a
tensor count, then named float32 tensors (u32 name length, UTF-8 name, u32
rank, u32 dims, payload) covering encoder, decoders, codebook with its EMA
state, environment parameters, and scene-normalization metadata.
"""

from __future__ import annotations

import struct

import numpy as np

from . import autodiff as ad
from . import brdf
from .autodiff import Tensor
from .field import Decoder, Encoder
from .vq import Codebook

CHECKPOINT_MAGIC = b"VQNF"
CHECKPOINT_VERSION = 1


class CheckpointFormatError(ValueError):
    """Checkpoint file is malformed or from an unknown version."""


class ReflectanceModel:
    """Encoder, two decoders, codebook, and learnable environment map."""

    def __init__(
        self,
        latent_dim=64,
        encoder_width=128,
        decoder_width=64,
        n_freqs=6,
        codebook_size=8,
        env_rows=16,
        env_cols=32,
        max_dropout=0.7,
        ema_decay=0.99,
        seed=0,
    ):
        rng = np.random.default_rng(seed)
        self.n_freqs = n_freqs
        self.latent_dim = latent_dim
        self.encoder = Encoder(n_freqs, encoder_width, latent_dim, rng, "encoder")
        self.decoder_continuous = Decoder(latent_dim, decoder_width, rng, "dec_c")
        self.decoder_discrete = Decoder(latent_dim, decoder_width, rng, "dec_d")
        self.codebook = Codebook(
            codebook_size, latent_dim, rng, max_dropout=max_dropout, ema_decay=ema_decay
        )
        self.envmap = brdf.EnvironmentMap(
            np.full((env_rows, env_cols, 3), 0.5, dtype=np.float32), learnable=True
        )
        self.bbox_center = np.zeros(3, dtype=np.float32)
        self.bbox_scale = np.ones(3, dtype=np.float32)
        self.selected_m = None

    # -- coordinate handling ------------------------------------------------

    def fit_bbox(self, points):
        """Normalize scene coordinates into [-1, 1]^3 for the encoder."""
        points = np.asarray(points)
        lo, hi = points.min(axis=0), points.max(axis=0)
        self.bbox_center = ((lo + hi) / 2.0).astype(np.float32)
        self.bbox_scale = np.maximum((hi - lo) / 2.0, 1e-6).astype(np.float32)

    def normalize_points(self, points):
        return (np.asarray(points, dtype=ad.default_dtype()) - self.bbox_center) / self.bbox_scale

    # -- forward paths --------------------------------------------------------

    def encode(self, points):
        """Graph-building encode of raw scene coordinates."""
        return self.encoder(self.normalize_points(points))

    def encode_np(self, points, chunk=8192):
        """Gradient-free encode returning a numpy latent array."""
        points = np.asarray(points)
        out = np.empty((points.shape[0], self.latent_dim), dtype=ad.default_dtype())
        for lo in range(0, points.shape[0], chunk):
            out[lo : lo + chunk] = self.encode(points[lo : lo + chunk]).data
        return out

    def decode_continuous(self, z):
        return self.decoder_continuous(z)

    def decode_discrete(self, z_vq):
        return self.decoder_discrete(z_vq)

    def parameters(self):
        """Gradient-trained parameters; the codebook is EMA-updated, not here."""
        return (
            self.encoder.parameters()
            + self.decoder_continuous.parameters()
            + self.decoder_discrete.parameters()
            + self.envmap.parameters()
        )

    # -- inference helpers ------------------------------------------------------

    def codeword_attributes(self, limit=None):
        """Decode each codeword once; returns (kd, km, kr) arrays of length M."""
        cw = Tensor(self.codebook.codewords[: limit or self.codebook.size])
        kd, km, kr = self.decoder_discrete(cw)
        return kd.data, km.data, kr.data

    def attributes_continuous_np(self, points, chunk=8192):
        """Continuous-branch attributes for raw points, as numpy arrays."""
        points = np.asarray(points)
        kd = np.empty((points.shape[0], 3), dtype=np.float32)
        km = np.empty((points.shape[0], 1), dtype=np.float32)
        kr = np.empty((points.shape[0], 1), dtype=np.float32)
        for lo in range(0, points.shape[0], chunk):
            z = self.encode(points[lo : lo + chunk])
            a, b, c = self.decoder_continuous(z)
            kd[lo : lo + chunk] = a.data
            km[lo : lo + chunk] = b.data
            kr[lo : lo + chunk] = c.data
        return kd, km, kr

    def render_attrs_image(self, view, kd, km, kr, env=None):
        """Shade per-foreground-pixel attributes into a full image."""
        env = env or self.envmap
        img = np.zeros(view.image.shape, dtype=np.float32)
        img[view.mask] = brdf.render_image(
            kd, km, kr, view.fg_normals(), view.fg_view_dirs(), env
        )
        return img

    def render_view_continuous(self, view, env=None):
        kd, km, kr = self.attributes_continuous_np(view.points(foreground=True))
        return self.render_attrs_image(view, kd, km, kr, env)

    def render_discrete_from_latents(self, z, view, limit=None, env=None, overrides=None):
        """Discrete-branch shading given precomputed latents for the view.

        ``overrides`` maps codeword index to an (k_d, k_m, k_r) replacement,
        applied after decoding. Returns only the foreground pixel colors.
        """
        u, _ = self.codebook.quantize(Tensor(z), limit=limit)
        kd, km, kr = self.codeword_attributes(limit)
        if overrides:
            kd, km, kr = kd.copy(), km.copy(), kr.copy()
            for idx, (okd, okm, okr) in overrides.items():
                if idx < kd.shape[0]:
                    kd[idx] = okd
                    km[idx] = okm
                    kr[idx] = okr
        env = env or self.envmap
        return brdf.render_image(
            kd[u], km[u], kr[u], view.fg_normals(), view.fg_view_dirs(), env
        )

    def render_view_discrete(self, view, limit=None, env=None, overrides=None):
        z = self.encode_np(view.points(foreground=True))
        img = np.zeros(view.image.shape, dtype=np.float32)
        img[view.mask] = self.render_discrete_from_latents(
            z, view, limit=limit, env=env, overrides=overrides
        )
        return img

    # -- checkpoint IO -------------------------------------------------------------

    def state_tensors(self):
        state = {p.name: p.data for p in self.parameters()}
        state.update(self.codebook.state_tensors())
        state["meta.bbox_center"] = self.bbox_center
        state["meta.bbox_scale"] = self.bbox_scale
        state["meta.selected_m"] = np.array(
            [-1 if self.selected_m is None else self.selected_m], dtype=np.float32
        )
        state["meta.n_freqs"] = np.array([self.n_freqs], dtype=np.float32)
        state["meta.env_shape"] = np.array(
            [self.envmap.rows, self.envmap.cols], dtype=np.float32
        )
        state["meta.ema_decay"] = np.array([self.codebook.ema_decay], dtype=np.float32)
        return state

    def save(self, path):
        write_tensor_file(path, self.state_tensors())

    @classmethod
    def load(cls, path):
        tensors = read_tensor_file(path)
        try:
            enc_w = tensors["encoder.fc1.w"].shape[0]
            dec_w = tensors["dec_c.basecolor.fc1.w"].shape[0]
            latent = tensors["codebook.codewords"].shape[1]
            m0 = tensors["codebook.codewords"].shape[0]
            n_freqs = int(tensors["meta.n_freqs"][0])
            env_rows, env_cols = (int(v) for v in tensors["meta.env_shape"])
        except KeyError as e:
            raise CheckpointFormatError(f"checkpoint missing tensor {e.args[0]!r}") from e
        model = cls(
            latent_dim=latent,
            encoder_width=enc_w,
            decoder_width=dec_w,
            n_freqs=n_freqs,
            codebook_size=m0,
            env_rows=env_rows,
            env_cols=env_cols,
        )
        by_name = {p.name: p for p in model.parameters()}
        for name, param in by_name.items():
            if name not in tensors:
                raise CheckpointFormatError(f"checkpoint missing tensor {name!r}")
            data = tensors[name]
            if data.shape != param.shape:
                raise CheckpointFormatError(
                    f"tensor {name!r} has shape {data.shape}, expected {param.shape}"
                )
            param.data = np.ascontiguousarray(data, dtype=ad.default_dtype())
        model.codebook = Codebook.from_state(
            tensors, ema_decay=float(tensors.get("meta.ema_decay", [0.99])[0])
        )
        model.bbox_center = tensors["meta.bbox_center"].astype(np.float32)
        model.bbox_scale = tensors["meta.bbox_scale"].astype(np.float32)
        sel = int(tensors["meta.selected_m"][0])
        model.selected_m = None if sel < 0 else sel
        return model


def write_tensor_file(path, tensors):
    with open(path, "wb") as f:
        f.write(CHECKPOINT_MAGIC)
        f.write(struct.pack("<II", CHECKPOINT_VERSION, len(tensors)))
        for name in sorted(tensors):
            data = np.ascontiguousarray(tensors[name], dtype="<f4")
            encoded = name.encode("utf-8")
            f.write(struct.pack("<I", len(encoded)))
            f.write(encoded)
            f.write(struct.pack("<I", data.ndim))
            f.write(struct.pack(f"<{data.ndim}I", *data.shape))
            f.write(data.tobytes())


def read_tensor_file(path):
    with open(path, "rb") as f:
        blob = f.read()
    if blob[:4] != CHECKPOINT_MAGIC:
        raise CheckpointFormatError(f"bad magic in checkpoint {path}")
    version, count = struct.unpack("<II", blob[4:12])
    if version != CHECKPOINT_VERSION:
        raise CheckpointFormatError(f"unsupported checkpoint version {version}")
    off = 12
    tensors = {}
    try:
        for _ in range(count):
            (name_len,) = struct.unpack_from("<I", blob, off)
            off += 4
            name = blob[off : off + name_len].decode("utf-8")
            off += name_len
            (ndim,) = struct.unpack_from("<I", blob, off)
            off += 4
            shape = struct.unpack_from(f"<{ndim}I", blob, off)
            off += 4 * ndim
            n_bytes = int(np.prod(shape)) * 4 if ndim else 4
            payload = blob[off : off + n_bytes]
            if len(payload) < n_bytes:
                raise CheckpointFormatError(
                    f"checkpoint truncated inside tensor {name!r}"
                )
            tensors[name] = np.frombuffer(payload, dtype="<f4").reshape(shape).copy()
            off += n_bytes
    except struct.error as e:
        raise CheckpointFormatError(f"checkpoint truncated: {e}") from e
    return tensors
