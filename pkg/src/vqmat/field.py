"""Coordinate encoder and per-attribute decoders.

The encoder lifts surface coordinates through a sinusoidal embedding and
seven fully-connected layers (the embedded input re-enters by concatenation
after the third layer) to a latent material vector that is normalized onto
the unit sphere. Each decoder is three small MLPs, one per BRDF attribute,
with the latent re-injected after the second layer and sigmoid output heads
so attributes always land in (0, 1).
"""

from __future__ import annotations

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor


def positional_encoding(p, n_freqs=6):
    """Sinusoidal embedding [p, sin(2^k pi p), cos(2^k pi p)] for k < n_freqs.

    Expects coordinates in [-1, 1]^3; output dimension is 3 + 6 * n_freqs.
    """
    p = np.asarray(p, dtype=ad.default_dtype())
    feats = [p]
    for k in range(n_freqs):
        f = (2.0**k) * np.pi * p
        feats.append(np.sin(f))
        feats.append(np.cos(f))
    return np.concatenate(feats, axis=-1)


class Linear:
    def __init__(self, fan_in, fan_out, rng, name):
        bound = np.sqrt(6.0 / fan_in)
        self.w = Tensor(
            rng.uniform(-bound, bound, size=(fan_in, fan_out)),
            requires_grad=True,
            name=f"{name}.w",
        )
        self.b = Tensor(np.zeros(fan_out), requires_grad=True, name=f"{name}.b")

    def __call__(self, x):
        return ad.matmul(x, self.w) + self.b

    def parameters(self):
        return [self.w, self.b]


class Encoder:
    """Maps surface coordinates to unit-norm latent material vectors."""

    N_LAYERS = 7
    SKIP_AFTER = 3  # embedded input concatenated onto this layer's output

    def __init__(self, n_freqs=6, width=128, latent_dim=64, rng=None, name="encoder"):
        rng = rng or np.random.default_rng(0)
        self.n_freqs = n_freqs
        self.latent_dim = latent_dim
        in_dim = 3 + 6 * n_freqs
        dims_in = [in_dim, width, width, width + in_dim, width, width, width]
        dims_out = [width] * (self.N_LAYERS - 1) + [latent_dim]
        self.layers = [
            Linear(di, do, rng, f"{name}.fc{i}")
            for i, (di, do) in enumerate(zip(dims_in, dims_out))
        ]

    def __call__(self, points):
        """Encode normalized coordinates (n, 3) to latents (n, latent_dim)."""
        gamma = positional_encoding(points, self.n_freqs)
        h = Tensor(gamma)
        for i, layer in enumerate(self.layers):
            if i == self.SKIP_AFTER:
                h = ad.concat([h, Tensor(gamma)], axis=-1)
            h = layer(h)
            if i < self.N_LAYERS - 1:
                h = ad.relu(h)
        return ad.normalize(h, axis=-1)

    def parameters(self):
        return [p for layer in self.layers for p in layer.parameters()]


class AttributeDecoder:
    """Three-layer MLP with a latent skip into the last layer; sigmoid head."""

    def __init__(self, latent_dim, width, channels, rng, name):
        self.layers = [
            Linear(latent_dim, width, rng, f"{name}.fc0"),
            Linear(width, width, rng, f"{name}.fc1"),
            Linear(width + latent_dim, channels, rng, f"{name}.fc2"),
        ]

    def __call__(self, z):
        h = ad.relu(self.layers[0](z))
        h = ad.relu(self.layers[1](h))
        h = ad.concat([h, z], axis=-1)
        return ad.sigmoid(self.layers[2](h))

    def parameters(self):
        return [p for layer in self.layers for p in layer.parameters()]


class Decoder:
    """Per-attribute decoder trio: basecolor (3ch), metallic, roughness."""

    def __init__(self, latent_dim=64, width=64, rng=None, name="decoder"):
        rng = rng or np.random.default_rng(0)
        self.basecolor = AttributeDecoder(latent_dim, width, 3, rng, f"{name}.basecolor")
        self.metallic = AttributeDecoder(latent_dim, width, 1, rng, f"{name}.metallic")
        self.roughness = AttributeDecoder(latent_dim, width, 1, rng, f"{name}.roughness")

    def __call__(self, z):
        return self.basecolor(z), self.metallic(z), self.roughness(z)

    def parameters(self):
        return (
            self.basecolor.parameters()
            + self.metallic.parameters()
            + self.roughness.parameters()
        )
