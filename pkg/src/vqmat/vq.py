"""Discrete-branch quantizer: codebook, dropout ranking, segmentation.

Latents are matched to their nearest codeword by squared distance; the
quantized value is forwarded with a straight-through gradient so the
downstream decoder trains the encoder. Codewords learn by exponential
moving averages of their assigned latents rather than by gradient, and
carry linearly ascending dropout rates so that early codewords absorb the
dominant materials. After training, rendering with growing codeword
prefixes yields an error curve whose flattening point selects the final
codebook length.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor

BACKGROUND = -1  # segmentation sentinel for masked pixels


class Codebook:
    """Unit-norm codewords with EMA statistics and per-codeword dropout rates."""

    def __init__(self, size, dim, rng=None, max_dropout=0.7, ema_decay=0.99, laplace_eps=1e-5):
        if size < 1:
            raise ValueError("codebook must hold at least one codeword")
        rng = rng or np.random.default_rng(0)
        cw = rng.normal(size=(size, dim))
        cw /= np.linalg.norm(cw, axis=1, keepdims=True)
        self.codewords = cw.astype(ad.default_dtype())
        self.dropout_rates = (
            np.linspace(0.0, max_dropout, size) if size > 1 else np.zeros(1)
        ).astype(np.float32)
        self.ema_decay = ema_decay
        self.laplace_eps = laplace_eps
        self.ema_size = np.ones(size, dtype=np.float64)
        self.ema_sum = self.codewords.astype(np.float64).copy()

    @property
    def size(self):
        return self.codewords.shape[0]

    @property
    def dim(self):
        return self.codewords.shape[1]

    def sample_dropout(self, rng):
        """Bernoulli keep mask; the rate-zero first codeword is always kept."""
        keep = rng.random(self.size) >= self.dropout_rates
        keep[0] = True
        return keep

    def reinit_from_latents(self, latents, rng):
        """Re-seed codewords from observed latents (greedy max-min spread).

        Random-normal codewords can start far from the latent manifold and
        never win an assignment, leaving dead entries in low-dropout slots
        that break the importance ordering. Seeding from actual encoder
        outputs after a short warmup keeps every codeword competitive.
        """
        latents = np.asarray(latents, dtype=np.float64)
        latents = latents / np.maximum(np.linalg.norm(latents, axis=1, keepdims=True), 1e-12)
        chosen = [int(rng.integers(latents.shape[0]))]
        d2 = np.sum((latents - latents[chosen[0]]) ** 2, axis=1)
        while len(chosen) < self.size:
            nxt = int(np.argmax(d2))
            chosen.append(nxt)
            d2 = np.minimum(d2, np.sum((latents - latents[nxt]) ** 2, axis=1))
        self.codewords = latents[chosen].astype(self.codewords.dtype)
        self.ema_size = np.ones(self.size, dtype=np.float64)
        self.ema_sum = self.codewords.astype(np.float64).copy()

    def quantize(self, z, keep=None, limit=None):
        """Match latents to their nearest kept codeword.

        Returns ``(u, z_vq)`` where ``u`` are codeword indices into the full
        codebook and ``z_vq`` forwards the codeword values exactly while
        passing gradients straight through to ``z``. Ties break toward the
        lowest index. ``limit`` restricts the search to the first ``limit``
        codewords (used at inference after length selection).
        """
        z_t = ad.as_tensor(z)
        active = self.codewords[: limit or self.size]
        idx = np.arange(active.shape[0])
        if keep is not None:
            keep = np.asarray(keep[: active.shape[0]], dtype=bool)
            if not keep.any():
                raise ValueError("dropout mask must keep at least one codeword")
            active = active[keep]
            idx = idx[keep]
        active = active.astype(z_t.dtype)
        # |e - z|^2 = |e|^2 - 2 z.e + |z|^2; the |z|^2 column offset never
        # changes the argmin, so score rows by |e|^2 - 2 z.e
        d2 = np.sum(active * active, axis=1)[None, :] - 2.0 * (z_t.data @ active.T)
        u = idx[np.argmin(d2, axis=1)]
        z_vq = ad.straight_through(Tensor(self.codewords[u].astype(z_t.dtype)), z_t)
        return u, z_vq

    def ema_update(self, z_values, assignments):
        """Absorb one step of assignments into the EMA codeword estimates.

        Cluster sizes and sums decay by the EMA factor and accumulate the
        batch statistics; codewords move to the Laplace-smoothed means and
        are re-normalized to the unit sphere. Codewords with a near-zero
        accumulated sum keep their previous direction.
        """
        z_values = np.asarray(z_values, dtype=np.float64)
        assignments = np.asarray(assignments)
        counts = np.bincount(assignments, minlength=self.size).astype(np.float64)
        sums = np.zeros((self.size, self.dim), dtype=np.float64)
        np.add.at(sums, assignments, z_values)
        g = self.ema_decay
        self.ema_size = g * self.ema_size + (1.0 - g) * counts
        self.ema_sum = g * self.ema_sum + (1.0 - g) * sums
        total = self.ema_size.sum()
        smoothed = (
            (self.ema_size + self.laplace_eps)
            / (total + self.size * self.laplace_eps)
            * total
        )
        means = self.ema_sum / smoothed[:, None]
        norms = np.linalg.norm(means, axis=1, keepdims=True)
        ok = norms[:, 0] > 1e-12
        normed = np.where(ok[:, None], means / np.maximum(norms, 1e-12), self.codewords)
        self.codewords = normed.astype(self.codewords.dtype)

    def state_tensors(self):
        return {
            "codebook.codewords": self.codewords,
            "codebook.dropout_rates": self.dropout_rates,
            "codebook.ema_size": self.ema_size.astype(np.float32),
            "codebook.ema_sum": self.ema_sum.astype(np.float32),
        }

    @classmethod
    def from_state(cls, tensors, ema_decay=0.99, laplace_eps=1e-5):
        cw = tensors["codebook.codewords"]
        cb = cls(cw.shape[0], cw.shape[1], ema_decay=ema_decay, laplace_eps=laplace_eps)
        cb.codewords = cw.astype(ad.default_dtype())
        cb.dropout_rates = tensors["codebook.dropout_rates"].astype(np.float32)
        cb.ema_size = tensors["codebook.ema_size"].astype(np.float64)
        cb.ema_sum = tensors["codebook.ema_sum"].astype(np.float64)
        return cb


@dataclass
class RankingCurve:
    """Prefix reconstruction errors and the selected codebook length."""

    errors: list
    selected: int
    epsilon: float


def select_codebook_length(errors, epsilon):
    """First prefix length whose error sits within epsilon of all longer ones."""
    m0 = len(errors)
    for k in range(1, m0 + 1):
        tail = errors[k:]
        if all(abs(errors[k - 1] - e) <= epsilon for e in tail):
            return k
    return m0


def rank_and_select(model, bundle, epsilon=0.002, views=None):
    """Score codeword prefixes by discrete-branch reconstruction error.

    For each prefix length k the discrete branch is evaluated with only the
    first k codewords (no dropout) on the bundle's views; the error is the
    mean squared RGB difference over foreground pixels. Returns the curve
    and the selected length.
    """
    view_ids = list(range(len(bundle.views))) if views is None else list(views)
    if not view_ids:
        raise ValueError("ranking requires at least one evaluation view")
    m0 = model.codebook.size
    errors = []
    cached = [
        (bundle.views[v], model.encode_np(bundle.views[v].points(foreground=True)))
        for v in view_ids
    ]
    for k in range(1, m0 + 1):
        se, n = 0.0, 0
        for view, z in cached:
            pred = model.render_discrete_from_latents(z, view, limit=k)
            gt = view.image[view.mask]
            se += float(np.sum((pred - gt) ** 2))
            n += gt.shape[0]
        errors.append(se / (3 * n))
    selected = select_codebook_length(errors, epsilon)
    return RankingCurve(errors=errors, selected=selected, epsilon=epsilon)


def build_segmentation(model, view, limit=None):
    """Per-pixel codeword indices for one view; background pixels get -1.

    Quantization runs against the first ``limit`` codewords with no dropout,
    so the map depends only on surface coordinates and is identical for any
    view observing the same points.
    """
    h, w = view.mask.shape
    seg = np.full((h, w), BACKGROUND, dtype=np.int32)
    pts = view.points(foreground=True)
    if pts.shape[0] == 0:
        return seg
    z = model.encode_np(pts)
    u, _ = model.codebook.quantize(Tensor(z), limit=limit)
    seg[view.mask] = u
    return seg
