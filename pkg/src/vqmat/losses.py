"""Loss terms of the two-branch objective.

All terms return scalar graph tensors and are nonnegative. Per-pixel color
residuals are squared L2 norms over RGB, averaged over the batch. Detached
quantities follow the stop-gradient placement of the quantizer: the
commitment term moves latents toward codewords (codewords themselves learn
by EMA), the roughness weight of the specular penalty is a constant, and
the smooth term only pulls latent pairs together.
"""

from __future__ import annotations

import numpy as np

from . import autodiff as ad
from . import brdf
from .autodiff import Tensor


def loss_reconstruction(render_c, render_d, gt):
    """Continuous/discrete color losses plus the chromaticity-space term."""
    gt_t = ad.as_tensor(gt)
    if gt_t.shape[0] == 0:
        raise ValueError("reconstruction loss needs a nonempty batch")
    rec_c = ad.tmean(ad.tsum(ad.power(render_c - gt_t, 2.0), axis=-1))
    rec_d = ad.tmean(ad.tsum(ad.power(render_d - gt_t, 2.0), axis=-1))
    chr_diff = brdf.chromaticity(render_d) - brdf.chromaticity(gt_t)
    chrm = ad.tmean(ad.tsum(ad.power(chr_diff, 2.0), axis=-1))
    return rec_c, rec_d, chrm


def loss_vq(z, codewords_u, commitment=0.1):
    """Quantizer loss: codeword term plus weighted commitment term.

    The codeword term carries no gradient (EMA owns codeword movement, and
    the latent side is detached); it is returned for logging. Only the
    commitment term pulls ``z`` toward its matched codeword.
    """
    e_u = np.asarray(codewords_u)
    codebook_term = float(np.mean(np.sum((e_u - z.data) ** 2, axis=-1)))
    commit = ad.tmean(ad.tsum(ad.power(z - Tensor(e_u.astype(z.dtype)), 2.0), axis=-1))
    total = codebook_term + commitment * commit
    return total, codebook_term, commit


def loss_lambertian(k_r, k_s):
    """Push specular color down wherever (detached) roughness exceeds 0.5."""
    kr = np.asarray(k_r.data if isinstance(k_r, Tensor) else k_r)
    w_r = np.where(kr > 0.5, 2.0 * kr - 1.0, 0.0).astype(kr.dtype)
    return ad.tmean(ad.mul(ad.tmean(k_s, axis=-1, keepdims=True), w_r))


def loss_smooth(z_vq_i, z_vq_j, gt_i, gt_j, alpha=60.0, beta=0.1):
    """Color-aware pairwise pull between quantized latents of adjacent pixels.

    Pairs whose ground-truth chromaticities differ by at most ``beta``
    (squared distance) get full weight 1; beyond the threshold the weight
    decays as exp(-alpha * distance). The penalty is one minus the latent
    dot product, so same-codeword pairs contribute nothing.
    """
    ci = brdf.chromaticity(np.asarray(gt_i, dtype=np.float64))
    cj = brdf.chromaticity(np.asarray(gt_j, dtype=np.float64))
    e_chr = np.sum((ci - cj) ** 2, axis=-1)
    e_chr = np.where(e_chr > beta, e_chr, 0.0)
    weight = np.exp(-alpha * e_chr)
    sim = ad.tsum(ad.mul(z_vq_i, z_vq_j), axis=-1)
    return ad.tmean(ad.mul(1.0 - sim, weight.astype(sim.dtype)))


def total_loss(rec_c, rec_d, chrm, vq, lam, smooth, cfg):
    """Weighted sum with the configured loss weights."""
    return (
        cfg.w1 * rec_c
        + cfg.w2 * rec_d
        + cfg.w3 * chrm
        + cfg.w4 * vq
        + cfg.w5 * lam
        + cfg.w6 * smooth
    )
