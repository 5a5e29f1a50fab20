"""Report figures rendered to files next to the delimited outputs."""

from __future__ import annotations

import numpy as np
import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt

from .editor import display_color


def save_rank_curve(curve, path):
    """Prefix reconstruction-error curve with the selected length marked."""
    ks = np.arange(1, len(curve.errors) + 1)
    fig, ax = plt.subplots(figsize=(5, 3.2))
    ax.plot(ks, curve.errors, "o-", lw=1.5, color="#1f77b4")
    ax.axvline(curve.selected, color="#d62728", ls="--", lw=1.2)
    ax.annotate(
        f"M = {curve.selected}",
        (curve.selected, curve.errors[curve.selected - 1]),
        textcoords="offset points",
        xytext=(8, 10),
        color="#d62728",
    )
    ax.set_xlabel("codewords used")
    ax.set_ylabel("reconstruction error (MSE)")
    ax.set_yscale("log")
    ax.set_title(f"codeword ranking (eps = {curve.epsilon:g})")
    fig.tight_layout()
    fig.savefig(path, dpi=130)
    plt.close(fig)


def save_training_curves(records, path):
    """Loss components over training steps, log scale."""
    steps = [r["step"] for r in records]
    fig, ax = plt.subplots(figsize=(6.4, 3.6))
    for key in ("L_rec_c", "L_rec_d", "L_chr", "L_vq", "L_lam", "L_sm", "L_all"):
        vals = np.array([r.get(key, 0.0) for r in records], dtype=np.float64)
        ax.plot(steps, np.maximum(vals, 1e-8), lw=0.9, label=key)
    ax.set_xlabel("step")
    ax.set_ylabel("loss")
    ax.set_yscale("log")
    ax.legend(fontsize=7, ncol=4)
    fig.tight_layout()
    fig.savefig(path, dpi=130)
    plt.close(fig)


def save_usage_histogram(records, path):
    """Codeword assignment counts over time as a stacked area chart."""
    hist = np.array([r["codeword_usage_histogram"] for r in records], dtype=np.float64)
    steps = [r["step"] for r in records]
    fig, ax = plt.subplots(figsize=(6.4, 3.0))
    colors = [np.array(display_color(i)) / 255.0 for i in range(hist.shape[1])]
    ax.stackplot(steps, hist.T, colors=colors, labels=[f"cw {i}" for i in range(hist.shape[1])])
    ax.set_xlabel("step")
    ax.set_ylabel("assignments per step")
    ax.legend(fontsize=6, ncol=4, loc="upper right")
    fig.tight_layout()
    fig.savefig(path, dpi=130)
    plt.close(fig)


def save_image_row(images, titles, path, gamma=2.2):
    """A row of linear-RGB images, gamma-encoded for display."""
    fig, axes = plt.subplots(1, len(images), figsize=(2.6 * len(images), 2.8))
    if len(images) == 1:
        axes = [axes]
    for ax, img, title in zip(axes, images, titles):
        shown = img
        if shown.dtype != np.uint8:
            shown = np.clip(shown, 0.0, 1.0) ** (1.0 / gamma)
        ax.imshow(shown)
        ax.set_title(title, fontsize=8)
        ax.axis("off")
    fig.tight_layout()
    fig.savefig(path, dpi=130)
    plt.close(fig)


def save_eval_summary(per_view, path):
    """Bar chart of per-view PSNR/SSIM from an evaluation report."""
    ids = [r["view"] for r in per_view]
    psnrs = [r["psnr"] for r in per_view]
    ssims = [r["ssim"] for r in per_view]
    fig, (ax1, ax2) = plt.subplots(1, 2, figsize=(7.2, 3.0))
    ax1.bar(ids, psnrs, color="#1f77b4")
    ax1.set_xlabel("view")
    ax1.set_ylabel("PSNR (dB)")
    ax2.bar(ids, ssims, color="#2ca02c")
    ax2.set_xlabel("view")
    ax2.set_ylabel("SSIM")
    ax2.set_ylim(0, 1)
    fig.tight_layout()
    fig.savefig(path, dpi=130)
    plt.close(fig)
