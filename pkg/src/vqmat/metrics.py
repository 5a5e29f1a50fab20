"""Evaluation: image quality, segmentation scores, and the clustering baseline.

PSNR optionally matches the average luminance of the reference through a
single least-squares scale factor before comparing, which removes the
global light/albedo scale ambiguity of inverse rendering. Segmentation is
scored after a greedy one-to-one matching of predicted to true labels by
overlap, with micro scores pooling pixels and macro scores averaging over
true classes. The meanshift baseline clusters continuous-branch features
with a flat kernel.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.ndimage import convolve

PSNR_CAP = 99.0


def psnr(a, b, luminance_match=False):
    """Peak signal-to-noise ratio in dB of ``a`` against reference ``b``.

    With ``luminance_match`` the comparison image is scaled by the single
    scalar minimizing the MSE first. Identical (or perfectly rescalable)
    images cap at 99 dB.
    """
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError(f"image shapes differ: {a.shape} vs {b.shape}")
    if luminance_match:
        denom = float(np.sum(a * a))
        if denom > 0:
            a = a * (float(np.sum(a * b)) / denom)
    mse = float(np.mean((a - b) ** 2))
    if mse < 10 ** (-PSNR_CAP / 10.0):
        return PSNR_CAP
    return min(10.0 * np.log10(1.0 / mse), PSNR_CAP)


def _gaussian_kernel(size=11, sigma=1.5):
    r = np.arange(size) - size // 2
    k = np.exp(-(r**2) / (2.0 * sigma**2))
    k2 = np.outer(k, k)
    return k2 / k2.sum()


def ssim(a, b, k1=0.01, k2=0.03):
    """Mean structural similarity with an 11x11 Gaussian window (sigma 1.5).

    Inputs are (H, W) or (H, W, C) images in [0, 1]; channels are averaged.
    """
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError(f"image shapes differ: {a.shape} vs {b.shape}")
    if a.ndim == 2:
        a = a[..., None]
        b = b[..., None]
    kernel = _gaussian_kernel()
    c1, c2 = k1**2, k2**2
    scores = []
    for ch in range(a.shape[2]):
        x, y = a[..., ch], b[..., ch]
        mx = convolve(x, kernel, mode="nearest")
        my = convolve(y, kernel, mode="nearest")
        mxx = convolve(x * x, kernel, mode="nearest") - mx * mx
        myy = convolve(y * y, kernel, mode="nearest") - my * my
        mxy = convolve(x * y, kernel, mode="nearest") - mx * my
        s = ((2 * mx * my + c1) * (2 * mxy + c2)) / (
            (mx * mx + my * my + c1) * (mxx + myy + c2)
        )
        scores.append(float(s.mean()))
    return float(np.mean(scores))


@dataclass
class SegEvalReport:
    """Micro/macro segmentation scores and the label matching used."""

    micro_f1: float
    macro_f1: float
    macro_precision: float
    macro_recall: float
    matching: dict
    per_class: dict = field(default_factory=dict)

    def to_dict(self):
        return {
            "micro_f1": self.micro_f1,
            "macro_f1": self.macro_f1,
            "macro_precision": self.macro_precision,
            "macro_recall": self.macro_recall,
            "matching": {str(k): int(v) for k, v in self.matching.items()},
            "per_class": {str(k): v for k, v in self.per_class.items()},
        }


def match_labels(pred, truth):
    """Greedy one-to-one predicted-to-true matching by descending overlap.

    Ties break on the true label and then on the predicted label's full
    overlap profile against the truth, so the resulting scores do not
    depend on how predicted labels happen to be numbered.
    """
    overlap = {}
    for p in np.unique(pred):
        sel = pred == p
        for t in np.unique(truth[sel]):
            overlap[(int(p), int(t))] = int(np.sum(sel & (truth == t)))
    profile = {}
    for (p, t), c in overlap.items():
        profile.setdefault(p, []).append((-c, t))
    for p in profile:
        profile[p] = tuple(sorted(profile[p]))
    entries = sorted(
        overlap.items(), key=lambda kv: (-kv[1], kv[0][1], profile[kv[0][0]])
    )
    matching = {}
    used_true = set()
    for (p, t), _ in entries:
        if p in matching or t in used_true:
            continue
        matching[p] = t
        used_true.add(t)
    return matching


def seg_scores(pred, truth):
    """Segmentation scores against ground truth, background excluded.

    Predicted labels are first matched one-to-one to true labels by greedy
    maximal overlap; unmatched predicted labels count entirely as false
    positives. Micro scores pool all pixels (precision = recall = F1 for
    single-label maps); macro scores average per true class.
    """
    pred = np.asarray(pred).reshape(-1)
    truth = np.asarray(truth).reshape(-1)
    fg = truth >= 0
    pred, truth = pred[fg], truth[fg]
    if pred.size == 0:
        raise ValueError("segmentation scoring needs a nonempty foreground")
    matching = match_labels(pred, truth)
    mapped = np.array([matching.get(int(p), -1) for p in np.unique(pred)])
    lookup = {int(p): matching.get(int(p), -1) for p in np.unique(pred)}
    pred_mapped = np.vectorize(lookup.get)(pred)

    correct = int(np.sum(pred_mapped == truth))
    micro = correct / truth.size

    per_class = {}
    precisions, recalls, f1s = [], [], []
    for t in np.unique(truth):
        tp = int(np.sum((pred_mapped == t) & (truth == t)))
        fp = int(np.sum((pred_mapped == t) & (truth != t)))
        fn = int(np.sum((pred_mapped != t) & (truth == t)))
        p = tp / (tp + fp) if tp + fp > 0 else 0.0
        r = tp / (tp + fn) if tp + fn > 0 else 0.0
        f1 = 2 * p * r / (p + r) if p + r > 0 else 0.0
        per_class[int(t)] = {"precision": p, "recall": r, "f1": f1}
        precisions.append(p)
        recalls.append(r)
        f1s.append(f1)
    return SegEvalReport(
        micro_f1=micro,
        macro_f1=float(np.mean(f1s)),
        macro_precision=float(np.mean(precisions)),
        macro_recall=float(np.mean(recalls)),
        matching=matching,
        per_class=per_class,
    )


@dataclass
class MeanshiftConfig:
    bandwidth: float = 0.3
    max_iter: int = 100
    tol: float = 1e-4
    max_seeds: int = 1500
    seed: int = 0

    def __post_init__(self):
        if self.bandwidth <= 0:
            raise ValueError("bandwidth must be positive")


def meanshift(points, cfg):
    """Flat-kernel meanshift clustering; returns integer labels per point.

    Seeds iterate to their local means within the bandwidth until the shift
    falls below tolerance; converged modes closer than half a bandwidth are
    merged, and every point is assigned to its nearest mode. A random
    subsample bounds the quadratic iteration cost on large point sets; final
    assignment always covers all points.
    """
    points = np.asarray(points, dtype=np.float64)
    if points.ndim != 2 or points.shape[0] == 0:
        raise ValueError("meanshift needs a nonempty (n, d) point set")
    rng = np.random.default_rng(cfg.seed)
    if points.shape[0] > cfg.max_seeds:
        seeds = points[rng.choice(points.shape[0], cfg.max_seeds, replace=False)]
    else:
        seeds = points.copy()
    base = seeds.copy()
    for _ in range(cfg.max_iter):
        moved = 0.0
        new = np.empty_like(seeds)
        for i, s in enumerate(seeds):
            d2 = np.sum((base - s) ** 2, axis=1)
            nbr = base[d2 <= cfg.bandwidth**2]
            new[i] = nbr.mean(axis=0) if nbr.shape[0] else s
            moved = max(moved, float(np.linalg.norm(new[i] - seeds[i])))
        seeds = new
        if moved < cfg.tol:
            break
    modes = []
    for s in seeds:
        if not any(np.linalg.norm(s - m) < cfg.bandwidth / 2.0 for m in modes):
            modes.append(s)
    modes = np.stack(modes)
    d2 = np.sum((points[:, None, :] - modes[None, :, :]) ** 2, axis=2)
    return np.argmin(d2, axis=1)


def meanshift_segmentation(model, bundle, bandwidth, feature_space="latent+attrs", seed=0):
    """Clustering baseline on continuous-branch features of all foreground pixels.

    Returns per-view label maps shaped like the bundle's, with -1 background.
    """
    pts, _, _, _, _ = bundle.foreground_arrays()
    feats = []
    if feature_space in ("latent", "latent+attrs"):
        feats.append(model.encode_np(pts))
    if feature_space in ("attrs", "latent+attrs"):
        kd, km, kr = model.attributes_continuous_np(pts)
        feats.append(np.concatenate([kd, km, kr], axis=1))
    features = np.concatenate(feats, axis=1)
    labels = meanshift(features, MeanshiftConfig(bandwidth=bandwidth, seed=seed))
    maps = []
    offset = 0
    for v in bundle.views:
        count = int(v.mask.sum())
        seg = np.full(v.mask.shape, -1, dtype=np.int32)
        seg[v.mask] = labels[offset : offset + count]
        maps.append(seg)
        offset += count
    return maps
