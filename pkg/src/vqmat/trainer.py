"""Joint two-branch optimization over scene bundles.

Every step samples a batch of foreground pixels, runs the shared encoder,
renders both branches, and applies Adam to encoder, decoders, and the
learnable environment while the codebook absorbs its assignments by EMA.
The smooth loss uses 4-adjacent foreground pixel pairs derived from the
sampled batch. The ``separate`` mode reproduces the two-phase ablation:
the continuous branch trains alone, is frozen, and the discrete branch
trains on its latents afterwards.
"""

from __future__ import annotations

import json
import time
from dataclasses import dataclass, asdict, replace

import numpy as np

from . import autodiff as ad
from . import brdf, losses
from .autodiff import Tensor
from .model import ReflectanceModel

MODES = ("joint", "separate", "continuous")


class TrainingDiverged(RuntimeError):
    """Loss became non-finite; the attached model holds the last finite step."""

    def __init__(self, step, model):
        super().__init__(f"training diverged at step {step}")
        self.step = step
        self.model = model


@dataclass
class TrainConfig:
    """Loss weights, quantizer constants, and schedule for one training run."""

    w1: float = 0.2
    w2: float = 1.0
    w3: float = 1.0
    w4: float = 1.0
    w5: float = 0.001
    w6: float = 0.05
    lam: float = 0.1
    alpha: float = 60.0
    beta: float = 0.1
    eps: float = 0.002
    m0: int = 8
    steps: int = 20000
    batch_size: int = 640
    pair_limit: int = 320
    learning_rate: float = 1e-3
    lr_final: float = 1e-4
    ema_decay: float = 0.99
    max_dropout: float = 0.7
    env_rows: int = 16
    env_cols: int = 32
    codebook_warmup: int = 100
    seed: int = 0
    mode: str = "joint"

    def __post_init__(self):
        for name in ("w1", "w2", "w3", "w4", "w5", "w6", "lam"):
            if getattr(self, name) < 0:
                raise ValueError(f"loss weight {name} must be nonnegative")
        if self.mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}, got {self.mode!r}")
        if self.eps <= 0:
            raise ValueError("ranking epsilon must be positive")

    def to_json(self):
        return json.dumps(asdict(self), sort_keys=True)

    @classmethod
    def from_json(cls, text):
        return cls(**json.loads(text))


class _PixelPool:
    """Flattened foreground pixels of a bundle plus neighbor lookup tables."""

    def __init__(self, bundle):
        pts, nrm, wo, col, lbl = bundle.foreground_arrays()
        self.points = pts
        self.normals = nrm
        self.view_dirs = wo
        self.colors = col
        self.labels = lbl
        self.n = pts.shape[0]
        # per-pixel right/down neighbor (global index, -1 when background)
        self.nbr = np.full((self.n, 2), -1, dtype=np.int64)
        offset = 0
        for v in bundle.views:
            h, w = v.mask.shape
            idx = np.full((h, w), -1, dtype=np.int64)
            count = int(v.mask.sum())
            idx[v.mask] = offset + np.arange(count)
            right = np.full((h, w), -1, dtype=np.int64)
            right[:, :-1] = idx[:, 1:]
            down = np.full((h, w), -1, dtype=np.int64)
            down[:-1, :] = idx[1:, :]
            self.nbr[offset : offset + count, 0] = right[v.mask]
            self.nbr[offset : offset + count, 1] = down[v.mask]
            offset += count

    def sample_batch(self, rng, size):
        replace_draw = size > self.n
        return rng.choice(self.n, size=size, replace=replace_draw)

    def pairs_for(self, batch_idx, rng, limit):
        """Smooth-loss pairs: sampled pixels with their fg right/down neighbors.

        Returns ``(local_i, global_j)``: positions of the pair's first pixel
        inside the batch (its latent is already encoded) and global pool
        indices of the neighbor pixels.
        """
        nbrs = self.nbr[batch_idx]
        local = np.concatenate([np.arange(batch_idx.shape[0])] * 2)
        right = np.concatenate([nbrs[:, 0], nbrs[:, 1]])
        ok = right >= 0
        local, right = local[ok], right[ok]
        if limit and local.shape[0] > limit:
            pick = rng.choice(local.shape[0], size=limit, replace=False)
            local, right = local[pick], right[pick]
        return local, right


def _cosine_lr(cfg, step):
    t = step / max(cfg.steps - 1, 1)
    return cfg.lr_final + 0.5 * (cfg.learning_rate - cfg.lr_final) * (1.0 + np.cos(np.pi * t))


def train(bundle, cfg, log_file=None, model=None, callback=None):
    """Optimize a model on a bundle per the configured mode.

    Returns ``(model, records)`` where records are the per-step loss
    dictionaries also written as newline-delimited JSON to ``log_file``.
    Raises :class:`TrainingDiverged` if the loss leaves the finite range;
    the exception carries the model at the last finite step.
    """
    if cfg.mode == "joint":
        return _run_phase(bundle, cfg, "joint", log_file, model, callback, 0)
    if cfg.mode == "continuous":
        # the quantizer-replaced ablation: no discrete branch at all
        return _run_phase(bundle, cfg, "continuous-only", log_file, model, callback, 0)
    # separate: continuous branch first, then the frozen-encoder discrete phase
    phase1 = replace(cfg, steps=cfg.steps // 2, mode="joint")
    model, rec1 = _run_phase(bundle, phase1, "continuous-only", log_file, model, callback, 0)
    phase2 = replace(cfg, steps=cfg.steps - cfg.steps // 2, mode="joint")
    model, rec2 = _run_phase(
        bundle, phase2, "discrete-only", log_file, model, callback, phase1.steps
    )
    return model, rec1 + rec2


def train_joint(bundle, cfg, **kwargs):
    return train(bundle, replace(cfg, mode="joint"), **kwargs)


def train_separate(bundle, cfg, **kwargs):
    return train(bundle, replace(cfg, mode="separate"), **kwargs)


def _run_phase(bundle, cfg, phase, log_file, model, callback, step_offset):
    rng = np.random.default_rng(cfg.seed + step_offset)
    if model is None:
        model = ReflectanceModel(
            codebook_size=cfg.m0,
            max_dropout=cfg.max_dropout,
            ema_decay=cfg.ema_decay,
            env_rows=cfg.env_rows,
            env_cols=cfg.env_cols,
            seed=cfg.seed,
        )
        model.fit_bbox(np.concatenate([v.points() for v in bundle.views]))
    pool = _PixelPool(bundle)
    continuous_on = phase in ("joint", "continuous-only")
    discrete_on = phase in ("joint", "discrete-only")
    params = []
    if continuous_on:
        params += model.encoder.parameters()
        params += model.decoder_continuous.parameters()
        params += model.envmap.parameters()
    if discrete_on:
        params += model.decoder_discrete.parameters()
    opt = ad.Adam(params, lr=cfg.learning_rate)
    records = []
    log_fh = open(log_file, "a") if log_file else None
    try:
        for step in range(cfg.steps):
            opt.lr = _cosine_lr(cfg, step)
            idx = pool.sample_batch(rng, cfg.batch_size)
            pi, pj = pool.pairs_for(idx, rng, cfg.pair_limit)
            keep = model.codebook.sample_dropout(rng)

            z = model.encode(pool.points[idx])
            if phase == "discrete-only":
                z = ad.stop_gradient(z)
            if discrete_on and step == cfg.codebook_warmup and cfg.steps > cfg.codebook_warmup:
                model.codebook.reinit_from_latents(z.data, rng)
            rec = _step_losses(model, pool, cfg, idx, pi, pj, z, keep, phase)
            total = rec.pop("_total")
            if not np.isfinite(total.data):
                raise TrainingDiverged(step_offset + step, model)

            opt.zero_grad()
            total.backward()
            opt.step()
            if discrete_on:
                model.codebook.ema_update(rec.pop("_z_all"), rec.pop("_u_all"))
            else:
                rec.pop("_z_all"), rec.pop("_u_all")

            rec["step"] = step_offset + step
            records.append(rec)
            if log_fh:
                log_fh.write(json.dumps(rec) + "\n")
            if callback:
                callback(step_offset + step, rec)
    finally:
        if log_fh:
            log_fh.close()
    return model, records


def _step_losses(model, pool, cfg, idx, pi, pj, z, keep, phase):
    gt = pool.colors[idx]
    zero = Tensor(np.zeros((), dtype=z.dtype))
    rec_c = rec_d = chrm = vq_total = lam_term = smooth = zero
    vq_codebook = 0.0
    continuous_on = phase in ("joint", "continuous-only")
    discrete_on = phase in ("joint", "discrete-only")

    ctx = brdf.ShadingContext(pool.normals[idx], pool.view_dirs[idx], model.envmap)
    render_c = None
    if continuous_on:
        kd_c, km_c, kr_c = model.decoder_continuous(z)
        render_c = brdf.render_points(
            kd_c, km_c, kr_c, None, None, model.envmap, context=ctx
        )
        rec_c = ad.tmean(ad.tsum(ad.power(render_c - Tensor(gt), 2.0), axis=-1))
        lam_term = losses.loss_lambertian(kr_c, ad.mul(kd_c, km_c))

    z_all, u_all = [], []
    if discrete_on:
        u, z_vq = model.codebook.quantize(z, keep)
        kd_d, km_d, kr_d = model.decoder_discrete(z_vq)
        render_d = brdf.render_points(
            kd_d, km_d, kr_d, None, None, model.envmap, context=ctx
        )
        _, rec_d, chrm = losses.loss_reconstruction(
            render_c if render_c is not None else render_d, render_d, gt
        )
        if render_c is None:
            rec_c = zero
        vq_total, vq_codebook, _ = losses.loss_vq(
            z, model.codebook.codewords[u], cfg.lam
        )
        z_all, u_all = [z.data], [u]
        if pi.shape[0] > 0:
            # first endpoints are batch pixels: reuse their quantized latents
            zvi = ad.take_rows(z_vq, pi)
            zj = model.encode(pool.points[pj])
            if phase == "discrete-only":
                zj = ad.stop_gradient(zj)
            uj, zvj = model.codebook.quantize(zj, keep)
            smooth = losses.loss_smooth(
                zvi, zvj, pool.colors[idx[pi]], pool.colors[pj], cfg.alpha, cfg.beta
            )
            z_all.append(zj.data)
            u_all.append(uj)

    if phase == "continuous-only":
        total = cfg.w1 * rec_c + cfg.w5 * lam_term
    elif phase == "discrete-only":
        total = cfg.w2 * rec_d + cfg.w3 * chrm + cfg.w4 * vq_total + cfg.w6 * smooth
    else:
        total = losses.total_loss(rec_c, rec_d, chrm, vq_total, lam_term, smooth, cfg)

    usage = (
        np.bincount(np.concatenate(u_all), minlength=model.codebook.size)
        if u_all
        else np.zeros(model.codebook.size, dtype=np.int64)
    )
    return {
        "L_rec_c": float(rec_c.data),
        "L_rec_d": float(rec_d.data),
        "L_chr": float(chrm.data),
        "L_vq": float(vq_total.data) if isinstance(vq_total, Tensor) else float(vq_total),
        "L_vq_codebook": vq_codebook,
        "L_lam": float(lam_term.data),
        "L_sm": float(smooth.data),
        "L_all": float(total.data),
        "codeword_usage_histogram": usage.tolist(),
        "_total": total,
        "_z_all": np.concatenate(z_all) if z_all else np.zeros((0, model.codebook.dim)),
        "_u_all": np.concatenate(u_all) if u_all else np.zeros(0, dtype=np.int64),
    }
