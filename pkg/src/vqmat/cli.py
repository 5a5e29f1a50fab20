"""Command-line pipeline: gen, train, rank, segment, eval, edit, relight,
serve, export-latents.

Every run echoes its fully resolved configuration. Report-style commands
write delimited outputs (CSV / JSON / NDJSON) together with matplotlib
figures into the output directory. Exit codes: 0 success, 1 runtime
failure, 2 usage error.
"""

from __future__ import annotations

import csv
import json
import os
import sys
from pathlib import Path

import click

ADDR_ENV_VAR = "VQNERF_ADDR"


def _set_threads(n):
    for var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS"):
        os.environ[var] = str(n)


@click.group()
@click.option("--threads", type=int, default=None, help="Cap BLAS/worker thread count.")
def main(threads):
    if threads:
        _set_threads(threads)


def _fail(msg):
    click.echo(f"error: {msg}", err=True)
    sys.exit(1)


@main.command()
@click.option("--preset", default="balls3", show_default=True, help="Scene preset name.")
@click.option("--out", required=True, type=click.Path(), help="Bundle output directory.")
@click.option("--views", type=int, default=None, help="Number of camera views.")
@click.option("--res", type=int, default=None, help="Square image resolution.")
@click.option("--seed", type=int, default=0, show_default=True)
def gen(preset, out, views, res, seed):
    """Generate a synthetic ground-truth scene bundle."""
    from . import scene

    try:
        spec = scene.preset_scene(
            preset, views=views, resolution=(res, res) if res else None, seed=seed
        )
    except KeyError as e:
        raise click.UsageError(str(e))
    click.echo(f"generating preset={preset} views={len(spec.cameras)} res={spec.resolution}")
    bundle = scene.generate_scene(spec)
    scene.write_bundle(bundle, out)
    click.echo(f"wrote bundle with {len(bundle.views)} views to {out}")


def _train_options(fn):
    from .trainer import TrainConfig

    defaults = TrainConfig()
    for name in (
        "w1", "w2", "w3", "w4", "w5", "w6", "lam", "alpha", "beta", "eps",
        "learning_rate", "lr_final", "ema_decay", "max_dropout",
    ):
        fn = click.option(
            f"--{name.replace('_', '-')}", type=float,
            default=getattr(defaults, name), show_default=True,
        )(fn)
    for name in ("m0", "steps", "batch_size", "pair_limit", "seed"):
        fn = click.option(
            f"--{name.replace('_', '-')}", type=int,
            default=getattr(defaults, name), show_default=True,
        )(fn)
    fn = click.option(
        "--mode", type=click.Choice(["joint", "separate", "continuous"]),
        default=defaults.mode, show_default=True,
    )(fn)
    return fn


@main.command()
@click.option("--scene", "scene_dir", required=True, type=click.Path(exists=True))
@click.option("--out", required=True, type=click.Path(), help="Output directory.")
@click.option("--log-every", type=int, default=500, show_default=True)
@_train_options
def train(scene_dir, out, log_every, **kwargs):
    """Train the two-branch model on a scene bundle."""
    from . import plots, scene
    from .trainer import TrainConfig, TrainingDiverged, train as run_train

    cfg = TrainConfig(**kwargs)
    click.echo("resolved config: " + cfg.to_json())
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    (out / "config.json").write_text(cfg.to_json())
    bundle = scene.read_bundle(scene_dir)
    log_path = out / "train_log.ndjson"
    log_path.unlink(missing_ok=True)

    def progress(step, rec):
        if step % log_every == 0 or step == cfg.steps - 1:
            click.echo(
                f"step {step:6d}  L_all={rec['L_all']:.5f}  L_rec_c={rec['L_rec_c']:.5f}"
                f"  L_rec_d={rec['L_rec_d']:.5f}"
            )

    try:
        model, records = run_train(bundle, cfg, log_file=log_path, callback=progress)
    except TrainingDiverged as e:
        ckpt = out / "ckpt_diverged.vqnf"
        e.model.save(ckpt)
        _fail(f"{e}; checkpoint of last finite step written to {ckpt}")
    model.save(out / "ckpt.vqnf")
    plots.save_training_curves(records, out / "loss_curves.png")
    plots.save_usage_histogram(records, out / "codeword_usage.png")
    click.echo(f"wrote {out / 'ckpt.vqnf'}")


@main.command()
@click.option("--ckpt", required=True, type=click.Path(exists=True))
@click.option("--scene", "scene_dir", required=True, type=click.Path(exists=True))
@click.option("--eps", type=float, default=0.002, show_default=True)
@click.option("--out", type=click.Path(), default=None, help="Report directory (default: checkpoint's).")
@click.option("--update-ckpt/--no-update-ckpt", default=True, show_default=True,
              help="Store the selected length into the checkpoint.")
def rank(ckpt, scene_dir, eps, out, update_ckpt):
    """Rank codewords and select the codebook length by error flattening."""
    from . import plots, scene, vq
    from .model import ReflectanceModel

    model = ReflectanceModel.load(ckpt)
    bundle = scene.read_bundle(scene_dir)
    curve = vq.rank_and_select(model, bundle, epsilon=eps)
    for k, err in enumerate(curve.errors, start=1):
        click.echo(f"err_{k} = {err:.6f}")
    click.echo(f"selected M = {curve.selected}")
    out = Path(out, ) if out else Path(ckpt).parent
    out.mkdir(parents=True, exist_ok=True)
    with open(out / "rank_curve.csv", "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["k", "err_k"])
        for k, err in enumerate(curve.errors, start=1):
            w.writerow([k, f"{err:.8f}"])
    plots.save_rank_curve(curve, out / "rank_curve.png")
    (out / "selection.json").write_text(
        json.dumps({"selected_m": curve.selected, "epsilon": eps, "errors": curve.errors})
    )
    if update_ckpt:
        model.selected_m = curve.selected
        model.save(ckpt)
        click.echo(f"stored selected M in {ckpt}")


@main.command()
@click.option("--ckpt", required=True, type=click.Path(exists=True))
@click.option("--scene", "scene_dir", required=True, type=click.Path(exists=True))
@click.option("--out", required=True, type=click.Path())
@click.option("--m", type=int, default=None, help="Codebook length (default: stored selection).")
def segment(ckpt, scene_dir, out, m):
    """Export per-view segmentation maps as indexed PNGs with a JSON sidecar."""
    import numpy as np
    from PIL import Image

    from . import scene, vq
    from .editor import EditSession, display_color
    from .model import ReflectanceModel

    model = ReflectanceModel.load(ckpt)
    bundle = scene.read_bundle(scene_dir)
    session = EditSession(model, bundle, m=m)
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    for i in range(len(bundle.views)):
        seg = session.segmentation(i)
        indexed = np.where(seg == vq.BACKGROUND, 255, seg).astype(np.uint8)
        img = Image.fromarray(indexed, mode="P")
        palette = []
        for j in range(256):
            palette.extend((0, 0, 0) if j == 255 else display_color(j))
        img.putpalette(palette)
        img.save(out / f"seg_{i:04d}.png")
    sidecar = {"background_index": 255, "materials": session.materials()}
    (out / "segmentation.json").write_text(json.dumps(sidecar, indent=1))
    click.echo(f"wrote {len(bundle.views)} segmentation maps to {out}")


@main.command(name="eval")
@click.option("--ckpt", required=True, type=click.Path(exists=True))
@click.option("--scene", "scene_dir", required=True, type=click.Path(exists=True))
@click.option("--out", required=True, type=click.Path())
@click.option("--branch", type=click.Choice(["continuous", "discrete"]), default="continuous",
              show_default=True)
@click.option("--luminance-match/--no-luminance-match", default=True, show_default=True)
def eval_cmd(ckpt, scene_dir, out, branch, luminance_match):
    """Evaluate reconstruction and segmentation; write JSON, CSV, and figures."""
    import numpy as np

    from . import metrics, plots, scene, vq
    from .model import ReflectanceModel

    model = ReflectanceModel.load(ckpt)
    bundle = scene.read_bundle(scene_dir)
    m = model.selected_m or model.codebook.size
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)

    per_view = []
    preds, truths = [], []
    renders = {}
    for i, v in enumerate(bundle.views):
        img = (
            model.render_view_continuous(v)
            if branch == "continuous"
            else model.render_view_discrete(v, limit=m)
        )
        renders[i] = img
        seg = vq.build_segmentation(model, v, m)
        preds.append(seg.reshape(-1))
        truths.append(v.labels.reshape(-1))
        per_view.append(
            {
                "view": i,
                "psnr": metrics.psnr(img[v.mask], v.image[v.mask], luminance_match),
                "ssim": metrics.ssim(np.clip(img, 0, 1), np.clip(v.image, 0, 1)),
            }
        )
    seg_report = metrics.seg_scores(np.concatenate(preds), np.concatenate(truths))
    report = {
        "branch": branch,
        "m": m,
        "psnr_mean": float(np.mean([r["psnr"] for r in per_view])),
        "ssim_mean": float(np.mean([r["ssim"] for r in per_view])),
        "seg": seg_report.to_dict(),
        "per_view": per_view,
    }
    (out / "report.json").write_text(json.dumps(report, indent=1))
    with open(out / "per_view.csv", "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["view", "psnr", "ssim"])
        for r in per_view:
            w.writerow([r["view"], f"{r['psnr']:.4f}", f"{r['ssim']:.5f}"])
    plots.save_eval_summary(per_view, out / "eval_summary.png")
    v0 = bundle.views[0]
    plots.save_image_row(
        [v0.image, renders[0]], ["ground truth", f"{branch} render"], out / "view0.png"
    )
    click.echo(json.dumps({k: report[k] for k in ("psnr_mean", "ssim_mean", "m")}))
    click.echo(f"micro-F1 = {seg_report.micro_f1:.4f}  macro-F1 = {seg_report.macro_f1:.4f}")
    click.echo(f"wrote report to {out}")


@main.command()
@click.option("--ckpt", required=True, type=click.Path(exists=True))
@click.option("--scene", "scene_dir", required=True, type=click.Path(exists=True))
@click.option("--index", required=True, type=int, help="Codeword index to edit.")
@click.option("--kd", nargs=3, type=float, required=True, help="New basecolor RGB.")
@click.option("--km", type=float, required=True, help="New metallic.")
@click.option("--kr", type=float, required=True, help="New roughness.")
@click.option("--bbox", nargs=4, type=int, default=None, help="x0 y0 x1 y1 clip region.")
@click.option("--view", type=int, default=None, help="View id for bbox edits.")
@click.option("--out", required=True, type=click.Path())
def edit(ckpt, scene_dir, index, kd, km, kr, bbox, view, out):
    """Apply a material edit and render all views to PNG."""
    from . import scene
    from .editor import EditError, EditRequest, EditSession
    from .model import ReflectanceModel
    from .server import to_png_bytes

    model = ReflectanceModel.load(ckpt)
    bundle = scene.read_bundle(scene_dir)
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    session = EditSession(model, bundle, journal_path=out / "edits.ndjson")
    try:
        session.apply_edit(
            EditRequest(index=index, k_d=kd, k_m=km, k_r=kr, bbox=bbox or None, view=view)
        )
    except EditError as e:
        _fail(str(e))
    for i in range(len(bundle.views)):
        (out / f"edited_{i:04d}.png").write_bytes(to_png_bytes(session.render_view(i, "edited")))
    click.echo(f"wrote {len(bundle.views)} edited renders to {out}")


@main.command()
@click.option("--ckpt", required=True, type=click.Path(exists=True))
@click.option("--scene", "scene_dir", required=True, type=click.Path(exists=True))
@click.option("--env", "env_arg", required=True,
              help="Environment preset name or .envm file path.")
@click.option("--branch", type=click.Choice(["continuous", "discrete", "edited"]),
              default="discrete", show_default=True)
@click.option("--out", required=True, type=click.Path())
def relight(ckpt, scene_dir, env_arg, branch, out):
    """Re-render all views under a different environment map."""
    from . import brdf, scene
    from .editor import EditSession
    from .model import ReflectanceModel
    from .server import to_png_bytes

    model = ReflectanceModel.load(ckpt)
    bundle = scene.read_bundle(scene_dir)
    session = EditSession(model, bundle)
    if Path(env_arg).exists():
        try:
            session.relight(env=brdf.read_env(env_arg))
        except brdf.EnvFormatError as e:
            _fail(str(e))
    elif env_arg in brdf.ENV_PRESETS:
        session.relight(preset=env_arg)
    else:
        raise click.UsageError(f"--env {env_arg!r} is neither a file nor a preset")
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    for i in range(len(bundle.views)):
        (out / f"relit_{i:04d}.png").write_bytes(to_png_bytes(session.render_view(i, branch)))
    click.echo(f"wrote {len(bundle.views)} relit renders to {out}")


@main.command()
@click.option("--ckpt", required=True, type=click.Path(exists=True))
@click.option("--scene", "scene_dir", required=True, type=click.Path(exists=True))
@click.option("--addr", default=None, help=f"host:port (or ${ADDR_ENV_VAR}).")
@click.option("--session-dir", type=click.Path(), default=None,
              help="Directory for the edit journal (enables persistence).")
@click.option("--static-dir", type=click.Path(), default=None,
              help="Built frontend to serve at the root.")
def serve(ckpt, scene_dir, addr, session_dir, static_dir):
    """Serve the interactive editor API (and UI when available)."""
    from . import scene
    from .editor import EditSession
    from .model import ReflectanceModel
    from .server import DEFAULT_ADDR, serve_http

    model = ReflectanceModel.load(ckpt)
    bundle = scene.read_bundle(scene_dir)
    journal = Path(session_dir) / "journal.ndjson" if session_dir else None
    if journal:
        journal.parent.mkdir(parents=True, exist_ok=True)
    session = EditSession(
        model, bundle, journal_path=journal,
        env_dir=Path(session_dir) / "envs" if session_dir else None,
    )
    addr = addr or os.environ.get(ADDR_ENV_VAR, DEFAULT_ADDR)
    if static_dir is None:
        default_ui = Path(__file__).resolve().parents[2] / "frontend" / "dist"
        static_dir = default_ui if default_ui.is_dir() else None
    click.echo(f"serving on http://{addr}  (M = {session.m})")
    serve_http(session, addr, static_dir=static_dir)


@main.command(name="export-latents")
@click.option("--ckpt", required=True, type=click.Path(exists=True))
@click.option("--scene", "scene_dir", required=True, type=click.Path(exists=True))
@click.option("--out", required=True, type=click.Path(), help="CSV output path.")
@click.option("--max-points", type=int, default=20000, show_default=True)
@click.option("--seed", type=int, default=0, show_default=True)
def export_latents(ckpt, scene_dir, out, max_points, seed):
    """Dump (surface point, latent, codeword index) rows for visualization."""
    import numpy as np

    from . import scene
    from .autodiff import Tensor
    from .model import ReflectanceModel

    model = ReflectanceModel.load(ckpt)
    bundle = scene.read_bundle(scene_dir)
    pts = np.concatenate([v.points() for v in bundle.views])
    if pts.shape[0] > max_points:
        rng = np.random.default_rng(seed)
        pts = pts[rng.choice(pts.shape[0], max_points, replace=False)]
    z = model.encode_np(pts)
    u, _ = model.codebook.quantize(Tensor(z), limit=model.selected_m)
    with open(out, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["px", "py", "pz"] + [f"z{i}" for i in range(z.shape[1])] + ["u"])
        for p, zv, ui in zip(pts, z, u):
            w.writerow(
                [f"{x:.6f}" for x in p] + [f"{x:.6f}" for x in zv] + [int(ui)]
            )
    click.echo(f"wrote {pts.shape[0]} rows to {out}")


if __name__ == "__main__":
    main()
