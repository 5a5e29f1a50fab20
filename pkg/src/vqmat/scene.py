"""Procedural ground-truth scenes: analytic geometry, exact labels, oracle images.

Scenes are built from spheres, axis-aligned boxes, and disks with analytic
normals. Each primitive belongs to one material region; ray casting fills a
per-view G-buffer (surface point, normal, view direction, foreground mask)
and a label map, and every foreground pixel is shaded through the same
forward renderer the model trains against, so re-shading a bundle with its
stored ground truth reproduces the stored images exactly.

On disk a bundle is a directory: ``manifest.json`` plus per-view binary
``view_####.img`` / ``.gbuf`` / ``.lbl`` files and an ``env.envm`` map.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import brdf
from .brdf import BrdfAttributes, EnvironmentMap

IMG_MAGIC = b"IMGF"
GBUF_MAGIC = b"GBUF"
LBL_MAGIC = b"LBLM"
BACKGROUND_LABEL = 65535  # u16 sentinel used on disk; -1 in memory


class SceneError(ValueError):
    """Scene specification cannot be realized (e.g. camera inside geometry)."""


class BundleFormatError(ValueError):
    """A bundle file or manifest is malformed."""


# -- geometry --------------------------------------------------------------------


@dataclass(frozen=True)
class Sphere:
    center: tuple
    radius: float
    region: int

    def intersect(self, origin, dirs):
        c = np.asarray(self.center, dtype=np.float64)
        oc = origin - c
        b = dirs @ oc
        disc = b * b - (oc @ oc - self.radius**2)
        hit = disc >= 0.0
        sq = np.sqrt(np.maximum(disc, 0.0))
        t = np.where(hit, -b - sq, np.inf)
        t_far = np.where(hit, -b + sq, np.inf)
        t = np.where(t > 1e-6, t, t_far)
        t = np.where(t > 1e-6, t, np.inf)
        t_safe = np.where(np.isfinite(t), t, 0.0)
        p = origin + t_safe[:, None] * dirs
        n = (p - c) / self.radius
        return t, n

    def contains(self, point):
        return np.linalg.norm(np.asarray(point) - np.asarray(self.center)) < self.radius


@dataclass(frozen=True)
class Box:
    lo: tuple
    hi: tuple
    region: int

    def intersect(self, origin, dirs):
        lo = np.asarray(self.lo, dtype=np.float64)
        hi = np.asarray(self.hi, dtype=np.float64)
        inv = 1.0 / np.where(np.abs(dirs) > 1e-12, dirs, 1e-12)
        t0 = (lo - origin) * inv
        t1 = (hi - origin) * inv
        tmin = np.minimum(t0, t1)
        tmax = np.maximum(t0, t1)
        t_near = tmin.max(axis=1)
        t_far = tmax.min(axis=1)
        hit = (t_near <= t_far) & (t_far > 1e-6)
        t = np.where(t_near > 1e-6, t_near, t_far)
        t = np.where(hit & (t > 1e-6), t, np.inf)
        axis = np.argmax(tmin, axis=1)
        sign = -np.sign(np.take_along_axis(dirs, axis[:, None], 1))[:, 0]
        n = np.zeros_like(dirs)
        n[np.arange(dirs.shape[0]), axis] = sign
        return t, n

    def contains(self, point):
        p = np.asarray(point)
        return bool(np.all(p > np.asarray(self.lo)) and np.all(p < np.asarray(self.hi)))


@dataclass(frozen=True)
class Disk:
    center: tuple
    normal: tuple
    radius: float
    region: int

    def intersect(self, origin, dirs):
        n = np.asarray(self.normal, dtype=np.float64)
        n = n / np.linalg.norm(n)
        c = np.asarray(self.center, dtype=np.float64)
        denom = dirs @ n
        t = np.where(np.abs(denom) > 1e-9, ((c - origin) @ n) / np.where(denom == 0, 1, denom), np.inf)
        t_safe = np.where(np.isfinite(t), t, 0.0)
        p = origin + t_safe[:, None] * dirs
        inside = np.linalg.norm(p - c, axis=1) <= self.radius
        t = np.where((t > 1e-6) & inside, t, np.inf)
        # shade both faces: flip the normal toward the incoming ray
        facing = np.where((dirs @ n)[:, None] < 0.0, n, -n)
        return t, np.broadcast_to(facing, dirs.shape).copy()

    def contains(self, point):
        return False


# -- cameras -----------------------------------------------------------------------


@dataclass(frozen=True)
class Camera:
    position: tuple
    look_at: tuple = (0.0, 0.0, 0.0)
    up: tuple = (0.0, 0.0, 1.0)
    fov_deg: float = 45.0

    def basis(self):
        pos = np.asarray(self.position, dtype=np.float64)
        fwd = np.asarray(self.look_at, dtype=np.float64) - pos
        fwd /= np.linalg.norm(fwd)
        right = np.cross(fwd, np.asarray(self.up, dtype=np.float64))
        right /= np.linalg.norm(right)
        up = np.cross(right, fwd)
        return pos, fwd, right, up

    def ray_directions(self, height, width):
        pos, fwd, right, up = self.basis()
        half = np.tan(np.radians(self.fov_deg) / 2.0)
        xs = (np.arange(width) + 0.5) / width * 2.0 - 1.0
        ys = 1.0 - (np.arange(height) + 0.5) / height * 2.0
        xx, yy = np.meshgrid(xs * half * (width / height), ys * half)
        d = fwd[None, None] + xx[..., None] * right + yy[..., None] * up
        d /= np.linalg.norm(d, axis=-1, keepdims=True)
        return pos, d.reshape(-1, 3)

    def to_dict(self):
        return {
            "position": list(map(float, self.position)),
            "look_at": list(map(float, self.look_at)),
            "up": list(map(float, self.up)),
            "fov_deg": float(self.fov_deg),
        }

    @classmethod
    def from_dict(cls, d):
        return cls(
            tuple(d["position"]), tuple(d["look_at"]), tuple(d["up"]), d["fov_deg"]
        )


def camera_ring(n, radius=3.2, height=2.0, fov_deg=45.0):
    """Evenly spaced cameras on a circle, all aimed at the origin."""
    cams = []
    for i in range(n):
        phi = 2.0 * np.pi * i / n
        z = height * (1.0 if i % 2 == 0 else 0.72)
        cams.append(
            Camera(
                (radius * np.cos(phi), radius * np.sin(phi), z), fov_deg=fov_deg
            )
        )
    return cams


# -- scene description ----------------------------------------------------------------


@dataclass
class SceneSpec:
    primitives: list
    materials: list
    cameras: list
    resolution: tuple = (64, 64)
    env: EnvironmentMap = None
    seed: int = 0

    def __post_init__(self):
        if not self.materials:
            raise SceneError("a scene needs at least one material")
        regions = {p.region for p in self.primitives}
        if regions - set(range(len(self.materials))):
            raise SceneError("primitive region index outside material table")
        if self.env is None:
            self.env = brdf.env_preset("studio")


@dataclass
class View:
    image: np.ndarray
    xyz: np.ndarray
    normal: np.ndarray
    view_dir: np.ndarray
    mask: np.ndarray
    labels: np.ndarray
    camera: Camera

    def points(self, foreground=True):
        return self.xyz[self.mask] if foreground else self.xyz.reshape(-1, 3)

    def fg_normals(self):
        return self.normal[self.mask]

    def fg_view_dirs(self):
        return self.view_dir[self.mask]

    def fg_colors(self):
        return self.image[self.mask]

    def fg_labels(self):
        return self.labels[self.mask]


@dataclass
class SceneBundle:
    views: list
    env: EnvironmentMap
    materials: list
    resolution: tuple
    seed: int = 0

    @property
    def k(self):
        return len(self.materials)

    def foreground_arrays(self):
        """Concatenated per-pixel training arrays across all views."""
        pts = np.concatenate([v.points() for v in self.views])
        nrm = np.concatenate([v.fg_normals() for v in self.views])
        wo = np.concatenate([v.fg_view_dirs() for v in self.views])
        col = np.concatenate([v.fg_colors() for v in self.views])
        lbl = np.concatenate([v.fg_labels() for v in self.views])
        return pts, nrm, wo, col, lbl

    def neighbor_pairs(self):
        """Global index pairs of 4-adjacent foreground pixels (right/down)."""
        pairs = []
        offset = 0
        for v in self.views:
            h, w = v.mask.shape
            idx = np.full((h, w), -1, dtype=np.int64)
            idx[v.mask] = offset + np.arange(int(v.mask.sum()))
            right = (idx[:, :-1] >= 0) & (idx[:, 1:] >= 0)
            down = (idx[:-1, :] >= 0) & (idx[1:, :] >= 0)
            pairs.append(np.stack([idx[:, :-1][right], idx[:, 1:][right]], axis=1))
            pairs.append(np.stack([idx[:-1, :][down], idx[1:, :][down]], axis=1))
            offset += int(v.mask.sum())
        return np.concatenate(pairs) if pairs else np.zeros((0, 2), dtype=np.int64)


def generate_scene(spec):
    """Ray-cast and shade every view of the spec into a SceneBundle."""
    h, w = spec.resolution
    kd = np.stack([m.k_d for m in spec.materials])
    km = np.array([[m.k_m] for m in spec.materials], dtype=np.float32)
    kr = np.array([[m.k_r] for m in spec.materials], dtype=np.float32)
    for cam in spec.cameras:
        for prim in spec.primitives:
            if prim.contains(cam.position):
                raise SceneError(f"camera at {cam.position} is inside {prim}")
    views = []
    for cam in spec.cameras:
        origin, dirs = cam.ray_directions(h, w)
        best_t = np.full(dirs.shape[0], np.inf)
        best_n = np.zeros_like(dirs)
        best_r = np.full(dirs.shape[0], -1, dtype=np.int32)
        for prim in spec.primitives:
            t, n = prim.intersect(origin, dirs)
            closer = t < best_t
            best_t = np.where(closer, t, best_t)
            best_n[closer] = n[closer]
            best_r = np.where(closer, prim.region, best_r)
        mask = np.isfinite(best_t)
        xyz = np.zeros((h * w, 3), dtype=np.float32)
        xyz[mask] = (origin + best_t[mask, None] * dirs[mask]).astype(np.float32)
        nrm = np.zeros((h * w, 3), dtype=np.float32)
        nrm[mask] = best_n[mask].astype(np.float32)
        wo = np.zeros((h * w, 3), dtype=np.float32)
        wo[mask] = (-dirs[mask]).astype(np.float32)
        labels = np.where(mask, best_r, -1).astype(np.int32)
        image = np.zeros((h * w, 3), dtype=np.float32)
        region = best_r[mask]
        image[mask] = brdf.render_image(
            kd[region], km[region], kr[region], nrm[mask], wo[mask], spec.env
        )
        views.append(
            View(
                image=image.reshape(h, w, 3),
                xyz=xyz.reshape(h, w, 3),
                normal=nrm.reshape(h, w, 3),
                view_dir=wo.reshape(h, w, 3),
                mask=mask.reshape(h, w),
                labels=labels.reshape(h, w),
                camera=cam,
            )
        )
    return SceneBundle(
        views=views,
        env=spec.env,
        materials=list(spec.materials),
        resolution=spec.resolution,
        seed=spec.seed,
    )


# -- presets -------------------------------------------------------------------------


def preset_scene(name, views=None, resolution=None, seed=0):
    """Named ground-truth scenes used by tests and the acceptance suite."""
    if name == "balls3":
        prims = [
            Sphere((-0.85, -0.5, 0.0), 0.58, 0),
            Sphere((0.85, -0.45, 0.0), 0.62, 1),
            Sphere((0.0, 0.8, 0.0), 0.55, 2),
        ]
        mats = [
            BrdfAttributes((0.75, 0.14, 0.10), 0.05, 0.90),  # diffuse red
            BrdfAttributes((0.95, 0.75, 0.33), 0.90, 0.30),  # metallic gold
            BrdfAttributes((0.92, 0.92, 0.90), 0.50, 0.15),  # glossy white
        ]
        cams = camera_ring(views or 16, radius=3.4, height=2.1)
        return SceneSpec(prims, mats, cams, resolution or (64, 64), brdf.env_preset("studio"), seed)
    if name == "matpair":
        prims = [
            Sphere((-0.75, 0.0, 0.0), 0.68, 0),
            Sphere((0.75, 0.0, 0.0), 0.68, 1),
        ]
        mats = [
            BrdfAttributes((0.70, 0.24, 0.18), 0.03, 0.92),  # rough diffuse
            BrdfAttributes((0.85, 0.85, 0.88), 0.65, 0.18),  # glossy
        ]
        cams = camera_ring(views or 12, radius=3.2, height=1.9)
        return SceneSpec(prims, mats, cams, resolution or (48, 48), brdf.env_preset("overcast"), seed)
    if name == "single":
        prims = [Sphere((0.0, 0.0, 0.0), 0.8, 0)]
        mats = [BrdfAttributes((0.6, 0.35, 0.2), 0.2, 0.6)]
        cams = camera_ring(views or 6, radius=3.0, height=1.6)
        return SceneSpec(prims, mats, cams, resolution or (32, 32), brdf.env_preset("studio"), seed)
    raise KeyError(f"unknown scene preset {name!r}")


# -- bundle IO ------------------------------------------------------------------------


def _write_block(path, magic, dims, payload):
    with open(path, "wb") as f:
        f.write(magic)
        f.write(struct.pack(f"<{len(dims)}I", *dims))
        f.write(payload.tobytes())


def _read_block(path, magic, dtype, channels, section):
    with open(path, "rb") as f:
        blob = f.read()
    if blob[:4] != magic:
        raise BundleFormatError(f"bad magic in {section} file {path}")
    if len(blob) < 12:
        raise BundleFormatError(f"truncated {section} header in {path}")
    h, w = struct.unpack("<II", blob[4:12])
    itemsize = np.dtype(dtype).itemsize
    expected = 12 + h * w * channels * itemsize
    if len(blob) < expected:
        raise BundleFormatError(
            f"truncated {section} payload in {path}: expected {expected} bytes, got {len(blob)}"
        )
    arr = np.frombuffer(blob[12:expected], dtype=dtype)
    shape = (h, w, channels) if channels > 1 else (h, w)
    return arr.reshape(shape).copy()


def write_bundle(bundle, path):
    """Write manifest plus per-view binary blocks; round-trips bit-exactly."""
    path = Path(path)
    path.mkdir(parents=True, exist_ok=True)
    manifest = {
        "format": "vqmat-bundle",
        "version": 1,
        "resolution": list(bundle.resolution),
        "k": bundle.k,
        "seed": bundle.seed,
        "env": "env.envm",
        "materials": [
            {"k_d": [float(x) for x in m.k_d], "k_m": float(m.k_m), "k_r": float(m.k_r)}
            for m in bundle.materials
        ],
        "views": [],
    }
    for i, v in enumerate(bundle.views):
        stem = f"view_{i:04d}"
        h, w = v.mask.shape
        gbuf = np.concatenate(
            [v.xyz, v.normal, v.view_dir, v.mask[..., None].astype(np.float32)], axis=-1
        ).astype("<f4")
        _write_block(path / f"{stem}.img", IMG_MAGIC, (h, w), v.image.astype("<f4"))
        _write_block(path / f"{stem}.gbuf", GBUF_MAGIC, (h, w), gbuf)
        lbl = np.where(v.labels < 0, BACKGROUND_LABEL, v.labels).astype("<u2")
        _write_block(path / f"{stem}.lbl", LBL_MAGIC, (h, w), lbl)
        manifest["views"].append(
            {
                "id": i,
                "image": f"{stem}.img",
                "gbuffer": f"{stem}.gbuf",
                "labels": f"{stem}.lbl",
                "camera": v.camera.to_dict(),
            }
        )
    brdf.write_env(bundle.env, path / "env.envm")
    with open(path / "manifest.json", "w") as f:
        json.dump(manifest, f, indent=1, sort_keys=True)


def read_bundle(path):
    path = Path(path)
    manifest_path = path / "manifest.json"
    if not manifest_path.exists():
        raise BundleFormatError(f"missing manifest.json in {path}")
    with open(manifest_path) as f:
        manifest = json.load(f)
    if manifest.get("format") != "vqmat-bundle":
        raise BundleFormatError(f"not a scene bundle: {path}")
    views = []
    for entry in manifest["views"]:
        img = _read_block(path / entry["image"], IMG_MAGIC, "<f4", 3, "image")
        gbuf = _read_block(path / entry["gbuffer"], GBUF_MAGIC, "<f4", 10, "gbuffer")
        lbl16 = _read_block(path / entry["labels"], LBL_MAGIC, "<u2", 1, "labels")
        labels = np.where(lbl16 == BACKGROUND_LABEL, -1, lbl16.astype(np.int32))
        views.append(
            View(
                image=img,
                xyz=gbuf[..., 0:3],
                normal=gbuf[..., 3:6],
                view_dir=gbuf[..., 6:9],
                mask=gbuf[..., 9] > 0.5,
                labels=labels,
                camera=Camera.from_dict(entry["camera"]),
            )
        )
    env = brdf.read_env(path / manifest["env"])
    materials = [
        BrdfAttributes(m["k_d"], m["k_m"], m["k_r"]) for m in manifest["materials"]
    ]
    return SceneBundle(
        views=views,
        env=env,
        materials=materials,
        resolution=tuple(manifest["resolution"]),
        seed=manifest.get("seed", 0),
    )
