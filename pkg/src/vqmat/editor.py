"""Interactive editing over a frozen checkpoint: select, replace, relight.

An edit session never mutates model parameters. Material replacements live
in an override table keyed by codeword index; the edited render is the
discrete-branch pipeline with overrides applied, so an identity edit
reproduces the discrete render bit-exactly and the changed-pixel set of any
edit is precisely the codeword's segmentation region (optionally clipped to
a bounding box in one view). Every mutating operation is appended to a
newline-JSON journal, and replaying the journal restores the session.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import brdf, vq

# qualitative palette for segmentation displays (index -> RGB)
PALETTE = [
    (31, 119, 180),
    (255, 127, 14),
    (44, 160, 44),
    (214, 39, 40),
    (148, 103, 189),
    (140, 86, 75),
    (227, 119, 194),
    (127, 127, 127),
    (188, 189, 34),
    (23, 190, 207),
    (174, 199, 232),
    (255, 187, 120),
    (152, 223, 138),
    (255, 152, 150),
    (197, 176, 213),
]


def display_color(index):
    return PALETTE[index % len(PALETTE)]


class EditError(ValueError):
    """Invalid edit request (bad index, range, or target pixel)."""

    def __init__(self, code, message):
        super().__init__(message)
        self.code = code


@dataclass
class EditRequest:
    """Replace one codeword's material, optionally only inside a view bbox."""

    index: int
    k_d: tuple
    k_m: float
    k_r: float
    bbox: tuple = None  # (x0, y0, x1, y1) pixel bounds, half-open
    view: int = None  # required when bbox is given

    def __post_init__(self):
        vals = list(self.k_d) + [self.k_m, self.k_r]
        if len(self.k_d) != 3:
            raise EditError("bad_attributes", "k_d must have three channels")
        if any(v < 0.0 or v > 1.0 for v in vals):
            raise EditError("bad_attributes", "attributes must lie in [0, 1]")
        if self.bbox is not None:
            if self.view is None:
                raise EditError("bad_bbox", "bbox edits must name a view")
            x0, y0, x1, y1 = self.bbox
            if not (x0 < x1 and y0 < y1):
                raise EditError("bad_bbox", f"degenerate bbox {self.bbox}")

    def to_dict(self):
        return {
            "index": int(self.index),
            "k_d": [float(x) for x in self.k_d],
            "k_m": float(self.k_m),
            "k_r": float(self.k_r),
            "bbox": None if self.bbox is None else [int(v) for v in self.bbox],
            "view": None if self.view is None else int(self.view),
        }

    @classmethod
    def from_dict(cls, d):
        return cls(
            index=d["index"],
            k_d=tuple(d["k_d"]),
            k_m=d["k_m"],
            k_r=d["k_r"],
            bbox=None if d.get("bbox") is None else tuple(d["bbox"]),
            view=d.get("view"),
        )


class EditSession:
    """Frozen model + bundle + override table + active environment."""

    def __init__(self, model, bundle, m=None, journal_path=None, env_dir=None):
        self.model = model
        self.bundle = bundle
        self.m = m or model.selected_m or model.codebook.size
        self.overrides = {}
        self.env_name = "original"
        self.env_scale = 1.0
        self._env = None  # None means the model's trained environment
        self.journal_path = Path(journal_path) if journal_path else None
        self.env_dir = Path(env_dir) if env_dir else None
        self._seg_cache = {}
        if self.journal_path and self.journal_path.exists():
            self._replay()

    # -- queries ------------------------------------------------------------

    @property
    def active_env(self):
        base = self._env if self._env is not None else self.model.envmap
        if self.env_scale != 1.0:
            return brdf.EnvironmentMap(
                base.radiance_numpy() * self.env_scale, learnable=False
            )
        return base

    def view(self, view_id):
        if not 0 <= view_id < len(self.bundle.views):
            raise EditError("unknown_view", f"no view {view_id}")
        return self.bundle.views[view_id]

    def segmentation(self, view_id):
        if view_id not in self._seg_cache:
            self._seg_cache[view_id] = vq.build_segmentation(
                self.model, self.view(view_id), self.m
            )
        return self._seg_cache[view_id]

    def select_material(self, view_id, x, y):
        """Codeword index at pixel (x, y); errors on background or bounds."""
        seg = self.segmentation(view_id)
        h, w = seg.shape
        if not (0 <= x < w and 0 <= y < h):
            raise EditError("out_of_bounds", f"pixel ({x}, {y}) outside {w}x{h}")
        idx = int(seg[y, x])
        if idx == vq.BACKGROUND:
            raise EditError("background", "no material at a background pixel")
        return idx

    def materials(self):
        """Current material table: decoded attributes with overrides applied."""
        kd, km, kr = self.model.codeword_attributes(self.m)
        out = []
        for i in range(self.m):
            entry = {
                "index": i,
                "k_d": [float(v) for v in kd[i]],
                "k_m": float(km[i, 0]),
                "k_r": float(kr[i, 0]),
                "display_color": "#%02x%02x%02x" % display_color(i),
                "overridden": i in self.overrides,
            }
            if i in self.overrides:
                req = self.overrides[i]
                entry.update(
                    k_d=list(req.k_d), k_m=float(req.k_m), k_r=float(req.k_r)
                )
            out.append(entry)
        return out

    # -- mutations -------------------------------------------------------------

    def apply_edit(self, req):
        if req.index >= self.m:
            raise EditError(
                "bad_index", f"codeword {req.index} outside selected length {self.m}"
            )
        if req.view is not None and not 0 <= req.view < len(self.bundle.views):
            raise EditError("unknown_view", f"no view {req.view}")
        self.overrides[req.index] = req
        self._journal({"op": "edit", **req.to_dict()})

    def relight(self, env=None, preset=None, intensity=None, _record=True):
        """Swap the environment map, or scale the active one."""
        if env is not None:
            self._env = env
            self.env_name = "custom"
            entry = {"op": "relight", "file": self._store_env(env)}
        elif preset is not None:
            self._env = brdf.env_preset(preset)
            self.env_name = preset
            entry = {"op": "relight", "preset": preset}
        elif intensity is not None:
            if intensity < 0:
                raise EditError("bad_intensity", "intensity must be nonnegative")
            self.env_scale = float(intensity)
            entry = {"op": "relight", "intensity": float(intensity)}
        else:
            raise EditError("bad_relight", "provide an env, preset, or intensity")
        if _record:
            self._journal(entry)

    def reset(self):
        """Drop all overrides and restore original lighting."""
        self.overrides.clear()
        self._env = None
        self.env_name = "original"
        self.env_scale = 1.0
        self._journal({"op": "reset"})

    # -- rendering ---------------------------------------------------------------

    def render_view(self, view_id, branch="continuous"):
        """Shade one stored view; branch is continuous, discrete, or edited."""
        view = self.view(view_id)
        env = self.active_env
        if branch == "continuous":
            return self.model.render_view_continuous(view, env=env)
        if branch == "discrete":
            return self.model.render_view_discrete(view, limit=self.m, env=env)
        if branch == "edited":
            overrides = {
                i: (np.asarray(r.k_d, dtype=np.float32), r.k_m, r.k_r)
                for i, r in self.overrides.items()
                if r.bbox is None or r.view == view_id
            }
            img = self.model.render_view_discrete(
                view, limit=self.m, env=env, overrides=overrides
            )
            bboxed = [
                (i, r) for i, r in self.overrides.items()
                if r.bbox is not None and r.view == view_id
            ]
            if bboxed:
                plain = self.model.render_view_discrete(view, limit=self.m, env=env)
                seg = self.segmentation(view_id)
                for i, r in bboxed:
                    x0, y0, x1, y1 = r.bbox
                    outside = seg == i
                    outside[y0:y1, x0:x1] = False
                    img[outside] = plain[outside]
            return img
        raise EditError("bad_branch", f"unknown branch {branch!r}")

    def segmentation_overlay(self, view_id):
        """RGB visualization of the segmentation map (background black)."""
        seg = self.segmentation(view_id)
        img = np.zeros((*seg.shape, 3), dtype=np.uint8)
        for i in range(self.m):
            img[seg == i] = display_color(i)
        return img

    # -- persistence ------------------------------------------------------------

    def _journal(self, entry):
        if self.journal_path:
            with open(self.journal_path, "a") as f:
                f.write(json.dumps(entry) + "\n")

    def _store_env(self, env):
        if not self.env_dir:
            return None
        self.env_dir.mkdir(parents=True, exist_ok=True)
        name = f"relight_{len(list(self.env_dir.glob('*.envm'))):03d}.envm"
        brdf.write_env(env, self.env_dir / name)
        return name

    def _replay(self):
        path, self.journal_path = self.journal_path, None  # no re-journaling
        try:
            with open(path) as f:
                for line in f:
                    if not line.strip():
                        continue
                    entry = json.loads(line)
                    op = entry.pop("op")
                    if op == "edit":
                        self.apply_edit(EditRequest.from_dict(entry))
                    elif op == "relight":
                        if entry.get("preset"):
                            self.relight(preset=entry["preset"], _record=False)
                        elif entry.get("intensity") is not None:
                            self.relight(intensity=entry["intensity"], _record=False)
                        elif entry.get("file") and self.env_dir:
                            self.relight(
                                env=brdf.read_env(self.env_dir / entry["file"]),
                                _record=False,
                            )
                    elif op == "reset":
                        self.overrides.clear()
                        self._env = None
                        self.env_name = "original"
                        self.env_scale = 1.0
        finally:
            self.journal_path = path
