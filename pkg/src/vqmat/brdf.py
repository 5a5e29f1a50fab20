"""Physically-based forward shading.

Materials are the Disney-style triple (basecolor ``k_d``, metallic ``k_m``,
roughness ``k_r``), split into a diffuse color ``k_alpha = k_d * (1 - k_m)``
and a specular color ``k_s = k_d * k_m``. Reflectance is a Cook-Torrance
microfacet lobe (GGX distribution with ``alpha = k_r**2``, height-correlated
Smith visibility, Schlick Fresnel with ``F0 = k_s``) on top of a Lambertian
term, lit by a lat-long environment map integrated with fixed-direction
Riemann quadrature. No shadowing or indirect bounces are modeled.

The batched renderer is written so that every pixel-by-texel intermediate
that carries gradients stays rank 2; lighting sums collapse into matmuls
against the (texels, 3) radiance matrix. Geometry factors are plain numpy
constants.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor

GRAZING_EPS = 1e-4
CHROMA_DELTA = 1e-6


class EnvFormatError(ValueError):
    """Environment map file is malformed."""


def _validate_unit(v, name):
    n = np.linalg.norm(np.asarray(v, dtype=np.float64))
    if abs(n - 1.0) > 1e-4:
        raise ValueError(f"{name} must be unit length, got norm {n:.6f}")


@dataclass(frozen=True)
class BrdfAttributes:
    """One material sample; diffuse/specular splits are derived exactly."""

    k_d: np.ndarray
    k_m: float
    k_r: float

    def __post_init__(self):
        object.__setattr__(self, "k_d", np.asarray(self.k_d, dtype=np.float32))
        for name, val in (("k_d", self.k_d), ("k_m", self.k_m), ("k_r", self.k_r)):
            arr = np.asarray(val)
            if np.any(arr < 0.0) or np.any(arr > 1.0):
                raise ValueError(f"{name} outside [0, 1]: {val}")

    @property
    def k_alpha(self):
        return self.k_d * (1.0 - self.k_m)

    @property
    def k_s(self):
        return self.k_d * self.k_m


@dataclass(frozen=True)
class ShadePoint:
    """Per-pixel geometry record: position, unit normal, unit view direction."""

    p: np.ndarray
    normal: np.ndarray
    view_dir: np.ndarray

    def __post_init__(self):
        _validate_unit(self.normal, "normal")
        _validate_unit(self.view_dir, "view_dir")


def convert_attributes(k_d, k_m):
    """Split basecolor and metallic into diffuse and specular colors.

    Accepts numpy arrays or autodiff tensors; ``k_m`` broadcasts against the
    RGB channels of ``k_d``. The split is energy-preserving by construction:
    the two outputs sum to ``k_d`` componentwise.
    """
    if isinstance(k_d, Tensor) or isinstance(k_m, Tensor):
        kd_t, km_t = ad.as_tensor(k_d), ad.as_tensor(k_m)
        _check_unit_range(kd_t.data, "k_d")
        _check_unit_range(km_t.data, "k_m")
        return kd_t * (1.0 - km_t), kd_t * km_t
    k_d = np.asarray(k_d, dtype=np.float32)
    k_m = np.asarray(k_m, dtype=np.float32)
    _check_unit_range(k_d, "k_d")
    _check_unit_range(k_m, "k_m")
    return k_d * (1.0 - k_m), k_d * k_m


def _check_unit_range(arr, name, tol=1e-5):
    if np.any(arr < -tol) or np.any(arr > 1.0 + tol):
        raise ValueError(f"{name} outside [0, 1]")


# -- environment maps -----------------------------------------------------------


def latlong_directions(rows, cols):
    """Texel-center directions and solid-angle weights for a lat-long grid.

    Directions use z-up spherical coordinates; weights are midpoint-rule
    ``sin(theta) dtheta dphi`` rescaled so they sum to exactly 4*pi.
    """
    theta = (np.arange(rows) + 0.5) * np.pi / rows
    phi = (np.arange(cols) + 0.5) * 2.0 * np.pi / cols
    tt, pp = np.meshgrid(theta, phi, indexing="ij")
    dirs = np.stack(
        [np.sin(tt) * np.cos(pp), np.sin(tt) * np.sin(pp), np.cos(tt)], axis=-1
    ).reshape(-1, 3)
    w = (np.sin(tt) * (np.pi / rows) * (2.0 * np.pi / cols)).reshape(-1)
    w *= 4.0 * np.pi / w.sum()
    return dirs, w


def _softplus_inv(y):
    return np.log(np.expm1(np.maximum(y, 1e-6)))


class EnvironmentMap:
    """Lat-long grid of incoming RGB radiance with fixed quadrature.

    When ``learnable`` the radiance is reparameterized as
    ``softplus(theta)`` so it stays nonnegative under gradient updates.
    """

    def __init__(self, radiance, learnable=False):
        radiance = np.asarray(radiance, dtype=np.float32)
        if radiance.ndim != 3 or radiance.shape[2] != 3:
            raise ValueError(f"radiance must be (rows, cols, 3), got {radiance.shape}")
        if np.any(radiance < 0.0):
            raise ValueError("radiance must be nonnegative")
        self.rows, self.cols = radiance.shape[:2]
        self.directions, self.weights = latlong_directions(self.rows, self.cols)
        self.learnable = learnable
        if learnable:
            self.theta = Tensor(
                _softplus_inv(radiance.reshape(-1, 3).astype(np.float64)).astype(np.float32),
                requires_grad=True,
                name="env.theta",
            )
            self._fixed = None
        else:
            self.theta = None
            self._fixed = radiance.reshape(-1, 3)

    @property
    def n_texels(self):
        return self.rows * self.cols

    def radiance_tensor(self):
        """Flat (texels, 3) radiance as a graph tensor."""
        if self.learnable:
            return ad.softplus(self.theta)
        return Tensor(self._fixed)

    def radiance_numpy(self):
        if self.learnable:
            return np.logaddexp(0.0, self.theta.data).reshape(self.rows, self.cols, 3)
        return self._fixed.reshape(self.rows, self.cols, 3)

    def parameters(self):
        return [self.theta] if self.learnable else []

    def scaled(self, factor):
        if factor < 0:
            raise ValueError("scale factor must be nonnegative")
        return EnvironmentMap(self.radiance_numpy() * factor, learnable=False)

    def __eq__(self, other):
        return (
            isinstance(other, EnvironmentMap)
            and self.rows == other.rows
            and self.cols == other.cols
            and np.array_equal(self.radiance_numpy(), other.radiance_numpy())
        )


def env_from_function(fn, rows=16, cols=32):
    """Sample an analytic radiance function ``fn(dirs) -> (n, 3)`` onto a grid."""
    dirs, _ = latlong_directions(rows, cols)
    vals = np.asarray(fn(dirs), dtype=np.float32).reshape(rows, cols, 3)
    return EnvironmentMap(vals)


def _lobe(dirs, axis, color, sharpness):
    c = np.maximum(dirs @ np.asarray(axis, dtype=np.float64), 0.0) ** sharpness
    return c[:, None] * np.asarray(color, dtype=np.float64)


ENV_PRESETS = {}


def _register_env(name):
    def deco(fn):
        ENV_PRESETS[name] = fn
        return fn

    return deco


@_register_env("uniform")
def _env_uniform(dirs):
    return np.ones((dirs.shape[0], 3)) * 0.5


@_register_env("studio")
def _env_studio(dirs):
    # warm key light high on one side, cool fill opposite, ambient floor;
    # scaled so rendered radiance stays in a roughly [0, 1] exposure regime
    key = _lobe(dirs, np.array([0.5, 0.3, 0.81]) / np.linalg.norm([0.5, 0.3, 0.81]), [0.95, 0.84, 0.64], 2.5)
    fill = _lobe(dirs, np.array([-0.6, -0.2, 0.77]) / np.linalg.norm([-0.6, -0.2, 0.77]), [0.25, 0.33, 0.45], 2.0)
    return key + fill + 0.085


@_register_env("sunset")
def _env_sunset(dirs):
    # low warm sun with a dim blue sky dome
    sun = _lobe(dirs, np.array([0.9, 0.1, 0.42]) / np.linalg.norm([0.9, 0.1, 0.42]), [2.4, 1.2, 0.5], 8.0)
    sky = _lobe(dirs, [0.0, 0.0, 1.0], [0.25, 0.35, 0.6], 1.0)
    return sun + sky + 0.08


@_register_env("overcast")
def _env_overcast(dirs):
    sky = _lobe(dirs, [0.0, 0.0, 1.0], [0.8, 0.85, 0.95], 1.0)
    return sky + 0.25


def env_preset(name, rows=16, cols=32):
    if name not in ENV_PRESETS:
        raise KeyError(f"unknown environment preset {name!r}; have {sorted(ENV_PRESETS)}")
    return env_from_function(ENV_PRESETS[name], rows, cols)


ENV_MAGIC = b"ENVM"


def write_env(env, path):
    """Binary lat-long radiance file: magic, u32 rows/cols, float32 RGB."""
    rad = env.radiance_numpy().astype("<f4")
    with open(path, "wb") as f:
        f.write(ENV_MAGIC)
        f.write(struct.pack("<II", env.rows, env.cols))
        f.write(rad.tobytes())


def read_env(path):
    """Read an environment map; accepts the binary format or the text variant.

    The text variant is ``ENVM rows cols`` on the first line followed by one
    ``r g b`` triple per line in row-major order.
    """
    with open(path, "rb") as f:
        blob = f.read()
    if blob[:4] != ENV_MAGIC:
        raise EnvFormatError(f"bad magic in environment map file {path}")
    if blob[4:5] != b" ":  # binary layout: magic, u32 rows, u32 cols, payload
        if len(blob) < 12:
            raise EnvFormatError(f"truncated environment map header in {path}")
        rows, cols = struct.unpack("<II", blob[4:12])
        expected = 12 + rows * cols * 3 * 4
        if len(blob) < expected:
            raise EnvFormatError(
                f"truncated environment map: expected {expected} bytes, got {len(blob)}"
            )
        rad = np.frombuffer(blob[12:expected], dtype="<f4").reshape(rows, cols, 3)
        return EnvironmentMap(rad.copy())
    text = blob.decode("utf-8")
    lines = [ln for ln in text.splitlines() if ln.strip()]
    header = lines[0].split()
    if len(header) != 3:
        raise EnvFormatError("text environment header must be 'ENVM rows cols'")
    rows, cols = int(header[1]), int(header[2])
    vals = np.array([[float(x) for x in ln.split()] for ln in lines[1:]], dtype=np.float32)
    if vals.shape != (rows * cols, 3):
        raise EnvFormatError(
            f"text environment body has {vals.shape[0]} rows, expected {rows * cols}"
        )
    return EnvironmentMap(vals.reshape(rows, cols, 3))


def write_env_text(env, path):
    rad = env.radiance_numpy().reshape(-1, 3)
    with open(path, "w") as f:
        f.write(f"ENVM {env.rows} {env.cols}\n")
        for r, g, b in rad:
            f.write(f"{r:.8g} {g:.8g} {b:.8g}\n")


# -- BRDF evaluation --------------------------------------------------------------


def _ggx_d(nh, alpha_sq):
    denom = nh * nh * (alpha_sq - 1.0) + 1.0
    return alpha_sq / (np.pi * denom * denom)


def _smith_visibility(nl, nv, alpha_sq):
    # height-correlated form; includes the 1 / (4 nl nv) normalization
    lam_v = nl * np.sqrt(nv * nv * (1.0 - alpha_sq) + alpha_sq)
    lam_l = nv * np.sqrt(nl * nl * (1.0 - alpha_sq) + alpha_sq)
    return 0.5 / np.maximum(lam_v + lam_l, GRAZING_EPS)


def eval_brdf(attrs, normal, light_dir, view_dir):
    """Pointwise reflectance value for one light/view direction pair.

    Returns zero when either direction falls below the surface hemisphere.
    This is the reference (non-batched) evaluation used by tests and by the
    single-sample shading API.
    """
    for v, name in ((normal, "normal"), (light_dir, "light_dir"), (view_dir, "view_dir")):
        _validate_unit(v, name)
    n = np.asarray(normal, dtype=np.float64)
    wi = np.asarray(light_dir, dtype=np.float64)
    wo = np.asarray(view_dir, dtype=np.float64)
    nl = float(n @ wi)
    nv = float(n @ wo)
    if nl <= 0.0 or nv <= 0.0:
        return np.zeros(3, dtype=np.float32)
    h = wi + wo
    h /= np.linalg.norm(h)
    nh = max(float(n @ h), 0.0)
    vh = max(float(wo @ h), 0.0)
    alpha = float(attrs.k_r) ** 2
    alpha_sq = max(alpha * alpha, 1e-12)
    d = _ggx_d(nh, alpha_sq)
    vis = _smith_visibility(nl, nv, alpha_sq)
    f0 = attrs.k_s.astype(np.float64)
    fresnel = f0 + (1.0 - f0) * (1.0 - vh) ** 5
    spec = d * vis * fresnel
    diff = attrs.k_alpha.astype(np.float64) / np.pi
    return (diff + spec).astype(np.float32)


class ShadingContext:
    """Per-batch geometry factors shared by every render of that batch.

    All members are constant (B, T) or (B, 1) numpy arrays. The half-vector
    dot products come from the identity h = (wi + wo)/|wi + wo| with
    |wi + wo| = sqrt(2 + 2 wi.wo), which keeps everything rank 2.
    """

    __slots__ = ("nl", "nl2", "nv", "nv2", "nh2", "q", "cos_w", "cos_w_spec")

    def __init__(self, normals, view_dirs, env, dtype=np.float32):
        n = np.ascontiguousarray(np.asarray(normals, dtype=dtype))
        wo = np.ascontiguousarray(np.asarray(view_dirs, dtype=dtype))
        dirs_t = np.ascontiguousarray(env.directions.T.astype(dtype))
        weights = env.weights.astype(dtype)

        nl_raw = n @ dirs_t  # (B, T)
        ow = wo @ dirs_t  # (B, T) wi . wo
        nv_raw = np.sum(n * wo, axis=-1, keepdims=True)  # (B, 1)
        inv_s = 1.0 / np.sqrt(np.maximum(2.0 + 2.0 * ow, 1e-12))
        nh = np.clip((nl_raw + nv_raw) * inv_s, 0.0, None)
        vh = np.clip((1.0 + ow) * inv_s, 0.0, 1.0)
        self.nl = np.maximum(nl_raw, 0.0)
        self.nl2 = self.nl * self.nl
        self.nv = np.maximum(nv_raw, GRAZING_EPS)
        self.nv2 = self.nv * self.nv
        self.nh2 = nh * nh
        omv = 1.0 - vh
        omv2 = omv * omv
        self.q = omv2 * omv2 * omv
        # quadrature weight incl. clamped cosine; zero for backfacing views
        self.cos_w = self.nl * weights[None, :] * (nv_raw > 0.0)
        # specular variant folds the D-term 1/pi and visibility 0.5 constants
        self.cos_w_spec = self.cos_w * np.asarray(0.5 / np.pi, dtype=dtype)


def render_points(k_d, k_m, k_r, normals, view_dirs, env, context=None):
    """Shade a batch of surface points under an environment map.

    ``k_d`` is (n, 3) and ``k_m``/``k_r`` are (n, 1); they may be autodiff
    tensors (gradients flow to them and to a learnable environment) or plain
    arrays. ``normals``/``view_dirs`` are (n, 3) unit numpy arrays. Returns
    an (n, 3) tensor of linear RGB radiance. Pass a precomputed
    ``ShadingContext`` to share geometry factors across several renders of
    the same batch.
    """
    kd_t, km_t, kr_t = ad.as_tensor(k_d), ad.as_tensor(k_m), ad.as_tensor(k_r)
    dtype = kd_t.dtype
    ctx = context or ShadingContext(normals, view_dirs, env, dtype=dtype)

    k_alpha, k_s = convert_attributes(kd_t, km_t)
    radiance = env.radiance_tensor()

    kr2 = ad.mul(kr_t, kr_t)
    alpha_sq = ad.clamp(ad.mul(kr2, kr2), lo=1e-12)  # (B, 1)
    one_minus = 1.0 - alpha_sq
    denom = ad.mul(ctx.nh2, alpha_sq - 1.0) + 1.0
    lam_v = ad.mul(ctx.nl, ad.sqrt(ad.mul(ctx.nv2, one_minus) + alpha_sq))
    lam_l = ad.mul(ctx.nv, ad.sqrt(ad.mul(ctx.nl2, one_minus) + alpha_sq))
    lam = ad.clamp(lam_v + lam_l, lo=GRAZING_EPS)
    # D * V * cos * dw with the 1/(2 pi) constants folded into cos_w_spec
    s_term = ad.mul(
        ad.div(alpha_sq, ad.mul(ad.mul(denom, denom), lam)), ctx.cos_w_spec
    )

    lit_diff = ad.matmul(ad.Tensor(ctx.cos_w), radiance)  # (B, 3)
    lit_spec_base = ad.matmul(s_term, radiance)
    lit_spec_edge = ad.matmul(ad.mul(s_term, ctx.q), radiance)
    color = (
        ad.mul(k_alpha, lit_diff) * (1.0 / np.pi)
        + ad.mul(k_s, lit_spec_base)
        + ad.mul(1.0 - k_s, lit_spec_edge)
    )
    return color


def render_image(k_d, k_m, k_r, normals, view_dirs, env, chunk=4096):
    """Gradient-free batched shading, chunked to bound peak memory.

    Inputs are plain numpy arrays; returns an (n, 3) float32 array. Used by
    scene generation and evaluation over full images.
    """
    n = np.asarray(normals).shape[0]
    out = np.empty((n, 3), dtype=np.float32)
    for lo in range(0, n, chunk):
        hi = min(lo + chunk, n)
        out[lo:hi] = render_points(
            np.asarray(k_d, dtype=np.float32)[lo:hi],
            np.asarray(k_m, dtype=np.float32)[lo:hi],
            np.asarray(k_r, dtype=np.float32)[lo:hi],
            normals[lo:hi],
            view_dirs[lo:hi],
            env,
        ).data
    return out


def render_point(attrs, point, env):
    """Shade a single surface point; returns a (3,) numpy color."""
    out = render_points(
        attrs.k_d.reshape(1, 3),
        np.array([[attrs.k_m]], dtype=np.float32),
        np.array([[attrs.k_r]], dtype=np.float32),
        np.asarray(point.normal, dtype=np.float32).reshape(1, 3),
        np.asarray(point.view_dir, dtype=np.float32).reshape(1, 3),
        env,
    )
    return out.data[0]


# -- chromaticity ------------------------------------------------------------------


def chromaticity(c, delta=CHROMA_DELTA, floor=1e-6):
    """Normalize RGB to unit lightness: ``c / (R + G + B + delta)``.

    Near-black inputs (sum below ``floor``) map to the neutral (1/3, 1/3,
    1/3) so the transform stays defined everywhere. Works on numpy arrays
    and autodiff tensors.
    """
    if isinstance(c, Tensor):
        if np.any(c.data < -1e-7):
            raise ValueError("chromaticity input must be nonnegative")
        s = ad.tsum(c, axis=-1, keepdims=True)
        neutral = Tensor(np.full((1,) * c.ndim, 1.0 / 3.0, dtype=c.dtype))
        return ad.where(s.data > floor, c / (s + delta), neutral)
    c = np.asarray(c)
    if np.any(c < -1e-7):
        raise ValueError("chromaticity input must be nonnegative")
    s = c.sum(axis=-1, keepdims=True)
    out = np.where(s > floor, c / (s + delta), np.asarray(1.0 / 3.0, dtype=c.dtype))
    return out.astype(c.dtype)
