"""Ray-traced synthetic light fields with an optional refracting sphere or cylinder.

Cameras form a planar grid at (s * baseline_s, t * baseline_t, 0), all looking
down +z with parallel optical axes; image y points down. A background point at
depth z therefore moves by -focal_px * baseline / z pixels per view, which is
why the rendered light field stores plane_sep_D = focal_px * baseline_s.
"""
import logging
import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from functools import partial
from typing import Optional, Tuple, Union

import imageio.v3 as iio
import numpy as np
from PIL import Image
from scipy import ndimage

from .errors import ConfigError, LightFieldIOError
from .lightfield import QUANT_LEVELS, LightField, LFMetadata, quantize16, read_image, view_offsets

logger = logging.getLogger(__name__)

EPS = 1e-9
NOISE_LATTICE = 256
NOISE_TEXEL_PX = 8.0
DEPTH_SCALE = 10.0
SPECULAR_SHININESS = 60.0
LIGHT_DIR = np.array([0.3, -0.6, -1.0]) / np.linalg.norm([0.3, -0.6, -1.0])  # towards the light

FOCAL_PX = 256.0
GRID_VIEWS = 9
VIEW_PX = 256
# view steps of the 16.1, 3.7 and 1.1 mm/view rigs, scaled to scene millimetres
RIG_SCALE = 0.182
BASELINES = {
    'large': 16.1 * RIG_SCALE,
    'small': 3.7 * RIG_SCALE,
    'lenslet': 1.1 * RIG_SCALE,
}
GLASS_IOR = 1.5
ACRYLIC_IOR = 1.49


@dataclass(frozen=True)
class Background:
    z: float
    texture: str = 'noise'  # noise | checkerboard | image
    texel: Optional[float] = None  # world size of one texel; None -> 8 px at z
    image: Optional[str] = None


@dataclass(frozen=True)
class Sphere:
    center: Tuple[float, float, float]
    radius: float
    ior: float = GLASS_IOR

    @property
    def axis_mask(self):
        return np.array([1.0, 1.0, 1.0])


@dataclass(frozen=True)
class Cylinder:
    center: Tuple[float, float, float]
    radius: float
    ior: float = ACRYLIC_IOR
    axis: str = 'vertical'  # vertical (along y) | horizontal (along x)

    @property
    def axis_mask(self):
        # the intersection only sees the components perpendicular to the axis
        return np.array([1.0, 0.0, 1.0]) if self.axis == 'vertical' else np.array([0.0, 1.0, 1.0])


Refractor = Union[Sphere, Cylinder]


@dataclass(frozen=True)
class Camera:
    n_s: int = GRID_VIEWS
    n_t: int = GRID_VIEWS
    baseline_s: float = BASELINES['small']
    baseline_t: float = BASELINES['small']
    focal_px: float = FOCAL_PX
    n_u: int = VIEW_PX
    n_v: int = VIEW_PX
    cx: Optional[float] = None
    cy: Optional[float] = None

    @property
    def principal_point(self):
        cx = (self.n_u - 1) / 2.0 if self.cx is None else self.cx
        cy = (self.n_v - 1) / 2.0 if self.cy is None else self.cy
        return cx, cy


@dataclass(frozen=True)
class SceneSpec:
    background: Background
    camera: Camera = field(default_factory=Camera)
    refractor: Optional[Refractor] = None
    specular_strength: float = 0.0
    supersample: int = 1
    name: str = 'custom'

    def validate(self):
        cam = self.camera
        if cam.n_s % 2 == 0 or cam.n_t % 2 == 0 or cam.n_s < 3 or cam.n_t < 3:
            raise ConfigError(f"camera grid must be odd and >= 3, got {cam.n_s}x{cam.n_t}")
        if cam.baseline_s <= 0 or cam.baseline_t <= 0 or cam.focal_px <= 0:
            raise ConfigError("baselines and focal length must be > 0")
        if cam.n_u < 1 or cam.n_v < 1:
            raise ConfigError("view resolution must be positive")
        if self.background.z <= 0:
            raise ConfigError("background must lie in front of the cameras")
        if self.background.texture not in ('noise', 'checkerboard', 'image'):
            raise ConfigError(f"unknown texture '{self.background.texture}'")
        if self.background.texture == 'image' and not self.background.image:
            raise ConfigError("image texture needs an image path")
        if self.background.texel is not None and self.background.texel <= 0:
            raise ConfigError("texel size must be > 0")
        if self.supersample not in (1, 2):
            raise ConfigError("supersample must be 1 or 2")
        if self.specular_strength < 0:
            raise ConfigError("specular_strength must be >= 0")
        r = self.refractor
        if r is not None:
            if r.ior <= 1.0:
                raise ConfigError(f"refractor ior must be > 1, got {r.ior}")
            if r.radius <= 0:
                raise ConfigError(f"refractor radius must be > 0, got {r.radius}")
            if self.background.z <= r.center[2] + r.radius:
                raise ConfigError("background must lie behind the refractor")
            if r.center[2] - r.radius <= 0:
                raise ConfigError("refractor must lie in front of the cameras")
            if isinstance(r, Cylinder) and r.axis not in ('vertical', 'horizontal'):
                raise ConfigError(f"unknown cylinder axis '{r.axis}'")
        return self

    @property
    def texel(self):
        if self.background.texel is not None:
            return self.background.texel
        return NOISE_TEXEL_PX * self.background.z / self.camera.focal_px


@dataclass(frozen=True, eq=False)
class GroundTruth:
    refr_mask: np.ndarray  # (n_v, n_u) bool, central view
    depth_map: np.ndarray  # (n_v, n_u) background depth, 0 where refracted


def refract(direction, normal, eta):
    """Snell refraction of unit directions through unit normals facing the incoming ray.

    eta is n1 / n2. Returns (transmitted directions, total-internal-reflection mask);
    TIR rows are zero.
    """
    d = np.atleast_2d(np.asarray(direction, dtype=np.float64))
    n = np.atleast_2d(np.asarray(normal, dtype=np.float64))
    eta = np.asarray(eta, dtype=np.float64).reshape(-1, 1) if np.ndim(eta) else float(eta)
    cos_i = -np.sum(d * n, axis=1, keepdims=True)
    sin2_t = eta ** 2 * (1.0 - cos_i ** 2)
    tir = (sin2_t > 1.0)[:, 0]
    cos_t = np.sqrt(np.clip(1.0 - sin2_t, 0.0, None))
    out = eta * d + (eta * cos_i - cos_t) * n
    out[tir] = 0.0
    return out, tir


def _intersect(refractor, origins, dirs, far=False):
    """Ray parameter of the near (or far) surface hit; inf on a miss."""
    m = refractor.axis_mask
    oc = (origins - np.asarray(refractor.center)) * m
    dm = dirs * m
    a = np.sum(dm * dirs, axis=1)
    b = np.sum(oc * dirs, axis=1)
    cc = np.sum(oc * oc, axis=1) - refractor.radius ** 2
    disc = b * b - a * cc
    hit = (disc >= 0) & (a > EPS)
    root = np.sqrt(np.where(hit, disc, 0.0))
    safe_a = np.where(hit, a, 1.0)
    t = (-b + root) / safe_a if far else (-b - root) / safe_a
    return np.where(hit & (t > 1e-6), t, np.inf)


def _surface_normal(refractor, points):
    n = (points - np.asarray(refractor.center)) * refractor.axis_mask
    return n / np.linalg.norm(n, axis=1, keepdims=True)


class _Texture:
    def __init__(self, spec, seed):
        bg = spec.background
        self.kind = bg.texture
        self.texel = spec.texel
        if self.kind == 'noise':
            rng = np.random.default_rng(seed)
            lattice = rng.random((NOISE_LATTICE, NOISE_LATTICE))
            self.coeffs = ndimage.spline_filter(lattice, order=3, mode='grid-wrap')
        elif self.kind == 'image':
            self.image = read_image(bg.image)

    def sample(self, x, y):
        gx, gy = x / self.texel, y / self.texel
        if self.kind == 'checkerboard':
            cells = np.floor(gx).astype(np.int64) + np.floor(gy).astype(np.int64)
            return np.where(cells % 2 == 0, 0.8, 0.2)
        if self.kind == 'image':
            h, w = self.image.shape
            return ndimage.map_coordinates(self.image, [gy + h / 2.0, gx + w / 2.0], order=1, mode='mirror')
        vals = ndimage.map_coordinates(self.coeffs, [gy + NOISE_LATTICE / 2.0, gx + NOISE_LATTICE / 2.0],
                                       order=3, mode='grid-wrap', prefilter=False)
        return 0.15 + 0.7 * np.clip(vals, 0.0, 1.0)


def _trace(spec, texture, origins, dirs):
    """Radiance along each ray and whether it entered the refractor."""
    n = len(dirs)
    radiance = np.zeros(n)
    entered = np.zeros(n, dtype=bool)
    dirs = dirs / np.linalg.norm(dirs, axis=1, keepdims=True)
    specular = np.zeros(n)
    r = spec.refractor
    if r is not None:
        t_in = _intersect(r, origins, dirs)
        entered = np.isfinite(t_in)
        idx = np.nonzero(entered)[0]
        if len(idx):
            p_in = origins[idx] + t_in[idx, None] * dirs[idx]
            n_in = _surface_normal(r, p_in)
            d_in, _ = refract(dirs[idx], n_in, 1.0 / r.ior)
            if spec.specular_strength > 0:
                refl = dirs[idx] - 2.0 * np.sum(dirs[idx] * n_in, axis=1, keepdims=True) * n_in
                specular[idx] = spec.specular_strength * np.clip(refl @ LIGHT_DIR, 0.0, None) ** SPECULAR_SHININESS

            t_out = _intersect(r, p_in, d_in, far=True)
            t_out = np.where(np.isfinite(t_out), t_out, 0.0)
            p_out = p_in + t_out[:, None] * d_in
            n_out = _surface_normal(r, p_out)
            d_out, tir = refract(d_in, -n_out, r.ior)
            origins = origins.copy()
            dirs = dirs.copy()
            origins[idx] = p_out
            dirs[idx] = d_out
            blocked = np.zeros(n, dtype=bool)
            blocked[idx[tir]] = True
        else:
            blocked = np.zeros(n, dtype=bool)
    else:
        blocked = np.zeros(n, dtype=bool)

    forward = (dirs[:, 2] > EPS) & ~blocked
    t_bg = np.where(forward, (spec.background.z - origins[:, 2]) / np.where(forward, dirs[:, 2], 1.0), 0.0)
    x = origins[:, 0] + t_bg * dirs[:, 0]
    y = origins[:, 1] + t_bg * dirs[:, 1]
    radiance[forward] = texture.sample(x[forward], y[forward])
    return np.clip(radiance + specular, 0.0, 1.0), entered


def _pixel_rays(cam, s_off, t_off, subpixel=(0.0, 0.0)):
    cx, cy = cam.principal_point
    vv, uu = np.mgrid[0:cam.n_v, 0:cam.n_u].astype(np.float64)
    dirs = np.stack([(uu + subpixel[0] - cx) / cam.focal_px,
                     (vv + subpixel[1] - cy) / cam.focal_px,
                     np.ones_like(uu)], axis=-1).reshape(-1, 3)
    origin = np.array([s_off * cam.baseline_s, t_off * cam.baseline_t, 0.0])
    return np.broadcast_to(origin, dirs.shape).copy(), dirs


def _render_view(spec, texture, s_off, t_off):
    cam = spec.camera
    if spec.supersample == 2:
        offsets = [(-0.25, -0.25), (0.25, -0.25), (-0.25, 0.25), (0.25, 0.25)]
    else:
        offsets = [(0.0, 0.0)]
    acc = np.zeros(cam.n_u * cam.n_v)
    for sub in offsets:
        origins, dirs = _pixel_rays(cam, s_off, t_off, sub)
        acc += _trace(spec, texture, origins, dirs)[0]
    return (acc / len(offsets)).reshape(cam.n_v, cam.n_u)


def render_ground_truth(spec):
    """Central-view refraction mask from chief rays, plus the background depth map."""
    cam = spec.camera
    origins, dirs = _pixel_rays(cam, 0, 0)
    if spec.refractor is None:
        mask = np.zeros((cam.n_v, cam.n_u), dtype=bool)
    else:
        dirs = dirs / np.linalg.norm(dirs, axis=1, keepdims=True)
        mask = np.isfinite(_intersect(spec.refractor, origins, dirs)).reshape(cam.n_v, cam.n_u)
    depth = np.where(mask, 0.0, spec.background.z)
    return GroundTruth(refr_mask=mask, depth_map=depth)


def render_lightfield(spec, seed=0, threads=None):
    spec.validate()
    cam = spec.camera
    texture = _Texture(spec, seed)
    grid = [(s_idx, t_idx) for t_idx in range(cam.n_t) for s_idx in range(cam.n_s)]
    s_offsets, t_offsets = view_offsets(cam.n_s), view_offsets(cam.n_t)

    def render(index):
        s_idx, t_idx = index
        return _render_view(spec, texture, s_offsets[s_idx], t_offsets[t_idx])

    views = np.empty((cam.n_s, cam.n_t, cam.n_u, cam.n_v))
    with ThreadPoolExecutor(max_workers=threads or os.cpu_count() or 1) as pool:
        for (s_idx, t_idx), img in zip(grid, pool.map(render, grid)):
            # 16-bit levels so a saved light field reloads bit-identically
            views[s_idx, t_idx] = quantize16(img).T / QUANT_LEVELS

    meta = LFMetadata(baseline_s=cam.baseline_s, baseline_t=cam.baseline_t,
                      plane_sep_D=cam.focal_px * cam.baseline_s, source=f"synth:{spec.name}")
    lf = LightField(views=views, meta=meta)
    gt = render_ground_truth(spec)
    logger.info(f"Rendered '{spec.name}': {cam.n_s}x{cam.n_t} views of {cam.n_u}x{cam.n_v} px, "
                f"{int(gt.refr_mask.sum())} refracted pixels")
    return lf, gt


def _preset(name, baseline, refractor, z_bg, texel=None):
    camera = Camera(baseline_s=baseline, baseline_t=baseline)
    return SceneSpec(background=Background(z=z_bg, texel=texel), camera=camera, refractor=refractor, name=name)


# background sits in the focal plane of the ball (F = 1.5 R at n = 1.5), so refracted
# features have almost no paraxial parallax and the large rig sweeps a quarter of the
# aperture; the background itself moves 2.5 px/view on the large rig
SPHERE_Z, SPHERE_R, SPHERE_BG = 225.0, 50.0, 300.0
# the ball magnifies the background by SPHERE_BG / F = 4, so the backdrop is finer
REFRACTOR_TEXEL = 3.0 * SPHERE_BG / FOCAL_PX


def _sphere():
    return Sphere(center=(0.0, 0.0, SPHERE_Z), radius=SPHERE_R, ior=GLASS_IOR)


def _cylinder():
    return Cylinder(center=(0.0, 0.0, SPHERE_Z), radius=SPHERE_R, ior=ACRYLIC_IOR, axis='vertical')


def _refractor_preset(name, baseline, make):
    return _preset(name, baseline, make(), SPHERE_BG, REFRACTOR_TEXEL)


PRESETS = {
    # frontal plane with D / z = 0.5, i.e. -0.5 px/view
    'lambertian': lambda: _preset('lambertian', BASELINES['large'], None, 2.0 * FOCAL_PX * BASELINES['large']),
}
for _rig in BASELINES:
    for _kind, _make in (('sphere', _sphere), ('cylinder', _cylinder)):
        _name = f"{_kind}_{_rig}_baseline"
        PRESETS[_name] = partial(_refractor_preset, _name, BASELINES[_rig], _make)


def preset_scene(name):
    if name not in PRESETS:
        raise ConfigError(f"unknown preset '{name}' (choose from {', '.join(sorted(PRESETS))})")
    return PRESETS[name]().validate()


def scene_to_dict(spec):
    data = asdict(spec)
    r = spec.refractor
    if r is not None:
        data['refractor']['type'] = 'sphere' if isinstance(r, Sphere) else 'cylinder'
        data['refractor']['center'] = list(r.center)
    return data


def scene_from_dict(data):
    try:
        bg = Background(**data['background'])
        camera = Camera(**data.get('camera', {}))
        refractor = None
        rdata = data.get('refractor')
        if rdata:
            rdata = dict(rdata)
            kind = rdata.pop('type', 'sphere')
            rdata['center'] = tuple(float(c) for c in rdata['center'])
            if len(rdata['center']) != 3:
                raise ConfigError("refractor center must have three coordinates")
            if kind == 'sphere':
                refractor = Sphere(**rdata)
            elif kind == 'cylinder':
                refractor = Cylinder(**rdata)
            else:
                raise ConfigError(f"unknown refractor type '{kind}'")
        spec = SceneSpec(background=bg, camera=camera, refractor=refractor,
                         specular_strength=float(data.get('specular_strength', 0.0)),
                         supersample=int(data.get('supersample', 1)),
                         name=str(data.get('name', 'custom')))
    except (KeyError, TypeError, ValueError) as e:
        raise ConfigError(f"invalid scene description: {e}")
    return spec.validate()


def with_specular(spec, strength):
    return replace(spec, specular_strength=strength).validate()


def central_exclusion_mask(gt, frac=0.1):
    """Disc of radius frac * (equivalent mask radius) around the mask centroid."""
    mask = np.asarray(getattr(gt, "refr_mask", gt), dtype=bool)
    excl = np.zeros_like(mask, dtype=bool)
    if not mask.any():
        return excl
    vv, uu = np.nonzero(mask)
    radius = frac * math.sqrt(len(vv) / math.pi)
    cv, cu = vv.mean(), uu.mean()
    yy, xx = np.mgrid[0:mask.shape[0], 0:mask.shape[1]]
    return (xx - cu) ** 2 + (yy - cv) ** 2 <= radius ** 2


def save_ground_truth(gt, out_dir):
    """ground_truth.png (0/255) and depth.pgm (16-bit, 1/10 scene units, 0 where refracted)."""
    try:
        os.makedirs(out_dir, exist_ok=True)
        iio.imwrite(os.path.join(out_dir, 'ground_truth.png'), gt.refr_mask.astype(np.uint8) * 255)
        depth = np.clip(np.round(gt.depth_map * DEPTH_SCALE), 0, QUANT_LEVELS).astype(np.int32)
        Image.fromarray(depth, mode='I').save(os.path.join(out_dir, 'depth.pgm'))
    except OSError as e:
        raise LightFieldIOError(f"cannot write ground truth to {out_dir}: {e}")
