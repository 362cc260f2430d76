"""4D light-field container, directory format and EPI slicing.

Views are stored as ``views[s_idx, t_idx, u, v]``. Whenever a single view is
handed out as an image it uses the usual row/column layout, i.e. rows are
``v`` and columns are ``u``: ``lf.view(s, t)[v, u] == lf.views[s, t, u, v]``.
"""
import json
import logging
import os
import re
from dataclasses import dataclass, field, replace
from typing import Optional

import imageio.v3 as iio
import numpy as np

from .errors import BoundsError, LightFieldFormatError, LightFieldIOError

logger = logging.getLogger(__name__)

MANIFEST_NAME = 'manifest.json'
VIEW_EXTENSIONS = ('png', 'pgm')
LUMA_WEIGHTS = np.array([0.299, 0.587, 0.114])
QUANT_LEVELS = 65535
# magic, width, height, maxval; comments may sit between fields
PGM_HEADER = re.compile(rb'(P[25])(?:\s|#[^\n]*\n)+(\d+)(?:\s|#[^\n]*\n)+(\d+)(?:\s|#[^\n]*\n)+(\d+)\s')


@dataclass(frozen=True)
class LFMetadata:
    baseline_s: Optional[float] = None
    baseline_t: Optional[float] = None
    plane_sep_D: float = 1.0
    source: str = ''

    def __post_init__(self):
        for name in ('baseline_s', 'baseline_t'):
            value = getattr(self, name)
            if value is not None and not value > 0:
                raise LightFieldFormatError(f"{name} must be > 0, got {value}")
        if not self.plane_sep_D > 0:
            raise LightFieldFormatError(f"plane_sep_D must be > 0, got {self.plane_sep_D}")

    @property
    def units(self):
        return 'metric' if self.baseline_s is not None and self.baseline_t is not None else 'views'


@dataclass(frozen=True, eq=False)
class LightField:
    views: np.ndarray
    meta: LFMetadata = field(default_factory=LFMetadata)

    def __post_init__(self):
        arr = np.array(self.views, dtype=np.float64, copy=True)
        if arr.ndim != 4:
            raise LightFieldFormatError(f"light field must be 4D (s, t, u, v), got shape {arr.shape}")
        n_s, n_t, n_u, n_v = arr.shape
        if n_s % 2 == 0 or n_t % 2 == 0:
            raise LightFieldFormatError(f"grid dimensions must be odd, got {n_s}x{n_t}")
        if n_s < 3 or n_t < 3:
            raise LightFieldFormatError(f"grid must be at least 3x3, got {n_s}x{n_t}")
        if n_u < 1 or n_v < 1:
            raise LightFieldFormatError("views must not be empty")
        if not np.all(np.isfinite(arr)):
            raise LightFieldFormatError("light field contains non-finite samples")
        if arr.min() < 0.0 or arr.max() > 1.0:
            raise LightFieldFormatError("light field samples must lie in [0, 1]")
        arr.setflags(write=False)
        object.__setattr__(self, 'views', arr)

    @classmethod
    def from_views(cls, views, **meta):
        return cls(views=views, meta=LFMetadata(**meta))

    @property
    def n_s(self):
        return self.views.shape[0]

    @property
    def n_t(self):
        return self.views.shape[1]

    @property
    def n_u(self):
        return self.views.shape[2]

    @property
    def n_v(self):
        return self.views.shape[3]

    @property
    def s0(self):
        return (self.n_s - 1) // 2

    @property
    def t0(self):
        return (self.n_t - 1) // 2

    def view(self, s_idx, t_idx):
        """One view as a (n_v, n_u) image."""
        _check_index('s', s_idx, self.n_s)
        _check_index('t', t_idx, self.n_t)
        return self.views[s_idx, t_idx].T


@dataclass(frozen=True, eq=False)
class EPI:
    orientation: str  # 'horizontal' | 'vertical'
    fixed_view: int
    fixed_pixel: int
    data: np.ndarray


def view_offsets(n):
    """Signed view offsets centred on the middle view."""
    return np.arange(n) - (n - 1) // 2


def central_view(lf):
    return lf.view(lf.s0, lf.t0)


def horizontal_epi(lf, t_star, v_star):
    """L(s, t*, u, v*) as an (n_s, n_u) array."""
    _check_index('t', t_star, lf.n_t)
    _check_index('v', v_star, lf.n_v)
    return EPI('horizontal', t_star, v_star, lf.views[:, t_star, :, v_star].copy())


def vertical_epi(lf, s_star, u_star):
    """L(s*, t, u*, v) as an (n_t, n_v) array."""
    _check_index('s', s_star, lf.n_s)
    _check_index('u', u_star, lf.n_u)
    return EPI('vertical', s_star, u_star, lf.views[s_star, :, u_star, :].copy())


def downsample_lightfield(lf, factor):
    """Box-filter every view by an integer factor (trailing pixels are cropped)."""
    factor = int(factor)
    if factor < 1:
        raise ValueError("downsample factor must be >= 1")
    if factor == 1:
        return lf
    n_u, n_v = lf.n_u // factor, lf.n_v // factor
    if n_u == 0 or n_v == 0:
        raise ValueError(f"views of {lf.n_u}x{lf.n_v} are too small for factor {factor}")
    cropped = lf.views[:, :, :n_u * factor, :n_v * factor]
    views = cropped.reshape(lf.n_s, lf.n_t, n_u, factor, n_v, factor).mean(axis=(3, 5))
    meta = replace(lf.meta, source=f"{lf.meta.source} (box /{factor})".strip())
    return LightField(views=views, meta=meta)


def load_lightfield(path):
    manifest_path = os.path.join(path, MANIFEST_NAME)
    if not os.path.isfile(manifest_path):
        raise LightFieldFormatError(f"missing manifest: {manifest_path}")
    try:
        with open(manifest_path, 'r', encoding='utf-8') as f:
            manifest = json.load(f)
    except (OSError, json.JSONDecodeError) as e:
        raise LightFieldFormatError(f"unreadable manifest {manifest_path}: {e}")

    try:
        n_s, n_t, n_u, n_v = (int(manifest[k]) for k in ('n_s', 'n_t', 'n_u', 'n_v'))
    except (KeyError, TypeError, ValueError) as e:
        raise LightFieldFormatError(f"manifest is missing grid dimensions: {e}")
    if n_s % 2 == 0 or n_t % 2 == 0:
        raise LightFieldFormatError(f"grid dimensions must be odd, got {n_s}x{n_t}")

    views = np.empty((n_s, n_t, n_u, n_v), dtype=np.float64)
    for t_idx in range(n_t):
        for s_idx in range(n_s):
            img = _read_view(path, t_idx, s_idx)
            if img.shape != (n_v, n_u):
                raise LightFieldFormatError(
                    f"inconsistent view dimensions: view_{t_idx}_{s_idx} is "
                    f"{img.shape[1]}x{img.shape[0]}, manifest says {n_u}x{n_v}")
            views[s_idx, t_idx] = img.T

    meta = LFMetadata(
        baseline_s=manifest.get('baseline_s'),
        baseline_t=manifest.get('baseline_t'),
        plane_sep_D=float(manifest.get('plane_sep_D', 1.0)),
        source=str(manifest.get('source', '')),
    )
    lf = LightField(views=views, meta=meta)
    logger.info(f"Loaded {n_s}x{n_t} light field ({n_u}x{n_v} px) from {path}")
    return lf


def save_lightfield(lf, path):
    """Write the manifest plus one 16-bit PNG per view."""
    try:
        os.makedirs(path, exist_ok=True)
        manifest = {
            'n_s': lf.n_s, 'n_t': lf.n_t, 'n_u': lf.n_u, 'n_v': lf.n_v,
            'baseline_s': lf.meta.baseline_s, 'baseline_t': lf.meta.baseline_t,
            'plane_sep_D': lf.meta.plane_sep_D, 'source': lf.meta.source,
        }
        with open(os.path.join(path, MANIFEST_NAME), 'w', encoding='utf-8') as f:
            json.dump(manifest, f, indent=2, sort_keys=True)
        for t_idx in range(lf.n_t):
            for s_idx in range(lf.n_s):
                img = quantize16(lf.views[s_idx, t_idx].T)
                iio.imwrite(os.path.join(path, f"view_{t_idx}_{s_idx}.png"), img)
    except OSError as e:
        raise LightFieldIOError(f"cannot write light field to {path}: {e}")
    logger.info(f"Saved light field to {path}")


def quantize16(img):
    return np.round(np.clip(img, 0.0, 1.0) * QUANT_LEVELS).astype(np.uint16)


def to_grayscale(img):
    """Normalise an 8/16-bit grey or colour image to float grey in [0, 1]."""
    img = np.asarray(img)
    if img.dtype == np.uint8:
        scale = 255.0
    elif img.dtype == np.uint16:
        scale = float(QUANT_LEVELS)
    elif img.dtype == np.bool_:
        scale = 1.0
    elif np.issubdtype(img.dtype, np.integer):
        raise LightFieldFormatError(f"unsupported sample type {img.dtype}")
    else:
        scale = 1.0
    img = img.astype(np.float64) / scale
    if img.ndim == 3:
        if img.shape[2] >= 3:
            img = img[..., :3] @ LUMA_WEIGHTS
        else:
            img = img[..., 0]
    if img.ndim != 2:
        raise LightFieldFormatError(f"unsupported image shape {img.shape}")
    return np.clip(img, 0.0, 1.0)


def read_pgm(path):
    """Grey PGM (P2 or P5) as float in [0, 1], scaled by the maxval in its header."""
    with open(path, 'rb') as f:
        data = f.read()
    header = PGM_HEADER.match(data)
    if header is None:
        raise LightFieldFormatError(f"{path} is not a grey PGM")
    magic, width, height, maxval = header.group(1), *(int(g) for g in header.groups()[1:])
    if not 0 < maxval < 65536:
        raise LightFieldFormatError(f"{path}: maxval {maxval} out of range")
    n = width * height
    body = data[header.end():]
    if magic == b'P5':
        dtype = '>u2' if maxval > 255 else 'u1'
        if len(body) < n * np.dtype(dtype).itemsize:
            raise LightFieldFormatError(f"{path}: truncated pixel data")
        px = np.frombuffer(body, dtype=dtype, count=n)
    else:
        px = np.array(body.split()[:n]).astype(np.int64)
        if px.size != n:
            raise LightFieldFormatError(f"{path}: truncated pixel data")
    return np.clip(px.reshape(height, width) / float(maxval), 0.0, 1.0)


def read_image(path):
    try:
        if path.lower().endswith('.pgm'):
            return read_pgm(path)
        return to_grayscale(iio.imread(path))
    except LightFieldFormatError:
        raise
    except FileNotFoundError as e:
        raise LightFieldIOError(f"cannot read image {path}: {e}")
    except Exception as e:
        raise LightFieldFormatError(f"unreadable image {path}: {e}")


def _read_view(path, t_idx, s_idx):
    for ext in VIEW_EXTENSIONS:
        candidate = os.path.join(path, f"view_{t_idx}_{s_idx}.{ext}")
        if os.path.isfile(candidate):
            return read_image(candidate)
    raise LightFieldFormatError(f"missing view image view_{t_idx}_{s_idx}.png in {path}")


def _check_index(name, value, size):
    if not 0 <= value < size:
        raise BoundsError(f"{name} index {value} out of range [0, {size})")
