"""Feature-curve extraction by Gaussian-weighted normalised cross-correlation.

A template cut around a central-view keypoint is correlated against every view
of the central row (horizontal curve) and central column (vertical curve). The
stacked 1D responses form a correlation EPI whose ridge through the self-match
is the feature's apparent motion.
"""
import json
import logging
import math
from dataclasses import dataclass
from typing import NamedTuple, Tuple

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view
from scipy import ndimage

from .config import CurveConfig
from .errors import BoundsError, LightFieldIOError
from .keypoints import template_side
from .lightfield import central_view, view_offsets

logger = logging.getLogger(__name__)

HORIZONTAL = 'horizontal'
VERTICAL = 'vertical'
ORIENTATIONS = (HORIZONTAL, VERTICAL)

_VAR_EPS = 1e-10


@dataclass(frozen=True, eq=False)
class Template:
    patch: np.ndarray
    weight: np.ndarray
    center: Tuple[float, float]  # (u0, v0) of the source keypoint

    @property
    def side(self):
        return self.patch.shape[0]

    @property
    def half(self):
        return self.side // 2

    @property
    def pixel_center(self):
        return int(round(self.center[0])), int(round(self.center[1]))


@dataclass(frozen=True, eq=False)
class CorrelationEPI:
    orientation: str
    data: np.ndarray          # (views, candidates), WNCC in [-1, 1]
    view_offsets: np.ndarray  # signed offset of each row
    pixel_origin: int         # pixel coordinate of column 0
    subpixel_offset: float    # keypoint coordinate minus template centre pixel

    @property
    def center_row(self):
        return int(np.nonzero(self.view_offsets == 0)[0][0])

    def column_of(self, pixel):
        return pixel - self.subpixel_offset - self.pixel_origin


class CurveSample(NamedTuple):
    view_offset: int
    pixel_pos: float
    corr_score: float


@dataclass(frozen=True)
class FeatureCurve:
    orientation: str
    samples: Tuple[CurveSample, ...]
    valid: bool
    requested_views: int = 0
    rejections: Tuple[str, ...] = ()

    @property
    def offsets(self):
        return np.array([s.view_offset for s in self.samples], dtype=np.float64)

    @property
    def positions(self):
        return np.array([s.pixel_pos for s in self.samples], dtype=np.float64)

    def __len__(self):
        return len(self.samples)

    @classmethod
    def rejected(cls, orientation, reason, requested_views=0):
        return cls(orientation, (), False, requested_views, (reason,))


def build_template(img, kp, k_template=5.0, weight_sigma_frac=0.25):
    side = template_side(kp.scale, k_template)
    half = side // 2
    n_v, n_u = img.shape
    uc, vc = int(round(kp.u0)), int(round(kp.v0))
    if uc - half < 0 or vc - half < 0 or uc + half >= n_u or vc + half >= n_v:
        raise BoundsError(f"template of side {side} at ({uc}, {vc}) exceeds {n_u}x{n_v} image")
    patch = np.array(img[vc - half:vc + half + 1, uc - half:uc + half + 1], dtype=np.float64)
    sigma_w = side * weight_sigma_frac
    yy, xx = np.mgrid[-half:half + 1, -half:half + 1]
    weight = np.exp(-(xx ** 2 + yy ** 2) / (2.0 * sigma_w ** 2))
    return Template(patch=patch, weight=weight, center=(float(kp.u0), float(kp.v0)))


def wncc(tmpl, img, search_center, search_radius):
    """Weighted NCC of the template at every offset of a search window.

    search_radius is an int (square window) or (ru, rv). Returns a 1D map when
    one radius is zero (along the other axis), otherwise a (2rv+1, 2ru+1) map.
    Windows with zero weighted variance score 0.
    """
    if np.isscalar(search_radius):
        ru = rv = int(search_radius)
    else:
        ru, rv = (int(r) for r in search_radius)
    if ru < 0 or rv < 0:
        raise ValueError("search radius must be non-negative")
    uc, vc = (int(round(c)) for c in search_center)
    half = tmpl.half
    img = np.asarray(img, dtype=np.float64)
    n_v, n_u = img.shape
    top, bottom = vc - rv - half, vc + rv + half + 1
    left, right = uc - ru - half, uc + ru + half + 1
    if top < 0 or left < 0 or bottom > n_v or right > n_u:
        raise BoundsError(f"search window around ({uc}, {vc}) with radius ({ru}, {rv}) exceeds {n_u}x{n_v} image")

    region = img[top:bottom, left:right]
    shape = (tmpl.side, tmpl.side)
    windows = sliding_window_view(region, shape)
    windows_sq = sliding_window_view(region * region, shape)

    w = tmpl.weight / tmpl.weight.sum()
    p = tmpl.patch
    p_centered = p - np.sum(w * p)
    var_p = np.sum(w * p_centered ** 2)

    cov = np.einsum('ijkl,kl->ij', windows, w * p_centered)
    q_mean = np.einsum('ijkl,kl->ij', windows, w)
    q_sq = np.einsum('ijkl,kl->ij', windows_sq, w)
    var_q = q_sq - q_mean ** 2

    ok = (var_q > _VAR_EPS * np.maximum(q_sq, 1e-300)) & (var_p > _VAR_EPS * max(np.sum(w * p * p), 1e-300))
    scores = np.zeros_like(cov)
    scores[ok] = cov[ok] / np.sqrt(var_p * var_q[ok])
    scores = np.clip(scores, -1.0, 1.0)

    if rv == 0:
        return scores[0]
    if ru == 0:
        return scores[:, 0]
    return scores


def build_correlation_epi(lf, kp, tmpl, orientation, view_span=None, search_radius=None, max_slope=None):
    if orientation not in ORIENTATIONS:
        raise ValueError(f"unknown orientation '{orientation}'")
    n_views = lf.n_s if orientation == HORIZONTAL else lf.n_t
    view_span = n_views if view_span is None else int(view_span)
    if view_span % 2 == 0 or not 1 <= view_span <= n_views:
        raise BoundsError(f"view_span must be odd and <= {n_views}, got {view_span}")
    offsets = view_offsets(view_span)
    half_span = (view_span - 1) // 2

    radius = 2 * tmpl.side if search_radius is None else int(search_radius)
    if max_slope is not None:
        radius = min(radius, int(math.ceil(max_slope * half_span)) + 1)

    uc, vc = tmpl.pixel_center
    half = tmpl.half
    if orientation == HORIZONTAL:
        pos, extent, cross, cross_extent = uc, lf.n_u, vc, lf.n_v
    else:
        pos, extent, cross, cross_extent = vc, lf.n_v, uc, lf.n_u
    if cross - half < 0 or cross + half >= cross_extent or pos - half < 0 or pos + half >= extent:
        raise BoundsError(f"template at ({uc}, {vc}) does not fit the views")
    # clip to the image; the boundary filter rejects ridges cut by the window edge
    radius = max(0, min(radius, pos - half, extent - 1 - pos - half))

    rows = []
    for off in offsets:
        if orientation == HORIZONTAL:
            img = lf.view(lf.s0 + off, lf.t0)
            rows.append(wncc(tmpl, img, (uc, vc), (radius, 0)))
        else:
            img = lf.view(lf.s0, lf.t0 + off)
            rows.append(wncc(tmpl, img, (uc, vc), (0, radius)))

    kp_pos = tmpl.center[0] if orientation == HORIZONTAL else tmpl.center[1]
    return CorrelationEPI(
        orientation=orientation,
        data=np.vstack(rows),
        view_offsets=offsets,
        pixel_origin=pos - radius,
        subpixel_offset=float(kp_pos - pos),
    )


def _parabolic_offset(row, c):
    if c <= 0 or c >= len(row) - 1:
        return 0.0
    left, mid, right = row[c - 1], row[c], row[c + 1]
    denom = left - 2.0 * mid + right
    if denom >= 0:
        return 0.0
    return float(np.clip(0.5 * (left - right) / denom, -0.5, 0.5))


def extract_curve(cepi, kp, cfg=None):
    cfg = cfg or CurveConfig()
    data = cepi.data
    n_rows, n_cols = data.shape
    requested = n_rows
    center_row = cepi.center_row
    kp_pos = kp.u0 if cepi.orientation == HORIZONTAL else kp.v0

    def to_pixel(row, c):
        return cepi.pixel_origin + c + _parabolic_offset(data[row], c) + cepi.subpixel_offset

    expected = int(round(cepi.column_of(kp_pos)))
    lo, hi = max(0, expected - 1), min(n_cols, expected + 2)
    if lo >= hi:
        return FeatureCurve.rejected(cepi.orientation, 'no_self_match', requested)
    c0 = lo + int(np.argmax(data[center_row, lo:hi]))

    mask = data >= cfg.corr_mask_thresh
    if not mask[center_row, c0]:
        sample = CurveSample(0, to_pixel(center_row, c0), float(data[center_row, c0]))
        return FeatureCurve(cepi.orientation, (sample,), False, requested, ('span',))

    labels, _ = ndimage.label(mask, structure=np.ones((3, 3), dtype=int))
    component = labels == labels[center_row, c0]

    peaks = {center_row: (c0, to_pixel(center_row, c0))}
    for step in (1, -1):
        prev = peaks[center_row][1]
        r = center_row + step
        while 0 <= r < n_rows and component[r].any():
            cols = np.nonzero(component[r])[0]
            vals = data[r, cols]
            candidates = cols[vals == vals.max()]
            # ties go to the peak nearest the previous view's position
            dist = np.abs(cepi.pixel_origin + candidates + cepi.subpixel_offset - prev)
            c = int(candidates[np.argmin(dist)])
            prev = to_pixel(r, c)
            peaks[r] = (c, prev)
            r += step

    samples = tuple(
        CurveSample(int(cepi.view_offsets[r]), float(pos), float(data[r, c]))
        for r, (c, pos) in sorted(peaks.items())
    )

    rejections = []
    if len(samples) / requested < cfg.min_span_frac or len(samples) < 2:
        rejections.append('span')
    positions = np.array([s.pixel_pos for s in samples])
    if len(positions) > 1 and np.max(np.abs(np.diff(positions))) > cfg.max_step_px:
        rejections.append('step')
    if component[:, 0].any() or component[:, -1].any():
        rejections.append('boundary')
    return FeatureCurve(cepi.orientation, samples, not rejections, requested, tuple(rejections))


def extract_feature_curves(lf, kp, cfg=None, image=None):
    """Horizontal and vertical feature curves of one central-view keypoint."""
    cfg = cfg or CurveConfig()
    img = central_view(lf) if image is None else image
    try:
        tmpl = build_template(img, kp, cfg.k_template, cfg.weight_sigma_frac)
    except BoundsError:
        logger.debug(f"Template for keypoint ({kp.u0:.1f}, {kp.v0:.1f}) leaves the image")
        return (FeatureCurve.rejected(HORIZONTAL, 'template_bounds'),
                FeatureCurve.rejected(VERTICAL, 'template_bounds'))

    curves = []
    for orientation in ORIENTATIONS:
        try:
            cepi = build_correlation_epi(lf, kp, tmpl, orientation, cfg.view_span,
                                         cfg.search_radius, cfg.max_slope_px_per_view)
        except BoundsError as e:
            logger.debug(f"No {orientation} correlation EPI for ({kp.u0:.1f}, {kp.v0:.1f}): {e}")
            curves.append(FeatureCurve.rejected(orientation, 'window_bounds'))
            continue
        curves.append(extract_curve(cepi, kp, cfg))
    return curves[0], curves[1]


def curve_to_dict(curve):
    return {
        'orientation': curve.orientation,
        'valid': curve.valid,
        'rejections': list(curve.rejections),
        'samples': [[s.view_offset, s.pixel_pos, s.corr_score] for s in curve.samples],
    }


def curve_dump(kp, f_h, f_v):
    return {
        'u0': kp.u0, 'v0': kp.v0, 'scale': kp.scale,
        'horizontal': curve_to_dict(f_h),
        'vertical': curve_to_dict(f_v),
    }


def write_curve_dump(records, path):
    try:
        with open(path, 'w', encoding='utf-8') as f:
            json.dump(records, f, indent=2, sort_keys=True)
    except OSError as e:
        raise LightFieldIOError(f"cannot write curve dump to {path}: {e}")
