"""Plane / hyperplane fits of feature curves and the refracted-feature classifier.

A Lambertian point traces a 2D plane in the 4D light field: stacking the
horizontal curve as rows (s, 0, du, 0) and the vertical curve as rows
(0, t, 0, dv) gives a design matrix whose two smallest singular values vanish.
Refraction shows up either as planar residuals or as different slopes in the
(s, u) and (t, v) directions.
"""
import logging
from dataclasses import dataclass, field, replace
from typing import Optional, Tuple

import numpy as np

from .config import Thresholds
from .errors import InsufficientSamplesError

logger = logging.getLogger(__name__)

LAMBERTIAN = 'lambertian'
REFRACTED = 'refracted'
INDETERMINATE = 'indeterminate'
VERDICTS = (LAMBERTIAN, REFRACTED, INDETERMINATE)

PLANAR_H = 'planar_h'
PLANAR_V = 'planar_v'
SLOPE = 'slope'
INVALID_CURVES = 'invalid_curves'

SLOPE_EPS = 1e-6
MIN_FIT_ROWS = 4

NORMALS_PATH = 'normals'
LINE_FIT_PATH = 'line_fit'


@dataclass(frozen=True, eq=False)
class PlaneFit:
    n_h: np.ndarray
    n_v: np.ndarray
    e1: float
    e2: float
    n_rows: int
    degenerate: bool = False

    def block_errors(self):
        """(horizontal, vertical) residuals, assigning each normal to the block it lives in."""
        if _is_horizontal(self.n_h) or not _is_horizontal(self.n_v):
            return self.e1, self.e2
        return self.e2, self.e1


@dataclass(frozen=True, eq=False)
class HyperplaneFit:
    n: np.ndarray
    e_min: float


@dataclass(frozen=True)
class SlopeReport:
    w_su: float
    w_tv: float
    c: float
    degenerate: bool = False
    su_path: str = NORMALS_PATH
    tv_path: str = NORMALS_PATH


@dataclass(frozen=True)
class FeatureMetrics:
    """Everything a verdict depends on, so thresholds can be re-applied without refitting."""
    e_h: float
    e_v: float
    e_min: float
    c: float
    n_samples: int
    curves_valid: bool

    @property
    def e1(self):
        return min(self.e_h, self.e_v)

    @property
    def e2(self):
        return max(self.e_h, self.e_v)


@dataclass(frozen=True, eq=False)
class FeatureLabel:
    keypoint: object
    verdict: str
    reasons: Tuple[str, ...]
    fit: Optional[PlaneFit]
    slopes: SlopeReport
    baseline_fit: Optional[HyperplaneFit]
    f_h: object = None
    f_v: object = None
    metrics: FeatureMetrics = field(default=None)

    @property
    def determinate(self):
        return self.verdict != INDETERMINATE

    def xu_refracted(self, xu_thresh):
        return self.baseline_fit is not None and self.baseline_fit.e_min > xu_thresh


def _is_horizontal(normal):
    return normal[0] ** 2 + normal[2] ** 2 >= normal[1] ** 2 + normal[3] ** 2


def _design_rows(f_h, f_v, kp):
    rows = [(s.view_offset, 0.0, s.pixel_pos - kp.u0, 0.0) for s in f_h.samples]
    rows += [(0.0, s.view_offset, 0.0, s.pixel_pos - kp.v0) for s in f_v.samples]
    return np.array(rows, dtype=np.float64).reshape(-1, 4)


def assemble_design_matrix(f_h, f_v, kp, min_samples=8):
    """Stack horizontal then vertical curve samples into an (N+M) x 4 matrix."""
    if not f_h.valid:
        raise InsufficientSamplesError("horizontal feature curve is invalid")
    if not f_v.valid:
        raise InsufficientSamplesError("vertical feature curve is invalid")
    n = len(f_h.samples) + len(f_v.samples)
    if n < min_samples:
        raise InsufficientSamplesError(f"{n} curve samples, need at least {min_samples}")
    return _design_rows(f_h, f_v, kp)


def _check_rows(amat):
    amat = np.asarray(amat, dtype=np.float64)
    if amat.ndim != 2 or amat.shape[1] != 4:
        raise ValueError(f"design matrix must be (rows, 4), got {amat.shape}")
    if amat.shape[0] < MIN_FIT_ROWS:
        raise InsufficientSamplesError(f"need at least {MIN_FIT_ROWS} rows, got {amat.shape[0]}")
    return amat


def _is_degenerate(amat):
    h_rows = (amat[:, 1] == 0) & (amat[:, 3] == 0)
    v_rows = (amat[:, 0] == 0) & (amat[:, 2] == 0)
    if not np.all(h_rows | v_rows):
        # not a curve matrix; only a rank collapse counts
        return bool(np.linalg.matrix_rank(amat) < 2)
    return len(np.unique(amat[h_rows, 0])) < 2 or len(np.unique(amat[v_rows, 1])) < 2


def fit_plane(amat):
    """Two hyperplane normals spanning the null space of the best-fitting 4D plane."""
    amat = _check_rows(amat)
    _, sv, vt = np.linalg.svd(amat, full_matrices=True)
    sv = np.concatenate([sv, np.zeros(4 - len(sv))])
    degenerate = _is_degenerate(amat)
    if degenerate:
        logger.debug("Plane fit on fewer than two distinct view offsets per block")
    return PlaneFit(
        n_h=vt[3].copy(),
        n_v=vt[2].copy(),
        e1=float(sv[3]),
        e2=float(sv[2]),
        n_rows=amat.shape[0],
        degenerate=degenerate,
    )


def fit_hyperplane_xu(amat):
    """Single-hyperplane least-squares fit; e_min is the smallest singular value."""
    amat = _check_rows(amat)
    _, sv, vt = np.linalg.svd(amat, full_matrices=True)
    return HyperplaneFit(n=vt[-1].copy(), e_min=float(sv[-1]))


def line_slope(curve):
    """Total-least-squares slope d(pixel)/d(view) of one curve; nan if undefined."""
    if curve is None or len(curve.samples) < 2:
        return float('nan')
    pts = np.column_stack([curve.offsets, curve.positions])
    if len(np.unique(pts[:, 0])) < 2:
        return float('nan')
    centered = pts - pts.mean(axis=0)
    _, _, vt = np.linalg.svd(centered, full_matrices=False)
    d_s, d_u = vt[0]
    if abs(d_s) < 1e-12:
        return float('nan')
    return float(d_u / d_s)


def _normal_slope(a, b):
    # q spans the (view, pixel) direction orthogonal to both normals' projections
    _, _, vt = np.linalg.svd(np.array([a, b], dtype=np.float64))
    q_s, q_u = vt[-1]
    if abs(q_s) < SLOPE_EPS:
        return None
    return float(q_u / q_s)


def compute_slopes(fit, f_h, f_v):
    w_su = w_tv = None
    if fit is not None and not fit.degenerate:
        w_su = _normal_slope((fit.n_h[0], fit.n_h[2]), (fit.n_v[0], fit.n_v[2]))
        w_tv = _normal_slope((fit.n_h[1], fit.n_h[3]), (fit.n_v[1], fit.n_v[3]))
    su_path = tv_path = NORMALS_PATH
    if w_su is None:
        w_su, su_path = line_slope(f_h), LINE_FIT_PATH
    if w_tv is None:
        w_tv, tv_path = line_slope(f_v), LINE_FIT_PATH

    degenerate = not (np.isfinite(w_su) and np.isfinite(w_tv))
    c = float('nan') if degenerate else float((w_su - w_tv) ** 2)
    return SlopeReport(w_su=float(w_su), w_tv=float(w_tv), c=c, degenerate=degenerate,
                       su_path=su_path, tv_path=tv_path)


def slope_depth(w, plane_sep_D=1.0):
    """Depth of a Lambertian point from its slope (w = -D / Pz)."""
    if w == 0 or not np.isfinite(w):
        return float('inf')
    return -plane_sep_D / w


def decide(metrics, thresholds):
    """Verdict and triggered tests for one feature."""
    if not metrics.curves_valid or metrics.n_samples < thresholds.min_samples:
        return INDETERMINATE, (INVALID_CURVES,)
    reasons = []
    if metrics.e_h > thresholds.planar_thresh:
        reasons.append(PLANAR_H)
    if metrics.e_v > thresholds.planar_thresh:
        reasons.append(PLANAR_V)
    if np.isfinite(metrics.c) and metrics.c > thresholds.slope_thresh:
        reasons.append(SLOPE)
    return (REFRACTED if reasons else LAMBERTIAN), tuple(reasons)


def classify(f_h, f_v, kp, thresholds=None):
    thresholds = thresholds or Thresholds()
    rows = _design_rows(f_h, f_v, kp)
    fit = baseline = None
    if rows.shape[0] >= MIN_FIT_ROWS:
        fit = fit_plane(rows)
        baseline = fit_hyperplane_xu(rows)
    slopes = compute_slopes(fit, f_h, f_v)

    nan = float('nan')
    e_h, e_v = fit.block_errors() if fit is not None else (nan, nan)
    metrics = FeatureMetrics(
        e_h=e_h, e_v=e_v,
        e_min=baseline.e_min if baseline is not None else nan,
        c=slopes.c,
        n_samples=rows.shape[0],
        curves_valid=bool(f_h.valid and f_v.valid),
    )
    verdict, reasons = decide(metrics, thresholds)
    logger.debug(f"Feature ({kp.u0:.1f}, {kp.v0:.1f}): {verdict} {list(reasons)}")
    return FeatureLabel(keypoint=kp, verdict=verdict, reasons=reasons, fit=fit, slopes=slopes,
                        baseline_fit=baseline, f_h=f_h, f_v=f_v, metrics=metrics)


def relabel(label, thresholds):
    verdict, reasons = decide(label.metrics, thresholds)
    return replace(label, verdict=verdict, reasons=reasons)


def indeterminate_label(kp, f_h=None, f_v=None):
    """Label for a feature whose curves could not be measured at all."""
    nan = float('nan')
    metrics = FeatureMetrics(e_h=nan, e_v=nan, e_min=nan, c=nan, n_samples=0, curves_valid=False)
    slopes = SlopeReport(w_su=nan, w_tv=nan, c=nan, degenerate=True, su_path=LINE_FIT_PATH, tv_path=LINE_FIT_PATH)
    return FeatureLabel(keypoint=kp, verdict=INDETERMINATE, reasons=(INVALID_CURVES,), fit=None, slopes=slopes,
                        baseline_fit=None, f_h=f_h, f_v=f_v, metrics=metrics)
