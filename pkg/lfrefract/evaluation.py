"""TPR / FPR against a ground-truth mask, threshold sweeps and report files."""
import json
import logging
import os
from dataclasses import dataclass, replace

import numpy as np
import pandas as pd
from PIL import Image, ImageDraw
from sklearn.model_selection import ParameterGrid

from .config import Thresholds
from .errors import BoundsError, InsufficientFeaturesError, LightFieldFormatError, LightFieldIOError
from .fit import INDETERMINATE, LAMBERTIAN, REFRACTED, relabel, slope_depth
from .lightfield import quantize16, read_image

logger = logging.getLogger(__name__)

PROPOSED = 'proposed'
XU_BASELINE = 'xu_baseline'
METHODS = (PROPOSED, XU_BASELINE)

CSV_COLUMNS = ['method', 'planar_thresh', 'slope_thresh', 'xu_thresh',
               'tp', 'fp', 'tn', 'fn', 'indeterminate', 'tpr', 'fpr']

VERDICT_COLORS = {
    LAMBERTIAN: (0, 0, 255),
    REFRACTED: (255, 0, 0),
    INDETERMINATE: (128, 128, 128),
}

DEFAULT_GRID = {
    'planar_thresh': [0.25, 0.5, 0.75, 1.0, 1.5, 2.0, 3.0, 5.0, 10.0],
    'slope_thresh': [0.005, 0.01, 0.02, 0.05, 0.1, 0.2, 0.5, 1.0],
}


@dataclass(frozen=True)
class EvalCounts:
    tp: int = 0
    fp: int = 0
    tn: int = 0
    fn: int = 0
    indeterminate: int = 0

    @property
    def total(self):
        return self.tp + self.fp + self.tn + self.fn + self.indeterminate


@dataclass(frozen=True, eq=False)
class EvalResult:
    method: str
    counts: EvalCounts
    planar_thresh: float = None
    slope_thresh: float = None
    xu_thresh: float = None
    config: dict = None

    @property
    def tpr(self):
        """None when there are no determinate ground-truth-refracted features."""
        positives = self.counts.tp + self.counts.fn
        return self.counts.tp / positives if positives else None

    @property
    def fpr(self):
        negatives = self.counts.fp + self.counts.tn
        return self.counts.fp / negatives if negatives else None

    def to_row(self):
        c = self.counts
        return {
            'method': self.method,
            'planar_thresh': self.planar_thresh,
            'slope_thresh': self.slope_thresh,
            'xu_thresh': self.xu_thresh,
            'tp': c.tp, 'fp': c.fp, 'tn': c.tn, 'fn': c.fn, 'indeterminate': c.indeterminate,
            'tpr': self.tpr,
            'fpr': self.fpr,
        }


@dataclass(frozen=True)
class RefractionRatio:
    r: float
    i_r: int
    i_t: int


def _mask_array(mask):
    return np.asarray(getattr(mask, 'refr_mask', mask), dtype=bool)


def mask_lookup(mask, kp):
    """Ground-truth flag at the nearest pixel of a subpixel keypoint."""
    mask = _mask_array(mask)
    u, v = int(round(kp.u0)), int(round(kp.v0))
    if not (0 <= v < mask.shape[0] and 0 <= u < mask.shape[1]):
        raise BoundsError(f"keypoint ({kp.u0}, {kp.v0}) outside {mask.shape[1]}x{mask.shape[0]} mask")
    return bool(mask[v, u])


def evaluate(labels, mask, method=PROPOSED, thresholds=None, config=None):
    if method not in METHODS:
        raise ValueError(f"unknown method '{method}'")
    thresholds = thresholds or Thresholds()
    mask = _mask_array(mask)
    tp = fp = tn = fn = indeterminate = 0
    for label in labels:
        truth = mask_lookup(mask, label.keypoint)
        if label.verdict == INDETERMINATE:
            indeterminate += 1
            continue
        if method == PROPOSED:
            flagged = label.verdict == REFRACTED
        else:
            flagged = label.xu_refracted(thresholds.xu_thresh)
        if truth and flagged:
            tp += 1
        elif truth:
            fn += 1
        elif flagged:
            fp += 1
        else:
            tn += 1
    counts = EvalCounts(tp=tp, fp=fp, tn=tn, fn=fn, indeterminate=indeterminate)
    if method == PROPOSED:
        return EvalResult(method, counts, planar_thresh=thresholds.planar_thresh,
                          slope_thresh=thresholds.slope_thresh, config=config)
    return EvalResult(method, counts, xu_thresh=thresholds.xu_thresh, config=config)


def exclude_features(labels, exclusion):
    """Drop features whose nearest pixel lies inside an exclusion mask."""
    exclusion = _mask_array(exclusion)
    return [label for label in labels if not mask_lookup(exclusion, label.keypoint)]


def sweep_labels(labels, mask, grid, base_thresholds=None, config=None):
    """Re-threshold already fitted labels over a grid; no curves are refitted.

    grid maps planar_thresh / slope_thresh (and optionally xu_thresh) to lists.
    Baseline results are produced for every xu value, defaulting to the planar values.
    """
    base = base_thresholds or Thresholds()
    proposed_grid = {k: list(grid[k]) for k in ('planar_thresh', 'slope_thresh') if k in grid}
    if not proposed_grid or any(len(v) == 0 for v in proposed_grid.values()):
        raise ValueError("threshold grid must not be empty")
    results = []
    for point in ParameterGrid(proposed_grid):
        thresholds = replace(base, **point)
        relabelled = [relabel(label, thresholds) for label in labels]
        results.append(evaluate(relabelled, mask, PROPOSED, thresholds, config))

    xu_values = grid.get('xu_thresh') or proposed_grid.get('planar_thresh', [base.xu_thresh])
    for xu in sorted(set(xu_values)):
        results.append(evaluate(labels, mask, XU_BASELINE, replace(base, xu_thresh=xu), config))
    for a, b in check_monotone(results):
        logger.error(f"ERROR: TP rose from {a.counts.tp} to {b.counts.tp} when thresholds went from "
                     f"planar {a.planar_thresh}/slope {a.slope_thresh} to planar {b.planar_thresh}/slope {b.slope_thresh}")
    logger.info(f"Swept {len(results)} operating points over {len(labels)} features")
    return results


def sweep_thresholds(lf, keypoints, mask, grid, config=None):
    """Extract and fit every feature once, then sweep thresholds over the labels."""
    from .pipeline import RefractionPipeline
    pipeline = RefractionPipeline(config)
    labels = pipeline.classify_lightfield(lf, keypoints)
    return sweep_labels(labels, mask, grid, pipeline.config.thresholds, pipeline.config.to_dict())


def parse_grid(text):
    """'planar=0.5,1,2;slope=0.01,0.05[;xu=...]' -> grid dict."""
    aliases = {'planar': 'planar_thresh', 'slope': 'slope_thresh', 'xu': 'xu_thresh'}
    grid = {}
    try:
        for part in filter(None, (p.strip() for p in text.split(';'))):
            key, values = part.split('=', 1)
            key = aliases.get(key.strip(), key.strip())
            if key not in aliases.values():
                raise ValueError(f"unknown grid key '{key}'")
            grid[key] = [float(v) for v in values.split(',') if v.strip()]
    except ValueError as e:
        raise LightFieldFormatError(f"bad threshold grid '{text}': {e}")
    if not grid.get('planar_thresh') or not grid.get('slope_thresh'):
        raise LightFieldFormatError("threshold grid needs non-empty planar and slope values")
    return grid


def check_monotone(results):
    """Pairs of proposed results where raising both thresholds increased TP."""
    proposed = [r for r in results if r.method == PROPOSED]
    violations = []
    for a in proposed:
        for b in proposed:
            if b.planar_thresh >= a.planar_thresh and b.slope_thresh >= a.slope_thresh \
                    and b.counts.tp > a.counts.tp:
                violations.append((a, b))
    return violations


def best_operating_point(results, method, max_fpr=0.1):
    """Highest-TPR result of a method with FPR <= max_fpr (ties: lower FPR)."""
    candidates = [r for r in results if r.method == method and r.fpr is not None
                  and r.tpr is not None and r.fpr <= max_fpr]
    if not candidates:
        return None
    return max(candidates, key=lambda r: (r.tpr, -r.fpr))


def pair_by_fpr(proposed, xu):
    """Each proposed result with the baseline result nearest in FPR."""
    xu = [r for r in xu if r.fpr is not None]
    pairs = []
    for p in proposed:
        if p.fpr is None or not xu:
            continue
        pairs.append((p, min(xu, key=lambda r: abs(r.fpr - p.fpr))))
    return pairs


def refraction_ratio(labels):
    if not labels:
        raise InsufficientFeaturesError("no labels to compute a refraction ratio from")
    i_t = sum(1 for label in labels if label.verdict != INDETERMINATE)
    i_r = sum(1 for label in labels if label.verdict == REFRACTED)
    if i_t == 0:
        raise InsufficientFeaturesError("every feature is indeterminate")
    return RefractionRatio(r=i_r / i_t, i_r=i_r, i_t=i_t)


def results_frame(results):
    return pd.DataFrame([r.to_row() for r in results], columns=CSV_COLUMNS)


def load_mask(path, shape=None):
    mask = read_image(path) > 0.5
    if shape is not None and mask.shape != tuple(shape):
        raise LightFieldFormatError(f"mask {path} is {mask.shape[1]}x{mask.shape[0]}, "
                                    f"expected {shape[1]}x{shape[0]}")
    return mask


def annotate_features(image, labels, path):
    """Central view with one circle per feature: blue Lambertian, red refracted, gray indeterminate."""
    grey = (quantize16(image) >> 8).astype(np.uint8)
    canvas = Image.fromarray(grey, mode='L').convert('RGB')
    draw = ImageDraw.Draw(canvas)
    for label in labels:
        kp = label.keypoint
        r = max(2.0, kp.scale)
        draw.ellipse([kp.u0 - r, kp.v0 - r, kp.u0 + r, kp.v0 + r],
                     outline=VERDICT_COLORS[label.verdict], width=1)
    try:
        canvas.save(path)
    except OSError as e:
        raise LightFieldIOError(f"cannot write annotated image {path}: {e}")


def feature_depths(labels, plane_sep_D=1.0):
    """(label, depth) for every determinate feature, depth taken from its mean slope."""
    return [(l, slope_depth(0.5 * (l.slopes.w_su + l.slopes.w_tv), plane_sep_D))
            for l in labels if l.verdict != INDETERMINATE and not l.slopes.degenerate]


def save_slope_map(labels, image, path, plane_sep_D=1.0):
    """Central view with every determinate feature coloured by the depth its mean slope implies.

    Features whose slope gives no finite positive depth are drawn as crosses.
    """
    import matplotlib
    matplotlib.use('Agg')
    import matplotlib.pyplot as plt

    feats = feature_depths(labels, plane_sep_D)
    fig, ax = plt.subplots(figsize=(6, 6))
    ax.imshow(image, cmap='gray', vmin=0.0, vmax=1.0)
    if feats:
        us = np.array([l.keypoint.u0 for l, _ in feats])
        vs = np.array([l.keypoint.v0 for l, _ in feats])
        depths = np.array([d for _, d in feats])
        ok = np.isfinite(depths) & (depths > 0)
        if ok.any():
            sc = ax.scatter(us[ok], vs[ok], c=depths[ok], cmap='viridis', s=18, edgecolors='k', linewidths=0.3)
            fig.colorbar(sc, ax=ax, label='depth')
        if not ok.all():
            ax.scatter(us[~ok], vs[~ok], marker='x', c='r', s=18, linewidths=0.8)
    ax.set_axis_off()
    try:
        fig.savefig(path, dpi=100, bbox_inches='tight')
    except OSError as e:
        raise LightFieldIOError(f"cannot write slope map {path}: {e}")
    finally:
        plt.close(fig)


def emit_report(results, path, labels=None, image=None, config=None):
    """CSV at path; the JSON twin and annotated PNG take its stem."""
    stem = os.path.splitext(path)[0]
    json_path = f"{stem}.json" if not path.endswith('.json') else f"{stem}.report.json"
    frame = results_frame(results)
    payload = {
        'config': config if config is not None else (results[0].config if results else None),
        'results': [r.to_row() for r in results],
    }
    try:
        frame.to_csv(path, index=False)
        with open(json_path, 'w', encoding='utf-8') as f:
            json.dump(payload, f, indent=2, sort_keys=True)
    except OSError as e:
        raise LightFieldIOError(f"cannot write report {path}: {e}")
    if labels is not None and image is not None:
        annotate_features(image, labels, f"{stem}.png")
    logger.info(f"SUCCESS: Report written to {path} ({len(results)} rows)")
