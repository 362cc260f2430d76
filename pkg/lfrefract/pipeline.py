"""Detection -> curve extraction -> classification for one light field."""
import json
import logging
import math
import threading
from concurrent.futures import ThreadPoolExecutor
from datetime import datetime

from .config import PipelineConfig
from .curves import extract_feature_curves
from .errors import InsufficientFeaturesError, LightFieldFormatError, LightFieldIOError
from .fit import INDETERMINATE, LAMBERTIAN, REFRACTED, classify, indeterminate_label
from .keypoints import DogDetector, Keypoint
from .lightfield import central_view

logger = logging.getLogger(__name__)

EXPORT_MODES = ('filtered', 'unfiltered')


class RefractionPipeline:
    def __init__(self, config=None, detector=None):
        self.config = (config or PipelineConfig()).validate()
        self.detector = detector or DogDetector(self.config.detector)
        self._lock = threading.Lock()
        self.stats = {
            'keypoints': 0,
            'lambertian': 0,
            'refracted': 0,
            'indeterminate': 0,
            'errors': 0,
            'start_time': datetime.now(),
        }

    def detect(self, lf):
        keypoints = self.detector.detect(central_view(lf))
        logger.info(f"SUCCESS: Detected {len(keypoints)} keypoints in the central view")
        return keypoints

    def _curves_for(self, lf, image, kp):
        try:
            return extract_feature_curves(lf, kp, self.config.curves, image=image)
        except Exception as e:
            logger.error(f"ERROR: Curve extraction failed at ({kp.u0:.1f}, {kp.v0:.1f}): {e}")
            with self._lock:
                self.stats['errors'] += 1
            return None

    def extract_curves(self, lf, keypoints):
        """(f_h, f_v) per keypoint, in keypoint order; None where extraction failed."""
        image = central_view(lf)
        with ThreadPoolExecutor(max_workers=self.config.runtime.workers) as pool:
            return list(pool.map(lambda kp: self._curves_for(lf, image, kp), keypoints))

    def _label(self, kp, curves):
        if curves is None:
            return indeterminate_label(kp)
        try:
            return classify(curves[0], curves[1], kp, self.config.thresholds)
        except Exception as e:
            logger.error(f"ERROR: Classification failed at ({kp.u0:.1f}, {kp.v0:.1f}): {e}")
            with self._lock:
                self.stats['errors'] += 1
            return indeterminate_label(kp, *curves)

    def classify_lightfield(self, lf, keypoints=None):
        if keypoints is None:
            keypoints = self.detect(lf)
        for kp in keypoints:
            kp.validate(lf.n_u, lf.n_v)
        if not keypoints:
            raise InsufficientFeaturesError("no keypoints to classify")

        curves = self.extract_curves(lf, keypoints)
        labels = [self._label(kp, c) for kp, c in zip(keypoints, curves)]

        self.stats['keypoints'] += len(labels)
        for verdict in (LAMBERTIAN, REFRACTED, INDETERMINATE):
            self.stats[verdict] += sum(1 for label in labels if label.verdict == verdict)
        logger.info(f"SUCCESS: Classified {len(labels)} features "
                    f"({self.stats['refracted']} refracted, {self.stats['indeterminate']} indeterminate)")
        return labels

    def print_summary(self):
        """Print console summary"""
        elapsed = datetime.now() - self.stats['start_time']
        determinate = self.stats['lambertian'] + self.stats['refracted']
        ratio = (self.stats['refracted'] / determinate * 100) if determinate > 0 else 0

        print("\n" + "=" * 70)
        print("LIGHT FIELD REFRACTION SUMMARY")
        print("=" * 70)
        print(f"Elapsed: {elapsed}")
        print(f"Keypoints: {self.stats['keypoints']}")
        print(f"Lambertian: {self.stats['lambertian']}")
        print(f"Refracted: {self.stats['refracted']} ({ratio:.1f}% of determinate)")
        print(f"Indeterminate: {self.stats['indeterminate']}")
        print(f"Errors: {self.stats['errors']}")
        print("=" * 70)


def _number(x):
    return None if x is None or not math.isfinite(x) else float(x)


def label_to_record(label):
    kp = label.keypoint
    fit, base, slopes = label.fit, label.baseline_fit, label.slopes
    return {
        'u0': kp.u0,
        'v0': kp.v0,
        'scale': kp.scale,
        'score': kp.score,
        'verdict': label.verdict,
        'reasons': sorted(label.reasons),
        'e1': _number(fit.e1) if fit is not None else None,
        'e2': _number(fit.e2) if fit is not None else None,
        'e_min_xu': _number(base.e_min) if base is not None else None,
        'w_su': _number(slopes.w_su),
        'w_tv': _number(slopes.w_tv),
        'c': _number(slopes.c),
    }


def labels_to_records(labels):
    return [label_to_record(label) for label in labels]


def write_results(labels, path, config=None):
    payload = {
        'config': config.to_dict() if config is not None else None,
        'features': labels_to_records(labels),
    }
    try:
        with open(path, 'w', encoding='utf-8') as f:
            json.dump(payload, f, indent=2, sort_keys=True)
    except OSError as e:
        raise LightFieldIOError(f"cannot write results to {path}: {e}")
    logger.info(f"SUCCESS: Wrote {len(labels)} feature labels to {path}")


def read_results(path):
    try:
        with open(path, 'r', encoding='utf-8') as f:
            payload = json.load(f)
    except FileNotFoundError as e:
        raise LightFieldIOError(f"cannot read results {path}: {e}")
    except json.JSONDecodeError as e:
        raise LightFieldFormatError(f"results file {path} is not valid JSON: {e}")
    if not isinstance(payload, dict) or not isinstance(payload.get('features'), list):
        raise LightFieldFormatError(f"results file {path} has no 'features' list")
    for i, rec in enumerate(payload['features']):
        missing = {'u0', 'v0', 'scale', 'score', 'verdict'} - set(rec)
        if missing:
            raise LightFieldFormatError(f"feature {i} in {path} lacks {sorted(missing)}")
    return payload


def export_keypoints(records, mode='filtered'):
    """Keypoints to hand to an external reconstruction; filtered keeps only Lambertian ones."""
    if mode not in EXPORT_MODES:
        raise ValueError(f"unknown export mode '{mode}'")
    keep = [r for r in records if mode == 'unfiltered' or r['verdict'] == LAMBERTIAN]
    return [Keypoint(float(r['u0']), float(r['v0']), float(r['scale']), float(r['score'])) for r in keep]
