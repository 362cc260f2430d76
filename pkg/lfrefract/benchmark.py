"""Proposed vs single-hyperplane baseline across the refractor presets at matched FPR."""
import logging
from dataclasses import asdict, dataclass
from datetime import datetime
from typing import Optional

import pandas as pd

from .config import PipelineConfig
from .evaluation import (DEFAULT_GRID, PROPOSED, XU_BASELINE, best_operating_point, exclude_features,
                         pair_by_fpr, sweep_labels)
from .pipeline import RefractionPipeline
from .synth import PRESETS, Sphere, central_exclusion_mask, preset_scene, render_lightfield

logger = logging.getLogger(__name__)

REFRACTOR_PRESETS = tuple(name for name in PRESETS if name != 'lambertian')


@dataclass(frozen=True)
class BenchmarkRow:
    preset: str
    method: str
    tpr: Optional[float]
    fpr: Optional[float]
    planar_thresh: Optional[float]
    slope_thresh: Optional[float]
    xu_thresh: Optional[float]
    features: int
    indeterminate: int


def _row(preset, result, method, n_features):
    if result is None:
        return BenchmarkRow(preset, method, None, None, None, None, None, n_features, 0)
    return BenchmarkRow(preset, method, result.tpr, result.fpr, result.planar_thresh,
                        result.slope_thresh, result.xu_thresh, n_features, result.counts.indeterminate)


@dataclass(frozen=True)
class MatchedPair:
    """A proposed operating point and the baseline point nearest to it in FPR."""
    preset: str
    planar_thresh: float
    slope_thresh: float
    proposed_tpr: Optional[float]
    proposed_fpr: float
    xu_thresh: float
    xu_tpr: Optional[float]
    xu_fpr: float


def _pair(preset, proposed, xu):
    return MatchedPair(preset, proposed.planar_thresh, proposed.slope_thresh, proposed.tpr, proposed.fpr,
                       xu.xu_thresh, xu.tpr, xu.fpr)


class PresetBenchmark:
    def __init__(self, config=None, presets=None, grid=None, max_fpr=0.1, exclusion_frac=0.1, seed=0):
        self.config = config or PipelineConfig()
        self.presets = list(presets or REFRACTOR_PRESETS)
        self.grid = grid or DEFAULT_GRID
        self.max_fpr = max_fpr
        self.exclusion_frac = exclusion_frac
        self.seed = seed
        self.rows = []
        self.pairs = {}
        self.outcomes = {}
        self.stats = {'presets': 0, 'features': 0, 'errors': 0, 'start_time': datetime.now()}

    def run_preset(self, name):
        spec = preset_scene(name)
        lf, gt = render_lightfield(spec, seed=self.seed, threads=self.config.runtime.threads)
        pipeline = RefractionPipeline(self.config)
        labels = pipeline.classify_lightfield(lf)
        if isinstance(spec.refractor, Sphere) and self.exclusion_frac > 0:
            # both apparent motions agree near the sphere centre; those misses are not scored
            before = len(labels)
            labels = exclude_features(labels, central_exclusion_mask(gt, self.exclusion_frac))
            logger.info(f"Excluded {before - len(labels)} features near the sphere centre")

        self.outcomes[name] = (gt, labels)
        results = sweep_labels(labels, gt, self.grid, self.config.thresholds, self.config.to_dict())
        proposed = [r for r in results if r.method == PROPOSED]
        xu = [r for r in results if r.method == XU_BASELINE]
        self.pairs[name] = [_pair(name, p, x) for p, x in pair_by_fpr(proposed, xu)]
        rows = [
            _row(name, best_operating_point(results, PROPOSED, self.max_fpr), PROPOSED, len(labels)),
            _row(name, best_operating_point(results, XU_BASELINE, self.max_fpr), XU_BASELINE, len(labels)),
        ]
        self.stats['features'] += len(labels)
        return rows

    def run(self):
        self.rows = []
        for name in self.presets:
            logger.info(f"Benchmarking preset '{name}'")
            try:
                self.rows.extend(self.run_preset(name))
                self.stats['presets'] += 1
            except Exception as e:
                logger.error(f"ERROR: Preset '{name}' failed: {e}")
                self.stats['errors'] += 1
        return self.rows

    def to_frame(self):
        return pd.DataFrame([asdict(r) for r in self.rows],
                            columns=[f for f in BenchmarkRow.__dataclass_fields__])

    def pairs_frame(self):
        return pd.DataFrame([asdict(p) for name in self.presets for p in self.pairs.get(name, [])],
                            columns=[f for f in MatchedPair.__dataclass_fields__])

    def best_pair(self, name):
        """Matched pair with the highest proposed TPR at FPR <= max_fpr."""
        pairs = [p for p in self.pairs.get(name, []) if p.proposed_fpr <= self.max_fpr and p.proposed_tpr is not None]
        if not pairs:
            return None
        return max(pairs, key=lambda p: (p.proposed_tpr, -p.proposed_fpr))

    def print_summary(self):
        elapsed = datetime.now() - self.stats['start_time']
        print("\n" + "=" * 70)
        print(f"METHOD COMPARISON (best TPR at FPR <= {self.max_fpr:.0%})")
        print("=" * 70)
        for row in self.rows:
            tpr = f"{row.tpr:.1%}" if row.tpr is not None else "n/a"
            fpr = f"{row.fpr:.1%}" if row.fpr is not None else "n/a"
            print(f"{row.preset:<28} {row.method:<12} TPR {tpr:>7}  FPR {fpr:>7}  ({row.features} features)")
        print("-" * 70)
        print("Matched FPR (baseline point nearest the best proposed point):")
        for name in self.presets:
            pair = self.best_pair(name)
            if pair is None:
                print(f"{name:<28} n/a")
                continue
            xu_tpr = f"{pair.xu_tpr:.1%}" if pair.xu_tpr is not None else "n/a"
            print(f"{name:<28} proposed {pair.proposed_tpr:.1%} @ {pair.proposed_fpr:.1%}  "
                  f"baseline {xu_tpr} @ {pair.xu_fpr:.1%}")
        print(f"Presets: {self.stats['presets']}  Errors: {self.stats['errors']}  Elapsed: {elapsed}")
        print("=" * 70)
