import json
import logging
import os
from dataclasses import asdict, dataclass, field, fields, replace
from typing import Optional

from .errors import ConfigError

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class DetectorConfig:
    octaves: int = 3
    intervals: int = 3
    sigma0: float = 1.6
    contrast_thresh: float = 0.01
    edge_thresh: float = 10.0
    border_k: float = 5.0
    max_keypoints: int = 500
    dedup_px: float = 1.0

    def validate(self):
        if self.octaves < 1 or self.intervals < 1:
            raise ConfigError("detector.octaves and detector.intervals must be >= 1")
        if self.sigma0 <= 0 or self.contrast_thresh < 0 or self.edge_thresh <= 1:
            raise ConfigError("detector sigma0/contrast_thresh/edge_thresh out of range")
        if self.border_k < 0 or self.max_keypoints < 1:
            raise ConfigError("detector.border_k must be >= 0 and max_keypoints >= 1")


@dataclass(frozen=True)
class CurveConfig:
    k_template: float = 5.0
    weight_sigma_frac: float = 0.25
    corr_mask_thresh: float = 0.5
    min_span_frac: float = 0.75
    max_step_px: float = 3.0
    view_span: Optional[int] = None
    search_radius: Optional[int] = None
    max_slope_px_per_view: Optional[float] = None

    def validate(self):
        if self.k_template <= 0 or self.weight_sigma_frac <= 0:
            raise ConfigError("curves.k_template and curves.weight_sigma_frac must be > 0")
        if not -1.0 <= self.corr_mask_thresh <= 1.0:
            raise ConfigError("curves.corr_mask_thresh must lie in [-1, 1]")
        if not 0.0 <= self.min_span_frac <= 1.0:
            raise ConfigError("curves.min_span_frac must lie in [0, 1]")
        if self.max_step_px <= 0:
            raise ConfigError("curves.max_step_px must be > 0")
        if self.view_span is not None and (self.view_span < 1 or self.view_span % 2 == 0):
            raise ConfigError("curves.view_span must be a positive odd number")
        if self.search_radius is not None and self.search_radius < 1:
            raise ConfigError("curves.search_radius must be >= 1")
        if self.max_slope_px_per_view is not None and self.max_slope_px_per_view <= 0:
            raise ConfigError("curves.max_slope_px_per_view must be > 0")


@dataclass(frozen=True)
class Thresholds:
    """Classification thresholds.

    planar_thresh and xu_thresh are singular values of the design matrix
    (px units); slope_thresh is a squared slope difference in (px/view)^2.
    """
    planar_thresh: float = 1.5
    slope_thresh: float = 0.05
    xu_thresh: float = 1.5
    min_samples: int = 8

    def validate(self):
        if self.planar_thresh < 0 or self.slope_thresh < 0 or self.xu_thresh < 0:
            raise ConfigError("thresholds must be non-negative")
        if self.min_samples < 4:
            raise ConfigError("thresholds.min_samples must be >= 4")

    def scaled(self, gamma):
        """Thresholds for disparities multiplied by gamma."""
        return replace(self, planar_thresh=self.planar_thresh * gamma,
                       xu_thresh=self.xu_thresh * gamma,
                       slope_thresh=self.slope_thresh * gamma ** 2)


@dataclass(frozen=True)
class RuntimeConfig:
    threads: Optional[int] = None
    seed: int = 0

    def validate(self):
        if self.threads is not None and self.threads < 1:
            raise ConfigError("runtime.threads must be >= 1")

    @property
    def workers(self):
        return self.threads or os.cpu_count() or 1


@dataclass(frozen=True)
class LoggingConfig:
    level: str = "INFO"
    file: Optional[str] = None

    def validate(self):
        if logging.getLevelName(self.level.upper()) == f"Level {self.level.upper()}":
            raise ConfigError(f"unknown logging.level '{self.level}'")


SECTIONS = {
    'detector': DetectorConfig,
    'curves': CurveConfig,
    'thresholds': Thresholds,
    'runtime': RuntimeConfig,
    'logging': LoggingConfig,
}

# CLI flag name -> (section, key)
OVERRIDES = {
    'planar_thresh': ('thresholds', 'planar_thresh'),
    'slope_thresh': ('thresholds', 'slope_thresh'),
    'xu_thresh': ('thresholds', 'xu_thresh'),
    'min_samples': ('thresholds', 'min_samples'),
    'k_template': ('curves', 'k_template'),
    'corr_thresh': ('curves', 'corr_mask_thresh'),
    'min_span_frac': ('curves', 'min_span_frac'),
    'max_step_px': ('curves', 'max_step_px'),
    'view_span': ('curves', 'view_span'),
    'search_radius': ('curves', 'search_radius'),
    'max_slope': ('curves', 'max_slope_px_per_view'),
    'contrast_thresh': ('detector', 'contrast_thresh'),
    'edge_thresh': ('detector', 'edge_thresh'),
    'max_keypoints': ('detector', 'max_keypoints'),
    'threads': ('runtime', 'threads'),
    'seed': ('runtime', 'seed'),
    'log_level': ('logging', 'level'),
    'log_file': ('logging', 'file'),
}


@dataclass(frozen=True)
class PipelineConfig:
    detector: DetectorConfig = field(default_factory=DetectorConfig)
    curves: CurveConfig = field(default_factory=CurveConfig)
    thresholds: Thresholds = field(default_factory=Thresholds)
    runtime: RuntimeConfig = field(default_factory=RuntimeConfig)
    logging: LoggingConfig = field(default_factory=LoggingConfig)

    def validate(self):
        for name in SECTIONS:
            getattr(self, name).validate()
        return self

    def to_dict(self):
        return asdict(self)

    def with_overrides(self, **flat):
        """Apply flat CLI overrides; None values leave the config untouched."""
        updates = {}
        for key, value in flat.items():
            if value is None:
                continue
            if key not in OVERRIDES:
                raise ConfigError(f"unknown override '{key}'")
            section, attr = OVERRIDES[key]
            updates.setdefault(section, {})[attr] = value
        cfg = self
        for section, values in updates.items():
            cfg = replace(cfg, **{section: replace(getattr(cfg, section), **values)})
        return cfg.validate()

    @classmethod
    def from_dict(cls, data):
        if not isinstance(data, dict):
            raise ConfigError("config root must be a JSON object")
        sections = {}
        for name, values in data.items():
            if name not in SECTIONS:
                raise ConfigError(f"unknown config section '{name}'")
            if not isinstance(values, dict):
                raise ConfigError(f"config section '{name}' must be an object")
            section_cls = SECTIONS[name]
            known = {f.name: f for f in fields(section_cls)}
            for key, value in values.items():
                if key not in known:
                    raise ConfigError(f"unknown config key '{name}.{key}'")
                _check_type(name, key, value, known[key].type)
            sections[name] = section_cls(**values)
        return cls(**sections).validate()


def _check_type(section, key, value, annotation):
    if value is None:
        if 'Optional' in str(annotation):
            return
        raise ConfigError(f"config key '{section}.{key}' must not be null")
    text = str(annotation)
    if 'int' in text and 'float' not in text:
        ok = isinstance(value, int) and not isinstance(value, bool)
    elif 'float' in text:
        ok = isinstance(value, (int, float)) and not isinstance(value, bool)
    elif 'str' in text:
        ok = isinstance(value, str)
    else:
        ok = True
    if not ok:
        raise ConfigError(f"config key '{section}.{key}' has wrong type ({type(value).__name__})")


def load_config(path=None):
    """Load a JSON config file over the built-in defaults."""
    if path is None:
        return PipelineConfig().validate()
    try:
        with open(path, 'r', encoding='utf-8') as f:
            data = json.load(f)
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {path}")
    except json.JSONDecodeError as e:
        raise ConfigError(f"config file {path} is not valid JSON: {e}")
    cfg = PipelineConfig.from_dict(data)
    logger.debug(f"Loaded config from {path}")
    return cfg
