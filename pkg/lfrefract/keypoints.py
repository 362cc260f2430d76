"""Central-view keypoints: DoG blob detector and the plain-text keypoint format."""
import logging
import math
from dataclasses import dataclass, field
from typing import List, Protocol

import numpy as np
from scipy import ndimage

from .config import DetectorConfig
from .errors import BoundsError, ImageTooSmallError, LightFieldFormatError, LightFieldIOError

logger = logging.getLogger(__name__)

MIN_IMAGE_SIZE = 32
ASSUMED_INPUT_BLUR = 0.5


@dataclass(frozen=True)
class Keypoint:
    u0: float
    v0: float
    scale: float  # blob radius in px
    score: float
    octave: int = field(default=0, compare=False)

    def validate(self, n_u=None, n_v=None):
        if not (math.isfinite(self.u0) and math.isfinite(self.v0) and math.isfinite(self.score)):
            raise LightFieldFormatError(f"non-finite keypoint {self}")
        if self.scale < 1.0:
            raise LightFieldFormatError(f"keypoint scale must be >= 1.0, got {self.scale}")
        if self.u0 < 0 or self.v0 < 0:
            raise BoundsError(f"keypoint ({self.u0}, {self.v0}) has negative coordinates")
        if n_u is not None and self.u0 >= n_u:
            raise BoundsError(f"keypoint u0={self.u0} outside image width {n_u}")
        if n_v is not None and self.v0 >= n_v:
            raise BoundsError(f"keypoint v0={self.v0} outside image height {n_v}")
        return self


class KeypointDetector(Protocol):
    def detect(self, image) -> List[Keypoint]:
        ...


def round_to_odd(x):
    r = int(round(x))
    return r if r % 2 == 1 else r + 1


def template_side(scale, k):
    """Side of the square correlation template for a keypoint of this scale."""
    return round_to_odd(2.0 * k * scale + 1.0)


def fits_template(u0, v0, scale, k, n_u, n_v):
    half = template_side(scale, k) // 2
    uc, vc = int(round(u0)), int(round(v0))
    return uc - half >= 0 and vc - half >= 0 and uc + half < n_u and vc + half < n_v


class DogDetector:
    """Difference-of-Gaussians blob detector (SIFT-style localisation, no descriptors)."""

    def __init__(self, cfg=None):
        self.cfg = cfg or DetectorConfig()

    def detect(self, image):
        img = np.asarray(image, dtype=np.float64)
        if img.ndim != 2 or min(img.shape) < MIN_IMAGE_SIZE:
            raise ImageTooSmallError(f"image must be at least {MIN_IMAGE_SIZE}x{MIN_IMAGE_SIZE}, got {img.shape}")
        cfg = self.cfg
        n_v, n_u = img.shape
        k = 2.0 ** (1.0 / cfg.intervals)
        n_levels = cfg.intervals + 3

        first_blur = math.sqrt(max(cfg.sigma0 ** 2 - ASSUMED_INPUT_BLUR ** 2, 1e-4))
        octave_img = ndimage.gaussian_filter(img, first_blur, mode='nearest')
        found = []
        for octave in range(cfg.octaves):
            if min(octave_img.shape) < 8:
                break
            gauss = [octave_img]
            for i in range(1, n_levels):
                sig_prev = cfg.sigma0 * k ** (i - 1)
                inc = math.sqrt((sig_prev * k) ** 2 - sig_prev ** 2)
                gauss.append(ndimage.gaussian_filter(gauss[-1], inc, mode='nearest'))
            dog = np.stack([gauss[i + 1] - gauss[i] for i in range(n_levels - 1)])
            found.extend(self._octave_keypoints(dog, octave, k))
            octave_img = gauss[cfg.intervals][::2, ::2]

        keypoints = []
        for kp in found:
            if not (0 <= kp.u0 < n_u and 0 <= kp.v0 < n_v):
                continue
            if cfg.border_k > 0 and not fits_template(kp.u0, kp.v0, kp.scale, cfg.border_k, n_u, n_v):
                continue
            keypoints.append(kp)

        keypoints = self._deduplicate(keypoints)[:cfg.max_keypoints]
        logger.debug(f"DoG detector kept {len(keypoints)} of {len(found)} extrema")
        return keypoints

    def _octave_keypoints(self, dog, octave, k):
        cfg = self.cfg
        prelim = 0.5 * cfg.contrast_thresh
        maxf = ndimage.maximum_filter(dog, size=3, mode='nearest')
        minf = ndimage.minimum_filter(dog, size=3, mode='nearest')
        extrema = ((dog == maxf) | (dog == minf)) & (np.abs(dog) >= prelim)
        # only interior scales and pixels have a full 3x3x3 neighbourhood
        extrema[0] = extrema[-1] = False
        extrema[:, 0] = extrema[:, -1] = False
        extrema[:, :, 0] = extrema[:, :, -1] = False

        edge_limit = (cfg.edge_thresh + 1.0) ** 2 / cfg.edge_thresh
        factor = 2.0 ** octave
        out = []
        for i, y, x in zip(*np.nonzero(extrema)):
            cube = dog[i - 1:i + 2, y - 1:y + 2, x - 1:x + 2]
            grad = 0.5 * np.array([cube[2, 1, 1] - cube[0, 1, 1],
                                   cube[1, 2, 1] - cube[1, 0, 1],
                                   cube[1, 1, 2] - cube[1, 1, 0]])
            c = cube[1, 1, 1]
            dss = cube[2, 1, 1] - 2 * c + cube[0, 1, 1]
            dyy = cube[1, 2, 1] - 2 * c + cube[1, 0, 1]
            dxx = cube[1, 1, 2] - 2 * c + cube[1, 1, 0]
            dsy = 0.25 * (cube[2, 2, 1] - cube[2, 0, 1] - cube[0, 2, 1] + cube[0, 0, 1])
            dsx = 0.25 * (cube[2, 1, 2] - cube[2, 1, 0] - cube[0, 1, 2] + cube[0, 1, 0])
            dxy = 0.25 * (cube[1, 2, 2] - cube[1, 2, 0] - cube[1, 0, 2] + cube[1, 0, 0])
            hess = np.array([[dss, dsy, dsx], [dsy, dyy, dxy], [dsx, dxy, dxx]])
            try:
                offset = -np.linalg.solve(hess, grad)
            except np.linalg.LinAlgError:
                continue
            if np.any(np.abs(offset) > 1.0):
                continue
            offset = np.clip(offset, -0.5, 0.5)
            value = c + 0.5 * grad @ offset
            if abs(value) < cfg.contrast_thresh:
                continue

            det = dxx * dyy - dxy ** 2
            trace = dxx + dyy
            if det <= 0 or trace ** 2 / det >= edge_limit:
                continue

            sigma = cfg.sigma0 * k ** (i + offset[0] + 0.5) * factor
            out.append(Keypoint(
                u0=float((x + offset[2]) * factor),
                v0=float((y + offset[1]) * factor),
                scale=float(math.sqrt(2.0) * sigma),
                score=float(abs(value)),
                octave=octave,
            ))
        return out

    def _deduplicate(self, keypoints):
        ordered = sorted(keypoints, key=lambda kp: (-kp.score, kp.v0, kp.u0, kp.scale))
        kept = []
        for kp in ordered:
            duplicate = any(
                other.octave == kp.octave
                and abs(other.u0 - kp.u0) <= self.cfg.dedup_px
                and abs(other.v0 - kp.v0) <= self.cfg.dedup_px
                and math.hypot(other.u0 - kp.u0, other.v0 - kp.v0) <= self.cfg.dedup_px
                for other in kept
            )
            if not duplicate:
                kept.append(kp)
        return kept


def detect_keypoints(img, cfg=None, detector=None):
    """Detect keypoints in a 2D image; sorted by descending score."""
    detector = detector or DogDetector(cfg)
    return list(detector.detect(img))


def save_keypoints(keypoints, path):
    """One keypoint per line: ``u v scale score`` (repr floats, exact round-trip)."""
    try:
        with open(path, 'w', encoding='utf-8') as f:
            for kp in keypoints:
                f.write(f"{kp.u0!r} {kp.v0!r} {kp.scale!r} {kp.score!r}\n")
    except OSError as e:
        raise LightFieldIOError(f"cannot write keypoints to {path}: {e}")


def load_keypoints(path, image_size=None):
    """Parse a keypoint file; image_size=(n_u, n_v) enables range checks."""
    n_u, n_v = image_size if image_size is not None else (None, None)
    try:
        with open(path, 'r', encoding='utf-8') as f:
            lines = f.readlines()
    except OSError as e:
        raise LightFieldIOError(f"cannot read keypoints from {path}: {e}")

    keypoints = []
    for lineno, line in enumerate(lines, start=1):
        text = line.strip()
        if not text or text.startswith('#'):
            continue
        parts = text.split()
        if len(parts) != 4:
            raise LightFieldFormatError(f"{path}:{lineno}: expected 'u v scale score', got '{text}'")
        try:
            u, v, scale, score = (float(p) for p in parts)
        except ValueError:
            raise LightFieldFormatError(f"{path}:{lineno}: malformed number in '{text}'")
        try:
            keypoints.append(Keypoint(u, v, scale, score).validate(n_u, n_v))
        except LightFieldFormatError as e:
            raise type(e)(f"{path}:{lineno}: {e}")
    return keypoints
