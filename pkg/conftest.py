import numpy as np
import pytest
from scipy import ndimage

from lfrefract.config import CurveConfig, DetectorConfig, PipelineConfig, RuntimeConfig
from lfrefract.lightfield import LightField
from lfrefract.synth import Background, Camera, SceneSpec, Sphere, render_lightfield

SMALL_PX = 96
SMALL_FOCAL = 64.0
SMALL_BASELINE = 0.5
# D / z = 0.5 -> every background point moves -0.5 px per view
SMALL_Z = 2.0 * SMALL_FOCAL * SMALL_BASELINE


def smooth_noise(shape, sigma=2.0, seed=0):
    rng = np.random.default_rng(seed)
    img = ndimage.gaussian_filter(rng.random(shape), sigma, mode='wrap')
    img = (img - img.min()) / (img.max() - img.min())
    return 0.1 + 0.8 * img


def shifted_lightfield(base, slope_u, slope_v=None, n=9):
    """Views of a textured plane shifted by slope px per view (wrap-around)."""
    slope_v = slope_u if slope_v is None else slope_v
    half = (n - 1) // 2
    views = np.empty((n, n, base.shape[1], base.shape[0]))
    for s_idx in range(n):
        for t_idx in range(n):
            img = ndimage.shift(base, ((t_idx - half) * slope_v, (s_idx - half) * slope_u), order=3, mode='wrap')
            views[s_idx, t_idx] = np.clip(img, 0.0, 1.0).T
    return LightField.from_views(views)


def small_camera(n_px=SMALL_PX):
    return Camera(n_s=9, n_t=9, baseline_s=SMALL_BASELINE, baseline_t=SMALL_BASELINE,
                  focal_px=SMALL_FOCAL, n_u=n_px, n_v=n_px)


def small_config():
    return PipelineConfig(
        detector=DetectorConfig(border_k=3.0),
        curves=CurveConfig(k_template=3.0),
        runtime=RuntimeConfig(threads=2),
    ).validate()


@pytest.fixture(scope='session')
def test_config():
    return small_config()


@pytest.fixture(scope='session')
def lambertian_scene():
    return SceneSpec(background=Background(z=SMALL_Z), camera=small_camera(), name='small_lambertian')


@pytest.fixture(scope='session')
def lambertian_lf(lambertian_scene):
    return render_lightfield(lambertian_scene, seed=3, threads=2)


@pytest.fixture(scope='session')
def sphere_scene():
    sphere = Sphere(center=(0.0, 0.0, 0.6 * SMALL_Z), radius=0.15 * SMALL_Z, ior=1.5)
    return SceneSpec(background=Background(z=SMALL_Z), camera=small_camera(), refractor=sphere,
                     name='small_sphere')


@pytest.fixture(scope='session')
def sphere_lf(sphere_scene):
    return render_lightfield(sphere_scene, seed=3, threads=2)


@pytest.fixture
def noise_image():
    return smooth_noise((96, 96))
