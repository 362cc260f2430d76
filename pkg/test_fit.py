import numpy as np
import pytest

from lfrefract.config import Thresholds
from lfrefract.curves import HORIZONTAL, VERTICAL, CurveSample, FeatureCurve
from lfrefract.errors import InsufficientSamplesError
from lfrefract.fit import (INDETERMINATE, INVALID_CURVES, LAMBERTIAN, LINE_FIT_PATH, NORMALS_PATH, PLANAR_H,
                           REFRACTED, SLOPE, PlaneFit, assemble_design_matrix, classify, compute_slopes,
                           fit_hyperplane_xu, fit_plane, relabel, slope_depth)
from lfrefract.keypoints import Keypoint

KP = Keypoint(40.0, 30.0, 2.0, 0.1)


def curve(orientation, slope, n=9, origin=None, noise=None, bend=0.0, valid=True):
    offsets = np.arange(n) - (n - 1) // 2
    origin = (KP.u0 if orientation == HORIZONTAL else KP.v0) if origin is None else origin
    pos = origin + slope * offsets + bend * offsets ** 2
    if noise is not None:
        pos = pos + noise
    samples = tuple(CurveSample(int(o), float(p), 1.0) for o, p in zip(offsets, pos))
    return FeatureCurve(orientation, samples, valid, n)


def lambertian_pair(pz=2.0, d=1.0, n=9):
    w = -d / pz
    return curve(HORIZONTAL, w, n), curve(VERTICAL, w, n)


def test_design_matrix_layout():
    f_h, f_v = lambertian_pair()
    amat = assemble_design_matrix(f_h, f_v, KP)
    assert amat.shape == (18, 4)
    for s, row in zip(range(-4, 5), amat[:9]):
        np.testing.assert_allclose(row, [s, 0.0, -s / 2.0, 0.0])
    for t, row in zip(range(-4, 5), amat[9:]):
        np.testing.assert_allclose(row, [0.0, t, 0.0, -t / 2.0])


def test_design_matrix_needs_valid_curves():
    f_h, f_v = lambertian_pair()
    bad = FeatureCurve(HORIZONTAL, f_h.samples, False, 9, ('span',))
    with pytest.raises(InsufficientSamplesError):
        assemble_design_matrix(bad, f_v, KP)
    with pytest.raises(InsufficientSamplesError):
        assemble_design_matrix(curve(HORIZONTAL, -0.5, n=3), curve(VERTICAL, -0.5, n=3), KP)


def test_exact_lambertian_plane():
    f_h, f_v = lambertian_pair()
    fit = fit_plane(assemble_design_matrix(f_h, f_v, KP))
    assert fit.e1 <= 1e-9 and fit.e2 <= 1e-9
    assert abs(np.linalg.norm(fit.n_h) - 1) < 1e-9 and abs(np.linalg.norm(fit.n_v) - 1) < 1e-9
    assert abs(fit.n_h @ fit.n_v) < 1e-9
    assert not fit.degenerate
    assert fit_hyperplane_xu(assemble_design_matrix(f_h, f_v, KP)).e_min <= 1e-9


def test_noisy_rows_stay_near_true_normals():
    rng = np.random.default_rng(11)
    n = 17
    f_h = curve(HORIZONTAL, -0.5, n, noise=rng.normal(0, 0.5, n))
    f_v = curve(VERTICAL, -0.5, n, noise=rng.normal(0, 0.5, n))
    fit = fit_plane(assemble_design_matrix(f_h, f_v, KP))
    assert fit.e1 > 0 and fit.e2 > 0
    truth = np.array([[-0.5, 0, -1, 0], [0, -0.5, 0, -1]]).T
    truth, _ = np.linalg.qr(truth)
    est = np.column_stack([fit.n_h, fit.n_v])
    cosines = np.linalg.svd(truth.T @ est, compute_uv=False)
    assert np.degrees(np.arccos(np.clip(cosines.min(), -1, 1))) < 5.0


def test_residual_equals_singular_value():
    rng = np.random.default_rng(5)
    amat = rng.normal(size=(12, 4))
    fit = fit_plane(amat)
    assert np.linalg.norm(amat @ fit.n_h) == pytest.approx(fit.e1, rel=1e-9)
    assert np.linalg.norm(amat @ fit.n_v) == pytest.approx(fit.e2, rel=1e-9)
    assert 0 <= fit.e1 <= fit.e2


def test_plane_fit_beats_random_subspaces():
    rng = np.random.default_rng(0)
    for _ in range(1000):
        amat = rng.normal(size=(rng.integers(4, 21), 4)) * rng.uniform(0.1, 10.0)
        fit = fit_plane(amat)
        xu = fit_hyperplane_xu(amat)
        assert xu.e_min <= fit.e1 * (1 + 1e-9) + 1e-12
        assert fit.e1 <= fit.e2 * (1 + 1e-9) + 1e-12
        best = fit.e1 ** 2 + fit.e2 ** 2
        cand, _ = np.linalg.qr(rng.normal(size=(1000, 4, 2)))
        costs = np.sum(np.einsum('ij,njk->nik', amat, cand) ** 2, axis=(1, 2))
        assert np.all(best <= costs * (1 + 1e-9) + 1e-12)


def test_hyperplane_smallest_singular_value_oracle():
    rng = np.random.default_rng(9)
    amat = rng.normal(size=(4, 4))
    eig = np.linalg.eigvalsh(amat.T @ amat)
    assert fit_hyperplane_xu(amat).e_min == pytest.approx(np.sqrt(eig.min()), rel=1e-6)


def test_too_few_rows():
    with pytest.raises(InsufficientSamplesError):
        fit_plane(np.ones((3, 4)))


def test_degenerate_offsets_flagged():
    amat = np.array([[1, 0, 0.5, 0], [1, 0, 0.4, 0], [0, 1, 0, 0.5], [0, 2, 0, 1.0]], dtype=float)
    assert fit_plane(amat).degenerate


def test_lambertian_slopes():
    f_h, f_v = lambertian_pair(pz=2.0, d=1.0)
    fit = fit_plane(assemble_design_matrix(f_h, f_v, KP))
    report = compute_slopes(fit, f_h, f_v)
    assert report.w_su == pytest.approx(-0.5, abs=1e-9)
    assert report.w_tv == pytest.approx(-0.5, abs=1e-9)
    assert report.c == pytest.approx(0.0, abs=1e-15)
    assert report.su_path == report.tv_path == NORMALS_PATH
    assert slope_depth(report.w_su, 1.0) == pytest.approx(2.0)


def test_slope_fallback_to_line_fit():
    f_h, f_v = curve(HORIZONTAL, 0.3), curve(VERTICAL, -0.7)
    fit = PlaneFit(n_h=np.array([1.0, 0, 0, 0]), n_v=np.array([0, 1.0, 0, 0]), e1=0.0, e2=0.0, n_rows=18)
    report = compute_slopes(fit, f_h, f_v)
    assert report.su_path == report.tv_path == LINE_FIT_PATH
    assert report.w_su == pytest.approx(0.3)
    assert report.w_tv == pytest.approx(-0.7)
    assert np.isfinite(report.c)


def test_classify_lambertian():
    label = classify(*lambertian_pair(), KP)
    assert label.verdict == LAMBERTIAN
    assert label.reasons == ()
    assert label.baseline_fit is not None


def test_cylinder_like_slopes_are_refracted_but_hyperplane_misses():
    # magnified motion along s only, both curves perfectly straight
    f_h, f_v = curve(HORIZONTAL, -1.0), curve(VERTICAL, -0.5)
    label = classify(f_h, f_v, KP, Thresholds())
    assert label.verdict == REFRACTED
    assert label.reasons == (SLOPE,)
    assert label.slopes.c == pytest.approx(0.25)
    assert not label.xu_refracted(Thresholds().xu_thresh)


def test_bent_horizontal_curve_breaks_the_plane():
    f_h, f_v = curve(HORIZONTAL, -0.5, bend=0.3), curve(VERTICAL, -0.5)
    label = classify(f_h, f_v, KP)
    assert label.verdict == REFRACTED
    assert PLANAR_H in label.reasons


def test_invalid_curve_is_indeterminate():
    f_h, f_v = lambertian_pair()
    bad = FeatureCurve(VERTICAL, f_v.samples, False, 9, ('boundary',))
    label = classify(f_h, bad, KP)
    assert label.verdict == INDETERMINATE
    assert label.reasons == (INVALID_CURVES,)


def test_too_few_samples_is_indeterminate():
    label = classify(curve(HORIZONTAL, -0.5, n=3), curve(VERTICAL, -0.5, n=3), KP, Thresholds(min_samples=8))
    assert label.verdict == INDETERMINATE
    assert label.fit is not None


def test_relabel_matches_classify():
    rng = np.random.default_rng(2)
    f_h = curve(HORIZONTAL, -0.8, noise=rng.normal(0, 0.3, 9))
    f_v = curve(VERTICAL, -0.5, noise=rng.normal(0, 0.3, 9))
    label = classify(f_h, f_v, KP)
    for thresholds in (Thresholds(0.0, 0.0), Thresholds(100.0, 100.0), Thresholds(0.5, 0.02)):
        again = classify(f_h, f_v, KP, thresholds)
        moved = relabel(label, thresholds)
        assert moved.verdict == again.verdict and moved.reasons == again.reasons


def test_scaled_thresholds_keep_the_verdict():
    f_h, f_v = curve(HORIZONTAL, -1.0), curve(VERTICAL, -0.5)
    gamma = 2.0
    scaled = classify(curve(HORIZONTAL, -2.0), curve(VERTICAL, -1.0), KP, Thresholds().scaled(gamma))
    assert scaled.verdict == classify(f_h, f_v, KP).verdict
