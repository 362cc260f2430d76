import json
import math

import numpy as np
import pytest
from scipy import ndimage

from conftest import SMALL_Z
import lfrefract.pipeline as pipeline_module
from lfrefract.errors import InsufficientFeaturesError, LightFieldFormatError, LightFieldIOError
from lfrefract.evaluation import feature_depths, mask_lookup
from lfrefract.fit import INDETERMINATE, INVALID_CURVES, LAMBERTIAN, REFRACTED
from lfrefract.keypoints import Keypoint
from lfrefract.pipeline import (RefractionPipeline, export_keypoints, label_to_record, read_results,
                                write_results)


@pytest.fixture(scope='module')
def lambertian_labels(lambertian_lf, test_config):
    lf, _ = lambertian_lf
    pipeline = RefractionPipeline(test_config)
    return pipeline, pipeline.classify_lightfield(lf)


def test_lambertian_scene_is_mostly_lambertian(lambertian_labels):
    _, labels = lambertian_labels
    determinate = [l for l in labels if l.verdict != INDETERMINATE]
    assert len(determinate) >= 10
    refracted = sum(1 for l in determinate if l.verdict == REFRACTED)
    assert refracted <= 0.1 * len(determinate)


def test_stats_track_verdicts(lambertian_labels, capsys):
    pipeline, labels = lambertian_labels
    stats = pipeline.stats
    assert stats['keypoints'] == len(labels)
    assert stats['lambertian'] + stats['refracted'] + stats['indeterminate'] == len(labels)
    pipeline.print_summary()
    assert 'LIGHT FIELD REFRACTION SUMMARY' in capsys.readouterr().out


def test_classification_is_deterministic(lambertian_lf, lambertian_labels, test_config):
    lf, _ = lambertian_lf
    _, labels = lambertian_labels
    again = RefractionPipeline(test_config).classify_lightfield(lf)
    assert [label_to_record(l) for l in again] == [label_to_record(l) for l in labels]


def test_near_border_keypoint_is_indeterminate(lambertian_lf, test_config):
    lf, _ = lambertian_lf
    kps = [Keypoint(2.0, 48.0, 2.0, 0.1), Keypoint(48.0, 48.0, 2.0, 0.1)]
    labels = RefractionPipeline(test_config).classify_lightfield(lf, kps)
    assert labels[0].verdict == INDETERMINATE
    assert labels[0].reasons == (INVALID_CURVES,)
    assert [l.keypoint for l in labels] == kps


def test_extraction_failure_does_not_stop_the_run(lambertian_lf, test_config, monkeypatch):
    lf, _ = lambertian_lf
    real = pipeline_module.extract_feature_curves

    def flaky(lf, kp, cfg, image=None):
        if kp.u0 == 40.0:
            raise RuntimeError("boom")
        return real(lf, kp, cfg, image=image)

    monkeypatch.setattr(pipeline_module, 'extract_feature_curves', flaky)
    pipeline = RefractionPipeline(test_config)
    labels = pipeline.classify_lightfield(lf, [Keypoint(40.0, 48.0, 2.0, 0.1), Keypoint(56.0, 48.0, 2.0, 0.1)])
    assert labels[0].verdict == INDETERMINATE
    assert labels[1].f_h is not None
    assert pipeline.stats['errors'] == 1


def test_no_keypoints(lambertian_lf, test_config):
    lf, _ = lambertian_lf

    class Nothing:
        def detect(self, image):
            return []

    with pytest.raises(InsufficientFeaturesError):
        RefractionPipeline(test_config, detector=Nothing()).classify_lightfield(lf)
    with pytest.raises(InsufficientFeaturesError):
        RefractionPipeline(test_config).classify_lightfield(lf, [])


def test_keypoint_outside_light_field(lambertian_lf, test_config):
    lf, _ = lambertian_lf
    with pytest.raises(LightFieldFormatError):
        RefractionPipeline(test_config).classify_lightfield(lf, [Keypoint(500.0, 10.0, 2.0, 0.1)])


def test_results_file_round_trip(tmp_path, lambertian_labels, test_config):
    _, labels = lambertian_labels
    path = str(tmp_path / 'labels.json')
    write_results(labels, path, test_config)
    payload = read_results(path)
    assert payload['config'] == json.loads(json.dumps(test_config.to_dict()))
    assert len(payload['features']) == len(labels)
    for rec, label in zip(payload['features'], labels):
        assert rec['verdict'] == label.verdict
        assert rec['u0'] == label.keypoint.u0
        for key in ('e1', 'e2', 'c', 'w_su', 'w_tv', 'e_min_xu'):
            assert rec[key] is None or math.isfinite(rec[key])


def test_read_results_errors(tmp_path):
    with pytest.raises(LightFieldIOError):
        read_results(str(tmp_path / 'missing.json'))
    bad = tmp_path / 'bad.json'
    bad.write_text('{"features": [{"u0": 1}]}')
    with pytest.raises(LightFieldFormatError):
        read_results(str(bad))
    bad.write_text('not json')
    with pytest.raises(LightFieldFormatError):
        read_results(str(bad))


def _record(u, verdict):
    return {'u0': float(u), 'v0': 5.0, 'scale': 2.0, 'score': 0.1, 'verdict': verdict}


def test_export_modes():
    records = [_record(i, LAMBERTIAN) for i in range(10)]
    records += [_record(20 + i, REFRACTED) for i in range(5)]
    records.append(_record(40, INDETERMINATE))
    filtered = export_keypoints(records, 'filtered')
    assert len(filtered) == 10
    assert all(kp.u0 < 10 for kp in filtered)
    assert len(export_keypoints(records, 'unfiltered')) == 16
    with pytest.raises(ValueError):
        export_keypoints(records, 'everything')


def test_sphere_hides_the_backdrop_depth(sphere_lf, test_config):
    lf, gt = sphere_lf
    labels = RefractionPipeline(test_config).classify_lightfield(lf)
    depths = feature_depths(labels, lf.meta.plane_sep_D)
    core = ndimage.binary_erosion(gt.refr_mask, iterations=6)
    inside = [d for l, d in depths if mask_lookup(core, l.keypoint)]
    outside = [d for l, d in depths if not mask_lookup(gt, l.keypoint)
               and not gt.refr_mask[max(0, int(l.keypoint.v0) - 12):int(l.keypoint.v0) + 13,
                                    max(0, int(l.keypoint.u0) - 12):int(l.keypoint.u0) + 13].any()]
    assert len(outside) >= 3
    assert np.median(outside) == pytest.approx(SMALL_Z, rel=0.05)
    # the ball images the backdrop close to the cameras
    assert all(not d == pytest.approx(SMALL_Z, rel=0.1) for d in inside)
