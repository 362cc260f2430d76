import json

import pandas as pd
import pytest

from conftest import small_config
from lfrefract import __version__
from lfrefract.cli import main
from lfrefract.evaluation import PROPOSED, XU_BASELINE
from lfrefract.fit import LAMBERTIAN, REFRACTED
from lfrefract.keypoints import load_keypoints
from lfrefract.lightfield import load_lightfield
from lfrefract.synth import scene_to_dict


@pytest.fixture(scope='module')
def workspace(tmp_path_factory, lambertian_scene):
    root = tmp_path_factory.mktemp('cli')
    (root / 'scene.json').write_text(json.dumps(scene_to_dict(lambertian_scene)))
    (root / 'config.json').write_text(json.dumps(small_config().to_dict()))
    lf_dir = root / 'lf'
    code = main(['--config', str(root / 'config.json'), 'render', '--scene', str(root / 'scene.json'),
                 '--out', str(lf_dir), '--seed', '3'])
    assert code == 0
    return root


def _run(workspace, *argv):
    return main(['--config', str(workspace / 'config.json'), *argv])


def test_version(capsys):
    with pytest.raises(SystemExit) as exc:
        main(['--version'])
    assert exc.value.code == 0
    assert __version__ in capsys.readouterr().out


def test_render_writes_a_loadable_light_field(workspace, lambertian_lf):
    lf = load_lightfield(str(workspace / 'lf'))
    expected, _ = lambertian_lf
    assert lf.views.shape == expected.views.shape
    assert (workspace / 'lf' / 'ground_truth.png').exists()
    assert (workspace / 'lf' / 'depth.pgm').exists()
    assert json.loads((workspace / 'lf' / 'scene.json').read_text())['name'] == 'small_lambertian'


def test_classify_is_byte_identical_across_runs(workspace):
    first, second = workspace / 'a.json', workspace / 'b.json'
    assert _run(workspace, 'classify', str(workspace / 'lf'), '--out', str(first),
                '--png', str(workspace / 'a.png'), '--slope-png', str(workspace / 'depth.png')) == 0
    assert _run(workspace, 'classify', str(workspace / 'lf'), '--out', str(second)) == 0
    assert first.read_bytes() == second.read_bytes()
    assert json.loads(first.read_text())['features']
    assert (workspace / 'a.png').exists()
    assert (workspace / 'depth.png').exists()


def test_detect_then_classify_given_keypoints(workspace):
    kp_file = workspace / 'kp.txt'
    assert _run(workspace, 'detect', str(workspace / 'lf'), '--out', str(kp_file)) == 0
    keypoints = load_keypoints(str(kp_file))
    assert keypoints
    out = workspace / 'given.json'
    assert _run(workspace, 'classify', str(workspace / 'lf'), '--keypoints', str(kp_file), '--out', str(out)) == 0
    assert len(json.loads(out.read_text())['features']) == len(keypoints)


def test_eval_writes_report(workspace):
    out = workspace / 'report.csv'
    assert _run(workspace, 'eval', str(workspace / 'lf'), '--mask', str(workspace / 'lf' / 'ground_truth.png'),
                '--out', str(out)) == 0
    frame = pd.read_csv(out)
    assert set(frame['method']) == {PROPOSED, XU_BASELINE}
    assert (frame['tp'] + frame['fn']).eq(0).all()
    assert (workspace / 'report.json').exists()
    assert (workspace / 'report.png').exists()


def test_sweep_with_grid(workspace):
    out = workspace / 'sweep.csv'
    assert _run(workspace, 'sweep', str(workspace / 'lf'), '--mask', str(workspace / 'lf' / 'ground_truth.png'),
                '--grid', 'planar=0.5,2;slope=0.05', '--out', str(out)) == 0
    frame = pd.read_csv(out)
    assert len(frame[frame['method'] == PROPOSED]) == 2


def test_export_filters_refracted(tmp_path):
    features = [{'u0': float(i), 'v0': 1.0, 'scale': 2.0, 'score': 0.1, 'verdict': LAMBERTIAN} for i in range(10)]
    features += [{'u0': 50.0 + i, 'v0': 1.0, 'scale': 2.0, 'score': 0.1, 'verdict': REFRACTED} for i in range(5)]
    results = tmp_path / 'labels.json'
    results.write_text(json.dumps({'config': None, 'features': features}))
    out = tmp_path / 'export.txt'
    assert main(['export', str(results), '--out', str(out)]) == 0
    assert len(out.read_text().splitlines()) == 10
    assert main(['export', str(results), '--mode', 'unfiltered', '--out', str(out)]) == 0
    assert len(out.read_text().splitlines()) == 15


def test_missing_manifest_exit_code(tmp_path):
    assert main(['classify', str(tmp_path), '--out', str(tmp_path / 'x.json')]) == 3


def test_bad_config_exit_code(tmp_path):
    cfg = tmp_path / 'bad.json'
    cfg.write_text(json.dumps({'thresholds': {'planar_thresh': -1.0}}))
    assert main(['--config', str(cfg), 'export', str(tmp_path / 'r.json'), '--out', str(tmp_path / 'o.txt')]) == 4
    cfg.write_text(json.dumps({'thresholds': {'no_such_key': 1}}))
    assert main(['--config', str(cfg), 'export', str(tmp_path / 'r.json'), '--out', str(tmp_path / 'o.txt')]) == 4


def test_empty_keypoint_file_exit_code(workspace, tmp_path):
    empty = tmp_path / 'empty.txt'
    empty.write_text("# nothing here\n")
    assert _run(workspace, 'classify', str(workspace / 'lf'), '--keypoints', str(empty),
                '--out', str(tmp_path / 'x.json')) == 5


def test_unknown_preset_rejected_by_parser():
    with pytest.raises(SystemExit) as exc:
        main(['render', '--preset', 'teapot', '--out', 'nowhere'])
    assert exc.value.code == 2


@pytest.mark.slow
def test_benchmark_on_one_preset(tmp_path):
    out = tmp_path / 'bench.csv'
    assert main(['--threads', '4', 'benchmark', '--presets', 'cylinder_small_baseline',
                 '--grid', 'planar=1,2;slope=0.05,0.1', '--out', str(out)]) == 0
    frame = pd.read_csv(out)
    assert set(frame['preset']) == {'cylinder_small_baseline'}
    assert sorted(frame['method']) == sorted([PROPOSED, XU_BASELINE])
    assert (frame['features'] > 0).all()
    proposed = frame[frame['method'] == PROPOSED].iloc[0]
    assert 0.0 < proposed['tpr'] <= 1.0 and proposed['fpr'] <= 0.1
    pairs = pd.read_csv(tmp_path / 'bench_pairs.csv')
    assert len(pairs) == 4
    assert (pairs['preset'] == 'cylinder_small_baseline').all()
