"""lfrefract command line: render, detect, classify, eval, sweep, export, benchmark."""
import argparse
import json
import logging
import os
import sys

from . import __version__
from .benchmark import REFRACTOR_PRESETS, PresetBenchmark
from .config import load_config
from .curves import curve_dump, write_curve_dump
from .errors import LightFieldError, LightFieldFormatError, LightFieldIOError
from .evaluation import (DEFAULT_GRID, PROPOSED, XU_BASELINE, annotate_features, emit_report, evaluate,
                         exclude_features, load_mask, parse_grid, save_slope_map, sweep_labels)
from .keypoints import load_keypoints, save_keypoints
from .lightfield import central_view, load_lightfield, save_lightfield
from .pipeline import EXPORT_MODES, RefractionPipeline, export_keypoints, read_results, write_results
from .synth import (PRESETS, central_exclusion_mask, preset_scene, render_lightfield, save_ground_truth,
                    scene_from_dict, scene_to_dict, with_specular)

logger = logging.getLogger(__name__)


def setup_logging(level='INFO', log_file=None):
    handlers = [logging.StreamHandler(sys.stderr)]
    if log_file:
        os.makedirs(os.path.dirname(os.path.abspath(log_file)), exist_ok=True)
        handlers.append(logging.FileHandler(log_file, encoding='utf-8'))
    logging.basicConfig(
        level=getattr(logging, level.upper(), logging.INFO),
        format='%(asctime)s - %(levelname)s - %(message)s',
        handlers=handlers,
        force=True,
    )


def _overrides(args):
    keys = ('planar_thresh', 'slope_thresh', 'xu_thresh', 'min_samples', 'k_template', 'corr_thresh',
            'min_span_frac', 'max_step_px', 'view_span', 'search_radius', 'max_slope', 'contrast_thresh',
            'edge_thresh', 'max_keypoints', 'threads', 'seed', 'log_level', 'log_file')
    return {k: getattr(args, k, None) for k in keys}


def _load_scene(args):
    if args.preset:
        spec = preset_scene(args.preset)
    else:
        try:
            with open(args.scene, 'r', encoding='utf-8') as f:
                data = json.load(f)
        except OSError as e:
            raise LightFieldIOError(f"cannot read scene {args.scene}: {e}")
        except json.JSONDecodeError as e:
            raise LightFieldFormatError(f"scene {args.scene} is not valid JSON: {e}")
        spec = scene_from_dict(data)
    if args.specular is not None:
        spec = with_specular(spec, args.specular)
    return spec


def cmd_render(args, cfg):
    spec = _load_scene(args)
    lf, gt = render_lightfield(spec, seed=cfg.runtime.seed, threads=cfg.runtime.threads)
    save_lightfield(lf, args.out)
    save_ground_truth(gt, args.out)
    try:
        with open(os.path.join(args.out, 'scene.json'), 'w', encoding='utf-8') as f:
            json.dump(scene_to_dict(spec), f, indent=2, sort_keys=True)
    except OSError as e:
        raise LightFieldIOError(f"cannot write scene description: {e}")
    logger.info(f"SUCCESS: Rendered '{spec.name}' to {args.out}")
    return 0


def cmd_detect(args, cfg):
    lf = load_lightfield(args.lf_dir)
    keypoints = RefractionPipeline(cfg).detect(lf)
    save_keypoints(keypoints, args.out)
    return 0


def _classify(args, cfg):
    lf = load_lightfield(args.lf_dir)
    keypoints = None
    if getattr(args, 'keypoints', None):
        keypoints = load_keypoints(args.keypoints, image_size=(lf.n_u, lf.n_v))
    pipeline = RefractionPipeline(cfg)
    labels = pipeline.classify_lightfield(lf, keypoints)
    return lf, pipeline, labels


def cmd_classify(args, cfg):
    lf, pipeline, labels = _classify(args, cfg)
    write_results(labels, args.out, cfg)
    image = central_view(lf)
    if args.png:
        annotate_features(image, labels, args.png)
    if args.slope_png:
        save_slope_map(labels, image, args.slope_png, lf.meta.plane_sep_D)
    if args.curves_json:
        write_curve_dump([curve_dump(l.keypoint, l.f_h, l.f_v) for l in labels if l.f_h is not None],
                         args.curves_json)
    pipeline.print_summary()
    return 0


def _labels_for_eval(args, cfg):
    lf, pipeline, labels = _classify(args, cfg)
    mask = load_mask(args.mask, shape=(lf.n_v, lf.n_u))
    if args.exclusion_frac:
        labels = exclude_features(labels, central_exclusion_mask(mask, args.exclusion_frac))
    return lf, pipeline, labels, mask


def cmd_eval(args, cfg):
    lf, pipeline, labels, mask = _labels_for_eval(args, cfg)
    snapshot = cfg.to_dict()
    results = [evaluate(labels, mask, method, cfg.thresholds, snapshot) for method in (PROPOSED, XU_BASELINE)]
    emit_report(results, args.out, labels=labels, image=central_view(lf), config=snapshot)
    pipeline.print_summary()
    return 0


def cmd_sweep(args, cfg):
    lf, pipeline, labels, mask = _labels_for_eval(args, cfg)
    grid = parse_grid(args.grid) if args.grid else DEFAULT_GRID
    results = sweep_labels(labels, mask, grid, cfg.thresholds, cfg.to_dict())
    emit_report(results, args.out, config=cfg.to_dict())
    return 0


def cmd_export(args, cfg):
    payload = read_results(args.results)
    keypoints = export_keypoints(payload['features'], args.mode)
    save_keypoints(keypoints, args.out)
    logger.info(f"SUCCESS: Exported {len(keypoints)} of {len(payload['features'])} features ({args.mode})")
    return 0


def cmd_benchmark(args, cfg):
    presets = [p.strip() for p in args.presets.split(',')] if args.presets else None
    for name in presets or []:
        preset_scene(name)
    grid = parse_grid(args.grid) if args.grid else None
    bench = PresetBenchmark(cfg, presets=presets, grid=grid, max_fpr=args.max_fpr,
                            exclusion_frac=args.exclusion_frac, seed=cfg.runtime.seed)
    bench.run()
    pairs_path = f"{os.path.splitext(args.out)[0]}_pairs.csv"
    try:
        bench.to_frame().to_csv(args.out, index=False)
        bench.pairs_frame().to_csv(pairs_path, index=False)
    except OSError as e:
        raise LightFieldIOError(f"cannot write benchmark table {args.out}: {e}")
    logger.info(f"SUCCESS: Benchmark written to {args.out} and {pairs_path}")
    bench.print_summary()
    return 0


def _threshold_flags():
    parent = argparse.ArgumentParser(add_help=False)
    g = parent.add_argument_group('classifier overrides')
    g.add_argument('--planar-thresh', type=float)
    g.add_argument('--slope-thresh', type=float)
    g.add_argument('--xu-thresh', type=float)
    g.add_argument('--min-samples', type=int)
    g.add_argument('--k-template', type=float)
    g.add_argument('--corr-thresh', type=float)
    g.add_argument('--min-span-frac', type=float)
    g.add_argument('--max-step-px', type=float)
    g.add_argument('--view-span', type=int)
    g.add_argument('--search-radius', type=int)
    g.add_argument('--max-slope', type=float)
    g.add_argument('--contrast-thresh', type=float)
    g.add_argument('--edge-thresh', type=float)
    g.add_argument('--max-keypoints', type=int)
    return parent


def build_parser():
    parser = argparse.ArgumentParser(prog='lfrefract',
                                     description='Distinguish refracted from Lambertian features in light fields')
    parser.add_argument('--version', action='version', version=f'%(prog)s {__version__}')
    parser.add_argument('--config', help='JSON config file (defaults built in)')
    parser.add_argument('--threads', type=int, help='worker threads (default: available parallelism)')
    parser.add_argument('--log-level', help='DEBUG, INFO, WARNING or ERROR')
    parser.add_argument('--log-file', help='also log to this file')
    sub = parser.add_subparsers(dest='command', required=True)
    thresholds = _threshold_flags()

    p = sub.add_parser('render', help='ray-trace a synthetic light field')
    src = p.add_mutually_exclusive_group(required=True)
    src.add_argument('--preset', choices=sorted(PRESETS))
    src.add_argument('--scene', help='scene JSON')
    p.add_argument('--out', required=True, help='output light field directory')
    p.add_argument('--seed', type=int)
    p.add_argument('--specular', type=float, help='additive specular highlight strength')
    p.set_defaults(func=cmd_render)

    p = sub.add_parser('detect', parents=[thresholds], help='detect central-view keypoints')
    p.add_argument('lf_dir')
    p.add_argument('--out', required=True, help='keypoint text file')
    p.set_defaults(func=cmd_detect)

    p = sub.add_parser('classify', parents=[thresholds], help='label every feature')
    p.add_argument('lf_dir')
    p.add_argument('--keypoints', help='keypoint text file (default: detect)')
    p.add_argument('--out', required=True, help='classification JSON')
    p.add_argument('--png', help='annotated central view')
    p.add_argument('--slope-png', help="map of the depth each determinate feature's slope implies")
    p.add_argument('--curves-json', help='per-feature curve dump')
    p.set_defaults(func=cmd_classify)

    for name, func, help_text in (('eval', cmd_eval, 'TPR/FPR at the configured thresholds'),
                                  ('sweep', cmd_sweep, 'TPR/FPR over a threshold grid')):
        p = sub.add_parser(name, parents=[thresholds], help=help_text)
        p.add_argument('lf_dir')
        p.add_argument('--mask', required=True, help='ground-truth refraction mask PNG')
        p.add_argument('--keypoints', help='keypoint text file (default: detect)')
        p.add_argument('--out', required=True, help='report CSV (a .json twin is written too)')
        p.add_argument('--exclusion-frac', type=float, default=0.0,
                       help='ignore features within this fraction of the mask radius of its centre')
        if name == 'sweep':
            p.add_argument('--grid', help="e.g. 'planar=0.5,1,2;slope=0.01,0.05'")
        p.set_defaults(func=func)

    p = sub.add_parser('export', help='keypoints for external reconstruction')
    p.add_argument('results', help='classification JSON')
    p.add_argument('--mode', choices=EXPORT_MODES, default='filtered')
    p.add_argument('--out', required=True)
    p.set_defaults(func=cmd_export)

    p = sub.add_parser('benchmark', parents=[thresholds], help='compare both methods on the refractor presets')
    p.add_argument('--presets', help=f"comma list (default: {','.join(REFRACTOR_PRESETS)})")
    p.add_argument('--grid')
    p.add_argument('--max-fpr', type=float, default=0.1)
    p.add_argument('--exclusion-frac', type=float, default=0.1)
    p.add_argument('--seed', type=int)
    p.add_argument('--out', required=True, help='summary CSV')
    p.set_defaults(func=cmd_benchmark)
    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        cfg = load_config(args.config).with_overrides(**_overrides(args))
        setup_logging(cfg.logging.level, cfg.logging.file)
        return args.func(args, cfg)
    except LightFieldError as e:
        print(f"error: {e}", file=sys.stderr)
        return e.exit_code
    except OSError as e:
        print(f"error: {e}", file=sys.stderr)
        return LightFieldIOError.exit_code


if __name__ == '__main__':
    sys.exit(main())
