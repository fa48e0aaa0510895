# ============================================================================ #
# Copyright (c) 2024 The toonrig Authors.                                      #
# All rights reserved.                                                         #
#                                                                              #
# This source code and the accompanying materials are made available under     #
# the terms of the Apache License 2.0 which accompanies this distribution.     #
# ============================================================================ #
"""
Command-line driver: `toonrig <command> [options]`.

Exit codes: 0 on success, 1 when an input fails validation, 2 on numerical
failure (divergent training, failed gradient check).
"""
from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path
from typing import Dict, Optional

import numpy as np
from pydantic import (BaseModel, ConfigDict, FilePath, ValidationError,
                      field_validator)

from .adapter.pose_adapter import (DEFAULT_LAMBDA_REG, fit_pose_adapter,
                                   load_adapter, save_adapter)
from .metrics.kdr import (kdr_sequence, load_eye_pairs, read_keypoints,
                          read_neutral, write_keypoints, write_report)
from .rig.angles import AngleConvention
from .rig.core import (DEFAULT_CLAMP, extract_keypoints,
                       extract_keypoints_batch, synthesize_mesh,
                       synthesize_meshes)
from .rig.io import export_obj, format_validation_error, load_rig, save_rig
from .runtime.utils import (ArtifactError, NumericalError, ToonrigError,
                            TrainingDivergedError, emit_error, read_csv)
from .synth.data import (EYE_SPLIT, EYELID_PAIRS, SynthSpec, make_rig_pair,
                         oracle_labels, read_ground_truth, read_samples,
                         sample_expression_array, write_ground_truth,
                         write_labels, write_samples)
from .translator.ablation import STUDY_ROWS, run_ablation, write_ablation
from .translator.gradcheck import check_gradient
from .translator.model import init_model, load_model, save_model
from .translator.train import load_train_config, train, write_history
from .translator.translate import translate, write_translation

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_INVALID = 1
EXIT_NUMERICAL = 2

# argparse destinations naming files that must exist, and files produced.
INPUT_DESTS = {
    'human_rig', 'anime_rig', 'adapter', 'samples', 'config', 'model',
    'input', 'driving', 'predicted', 'neutral_driving', 'neutral_predicted',
    'pairs', 'rig', 'params', 'ground_truth'
}
OUTPUT_DESTS = {
    'out', 'out_human', 'out_anime', 'out_ground_truth', 'out_model',
    'out_history', 'labels', 'neutral_out'
}


class RunConfig(BaseModel):
    """The validated file arguments of one invocation."""
    model_config = ConfigDict(extra='forbid')

    command: str
    inputs: Dict[str, FilePath] = {}
    outputs: Dict[str, Path] = {}

    @field_validator('outputs')
    @classmethod
    def _parent_exists(cls, outputs):
        for name, path in outputs.items():
            parent = path.parent if str(path.parent) else Path('.')
            if not parent.is_dir():
                raise ValueError(f"--{name.replace('_', '-')}: directory "
                                 f"'{parent}' does not exist")
        return outputs

    @classmethod
    def from_namespace(cls, args: argparse.Namespace) -> 'RunConfig':
        values = vars(args)
        return cls(command=args.command,
                   inputs={
                       k: v for k, v in values.items()
                       if k in INPUT_DESTS and v is not None
                   },
                   outputs={
                       k: v for k, v in values.items()
                       if k in OUTPUT_DESTS and v is not None
                   })


def _clamped(params):
    return np.clip(params, -DEFAULT_CLAMP, DEFAULT_CLAMP)


def cmd_gen_rig(args):
    spec = SynthSpec(vertex_count=args.vertices,
                     rng_seed=args.seed,
                     delta_scale=args.delta_scale)
    human, anime = make_rig_pair(spec)
    save_rig(human, args.out_human)
    save_rig(anime, args.out_anime)
    truth = args.out_ground_truth or Path(args.out_anime).with_name(
        Path(args.out_anime).stem + '_ground_truth.csv')
    write_ground_truth(truth, spec)
    logger.info("wrote rig pair for seed %d", args.seed)


def cmd_gen_samples(args):
    params = sample_expression_array(args.n, args.seed, args.range)
    write_samples(args.out, params)
    if args.labels is not None:
        if args.ground_truth is None:
            raise ValueError("--labels needs --ground-truth")
        spec = SynthSpec(ground_truth=read_ground_truth(args.ground_truth))
        write_labels(args.labels, oracle_labels(spec, params))


def cmd_fit_adapter(args):
    adapter = fit_pose_adapter(load_rig(args.human_rig),
                               load_rig(args.anime_rig), args.lambda_reg,
                               args.fit_on)
    save_adapter(adapter, args.out)


def _train_config(args):
    return load_train_config(args.config,
                             epochs=args.epochs,
                             batch_size=args.batch_size,
                             learning_rate=args.learning_rate,
                             lambda_ver=args.lambda_ver,
                             rng_seed=args.seed,
                             dataset_size=args.gen_samples,
                             use_landmark=False if args.no_landmark else None,
                             use_closure=False if args.no_closure else None,
                             progress=True if args.progress else None)


def last_good_path(out_model) -> Path:
    """Where `train` leaves the last finite model of a diverged run."""
    out_model = Path(out_model)
    return out_model.with_name(out_model.stem + '.last_good.json')


def _save_last_good(error, args):
    if error.last_good is not None:
        path = last_good_path(args.out_model)
        save_model(error.last_good, path)
        logger.warning("training diverged; last good model written to %s",
                       path)
    if args.out_history is not None:
        write_history(args.out_history, error.history)


def cmd_train(args):
    config = _train_config(args)
    human, anime = load_rig(args.human_rig), load_rig(args.anime_rig)
    adapter = load_adapter(args.adapter)
    if args.samples is not None:
        data, _ = read_samples(args.samples)
        data = _clamped(data)
    else:
        data = sample_expression_array(config.dataset_size, config.rng_seed)
    model = init_model(config.layer_sizes, config.rng_seed)
    try:
        model, history = train(model, data, adapter, human, config, anime)
    except TrainingDivergedError as e:
        _save_last_good(e, args)
        raise
    save_model(model, args.out_model)
    if args.out_history is not None:
        write_history(args.out_history, history)


def cmd_translate(args):
    model, adapter = load_model(args.model), load_adapter(args.adapter)
    params, poses = read_samples(args.input)
    convention = AngleConvention.parse(args.angle_convention, args.angle_unit,
                                       'rad')
    result = translate(model, adapter, _clamped(params), poses, convention)
    write_translation(args.out, result)


def cmd_keypoints(args):
    rig = load_rig(args.rig)
    header, data = read_csv(args.params)
    dim = rig.expr_basis.dim
    if 'psi_hat_0' in header:
        start = header.index('psi_hat_0')
        expr = data[:, start:start + dim]
        jaw = None if rig.jaw_basis is None else np.zeros(
            (len(data), rig.jaw_basis.dim))
    else:
        if data.shape[1] < rig.coefficient_count:
            raise ArtifactError(f"{args.params}: {data.shape[1]} columns, "
                                f"the rig needs {rig.coefficient_count}")
        expr = data[:, :dim]
        jaw = None if rig.jaw_basis is None else data[:, dim:rig.
                                                      coefficient_count]
    meshes = synthesize_meshes(rig, expr, jaw)
    write_keypoints(args.out, extract_keypoints_batch(rig, meshes))
    if args.neutral_out is not None:
        write_keypoints(args.neutral_out,
                        extract_keypoints(rig, rig.template)[None])


def cmd_eval_kdr(args):
    if args.pairs is not None:
        eyes = load_eye_pairs(args.pairs)
    else:
        pairs = np.asarray(EYELID_PAIRS)
        eyes = (pairs[:EYE_SPLIT], pairs[EYE_SPLIT:])
    report = kdr_sequence(read_keypoints(args.driving),
                          read_keypoints(args.predicted),
                          read_neutral(args.neutral_driving),
                          read_neutral(args.neutral_predicted), eyes)
    if args.out is not None:
        write_report(args.out, report)
    print(f"{report.mean:.17g}")


def cmd_grad_check(args):
    human, anime = load_rig(args.human_rig), load_rig(args.anime_rig)
    adapter = load_adapter(args.adapter) if args.adapter is not None else \
        fit_pose_adapter(human, anime)
    model = load_model(args.model) if args.model is not None else init_model(
        seed=args.seed)
    loss = load_train_config(args.config,
                             lambda_ver=args.lambda_ver).make_loss(
                                 human, adapter, anime)
    batch = sample_expression_array(args.batch, args.seed)
    report = check_gradient(loss, model, batch, args.probes, args.seed)
    status = 'PASS' if report.passed else 'FAIL'
    print(f"{status} max_rel_error={report.max_relative_error:.6e} "
          f"probes={report.probed} skipped={report.skipped}")
    if not report.passed:
        raise NumericalError(f"gradient check failed: max relative error "
                             f"{report.max_relative_error:.3e} >= "
                             f"{report.tolerance:g}")


def cmd_export_obj(args):
    rig = load_rig(args.rig)
    _, data = read_csv(args.params)
    if not 0 <= args.row < len(data):
        raise ValueError(f"--row {args.row} outside 0..{len(data) - 1}")
    row = data[args.row]
    if len(row) < rig.coefficient_count:
        raise ArtifactError(f"{args.params}: {len(row)} columns, the rig "
                            f"needs {rig.coefficient_count}")
    dim = rig.expr_basis.dim
    jaw = None if rig.jaw_basis is None else row[dim:rig.coefficient_count]
    export_obj(synthesize_mesh(rig, row[:dim], jaw), args.out)


def cmd_ablate(args):
    config = _train_config(args)
    results = run_ablation(args.seeds,
                           config,
                           args.variants,
                           vertex_count=args.vertices,
                           eval_size=args.eval_size)
    write_ablation(args.out, results)


def _path(parser, flag, required=False, help=None):
    parser.add_argument(flag, type=Path, required=required, help=help)


def _add_train_flags(p):
    _path(p, '--config', help='JSON file of training settings')
    p.add_argument('--epochs', type=int)
    p.add_argument('--batch-size', type=int)
    p.add_argument('--learning-rate', type=float)
    p.add_argument('--lambda-ver', type=float)
    p.add_argument('--seed', type=int)
    p.add_argument('--gen-samples',
                   type=int,
                   help='train on N fresh synthetic samples')
    p.add_argument('--no-landmark', action='store_true')
    p.add_argument('--no-closure', action='store_true')
    p.add_argument('--progress', action='store_true')


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog='toonrig',
        description='Translate human face-model expressions into anime '
        'character poses.')
    parser.add_argument('--verbose',
                        '-v',
                        action='store_true',
                        help='log at DEBUG level')
    sub = parser.add_subparsers(dest='command', required=True)

    p = sub.add_parser('gen-rig', help='generate a synthetic rig pair')
    p.add_argument('--seed', type=int, default=0)
    p.add_argument('--vertices', type=int, default=468)
    p.add_argument('--delta-scale', type=float, default=0.05)
    _path(p, '--out-human', required=True)
    _path(p, '--out-anime', required=True)
    _path(p, '--out-ground-truth')
    p.set_defaults(func=cmd_gen_rig)

    p = sub.add_parser('gen-samples', help='sample expression parameters')
    p.add_argument('--n', type=int, required=True)
    p.add_argument('--seed', type=int, default=0)
    p.add_argument('--range', type=float, default=1.0)
    _path(p, '--out', required=True)
    _path(p, '--labels', help='also write oracle labels here')
    _path(p, '--ground-truth', help='ground-truth CSV from gen-rig')
    p.set_defaults(func=cmd_gen_samples)

    p = sub.add_parser('fit-adapter', help='fit the pose adapter')
    _path(p, '--human-rig', required=True)
    _path(p, '--anime-rig', required=True)
    p.add_argument('--lambda-reg', type=float, default=DEFAULT_LAMBDA_REG)
    p.add_argument('--fit-on',
                   choices=('keypoints', 'vertices'),
                   default='keypoints')
    _path(p, '--out', required=True)
    p.set_defaults(func=cmd_fit_adapter)

    p = sub.add_parser('train', help='train the translation network')
    _path(p, '--human-rig', required=True)
    _path(p, '--anime-rig', required=True)
    _path(p, '--adapter', required=True)
    _path(p, '--samples', help='parameter CSV to train on')
    _add_train_flags(p)
    _path(p, '--out-model', required=True)
    _path(p, '--out-history')
    p.set_defaults(func=cmd_train)

    p = sub.add_parser('translate', help='map parameter rows to anime poses')
    _path(p, '--model', required=True)
    _path(p, '--adapter', required=True)
    p.add_argument('--in', dest='input', type=Path, required=True)
    p.add_argument('--angle-convention', default='yaw,pitch,roll')
    p.add_argument('--angle-unit', choices=('rad', 'deg'), default='rad')
    _path(p, '--out', required=True)
    p.set_defaults(func=cmd_translate)

    p = sub.add_parser('keypoints', help='realise keypoint sequences')
    _path(p, '--rig', required=True)
    _path(p, '--params',
          required=True,
          help='parameter CSV or translate output (psi_hat columns)')
    _path(p, '--out', required=True)
    _path(p, '--neutral-out')
    p.set_defaults(func=cmd_keypoints)

    p = sub.add_parser('eval-kdr', help='keypoint distance ratio')
    _path(p, '--driving', required=True)
    _path(p, '--predicted', required=True)
    _path(p, '--neutral-driving', required=True)
    _path(p, '--neutral-predicted', required=True)
    _path(p, '--pairs', help='JSON with eyelid_pairs and eye_split')
    _path(p, '--out')
    p.set_defaults(func=cmd_eval_kdr)

    p = sub.add_parser('grad-check', help='finite-difference gradient check')
    _path(p, '--human-rig', required=True)
    _path(p, '--anime-rig', required=True)
    _path(p, '--adapter')
    _path(p, '--model')
    _path(p, '--config')
    p.add_argument('--lambda-ver', type=float)
    p.add_argument('--probes', type=int, default=100)
    p.add_argument('--batch', type=int, default=4)
    p.add_argument('--seed', type=int, default=0)
    p.set_defaults(func=cmd_grad_check)

    p = sub.add_parser('export-obj', help='write one posed mesh as OBJ')
    _path(p, '--rig', required=True)
    _path(p, '--params', required=True)
    p.add_argument('--row', type=int, default=0)
    _path(p, '--out', required=True)
    p.set_defaults(func=cmd_export_obj)

    p = sub.add_parser('ablate', help='loss-component study')
    p.add_argument('--seeds', type=int, nargs='+', default=[0, 1, 2])
    p.add_argument('--variants',
                   nargs='+',
                   choices=STUDY_ROWS,
                   default=list(STUDY_ROWS))
    p.add_argument('--vertices', type=int, default=468)
    p.add_argument('--eval-size', type=int, default=512)
    _add_train_flags(p)
    _path(p, '--out', required=True)
    p.set_defaults(func=cmd_ablate)
    return parser


def main(argv: Optional[list] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else
                        logging.WARNING,
                        format='%(levelname)s %(name)s: %(message)s',
                        stream=sys.stderr)
    try:
        RunConfig.from_namespace(args)
        args.func(args)
    except NumericalError as e:
        emit_error(str(e))
        return EXIT_NUMERICAL
    except ValidationError as e:
        emit_error(format_validation_error(args.command, e))
        return EXIT_INVALID
    except (ToonrigError, ValueError, OSError) as e:
        emit_error(str(e))
        return EXIT_INVALID
    return EXIT_OK
