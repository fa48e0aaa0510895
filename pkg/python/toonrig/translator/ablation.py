# ============================================================================ #
# Copyright (c) 2024 The toonrig Authors.                                      #
# All rights reserved.                                                         #
#                                                                              #
# This source code and the accompanying materials are made available under     #
# the terms of the Apache License 2.0 which accompanies this distribution.     #
# ============================================================================ #
"""
Loss-component study on synthetic rig pairs, with the optimisation mapping
as an untrained baseline row.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Dict, List, Sequence

import numpy as np

from ..adapter.pose_adapter import (DEFAULT_LAMBDA_REG, apply_adapter,
                                    fit_pose_adapter, project_to_anime)
from ..metrics.kdr import shared_space_kdr
from ..runtime.utils import atomic_write
from ..synth.data import SynthSpec, make_rig_pair, sample_expression_array
from .model import init_model
from .train import TrainConfig, train
from .translate import translate

logger = logging.getLogger(__name__)

# name -> (use_landmark, use_closure, vertex term on)
VARIANTS = {
    'vertex': (False, False, True),
    'landmark': (True, False, False),
    'vertex_landmark': (True, False, True),
    'full': (True, True, True),
}

# Untrained rows: `mapping` inverts the adapter directly on `psi`.
BASELINES = ('mapping', )
STUDY_ROWS = tuple(VARIANTS) + BASELINES

# Offset between the training and held-out sample seeds of one run.
HELD_OUT_SEED_OFFSET = 1_000_003


@dataclass(frozen=True)
class AblationResult:
    variant: str
    seed: int
    kdr: float


def variant_config(base: TrainConfig, variant: str) -> TrainConfig:
    """`base` with the loss switches of `variant`."""
    if variant not in VARIANTS:
        raise ValueError(f"unknown variant '{variant}', expected one of "
                         f"{', '.join(VARIANTS)}")
    useLm, useCl, useVer = VARIANTS[variant]
    return base.model_copy(
        update=dict(use_landmark=useLm,
                    use_closure=useCl,
                    lambda_ver=base.lambda_ver if useVer else 0.0))


def run_mapping(seed: int,
                vertex_count: int = 468,
                eval_size: int = 512,
                lambda_reg: float = DEFAULT_LAMBDA_REG) -> AblationResult:
    """
    Score the optimisation mapping on the seed's held-out samples: anime
    coefficients from `project_to_anime`, lifted back with the adapter.
    """
    human, anime = make_rig_pair(
        SynthSpec(vertex_count=vertex_count, rng_seed=seed))
    adapter = fit_pose_adapter(human, anime, lambda_reg)
    heldOut = sample_expression_array(eval_size, seed + HELD_OUT_SEED_OFFSET)
    b = project_to_anime(adapter, heldOut[:, :human.expr_basis.dim])
    report = shared_space_kdr(human, heldOut, apply_adapter(adapter, b))
    logger.info("ablation mapping seed %d: KDR %.6g", seed, report.mean)
    return AblationResult('mapping', seed, report.mean)


def run_variant(variant: str,
                seed: int,
                base: TrainConfig,
                vertex_count: int = 468,
                eval_size: int = 512,
                lambda_reg: float = DEFAULT_LAMBDA_REG) -> AblationResult:
    """
    Train one variant on the seed's synthetic pair and score it by the
    shared-space KDR on held-out samples.
    """
    config = variant_config(base, variant).model_copy(
        update=dict(rng_seed=seed))
    human, anime = make_rig_pair(
        SynthSpec(vertex_count=vertex_count, rng_seed=seed))
    adapter = fit_pose_adapter(human, anime, lambda_reg)
    data = sample_expression_array(config.dataset_size, seed)
    model = init_model(config.layer_sizes, seed)
    model, _ = train(model, data, adapter, human, config, anime)
    heldOut = sample_expression_array(eval_size, seed + HELD_OUT_SEED_OFFSET)
    result = translate(model, adapter, heldOut)
    report = shared_space_kdr(human, heldOut, result.psi_hat)
    logger.info("ablation %s seed %d: KDR %.6g", variant, seed, report.mean)
    return AblationResult(variant, seed, report.mean)


def run_ablation(seeds: Sequence[int],
                 base: TrainConfig,
                 variants: Sequence[str] = STUDY_ROWS,
                 **kwargs) -> List[AblationResult]:
    """
    Run every row of `variants` for every seed. Loss variants are trained
    from `base`; baseline rows are not trained.
    """
    results = []
    for v in variants:
        for s in seeds:
            if v in BASELINES:
                results.append(run_mapping(s, **kwargs))
            else:
                results.append(run_variant(v, s, base, **kwargs))
    return results


def variant_means(results: Sequence[AblationResult]) -> Dict[str, float]:
    grouped: Dict[str, List[float]] = {}
    for r in results:
        grouped.setdefault(r.variant, []).append(r.kdr)
    return {k: float(np.mean(v)) for k, v in grouped.items()}


def write_ablation(path, results: Sequence[AblationResult]):
    """`variant,seed,kdr` rows, then one `variant,mean,kdr` row per variant."""
    with atomic_write(path) as f:
        f.write('variant,seed,kdr\n')
        for r in results:
            f.write(f'{r.variant},{r.seed},{r.kdr:.17g}\n')
        for variant, mean in variant_means(results).items():
            f.write(f'{variant},mean,{mean:.17g}\n')
